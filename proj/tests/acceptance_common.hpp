#pragma once

#include <cstdio>
#include <string>

// One line per criterion: "PASS [n] name: detail" or "FAIL [n] ...".
class Criteria {
 public:
  void report(int id, const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    failed_ += ok ? 0 : 1;
    ++evaluated_;
  }
  int exit_code() const { return failed_ == 0 ? 0 : 1; }
  void summary() const {
    std::printf("evaluated %d criteria: %d passed, %d failed\n", evaluated_, evaluated_ - failed_, failed_);
  }

 private:
  int failed_ = 0;
  int evaluated_ = 0;
};

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}
