#include "ahamask/artifacts_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "ahamask/error.hpp"

namespace ahamask::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMaskMagic[4] = {'A', 'H', 'A', 'M'};
constexpr char kCkptMagic[6] = {'A', 'H', 'C', 'K', 'P', 'T'};
constexpr std::size_t kMaskHeader = 10;

template <class T>
void put_le(Bytes& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

void put_f64(Bytes& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const Bytes& b, const char* what) : b_(b), what_(what) {}

  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) {
      throw FormatError(FormatCode::truncated,
                        std::string(what_) + ": truncated at byte " + std::to_string(b_.size()) +
                            ", needed " + std::to_string(pos_ + n));
    }
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= std::uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::uint8_t byte() { return le<std::uint8_t>(); }
  bool matches(const char* magic, std::size_t n) {
    need(n);
    const bool ok = std::memcmp(b_.data() + pos_, magic, n) == 0;
    pos_ += n;
    return ok;
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  void finish() const {
    if (remaining() != 0) {
      throw FormatError(FormatCode::trailing_bytes,
                        std::string(what_) + ": " + std::to_string(remaining()) + " trailing bytes");
    }
  }

 private:
  const Bytes& b_;
  const char* what_;
  std::size_t pos_ = 0;
};

Bytes mask_header(MaskKind kind, int layers, int heads) {
  if (layers < 0 || heads < 0 || layers > 0xFFFF || heads > 0xFFFF) {
    throw DimensionError("mask dimensions do not fit the file format");
  }
  Bytes out(kMaskMagic, kMaskMagic + 4);
  out.push_back(kMaskVersion);
  out.push_back(static_cast<std::uint8_t>(kind));
  put_le(out, static_cast<std::uint16_t>(layers));
  put_le(out, static_cast<std::uint16_t>(heads));
  return out;
}

struct MaskHeader {
  int layers;
  int heads;
};

MaskHeader read_mask_header(Reader& r, MaskKind expected) {
  if (!r.matches(kMaskMagic, 4)) throw FormatError(FormatCode::bad_magic, "mask file: bad magic");
  const auto version = r.byte();
  if (version != kMaskVersion) {
    throw FormatError(FormatCode::bad_version,
                      "mask file: unsupported version " + std::to_string(version));
  }
  const auto kind = r.byte();
  if (kind > 1) {
    throw FormatError(FormatCode::wrong_kind, "mask file: unknown kind " + std::to_string(kind));
  }
  if (kind != static_cast<std::uint8_t>(expected)) {
    throw FormatError(FormatCode::wrong_kind,
                      std::string("mask file: expected ") +
                          (expected == MaskKind::binary ? "a binary mask" : "mask logits") +
                          " but found " + (kind == 0 ? "a binary mask" : "mask logits"));
  }
  const int layers = r.le<std::uint16_t>();
  const int heads = r.le<std::uint16_t>();
  return {layers, heads};
}

double num_or_throw(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw FormatError(FormatCode::bad_header, std::string("missing numeric field '") + key + "'");
  }
  return j[key].get<double>();
}

}  // namespace

Bytes encode_mask(const HeadMask& mask) {
  Bytes out = mask_header(MaskKind::binary, mask.layers(), mask.heads());
  Bytes payload((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.at(i)) payload[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Bytes encode_logits(const MaskLogits& logits) {
  Bytes out = mask_header(MaskKind::logits, logits.layers, logits.heads);
  for (double v : logits.values) put_f64(out, v);
  return out;
}

HeadMask decode_mask(const Bytes& bytes) {
  Reader r(bytes, "mask file");
  const auto [layers, heads] = read_mask_header(r, MaskKind::binary);
  const std::size_t n = static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads);
  r.need((n + 7) / 8);
  std::vector<std::uint8_t> bits(n);
  for (std::size_t byte_i = 0; byte_i < (n + 7) / 8; ++byte_i) {
    const std::uint8_t b = r.byte();
    for (std::size_t bit = 0; bit < 8; ++bit) {
      const std::size_t i = byte_i * 8 + bit;
      const bool on = (b >> bit) & 1u;
      if (i < n) {
        bits[i] = on ? 1 : 0;
      } else if (on) {
        throw FormatError(FormatCode::nonzero_padding, "mask file: padding bits are not zero");
      }
    }
  }
  r.finish();
  return HeadMask(layers, heads, std::move(bits));
}

MaskLogits decode_logits(const Bytes& bytes) {
  Reader r(bytes, "logit file");
  const auto [layers, heads] = read_mask_header(r, MaskKind::logits);
  const std::size_t n = static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads);
  r.need(8 * n);
  MaskLogits out;
  out.layers = layers;
  out.heads = heads;
  out.values.resize(n);
  for (auto& v : out.values) v = r.f64();
  r.finish();
  return out;
}

Bytes encode_checkpoint(const ModelWeights& weights) {
  const ModelConfig& c = weights.config;
  Bytes out(kCkptMagic, kCkptMagic + 6);
  out.push_back(kCheckpointVersion);
  for (int v : {c.n_layers, c.n_heads, c.d_model, c.d_ffn, c.vocab_size, c.max_seq_len}) {
    put_le(out, static_cast<std::uint32_t>(v));
  }
  put_le(out, c.seed);
  const auto params = weights.parameters();
  put_le(out, static_cast<std::uint32_t>(params.size()));
  for (const grad::Tensor* t : params) {
    put_le(out, static_cast<std::uint64_t>(t->size()));
    for (double v : t->data()) put_f64(out, v);
  }
  return out;
}

ModelWeights decode_checkpoint(const Bytes& bytes) {
  Reader r(bytes, "checkpoint");
  if (!r.matches(kCkptMagic, 6)) throw FormatError(FormatCode::bad_magic, "checkpoint: bad magic");
  const auto version = r.byte();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatCode::bad_version,
                      "checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig c;
  c.n_layers = static_cast<int>(r.le<std::uint32_t>());
  c.n_heads = static_cast<int>(r.le<std::uint32_t>());
  c.d_model = static_cast<int>(r.le<std::uint32_t>());
  c.d_ffn = static_cast<int>(r.le<std::uint32_t>());
  c.vocab_size = static_cast<int>(r.le<std::uint32_t>());
  c.max_seq_len = static_cast<int>(r.le<std::uint32_t>());
  c.seed = r.le<std::uint64_t>();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatCode::bad_header, std::string("checkpoint: ") + e.what());
  }
  ModelWeights w = ModelWeights::allocate(c);
  auto params = w.parameters();
  const auto count = r.le<std::uint32_t>();
  if (count != params.size()) {
    throw FormatError(FormatCode::bad_header, "checkpoint: expected " +
                                                  std::to_string(params.size()) +
                                                  " tensors, found " + std::to_string(count));
  }
  for (grad::Tensor* t : params) {
    const auto n = r.le<std::uint64_t>();
    if (n != t->size()) {
      throw FormatError(FormatCode::bad_header, "checkpoint: tensor size " + std::to_string(n) +
                                                    " does not match shape " + t->shape_string());
    }
    r.need(8 * n);
    for (double& v : t->data()) v = r.f64();
  }
  r.finish();
  return w;
}

void write_file_atomic(const fs::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, Bytes(text.begin(), text.end()));
}

Bytes read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string read_text(const fs::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

void save_mask(const fs::path& path, const HeadMask& mask) { write_file_atomic(path, encode_mask(mask)); }
HeadMask load_mask(const fs::path& path) { return decode_mask(read_file(path)); }
void save_logits(const fs::path& path, const MaskLogits& logits) {
  write_file_atomic(path, encode_logits(logits));
}
MaskLogits load_logits(const fs::path& path) { return decode_logits(read_file(path)); }
void save_checkpoint(const fs::path& path, const ModelWeights& weights) {
  write_file_atomic(path, encode_checkpoint(weights));
}
ModelWeights load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

double round_sig6(double v) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

std::string render_reports(const std::vector<EvalReport>& reports) {
  std::string out = json{{"format", "ahamask-eval-report"}, {"version", 1}}.dump() + "\n";
  for (const auto& r : reports) {
    json j;
    j["task"] = r.task;
    j["mask_source"] = r.mask_source;
    j["accuracy"] = round_sig6(r.accuracy);
    j["token_error_rate"] = round_sig6(r.token_error_rate);
    if (r.ifr) j["ifr"] = round_sig6(*r.ifr);
    json sub = json::object();
    for (const auto& [k, v] : r.sub_metrics) sub[k] = round_sig6(v);
    j["sub_metrics"] = sub;
    j["active_head_count"] = r.active_head_count;
    j["n_examples"] = r.n_examples;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<EvalReport> parse_reports(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(FormatCode::truncated, "report: missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(FormatCode::bad_header, std::string("report header: ") + e.what());
  }
  if (header.value("format", "") != "ahamask-eval-report") {
    throw FormatError(FormatCode::bad_magic, "report: unexpected header " + line);
  }
  if (header.value("version", 0) != 1) {
    throw FormatError(FormatCode::bad_version, "report: unsupported version");
  }
  std::vector<EvalReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EvalReport r;
      r.task = j.at("task").get<std::string>();
      r.mask_source = j.at("mask_source").get<std::string>();
      r.accuracy = num_or_throw(j, "accuracy");
      r.token_error_rate = num_or_throw(j, "token_error_rate");
      if (j.contains("ifr")) r.ifr = num_or_throw(j, "ifr");
      for (const auto& [k, v] : j.at("sub_metrics").items()) r.sub_metrics[k] = v.get<double>();
      r.active_head_count = j.at("active_head_count").get<std::size_t>();
      r.n_examples = j.at("n_examples").get<std::size_t>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(FormatCode::bad_header, std::string("report line: ") + e.what());
    }
  }
  return out;
}

void write_report(const fs::path& path, const std::vector<EvalReport>& reports) {
  write_file_atomic(path, render_reports(reports));
}

std::vector<EvalReport> read_reports(const fs::path& path) { return parse_reports(read_text(path)); }

std::string render_train_records(const std::vector<TrainRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json j{{"step", r.step},
           {"loss_ce", round_sig6(r.loss_ce)},
           {"penalty", round_sig6(r.penalty)},
           {"active_head_count", r.active_head_count},
           {"tau", round_sig6(r.tau)},
           {"lr", round_sig6(r.lr)},
           {"status", r.status}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<TrainRecord> parse_train_records(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<TrainRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      TrainRecord r;
      r.step = j.at("step").get<int>();
      r.loss_ce = j.at("loss_ce").get<double>();
      r.penalty = j.at("penalty").get<double>();
      r.active_head_count = j.at("active_head_count").get<std::size_t>();
      r.tau = j.at("tau").get<double>();
      r.lr = j.at("lr").get<double>();
      r.status = j.at("status").get<std::string>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(FormatCode::bad_header, std::string("training record: ") + e.what());
    }
  }
  return out;
}

std::string render_corpus(const std::vector<Example>& examples) {
  std::string out;
  for (const auto& e : examples) {
    json j{{"task", e.task_name},
           {"input", e.input_tokens},
           {"instruction", e.instruction_tokens},
           {"target", e.target_tokens}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace ahamask::io
