#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <unistd.h>

#include "ahamask/artifacts_io.hpp"
#include "ahamask/error.hpp"

using namespace ahamask;
using namespace ahamask::io;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / ("ahamask_io_test_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

template <class F>
FormatCode format_code(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.code;
  }
  FAIL("expected a FormatError");
  return FormatCode::bad_header;
}

}  // namespace

TEST_CASE("worked byte example") {
  const HeadMask m(2, 2, std::vector<std::uint8_t>{1, 0, 1, 1});
  const Bytes expect{0x41, 0x48, 0x41, 0x4D, 0x01, 0x00, 0x02, 0x00, 0x02, 0x00, 0x0D};
  CHECK(encode_mask(m) == expect);
  CHECK(decode_mask(expect) == m);
}

TEST_CASE("payload sizes") {
  CHECK(encode_mask(HeadMask(40, 40)).size() - 10 == 200);
  CHECK(encode_mask(HeadMask(4, 4)).size() - 10 == 2);
  MaskLogits l{4, 4, std::vector<double>(16, 1.5), 0};
  CHECK(encode_logits(l).size() - 10 == 128);
}

TEST_CASE("mask round trips for all shapes up to 64x64") {
  Rng rng(9);
  for (int layers = 1; layers <= 64; layers += 7) {
    for (int heads = 1; heads <= 64; heads += 5) {
      HeadMask m(layers, heads);
      for (std::size_t i = 0; i < m.size(); ++i) m.set_flat(i, rng.below(2) == 1);
      const Bytes b = encode_mask(m);
      CHECK(b.size() == 10 + (m.size() + 7) / 8);
      CHECK(decode_mask(b) == m);
      CHECK(encode_mask(decode_mask(b)) == b);
    }
  }
  CHECK(decode_mask(encode_mask(HeadMask(64, 64))) == HeadMask(64, 64));
}

TEST_CASE("logit round trip preserves bit patterns") {
  MaskLogits l{2, 3, {-0.0, 0.0, 1e-310, -3.25, 4.000000000000001, 1e300}, 0};
  const MaskLogits back = decode_logits(encode_logits(l));
  for (std::size_t i = 0; i < l.values.size(); ++i) {
    std::uint64_t a, b;
    std::memcpy(&a, &l.values[i], 8);
    std::memcpy(&b, &back.values[i], 8);
    CHECK(a == b);
  }
  CHECK(std::signbit(back.values[0]));
}

TEST_CASE("malformed mask files give distinct diagnostics") {
  const Bytes good = encode_mask(HeadMask(3, 3));
  Bytes b = good;
  b[0] = 'X';
  CHECK(format_code([&] { decode_mask(b); }) == FormatCode::bad_magic);
  b = good;
  b[4] = 2;
  CHECK(format_code([&] { decode_mask(b); }) == FormatCode::bad_version);
  b = good;
  b.pop_back();
  CHECK(format_code([&] { decode_mask(b); }) == FormatCode::truncated);
  CHECK(format_code([&] { decode_mask(Bytes{0x41, 0x48}); }) == FormatCode::truncated);
  b = good;
  b.back() |= 0x80;  // 9 heads: bits 1..7 of the last byte are padding
  CHECK(format_code([&] { decode_mask(b); }) == FormatCode::nonzero_padding);
  b = good;
  b.push_back(0);
  CHECK(format_code([&] { decode_mask(b); }) == FormatCode::trailing_bytes);
  CHECK(format_code([&] { decode_logits(good); }) == FormatCode::wrong_kind);
  MaskLogits l{3, 3, std::vector<double>(9, 0.0), 0};
  CHECK(format_code([&] { decode_mask(encode_logits(l)); }) == FormatCode::wrong_kind);
}

TEST_CASE("files are written atomically and round trip") {
  const auto p = temp_dir() / "sub" / "m.mask";
  const HeadMask m(4, 4, std::vector<std::uint8_t>{1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 1, 1, 0, 1, 0});
  save_mask(p, m);
  CHECK_FALSE(fs::exists(p.string() + ".tmp"));
  const Bytes first = read_file(p);
  save_mask(p, load_mask(p));
  CHECK(read_file(p) == first);
  CHECK_THROWS_AS(load_mask(temp_dir() / "absent.mask"), MissingArtifactError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ffn = 12;
  c.vocab_size = 11;
  c.max_seq_len = 9;
  c.seed = 0xDEADBEEFCAFEull;
  const auto w = ModelWeights::initialize(c);
  const Bytes b = encode_checkpoint(w);
  CHECK(std::memcmp(b.data(), "AHCKPT", 6) == 0);
  const auto back = decode_checkpoint(b);
  CHECK(back == w);
  CHECK(back.config == c);
  CHECK(encode_checkpoint(back) == b);
  Bytes cut = b;
  cut.resize(b.size() - 3);
  CHECK(format_code([&] { decode_checkpoint(cut); }) == FormatCode::truncated);
}

TEST_CASE("reports") {
  CHECK(render_reports({}) == "{\"format\":\"ahamask-eval-report\",\"version\":1}\n");
  EvalReport r;
  r.task = "COPY|MAJ";
  r.mask_source = "trained";
  r.accuracy = 0.123456789;
  r.token_error_rate = 1.5;
  r.ifr = 2.0 / 3.0;
  r.sub_metrics["COPY.accuracy"] = 0.9;
  r.active_head_count = 7;
  r.n_examples = 30;
  const std::string text = render_reports({r});
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.find("0.123457") != std::string::npos);
  CHECK(text.find("0.666667") != std::string::npos);
  const auto p = temp_dir() / "r.ndjson";
  write_report(p, {r});
  const auto back = read_reports(p);
  REQUIRE(back.size() == 1);
  CHECK(back[0].task == r.task);
  CHECK(back[0].accuracy == doctest::Approx(r.accuracy).epsilon(1e-6));
  CHECK(*back[0].ifr == doctest::Approx(*r.ifr).epsilon(1e-6));
  CHECK(back[0].sub_metrics.at("COPY.accuracy") == 0.9);
  CHECK(back[0].active_head_count == 7);
  CHECK(round_sig6(1234567.0) == 1234570.0);
}

TEST_CASE("training records and corpus export") {
  std::vector<TrainRecord> recs{{1, 0.5, 0.01, 12, 3.5, 1e-3, "ok"}, {2, 0.4, 0.0, 11, 3.0, 2e-3, "non-finite"}};
  const auto back = parse_train_records(render_train_records(recs));
  REQUIRE(back.size() == 2);
  CHECK(back[1].status == "non-finite");
  CHECK(back[0].active_head_count == 12);
  Example e{"REV", {1, 2}, {21}, {2, 1}};
  CHECK(render_corpus({e}) == "{\"input\":[1,2],\"instruction\":[21],\"target\":[2,1],\"task\":\"REV\"}\n");
}
