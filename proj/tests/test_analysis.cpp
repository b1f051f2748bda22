#include <doctest.h>

#include "ahamask/analysis.hpp"
#include "ahamask/error.hpp"

using namespace ahamask;

namespace {

HeadMask from_set(int layers, int heads, std::initializer_list<std::size_t> on) {
  HeadMask m = HeadMask::zeros(layers, heads);
  for (auto i : on) m.set_flat(i, true);
  return m;
}

HeadMask random_bits(Rng& rng, int l, int h) {
  HeadMask m(l, h);
  for (std::size_t i = 0; i < m.size(); ++i) m.set_flat(i, rng.below(2) == 1);
  return m;
}

}  // namespace

TEST_CASE("jaccard") {
  const auto a = from_set(2, 3, {1, 2, 3});
  const auto b = from_set(2, 3, {2, 3, 4});
  CHECK(jaccard(a, a) == 1.0);
  CHECK(jaccard(a, from_set(2, 3, {0, 5})) == 0.0);
  CHECK(jaccard(a, b) == 0.5);
  CHECK_THROWS_AS(jaccard(HeadMask::zeros(2, 3), HeadMask::zeros(2, 3)), ContractError);
  CHECK_THROWS_AS(jaccard(a, HeadMask(3, 2)), DimensionError);
}

TEST_CASE("jaccard is symmetric and bounded") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto a = random_bits(rng, 4, 4), b = random_bits(rng, 4, 4);
    if (a.popcount() == 0 && b.popcount() == 0) continue;
    const double j = jaccard(a, b);
    CHECK(j == jaccard(b, a));
    CHECK((j >= 0.0 && j <= 1.0));
  }
}

TEST_CASE("diff ratio") {
  const auto m1 = from_set(2, 4, {0, 1, 2, 3});
  CHECK(diff_ratio(m1, m1) == 0.0);
  CHECK(diff_ratio(from_set(2, 4, {0, 1, 2, 5}), m1) == 0.5);
  CHECK(diff_ratio(from_set(2, 4, {4, 5, 6, 7}), from_set(2, 4, {0})) == 5.0);
  CHECK_THROWS_AS(diff_ratio(m1, HeadMask::zeros(2, 4)), ContractError);
}

TEST_CASE("intersection") {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_bits(rng, 3, 4), b = random_bits(rng, 3, 4), c = random_bits(rng, 3, 4);
    CHECK(intersect({a, a}) == a);
    CHECK(intersect({a, HeadMask::all_ones(3, 4)}) == a);
    CHECK(intersect({a, b}) == intersect({b, a}));
    CHECK(intersect({intersect({a, b}), c}) == intersect({a, intersect({b, c})}));
    CHECK(intersect({a, b, c}).popcount() <= std::min({a.popcount(), b.popcount(), c.popcount()}));
  }
  CHECK_THROWS_AS(intersect({HeadMask(2, 2)}), ContractError);
  CHECK_THROWS_AS(intersect({HeadMask(2, 2), HeadMask(2, 3)}), DimensionError);
}

TEST_CASE("random masks") {
  Rng rng(5);
  CHECK(random_mask(4, 4, 0, rng) == HeadMask::zeros(4, 4));
  CHECK(random_mask(4, 4, 16, rng) == HeadMask::all_ones(4, 4));
  std::vector<int> hits(16, 0);
  for (int t = 0; t < 1000; ++t) {
    const auto m = random_mask(4, 4, 5, rng);
    CHECK(m.popcount() == 5);
    for (std::size_t i = 0; i < 16; ++i) hits[i] += m.at(i);
  }
  // Expected 312.5 hits per head; allow roughly four standard deviations.
  for (int h : hits) CHECK(std::abs(h - 312.5) < 60);
  CHECK_THROWS_AS(random_mask(4, 4, 17, rng), ParameterError);
}

TEST_CASE("similarity matrix") {
  std::map<std::string, HeadMask> masks{{"REV", from_set(1, 4, {0, 1})},
                                        {"COPY", from_set(1, 4, {0, 1, 2})},
                                        {"MAJ", from_set(1, 4, {3})}};
  const auto s = similarity_matrix(masks);
  CHECK(s.task_names == std::vector<std::string>{"COPY", "MAJ", "REV"});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s.values[i][i] == 1.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(s.values[i][j] == s.values[j][i]);
  }
  CHECK(s.values[0][2] == doctest::Approx(2.0 / 3));
  CHECK(similarity_csv(s) ==
        "task,COPY,MAJ,REV\nCOPY,1,0,0.666667\nMAJ,0,1,0\nREV,0.666667,0,1\n");
}

TEST_CASE("quantile sweep") {
  MaskLogits m{2, 2, {0.1, -3.0, 2.0, 1.0}, 0};
  std::vector<HeadMask> seen;
  const auto c = sweep_quantiles(m, {0.0, 0.25, 0.5, 1.0}, [&](const HeadMask& h) {
    seen.push_back(h);
    return static_cast<double>(h.popcount()) * 10.0;
  });
  CHECK(c.active_counts == std::vector<std::size_t>{0, 1, 2, 4});
  CHECK(c.metric_values == std::vector<double>{0, 10, 20, 40});
  CHECK(seen.back() == HeadMask::all_ones(2, 2));
  CHECK(seen[1] == from_set(2, 2, {2}));
  CHECK(sweep_csv(c).substr(0, 21) == "q,active_count,metric");
  CHECK_THROWS_AS(sweep_quantiles(m, {0.5, 0.25}, [](const HeadMask&) { return 0.0; }), ParameterError);
}
