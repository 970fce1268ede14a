#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pedsleep/errors.hpp"
#include "pedsleep/metrics.hpp"
#include "pedsleep/rng.hpp"

using namespace pedsleep;

namespace {

std::vector<std::vector<double>> all_sequences(int max_len, int alphabet) {
  std::vector<std::vector<double>> out;
  for (int len = 1; len <= max_len; ++len) {
    int total = 1;
    for (int k = 0; k < len; ++k) total *= alphabet;
    for (int code = 0; code < total; ++code) {
      std::vector<double> s;
      for (int k = 0, c = code; k < len; ++k, c /= alphabet) s.push_back(c % alphabet);
      out.push_back(s);
    }
  }
  return out;
}

std::vector<double> normals(std::size_t n, Rng& rng, double mu = 0, double sd = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = mu + sd * standard_normal(rng);
  return v;
}

}  // namespace

TEST_CASE("f1") {
  const std::vector<int> y{1, 1, 0, 0}, p{1, 0, 0, 0};
  CHECK(f1_score(y, p, F1Mode::kBinary) == doctest::Approx(2.0 / 3.0));
  CHECK(f1_score(y, y, F1Mode::kBinary) == 1.0);
  CHECK(f1_score(y, std::vector<int>{0, 0, 0, 0}, F1Mode::kBinary) == 0.0);
  CHECK_THROWS_AS(f1_score(std::vector<int>{}, std::vector<int>{}, F1Mode::kBinary), DataError);

  auto rng = make_rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 5 + uniform_index(40, rng);
    const int k = 2 + static_cast<int>(uniform_index(4, rng));
    std::vector<int> yt(n), yp(n);
    for (std::size_t i = 0; i < n; ++i) {
      yt[i] = static_cast<int>(uniform_index(static_cast<std::size_t>(k), rng));
      yp[i] = static_cast<int>(uniform_index(static_cast<std::size_t>(k), rng));
    }
    CHECK(f1_score(yt, yp, F1Mode::kWeighted) == doctest::Approx(oracle::weighted_f1(yt, yp, k)).epsilon(1e-12));
    for (auto& v : yt) v = v % 2;
    for (auto& v : yp) v = v % 2;
    CHECK(f1_score(yt, yp, F1Mode::kBinary) == doctest::Approx(oracle::binary_f1(yt, yp)).epsilon(1e-12));
  }
}

TEST_CASE("auroc") {
  CHECK(auroc_binary(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.1, 0.9, 0.9, 0.1}) == 0.5);
  CHECK(auroc_binary(std::vector<int>{0, 0, 1, 1}, std::vector<double>{1, 2, 3, 4}) == 1.0);
  CHECK(auroc_binary(std::vector<int>{0, 0, 1, 1}, std::vector<double>{4, 3, 2, 1}) == 0.0);
  CHECK_THROWS_AS(auroc_binary(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}), NumericError);

  auto rng = make_rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 4 + uniform_index(60, rng);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(uniform_index(2, rng));
      s[i] = static_cast<double>(uniform_index(8, rng)) / 8.0;  // coarse, so ties happen
    }
    const double a = auroc_binary(y, s);
    CHECK(a == doctest::Approx(oracle::auc_pairs(y, s)).epsilon(1e-12));
    // Invariant under strictly increasing transforms.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3 * s[i]) - 7;
    CHECK(auroc_binary(y, t) == doctest::Approx(a).epsilon(1e-12));
  }
}

TEST_CASE("weighted one-vs-rest auroc") {
  auto rng = make_rng(3);
  const int K = 3;
  const std::size_t n = 60;
  std::vector<int> y(n);
  Matrix s(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % K);
    for (int k = 0; k < K; ++k) s(static_cast<Eigen::Index>(i), k) = uniform01(rng);
  }
  double expected = 0;
  for (int k = 0; k < K; ++k) {
    std::vector<int> yk;
    std::vector<double> sk;
    for (std::size_t i = 0; i < n; ++i) {
      yk.push_back(y[i] == k);
      sk.push_back(s(static_cast<Eigen::Index>(i), k));
    }
    expected += (static_cast<double>(n / K) / n) * oracle::auc_pairs(yk, sk);
  }
  CHECK(auroc_weighted_ovr(y, s) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("confusion matrix") {
  const auto c = confusion(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 3);
  CHECK(c.row_normalized(0, 0) == 0.5);
  CHECK(c.row_normalized(0, 1) == 0.5);
  CHECK(c.row_normalized(1, 1) == 1.0);
  CHECK(c.empty_rows == std::vector<bool>{false, false, true});
  CHECK(c.row_normalized.row(2).sum() == 0.0);
  const auto id = confusion(std::vector<int>{0, 1, 2}, std::vector<int>{0, 1, 2}, 3);
  CHECK(id.row_normalized == Eigen::MatrixXd::Identity(3, 3));
  CHECK_THROWS_AS(confusion(std::vector<int>{0, 3}, std::vector<int>{0, 0}, 3), DataError);
}

TEST_CASE("pearson") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> y;
  for (double v : x) y.push_back(-2 * v + 7);
  CHECK(pearson(x, x) == doctest::Approx(1.0));
  CHECK(pearson(x, y) == doctest::Approx(-1.0));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 4}) ==
        doctest::Approx(oracle::pearson({1, 2, 3}, {1, 2, 4})).epsilon(1e-12));
  CHECK_THROWS_AS(pearson(x, std::vector<double>(5, 2.0)), NumericError);

  auto rng = make_rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 3 + uniform_index(50, rng);
    const auto a = normals(n, rng), b = normals(n, rng);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
    CHECK(pearson(a, c) == doctest::Approx(oracle::pearson(a, c)).epsilon(1e-10));
  }
}

TEST_CASE("dtw matches exhaustive path enumeration") {
  CHECK(dtw(std::vector<double>{1}, std::vector<double>{4}) == 3.0);
  CHECK(dtw(std::vector<double>{0, 0, 1}, std::vector<double>{0, 1}) == oracle::dtw_enumerate({0, 0, 1}, {0, 1}));
  const auto seqs = all_sequences(4, 3);
  for (const auto& a : seqs)
    for (const auto& b : seqs) {
      REQUIRE(dtw(a, b) == oracle::dtw_enumerate(a, b));
    }
  CHECK(dtw(std::vector<double>{0, 2}, std::vector<double>{1}, DtwCost::kSquared) == 2.0);
}

TEST_CASE("fast dtw") {
  auto rng = make_rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = normals(10 + uniform_index(60, rng), rng);
    const auto b = normals(10 + uniform_index(60, rng), rng);
    const double exact = dtw(a, b);
    const double approx = fast_dtw(a, b, 2);
    CHECK(approx >= exact - 1e-9);
    CHECK(fast_dtw(a, b, static_cast<int>(std::max(a.size(), b.size()))) == doctest::Approx(exact));
    CHECK(dtw_distance(a, b, std::nullopt) == exact);
  }
  CHECK_THROWS_AS(dtw(std::vector<double>{}, std::vector<double>{1}), DataError);
}

TEST_CASE("silhouette") {
  SUBCASE("four points on a line") {
    Matrix pts(4, 1);
    pts << 0, 1, 10, 11;
    const std::vector<int> labels{0, 0, 1, 1};
    const auto s = silhouette(pts, labels);
    const std::vector<double> hand{1 - 1 / 10.5, 1 - 1 / 9.5, 1 - 1 / 9.5, 1 - 1 / 10.5};
    for (int i = 0; i < 4; ++i) CHECK(std::abs(s.scores[i] - hand[i]) <= 1e-12);
    CHECK(std::abs(s.mean_score - (hand[0] + hand[1]) / 2) <= 1e-12);
  }
  SUBCASE("far apart tight clusters") {
    auto rng = make_rng(6);
    Matrix pts(40, 3);
    std::vector<int> labels(40);
    for (int i = 0; i < 40; ++i) {
      labels[i] = i % 2;
      for (int d = 0; d < 3; ++d) pts(i, d) = 1e-3 * standard_normal(rng) + (labels[i] ? 1e3 : 0);
    }
    CHECK(silhouette(pts, labels).mean_score > 0.9);
  }
  SUBCASE("random labels on exchangeable points") {
    auto rng = make_rng(7);
    double total = 0;
    for (int trial = 0; trial < 100; ++trial) {
      Matrix pts(30, 2);
      std::vector<int> labels(30);
      for (int i = 0; i < 30; ++i) {
        labels[i] = i % 2;
        pts(i, 0) = standard_normal(rng);
        pts(i, 1) = standard_normal(rng);
      }
      total += silhouette(pts, labels).mean_score;
    }
    CHECK(std::abs(total / 100) < 0.1);
  }
  SUBCASE("one cluster rejected") {
    Matrix pts(3, 1);
    pts << 1, 2, 3;
    CHECK_THROWS_AS(silhouette(pts, std::vector<int>{0, 0, 0}), DataError);
  }
}

TEST_CASE("welch t test") {
  const auto same = welch_t(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3});
  CHECK(same.t == 0.0);
  CHECK(same.p == doctest::Approx(1.0));

  const auto hand = welch_t(std::vector<double>{1, 2, 3}, std::vector<double>{2, 3, 4});
  // var = 1 each, se = sqrt(2/3), dof = 4
  CHECK(hand.t == doctest::Approx(-1.0 / std::sqrt(2.0 / 3.0)));
  CHECK(hand.dof == doctest::Approx(4.0));

  auto rng = make_rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = normals(3 + uniform_index(30, rng), rng, 0.0, 1.0 + uniform01(rng));
    const auto b = normals(3 + uniform_index(30, rng), rng, 2.0 * uniform01(rng), 1.0 + uniform01(rng));
    const auto r = welch_t(a, b);
    const auto o = oracle::welch(a, b);
    CHECK(r.t == doctest::Approx(o.t).epsilon(1e-10));
    CHECK(r.dof == doctest::Approx(o.dof).epsilon(1e-10));
    CHECK(std::abs(r.p - o.p) < 1e-7);
  }

  const auto far = welch_t(normals(1000, rng, 0), normals(1000, rng, 5));
  CHECK(far.p < 1e-50);
  CHECK(far.p_string().find("<") != std::string::npos);

  CHECK_THROWS_AS(welch_t(std::vector<double>{1, 1, 1}, std::vector<double>{2, 2, 2}), NumericError);
}

TEST_CASE("mse") {
  CHECK(mse(std::vector<double>{0, 0}, std::vector<double>{1, 3}) == 5.0);
  CHECK(mse(std::vector<double>{1, 2}, std::vector<double>{1, 2}) == 0.0);
  auto rng = make_rng(9);
  const auto b = normals(100000, rng);
  CHECK(mse(std::vector<double>(b.size(), 0.0), b) == doctest::Approx(1.0).epsilon(0.02));
}
