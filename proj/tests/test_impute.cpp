#include "doctest.h"
#include "helpers.hpp"
#include "pedsleep/errors.hpp"
#include "pedsleep/impute.hpp"

using namespace pedsleep;

TEST_CASE("imputation never sees the masked channel") {
  const auto cfg = testing::desk_config();
  const auto st = ModelState::initialize(cfg);
  const auto e = testing::random_epoch(cfg.channels, cfg.samples, 1);
  CHECK(channel_mask(cfg, 2).count() == static_cast<std::size_t>(cfg.patches()));
  for (int c = 0; c < cfg.channels; ++c) {
    const auto ref = impute_channel(st, e, c);
    auto zeroed = e;
    zeroed.data.row(c).setZero();
    auto noisy = e;
    noisy.data.row(c).setConstant(123.0f);
    CHECK(impute_channel(st, zeroed, c) == ref);
    CHECK(impute_channel(st, noisy, c) == ref);
    CHECK(ref.size() == cfg.samples);
  }
  // Changing a different channel does change the result.
  auto other = e;
  other.data.row(0).setZero();
  CHECK(impute_channel(st, other, 1) != impute_channel(st, e, 1));
}

TEST_CASE("imputation report") {
  const auto cfg = testing::desk_config();
  const auto st = ModelState::initialize(cfg);
  std::vector<SleepEpoch> epochs;
  for (int i = 0; i < 20; ++i) epochs.push_back(testing::random_epoch(cfg.channels, cfg.samples, static_cast<std::uint64_t>(i)));
  ImputationOptions o;
  o.n_samples = 10;
  o.seed = 4;
  o.dtw_radius = 4;
  const std::vector<std::string> names{"A", "B", "C", "D"};
  const auto r = evaluate_imputation(st, epochs, names, o);
  REQUIRE(r.rows.size() == 4);
  CHECK(r.samples == 10);
  CHECK(r.sequence_length == cfg.samples);
  CHECK(r.rows[1].channel == "B");
  for (const auto& row : r.rows) {
    CHECK(row.mse_mean > 0);
    CHECK(row.mse_sd >= 0);
    CHECK(row.dtw_mean > 0);
  }
  const auto j = r.to_json();
  CHECK(j.at("channels").size() == 4);
  for (const char* key : {"channel", "mse_mean", "mse_sd", "dtw_mean", "dtw_sd"}) CHECK(j.at("channels")[0].contains(key));

  const auto again = evaluate_imputation(st, epochs, names, o);
  CHECK(again.to_json() == j);

  SUBCASE("oracle imputer gives zero error") {
    const Imputer perfect = [](const SleepEpoch& e, int c) { return Eigen::VectorXd(e.data.row(c).transpose().cast<double>()); };
    const auto z = evaluate_imputation(perfect, cfg.channels, epochs, names, o);
    for (const auto& row : z.rows) {
      CHECK(row.mse_mean == 0.0);
      CHECK(row.dtw_mean == 0.0);
    }
  }
  SUBCASE("too many samples") {
    o.n_samples = 21;
    CHECK_THROWS_AS(evaluate_imputation(st, epochs, names, o), DataError);
  }
}
