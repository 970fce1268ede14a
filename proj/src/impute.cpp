#include "pedsleep/impute.hpp"

#include <cmath>

#include "pedsleep/errors.hpp"
#include "pedsleep/parallel.hpp"
#include "pedsleep/rng.hpp"

namespace pedsleep {

Eigen::VectorXd impute_channel(const ModelState& state, const SleepEpoch& epoch, int channel) {
  const MaskSpec mask = channel_mask(state.config, channel);
  const ForwardResult r = forward(state, patchify(epoch.data, state.config.patch), mask);
  return unpatchify(r.reconstruction).row(channel).transpose();
}

nlohmann::json ImputationReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows)
    rows_j.push_back({{"channel", r.channel},
                      {"mse_mean", r.mse_mean},
                      {"mse_sd", r.mse_sd},
                      {"dtw_mean", r.dtw_mean},
                      {"dtw_sd", r.dtw_sd}});
  return {{"samples", samples}, {"sequence_length", sequence_length}, {"channels", rows_j}};
}

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  const auto n = static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += x;
  const double mean = s / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1))};
}

}  // namespace

ImputationReport evaluate_imputation(const ModelState& state, std::span<const SleepEpoch> epochs,
                                     const std::vector<std::string>& channel_names, const ImputationOptions& opts) {
  const Imputer model = [&](const SleepEpoch& e, int c) { return impute_channel(state, e, c); };
  return evaluate_imputation(model, state.config.channels, epochs, channel_names, opts);
}

ImputationReport evaluate_imputation(const Imputer& imputer, int channels, std::span<const SleepEpoch> epochs,
                                     const std::vector<std::string>& channel_names, const ImputationOptions& opts) {
  if (opts.n_samples == 0) throw DataError("evaluate_imputation: n_samples must be positive");
  if (opts.n_samples > epochs.size())
    throw DataError("evaluate_imputation: n_samples=" + std::to_string(opts.n_samples) + " exceeds available epochs (" +
                    std::to_string(epochs.size()) + ")");
  const int C = channels;
  auto rng = make_rng(opts.seed, {tag(Stream::kSample), 7});
  const auto pick = sample_without_replacement(epochs.size(), opts.n_samples, rng);

  ImputationReport report;
  report.samples = pick.size();
  report.sequence_length = static_cast<int>(epochs[pick.front()].data.cols());
  for (int c = 0; c < C; ++c) {
    std::vector<double> mses(pick.size()), dtws(pick.size());
    parallel_for(pick.size(), [&](std::size_t i) {
      const auto& e = epochs[pick[i]];
      const Eigen::VectorXd imputed = imputer(e, c);
      const Eigen::VectorXd original = e.data.row(c).transpose().cast<double>();
      const auto n = static_cast<std::size_t>(original.size());
      std::span<const double> a(imputed.data(), n), b(original.data(), n);
      mses[i] = mse(a, b);
      dtws[i] = dtw_distance(a, b, opts.dtw_radius, opts.dtw_cost);
    });
    ChannelImputation row;
    row.channel = c < static_cast<int>(channel_names.size()) ? channel_names[c] : "channel " + std::to_string(c);
    std::tie(row.mse_mean, row.mse_sd) = mean_sd(mses);
    std::tie(row.dtw_mean, row.dtw_sd) = mean_sd(dtws);
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace pedsleep
