#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pedsleep/data.hpp"
#include "pedsleep/metrics.hpp"
#include "pedsleep/model.hpp"

namespace pedsleep {

// Masks every token of `channel` and reconstructs it from the other
// channels; returns the imputed channel (length T).
Eigen::VectorXd impute_channel(const ModelState& state, const SleepEpoch& epoch, int channel);

struct ChannelImputation {
  std::string channel;
  double mse_mean = 0;
  double mse_sd = 0;
  double dtw_mean = 0;
  double dtw_sd = 0;
};

struct ImputationReport {
  std::size_t samples = 0;
  int sequence_length = 0;  // raw DTW is not length-normalized
  std::vector<ChannelImputation> rows;

  nlohmann::json to_json() const;
};

struct ImputationOptions {
  std::size_t n_samples = 5000;
  std::uint64_t seed = 0;
  std::optional<int> dtw_radius;
  DtwCost dtw_cost = DtwCost::kAbs;
};

// One shared draw of epochs (without replacement) is imputed channel by
// channel; each row reports mean/SD of MSE and DTW against the original.
ImputationReport evaluate_imputation(const ModelState& state, std::span<const SleepEpoch> epochs,
                                     const std::vector<std::string>& channel_names, const ImputationOptions& opts);

// Same evaluation with any reconstruction function (epoch, channel) -> row.
using Imputer = std::function<Eigen::VectorXd(const SleepEpoch&, int)>;
ImputationReport evaluate_imputation(const Imputer& imputer, int channels, std::span<const SleepEpoch> epochs,
                                     const std::vector<std::string>& channel_names, const ImputationOptions& opts);

}  // namespace pedsleep
