#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pedsleep/data.hpp"
#include "pedsleep/metrics.hpp"
#include "pedsleep/model.hpp"

namespace pedsleep {

struct GeneratedEpoch {
  Matrix data;              // [C x T]
  std::string provenance;   // "full_decode" or "average"
  std::vector<std::string> sources;  // contributing epoch ids
  LatentGrid latent;                 // the grid that was decoded
};

std::string epoch_id(const SleepEpoch& e);

GeneratedEpoch full_decode(const ModelState& state, const SleepEpoch& epoch);

// Elementwise mean of equally shaped latent grids.
LatentGrid average_latent(std::span<const LatentGrid> latents);

using EpochSelector = std::function<bool(const SleepEpoch&)>;

// Decodes the mean latent grid of every epoch matched by `selector`.
GeneratedEpoch generate_average(const ModelState& state, std::span<const SleepEpoch> epochs,
                                const EpochSelector& selector, const std::string& selector_name);

enum class RetrievalSpace { kGeneratedSignal, kEmbedding };
enum class DistanceMetric { kEuclidean, kDtw };

const char* to_string(RetrievalSpace s);
const char* to_string(DistanceMetric m);

// An epoch's representation in a retrieval space, as a [C x L] matrix:
// the decoded signal (L = T) or the pooled embedding reshaped per channel
// (L = N). DTW distances are summed over channels.
Matrix representation(const ModelState& state, const SleepEpoch& epoch, RetrievalSpace space);
Matrix representation(const ModelState& state, const GeneratedEpoch& generated, RetrievalSpace space);

double representation_distance(const Matrix& a, const Matrix& b, DistanceMetric metric,
                               std::optional<int> dtw_radius = std::nullopt);

struct RankedEpoch {
  std::size_t index = 0;  // position in the candidate list
  std::string id;
  double distance = 0;
};

// Ascending distance; ties broken by epoch id.
std::vector<RankedEpoch> nearest_neighbor(const ModelState& state, const Matrix& reference_repr,
                                          std::span<const SleepEpoch> candidates, RetrievalSpace space,
                                          DistanceMetric metric, std::size_t k);
std::vector<RankedEpoch> nearest_neighbor(const ModelState& state, const GeneratedEpoch& reference,
                                          std::span<const SleepEpoch> candidates, RetrievalSpace space,
                                          DistanceMetric metric, std::size_t k);

// Distance of each epoch's representation to the mean representation,
// descending; ties broken by epoch id.
std::vector<RankedEpoch> outlier_rank(const ModelState& state, std::span<const SleepEpoch> epochs,
                                      RetrievalSpace space, DistanceMetric metric);

}  // namespace pedsleep
