#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "pedsleep/data.hpp"
#include "pedsleep/generate.hpp"
#include "pedsleep/metrics.hpp"
#include "pedsleep/model.hpp"

namespace pedsleep {

enum class CiMethod { kNormal, kPercentile };

struct CohortCIResult {
  double mean = 0;
  double lo = 0;
  double hi = 0;
  std::vector<double> scores;  // one mean silhouette per repeat
  std::size_t size_a = 0;
  std::size_t size_b = 0;
  std::uint64_t seed = 0;

  bool overlaps(const CohortCIResult& other) const { return lo <= other.hi && other.lo <= hi; }
  nlohmann::json to_json() const;
};

struct CohortOptions {
  std::size_t n_per_cohort = 2500;
  int repeats = 100;
  std::uint64_t seed = 0;
  CiMethod ci = CiMethod::kNormal;
};

// Each repeat draws n_per_cohort rows without replacement from each cohort
// and records the mean silhouette with cohort identity as the label. A
// cohort's draws are keyed by its contents, so swapping A and B gives the
// same scores.
CohortCIResult cohort_silhouette_ci(const Matrix& cohort_a, const Matrix& cohort_b, const CohortOptions& opts);

// Pools both cohorts, re-partitions them at random into pseudo-cohorts of the
// original sizes, and runs the full CI analysis on each partition.
std::vector<CohortCIResult> shuffled_baseline(const Matrix& cohort_a, const Matrix& cohort_b,
                                              const CohortOptions& opts, int n_shuffles = 20);

std::vector<WelchResult> cohort_ttest(std::span<const double> true_scores,
                                      std::span<const CohortCIResult> shuffles);

struct DistancePair {
  std::size_t i = 0;
  std::size_t j = 0;
  double embedding_distance = 0;
  double signal_distance = 0;
};

struct CorrelationReport {
  double rho = 0;
  std::size_t pairs = 0;
  DistanceMetric metric = DistanceMetric::kEuclidean;
  std::vector<std::string> epoch_ids;  // the sampled epochs
  std::vector<DistancePair> scatter;   // capped sample for plotting

  nlohmann::json to_json() const;
  void write_scatter_csv(const std::filesystem::path& path) const;
};

struct CorrelationOptions {
  DistanceMetric metric = DistanceMetric::kEuclidean;
  std::size_t n_samples = 1000;
  std::size_t max_pairs = 2000;
  std::uint64_t seed = 0;
  std::optional<int> dtw_radius;
};

// Pearson correlation between pairwise embedding distances (Euclidean over
// pooled embeddings) and pairwise distances of the decoded signals, over all
// pairs of n_samples epochs drawn without replacement.
CorrelationReport distance_correlation(const ModelState& state, std::span<const SleepEpoch> epochs,
                                       const CorrelationOptions& opts);

}  // namespace pedsleep
