#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "pedsleep/nn.hpp"

namespace pedsleep {

enum class F1Mode { kBinary, kWeighted };
enum class AucMode { kBinary, kWeightedOvr };
enum class DtwCost { kAbs, kSquared };

double f1_score(std::span<const int> y_true, std::span<const int> y_pred, F1Mode mode);
double accuracy(std::span<const int> y_true, std::span<const int> y_pred);

// Mann-Whitney AUC with half credit for ties.
double auroc_binary(std::span<const int> y_true, std::span<const double> scores);
// scores: [n x K] class scores; one-vs-rest AUC per class present in y_true,
// averaged with true-class support weights.
double auroc_weighted_ovr(std::span<const int> y_true, const Matrix& scores);

struct ConfusionMatrix {
  Eigen::MatrixXi counts;        // rows = true, cols = predicted
  Eigen::MatrixXd row_normalized;
  std::vector<bool> empty_rows;  // class absent from y_true
};

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, int classes);

double pearson(std::span<const double> x, std::span<const double> y);

// Exact DP alignment cost with steps {match, insert, delete}.
double dtw(std::span<const double> a, std::span<const double> b, DtwCost cost = DtwCost::kAbs);
// Coarse-to-fine approximation (multi-resolution with a projected search
// window widened by `radius`). Exact once radius >= max(|a|, |b|).
double fast_dtw(std::span<const double> a, std::span<const double> b, int radius, DtwCost cost = DtwCost::kAbs);
// radius absent: exact.
double dtw_distance(std::span<const double> a, std::span<const double> b, std::optional<int> radius,
                    DtwCost cost = DtwCost::kAbs);

struct SilhouetteResult {
  double mean_score = 0;
  std::vector<double> scores;
};

// points: one row per point; Euclidean distance.
SilhouetteResult silhouette(const Matrix& points, std::span<const int> labels);

struct WelchResult {
  double t = 0;
  double dof = 0;
  double p = 1;  // two-sided; 0 when below the representable range
  bool p_underflow = false;

  std::string p_string() const;  // "< 1e-300" on underflow
};

WelchResult welch_t(std::span<const double> a, std::span<const double> b);

double mse(std::span<const double> a, std::span<const double> b);
double mse(const Matrix& a, const Matrix& b);

}  // namespace pedsleep
