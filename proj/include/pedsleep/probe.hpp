#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pedsleep/data.hpp"
#include "pedsleep/metrics.hpp"

namespace pedsleep {

enum class ProbeTask { kSleepStage5, kOxygenDesaturation, kEegArousal, kApnea, kHypopnea, kApneaHypopnea };

const char* to_string(ProbeTask t);
std::optional<ProbeTask> parse_probe_task(std::string_view s);
int task_classes(ProbeTask t);
bool is_binary(ProbeTask t);
// Class index of an epoch for the task; -1 when the epoch has no label for it
// (unscored sleep stage).
int task_label(ProbeTask t, const EventLabel& label);

struct ProbeConfig {
  ProbeTask task = ProbeTask::kApnea;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int epochs = 50;
  int iterations_per_epoch = 2000;
  std::uint64_t seed = 0;
  bool class_weighting = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

nlohmann::json to_json(const ProbeConfig& c);
ProbeConfig probe_config_from_json(const nlohmann::json& j);

// One affine layer over frozen embeddings; softmax over K classes.
struct LinearProbe {
  ProbeTask task = ProbeTask::kApnea;
  Matrix weight;  // [D x K]
  Matrix bias;    // [1 x K]
  std::optional<double> threshold;  // binary tasks, on P(class 1)

  int classes() const { return static_cast<int>(weight.cols()); }
  Matrix probabilities(const Matrix& embeddings) const;
  // Binary: P(class 1). Multiclass: rejected.
  std::vector<double> positive_scores(const Matrix& embeddings) const;
  std::vector<int> predict(const Matrix& embeddings) const;
};

// Inverse class frequency, normalized to mean 1 over classes.
std::vector<double> class_weights(std::span<const int> labels, int classes);

LinearProbe init_probe(int dim, ProbeTask task, std::uint64_t seed);

LinearProbe train_probe(const Matrix& embeddings, std::span<const int> labels, const ProbeConfig& cfg);

struct ThresholdChoice {
  double threshold = 0.5;
  double f1 = 0;
};

// Exhaustive scan over the minimum score and midpoints between consecutive
// distinct scores (F1 is constant between scores, so this is exact); ties go
// to the higher threshold. Prediction is positive when score >= threshold.
ThresholdChoice select_threshold(std::span<const double> scores, std::span<const int> labels);
void select_threshold(LinearProbe& probe, const Matrix& embeddings_val, std::span<const int> labels_val);

struct MetricReport {
  std::string task;
  std::size_t samples = 0;
  double accuracy = 0;
  double f1 = 0;
  std::optional<double> auroc;
  std::string auroc_flag;  // why AUC is undefined, when it is
  std::optional<double> prevalence;
  std::optional<double> threshold;
  ConfusionMatrix confusion;

  nlohmann::json to_json() const;
  void write_confusion_csv(const std::filesystem::path& path) const;
};

MetricReport evaluate_probe(const LinearProbe& probe, const Matrix& embeddings, std::span<const int> labels);

void save_probe(const std::filesystem::path& path, const LinearProbe& probe, const ProbeConfig& cfg);
LinearProbe load_probe(const std::filesystem::path& path);

}  // namespace pedsleep
