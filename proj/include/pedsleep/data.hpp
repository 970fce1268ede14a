#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace pedsleep {

using Signal = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class SleepStage : int { kWake = 0, kN1, kN2, kN3, kREM, kUnlabeled };

inline constexpr int kNumSleepStages = 5;

const char* to_string(SleepStage s);
std::optional<SleepStage> parse_sleep_stage(std::string_view s);

struct EventLabel {
  SleepStage stage = SleepStage::kUnlabeled;
  bool oxygen_desaturation = false;
  bool eeg_arousal = false;
  bool apnea = false;
  bool hypopnea = false;

  // Never stored; always derived so it cannot disagree with its parts.
  bool apnea_hypopnea() const { return apnea || hypopnea; }

  bool operator==(const EventLabel&) const = default;
};

nlohmann::json to_json(const EventLabel& label);
EventLabel label_from_json(const nlohmann::json& j);

struct ChannelSpec {
  std::string name;
  int index = 0;
};

// The 16 channels used at full scale, in model order.
const std::vector<std::string>& canonical_channels();

struct EpochAnnotation {
  int epoch_index = 0;
  EventLabel label;
};

struct Recording {
  std::string recording_id;
  double sample_rate = 128.0;
  std::vector<ChannelSpec> channels;
  Signal samples;  // [C x total_samples]
  std::vector<EpochAnnotation> annotations;
  std::vector<std::string> warnings;

  int channel_count() const { return static_cast<int>(samples.rows()); }
  std::int64_t length() const { return samples.cols(); }
};

std::vector<ChannelSpec> make_channels(const std::vector<std::string>& names);

struct SleepEpoch {
  std::string recording_id;
  int epoch_index = 0;
  Signal data;  // [C x T]
  EventLabel labels;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Per-channel z-score over the whole recording with population SD. Channels
// with zero variance become all zeros and add an entry to `warnings`.
Recording normalize_recording(const Recording& rec);

// Samples per epoch for a rate/duration pair; rejects non-integral products.
int samples_per_epoch(double sample_rate, double epoch_seconds);

// Consecutive non-overlapping windows; the trailing partial window is dropped.
std::vector<SleepEpoch> segment_epochs(const Recording& rec, double epoch_seconds = 30.0);

DatasetSplit split_dataset(std::size_t n_epochs, const SplitRatios& ratios, std::uint64_t seed);

// Recording-level split: whole recordings go to one side, so no recording
// contributes epochs to two splits.
DatasetSplit split_by_recording(const std::vector<SleepEpoch>& epochs, const SplitRatios& ratios,
                                std::uint64_t seed);

void save_recording(const std::filesystem::path& path, const Recording& rec);
Recording load_recording(const std::filesystem::path& path);

// All *.psgt recordings in a directory, sorted by file name.
std::vector<Recording> load_recording_dir(const std::filesystem::path& dir);

}  // namespace pedsleep
