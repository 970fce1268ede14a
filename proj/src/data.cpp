#include "pedsleep/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pedsleep/container.hpp"
#include "pedsleep/errors.hpp"
#include "pedsleep/rng.hpp"

namespace pedsleep {

namespace {
constexpr std::array<const char*, 6> kStageNames = {"Wake", "N1", "N2", "N3", "REM", "Unlabeled"};
}  // namespace

const char* to_string(SleepStage s) { return kStageNames[static_cast<int>(s)]; }

std::optional<SleepStage> parse_sleep_stage(std::string_view s) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i) {
    std::string_view name = kStageNames[i];
    if (name.size() == s.size() &&
        std::equal(name.begin(), name.end(), s.begin(),
                   [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
      return static_cast<SleepStage>(i);
  }
  return std::nullopt;
}

nlohmann::json to_json(const EventLabel& label) {
  return {{"stage", to_string(label.stage)},
          {"oxygen_desaturation", label.oxygen_desaturation},
          {"eeg_arousal", label.eeg_arousal},
          {"apnea", label.apnea},
          {"hypopnea", label.hypopnea}};
}

EventLabel label_from_json(const nlohmann::json& j) {
  EventLabel l;
  auto stage = parse_sleep_stage(j.value("stage", std::string("Unlabeled")));
  if (!stage) throw DataError("unknown sleep stage '" + j.value("stage", std::string()) + "'");
  l.stage = *stage;
  l.oxygen_desaturation = j.value("oxygen_desaturation", false);
  l.eeg_arousal = j.value("eeg_arousal", false);
  l.apnea = j.value("apnea", false);
  l.hypopnea = j.value("hypopnea", false);
  return l;
}

const std::vector<std::string>& canonical_channels() {
  static const std::vector<std::string> names = {
      "EEG C3-M2",     "EEG O1-M2",      "EEG O2-M1", "EEG CZ-O1",  "EEG C4-M1",
      "EEG F4-M1",     "EEG F3-M2",      "CAPNO",     "SPO2",       "RESP THORACIC",
      "RESP ABDOMINAL", "SNORE",         "C-FLOW",    "EOG LOC-M2", "EOG ROC-M1",
      "EMG CHIN1-CHIN2"};
  return names;
}

std::vector<ChannelSpec> make_channels(const std::vector<std::string>& names) {
  std::set<std::string> seen;
  std::vector<ChannelSpec> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!seen.insert(names[i]).second) throw DataError("duplicate channel name '" + names[i] + "'");
    out.push_back({names[i], static_cast<int>(i)});
  }
  return out;
}

Recording normalize_recording(const Recording& rec) {
  if (rec.length() < 2) throw DataError("normalize_recording: each channel needs at least 2 samples");
  Recording out = rec;
  const auto n = static_cast<double>(rec.length());
  for (Eigen::Index c = 0; c < rec.samples.rows(); ++c) {
    const auto row = rec.samples.row(c).cast<double>();
    const double mean = row.sum() / n;
    const double var = (row.array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      out.samples.row(c).setZero();
      const std::string name = c < static_cast<Eigen::Index>(rec.channels.size())
                                   ? rec.channels[c].name
                                   : std::to_string(c);
      out.warnings.push_back("channel '" + name + "' has zero variance; set to zeros");
      continue;
    }
    out.samples.row(c) = ((row.array() - mean) / sd).cast<float>().matrix();
  }
  return out;
}

int samples_per_epoch(double sample_rate, double epoch_seconds) {
  const double exact = sample_rate * epoch_seconds;
  const double rounded = std::round(exact);
  if (rounded < 1 || std::abs(exact - rounded) > 1e-6)
    throw DataError("sample_rate x epoch_seconds = " + std::to_string(exact) +
                    " is not a positive whole number of samples");
  return static_cast<int>(rounded);
}

std::vector<SleepEpoch> segment_epochs(const Recording& rec, double epoch_seconds) {
  const int spe = samples_per_epoch(rec.sample_rate, epoch_seconds);
  const auto count = rec.length() / spe;
  std::vector<EventLabel> labels(static_cast<std::size_t>(count));
  for (const auto& a : rec.annotations)
    if (a.epoch_index >= 0 && a.epoch_index < count) labels[a.epoch_index] = a.label;

  std::vector<SleepEpoch> epochs;
  epochs.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index e = 0; e < count; ++e) {
    SleepEpoch ep;
    ep.recording_id = rec.recording_id;
    ep.epoch_index = static_cast<int>(e);
    ep.data = rec.samples.middleCols(e * spe, spe);
    ep.labels = labels[e];
    epochs.push_back(std::move(ep));
  }
  return epochs;
}

namespace {

void check_ratios(const SplitRatios& r) {
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw DataError("split ratios must be non-negative and sum to 1");
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  auto train = static_cast<std::size_t>(std::llround(r.train * static_cast<double>(n)));
  auto val = static_cast<std::size_t>(std::llround(r.val * static_cast<double>(n)));
  train = std::min(train, n);
  val = std::min(val, n - train);
  return {train, val, n - train - val};
}

}  // namespace

DatasetSplit split_dataset(std::size_t n_epochs, const SplitRatios& ratios, std::uint64_t seed) {
  check_ratios(ratios);
  if (n_epochs == 0) throw DataError("split_dataset: empty epoch list");
  auto rng = make_rng(seed, {tag(Stream::kSplit)});
  const auto order = permutation(n_epochs, rng);
  const auto [n_train, n_val, n_test] = split_sizes(n_epochs, ratios);
  DatasetSplit s;
  s.seed = seed;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  (void)n_test;
  return s;
}

DatasetSplit split_by_recording(const std::vector<SleepEpoch>& epochs, const SplitRatios& ratios,
                                std::uint64_t seed) {
  check_ratios(ratios);
  if (epochs.empty()) throw DataError("split_by_recording: empty epoch list");
  std::vector<std::string> ids;
  for (const auto& e : epochs)
    if (std::find(ids.begin(), ids.end(), e.recording_id) == ids.end()) ids.push_back(e.recording_id);
  std::sort(ids.begin(), ids.end());
  auto rng = make_rng(seed, {tag(Stream::kSplit), 1});
  const auto order = permutation(ids.size(), rng);
  const auto [n_train, n_val, n_test] = split_sizes(ids.size(), ratios);
  (void)n_test;

  std::vector<int> side(ids.size());
  for (std::size_t k = 0; k < order.size(); ++k)
    side[order[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);

  DatasetSplit s;
  s.seed = seed;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto pos = std::find(ids.begin(), ids.end(), epochs[i].recording_id) - ids.begin();
    (side[pos] == 0 ? s.train : side[pos] == 1 ? s.val : s.test).push_back(i);
  }
  return s;
}

void save_recording(const std::filesystem::path& path, const Recording& rec) {
  Container c;
  std::vector<std::string> names;
  for (const auto& ch : rec.channels) names.push_back(ch.name);
  nlohmann::json annotations = nlohmann::json::array();
  for (const auto& a : rec.annotations) {
    auto j = to_json(a.label);
    j["epoch"] = a.epoch_index;
    annotations.push_back(j);
  }
  c.header = {{"kind", "recording"},
              {"recording_id", rec.recording_id},
              {"sample_rate", rec.sample_rate},
              {"channel_names", names},
              {"shape", {rec.samples.rows(), rec.samples.cols()}},
              {"dtype", "f32le"},
              {"annotations", annotations}};
  append_f32le(c.payload, std::span<const float>(rec.samples.data(), rec.samples.size()));
  write_container(path, c);
}

Recording load_recording(const std::filesystem::path& path) {
  const auto c = read_container(path);
  const auto& h = c.header;
  if (h.value("dtype", std::string()) != "f32le")
    throw DataError(path.string() + ": recording dtype must be f32le");
  Recording rec;
  try {
    rec.recording_id = h.at("recording_id").get<std::string>();
    rec.sample_rate = h.at("sample_rate").get<double>();
    rec.channels = make_channels(h.at("channel_names").get<std::vector<std::string>>());
    const auto shape = h.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 2 || shape[0] != static_cast<std::int64_t>(rec.channels.size()))
      throw DataError(path.string() + ": shape does not match channel_names");
    rec.samples.resize(shape[0], shape[1]);
    const auto values = read_f32le(c.payload, static_cast<std::size_t>(shape[0] * shape[1]));
    std::copy(values.begin(), values.end(), rec.samples.data());
    for (const auto& a : h.value("annotations", nlohmann::json::array()))
      rec.annotations.push_back({a.at("epoch").get<int>(), label_from_json(a)});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad recording header: " + e.what());
  }
  return rec;
}

std::vector<Recording> load_recording_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".psgt") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Recording> out;
  for (const auto& f : files) {
    auto c = read_container(f);
    if (c.header.value("kind", std::string()) == "recording") out.push_back(load_recording(f));
  }
  return out;
}

}  // namespace pedsleep
