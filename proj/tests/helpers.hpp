#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pedsleep/data.hpp"
#include "pedsleep/model.hpp"
#include "pedsleep/rng.hpp"
#include "pedsleep/synth.hpp"

namespace testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pedsleep-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline pedsleep::Recording random_recording(int channels, std::int64_t samples, std::uint64_t seed,
                                            double rate = 128.0) {
  auto rng = pedsleep::make_rng(seed);
  pedsleep::Recording rec;
  rec.recording_id = "rec-" + std::to_string(seed);
  rec.sample_rate = rate;
  std::vector<std::string> names;
  for (int c = 0; c < channels; ++c) names.push_back("CH" + std::to_string(c));
  rec.channels = pedsleep::make_channels(names);
  rec.samples.resize(channels, samples);
  for (Eigen::Index i = 0; i < rec.samples.size(); ++i)
    rec.samples.data()[i] = static_cast<float>(3.0 * pedsleep::standard_normal(rng) + 1.5);
  return rec;
}

inline pedsleep::ModelConfig tiny_config() {
  pedsleep::ModelConfig c;
  c.channels = 2;
  c.samples = 32;
  c.patch = 8;
  c.dim = 12;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.heads = 2;
  c.seed = 3;
  return c;
}

inline pedsleep::ModelConfig desk_config() {
  pedsleep::ModelConfig c;
  c.channels = 4;
  c.samples = 256;
  c.patch = 8;
  c.dim = 16;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.heads = 4;
  c.seed = 11;
  return c;
}

inline std::vector<pedsleep::SleepEpoch> synth_epochs(const pedsleep::SynthConfig& cfg, std::uint64_t seed) {
  std::vector<pedsleep::SleepEpoch> out;
  for (const auto& rec : pedsleep::synth_generate(cfg, seed))
    for (auto& e : pedsleep::segment_epochs(rec, cfg.epoch_seconds)) out.push_back(std::move(e));
  return out;
}

inline pedsleep::SleepEpoch random_epoch(int channels, int samples, std::uint64_t seed) {
  auto rng = pedsleep::make_rng(seed, {99});
  pedsleep::SleepEpoch e;
  e.recording_id = "rnd";
  e.epoch_index = static_cast<int>(seed);
  e.data.resize(channels, samples);
  for (Eigen::Index i = 0; i < e.data.size(); ++i) e.data.data()[i] = static_cast<float>(pedsleep::standard_normal(rng));
  return e;
}

// Minimal EDF writer for fixtures: one data record per `record_seconds`,
// int16 little-endian samples.
struct EdfFixtureSignal {
  std::string label;
  double physical_min, physical_max;
  int digital_min, digital_max;
  int samples_per_record;
  std::vector<std::int16_t> digital;  // all records concatenated
};

inline std::string field(const std::string& s, std::size_t width) {
  std::string out = s.substr(0, width);
  out.resize(width, ' ');
  return out;
}

inline std::string num(double v, std::size_t width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return field(buf, width);
}

inline void write_edf(const std::filesystem::path& path, const std::vector<EdfFixtureSignal>& sigs, int records,
                      double record_seconds, std::size_t truncate_bytes = 0, int declared_records = -2) {
  std::string h;
  const auto ns = sigs.size();
  h += field("0", 8) + field("patient", 80) + field("recording", 80) + field("01.01.20", 8) + field("00.00.00", 8);
  h += num(static_cast<double>(256 + 256 * ns), 8) + field("", 44);
  h += num(declared_records == -2 ? records : declared_records, 8) + num(record_seconds, 8) + num(static_cast<double>(ns), 4);
  for (auto& s : sigs) h += field(s.label, 16);
  for (std::size_t i = 0; i < ns; ++i) h += field("transducer", 80);
  for (std::size_t i = 0; i < ns; ++i) h += field("uV", 8);
  for (auto& s : sigs) h += num(s.physical_min, 8);
  for (auto& s : sigs) h += num(s.physical_max, 8);
  for (auto& s : sigs) h += num(s.digital_min, 8);
  for (auto& s : sigs) h += num(s.digital_max, 8);
  for (std::size_t i = 0; i < ns; ++i) h += field("", 80);
  for (auto& s : sigs) h += num(s.samples_per_record, 8);
  for (std::size_t i = 0; i < ns; ++i) h += field("", 32);
  std::string data;
  for (int r = 0; r < records; ++r)
    for (auto& s : sigs)
      for (int k = 0; k < s.samples_per_record; ++k) {
        const auto v = static_cast<std::uint16_t>(s.digital[static_cast<std::size_t>(r * s.samples_per_record + k)]);
        data.push_back(static_cast<char>(v & 0xff));
        data.push_back(static_cast<char>(v >> 8));
      }
  if (truncate_bytes) data.resize(data.size() - truncate_bytes);
  std::ofstream out(path, std::ios::binary);
  out << h << data;
}

}  // namespace testing
