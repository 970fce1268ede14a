#include "pedsleep/synth.hpp"

#include <cmath>
#include <numbers>

#include "pedsleep/errors.hpp"
#include "pedsleep/rng.hpp"

namespace pedsleep {

namespace {
constexpr std::array<SleepStage, 5> kStateStage = {SleepStage::kWake, SleepStage::kN2, SleepStage::kREM,
                                                   SleepStage::kN3, SleepStage::kN1};
}  // namespace

double synth_frequency(const SynthConfig& cfg, int state, int channel) {
  return cfg.base_frequency * (1.0 + 0.5 * state) * (1.0 + 0.25 * (channel % 4));
}

SleepStage synth_stage(int state) { return kStateStage[static_cast<std::size_t>(state)]; }

int synth_state_of(const EventLabel& label) {
  for (std::size_t s = 0; s < kStateStage.size(); ++s)
    if (kStateStage[s] == label.stage) return static_cast<int>(s);
  return -1;
}

std::vector<Recording> synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.channels < 2) throw DataError("synth_generate: need at least 2 channels");
  if (cfg.states < 2 || cfg.states > 5) throw DataError("synth_generate: states must be in [2, 5]");
  if (cfg.epochs_per_recording < 1 || cfg.recordings < 1)
    throw DataError("synth_generate: need at least one recording and one epoch");
  const int T = samples_per_epoch(cfg.sample_rate, cfg.epoch_seconds);
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<std::string> names;
  const auto& canon = canonical_channels();
  for (int c = 0; c < cfg.channels; ++c)
    names.push_back(c < static_cast<int>(canon.size()) ? canon[c] : "CH" + std::to_string(c));

  std::vector<Recording> out;
  for (int r = 0; r < cfg.recordings; ++r) {
    auto rng = make_rng(seed, {tag(Stream::kSynth), static_cast<std::uint64_t>(r)});
    Recording rec;
    rec.recording_id = "synth-" + std::to_string(r);
    rec.sample_rate = cfg.sample_rate;
    rec.channels = make_channels(names);
    rec.samples.resize(cfg.channels, static_cast<Eigen::Index>(cfg.epochs_per_recording) * T);

    int state = static_cast<int>(uniform_index(static_cast<std::size_t>(cfg.states), rng));
    for (int e = 0; e < cfg.epochs_per_recording; ++e) {
      if (e > 0 && uniform01(rng) >= cfg.stay_probability)
        state = static_cast<int>(uniform_index(static_cast<std::size_t>(cfg.states), rng));

      EventLabel label;
      label.stage = synth_stage(state);
      label.apnea = state == cfg.states - 1;
      label.hypopnea = state == 1 && uniform01(rng) < 0.5;
      label.oxygen_desaturation = label.apnea || uniform01(rng) < 0.05;
      label.eeg_arousal = state == 0 && uniform01(rng) < 0.7;
      rec.annotations.push_back({e, label});

      const auto offset = static_cast<Eigen::Index>(e) * T;
      for (int c = 0; c < cfg.channels; ++c) {
        if (c == 1) continue;  // derived from channel 0 below
        const double freq = synth_frequency(cfg, state, c);
        const double amp = 1.0 + 0.5 * ((state + c) % 2);
        const double phase = two_pi * (0.1 * state + 0.05 * c + cfg.phase_jitter * uniform01(rng));
        const double gain = 0.9 + 0.2 * uniform01(rng);
        for (int t = 0; t < T; ++t) {
          const double time = t / cfg.sample_rate;
          const double v = gain * amp * std::sin(two_pi * freq * time + phase) + cfg.noise * standard_normal(rng);
          rec.samples(c, offset + t) = static_cast<float>(v);
        }
      }
    }
    // Coupled pair: channel 1 = -(channel 0) + small independent noise.
    auto noise_rng = make_rng(seed, {tag(Stream::kSynth), static_cast<std::uint64_t>(r), 1});
    for (Eigen::Index i = 0; i < rec.samples.cols(); ++i)
      rec.samples(1, i) = static_cast<float>(-rec.samples(0, i) + cfg.coupling_noise * standard_normal(noise_rng));
    out.push_back(normalize_recording(rec));
  }
  return out;
}

}  // namespace pedsleep
