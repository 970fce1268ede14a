#pragma once

#include <cstdint>
#include <vector>

#include "pedsleep/data.hpp"

namespace pedsleep {

struct SynthConfig {
  int channels = 4;
  double sample_rate = 128.0;
  double epoch_seconds = 2.0;
  int epochs_per_recording = 200;
  int recordings = 4;
  int states = 3;             // hidden per-epoch states, 2..5
  double stay_probability = 0.8;
  double base_frequency = 2.0;  // Hz
  double noise = 0.1;
  double coupling_noise = 0.05;
  double phase_jitter = 0.02;  // fraction of a full cycle
};

// Frequency (Hz) of channel `c` while the generator is in `state`. Exposed
// so tests can check spectral content without re-deriving the generator.
double synth_frequency(const SynthConfig& cfg, int state, int channel);

// Sleep stage emitted for a hidden state.
SleepStage synth_stage(int state);

// Deterministic multichannel recordings. Each epoch has a hidden Markov state
// that sets per-channel sinusoid frequency and amplitude. Channel 1 is a
// deterministic function (sign flip) of channel 0's latent signal plus small
// noise, so it is recoverable from channel 0. Labels are emitted from the
// state: apnea marks the last state exactly; the other flags are noisy.
// Recordings are returned already normalized.
std::vector<Recording> synth_generate(const SynthConfig& cfg, std::uint64_t seed);

// Hidden state of every epoch in a generated recording (same seed and
// config); recovered from the stored stage labels.
int synth_state_of(const EventLabel& label);

}  // namespace pedsleep
