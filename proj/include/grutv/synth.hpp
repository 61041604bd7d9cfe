#pragma once

#include <string>

#include "grutv/datapipe.hpp"

namespace grutv {

// Latent linear-Gaussian dynamics observed through a noisy readout at
// irregular times, with per-variable Bernoulli missingness. Labels threshold
// time-weighted functionals of the latent path, so the tasks are learnable
// and inherently time-sensitive.
struct SynthConfig {
  long sequences = 2000;
  Index vars = 6;          // observed variables D_r
  Index latent_dim = 4;
  double mean_records = 28.0;
  double unit_gap_prob = 0.55;   // dominant 1 h mode of the gap mixture
  double tail_mean_extra = 1.0;  // heavy tail: gap = 1 + Exp(mean)
  // Per-sequence recording cadence: every gap in a sequence is scaled by a
  // factor drawn log-uniformly from [1/scale_jitter, scale_jitter].
  double scale_jitter = 1.6;
  double missing_lo = 0.4;       // per-variable missing-rate targets
  double missing_hi = 0.7;
  Index tasks = 2;
  double obs_noise = 0.2;
  // Half-life (hours) of the exponential recency weighting inside the label
  // functional; <= 0 falls back to the plain time-weighted mean.
  double label_halflife = 4.0;
  std::uint64_t seed = 0;

  std::string to_json(int indent = -1) const;
  static SynthConfig from_json(const std::string& text);
};

struct SynthResult {
  Corpus corpus;
  Vec missing_targets;  // the rates the generator aimed for, per variable
};

SynthResult gen_synth(const SynthConfig& cfg);

}  // namespace grutv
