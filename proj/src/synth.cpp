#include "grutv/synth.hpp"

#include <cmath>

#include "json.hpp"

#include "grutv/errors.hpp"
#include "grutv/rng.hpp"

namespace grutv {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kCorpusSalt = 0x53594e54;

void validate(const SynthConfig& cfg) {
  if (cfg.sequences < 1 || cfg.vars < 1 || cfg.latent_dim < 1 || cfg.tasks < 1) {
    throw UsageError("gen_synth: counts must be >= 1");
  }
  if (cfg.missing_lo < 0.0 || cfg.missing_hi >= 1.0 || cfg.missing_lo > cfg.missing_hi) {
    throw UsageError("gen_synth: missing-rate targets must satisfy 0 <= lo <= hi < 1");
  }
  if (cfg.unit_gap_prob < 0.0 || cfg.unit_gap_prob > 1.0) {
    throw UsageError("gen_synth: unit_gap_prob must be in [0, 1]");
  }
  if (cfg.mean_records < 2.0) throw UsageError("gen_synth: mean_records must be >= 2");
}

}  // namespace

std::string SynthConfig::to_json(int indent) const {
  ojson j;
  j["sequences"] = sequences;
  j["vars"] = vars;
  j["latent_dim"] = latent_dim;
  j["mean_records"] = mean_records;
  j["unit_gap_prob"] = unit_gap_prob;
  j["tail_mean_extra"] = tail_mean_extra;
  j["missing_lo"] = missing_lo;
  j["missing_hi"] = missing_hi;
  j["tasks"] = tasks;
  j["obs_noise"] = obs_noise;
  j["scale_jitter"] = scale_jitter;
  j["label_halflife"] = label_halflife;
  j["seed"] = seed;
  return indent >= 0 ? j.dump(indent) : j.dump();
}

SynthConfig SynthConfig::from_json(const std::string& text) {
  SynthConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.sequences = j.value("sequences", c.sequences);
    c.vars = j.value("vars", c.vars);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.mean_records = j.value("mean_records", c.mean_records);
    c.unit_gap_prob = j.value("unit_gap_prob", c.unit_gap_prob);
    c.tail_mean_extra = j.value("tail_mean_extra", c.tail_mean_extra);
    c.missing_lo = j.value("missing_lo", c.missing_lo);
    c.missing_hi = j.value("missing_hi", c.missing_hi);
    c.tasks = j.value("tasks", c.tasks);
    c.obs_noise = j.value("obs_noise", c.obs_noise);
    c.label_halflife = j.value("label_halflife", c.label_halflife);
    c.scale_jitter = j.value("scale_jitter", c.scale_jitter);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synth config: ") + e.what());
  }
  return c;
}

SynthResult gen_synth(const SynthConfig& cfg) {
  validate(cfg);
  const Index L = cfg.latent_dim;
  const Index dr = cfg.vars;

  // Corpus-level draws: readout, dynamics, task directions, missing targets.
  Rng corpus_rng(mix_seed(cfg.seed, kCorpusSalt));
  Mat readout(dr, L);
  for (Index i = 0; i < dr; ++i)
    for (Index j = 0; j < L; ++j)
      readout(i, j) = corpus_rng.normal() / std::sqrt(static_cast<double>(L));

  // Damped planar rotations, one frequency per latent pair. Fast enough that
  // the state moves noticeably across multi-hour gaps.
  const double damping = 0.04;
  std::vector<double> omega(static_cast<std::size_t>((L + 1) / 2));
  for (double& w : omega) w = corpus_rng.uniform(0.15, 0.5);

  Mat task_dirs(cfg.tasks, L);
  for (Index k = 0; k < cfg.tasks; ++k) {
    Vec u(L);
    for (Index j = 0; j < L; ++j) u[j] = corpus_rng.normal();
    task_dirs.row(k) = u.normalized();
  }

  Vec targets(dr);
  for (Index d = 0; d < dr; ++d) targets[d] = corpus_rng.uniform(cfg.missing_lo, cfg.missing_hi);

  SynthResult out;
  out.missing_targets = targets;
  for (Index d = 0; d < dr; ++d) out.corpus.var_names.push_back("v" + std::to_string(d));
  for (Index k = 0; k < cfg.tasks; ++k) out.corpus.task_names.push_back("task" + std::to_string(k));

  auto evolve = [&](Vec& z, double dt, Rng& rng) {
    const double decay = std::exp(-damping * dt);
    Vec next(L);
    for (Index j = 0; j + 1 < L; j += 2) {
      const double a = omega[static_cast<std::size_t>(j / 2)] * dt;
      const double c = std::cos(a), s = std::sin(a);
      next[j] = decay * (c * z[j] - s * z[j + 1]);
      next[j + 1] = decay * (s * z[j] + c * z[j + 1]);
    }
    if (L % 2 == 1) next[L - 1] = decay * z[L - 1];
    const double sd = 0.15 * std::sqrt(dt);
    for (Index j = 0; j < L; ++j) next[j] += sd * rng.normal();
    z = next;
  };

  for (long s = 0; s < cfg.sequences; ++s) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(s) + 1));
    const Index n = std::max<Index>(4, rng.poisson(cfg.mean_records));
    const double cadence =
        cfg.scale_jitter > 1.0
            ? std::exp(rng.uniform(-std::log(cfg.scale_jitter), std::log(cfg.scale_jitter)))
            : 1.0;

    Sequence seq;
    seq.id = "synth" + std::to_string(s);
    seq.values = Mat::Constant(n, dr, std::numeric_limits<double>::quiet_NaN());
    seq.mask = Mat::Zero(n, dr);

    Vec z(L);
    for (Index j = 0; j < L; ++j) z[j] = rng.normal();

    Mat latents(n, L);
    double t = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (i > 0) {
        // Tail gaps are capped so that sampled-away neighbors cannot push the
        // effective elapsed time into the Euler update's unstable region.
        const double gap =
            cadence * (rng.bernoulli(cfg.unit_gap_prob)
                           ? 1.0
                           : 1.0 + std::min(rng.exponential(cfg.tail_mean_extra),
                                            2.5 * cfg.tail_mean_extra));
        evolve(z, gap, rng);
        t += gap;
      }
      seq.t.push_back(t);
      latents.row(i) = z;
      for (Index d = 0; d < dr; ++d) {
        const double v = readout.row(d).dot(z) + cfg.obs_noise * rng.normal();
        if (!rng.bernoulli(targets[d])) {
          seq.values(i, d) = v;
          seq.mask(i, d) = 1.0;
        }
      }
    }

    // Time-weighted mean of each task's latent projection (trapezoid weights,
    // optionally recency-discounted in real time).
    const double horizon = seq.t.back();
    Vec weights(n);
    for (Index i = 0; i < n; ++i) {
      const double left = i == 0 ? seq.t[0] : seq.t[static_cast<std::size_t>(i - 1)];
      const double right = i + 1 == n ? seq.t[static_cast<std::size_t>(n - 1)]
                                      : seq.t[static_cast<std::size_t>(i + 1)];
      weights[i] = 0.5 * (right - left);
      if (cfg.label_halflife > 0.0) {
        const double lambda = std::log(2.0) / cfg.label_halflife;
        weights[i] *= std::exp(-lambda * (horizon - seq.t[static_cast<std::size_t>(i)]));
      }
    }
    if (weights.sum() <= 0.0) weights.setOnes();
    weights /= weights.sum();
    for (Index k = 0; k < cfg.tasks; ++k) {
      const double functional = weights.dot(latents * task_dirs.row(k).transpose());
      seq.labels.push_back(functional > 0.0 ? 1 : 0);
    }

    out.corpus.seqs.push_back(std::move(seq));
  }
  return out;
}

}  // namespace grutv
