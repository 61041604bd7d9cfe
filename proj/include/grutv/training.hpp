#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "grutv/cells.hpp"
#include "grutv/datapipe.hpp"
#include "grutv/metrics.hpp"

namespace grutv {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int grad_accum = 8;   // sequences per optimizer step (batch size 1 unroll)
  int min_epochs = 30;
  int patience = 3;
  int max_epochs = 100;
  long max_steps = -1;  // optimizer step budget; 0 means dry run, -1 unlimited
  std::uint64_t seed = 0;
  double train_frac = 0.7;
  double val_frac = 0.15;
  double test_frac = 0.15;
  Index hidden_dim = 12;
  std::string stop_metric = "macro_auroc";

  std::string to_json(int indent = -1) const;
  static TrainConfig from_json(const std::string& text);
};

// -(1/K) sum_k [y log yhat + (1-y) log(1-yhat)], yhat clamped 1e-12 from {0,1}.
double bce_loss(const std::vector<int>& y, const Vec& yhat);

struct AdamState {
  std::vector<Vec> m, v;
};

// Bias-corrected adaptive-moment update over canonical parameter blocks.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& moments,
               const TrainConfig& config, long step_index);

struct Checkpoint {
  CellVariant variant = CellVariant::gru;
  Index input_dim = 0;
  Index hidden_dim = 0;
  Index tasks = 0;
  CellParams cell;
  HeadParams head;
  Vec defaults;
  int epoch = 0;
  double val_metric = 0.0;
  TrainConfig config;
  std::vector<std::string> var_names, task_names;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  int stopped_epoch = 0;
};

struct TrainHooks {
  // Replaces the validation metric used for stopping and checkpoint selection;
  // lets tests freeze it.
  std::function<double(int epoch)> metric_override;
};

TrainResult train(CellVariant v, const Corpus& corpus, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

std::vector<PreparedSequence> prepare_all(const Corpus& corpus, const std::vector<int>& subset,
                                          const Vec& defaults);

// The exact split train() derives from a config; eval tooling reuses it.
SplitIndices train_split(std::size_t corpus_size, const TrainConfig& cfg);

// Forward every sequence and score per task.
EvalReport evaluate_model(CellVariant v, const CellParams& cell, const HeadParams& head,
                          const std::vector<PreparedSequence>& seqs,
                          const std::vector<std::string>& task_names);

double stop_metric_value(const EvalReport& report, const std::string& metric);

}  // namespace grutv
