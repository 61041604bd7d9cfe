#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grutv/cells.hpp"
#include "grutv/metrics.hpp"
#include "grutv/training.hpp"

namespace grutv {

struct Condition {
  double rate = 1.0;  // 1.0 means the full corpus, no sampling
  SampleMode mode = SampleMode::uniform;

  std::string label() const;
};

struct ExperimentSpec {
  std::string corpus_path;
  std::vector<CellVariant> variants{CellVariant::gru, CellVariant::gru_t, CellVariant::gru_tv};
  std::vector<Condition> conditions{{1.0, SampleMode::uniform}, {0.5, SampleMode::uniform}};
  int seeds = 3;
  std::uint64_t base_seed = 0;
  TrainConfig train;
  double bucket_width = 1.0;  // for inverse-mode sampling dicts
  int jobs = 1;

  std::string to_json(int indent = -1) const;
  static ExperimentSpec from_json(const std::string& text);
};

// One (variant, condition, seed-replicate) training run.
struct RunResult {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  EvalReport test_report;
  int epochs = 0;
  double best_val = 0.0;
};

struct GridCell {
  CellVariant variant = CellVariant::gru;
  Condition condition;
  std::vector<RunResult> runs;
  // Means over successful runs; absent when every run failed or was undefined.
  std::vector<std::optional<double>> mean_task_auroc;
  std::vector<std::optional<double>> mean_task_auprc;
  std::optional<double> mean_macro_auroc;
  std::optional<double> mean_macro_auprc;
  bool failed = false;  // no successful run at all
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<std::string> task_names;
  std::vector<GridCell> cells;

  const GridCell& cell(CellVariant v, std::size_t condition_index) const;
  std::string to_json(int indent = 2) const;
  std::string to_text() const;
};

ExperimentResult run_experiment(const ExperimentSpec& spec, const Corpus& corpus);

// Loads the corpus from spec.corpus_path first.
ExperimentResult run_experiment(const ExperimentSpec& spec);

}  // namespace grutv
