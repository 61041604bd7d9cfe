#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace grutv {

// Rank-based AUROC: P(score+ > score-) + P(tie)/2. Needs both classes.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Average precision (step-wise, ties grouped). Needs at least one positive.
double auprc(std::span<const double> scores, std::span<const int> labels);

// Arithmetic mean over the defined entries; throws if none are defined.
double macro_average(std::span<const std::optional<double>> per_task);

struct EvalReport {
  std::vector<std::string> task_names;
  std::vector<std::optional<double>> task_auroc;
  std::vector<std::optional<double>> task_auprc;
  std::vector<long> positives;
  std::vector<long> negatives;
  std::optional<double> macro_auroc;
  std::optional<double> macro_auprc;

  // JSON with stable key order.
  std::string to_json(int indent = -1) const;
};

// Scores laid out per task: scores[k][i] is task k's score for sequence i.
EvalReport evaluate_scores(const std::vector<std::vector<double>>& scores,
                           const std::vector<std::vector<int>>& labels,
                           const std::vector<std::string>& task_names);

}  // namespace grutv
