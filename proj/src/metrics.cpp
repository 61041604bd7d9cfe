#include "grutv/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"

#include "grutv/errors.hpp"

namespace grutv {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("metric: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) throw UsageError("metric: empty input");
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  long pos = 0;
  for (int y : labels) pos += y != 0 ? 1 : 0;
  const long neg = static_cast<long>(labels.size()) - pos;
  if (pos == 0 || neg == 0) {
    throw UndefinedMetricError("auroc: needs both classes, got " + std::to_string(pos) +
                               " positives / " + std::to_string(neg) + " negatives");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tied groups, accumulate positive ranks.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  long pos = 0;
  for (int y : labels) pos += y != 0 ? 1 : 0;
  if (pos == 0) throw UndefinedMetricError("auprc: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Walk distinct thresholds from the top; ties enter the curve together.
  double ap = 0.0;
  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    long group_tp = 0, group_fp = 0;
    while (true) {
      if (labels[order[j]] != 0) ++group_tp;
      else ++group_fp;
      if (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
      else break;
    }
    tp += group_tp;
    fp += group_fp;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall_delta = static_cast<double>(group_tp) / static_cast<double>(pos);
    ap += precision * recall_delta;
    i = j + 1;
  }
  return ap;
}

double macro_average(std::span<const std::optional<double>> per_task) {
  double sum = 0.0;
  long n = 0;
  for (const auto& v : per_task) {
    if (v.has_value()) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) throw UndefinedMetricError("macro_average: no defined task metrics");
  return sum / static_cast<double>(n);
}

EvalReport evaluate_scores(const std::vector<std::vector<double>>& scores,
                           const std::vector<std::vector<int>>& labels,
                           const std::vector<std::string>& task_names) {
  if (scores.size() != labels.size()) {
    throw DimensionError("evaluate_scores: score/label task counts differ");
  }
  EvalReport rep;
  rep.task_names = task_names;
  rep.task_names.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (rep.task_names[k].empty()) rep.task_names[k] = "task" + std::to_string(k);
    long pos = 0;
    for (int y : labels[k]) pos += y != 0 ? 1 : 0;
    rep.positives.push_back(pos);
    rep.negatives.push_back(static_cast<long>(labels[k].size()) - pos);
    try {
      rep.task_auroc.push_back(auroc(scores[k], labels[k]));
    } catch (const UndefinedMetricError&) {
      rep.task_auroc.push_back(std::nullopt);
    }
    try {
      rep.task_auprc.push_back(auprc(scores[k], labels[k]));
    } catch (const UndefinedMetricError&) {
      rep.task_auprc.push_back(std::nullopt);
    }
  }
  auto safe_macro = [](const std::vector<std::optional<double>>& v) -> std::optional<double> {
    try {
      return macro_average(v);
    } catch (const UndefinedMetricError&) {
      return std::nullopt;
    }
  };
  rep.macro_auroc = safe_macro(rep.task_auroc);
  rep.macro_auprc = safe_macro(rep.task_auprc);
  return rep;
}

std::string EvalReport::to_json(int indent) const {
  nlohmann::ordered_json j;
  j["tasks"] = task_names;
  auto opt_array = [](const std::vector<std::optional<double>>& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const auto& x : v) {
      if (x.has_value()) a.push_back(*x);
      else a.push_back(nullptr);
    }
    return a;
  };
  j["auroc"] = opt_array(task_auroc);
  j["auprc"] = opt_array(task_auprc);
  j["macro_auroc"] = macro_auroc.has_value() ? nlohmann::ordered_json(*macro_auroc)
                                             : nlohmann::ordered_json(nullptr);
  j["macro_auprc"] = macro_auprc.has_value() ? nlohmann::ordered_json(*macro_auprc)
                                             : nlohmann::ordered_json(nullptr);
  j["positives"] = positives;
  j["negatives"] = negatives;
  return indent >= 0 ? j.dump(indent) : j.dump();
}

}  // namespace grutv
