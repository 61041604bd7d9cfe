#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grutv/tensor.hpp"

namespace grutv {

// One admission: timestamps in hours from t=0, raw values with NaN where the
// variable was not collected, {0,1} observation mask, one binary label per task.
struct Sequence {
  std::string id;
  std::vector<double> t;
  Mat values;  // n x D_r, NaN = missing
  Mat mask;    // n x D_r
  std::vector<int> labels;

  Index length() const { return static_cast<Index>(t.size()); }
};

struct Corpus {
  std::vector<std::string> var_names;
  std::vector<std::string> task_names;
  std::vector<Sequence> seqs;

  Index input_dim() const { return seqs.empty() ? 0 : seqs.front().values.cols(); }
  Index task_count() const { return seqs.empty() ? 0 : static_cast<Index>(seqs.front().labels.size()); }
  std::size_t size() const { return seqs.size(); }
};

// Model-ready form: forward-filled values, elapsed times with the dt[0]=1
// convention, per-variable staleness, and the fill defaults that were used.
struct PreparedSequence {
  std::string id;
  std::vector<double> t;
  Mat values;  // imputed, no NaN
  Mat mask;
  Vec dt;      // dt[0] = 1, dt[i] = t[i] - t[i-1]
  Mat delta;   // staleness per variable, delta.row(0) = 0
  Vec defaults;
  std::vector<int> labels;

  Index length() const { return dt.size(); }
};

enum class CorpusFormat { autodetect, jsonl, csv_dir };

struct LoadOptions {
  CorpusFormat format = CorpusFormat::autodetect;
  // Records closer than this are merged into one (PhysioNet convention).
  double align_window_hours = 5.0 / 60.0;
};

struct LoadResult {
  Corpus corpus;
  // Merge conflicts resolved keep-last during alignment.
  long merge_conflicts = 0;
};

LoadResult load_corpus(const std::filesystem::path& path, const LoadOptions& opts = {});

// JSONL writer; when `kept` is given, row i of the corpus is written with its
// selected records only plus a "kept" audit field.
void save_jsonl(const Corpus& corpus, const std::filesystem::path& path,
                const std::vector<std::vector<int>>* kept = nullptr);

// Mean of observed values per variable; 0 for variables never observed.
Vec observed_means(const Corpus& corpus, const std::vector<int>* subset = nullptr);

PreparedSequence canonicalize(const Sequence& seq, const Vec& defaults);

struct CorpusStats {
  std::vector<double> missing_rate_mean;  // per variable, across sequences
  std::vector<double> missing_rate_std;
  std::map<long, long> interval_histogram;  // bucket index -> count
  double interval_mean = 0.0;
  double interval_std = 0.0;
  double bucket_width = 1.0;
  long total_pairs = 0;
};

CorpusStats corpus_stats(const Corpus& corpus, double bucket_width = 1.0);

// Interval-bucket -> selection-probability map: p_t = 1 / (c_t * C_all).
struct SamplingDict {
  std::map<long, long> counts;
  long total = 0;  // C_all
  double bucket_width = 1.0;

  double prob(long bucket) const;   // falls back to max_prob for unseen buckets
  double prob_of_gap(double gap_hours) const;
  double max_prob() const;
};

long interval_bucket(double gap_hours, double bucket_width);

SamplingDict build_sampling_dict(const Corpus& corpus, double bucket_width = 1.0);

enum class SampleMode { uniform, inverse };

struct SampleOptions {
  SampleMode mode = SampleMode::uniform;
  double target_rate = 1.0;
  std::uint64_t seed = 0;
  int max_passes = 10000;
  double bucket_width = 1.0;
};

// Per-sequence selected record indices, sorted, always containing 0.
// Inverse mode needs `dict`; uniform mode ignores it.
std::vector<std::vector<int>> sample_sequence(const Corpus& corpus, const SampleOptions& opts,
                                              const SamplingDict* dict = nullptr);

Corpus apply_selection(const Corpus& corpus, const std::vector<std::vector<int>>& kept);

// Deterministic shuffled split into train/val/test index sets.
struct SplitIndices {
  std::vector<int> train, val, test;
};
SplitIndices split_corpus(std::size_t n, double train_frac, double val_frac, double test_frac,
                          std::uint64_t seed);

}  // namespace grutv
