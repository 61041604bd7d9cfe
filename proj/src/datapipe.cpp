#include "grutv/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "grutv/errors.hpp"
#include "grutv/rng.hpp"

namespace grutv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using njson = nlohmann::json;
using ojson = nlohmann::ordered_json;

[[noreturn]] void parse_fail(const std::filesystem::path& file, long line, const std::string& what) {
  throw ParseError(file.string() + ":" + std::to_string(line) + ": " + what);
}

// Merge groups of records closer than the window; the first record of a group
// anchors its timestamp. Conflicting observations keep the last value.
void align_records(Sequence& seq, double window, long& conflicts) {
  const Index n = seq.length();
  if (n == 0 || window <= 0.0) return;
  const Index dr = seq.values.cols();

  std::vector<double> out_t;
  Mat out_v(n, dr);
  Mat out_m(n, dr);
  Index out_n = 0;

  Index i = 0;
  while (i < n) {
    const double anchor = seq.t[static_cast<std::size_t>(i)];
    Index j = i;
    while (j + 1 < n && seq.t[static_cast<std::size_t>(j + 1)] - anchor < window) ++j;
    out_t.push_back(anchor);
    for (Index d = 0; d < dr; ++d) {
      double v = kNaN;
      int seen = 0;
      for (Index k = i; k <= j; ++k) {
        if (seq.mask(k, d) != 0.0) {
          if (seen > 0) ++conflicts;
          v = seq.values(k, d);
          ++seen;
        }
      }
      out_v(out_n, d) = v;
      out_m(out_n, d) = seen > 0 ? 1.0 : 0.0;
    }
    ++out_n;
    i = j + 1;
  }

  seq.t = std::move(out_t);
  seq.values = out_v.topRows(out_n);
  seq.mask = out_m.topRows(out_n);
}

void check_ordering(const Sequence& seq, const std::filesystem::path& file, long line) {
  if (!seq.t.empty() && seq.t.front() < 0.0) {
    throw OrderingError(file.string() + ":" + std::to_string(line) + ": sequence '" + seq.id +
                        "' starts before t=0");
  }
  for (std::size_t i = 1; i < seq.t.size(); ++i) {
    if (seq.t[i] < seq.t[i - 1]) {
      throw OrderingError(file.string() + ":" + std::to_string(line) + ": sequence '" + seq.id +
                          "' has non-monotone timestamps");
    }
  }
}

Corpus load_jsonl(const std::filesystem::path& path, const LoadOptions& opts, long& conflicts) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());

  Corpus corpus;
  Index dr = -1;
  Index tasks = -1;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    njson j;
    try {
      j = njson::parse(line);
    } catch (const njson::exception& e) {
      parse_fail(path, lineno, e.what());
    }
    if (!j.is_object()) parse_fail(path, lineno, "expected an object");

    if (!j.contains("id") && (j.contains("vars") || j.contains("tasks"))) {
      if (j.contains("vars")) corpus.var_names = j["vars"].get<std::vector<std::string>>();
      if (j.contains("tasks")) corpus.task_names = j["tasks"].get<std::vector<std::string>>();
      continue;
    }
    if (!j.contains("id") || !j.contains("t") || !j.contains("x") || !j.contains("y")) {
      parse_fail(path, lineno, "record needs id, t, x, y");
    }

    Sequence seq;
    try {
      seq.id = j["id"].get<std::string>();
      seq.t = j["t"].get<std::vector<double>>();
      const auto& x = j["x"];
      if (!x.is_array() || x.size() != seq.t.size()) {
        parse_fail(path, lineno, "x must hold one row per timestamp");
      }
      const Index n = static_cast<Index>(seq.t.size());
      Index cols = dr;
      if (n > 0) {
        cols = static_cast<Index>(x[0].size());
      } else if (cols < 0) {
        cols = 0;
      }
      seq.values = Mat::Constant(n, cols, kNaN);
      seq.mask = Mat::Zero(n, cols);
      for (Index r = 0; r < n; ++r) {
        const auto& row = x[static_cast<std::size_t>(r)];
        if (static_cast<Index>(row.size()) != cols) {
          parse_fail(path, lineno, "ragged x rows");
        }
        for (Index d = 0; d < cols; ++d) {
          const auto& cell = row[static_cast<std::size_t>(d)];
          if (cell.is_null()) continue;
          seq.values(r, d) = cell.get<double>();
          seq.mask(r, d) = 1.0;
        }
      }
      for (const auto& yv : j["y"]) {
        const int y = yv.get<int>();
        if (y != 0 && y != 1) parse_fail(path, lineno, "labels must be 0/1");
        seq.labels.push_back(y);
      }
    } catch (const njson::exception& e) {
      parse_fail(path, lineno, e.what());
    }

    if (dr >= 0 && seq.values.cols() != dr) {
      parse_fail(path, lineno, "variable count changed mid-file");
    }
    if (tasks >= 0 && static_cast<Index>(seq.labels.size()) != tasks) {
      parse_fail(path, lineno, "task count changed mid-file");
    }
    dr = seq.values.cols();
    tasks = static_cast<Index>(seq.labels.size());

    check_ordering(seq, path, lineno);
    align_records(seq, opts.align_window_hours, conflicts);
    corpus.seqs.push_back(std::move(seq));
  }
  return corpus;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& file, long line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) parse_fail(file, line, "bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    parse_fail(file, line, "bad number '" + s + "'");
  }
}

Corpus load_csv_dir(const std::filesystem::path& dir, const LoadOptions& opts, long& conflicts) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".csv" && entry.path().filename() != "labels.csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  // labels.csv: header "id,<task>,<task>...", one row per sequence id
  std::map<std::string, std::vector<int>> labels;
  std::vector<std::string> task_names;
  const std::filesystem::path labels_path = dir / "labels.csv";
  {
    std::ifstream in(labels_path);
    if (!in) throw ParseError("cannot open " + labels_path.string());
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      if (lineno == 1) {
        if (cells.empty() || cells[0] != "id") parse_fail(labels_path, 1, "header must start with 'id'");
        task_names.assign(cells.begin() + 1, cells.end());
        continue;
      }
      if (cells.size() != task_names.size() + 1) parse_fail(labels_path, lineno, "wrong column count");
      std::vector<int> y;
      for (std::size_t k = 1; k < cells.size(); ++k) {
        const double v = parse_double(cells[k], labels_path, lineno);
        if (v != 0.0 && v != 1.0) parse_fail(labels_path, lineno, "labels must be 0/1");
        y.push_back(static_cast<int>(v));
      }
      labels[cells[0]] = std::move(y);
    }
  }

  Corpus corpus;
  corpus.task_names = task_names;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw ParseError("cannot open " + file.string());
    Sequence seq;
    seq.id = file.stem().string();

    std::string line;
    long lineno = 0;
    std::vector<std::string> vars;
    std::vector<std::vector<double>> rows;  // NaN for empty cells
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      if (lineno == 1) {
        if (cells.empty() || cells[0] != "t") parse_fail(file, 1, "header must start with 't'");
        vars.assign(cells.begin() + 1, cells.end());
        if (corpus.var_names.empty()) corpus.var_names = vars;
        else if (corpus.var_names != vars) parse_fail(file, 1, "variable columns differ across files");
        continue;
      }
      if (cells.size() != vars.size() + 1) parse_fail(file, lineno, "wrong column count");
      seq.t.push_back(parse_double(cells[0], file, lineno));
      std::vector<double> row;
      for (std::size_t d = 1; d < cells.size(); ++d) {
        row.push_back(cells[d].empty() ? kNaN : parse_double(cells[d], file, lineno));
      }
      rows.push_back(std::move(row));
    }

    const Index n = static_cast<Index>(rows.size());
    const Index dr = static_cast<Index>(vars.size());
    seq.values = Mat::Constant(n, dr, kNaN);
    seq.mask = Mat::Zero(n, dr);
    for (Index r = 0; r < n; ++r) {
      for (Index d = 0; d < dr; ++d) {
        if (!std::isnan(rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(d)])) {
          seq.values(r, d) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(d)];
          seq.mask(r, d) = 1.0;
        }
      }
    }

    auto it = labels.find(seq.id);
    if (it == labels.end()) throw ParseError(labels_path.string() + ": no labels for '" + seq.id + "'");
    seq.labels = it->second;

    check_ordering(seq, file, 1);
    align_records(seq, opts.align_window_hours, conflicts);
    corpus.seqs.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace

LoadResult load_corpus(const std::filesystem::path& path, const LoadOptions& opts) {
  CorpusFormat fmt = opts.format;
  if (fmt == CorpusFormat::autodetect) {
    fmt = std::filesystem::is_directory(path) ? CorpusFormat::csv_dir : CorpusFormat::jsonl;
  }
  LoadResult res;
  res.corpus = fmt == CorpusFormat::jsonl ? load_jsonl(path, opts, res.merge_conflicts)
                                          : load_csv_dir(path, opts, res.merge_conflicts);
  return res;
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path,
                const std::vector<std::vector<int>>* kept) {
  if (kept != nullptr && kept->size() != corpus.seqs.size()) {
    throw UsageError("save_jsonl: selection size does not match corpus");
  }
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());

  if (!corpus.var_names.empty() || !corpus.task_names.empty()) {
    ojson header;
    header["vars"] = corpus.var_names;
    header["tasks"] = corpus.task_names;
    out << header.dump() << "\n";
  }
  for (std::size_t s = 0; s < corpus.seqs.size(); ++s) {
    const Sequence& seq = corpus.seqs[s];
    std::vector<int> indices;
    if (kept != nullptr) {
      indices = (*kept)[s];
    } else {
      indices.resize(static_cast<std::size_t>(seq.length()));
      for (Index i = 0; i < seq.length(); ++i) indices[static_cast<std::size_t>(i)] = static_cast<int>(i);
    }
    ojson j;
    j["id"] = seq.id;
    ojson t = ojson::array();
    ojson x = ojson::array();
    for (int i : indices) {
      t.push_back(seq.t[static_cast<std::size_t>(i)]);
      ojson row = ojson::array();
      for (Index d = 0; d < seq.values.cols(); ++d) {
        if (seq.mask(i, d) != 0.0) row.push_back(seq.values(i, d));
        else row.push_back(nullptr);
      }
      x.push_back(std::move(row));
    }
    j["t"] = std::move(t);
    j["x"] = std::move(x);
    j["y"] = seq.labels;
    if (kept != nullptr) j["kept"] = indices;
    out << j.dump() << "\n";
  }
}

Vec observed_means(const Corpus& corpus, const std::vector<int>* subset) {
  const Index dr = corpus.input_dim();
  Vec sum = Vec::Zero(dr);
  Vec count = Vec::Zero(dr);
  auto tally = [&](const Sequence& seq) {
    for (Index i = 0; i < seq.length(); ++i) {
      for (Index d = 0; d < dr; ++d) {
        if (seq.mask(i, d) != 0.0) {
          sum[d] += seq.values(i, d);
          count[d] += 1.0;
        }
      }
    }
  };
  if (subset != nullptr) {
    for (int s : *subset) tally(corpus.seqs[static_cast<std::size_t>(s)]);
  } else {
    for (const Sequence& seq : corpus.seqs) tally(seq);
  }
  Vec mean = Vec::Zero(dr);
  for (Index d = 0; d < dr; ++d) {
    if (count[d] > 0.0) mean[d] = sum[d] / count[d];
  }
  return mean;
}

PreparedSequence canonicalize(const Sequence& seq, const Vec& defaults) {
  const Index n = seq.length();
  const Index dr = seq.values.cols();
  if (defaults.size() != dr) {
    throw DimensionError("canonicalize: " + std::to_string(defaults.size()) + " defaults for " +
                         std::to_string(dr) + " variables");
  }

  PreparedSequence out;
  out.id = seq.id;
  out.t = seq.t;
  out.labels = seq.labels;
  out.defaults = defaults;
  out.mask = seq.mask;
  out.values = Mat::Zero(n, dr);
  out.dt = Vec::Zero(n);
  out.delta = Mat::Zero(n, dr);

  for (Index i = 0; i < n; ++i) {
    out.dt[i] = i == 0 ? 1.0 : seq.t[static_cast<std::size_t>(i)] - seq.t[static_cast<std::size_t>(i - 1)];
  }

  for (Index d = 0; d < dr; ++d) {
    double last = defaults[d];
    for (Index i = 0; i < n; ++i) {
      if (seq.mask(i, d) != 0.0) last = seq.values(i, d);
      out.values(i, d) = last;
      if (i > 0) {
        const double gap = seq.t[static_cast<std::size_t>(i)] - seq.t[static_cast<std::size_t>(i - 1)];
        out.delta(i, d) = gap + (seq.mask(i - 1, d) == 0.0 ? out.delta(i - 1, d) : 0.0);
      }
    }
  }

  if (!out.values.allFinite()) {
    throw NumericError("canonicalize: non-finite values in sequence '" + seq.id + "'");
  }
  return out;
}

long interval_bucket(double gap_hours, double bucket_width) {
  return std::llround(gap_hours / bucket_width);
}

CorpusStats corpus_stats(const Corpus& corpus, double bucket_width) {
  if (corpus.seqs.empty()) throw UsageError("corpus_stats: empty corpus");
  const Index dr = corpus.input_dim();

  CorpusStats stats;
  stats.bucket_width = bucket_width;
  stats.missing_rate_mean.assign(static_cast<std::size_t>(dr), 0.0);
  stats.missing_rate_std.assign(static_cast<std::size_t>(dr), 0.0);

  // Per-sequence missing rates, aggregated to mean and population std.
  std::vector<double> sum(static_cast<std::size_t>(dr), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(dr), 0.0);
  long counted = 0;
  double gap_sum = 0.0, gap_sumsq = 0.0;
  for (const Sequence& seq : corpus.seqs) {
    const Index n = seq.length();
    if (n == 0) continue;
    ++counted;
    for (Index d = 0; d < dr; ++d) {
      const double rate = 1.0 - seq.mask.col(d).sum() / static_cast<double>(n);
      sum[static_cast<std::size_t>(d)] += rate;
      sumsq[static_cast<std::size_t>(d)] += rate * rate;
    }
    for (Index i = 1; i < n; ++i) {
      const double gap = seq.t[static_cast<std::size_t>(i)] - seq.t[static_cast<std::size_t>(i - 1)];
      ++stats.interval_histogram[interval_bucket(gap, bucket_width)];
      gap_sum += gap;
      gap_sumsq += gap * gap;
      ++stats.total_pairs;
    }
  }
  if (counted == 0) throw UsageError("corpus_stats: corpus has only empty sequences");
  for (Index d = 0; d < dr; ++d) {
    const double mean = sum[static_cast<std::size_t>(d)] / static_cast<double>(counted);
    const double var = sumsq[static_cast<std::size_t>(d)] / static_cast<double>(counted) - mean * mean;
    stats.missing_rate_mean[static_cast<std::size_t>(d)] = mean;
    stats.missing_rate_std[static_cast<std::size_t>(d)] = std::sqrt(std::max(0.0, var));
  }
  if (stats.total_pairs > 0) {
    stats.interval_mean = gap_sum / static_cast<double>(stats.total_pairs);
    const double var = gap_sumsq / static_cast<double>(stats.total_pairs) -
                       stats.interval_mean * stats.interval_mean;
    stats.interval_std = std::sqrt(std::max(0.0, var));
  }
  return stats;
}

double SamplingDict::prob(long bucket) const {
  auto it = counts.find(bucket);
  if (it == counts.end()) return max_prob();
  return 1.0 / (static_cast<double>(it->second) * static_cast<double>(total));
}

double SamplingDict::prob_of_gap(double gap_hours) const {
  return prob(interval_bucket(gap_hours, bucket_width));
}

double SamplingDict::max_prob() const {
  long min_count = 0;
  for (const auto& [bucket, c] : counts) {
    if (min_count == 0 || c < min_count) min_count = c;
  }
  if (min_count == 0) throw UsageError("sampling dict: empty interval set");
  return 1.0 / (static_cast<double>(min_count) * static_cast<double>(total));
}

SamplingDict build_sampling_dict(const Corpus& corpus, double bucket_width) {
  SamplingDict dict;
  dict.bucket_width = bucket_width;
  for (const Sequence& seq : corpus.seqs) {
    for (Index i = 1; i < seq.length(); ++i) {
      const double gap = seq.t[static_cast<std::size_t>(i)] - seq.t[static_cast<std::size_t>(i - 1)];
      ++dict.counts[interval_bucket(gap, bucket_width)];
      ++dict.total;
    }
  }
  if (dict.total == 0) throw UsageError("build_sampling_dict: empty interval set");
  return dict;
}

std::vector<std::vector<int>> sample_sequence(const Corpus& corpus, const SampleOptions& opts,
                                              const SamplingDict* dict) {
  if (opts.target_rate <= 0.0 || opts.target_rate > 1.0) {
    throw UsageError("sample_sequence: target rate must be in (0, 1]");
  }
  if (opts.mode == SampleMode::inverse && dict == nullptr) {
    throw UsageError("sample_sequence: inverse mode needs a sampling dict");
  }

  const std::size_t ns = corpus.seqs.size();
  std::vector<std::vector<char>> selected(ns);
  long total_records = 0;
  long total_selected = 0;
  for (std::size_t s = 0; s < ns; ++s) {
    const Index n = corpus.seqs[s].length();
    selected[s].assign(static_cast<std::size_t>(n), 0);
    if (n > 0) {
      selected[s][0] = 1;  // the first record is always kept
      ++total_selected;
    }
    total_records += n;
  }
  if (total_records == 0) {
    return std::vector<std::vector<int>>(ns);
  }

  // One generator per sequence so results do not depend on scheduling order.
  std::vector<Rng> rngs;
  rngs.reserve(ns);
  for (std::size_t s = 0; s < ns; ++s) rngs.emplace_back(mix_seed(opts.seed, s + 1));

  double rate = 0.0;  // recomputed only at pass boundaries
  int passes = 0;
  while (rate < opts.target_rate) {
    if (passes >= opts.max_passes) {
      throw TerminationError("sample_sequence: rate " + std::to_string(rate) +
                             " below target after " + std::to_string(passes) + " passes");
    }
    for (std::size_t s = 0; s < ns; ++s) {
      const Sequence& seq = corpus.seqs[s];
      Rng& rng = rngs[s];
      Index last_selected = 0;
      for (Index i = 1; i < seq.length(); ++i) {
        if (selected[s][static_cast<std::size_t>(i)] != 0) {
          last_selected = i;
          continue;
        }
        double p = opts.target_rate;
        if (opts.mode == SampleMode::inverse) {
          const double gap = seq.t[static_cast<std::size_t>(i)] -
                             seq.t[static_cast<std::size_t>(last_selected)];
          p = dict->prob_of_gap(gap);
        }
        if (rng.uniform() <= p) {
          selected[s][static_cast<std::size_t>(i)] = 1;
          ++total_selected;
          last_selected = i;
        }
      }
    }
    ++passes;
    rate = static_cast<double>(total_selected) / static_cast<double>(total_records);
  }

  std::vector<std::vector<int>> out(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t i = 0; i < selected[s].size(); ++i) {
      if (selected[s][i] != 0) out[s].push_back(static_cast<int>(i));
    }
  }
  return out;
}

Corpus apply_selection(const Corpus& corpus, const std::vector<std::vector<int>>& kept) {
  if (kept.size() != corpus.seqs.size()) {
    throw UsageError("apply_selection: selection size does not match corpus");
  }
  Corpus out;
  out.var_names = corpus.var_names;
  out.task_names = corpus.task_names;
  out.seqs.reserve(corpus.seqs.size());
  for (std::size_t s = 0; s < corpus.seqs.size(); ++s) {
    const Sequence& seq = corpus.seqs[s];
    const auto& idx = kept[s];
    Sequence sub;
    sub.id = seq.id;
    sub.labels = seq.labels;
    sub.values = Mat(static_cast<Index>(idx.size()), seq.values.cols());
    sub.mask = Mat(static_cast<Index>(idx.size()), seq.mask.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      sub.t.push_back(seq.t[static_cast<std::size_t>(idx[k])]);
      sub.values.row(static_cast<Index>(k)) = seq.values.row(idx[k]);
      sub.mask.row(static_cast<Index>(k)) = seq.mask.row(idx[k]);
    }
    out.seqs.push_back(std::move(sub));
  }
  return out;
}

SplitIndices split_corpus(std::size_t n, double train_frac, double val_frac, double test_frac,
                          std::uint64_t seed) {
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw UsageError("split_corpus: fractions must sum to 1");
  }
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng(mix_seed(seed, 0x51707UL));
  rng.shuffle(order);

  const std::size_t n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n)));
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  out.val.assign(order.begin() + static_cast<long>(n_train),
                 order.begin() + static_cast<long>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
  return out;
}

}  // namespace grutv
