#include "grutv/experiment.hpp"

#include <atomic>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "grutv/errors.hpp"
#include "grutv/rng.hpp"

namespace grutv {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kSampleSalt = 0x53414d50;
constexpr std::uint64_t kRunSalt = 0x52554e;

std::string mode_name(SampleMode m) { return m == SampleMode::uniform ? "uniform" : "inverse"; }

SampleMode parse_mode(const std::string& s) {
  if (s == "uniform") return SampleMode::uniform;
  if (s == "inverse") return SampleMode::inverse;
  throw UsageError("unknown sampling mode: " + s);
}

ojson spec_to_json(const ExperimentSpec& spec) {
  ojson j;
  j["corpus"] = spec.corpus_path;
  ojson variants = ojson::array();
  for (CellVariant v : spec.variants) variants.push_back(to_string(v));
  j["variants"] = std::move(variants);
  ojson conditions = ojson::array();
  for (const Condition& c : spec.conditions) {
    ojson jc;
    jc["rate"] = c.rate;
    jc["mode"] = mode_name(c.mode);
    conditions.push_back(std::move(jc));
  }
  j["conditions"] = std::move(conditions);
  j["seeds"] = spec.seeds;
  j["base_seed"] = spec.base_seed;
  j["train"] = nlohmann::ordered_json::parse(spec.train.to_json());
  j["bucket_width"] = spec.bucket_width;
  j["jobs"] = spec.jobs;
  return j;
}

std::optional<double> mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

std::string Condition::label() const {
  std::ostringstream os;
  os << std::llround(rate * 100.0) << "%";
  if (rate < 1.0) os << " " << mode_name(mode);
  return os.str();
}

std::string ExperimentSpec::to_json(int indent) const {
  ojson j = spec_to_json(*this);
  return indent >= 0 ? j.dump(indent) : j.dump();
}

ExperimentSpec ExperimentSpec::from_json(const std::string& text) {
  ExperimentSpec spec;
  try {
    const auto j = nlohmann::json::parse(text);
    spec.corpus_path = j.value("corpus", "");
    if (j.contains("variants")) {
      spec.variants.clear();
      for (const auto& v : j.at("variants")) spec.variants.push_back(parse_variant(v.get<std::string>()));
    }
    if (j.contains("conditions")) {
      spec.conditions.clear();
      for (const auto& c : j.at("conditions")) {
        Condition cond;
        cond.rate = c.at("rate").get<double>();
        cond.mode = parse_mode(c.value("mode", "uniform"));
        spec.conditions.push_back(cond);
      }
    }
    spec.seeds = j.value("seeds", spec.seeds);
    spec.base_seed = j.value("base_seed", spec.base_seed);
    if (j.contains("train")) spec.train = TrainConfig::from_json(j.at("train").dump());
    spec.bucket_width = j.value("bucket_width", spec.bucket_width);
    spec.jobs = j.value("jobs", spec.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment spec: ") + e.what());
  }
  if (spec.variants.empty() || spec.conditions.empty() || spec.seeds < 1) {
    throw UsageError("experiment spec needs at least one variant, condition and seed");
  }
  return spec;
}

const GridCell& ExperimentResult::cell(CellVariant v, std::size_t condition_index) const {
  for (const GridCell& c : cells) {
    bool same_cond = false;
    if (condition_index < spec.conditions.size()) {
      const Condition& want = spec.conditions[condition_index];
      same_cond = c.condition.rate == want.rate && c.condition.mode == want.mode;
    }
    if (c.variant == v && same_cond) return c;
  }
  throw UsageError("experiment: no such grid cell");
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const Corpus& corpus) {
  if (spec.variants.empty() || spec.conditions.empty() || spec.seeds < 1) {
    throw UsageError("experiment spec needs at least one variant, condition and seed");
  }
  if (corpus.seqs.empty()) throw UsageError("experiment: empty corpus");

  struct RunJob {
    std::size_t vi, ci;
    int si;
  };
  std::vector<RunJob> jobs_list;
  for (std::size_t vi = 0; vi < spec.variants.size(); ++vi) {
    for (std::size_t ci = 0; ci < spec.conditions.size(); ++ci) {
      for (int si = 0; si < spec.seeds; ++si) jobs_list.push_back({vi, ci, si});
    }
  }
  std::vector<RunResult> results(jobs_list.size());

  // Sampling dicts come from the full corpus, one per condition.
  std::vector<std::optional<SamplingDict>> dicts(spec.conditions.size());
  for (std::size_t ci = 0; ci < spec.conditions.size(); ++ci) {
    const Condition& cond = spec.conditions[ci];
    if (cond.rate < 1.0 && cond.mode == SampleMode::inverse) {
      dicts[ci] = build_sampling_dict(corpus, spec.bucket_width);
    }
  }

  auto run_one = [&](const RunJob& job) {
    const CellVariant variant = spec.variants[job.vi];
    const Condition& cond = spec.conditions[job.ci];
    // The replicate seed is shared across variants so every variant sees the
    // same sampled corpus and the same split at a given (condition, seed).
    const std::uint64_t replicate_seed =
        mix_seed(mix_seed(spec.base_seed, kRunSalt + job.ci), static_cast<std::uint64_t>(job.si));

    RunResult res;
    res.seed = replicate_seed;
    try {
      const Corpus* data = &corpus;
      Corpus sampled;
      if (cond.rate < 1.0) {
        SampleOptions so;
        so.mode = cond.mode;
        so.target_rate = cond.rate;
        so.seed = mix_seed(replicate_seed, kSampleSalt);
        so.bucket_width = spec.bucket_width;
        auto kept = sample_sequence(corpus, so, dicts[job.ci] ? &*dicts[job.ci] : nullptr);
        sampled = apply_selection(corpus, kept);
        data = &sampled;
      }

      TrainConfig cfg = spec.train;
      cfg.seed = replicate_seed;
      TrainResult tr = train(variant, *data, cfg);

      SplitIndices split = train_split(data->size(), cfg);
      auto test = prepare_all(*data, split.test, tr.best.defaults);
      res.test_report =
          evaluate_model(variant, tr.best.cell, tr.best.head, test, data->task_names);
      res.epochs = tr.stopped_epoch;
      res.best_val = tr.best.val_metric;
    } catch (const Error& e) {
      res.failed = true;
      res.error = e.what();
    }
    return res;
  };

  const int jobs = std::max(1, spec.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < jobs_list.size(); ++i) results[i] = run_one(jobs_list[i]);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs_list.size()) break;
        results[i] = run_one(jobs_list[i]);
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs && t < static_cast<int>(jobs_list.size()); ++t) {
      pool.emplace_back(worker);
    }
    for (std::thread& t : pool) t.join();
  }

  ExperimentResult out;
  out.spec = spec;
  out.task_names = corpus.task_names;
  if (out.task_names.empty()) {
    for (Index k = 0; k < corpus.task_count(); ++k) {
      out.task_names.push_back("task" + std::to_string(k));
    }
  }

  const Index tasks = corpus.task_count();
  for (std::size_t vi = 0; vi < spec.variants.size(); ++vi) {
    for (std::size_t ci = 0; ci < spec.conditions.size(); ++ci) {
      GridCell cell;
      cell.variant = spec.variants[vi];
      cell.condition = spec.conditions[ci];
      for (std::size_t i = 0; i < jobs_list.size(); ++i) {
        if (jobs_list[i].vi == vi && jobs_list[i].ci == ci) cell.runs.push_back(results[i]);
      }
      std::vector<double> macro_roc, macro_prc;
      std::vector<std::vector<double>> task_roc(static_cast<std::size_t>(tasks));
      std::vector<std::vector<double>> task_prc(static_cast<std::size_t>(tasks));
      for (const RunResult& r : cell.runs) {
        if (r.failed) continue;
        if (r.test_report.macro_auroc) macro_roc.push_back(*r.test_report.macro_auroc);
        if (r.test_report.macro_auprc) macro_prc.push_back(*r.test_report.macro_auprc);
        for (Index k = 0; k < tasks; ++k) {
          const auto& roc = r.test_report.task_auroc[static_cast<std::size_t>(k)];
          const auto& prc = r.test_report.task_auprc[static_cast<std::size_t>(k)];
          if (roc) task_roc[static_cast<std::size_t>(k)].push_back(*roc);
          if (prc) task_prc[static_cast<std::size_t>(k)].push_back(*prc);
        }
      }
      for (Index k = 0; k < tasks; ++k) {
        cell.mean_task_auroc.push_back(mean_of(task_roc[static_cast<std::size_t>(k)]));
        cell.mean_task_auprc.push_back(mean_of(task_prc[static_cast<std::size_t>(k)]));
      }
      cell.mean_macro_auroc = mean_of(macro_roc);
      cell.mean_macro_auprc = mean_of(macro_prc);
      cell.failed = true;
      for (const RunResult& r : cell.runs) {
        if (!r.failed) cell.failed = false;
      }
      out.cells.push_back(std::move(cell));
    }
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  if (spec.corpus_path.empty()) throw UsageError("experiment: no corpus path in spec");
  LoadResult lr = load_corpus(spec.corpus_path);
  return run_experiment(spec, lr.corpus);
}

std::string ExperimentResult::to_json(int indent) const {
  ojson j;
  j["spec"] = spec_to_json(spec);
  j["tasks"] = task_names;
  ojson jcells = ojson::array();
  auto opt = [](const std::optional<double>& v) {
    return v ? ojson(*v) : ojson(nullptr);
  };
  for (const GridCell& c : cells) {
    ojson jc;
    jc["variant"] = to_string(c.variant);
    jc["condition"] = c.condition.label();
    jc["rate"] = c.condition.rate;
    jc["mode"] = mode_name(c.condition.mode);
    jc["failed"] = c.failed;
    ojson mean;
    ojson roc = ojson::array(), prc = ojson::array();
    for (const auto& v : c.mean_task_auroc) roc.push_back(opt(v));
    for (const auto& v : c.mean_task_auprc) prc.push_back(opt(v));
    mean["auroc"] = std::move(roc);
    mean["auprc"] = std::move(prc);
    mean["macro_auroc"] = opt(c.mean_macro_auroc);
    mean["macro_auprc"] = opt(c.mean_macro_auprc);
    jc["mean"] = std::move(mean);
    ojson jruns = ojson::array();
    for (const RunResult& r : c.runs) {
      ojson jr;
      jr["seed"] = r.seed;
      jr["failed"] = r.failed;
      if (r.failed) {
        jr["error"] = r.error;
      } else {
        jr["epochs"] = r.epochs;
        jr["best_val"] = r.best_val;
        jr["test"] = nlohmann::ordered_json::parse(r.test_report.to_json());
      }
      jruns.push_back(std::move(jr));
    }
    jc["runs"] = std::move(jruns);
    jcells.push_back(std::move(jc));
  }
  j["cells"] = std::move(jcells);
  return indent >= 0 ? j.dump(indent) : j.dump();
}

std::string ExperimentResult::to_text() const {
  std::ostringstream os;
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("   -  ");
    std::ostringstream o;
    o << std::fixed << std::setprecision(4) << *v;
    return o.str();
  };
  for (std::size_t ci = 0; ci < spec.conditions.size(); ++ci) {
    const Condition& cond = spec.conditions[ci];
    os << "== sampling " << cond.label() << " ==\n";
    os << std::left << std::setw(12) << "variant";
    for (const std::string& t : task_names) os << std::setw(10) << t;
    os << std::setw(10) << "macro" << std::setw(12) << "macro-prc" << "\n";
    for (const GridCell& c : cells) {
      if (!(c.condition.rate == cond.rate && c.condition.mode == cond.mode)) continue;
      os << std::left << std::setw(12) << to_string(c.variant);
      for (const auto& v : c.mean_task_auroc) os << std::setw(10) << fmt(v);
      os << std::setw(10) << fmt(c.mean_macro_auroc) << std::setw(12)
         << fmt(c.mean_macro_auprc);
      if (c.failed) os << "  FAILED";
      os << "\n";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace grutv
