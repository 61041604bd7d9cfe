// Command-line front end: synth, sample, stats, train, eval, gradcheck,
// experiment. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
// failure. GRUTV_SEED supplies the default seed when --seed is not given.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "grutv/cells.hpp"
#include "grutv/errors.hpp"
#include "grutv/experiment.hpp"
#include "grutv/gradcheck.hpp"
#include "grutv/metrics.hpp"
#include "grutv/synth.hpp"
#include "grutv/training.hpp"

namespace fs = std::filesystem;
using namespace grutv;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("GRUTV_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::logic_error&) {
      throw UsageError(std::string("GRUTV_SEED is not a number: ") + env);
    }
  }
  return 0;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
}

struct SeedOpt {
  std::uint64_t value = 0;
  bool given = false;
};

void add_seed_flag(CLI::App* cmd, SeedOpt& seed) {
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&seed](std::uint64_t v) {
        seed.value = v;
        seed.given = true;
      },
      "RNG seed (default: GRUTV_SEED or 0)");
}

std::uint64_t resolve_seed(const SeedOpt& s) { return s.given ? s.value : default_seed(); }

int cmd_synth(const std::string& out_path, const std::string& config_path, SynthConfig cfg,
              const SeedOpt& seed) {
  if (!config_path.empty()) cfg = SynthConfig::from_json(read_file(config_path));
  if (seed.given || std::getenv("GRUTV_SEED") != nullptr) cfg.seed = resolve_seed(seed);
  SynthResult res = gen_synth(cfg);
  save_jsonl(res.corpus, out_path);
  std::cout << "wrote " << res.corpus.seqs.size() << " sequences to " << out_path << "\n";
  return 0;
}

int cmd_sample(const std::string& in_path, const std::string& out_path, const std::string& mode,
               double rate, const SeedOpt& seed, double bucket_width, int max_passes) {
  LoadResult lr = load_corpus(in_path);
  SampleOptions opts;
  opts.mode = mode == "inverse" ? SampleMode::inverse : SampleMode::uniform;
  opts.target_rate = rate;
  opts.seed = resolve_seed(seed);
  opts.bucket_width = bucket_width;
  opts.max_passes = max_passes;

  std::optional<SamplingDict> dict;
  if (opts.mode == SampleMode::inverse) dict = build_sampling_dict(lr.corpus, bucket_width);
  auto kept = sample_sequence(lr.corpus, opts, dict ? &*dict : nullptr);

  long total = 0, selected = 0;
  for (std::size_t s = 0; s < kept.size(); ++s) {
    total += lr.corpus.seqs[s].length();
    selected += static_cast<long>(kept[s].size());
  }
  save_jsonl(lr.corpus, out_path, &kept);
  std::cout << "kept " << selected << " of " << total << " records (rate "
            << (total > 0 ? static_cast<double>(selected) / static_cast<double>(total) : 0.0)
            << ") -> " << out_path << "\n";
  return 0;
}

int cmd_stats(const std::string& in_path, const std::string& out_path, double bucket_width) {
  LoadResult lr = load_corpus(in_path);
  CorpusStats stats = corpus_stats(lr.corpus, bucket_width);

  std::ostringstream csv;
  csv << "section,key,value1,value2\n";
  const auto& names = lr.corpus.var_names;
  for (std::size_t d = 0; d < stats.missing_rate_mean.size(); ++d) {
    const std::string name = d < names.size() ? names[d] : "v" + std::to_string(d);
    csv << "missing_rate," << name << "," << stats.missing_rate_mean[d] << ","
        << stats.missing_rate_std[d] << "\n";
  }
  for (const auto& [bucket, count] : stats.interval_histogram) {
    csv << "interval," << static_cast<double>(bucket) * stats.bucket_width << "," << count
        << ",\n";
  }
  csv << "interval_summary,," << stats.interval_mean << "," << stats.interval_std << "\n";

  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    write_file(out_path, csv.str());
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_train(const std::string& in_path, const std::string& cell, const std::string& out_path,
              const std::string& config_path, const std::string& log_path, TrainConfig cfg,
              const SeedOpt& seed) {
  if (!config_path.empty()) cfg = TrainConfig::from_json(read_file(config_path));
  if (seed.given || std::getenv("GRUTV_SEED") != nullptr) cfg.seed = resolve_seed(seed);
  const CellVariant variant = parse_variant(cell);
  LoadResult lr = load_corpus(in_path);

  TrainResult res = train(variant, lr.corpus, cfg);
  for (const EpochLog& e : res.log) {
    std::cout << "epoch " << e.epoch << "  loss " << e.train_loss << "  val " << e.val_metric
              << "\n";
  }
  std::cout << "best epoch " << res.best.epoch << " (" << cfg.stop_metric << " "
            << res.best.val_metric << ")\n";
  save_checkpoint(res.best, out_path);
  std::cout << "wrote " << out_path << "\n";

  if (!log_path.empty()) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const EpochLog& e : res.log) {
      nlohmann::ordered_json je;
      je["epoch"] = e.epoch;
      je["train_loss"] = e.train_loss;
      je["val_metric"] = e.val_metric;
      j.push_back(std::move(je));
    }
    write_file(log_path, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_eval(const std::string& in_path, const std::string& ckpt_path, const std::string& out_path,
             const std::string& part) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  LoadResult lr = load_corpus(in_path);

  std::vector<int> subset;
  if (part == "all") {
    for (std::size_t i = 0; i < lr.corpus.size(); ++i) subset.push_back(static_cast<int>(i));
  } else {
    SplitIndices split = train_split(lr.corpus.size(), ckpt.config);
    if (part == "train") subset = split.train;
    else if (part == "val") subset = split.val;
    else subset = split.test;
  }
  auto prepared = prepare_all(lr.corpus, subset, ckpt.defaults);
  EvalReport rep =
      evaluate_model(ckpt.variant, ckpt.cell, ckpt.head, prepared, lr.corpus.task_names);
  const std::string json = rep.to_json(2);
  std::cout << json << "\n";
  if (!out_path.empty()) {
    write_file(out_path, json + "\n");
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& cell, Index dr, Index dh, Index len, const SeedOpt& seed,
                  double eps, double tol) {
  const CellVariant variant = parse_variant(cell);
  Rng rng(mix_seed(resolve_seed(seed), 0x4743));
  CellParams params = init_cell_params(variant, dr, dh, rng);
  const Index tasks = 2;
  HeadParams head = init_head_params(dh, tasks, rng);

  PreparedSequence seq;
  seq.id = "gradcheck";
  seq.values = Mat::Zero(len, dr);
  seq.mask = Mat::Zero(len, dr);
  seq.dt = Vec::Zero(len);
  seq.delta = Mat::Zero(len, dr);
  seq.defaults = Vec::Zero(dr);
  double t = 0.0;
  for (Index i = 0; i < len; ++i) {
    seq.dt[i] = i == 0 ? 1.0 : rng.uniform(0.0, 2.0);
    t += seq.dt[i];
    seq.t.push_back(t);
    for (Index d = 0; d < dr; ++d) {
      seq.mask(i, d) = rng.bernoulli(0.6) ? 1.0 : 0.0;
      if (seq.mask(i, d) != 0.0) seq.values(i, d) = rng.uniform(-2.0, 2.0);
      seq.delta(i, d) = i == 0 ? 0.0 : rng.uniform(0.0, 3.0);
    }
  }
  Vec labels(tasks);
  for (Index k = 0; k < tasks; ++k) labels[k] = rng.bernoulli(0.5) ? 1.0 : 0.0;

  std::vector<Tensor> point = pack_cell_params(variant, params);
  for (Tensor& b : pack_head_params(head)) point.push_back(std::move(b));

  GradReport rep = grad_check(
      [&](Tape& tape, std::span<const ValueRef> leaves) {
        TapedCell tc = cell_from_leaves(tape, variant, dr, dh, leaves);
        TapedHead th = head_from_leaves(leaves.subspan(cell_block_count(variant)));
        ValueRef h = run_sequence_taped(tape, tc, seq);
        return tape.bce(predict_head_taped(tape, th, h), labels);
      },
      point, eps, tol);

  std::cout << "cell " << cell << "  dr " << dr << "  dh " << dh << "  len " << len << "\n";
  std::cout << "max abs err " << rep.max_abs_err << "\n";
  std::cout << "max rel err " << rep.max_rel_err << " (tolerance " << tol << ")\n";
  std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";
  if (!rep.pass) throw NumericError("gradcheck failed: max rel err above tolerance");
  return 0;
}

int cmd_experiment(const std::string& spec_path, const std::string& out_dir, int jobs_override) {
  ExperimentSpec spec = ExperimentSpec::from_json(read_file(spec_path));
  if (jobs_override > 0) spec.jobs = jobs_override;
  ExperimentResult res = run_experiment(spec);

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "grid.json", res.to_json(2) + "\n");
  write_file(fs::path(out_dir) / "grid.txt", res.to_text());
  std::cout << res.to_text();
  std::cout << "wrote " << (fs::path(out_dir) / "grid.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time- and velocity-aware GRU cells for irregular multivariate time series"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus (JSONL)");
  std::string synth_out, synth_config;
  SynthConfig synth_cfg;
  SeedOpt synth_seed;
  synth->add_option("--out", synth_out, "output JSONL path")->required();
  synth->add_option("--config", synth_config, "SynthConfig JSON file");
  synth->add_option("--sequences", synth_cfg.sequences, "number of sequences");
  synth->add_option("--vars", synth_cfg.vars, "observed variables");
  synth->add_option("--latent", synth_cfg.latent_dim, "latent dimension");
  synth->add_option("--mean-records", synth_cfg.mean_records, "mean records per sequence");
  synth->add_option("--unit-gap-prob", synth_cfg.unit_gap_prob, "probability of a 1 h gap");
  synth->add_option("--tail-mean", synth_cfg.tail_mean_extra, "mean extra hours of tail gaps");
  synth->add_option("--missing-lo", synth_cfg.missing_lo, "missing-rate target lower bound");
  synth->add_option("--missing-hi", synth_cfg.missing_hi, "missing-rate target upper bound");
  synth->add_option("--tasks", synth_cfg.tasks, "binary task count");
  synth->add_option("--obs-noise", synth_cfg.obs_noise, "observation noise");
  add_seed_flag(synth, synth_seed);

  // sample
  auto* sample = app.add_subcommand("sample", "subsample records of a corpus");
  std::string sample_in, sample_out, sample_mode = "uniform";
  double sample_rate = 0.5, sample_bucket = 1.0;
  int sample_passes = 10000;
  SeedOpt sample_seed;
  sample->add_option("--in", sample_in, "input corpus (JSONL or CSV dir)")->required();
  sample->add_option("--out", sample_out, "output JSONL path")->required();
  sample->add_option("--mode", sample_mode, "uniform | inverse")
      ->check(CLI::IsMember({"uniform", "inverse"}));
  sample->add_option("--rate", sample_rate, "target sampling rate in (0,1]")->required();
  sample->add_option("--bucket-width", sample_bucket, "interval bucket width (hours)");
  sample->add_option("--max-passes", sample_passes, "pass budget before giving up");
  add_seed_flag(sample, sample_seed);

  // stats
  auto* stats = app.add_subcommand("stats", "missing rates and interval histogram (CSV)");
  std::string stats_in, stats_out;
  double stats_bucket = 1.0;
  stats->add_option("--in", stats_in, "input corpus")->required();
  stats->add_option("--out", stats_out, "output CSV path (stdout when absent)");
  stats->add_option("--bucket-width", stats_bucket, "interval bucket width (hours)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a cell variant on a corpus");
  std::string train_in, train_cell = "gru-tv", train_out, train_config, train_log;
  TrainConfig train_cfg;
  SeedOpt train_seed;
  train_cmd->add_option("--in", train_in, "input corpus")->required();
  train_cmd->add_option("--cell", train_cell, "cell variant");
  train_cmd->add_option("--out", train_out, "checkpoint JSON path")->required();
  train_cmd->add_option("--config", train_config, "TrainConfig JSON file");
  train_cmd->add_option("--log", train_log, "write the per-epoch log as JSON");
  train_cmd->add_option("--lr", train_cfg.lr, "learning rate");
  train_cmd->add_option("--hidden", train_cfg.hidden_dim, "hidden width");
  train_cmd->add_option("--accum", train_cfg.grad_accum, "gradient accumulation count");
  train_cmd->add_option("--min-epochs", train_cfg.min_epochs, "minimum epochs before stopping");
  train_cmd->add_option("--patience", train_cfg.patience, "early-stopping patience");
  train_cmd->add_option("--max-epochs", train_cfg.max_epochs, "hard epoch cap");
  add_seed_flag(train_cmd, train_seed);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_in, eval_ckpt, eval_out, eval_part = "test";
  eval_cmd->add_option("--in", eval_in, "input corpus")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint JSON")->required();
  eval_cmd->add_option("--out", eval_out, "write the report JSON here too");
  eval_cmd->add_option("--part", eval_part, "test | val | train | all")
      ->check(CLI::IsMember({"test", "val", "train", "all"}));

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the training gradient");
  std::string gc_cell = "gru-tv";
  Index gc_dr = 3, gc_dh = 4, gc_len = 6;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  SeedOpt gc_seed;
  gc->add_option("--cell", gc_cell, "cell variant");
  gc->add_option("--dr", gc_dr, "input width");
  gc->add_option("--dh", gc_dh, "hidden width");
  gc->add_option("--len", gc_len, "sequence length");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--tol", gc_tol, "relative-error tolerance");
  add_seed_flag(gc, gc_seed);

  // experiment
  auto* exp = app.add_subcommand("experiment", "run a variants-by-conditions grid");
  std::string exp_spec, exp_out = "results";
  int exp_jobs = 0;
  exp->add_option("--spec", exp_spec, "ExperimentSpec JSON file")->required();
  exp->add_option("--out-dir", exp_out, "output directory");
  exp->add_option("--jobs", exp_jobs, "parallel grid cells (overrides the spec)");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_out, synth_config, synth_cfg, synth_seed);
    if (sample->parsed()) {
      return cmd_sample(sample_in, sample_out, sample_mode, sample_rate, sample_seed,
                        sample_bucket, sample_passes);
    }
    if (stats->parsed()) return cmd_stats(stats_in, stats_out, stats_bucket);
    if (train_cmd->parsed()) {
      return cmd_train(train_in, train_cell, train_out, train_config, train_log, train_cfg,
                       train_seed);
    }
    if (eval_cmd->parsed()) return cmd_eval(eval_in, eval_ckpt, eval_out, eval_part);
    if (gc->parsed()) return cmd_gradcheck(gc_cell, gc_dr, gc_dh, gc_len, gc_seed, gc_eps, gc_tol);
    if (exp->parsed()) return cmd_experiment(exp_spec, exp_out, exp_jobs);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::usage: return 1;
      case ErrorKind::data: return 2;
      case ErrorKind::numeric: return 3;
    }
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
