#include "grutv/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "grutv/errors.hpp"
#include "grutv/gradcheck.hpp"
#include "grutv/rng.hpp"

namespace grutv {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kSplitSalt = 0x53504c49;
constexpr std::uint64_t kInitSalt = 0x494e4954;
constexpr std::uint64_t kEpochSalt = 0x45504f43;

ojson config_to_json(const TrainConfig& c) {
  ojson j;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["grad_accum"] = c.grad_accum;
  j["min_epochs"] = c.min_epochs;
  j["patience"] = c.patience;
  j["max_epochs"] = c.max_epochs;
  j["max_steps"] = c.max_steps;
  j["seed"] = c.seed;
  j["train_frac"] = c.train_frac;
  j["val_frac"] = c.val_frac;
  j["test_frac"] = c.test_frac;
  j["hidden_dim"] = c.hidden_dim;
  j["stop_metric"] = c.stop_metric;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.grad_accum = j.value("grad_accum", c.grad_accum);
  c.min_epochs = j.value("min_epochs", c.min_epochs);
  c.patience = j.value("patience", c.patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.seed = j.value("seed", c.seed);
  c.train_frac = j.value("train_frac", c.train_frac);
  c.val_frac = j.value("val_frac", c.val_frac);
  c.test_frac = j.value("test_frac", c.test_frac);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.stop_metric = j.value("stop_metric", c.stop_metric);
  return c;
}

void validate_config(const TrainConfig& c) {
  if (c.patience < 1) throw UsageError("train: patience must be >= 1");
  if (c.grad_accum < 1) throw UsageError("train: grad_accum must be >= 1");
  if (c.stop_metric != "macro_auroc" && c.stop_metric != "macro_auprc") {
    throw UsageError("train: unknown stop metric '" + c.stop_metric + "'");
  }
}

ojson tensor_to_json(const Tensor& t) {
  ojson j;
  if (t.rank() == 2) {
    j["rows"] = t.rows();
    j["cols"] = t.cols();
  }
  std::vector<double> data(t.data().data(), t.data().data() + t.numel());
  j["data"] = data;
  return j;
}

Tensor tensor_from_json(const nlohmann::json& j) {
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  Vec v = Eigen::Map<const Vec>(data.data(), static_cast<Index>(data.size()));
  if (j.contains("rows")) {
    return Tensor(Shape{2, j.at("rows").get<Index>(), j.at("cols").get<Index>()}, std::move(v));
  }
  return Tensor::vector(std::move(v));
}

std::vector<std::string> block_names(CellVariant v) {
  std::vector<std::string> names{"w_r", "w_z", "w_g", "b_r", "b_z", "b_g"};
  if (uses_hidden_decay(v)) {
    names.push_back("w_gamma_h");
    names.push_back("b_gamma_h");
  }
  if (uses_input_decay(v)) {
    names.push_back("w_gamma_x");
    names.push_back("b_gamma_x");
  }
  names.push_back("w_out");
  names.push_back("b_out");
  return names;
}

}  // namespace

std::string TrainConfig::to_json(int indent) const {
  ojson j = config_to_json(*this);
  return indent >= 0 ? j.dump(indent) : j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  try {
    return config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
}

double bce_loss(const std::vector<int>& y, const Vec& yhat) {
  if (static_cast<Index>(y.size()) != yhat.size()) {
    throw DimensionError("bce_loss: " + std::to_string(y.size()) + " labels for " +
                         std::to_string(yhat.size()) + " predictions");
  }
  if (y.empty()) throw UsageError("bce_loss: empty input");
  double sum = 0.0;
  for (Index k = 0; k < yhat.size(); ++k) {
    const double p = std::clamp(yhat[k], kProbClamp, 1.0 - kProbClamp);
    sum += y[static_cast<std::size_t>(k)] != 0 ? std::log(p) : std::log(1.0 - p);
  }
  return -sum / static_cast<double>(y.size());
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& moments,
               const TrainConfig& config, long step_index) {
  if (step_index < 1) throw UsageError("adam_step: step index starts at 1");
  if (params.size() != grads.size()) throw DimensionError("adam_step: param/grad block mismatch");
  if (moments.m.empty()) {
    for (const Tensor& p : params) {
      moments.m.push_back(Vec::Zero(p.numel()));
      moments.v.push_back(Vec::Zero(p.numel()));
    }
  }
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step_index));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(params[i].shape() == grads[i].shape())) {
      throw DimensionError("adam_step: block " + std::to_string(i) + " shape mismatch");
    }
    const auto g = grads[i].data().array();
    auto& m = moments.m[i];
    auto& v = moments.v[i];
    m = config.beta1 * m.array() + (1.0 - config.beta1) * g;
    v = config.beta2 * v.array() + (1.0 - config.beta2) * g.square();
    params[i].data().array() -=
        config.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.eps);
  }
}

SplitIndices train_split(std::size_t corpus_size, const TrainConfig& cfg) {
  return split_corpus(corpus_size, cfg.train_frac, cfg.val_frac, cfg.test_frac,
                      mix_seed(cfg.seed, kSplitSalt));
}

std::vector<PreparedSequence> prepare_all(const Corpus& corpus, const std::vector<int>& subset,
                                          const Vec& defaults) {
  std::vector<PreparedSequence> out;
  out.reserve(subset.size());
  for (int i : subset) out.push_back(canonicalize(corpus.seqs[static_cast<std::size_t>(i)], defaults));
  return out;
}

EvalReport evaluate_model(CellVariant v, const CellParams& cell, const HeadParams& head,
                          const std::vector<PreparedSequence>& seqs,
                          const std::vector<std::string>& task_names) {
  const Index tasks = head.tasks();
  std::vector<std::vector<double>> scores(static_cast<std::size_t>(tasks));
  std::vector<std::vector<int>> labels(static_cast<std::size_t>(tasks));
  Tape tape;
  for (const PreparedSequence& seq : seqs) {
    tape.clear();
    TapedCell tc = load_cell(tape, v, cell, false);
    TapedHead th = load_head(tape, head, false);
    ValueRef h = run_sequence_taped(tape, tc, seq);
    const Tensor& yhat = tape.value(predict_head_taped(tape, th, h));
    for (Index k = 0; k < tasks; ++k) {
      scores[static_cast<std::size_t>(k)].push_back(yhat[k]);
      labels[static_cast<std::size_t>(k)].push_back(seq.labels[static_cast<std::size_t>(k)]);
    }
  }
  return evaluate_scores(scores, labels, task_names);
}

double stop_metric_value(const EvalReport& report, const std::string& metric) {
  const std::optional<double>& v =
      metric == "macro_auprc" ? report.macro_auprc : report.macro_auroc;
  return v.value_or(std::numeric_limits<double>::quiet_NaN());
}

TrainResult train(CellVariant v, const Corpus& corpus, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  validate_config(cfg);
  const std::size_t n = corpus.seqs.size();
  SplitIndices split = train_split(n, cfg);
  if (split.train.empty() || split.val.empty()) {
    throw UsageError("train: train/validation splits must be non-empty");
  }

  // Fill defaults come from the training split only.
  const Vec defaults = observed_means(corpus, &split.train);
  std::vector<PreparedSequence> train_seqs = prepare_all(corpus, split.train, defaults);
  std::vector<PreparedSequence> val_seqs = prepare_all(corpus, split.val, defaults);

  const Index input_dim = corpus.input_dim();
  const Index tasks = corpus.task_count();
  Rng init_rng(mix_seed(cfg.seed, kInitSalt));
  CellParams cell = init_cell_params(v, input_dim, cfg.hidden_dim, init_rng);
  HeadParams head = init_head_params(cfg.hidden_dim, tasks, init_rng);

  std::vector<Tensor> blocks = pack_cell_params(v, cell);
  for (Tensor& t : pack_head_params(head)) blocks.push_back(std::move(t));
  const std::size_t cell_blocks = cell_block_count(v);

  auto unpack = [&](const std::vector<Tensor>& b) {
    std::span<const Tensor> all(b);
    CellParams c = unpack_cell_params(v, input_dim, cfg.hidden_dim, all.subspan(0, cell_blocks));
    HeadParams h = unpack_head_params(cfg.hidden_dim, tasks, all.subspan(cell_blocks));
    return std::make_pair(std::move(c), std::move(h));
  };

  AdamState moments;
  long step_index = 0;
  long steps_left = cfg.max_steps;

  TrainResult result;
  double best_metric = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<Tensor> best_blocks = blocks;
  bool has_best = false;

  std::vector<Tensor> grad_accum;
  for (const Tensor& b : blocks) grad_accum.push_back(Tensor::zeros(b.shape()));

  Tape tape;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<int> order(train_seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, kEpochSalt), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int group = 0;
    for (Tensor& g : grad_accum) g.data().setZero();

    auto apply_group = [&]() {
      if (group == 0) return;
      for (Tensor& g : grad_accum) g.data() /= static_cast<double>(group);
      adam_step(blocks, grad_accum, moments, cfg, ++step_index);
      for (Tensor& g : grad_accum) g.data().setZero();
      group = 0;
    };

    try {
      for (int idx : order) {
        const PreparedSequence& seq = train_seqs[static_cast<std::size_t>(idx)];
        tape.clear();
        std::vector<ValueRef> leaves;
        leaves.reserve(blocks.size());
        for (const Tensor& b : blocks) leaves.push_back(tape.leaf(b, true));
        TapedCell tc = cell_from_leaves(tape, v, input_dim, cfg.hidden_dim, leaves);
        TapedHead th = head_from_leaves(std::span<const ValueRef>(leaves).subspan(cell_blocks));
        ValueRef h = run_sequence_taped(tape, tc, seq);
        ValueRef yhat = predict_head_taped(tape, th, h);
        Vec labels(tasks);
        for (Index k = 0; k < tasks; ++k) labels[k] = seq.labels[static_cast<std::size_t>(k)];
        ValueRef loss = tape.bce(yhat, labels);
        loss_sum += tape.value(loss)[0];

        if (steps_left != 0) {
          tape.backward(loss, Tensor::scalar(1.0));
          for (std::size_t i = 0; i < leaves.size(); ++i) {
            grad_accum[i].data() += tape.grad(leaves[i]).data();
          }
          if (++group == cfg.grad_accum) {
            apply_group();
            if (steps_left > 0) --steps_left;  // once 0, the rest is forward-only
          }
        }
      }
      if (steps_left != 0) apply_group();
    } catch (const NumericError& e) {
      throw DivergenceError("train: non-finite value at epoch " + std::to_string(epoch) + " (" +
                            e.what() + ")");
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(train_seqs.size());
    if (!std::isfinite(entry.train_loss)) {
      throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch));
    }

    if (hooks.metric_override) {
      entry.val_metric = hooks.metric_override(epoch);
    } else {
      auto [c, hd] = unpack(blocks);
      EvalReport rep = evaluate_model(v, c, hd, val_seqs, corpus.task_names);
      entry.val_metric = stop_metric_value(rep, cfg.stop_metric);
    }
    result.log.push_back(entry);

    if (!has_best || entry.val_metric > best_metric) {
      has_best = true;
      best_metric = entry.val_metric;
      best_epoch = epoch;
      best_blocks = blocks;
    }
    result.stopped_epoch = epoch;

    // Train at least min_epochs + 1 epochs (the first epoch past the minimum
    // is where stopping starts being considered), then stop once `patience`
    // further epochs bring no improvement.
    if (epoch >= cfg.min_epochs + 1 + cfg.patience && epoch - best_epoch >= cfg.patience) {
      break;
    }
  }

  auto [best_cell, best_head] = unpack(best_blocks);
  result.best.variant = v;
  result.best.input_dim = input_dim;
  result.best.hidden_dim = cfg.hidden_dim;
  result.best.tasks = tasks;
  result.best.cell = std::move(best_cell);
  result.best.head = std::move(best_head);
  result.best.defaults = defaults;
  result.best.epoch = best_epoch;
  result.best.val_metric = best_metric;
  result.best.config = cfg;
  result.best.var_names = corpus.var_names;
  result.best.task_names = corpus.task_names;
  return result;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ojson j;
  j["format"] = "grutv-checkpoint";
  j["version"] = 1;
  j["variant"] = to_string(ckpt.variant);
  j["input_dim"] = ckpt.input_dim;
  j["hidden_dim"] = ckpt.hidden_dim;
  j["tasks"] = ckpt.tasks;
  j["epoch"] = ckpt.epoch;
  j["val_metric"] = ckpt.val_metric;
  std::vector<double> defaults(ckpt.defaults.data(), ckpt.defaults.data() + ckpt.defaults.size());
  j["defaults"] = defaults;
  j["var_names"] = ckpt.var_names;
  j["task_names"] = ckpt.task_names;
  j["config"] = config_to_json(ckpt.config);

  std::vector<Tensor> blocks = pack_cell_params(ckpt.variant, ckpt.cell);
  for (Tensor& t : pack_head_params(ckpt.head)) blocks.push_back(std::move(t));
  const std::vector<std::string> names = block_names(ckpt.variant);
  ojson params;
  for (std::size_t i = 0; i < blocks.size(); ++i) params[names[i]] = tensor_to_json(blocks[i]);
  j["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.value("format", "") != "grutv-checkpoint") {
      throw ParseError(path.string() + ": not a checkpoint file");
    }
    Checkpoint ckpt;
    ckpt.variant = parse_variant(j.at("variant").get<std::string>());
    ckpt.input_dim = j.at("input_dim").get<Index>();
    ckpt.hidden_dim = j.at("hidden_dim").get<Index>();
    ckpt.tasks = j.at("tasks").get<Index>();
    ckpt.epoch = j.at("epoch").get<int>();
    ckpt.val_metric = j.at("val_metric").get<double>();
    std::vector<double> defaults = j.at("defaults").get<std::vector<double>>();
    ckpt.defaults = Eigen::Map<const Vec>(defaults.data(), static_cast<Index>(defaults.size()));
    ckpt.var_names = j.value("var_names", std::vector<std::string>{});
    ckpt.task_names = j.value("task_names", std::vector<std::string>{});
    ckpt.config = config_from_json(j.at("config"));

    std::vector<Tensor> blocks;
    for (const std::string& name : block_names(ckpt.variant)) {
      blocks.push_back(tensor_from_json(j.at("params").at(name)));
    }
    std::span<const Tensor> all(blocks);
    const std::size_t nc = cell_block_count(ckpt.variant);
    ckpt.cell = unpack_cell_params(ckpt.variant, ckpt.input_dim, ckpt.hidden_dim, all.subspan(0, nc));
    ckpt.head = unpack_head_params(ckpt.hidden_dim, ckpt.tasks, all.subspan(nc));
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace grutv
