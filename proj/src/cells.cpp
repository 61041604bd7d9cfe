#include "grutv/cells.hpp"

#include <cmath>

#include "grutv/errors.hpp"

namespace grutv {

std::string to_string(CellVariant v) {
  switch (v) {
    case CellVariant::gru: return "gru";
    case CellVariant::gru_decay: return "gru-decay";
    case CellVariant::gru_t: return "gru-t";
    case CellVariant::gru_tv: return "gru-tv";
    case CellVariant::gru_t_gh: return "gru-t-gh";
    case CellVariant::gru_t_gx: return "gru-t-gx";
    case CellVariant::gru_t_ghx: return "gru-t-ghx";
  }
  return "?";
}

CellVariant parse_variant(const std::string& name) {
  for (CellVariant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw UsageError("unknown cell variant: " + name);
}

bool uses_elapsed_time(CellVariant v) {
  return v == CellVariant::gru_t || v == CellVariant::gru_tv || v == CellVariant::gru_t_gh ||
         v == CellVariant::gru_t_gx || v == CellVariant::gru_t_ghx;
}

bool uses_velocity(CellVariant v) { return v == CellVariant::gru_tv; }

bool uses_hidden_decay(CellVariant v) {
  return v == CellVariant::gru_decay || v == CellVariant::gru_t_gh || v == CellVariant::gru_t_ghx;
}

bool uses_input_decay(CellVariant v) {
  return v == CellVariant::gru_decay || v == CellVariant::gru_t_gx || v == CellVariant::gru_t_ghx;
}

Index gate_input_width(CellVariant v, Index input_dim, Index hidden_dim) {
  return 2 * input_dim + (uses_velocity(v) ? 2 : 1) * hidden_dim;
}

namespace {

Mat uniform_matrix(Index rows, Index cols, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(rows));
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

CellParams init_cell_params(CellVariant v, Index input_dim, Index hidden_dim, Rng& rng) {
  CellParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  const Index width = gate_input_width(v, input_dim, hidden_dim);
  p.w_r = uniform_matrix(width, hidden_dim, rng);
  p.w_z = uniform_matrix(width, hidden_dim, rng);
  p.w_g = uniform_matrix(width, hidden_dim, rng);
  p.b_r = Vec::Zero(hidden_dim);
  // Positive update-gate bias (the usual forget-gate trick). It also keeps
  // dt*(1-z) inside the stable region of the Euler update for multi-hour gaps.
  p.b_z = Vec::Constant(hidden_dim, 1.0);
  p.b_g = Vec::Zero(hidden_dim);
  if (uses_hidden_decay(v)) {
    p.w_gamma_h = uniform_matrix(input_dim, hidden_dim, rng);
    p.b_gamma_h = Vec::Zero(hidden_dim);
  }
  if (uses_input_decay(v)) {
    p.w_gamma_x = uniform_matrix(input_dim, input_dim, rng);
    p.b_gamma_x = Vec::Zero(input_dim);
  }
  return p;
}

HeadParams init_head_params(Index hidden_dim, Index tasks, Rng& rng) {
  HeadParams hp;
  hp.w_out = uniform_matrix(hidden_dim, tasks, rng);
  hp.b_out = Vec::Zero(tasks);
  return hp;
}

void validate_cell_params(CellVariant v, const CellParams& p) {
  const Index width = gate_input_width(v, p.input_dim, p.hidden_dim);
  auto check_gate = [&](const Mat& w, const Vec& b, const char* name) {
    if (w.rows() != width || w.cols() != p.hidden_dim) {
      throw DimensionError(to_string(v) + ": " + name + " is " + std::to_string(w.rows()) + "x" +
                           std::to_string(w.cols()) + ", expected " + std::to_string(width) + "x" +
                           std::to_string(p.hidden_dim));
    }
    if (b.size() != p.hidden_dim) {
      throw DimensionError(to_string(v) + ": " + name + " bias length " +
                           std::to_string(b.size()) + ", expected " +
                           std::to_string(p.hidden_dim));
    }
  };
  check_gate(p.w_r, p.b_r, "w_r");
  check_gate(p.w_z, p.b_z, "w_z");
  check_gate(p.w_g, p.b_g, "w_g");
  if (uses_hidden_decay(v) && !p.has_hidden_decay()) {
    throw ConfigError(to_string(v) + ": hidden-decay parameters missing");
  }
  if (uses_input_decay(v) && !p.has_input_decay()) {
    throw ConfigError(to_string(v) + ": input-decay parameters missing");
  }
}

CellState initial_state(const CellParams& p, const Vec& defaults) {
  CellState s;
  s.h = Vec::Zero(p.hidden_dim);
  s.dh = Vec::Zero(p.hidden_dim);
  s.x_last = defaults;
  s.t_prev = 0.0;
  return s;
}

std::vector<Tensor> pack_cell_params(CellVariant v, const CellParams& p) {
  std::vector<Tensor> out;
  out.push_back(Tensor::matrix(p.w_r));
  out.push_back(Tensor::matrix(p.w_z));
  out.push_back(Tensor::matrix(p.w_g));
  out.push_back(Tensor::vector(p.b_r));
  out.push_back(Tensor::vector(p.b_z));
  out.push_back(Tensor::vector(p.b_g));
  if (uses_hidden_decay(v)) {
    out.push_back(Tensor::matrix(p.w_gamma_h));
    out.push_back(Tensor::vector(p.b_gamma_h));
  }
  if (uses_input_decay(v)) {
    out.push_back(Tensor::matrix(p.w_gamma_x));
    out.push_back(Tensor::vector(p.b_gamma_x));
  }
  return out;
}

std::vector<Tensor> pack_head_params(const HeadParams& hp) {
  return {Tensor::matrix(hp.w_out), Tensor::vector(hp.b_out)};
}

std::size_t cell_block_count(CellVariant v) {
  return 6 + (uses_hidden_decay(v) ? 2 : 0) + (uses_input_decay(v) ? 2 : 0);
}

CellParams unpack_cell_params(CellVariant v, Index input_dim, Index hidden_dim,
                              std::span<const Tensor> blocks) {
  if (blocks.size() != cell_block_count(v)) {
    throw DimensionError(to_string(v) + ": expected " + std::to_string(cell_block_count(v)) +
                         " parameter blocks, got " + std::to_string(blocks.size()));
  }
  CellParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  std::size_t i = 0;
  p.w_r = blocks[i++].to_matrix();
  p.w_z = blocks[i++].to_matrix();
  p.w_g = blocks[i++].to_matrix();
  p.b_r = blocks[i++].data();
  p.b_z = blocks[i++].data();
  p.b_g = blocks[i++].data();
  if (uses_hidden_decay(v)) {
    p.w_gamma_h = blocks[i++].to_matrix();
    p.b_gamma_h = blocks[i++].data();
  }
  if (uses_input_decay(v)) {
    p.w_gamma_x = blocks[i++].to_matrix();
    p.b_gamma_x = blocks[i++].data();
  }
  validate_cell_params(v, p);
  return p;
}

HeadParams unpack_head_params(Index hidden_dim, Index tasks, std::span<const Tensor> blocks) {
  if (blocks.size() != 2) throw DimensionError("head: expected 2 parameter blocks");
  HeadParams hp;
  hp.w_out = blocks[0].to_matrix();
  hp.b_out = blocks[1].data();
  if (hp.w_out.rows() != hidden_dim || hp.w_out.cols() != tasks || hp.b_out.size() != tasks) {
    throw DimensionError("head: parameter blocks do not match hidden/tasks dimensions");
  }
  return hp;
}

TapedCell cell_from_leaves(Tape& tape, CellVariant v, Index input_dim, Index hidden_dim,
                           std::span<const ValueRef> leaves) {
  if (leaves.size() < cell_block_count(v)) {
    throw UsageError(to_string(v) + ": not enough parameter leaves");
  }
  TapedCell c;
  c.variant = v;
  c.input_dim = input_dim;
  c.hidden_dim = hidden_dim;
  std::size_t i = 0;
  c.w_r = leaves[i++];
  c.w_z = leaves[i++];
  c.w_g = leaves[i++];
  c.b_r = leaves[i++];
  c.b_z = leaves[i++];
  c.b_g = leaves[i++];
  if (uses_hidden_decay(v)) {
    c.w_gamma_h = leaves[i++];
    c.b_gamma_h = leaves[i++];
  }
  if (uses_input_decay(v)) {
    c.w_gamma_x = leaves[i++];
    c.b_gamma_x = leaves[i++];
  }
  c.ones_input = tape.constant(Vec::Ones(input_dim));
  c.ones_hidden = tape.constant(Vec::Ones(hidden_dim));
  return c;
}

TapedHead head_from_leaves(std::span<const ValueRef> leaves) {
  if (leaves.size() < 2) throw UsageError("head: not enough parameter leaves");
  return TapedHead{leaves[0], leaves[1]};
}

TapedCell load_cell(Tape& tape, CellVariant v, const CellParams& p, bool trainable) {
  validate_cell_params(v, p);
  std::vector<ValueRef> leaves;
  for (Tensor& t : pack_cell_params(v, p)) leaves.push_back(tape.leaf(std::move(t), trainable));
  return cell_from_leaves(tape, v, p.input_dim, p.hidden_dim, leaves);
}

TapedHead load_head(Tape& tape, const HeadParams& hp, bool trainable) {
  std::vector<ValueRef> leaves;
  for (Tensor& t : pack_head_params(hp)) leaves.push_back(tape.leaf(std::move(t), trainable));
  return head_from_leaves(leaves);
}

TapedState initial_taped_state(Tape& tape, const TapedCell& cell, const Vec& defaults) {
  TapedState s;
  s.h = tape.constant(Vec::Zero(cell.hidden_dim));
  s.dh = tape.constant(Vec::Zero(cell.hidden_dim));
  s.x_last = defaults;
  s.t_prev = 0.0;
  return s;
}

namespace {

// gamma = exp(-max(0, W^T delta + b))
ValueRef decay_coeff(Tape& tape, ValueRef w, ValueRef b, const Vec& delta) {
  ValueRef d = tape.constant(delta);
  return tape.exp_neg_relu(tape.affine(w, d, b));
}

ValueRef one_minus(Tape& tape, ValueRef ones, ValueRef x) {
  return tape.add(ones, tape.scale(-1.0, x));
}

TapedState step_impl(Tape& tape, const TapedCell& cell, const TapedState& state, const Vec& x,
                     const Vec& m, double dt, const Vec& delta, const Vec& defaults,
                     TapedStepTrace* trace, bool apply_hidden_decay) {
  if (x.size() != cell.input_dim || m.size() != cell.input_dim) {
    throw DimensionError(to_string(cell.variant) + " step: record width " +
                         std::to_string(x.size()) + ", expected " +
                         std::to_string(cell.input_dim));
  }
  if (dt < 0.0) {
    throw OrderingError(to_string(cell.variant) +
                        " step: negative elapsed time (timestamps must be non-decreasing)");
  }

  ValueRef h_prev = state.h;
  if (apply_hidden_decay && uses_hidden_decay(cell.variant)) {
    ValueRef gamma_h = decay_coeff(tape, cell.w_gamma_h, cell.b_gamma_h, delta);
    h_prev = tape.hadamard(h_prev, gamma_h);
  }

  ValueRef mc = tape.constant(m);
  ValueRef x_in;
  if (uses_input_decay(cell.variant)) {
    // x^ = m.x + (1-m).(gamma.x_last + (1-gamma).x~)
    ValueRef gamma_x = decay_coeff(tape, cell.w_gamma_x, cell.b_gamma_x, delta);
    ValueRef blend = tape.add(
        tape.hadamard(gamma_x, tape.constant(state.x_last)),
        tape.hadamard(one_minus(tape, cell.ones_input, gamma_x), tape.constant(defaults)));
    x_in = tape.add(tape.hadamard(mc, tape.constant(x)),
                    tape.hadamard(one_minus(tape, cell.ones_input, mc), blend));
  } else {
    x_in = tape.constant(x);
  }

  const bool velocity = uses_velocity(cell.variant);
  ValueRef gate_in =
      velocity ? tape.concat({x_in, h_prev, mc, state.dh}) : tape.concat({x_in, h_prev, mc});
  ValueRef r = tape.sigmoid(tape.affine(cell.w_r, gate_in, cell.b_r));
  ValueRef z = tape.sigmoid(tape.affine(cell.w_z, gate_in, cell.b_z));
  ValueRef rh = tape.hadamard(r, h_prev);
  ValueRef gate_in_g =
      velocity ? tape.concat({x_in, rh, mc, state.dh}) : tape.concat({x_in, rh, mc});
  ValueRef g = tape.tanh(tape.affine(cell.w_g, gate_in_g, cell.b_g));

  ValueRef one_minus_z = one_minus(tape, cell.ones_hidden, z);
  ValueRef dh_new = tape.hadamard(one_minus_z, tape.add(g, tape.scale(-1.0, h_prev)));

  ValueRef h_new;
  if (uses_elapsed_time(cell.variant)) {
    h_new = tape.add(h_prev, tape.scale(dt, dh_new));
  } else {
    h_new = tape.add(tape.hadamard(z, h_prev), tape.hadamard(one_minus_z, g));
  }

  if (trace != nullptr) {
    trace->r = r;
    trace->z = z;
    trace->g = g;
    trace->dh_new = dh_new;
  }

  TapedState next;
  next.h = h_new;
  next.dh = dh_new;
  next.x_last = state.x_last;
  for (Index d = 0; d < cell.input_dim; ++d) {
    if (m[d] != 0.0) next.x_last[d] = x[d];
  }
  next.t_prev = state.t_prev + dt;
  return next;
}

ValueRef run_taped(Tape& tape, const TapedCell& cell, const PreparedSequence& seq,
                   const RunOptions& opts) {
  if (seq.length() == 0) throw UsageError("run_sequence: empty sequence");
  TapedState state = initial_taped_state(tape, cell, seq.defaults);
  for (Index i = 0; i < seq.length(); ++i) {
    const Vec x = seq.values.row(i);
    const Vec m = seq.mask.row(i);
    const Vec delta = seq.delta.row(i);
    const double dt = seq.dt[i];
    int substeps = 1;
    if (opts.max_substep > 0.0 && uses_elapsed_time(cell.variant) && dt > opts.max_substep) {
      substeps = static_cast<int>(std::ceil(dt / opts.max_substep));
    }
    for (int s = 0; s < substeps; ++s) {
      // Hidden decay models staleness of the inherited state; it applies once
      // per record, not once per sub-step.
      state =
          step_impl(tape, cell, state, x, m, dt / substeps, delta, seq.defaults, nullptr, s == 0);
    }
  }
  return state.h;
}

}  // namespace

TapedState cell_step(Tape& tape, const TapedCell& cell, const TapedState& state, const Vec& x,
                     const Vec& m, double dt, const Vec& delta, const Vec& defaults,
                     TapedStepTrace* trace) {
  return step_impl(tape, cell, state, x, m, dt, delta, defaults, trace, true);
}

ValueRef run_sequence_taped(Tape& tape, const TapedCell& cell, const PreparedSequence& seq) {
  return run_taped(tape, cell, seq, RunOptions{});
}

ValueRef predict_head_taped(Tape& tape, const TapedHead& head, ValueRef h) {
  return tape.sigmoid(tape.affine(head.w, h, head.b));
}

// ---- eager wrappers: one tape per call, parameters loaded as constants ----

namespace {

std::pair<Vec, StepTrace> eager_step(CellVariant v, const CellParams& p, const CellState& s,
                                     const Vec& x, const Vec& m, double dt) {
  Tape tape;
  TapedCell cell = load_cell(tape, v, p, false);
  TapedState st;
  st.h = tape.constant(s.h);
  st.dh = tape.constant(s.dh.size() > 0 ? s.dh : Vec::Zero(p.hidden_dim));
  st.x_last = s.x_last.size() > 0 ? s.x_last : Vec::Zero(p.input_dim);
  // The pure step operations do not touch the decay machinery.
  const Vec delta = Vec::Zero(p.input_dim);
  TapedStepTrace tr;
  TapedState out = cell_step(tape, cell, st, x, m, dt, delta, st.x_last, &tr);
  StepTrace trace;
  trace.r = tape.value(tr.r).data();
  trace.z = tape.value(tr.z).data();
  trace.g = tape.value(tr.g).data();
  trace.dh_new = tape.value(tr.dh_new).data();
  return {tape.value(out.h).data(), std::move(trace)};
}

}  // namespace

std::pair<Vec, StepTrace> gru_masked_step(const CellParams& p, const CellState& s, const Vec& x,
                                          const Vec& m) {
  return eager_step(CellVariant::gru, p, s, x, m, 0.0);
}

std::pair<Vec, StepTrace> gru_t_step(const CellParams& p, const CellState& s, const Vec& x,
                                     const Vec& m, double dt) {
  return eager_step(CellVariant::gru_t, p, s, x, m, dt);
}

std::pair<Vec, StepTrace> gru_tv_step(const CellParams& p, const CellState& s, const Vec& x,
                                      const Vec& m, double dt) {
  return eager_step(CellVariant::gru_tv, p, s, x, m, dt);
}

Vec decay_hidden(const CellParams& p, const Vec& delta, const Vec& h) {
  if (!p.has_hidden_decay()) throw ConfigError("decay_hidden: variant lacks decay parameters");
  for (Index i = 0; i < delta.size(); ++i) {
    if (delta[i] < 0.0) throw OrderingError("decay_hidden: negative staleness");
  }
  Tape tape;
  ValueRef w = tape.constant(Tensor::matrix(p.w_gamma_h));
  ValueRef b = tape.constant(p.b_gamma_h);
  ValueRef gamma = decay_coeff(tape, w, b, delta);
  ValueRef out = tape.hadamard(tape.constant(h), gamma);
  return tape.value(out).data();
}

Vec decay_impute_input(const CellParams& p, const Vec& delta, const Vec& x_raw, const Vec& m,
                       const Vec& x_last, const Vec& x_default) {
  if (!p.has_input_decay()) {
    throw ConfigError("decay_impute_input: variant lacks decay parameters");
  }
  Tape tape;
  ValueRef w = tape.constant(Tensor::matrix(p.w_gamma_x));
  ValueRef b = tape.constant(p.b_gamma_x);
  ValueRef gamma = decay_coeff(tape, w, b, delta);
  ValueRef ones = tape.constant(Vec::Ones(p.input_dim));
  ValueRef mc = tape.constant(m);
  // Observed values pass through untouched; filled ones decay toward the default.
  ValueRef blend = tape.add(tape.hadamard(gamma, tape.constant(x_last)),
                            tape.hadamard(one_minus(tape, ones, gamma), tape.constant(x_default)));
  ValueRef out = tape.add(tape.hadamard(mc, tape.constant(x_raw)),
                          tape.hadamard(one_minus(tape, ones, mc), blend));
  return tape.value(out).data();
}

Vec run_sequence(CellVariant v, const CellParams& p, const PreparedSequence& seq,
                 const RunOptions& opts) {
  Tape tape;
  TapedCell cell = load_cell(tape, v, p, false);
  ValueRef h = run_taped(tape, cell, seq, opts);
  return tape.value(h).data();
}

Vec predict_head(const HeadParams& hp, const Vec& h) {
  Tape tape;
  TapedHead head = load_head(tape, hp, false);
  ValueRef out = predict_head_taped(tape, head, tape.constant(h));
  return tape.value(out).data();
}

}  // namespace grutv
