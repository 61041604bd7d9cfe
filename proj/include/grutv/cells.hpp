#pragma once

#include <optional>
#include <string>
#include <utility>

#include "grutv/datapipe.hpp"
#include "grutv/rng.hpp"
#include "grutv/tape.hpp"

namespace grutv {

// The cell zoo. gru_t adds the elapsed-time Euler update, gru_tv additionally
// feeds the carried hidden-state rate into the gates. The gh/gx suffixes mark
// which decay terms of gru_decay are grafted onto gru_t.
enum class CellVariant {
  gru,
  gru_decay,
  gru_t,
  gru_tv,
  gru_t_gh,
  gru_t_gx,
  gru_t_ghx,
};

constexpr CellVariant kAllVariants[] = {
    CellVariant::gru,      CellVariant::gru_decay, CellVariant::gru_t,    CellVariant::gru_tv,
    CellVariant::gru_t_gh, CellVariant::gru_t_gx,  CellVariant::gru_t_ghx};

std::string to_string(CellVariant v);
CellVariant parse_variant(const std::string& name);

// Which pieces of machinery each variant wires in.
bool uses_elapsed_time(CellVariant v);   // h <- h + dt * dh instead of the convex update
bool uses_velocity(CellVariant v);       // previous dh appended to every gate input
bool uses_hidden_decay(CellVariant v);   // gamma_h on the inherited hidden state
bool uses_input_decay(CellVariant v);    // gamma_x blending instead of plain forward fill
Index gate_input_width(CellVariant v, Index input_dim, Index hidden_dim);

struct CellParams {
  Index input_dim = 0;   // D_r
  Index hidden_dim = 0;  // D_h
  Mat w_r, w_z, w_g;     // (gate input width) x hidden_dim
  Vec b_r, b_z, b_g;
  Mat w_gamma_h;  // input_dim x hidden_dim; empty when the variant has no hidden decay
  Vec b_gamma_h;
  Mat w_gamma_x;  // input_dim x input_dim; empty when the variant has no input decay
  Vec b_gamma_x;

  bool has_hidden_decay() const { return w_gamma_h.size() > 0; }
  bool has_input_decay() const { return w_gamma_x.size() > 0; }
};

struct HeadParams {
  Mat w_out;  // hidden_dim x tasks
  Vec b_out;
  Index tasks() const { return b_out.size(); }
};

// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases.
CellParams init_cell_params(CellVariant v, Index input_dim, Index hidden_dim, Rng& rng);
HeadParams init_head_params(Index hidden_dim, Index tasks, Rng& rng);

void validate_cell_params(CellVariant v, const CellParams& p);

struct CellState {
  Vec h;       // hidden state
  Vec dh;      // carried hidden-state rate
  Vec x_last;  // most recent observed value per variable
  double t_prev = 0.0;
};

CellState initial_state(const CellParams& p, const Vec& defaults);

struct StepTrace {
  Vec r, z, g;
  Vec dh_new;  // (1 - z) . (g - h_prev)
};

// ---- taped building blocks (shared by the eager API and training) ----

struct TapedCell {
  CellVariant variant = CellVariant::gru;
  Index input_dim = 0;
  Index hidden_dim = 0;
  ValueRef w_r, w_z, w_g, b_r, b_z, b_g;
  ValueRef w_gamma_h, b_gamma_h, w_gamma_x, b_gamma_x;
  ValueRef ones_input, ones_hidden;  // shared constants
};

TapedCell load_cell(Tape& tape, CellVariant v, const CellParams& p, bool trainable);

struct TapedHead {
  ValueRef w, b;
};
TapedHead load_head(Tape& tape, const HeadParams& hp, bool trainable);

// Canonical parameter block order: w_r, w_z, w_g, b_r, b_z, b_g, decay blocks
// when present, then w_out, b_out for the head. pack/unpack and the
// *_from_leaves builders all agree on this order, which is what keeps the
// optimizer, the gradient checker and checkpointing consistent.
std::vector<Tensor> pack_cell_params(CellVariant v, const CellParams& p);
std::vector<Tensor> pack_head_params(const HeadParams& hp);
CellParams unpack_cell_params(CellVariant v, Index input_dim, Index hidden_dim,
                              std::span<const Tensor> blocks);
HeadParams unpack_head_params(Index hidden_dim, Index tasks, std::span<const Tensor> blocks);
std::size_t cell_block_count(CellVariant v);

TapedCell cell_from_leaves(Tape& tape, CellVariant v, Index input_dim, Index hidden_dim,
                           std::span<const ValueRef> leaves);
TapedHead head_from_leaves(std::span<const ValueRef> leaves);

struct TapedState {
  ValueRef h, dh;
  Vec x_last;
  double t_prev = 0.0;
};

TapedState initial_taped_state(Tape& tape, const TapedCell& cell, const Vec& defaults);

struct TapedStepTrace {
  ValueRef r, z, g, dh_new;
};

// One record through the cell. x and m enter the tape as constants; delta and
// defaults are only consulted by the decay variants.
TapedState cell_step(Tape& tape, const TapedCell& cell, const TapedState& state, const Vec& x,
                     const Vec& m, double dt, const Vec& delta, const Vec& defaults,
                     TapedStepTrace* trace = nullptr);

ValueRef run_sequence_taped(Tape& tape, const TapedCell& cell, const PreparedSequence& seq);

ValueRef predict_head_taped(Tape& tape, const TapedHead& head, ValueRef h);

// ---- eager API ----

std::pair<Vec, StepTrace> gru_masked_step(const CellParams& p, const CellState& s, const Vec& x,
                                          const Vec& m);
std::pair<Vec, StepTrace> gru_t_step(const CellParams& p, const CellState& s, const Vec& x,
                                     const Vec& m, double dt);
std::pair<Vec, StepTrace> gru_tv_step(const CellParams& p, const CellState& s, const Vec& x,
                                      const Vec& m, double dt);

Vec decay_hidden(const CellParams& p, const Vec& delta, const Vec& h);
Vec decay_impute_input(const CellParams& p, const Vec& delta, const Vec& x_raw, const Vec& m,
                       const Vec& x_last, const Vec& x_default);

struct RunOptions {
  // When > 0, an elapsed time larger than this is integrated in equal Euler
  // sub-steps of at most this size. Off by default.
  double max_substep = 0.0;
};

Vec run_sequence(CellVariant v, const CellParams& p, const PreparedSequence& seq,
                 const RunOptions& opts = {});

Vec predict_head(const HeadParams& hp, const Vec& h);

}  // namespace grutv
