#pragma once

#include <functional>
#include <span>
#include <vector>

#include "grutv/tape.hpp"

namespace grutv {

struct LeafReport {
  std::int32_t leaf_id = -1;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
};

struct GradReport {
  std::vector<LeafReport> leaves;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Builds a scalar output on the tape from leaves created out of `point`.
using TapedFn = std::function<ValueRef(Tape&, std::span<const ValueRef>)>;

// Central differences (f(x+eps) - f(x-eps)) / 2eps against backward(), one
// coordinate at a time, reusing the tape via replay. Relative error uses a
// unit floor in the denominator so near-zero gradients are compared
// absolutely: |a-n| / max(1, |a|, |n|).
GradReport grad_check(const TapedFn& f, std::span<const Tensor> point, double epsilon,
                      double tolerance);

}  // namespace grutv
