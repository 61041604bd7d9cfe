#include "grutv/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "grutv/errors.hpp"

namespace grutv {

GradReport grad_check(const TapedFn& f, std::span<const Tensor> point, double epsilon,
                      double tolerance) {
  if (epsilon <= 0.0) throw UsageError("grad_check: epsilon must be positive");

  Tape tape;
  std::vector<ValueRef> leaves;
  leaves.reserve(point.size());
  for (const Tensor& t : point) leaves.push_back(tape.leaf(t, true));

  ValueRef out = f(tape, leaves);
  if (tape.value(out).numel() != 1) {
    throw UsageError("grad_check: function must be scalar-valued, got shape " +
                     tape.value(out).shape().str());
  }

  tape.backward(out, Tensor::scalar(1.0));
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (ValueRef l : leaves) analytic.push_back(tape.grad(l));

  GradReport report;
  report.tolerance = tolerance;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    LeafReport lr;
    lr.leaf_id = leaves[li].id;
    Tensor& x = tape.leaf_value(leaves[li]);
    for (Index c = 0; c < x.numel(); ++c) {
      const double saved = x[c];
      x[c] = saved + epsilon;
      tape.replay();
      const double f_plus = tape.value(out)[0];
      x[c] = saved - epsilon;
      tape.replay();
      const double f_minus = tape.value(out)[0];
      x[c] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      const double a = analytic[li][c];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({1.0, std::abs(a), std::abs(numeric)});
      lr.max_abs_err = std::max(lr.max_abs_err, abs_err);
      lr.max_rel_err = std::max(lr.max_rel_err, rel_err);
    }
    report.max_abs_err = std::max(report.max_abs_err, lr.max_abs_err);
    report.max_rel_err = std::max(report.max_rel_err, lr.max_rel_err);
    report.leaves.push_back(lr);
  }
  tape.replay();  // restore unperturbed forward values

  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace grutv
