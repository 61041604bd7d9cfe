#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "grutv/errors.hpp"

namespace grutv {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Rank <= 2 is all the cell math needs.
struct Shape {
  int rank = 1;
  Index d0 = 0;
  Index d1 = 0;

  Index numel() const { return rank == 2 ? d0 * d1 : d0; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    if (rank == 1) return "[" + std::to_string(d0) + "]";
    return "[" + std::to_string(d0) + "x" + std::to_string(d1) + "]";
  }
};

// Dense 64-bit tensor, row-major.
class Tensor {
 public:
  Tensor() : shape_{1, 0, 0} {}
  Tensor(Shape shape, Vec data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw DimensionError("tensor: data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  static Tensor vector(Vec v) {
    Shape s{1, v.size(), 0};
    return Tensor(s, std::move(v));
  }

  static Tensor scalar(double x) {
    Vec v(1);
    v[0] = x;
    return Tensor(Shape{1, 1, 0}, std::move(v));
  }

  static Tensor matrix(const Mat& m) {
    Vec flat(m.size());
    Eigen::Map<RowMat>(flat.data(), m.rows(), m.cols()) = m;
    return Tensor(Shape{2, m.rows(), m.cols()}, std::move(flat));
  }

  static Tensor zeros(Shape s) { return Tensor(s, Vec::Zero(s.numel())); }

  const Shape& shape() const { return shape_; }
  Index numel() const { return data_.size(); }
  int rank() const { return shape_.rank; }
  Index rows() const { return shape_.d0; }
  Index cols() const { return shape_.d1; }

  const Vec& data() const { return data_; }
  Vec& data() { return data_; }
  double operator[](Index i) const { return data_[i]; }
  double& operator[](Index i) { return data_[i]; }

  // Rank-2 view of the flat storage.
  Eigen::Map<const RowMat> mat() const {
    return Eigen::Map<const RowMat>(data_.data(), shape_.d0, shape_.rank == 2 ? shape_.d1 : 1);
  }

  Mat to_matrix() const { return mat(); }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_;
  Vec data_;
};

}  // namespace grutv
