// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bpc {

/// Raised for malformed graphs, shape mismatches and contract violations.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An earlier stage's output is absent.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

/// A subject would be evaluated with a model that was trained on it.
class LeakageError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major real array of rank <= 3 with an optional gradient slot.
///
/// Activations flowing through a ModelGraph are always (batch, channels, length).
/// `qscale` is non-zero when the values lie on a fake-quantized activation grid
/// with that step; scale-preserving layers carry it forward.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  // (n, c, l) accessor for rank-3 activations.
  double& at(int n, int c, int l) {
    return data_[(static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + l];
  }
  const double& at(int n, int c, int l) const {
    return data_[(static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + l];
  }

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad();
  void zero_grad();
  void drop_grad() { grad_.clear(); }
  std::span<double> grad();
  std::span<const double> grad() const;

  double qscale() const { return qscale_; }
  void set_qscale(double s) { qscale_ = s; }

  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  double qscale_ = 0.0;
};

}  // namespace bpc
