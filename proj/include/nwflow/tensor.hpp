#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nwflow {

using Index = Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Index>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

std::string to_string(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
///
/// Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix. The graph primitives
/// only need ranks up to 2, but the shape itself is unconstrained.
class Tensor {
 public:
  Tensor() : shape_{}, data_(Eigen::VectorXd::Zero(1)) {}
  Tensor(Shape shape, Eigen::VectorXd data);

  static Tensor scalar(double value);
  static Tensor vector(const Eigen::Ref<const Eigen::VectorXd>& values);
  static Tensor matrix(const Eigen::Ref<const RowMatrix>& values);
  static Tensor filled(Shape shape, double value);
  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }

  /// Rows and columns of the matrix view: scalars are 1x1, vectors 1xn.
  Index rows() const;
  Index cols() const;

  const Eigen::VectorXd& data() const { return data_; }
  Eigen::VectorXd& data() { return data_; }

  double operator[](Index i) const { return data_[i]; }
  double& operator[](Index i) { return data_[i]; }
  double item() const;

  Eigen::Map<const RowMatrix> mat() const { return {data_.data(), rows(), cols()}; }
  Eigen::Map<RowMatrix> mat() { return {data_.data(), rows(), cols()}; }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Eigen::VectorXd data_;
};

}  // namespace nwflow
