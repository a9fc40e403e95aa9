#include "nwflow/tensor.hpp"

#include <functional>
#include <numeric>

namespace nwflow {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  const Index expected = std::accumulate(shape_.begin(), shape_.end(), Index{1}, std::multiplies<>());
  for (Index extent : shape_) {
    if (extent < 0) throw ShapeError("negative extent in shape " + to_string(shape_));
  }
  if (expected != data_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(expected) +
                     " entries, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, Eigen::VectorXd::Constant(1, value)); }

Tensor Tensor::vector(const Eigen::Ref<const Eigen::VectorXd>& values) {
  return Tensor({values.size()}, values);
}

Tensor Tensor::matrix(const Eigen::Ref<const RowMatrix>& values) {
  Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
  if (values.outerStride() != values.cols()) {
    flat.resize(values.size());
    Eigen::Map<RowMatrix>(flat.data(), values.rows(), values.cols()) = values;
  }
  return Tensor({values.rows(), values.cols()}, std::move(flat));
}

Tensor Tensor::filled(Shape shape, double value) {
  const Index n = std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  return Tensor(std::move(shape), Eigen::VectorXd::Constant(n, value));
}

Index Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  return std::accumulate(shape_.begin(), shape_.end() - 1, Index{1}, std::multiplies<>());
}

Index Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

}  // namespace nwflow
