#include "cellflow/nn/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cellflow/error.hpp"

namespace cellflow::nn {

namespace {
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw InvalidInput("tensor value count " + std::to_string(data_.size()) +
                       " does not match shape " + std::to_string(rows) + "x" +
                       std::to_string(cols));
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw InvalidInput("item() on a non-scalar tensor");
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1) throw InvalidInput("softmax axis must be 0 or 1");
  Tensor out(x.rows(), x.cols());
  const std::size_t outer = axis == 1 ? x.rows() : x.cols();
  const std::size_t inner = axis == 1 ? x.cols() : x.rows();
  auto at = [&](const Tensor& t, std::size_t o, std::size_t i) {
    return axis == 1 ? t(o, i) : t(i, o);
  };
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, at(x, o, i));
    double total = 0.0;
    for (std::size_t i = 0; i < inner; ++i) {
      const double e = std::exp(at(x, o, i) - mx);
      (axis == 1 ? out(o, i) : out(i, o)) = e;
      total += e;
    }
    for (std::size_t i = 0; i < inner; ++i) (axis == 1 ? out(o, i) : out(i, o)) /= total;
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw InvalidInput("matmul inner dimensions differ: " + std::to_string(a.cols()) +
                       " vs " + std::to_string(b.rows()));
  }
  Tensor out(a.rows(), b.cols());
  if (out.size() == 0) return out;
  Eigen::Map<const RowMatrix> ma(a.values().data(), a.rows(), a.cols());
  Eigen::Map<const RowMatrix> mb(b.values().data(), b.rows(), b.cols());
  Eigen::Map<RowMatrix> mo(out.values().data(), out.rows(), out.cols());
  mo.noalias() = ma * mb;
  return out;
}

}  // namespace cellflow::nn
