#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "progrow/rng.hpp"
#include "progrow/tensor.hpp"

namespace progrow::nn {

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <class T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

// Gathers named parameters and non-trainable buffers (normalization running
// statistics) from a module tree.
template <class T>
struct Collector {
  std::vector<ParamRef<T>> params;
  std::vector<BufferRef<T>> buffers;

  void param(const std::string& name, Tensor<T>& value, Tensor<T>& grad) { params.push_back({name, &value, &grad}); }
  void buffer(const std::string& name, Tensor<T>& value) { buffers.push_back({name, &value}); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value->size();
    return n;
  }
};

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
MatMap<T> as_mat(T* p, std::size_t rows, std::size_t cols) {
  return MatMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
CMatMap<T> as_mat(const T* p, std::size_t rows, std::size_t cols) {
  return CMatMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.vec()) v = static_cast<T>(d(rng));
}

template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, double bound) {
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& v : t.vec()) v = static_cast<T>(d(rng));
}

template <class T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* who) {
  if (x.rank() != rank)
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " + shape_str(x.shape()));
}

}  // namespace progrow::nn
