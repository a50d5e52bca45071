#pragma once

#include <functional>

#include "incfsl/core_types.hpp"
#include "incfsl/rng.hpp"

namespace incfsl::test {

// Central finite differences of a scalar function of one matrix argument.
inline Mat finite_diff(const std::function<double(const Mat&)>& f, const Mat& x,
                       double step = 1e-5) {
  Mat g(x.rows(), x.cols());
  Mat xp = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double orig = xp(i, j);
      xp(i, j) = orig + step;
      const double fp = f(xp);
      xp(i, j) = orig - step;
      const double fm = f(xp);
      xp(i, j) = orig;
      g(i, j) = (fp - fm) / (2.0 * step);
    }
  return g;
}

// Max elementwise relative error, with small-magnitude entries compared on an
// absolute scale.
inline double max_rel_err(const Mat& analytic, const Mat& numeric) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.rows(); ++i)
    for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
      const double a = analytic(i, j);
      const double n = numeric(i, j);
      const double denom = std::max({1e-6, std::abs(a), std::abs(n)});
      worst = std::max(worst, std::abs(a - n) / denom);
    }
  return worst;
}

inline Mat random_matrix(int rows, int cols, CounterRng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.next_gaussian();
  return m;
}

// Hand-built bundle: `n_base` base classes and `novel_per_split` novel classes
// per split, Gaussian clusters around distinct axis directions in dimension
// `dim`; `per_class` examples per class in every split.
inline DatasetBundle tiny_bundle(int n_base, int novel_per_split, int dim, int per_class,
                                 uint64_t seed = 99, double sigma = 0.05) {
  DatasetBundle b;
  b.dim = dim;
  CounterRng rng(seed, 0, Draw::SampleNoise);
  int next_id = 1;
  auto center_for = [&](int class_index) {
    Vec c = Vec::Zero(dim);
    c(class_index % dim) = (class_index / dim) % 2 == 0 ? 1.0 : -1.0;
    if (dim > 1) c((class_index + 1) % dim) = 0.3 * ((class_index / (2 * dim)) + 1);
    return c;
  };
  auto fill = [&](std::vector<LabeledExample>& split, int label, int class_index, int count) {
    const Vec c = center_for(class_index);
    for (int i = 0; i < count; ++i) {
      Vec x = c;
      for (int k = 0; k < dim; ++k) x(k) += sigma * rng.next_gaussian();
      split.push_back({x, label});
    }
  };
  int class_index = 0;
  for (int c = 0; c < n_base; ++c, ++class_index) {
    b.base_classes.push_back(next_id);
    fill(b.base_train, next_id, class_index, per_class);
    fill(b.base_val, next_id, class_index, per_class);
    fill(b.base_test, next_id, class_index, per_class);
    ++next_id;
  }
  auto add_novel = [&](std::vector<LabeledExample>& split) {
    for (int c = 0; c < novel_per_split; ++c, ++class_index) {
      b.novel_classes.push_back(next_id);
      fill(split, next_id, class_index, per_class);
      ++next_id;
    }
  };
  add_novel(b.novel_train);
  add_novel(b.novel_val);
  add_novel(b.novel_test);
  return b;
}

}  // namespace incfsl::test
