#pragma once

// Central finite differences, used as the independent oracle for every
// backward rule. Lives in test code only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sedkd/ndgrad.hpp"

namespace sedkd::testing {

// ||fd - analytic|| / max(||fd||, ||analytic||) over all parameters.
inline double gradcheck(const std::function<nd::Var()>& loss_fn, std::vector<nd::Var> params,
                        double h = 1e-5) {
  nd::Var loss = loss_fn();
  for (auto& p : params) p.grad_buffer().fill(0.0);
  nd::backward(loss);
  double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
  for (auto& p : params) {
    nd::Buffer analytic = p.grad().vec();
    if (analytic.empty()) analytic.assign(p.size(), 0.0);
    auto& values = p.mutable_value().vec();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().value().item();
      values[i] = saved - h;
      const double down = loss_fn().value().item();
      values[i] = saved;
      const double fd = (up - down) / (2 * h);
      diff2 += (fd - analytic[i]) * (fd - analytic[i]);
      fd2 += fd * fd;
      an2 += analytic[i] * analytic[i];
    }
  }
  const double denom = std::max({std::sqrt(fd2), std::sqrt(an2), 1e-12});
  return std::sqrt(diff2) / denom;
}

inline nd::Array random_array(nd::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  nd::Array a(std::move(shape));
  for (auto& v : a.data()) v = u(rng);
  return a;
}

inline nd::Var random_param(nd::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  return nd::parameter(random_array(std::move(shape), rng, lo, hi));
}

}  // namespace sedkd::testing
