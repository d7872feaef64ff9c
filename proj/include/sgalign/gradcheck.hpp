#pragma once

#include <functional>

#include "sgalign/tensor.hpp"

namespace sgalign {

// Central-difference gradient estimate (f(x+h*e) - f(x-h*e)) / (2h) per
// coordinate. The independent oracle for every analytic backward rule:
// it evaluates f with no active tape and never records operations.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

// |a-b| / max(|a|, |b|, floor); the floor keeps near-zero gradients from
// inflating the ratio with pure rounding noise.
double relative_error(double a, double b, double floor = 1e-6);

// worst relative_error over matching coordinates
double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor = 1e-6);

} // namespace sgalign
