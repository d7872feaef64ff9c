#include "sgalign/gradcheck.hpp"

#include <cmath>

namespace sgalign {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (h <= 0.0) throw NumericError("finite_diff_grad: step must be positive");
    NoTapeScope no_tape;
    Tensor grad = Tensor::zeros(x.shape());
    // perturb in place; x's storage is shared with the caller's handle
    double* px = const_cast<double*>(x.data());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double saved = px[i];
        px[i] = saved + h;
        const double fp = f(x);
        px[i] = saved - h;
        const double fm = f(x);
        px[i] = saved;
        grad.data()[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double relative_error(double a, double b, double floor) {
    const double denom = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / denom;
}

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor) {
    if (analytic.size() != numeric.size()) {
        throw ShapeError("max_relative_error: length mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
    }
    return worst;
}

} // namespace sgalign
