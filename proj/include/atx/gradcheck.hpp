#pragma once

// Central finite-difference oracle for analytic gradients. Run in double
// precision; the probe forwards are taken under NoGradGuard.

#include "atx/tensor.hpp"

namespace atx {

// f: callable taking a Tensor<double> and returning a scalar Tensor<double>,
// rebuilding a fresh graph on every call. Returns
// max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
template <typename F>
double finite_difference_check(F&& f, const Tensor<double>& x0, double eps = 1e-5) {
    Tensor<double> x = Tensor<double>::from(x0.shape(), x0.data());
    x.set_requires_grad(true);
    Tensor<double> y = f(x);
    if (y.size() != 1) throw std::invalid_argument("finite_difference_check: f must return a scalar");
    if (!std::isfinite(y.value()))
        throw std::runtime_error("finite_difference_check: f(x) is not finite");
    y.backward();
    std::vector<double> analytic = x.has_grad() ? x.grad() : std::vector<double>(x.size(), 0.0);

    double worst = 0.0;
    Tensor<double> probe = Tensor<double>::from(x0.shape(), x0.data());
    NoGradGuard ng;
    for (int64_t i = 0; i < probe.size(); ++i) {
        const double orig = probe.raw()[i];
        probe.raw()[i] = orig + eps;
        double fp = f(probe).value();
        probe.raw()[i] = orig - eps;
        double fm = f(probe).value();
        probe.raw()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_difference_check: probe produced non-finite value");
        double numeric = (fp - fm) / (2.0 * eps);
        double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace atx
