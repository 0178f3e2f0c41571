#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "secvit/tape.hpp"
#include "secvit/tensor.hpp"

namespace secvit {

// Central finite differences: (f(x + h e_i) - f(x - h e_i)) / 2h per element.
// f must be evaluable and finite at every probe point.
template <typename F>
Tensor<double> finite_diff_grad(F&& f, const Tensor<double>& x, double h = 1e-5) {
    Tensor<double> g(x.shape());
    Tensor<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        double fp = f(probe);
        probe[i] = x[i] - h;
        double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: function non-finite at probe point");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Per-element |a - b| / max(1, |a|, |b|), maximized.
inline double max_rel_err(const Tensor<double>& a, const Tensor<double>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_rel_err: shape mismatch");
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

struct GradCheckResult {
    std::string op;
    double max_err = 0;
    bool pass = false;
};

// Compare the tape gradient of a scalar-valued builder against central
// differences on one designated leaf. `build` receives a fresh tape plus the
// leaf Var and returns the scalar loss Var.
template <typename F>
GradCheckResult gradcheck(const std::string& name, const Tensor<double>& x0, F&& build,
                          double h = 1e-5, double tol = 1e-6) {
    Tape<double> tape;
    Var<double> x = tape.input(x0, true);
    Var<double> loss = build(tape, x);
    tape.backward(loss);
    Tensor<double> analytic = tape.grad(x);

    auto eval = [&](const Tensor<double>& probe) {
        Tape<double> t2;
        t2.set_recording(false);
        Var<double> xv = t2.input(probe, false);
        Var<double> l2 = build(t2, xv);
        return t2.value(l2)[0];
    };
    Tensor<double> numeric = finite_diff_grad(eval, x0, h);
    double err = max_rel_err(analytic, numeric);
    return GradCheckResult{name, err, err < tol};
}

}  // namespace secvit
