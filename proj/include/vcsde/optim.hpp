#pragma once

#include "vcsde/types.hpp"

#include <functional>

namespace vcsde {

using ObjectiveFn = std::function<double(const Vec&)>;
using GradientFn = std::function<Vec(const Vec&)>;

/// Central finite-difference gradient, step rel_step * (1 + |x_i|).
Vec fd_gradient(const ObjectiveFn& f, const Vec& x, double rel_step = 1e-5);

/// Central second-difference Hessian of function values.
Mat fd_hessian(const ObjectiveFn& f, const Vec& x, double rel_step = 1e-4);

/// Central finite differences of a gradient function (Jacobian, symmetrized).
Mat fd_hessian_from_gradient(const GradientFn& g, const Vec& x, double rel_step = 1e-5);

struct BfgsOptions {
    double grad_tol = 1e-4;   // infinity norm
    int max_iters = 200;
    double armijo_c1 = 1e-4;
    int max_line_search = 40;
};

struct BfgsResult {
    Vec x;
    double f = 0.0;
    Vec grad;
    int iters = 0;
    bool converged = false;
    std::vector<double> f_history;  // accepted objective values, non-increasing
    std::string message;
};

/// Dense BFGS with Armijo backtracking. The objective may return +inf to
/// reject a trial point. `g` is typically a finite-difference gradient.
BfgsResult bfgs_minimize(const ObjectiveFn& f, const GradientFn& g, const Vec& x0,
                         const BfgsOptions& opts = {});

}  // namespace vcsde
