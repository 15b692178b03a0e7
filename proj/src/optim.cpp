#include "vcsde/optim.hpp"

#include <cmath>
#include <limits>

namespace vcsde {

Vec fd_gradient(const ObjectiveFn& f, const Vec& x, double rel_step) {
    const Index d = x.size();
    Vec g(d);
    Vec xp = x;
    for (Index i = 0; i < d; ++i) {
        const double h = rel_step * (1.0 + std::abs(x[i]));
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Mat fd_hessian(const ObjectiveFn& f, const Vec& x, double rel_step) {
    const Index d = x.size();
    const double f0 = f(x);
    Vec h(d);
    for (Index i = 0; i < d; ++i) h[i] = rel_step * (1.0 + std::abs(x[i]));

    Mat H(d, d);
    Vec xp = x;
    for (Index i = 0; i < d; ++i) {
        xp[i] = x[i] + h[i];
        const double fp = f(xp);
        xp[i] = x[i] - h[i];
        const double fm = f(xp);
        xp[i] = x[i];
        H(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for (Index j = i + 1; j < d; ++j) {
            xp[i] = x[i] + h[i];
            xp[j] = x[j] + h[j];
            const double fpp = f(xp);
            xp[j] = x[j] - h[j];
            const double fpm = f(xp);
            xp[i] = x[i] - h[i];
            const double fmm = f(xp);
            xp[j] = x[j] + h[j];
            const double fmp = f(xp);
            xp[i] = x[i];
            xp[j] = x[j];
            H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
        }
    }
    return H;
}

Mat fd_hessian_from_gradient(const GradientFn& g, const Vec& x, double rel_step) {
    const Index d = x.size();
    Mat H(d, d);
    Vec xp = x;
    for (Index i = 0; i < d; ++i) {
        const double h = rel_step * (1.0 + std::abs(x[i]));
        xp[i] = x[i] + h;
        const Vec gp = g(xp);
        xp[i] = x[i] - h;
        const Vec gm = g(xp);
        xp[i] = x[i];
        H.col(i) = (gp - gm) / (2.0 * h);
    }
    return 0.5 * (H + H.transpose());
}

BfgsResult bfgs_minimize(const ObjectiveFn& f, const GradientFn& g, const Vec& x0,
                         const BfgsOptions& opts) {
    const Index d = x0.size();
    BfgsResult res;
    res.x = x0;
    res.f = f(x0);
    if (!std::isfinite(res.f)) {
        res.message = "objective not finite at the starting point";
        return res;
    }
    res.grad = g(res.x);
    res.f_history.push_back(res.f);
    Mat Binv = Mat::Identity(d, d);  // inverse Hessian approximation

    for (res.iters = 0; res.iters < opts.max_iters; ++res.iters) {
        if (res.grad.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
            res.converged = true;
            return res;
        }
        Vec dir = -(Binv * res.grad);
        double slope = dir.dot(res.grad);
        if (!(slope < 0.0)) {  // reset on a non-descent direction
            Binv = Mat::Identity(d, d);
            dir = -res.grad;
            slope = dir.dot(res.grad);
        }

        double step = 1.0;
        double f_new = std::numeric_limits<double>::infinity();
        Vec x_new;
        bool accepted = false;
        for (int ls = 0; ls < opts.max_line_search; ++ls) {
            x_new = res.x + step * dir;
            f_new = f(x_new);
            if (std::isfinite(f_new) && f_new <= res.f + opts.armijo_c1 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            res.message = "line search failed";
            return res;
        }

        const Vec g_new = g(x_new);
        const Vec sk = x_new - res.x;
        const Vec yk = g_new - res.grad;
        const double sy = sk.dot(yk);
        if (sy > 1e-12 * sk.norm() * yk.norm()) {
            if (res.iters == 0) {
                // scale the initial inverse Hessian to the first curvature pair
                Binv = (sy / yk.squaredNorm()) * Mat::Identity(d, d);
            }
            const Vec By = Binv * yk;
            const double yBy = yk.dot(By);
            Binv += ((sy + yBy) / (sy * sy)) * (sk * sk.transpose()) -
                    (By * sk.transpose() + sk * By.transpose()) / sy;
        }
        res.x = x_new;
        res.f = f_new;
        res.grad = g_new;
        res.f_history.push_back(res.f);
    }
    res.message = "maximum iterations reached";
    res.converged = res.grad.lpNorm<Eigen::Infinity>() < opts.grad_tol;
    return res;
}

}  // namespace vcsde
