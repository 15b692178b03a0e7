#include "vcsde/estimate.hpp"

#include "vcsde/optim.hpp"

#include <cmath>
#include <limits>

namespace vcsde {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kInf = std::numeric_limits<double>::infinity();

double data_nll(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                const Vec& alpha, const Vec& beta) {
    return model.state_space ? -kalman_loglik(model, design, data, alpha, beta)
                             : neg_log_lik(model, design, data, alpha, beta);
}

// -log density of beta ~ N(0, (lambda S)^{-1}) summed over blocks
double prior_nll(const DesignSet& design, const Vec& beta, const Vec& lambda) {
    double out = 0.0;
    for (size_t j = 0; j < design.penalties.size(); ++j) {
        const PenaltyBlock& pb = design.penalties[j];
        const auto bj = beta.segment(pb.z_offset, pb.size);
        const double lj = lambda[static_cast<Index>(j)];
        if (!(lj > 0.0)) throw InputError("smoothing parameters must be positive");
        out += 0.5 * lj * bj.dot(pb.S * bj);
        out -= 0.5 * (static_cast<double>(pb.size) * std::log(lj) + pb.log_det);
        out += 0.5 * static_cast<double>(pb.size) * kLog2Pi;
    }
    return out;
}

void add_prior_grad_hess(const DesignSet& design, const Vec& beta, const Vec& lambda,
                         Vec* grad, Mat* hess) {
    for (size_t j = 0; j < design.penalties.size(); ++j) {
        const PenaltyBlock& pb = design.penalties[j];
        const double lj = lambda[static_cast<Index>(j)];
        if (grad)
            grad->segment(pb.z_offset, pb.size) +=
                lj * (pb.S * beta.segment(pb.z_offset, pb.size));
        if (hess) hess->block(pb.z_offset, pb.z_offset, pb.size, pb.size) += lj * pb.S;
    }
}

struct InnerEval {
    double value;
    Vec grad;  // r
    Mat hess;  // r x r
};

InnerEval inner_eval(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                     const Vec& alpha, const Vec& beta, const Vec& lambda, bool want_hess) {
    InnerEval ev;
    const Index r = design.r();
    if (model.state_space) {
        KalmanBetaDerivs kd;
        const KalmanResult kr = kalman_filter(model, design, data, alpha, beta, &kd);
        ev.value = -kr.loglik;
        ev.grad = kd.grad;
        if (want_hess) ev.hess = kd.hess;
    } else {
        DirectDerivs dd = direct_nll_derivs(model, design, data, alpha, beta, want_hess, false);
        ev.value = dd.nll;
        ev.grad = dd.grad.tail(r);
        if (want_hess) ev.hess = std::move(dd.h_beta);
    }
    ev.value += prior_nll(design, beta, lambda);
    add_prior_grad_hess(design, beta, lambda, &ev.grad, want_hess ? &ev.hess : nullptr);
    return ev;
}

}  // namespace

double penalized_nll(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                     const Vec& alpha, const Vec& beta, const Vec& lambda) {
    if (lambda.size() != static_cast<Index>(design.penalties.size()))
        throw InputError("lambda size must match the number of penalty blocks");
    return data_nll(model, design, data, alpha, beta) + prior_nll(design, beta, lambda);
}

InnerResult inner_mode(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                       const Vec& alpha, const Vec& lambda, const Vec& beta_init,
                       const FitOptions& opts) {
    const Index r = design.r();
    InnerResult res;
    res.beta = beta_init.size() == r ? beta_init : Vec::Zero(r);
    if (r == 0) {
        res.value = data_nll(model, design, data, alpha, res.beta);
        res.hessian = Mat(0, 0);
        res.ok = std::isfinite(res.value);
        return res;
    }
    if (!res.beta.allFinite()) {
        res.message = "non-finite inner start";
        return res;
    }

    InnerEval ev;
    try {
        ev = inner_eval(model, design, data, alpha, res.beta, lambda, true);
    } catch (const NumericalError& e) {
        res.message = e.what();
        return res;
    }
    if (!std::isfinite(ev.value)) {
        res.message = "non-finite penalized nll at inner start";
        return res;
    }

    for (res.iters = 0; res.iters < opts.max_inner; ++res.iters) {
        res.grad_norm = ev.grad.lpNorm<Eigen::Infinity>();
        if (res.grad_norm < opts.inner_grad_tol * (1.0 + std::abs(ev.value))) break;

        // Newton direction with Levenberg damping until the system is PD
        double damp = 0.0;
        Vec dir;
        while (true) {
            Mat Hd = ev.hess;
            if (damp > 0.0) Hd.diagonal().array() += damp;
            Eigen::LLT<Mat> llt(Hd);
            if (llt.info() == Eigen::Success) {
                dir = llt.solve(-ev.grad);
                if (dir.allFinite()) break;
            }
            damp = damp == 0.0 ? 1e-6 : 2.0 * damp;
            if (damp > 1e12) {
                res.message = "inner Hessian could not be damped to PD";
                return res;
            }
        }

        // backtracking on the penalized objective
        const double slope = ev.grad.dot(dir);
        double step = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            const Vec cand = res.beta + step * dir;
            InnerEval ev_new;
            bool feasible = true;
            try {
                ev_new = inner_eval(model, design, data, alpha, cand, lambda, true);
            } catch (const NumericalError&) {
                feasible = false;
            }
            if (feasible && std::isfinite(ev_new.value) &&
                ev_new.value <= ev.value + 1e-4 * step * slope) {
                res.beta = cand;
                ev = std::move(ev_new);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            res.message = "inner line search failed";
            return res;
        }
    }

    res.grad_norm = ev.grad.lpNorm<Eigen::Infinity>();
    if (res.grad_norm >= opts.inner_grad_tol * (1.0 + std::abs(ev.value))) {
        res.message = "inner Newton did not converge";
        return res;
    }
    // the reported Hessian is undamped; PD is required for the Laplace term
    Eigen::LLT<Mat> llt(ev.hess);
    if (llt.info() != Eigen::Success) {
        res.message = "indefinite penalized Hessian at the inner mode";
        return res;
    }
    res.value = ev.value;
    res.hessian = std::move(ev.hess);
    res.ok = true;
    return res;
}

double laplace_marginal(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                        const Vec& alpha, const Vec& lambda, const Vec& beta_init,
                        const FitOptions& opts, InnerResult* inner_out) {
    InnerResult inner = inner_mode(model, design, data, alpha, lambda, beta_init, opts);
    if (inner_out) *inner_out = inner;
    if (!inner.ok) return kInf;
    const Index r = design.r();
    if (r == 0) return inner.value;
    const Eigen::LLT<Mat> llt(inner.hessian);
    const double half_logdet = llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return inner.value + half_logdet - 0.5 * static_cast<double>(r) * kLog2Pi;
}

Vec FitResult::gamma() const {
    Vec g(gamma_dim());
    for (size_t i = 0; i < free_alpha.size(); ++i) g[static_cast<Index>(i)] = alpha[free_alpha[i]];
    g.tail(beta.size()) = beta;
    return g;
}

Mat joint_precision(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                    const Vec& alpha, const Vec& beta, const Vec& lambda,
                    const std::vector<Index>& free_alpha, bool* pseudo, Mat* hessian_out) {
    const Index p = design.p(), r = design.r();
    const Index pf = static_cast<Index>(free_alpha.size());
    const Index d = pf + r;

    Mat H(d, d);
    if (!model.state_space) {
        // analytic joint Hessian, then select free-alpha rows/columns
        DirectDerivs dd = direct_nll_derivs(model, design, data, alpha, beta, false, true);
        Mat Hpen = Mat::Zero(r, r);
        add_prior_grad_hess(design, beta, lambda, nullptr, &Hpen);
        std::vector<Index> keep;
        keep.reserve(static_cast<size_t>(d));
        for (Index a : free_alpha) keep.push_back(a);
        for (Index j = 0; j < r; ++j) keep.push_back(p + j);
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d; ++j) H(i, j) = dd.h_full(keep[static_cast<size_t>(i)],
                                                               keep[static_cast<size_t>(j)]);
        H.bottomRightCorner(r, r) += Hpen;
    } else {
        // value-based finite differences for the state-space likelihood
        Vec at(d);
        for (Index i = 0; i < pf; ++i) at[i] = alpha[free_alpha[static_cast<size_t>(i)]];
        at.tail(r) = beta;
        Vec alpha_full = alpha;
        auto value = [&](const Vec& v) {
            for (Index i = 0; i < pf; ++i) alpha_full[free_alpha[static_cast<size_t>(i)]] = v[i];
            return penalized_nll(model, design, data, alpha_full, v.tail(r), lambda);
        };
        H = fd_hessian(value, at, 1e-4);
    }
    H = 0.5 * (H + H.transpose()).eval();
    if (hessian_out) *hessian_out = H;

    if (pseudo) *pseudo = false;
    Eigen::LLT<Mat> llt(H);
    if (llt.info() == Eigen::Success) {
        Mat sigma = llt.solve(Mat::Identity(d, d));
        return 0.5 * (sigma + sigma.transpose());
    }
    // singular Hessian: eigenvalue pseudo-inverse
    if (pseudo) *pseudo = true;
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    const Vec ev = es.eigenvalues();
    const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    Vec inv_ev = Vec::Zero(d);
    for (Index i = 0; i < d; ++i)
        if (ev[i] > tol) inv_ev[i] = 1.0 / ev[i];
    Mat sigma = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (sigma + sigma.transpose());
}

FitResult fit(const ModelSpec& model, std::shared_ptr<const DesignSet> design,
              const SeriesData& data, const FitOptions& opts) {
    model.validate();
    const DesignSet& ds = *design;
    const Index p = ds.p();
    const Index nb = static_cast<Index>(ds.penalties.size());

    FitResult res;
    res.model = model;
    res.design = design;
    res.alpha = opts.alpha_init.size() == p ? opts.alpha_init : Vec::Zero(p);
    if (opts.alpha_init.size() != 0 && opts.alpha_init.size() != p)
        throw InputError("alpha_init size mismatch");
    res.lambda = opts.lambda_init.size() == nb ? opts.lambda_init : Vec::Ones(nb);
    if (opts.lambda_init.size() != 0 && opts.lambda_init.size() != nb)
        throw InputError("lambda_init size mismatch");
    if ((res.lambda.array() <= 0.0).any())
        throw InputError("lambda_init must be positive");

    for (const auto& pd : ds.params)
        if (!pd.fixed)
            for (Index c = 0; c < pd.x_size; ++c) res.free_alpha.push_back(pd.x_offset + c);

    std::vector<Index> free_lambda;
    for (Index j = 0; j < nb; ++j) {
        const bool fixed =
            std::find(opts.lambda_fixed.begin(), opts.lambda_fixed.end(), static_cast<int>(j)) !=
            opts.lambda_fixed.end();
        if (!fixed) free_lambda.push_back(j);
    }

    const Index pf = static_cast<Index>(res.free_alpha.size());
    const Index lf = static_cast<Index>(free_lambda.size());
    const Index dim = pf + lf;

    Vec warm_beta = Vec::Zero(ds.r());
    long inner_iters = 0;
    long evals = 0;

    Vec alpha_work = res.alpha;
    Vec lambda_work = res.lambda;
    auto unpack = [&](const Vec& xi) {
        for (Index i = 0; i < pf; ++i) alpha_work[res.free_alpha[static_cast<size_t>(i)]] = xi[i];
        for (Index j = 0; j < lf; ++j)
            lambda_work[free_lambda[static_cast<size_t>(j)]] = std::exp(xi[pf + j]);
    };
    auto marginal = [&](const Vec& xi) {
        unpack(xi);
        InnerResult inner;
        const double val =
            laplace_marginal(model, ds, data, alpha_work, lambda_work, warm_beta, opts, &inner);
        ++evals;
        inner_iters += inner.iters;
        if (inner.ok) warm_beta = inner.beta;
        return val;
    };

    Vec xi0(dim);
    for (Index i = 0; i < pf; ++i) xi0[i] = res.alpha[res.free_alpha[static_cast<size_t>(i)]];
    for (Index j = 0; j < lf; ++j)
        xi0[pf + j] = std::log(res.lambda[free_lambda[static_cast<size_t>(j)]]);

    Vec xi_hat = xi0;
    if (dim > 0) {
        BfgsOptions bopts;
        bopts.grad_tol = opts.outer_grad_tol;
        bopts.max_iters = opts.max_outer;
        auto grad = [&](const Vec& xi) { return fd_gradient(marginal, xi, opts.fd_step); };
        BfgsResult br = bfgs_minimize(marginal, grad, xi0, bopts);
        xi_hat = br.x;
        res.conv.grad_norm = br.grad.size() ? br.grad.lpNorm<Eigen::Infinity>() : 0.0;
        res.conv.outer_iters = br.iters;
        res.conv.message = br.message;
        res.conv.monotone = std::is_sorted(br.f_history.begin(), br.f_history.end(),
                                           [](double a, double b) { return a > b; });
        if (br.converged)
            res.conv.status = FitStatus::Converged;
        else if (br.message == "line search failed")
            res.conv.status = FitStatus::LineSearchFailed;
        else
            res.conv.status = FitStatus::MaxIterations;
    } else {
        res.conv.status = FitStatus::Converged;
    }

    unpack(xi_hat);
    InnerResult inner;
    res.marginal_nll =
        laplace_marginal(model, ds, data, alpha_work, lambda_work, warm_beta, opts, &inner);
    ++evals;
    inner_iters += inner.iters;
    if (!inner.ok) {
        res.conv.status = FitStatus::InnerFailed;
        res.conv.message = inner.message;
    }
    res.alpha = alpha_work;
    res.lambda = lambda_work;
    res.beta = inner.ok ? inner.beta : warm_beta;
    res.conv.inner_iters = inner_iters;
    res.conv.marginal_evals = evals;

    if (inner.ok) {
        res.sigma = joint_precision(model, ds, data, res.alpha, res.beta, res.lambda,
                                    res.free_alpha, &res.sigma_pseudo);
    }
    return res;
}

}  // namespace vcsde
