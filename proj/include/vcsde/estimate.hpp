#pragma once

#include "vcsde/sde.hpp"
#include "vcsde/ssm.hpp"

#include <memory>

namespace vcsde {

struct FitOptions {
    double outer_grad_tol = 1e-4;   // infinity norm of the marginal gradient
    double inner_grad_tol = 1e-8;   // relative, scaled by 1 + |penalized nll|
    int max_outer = 200;
    int max_inner = 100;
    double fd_step = 1e-5;          // relative step for outer finite differences
    Vec alpha_init;                 // full length p; empty = zeros
    Vec lambda_init;                // one per penalty block; empty = all 1
    std::vector<int> lambda_fixed;  // penalty blocks held at their init value
};

/// Negative joint log-density: data nll plus Gaussian random-effect priors,
///   sum_j [ lambda_j beta_j' S_j beta_j / 2 - log det(lambda_j S_j) / 2
///           + q_j log(2 pi) / 2 ].
double penalized_nll(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                     const Vec& alpha, const Vec& beta, const Vec& lambda);

struct InnerResult {
    Vec beta;           // mode of the penalized nll in beta
    Mat hessian;        // penalized Hessian in beta at the mode
    double value = 0.0; // penalized nll at the mode
    bool ok = false;
    int iters = 0;
    double grad_norm = 0.0;
    std::string message;
};

/// Newton optimization of the random coefficients at fixed (alpha, lambda),
/// analytic gradient and Hessian, Levenberg damping on indefiniteness.
InnerResult inner_mode(const ModelSpec& model, const DesignSet& design,
                       const SeriesData& data, const Vec& alpha, const Vec& lambda,
                       const Vec& beta_init, const FitOptions& opts = {});

/// Laplace-approximate marginal nll: penalized_nll at the mode
/// + log det(H)/2 - r log(2 pi)/2. Returns +inf when the inner problem
/// fails; `inner_out` receives the inner solution when non-null.
double laplace_marginal(const ModelSpec& model, const DesignSet& design,
                        const SeriesData& data, const Vec& alpha, const Vec& lambda,
                        const Vec& beta_init, const FitOptions& opts = {},
                        InnerResult* inner_out = nullptr);

enum class FitStatus { Converged, MaxIterations, LineSearchFailed, InnerFailed };

struct Convergence {
    FitStatus status = FitStatus::InnerFailed;
    double grad_norm = 0.0;
    int outer_iters = 0;
    long inner_iters = 0;
    long marginal_evals = 0;
    bool monotone = true;
    std::string message;
};

struct FitResult {
    ModelSpec model;
    std::shared_ptr<const DesignSet> design;
    Vec alpha;   // full fixed-effect vector (fixed entries at their init)
    Vec beta;    // random coefficients at the mode
    Vec lambda;  // one per penalty block
    std::vector<Index> free_alpha;  // alpha indices present in gamma / Sigma
    Mat sigma;   // joint covariance of (alpha_free, beta) at lambda-hat
    bool sigma_pseudo = false;  // pseudo-inverse fallback was needed
    double marginal_nll = 0.0;
    Convergence conv;

    Index gamma_dim() const { return static_cast<Index>(free_alpha.size()) + beta.size(); }
    Vec gamma() const;  // (alpha_free, beta)
};

/// Quasi-Newton minimization of the Laplace marginal over (alpha_free,
/// log lambda) with central finite-difference gradients and warm-started
/// inner solves. Non-convergence is reported in the result, not thrown.
FitResult fit(const ModelSpec& model, std::shared_ptr<const DesignSet> design,
              const SeriesData& data, const FitOptions& opts = {});

/// Joint covariance of (alpha_free, beta): inverse of the penalized-nll
/// Hessian at the estimates with lambda fixed. Analytic Hessian for direct
/// likelihoods, finite differences for state-space fits. Falls back to an
/// eigenvalue pseudo-inverse (flagged) when the Hessian is singular.
Mat joint_precision(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                    const Vec& alpha, const Vec& beta, const Vec& lambda,
                    const std::vector<Index>& free_alpha, bool* pseudo = nullptr,
                    Mat* hessian_out = nullptr);

}  // namespace vcsde
