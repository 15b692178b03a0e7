#pragma once

#include "vcsde/basis.hpp"
#include "vcsde/rng.hpp"
#include "vcsde/types.hpp"

namespace vcsde {

enum class Family { BM, OU1, OU2 };

/// Parameter names in canonical order, with their links:
///   BM:  mu (identity), sigma (log)
///   OU1: mu (identity), tau (log), kappa (log)
///   OU2: mu_x, mu_y (identity), tau (log), kappa (log)
std::vector<std::string> family_params(Family f);
Link family_link(Family f, const std::string& parameter);
int family_dim(Family f);

struct ModelSpec {
    Family family = Family::BM;
    std::vector<Formula> formulas;  // one per family parameter, canonical order
    bool state_space = false;       // Kalman likelihood with per-row obs_cov (OU2 only)

    std::map<std::string, Link> links() const;
    void validate() const;
};

DesignSet model_design(const ModelSpec& model, const SeriesData& data);

/// Gaussian transition law of the process over one interval.
struct GaussLaw {
    double mean = 0.0;
    double var = 0.0;
};

/// Brownian motion: Z_{t+dt} | Z_t = z0 ~ N(z0 + a dt, sigma^2 dt).
template <class Scalar>
inline void bm_transition_t(Scalar z0, Scalar a, Scalar sigma, Scalar dt, Scalar& mean,
                            Scalar& var) {
    mean = z0 + a * dt;
    var = sigma * sigma * dt;
}

/// Ornstein-Uhlenbeck in the (tau, kappa) parameterization, tau = 1/b and
/// kappa = sigma^2/(2b):
///   mean = (1 - e^{-dt/tau}) a + e^{-dt/tau} z0,  var = kappa (1 - e^{-2 dt/tau}).
template <class Scalar>
inline void ou_transition_t(Scalar z0, Scalar a, Scalar tau, Scalar kappa, Scalar dt,
                            Scalar& mean, Scalar& var) {
    using std::exp;
    using std::expm1;
    const Scalar phi = exp(-dt / tau);
    mean = a - phi * (a - z0);
    var = -kappa * expm1(-2.0 * dt / tau);
}

GaussLaw bm_transition(double z0, double a, double sigma, double dt);
GaussLaw ou_transition(double z0, double a, double tau, double kappa, double dt);

/// Natural-scale parameter values for every row: theta(i, p) =
/// invlink(x_i' alpha_p + z_i' beta_p), columns in family parameter order.
Mat param_matrix(const ModelSpec& model, const DesignSet& design, const Vec& alpha,
                 const Vec& beta);

/// Same, but on caller-supplied design rows (prediction / simulation).
Mat param_matrix_rows(const ModelSpec& model, const DesignSet& design, const Mat& X_rows,
                      const Mat& Z_rows, const Vec& alpha, const Vec& beta);

Vec param_at(const ModelSpec& model, const DesignSet& design, const Vec& alpha,
             const Vec& beta, Index row);

/// Sum of -log transition densities over consecutive within-series pairs,
/// parameters frozen at each interval's start row. Conditions on the first
/// observation of every series.
double neg_log_lik(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                   const Vec& alpha, const Vec& beta);

/// Value, analytic gradient, and (optionally) analytic Hessians of
/// neg_log_lik in the coefficient space. Coordinates are (alpha, beta)
/// concatenated; h_beta is the beta x beta sub-block.
struct DirectDerivs {
    double nll = 0.0;
    Vec grad;    // p + r
    Mat h_beta;  // r x r, filled when requested
    Mat h_full;  // (p+r) x (p+r), filled when requested
};

DirectDerivs direct_nll_derivs(const ModelSpec& model, const DesignSet& design,
                               const SeriesData& data, const Vec& alpha, const Vec& beta,
                               bool want_h_beta, bool want_h_full);

/// Exact sequential transition draws over `times`; theta rows give the
/// natural-scale parameters at each interval start (theta.row(i) applies to
/// [t_i, t_{i+1})). Returns the simulated path including the start value.
Mat simulate_path(Family family, const Vec& times, const Mat& theta, const Vec& z0,
                  Rng& rng);

/// Simulate with fitted coefficients over template covariates.
Mat simulate_from(const ModelSpec& model, const DesignSet& design, const Vec& alpha,
                  const Vec& beta, const Vec& times,
                  const std::map<std::string, Vec>& covariates, const Vec& z0, Rng& rng,
                  const std::map<std::string, double>& eta_offsets = {});

}  // namespace vcsde
