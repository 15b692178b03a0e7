#pragma once

#include "vcsde/estimate.hpp"

namespace vcsde {

enum class BandType { Pointwise, Simultaneous };

struct Band {
    Vec grid;
    Vec estimate;
    Vec lower, upper;
    double level = 0.95;
    BandType type = BandType::Pointwise;
    std::vector<Index> zero_excluded;   // gridpoints where 0 is outside [lower, upper]
    std::vector<Index> degenerate;      // gridpoints excluded from the max statistic
    std::vector<Index> outside_hull;    // gridpoints beyond the basis knot range

    bool excludes_zero() const { return !zero_excluded.empty(); }
};

/// What a band is computed for: a set of terms of one parameter (a single
/// smooth, or a smooth plus its exposure intercept for a full difference
/// function), or the whole parameter on the response scale.
struct BandTarget {
    std::string parameter;
    std::vector<TermRef> terms;     // varied over the grid / included
    bool parameter_scale = false;   // include every term and invert the link
    std::string grid_covariate;     // which covariate the grid runs over
    std::map<std::string, double> fixed_covariates;  // other covariates (parameter scale)
    std::map<std::string, double> by_values;         // by-column values (parameter scale)
};

/// K draws from N(gamma_hat, Sigma_hat) via a symmetric eigenvalue factor;
/// negative eigenvalues are clipped at zero. Rows are draws.
Mat posterior_draws(const FitResult& fit, int K, std::uint64_t seed);

/// Design matrix over the grid in the gamma = (alpha_free, beta) coordinates
/// plus the constant offset contributed by fixed coefficients.
void target_matrix(const FitResult& fit, const BandTarget& target, const Vec& grid, Mat& C,
                   Vec& offset, std::vector<Index>* outside = nullptr);

/// Per-gridpoint type-7 quantiles of K function realizations.
Band pointwise_band(const FitResult& fit, const BandTarget& target, const Vec& grid,
                    double level, int K, std::uint64_t seed);

/// Max-statistic simultaneous band: H = max_m |(C (gamma_hat - gamma))_m| / SD_m,
/// band = estimate +/- q_{level}(H) SD. Computed on the link scale and
/// transformed for parameter-scale targets.
Band simultaneous_band(const FitResult& fit, const BandTarget& target, const Vec& grid,
                       double level, int K, std::uint64_t seed);

/// Convenience: medians of every covariate column, the default values at
/// which parameter-scale bands fix the other terms.
std::map<std::string, double> covariate_medians(const SeriesData& data);

}  // namespace vcsde
