#pragma once

#include <Eigen/Dense>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vcsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Index = Eigen::Index;

/// Bad user input (data files, configs, formulas). CLI maps this to exit code 2.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unrecoverable numerical failure (singular innovation, indefinite Hessian
/// at a converged mode, ...). CLI maps this to exit code 4.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Link { Identity, Log };

inline double link_apply(Link link, double theta) {
    return link == Link::Log ? std::log(theta) : theta;
}

inline double link_inverse(Link link, double eta) {
    return link == Link::Log ? std::exp(eta) : eta;
}

/// One or more time series observed at irregular times, with covariate
/// columns and (optionally) a per-row 2x2 measurement error covariance.
/// Rows are grouped by `series`; times must increase strictly within a
/// series and transitions never span series boundaries.
struct SeriesData {
    Vec t;                                // time, model units
    Mat z;                                // n x 1 or n x 2 observations
    std::vector<int> series;              // per-row series id, grouped rows
    std::map<std::string, Vec> covariates;
    std::vector<Mat2> obs_cov;            // empty, or one per row

    Index n() const { return t.size(); }
    int dim() const { return static_cast<int>(z.cols()); }
    bool has_obs_cov() const { return !obs_cov.empty(); }

    const Vec& covariate(const std::string& name) const {
        auto it = covariates.find(name);
        if (it == covariates.end()) throw InputError("unknown covariate column: " + name);
        return it->second;
    }

    /// First row index of each series, plus a final sentinel n().
    std::vector<Index> series_offsets() const;

    /// Row indices i such that (i, i+1) is a within-series transition.
    std::vector<Index> transition_rows() const;

    /// Throws InputError on inconsistent sizes, non-increasing times within
    /// a series, non-finite values, or asymmetric / indefinite obs_cov.
    void validate() const;
};

/// Column-wise median (type-7 interpolation on the sorted values).
double median(const Vec& x);

/// Type-7 quantile (linear interpolation between order statistics), the
/// convention used everywhere bands and reports need a quantile.
double quantile_type7(std::vector<double> x, double p);

}  // namespace vcsde
