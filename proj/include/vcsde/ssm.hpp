#pragma once

#include "vcsde/sde.hpp"
#include "vcsde/types.hpp"

namespace vcsde {

/// Argos-style error ellipse: the sqrt(2)-sigma contour of a bivariate
/// normal. Orientation is degrees clockwise from north of the semi-major
/// axis; axes are (Easting, Northing).
struct ErrorEllipse {
    double semi_major = 0.0;
    double semi_minor = 0.0;
    double orientation_deg = 0.0;
};

/// Omega = R diag(M^2/2, m^2/2) R'; a semi-axis of length L contributes
/// variance L^2/2 under the sqrt(2)-sigma convention.
Mat2 ellipse_to_cov(const ErrorEllipse& e);

/// Goniometer location accuracy from received signal strength:
///   >= -50 dB -> 100 m, [-70, -50) -> 500 m, [-80, -70) -> 1 km,
///   [-90, -80) -> 2 km, < -90 -> 10 km.
/// The implied covariance is (radius^2/2) I_2.
double goniometer_radius(double signal_db);

/// Optional analytic derivatives of the filter log-likelihood with respect
/// to the random coefficients (all of which enter the state mean linearly),
/// so the inner Newton step is exact.
struct KalmanBetaDerivs {
    Vec grad;  // d(-loglik)/d beta
    Mat hess;  // exact (the innovations are affine in beta)
};

struct KalmanResult {
    double loglik = 0.0;
    Mat pred_mean, filt_mean;          // n x 2
    std::vector<Mat2> pred_cov, filt_cov;
    std::vector<char> updated;         // 0 when the row's update was skipped
    double min_cov_eig = 0.0;          // most negative eigenvalue seen pre-symmetrization
};

/// Kalman filter for the 2-D OU state-space model with per-row measurement
/// covariances. The state prior at the first valid observation is
/// N(obs, Omega + kappa I); that observation is assimilated without a
/// likelihood contribution, so the result conditions on it exactly like the
/// direct likelihood. Rows whose obs_cov is non-finite are skipped
/// (propagation only). Throws NumericalError on a singular innovation
/// covariance, reporting the row.
KalmanResult kalman_filter(const ModelSpec& model, const DesignSet& design,
                           const SeriesData& data, const Vec& alpha, const Vec& beta,
                           KalmanBetaDerivs* derivs = nullptr);

double kalman_loglik(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                     const Vec& alpha, const Vec& beta);

struct SmoothedStates {
    Mat mean;                  // n x 2
    std::vector<Mat2> cov;
};

/// Fixed-interval (RTS) smoother consistent with kalman_filter.
SmoothedStates kalman_smooth(const ModelSpec& model, const DesignSet& design,
                             const SeriesData& data, const Vec& alpha, const Vec& beta);

}  // namespace vcsde
