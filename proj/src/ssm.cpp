#include "vcsde/ssm.hpp"

#include <cmath>
#include <limits>

namespace vcsde {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;

bool row_valid(const SeriesData& data, Index i) {
    return data.obs_cov[static_cast<size_t>(i)].allFinite() && data.z.row(i).allFinite();
}

double min_eig2(const Mat2& P) {
    const double half_tr = 0.5 * (P(0, 0) + P(1, 1));
    const double det = P(0, 0) * P(1, 1) - P(0, 1) * P(1, 0);
    const double disc = std::sqrt(std::max(half_tr * half_tr - det, 0.0));
    return half_tr - disc;
}

Mat2 inv2(const Mat2& F, Index row) {
    const double det = F(0, 0) * F(1, 1) - F(0, 1) * F(1, 0);
    if (!(det > 0.0) || !std::isfinite(det))
        throw NumericalError("singular innovation covariance at row " + std::to_string(row));
    Mat2 inv;
    inv << F(1, 1), -F(0, 1), -F(1, 0), F(0, 0);
    return inv / det;
}
}  // namespace

Mat2 ellipse_to_cov(const ErrorEllipse& e) {
    if (e.semi_minor < 0.0 || e.semi_major < e.semi_minor)
        throw InputError("error ellipse needs semi_major >= semi_minor >= 0");
    const double th = e.orientation_deg * M_PI / 180.0;
    const Vec2 u(std::sin(th), std::cos(th));   // major axis, clockwise from north
    const Vec2 v(std::cos(th), -std::sin(th));  // minor axis
    return 0.5 * e.semi_major * e.semi_major * u * u.transpose() +
           0.5 * e.semi_minor * e.semi_minor * v * v.transpose();
}

double goniometer_radius(double signal_db) {
    if (!std::isfinite(signal_db)) throw InputError("non-finite goniometer signal");
    if (signal_db >= -50.0) return 100.0;
    if (signal_db >= -70.0) return 500.0;
    if (signal_db >= -80.0) return 1000.0;
    if (signal_db >= -90.0) return 2000.0;
    return 10000.0;
}

KalmanResult kalman_filter(const ModelSpec& model, const DesignSet& design,
                           const SeriesData& data, const Vec& alpha, const Vec& beta,
                           KalmanBetaDerivs* derivs) {
    if (model.family != Family::OU2)
        throw InputError("Kalman likelihood needs the 2-D OU family");
    if (data.dim() != 2) throw InputError("Kalman likelihood needs 2-D observations");
    if (!data.has_obs_cov())
        throw InputError("Kalman likelihood needs per-row measurement covariances");

    const Index n = data.n();
    const Index r = design.r();
    const Mat theta = param_matrix(model, design, alpha, beta);
    const ParamDesign& pmx = design.param("mu_x");
    const ParamDesign& pmy = design.param("mu_y");

    KalmanResult res;
    res.pred_mean = Mat::Constant(n, 2, std::numeric_limits<double>::quiet_NaN());
    res.filt_mean = res.pred_mean;
    res.pred_cov.assign(static_cast<size_t>(n), Mat2::Zero());
    res.filt_cov.assign(static_cast<size_t>(n), Mat2::Zero());
    res.updated.assign(static_cast<size_t>(n), 0);
    res.min_cov_eig = std::numeric_limits<double>::infinity();

    if (derivs) {
        derivs->grad = Vec::Zero(r);
        derivs->hess = Mat::Zero(r, r);
    }

    auto mean_jacobian_row = [&](Index i, Mat& J) {
        J.setZero();
        if (pmx.z_size > 0)
            J.block(0, pmx.z_offset, 1, pmx.z_size) = design.Z.row(i).segment(pmx.z_offset, pmx.z_size);
        if (pmy.z_size > 0)
            J.block(1, pmy.z_offset, 1, pmy.z_size) = design.Z.row(i).segment(pmy.z_offset, pmy.z_size);
    };

    const auto offsets = data.series_offsets();
    for (size_t s = 0; s + 1 < offsets.size(); ++s) {
        const Index s0 = offsets[s], s1 = offsets[s + 1];
        Index f = s0;
        while (f < s1 && !row_valid(data, f)) ++f;
        if (f >= s1) continue;  // nothing observed in this series

        // prior N(first obs, Omega + kappa I), assimilated without a
        // likelihood term so the filter conditions on the first observation
        const Mat2& omega0 = data.obs_cov[static_cast<size_t>(f)];
        const double kappa0 = theta(f, 3);
        Mat2 C0 = omega0 + kappa0 * Mat2::Identity();
        Vec2 mean = data.z.row(f).transpose();
        Mat2 F0 = C0 + omega0;
        Mat2 K0 = C0 * inv2(F0, f);
        Mat2 P = C0 - K0 * C0;
        P = (0.5 * (P + P.transpose())).eval();
        res.pred_mean.row(f) = mean.transpose();
        res.pred_cov[static_cast<size_t>(f)] = C0;
        res.filt_mean.row(f) = mean.transpose();
        res.filt_cov[static_cast<size_t>(f)] = P;
        res.updated[static_cast<size_t>(f)] = 1;

        Mat Jm = Mat::Zero(2, r);       // d mean / d beta
        Mat Jpred = Mat::Zero(2, r);
        Mat Ju = Mat::Zero(2, r);

        for (Index i = f + 1; i < s1; ++i) {
            const double dt = data.t[i] - data.t[i - 1];
            const double tau = theta(i - 1, 2), kappa = theta(i - 1, 3);
            const double phi = std::exp(-dt / tau);
            const double q = -kappa * std::expm1(-2.0 * dt / tau);
            const Vec2 a(theta(i - 1, 0), theta(i - 1, 1));

            Vec2 m_pred = phi * mean + (1.0 - phi) * a;
            Mat2 P_pred = phi * phi * P + q * Mat2::Identity();
            res.pred_mean.row(i) = m_pred.transpose();
            res.pred_cov[static_cast<size_t>(i)] = P_pred;

            if (derivs) {
                mean_jacobian_row(i - 1, Ju);
                Jpred = phi * Jm + (1.0 - phi) * Ju;
            }

            if (row_valid(data, i)) {
                const Mat2& omega = data.obs_cov[static_cast<size_t>(i)];
                const Vec2 v = data.z.row(i).transpose() - m_pred;
                const Mat2 F = P_pred + omega;
                const Mat2 Finv = inv2(F, i);
                const double det = F(0, 0) * F(1, 1) - F(0, 1) * F(1, 0);
                res.loglik += -kLog2Pi - 0.5 * std::log(det) - 0.5 * v.dot(Finv * v);

                const Mat2 K = P_pred * Finv;
                mean = m_pred + K * v;
                P = P_pred - K * P_pred;
                res.min_cov_eig = std::min(res.min_cov_eig, min_eig2(P));
                P = (0.5 * (P + P.transpose())).eval();
                res.updated[static_cast<size_t>(i)] = 1;

                if (derivs) {
                    derivs->grad.noalias() += -Jpred.transpose() * (Finv * v);
                    derivs->hess.noalias() += Jpred.transpose() * Finv * Jpred;
                    Jm = Jpred - K * Jpred;
                }
            } else {
                mean = m_pred;
                P = P_pred;
                if (derivs) Jm = Jpred;
            }
            res.filt_mean.row(i) = mean.transpose();
            res.filt_cov[static_cast<size_t>(i)] = P;
        }
    }
    return res;
}

double kalman_loglik(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                     const Vec& alpha, const Vec& beta) {
    return kalman_filter(model, design, data, alpha, beta).loglik;
}

SmoothedStates kalman_smooth(const ModelSpec& model, const DesignSet& design,
                             const SeriesData& data, const Vec& alpha, const Vec& beta) {
    const KalmanResult fr = kalman_filter(model, design, data, alpha, beta);
    const Mat theta = param_matrix(model, design, alpha, beta);

    SmoothedStates out;
    out.mean = fr.filt_mean;
    out.cov = fr.filt_cov;

    const auto offsets = data.series_offsets();
    for (size_t s = 0; s + 1 < offsets.size(); ++s) {
        const Index s0 = offsets[s], s1 = offsets[s + 1];
        Index f = s0;
        while (f < s1 && !fr.pred_mean.row(f).allFinite()) ++f;
        if (f >= s1) continue;

        for (Index i = s1 - 2; i >= f; --i) {
            const double dt = data.t[i + 1] - data.t[i];
            const double phi = std::exp(-dt / theta(i, 2));
            const Mat2 Pp_inv = inv2(fr.pred_cov[static_cast<size_t>(i + 1)], i + 1);
            const Mat2 G = phi * fr.filt_cov[static_cast<size_t>(i)] * Pp_inv;
            out.mean.row(i) =
                fr.filt_mean.row(i) +
                (G * (out.mean.row(i + 1) - fr.pred_mean.row(i + 1)).transpose()).transpose();
            Mat2 Ps = fr.filt_cov[static_cast<size_t>(i)] +
                      G *
                          (out.cov[static_cast<size_t>(i + 1)] -
                           fr.pred_cov[static_cast<size_t>(i + 1)]) *
                          G.transpose();
            out.cov[static_cast<size_t>(i)] = 0.5 * (Ps + Ps.transpose());
        }
    }
    return out;
}

}  // namespace vcsde
