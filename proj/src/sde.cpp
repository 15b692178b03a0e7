#include "vcsde/sde.hpp"

#include <cmath>

namespace vcsde {

std::vector<std::string> family_params(Family f) {
    switch (f) {
        case Family::BM: return {"mu", "sigma"};
        case Family::OU1: return {"mu", "tau", "kappa"};
        case Family::OU2: return {"mu_x", "mu_y", "tau", "kappa"};
    }
    throw InputError("unknown family");
}

Link family_link(Family f, const std::string& parameter) {
    for (const auto& name : family_params(f)) {
        if (name == parameter)
            return (parameter == "mu" || parameter == "mu_x" || parameter == "mu_y")
                       ? Link::Identity
                       : Link::Log;
    }
    throw InputError("unknown parameter " + parameter + " for family");
}

int family_dim(Family f) { return f == Family::OU2 ? 2 : 1; }

std::map<std::string, Link> ModelSpec::links() const {
    std::map<std::string, Link> out;
    for (const auto& name : family_params(family)) out[name] = family_link(family, name);
    return out;
}

void ModelSpec::validate() const {
    const auto names = family_params(family);
    if (formulas.size() != names.size())
        throw InputError("model needs one formula per parameter (" +
                         std::to_string(names.size()) + ")");
    for (const auto& name : names) {
        bool found = false;
        for (const auto& f : formulas) found = found || f.parameter == name;
        if (!found) throw InputError("missing formula for parameter " + name);
    }
    if (state_space) {
        if (family != Family::OU2)
            throw InputError("state-space likelihood is only available for the 2-D OU family");
        for (const auto& f : formulas) {
            if (f.parameter != "tau" && f.parameter != "kappa") continue;
            for (const auto& ts : f.terms)
                if (ts.kind == TermSpec::Kind::Spline ||
                    ts.kind == TermSpec::Kind::RandomIntercept)
                    throw InputError(
                        "state-space models support random-effect terms on the mean "
                        "parameters only; " +
                        f.parameter + " must use intercept/linear terms");
        }
    }
}

DesignSet model_design(const ModelSpec& model, const SeriesData& data) {
    model.validate();
    return build_design(model.formulas, model.links(), data);
}

GaussLaw bm_transition(double z0, double a, double sigma, double dt) {
    if (!(dt > 0.0)) throw InputError("bm_transition needs dt > 0");
    if (sigma < 0.0) throw InputError("bm_transition needs sigma >= 0");
    GaussLaw law;
    bm_transition_t(z0, a, sigma, dt, law.mean, law.var);
    return law;
}

GaussLaw ou_transition(double z0, double a, double tau, double kappa, double dt) {
    if (!(dt > 0.0)) throw InputError("ou_transition needs dt > 0");
    if (!(tau > 0.0) || kappa < 0.0) throw InputError("ou_transition needs tau > 0, kappa >= 0");
    GaussLaw law;
    ou_transition_t(z0, a, tau, kappa, dt, law.mean, law.var);
    return law;
}

Mat param_matrix_rows(const ModelSpec& model, const DesignSet& design, const Mat& X_rows,
                      const Mat& Z_rows, const Vec& alpha, const Vec& beta) {
    const auto names = family_params(model.family);
    Mat theta(X_rows.rows(), static_cast<Index>(names.size()));
    for (size_t j = 0; j < names.size(); ++j) {
        const ParamDesign& pd = design.param(names[j]);
        Vec eta = Vec::Zero(X_rows.rows());
        if (pd.x_size > 0)
            eta += X_rows.middleCols(pd.x_offset, pd.x_size) *
                   alpha.segment(pd.x_offset, pd.x_size);
        if (pd.z_size > 0)
            eta += Z_rows.middleCols(pd.z_offset, pd.z_size) *
                   beta.segment(pd.z_offset, pd.z_size);
        theta.col(static_cast<Index>(j)) =
            pd.link == Link::Log ? eta.array().exp().matrix() : eta;
    }
    return theta;
}

Mat param_matrix(const ModelSpec& model, const DesignSet& design, const Vec& alpha,
                 const Vec& beta) {
    return param_matrix_rows(model, design, design.X, design.Z, alpha, beta);
}

Vec param_at(const ModelSpec& model, const DesignSet& design, const Vec& alpha,
             const Vec& beta, Index row) {
    const auto names = family_params(model.family);
    Vec theta(static_cast<Index>(names.size()));
    for (size_t j = 0; j < names.size(); ++j) {
        const ParamDesign& pd = design.param(names[j]);
        double eta = 0.0;
        if (pd.x_size > 0)
            eta += design.X.row(row).segment(pd.x_offset, pd.x_size).dot(
                alpha.segment(pd.x_offset, pd.x_size));
        if (pd.z_size > 0)
            eta += design.Z.row(row).segment(pd.z_offset, pd.z_size).dot(
                beta.segment(pd.z_offset, pd.z_size));
        theta[static_cast<Index>(j)] = link_inverse(pd.link, eta);
    }
    return theta;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Partials of one Gaussian transition term 0.5 log(2 pi v) + e^2/(2v) with
// respect to link-scale parameters, given (m, v) partials.
struct ChainTerm {
    double e, v;
    double n_m, n_v, n_mm, n_mv, n_vv;
    ChainTerm(double z1, double m, double var) : e(z1 - m), v(var) {
        n_m = -e / v;
        n_v = 0.5 / v - 0.5 * e * e / (v * v);
        n_mm = 1.0 / v;
        n_mv = e / (v * v);
        n_vv = -0.5 / (v * v) + e * e / (v * v * v);
    }
    double value() const { return 0.5 * (kLog2Pi + std::log(v)) + 0.5 * e * e / v; }
    double grad(double m_p, double v_p) const { return n_m * m_p + n_v * v_p; }
    double hess(double m_p, double v_p, double m_q, double v_q, double m_pq,
                double v_pq) const {
        return n_mm * m_p * m_q + n_mv * (m_p * v_q + m_q * v_p) + n_vv * v_p * v_q +
               n_m * m_pq + n_v * v_pq;
    }
};

}  // namespace

DirectDerivs direct_nll_derivs(const ModelSpec& model, const DesignSet& design,
                               const SeriesData& data, const Vec& alpha, const Vec& beta,
                               bool want_h_beta, bool want_h_full) {
    const auto names = family_params(model.family);
    const int P = static_cast<int>(names.size());
    const auto tr = data.transition_rows();
    const Index m = static_cast<Index>(tr.size());
    if (m == 0) throw InputError("no within-series transition in the data");

    const Mat theta = param_matrix(model, design, alpha, beta);

    // per-transition partial weights on the link scale
    Mat G = Mat::Zero(m, P);
    std::vector<Mat> H;  // one m-vector per parameter pair, packed column-wise
    const bool want_h = want_h_beta || want_h_full;
    if (want_h) H.assign(static_cast<size_t>(P), Mat::Zero(m, P));

    double nll = 0.0;
    for (Index idx = 0; idx < m; ++idx) {
        const Index i = tr[static_cast<size_t>(idx)];
        const double dt = data.t[i + 1] - data.t[i];
        if (!(dt > 0.0)) throw InputError("non-increasing times at row " + std::to_string(i));

        if (model.family == Family::BM) {
            const double a = theta(i, 0), sigma = theta(i, 1);
            const double mval = data.z(i, 0) + a * dt;
            const double v = sigma * sigma * dt;
            ChainTerm ct(data.z(i + 1, 0), mval, v);
            nll += ct.value();
            // parameter order (mu, sigma); m_mu = dt, v_sigma = 2v
            G(idx, 0) += ct.grad(dt, 0.0);
            G(idx, 1) += ct.grad(0.0, 2.0 * v);
            if (want_h) {
                H[0](idx, 0) += ct.hess(dt, 0.0, dt, 0.0, 0.0, 0.0);
                H[0](idx, 1) += ct.hess(dt, 0.0, 0.0, 2.0 * v, 0.0, 0.0);
                H[1](idx, 1) += ct.hess(0.0, 2.0 * v, 0.0, 2.0 * v, 0.0, 4.0 * v);
            }
        } else {
            const int ntau = model.family == Family::OU1 ? 1 : 2;
            const double tau = theta(i, ntau), kappa = theta(i, ntau + 1);
            const double dot = dt / tau;
            const double phi = std::exp(-dot);
            const double psi = phi * phi;
            const double v = -kappa * std::expm1(-2.0 * dot);
            const double phi_s = phi * dot;
            const double phi_ss = phi * dot * (dot - 1.0);
            const double psi_s = psi * 2.0 * dot;
            const double psi_ss = psi * 2.0 * dot * (2.0 * dot - 1.0);
            const double v_s = -kappa * psi_s;
            const double v_ss = -kappa * psi_ss;

            const int coords = family_dim(model.family);
            for (int c = 0; c < coords; ++c) {
                const int ia = c;  // mu (OU1) or mu_x / mu_y (OU2)
                const int is = ntau, ik = ntau + 1;
                const double a = theta(i, ia);
                const double z0 = data.z(i, c);
                const double mval = a - phi * (a - z0);
                ChainTerm ct(data.z(i + 1, c), mval, v);
                nll += ct.value();

                const double m_a = 1.0 - phi;
                const double m_s = (z0 - a) * phi_s;
                G(idx, ia) += ct.grad(m_a, 0.0);
                G(idx, is) += ct.grad(m_s, v_s);
                G(idx, ik) += ct.grad(0.0, v);
                if (want_h) {
                    const double m_ss = (z0 - a) * phi_ss;
                    H[static_cast<size_t>(ia)](idx, ia) +=
                        ct.hess(m_a, 0.0, m_a, 0.0, 0.0, 0.0);
                    H[static_cast<size_t>(ia)](idx, is) +=
                        ct.hess(m_a, 0.0, m_s, v_s, -phi_s, 0.0);
                    H[static_cast<size_t>(ia)](idx, ik) +=
                        ct.hess(m_a, 0.0, 0.0, v, 0.0, 0.0);
                    H[static_cast<size_t>(is)](idx, is) +=
                        ct.hess(m_s, v_s, m_s, v_s, m_ss, v_ss);
                    H[static_cast<size_t>(is)](idx, ik) +=
                        ct.hess(m_s, v_s, 0.0, v, 0.0, v_s);
                    H[static_cast<size_t>(ik)](idx, ik) += ct.hess(0.0, v, 0.0, v, 0.0, v);
                }
            }
        }
    }

    // chain through the design rows at transition starts
    const Index p = design.p(), r = design.r();
    Eigen::VectorXi tr_idx(m);
    for (Index idx = 0; idx < m; ++idx) tr_idx[idx] = static_cast<int>(tr[static_cast<size_t>(idx)]);
    Mat Xtr = design.X(tr_idx, Eigen::all);
    Mat Ztr = design.Z(tr_idx, Eigen::all);

    // combined (alpha, beta) coordinates and design columns per parameter
    std::vector<std::vector<Index>> coords(static_cast<size_t>(P));
    std::vector<Mat> D(static_cast<size_t>(P));
    for (int j = 0; j < P; ++j) {
        const ParamDesign& pd = design.param(names[static_cast<size_t>(j)]);
        auto& cj = coords[static_cast<size_t>(j)];
        for (Index c = 0; c < pd.x_size; ++c) cj.push_back(pd.x_offset + c);
        for (Index c = 0; c < pd.z_size; ++c) cj.push_back(p + pd.z_offset + c);
        Mat& Dj = D[static_cast<size_t>(j)];
        Dj.resize(m, pd.x_size + pd.z_size);
        if (pd.x_size > 0) Dj.leftCols(pd.x_size) = Xtr.middleCols(pd.x_offset, pd.x_size);
        if (pd.z_size > 0) Dj.rightCols(pd.z_size) = Ztr.middleCols(pd.z_offset, pd.z_size);
    }

    DirectDerivs out;
    out.nll = nll;
    out.grad = Vec::Zero(p + r);
    for (int j = 0; j < P; ++j) {
        const Vec gj = D[static_cast<size_t>(j)].transpose() * G.col(j);
        const auto& cj = coords[static_cast<size_t>(j)];
        for (size_t c = 0; c < cj.size(); ++c) out.grad[cj[c]] += gj[static_cast<Index>(c)];
    }

    if (want_h) {
        Mat Hfull = Mat::Zero(p + r, p + r);
        for (int a = 0; a < P; ++a) {
            for (int b = a; b < P; ++b) {
                const Vec w = H[static_cast<size_t>(a)].col(b);
                if (w.isZero(0.0)) continue;
                const Mat M = D[static_cast<size_t>(a)].transpose() * w.asDiagonal() *
                              D[static_cast<size_t>(b)];
                const auto& ca = coords[static_cast<size_t>(a)];
                const auto& cb = coords[static_cast<size_t>(b)];
                for (size_t i = 0; i < ca.size(); ++i) {
                    for (size_t j2 = 0; j2 < cb.size(); ++j2) {
                        Hfull(ca[i], cb[j2]) += M(static_cast<Index>(i), static_cast<Index>(j2));
                        if (a != b)
                            Hfull(cb[j2], ca[i]) +=
                                M(static_cast<Index>(i), static_cast<Index>(j2));
                    }
                }
            }
        }
        Hfull = 0.5 * (Hfull + Hfull.transpose()).eval();
        if (want_h_beta) out.h_beta = Hfull.bottomRightCorner(r, r);
        if (want_h_full) out.h_full = std::move(Hfull);
    }
    return out;
}

double neg_log_lik(const ModelSpec& model, const DesignSet& design, const SeriesData& data,
                   const Vec& alpha, const Vec& beta) {
    return direct_nll_derivs(model, design, data, alpha, beta, false, false).nll;
}

Mat simulate_path(Family family, const Vec& times, const Mat& theta, const Vec& z0,
                  Rng& rng) {
    const Index n = times.size();
    if (n == 0) throw InputError("empty time grid for simulation");
    const int dim = family_dim(family);
    if (z0.size() != dim) throw InputError("z0 dimension mismatch");
    if (theta.rows() < n - 1) throw InputError("parameter rows do not cover the time grid");

    Mat z(n, dim);
    z.row(0) = z0.transpose();
    for (Index i = 0; i + 1 < n; ++i) {
        const double dt = times[i + 1] - times[i];
        if (!(dt > 0.0)) throw InputError("non-increasing simulation times");
        if (family == Family::BM) {
            const double a = theta(i, 0), sigma = theta(i, 1);
            z(i + 1, 0) = z(i, 0) + a * dt + sigma * std::sqrt(dt) * rng.normal();
        } else {
            const int ntau = family == Family::OU1 ? 1 : 2;
            const double tau = theta(i, ntau), kappa = theta(i, ntau + 1);
            for (int c = 0; c < dim; ++c) {
                double mval, v;
                ou_transition_t(z(i, c), theta(i, c), tau, kappa, dt, mval, v);
                z(i + 1, c) = mval + std::sqrt(std::max(v, 0.0)) * rng.normal();
            }
        }
    }
    return z;
}

Mat simulate_from(const ModelSpec& model, const DesignSet& design, const Vec& alpha,
                  const Vec& beta, const Vec& times,
                  const std::map<std::string, Vec>& covariates, const Vec& z0, Rng& rng,
                  const std::map<std::string, double>& eta_offsets) {
    Mat Xn, Zn;
    design.rows_for(covariates, times.size(), Xn, Zn);
    Mat theta = param_matrix_rows(model, design, Xn, Zn, alpha, beta);
    if (!eta_offsets.empty()) {
        const auto names = family_params(model.family);
        for (size_t j = 0; j < names.size(); ++j) {
            auto it = eta_offsets.find(names[j]);
            if (it == eta_offsets.end()) continue;
            const Link link = family_link(model.family, names[j]);
            auto colj = theta.col(static_cast<Index>(j));
            if (link == Link::Log)
                colj *= std::exp(it->second);
            else
                colj.array() += it->second;
        }
    }
    return simulate_path(model.family, times, theta, z0, rng);
}

}  // namespace vcsde
