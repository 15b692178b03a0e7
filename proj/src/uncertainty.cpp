#include "vcsde/uncertainty.hpp"

#include "vcsde/rng.hpp"

#include <cmath>

namespace vcsde {

Mat posterior_draws(const FitResult& fit, int K, std::uint64_t seed) {
    if (K < 2) throw InputError("posterior_draws needs K >= 2");
    const Index d = fit.gamma_dim();
    if (fit.sigma.rows() != d || fit.sigma.cols() != d)
        throw InputError("fit has no joint covariance of the right size");

    Eigen::SelfAdjointEigenSolver<Mat> es(fit.sigma);
    Vec scale = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();  // clip tiny negatives
    Mat L = es.eigenvectors() * scale.asDiagonal();

    const Vec mean = fit.gamma();
    Rng rng(seed);
    Mat draws(K, d);
    Vec eps(d);
    for (int k = 0; k < K; ++k) {
        for (Index j = 0; j < d; ++j) eps[j] = rng.normal();
        draws.row(k) = (mean + L * eps).transpose();
    }
    return draws;
}

std::map<std::string, double> covariate_medians(const SeriesData& data) {
    std::map<std::string, double> out;
    for (const auto& [name, col] : data.covariates) out[name] = median(col);
    return out;
}

void target_matrix(const FitResult& fit, const BandTarget& target, const Vec& grid, Mat& C,
                   Vec& offset, std::vector<Index>* outside) {
    const DesignSet& design = *fit.design;
    const Index M = grid.size();
    const Index pf = static_cast<Index>(fit.free_alpha.size());
    const Index d = fit.gamma_dim();

    std::vector<Index> alpha_pos(static_cast<size_t>(design.p()), -1);
    for (size_t i = 0; i < fit.free_alpha.size(); ++i)
        alpha_pos[static_cast<size_t>(fit.free_alpha[i])] = static_cast<Index>(i);

    C = Mat::Zero(M, d);
    offset = Vec::Zero(M);

    auto add_alpha_col = [&](Index x_col, const Vec& values) {
        const Index pos = alpha_pos[static_cast<size_t>(x_col)];
        if (pos >= 0)
            C.col(pos) += values;
        else
            offset += values * fit.alpha[x_col];  // fixed coefficient
    };

    if (target.parameter_scale) {
        // rebuild full design rows: grid covariate varies, everything else
        // held at the supplied values
        std::map<std::string, Vec> cov;
        cov[target.grid_covariate] = grid;
        for (const auto& [name, value] : target.fixed_covariates)
            if (name != target.grid_covariate) cov[name] = Vec::Constant(M, value);

        Mat Xn, Zn;
        design.rows_for(cov, M, Xn, Zn);
        const ParamDesign& pd = design.param(target.parameter);
        for (Index c = 0; c < pd.x_size; ++c) add_alpha_col(pd.x_offset + c, Xn.col(pd.x_offset + c));
        if (pd.z_size > 0) C.middleCols(pf + pd.z_offset, pd.z_size) = Zn.middleCols(pd.z_offset, pd.z_size);

        if (outside) {
            // hull check against the parameter's smooth terms on the grid covariate
            for (const auto& tc : pd.terms) {
                if (tc.spec.kind != TermSpec::Kind::Spline ||
                    tc.spec.covariate != target.grid_covariate)
                    continue;
                std::vector<Index> out_idx;
                bspline_design(grid, tc.knots, tc.degree, &out_idx);
                for (Index i : out_idx)
                    if (std::find(outside->begin(), outside->end(), i) == outside->end())
                        outside->push_back(i);
            }
        }
        return;
    }

    if (target.terms.empty()) throw InputError("band target has no terms");
    for (const TermRef& ref : target.terms) {
        const TermCols& tc = design.term(ref);
        switch (tc.spec.kind) {
            case TermSpec::Kind::Spline: {
                const SmoothBlockCols& b = design.block(ref);
                std::vector<Index> out_idx;
                C.middleCols(pf + b.z_offset, b.size) +=
                    term_grid_block(design, ref, grid, outside ? &out_idx : nullptr);
                if (outside)
                    for (Index i : out_idx)
                        if (std::find(outside->begin(), outside->end(), i) == outside->end())
                            outside->push_back(i);
                break;
            }
            case TermSpec::Kind::Intercept:
                add_alpha_col(tc.x_offset, Vec::Ones(M));
                break;
            case TermSpec::Kind::Linear: {
                // a linear term in a smooth-scale target is evaluated at a
                // fixed covariate value (1 unless supplied), e.g. the
                // exposure indicator of a difference function
                double value = 1.0;
                auto it = target.fixed_covariates.find(tc.spec.covariate);
                if (it != target.fixed_covariates.end()) value = it->second;
                add_alpha_col(tc.x_offset, Vec::Constant(M, value));
                break;
            }
            case TermSpec::Kind::RandomIntercept:
                throw InputError("random-intercept terms are not band targets");
        }
    }
}

namespace {

Band band_common(const FitResult& fit, const BandTarget& target, const Vec& grid, double level,
                 int K, BandType type) {
    if (!(level > 0.0 && level < 1.0)) throw InputError("band level must be in (0, 1)");
    if (K < 2) throw InputError("bands need K >= 2 posterior draws");
    Band band;
    band.grid = grid;
    band.level = level;
    band.type = type;
    (void)fit;
    (void)target;
    return band;
}

void find_zero_exclusions(Band& band) {
    for (Index m = 0; m < band.grid.size(); ++m)
        if (band.lower[m] > 0.0 || band.upper[m] < 0.0) band.zero_excluded.push_back(m);
}

}  // namespace

Band pointwise_band(const FitResult& fit, const BandTarget& target, const Vec& grid,
                    double level, int K, std::uint64_t seed) {
    Band band = band_common(fit, target, grid, level, K, BandType::Pointwise);
    Mat C;
    Vec off;
    target_matrix(fit, target, grid, C, off, &band.outside_hull);

    const Mat draws = posterior_draws(fit, K, seed);
    Mat Y = draws * C.transpose();            // K x M
    Y.rowwise() += off.transpose();
    Vec est = C * fit.gamma() + off;
    if (target.parameter_scale) {
        const Link link = fit.design->param(target.parameter).link;
        if (link == Link::Log) {
            Y = Y.array().exp();
            est = est.array().exp();
        }
    }

    const Index M = grid.size();
    band.estimate = est;
    band.lower.resize(M);
    band.upper.resize(M);
    std::vector<double> col(static_cast<size_t>(K));
    for (Index m = 0; m < M; ++m) {
        for (int k = 0; k < K; ++k) col[static_cast<size_t>(k)] = Y(k, m);
        band.lower[m] = quantile_type7(col, 0.5 * (1.0 - level));
        band.upper[m] = quantile_type7(col, 1.0 - 0.5 * (1.0 - level));
    }
    find_zero_exclusions(band);
    return band;
}

Band simultaneous_band(const FitResult& fit, const BandTarget& target, const Vec& grid,
                       double level, int K, std::uint64_t seed) {
    Band band = band_common(fit, target, grid, level, K, BandType::Simultaneous);
    Mat C;
    Vec off;
    target_matrix(fit, target, grid, C, off, &band.outside_hull);

    const Vec gamma_hat = fit.gamma();
    Mat draws = posterior_draws(fit, K, seed);
    draws.rowwise() -= gamma_hat.transpose();   // draws of gamma_hat - gamma
    const Mat D = draws * C.transpose();        // K x M deviations on the link scale

    const Index M = grid.size();
    Vec sd(M);
    const Vec mean_dev = D.colwise().mean();
    for (Index m = 0; m < M; ++m)
        sd[m] = std::sqrt((D.col(m).array() - mean_dev[m]).square().sum() /
                          static_cast<double>(K - 1));
    const double sd_tol = 1e-12 * std::max(sd.maxCoeff(), 1e-300);
    for (Index m = 0; m < M; ++m)
        if (sd[m] <= sd_tol) band.degenerate.push_back(m);

    std::vector<double> H(static_cast<size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
        double hmax = 0.0;
        for (Index m = 0; m < M; ++m) {
            if (sd[m] <= sd_tol) continue;
            hmax = std::max(hmax, std::abs(D(k, m)) / sd[m]);
        }
        H[static_cast<size_t>(k)] = hmax;
    }
    const double q = quantile_type7(H, level);

    Vec est = C * gamma_hat + off;
    band.estimate = est;
    band.lower = est - q * sd;
    band.upper = est + q * sd;
    if (target.parameter_scale) {
        const Link link = fit.design->param(target.parameter).link;
        if (link == Link::Log) {
            band.estimate = band.estimate.array().exp();
            band.lower = band.lower.array().exp();
            band.upper = band.upper.array().exp();
        }
    }
    find_zero_exclusions(band);
    return band;
}

}  // namespace vcsde
