#include "vcsde/basis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace vcsde {

namespace {

// T[i] <= x < T[i+1] with i in [degree, k-1]; x assumed clamped to the
// boundary knots.
int find_span(double x, const Vec& T, int degree, int k) {
    const double* first = T.data() + degree;
    const double* last = T.data() + k + 1;
    auto it = std::upper_bound(first, last, x);
    int i = static_cast<int>(it - T.data()) - 1;
    return std::clamp(i, degree, k - 1);
}

// Cox-de Boor: values of the degree+1 basis functions that are non-zero on
// span i, written into N[0..degree] (basis indices i-degree .. i).
void basis_at(double x, const Vec& T, int degree, int span, double* N) {
    N[0] = 1.0;
    std::vector<double> left(static_cast<size_t>(degree) + 1),
        right(static_cast<size_t>(degree) + 1);
    for (int j = 1; j <= degree; ++j) {
        left[static_cast<size_t>(j)] = x - T[span + 1 - j];
        right[static_cast<size_t>(j)] = T[span + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp =
                N[r] / (right[static_cast<size_t>(r) + 1] + left[static_cast<size_t>(j - r)]);
            N[r] = saved + right[static_cast<size_t>(r) + 1] * temp;
            saved = left[static_cast<size_t>(j - r)] * temp;
        }
        N[j] = saved;
    }
}

Mat difference_penalty(int k, int order) {
    Mat D = Mat::Identity(k, k);
    for (int o = 0; o < order; ++o) {
        const Index rows = D.rows() - 1;
        Mat D1 = Mat::Zero(rows, D.rows());
        for (Index i = 0; i < rows; ++i) {
            D1(i, i) = -1.0;
            D1(i, i + 1) = 1.0;
        }
        D = D1 * D;
    }
    return D.transpose() * D;
}

bool is_near_integer(double v) { return std::abs(v - std::round(v)) < 1e-9; }

// Distinct rounded integer values of a factor/indicator column.
std::vector<double> factor_levels(const Vec& col, const std::string& name) {
    std::set<double> values;
    for (Index i = 0; i < col.size(); ++i) {
        if (!is_near_integer(col[i]))
            throw InputError("column '" + name + "' must hold integer factor levels");
        values.insert(std::round(col[i]));
    }
    return {values.begin(), values.end()};
}

}  // namespace

Mat bspline_design(const Vec& x, const Vec& knots, int degree,
                   std::vector<Index>* outside) {
    const int k = static_cast<int>(knots.size()) - degree - 1;
    const double lo = knots[degree];
    const double hi = knots[k];
    Mat B = Mat::Zero(x.size(), k);
    std::vector<double> N(static_cast<size_t>(degree) + 1);
    for (Index i = 0; i < x.size(); ++i) {
        double xi = x[i];
        if (xi < lo || xi > hi) {
            if (outside) outside->push_back(i);
            xi = std::clamp(xi, lo, hi);
        }
        const int span = find_span(xi, knots, degree, k);
        basis_at(xi, knots, degree, span, N.data());
        for (int j = 0; j <= degree; ++j) B(i, span - degree + j) = N[static_cast<size_t>(j)];
    }
    return B;
}

SplineBasis build_spline_basis(const Vec& x, int k, int penalty_order) {
    if (x.size() < 2) throw InputError("spline basis needs at least 2 covariate values");
    if (!x.allFinite()) throw InputError("non-finite covariate value in spline basis");
    if (k < 3) throw InputError("spline basis_dim must be >= 3");
    if (penalty_order < 1 || k < penalty_order + 1)
        throw InputError("spline basis_dim must exceed the penalty order");
    const int degree = std::min(3, k - 1);
    const double xmin = x.minCoeff();
    const double xmax = x.maxCoeff();
    if (!(xmax > xmin)) throw InputError("degenerate covariate range for spline basis");

    const int nseg = k - degree;
    const double h = (xmax - xmin) / nseg;
    Vec knots(k + degree + 1);
    for (int j = 0; j < k + degree + 1; ++j) knots[j] = xmin + (j - degree) * h;

    SplineBasis out;
    out.B = bspline_design(x, knots, degree);
    out.S = difference_penalty(k, penalty_order);
    out.knots = knots;
    out.degree = degree;
    return out;
}

Mat constraint_transform(const Vec& c) {
    const Index k = c.size();
    if (c.norm() <= 0.0) throw InputError("degenerate sum-to-zero constraint (empty smooth)");
    Eigen::HouseholderQR<Mat> qr(c);
    Mat Q = qr.householderQ();
    return Q.rightCols(k - 1);
}

const ParamDesign& DesignSet::param(const std::string& name) const {
    for (const auto& pd : params)
        if (pd.parameter == name) return pd;
    throw InputError("unknown parameter: " + name);
}

const TermCols& DesignSet::term(const TermRef& ref) const {
    const ParamDesign& pd = param(ref.parameter);
    if (ref.term_index < 0 || ref.term_index >= static_cast<int>(pd.terms.size()))
        throw InputError("unknown term index " + std::to_string(ref.term_index) +
                         " for parameter " + ref.parameter);
    return pd.terms[static_cast<size_t>(ref.term_index)];
}

const SmoothBlockCols& DesignSet::block(const TermRef& ref) const {
    const TermCols& tc = term(ref);
    if (tc.blocks.empty()) throw InputError("term has no coefficient block");
    if (tc.spec.by.empty() || tc.blocks.size() == 1) return tc.blocks.front();
    for (const auto& b : tc.blocks)
        if (b.by_level == ref.by_level) return b;
    throw InputError("no smooth block at by-level " + std::to_string(ref.by_level));
}

Vec DesignSet::linear_predictor(const ParamDesign& pd, const Vec& alpha, const Vec& beta) const {
    Vec eta = Vec::Zero(n());
    if (pd.x_size > 0)
        eta += X.middleCols(pd.x_offset, pd.x_size) * alpha.segment(pd.x_offset, pd.x_size);
    if (pd.z_size > 0)
        eta += Z.middleCols(pd.z_offset, pd.z_size) * beta.segment(pd.z_offset, pd.z_size);
    return eta;
}

DesignSet build_design(const std::vector<Formula>& formulas,
                       const std::map<std::string, Link>& links,
                       const SeriesData& data) {
    const Index n = data.n();
    DesignSet design;

    // first pass: layout
    Index p = 0, r = 0;
    for (const auto& f : formulas) {
        auto itl = links.find(f.parameter);
        if (itl == links.end())
            throw InputError("formula for unknown parameter: " + f.parameter);
        for (const auto& pd : design.params)
            if (pd.parameter == f.parameter)
                throw InputError("duplicate formula for parameter " + f.parameter);

        ParamDesign pd;
        pd.parameter = f.parameter;
        pd.link = itl->second;
        pd.fixed = f.fixed;
        pd.x_offset = p;
        pd.z_offset = r;

        int n_intercepts = 0;
        for (const auto& ts : f.terms) {
            TermCols tc;
            tc.spec = ts;
            switch (ts.kind) {
                case TermSpec::Kind::Intercept:
                    if (++n_intercepts > 1)
                        throw InputError("more than one intercept in formula for " + f.parameter);
                    tc.x_offset = p++;
                    tc.x_size = 1;
                    break;
                case TermSpec::Kind::Linear:
                    data.covariate(ts.covariate);
                    tc.x_offset = p++;
                    tc.x_size = 1;
                    break;
                case TermSpec::Kind::Spline: {
                    data.covariate(ts.covariate);
                    std::vector<double> levels{0.0};
                    if (!ts.by.empty()) {
                        const Vec& byc = data.covariate(ts.by);
                        levels.clear();
                        for (double lv : factor_levels(byc, ts.by)) {
                            if (lv < 0.0)
                                throw InputError("negative level in by-column " + ts.by);
                            if (lv > 0.0) levels.push_back(lv);
                        }
                        if (levels.empty())
                            throw InputError("by-column " + ts.by + " has no active rows");
                    }
                    for (double lv : levels) {
                        SmoothBlockCols b;
                        b.by_level = ts.by.empty() ? 0.0 : lv;
                        b.z_offset = r;
                        b.size = ts.basis_dim - 1;  // one column absorbed by the constraint
                        r += b.size;
                        tc.blocks.push_back(b);
                    }
                    break;
                }
                case TermSpec::Kind::RandomIntercept: {
                    const Vec& col = data.covariate(ts.covariate);
                    tc.levels = factor_levels(col, ts.covariate);
                    SmoothBlockCols b;
                    b.by_level = 0.0;
                    b.z_offset = r;
                    b.size = static_cast<Index>(tc.levels.size());
                    r += b.size;
                    tc.blocks.push_back(b);
                    break;
                }
            }
            pd.terms.push_back(std::move(tc));
        }
        pd.x_size = p - pd.x_offset;
        pd.z_size = r - pd.z_offset;
        design.params.push_back(std::move(pd));
    }

    // second pass: fill matrices and penalties
    design.X = Mat::Zero(n, p);
    design.Z = Mat::Zero(n, r);
    for (size_t fi = 0; fi < formulas.size(); ++fi) {
        ParamDesign& pd = design.params[fi];
        for (auto& tc : pd.terms) {
            const TermSpec& ts = tc.spec;
            switch (ts.kind) {
                case TermSpec::Kind::Intercept:
                    design.X.col(tc.x_offset).setOnes();
                    break;
                case TermSpec::Kind::Linear:
                    design.X.col(tc.x_offset) = data.covariate(ts.covariate);
                    break;
                case TermSpec::Kind::Spline: {
                    const Vec& xc = data.covariate(ts.covariate);
                    const Vec* byc = ts.by.empty() ? nullptr : &data.covariate(ts.by);

                    // knot range spans the rows where any block is active
                    std::vector<Index> active;
                    for (Index i = 0; i < n; ++i)
                        if (!byc || std::round((*byc)[i]) > 0.0) active.push_back(i);
                    if (active.size() < 2)
                        throw InputError("too few active rows for smooth on " + ts.covariate);
                    Vec x_active(static_cast<Index>(active.size()));
                    for (size_t a = 0; a < active.size(); ++a)
                        x_active[static_cast<Index>(a)] = xc[active[a]];

                    SplineBasis sb =
                        build_spline_basis(x_active, ts.basis_dim, ts.penalty_order);
                    tc.knots = sb.knots;
                    tc.degree = sb.degree;

                    for (auto& b : tc.blocks) {
                        std::vector<Index> rows;
                        for (Index i = 0; i < n; ++i) {
                            if (!byc)
                                rows.push_back(i);
                            else if (std::round((*byc)[i]) == b.by_level)
                                rows.push_back(i);
                        }
                        if (rows.size() < 2)
                            throw InputError("too few rows at by-level for smooth on " +
                                             ts.covariate);
                        Vec xr(static_cast<Index>(rows.size()));
                        for (size_t a = 0; a < rows.size(); ++a)
                            xr[static_cast<Index>(a)] = xc[rows[a]];
                        Mat Br = bspline_design(xr, tc.knots, tc.degree);

                        // sum-to-zero over this block's active rows
                        Vec c = Br.colwise().sum().transpose();
                        Mat Q = constraint_transform(c);
                        if (tc.constraint.size() == 0) tc.constraint = Q;
                        Mat Zr = Br * Q;
                        for (size_t a = 0; a < rows.size(); ++a)
                            design.Z.block(rows[a], b.z_offset, 1, b.size) =
                                Zr.row(static_cast<Index>(a));

                        PenaltyBlock pb;
                        pb.S = Q.transpose() * sb.S * Q;
                        pb.S = 0.5 * (pb.S + pb.S.transpose());
                        // weak shrinkage of the penalty null space
                        const double eps =
                            1e-8 * pb.S.trace() / static_cast<double>(b.size);
                        pb.S += eps * Mat::Identity(b.size, b.size);
                        pb.z_offset = b.z_offset;
                        pb.size = b.size;
                        pb.label = pd.parameter + ":s(" + ts.covariate + ")" +
                                   (ts.by.empty()
                                        ? ""
                                        : ":" + ts.by + "=" +
                                              std::to_string(static_cast<int>(b.by_level)));
                        pb.random_intercept = false;
                        pb.log_det = Eigen::SelfAdjointEigenSolver<Mat>(pb.S)
                                         .eigenvalues()
                                         .array()
                                         .log()
                                         .sum();
                        b.penalty_index = static_cast<int>(design.penalties.size());
                        design.penalties.push_back(std::move(pb));
                    }
                    break;
                }
                case TermSpec::Kind::RandomIntercept: {
                    const Vec& col = data.covariate(ts.covariate);
                    SmoothBlockCols& b = tc.blocks.front();
                    for (Index i = 0; i < n; ++i) {
                        const double v = std::round(col[i]);
                        auto it = std::lower_bound(tc.levels.begin(), tc.levels.end(), v);
                        design.Z(i, b.z_offset + (it - tc.levels.begin())) = 1.0;
                    }
                    PenaltyBlock pb;
                    pb.S = Mat::Identity(b.size, b.size);
                    pb.z_offset = b.z_offset;
                    pb.size = b.size;
                    pb.label = pd.parameter + ":re(" + ts.covariate + ")";
                    pb.random_intercept = true;
                    pb.log_det = 0.0;
                    b.penalty_index = static_cast<int>(design.penalties.size());
                    design.penalties.push_back(std::move(pb));
                    break;
                }
            }
        }
    }
    return design;
}

void DesignSet::rows_for(const std::map<std::string, Vec>& covariates, Index n_new,
                         Mat& X_new, Mat& Z_new) const {
    auto col = [&](const std::string& name) -> const Vec& {
        auto it = covariates.find(name);
        if (it == covariates.end())
            throw InputError("missing covariate for prediction rows: " + name);
        if (it->second.size() != n_new)
            throw InputError("covariate size mismatch for prediction rows: " + name);
        return it->second;
    };

    X_new = Mat::Zero(n_new, p());
    Z_new = Mat::Zero(n_new, r());
    for (const auto& pd : params) {
        for (const auto& tc : pd.terms) {
            const TermSpec& ts = tc.spec;
            switch (ts.kind) {
                case TermSpec::Kind::Intercept:
                    X_new.col(tc.x_offset).setOnes();
                    break;
                case TermSpec::Kind::Linear:
                    X_new.col(tc.x_offset) = col(ts.covariate);
                    break;
                case TermSpec::Kind::Spline: {
                    Mat Bc = bspline_design(col(ts.covariate), tc.knots, tc.degree) *
                             tc.constraint;
                    for (const auto& b : tc.blocks) {
                        if (ts.by.empty()) {
                            Z_new.middleCols(b.z_offset, b.size) = Bc;
                        } else {
                            const Vec& byc = col(ts.by);
                            for (Index i = 0; i < n_new; ++i)
                                if (std::round(byc[i]) == b.by_level)
                                    Z_new.block(i, b.z_offset, 1, b.size) = Bc.row(i);
                        }
                    }
                    break;
                }
                case TermSpec::Kind::RandomIntercept: {
                    const Vec& c = col(ts.covariate);
                    const SmoothBlockCols& b = tc.blocks.front();
                    for (Index i = 0; i < n_new; ++i) {
                        const double v = std::round(c[i]);
                        auto it = std::lower_bound(tc.levels.begin(), tc.levels.end(), v);
                        if (it != tc.levels.end() && *it == v)
                            Z_new(i, b.z_offset + (it - tc.levels.begin())) = 1.0;
                    }
                    break;
                }
            }
        }
    }
}

Mat term_grid_block(const DesignSet& design, const TermRef& ref, const Vec& grid,
                    std::vector<Index>* outside) {
    const TermCols& tc = design.term(ref);
    if (tc.spec.kind != TermSpec::Kind::Spline)
        throw InputError("term is not a smooth: " + ref.parameter + "[" +
                         std::to_string(ref.term_index) + "]");
    return bspline_design(grid, tc.knots, tc.degree, outside) * tc.constraint;
}

Vec eval_smooth(const DesignSet& design, const TermRef& ref, const Vec& beta,
                const Vec& grid) {
    const SmoothBlockCols& b = design.block(ref);
    return term_grid_block(design, ref, grid) * beta.segment(b.z_offset, b.size);
}

}  // namespace vcsde
