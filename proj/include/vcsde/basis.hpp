#pragma once

#include "vcsde/types.hpp"

#include <optional>

namespace vcsde {

struct TermSpec {
    enum class Kind { Intercept, Linear, Spline, RandomIntercept };
    Kind kind = Kind::Intercept;
    std::string covariate;   // empty for intercept
    int basis_dim = 10;      // spline only, k >= 3
    std::string by;          // optional indicator / factor column
    int penalty_order = 2;   // spline difference-penalty order
};

struct Formula {
    std::string parameter;        // e.g. "mu", "sigma", "tau", "kappa"
    std::vector<TermSpec> terms;
    bool fixed = false;           // hold this parameter's coefficients at init
};

/// Unconstrained B-spline basis over the observed covariate range with an
/// order-d difference penalty. S has exactly penalty_order zero eigenvalues.
struct SplineBasis {
    Mat B;      // n x k
    Mat S;      // k x k, D'D
    Vec knots;  // full knot vector, length k + degree + 1
    int degree; // polynomial degree (3 unless k forces lower)
};

SplineBasis build_spline_basis(const Vec& x, int k, int penalty_order);

/// Rows of the B-spline design for arbitrary evaluation points. Points
/// outside the boundary knots are clamped (constant extrapolation); their
/// indices are reported through `outside` when non-null.
Mat bspline_design(const Vec& x, const Vec& knots, int degree,
                   std::vector<Index>* outside = nullptr);

/// k x (k-1) orthonormal transform whose columns span the null space of
/// c'; applying it to a basis enforces the sum-to-zero constraint c'beta = 0.
Mat constraint_transform(const Vec& c);

struct PenaltyBlock {
    Mat S;               // q x q, symmetric positive definite
    Index z_offset = 0;  // first column of this block in Z
    Index size = 0;
    std::string label;
    bool random_intercept = false;
    double log_det = 0.0;  // log det S, cached
};

/// Identifies one smooth function: a term of a parameter's formula and,
/// for factor-by difference smooths, which level.
struct TermRef {
    std::string parameter;
    int term_index = 0;
    double by_level = 1.0;  // ignored unless the term has a factor by-column
};

struct SmoothBlockCols {
    double by_level = 0.0;   // 0 = plain smooth (no by)
    Index z_offset = 0;      // global Z column offset
    Index size = 0;
    int penalty_index = -1;
};

struct TermCols {
    TermSpec spec;
    Index x_offset = -1;  // global X column, -1 if none
    Index x_size = 0;
    std::vector<SmoothBlockCols> blocks;  // spline / random-intercept blocks
    Vec knots;
    int degree = 0;
    Mat constraint;              // k x (k-1), spline terms only
    std::vector<double> levels;  // random-intercept factor levels (sorted)
};

struct ParamDesign {
    std::string parameter;
    Link link = Link::Identity;
    bool fixed = false;
    Index x_offset = 0, x_size = 0;
    Index z_offset = 0, z_size = 0;
    std::vector<TermCols> terms;
};

/// Full design: fixed-effect matrix X, random-effect matrix Z, penalty
/// blocks over Z columns, and the (parameter, term) -> column map. Columns
/// of one parameter are contiguous in both X and Z.
struct DesignSet {
    Mat X, Z;
    std::vector<PenaltyBlock> penalties;
    std::vector<ParamDesign> params;

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }
    Index r() const { return Z.cols(); }

    const ParamDesign& param(const std::string& name) const;
    const TermCols& term(const TermRef& ref) const;
    const SmoothBlockCols& block(const TermRef& ref) const;

    /// eta_param = X_p alpha_p + Z_p beta_p for every row.
    Vec linear_predictor(const ParamDesign& pd, const Vec& alpha, const Vec& beta) const;

    /// Rebuild design rows for new covariate values (same terms, knots,
    /// constraints and levels as the training design). Unknown
    /// random-intercept levels produce all-zero indicator columns.
    void rows_for(const std::map<std::string, Vec>& covariates, Index n_new,
                  Mat& X_new, Mat& Z_new) const;
};

DesignSet build_design(const std::vector<Formula>& formulas,
                       const std::map<std::string, Link>& links,
                       const SeriesData& data);

/// Constrained basis for one smooth evaluated on a grid (M x block size).
/// The by-indicator is NOT applied: this is the smooth function itself.
Mat term_grid_block(const DesignSet& design, const TermRef& ref, const Vec& grid,
                    std::vector<Index>* outside = nullptr);

/// C_grid beta for one smooth term; `beta` is the full random-coefficient
/// vector of the design.
Vec eval_smooth(const DesignSet& design, const TermRef& ref, const Vec& beta,
                const Vec& grid);

}  // namespace vcsde
