#include "vcsde/types.hpp"

#include <algorithm>
#include <cmath>

namespace vcsde {

std::vector<Index> SeriesData::series_offsets() const {
    std::vector<Index> offsets;
    const Index nrow = n();
    for (Index i = 0; i < nrow; ++i) {
        if (i == 0 || series[static_cast<size_t>(i)] != series[static_cast<size_t>(i - 1)])
            offsets.push_back(i);
    }
    offsets.push_back(nrow);
    return offsets;
}

std::vector<Index> SeriesData::transition_rows() const {
    std::vector<Index> rows;
    const Index nrow = n();
    rows.reserve(static_cast<size_t>(nrow));
    for (Index i = 0; i + 1 < nrow; ++i) {
        if (series[static_cast<size_t>(i)] == series[static_cast<size_t>(i + 1)])
            rows.push_back(i);
    }
    return rows;
}

void SeriesData::validate() const {
    const Index nrow = n();
    if (nrow == 0) throw InputError("empty data set");
    if (z.rows() != nrow) throw InputError("observation matrix size mismatch");
    if (z.cols() != 1 && z.cols() != 2) throw InputError("observations must be 1-D or 2-D");
    if (series.size() != static_cast<size_t>(nrow)) throw InputError("series id size mismatch");
    if (!t.allFinite() || !z.allFinite()) throw InputError("non-finite time or observation");
    for (const auto& [name, col] : covariates) {
        if (col.size() != nrow) throw InputError("covariate column size mismatch: " + name);
        if (!col.allFinite()) throw InputError("non-finite covariate: " + name);
    }
    // grouped series ids and strictly increasing times within each series
    std::vector<int> seen;
    for (Index i = 0; i < nrow; ++i) {
        const int id = series[static_cast<size_t>(i)];
        if (i > 0 && id != series[static_cast<size_t>(i - 1)]) {
            if (std::find(seen.begin(), seen.end(), id) != seen.end())
                throw InputError("series rows must be contiguous (id " + std::to_string(id) + ")");
            seen.push_back(series[static_cast<size_t>(i - 1)]);
        }
        if (i > 0 && id == series[static_cast<size_t>(i - 1)] && !(t[i] > t[i - 1]))
            throw InputError("times not strictly increasing within series " + std::to_string(id) +
                             " at row " + std::to_string(i));
    }
    if (!obs_cov.empty()) {
        if (obs_cov.size() != static_cast<size_t>(nrow))
            throw InputError("obs_cov size mismatch");
        for (size_t i = 0; i < obs_cov.size(); ++i) {
            const Mat2& om = obs_cov[i];
            if (!om.allFinite()) continue;  // non-finite marks a skipped observation
            if (std::abs(om(0, 1) - om(1, 0)) > 1e-8 * (1.0 + om.cwiseAbs().maxCoeff()))
                throw InputError("asymmetric obs_cov at row " + std::to_string(i));
            Eigen::SelfAdjointEigenSolver<Mat2> es(om);
            if (es.eigenvalues().minCoeff() < -1e-8 * (1.0 + om.cwiseAbs().maxCoeff()))
                throw InputError("indefinite obs_cov at row " + std::to_string(i));
        }
    }
}

double quantile_type7(std::vector<double> x, double p) {
    if (x.empty()) throw InputError("quantile of empty sample");
    if (p <= 0.0) return *std::min_element(x.begin(), x.end());
    if (p >= 1.0) return *std::max_element(x.begin(), x.end());
    std::sort(x.begin(), x.end());
    const double h = (static_cast<double>(x.size()) - 1.0) * p;
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, x.size() - 1);
    const double w = h - std::floor(h);
    return x[lo] + w * (x[hi] - x[lo]);
}

double median(const Vec& x) {
    std::vector<double> v(x.data(), x.data() + x.size());
    return quantile_type7(std::move(v), 0.5);
}

}  // namespace vcsde
