#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "params.hpp"
#include "sparse.hpp"
#include "stats.hpp"

namespace finstab {

/// One atom of a discrete investment size distribution.
struct WeightAtom {
    double value;
    double probability;
};

/// X: asset-by-institution investment amounts.
struct HoldingsMatrix {
    SparseMatrix x;
    std::uint64_t seed = 0;
};

/// W: column-stochastic portfolio weights with the same support as X.
/// Institutions that invest in nothing keep an all-zero column.
struct PortfolioWeights {
    SparseMatrix w;
    std::vector<std::uint32_t> empty_columns;
};

/// Samples an N x M matrix whose entries are independently nonzero with
/// `probability` and whose nonzero values follow `atoms`. Never allocates
/// N*M storage: gaps between nonzeros are drawn geometrically along the
/// column-major linear index.
inline HoldingsMatrix sample_holdings(std::size_t N, std::size_t M, double probability,
                                      std::span<const WeightAtom> atoms, std::uint64_t seed) {
    if (!(probability >= 0.0 && probability <= 1.0)) {
        throw ParamError("investment probability must lie in [0, 1]");
    }
    if (atoms.empty()) throw ParamError("weight distribution is empty");
    if (N > std::numeric_limits<std::uint32_t>::max() || M > std::numeric_limits<std::uint32_t>::max()) {
        throw ParamError("matrix dimensions exceed 32-bit index range");
    }
    std::vector<double> cumulative;
    double acc = 0.0;
    for (const auto& a : atoms) {
        if (!(a.probability >= 0.0) || !(a.value > 0.0)) throw ParamError("invalid weight atom");
        acc += a.probability;
        cumulative.push_back(acc);
    }
    if (std::abs(acc - 1.0) > kConstraintTolerance) throw ParamError("weight probabilities must sum to 1");

    HoldingsMatrix out;
    out.seed = seed;
    out.x.rows = N;
    out.x.cols = M;
    if (probability == 0.0 || N == 0 || M == 0) return out;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::uint64_t total = static_cast<std::uint64_t>(N) * M;
    out.x.entries.reserve(static_cast<std::size_t>(1.2 * probability * static_cast<double>(total)) + 16);

    auto draw_value = [&] {
        if (atoms.size() == 1) return atoms[0].value;
        const double u = unit(rng) * acc;
        for (std::size_t k = 0; k + 1 < atoms.size(); ++k) {
            if (u < cumulative[k]) return atoms[k].value;
        }
        return atoms.back().value;
    };

    auto emit = [&](std::uint64_t linear) {
        const auto col = static_cast<std::uint32_t>(linear / N);
        const auto row = static_cast<std::uint32_t>(linear % N);
        out.x.entries.push_back({row, col, draw_value()});
    };

    if (probability == 1.0) {
        for (std::uint64_t k = 0; k < total; ++k) emit(k);
        return out;
    }
    std::geometric_distribution<std::uint64_t> gap(probability);
    for (std::uint64_t k = gap(rng); k < total; k += gap(rng) + 1) emit(k);
    return out;
}

/// Two-point ensemble: B with probability p_B, s otherwise.
inline HoldingsMatrix sample_holdings(const ModelParams& p, const HeterogeneityParams& h, std::uint64_t seed) {
    if (p.N < 1 || p.M < 1) throw ParamError("N and M must be >= 1");
    if (!(p.q >= 0.0)) throw ParamError("q must be >= 0");
    h.validate();
    const WeightAtom atoms[] = {{h.B, h.p_B}, {h.s, h.p_s}};
    return sample_holdings(p.N, p.M, p.edge_probability(), atoms, seed);
}

inline PortfolioWeights to_weights(const HoldingsMatrix& x) {
    PortfolioWeights out;
    out.w.rows = x.x.rows;
    out.w.cols = x.x.cols;
    out.w.entries = x.x.entries;
    const auto sums = x.x.column_sums();
    for (auto& e : out.w.entries) e.value /= sums[e.col];
    for (std::uint32_t j = 0; j < sums.size(); ++j) {
        if (sums[j] == 0.0) out.empty_columns.push_back(j);
    }
    return out;
}

/// Per-matrix empirical moments averaged over an ensemble of samples.
struct EnsembleSummary {
    std::size_t samples = 0;
    Moment fill_fraction;
    Moment mean_x;                 // E[X_ij]
    Moment mean_w;                 // E[W_ij]
    Moment mean_sq_nonzero;        // E[K^2] over stored values
    Moment empty_column_fraction;
    Moment mean_column_degree;     // assets per institution
    Moment mean_row_degree;        // institutions per asset
    std::map<std::size_t, std::uint64_t> column_degree_histogram;
    std::map<std::size_t, std::uint64_t> row_degree_histogram;
};

/// Streaming form of ensemble_stats for sample counts that should not be
/// held in memory at once.
class EnsembleAccumulator {
public:
    void add(const HoldingsMatrix& h) {
        const auto& x = h.x;
        const double cells = static_cast<double>(x.rows) * static_cast<double>(x.cols);
        const auto w = to_weights(h);
        double sum_x = 0.0, sum_sq = 0.0, sum_w = 0.0;
        for (const auto& e : x.entries) {
            sum_x += e.value;
            sum_sq += e.value * e.value;
        }
        for (const auto& e : w.w.entries) sum_w += e.value;
        std::vector<std::size_t> col_deg(x.cols, 0), row_deg(x.rows, 0);
        for (const auto& e : x.entries) {
            ++col_deg[e.col];
            ++row_deg[e.row];
        }
        for (auto d : col_deg) ++summary_.column_degree_histogram[d];
        for (auto d : row_deg) ++summary_.row_degree_histogram[d];

        fill_.add(static_cast<double>(x.nnz()) / cells);
        mean_x_.add(sum_x / cells);
        mean_w_.add(sum_w / cells);
        if (x.nnz() > 0) sq_.add(sum_sq / static_cast<double>(x.nnz()));
        empty_.add(static_cast<double>(w.empty_columns.size()) / static_cast<double>(x.cols));
        col_.add(static_cast<double>(x.nnz()) / static_cast<double>(x.cols));
        row_.add(static_cast<double>(x.nnz()) / static_cast<double>(x.rows));
        ++summary_.samples;
    }

    EnsembleSummary summary() const {
        EnsembleSummary s = summary_;
        s.fill_fraction = to_moment(fill_);
        s.mean_x = to_moment(mean_x_);
        s.mean_w = to_moment(mean_w_);
        s.mean_sq_nonzero = to_moment(sq_);
        s.empty_column_fraction = to_moment(empty_);
        s.mean_column_degree = to_moment(col_);
        s.mean_row_degree = to_moment(row_);
        return s;
    }

private:
    EnsembleSummary summary_;
    RunningStats fill_, mean_x_, mean_w_, sq_, empty_, col_, row_;
};

inline EnsembleSummary ensemble_stats(std::span<const HoldingsMatrix> samples) {
    if (samples.empty()) throw std::invalid_argument("ensemble_stats needs at least one sample");
    EnsembleAccumulator acc;
    for (const auto& s : samples) acc.add(s);
    return acc.summary();
}

// Plain-text triplet format:
//   # <kind> rows=<N> cols=<M> seed=<seed> nnz=<count>
//   i j value
inline void write_triplets(std::ostream& os, const SparseMatrix& m, std::uint64_t seed, const std::string& kind) {
    os << "# " << kind << " rows=" << m.rows << " cols=" << m.cols << " seed=" << seed << " nnz=" << m.nnz()
       << '\n';
    const auto old_precision = os.precision(17);
    for (const auto& e : m.entries) os << e.row << ' ' << e.col << ' ' << e.value << '\n';
    os.precision(old_precision);
}

struct TripletFile {
    std::string kind;
    std::uint64_t seed = 0;
    SparseMatrix matrix;
};

inline TripletFile read_triplets(std::istream& is) {
    TripletFile out;
    std::string line;
    if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw std::runtime_error("triplet file: missing header");
    std::istringstream header(line.substr(2));
    header >> out.kind;
    std::string field;
    std::size_t nnz = 0;
    while (header >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        const auto key = field.substr(0, eq);
        const auto value = field.substr(eq + 1);
        if (key == "rows") out.matrix.rows = std::stoull(value);
        else if (key == "cols") out.matrix.cols = std::stoull(value);
        else if (key == "seed") out.seed = std::stoull(value);
        else if (key == "nnz") nnz = std::stoull(value);
    }
    Triplet t{};
    while (is >> t.row >> t.col >> t.value) {
        if (t.row >= out.matrix.rows || t.col >= out.matrix.cols) throw std::runtime_error("triplet file: index out of range");
        out.matrix.entries.push_back(t);
    }
    if (out.matrix.entries.size() != nnz) throw std::runtime_error("triplet file: nnz mismatch");
    return out;
}

}  // namespace finstab
