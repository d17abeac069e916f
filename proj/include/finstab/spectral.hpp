#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "network.hpp"
#include "parallel.hpp"
#include "params.hpp"
#include "sparse.hpp"
#include "stats.hpp"

namespace finstab {

/// Symmetric PSD operator v -> prefactor * A (A^T v) for a sparse N x M factor A.
/// With A = W and prefactor ((eta-1)/gamma) alpha^2 this is the endogenous-return
/// matrix; with A = X and prefactor kappa it is the surrogate used by the
/// replica route. The N x N product is never formed.
struct PhiOperator {
    SparseMatrix factor;
    double prefactor = 0.0;

    std::size_t dim() const { return factor.rows; }

    void apply(std::span<const double> v, std::span<double> out, std::vector<double>& scratch) const {
        scratch.resize(factor.cols);
        factor.multiply_transpose(v, scratch);
        factor.multiply(scratch, out);
        for (auto& y : out) y *= prefactor;
    }

    std::vector<double> apply(std::span<const double> v) const {
        std::vector<double> out(dim()), scratch;
        apply(v, out, scratch);
        return out;
    }

    static PhiOperator from_weights(const PortfolioWeights& w, double kappa0) { return {w.w, kappa0}; }
    static PhiOperator from_holdings(const HoldingsMatrix& x, double kappa) { return {x.x, kappa}; }
};

enum class EigenSolver { lanczos, power };

struct SolverOptions {
    double tol = 1e-10;             // relative residual ||Av - theta v|| <= tol * theta
    std::size_t max_iter = 0;       // operator applications; 0 = 10 * N
    EigenSolver solver = EigenSolver::lanczos;
    std::size_t krylov_dim = 80;    // Lanczos basis size before restart
    std::uint64_t start_seed = 0x5eedULL;
};

struct EigenResult {
    double value = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> vector;     // unit-norm top eigenvector estimate
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline std::vector<double> random_unit(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<double> v(n);
    for (auto& x : v) x = normal(rng);
    const double nv = norm(v);
    for (auto& x : v) x /= nv;
    return v;
}

inline double residual_norm(const PhiOperator& op, std::span<const double> v, double theta,
                            std::vector<double>& work, std::vector<double>& scratch) {
    work.resize(v.size());
    op.apply(v, work, scratch);
    double r2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = work[i] - theta * v[i];
        r2 += d * d;
    }
    return std::sqrt(r2);
}

inline EigenResult power_iteration(const PhiOperator& op, const SolverOptions& opt, std::size_t max_iter) {
    const std::size_t n = op.dim();
    EigenResult res;
    std::vector<double> v = random_unit(n, opt.start_seed), w(n), scratch;
    constexpr std::size_t check_every = 10;
    while (res.iterations < max_iter) {
        op.apply(v, w, scratch);
        ++res.iterations;
        const double theta = dot(v, w);
        if (res.iterations % check_every == 0 || res.iterations == max_iter) {
            double r2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) r2 += (w[i] - theta * v[i]) * (w[i] - theta * v[i]);
            res.value = theta;
            if (std::sqrt(r2) <= opt.tol * std::abs(theta) || theta == 0.0) {
                res.converged = true;
                break;
            }
        }
        const double nw = norm(w);
        if (nw == 0.0) {
            res.value = 0.0;
            res.converged = true;
            break;
        }
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
    }
    res.vector = std::move(v);
    return res;
}

/// Lanczos with full reorthogonalisation and explicit restarts from the
/// current Ritz vector.
inline EigenResult lanczos(const PhiOperator& op, const SolverOptions& opt, std::size_t max_iter) {
    const std::size_t n = op.dim();
    const std::size_t kmax = std::max<std::size_t>(2, std::min(n, opt.krylov_dim));
    EigenResult res;
    std::vector<double> start = random_unit(n, opt.start_seed);
    std::vector<double> w(n), scratch;
    std::vector<std::vector<double>> basis;
    basis.reserve(kmax);

    while (res.iterations < max_iter) {
        basis.clear();
        basis.push_back(start);
        std::vector<double> alpha, beta;
        double theta = 0.0;
        Eigen::VectorXd ritz;
        bool restart = false;
        while (!restart) {
            const auto& v = basis.back();
            op.apply(v, w, scratch);
            ++res.iterations;
            alpha.push_back(dot(v, w));
            for (int pass = 0; pass < 2; ++pass) {
                for (const auto& b : basis) {
                    const double c = dot(b, w);
                    for (std::size_t i = 0; i < n; ++i) w[i] -= c * b[i];
                }
            }
            const double b_next = norm(w);

            const auto k = alpha.size();
            Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(k));
            Eigen::VectorXd sub = Eigen::VectorXd::Map(beta.data(), static_cast<Eigen::Index>(k - 1));
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
            tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
            theta = tri.eigenvalues()(static_cast<Eigen::Index>(k - 1));
            ritz = tri.eigenvectors().col(static_cast<Eigen::Index>(k - 1));
            const double resid = b_next * std::abs(ritz(static_cast<Eigen::Index>(k - 1)));
            const double scale = std::max(std::abs(theta), std::numeric_limits<double>::min());
            const bool invariant = b_next <= 1e-14 * std::max(scale, std::abs(alpha.back()));

            if (resid <= opt.tol * scale || invariant || theta == 0.0) {
                res.converged = true;
                restart = true;
            } else if (k >= kmax || k >= n || res.iterations >= max_iter) {
                restart = true;
            } else {
                beta.push_back(b_next);
                std::vector<double> next(n);
                for (std::size_t i = 0; i < n; ++i) next[i] = w[i] / b_next;
                basis.push_back(std::move(next));
            }
        }
        std::vector<double> y(n, 0.0);
        for (std::size_t j = 0; j < basis.size(); ++j) {
            const double c = ritz(static_cast<Eigen::Index>(j));
            for (std::size_t i = 0; i < n; ++i) y[i] += c * basis[j][i];
        }
        const double ny = norm(y);
        if (ny > 0.0) {
            for (auto& x : y) x /= ny;
        }
        res.value = theta;
        res.vector = y;
        if (res.converged) break;
        start = std::move(y);
    }
    return res;
}

}  // namespace detail

/// Largest eigenvalue of a PSD operator. Non-convergence within max_iter
/// operator applications returns the best iterate with converged = false.
inline EigenResult lambda_max(const PhiOperator& op, const SolverOptions& opt = {}) {
    if (!(opt.tol > 0.0)) throw std::invalid_argument("lambda_max: tol must be > 0");
    const std::size_t n = op.dim();
    if (n == 0) throw std::invalid_argument("lambda_max: empty operator");
    const std::size_t max_iter = opt.max_iter > 0 ? opt.max_iter : 10 * n;
    if (op.factor.nnz() == 0 || op.prefactor == 0.0) {
        EigenResult r;
        r.converged = true;
        r.vector = detail::random_unit(n, opt.start_seed);
        return r;
    }
    return opt.solver == EigenSolver::lanczos ? detail::lanczos(op, opt, max_iter)
                                              : detail::power_iteration(op, opt, max_iter);
}

enum class Method { diagonalization, corsi, replica };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::diagonalization: return "diagonalization";
        case Method::corsi: return "corsi";
        case Method::replica: return "replica";
    }
    return "unknown";
}

inline Method parse_method(const std::string& s) {
    if (s == "diagonalization" || s == "diag") return Method::diagonalization;
    if (s == "corsi") return Method::corsi;
    if (s == "replica") return Method::replica;
    throw std::invalid_argument("unknown method: " + s);
}

/// A largest-eigenvalue estimate. stderr is zero for single-instance or
/// closed-form values.
struct EigEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;
    Method method = Method::diagonalization;
    std::size_t iterations = 0;
    std::size_t nonconverged = 0;
    bool converged = true;
};

struct McOptions {
    std::size_t workers = 1;
    SolverOptions solver;
};

/// One realization of Phi = ((eta-1)/gamma) alpha^2 W W^T.
inline PhiOperator sample_phi(const ModelParams& p, const HeterogeneityParams& h, std::uint64_t seed) {
    const auto d = derive(p, h);
    return PhiOperator::from_weights(to_weights(sample_holdings(p, h, seed)), d.kappa0);
}

/// Monte Carlo estimate of E[lambda_max] over operators produced by
/// `make_op(sample_seed)`. Sample k uses derive_seed(seed, k); the reduction
/// runs in sample order so the result is independent of the worker count.
template <typename MakeOp>
EigEstimate mc_lambda_max_of(std::size_t n_samples, std::uint64_t seed, const McOptions& opt, MakeOp&& make_op) {
    if (n_samples < 1) throw std::invalid_argument("mc_lambda_max: n_samples must be >= 1");
    std::vector<EigenResult> results(n_samples);
    parallel_for(n_samples, opt.workers, [&](std::size_t k) {
        auto r = lambda_max(make_op(derive_seed(seed, k)), opt.solver);
        r.vector.clear();
        r.vector.shrink_to_fit();
        results[k] = std::move(r);
    });
    RunningStats stats;
    EigEstimate est;
    for (const auto& r : results) {
        stats.add(r.value);
        est.iterations += r.iterations;
        if (!r.converged) ++est.nonconverged;
    }
    est.value = stats.mean();
    est.std_error = stats.stderr_of_mean();
    est.samples = n_samples;
    est.method = Method::diagonalization;
    est.converged = est.nonconverged == 0;
    return est;
}

inline EigEstimate mc_lambda_max(const ModelParams& p, const HeterogeneityParams& h, std::size_t n_samples,
                                 std::uint64_t seed, const McOptions& opt = {}) {
    const auto d = derive(p, h);
    return mc_lambda_max_of(n_samples, seed, opt, [&](std::uint64_t s) {
        return PhiOperator::from_weights(to_weights(sample_holdings(p, h, s)), d.kappa0);
    });
}

}  // namespace finstab
