#pragma once

#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

#include "params.hpp"

namespace finstab {

/// Expected endogenous-return matrix, diagonal plus rank one:
///   E[Phi] = g (d - d_o) I + g d_o 1 1^T
/// with g = (eta-1)/gamma, d = b/(q alpha), d_o = q / (sqrt(NM) b + q (N-1)).
struct ExpectedPhi {
    double g = 0.0;
    double d = 0.0;
    double d_o = 0.0;
    std::size_t N = 0;

    double diagonal_entry() const { return g * d; }
    double off_diagonal_entry() const { return g * d_o; }

    /// Perron eigenvalue g (d + (N-1) d_o).
    double top_eigenvalue() const { return g * (d + static_cast<double>(N - 1) * d_o); }
    /// Eigenvalue of multiplicity N-1.
    double bulk_eigenvalue() const { return g * (d - d_o); }

    Eigen::MatrixXd dense() const {
        const auto n = static_cast<Eigen::Index>(N);
        Eigen::MatrixXd m = Eigen::MatrixXd::Constant(n, n, off_diagonal_entry());
        m.diagonal().setConstant(diagonal_entry());
        return m;
    }
};

inline ExpectedPhi expected_phi(const ModelParams& p, double b) {
    p.validate();
    if (!(b >= 1.0 - kConstraintTolerance)) throw ParamError("second moment b must be >= 1");
    const double eta = target_leverage(p);
    if (!(eta > 1.0)) throw LeverageError("target leverage eta <= 1");
    const double n = static_cast<double>(p.N);
    const double sqrt_nm = std::sqrt(n * static_cast<double>(p.M));
    ExpectedPhi e;
    e.g = (eta - 1.0) / p.gamma;
    e.d = b / (p.q * p.alpha());
    e.d_o = p.q / (sqrt_nm * b + p.q * (n - 1.0));
    e.N = p.N;
    return e;
}

/// Off-diagonal coefficient written with the (1 - N) denominator used in the
/// main-text statement; algebraically identical to ExpectedPhi::d_o.
inline double off_diagonal_coefficient_alt(const ModelParams& p, double b) {
    const double n = static_cast<double>(p.N);
    return p.q / (std::sqrt(n * static_cast<double>(p.M)) * b - p.q * (1.0 - n));
}

/// Large-N closed form: ((eta-1)/gamma) (b/(q alpha) + q/(b/alpha + q)).
inline double corsi_lambda_max(const ModelParams& p, double b) {
    p.validate();
    const double eta = target_leverage(p);
    if (!(eta > 1.0)) throw LeverageError("target leverage eta <= 1");
    const double a = p.alpha();
    return (eta - 1.0) / p.gamma * (b / (p.q * a) + p.q / (b / a + p.q));
}

/// Finite-N top eigenvalue of the expected matrix.
inline double corsi_lambda_max_finite(const ModelParams& p, double b) {
    return expected_phi(p, b).top_eigenvalue();
}

/// d(lambda~)/db = g (1/(q alpha) - q alpha/(b + q alpha)^2).
inline double corsi_db_derivative(const ModelParams& p, double b) {
    const double eta = target_leverage(p);
    const double aq = p.alpha() * p.q;
    return (eta - 1.0) / p.gamma * (1.0 / aq - aq / ((b + aq) * (b + aq)));
}

}  // namespace finstab
