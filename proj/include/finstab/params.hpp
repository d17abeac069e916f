#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace finstab {

/// Raised for any model input that violates a domain constraint.
class ParamError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when the target leverage does not exceed 1, which would make the
/// endogenous-return operator non-positive.
class LeverageError : public ParamError {
public:
    using ParamError::ParamError;
};

inline constexpr double kConstraintTolerance = 1e-12;

struct ModelParams {
    std::size_t N = 200;       // assets
    std::size_t M = 300;       // institutions
    double q = 8.0;            // diversification
    double zeta = 1.85;        // risk appetite
    double sigma_s2 = 0.009;   // systematic variance
    double sigma_d2 = 0.03;    // diversifiable variance
    double gamma = 50.0;       // liquidity
    double sigma_f2 = 1e-4;    // factor shock variance
    double sigma_nu2 = 1e-4;   // idiosyncratic shock variance

    double alpha() const { return std::sqrt(static_cast<double>(N) / static_cast<double>(M)); }

    /// Probability that a given institution invests in a given asset.
    double edge_probability() const {
        return q / std::sqrt(static_cast<double>(N) * static_cast<double>(M));
    }

    void validate() const {
        if (N < 1) throw ParamError("N must be >= 1");
        if (M < 1) throw ParamError("M must be >= 1");
        if (!(q > 0.0)) throw ParamError("q must be > 0");
        if (!(gamma > 0.0)) throw ParamError("gamma must be > 0");
        if (!(zeta > 0.0)) throw ParamError("zeta must be > 0");
        if (!(sigma_s2 >= 0.0) || !(sigma_d2 >= 0.0) || !(sigma_f2 >= 0.0) || !(sigma_nu2 >= 0.0)) {
            throw ParamError("variances must be >= 0");
        }
        if (edge_probability() > 1.0) {
            throw ParamError("q must not exceed sqrt(N*M) (investment probability > 1)");
        }
    }

    /// Non-fatal diagnostics. The analytic methods assume q << sqrt(N*M).
    std::vector<std::string> warnings() const {
        std::vector<std::string> out;
        if (edge_probability() > 0.1) {
            std::ostringstream os;
            os << "sparsity: q/sqrt(NM) = " << edge_probability()
               << " > 0.1; analytic approximations assume a sparse network";
            out.push_back(os.str());
        }
        return out;
    }

    bool operator==(const ModelParams&) const = default;
};

/// Two-point investment size distribution: B with probability p_B, s otherwise.
struct HeterogeneityParams {
    double B = 1.0;
    double s = 1.0;
    double p_B = 0.5;
    double p_s = 0.5;

    /// phi = 1 - s/B
    double heterogeneity() const { return 1.0 - s / B; }

    void validate() const {
        if (!(p_B >= 0.0 && p_B <= 1.0)) throw ParamError("p_B must lie in [0, 1]");
        if (p_B + p_s != 1.0) throw ParamError("p_B + p_s must equal 1");
        if (std::abs(p_B * B + p_s * s - 1.0) > kConstraintTolerance) {
            throw ParamError("expected investment p_B*B + p_s*s must equal 1");
        }
        if (!(B >= 1.0 - kConstraintTolerance && s <= 1.0 + kConstraintTolerance && s > 0.0)) {
            throw ParamError("investment sizes must satisfy B >= 1 >= s > 0");
        }
    }

    bool operator==(const HeterogeneityParams&) const = default;
};

inline HeterogeneityParams homogeneous() { return {1.0, 1.0, 0.5, 0.5}; }

/// Solves p_B + p_s = 1, p_B*B + p_s*s = 1 and phi = 1 - s/B for (B, s).
inline HeterogeneityParams solve_heterogeneity(double phi, double p_B) {
    if (!(phi >= 0.0)) throw ParamError("phi must be >= 0");
    if (!(phi < 1.0)) throw ParamError("phi must be < 1 (phi = 1 forces s = 0)");
    if (!(p_B >= 0.0 && p_B <= 1.0)) throw ParamError("p_B must lie in [0, 1]");
    if (p_B == 0.0) {
        if (phi > 0.0) throw ParamError("p_B = 0 admits only the homogeneous point phi = 0");
        return {1.0, 1.0, 0.0, 1.0};
    }
    if (p_B == 1.0 && phi > 0.0) {
        throw ParamError("p_B = 1 with phi > 0 leaves the light size undetermined");
    }
    const double p_s = 1.0 - p_B;
    const double B = 1.0 / (1.0 - phi * p_s);
    const double s = (1.0 - phi) * B;
    return {B, s, p_B, p_s};
}

/// Regulatory leverage from a saturated VaR constraint.
inline double target_leverage(const ModelParams& p) {
    const double aq = p.alpha() * p.q;
    if (!(aq > 0.0)) throw ParamError("alpha*q must be > 0");
    if (!(p.zeta > 0.0)) throw ParamError("zeta must be > 0");
    const double portfolio_var = p.sigma_s2 + p.sigma_d2 / aq;
    if (!(portfolio_var > 0.0)) throw ParamError("portfolio variance is zero; leverage undefined");
    return 1.0 / (p.zeta * std::sqrt(portfolio_var));
}

/// b = p_B B^2 + p_s s^2
inline double second_moment_b(const HeterogeneityParams& h) {
    return h.p_B * h.B * h.B + h.p_s * h.s * h.s;
}

/// First moment scaling between W and X entries in the sparse limit.
inline double scaling_constant(double alpha, double q) {
    const double x = alpha * q;
    if (!(x > 0.0)) throw ParamError("alpha*q must be > 0");
    return -std::expm1(-x) / x;
}

/// Scalars every estimator needs, computed once per parameter point.
struct DerivedScalars {
    double alpha = 0.0;
    double eta = 0.0;
    double b = 0.0;
    double g = 0.0;        // (eta - 1) / gamma
    double kappa0 = 0.0;   // g * alpha^2, prefactor of W W^T
    double c = 0.0;        // W ~ c X
    double kappa = 0.0;    // g * (1 - e^{-alpha q})^2 / q^2, prefactor of X X^T
};

inline DerivedScalars derive(const ModelParams& p, const HeterogeneityParams& h) {
    p.validate();
    h.validate();
    DerivedScalars d;
    d.alpha = p.alpha();
    d.eta = target_leverage(p);
    if (!(d.eta > 1.0)) {
        std::ostringstream os;
        os << "target leverage eta = " << d.eta << " <= 1";
        throw LeverageError(os.str());
    }
    d.b = second_moment_b(h);
    d.g = (d.eta - 1.0) / p.gamma;
    d.kappa0 = d.g * d.alpha * d.alpha;
    d.c = scaling_constant(d.alpha, p.q);
    const double one_minus = -std::expm1(-d.alpha * p.q);
    d.kappa = d.g * one_minus * one_minus / (p.q * p.q);
    return d;
}

}  // namespace finstab
