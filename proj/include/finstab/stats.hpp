#pragma once

#include <cmath>
#include <cstddef>

namespace finstab {

/// Welford accumulator. Feed values in a fixed order for reproducible output.
class RunningStats {
public:
    void add(double x) {
        ++n_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (x - mean_);
    }

    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double stddev() const { return std::sqrt(variance()); }
    double stderr_of_mean() const { return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct Moment {
    double mean = 0.0;
    double std_error = 0.0;
};

inline Moment to_moment(const RunningStats& s) { return {s.mean(), s.stderr_of_mean()}; }

}  // namespace finstab
