#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace nusg::numerics {

/// Root of a continuous monotone function on [lo, hi] by bisection. The caller
/// guarantees a sign change; stops when |f| <= ftol or the bracket collapses.
double bisect(const std::function<double(double)>& f, double lo, double hi, double ftol,
              int max_iter = 400);

struct SimplexResult {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Nelder-Mead simplex minimization. Converges when the simplex size (mean vertex
/// distance to the centroid) falls below xtol. Non-finite values count as +inf.
SimplexResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                          std::vector<double> start, double initial_step, double xtol,
                          int max_iter = 5000);

/// Trapezoid rule over uniformly spaced samples; returns the running integral.
std::vector<double> cumulative_trapezoid(std::span<const double> samples, double dt);

std::vector<double> linspace(double lo, double hi, std::size_t n);
std::vector<double> logspace(double lo, double hi, std::size_t n);

}  // namespace nusg::numerics
