#include "nusg/numerics.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_roots.h>

#include <cmath>
#include <exception>
#include <memory>
#include <stdexcept>

namespace nusg::numerics {

namespace {

struct GslHandlerOff {
    GslHandlerOff() { gsl_set_error_handler_off(); }
};
const GslHandlerOff gsl_handler_off;

// Exceptions must not unwind through the C library: callbacks park them here and
// the driver rethrows after the GSL call returns.
struct ScalarCall {
    const std::function<double(double)>* f;
    std::exception_ptr error;
};

double call_scalar(double x, void* params) {
    auto* call = static_cast<ScalarCall*>(params);
    if (call->error) return GSL_NAN;
    try {
        return (*call->f)(x);
    } catch (...) {
        call->error = std::current_exception();
        return GSL_NAN;
    }
}

using MultiFn = std::function<double(std::span<const double>)>;

struct MultiCall {
    const MultiFn* f;
    std::exception_ptr error;
};

double call_multi(const gsl_vector* v, void* params) {
    auto* call = static_cast<MultiCall*>(params);
    if (call->error) return GSL_POSINF;
    try {
        double value = (*call->f)(std::span<const double>(v->data, v->size));
        return std::isfinite(value) ? value : GSL_POSINF;
    } catch (...) {
        call->error = std::current_exception();
        return GSL_POSINF;
    }
}

}  // namespace

double bisect(const std::function<double(double)>& f, double lo, double hi, double ftol,
              int max_iter) {
    double flo = f(lo);
    if (std::abs(flo) <= ftol) return lo;
    double fhi = f(hi);
    if (std::abs(fhi) <= ftol) return hi;
    if ((flo > 0) == (fhi > 0)) throw std::invalid_argument("bisect: no sign change on bracket");

    std::unique_ptr<gsl_root_fsolver, decltype(&gsl_root_fsolver_free)> solver(
        gsl_root_fsolver_alloc(gsl_root_fsolver_bisection), &gsl_root_fsolver_free);
    ScalarCall call{&f, nullptr};
    gsl_function fn{&call_scalar, &call};
    gsl_root_fsolver_set(solver.get(), &fn, lo, hi);

    double root = 0.5 * (lo + hi);
    for (int it = 0; it < max_iter; ++it) {
        gsl_root_fsolver_iterate(solver.get());
        if (call.error) std::rethrow_exception(call.error);
        root = gsl_root_fsolver_root(solver.get());
        if (std::abs(f(root)) <= ftol) break;
        double a = gsl_root_fsolver_x_lower(solver.get());
        double b = gsl_root_fsolver_x_upper(solver.get());
        if (gsl_root_test_interval(a, b, 0.0, 1e-16) == GSL_SUCCESS) break;
    }
    return root;
}

SimplexResult nelder_mead(const MultiFn& f, std::vector<double> start, double initial_step,
                          double xtol, int max_iter) {
    const std::size_t n = start.size();
    std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)> x(gsl_vector_alloc(n),
                                                              &gsl_vector_free);
    std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)> step(gsl_vector_alloc(n),
                                                                 &gsl_vector_free);
    for (std::size_t i = 0; i < n; ++i) gsl_vector_set(x.get(), i, start[i]);
    gsl_vector_set_all(step.get(), initial_step);

    std::unique_ptr<gsl_multimin_fminimizer, decltype(&gsl_multimin_fminimizer_free)> solver(
        gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n),
        &gsl_multimin_fminimizer_free);
    MultiCall call{&f, nullptr};
    gsl_multimin_function fn{&call_multi, n, &call};
    gsl_multimin_fminimizer_set(solver.get(), &fn, x.get(), step.get());
    if (call.error) std::rethrow_exception(call.error);

    SimplexResult result;
    for (result.iterations = 0; result.iterations < max_iter; ++result.iterations) {
        int status = gsl_multimin_fminimizer_iterate(solver.get());
        if (call.error) std::rethrow_exception(call.error);
        if (status != GSL_SUCCESS) break;
        double size = gsl_multimin_fminimizer_size(solver.get());
        if (gsl_multimin_test_size(size, xtol) == GSL_SUCCESS) {
            result.converged = true;
            break;
        }
    }
    const gsl_vector* best = gsl_multimin_fminimizer_x(solver.get());
    result.x.assign(best->data, best->data + n);
    result.value = gsl_multimin_fminimizer_minimum(solver.get());
    return result;
}

std::vector<double> cumulative_trapezoid(std::span<const double> samples, double dt) {
    std::vector<double> out(samples.size(), 0.0);
    for (std::size_t i = 1; i < samples.size(); ++i)
        out[i] = out[i - 1] + 0.5 * dt * (samples[i - 1] + samples[i]);
    return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = lo;
        return out;
    }
    for (std::size_t i = 0; i < n; ++i)
        out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

std::vector<double> logspace(double lo, double hi, std::size_t n) {
    auto exps = linspace(std::log(lo), std::log(hi), n);
    for (double& e : exps) e = std::exp(e);
    exps.front() = lo;
    exps.back() = hi;
    return exps;
}

}  // namespace nusg::numerics
