#pragma once

// Comparison functions (class K / KL), contraction envelopes of the contracting
// subsystem and the integral bounds of the wandering subsystem.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nusg::gains {

/// Map R+ -> R+ with a display name. Evaluation never returns a non-finite value:
/// NaN or infinity raises EvaluationError carrying the offending input.
class ScalarFn {
public:
    using Eval = std::function<double(double)>;

    ScalarFn() = default;
    ScalarFn(std::string name, Eval eval, std::optional<double> domain_hint = std::nullopt);

    double operator()(double s) const;

    const std::string& name() const noexcept { return name_; }
    std::optional<double> domain_hint() const noexcept { return domain_hint_; }
    explicit operator bool() const noexcept { return static_cast<bool>(eval_); }

    static ScalarFn identity();
    /// a * s^p
    static ScalarFn power(double p, double a = 1.0);
    static ScalarFn linear(double a);
    /// D * exp(-lambda * s)
    static ScalarFn exp_decay(double lambda, double D);
    /// Linear interpolation through strictly increasing abscissae; linear
    /// extrapolation from the end segments outside the table.
    static ScalarFn piecewise_linear(std::vector<std::pair<double, double>> breakpoints);

private:
    std::string name_;
    Eval eval_;
    std::optional<double> domain_hint_;
};

/// Parses "identity", "power(p)", "power(p, a)", "linear(a)", "exp_decay(lambda, D)"
/// and "table(s0:v0, s1:v1, ...)". Throws ConfigError on malformed input.
ScalarFn parse_scalar_fn(std::string_view text);

enum class EnvelopeKind { general, separable, exponential };

std::string_view to_string(EnvelopeKind kind);

/// KL bound of the contracting subsystem together with its input gain c:
///   |x(t)|_A <= beta(|x0|_A, t) + c * sup |h(z)|.
/// The separable and exponential kinds carry the factorization
/// beta(s, t) <= beta_x(s) * beta_t(t).
struct ContractionEnvelope {
    EnvelopeKind kind = EnvelopeKind::general;
    ScalarFn beta_x;
    ScalarFn beta_t;
    double c = 0.0;
    double lambda = 0.0;  // exponential only
    double D_beta = 1.0;  // exponential only
    std::function<double(double, double)> kl;

    static ContractionEnvelope exponential(double lambda, double D_beta, double c);
    static ContractionEnvelope separable(ScalarFn beta_x, ScalarFn beta_t, double c);
    /// General KL bound with a separable majorant (beta_x, beta_t) used where the
    /// closed-form checks need one.
    static ContractionEnvelope general(std::function<double(double, double)> kl, ScalarFn beta_x,
                                       ScalarFn beta_t, double c);

    double beta(double s, double t) const;
    double beta_t0() const { return beta_t(0.0); }
};

/// Output map and integral bounds of the wandering subsystem:
///   int gamma1(u) <= h(z0) - h(z(t)) <= int gamma0(u),
/// with the factorization gamma0(a b) <= gamma01(a) gamma02(b).
struct WanderingBound {
    std::function<double(std::span<const double>)> h;
    ScalarFn gamma0;
    ScalarFn gamma1;
    ScalarFn gamma01;
    ScalarFn gamma02;
    std::optional<double> D_gamma0;

    /// gamma0 = D0 s, gamma1 = D1 s, factorization (s, D0 s).
    static WanderingBound linear(double D_gamma0, double D_gamma1);
};

struct InverseOptions {
    double tol_rel = 1e-12;
    double t_max = 1e6;
    int monotone_samples = 512;
};

/// Time t with beta_t(t) = y. Closed form for exponential envelopes, bisection on
/// [0, t_max] otherwise.
double beta_t_inverse(const ContractionEnvelope& env, double y, const InverseOptions& opts = {});

struct ClassKReport {
    bool is_zero_at_zero = false;
    bool is_strictly_increasing = false;
    std::vector<std::pair<double, double>> violations;  // adjacent grid pairs (s1, s2)
    bool passed() const { return is_zero_at_zero && is_strictly_increasing; }
};

ClassKReport validate_class_k(const ScalarFn& fn, int grid_size, double upper);

struct DecreasingReport {
    bool is_strictly_decreasing = false;
    bool vanishes = false;  // value at the probe horizon below tolerance
    double tail_value = 0.0;
    std::vector<std::pair<double, double>> violations;
    bool passed() const { return is_strictly_decreasing && vanishes; }
};

DecreasingReport validate_decreasing(const ScalarFn& fn, int grid_size, double t_probe,
                                     double tol = 1e-6);

/// Sampled validation of every ContractionEnvelope invariant.
struct EnvelopeReport {
    ClassKReport beta_x;
    DecreasingReport beta_t;
    bool beta_t0_at_least_one = false;
    bool kind_consistent = false;  // exponential formula / separable majorant
    double worst_kind_violation = 0.0;
    bool passed() const {
        return beta_x.passed() && beta_t.passed() && beta_t0_at_least_one && kind_consistent;
    }
};

EnvelopeReport validate_envelope(const ContractionEnvelope& env, int grid_size = 512,
                                 double s_upper = 10.0, double t_probe = 1e3);

struct FactorizationReport {
    bool passed = false;
    double worst_margin = 0.0;  // min of gamma01(a) gamma02(b) - gamma0(a b)
    double worst_a = 0.0;
    double worst_b = 0.0;
};

FactorizationReport check_factorization(const WanderingBound& wb, double M, int grid_size = 512);

struct BoundReport {
    bool passed = false;
    double worst_margin = 0.0;
    double worst_s = 0.0;
};

/// gamma1(s) <= gamma0(s) on a uniform grid over [0, upper].
BoundReport check_bound_order(const WanderingBound& wb, double upper, int grid_size = 512);

/// |gamma0(s)| <= D_gamma0 |s| on a uniform grid over [0, upper].
BoundReport check_lipschitz(const WanderingBound& wb, double upper, int grid_size = 512);

}  // namespace nusg::gains
