#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nusg/errors.hpp"
#include "nusg/gains.hpp"

#include <cmath>
#include <random>

using namespace nusg;
using namespace nusg::gains;

namespace {

ScalarFn fn(std::string name, ScalarFn::Eval f) { return ScalarFn(std::move(name), std::move(f)); }

// Plain halving on a decreasing function; independent of the library bisection.
double oracle_inverse(const std::function<double(double)>& f, double y, double hi) {
    double lo = 0.0;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (f(mid) > y ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("beta_t_inverse closed form for exponential envelopes") {
    auto env = ContractionEnvelope::exponential(1.0, 1.0, 0.0);
    double t = beta_t_inverse(env, 0.25);
    CHECK(t == doctest::Approx(1.3862943611198906).epsilon(1e-14));
    CHECK(t == doctest::Approx(oracle_inverse([](double s) { return std::exp(-s); }, 0.25, 100.0))
                   .epsilon(1e-12));

    auto env2 = ContractionEnvelope::exponential(2.0, 1.0, 0.0);
    CHECK(beta_t_inverse(env2, 1.0) == 0.0);
}

TEST_CASE("beta_t_inverse by bisection on a tabulated decay") {
    auto env = ContractionEnvelope::separable(ScalarFn::identity(),
                                              fn("1/(1+t)", [](double t) { return 1.0 / (1.0 + t); }), 1.0);
    double t = beta_t_inverse(env, 0.1);
    CHECK(t == doctest::Approx(9.0).epsilon(1e-10));
    CHECK(std::abs(env.beta_t(t) - 0.1) <= 1e-12 * 0.1);
}

TEST_CASE("beta_t_inverse rejects out-of-range targets and non-monotone decay") {
    auto env = ContractionEnvelope::exponential(1.0, 2.0, 0.0);
    CHECK_THROWS_AS(beta_t_inverse(env, 0.0), DomainError);
    CHECK_THROWS_AS(beta_t_inverse(env, 2.5), DomainError);

    auto wobbly = ContractionEnvelope::separable(
        ScalarFn::identity(),
        fn("wobbly", [](double t) { return std::exp(-t) * (1.0 + 0.9 * std::sin(3.0 * t)); }), 0.0);
    CHECK_THROWS_AS(beta_t_inverse(wobbly, 0.5), InvariantViolation);
}

TEST_CASE("beta_t_inverse composed with beta_t is the identity for exponential envelopes") {
    for (double lambda : {0.3, 1.0, 4.0}) {
        for (double D : {1.0, 3.0}) {
            auto env = ContractionEnvelope::exponential(lambda, D, 1.0);
            for (int k = 0; k <= 200; ++k) {
                double t = 50.0 / lambda * k / 200.0;
                double back = beta_t_inverse(env, env.beta_t(t));
                CHECK(std::abs(back - t) <= 1e-10 * std::max(t, 1.0));
            }
        }
    }
}

TEST_CASE("validate_class_k examples") {
    CHECK(validate_class_k(fn("s^2", [](double s) { return s * s; }), 100, 10.0).passed());

    auto sine = validate_class_k(fn("sin", [](double s) { return std::sin(s); }), 100, 10.0);
    CHECK_FALSE(sine.passed());
    CHECK(sine.is_zero_at_zero);
    REQUIRE_FALSE(sine.violations.empty());
    CHECK(sine.violations.front().second > M_PI / 2);

    auto offset = validate_class_k(fn("s+1", [](double s) { return s + 1.0; }), 100, 10.0);
    CHECK_FALSE(offset.passed());
    CHECK_FALSE(offset.is_zero_at_zero);
    CHECK(offset.is_strictly_increasing);
}

TEST_CASE("validate_class_k accepts a s^p and rejects offsets") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> a_dist(0.01, 10.0), p_dist(0.1, 5.0), off(1e-6, 5.0);
    for (int i = 0; i < 200; ++i) {
        double a = a_dist(rng), p = p_dist(rng), o = off(rng);
        CHECK(validate_class_k(ScalarFn::power(p, a), 512, 10.0).passed());
        CHECK_FALSE(validate_class_k(fn("offset", [a, p, o](double s) { return a * std::pow(s, p) + o; }),
                                     512, 10.0)
                        .passed());
    }
}

TEST_CASE("non-finite evaluation raises with the offending input") {
    auto bad = fn("log", [](double s) { return std::log(s); });
    try {
        validate_class_k(bad, 10, 1.0);
        FAIL("expected EvaluationError");
    } catch (const EvaluationError& e) {
        CHECK(e.input() == 0.0);
    }
}

TEST_CASE("check_factorization examples") {
    WanderingBound lin;
    lin.gamma0 = ScalarFn::identity();
    lin.gamma01 = ScalarFn::identity();
    lin.gamma02 = ScalarFn::identity();
    auto r = check_factorization(lin, 10.0, 64);
    CHECK(r.passed);
    CHECK(r.worst_margin == doctest::Approx(0.0).epsilon(1e-12));

    WanderingBound sq;
    sq.gamma0 = ScalarFn::power(2.0);
    sq.gamma01 = ScalarFn::power(2.0);
    sq.gamma02 = ScalarFn::power(2.0);
    CHECK(check_factorization(sq, 5.0, 128).passed);

    WanderingBound ex;
    ex.gamma0 = fn("e^s-1", [](double s) { return std::expm1(s); });
    ex.gamma01 = ScalarFn::identity();
    ex.gamma02 = ScalarFn::identity();
    auto bad = check_factorization(ex, 2.0, 64);
    CHECK_FALSE(bad.passed);
    CHECK(bad.worst_a == doctest::Approx(2.0));
    CHECK(bad.worst_b == doctest::Approx(2.0));
    CHECK(bad.worst_margin == doctest::Approx(4.0 - std::expm1(4.0)));
}

TEST_CASE("a passing factorization holds at random off-grid points") {
    WanderingBound wb = WanderingBound::linear(0.7, 0.2);
    double M = 5.0;
    REQUIRE(check_factorization(wb, M, 128).passed);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, M);
    for (int i = 0; i < 10000; ++i) {
        double a = u(rng), b = u(rng);
        CHECK(wb.gamma0(a * b) <= wb.gamma01(a) * wb.gamma02(b) + 1e-12);
    }
}

TEST_CASE("bound order and Lipschitz checks") {
    auto wb = WanderingBound::linear(0.5, 0.5);
    CHECK(check_bound_order(wb, 10.0).passed);
    CHECK(check_lipschitz(wb, 10.0).passed);
    wb.gamma1 = ScalarFn::linear(0.6);
    CHECK_FALSE(check_bound_order(wb, 10.0).passed);
    wb.gamma0 = ScalarFn::power(2.0);
    CHECK_FALSE(check_lipschitz(wb, 10.0).passed);
}

TEST_CASE("envelope validation") {
    CHECK(validate_envelope(ContractionEnvelope::exponential(1.0, 2.0, 0.5)).passed());
    auto slow = ContractionEnvelope::separable(ScalarFn::identity(),
                                               fn("1/(1+t)", [](double t) { return 1.0 / (1.0 + t); }), 1.0);
    auto r = validate_envelope(slow);
    CHECK(r.beta_t.is_strictly_decreasing);
    CHECK_FALSE(r.beta_t.vanishes);

    auto kl = ContractionEnvelope::general([](double s, double t) { return 0.5 * s * std::exp(-t); },
                                           ScalarFn::identity(), ScalarFn::exp_decay(1.0, 1.0), 0.0);
    CHECK(validate_envelope(kl).passed());
    kl.kl = [](double s, double t) { return 2.0 * s * std::exp(-t); };
    CHECK_FALSE(validate_envelope(kl).kind_consistent);

    CHECK_THROWS_AS(ContractionEnvelope::exponential(1.0, 0.5, 0.0), DomainError);
    CHECK_THROWS_AS(ContractionEnvelope::exponential(-1.0, 1.0, 0.0), DomainError);
}

TEST_CASE("parse_scalar_fn") {
    CHECK(parse_scalar_fn("identity")(3.0) == 3.0);
    CHECK(parse_scalar_fn("power(2)")(3.0) == doctest::Approx(9.0));
    CHECK(parse_scalar_fn(" power(2, 0.5) ")(2.0) == doctest::Approx(2.0));
    CHECK(parse_scalar_fn("linear(0.25)")(4.0) == doctest::Approx(1.0));
    CHECK(parse_scalar_fn("exp_decay(1, 2)")(0.0) == doctest::Approx(2.0));
    auto table = parse_scalar_fn("table(0:0, 1:2, 3:3)");
    CHECK(table(0.5) == doctest::Approx(1.0));
    CHECK(table(2.0) == doctest::Approx(2.5));
    CHECK(table(5.0) == doctest::Approx(4.0));
    CHECK_THROWS_AS(parse_scalar_fn("cosh(1)"), ConfigError);
    CHECK_THROWS_AS(parse_scalar_fn("power()"), ConfigError);
    CHECK_THROWS_AS(parse_scalar_fn("table(1:0, 0:1)"), ConfigError);
    CHECK_THROWS_AS(parse_scalar_fn("linear(abc)"), ConfigError);
}
