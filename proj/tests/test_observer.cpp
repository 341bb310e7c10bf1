#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nusg/errors.hpp"
#include "nusg/observer.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>

using namespace nusg;
using namespace nusg::observer;

namespace {

const double kPi = std::numbers::pi;

IdentifierState fresh(const ExploratorySystem& exo, const EtaMap& eta, double gamma) {
    return make_identifier(exo, eta, gamma, DeadzoneBudget{}, 0.0);
}

}  // namespace

TEST_CASE("step_identifier freezes exactly at zero distance") {
    auto exo = ExploratorySystem::torus_oscillators(kPi, 1.0, {0.3, 0.4, -0.2, 0.9});
    auto eta = EtaMap::hr_arcsin();
    auto s = fresh(exo, eta, 0.7);
    auto next = step_identifier(s, 0.0, exo, eta, 0.5);
    CHECK(next.coords == s.coords);
    CHECK(next.theta_hat == s.theta_hat);
    CHECK(next.excitation == 0.0);
    CHECK(next.t == doctest::Approx(0.5));

    CHECK_THROWS_AS(step_identifier(s, -1.0, exo, eta, 0.1), DomainError);
    CHECK_THROWS_AS(step_identifier(s, std::nan(""), exo, eta, 0.1), DomainError);
    CHECK_THROWS_AS(step_identifier(s, 1.0, exo, eta, 0.0), DomainError);
}

TEST_CASE("hyperbolic pair follows the exponential flow") {
    auto exo = ExploratorySystem::hyperbolic_pair({0.1, std::sqrt(0.99)});
    auto eta = EtaMap::first_component();
    auto s = fresh(exo, eta, 0.05);
    auto l0 = s.lambda(exo);
    auto next = step_identifier(s, 1.0, exo, eta, 1e-3);
    auto l1 = next.lambda(exo);
    CHECK(l1[0] / l0[0] == doctest::Approx(std::exp(5e-5)).epsilon(1e-14));
    CHECK(l1[1] / l0[1] == doctest::Approx(std::exp(-5e-5)).epsilon(1e-14));
    CHECK(exo.conserved(l1)[0] == doctest::Approx(exo.conserved(l0)[0]).epsilon(1e-14));
    CHECK(next.theta_hat[0] == doctest::Approx(l1[0]));

    // Long excitation keeps the product exact because the state is stored in log form.
    for (int k = 0; k < 10000; ++k) s = step_identifier(s, 3.0, exo, eta, 0.1);
    auto l = s.lambda(exo);
    CHECK(l[0] == doctest::Approx(0.1 * std::exp(0.05 * 3.0 * 1000.0)).epsilon(1e-9));
    CHECK(exo.conserved(l)[0] == doctest::Approx(0.1 * std::sqrt(0.99)).epsilon(1e-9));

    CHECK_THROWS_AS(ExploratorySystem::hyperbolic_pair({0.0, 1.0}), ConfigError);
}

TEST_CASE("torus oscillators at constant distance trace the rescaled orbit") {
    const double w1 = kPi, w2 = 1.0, gamma = 0.2, dt = 1e-3;
    auto exo = ExploratorySystem::torus_oscillators(w1, w2);
    auto eta = EtaMap::hr_arcsin();
    auto s = fresh(exo, eta, gamma);
    for (int k = 0; k < 20000; ++k) s = step_identifier(s, 1.0, exo, eta, dt);
    double tau = gamma * s.t;
    auto l = s.lambda(exo);
    CHECK(l[0] == doctest::Approx(std::cos(w1 * tau)).epsilon(1e-9));
    CHECK(l[1] == doctest::Approx(-w1 * std::sin(w1 * tau)).epsilon(1e-9));
    CHECK(l[2] == doctest::Approx(std::cos(w2 * tau)).epsilon(1e-9));
    CHECK(l[3] == doctest::Approx(-w2 * std::sin(w2 * tau)).epsilon(1e-9));
    CHECK(s.excitation == doctest::Approx(tau));
}

TEST_CASE("oscillator energies are preserved under random excitation") {
    auto exo = ExploratorySystem::torus_oscillators(kPi, 1.0, {0.6, -1.2, 0.1, 0.5});
    auto eta = EtaMap::hr_arcsin();
    auto s = fresh(exo, eta, 0.5);
    auto E0 = exo.conserved(exo.lambda0);
    std::mt19937_64 rng(7);
    std::exponential_distribution<double> dist(2.0);
    for (int k = 0; k < 50000; ++k) {
        s = step_identifier(s, dist(rng), exo, eta, 1e-2);
        if (k % 1000 == 0) {
            auto E = exo.conserved(s.lambda(exo));
            CHECK(std::abs(E[0] - E0[0]) / E0[0] < 1e-6);
            CHECK(std::abs(E[1] - E0[1]) / E0[1] < 1e-6);
            CHECK(eta.in_box(s.theta_hat));
        }
    }
}

TEST_CASE("eta maps") {
    auto first = EtaMap::first_component();
    CHECK(first(std::vector<double>{0.25, 9.0})[0] == 0.25);

    auto hr = EtaMap::hr_arcsin(1e-3);
    auto mid = hr(std::vector<double>{0.0, 1.0, 0.0, 1.0});
    CHECK(mid[0] == doctest::Approx(0.5));
    CHECK(mid[1] == doctest::Approx(2.5));
    auto top = hr(std::vector<double>{5.0, 0.0, 5.0, 0.0});
    CHECK(top[0] == doctest::Approx((std::asin(0.999) / kPi + 0.5) * 0.4 + 0.3));
    CHECK(top[1] <= 3.0);
    auto bottom = hr(std::vector<double>{-1.0, 0.0, -1.0, 0.0});
    CHECK(bottom[0] >= 0.3);
    CHECK(bottom[1] >= 2.0);
    CHECK(hr.D_eta == doctest::Approx(1.0 / (kPi * std::sqrt(1.0 - 0.999 * 0.999))));

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    std::vector<Vec> samples;
    for (int i = 0; i < 5000; ++i) samples.push_back({u(rng), u(rng), u(rng), u(rng)});
    auto rep = validate_eta(hr, samples);
    CHECK(rep.all_in_box);
    CHECK(rep.lipschitz_ok);
    CHECK(rep.worst_ratio > 0.0);

    // Nearby pairs close to the clip edge probe the steepest slope.
    std::vector<Vec> edge{{0.0, 0.0, 0.9985, 0.0}, {0.0, 0.0, 0.99849, 0.0}};
    CHECK(validate_eta(hr, edge).lipschitz_ok);

    auto narrow = hr;
    narrow.D_eta = 0.1;
    CHECK_FALSE(validate_eta(narrow, samples).lipschitz_ok);
}

TEST_CASE("eta image of a long orbit is dense in the parameter box") {
    auto exo = ExploratorySystem::torus_oscillators(kPi, 1.0);
    auto eta = EtaMap::hr_arcsin();
    auto s = fresh(exo, eta, 1.0);
    std::set<std::pair<int, int>> cells;
    for (int k = 0; k < 400000; ++k) {
        s = step_identifier(s, 1.0, exo, eta, 0.01);
        int i = std::min(7, static_cast<int>((s.theta_hat[0] - 0.3) / 0.05));
        int j = std::min(19, static_cast<int>((s.theta_hat[1] - 2.0) / 0.05));
        cells.insert({i, j});
    }
    CHECK(static_cast<double>(cells.size()) / 160.0 >= 0.95);
}

TEST_CASE("deadzone level composition") {
    DeadzoneBudget b{0.2, 0.05, 1e-3};
    auto exo = ExploratorySystem::hyperbolic_pair({0.1, 0.9});
    auto eta = EtaMap::first_component();
    auto s = make_identifier(exo, eta, 0.05, b, 0.01);
    CHECK(s.M == 2.0 * 0.2 + 0.05 + 1e-3);
    CHECK(s.Delta_M == 0.01);
    CHECK_THROWS_AS(make_identifier(exo, eta, 0.05, DeadzoneBudget{0.0, 0.0, 0.0}, 0.0), ConfigError);
    CHECK_THROWS_AS(make_identifier(exo, eta, -1.0, b, 0.0), ConfigError);
    CHECK_THROWS_AS(make_identifier(exo, eta, 0.05, b, -0.1), ConfigError);
}

TEST_CASE("compute_D_lambda") {
    CHECK(compute_D_lambda(1, 1, 1, 1) == 1.0);
    CHECK(compute_D_lambda(0.1, 0.0, 3.0, 4.0) == 0.0);
    CHECK(compute_D_lambda(0.1, 2.0, 3.0, 4.0) == doctest::Approx(2.4));
    CHECK_THROWS_AS(compute_D_lambda(-1, 1, 1, 1), DomainError);

    auto l = hr_lipschitz(2.0, 0.5);
    CHECK(l.D_f_beta == doctest::Approx((3.0 * 2.0 + 0.5) / 0.09));
    CHECK(l.D_f_d == doctest::Approx(2.0 / 0.3));
    CHECK(l.D_f() == l.D_f_beta);
    double maxS = torus_max_speed(kPi, 1.0, std::vector<double>{1.0, 0.0, 1.0, 0.0});
    CHECK(maxS == doctest::Approx(std::sqrt(std::pow(kPi, 4) + 1.0)));
    double D = compute_D_lambda(0.1, l.D_f(), EtaMap::hr_arcsin().D_eta, maxS);
    CHECK(D > 0.0);
    CHECK(std::isfinite(D));
}

TEST_CASE("hr observer filter reaches its closed-form steady state") {
    HRObserverState obs;
    const double x1 = 0.8, bh = 0.45, dh = 2.2;
    for (int k = 0; k < 10000; ++k) obs = hr_observer_step(obs, x1, 0.0, {bh, dh}, 1e-2);
    CHECK(obs.w == doctest::Approx((obs.c_hr - dh * x1 * x1) / bh).epsilon(1e-9));
    CHECK(obs.t == doctest::Approx(100.0));
}

TEST_CASE("hr observer homogeneous dynamics") {
    HRObserverState obs;
    obs.c_hr = 0.0;
    obs.x_hat = 1.0;
    for (int k = 0; k < 100; ++k) obs = hr_observer_step(obs, 0.0, 0.0, {0.5, 2.5}, 1e-3);
    CHECK(obs.w == 0.0);
    CHECK(obs.x_hat == doctest::Approx(std::exp(-obs.rho * 0.1)).epsilon(1e-9));

    CHECK_THROWS_AS(hr_observer_step(obs, 0.0, 0.0, {0.2, 2.5}, 1e-3), ConfigError);
    CHECK_THROWS_AS(hr_observer_step(obs, 0.0, 0.0, {0.5, 3.5}, 1e-3), ConfigError);
    CHECK_THROWS_AS(hr_observer_step(obs, 0.0, 0.0, {0.5, 2.5}, 0.0), DomainError);
}

TEST_CASE("filter surrogate matches windowed quadrature of the convolution") {
    const double dt = 1e-3, bh = 0.45, dh = 2.3;
    auto x1 = [](double t) { return std::sin(t) + 0.5; };
    HRObserverState obs;
    std::vector<double> history{x1(0.0)};
    const long steps = 100000;
    for (long k = 0; k < steps; ++k) {
        double t = k * dt;
        obs = hr_observer_step(obs, x1(t), x1(t + dt), 0.0, {bh, dh}, dt);
        history.push_back(x1(t + dt));
    }
    double window = std::log(1e9) / 0.3;
    double q = hr_convolution_quadrature(history, dt, bh, dh, obs.c_hr, window);
    CHECK(std::abs(obs.w - q) <= 1e-6 * std::abs(q));
}

TEST_CASE("example 1 converges inside the certified region") {
    Example1Config cfg;
    cfg.x0 = -0.7;
    auto r = run_example1(cfg);
    CHECK(r.certified);
    CHECK(r.gamma_max == doctest::Approx(0.0601).epsilon(0.003));
    CHECK(r.verdict == dynsim::Verdict::converged);
    CHECK(std::abs(r.x_final) < 1e-2);
    CHECK(std::abs(r.theta_hat_final - 0.3) < 0.05);
    CHECK(r.excitation_tail < 1e-3);
    CHECK(r.theta_drift < 1e-3);
    CHECK(r.sandwich.passed);
    CHECK(r.theta_in_box);
    CHECK(r.h0 == doctest::Approx(std::log(3.0)));
    CHECK(r.tau_star == doctest::Approx(std::log(4.0)));
    REQUIRE(r.hits.size() >= 2);
    CHECK(r.gaps_ok);
    for (std::size_t i = 1; i < r.series_excitation.size(); ++i)
        CHECK(r.series_excitation[i] >= r.series_excitation[i - 1]);
}

TEST_CASE("example 1 at the equilibrium with a matched estimate stays put") {
    Example1Config cfg;
    cfg.theta = 0.1;
    cfg.x0 = 0.0;
    cfg.t_end = 10.0;
    auto r = run_example1(cfg);
    // exp(log(0.1)) differs from 0.1 by one rounding, so x moves at roundoff level only.
    for (double x : r.series_x) CHECK(std::abs(x) < 1e-15);
    for (double th : r.series_theta_hat) CHECK(th == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("example 1 certification boundary") {
    Example1Config cfg;
    cfg.t_end = 5.0;
    cfg.x0 = 1.0;
    CHECK(run_example1(cfg).certified);
    cfg.x0 = 1.5;
    auto outside = run_example1(cfg);
    CHECK_FALSE(outside.certified);
    CHECK_FALSE(outside.membership.member);

    cfg.x0 = 0.5;
    cfg.gamma = 0.07;
    auto fast = run_example1(cfg);
    CHECK_FALSE(fast.certified);
    CHECK_FALSE(fast.warnings.empty());

    cfg.theta = 1.5;
    CHECK_THROWS_AS(run_example1(cfg), ConfigError);
}

TEST_CASE("example 2 without adaptation keeps the initial estimate") {
    Example2Config cfg;
    cfg.gamma = 0.0;
    cfg.t_end = 400.0;
    auto r = run_example2(cfg);
    auto eta = EtaMap::hr_arcsin();
    auto start = eta(cfg.lambda0);
    CHECK(r.fit.beta_hat == start[0]);
    CHECK(r.fit.d_hat == start[1]);
    CHECK(r.fit.residual_mean > 1e-2);
    CHECK(r.sandwich.passed);
}

TEST_CASE("example 2 started at the true parameters") {
    Example2Config cfg;
    cfg.lambda0 = {0.0, kPi, 0.0, 1.0};
    cfg.x1_0 = 0.5;
    cfg.t_end = 50.0;
    cfg.series_stride = 10;
    auto r = run_example2(cfg);
    // x_tilde(1) from 0.5 at rate rho/2 or faster.
    REQUIRE(r.series_t[10] == doctest::Approx(1.0));
    CHECK(std::abs(r.series_x_tilde[10]) <= 0.5 * std::exp(-cfg.rho / 2.0));
    CHECK(std::abs(r.fit.beta_hat - 0.5) < 1e-3);
    CHECK(std::abs(r.fit.d_hat - 2.5) < 1e-3);
    CHECK(r.fit.residual_final == 0.0);
    CHECK(r.fit.replay_max < 1e-2);
}

TEST_CASE("example 2 identification with a periodic pulse train") {
    Example2Config cfg;
    cfg.omega2 = 3.0;
    cfg.pulse.period = 400.0;
    auto r = run_example2(cfg);
    CHECK(std::abs(r.fit.beta_hat - 0.5) < 0.1);
    CHECK(std::abs(r.fit.d_hat - 2.5) < 0.4);
    CHECK(r.fit.residual_mean < 1e-2);
    CHECK(r.sandwich.passed);
    CHECK(r.conserved_drift < 1e-6);
    CHECK(r.theta_in_box);
}

TEST_CASE("example 2 with the single pulse keeps its structural properties") {
    Example2Config cfg;
    auto r = run_example2(cfg);
    CHECK(std::abs(r.fit.beta_hat - 0.5) < 0.1);
    CHECK(r.fit.residual_mean < 1e-2);
    CHECK(r.sandwich.passed);
    CHECK(r.conserved_drift < 1e-6);
    CHECK(r.theta_in_box);
    CHECK(r.gamma_max > cfg.gamma);
    CHECK(r.replay_x1.size() == r.series_x1.size());
    auto j = to_json(r);
    CHECK(j.contains("d_hat"));
    CHECK(j["sandwich"]["passed"] == true);
}
