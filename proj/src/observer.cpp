#include "nusg/observer.hpp"

#include "nusg/errors.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace nusg::observer {

namespace {

bool finite_all(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double arcsin_unit(double v, double clip) {
    return std::asin(std::clamp(v, -clip, clip)) / std::numbers::pi + 0.5;
}

}  // namespace

ExploratorySystem ExploratorySystem::hyperbolic_pair(Vec lambda0, double omega_set_bound) {
    if (lambda0.size() != 2) throw ConfigError("hyperbolic_pair: lambda0 needs two components");
    for (double v : lambda0)
        if (!(v != 0.0) || !std::isfinite(v))
            throw ConfigError("hyperbolic_pair: lambda0 components must be finite and nonzero");
    if (!(omega_set_bound >= 0.0)) throw ConfigError("hyperbolic_pair: omega_set_bound must be >= 0");
    ExploratorySystem e;
    e.kind = Kind::hyperbolic_pair;
    e.lambda0 = std::move(lambda0);
    e.omega_set_bound = omega_set_bound;
    e.signs = {std::copysign(1.0, e.lambda0[0]), std::copysign(1.0, e.lambda0[1])};
    return e;
}

ExploratorySystem ExploratorySystem::torus_oscillators(double omega1, double omega2, Vec lambda0) {
    if (lambda0.size() != 4) throw ConfigError("torus_oscillators: lambda0 needs four components");
    if (!(omega1 > 0.0) || !(omega2 > 0.0)) throw ConfigError("torus_oscillators: frequencies must be > 0");
    if (!finite_all(lambda0)) throw ConfigError("torus_oscillators: lambda0 must be finite");
    ExploratorySystem e;
    e.kind = Kind::torus_oscillators;
    e.omega1 = omega1;
    e.omega2 = omega2;
    e.lambda0 = std::move(lambda0);
    e.omega_set_bound = torus_max_speed(omega1, omega2, e.lambda0);
    return e;
}

Vec ExploratorySystem::to_internal(std::span<const double> lambda) const {
    if (lambda.size() != dim()) throw DomainError("to_internal: dimension mismatch");
    if (kind == Kind::torus_oscillators) return Vec(lambda.begin(), lambda.end());
    Vec out(2);
    for (std::size_t i = 0; i < 2; ++i) {
        if (std::copysign(1.0, lambda[i]) != signs[i] || lambda[i] == 0.0)
            throw DomainError("to_internal: lambda left the orthant of lambda0");
        out[i] = std::log(std::abs(lambda[i]));
    }
    return out;
}

Vec ExploratorySystem::to_lambda(std::span<const double> coords) const {
    if (kind == Kind::torus_oscillators) return Vec(coords.begin(), coords.begin() + 4);
    return {signs[0] * std::exp(coords[0]), signs[1] * std::exp(coords[1])};
}

void ExploratorySystem::field(std::span<const double> coords, std::span<double> out) const {
    if (kind == Kind::hyperbolic_pair) {
        out[0] = 1.0;
        out[1] = -1.0;
        return;
    }
    out[0] = coords[1];
    out[1] = -omega1 * omega1 * coords[0];
    out[2] = coords[3];
    out[3] = -omega2 * omega2 * coords[2];
}

Vec ExploratorySystem::S(std::span<const double> lambda) const {
    if (kind == Kind::hyperbolic_pair) return {lambda[0], -lambda[1]};
    Vec out(4);
    field(lambda, out);
    return out;
}

Vec ExploratorySystem::conserved(std::span<const double> lambda) const {
    if (kind == Kind::hyperbolic_pair) return {lambda[0] * lambda[1]};
    double a = lambda[1] / omega1, b = lambda[3] / omega2;
    return {lambda[0] * lambda[0] + a * a, lambda[2] * lambda[2] + b * b};
}

double torus_max_speed(double omega1, double omega2, std::span<const double> lambda0) {
    if (lambda0.size() != 4) throw DomainError("torus_max_speed: lambda0 needs four components");
    double A1sq = lambda0[0] * lambda0[0] + std::pow(lambda0[1] / omega1, 2);
    double A2sq = lambda0[2] * lambda0[2] + std::pow(lambda0[3] / omega2, 2);
    double w1 = omega1 * omega1, w2 = omega2 * omega2;
    return std::sqrt(A1sq * std::max(w1, w1 * w1) + A2sq * std::max(w2, w2 * w2));
}

bool EtaMap::in_box(std::span<const double> theta, double tol) const {
    if (theta.size() != target_box.size()) return false;
    for (std::size_t i = 0; i < theta.size(); ++i)
        if (!(theta[i] >= target_box[i].first - tol && theta[i] <= target_box[i].second + tol)) return false;
    return true;
}

EtaMap EtaMap::first_component(double lo, double hi) {
    if (!(lo < hi)) throw ConfigError("first_component: empty box");
    EtaMap m;
    m.eta = [](std::span<const double> l) { return Vec{l[0]}; };
    m.D_eta = 1.0;
    m.target_box = {{lo, hi}};
    return m;
}

EtaMap EtaMap::hr_arcsin(double clip_eps) {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("hr_arcsin: clip_eps must lie in (0, 1)");
    double clip = 1.0 - clip_eps;
    EtaMap m;
    m.eta = [clip](std::span<const double> l) {
        return Vec{arcsin_unit(l[0], clip) * 0.4 + 0.3, arcsin_unit(l[2], clip) + 2.0};
    };
    // Largest slope of asin(v)/pi on |v| <= clip; the d_hat component dominates.
    m.D_eta = 1.0 / (std::numbers::pi * std::sqrt(1.0 - clip * clip));
    m.target_box = {{kBetaLo, kBetaHi}, {kDLo, kDHi}};
    return m;
}

EtaReport validate_eta(const EtaMap& eta, const std::vector<Vec>& samples) {
    EtaReport rep;
    Vec prev_theta;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        Vec theta = eta(samples[k]);
        if (!eta.in_box(theta)) rep.all_in_box = false;
        if (k > 0) {
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < theta.size(); ++i) num += std::pow(theta[i] - prev_theta[i], 2);
            for (std::size_t i = 0; i < samples[k].size(); ++i)
                den += std::pow(samples[k][i] - samples[k - 1][i], 2);
            if (den > 0.0) rep.worst_ratio = std::max(rep.worst_ratio, std::sqrt(num / den));
        }
        prev_theta = std::move(theta);
    }
    rep.lipschitz_ok = rep.worst_ratio <= eta.D_eta * (1.0 + 1e-9);
    return rep;
}

IdentifierState make_identifier(const ExploratorySystem& exo, const EtaMap& eta, double gamma,
                                const DeadzoneBudget& budget, double Delta_M, double t0) {
    if (!(budget.delta > 0.0)) throw ConfigError("identifier: delta must be > 0");
    if (!(budget.Delta_f >= 0.0) || !(budget.Delta_eps >= 0.0))
        throw ConfigError("identifier: Delta_f and Delta_eps must be >= 0");
    if (!(Delta_M >= 0.0)) throw ConfigError("identifier: deadzone radius must be >= 0");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("identifier: gamma must be >= 0");
    IdentifierState s;
    s.coords = exo.to_internal(exo.lambda0);
    s.theta_hat = eta(exo.lambda0);
    s.gamma = gamma;
    s.M = budget.M();
    s.Delta_M = Delta_M;
    s.t = t0;
    return s;
}

IdentifierState step_identifier(const IdentifierState& state, double dist, const ExploratorySystem& exo,
                                const EtaMap& eta, double dt) {
    if (!(dt > 0.0)) throw DomainError("step_identifier: dt must be > 0");
    if (!std::isfinite(dist) || dist < 0.0) throw DomainError("step_identifier: dist must be finite and >= 0");
    IdentifierState next = state;
    next.t = state.t + dt;
    double g = state.gamma * dist;
    if (g == 0.0) return next;

    const std::size_t n = state.coords.size();
    Vec k1(n), k2(n), k3(n), k4(n), tmp(n);
    const Vec& y = state.coords;
    exo.field(y, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * dt * g * k1[i];
    exo.field(tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * dt * g * k2[i];
    exo.field(tmp, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + dt * g * k3[i];
    exo.field(tmp, k4);
    for (std::size_t i = 0; i < n; ++i)
        next.coords[i] = y[i] + dt * g / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);

    Vec lambda = exo.to_lambda(next.coords);
    if (!finite_all(next.coords) || !finite_all(lambda))
        throw IntegrationError("step_identifier: non-finite lambda", next.t);
    next.theta_hat = eta(lambda);
    next.excitation = state.excitation + g * dt;
    return next;
}

double compute_D_lambda(double c, double D_f, double D_eta, double maxS) {
    if (!(c >= 0.0 && D_f >= 0.0 && D_eta >= 0.0 && maxS >= 0.0))
        throw DomainError("compute_D_lambda: factors must be nonnegative");
    return c * D_f * D_eta * maxS;
}

std::pair<double, double> hr_observer_rhs(const HRObserverState& obs, double x1, double x_hat, double w,
                                          double u, double beta_hat, double d_hat) {
    double x1sq = x1 * x1;
    double dx = obs.rho * (x1 - x_hat) - obs.a * x1sq * x1 + obs.b * x1sq + obs.alpha * u + w;
    double dw = -beta_hat * w + obs.c_hr - d_hat * x1sq;
    return {dx, dw};
}

HRObserverState hr_observer_step(const HRObserverState& obs, double x1_start, double x1_end, double u,
                                 std::pair<double, double> theta_hat, double dt) {
    if (!(dt > 0.0)) throw DomainError("hr_observer_step: dt must be > 0");
    auto [bh, dh] = theta_hat;
    if (!(bh >= kBetaLo && bh <= kBetaHi) || !(dh >= kDLo && dh <= kDHi))
        throw ConfigError("hr_observer_step: (beta_hat, d_hat) outside [0.3, 0.7] x [2, 3]");
    double xm = 0.5 * (x1_start + x1_end);
    auto [a1, b1] = hr_observer_rhs(obs, x1_start, obs.x_hat, obs.w, u, bh, dh);
    auto [a2, b2] = hr_observer_rhs(obs, xm, obs.x_hat + 0.5 * dt * a1, obs.w + 0.5 * dt * b1, u, bh, dh);
    auto [a3, b3] = hr_observer_rhs(obs, xm, obs.x_hat + 0.5 * dt * a2, obs.w + 0.5 * dt * b2, u, bh, dh);
    auto [a4, b4] = hr_observer_rhs(obs, x1_end, obs.x_hat + dt * a3, obs.w + dt * b3, u, bh, dh);
    HRObserverState next = obs;
    next.x_hat = obs.x_hat + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    next.w = obs.w + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    next.t = obs.t + dt;
    if (!std::isfinite(next.x_hat) || !std::isfinite(next.w))
        throw IntegrationError("hr_observer_step: non-finite observer state", next.t);
    return next;
}

HRObserverState hr_observer_step(const HRObserverState& obs, double x1, double u,
                                 std::pair<double, double> theta_hat, double dt) {
    return hr_observer_step(obs, x1, x1, u, theta_hat, dt);
}

double hr_convolution_quadrature(std::span<const double> x1_history, double dt, double beta_hat,
                                 double d_hat, double c, double window) {
    if (!(dt > 0.0) || !(window > 0.0)) throw DomainError("hr_convolution_quadrature: dt and window must be > 0");
    if (x1_history.size() < 2) return 0.0;
    std::size_t last = x1_history.size() - 1;
    auto span_steps = static_cast<std::size_t>(std::floor(window / dt));
    std::size_t first = last > span_steps ? last - span_steps : 0;
    double sum = 0.0;
    for (std::size_t j = first; j <= last; ++j) {
        double age = static_cast<double>(last - j) * dt;
        double v = std::exp(-beta_hat * age) * (c - d_hat * x1_history[j] * x1_history[j]);
        sum += (j == first || j == last) ? 0.5 * v : v;
    }
    return sum * dt;
}

HRLipschitz hr_lipschitz(double x1_sup, double c) {
    if (!(x1_sup >= 0.0) || !(c >= 0.0)) throw DomainError("hr_lipschitz: arguments must be >= 0");
    HRLipschitz l;
    l.D_f_beta = (kDHi * x1_sup + c) / (kBetaLo * kBetaLo);
    l.D_f_d = x1_sup / kBetaLo;
    return l;
}

dynsim::InterconnectionModel example1_model(const Example1Config& cfg, const ExploratorySystem& exo) {
    if (exo.kind != ExploratorySystem::Kind::hyperbolic_pair)
        throw ConfigError("example1_model: needs the hyperbolic pair");
    dynsim::InterconnectionModel m;
    m.name = "example1";
    m.n = 1;
    m.m = 3;  // log|lambda1|, log|lambda2|, accumulated excitation
    const double theta = cfg.theta, k = cfg.k, gamma = cfg.gamma, Delta = cfg.Delta_M, sign = exo.signs[0];
    m.f_x = [=](std::span<const double> x, std::span<const double> z, double, std::span<double> out) {
        double th = sign * std::exp(z[0]);
        out[0] = -k * x[0] + std::sin(x[0] * theta + theta) - std::sin(x[0] * th + th);
    };
    m.f_z = [=](std::span<const double> x, std::span<const double>, double, std::span<double> out) {
        double g = gamma * std::max(std::abs(x[0]) - Delta, 0.0);
        out[0] = g;
        out[1] = -g;
        out[2] = g;
    };
    double h0 = 0.0;
    if (theta / exo.lambda0[0] > 0.0) h0 = std::log(theta / exo.lambda0[0]);
    m.h = [h0](std::span<const double> z) { return h0 - z[2]; };
    m.set_A = dynsim::InvariantSet::origin();
    m.threshold = Delta;
    return m;
}

Example1Result run_example1(const Example1Config& cfg) {
    if (!(cfg.theta >= -1.0 && cfg.theta <= 1.0)) throw ConfigError("example1: theta must lie in [-1, 1]");
    if (!(cfg.gamma >= 0.0)) throw ConfigError("example1: gamma must be >= 0");
    if (!(cfg.k > 0.0)) throw ConfigError("example1: k must be > 0");
    auto exo = ExploratorySystem::hyperbolic_pair(cfg.lambda0);
    auto eta = EtaMap::first_component();
    auto model = example1_model(cfg, exo);

    Example1Result r;
    smallgain::ScheduleParams params(cfg.d, cfg.kappa);
    const double D_lambda = compute_D_lambda(1.0, 1.0, eta.D_eta, exo.omega_set_bound);
    auto env = gains::ContractionEnvelope::exponential(cfg.k, 1.0, D_lambda);
    auto wb = gains::WanderingBound::linear(cfg.gamma, cfg.gamma);
    r.gamma_max = smallgain::identifier_gain_bound(env, params, D_lambda);
    r.tau_star = smallgain::build_schedule(env, params).tau_star;
    r.h0 = model.h(std::vector<double>{0.0, 0.0, 0.0});
    r.membership = smallgain::check_trapping_separable(env, wb, params, std::abs(cfg.x0), r.h0);
    r.certified = cfg.gamma <= r.gamma_max && r.membership.member;
    if (cfg.gamma > r.gamma_max) r.warnings.push_back("gamma exceeds the certified gain bound");
    if (!r.membership.member) r.warnings.push_back("initial condition outside the certified trapping region");

    Vec z0 = exo.to_internal(exo.lambda0);
    z0.push_back(0.0);
    auto traj = dynsim::integrate(model, std::vector<double>{cfg.x0}, z0, 0.0, cfg.t_end, cfg.dt);

    std::vector<double> theta_hat(traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) {
        theta_hat[k] = eta(exo.to_lambda(traj.z(k)))[0];
        if (!eta.in_box(std::span<const double>(&theta_hat[k], 1))) r.theta_in_box = false;
    }
    if (!r.theta_in_box) r.warnings.push_back("theta_hat left the parameter box");
    std::size_t stride = std::max<std::size_t>(cfg.series_stride, 1);
    for (std::size_t k = 0; k < traj.size(); k += stride) {
        r.series_t.push_back(traj.times[k]);
        r.series_x.push_back(traj.x(k)[0]);
        r.series_theta_hat.push_back(theta_hat[k]);
        r.series_excitation.push_back(traj.z(k)[2]);
        r.series_lambda.push_back(exo.to_lambda(traj.z(k)));
    }

    const std::size_t last = traj.size() - 1;
    r.x_final = traj.x(last)[0];
    r.theta_hat_final = theta_hat[last];
    r.theta_drift = dynsim::trailing_drift(theta_hat, cfg.tail_fraction);
    auto tail_start = static_cast<std::size_t>(std::floor(static_cast<double>(last) * (1.0 - cfg.tail_fraction)));
    r.excitation_tail = traj.z(last)[2] - traj.z(tail_start)[2];

    r.sandwich = dynsim::verify_wandering_bound(traj, wb);
    r.min_gap = std::numeric_limits<double>::infinity();
    if (r.h0 > 0.0) {
        const double kappa = cfg.kappa;
        // Levels below 1e-10 h0 sit at the rounding floor of the accumulated excitation.
        int levels = static_cast<int>(std::ceil(std::log(1e10) / std::log(kappa)));
        r.hits = dynsim::hitting_times(traj, [kappa](int i) { return std::pow(kappa, -i); }, r.h0, levels);
        for (std::size_t i = 1; i < r.hits.size(); ++i)
            r.min_gap = std::min(r.min_gap, r.hits[i].t - r.hits[i - 1].t);
    }
    r.gaps_ok = r.min_gap >= r.tau_star - cfg.dt;

    if (traj.escaped)
        r.verdict = dynsim::Verdict::escaped;
    else if (std::abs(r.x_final) < cfg.tol_x && r.theta_drift < cfg.tol_theta)
        r.verdict = dynsim::Verdict::converged;
    else
        r.verdict = dynsim::Verdict::undecided;
    if (cfg.keep_trajectory) r.trajectory = std::move(traj);
    return r;
}

double PulseSpec::operator()(double t) const {
    double tt = t;
    if (period > 0.0) tt = std::fmod(t, period);
    return (tt >= start && tt < end) ? amplitude : 0.0;
}

dynsim::InterconnectionModel example2_model(const Example2Config& cfg, const ExploratorySystem& exo,
                                            const EtaMap& eta) {
    if (exo.kind != ExploratorySystem::Kind::torus_oscillators)
        throw ConfigError("example2_model: needs the torus oscillators");
    dynsim::InterconnectionModel m;
    m.name = "example2";
    m.n = 4;  // x1, x2, x_hat, w
    m.m = 5;  // lambda1..4, accumulated excitation
    HRObserverState obs;
    obs.rho = cfg.rho;
    obs.a = cfg.plant.a;
    obs.b = cfg.plant.b;
    obs.alpha = cfg.plant.alpha;
    obs.c_hr = cfg.plant.c;
    const HRParams p = cfg.plant;
    const PulseSpec pulse = cfg.pulse;
    const double Delta = cfg.delta / cfg.rho, gamma = cfg.gamma;
    m.f_x = [=](std::span<const double> x, std::span<const double> z, double t, std::span<double> out) {
        double u = pulse(t);
        double x1 = x[0], x1sq = x1 * x1;
        Vec theta = eta(z.first(4));
        out[0] = -p.a * x1sq * x1 + p.b * x1sq + x[1] + p.alpha * u;
        out[1] = p.c - p.beta * x[1] - p.d * x1sq;
        auto [dxh, dw] = hr_observer_rhs(obs, x1, x[2], x[3], u, theta[0], theta[1]);
        out[2] = dxh;
        out[3] = dw;
    };
    m.f_z = [=](std::span<const double> x, std::span<const double> z, double, std::span<double> out) {
        double g = gamma * std::max(std::abs(x[0] - x[2]) - Delta, 0.0);
        exo.field(z.first(4), out.first(4));
        for (std::size_t i = 0; i < 4; ++i) out[i] *= g;
        out[4] = g;
    };
    m.h = [](std::span<const double> z) { return -z[4]; };
    m.set_A = dynsim::InvariantSet::origin();
    m.error_map = [](std::span<const double> x) { return Vec{x[0] - x[2]}; };
    m.threshold = Delta;
    return m;
}

namespace {

dynsim::Trajectory replay_plant(const Example2Config& cfg, double beta, double d, std::size_t stride) {
    dynsim::InterconnectionModel m;
    m.name = "hr-replay";
    m.n = 2;
    HRParams p = cfg.plant;
    p.beta = beta;
    p.d = d;
    const PulseSpec pulse = cfg.pulse;
    m.f_x = [=](std::span<const double> x, std::span<const double>, double t, std::span<double> out) {
        double x1 = x[0], x1sq = x1 * x1;
        out[0] = -p.a * x1sq * x1 + p.b * x1sq + x[1] + p.alpha * pulse(t);
        out[1] = p.c - p.beta * x[1] - p.d * x1sq;
    };
    dynsim::IntegrateOptions opts;
    opts.record_stride = stride;
    return dynsim::integrate(m, std::vector<double>{cfg.x1_0, cfg.x2_0}, {}, 0.0, cfg.t_end, cfg.dt, opts);
}

}  // namespace

Example2Result run_example2(const Example2Config& cfg) {
    if (!(cfg.rho > 0.0)) throw ConfigError("example2: rho must be > 0");
    if (!(cfg.gamma >= 0.0)) throw ConfigError("example2: gamma must be >= 0");
    if (!(cfg.delta > 0.0)) throw ConfigError("example2: delta must be > 0");
    if (!(cfg.plant.beta >= kBetaLo && cfg.plant.beta <= kBetaHi) || !(cfg.plant.d >= kDLo && cfg.plant.d <= kDHi))
        throw ConfigError("example2: true (beta, d) must lie in [0.3, 0.7] x [2, 3]");
    auto exo = ExploratorySystem::torus_oscillators(cfg.omega_ratio * cfg.omega2, cfg.omega2, cfg.lambda0);
    auto eta = EtaMap::hr_arcsin(cfg.clip_eps);
    auto model = example2_model(cfg, exo, eta);

    Example2Result r;
    Vec z0 = cfg.lambda0;
    z0.push_back(0.0);
    std::vector<double> x0{cfg.x1_0, cfg.x2_0, 0.0, 0.0};
    auto traj = dynsim::integrate(model, x0, z0, 0.0, cfg.t_end, cfg.dt);

    const std::size_t last = traj.size() - 1;
    Vec E0 = exo.conserved(cfg.lambda0);
    std::vector<double> beta_hat(traj.size()), d_hat(traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) {
        auto z = traj.z(k);
        Vec theta = eta(z.first(4));
        beta_hat[k] = theta[0];
        d_hat[k] = theta[1];
        if (!eta.in_box(theta)) r.theta_in_box = false;
        Vec E = exo.conserved(z.first(4));
        for (std::size_t i = 0; i < E.size(); ++i)
            r.conserved_drift = std::max(r.conserved_drift, std::abs(E[i] - E0[i]) / E0[i]);
        r.x1_sup = std::max(r.x1_sup, std::abs(traj.x(k)[0]));
    }
    if (!r.theta_in_box) r.warnings.push_back("theta_hat left the parameter box");

    std::size_t stride = std::max<std::size_t>(cfg.series_stride, 1);
    for (std::size_t k = 0; k < traj.size(); k += stride) {
        auto x = traj.x(k);
        r.series_t.push_back(traj.times[k]);
        r.series_x1.push_back(x[0]);
        r.series_x2.push_back(x[1]);
        r.series_x_tilde.push_back(x[0] - x[2]);
        r.series_beta_hat.push_back(beta_hat[k]);
        r.series_d_hat.push_back(d_hat[k]);
        r.series_excitation.push_back(traj.z(k)[4]);
        auto z = traj.z(k);
        r.series_lambda.emplace_back(z.begin(), z.begin() + 4);
    }

    r.fit.beta_hat = beta_hat[last];
    r.fit.d_hat = d_hat[last];
    auto tail_start = static_cast<std::size_t>(std::floor(static_cast<double>(last) * (1.0 - cfg.tail_fraction)));
    double sum = 0.0;
    for (std::size_t k = tail_start; k <= last; ++k) sum += traj.dist[k];
    r.fit.residual_mean = sum / static_cast<double>(last - tail_start + 1);
    r.fit.residual_final = traj.dist[last];

    auto replay = replay_plant(cfg, r.fit.beta_hat, r.fit.d_hat, stride);
    for (std::size_t k = 0; k < replay.size(); ++k) {
        r.replay_x1.push_back(replay.x(k)[0]);
        r.replay_x2.push_back(replay.x(k)[1]);
    }
    double sq = 0.0;
    std::size_t count = std::min(r.replay_x1.size(), r.series_x1.size());
    for (std::size_t k = 0; k < count; ++k) {
        double e = r.replay_x1[k] - r.series_x1[k];
        sq += e * e;
        r.fit.replay_max = std::max(r.fit.replay_max, std::abs(e));
    }
    r.fit.replay_rms = count > 0 ? std::sqrt(sq / static_cast<double>(count)) : 0.0;

    r.sandwich = dynsim::verify_wandering_bound(traj, gains::WanderingBound::linear(cfg.gamma, cfg.gamma));

    r.lipschitz = hr_lipschitz(r.x1_sup, cfg.plant.c);
    r.D_lambda = compute_D_lambda(1.0 / cfg.rho, r.lipschitz.D_f(), eta.D_eta, exo.omega_set_bound);
    auto env = gains::ContractionEnvelope::exponential(cfg.rho, 1.0, 1.0 / cfg.rho);
    r.gamma_max = smallgain::identifier_gain_bound(env, smallgain::ScheduleParams(cfg.d, cfg.kappa), r.D_lambda);
    r.certified = cfg.gamma <= r.gamma_max;
    if (!r.certified) r.warnings.push_back("gamma exceeds the certified gain bound");

    double drift = std::max(dynsim::trailing_drift(beta_hat, cfg.tail_fraction),
                            dynsim::trailing_drift(d_hat, cfg.tail_fraction));
    if (traj.escaped)
        r.verdict = dynsim::Verdict::escaped;
    else if (r.fit.residual_mean < 1e-2 && drift < 1e-3)
        r.verdict = dynsim::Verdict::converged;
    else
        r.verdict = dynsim::Verdict::undecided;
    if (cfg.keep_trajectory) r.trajectory = std::move(traj);
    return r;
}

namespace {

nlohmann::json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

nlohmann::json sandwich_json(const dynsim::SandwichReport& s) {
    return {{"passed", s.passed},
            {"worst_violation", s.worst_violation},
            {"worst_time", s.worst_time},
            {"tolerance", s.tolerance}};
}

}  // namespace

nlohmann::json to_json(const Example1Result& r) {
    nlohmann::json hits = nlohmann::json::array();
    for (const auto& h : r.hits) hits.push_back({{"level", h.i}, {"t", h.t}});
    return {{"verdict", dynsim::to_string(r.verdict)},
            {"x_final", r.x_final},
            {"theta_hat_final", r.theta_hat_final},
            {"theta_drift", r.theta_drift},
            {"excitation_tail", r.excitation_tail},
            {"certified", r.certified},
            {"gamma_max", r.gamma_max},
            {"trapping_margin", finite_or_null(r.membership.margin)},
            {"h0", r.h0},
            {"tau_star", r.tau_star},
            {"min_gap", finite_or_null(r.min_gap)},
            {"gaps_ok", r.gaps_ok},
            {"hits", hits},
            {"sandwich", sandwich_json(r.sandwich)},
            {"theta_in_box", r.theta_in_box},
            {"warnings", r.warnings}};
}

nlohmann::json to_json(const Example2Result& r) {
    return {{"verdict", dynsim::to_string(r.verdict)},
            {"beta_hat", r.fit.beta_hat},
            {"d_hat", r.fit.d_hat},
            {"residual_mean", r.fit.residual_mean},
            {"residual_final", r.fit.residual_final},
            {"replay_rms", r.fit.replay_rms},
            {"replay_max", r.fit.replay_max},
            {"sandwich", sandwich_json(r.sandwich)},
            {"conserved_drift", r.conserved_drift},
            {"theta_in_box", r.theta_in_box},
            {"x1_sup", r.x1_sup},
            {"D_f_beta", r.lipschitz.D_f_beta},
            {"D_f_d", r.lipschitz.D_f_d},
            {"D_lambda", r.D_lambda},
            {"gamma_max", r.gamma_max},
            {"certified", r.certified},
            {"warnings", r.warnings}};
}

}  // namespace nusg::observer
