#include "nusg/dynsim.hpp"

#include "nusg/errors.hpp"
#include "nusg/numerics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

namespace nusg::dynsim {

InvariantSet InvariantSet::origin() { return {}; }

InvariantSet InvariantSet::point(Vec center) {
    return {Kind::point, std::move(center), 0.0};
}

InvariantSet InvariantSet::ball(Vec center, double radius) {
    if (!(radius >= 0)) throw DomainError("ball radius must be >= 0");
    return {Kind::ball, std::move(center), radius};
}

double set_distance(std::span<const double> x, const InvariantSet& A) {
    double sq = 0.0;
    if (A.kind == InvariantSet::Kind::origin_point && A.center.empty()) {
        for (double v : x) sq += v * v;
        return std::sqrt(sq);
    }
    if (x.size() != A.center.size())
        throw DomainError("set_distance: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                          std::to_string(A.center.size()) + ")");
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - A.center[i]) * (x[i] - A.center[i]);
    double d = std::sqrt(sq);
    return A.kind == InvariantSet::Kind::ball ? std::max(d - A.radius, 0.0) : d;
}

double thresholded_distance(std::span<const double> x, const InvariantSet& A, double Delta) {
    if (!(Delta >= 0)) throw DomainError("threshold must be >= 0");
    return std::max(set_distance(x, A) - Delta, 0.0);
}

namespace {

void eval_field(const InterconnectionModel& model, std::span<const double> y, double t,
                std::span<double> out) {
    auto x = y.subspan(0, model.n);
    auto z = y.subspan(model.n, model.m);
    model.f_x(x, z, t, out.subspan(0, model.n));
    if (model.m > 0) model.f_z(x, z, t, out.subspan(model.n, model.m));
    for (double v : out)
        if (!std::isfinite(v))
            throw IntegrationError("non-finite derivative in " + model.name + " at t=" + format_double(t), t);
}

struct Stepper {
    const InterconnectionModel& model;
    Vec k1, k2, k3, k4, tmp;

    explicit Stepper(const InterconnectionModel& m)
        : model(m), k1(m.n + m.m), k2(k1.size()), k3(k1.size()), k4(k1.size()), tmp(k1.size()) {}

    void step(std::span<double> y, double t, double dt) {
        const std::size_t N = y.size();
        eval_field(model, y, t, k1);
        for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + 0.5 * dt * k1[i];
        eval_field(model, tmp, t + 0.5 * dt, k2);
        for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + 0.5 * dt * k2[i];
        eval_field(model, tmp, t + 0.5 * dt, k3);
        for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + dt * k3[i];
        eval_field(model, tmp, t + dt, k4);
        for (std::size_t i = 0; i < N; ++i)
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
};

double measured_distance(const InterconnectionModel& model, std::span<const double> x) {
    if (model.error_map) {
        Vec e = model.error_map(x);
        return thresholded_distance(e, model.set_A, model.threshold);
    }
    return thresholded_distance(x, model.set_A, model.threshold);
}

void record(Trajectory& traj, const InterconnectionModel& model, std::span<const double> y, double t) {
    traj.times.push_back(t);
    traj.states.insert(traj.states.end(), y.begin(), y.end());
    traj.dist.push_back(measured_distance(model, y.subspan(0, model.n)));
    traj.h.push_back(model.h ? model.h(y.subspan(model.n, model.m)) : 0.0);
}

}  // namespace

Vec rk4_step(const InterconnectionModel& model, std::span<const double> state, double t, double dt) {
    if (state.size() != model.n + model.m) throw DomainError("rk4_step: state dimension mismatch");
    Vec y(state.begin(), state.end());
    Stepper(model).step(y, t, dt);
    return y;
}

Trajectory integrate(const InterconnectionModel& model, std::span<const double> x0,
                     std::span<const double> z0, double t0, double t_end, double dt,
                     const IntegrateOptions& opts) {
    if (!(dt > 0)) throw DomainError("integrate: dt must be > 0");
    if (!(t_end > t0)) throw DomainError("integrate: t_end must exceed t0");
    if (x0.size() != model.n || z0.size() != model.m)
        throw DomainError("integrate: initial state dimension mismatch for " + model.name);
    if (!model.f_x || (model.m > 0 && !model.f_z)) throw ConfigError("integrate: model fields missing");
    std::size_t stride = std::max<std::size_t>(opts.record_stride, 1);

    Trajectory traj;
    traj.n = model.n;
    traj.m = model.m;
    traj.dt = dt * static_cast<double>(stride);

    const long long steps = std::llround((t_end - t0) / dt);
    std::size_t expected = static_cast<std::size_t>(steps) / stride + 2;
    traj.times.reserve(expected);
    traj.states.reserve(expected * (model.n + model.m));
    traj.dist.reserve(expected);
    traj.h.reserve(expected);

    Vec y(x0.begin(), x0.end());
    y.insert(y.end(), z0.begin(), z0.end());
    record(traj, model, y, t0);

    Stepper stepper(model);
    for (long long k = 0; k < steps; ++k) {
        double t = t0 + static_cast<double>(k) * dt;
        stepper.step(y, t, dt);
        double t_next = t0 + static_cast<double>(k + 1) * dt;
        bool blown = false;
        for (double v : y)
            if (!(std::abs(v) <= opts.blowup)) blown = true;
        if (blown) {
            traj.escaped = true;
            traj.escape_time = t_next;
            bool finite = std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); });
            if (finite) record(traj, model, y, t_next);
            break;
        }
        if ((k + 1) % static_cast<long long>(stride) == 0 || k + 1 == steps)
            record(traj, model, y, t_next);
    }
    return traj;
}

SandwichReport verify_wandering_bound(const Trajectory& traj, const gains::WanderingBound& wb,
                                      double C) {
    SandwichReport report;
    report.tolerance = C * traj.dt * traj.dt;
    if (traj.size() == 0) {
        report.passed = true;
        return report;
    }
    std::vector<double> g0(traj.size()), g1(traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) {
        g0[k] = wb.gamma0(traj.dist[k]);
        g1[k] = wb.gamma1(traj.dist[k]);
    }
    auto I0 = numerics::cumulative_trapezoid(g0, traj.dt);
    auto I1 = numerics::cumulative_trapezoid(g1, traj.dt);
    for (std::size_t k = 0; k < traj.size(); ++k) {
        double drop = traj.h[0] - traj.h[k];
        double v = std::max(I1[k] - drop, drop - I0[k]);
        if (v > report.worst_violation) {
            report.worst_violation = v;
            report.worst_time = traj.times[k];
        }
    }
    report.passed = report.worst_violation <= report.tolerance;
    return report;
}

std::vector<Hit> hitting_times(const Trajectory& traj, const std::function<double(int)>& sigma,
                               double h_z0, int max_levels, double tol) {
    std::vector<Hit> hits;
    if (traj.size() == 0) return hits;
    for (std::size_t k = 1; k < traj.size(); ++k)
        if (traj.h[k] > traj.h[k - 1] + tol)
            throw InvariantViolation("h increases by " + format_double(traj.h[k] - traj.h[k - 1]) +
                                     " at t=" + format_double(traj.times[k]));
    hits.push_back({0, traj.times[0]});
    std::size_t k = 1;
    for (int i = 1; i <= max_levels; ++i) {
        double level = sigma(i) * h_z0;
        while (k < traj.size() && traj.h[k] > level) ++k;
        if (k >= traj.size()) break;
        double h0 = traj.h[k - 1], h1 = traj.h[k];
        double frac = h0 == h1 ? 1.0 : std::clamp((h0 - level) / (h0 - h1), 0.0, 1.0);
        double t = traj.times[k - 1] + frac * (traj.times[k] - traj.times[k - 1]);
        hits.push_back({i, std::max(t, hits.back().t)});
    }
    return hits;
}

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::converged: return "converged";
        case Verdict::escaped: return "escaped";
        case Verdict::undecided: return "undecided";
    }
    return "?";
}

double trailing_drift(const std::vector<double>& series, double tail_fraction) {
    if (series.empty()) return 0.0;
    auto start = static_cast<std::size_t>(std::floor(static_cast<double>(series.size() - 1) *
                                                     (1.0 - tail_fraction)));
    auto [lo, hi] = std::minmax_element(series.begin() + static_cast<std::ptrdiff_t>(start), series.end());
    return *hi - *lo;
}

Verdict classify(const Trajectory& traj, const ClassifyOptions& opts) {
    if (traj.escaped) return Verdict::escaped;
    if (traj.size() == 0) return Verdict::undecided;
    if (traj.dist.back() < opts.dist_tol && trailing_drift(traj.h, opts.tail_fraction) < opts.drift_tol)
        return Verdict::converged;
    return Verdict::undecided;
}

SteadyStateMap estimate_steady_state_characteristic(
    const std::function<InterconnectionModel(double)>& factory, const std::vector<double>& inputs,
    std::span<const double> x0, const SteadyStateOptions& opts) {
    SteadyStateMap out;
    for (double u : inputs) {
        InterconnectionModel model = factory(u);
        Vec z0(model.m, 0.0);
        auto traj = integrate(model, x0, z0, 0.0, opts.t_settle + opts.t_avg, opts.dt);
        SteadyStatePoint p;
        p.input = u;
        if (traj.escaped) {
            p.limit = std::numeric_limits<double>::infinity();
            out.points.push_back(p);
            continue;
        }
        auto window = static_cast<std::size_t>(std::llround(opts.t_avg / traj.dt));
        window = std::min(window, traj.size() - 1);
        std::size_t start = traj.size() - 1 - window;
        double mean = 0.0;
        for (std::size_t k = start; k < traj.size(); ++k) mean += traj.dist[k];
        mean /= static_cast<double>(window + 1);
        double var = 0.0;
        for (std::size_t k = start; k < traj.size(); ++k) var += (traj.dist[k] - mean) * (traj.dist[k] - mean);
        double sd = std::sqrt(var / static_cast<double>(window + 1));
        p.limit = mean;
        p.settled = sd <= opts.rel_tol * std::abs(mean) || sd <= opts.abs_tol;

        auto integral = [&](std::size_t from) {
            std::span<const double> seg(traj.dist.data() + from, window + 1);
            return numerics::cumulative_trapezoid(seg, traj.dt).back();
        };
        p.window_integral = integral(start);
        if (start >= window) {
            double prev = integral(start - window);
            double diff = std::abs(p.window_integral - prev);
            p.settled_on_average = diff <= opts.rel_tol * std::abs(p.window_integral) || diff <= opts.abs_tol;
        }
        if (p.limit < opts.zero_tol) out.zero_set.push_back(u);
        out.points.push_back(p);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_csv(std::ostream& os, const Trajectory& traj, const std::vector<std::string>& x_names,
               const std::vector<std::string>& z_names, std::size_t stride) {
    os << "t";
    for (std::size_t i = 0; i < traj.n; ++i)
        os << ',' << (i < x_names.size() ? x_names[i] : "x" + std::to_string(i + 1));
    for (std::size_t i = 0; i < traj.m; ++i)
        os << ',' << (i < z_names.size() ? z_names[i] : "z" + std::to_string(i + 1));
    os << ",dist,h\n";
    stride = std::max<std::size_t>(stride, 1);
    for (std::size_t k = 0; k < traj.size(); ++k) {
        if (k % stride != 0 && k + 1 != traj.size()) continue;
        os << format_double(traj.times[k]);
        for (double v : traj.state(k)) os << ',' << format_double(v);
        os << ',' << format_double(traj.dist[k]) << ',' << format_double(traj.h[k]) << '\n';
    }
}

nlohmann::json summary_json(const Trajectory& traj, Verdict verdict) {
    nlohmann::json j;
    j["verdict"] = std::string(to_string(verdict));
    j["samples"] = traj.size();
    j["escaped"] = traj.escaped;
    j["escape_time"] = std::isnan(traj.escape_time) ? nlohmann::json(nullptr) : nlohmann::json(traj.escape_time);
    if (traj.size() > 0) {
        auto last = traj.size() - 1;
        j["final_time"] = traj.times[last];
        auto s = traj.state(last);
        j["final_state"] = std::vector<double>(s.begin(), s.end());
        j["final_dist"] = traj.dist[last];
        j["final_h"] = traj.h[last];
        j["h_trailing_drift"] = trailing_drift(traj.h, 0.1);
    }
    return j;
}

}  // namespace nusg::dynsim

namespace nusg::dynsim::fixtures {

InterconnectionModel linear_decay(double lambda) {
    InterconnectionModel m;
    m.name = "linear-decay";
    m.n = 1;
    m.f_x = [lambda](auto x, auto, double, auto out) { out[0] = -lambda * x[0]; };
    return m;
}

namespace {

InterconnectionModel planar(std::string name, Field f_x, Field f_z,
                            std::function<double(std::span<const double>)> h) {
    InterconnectionModel m;
    m.name = std::move(name);
    m.n = 1;
    m.m = 1;
    m.f_x = std::move(f_x);
    m.f_z = std::move(f_z);
    m.h = std::move(h);
    return m;
}

}  // namespace

InterconnectionModel saddle_node(double eps, double gamma) {
    return planar(
        "saddle-node", [](auto x, auto z, double, auto out) { out[0] = -x[0] + z[0]; },
        [eps, gamma](auto x, auto, double, auto out) { out[0] = eps + gamma * x[0] * x[0]; },
        [](auto z) { return -z[0]; });
}

InterconnectionModel saddle_node_decoupled(double eps, double gamma) {
    return planar(
        "saddle-node-decoupled", [](auto x, auto z, double, auto out) { out[0] = -x[0] + z[0]; },
        [eps, gamma](auto, auto z, double, auto out) { out[0] = eps + gamma * z[0] * z[0]; },
        [](auto z) { return -z[0]; });
}

InterconnectionModel cascade_damped(double lambda1, double lambda2, double c1, double c2) {
    return planar(
        "cascade-damped",
        [lambda1, c1](auto x, auto z, double, auto out) { out[0] = -lambda1 * x[0] + c1 * z[0]; },
        [lambda2, c2](auto x, auto z, double, auto out) { out[0] = -lambda2 * z[0] - c2 * std::abs(x[0]); },
        [](auto z) { return z[0]; });
}

InterconnectionModel cascade_integrator(double lambda1, double c1, double c2) {
    return planar(
        "cascade-integrator",
        [lambda1, c1](auto x, auto z, double, auto out) { out[0] = -lambda1 * x[0] + c1 * z[0]; },
        [c2](auto x, auto, double, auto out) { out[0] = -c2 * std::abs(x[0]); },
        [](auto z) { return z[0]; });
}

}  // namespace nusg::dynsim::fixtures
