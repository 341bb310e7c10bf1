#include "nusg/gains.hpp"

#include "nusg/errors.hpp"
#include "nusg/numerics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace nusg::gains {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

double parse_number(std::string_view text, std::string_view context) {
    std::string owned(trim(text));
    char* end = nullptr;
    double v = std::strtod(owned.c_str(), &end);
    if (owned.empty() || end != owned.c_str() + owned.size() || !std::isfinite(v))
        throw ConfigError("bad number '" + owned + "' in " + std::string(context));
    return v;
}

std::vector<std::string_view> split_args(std::string_view args) {
    std::vector<std::string_view> out;
    if (trim(args).empty()) return out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= args.size(); ++i) {
        if (i == args.size() || args[i] == ',') {
            out.push_back(trim(args.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

// Values that underflow to zero count as having reached the limit.
bool strictly_below(double later, double earlier) {
    return later < earlier || (later == 0.0 && earlier == 0.0);
}

}  // namespace

ScalarFn::ScalarFn(std::string name, Eval eval, std::optional<double> domain_hint)
    : name_(std::move(name)), eval_(std::move(eval)), domain_hint_(domain_hint) {}

double ScalarFn::operator()(double s) const {
    if (!eval_) throw std::logic_error("ScalarFn '" + name_ + "' has no evaluator");
    double v = eval_(s);
    if (!std::isfinite(v))
        throw EvaluationError(name_ + " returned a non-finite value at s=" + fmt(s), s);
    return v;
}

ScalarFn ScalarFn::identity() {
    return {"identity", [](double s) { return s; }};
}

ScalarFn ScalarFn::power(double p, double a) {
    if (!(p > 0) || !(a > 0)) throw DomainError("power: need p > 0 and a > 0");
    return {"power(" + fmt(p) + ", " + fmt(a) + ")", [p, a](double s) { return a * std::pow(s, p); }};
}

ScalarFn ScalarFn::linear(double a) {
    if (!(a >= 0)) throw DomainError("linear: need a >= 0");
    return {"linear(" + fmt(a) + ")", [a](double s) { return a * s; }};
}

ScalarFn ScalarFn::exp_decay(double lambda, double D) {
    if (!(lambda > 0) || !(D > 0)) throw DomainError("exp_decay: need lambda > 0 and D > 0");
    return {"exp_decay(" + fmt(lambda) + ", " + fmt(D) + ")",
            [lambda, D](double t) { return D * std::exp(-lambda * t); }};
}

ScalarFn ScalarFn::piecewise_linear(std::vector<std::pair<double, double>> bp) {
    if (bp.size() < 2) throw DomainError("table: need at least two breakpoints");
    for (std::size_t i = 1; i < bp.size(); ++i)
        if (!(bp[i].first > bp[i - 1].first))
            throw DomainError("table: abscissae must be strictly increasing");
    double last = bp.back().first;
    auto eval = [bp = std::move(bp)](double s) {
        auto it = std::upper_bound(bp.begin(), bp.end(), s,
                                   [](double v, const auto& p) { return v < p.first; });
        std::size_t hi = std::clamp<std::size_t>(it - bp.begin(), 1, bp.size() - 1);
        const auto& [s0, v0] = bp[hi - 1];
        const auto& [s1, v1] = bp[hi];
        return v0 + (v1 - v0) * (s - s0) / (s1 - s0);
    };
    return {"table", std::move(eval), last};
}

ScalarFn parse_scalar_fn(std::string_view text) {
    std::string_view t = trim(text);
    if (t == "identity") return ScalarFn::identity();
    auto open = t.find('(');
    if (open == std::string_view::npos || t.back() != ')')
        throw ConfigError("unknown function '" + std::string(t) + "'");
    std::string_view name = trim(t.substr(0, open));
    auto args = split_args(t.substr(open + 1, t.size() - open - 2));
    std::string ctx(t);

    auto want = [&](std::size_t lo, std::size_t hi) {
        if (args.size() < lo || args.size() > hi)
            throw ConfigError("wrong argument count in '" + ctx + "'");
    };
    try {
        if (name == "power") {
            want(1, 2);
            return ScalarFn::power(parse_number(args[0], ctx),
                                   args.size() == 2 ? parse_number(args[1], ctx) : 1.0);
        }
        if (name == "linear") {
            want(1, 1);
            return ScalarFn::linear(parse_number(args[0], ctx));
        }
        if (name == "exp_decay") {
            want(2, 2);
            return ScalarFn::exp_decay(parse_number(args[0], ctx), parse_number(args[1], ctx));
        }
        if (name == "table") {
            std::vector<std::pair<double, double>> bp;
            for (auto a : args) {
                auto colon = a.find(':');
                if (colon == std::string_view::npos)
                    throw ConfigError("table entry '" + std::string(a) + "' needs s:v");
                bp.emplace_back(parse_number(a.substr(0, colon), ctx),
                                parse_number(a.substr(colon + 1), ctx));
            }
            return ScalarFn::piecewise_linear(std::move(bp));
        }
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    throw ConfigError("unknown function '" + std::string(name) + "'");
}

std::string_view to_string(EnvelopeKind kind) {
    switch (kind) {
        case EnvelopeKind::general: return "general";
        case EnvelopeKind::separable: return "separable";
        case EnvelopeKind::exponential: return "exponential";
    }
    return "?";
}

ContractionEnvelope ContractionEnvelope::exponential(double lambda, double D_beta, double c) {
    if (!(lambda > 0)) throw DomainError("exponential envelope: lambda must be > 0");
    if (!(D_beta >= 1)) throw DomainError("exponential envelope: D_beta must be >= 1");
    if (!(c >= 0)) throw DomainError("envelope gain c must be >= 0");
    ContractionEnvelope env;
    env.kind = EnvelopeKind::exponential;
    env.beta_x = ScalarFn::identity();
    env.beta_t = ScalarFn::exp_decay(lambda, D_beta);
    env.c = c;
    env.lambda = lambda;
    env.D_beta = D_beta;
    return env;
}

ContractionEnvelope ContractionEnvelope::separable(ScalarFn beta_x, ScalarFn beta_t, double c) {
    if (!beta_x || !beta_t) throw DomainError("separable envelope needs beta_x and beta_t");
    if (!(c >= 0)) throw DomainError("envelope gain c must be >= 0");
    ContractionEnvelope env;
    env.kind = EnvelopeKind::separable;
    env.beta_x = std::move(beta_x);
    env.beta_t = std::move(beta_t);
    env.c = c;
    return env;
}

ContractionEnvelope ContractionEnvelope::general(std::function<double(double, double)> kl,
                                                 ScalarFn beta_x, ScalarFn beta_t, double c) {
    auto env = separable(std::move(beta_x), std::move(beta_t), c);
    env.kind = EnvelopeKind::general;
    env.kl = std::move(kl);
    return env;
}

double ContractionEnvelope::beta(double s, double t) const {
    if (kl) {
        double v = kl(s, t);
        if (!std::isfinite(v)) throw EvaluationError("KL bound returned a non-finite value", s);
        return v;
    }
    return beta_x(s) * beta_t(t);
}

WanderingBound WanderingBound::linear(double D_gamma0, double D_gamma1) {
    if (!(D_gamma0 >= 0) || !(D_gamma1 >= 0)) throw DomainError("linear bound: gains must be >= 0");
    WanderingBound wb;
    wb.gamma0 = ScalarFn::linear(D_gamma0);
    wb.gamma1 = ScalarFn::linear(D_gamma1);
    wb.gamma01 = ScalarFn::identity();
    wb.gamma02 = ScalarFn::linear(D_gamma0);
    wb.D_gamma0 = D_gamma0;
    return wb;
}

double beta_t_inverse(const ContractionEnvelope& env, double y, const InverseOptions& opts) {
    double b0 = env.beta_t0();
    if (!(y > 0) || y > b0 * (1 + 1e-15))
        throw DomainError("beta_t_inverse: y=" + fmt(y) + " outside (0, beta_t(0)=" + fmt(b0) + "]");
    if (env.kind == EnvelopeKind::exponential)
        return std::max(0.0, -std::log(y / env.D_beta) / env.lambda);
    if (y >= b0) return 0.0;

    auto grid = numerics::logspace(opts.t_max * 1e-9, opts.t_max,
                                   static_cast<std::size_t>(std::max(opts.monotone_samples, 2)));
    double prev = b0;
    double prev_t = 0.0;
    for (double t : grid) {
        double v = env.beta_t(t);
        if (!strictly_below(v, prev))
            throw InvariantViolation("beta_t not strictly decreasing between t=" + fmt(prev_t) +
                                     " and t=" + fmt(t));
        prev = v;
        prev_t = t;
    }
    if (prev > y)
        throw DomainError("beta_t_inverse: beta_t(t_max) still above y=" + fmt(y));

    return numerics::bisect([&](double t) { return env.beta_t(t) - y; }, 0.0, opts.t_max,
                            opts.tol_rel * y);
}

ClassKReport validate_class_k(const ScalarFn& fn, int grid_size, double upper) {
    if (grid_size < 2 || !(upper > 0)) throw DomainError("validate_class_k: need grid >= 2, upper > 0");
    ClassKReport report;
    report.is_zero_at_zero = std::abs(fn(0.0)) <= 1e-15;
    auto grid = numerics::linspace(0.0, upper, static_cast<std::size_t>(grid_size));
    double prev = fn(grid[0]);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        double v = fn(grid[i]);
        if (!(v > prev)) report.violations.emplace_back(grid[i - 1], grid[i]);
        prev = v;
    }
    report.is_strictly_increasing = report.violations.empty();
    return report;
}

DecreasingReport validate_decreasing(const ScalarFn& fn, int grid_size, double t_probe, double tol) {
    if (grid_size < 2 || !(t_probe > 0)) throw DomainError("validate_decreasing: need grid >= 2, t_probe > 0");
    DecreasingReport report;
    auto grid = numerics::linspace(0.0, t_probe, static_cast<std::size_t>(grid_size));
    double prev = fn(grid[0]);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        double v = fn(grid[i]);
        if (!strictly_below(v, prev)) report.violations.emplace_back(grid[i - 1], grid[i]);
        prev = v;
    }
    report.is_strictly_decreasing = report.violations.empty();
    report.tail_value = prev;
    report.vanishes = std::abs(prev) < tol;
    return report;
}

EnvelopeReport validate_envelope(const ContractionEnvelope& env, int grid_size, double s_upper,
                                 double t_probe) {
    EnvelopeReport report;
    report.beta_x = validate_class_k(env.beta_x, grid_size, s_upper);
    report.beta_t = validate_decreasing(env.beta_t, grid_size, t_probe);
    report.beta_t0_at_least_one = env.beta_t0() >= 1.0;

    double worst = 0.0;
    if (env.kind == EnvelopeKind::exponential) {
        for (double t : numerics::linspace(0.0, t_probe, static_cast<std::size_t>(grid_size))) {
            double expect = env.D_beta * std::exp(-env.lambda * t);
            worst = std::max(worst, std::abs(env.beta_t(t) - expect) - 1e-12 * env.D_beta);
        }
    } else if (env.kl) {
        auto n = static_cast<std::size_t>(std::max(16, grid_size / 8));
        for (double s : numerics::linspace(0.0, s_upper, n))
            for (double t : numerics::linspace(0.0, t_probe, n))
                worst = std::max(worst, env.beta(s, t) - env.beta_x(s) * env.beta_t(t) - 1e-12);
    }
    report.worst_kind_violation = worst;
    report.kind_consistent = worst <= 0.0;
    return report;
}

FactorizationReport check_factorization(const WanderingBound& wb, double M, int grid_size) {
    if (!(M > 0) || grid_size < 2) throw DomainError("check_factorization: need M > 0, grid >= 2");
    auto grid = numerics::linspace(0.0, M, static_cast<std::size_t>(grid_size));
    std::vector<double> g01(grid.size()), g02(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        g01[i] = wb.gamma01(grid[i]);
        g02[i] = wb.gamma02(grid[i]);
    }
    FactorizationReport report;
    report.worst_margin = INFINITY;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t j = 0; j < grid.size(); ++j) {
            double margin = g01[i] * g02[j] - wb.gamma0(grid[i] * grid[j]);
            if (margin < report.worst_margin) {
                report.worst_margin = margin;
                report.worst_a = grid[i];
                report.worst_b = grid[j];
            }
        }
    }
    report.passed = report.worst_margin >= -1e-12;
    return report;
}

BoundReport check_bound_order(const WanderingBound& wb, double upper, int grid_size) {
    BoundReport report;
    report.worst_margin = INFINITY;
    for (double s : numerics::linspace(0.0, upper, static_cast<std::size_t>(grid_size))) {
        double margin = wb.gamma0(s) - wb.gamma1(s);
        if (margin < report.worst_margin) {
            report.worst_margin = margin;
            report.worst_s = s;
        }
    }
    report.passed = report.worst_margin >= -1e-12;
    return report;
}

BoundReport check_lipschitz(const WanderingBound& wb, double upper, int grid_size) {
    if (!wb.D_gamma0) throw ConfigError("check_lipschitz: D_gamma0 not set");
    BoundReport report;
    report.worst_margin = INFINITY;
    for (double s : numerics::linspace(0.0, upper, static_cast<std::size_t>(grid_size))) {
        double margin = *wb.D_gamma0 * s - std::abs(wb.gamma0(s));
        if (margin < report.worst_margin) {
            report.worst_margin = margin;
            report.worst_s = s;
        }
    }
    report.passed = report.worst_margin >= -1e-12;
    return report;
}

}  // namespace nusg::gains
