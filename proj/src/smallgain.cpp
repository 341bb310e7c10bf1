#include "nusg/smallgain.hpp"

#include "nusg/errors.hpp"
#include "nusg/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nusg::smallgain {

namespace {

constexpr double kSlack = 1e-12;

using gains::ContractionEnvelope;
using gains::ScalarFn;
using gains::WanderingBound;

double growth_factor(const ScheduleParams& p) { return 1.0 + p.kappa / (1.0 - p.d); }

// (beta_t^-1(d/kappa))^-1 (kappa-1)/kappa
double delta0_of(const ContractionEnvelope& env, const ScheduleParams& p) {
    double t = gains::beta_t_inverse(env, p.d / p.kappa);
    if (!(t > 0)) throw DomainError("beta_t^-1(d/kappa) is zero; Delta0 undefined");
    return (p.kappa - 1.0) / (p.kappa * t);
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw EvaluationError(std::string(what) + " is not finite", v);
}

}  // namespace

ScheduleParams::ScheduleParams(double d_, double kappa_) : d(d_), kappa(kappa_) {
    if (!(d > 0 && d < 1)) throw DomainError("d must lie in (0, 1)");
    if (!(kappa > 1) || !std::isfinite(kappa)) throw DomainError("kappa must be > 1");
}

double Schedule::sigma(int i) const { return std::pow(params.kappa, -static_cast<double>(i)); }

Schedule build_schedule(const ContractionEnvelope& env, const ScheduleParams& params) {
    double b0 = env.beta_t0();
    if (!(b0 >= 1)) throw DomainError("beta_t(0) must be >= 1");
    Schedule s{params};
    s.xi_star = params.d / (params.kappa * b0);
    s.tau_star = gains::beta_t_inverse(env, s.xi_star * b0);
    s.delta0 = delta0_of(env, params);
    require_finite(s.tau_star, "tau_star");
    require_finite(s.delta0, "delta0");
    return s;
}

BoundPair compute_B1_B2(const ContractionEnvelope& env, const ScheduleParams& params,
                        double x0_norm, double h_z0) {
    if (!(x0_norm >= 0)) throw DomainError("x0_norm must be >= 0");
    double b0 = env.beta_t0();
    BoundPair out{b0 * x0_norm, b0 * env.c * std::abs(h_z0) * growth_factor(params)};
    require_finite(out.B1, "B1");
    require_finite(out.B2, "B2");
    return out;
}

Membership check_trapping_separable(const ContractionEnvelope& env, const WanderingBound& wb,
                                    const ScheduleParams& params, double x0_norm, double h_z0) {
    if (!wb.D_gamma0) throw ConfigError("check_trapping_separable: D_gamma0 not set");
    double D = *wb.D_gamma0;
    if (!(h_z0 > 0)) return {false, -D, "h(z0) must be positive"};

    auto [B1, B2] = compute_B1_B2(env, params, x0_norm, h_z0);
    double denom = B1 + B2 + env.c * std::abs(h_z0);
    double rhs = denom > 0 ? delta0_of(env, params) * h_z0 / denom
                           : std::numeric_limits<double>::infinity();
    Membership m;
    m.margin = rhs - D;
    m.member = D <= rhs + kSlack;
    m.reason = m.member ? "" : "Lipschitz constant of gamma0 exceeds the admissible bound";
    return m;
}

double small_gain_G(const ContractionEnvelope& env, const ScheduleParams& params) {
    double t = gains::beta_t_inverse(env, params.d / params.kappa);
    return t * params.kappa / (params.kappa - 1.0) * (env.beta_t0() * growth_factor(params) + 1.0);
}

GOptimum optimize_G(const ContractionEnvelope& env, const OptimizeOptions& opts) {
    GOptimum best;
    best.G_star = std::numeric_limits<double>::infinity();
    auto ds = numerics::logspace(opts.d_lo, opts.d_hi, static_cast<std::size_t>(opts.grid));
    auto ks = numerics::logspace(opts.kappa_lo, opts.kappa_hi, static_cast<std::size_t>(opts.grid));
    for (double d : ds) {
        for (double k : ks) {
            double G = small_gain_G(env, ScheduleParams(d, k));
            ++best.evaluations;
            if (G < best.G_star) best = {G, d, k, best.evaluations};
        }
    }

    auto decode = [](std::span<const double> u) {
        return std::pair{1.0 / (1.0 + std::exp(-u[0])), 1.0 + std::exp(u[1])};
    };
    int evals = 0;
    auto objective = [&](std::span<const double> u) {
        ++evals;
        auto [d, k] = decode(u);
        if (!(d > 0 && d < 1) || !(k > 1) || !std::isfinite(k))
            return std::numeric_limits<double>::infinity();
        return small_gain_G(env, ScheduleParams(d, k));
    };
    std::vector<double> start{std::log(best.d_opt / (1.0 - best.d_opt)), std::log(best.kappa_opt - 1.0)};
    auto res = numerics::nelder_mead(objective, start, 0.1, opts.xtol, opts.max_iter);
    best.evaluations += evals;
    if (!res.converged) throw OptimizerError("optimize_G: simplex did not converge", best);
    if (res.value < best.G_star) {
        auto [d, k] = decode(res.x);
        best.G_star = res.value;
        best.d_opt = d;
        best.kappa_opt = k;
    }
    return best;
}

bool check_small_gain_existence(double D_gamma0, double c, double G) {
    if (!(D_gamma0 >= 0) || !(c >= 0) || !(G >= 0))
        throw DomainError("check_small_gain_existence: arguments must be nonnegative");
    return D_gamma0 * c * G < 1.0;
}

X0Bound trapping_x0_bound(const ContractionEnvelope& env, const ScheduleParams& params,
                          double D_gamma0, double c, double h_z0) {
    if (!(h_z0 > 0) || !(D_gamma0 > 0))
        throw DomainError("trapping_x0_bound: need h_z0 > 0 and D_gamma0 > 0");
    double b0 = env.beta_t0();
    double bracket = delta0_of(env, params) / D_gamma0 - c * (b0 * growth_factor(params) + 1.0);
    X0Bound out;
    out.x0_max = bracket * h_z0 / b0;
    out.empty = out.x0_max < 0;
    return out;
}

double identifier_gain_bound(const ContractionEnvelope& env, const ScheduleParams& params,
                             double D_lambda) {
    if (!(D_lambda > 0)) throw DomainError("identifier_gain_bound: D_lambda must be > 0");
    return delta0_of(env, params) / (D_lambda * (env.beta_t0() * growth_factor(params) + 1.0));
}

GeneralScheduleSpec constant_schedule_spec(const ContractionEnvelope& env,
                                           const ScheduleParams& params) {
    Schedule sched = build_schedule(env, params);
    double b0 = env.beta_t0();
    double growth = growth_factor(params);
    GeneralScheduleSpec spec;
    spec.sigma = [k = params.kappa](int i) { return std::pow(k, -static_cast<double>(i)); };
    spec.xi = [x = sched.xi_star](int) { return x; };
    spec.tau = [t = sched.tau_star](int) { return t; };
    spec.rho_phi = [](int) { return ScalarFn::identity(); };
    spec.rho_upsilon = [](int) { return ScalarFn::identity(); };
    spec.B1 = ScalarFn::linear(b0);
    spec.B2 = [b0, growth](double h_abs, double c) { return b0 * c * h_abs * growth; };
    spec.delta0 = sched.delta0;
    spec.tau_constant = sched.tau_star;
    return spec;
}

bool ConditionReport::all_pass() const {
    return std::all_of(conditions.begin(), conditions.end(), [](const auto& c) { return c.pass; });
}

const ConditionResult* ConditionReport::find(const std::string& id) const {
    for (const auto& c : conditions)
        if (c.id == id) return &c;
    return nullptr;
}

nlohmann::json to_json(const ConditionReport& report) {
    nlohmann::json j;
    j["pass"] = report.all_pass();
    j["conditions"] = nlohmann::json::array();
    for (const auto& c : report.conditions) {
        nlohmann::json cj{{"id", c.id}, {"pass", c.pass}};
        cj["margin"] = std::isfinite(c.margin) ? nlohmann::json(c.margin) : nlohmann::json(nullptr);
        if (!c.detail.empty()) cj["detail"] = c.detail;
        j["conditions"].push_back(cj);
    }
    j["warnings"] = report.warnings;
    j["parameters"] = report.parameters;
    return j;
}

namespace {

// Evaluates phi_j of the family attached to probe index n:
//   phi_0(s) = beta(s, 0),  phi_j(s) = phi_{j-1}(rho_phi_j(xi_{n-j} beta(s, 0))).
double phi_chain(const GeneralScheduleSpec& spec, const ContractionEnvelope& env, int n, int j,
                 double s) {
    double v = s;
    for (int k = j; k >= 1; --k) v = spec.rho_phi(k)(spec.xi(n - k) * env.beta(v, 0.0));
    return env.beta(v, 0.0);
}

void tail_warning(const std::vector<double>& seq, const std::string& label,
                  std::vector<std::string>& warnings) {
    if (seq.size() < 12) return;
    std::size_t start = seq.size() - 11;
    for (std::size_t i = start + 1; i < seq.size(); ++i) {
        double prev = std::abs(seq[i - 1] - seq[i - 2]);
        double cur = std::abs(seq[i] - seq[i - 1]);
        if (cur > prev * (1 + 1e-9) && cur > 1e-300) {
            warnings.push_back(label + ": increments over the last 10 probes are not shrinking");
            return;
        }
    }
}

}  // namespace

ConditionReport check_theorem_conditions(const GeneralScheduleSpec& spec,
                                         const ContractionEnvelope& env, const WanderingBound& wb,
                                         double x0_norm, double h_z0, int N_probe) {
    if (N_probe < 1) throw DomainError("N_probe must be >= 1");
    if (!spec.sigma || !spec.xi || !spec.tau || !spec.rho_phi || !spec.rho_upsilon || !spec.B1 ||
        !spec.B2)
        throw ConfigError("general schedule spec is incomplete");
    if (!wb.gamma01 || !wb.gamma02) throw ConfigError("gamma0 factorization pair not set");

    ConditionReport report;
    report.parameters = {{"x0_norm", x0_norm}, {"h_z0", h_z0}, {"c", env.c},
                         {"delta0", spec.delta0}, {"N_probe", N_probe},
                         {"envelope", std::string(gains::to_string(env.kind))}};

    // Stop before the partition weights underflow.
    int N = N_probe;
    for (int n = 1; n <= N_probe; ++n) {
        if (!(spec.sigma(n) > 1e-290)) {
            N = n - 1;
            report.warnings.push_back("probing truncated at n=" + std::to_string(N) +
                                      ": partition weights underflow");
            break;
        }
    }

    auto checked = [](double v, const std::string& what, int index) {
        if (!std::isfinite(v))
            throw EvaluationError(what + " is not finite at index " + std::to_string(index), v);
        return v;
    };

    {
        ConditionResult r{"partition", true, 0.0, ""};
        double s0 = spec.sigma(0);
        r.margin = -std::abs(s0 - 1.0);
        if (std::abs(s0 - 1.0) > kSlack) {
            r.pass = false;
            r.detail = "sigma_0 != 1";
        }
        double prev = s0;
        double worst_step = std::numeric_limits<double>::infinity();
        for (int i = 1; i <= N + 1; ++i) {
            double s = checked(spec.sigma(i), "sigma", i);
            worst_step = std::min(worst_step, prev - s);
            if (!(s < prev) || !(s > 0)) {
                r.pass = false;
                r.detail = "sigma not strictly decreasing and positive at i=" + std::to_string(i);
                break;
            }
            prev = s;
        }
        if (r.pass) r.margin = worst_step;
        if (prev > 1e-3)
            report.warnings.push_back("sigma has not decayed below 1e-3 within the probe horizon");
        report.conditions.push_back(r);
    }

    {
        ConditionResult r{"contraction_rate", true, std::numeric_limits<double>::infinity(), ""};
        auto s_grid = numerics::linspace(0.0, std::max({1.0, x0_norm, env.c * std::abs(h_z0)}), 32);
        for (int i = 0; i <= N; ++i) {
            double tau = checked(spec.tau(i), "tau", i);
            double xi = checked(spec.xi(i), "xi", i);
            double margin;
            if (env.kind == gains::EnvelopeKind::general && env.kl) {
                margin = std::numeric_limits<double>::infinity();
                for (double s : s_grid)
                    margin = std::min(margin, xi * env.beta(s, 0.0) - env.beta(s, tau));
            } else {
                margin = xi * env.beta_t0() - env.beta_t(tau);
            }
            if (margin < r.margin) r.margin = margin;
            if (margin < -kSlack && r.pass) {
                r.pass = false;
                r.detail = "dwell time too short at i=" + std::to_string(i);
            }
        }
        report.conditions.push_back(r);
    }

    std::vector<double> seq1, seq2;
    {
        double b1 = spec.B1(x0_norm);
        double b2 = spec.B2(std::abs(h_z0), env.c);
        double ch = env.c * std::abs(h_z0);
        ConditionResult r1{"bound_B1", true, std::numeric_limits<double>::infinity(), ""};
        ConditionResult r2{"bound_B2", true, std::numeric_limits<double>::infinity(), ""};
        for (int n = 0; n <= N; ++n) {
            double inv_sigma = 1.0 / spec.sigma(n);
            double a1 = checked(inv_sigma * phi_chain(spec, env, n, n, x0_norm), "phi", n);
            double sum = env.beta(ch * spec.sigma(n), 0.0);
            for (int i = 1; i <= n; ++i) {
                double arg = spec.rho_upsilon(i)(ch * spec.sigma(n - i));
                sum += phi_chain(spec, env, n, i - 1, arg);
            }
            double a2 = checked(inv_sigma * sum, "upsilon sum", n);
            seq1.push_back(a1);
            seq2.push_back(a2);
            r1.margin = std::min(r1.margin, b1 - a1);
            r2.margin = std::min(r2.margin, b2 - a2);
            if (a1 > b1 + kSlack && r1.pass) {
                r1.pass = false;
                r1.detail = "exceeds B1 at n=" + std::to_string(n);
            }
            if (a2 > b2 + kSlack && r2.pass) {
                r2.pass = false;
                r2.detail = "exceeds B2 at n=" + std::to_string(n);
            }
        }
        report.conditions.push_back(r1);
        report.conditions.push_back(r2);
        tail_warning(seq1, "bound_B1", report.warnings);
        tail_warning(seq2, "bound_B2", report.warnings);

        ConditionResult rd{"delta0", spec.delta0 > 0, std::numeric_limits<double>::infinity(), ""};
        if (!rd.pass) rd.detail = "Delta0 must be positive";
        for (int i = 0; i <= N; ++i) {
            double si = spec.sigma(i);
            double rate = (si - spec.sigma(i + 1)) / (spec.tau(i) * wb.gamma01(si));
            double margin = checked(rate, "dwell rate", i) - spec.delta0;
            rd.margin = std::min(rd.margin, margin);
            if (margin < -kSlack && rd.pass) {
                rd.pass = false;
                rd.detail = "rate below Delta0 at i=" + std::to_string(i);
            }
        }
        report.conditions.push_back(rd);

        ConditionResult rt{"trapping", true, 0.0, ""};
        double lhs = wb.gamma02(b1 + b2 + ch);
        double rhs = h_z0 * spec.delta0;
        rt.margin = rhs - lhs;
        if (h_z0 < 0) {
            rt.pass = false;
            rt.detail = "h(z0) must be nonnegative";
        } else {
            rt.pass = lhs <= rhs + kSlack;
            if (h_z0 == 0) report.warnings.push_back("h(z0) = 0: trapping region degenerates to a point");
        }
        report.conditions.push_back(rt);
    }

    {
        ConditionResult r{"dwell_divergence", false, 0.0, ""};
        if (spec.tau_constant && *spec.tau_constant > 0) {
            r.pass = true;
            r.margin = *spec.tau_constant;
            r.detail = "constant dwell time";
        } else {
            double sum = 0.0;
            long long n = 0;
            for (; n < spec.divergence_max_terms && sum <= spec.divergence_bound; ++n)
                sum += checked(spec.tau(static_cast<int>(std::min<long long>(n, INT32_MAX))), "tau",
                               static_cast<int>(std::min<long long>(n, INT32_MAX)));
            r.pass = sum > spec.divergence_bound;
            r.margin = sum - spec.divergence_bound;
            r.detail = "partial sum " + std::to_string(sum) + " after " + std::to_string(n) + " terms";
        }
        report.conditions.push_back(r);
    }
    return report;
}

}  // namespace nusg::smallgain
