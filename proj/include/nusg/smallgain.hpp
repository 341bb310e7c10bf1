#pragma once

// Partition/dwell-time schedules and the small-gain condition checkers built on them.

#include "nusg/gains.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nusg::smallgain {

/// Pair (d, kappa) with 0 < d < 1 < kappa; construction throws DomainError otherwise.
struct ScheduleParams {
    double d;
    double kappa;
    ScheduleParams(double d, double kappa);
};

/// sigma_i = kappa^-i, constant contraction factor and dwell time.
struct Schedule {
    ScheduleParams params;
    double xi_star = 0.0;
    double tau_star = 0.0;
    double delta0 = 0.0;

    double sigma(int i) const;
};

Schedule build_schedule(const gains::ContractionEnvelope& env, const ScheduleParams& params);

struct BoundPair {
    double B1 = 0.0;
    double B2 = 0.0;
};

BoundPair compute_B1_B2(const gains::ContractionEnvelope& env, const ScheduleParams& params,
                        double x0_norm, double h_z0);

struct Membership {
    bool member = false;
    double margin = 0.0;
    std::string reason;
};

/// Trapping-region membership for separable envelopes with Lipschitz gamma0.
Membership check_trapping_separable(const gains::ContractionEnvelope& env,
                                    const gains::WanderingBound& wb, const ScheduleParams& params,
                                    double x0_norm, double h_z0);

double small_gain_G(const gains::ContractionEnvelope& env, const ScheduleParams& params);

struct GOptimum {
    double G_star = 0.0;
    double d_opt = 0.0;
    double kappa_opt = 0.0;
    int evaluations = 0;
};

class OptimizerError : public std::runtime_error {
public:
    OptimizerError(const std::string& what, GOptimum best)
        : std::runtime_error(what), best_(best) {}
    const GOptimum& best() const noexcept { return best_; }

private:
    GOptimum best_;
};

struct OptimizeOptions {
    int grid = 128;
    double d_lo = 0.01, d_hi = 0.99;
    double kappa_lo = 1.01, kappa_hi = 100.0;
    double xtol = 1e-8;
    int max_iter = 5000;
};

/// Minimizes G over d in (0,1), kappa > 1: log-spaced grid seed, then simplex refinement
/// in (logit d, log(kappa - 1)).
GOptimum optimize_G(const gains::ContractionEnvelope& env, const OptimizeOptions& opts = {});

/// D_gamma0 * c * G < 1, strictly.
bool check_small_gain_existence(double D_gamma0, double c, double G);

struct X0Bound {
    double x0_max = 0.0;
    bool empty = false;
};

X0Bound trapping_x0_bound(const gains::ContractionEnvelope& env, const ScheduleParams& params,
                          double D_gamma0, double c, double h_z0);

/// Largest adaptation gain certified for the identifier.
double identifier_gain_bound(const gains::ContractionEnvelope& env, const ScheduleParams& params,
                             double D_lambda);

/// Fully general schedule: sequences, decomposition functions and bound functions
/// are all caller supplied.
struct GeneralScheduleSpec {
    std::function<double(int)> sigma;
    std::function<double(int)> xi;
    std::function<double(int)> tau;
    std::function<gains::ScalarFn(int)> rho_phi;      // j >= 1
    std::function<gains::ScalarFn(int)> rho_upsilon;  // j >= 1
    gains::ScalarFn B1;
    std::function<double(double, double)> B2;  // (|h(z0)|, c)
    double delta0 = 0.0;
    std::optional<double> tau_constant;  // analytic divergence shortcut
    double divergence_bound = 1e6;
    long long divergence_max_terms = 10'000'000;
};

/// The constant schedule (kappa^-i, xi*, tau*) with identity decompositions and the
/// closed-form B1/B2 of the separable case.
GeneralScheduleSpec constant_schedule_spec(const gains::ContractionEnvelope& env, const ScheduleParams& params);

struct ConditionResult {
    std::string id;
    bool pass = false;
    double margin = 0.0;
    std::string detail;
};

struct ConditionReport {
    std::vector<ConditionResult> conditions;
    std::vector<std::string> warnings;
    nlohmann::json parameters = nlohmann::json::object();

    bool all_pass() const;
    const ConditionResult* find(const std::string& id) const;
};

nlohmann::json to_json(const ConditionReport& report);

/// Probes the partition, contraction-rate, boundedness (B1/B2), Delta0, trapping
/// and dwell-time divergence conditions for n = 0..N_probe.
ConditionReport check_theorem_conditions(const GeneralScheduleSpec& spec,
                                         const gains::ContractionEnvelope& env,
                                         const gains::WanderingBound& wb, double x0_norm,
                                         double h_z0, int N_probe = 200);

}  // namespace nusg::smallgain
