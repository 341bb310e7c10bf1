#pragma once

// Adaptive identifier built from exploratory Poisson-stable dynamics, plus the two
// worked identification problems (sine plant, Hindmarsh-Rose neuron).

#include "nusg/dynsim.hpp"
#include "nusg/smallgain.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nusg::observer {

using Vec = std::vector<double>;

struct ExploratorySystem {
    enum class Kind { hyperbolic_pair, torus_oscillators };
    Kind kind = Kind::hyperbolic_pair;
    Vec lambda0;
    double omega1 = 0.0;
    double omega2 = 0.0;
    /// max |S(lambda)| over the invariant region.
    double omega_set_bound = 0.0;
    /// Component signs of lambda0 (hyperbolic pair only; magnitudes are kept in log form).
    Vec signs;

    /// lambda1' = lambda1, lambda2' = -lambda2. Both components of lambda0 must be nonzero.
    static ExploratorySystem hyperbolic_pair(Vec lambda0, double omega_set_bound = 1.0);
    /// Two harmonic oscillators with frequencies omega1, omega2.
    static ExploratorySystem torus_oscillators(double omega1, double omega2, Vec lambda0 = {1.0, 0.0, 1.0, 0.0});

    std::size_t dim() const { return lambda0.size(); }

    /// Internal coordinates: log-magnitudes for the hyperbolic pair, lambda itself otherwise.
    Vec to_internal(std::span<const double> lambda) const;
    Vec to_lambda(std::span<const double> coords) const;

    /// S expressed in internal coordinates.
    void field(std::span<const double> coords, std::span<double> out) const;
    /// S in linear coordinates.
    Vec S(std::span<const double> lambda) const;
    /// Quantities preserved by the flow: {lambda1 lambda2} or the two oscillator energies.
    Vec conserved(std::span<const double> lambda) const;
};

/// sqrt(A1^2 max(w1^2, w1^4) + A2^2 max(w2^2, w2^4)) with A_k the oscillator amplitudes.
double torus_max_speed(double omega1, double omega2, std::span<const double> lambda0);

struct EtaMap {
    std::function<Vec(std::span<const double>)> eta;
    double D_eta = 0.0;
    std::vector<std::pair<double, double>> target_box;

    Vec operator()(std::span<const double> lambda) const { return eta(lambda); }
    bool in_box(std::span<const double> theta, double tol = 0.0) const;

    /// theta_hat = lambda1, box [lo, hi].
    static EtaMap first_component(double lo = -1.0, double hi = 1.0);
    /// beta_hat = (asin(l1)/pi + 1/2) 0.4 + 0.3, d_hat = (asin(l3)/pi + 1/2) + 2, with the
    /// arguments clipped to +-(1 - clip_eps) so the map stays Lipschitz.
    static EtaMap hr_arcsin(double clip_eps = 1e-3);
};

struct EtaReport {
    bool all_in_box = true;
    bool lipschitz_ok = true;
    double worst_ratio = 0.0;  // max |eta(a) - eta(b)| / |a - b| over consecutive sample pairs
};

EtaReport validate_eta(const EtaMap& eta, const std::vector<Vec>& samples);

struct DeadzoneBudget {
    double Delta_f = 0.0;
    double Delta_eps = 0.0;
    double delta = 1e-3;
    double M() const { return 2.0 * Delta_f + Delta_eps + delta; }
};

struct IdentifierState {
    Vec coords;  // internal coordinates of lambda
    Vec theta_hat;
    double gamma = 0.0;
    double M = 0.0;
    double Delta_M = 0.0;
    double t = 0.0;
    double excitation = 0.0;  // accumulated integral of gamma * dist

    Vec lambda(const ExploratorySystem& exo) const { return exo.to_lambda(coords); }
};

/// Throws ConfigError unless delta > 0, Delta_f, Delta_eps, Delta_M >= 0 and gamma >= 0.
IdentifierState make_identifier(const ExploratorySystem& exo, const EtaMap& eta, double gamma,
                                const DeadzoneBudget& budget, double Delta_M, double t0 = 0.0);

/// One RK4 step of lambda' = gamma dist S(lambda) with dist held over the step.
IdentifierState step_identifier(const IdentifierState& state, double dist, const ExploratorySystem& exo,
                                const EtaMap& eta, double dt);

double compute_D_lambda(double c, double D_f, double D_eta, double maxS);

struct HRParams {
    double a = 1.0;
    double b = 3.0;
    double alpha = 0.7;
    double c = 0.5;
    double beta = 0.5;
    double d = 2.5;
};

struct HRObserverState {
    double x_hat = 0.0;
    double w = 0.0;
    double rho = 10.0;
    double a = 1.0;
    double b = 3.0;
    double alpha = 0.7;
    double c_hr = 0.5;
    double t = 0.0;
};

/// Parameter box the observer accepts: beta_hat in [0.3, 0.7], d_hat in [2, 3].
inline constexpr double kBetaLo = 0.3, kBetaHi = 0.7, kDLo = 2.0, kDHi = 3.0;

/// Derivatives of (x_hat, w): x_hat' = rho (x1 - x_hat) - a x1^3 + b x1^2 + alpha u + w,
/// w' = -beta_hat w + c - d_hat x1^2.
std::pair<double, double> hr_observer_rhs(const HRObserverState& obs, double x1, double x_hat, double w,
                                          double u, double beta_hat, double d_hat);

/// RK4 step with x1 interpolated linearly from x1_start to x1_end across the step.
HRObserverState hr_observer_step(const HRObserverState& obs, double x1_start, double x1_end, double u,
                                 std::pair<double, double> theta_hat, double dt);
/// Same with x1 held constant over the step.
HRObserverState hr_observer_step(const HRObserverState& obs, double x1, double u,
                                 std::pair<double, double> theta_hat, double dt);

/// Trapezoid quadrature of int_{t-window}^{t} exp(-beta_hat (t - s)) (c - d_hat x1(s)^2) ds over
/// a uniformly sampled history ending at t.
double hr_convolution_quadrature(std::span<const double> x1_history, double dt, double beta_hat,
                                 double d_hat, double c, double window);

struct HRLipschitz {
    double D_f_beta = 0.0;
    double D_f_d = 0.0;
    double D_f() const { return std::max(D_f_beta, D_f_d); }
};

/// Worst-case sensitivities of the convolution term over the parameter box, given sup |x1|.
HRLipschitz hr_lipschitz(double x1_sup, double c);

struct Example1Config {
    double theta = 0.3;
    double gamma = 0.05;
    double x0 = 0.5;
    double t_end = 2000.0;
    double dt = 1e-3;
    double k = 1.0;
    Vec lambda0{0.1, 0.99498743710661995};
    double Delta_M = 0.0;
    double d = 0.5;
    double kappa = 2.0;
    double tol_x = 1e-2;
    double tol_theta = 1e-3;
    double tail_fraction = 0.1;
    std::size_t series_stride = 1000;
    bool keep_trajectory = false;
};

struct Example1Result {
    std::optional<dynsim::Trajectory> trajectory;
    std::vector<double> series_t, series_x, series_theta_hat, series_excitation;
    std::vector<Vec> series_lambda;
    dynsim::Verdict verdict = dynsim::Verdict::undecided;
    double x_final = 0.0;
    double theta_hat_final = 0.0;
    double theta_drift = 0.0;
    double excitation_tail = 0.0;
    double gamma_max = 0.0;
    smallgain::Membership membership;
    bool certified = false;
    double h0 = 0.0;
    double tau_star = 0.0;
    std::vector<dynsim::Hit> hits;
    double min_gap = 0.0;  // +inf when fewer than two levels were reached
    bool gaps_ok = true;
    dynsim::SandwichReport sandwich;
    bool theta_in_box = true;
    std::vector<std::string> warnings;
};

dynsim::InterconnectionModel example1_model(const Example1Config& cfg, const ExploratorySystem& exo);

Example1Result run_example1(const Example1Config& cfg);

struct PulseSpec {
    double amplitude = 0.7;
    double start = 100.0;
    double end = 300.0;
    double period = 0.0;  // 0 for a single pulse, else the pulse repeats with this period

    double operator()(double t) const;
};

struct Example2Config {
    HRParams plant;
    double rho = 10.0;
    double gamma = 3e-4;
    double delta = 1e-3;
    double omega2 = 1.0;
    double omega_ratio = 3.14159265358979323846;
    Vec lambda0{1.0, 0.0, 1.0, 0.0};
    double clip_eps = 1e-3;
    PulseSpec pulse;
    double x1_0 = 0.0;
    double x2_0 = 0.0;
    double t_end = 30000.0;
    double dt = 1e-2;
    double d = 0.5;
    double kappa = 2.0;
    double tail_fraction = 0.1;
    std::size_t series_stride = 100;
    bool keep_trajectory = false;
};

struct FitReport {
    double beta_hat = 0.0;
    double d_hat = 0.0;
    double residual_mean = 0.0;  // trailing-window mean of the deadzone residual
    double residual_final = 0.0;
    double replay_rms = 0.0;     // recorded x1 versus plant replayed with the fitted parameters
    double replay_max = 0.0;
};

struct Example2Result {
    std::optional<dynsim::Trajectory> trajectory;
    FitReport fit;
    std::vector<double> series_t, series_x1, series_x2, series_x_tilde, series_beta_hat, series_d_hat,
        series_excitation;
    std::vector<Vec> series_lambda;
    std::vector<double> replay_x1, replay_x2;  // aligned with series_t
    dynsim::Verdict verdict = dynsim::Verdict::undecided;
    dynsim::SandwichReport sandwich;
    double conserved_drift = 0.0;  // worst relative drift of the oscillator energies
    bool theta_in_box = true;
    double x1_sup = 0.0;
    HRLipschitz lipschitz;
    double D_lambda = 0.0;
    double gamma_max = 0.0;
    bool certified = false;
    std::vector<std::string> warnings;
};

dynsim::InterconnectionModel example2_model(const Example2Config& cfg, const ExploratorySystem& exo,
                                            const EtaMap& eta);

Example2Result run_example2(const Example2Config& cfg);

nlohmann::json to_json(const Example1Result& r);
nlohmann::json to_json(const Example2Result& r);

}  // namespace nusg::observer
