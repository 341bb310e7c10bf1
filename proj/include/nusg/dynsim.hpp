#pragma once

// Fixed-step simulation of contracting/wandering interconnections and the
// trajectory diagnostics run on top of it.

#include "nusg/gains.hpp"

#include <json.hpp>

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nusg::dynsim {

using Vec = std::vector<double>;

struct InvariantSet {
    enum class Kind { origin_point, point, ball };
    Kind kind = Kind::origin_point;
    Vec center;
    double radius = 0.0;

    static InvariantSet origin();
    static InvariantSet point(Vec center);
    static InvariantSet ball(Vec center, double radius);
};

/// Euclidean distance from x to A. The origin matches any dimension; point and ball
/// sets require x.size() == center.size().
double set_distance(std::span<const double> x, const InvariantSet& A);

/// max(set_distance - Delta, 0).
double thresholded_distance(std::span<const double> x, const InvariantSet& A, double Delta);

/// Right-hand side writing into `out`: (x, z, t, out).
using Field = std::function<void(std::span<const double>, std::span<const double>, double,
                                 std::span<double>)>;

struct InterconnectionModel {
    std::string name;
    std::size_t n = 0;  // contracting state dimension
    std::size_t m = 0;  // wandering state dimension
    Field f_x;
    Field f_z;  // may be empty when m == 0
    std::function<double(std::span<const double>)> h;  // may be empty when m == 0
    InvariantSet set_A;
    /// Maps x to the vector whose distance to set_A is measured (identity when empty).
    std::function<Vec(std::span<const double>)> error_map;
    /// Deadzone radius applied to the recorded distance sequence.
    double threshold = 0.0;
};

struct Trajectory {
    std::size_t n = 0;
    std::size_t m = 0;
    double dt = 0.0;  // spacing between recorded samples
    std::vector<double> times;
    std::vector<double> states;  // (n + m) values per sample, x first
    std::vector<double> dist;
    std::vector<double> h;
    bool escaped = false;
    double escape_time = std::numeric_limits<double>::quiet_NaN();

    std::size_t size() const { return times.size(); }
    std::span<const double> x(std::size_t k) const { return {states.data() + k * (n + m), n}; }
    std::span<const double> z(std::size_t k) const { return {states.data() + k * (n + m) + n, m}; }
    std::span<const double> state(std::size_t k) const {
        return {states.data() + k * (n + m), n + m};
    }
};

struct IntegrateOptions {
    double blowup = 1e9;
    std::size_t record_stride = 1;
};

/// Classical RK4 with fixed step. Stops early with `escaped` set once any state
/// component exceeds the blow-up bound in magnitude.
Trajectory integrate(const InterconnectionModel& model, std::span<const double> x0,
                     std::span<const double> z0, double t0, double t_end, double dt,
                     const IntegrateOptions& opts = {});

/// One RK4 step of the joint field; returns the new state (x then z).
Vec rk4_step(const InterconnectionModel& model, std::span<const double> state, double t, double dt);

struct SandwichReport {
    bool passed = false;
    double worst_violation = 0.0;  // largest amount by which either side is breached
    double worst_time = 0.0;
    double tolerance = 0.0;
};

/// Checks int gamma1(dist) <= h(0) - h(t) <= int gamma0(dist) at every sample, with the
/// integrals taken by the trapezoid rule and tolerance C * dt^2.
SandwichReport verify_wandering_bound(const Trajectory& traj, const gains::WanderingBound& wb,
                                      double C = 1.0);

struct Hit {
    int i = 0;
    double t = 0.0;
};

/// First crossings of the levels sigma(i) * h_z0 by linear interpolation. Throws
/// InvariantViolation when h increases by more than tol between samples.
std::vector<Hit> hitting_times(const Trajectory& traj, const std::function<double(int)>& sigma,
                               double h_z0, int max_levels = 10000, double tol = 1e-9);

enum class Verdict { converged, escaped, undecided };

std::string_view to_string(Verdict v);

struct ClassifyOptions {
    double dist_tol = 1e-2;
    double drift_tol = 1e-2;
    double tail_fraction = 0.1;
};

/// converged: final distance and trailing h drift both small; escaped: blow-up.
Verdict classify(const Trajectory& traj, const ClassifyOptions& opts = {});

/// Largest |h(t) - h(t')| over the trailing window.
double trailing_drift(const std::vector<double>& series, double tail_fraction);

struct SteadyStatePoint {
    double input = 0.0;
    double limit = 0.0;            // trailing-window mean of the distance
    double window_integral = 0.0;  // integral over the final window
    bool settled = false;          // relative spread below tolerance
    bool settled_on_average = false;
};

struct SteadyStateOptions {
    double t_settle = 50.0;
    double t_avg = 10.0;
    double dt = 1e-2;
    double rel_tol = 1e-4;
    double abs_tol = 1e-9;
    double zero_tol = 1e-6;
};

struct SteadyStateMap {
    std::vector<SteadyStatePoint> points;
    std::vector<double> zero_set;
};

/// Samples the steady-state characteristic of a contracting model driven by constant
/// inputs. The factory builds the model for one input value.
SteadyStateMap estimate_steady_state_characteristic(
    const std::function<InterconnectionModel(double)>& factory, const std::vector<double>& inputs,
    std::span<const double> x0, const SteadyStateOptions& opts = {});

/// CSV with columns t, x..., z..., dist, h. Column names default to x1.., z1...
void write_csv(std::ostream& os, const Trajectory& traj, const std::vector<std::string>& x_names = {},
               const std::vector<std::string>& z_names = {}, std::size_t stride = 1);

nlohmann::json summary_json(const Trajectory& traj, Verdict verdict);

namespace fixtures {

/// x' = -lambda x (n = 1, m = 0).
InterconnectionModel linear_decay(double lambda);

/// x1' = -x1 + x2, x2' = eps + gamma x1^2; h = -x2.
InterconnectionModel saddle_node(double eps, double gamma);

/// x1' = -x1 + x2, x2' = eps + gamma x2^2; h = -x2.
InterconnectionModel saddle_node_decoupled(double eps, double gamma);

/// x1' = -lambda1 x1 + c1 x2, x2' = -lambda2 x2 - c2 |x1|; h = x2.
InterconnectionModel cascade_damped(double lambda1, double lambda2, double c1, double c2);

/// x1' = -lambda1 x1 + c1 x2, x2' = -c2 |x1|; h = x2.
InterconnectionModel cascade_integrator(double lambda1, double c1, double c2);

}  // namespace fixtures

/// Shortest round-trip decimal representation used in every CSV the tool writes.
std::string format_double(double v);

}  // namespace nusg::dynsim
