#include "nusg/cli.hpp"

#include "nusg/errors.hpp"
#include "nusg/gains.hpp"
#include "nusg/observer.hpp"
#include "nusg/smallgain.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace nusg::cli {

namespace fs = std::filesystem;
using dynsim::format_double;

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::optional<double> to_number(const std::string& text) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::string at(const std::string& source, int line) { return source + ":" + std::to_string(line) + ": "; }

}  // namespace

Config Config::parse(std::istream& in, const std::string& source) {
    Config cfg;
    cfg.source_ = source;
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        auto cut = raw.find_first_of("#;");
        std::string text = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
        if (text.empty()) continue;
        if (text.front() == '[') {
            if (text.back() != ']') throw UsageError(at(source, line) + "unterminated section header");
            section = trim(std::string_view(text).substr(1, text.size() - 2));
            if (section.empty()) throw UsageError(at(source, line) + "empty section name");
            cfg.data_[section];
            continue;
        }
        auto eq = text.find('=');
        if (eq == std::string::npos) throw UsageError(at(source, line) + "expected 'key = value'");
        if (section.empty()) throw UsageError(at(source, line) + "key outside any [section]");
        std::string key = trim(std::string_view(text).substr(0, eq));
        std::string value = trim(std::string_view(text).substr(eq + 1));
        if (key.empty()) throw UsageError(at(source, line) + "missing key");
        auto& sec = cfg.data_[section];
        if (sec.count(key)) throw UsageError(at(source, line) + "duplicate key '" + key + "' in [" + section + "]");
        sec[key] = Entry{value, line};
        cfg.order_.emplace_back(section, key);
    }
    return cfg;
}

Config Config::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path.string());
    return parse(in, path.string());
}

const Config::Entry* Config::lookup(const std::string& section, const std::string& key) const {
    auto s = data_.find(section);
    if (s == data_.end()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    used_.insert({section, key});
    return &k->second;
}

void Config::bad_value(const std::string& section, const std::string& key, const Entry& e,
                       const std::string& expected) const {
    throw UsageError(at(source_, e.line) + "[" + section + "] " + key + " = '" + e.value + "': expected " +
                     expected);
}

bool Config::has(const std::string& section, const std::string& key) const {
    auto s = data_.find(section);
    return s != data_.end() && s->second.count(key) > 0;
}

std::string Config::where(const std::string& section, const std::string& key) const {
    if (!has(section, key)) return source_ + ": ";
    return at(source_, data_.at(section).at(key).line);
}

bool Config::has_section(const std::string& section) const { return data_.count(section) > 0; }

std::optional<std::string> Config::find_string(const std::string& section, const std::string& key) const {
    if (const Entry* e = lookup(section, key)) return e->value;
    return std::nullopt;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    return find_string(section, key).value_or(fallback);
}

std::optional<double> Config::find_double(const std::string& section, const std::string& key) const {
    const Entry* e = lookup(section, key);
    if (!e) return std::nullopt;
    auto v = to_number(e->value);
    if (!v) bad_value(section, key, *e, "a finite number");
    return v;
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
    return find_double(section, key).value_or(fallback);
}

long long Config::get_int(const std::string& section, const std::string& key, long long fallback) const {
    const Entry* e = lookup(section, key);
    if (!e) return fallback;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (ec != std::errc() || ptr != e->value.data() + e->value.size()) bad_value(section, key, *e, "an integer");
    return v;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const Entry* e = lookup(section, key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "yes" || e->value == "1") return true;
    if (e->value == "false" || e->value == "no" || e->value == "0") return false;
    bad_value(section, key, *e, "true or false");
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key,
                                     const std::vector<double>& fallback) const {
    const Entry* e = lookup(section, key);
    if (!e) return fallback;
    std::vector<double> out;
    std::stringstream ss(e->value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto v = to_number(trim(item));
        if (!v) bad_value(section, key, *e, "a comma-separated list of numbers");
        out.push_back(*v);
    }
    return out;
}

std::map<std::string, double> Config::section_doubles(const std::string& section) const {
    std::map<std::string, double> out;
    auto s = data_.find(section);
    if (s == data_.end()) return out;
    for (const auto& [key, entry] : s->second) out[key] = *find_double(section, key);
    return out;
}

void Config::reject_unused() const {
    for (const auto& [section, key] : order_) {
        if (used_.count({section, key})) continue;
        int line = data_.at(section).at(key).line;
        throw UsageError(at(source_, line) + "unknown key '" + key + "' in [" + section + "]");
    }
}

const std::vector<FixtureInfo>& builtin_fixtures() {
    static const std::vector<FixtureInfo> fixtures{
        {"linear-decay", "x' = -lambda x", {{"lambda", 1.0}}, {"x1"}, {}, {1.0}, {}, 10.0, 1e-2},
        {"saddle-node", "x1' = -x1 + x2, x2' = eps + gamma x1^2; h = -x2",
         {{"eps", 0.0}, {"gamma", 1.0}}, {"x1"}, {"x2"}, {0.0}, {-0.1}, 200.0, 1e-2},
        {"saddle-node-decoupled", "x1' = -x1 + x2, x2' = eps + gamma x2^2; h = -x2",
         {{"eps", 0.0}, {"gamma", 1.0}}, {"x1"}, {"x2"}, {0.0}, {-0.1}, 200.0, 1e-2},
        {"cascade-damped", "x1' = -lambda1 x1 + c1 x2, x2' = -lambda2 x2 - c2 |x1|; h = x2",
         {{"lambda1", 1.0}, {"lambda2", 0.5}, {"c1", 0.3}, {"c2", 0.2}}, {"x1"}, {"x2"}, {0.3}, {1.0}, 100.0, 1e-2},
        {"cascade-integrator", "x1' = -lambda1 x1 + c1 x2, x2' = -c2 |x1|; h = x2",
         {{"lambda1", 2.0}, {"c1", 0.2}, {"c2", 0.2}}, {"x1"}, {"x2"}, {1.5}, {1.0}, 500.0, 1e-2},
        {"example1-plant", "x' = -k x + sin(x theta + theta) - sin(x theta_hat + theta_hat)",
         {{"theta", 0.3}, {"theta_hat", 0.3}, {"k", 1.0}}, {"x"}, {}, {0.5}, {}, 60.0, 1e-2},
    };
    return fixtures;
}

const FixtureInfo& find_fixture(const std::string& id) {
    for (const auto& f : builtin_fixtures())
        if (f.id == id) return f;
    std::string known;
    for (const auto& f : builtin_fixtures()) known += (known.empty() ? "" : ", ") + f.id;
    throw UsageError("unknown fixture '" + id + "' (builtins: " + known + ", example1, example2)");
}

dynsim::InterconnectionModel make_fixture(const std::string& id, const std::map<std::string, double>& params) {
    const FixtureInfo& info = find_fixture(id);
    std::map<std::string, double> p(info.params.begin(), info.params.end());
    for (const auto& [k, v] : params) {
        if (!p.count(k)) throw UsageError("fixture '" + id + "' has no parameter '" + k + "'");
        p[k] = v;
    }
    if (id == "linear-decay") return dynsim::fixtures::linear_decay(p["lambda"]);
    if (id == "saddle-node") return dynsim::fixtures::saddle_node(p["eps"], p["gamma"]);
    if (id == "saddle-node-decoupled") return dynsim::fixtures::saddle_node_decoupled(p["eps"], p["gamma"]);
    if (id == "cascade-damped")
        return dynsim::fixtures::cascade_damped(p["lambda1"], p["lambda2"], p["c1"], p["c2"]);
    if (id == "cascade-integrator") return dynsim::fixtures::cascade_integrator(p["lambda1"], p["c1"], p["c2"]);
    // example1-plant
    const double theta = p["theta"], th = p["theta_hat"], k = p["k"];
    dynsim::InterconnectionModel m;
    m.name = id;
    m.n = 1;
    m.f_x = [=](std::span<const double> x, std::span<const double>, double, std::span<double> out) {
        out[0] = -k * x[0] + std::sin(x[0] * theta + theta) - std::sin(x[0] * th + th);
    };
    return m;
}

namespace {

void require_positive(double v, const std::string& what) {
    if (!(v > 0.0)) throw UsageError(what + " must be > 0");
}

void apply_overrides(double& t_end, double& dt, const Options& opts) {
    if (opts.dt) dt = *opts.dt;
    if (opts.horizon) t_end = *opts.horizon;
    require_positive(dt, "dt");
    require_positive(t_end, "horizon");
}

fs::path prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    return os;
}

void close_out(std::ofstream& os, const fs::path& path) {
    os.close();
    if (!os) throw IoError("failed writing " + path.string());
}

fs::path write_json_file(const fs::path& path, const nlohmann::json& j) {
    auto os = open_out(path);
    os << j.dump(2) << '\n';
    close_out(os, path);
    return path;
}

std::string csv_row(const std::vector<double>& values) {
    std::string row;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) row += ',';
        row += format_double(values[i]);
    }
    return row;
}

/// Columns side by side; every column has the same length.
fs::path write_columns(const fs::path& path, const std::vector<std::string>& names,
                       const std::vector<const std::vector<double>*>& columns) {
    auto os = open_out(path);
    for (std::size_t i = 0; i < names.size(); ++i) os << (i ? "," : "") << names[i];
    os << '\n';
    std::size_t rows = columns.empty() ? 0 : columns.front()->size();
    std::vector<double> row(columns.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) row[c] = (*columns[c])[r];
        os << csv_row(row) << '\n';
    }
    close_out(os, path);
    return path;
}

std::string run_label(std::size_t i, std::size_t n) {
    std::string digits = std::to_string(n);
    std::string s = std::to_string(i + 1);
    return "run" + std::string(digits.size() > s.size() ? digits.size() - s.size() : 0, '0') + s;
}

observer::Example1Config load_example1(const Config& cfg) {
    observer::Example1Config c;
    const std::string s = "example1";
    c.theta = cfg.get_double(s, "theta", c.theta);
    c.gamma = cfg.get_double(s, "gamma", c.gamma);
    c.x0 = cfg.get_double(s, "x0", c.x0);
    c.k = cfg.get_double(s, "k", c.k);
    c.lambda0 = cfg.get_list(s, "lambda0", c.lambda0);
    c.Delta_M = cfg.get_double(s, "deadzone", c.Delta_M);
    c.d = cfg.get_double(s, "d", c.d);
    c.kappa = cfg.get_double(s, "kappa", c.kappa);
    c.t_end = cfg.get_double("simulation", "t_end", c.t_end);
    c.dt = cfg.get_double("simulation", "dt", c.dt);
    c.series_stride = static_cast<std::size_t>(cfg.get_int("simulation", "csv_stride", 1000));
    return c;
}

observer::Example2Config load_example2(const Config& cfg) {
    observer::Example2Config c;
    const std::string s = "example2";
    c.plant.beta = cfg.get_double(s, "beta", c.plant.beta);
    c.plant.d = cfg.get_double(s, "d", c.plant.d);
    c.plant.a = cfg.get_double(s, "a", c.plant.a);
    c.plant.b = cfg.get_double(s, "b", c.plant.b);
    c.plant.alpha = cfg.get_double(s, "alpha", c.plant.alpha);
    c.plant.c = cfg.get_double(s, "c", c.plant.c);
    c.rho = cfg.get_double(s, "rho", c.rho);
    c.gamma = cfg.get_double(s, "gamma", c.gamma);
    c.delta = cfg.get_double(s, "delta", c.delta);
    c.omega2 = cfg.get_double(s, "omega2", c.omega2);
    c.lambda0 = cfg.get_list(s, "lambda0", c.lambda0);
    c.clip_eps = cfg.get_double(s, "clip_eps", c.clip_eps);
    c.pulse.amplitude = cfg.get_double(s, "pulse_amplitude", c.pulse.amplitude);
    c.pulse.start = cfg.get_double(s, "pulse_start", c.pulse.start);
    c.pulse.end = cfg.get_double(s, "pulse_end", c.pulse.end);
    c.pulse.period = cfg.get_double(s, "pulse_period", c.pulse.period);
    c.x1_0 = cfg.get_double(s, "x1_0", c.x1_0);
    c.x2_0 = cfg.get_double(s, "x2_0", c.x2_0);
    c.t_end = cfg.get_double("simulation", "t_end", c.t_end);
    c.dt = cfg.get_double("simulation", "dt", c.dt);
    c.series_stride = static_cast<std::size_t>(cfg.get_int("simulation", "csv_stride", 100));
    return c;
}

std::vector<double> column(const std::vector<observer::Vec>& rows, std::size_t i) {
    std::vector<double> out(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) out[k] = rows[k][i];
    return out;
}

std::vector<fs::path> write_example1(const fs::path& dir, const std::string& stem,
                                     const observer::Example1Result& r) {
    auto l1 = column(r.series_lambda, 0), l2 = column(r.series_lambda, 1);
    return {write_columns(dir / (stem + ".csv"), {"t", "x", "lambda1", "lambda2", "theta_hat", "excitation"},
                          {&r.series_t, &r.series_x, &l1, &l2, &r.series_theta_hat, &r.series_excitation})};
}

std::vector<fs::path> write_example2(const fs::path& dir, const observer::Example2Result& r) {
    std::vector<fs::path> files;
    std::vector<std::vector<double>> lam;
    for (std::size_t i = 0; i < 4; ++i) lam.push_back(column(r.series_lambda, i));
    files.push_back(write_columns(
        dir / "ex2_identifier.csv",
        {"t", "x1", "x2", "x_tilde", "lambda1", "lambda2", "lambda3", "lambda4", "beta_hat", "d_hat", "excitation"},
        {&r.series_t, &r.series_x1, &r.series_x2, &r.series_x_tilde, &lam[0], &lam[1], &lam[2], &lam[3],
         &r.series_beta_hat, &r.series_d_hat, &r.series_excitation}));
    files.push_back(write_columns(dir / "ex2_reconstruction.csv",
                                  {"t", "x1_model", "x2_model", "x1_reconstruction", "x2_reconstruction"},
                                  {&r.series_t, &r.series_x1, &r.series_x2, &r.replay_x1, &r.replay_x2}));
    std::size_t start = r.series_t.size() * 9 / 10;
    auto tail = [start](const std::vector<double>& v) {
        return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(start), v.end());
    };
    auto t = tail(r.series_t), b = tail(r.series_beta_hat), d = tail(r.series_d_hat);
    files.push_back(write_columns(dir / "ex2_search_segment.csv", {"t", "beta_hat", "d_hat"}, {&t, &b, &d}));
    return files;
}

nlohmann::json example2_criteria(const observer::Example2Result& r) {
    return {{"beta_within_0.1", std::abs(r.fit.beta_hat - 0.5) < 0.1},
            {"d_within_0.4", std::abs(r.fit.d_hat - 2.5) < 0.4},
            {"residual_below_1e-2", r.fit.residual_mean < 1e-2}};
}

bool all_true(const nlohmann::json& j) {
    for (const auto& [k, v] : j.items())
        if (!v.get<bool>()) return false;
    return true;
}

gains::ContractionEnvelope load_envelope(const Config& cfg) {
    std::string kind = cfg.get_string("envelope", "kind", "exponential");
    double c = cfg.get_double("envelope", "c", 1.0);
    if (kind == "exponential")
        return gains::ContractionEnvelope::exponential(cfg.get_double("envelope", "lambda", 1.0),
                                                       cfg.get_double("envelope", "D_beta", 1.0), c);
    if (kind == "separable") {
        auto bx = cfg.find_string("envelope", "beta_x");
        auto bt = cfg.find_string("envelope", "beta_t");
        if (!bx || !bt) throw UsageError("[envelope] kind = separable needs beta_x and beta_t");
        return gains::ContractionEnvelope::separable(gains::parse_scalar_fn(*bx), gains::parse_scalar_fn(*bt), c);
    }
    throw UsageError("[envelope] kind must be exponential or separable, got '" + kind + "'");
}

CommandResult check_example1_gain(const Config& cfg) {
    double rho = cfg.get_double("identifier", "rho", 1.0);
    double D_beta = cfg.get_double("identifier", "D_beta", 1.0);
    double D_lambda = cfg.get_double("identifier", "D_lambda", 1.0);
    double d = cfg.get_double("schedule", "d", 0.5), kappa = cfg.get_double("schedule", "kappa", 2.0);
    auto gamma = cfg.find_double("identifier", "gamma");
    cfg.reject_unused();
    smallgain::ScheduleParams params(d, kappa);
    auto env = gains::ContractionEnvelope::exponential(rho, D_beta, D_lambda);
    CommandResult res;
    double gmax = smallgain::identifier_gain_bound(env, params, D_lambda);
    res.summary = {{"fixture", "example1-gain"},
                   {"gamma_max", gmax},
                   {"parameters", {{"rho", rho}, {"D_beta", D_beta}, {"D_lambda", D_lambda}, {"d", d}, {"kappa", kappa}}}};
    if (gamma) {
        res.summary["gamma"] = *gamma;
        res.summary["certified"] = *gamma <= gmax;
        if (*gamma > gmax) res.status = kExitFail;
    }
    return res;
}

CommandResult check_gstar(const Config& cfg) {
    double lambda = cfg.get_double("envelope", "lambda", 1.0);
    double D_beta = cfg.get_double("envelope", "D_beta", 1.0);
    auto D0 = cfg.find_double("bound", "D_gamma0");
    auto c = cfg.find_double("envelope", "c");
    cfg.reject_unused();
    auto env = gains::ContractionEnvelope::exponential(lambda, D_beta, c.value_or(1.0));
    auto opt = smallgain::optimize_G(env);
    CommandResult res;
    res.summary = {{"fixture", "gstar"},
                   {"G_star", opt.G_star},
                   {"d_opt", opt.d_opt},
                   {"kappa_opt", opt.kappa_opt},
                   {"parameters", {{"lambda", lambda}, {"D_beta", D_beta}}}};
    if (D0 && c) {
        bool ok = smallgain::check_small_gain_existence(*D0, *c, opt.G_star);
        res.summary["small_gain_product"] = *D0 * *c * opt.G_star;
        res.summary["small_gain_exists"] = ok;
        if (!ok) res.status = kExitFail;
    }
    return res;
}

CommandResult check_custom(const Config& cfg) {
    auto env = load_envelope(cfg);
    auto D0 = cfg.find_double("bound", "D_gamma0");
    if (!D0) throw UsageError("[bound] D_gamma0 is required");
    double D1 = cfg.get_double("bound", "D_gamma1", *D0);
    std::string mode = cfg.get_string("schedule", "mode", "fixed");
    double d = cfg.get_double("schedule", "d", 0.5), kappa = cfg.get_double("schedule", "kappa", 2.0);
    auto x0 = cfg.find_double("state", "x0_norm");
    auto h = cfg.find_double("state", "h_z0");
    if (!x0 || !h) throw UsageError("[state] x0_norm and h_z0 are required");
    int n_probe = static_cast<int>(cfg.get_int("check", "n_probe", 200));
    cfg.reject_unused();

    if (mode == "optimize") {
        auto opt = smallgain::optimize_G(env);
        d = opt.d_opt;
        kappa = opt.kappa_opt;
    } else if (mode != "fixed") {
        throw UsageError("[schedule] mode must be fixed or optimize");
    }
    smallgain::ScheduleParams params(d, kappa);
    auto wb = gains::WanderingBound::linear(*D0, D1);
    auto report = smallgain::check_theorem_conditions(smallgain::constant_schedule_spec(env, params), env, wb,
                                                      *x0, *h, n_probe);
    auto member = smallgain::check_trapping_separable(env, wb, params, *x0, *h);
    double G = smallgain::small_gain_G(env, params);

    CommandResult res;
    res.summary = smallgain::to_json(report);
    res.summary["fixture"] = "custom";
    res.summary["schedule"] = {{"d", d}, {"kappa", kappa}, {"mode", mode}};
    res.summary["trapping_separable"] = {{"member", member.member},
                                         {"margin", std::isfinite(member.margin) ? nlohmann::json(member.margin)
                                                                                 : nlohmann::json(nullptr)},
                                         {"reason", member.reason}};
    res.summary["small_gain"] = {{"G", G},
                                 {"product", *D0 * env.c * G},
                                 {"exists", smallgain::check_small_gain_existence(*D0, env.c, G)}};
    res.summary["pass"] = report.all_pass() && member.member;
    res.status = report.all_pass() && member.member ? kExitPass : kExitFail;
    return res;
}

}  // namespace

Scenario load_scenario(const Config& cfg) {
    Scenario s;
    s.name = cfg.get_string("scenario", "name", "scenario");
    auto fixture = cfg.find_string("scenario", "fixture");
    if (!fixture) throw UsageError(cfg.source() + ": [scenario] fixture is required");
    s.fixture = *fixture;
    const FixtureInfo& info = find_fixture(s.fixture);
    s.params = cfg.section_doubles("model");
    for (const auto& [k, v] : s.params) {
        bool known = std::any_of(info.params.begin(), info.params.end(), [&](const auto& p) { return p.first == k; });
        if (!known) throw UsageError(cfg.where("model", k) + "fixture '" + s.fixture + "' has no parameter '" + k + "'");
    }
    s.x0 = cfg.get_list("initial", "x", info.x0);
    s.z0 = cfg.get_list("initial", "z", info.z0);
    if (s.x0.size() != info.x0.size() || s.z0.size() != info.z0.size())
        throw UsageError(cfg.source() + ": [initial] dimensions do not match fixture '" + s.fixture + "'");
    s.t_end = cfg.get_double("simulation", "t_end", info.t_end);
    s.dt = cfg.get_double("simulation", "dt", info.dt);
    long long rs = cfg.get_int("simulation", "record_stride", 1);
    long long cs = cfg.get_int("simulation", "csv_stride", 1);
    if (rs < 1 || cs < 1) throw UsageError(cfg.source() + ": strides must be >= 1");
    s.record_stride = static_cast<std::size_t>(rs);
    s.csv_stride = static_cast<std::size_t>(cs);
    require_positive(s.dt, "dt");
    require_positive(s.t_end, "t_end");
    return s;
}

CommandResult cmd_check(const Config& cfg, const Options& opts) {
    std::string name = cfg.get_string("scenario", "name", "check");
    std::string fixture = cfg.get_string("scenario", "fixture", "custom");
    CommandResult res;
    if (fixture == "example1-gain")
        res = check_example1_gain(cfg);
    else if (fixture == "gstar")
        res = check_gstar(cfg);
    else if (fixture == "custom")
        res = check_custom(cfg);
    else
        throw UsageError("check: fixture must be custom, example1-gain or gstar, got '" + fixture + "'");
    res.summary["name"] = name;
    res.summary["command"] = "check";
    res.summary["status"] = res.status;
    auto dir = prepare_dir(opts.out);
    res.files.push_back(write_json_file(dir / (name + "_report.json"), res.summary));
    return res;
}

CommandResult cmd_simulate(const Config& cfg, const Options& opts) {
    std::string fixture = cfg.get_string("scenario", "fixture", "");
    CommandResult res;
    if (fixture == "example1" || fixture == "example2") {
        std::string name = cfg.get_string("scenario", "name", fixture);
        auto dir = opts.out;
        if (fixture == "example1") {
            auto c = load_example1(cfg);
            cfg.reject_unused();
            apply_overrides(c.t_end, c.dt, opts);
            auto dirp = prepare_dir(dir);
            auto r = observer::run_example1(c);
            res.files = write_example1(dirp, name, r);
            res.summary = observer::to_json(r);
            res.status = r.verdict == dynsim::Verdict::converged ? kExitPass : kExitFail;
        } else {
            auto c = load_example2(cfg);
            cfg.reject_unused();
            apply_overrides(c.t_end, c.dt, opts);
            auto dirp = prepare_dir(dir);
            auto r = observer::run_example2(c);
            res.files = write_example2(dirp, r);
            res.summary = observer::to_json(r);
            res.summary["criteria"] = example2_criteria(r);
            res.status = r.verdict == dynsim::Verdict::converged ? kExitPass : kExitFail;
        }
        res.summary["name"] = name;
        res.summary["fixture"] = fixture;
        res.summary["command"] = "simulate";
        res.files.push_back(write_json_file(dir / (name + "_verdict.json"), res.summary));
        return res;
    }

    Scenario s = load_scenario(cfg);
    cfg.reject_unused();
    apply_overrides(s.t_end, s.dt, opts);
    const FixtureInfo& info = find_fixture(s.fixture);
    auto model = make_fixture(s.fixture, s.params);
    auto dir = prepare_dir(opts.out);

    dynsim::IntegrateOptions iopts;
    iopts.record_stride = s.record_stride;
    try {
        auto traj = dynsim::integrate(model, s.x0, s.z0, 0.0, s.t_end, s.dt, iopts);
        auto verdict = dynsim::classify(traj);
        auto path = dir / (s.name + "_trajectory.csv");
        auto os = open_out(path);
        dynsim::write_csv(os, traj, info.x_names, info.z_names, s.csv_stride);
        close_out(os, path);
        res.files.push_back(path);
        res.summary = dynsim::summary_json(traj, verdict);
        res.status = verdict == dynsim::Verdict::converged ? kExitPass : kExitFail;
    } catch (const IntegrationError& e) {
        res.summary = {{"verdict", "escaped"}, {"escaped", true}, {"escape_time", e.time()}, {"detail", e.what()}};
        res.status = kExitFail;
    }
    if (s.fixture == "cascade-integrator") {
        std::map<std::string, double> full(info.params.begin(), info.params.end());
        for (const auto& [k, v] : s.params) full[k] = v;
        auto env = gains::ContractionEnvelope::exponential(full["lambda1"], 1.0, full["c1"] / full["lambda1"]);
        auto bound = smallgain::trapping_x0_bound(env, {0.5, 2.0}, full["c2"], env.c, s.z0[0]);
        res.summary["trapping_x0_max"] = bound.empty ? nlohmann::json(nullptr) : nlohmann::json(bound.x0_max);
        res.summary["inside_trapping_slice"] = !bound.empty && std::abs(s.x0[0]) <= bound.x0_max;
    }
    res.summary["name"] = s.name;
    res.summary["fixture"] = s.fixture;
    res.summary["command"] = "simulate";
    res.summary["dt"] = s.dt;
    res.summary["t_end"] = s.t_end;
    res.files.push_back(write_json_file(dir / (s.name + "_verdict.json"), res.summary));
    return res;
}

namespace {

CommandResult reproduce_constants(const Options& opts) {
    auto env = gains::ContractionEnvelope::exponential(1.0, 1.0, 1.0);
    auto opt = smallgain::optimize_G(env);
    smallgain::ScheduleParams ref(0.5, 2.0);
    double gmax = smallgain::identifier_gain_bound(env, ref, 1.0);
    double product = opt.G_star / 16.0;
    bool sixteen = smallgain::check_small_gain_existence(1.0 / 16.0, 1.0, opt.G_star);
    auto sched = smallgain::build_schedule(env, ref);

    std::vector<std::pair<std::string, double>> rows{
        {"G_star", opt.G_star},       {"d_opt", opt.d_opt},         {"kappa_opt", opt.kappa_opt},
        {"gamma_max_example1", gmax}, {"one_sixteenth_product", product},
        {"delta0", sched.delta0},     {"xi_star", sched.xi_star},   {"tau_star", sched.tau_star},
    };
    auto dir = prepare_dir(opts.out);
    CommandResult res;
    auto path = dir / "constants.csv";
    auto os = open_out(path);
    os << "name,value\n";
    for (const auto& [k, v] : rows) os << k << ',' << format_double(v) << '\n';
    close_out(os, path);
    res.files.push_back(path);

    nlohmann::json checks = {{"G_star_within_0.01", std::abs(opt.G_star - 15.6886) <= 0.01},
                             {"gamma_max_within_0.0002", std::abs(gmax - 0.0601) <= 0.0002},
                             {"one_sixteenth_holds", sixteen}};
    res.summary = {{"reference", {{"lambda", 1.0}, {"D_beta", 1.0}, {"d", 0.5}, {"kappa", 2.0}}}, {"checks", checks}};
    for (const auto& [k, v] : rows) res.summary["values"][k] = v;
    res.files.push_back(write_json_file(dir / "constants.json", res.summary));
    res.status = all_true(checks) ? kExitPass : kExitFail;
    return res;
}

CommandResult reproduce_ex1(const Config& cfg, const Options& opts) {
    auto base = load_example1(cfg);
    auto members = cfg.get_int("fan", "members", 20);
    std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("fan", "seed", static_cast<long long>(kDefaultSeed)));
    double lo = cfg.get_double("fan", "x0_lo", -1.0), hi = cfg.get_double("fan", "x0_hi", 1.0);
    cfg.reject_unused();
    if (members < 1) throw UsageError("[fan] members must be >= 1");
    if (!(lo <= hi)) throw UsageError("[fan] x0_lo must not exceed x0_hi");
    if (opts.seed) seed = *opts.seed;
    apply_overrides(base.t_end, base.dt, opts);
    auto dir = prepare_dir(opts.out);

    auto n = static_cast<std::size_t>(members);
    auto x0s = seeded_uniform(seed, n, lo, hi);
    std::vector<observer::Example1Result> runs(n);
    parallel_for(n, [&](std::size_t i) {
        auto c = base;
        c.x0 = x0s[i];
        runs[i] = observer::run_example1(c);
    });

    CommandResult res;
    std::vector<std::string> names{"t"};
    std::vector<const std::vector<double>*> xs{&runs[0].series_t}, ths{&runs[0].series_t};
    for (std::size_t i = 0; i < n; ++i) {
        names.push_back(run_label(i, n));
        xs.push_back(&runs[i].series_x);
        ths.push_back(&runs[i].series_theta_hat);
    }
    res.files.push_back(write_columns(dir / "ex1_x_family.csv", names, xs));
    res.files.push_back(write_columns(dir / "ex1_theta_hat_family.csv", names, ths));

    nlohmann::json list = nlohmann::json::array();
    bool all_ok = true, all_sandwich = true, all_gaps = true;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = runs[i];
        bool ok = r.verdict == dynsim::Verdict::converged && std::abs(r.x_final) < 1e-2 &&
                  std::abs(r.theta_hat_final - base.theta) < 0.05;
        all_ok = all_ok && ok;
        all_sandwich = all_sandwich && r.sandwich.passed;
        all_gaps = all_gaps && (!r.certified || r.gaps_ok);
        auto j = observer::to_json(r);
        j.erase("hits");
        j["x0"] = x0s[i];
        j["meets_criterion"] = ok;
        list.push_back(j);
    }
    res.summary = {{"seed", seed},
                   {"members", n},
                   {"theta", base.theta},
                   {"gamma", base.gamma},
                   {"t_end", base.t_end},
                   {"dt", base.dt},
                   {"all_converged", all_ok},
                   {"all_sandwich_passed", all_sandwich},
                   {"all_certified_gaps_ok", all_gaps},
                   {"runs", list}};
    res.files.push_back(write_json_file(dir / "ex1_summary.json", res.summary));
    res.status = all_ok ? kExitPass : kExitFail;
    return res;
}

CommandResult reproduce_ex2(const Config& cfg, const Options& opts) {
    auto c = load_example2(cfg);
    cfg.reject_unused();
    apply_overrides(c.t_end, c.dt, opts);
    auto dir = prepare_dir(opts.out);
    auto r = observer::run_example2(c);
    CommandResult res;
    res.files = write_example2(dir, r);
    res.summary = observer::to_json(r);
    res.summary["criteria"] = example2_criteria(r);
    res.summary["t_end"] = c.t_end;
    res.summary["dt"] = c.dt;
    res.files.push_back(write_json_file(dir / "ex2_summary.json", res.summary));
    res.status = all_true(res.summary["criteria"]) ? kExitPass : kExitFail;
    return res;
}

}  // namespace

CommandResult cmd_reproduce(const Config& cfg, const Options& opts) {
    CommandResult res;
    if (opts.which == "constants") {
        cfg.reject_unused();
        res = reproduce_constants(opts);
    } else if (opts.which == "ex1") {
        res = reproduce_ex1(cfg, opts);
    } else if (opts.which == "ex2") {
        res = reproduce_ex2(cfg, opts);
    } else {
        throw UsageError("reproduce: target must be ex1, ex2 or constants, got '" + opts.which + "'");
    }
    res.summary["command"] = "reproduce";
    res.summary["target"] = opts.which;
    return res;
}

namespace {

std::vector<double> sweep_values(const Config& cfg) {
    bool has_values = cfg.has("sweep", "values"), has_range = cfg.has("sweep", "range");
    if (has_values == has_range) throw UsageError("[sweep] needs exactly one of values or range");
    if (has_values) return cfg.get_list("sweep", "values", {});
    auto text = *cfg.find_string("sweep", "range");
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) {
        auto v = to_number(trim(item));
        if (!v) throw UsageError("[sweep] range must be start:stop:count");
        parts.push_back(*v);
    }
    if (parts.size() != 3 || parts[2] < 2 || parts[2] != std::floor(parts[2]))
        throw UsageError("[sweep] range must be start:stop:count with count >= 2");
    std::vector<double> out;
    auto n = static_cast<int>(parts[2]);
    for (int i = 0; i < n; ++i) out.push_back(parts[0] + (parts[1] - parts[0]) * i / (n - 1));
    return out;
}

/// Applies one swept value: a fixture parameter, or x0:i / z0:i for an initial component.
void apply_sweep(Scenario& s, const std::string& parameter, double value) {
    auto colon = parameter.find(':');
    if (colon != std::string::npos) {
        std::string vec = parameter.substr(0, colon);
        auto idx = to_number(parameter.substr(colon + 1));
        auto& target = vec == "x0" ? s.x0 : s.z0;
        if ((vec != "x0" && vec != "z0") || !idx || *idx < 0 || static_cast<std::size_t>(*idx) >= target.size())
            throw UsageError("[sweep] parameter '" + parameter + "' is not a valid initial-state component");
        target[static_cast<std::size_t>(*idx)] = value;
        return;
    }
    const auto& info = find_fixture(s.fixture);
    bool known = std::any_of(info.params.begin(), info.params.end(), [&](const auto& p) { return p.first == parameter; });
    if (!known) throw UsageError("[sweep] fixture '" + s.fixture + "' has no parameter '" + parameter + "'");
    s.params[parameter] = value;
}

}  // namespace

CommandResult cmd_sweep(const Config& cfg, const Options& opts) {
    Scenario base = load_scenario(cfg);
    auto parameter = cfg.find_string("sweep", "parameter");
    if (!parameter) throw UsageError("[sweep] parameter is required");
    std::string mode = cfg.get_string("sweep", "mode", "verdict");
    auto values = sweep_values(cfg);
    double t_avg = cfg.get_double("sweep", "t_avg", 10.0);
    cfg.reject_unused();
    apply_overrides(base.t_end, base.dt, opts);
    for (double v : values) {
        Scenario probe = base;
        apply_sweep(probe, *parameter, v);
    }
    auto dir = prepare_dir(opts.out);
    CommandResult res;

    if (mode == "steady-state") {
        if (find_fixture(base.fixture).z0.size() != 0)
            throw UsageError("[sweep] steady-state mode needs a fixture without wandering state");
        if (parameter->find(':') != std::string::npos)
            throw UsageError("[sweep] steady-state mode sweeps a fixture parameter");
        dynsim::SteadyStateOptions so;
        so.dt = base.dt;
        so.t_avg = t_avg;
        so.t_settle = std::max(base.t_end - t_avg, 0.0);
        require_positive(so.t_settle, "t_end - t_avg");
        auto factory = [&](double u) {
            auto params = base.params;
            params[*parameter] = u;
            return make_fixture(base.fixture, params);
        };
        auto map = dynsim::estimate_steady_state_characteristic(factory, values, base.x0, so);
        auto path = dir / (base.name + "_steady_state.csv");
        auto os = open_out(path);
        os << *parameter << ",limit,window_integral,settled,settled_on_average\n";
        for (const auto& p : map.points)
            os << format_double(p.input) << ',' << format_double(p.limit) << ',' << format_double(p.window_integral)
               << ',' << (p.settled ? 1 : 0) << ',' << (p.settled_on_average ? 1 : 0) << '\n';
        close_out(os, path);
        res.files.push_back(path);
        res.summary = {{"mode", mode}, {"parameter", *parameter}, {"zero_set", map.zero_set}};
    } else if (mode == "verdict") {
        struct Row {
            dynsim::Verdict verdict = dynsim::Verdict::undecided;
            double final_dist = 0.0;
            double escape_time = std::nan("");
        };
        std::vector<Row> rows(values.size());
        parallel_for(values.size(), [&](std::size_t i) {
            Scenario s = base;
            apply_sweep(s, *parameter, values[i]);
            dynsim::IntegrateOptions io;
            io.record_stride = std::max<std::size_t>(s.record_stride, 1);
            try {
                auto traj = dynsim::integrate(make_fixture(s.fixture, s.params), s.x0, s.z0, 0.0, s.t_end, s.dt, io);
                rows[i] = {dynsim::classify(traj), traj.dist.back(), traj.escape_time};
            } catch (const IntegrationError& e) {
                rows[i] = {dynsim::Verdict::escaped, std::nan(""), e.time()};
            }
        });
        auto path = dir / (base.name + "_sweep.csv");
        auto os = open_out(path);
        os << *parameter << ",verdict,final_dist,escape_time\n";
        nlohmann::json counts = {{"converged", 0}, {"escaped", 0}, {"undecided", 0}};
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto name = std::string(dynsim::to_string(rows[i].verdict));
            counts[name] = counts[name].get<int>() + 1;
            os << format_double(values[i]) << ',' << name << ','
               << (std::isfinite(rows[i].final_dist) ? format_double(rows[i].final_dist) : "") << ','
               << (std::isfinite(rows[i].escape_time) ? format_double(rows[i].escape_time) : "") << '\n';
        }
        close_out(os, path);
        res.files.push_back(path);
        res.summary = {{"mode", mode}, {"parameter", *parameter}, {"points", values.size()}, {"verdicts", counts}};
    } else {
        throw UsageError("[sweep] mode must be verdict or steady-state");
    }
    res.summary["command"] = "sweep";
    res.summary["name"] = base.name;
    res.summary["fixture"] = base.fixture;
    res.files.push_back(write_json_file(dir / (base.name + "_sweep.json"), res.summary));
    return res;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f) {
    std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                f(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::vector<double> seeded_uniform(std::uint64_t seed, std::size_t count, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::vector<double> out(count);
    for (auto& v : out) v = lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    return out;
}

namespace {

void print_human(std::ostream& out, const CommandResult& res) {
    out << "status: " << (res.status == kExitPass ? "pass" : "fail") << '\n';
    for (const auto& [k, v] : res.summary.items()) {
        if (v.is_array() || v.is_object()) continue;
        out << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
    }
    for (const char* key : {"criteria", "checks", "values", "verdicts"}) {
        if (!res.summary.contains(key)) continue;
        for (const auto& [k, v] : res.summary[key].items()) out << key << '.' << k << ": " << v.dump() << '\n';
    }
    for (const auto& f : res.files) out << "wrote " << f.string() << '\n';
}

}  // namespace

int run(const Options& opts, std::ostream& out, std::ostream& err) {
    try {
        Config cfg;
        if (opts.config) {
            cfg = Config::load(*opts.config);
        } else if (opts.command != "reproduce") {
            throw UsageError(opts.command + " needs --config");
        }
        CommandResult res;
        if (opts.command == "check")
            res = cmd_check(cfg, opts);
        else if (opts.command == "simulate")
            res = cmd_simulate(cfg, opts);
        else if (opts.command == "reproduce")
            res = cmd_reproduce(cfg, opts);
        else if (opts.command == "sweep")
            res = cmd_sweep(cfg, opts);
        else
            throw UsageError("unknown command '" + opts.command + "'");
        if (opts.json)
            out << res.summary.dump(2) << '\n';
        else
            print_human(out, res);
        return res.status;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DomainError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
}

}  // namespace nusg::cli
