#pragma once

// Scenario configuration and the check / simulate / reproduce / sweep commands.

#include "nusg/dynsim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nusg::cli {

/// Exit statuses.
inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;   // condition failed, escape, or undecided run
inline constexpr int kExitUsage = 2;  // malformed command line or configuration
inline constexpr int kExitIo = 3;     // output could not be written
inline constexpr int kExitInternal = 4;

inline constexpr std::uint64_t kDefaultSeed = 20240607;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Plain-text configuration: "[section]" headers, "key = value" lines, '#' or ';' comments.
/// Every key must be read by the command that loads it; leftovers are reported by
/// reject_unused() as unknown keys.
class Config {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static Config parse(std::istream& in, const std::string& source = "<config>");
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& section, const std::string& key) const;
    bool has_section(const std::string& section) const;

    std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
    std::optional<std::string> find_string(const std::string& section, const std::string& key) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::optional<double> find_double(const std::string& section, const std::string& key) const;
    long long get_int(const std::string& section, const std::string& key, long long fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    /// Comma-separated list of numbers.
    std::vector<double> get_list(const std::string& section, const std::string& key,
                                 const std::vector<double>& fallback) const;
    /// Every key of a section (marks them used).
    std::map<std::string, double> section_doubles(const std::string& section) const;

    /// Throws UsageError naming the first key that no reader consumed.
    void reject_unused() const;

    const std::string& source() const { return source_; }
    /// "source:line: " prefix for diagnostics about an existing key.
    std::string where(const std::string& section, const std::string& key) const;

private:
    const Entry* lookup(const std::string& section, const std::string& key) const;
    [[noreturn]] void bad_value(const std::string& section, const std::string& key, const Entry& e,
                                const std::string& expected) const;

    std::string source_;
    std::map<std::string, std::map<std::string, Entry>> data_;
    std::vector<std::pair<std::string, std::string>> order_;
    mutable std::set<std::pair<std::string, std::string>> used_;
};

struct FixtureInfo {
    std::string id;
    std::string description;
    std::vector<std::pair<std::string, double>> params;  // name, default
    std::vector<std::string> x_names;
    std::vector<std::string> z_names;
    std::vector<double> x0;
    std::vector<double> z0;
    double t_end = 0.0;
    double dt = 0.0;
};

const std::vector<FixtureInfo>& builtin_fixtures();
const FixtureInfo& find_fixture(const std::string& id);
/// Builds the model; unknown parameter names throw UsageError.
dynsim::InterconnectionModel make_fixture(const std::string& id, const std::map<std::string, double>& params);

/// Model selection plus simulation settings gathered from a configuration.
struct Scenario {
    std::string name = "scenario";
    std::string fixture;
    std::map<std::string, double> params;
    std::vector<double> x0;
    std::vector<double> z0;
    double t_end = 0.0;
    double dt = 0.0;
    std::size_t record_stride = 1;
    std::size_t csv_stride = 1;
};

/// Reads [scenario], [model], [initial], [simulation]. Defaults come from the fixture.
Scenario load_scenario(const Config& cfg);

struct Options {
    std::string command;               // check, simulate, reproduce, sweep
    std::string which;                 // reproduce target: ex1, ex2, constants
    std::optional<std::filesystem::path> config;
    std::filesystem::path out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<double> dt;
    std::optional<double> horizon;
    bool json = false;
};

struct CommandResult {
    int status = kExitPass;
    nlohmann::json summary;
    std::vector<std::filesystem::path> files;
};

CommandResult cmd_check(const Config& cfg, const Options& opts);
CommandResult cmd_simulate(const Config& cfg, const Options& opts);
CommandResult cmd_reproduce(const Config& cfg, const Options& opts);
CommandResult cmd_sweep(const Config& cfg, const Options& opts);

/// Dispatches, writes the human or JSON summary, and maps errors to exit statuses.
int run(const Options& opts, std::ostream& out, std::ostream& err);

/// Runs f(0..n-1) on up to hardware_concurrency threads; rethrows the first failure.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f);

/// Uniform draws on [lo, hi] from a seeded 64-bit Mersenne Twister.
std::vector<double> seeded_uniform(std::uint64_t seed, std::size_t count, double lo, double hi);

}  // namespace nusg::cli
