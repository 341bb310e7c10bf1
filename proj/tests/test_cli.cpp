#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nusg/cli.hpp"

#include <unistd.h>

#include <fstream>
#include <sstream>

using namespace nusg;
using namespace nusg::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("nusg_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(path / name) << text;
        return path / name;
    }
    static inline int counter = 0;
};

Config parse(const std::string& text) {
    std::istringstream in(text);
    return Config::parse(in, "test.ini");
}

struct Outcome {
    int status;
    std::string out;
    std::string err;
};

Outcome invoke(Options opts) {
    std::ostringstream out, err;
    int status = run(opts, out, err);
    return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

}  // namespace

TEST_CASE("config parsing") {
    auto cfg = parse("# comment\n[a]\nx = 1.5  ; trailing\nname = hello\nlist = 1, 2,3\n\n[b]\nflag = yes\nn = 7\n");
    CHECK(cfg.get_double("a", "x", 0.0) == 1.5);
    CHECK(cfg.get_string("a", "name", "") == "hello");
    CHECK(cfg.get_list("a", "list", {}) == std::vector<double>{1, 2, 3});
    CHECK(cfg.get_bool("b", "flag", false));
    CHECK(cfg.get_int("b", "n", 0) == 7);
    CHECK(cfg.get_double("b", "missing", 4.0) == 4.0);
    CHECK_NOTHROW(cfg.reject_unused());

    CHECK_THROWS_AS(parse("x = 1\n"), UsageError);
    CHECK_THROWS_AS(parse("[a]\nx = 1\nx = 2\n"), UsageError);
    CHECK_THROWS_AS(parse("[a\n"), UsageError);
    CHECK_THROWS_AS(parse("[a]\njunk\n"), UsageError);
}

TEST_CASE("config diagnostics carry line and key") {
    auto cfg = parse("[a]\nx = 1\n\n[b]\ngama = 2\n");
    cfg.get_double("a", "x", 0.0);
    try {
        cfg.reject_unused();
        FAIL("expected UsageError");
    } catch (const UsageError& e) {
        std::string msg = e.what();
        CHECK(msg.find("test.ini:5") != std::string::npos);
        CHECK(msg.find("gama") != std::string::npos);
    }

    auto bad = parse("[a]\nx = one\n");
    try {
        bad.get_double("a", "x", 0.0);
        FAIL("expected UsageError");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("test.ini:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse("[a]\nx = nan\n").get_double("a", "x", 0.0), UsageError);
    CHECK_THROWS_AS(parse("[a]\nx = 1,b\n").get_list("a", "x", {}), UsageError);
}

TEST_CASE("fixture registry") {
    for (const auto& f : builtin_fixtures()) {
        auto m = make_fixture(f.id, {});
        CHECK(m.n == f.x0.size());
        CHECK(m.m == f.z0.size());
        CHECK(f.x_names.size() == f.x0.size());
        CHECK(f.dt > 0.0);
    }
    CHECK_THROWS_AS(find_fixture("nope"), UsageError);
    CHECK_THROWS_AS(make_fixture("saddle-node", {{"gama", 1.0}}), UsageError);
}

TEST_CASE("scenario loading") {
    auto cfg = parse("[scenario]\nname = s\nfixture = cascade-damped\n[model]\nc1 = 0.5\n[initial]\nx = 0.2\n"
                     "[simulation]\nt_end = 5\ndt = 0.1\n");
    auto s = load_scenario(cfg);
    CHECK(s.name == "s");
    CHECK(s.params.at("c1") == 0.5);
    CHECK(s.x0 == std::vector<double>{0.2});
    CHECK(s.z0 == std::vector<double>{1.0});
    CHECK(s.dt == 0.1);
    CHECK_NOTHROW(cfg.reject_unused());

    CHECK_THROWS_AS(load_scenario(parse("[scenario]\nname = s\n")), UsageError);
    CHECK_THROWS_AS(load_scenario(parse("[scenario]\nfixture = saddle-node\n[initial]\nx = 1, 2\n")), UsageError);
    CHECK_THROWS_AS(load_scenario(parse("[scenario]\nfixture = saddle-node\n[simulation]\ndt = 0\n")), UsageError);
    try {
        load_scenario(parse("[scenario]\nfixture = saddle-node\n[model]\ngama = 1\n"));
        FAIL("expected UsageError");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("test.ini:4") != std::string::npos);
    }
}

TEST_CASE("check reports the identifier gain bound and G*") {
    TempDir dir;
    Options opts;
    opts.command = "check";
    opts.out = dir.path;
    opts.json = true;

    opts.config = dir.write("e.ini", "[scenario]\nname = gain\nfixture = example1-gain\n");
    auto r = invoke(opts);
    CHECK(r.status == kExitPass);
    auto j = read_json(dir.path / "gain_report.json");
    CHECK(j["gamma_max"].get<double>() == doctest::Approx(0.0601).epsilon(0.003));
    CHECK(nlohmann::json::parse(r.out)["gamma_max"] == j["gamma_max"]);

    opts.config = dir.write("g.ini", "[scenario]\nname = g\nfixture = gstar\n");
    CHECK(invoke(opts).status == kExitPass);
    CHECK(std::abs(read_json(dir.path / "g_report.json")["G_star"].get<double>() - 15.6886) <= 0.01);

    opts.config = dir.write("d.ini",
                            "[scenario]\nfixture = custom\n[bound]\nD_gamma0 = 0.05\n[schedule]\nd = 1.5\n"
                            "[state]\nx0_norm = 1\nh_z0 = 1\n");
    auto bad = invoke(opts);
    CHECK(bad.status == kExitUsage);
    CHECK(bad.err.find("d must lie in (0, 1)") != std::string::npos);
}

TEST_CASE("check on a custom exponential scenario") {
    TempDir dir;
    Options opts;
    opts.command = "check";
    opts.out = dir.path;
    const std::string base = "[scenario]\nname = c\n[envelope]\nlambda = 1\nD_beta = 1\nc = 1\n[bound]\nD_gamma0 = ";
    opts.config = dir.write("ok.ini", base + "0.05\n[state]\nx0_norm = 1\nh_z0 = 1.0986122886681098\n");
    CHECK(invoke(opts).status == kExitPass);
    auto j = read_json(dir.path / "c_report.json");
    CHECK(j["trapping_separable"]["member"] == true);
    CHECK(j["pass"] == true);

    opts.config = dir.write("no.ini", base + "0.5\n[state]\nx0_norm = 1\nh_z0 = 1\n");
    CHECK(invoke(opts).status == kExitFail);

    opts.config = dir.write("typo.ini", base + "0.05\n[state]\nx0_norm = 1\nh_z0 = 1\nh_0 = 2\n");
    auto typo = invoke(opts);
    CHECK(typo.status == kExitUsage);
    CHECK(typo.err.find("h_0") != std::string::npos);
}

TEST_CASE("simulate classifies the weak attractor") {
    TempDir dir;
    Options opts;
    opts.command = "simulate";
    opts.out = dir.path;
    opts.config = dir.write("below.ini", "[scenario]\nname = below\nfixture = saddle-node\n[initial]\nz = -0.1\n");
    CHECK(invoke(opts).status == kExitPass);
    CHECK(read_json(dir.path / "below_verdict.json")["verdict"] == "converged");

    opts.config = dir.write("above.ini", "[scenario]\nname = above\nfixture = saddle-node\n[initial]\nz = 0.1\n");
    CHECK(invoke(opts).status == kExitFail);
    CHECK(read_json(dir.path / "above_verdict.json")["verdict"] == "escaped");

    opts.dt = 0.0;
    CHECK(invoke(opts).status == kExitUsage);
}

TEST_CASE("simulate the integrator cascade inside the trapping slice") {
    TempDir dir;
    Options opts;
    opts.command = "simulate";
    opts.out = dir.path;
    opts.config = dir.write("c.ini", "[scenario]\nname = casc\nfixture = cascade-integrator\n");
    CHECK(invoke(opts).status == kExitPass);
    auto j = read_json(dir.path / "casc_verdict.json");
    CHECK(j["inside_trapping_slice"] == true);
    CHECK(j["verdict"] == "converged");
}

TEST_CASE("simulate output is byte-identical across runs") {
    TempDir a, b;
    Options opts;
    opts.command = "simulate";
    opts.config = a.write("s.ini", "[scenario]\nname = d\nfixture = cascade-damped\n[simulation]\ncsv_stride = 7\n");
    opts.out = a.path;
    invoke(opts);
    opts.out = b.path;
    invoke(opts);
    CHECK(slurp(a.path / "d_trajectory.csv") == slurp(b.path / "d_trajectory.csv"));
    CHECK(slurp(a.path / "d_verdict.json") == slurp(b.path / "d_verdict.json"));
    CHECK(slurp(a.path / "d_trajectory.csv").rfind("t,x1,x2,dist,h\n", 0) == 0);
}

TEST_CASE("reproduce constants") {
    TempDir dir;
    Options opts;
    opts.command = "reproduce";
    opts.which = "constants";
    opts.out = dir.path;
    CHECK(invoke(opts).status == kExitPass);
    auto j = read_json(dir.path / "constants.json");
    CHECK(std::abs(j["values"]["G_star"].get<double>() - 15.6886) <= 0.01);
    CHECK(j["values"]["one_sixteenth_product"].get<double>() == doctest::Approx(0.9805).epsilon(0.002));
    CHECK(slurp(dir.path / "constants.csv").rfind("name,value\nG_star,", 0) == 0);

    opts.which = "ex3";
    CHECK(invoke(opts).status == kExitUsage);
}

TEST_CASE("reproduce ex1 with a short fan is seeded and deterministic") {
    TempDir a, b, c;
    Options opts;
    opts.command = "reproduce";
    opts.which = "ex1";
    opts.config = a.write("f.ini", "[fan]\nmembers = 3\n[simulation]\nt_end = 20\ndt = 0.01\ncsv_stride = 10\n");
    opts.seed = 5;
    opts.out = a.path;
    invoke(opts);
    opts.out = b.path;
    invoke(opts);
    CHECK(slurp(a.path / "ex1_theta_hat_family.csv") == slurp(b.path / "ex1_theta_hat_family.csv"));
    auto j = read_json(a.path / "ex1_summary.json");
    CHECK(j["seed"] == 5);
    CHECK(j["runs"].size() == 3);
    CHECK(slurp(a.path / "ex1_x_family.csv").rfind("t,run1,run2,run3\n", 0) == 0);

    opts.seed = 6;
    opts.out = c.path;
    invoke(opts);
    CHECK(slurp(a.path / "ex1_x_family.csv") != slurp(c.path / "ex1_x_family.csv"));
}

TEST_CASE("sweep verdicts and steady-state characteristic") {
    TempDir dir;
    Options opts;
    opts.command = "sweep";
    opts.out = dir.path;
    opts.config = dir.write("v.ini",
                            "[scenario]\nname = sn\nfixture = saddle-node\n[simulation]\nt_end = 100\n"
                            "[sweep]\nparameter = z0:0\nvalues = -0.1, 0.1\n");
    CHECK(invoke(opts).status == kExitPass);
    auto v = slurp(dir.path / "sn_sweep.csv");
    CHECK(v.find("-0.1,converged") != std::string::npos);
    CHECK(v.find("0.1,escaped") != std::string::npos);

    opts.config = dir.write("s.ini",
                            "[scenario]\nname = ss\nfixture = example1-plant\n[sweep]\nparameter = theta_hat\n"
                            "mode = steady-state\nvalues = 0.1, 0.3, 0.5\n");
    CHECK(invoke(opts).status == kExitPass);
    auto j = read_json(dir.path / "ss_sweep.json");
    REQUIRE(j["zero_set"].size() == 1);
    CHECK(j["zero_set"][0].get<double>() == doctest::Approx(0.3));

    opts.config = dir.write("b.ini",
                            "[scenario]\nfixture = saddle-node\n[sweep]\nparameter = nope\nvalues = 1\n");
    CHECK(invoke(opts).status == kExitUsage);
    opts.config = dir.write("r.ini",
                            "[scenario]\nfixture = saddle-node\n[sweep]\nparameter = eps\nrange = 0:1\n");
    CHECK(invoke(opts).status == kExitUsage);
}

TEST_CASE("i/o failures and missing configs map to their exit statuses") {
    TempDir dir;
    auto blocker = dir.write("file", "x");
    Options opts;
    opts.command = "reproduce";
    opts.which = "constants";
    opts.out = blocker / "sub";
    CHECK(invoke(opts).status == kExitIo);

    Options nocfg;
    nocfg.command = "simulate";
    CHECK(invoke(nocfg).status == kExitUsage);
    nocfg.config = dir.path / "missing.ini";
    CHECK(invoke(nocfg).status == kExitUsage);
}

TEST_CASE("seeded draws and parallel_for") {
    auto a = seeded_uniform(42, 100, -1.0, 1.0);
    auto b = seeded_uniform(42, 100, -1.0, 1.0);
    CHECK(a == b);
    for (double v : a) CHECK((v >= -1.0 && v <= 1.0));
    CHECK(seeded_uniform(43, 100, -1.0, 1.0) != a);

    std::vector<int> hit(50, 0);
    parallel_for(hit.size(), [&](std::size_t i) { hit[i] += 1; });
    for (int h : hit) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(5, [](std::size_t i) { if (i == 3) throw std::runtime_error("boom"); }),
                    std::runtime_error);
}
