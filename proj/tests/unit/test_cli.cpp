#include "doctest.h"

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "oracles/oracles.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rbsde;
using namespace rbsde::cli;

namespace {

const fs::path kConfigs = RBSDE_CONFIG_DIR;

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("rbsde_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << text;
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path write_config(const std::string& name, const json& j) {
    const fs::path p = scratch(name + ".json");
    spit(p, j.dump(2) + "\n");
    return p;
}

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run(const std::string& command, const fs::path& config, const fs::path& out_dir,
            std::optional<unsigned> threads = std::nullopt) {
    RunOptions o;
    o.config = config.string();
    o.out = out_dir.string();
    o.threads = threads;
    std::ostringstream out, err;
    const int code = run_command(command, o, out, err);
    return {code, out.str(), err.str()};
}

Outcome report(const fs::path& dir) {
    std::ostringstream out, err;
    const int code = report_command(dir.string(), out, err);
    return {code, out.str(), err.str()};
}

int run_exe(const std::string& args) {
    const std::string cmd = std::string(RBSDE_EXE) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::istringstream l(line);
        for (std::string c; std::getline(l, c, ',');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

/// The acceptance setup shrunk so a full `check` finishes in a few seconds.
json small_acceptance() {
    json j = load_json(kConfigs / "acceptance_r2bsde.json");
    j["chain"]["steps"] = 50;
    j["chain"]["nodes"] = 60;
    j["simulate"]["paths"] = 500;
    j["simulate"]["steps"] = 50;
    j.erase("threads");
    return j;
}

json manifest_without_timings(const fs::path& dir) {
    json m = load_json(dir / "manifest.json");
    m.erase("timings_ms");
    return m;
}

}  // namespace

TEST_CASE("constant barriers pin every Y to the common value") {
    const fs::path out = scratch("trivial");
    const Outcome r = run("solve", kConfigs / "trivial_constant.json", out);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const auto rows = csv_rows(out / "solution.csv");
    REQUIRE(rows.size() > 1);
    CHECK(rows[0] == std::vector<std::string>{"m", "t", "x", "regime", "Y", "Z", "Kplus", "Kminus", "contact_flag"});
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 9);
        CHECK(std::stod(rows[i][4]) == 5.0);
        CHECK(rows[i][8] == "3");
    }
    // 51 time layers x 50 nodes x 2 regimes
    CHECK(rows.size() - 1 == 51 * 50 * 2);
    CHECK(load_json(out / "report.json")["overall"] == "PASS");
}

TEST_CASE("three-step Dynkin game matches the golden value and the oracle") {
    const json golden = load_json(kConfigs / "dynkin_3step.golden.json");
    const double y0 = golden["y0"].get<double>();
    const double tol = golden["tolerance"].get<double>();

    const fs::path out = scratch("dynkin");
    const Outcome r = run("solve", kConfigs / golden["config"].get<std::string>(), out);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(std::abs(load_json(out / "report.json")["problem"]["y0"].get<double>() - y0) <= tol);

    // Backward min/max recursion on the same chain, barriers written out by hand.
    const RunConfig cfg = load_config((kConfigs / "dynkin_3step.json").string());
    const ChainApprox chain = build_chain(make_parametric_model(cfg.model), cfg.steps, cfg.grid);
    const auto v = oracle::dynkin_value(
        chain, [&](std::size_t, std::size_t s) { return std::max(chain.x(s), 95.0); },
        [&](std::size_t, std::size_t s) { return std::max(chain.x(s) + 5.0, 108.0); },
        [&](std::size_t s) { return std::max(chain.x(s), 100.0); });
    CHECK(std::abs(v[chain.nearest_state(100.0, 0)] - y0) <= tol);

    // Every Y in the CSV agrees with the oracle.
    const auto rows = csv_rows(out / "solution.csv");
    double worst = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const std::size_t m = std::stoul(rows[i][0]);
        const std::size_t s = (i - 1) % chain.states();
        worst = std::max(worst, std::abs(std::stod(rows[i][4]) - v[m * chain.states() + s]));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("crossing barriers are rejected with a line-anchored message") {
    const fs::path cfg = kConfigs / "bad_obstacles.json";
    const Outcome r = run("solve", cfg, scratch("bad"));
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("bad_obstacles.json:17:") != std::string::npos);
    CHECK(r.err.find("barrier ordering") != std::string::npos);
    CHECK(r.err.find("assumption") != std::string::npos);
    CHECK(r.err.find("...") != std::string::npos);
    CHECK_FALSE(fs::exists(fs::temp_directory_path() / ("rbsde_cli_" + std::to_string(::getpid())) / "bad" / "manifest.json"));
}

TEST_CASE("config errors point at the offending line") {
    const std::string base = slurp(kConfigs / "trivial_constant.json");

    SUBCASE("syntax") {
        std::string text = base;
        text.replace(text.find("\"seed\": 1,"), 10, "\"seed\": 1,,");
        const fs::path p = scratch("syntax.json");
        spit(p, text);
        const Outcome r = run("solve", p, scratch("syntax_out"));
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("syntax.json:2:") != std::string::npos);
    }
    SUBCASE("unknown key") {
        std::string text = base;
        text.replace(text.find("\"steps\": 50"), 11, "\"stepz\": 50");
        const fs::path p = scratch("unknown.json");
        spit(p, text);
        const Outcome r = run("solve", p, scratch("unknown_out"));
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("unknown.json:12:") != std::string::npos);
        CHECK(r.err.find("stepz") != std::string::npos);
    }
    SUBCASE("regime label out of range") {
        std::string text = base;
        text.replace(text.find("\"regime\": 1"), 11, "\"regime\": 3");
        const fs::path p = scratch("regime.json");
        spit(p, text);
        const Outcome r = run("solve", p, scratch("regime_out"));
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("regime.json:15:") != std::string::npos);
    }
    SUBCASE("wrong type") {
        std::string text = base;
        text.replace(text.find("\"horizon\": 1.0"), 14, "\"horizon\": \"one\"");
        const fs::path p = scratch("type.json");
        spit(p, text);
        const Outcome r = run("solve", p, scratch("type_out"));
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("type.json:4:") != std::string::npos);
    }
    SUBCASE("missing seed") {
        json j = json::parse(base);
        j.erase("seed");
        const Outcome r = run("solve", write_config("noseed", j), scratch("noseed_out"));
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("seed") != std::string::npos);
    }
}

TEST_CASE("reruns are byte-identical and independent of the thread count") {
    const fs::path cfg = write_config("small", small_acceptance());
    const fs::path a = scratch("rerun_a"), b = scratch("rerun_b"), c = scratch("rerun_c");
    const Outcome ra = run("check", cfg, a, 1u);
    REQUIRE_MESSAGE(ra.code == kExitOk, ra.out, ra.err);
    REQUIRE(run("check", cfg, b, 1u).code == kExitOk);
    REQUIRE(run("check", cfg, c, 4u).code == kExitOk);
    for (const char* f : {"solution.csv", "report.json", "summary.txt", "config.json"}) {
        CAPTURE(f);
        CHECK(slurp(a / f) == slurp(b / f));
        CHECK(slurp(a / f) == slurp(c / f));
    }
    CHECK(manifest_without_timings(a) == manifest_without_timings(b));
    CHECK(manifest_without_timings(a) == manifest_without_timings(c));

    const json rep = load_json(a / "report.json");
    std::vector<std::string> names;
    for (const json& v : rep["verdicts"]) names.push_back(v["name"]);
    for (const char* expected : {"reflection_invariants", "kplus_density", "norms", "comparison", "apriori_bounded",
                                 "apriori_trend", "apriori_common_barrier", "compensator", "probes"})
        CHECK_MESSAGE(std::find(names.begin(), names.end(), expected) != names.end(), expected);
}

TEST_CASE("simulate writes paths and a compensator verdict") {
    json j = small_acceptance();
    j["simulate"]["csv_paths"] = 3;
    const fs::path cfg = write_config("sim", j);
    const fs::path out = scratch("sim_out");
    const Outcome r = run("simulate", cfg, out);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const json rep = load_json(out / "report.json");
    CHECK(rep["verdicts"][0]["name"] == "compensator");
    CHECK(rep["simulation"]["paths"] == 500);
    CHECK(fs::file_size(out / "paths.csv") > 0);
    CHECK(load_json(out / "manifest.json")["files"].contains("paths.csv"));

    json bare = small_acceptance();
    bare.erase("simulate");
    bare["checks"] = json::array({"reflection"});
    CHECK(run("simulate", write_config("nosim", bare), scratch("nosim_out")).code == kExitConfig);
}

TEST_CASE("compare accepts a second config on the same chain only") {
    json base = small_acceptance();
    base.erase("compare");
    json shifted = base;
    shifted["problem"]["terminal"]["intercept"] = 2.0;
    const fs::path p = write_config("cmp_base", base), q = write_config("cmp_other", shifted);

    const fs::path cmp_out = scratch("cmp_out");
    RunOptions o;
    o.config = p.string();
    o.out = cmp_out.string();
    o.other = q.string();
    std::ostringstream out, err;
    CHECK_MESSAGE(run_command("compare", o, out, err) == kExitOk, err.str());
    const json rep = load_json(cmp_out / "report.json");
    CHECK(rep["verdicts"][1]["name"] == "comparison");
    CHECK(rep["verdicts"][1]["status"] == "PASS");

    json foreign = shifted;
    foreign["chain"]["nodes"] = 61;
    o.other = write_config("cmp_foreign", foreign).string();
    o.out = scratch("cmp_foreign_out").string();
    CHECK(run_command("compare", o, out, err) == kExitConfig);

    o.other.reset();
    CHECK(run_command("compare", o, out, err) == kExitConfig);
}

TEST_CASE("a failing check gives exit code 1") {
    json j = small_acceptance();
    j["apriori"]["terminal_shifts"] = json::array({0.125, 0.25, 0.5, 1.0});
    j["checks"] = json::array({"reflection", "apriori"});
    const fs::path out = scratch("fail_out");
    const Outcome r = run("check", write_config("fail", j), out);
    CHECK(r.code == kExitFail);
    const json rep = load_json(out / "report.json");
    CHECK(rep["overall"] == "FAIL");
    for (const json& v : rep["verdicts"])
        if (v["name"] == "apriori_trend") {
            CHECK(v["status"] == "FAIL");
            // the largest increase, between the two biggest shifts
            CHECK(v["witness"] == "entries 3 -> 4");
        }
    CHECK(report(out).code == kExitFail);
}

TEST_CASE("report verifies the run directory") {
    const fs::path out = scratch("rep");
    REQUIRE(run("solve", kConfigs / "trivial_constant.json", out).code == kExitOk);

    const Outcome fresh = report(out);
    CHECK(fresh.code == kExitOk);
    CHECK(fresh.out.find("integrity: ok") != std::string::npos);
    CHECK(fresh.out.rfind(slurp(out / "summary.txt"), 0) == 0);

    SUBCASE("tampered solution") {
        std::string csv = slurp(out / "solution.csv");
        csv[csv.find(",5,")] = ';';
        spit(out / "solution.csv", csv);
        const Outcome r = report(out);
        CHECK(r.code == kExitFail);
        CHECK(r.out.find("solution.csv: checksum mismatch") != std::string::npos);
    }
    SUBCASE("mixed versions") {
        json m = load_json(out / "manifest.json");
        m["code_version"] = "0.0.1";
        spit(out / "manifest.json", m.dump(2));
        const Outcome r = report(out);
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("mixed versions") != std::string::npos);
    }
    SUBCASE("stale report layout") {
        json rep = load_json(out / "report.json");
        rep["report_version"] = kReportVersion + 1;
        spit(out / "report.json", rep.dump(2));
        CHECK(report(out).code == kExitConfig);
    }
    SUBCASE("missing manifest") {
        fs::remove(out / "manifest.json");
        CHECK(report(out).code == kExitConfig);
    }
}

TEST_CASE("the executable maps outcomes to exit codes") {
    const std::string trivial = (kConfigs / "trivial_constant.json").string();
    const fs::path ok = scratch("exe_ok");
    CHECK(run_exe("solve --config " + trivial + " --out " + ok.string()) == 0);
    CHECK(run_exe("report " + ok.string()) == 0);
    CHECK(run_exe("solve --config " + (kConfigs / "bad_obstacles.json").string() + " --out " +
                  scratch("exe_bad").string()) == 2);
    CHECK(run_exe("solve") == 2);
    CHECK(run_exe("frobnicate --config " + trivial) == 2);
    CHECK(run_exe("solve --config " + trivial + " --threads 0") == 2);
    CHECK(run_exe("--version") == 0);
}
