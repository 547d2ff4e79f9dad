#include "cli/commands.hpp"

#include "cli/config.hpp"
#include "cli/digest.hpp"

#include "rbsde/analysis.hpp"
#include "rbsde/errors.hpp"
#include "rbsde/pathsim.hpp"
#include "rbsde/solver.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#ifndef RBSDE_VERSION
#define RBSDE_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace rbsde::cli {

const char* code_version() { return RBSDE_VERSION; }

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json to_json(const Verdict& v) {
    return {{"name", v.name},
            {"status", std::string(to_string(v.status))},
            {"worst_margin", finite_or_null(v.worst_margin)},
            {"witness", v.witness},
            {"detail", v.detail}};
}

json to_json(const SupNorm& n) {
    return {{"value", n.value}, {"lower", n.lower}, {"upper", n.upper}, {"exact", n.exact}};
}

json to_json(const NormReport& r) {
    return {{"s2_Y", to_json(r.s2_Y)},   {"h2_Z", r.h2_Z},         {"hmu2_V", r.hmu2_V},
            {"s2_Kplus", r.s2_Kplus},    {"s2_Kminus", r.s2_Kminus}, {"xi2", r.xi2},
            {"g0_h2", r.g0_h2},          {"s2_L", to_json(r.s2_L)}, {"s2_U", to_json(r.s2_U)},
            {"alpha_h2", r.alpha_h2},    {"solution_size", r.solution_size()},
            {"data_size", r.data_size()}};
}

json to_json(const DifferenceNorms& d) {
    return {{"s2_Y", to_json(d.s2_Y)}, {"h2_Z", d.h2_Z},       {"hmu2_V", d.hmu2_V},
            {"kplus", d.kplus},        {"kminus", d.kminus},   {"xi2", d.xi2},
            {"g_h2", d.g_h2},          {"s2_L", to_json(d.s2_L)}, {"s2_U", to_json(d.s2_U)},
            {"solution", d.solution()}, {"rhs_squared", d.rhs_squared()},
            {"common_barrier_ratio", finite_or_null(d.common_barrier_ratio())}};
}

void append_number(std::string& line, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    line.append(buf, res.ptr);
}

std::string solution_csv(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol) {
    const std::size_t M = chain.steps(), S = chain.states();
    std::string out = "m,t,x,regime,Y,Z,Kplus,Kminus,contact_flag\n";
    out.reserve(out.size() + (M + 1) * S * 64);
    for (std::size_t m = 0; m <= M; ++m)
        for (std::size_t s = 0; s < S; ++s) {
            const double y = sol.y(m, s);
            const bool interior = m < M;
            int flag = 0;
            if (data.lower_active(m, s) && y == data.L(m, s)) flag |= 1;
            if (data.upper_active(m, s) && y == data.U(m, s)) flag |= 2;
            out += std::to_string(m);
            out += ',';
            append_number(out, chain.time(m));
            out += ',';
            append_number(out, chain.x(s));
            out += ',';
            out += std::to_string(chain.regime(s) + 1);
            out += ',';
            append_number(out, y);
            out += ',';
            append_number(out, interior ? sol.z(m, s) : 0.0);
            out += ',';
            append_number(out, interior ? sol.kplus(m, s) : 0.0);
            out += ',';
            append_number(out, interior ? sol.kminus(m, s) : 0.0);
            out += ',';
            out += std::to_string(flag);
            out += '\n';
        }
    return out;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << content;
    if (!f) throw ConfigError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

CostFunctions shifted(const CostFunctions& base, const CompareConfig& c) {
    CostFunctions out = base;
    out.psi = [f = base.psi, d = c.terminal_shift](std::span<const double> x, int i) { return f(x, i) + d; };
    if (base.ell) out.ell = [f = base.ell, d = c.lower_shift](double t, std::span<const double> x, int i) { return f(t, x, i) + d; };
    if (base.h) out.h = [f = base.h, d = c.upper_shift](double t, std::span<const double> x, int i) { return f(t, x, i) + d; };
    out.g_tilde = [f = base.g_tilde, d = c.driver_shift](double t, std::span<const double> x, int i,
                                                          std::span<const double> u, std::span<const double> z,
                                                          double r) { return f(t, x, i, u, z, r) + d; };
    return out;
}

/// Everything a run needs, built once from the config.
struct Workspace {
    RunConfig cfg;
    ModelSpec model;
    std::optional<ChainApprox> chain;
    BuiltCosts costs;
    ProblemData data;
    SolutionQuadruple sol;
    std::size_t start = 0;
};

SolveOptions solve_options(const RunConfig& cfg) {
    SolveOptions o;
    o.threads = cfg.threads;
    o.implicit = cfg.problem.implicit;
    return o;
}

ProblemData assemble_anchored(const RunConfig& cfg, ProblemKind kind, const CostFunctions& cost,
                              const ChainApprox& chain, const CostFunctions::BarrierFn& alpha) {
    try {
        return assemble(kind, cost, chain, cfg.problem.tau, alpha);
    } catch (const DataError& e) {
        cfg.source->fail(cfg.problem.lower ? "/problem/lower" : "/problem/terminal", e.what());
    } catch (const ConfigError& e) {
        cfg.source->fail("/problem", e.what());
    }
}

void build_problem(Workspace& w, json& timings) {
    auto t0 = Clock::now();
    ChainOptions co;
    co.threads = w.cfg.threads;
    co.max_stride = w.cfg.max_stride;
    try {
        w.chain.emplace(build_chain(w.model, w.cfg.steps, w.cfg.grid, co));
    } catch (const ConfigError& e) {
        w.cfg.source->fail("/chain", e.what());
    }
    timings["chain"] = ms_since(t0);
    w.costs = build_costs(w.cfg.problem, w.model);
    w.data = assemble_anchored(w.cfg, w.cfg.problem.kind, w.costs.cost, *w.chain, w.costs.alpha);
    w.start = w.chain->nearest_state(w.cfg.problem.start_x, w.cfg.problem.start_regime);
    t0 = Clock::now();
    try {
        w.sol = solve(*w.chain, w.data, solve_options(w.cfg));
    } catch (const PreconditionError& e) {
        w.cfg.source->fail("/chain/steps", e.what());
    }
    timings["solve"] = ms_since(t0);
}

json chain_block(const ChainApprox& chain) {
    const ConsistencyReport& c = chain.consistency();
    return {{"steps", chain.steps()},
            {"nodes", chain.nodes()},
            {"regimes", chain.regimes()},
            {"dt", chain.dt()},
            {"h", chain.h()},
            {"monotone", c.monotone},
            {"max_stride", c.max_stride},
            {"upwind_states", c.upwind_states},
            {"reflected_states", c.reflected_states},
            {"max_drift_residual", c.max_drift_residual},
            {"max_variance_residual", c.max_variance_residual},
            {"max_row_sum_error", c.max_row_sum_error}};
}

Verdict norms_verdict(const NormReport& r) {
    Verdict v;
    v.name = "norms";
    const bool finite = std::isfinite(r.solution_size()) && std::isfinite(r.data_size());
    v.status = finite ? Status::Pass : Status::Fail;
    v.worst_margin = std::numeric_limits<double>::infinity();
    std::ostringstream o;
    o << std::setprecision(6) << "solution size " << r.solution_size() << ", data size " << r.data_size()
      << (r.s2_Y.exact ? ", sup norm exact" : ", sup norm bracketed");
    v.detail = o.str();
    return v;
}

Verdict compensator_verdict(const CompensatorReport& rep) {
    Verdict v;
    v.name = "compensator";
    v.status = rep.status;
    v.worst_margin = std::numeric_limits<double>::infinity();
    for (const auto& m : rep.marks) {
        const double margin = rep.threshold - std::abs(m.z);
        if (margin < v.worst_margin) {
            v.worst_margin = margin;
            v.witness = m.label;
        }
    }
    std::ostringstream o;
    o << rep.marks.size() << " mark sets";
    for (const auto& w : rep.warnings) o << "; " << w;
    v.detail = o.str();
    return v;
}

json compensator_table(const CompensatorReport& rep) {
    json marks = json::array();
    for (const auto& m : rep.marks)
        marks.push_back({{"label", m.label},
                         {"mean_count", m.mean_count},
                         {"mean_compensator", m.mean_compensator},
                         {"std_error", m.std_error},
                         {"z", m.z}});
    return marks;
}

CompensatorReport simulate_and_check(const RunConfig& cfg, const ModelSpec& model, PathBundle* keep) {
    const SimulateConfig& s = *cfg.simulate;
    SimulationOptions so;
    so.threads = cfg.threads;
    so.jump_drift = s.jump_drift;
    const Vector grid = uniform_grid(0.0, cfg.model.horizon, s.steps);
    PathBundle b = simulate_paths(model, {{cfg.problem.start_x}, cfg.problem.start_regime}, grid, s.paths, cfg.seed, so);
    CompensatorReport rep = compensator_check(b, model);
    if (keep) *keep = std::move(b);
    return rep;
}

Verdict probes_verdict(const RunConfig& cfg, const CostFunctions& cost, const ChainApprox& chain) {
    Verdict v;
    v.name = "probes";
    const ProbeReport lip = lipschitz_probe(cost, chain, 10000, cfg.seed);
    v.worst_margin = 1.0 - lip.worst_ratio;
    v.witness = lip.witness;
    std::ostringstream o;
    o << std::setprecision(6) << "Lipschitz ratio " << lip.worst_ratio;
    bool ok = lip.ok;
    if (cost.monotone_in_r) {
        const ProbeReport mono = monotone_probe(cost, chain, 10000, cfg.seed + 1);
        o << ", monotonicity defect " << mono.worst_ratio;
        if (!mono.ok) {
            ok = false;
            if (v.witness.empty()) v.witness = mono.witness;
        }
    }
    v.status = ok ? Status::Pass : Status::Fail;
    v.detail = o.str();
    return v;
}

struct Comparison {
    Verdict verdict;
    DifferenceNorms norms;
};

Comparison run_comparison(Workspace& w, const RunOptions& opts) {
    CostFunctions cost;
    CostFunctions::BarrierFn alpha = w.costs.alpha;
    bool counterexample = false;
    ProblemKind kind = w.cfg.problem.kind;
    if (opts.other) {
        const RunConfig other = load_config(*opts.other);
        if (!same_chain(w.cfg, other)) other.source->fail("/model", "model and chain must match " + w.cfg.path);
        if (other.problem.kind != kind) other.source->fail("/problem/kind", "problem kind must match " + w.cfg.path);
        const BuiltCosts b = build_costs(other.problem, w.model);
        cost = b.cost;
        alpha = b.alpha;
        counterexample = other.compare && other.compare->counterexample;
    } else if (w.cfg.compare) {
        cost = shifted(w.costs.cost, *w.cfg.compare);
        counterexample = w.cfg.compare->counterexample;
    } else {
        w.cfg.source->fail("", "comparison needs a \"compare\" block or --other");
    }
    const ProblemData dp = assemble_anchored(w.cfg, kind, cost, *w.chain, alpha);
    const SolutionQuadruple sp = solve(*w.chain, dp, solve_options(w.cfg));
    ComparisonOptions co;
    co.counterexample = counterexample || !w.costs.cost.monotone_in_r;
    Comparison c;
    c.verdict = comparison_check(*w.chain, w.data, w.sol, dp, sp, co);
    NormOptions no;
    no.threads = w.cfg.threads;
    c.norms = difference_norms(*w.chain, w.data, w.sol, dp, sp, w.start, no);
    return c;
}

json apriori_block(Workspace& w, std::vector<Verdict>& verdicts) {
    std::vector<ProblemData> data{w.data};
    std::vector<SolutionQuadruple> sols{w.sol};
    for (double shift : w.cfg.apriori_shifts) {
        CompareConfig c;
        c.terminal_shift = shift;
        data.push_back(assemble_anchored(w.cfg, w.cfg.problem.kind, shifted(w.costs.cost, c), *w.chain, w.costs.alpha));
        sols.push_back(solve(*w.chain, data.back(), solve_options(w.cfg)));
    }
    NormOptions no;
    no.threads = w.cfg.threads;
    const AprioriReport rep = apriori_report(*w.chain, data, sols, 0, w.start, no);
    verdicts.push_back(rep.bounded);
    verdicts.push_back(rep.trend);
    verdicts.push_back(rep.common_barrier);
    json entries = json::array();
    for (std::size_t n = 0; n < data.size(); ++n)
        entries.push_back({{"index", n},
                           {"terminal_shift", n == 0 ? 0.0 : w.cfg.apriori_shifts[n - 1]},
                           {"solution_size", rep.norms[n].solution_size()},
                           {"data_size", rep.norms[n].data_size()},
                           {"difference", rep.differences[n].solution()},
                           {"difference_rhs", rep.differences[n].rhs_squared()},
                           {"common_barrier_ratio", finite_or_null(rep.differences[n].common_barrier_ratio())}});
    return {{"reference", 0}, {"max_size_ratio", rep.max_size_ratio}, {"entries", entries}};
}

std::string overall_status(const std::vector<Verdict>& verdicts) {
    for (const Verdict& v : verdicts)
        if (v.status != Status::Pass && v.status != Status::NotApplicable) return "FAIL";
    return "PASS";
}

int execute(const std::string& command, const RunOptions& opts, std::ostream& out) {
    const auto t_total = Clock::now();
    Workspace w;
    w.cfg = load_config(opts.config);
    if (opts.seed) w.cfg.seed = *opts.seed;
    if (opts.threads) w.cfg.threads = std::max(1u, *opts.threads);
    const fs::path dir = opts.out ? fs::path(*opts.out) : fs::path(w.cfg.out_dir);
    w.model = make_parametric_model(w.cfg.model);

    json report;
    report["report_version"] = kReportVersion;
    report["code_version"] = code_version();
    report["command"] = command;
    report["seed"] = w.cfg.seed;
    json timings;
    std::vector<Verdict> verdicts;
    std::vector<std::pair<std::string, std::string>> files;

    if (command == "simulate") {
        if (!w.cfg.simulate) w.cfg.source->fail("", "simulate needs a \"simulate\" block");
        auto t0 = Clock::now();
        PathBundle bundle;
        const CompensatorReport rep = simulate_and_check(w.cfg, w.model, &bundle);
        timings["simulate"] = ms_since(t0);
        verdicts.push_back(compensator_verdict(rep));
        report["simulation"] = {{"paths", bundle.n_paths},
                                {"steps", bundle.steps()},
                                {"sup_x2", moment_report(bundle, 2.0)},
                                {"thinning",
                                 {{"jump_candidates", bundle.thinning.jump_candidates},
                                  {"jump_accepted", bundle.thinning.jump_accepted},
                                  {"switch_candidates", bundle.thinning.switch_candidates},
                                  {"switch_accepted", bundle.thinning.switch_accepted}}},
                                {"compensator", compensator_table(rep)}};
        std::ostringstream csv;
        csv.precision(17);
        write_paths_csv(bundle, csv, w.cfg.simulate->csv_paths);
        files.emplace_back("paths.csv", csv.str());
    } else {
        build_problem(w, timings);
        const ChainApprox& chain = *w.chain;
        report["problem"] = {{"kind", to_string(w.cfg.problem.kind)},
                             {"start", {{"x", chain.x(w.start)}, {"regime", chain.regime(w.start) + 1}}},
                             {"y0", w.sol.y(0, w.start)},
                             {"contact_nodes", w.sol.diagnostics.contact_nodes},
                             {"implicit", w.cfg.problem.implicit}};
        report["chain"] = chain_block(chain);
        verdicts.push_back(reflection_check(chain, w.data, w.sol));

        auto t0 = Clock::now();
        if (command == "check") {
            for (const std::string& name : w.cfg.checks) {
                if (name == "reflection") continue;
                if (name == "kplus_density") {
                    verdicts.push_back(kplus_density_check(chain, w.data, w.sol));
                } else if (name == "norms") {
                    NormOptions no;
                    no.threads = w.cfg.threads;
                    const NormReport r = norms(chain, w.data, w.sol, w.start, no);
                    report["norms"] = to_json(r);
                    verdicts.push_back(norms_verdict(r));
                } else if (name == "comparison") {
                    const Comparison c = run_comparison(w, opts);
                    verdicts.push_back(c.verdict);
                    report["comparison"] = to_json(c.norms);
                } else if (name == "apriori") {
                    report["apriori"] = apriori_block(w, verdicts);
                } else if (name == "compensator") {
                    const CompensatorReport rep = simulate_and_check(w.cfg, w.model, nullptr);
                    verdicts.push_back(compensator_verdict(rep));
                    report["compensator"] = compensator_table(rep);
                } else if (name == "probes") {
                    verdicts.push_back(probes_verdict(w.cfg, w.costs.cost, chain));
                }
            }
        } else if (command == "compare") {
            const Comparison c = run_comparison(w, opts);
            verdicts.push_back(c.verdict);
            report["comparison"] = to_json(c.norms);
        }
        timings["checks"] = ms_since(t0);
        files.emplace_back("solution.csv", solution_csv(chain, w.data, w.sol));
    }

    json vj = json::array();
    for (const Verdict& v : verdicts) vj.push_back(to_json(v));
    report["verdicts"] = vj;
    report["overall"] = overall_status(verdicts);
    const std::string summary = render_summary(report);

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) w.cfg.source->fail("/output", "cannot create output directory " + dir.string() + ": " + ec.message());
    files.emplace_back("config.json", w.cfg.text);
    files.emplace_back("report.json", report.dump(2) + "\n");
    files.emplace_back("summary.txt", summary);

    json manifest;
    manifest["manifest_version"] = kManifestVersion;
    manifest["code_version"] = code_version();
    manifest["report_version"] = kReportVersion;
    manifest["command"] = command;
    manifest["config_sha256"] = sha256_hex(w.cfg.text);
    manifest["seed"] = w.cfg.seed;
    manifest["run_hash"] =
        sha256_hex(manifest["config_sha256"].get<std::string>() + "\n" + code_version() + "\n" + command + "\n" +
                   std::to_string(w.cfg.seed));
    json fj = json::object();
    for (const auto& [name, content] : files) {
        write_file(dir / name, content);
        fj[name] = sha256_hex(content);
    }
    manifest["files"] = fj;
    timings["total"] = ms_since(t_total);
    manifest["timings_ms"] = timings;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    out << summary;
    return report["overall"] == "PASS" ? kExitOk : kExitFail;
}

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

std::string fmt(const json& v) {
    if (v.is_null()) return "-";
    if (!v.is_number()) return v.dump();
    std::ostringstream o;
    o << std::setprecision(6) << v.get<double>();
    return o.str();
}

}  // namespace

std::string render_summary(const json& r) {
    std::ostringstream o;
    o << "rbsde " << r.value("code_version", "?") << "  command: " << r.value("command", "?")
      << "  report v" << r.value("report_version", 0) << "  seed " << r.value("seed", 0) << "\n";
    if (r.contains("problem")) {
        const json& p = r["problem"];
        o << "problem: " << p["kind"].get<std::string>() << " from x=" << fmt(p["start"]["x"]) << " regime "
          << p["start"]["regime"].get<int>() << ", Y0 = " << std::setprecision(12) << p["y0"].get<double>() << "\n";
    }
    if (r.contains("chain")) {
        const json& c = r["chain"];
        o << "chain: " << c["steps"].get<std::size_t>() << " steps x " << c["nodes"].get<std::size_t>() << " nodes x "
          << c["regimes"].get<std::size_t>() << " regimes, monotone " << (c["monotone"].get<bool>() ? "yes" : "no")
          << ", max stride " << c["max_stride"].get<std::size_t>() << "\n";
    }
    if (r.contains("simulation")) {
        const json& s = r["simulation"];
        o << "simulation: " << s["paths"].get<std::size_t>() << " paths, " << s["steps"].get<std::size_t>()
          << " steps, E[sup x^2] = " << fmt(s["sup_x2"]) << "\n";
    }
    o << "checks:\n";
    o << "  " << pad("name", 28) << pad("status", 16) << "worst margin\n";
    for (const json& v : r["verdicts"]) {
        o << "  " << pad(v["name"].get<std::string>(), 28) << pad(v["status"].get<std::string>(), 16)
          << fmt(v["worst_margin"]) << "\n";
        if (!v["detail"].get<std::string>().empty()) o << "      " << v["detail"].get<std::string>() << "\n";
        if (!v["witness"].get<std::string>().empty()) o << "      at " << v["witness"].get<std::string>() << "\n";
    }
    if (r.contains("norms")) {
        const json& n = r["norms"];
        o << "norms: |Y|S2 " << fmt(n["s2_Y"]["value"]) << ", |Z|H2 " << fmt(n["h2_Z"]) << ", |V|Hmu2 "
          << fmt(n["hmu2_V"]) << ", E[K+^2] " << fmt(n["s2_Kplus"]) << ", E[K-^2] " << fmt(n["s2_Kminus"]) << "\n";
    }
    if (r.contains("comparison")) {
        const json& d = r["comparison"];
        o << "difference norms: solution " << fmt(d["solution"]) << ", data " << fmt(d["rhs_squared"]) << "\n";
    }
    if (r.contains("apriori")) {
        o << "a priori table:\n  " << pad("n", 4) << pad("psi shift", 12) << pad("solution", 14) << pad("data", 14)
          << pad("difference", 14) << "ratio\n";
        for (const json& e : r["apriori"]["entries"])
            o << "  " << pad(std::to_string(e["index"].get<std::size_t>()), 4) << pad(fmt(e["terminal_shift"]), 12)
              << pad(fmt(e["solution_size"]), 14) << pad(fmt(e["data_size"]), 14) << pad(fmt(e["difference"]), 14)
              << fmt(e["common_barrier_ratio"]) << "\n";
    }
    o << "overall: " << r.value("overall", "?") << "\n";
    return o.str();
}

int run_command(const std::string& command, const RunOptions& options, std::ostream& out, std::ostream& err) {
    if (command != "simulate" && command != "solve" && command != "check" && command != "compare") {
        err << "rbsde: unknown command " << command << "\n";
        return kExitConfig;
    }
    try {
        return execute(command, options, out);
    } catch (const ConfigFileError& e) {
        err << "rbsde: " << e.what() << "\n";
    } catch (const Error& e) {
        err << "rbsde: " << options.config << ": " << e.what() << "\n";
    } catch (const std::exception& e) {
        err << "rbsde: " << e.what() << "\n";
    }
    return kExitConfig;
}

int report_command(const std::string& dir_name, std::ostream& out, std::ostream& err) {
    const fs::path dir(dir_name);
    if (!fs::exists(dir / "manifest.json")) {
        err << "rbsde: no manifest.json in " << dir_name << "\n";
        return kExitConfig;
    }
    json manifest, report;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
        report = json::parse(read_file(dir / "report.json"));
    } catch (const std::exception& e) {
        err << "rbsde: unreadable run directory " << dir_name << ": " << e.what() << "\n";
        return kExitConfig;
    }
    const std::string mv = manifest.value("code_version", "");
    const std::string rv = report.value("code_version", "");
    if (mv != code_version() || rv != mv || manifest.value("report_version", 0) != kReportVersion ||
        report.value("report_version", 0) != kReportVersion) {
        err << "rbsde: refusing mixed versions in " << dir_name << " (manifest " << mv << ", report " << rv
            << ", this build " << code_version() << ")\n";
        return kExitConfig;
    }
    bool tampered = false;
    std::ostringstream integrity;
    for (auto it = manifest["files"].begin(); it != manifest["files"].end(); ++it) {
        const std::string actual = sha256_file((dir / it.key()).string());
        if (actual.empty()) {
            integrity << "  " << it.key() << ": missing\n";
            tampered = true;
        } else if (actual != it.value().get<std::string>()) {
            integrity << "  " << it.key() << ": checksum mismatch\n";
            tampered = true;
        }
    }
    out << render_summary(report);
    out << "run hash " << manifest.value("run_hash", "?") << "\n";
    if (tampered)
        out << "integrity: FAILED\n" << integrity.str();
    else
        out << "integrity: ok (" << manifest["files"].size() << " files)\n";
    return tampered || report.value("overall", "FAIL") != "PASS" ? kExitFail : kExitOk;
}

}  // namespace rbsde::cli
