#include "cli/config.hpp"

#include "rbsde/errors.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace rbsde::cli {

namespace {

ClampedAffine read_affine(const Node& n, bool allow_cap) {
    if (allow_cap)
        n.expect_keys({"intercept", "slope", "floor", "cap"});
    else
        n.expect_keys({"intercept", "slope", "floor"});
    ClampedAffine c;
    c.intercept = n.number_or("intercept", 0.0);
    c.slope = n.number_or("slope", 0.0);
    c.floor = n.optional_number("floor");
    if (allow_cap) c.cap = n.optional_number("cap");
    if (c.floor && c.cap && *c.floor > *c.cap) n.fail("floor exceeds cap");
    return c;
}

ParametricModel read_model(const Node& n) {
    n.expect_keys({"horizon", "regimes", "jump_atoms", "switching"});
    ParametricModel p;
    p.dim = 1;
    p.horizon = n.at("horizon").number();
    if (!(p.horizon > 0.0)) n.at("horizon").fail("horizon must be positive");
    if (auto atoms = n.find("jump_atoms"))
        for (const Node& a : atoms->items()) {
            a.expect_keys({"size", "mass"});
            const double mass = a.at("mass").number();
            if (!(mass > 0.0)) a.at("mass").fail("atom mass must be positive");
            p.jump_atoms.push_back({{a.at("size").number()}, mass});
        }
    const auto regimes = n.at("regimes").items();
    if (regimes.empty()) n.at("regimes").fail("at least one regime is required");
    for (const Node& r : regimes) {
        r.expect_keys({"drift", "dispersion", "intensity"});
        ParametricRegime reg;
        auto affine = [](const Node& c) {
            c.expect_keys({"constant", "linear"});
            return AffineCoefficient{{c.number_or("constant", 0.0)}, {c.number_or("linear", 0.0)}};
        };
        reg.drift = affine(r.at("drift"));
        reg.dispersion = affine(r.at("dispersion"));
        if (auto f = r.find("intensity")) {
            reg.intensity = f->numbers();
            for (double v : reg.intensity)
                if (v < 0.0) f->fail("jump intensities must be nonnegative");
        }
        if (reg.intensity.size() != p.jump_atoms.size()) {
            if (reg.intensity.empty() && !p.jump_atoms.empty())
                r.fail("\"intensity\" needs one entry per jump atom");
            else if (!reg.intensity.empty())
                r.at("intensity").fail("expected " + std::to_string(p.jump_atoms.size()) + " entries, one per jump atom");
        }
        p.regimes.push_back(reg);
    }
    const std::size_t k = p.regimes.size();
    if (auto sw = n.find("switching")) {
        const auto rows = sw->items();
        if (rows.size() != k) sw->fail("switching matrix needs " + std::to_string(k) + " rows");
        for (std::size_t i = 0; i < k; ++i) {
            p.switching.push_back(rows[i].numbers());
            if (p.switching[i].size() != k) rows[i].fail("switching row needs " + std::to_string(k) + " entries");
            for (std::size_t j = 0; j < k; ++j)
                if (j != i && p.switching[i][j] < 0.0)
                    rows[i].items()[j].fail("off-diagonal switching intensities must be nonnegative");
        }
    } else {
        p.switching.assign(k, Vector(k, 0.0));
    }
    return p;
}

TauSpec read_tau(const Node& n, std::size_t regimes) {
    n.expect_keys({"type", "time", "x_min", "x_max", "regimes"});
    const Node type = n.at("type");
    const std::string t = type.string();
    if (t == "none") return TauSpec::none();
    if (t == "time") return TauSpec::at(n.at("time").number());
    if (t == "hitting") {
        Region r;
        r.x_min = n.optional_number("x_min");
        r.x_max = n.optional_number("x_max");
        if (!r.x_min && !r.x_max) n.fail("a hitting region needs x_min or x_max");
        if (auto regs = n.find("regimes"))
            for (const Node& i : regs->items()) {
                const auto v = i.unsigned_integer();
                if (v < 1 || v > regimes) i.fail("regime labels run from 1 to " + std::to_string(regimes));
                r.regimes.push_back(static_cast<int>(v) - 1);
            }
        return TauSpec::hitting(r);
    }
    type.fail("unknown tau type \"" + t + "\" (expected none, time or hitting)");
}

ProblemConfig read_problem(const Node& n, std::size_t regimes, std::size_t atoms) {
    n.expect_keys({"kind", "start", "driver", "terminal", "lower", "upper", "tau", "implicit"});
    ProblemConfig p;
    const Node kind = n.at("kind");
    try {
        p.kind = parse_problem_kind(kind.string());
    } catch (const ConfigError& e) {
        kind.fail(e.what());
    }
    const Node start = n.at("start");
    start.expect_keys({"x", "regime"});
    p.start_x = start.at("x").number();
    const auto reg = start.find("regime") ? start.at("regime").unsigned_integer() : 1;
    if (reg < 1 || reg > regimes) start.at("regime").fail("regime labels run from 1 to " + std::to_string(regimes));
    p.start_regime = static_cast<int>(reg) - 1;

    if (auto d = n.find("driver")) {
        d->expect_keys({"constant", "u_self", "u", "z", "r"});
        p.driver.constant = d->number_or("constant", 0.0);
        p.driver.u_self = d->number_or("u_self", 0.0);
        if (auto u = d->find("u")) {
            p.driver.u = u->numbers();
            if (p.driver.u.size() != regimes) u->fail("expected one coefficient per regime");
        }
        p.driver.z = d->number_or("z", 0.0);
        p.driver.r = d->number_or("r", 0.0);
        if (p.driver.r != 0.0 && atoms == 0) d->at("r").fail("r coefficient given but the model has no jump atoms");
    }
    p.terminal = read_affine(n.at("terminal"), true);
    if (auto l = n.find("lower")) p.lower = read_affine(*l, false);
    if (auto u = n.find("upper")) p.upper = read_affine(*u, true);
    if (auto t = n.find("tau")) p.tau = read_tau(*t, regimes);
    if (auto i = n.find("implicit")) p.implicit = i->boolean();

    const bool needs_lower = p.kind != ProblemKind::BSDE;
    const bool needs_upper = p.kind == ProblemKind::R2BSDE || p.kind == ProblemKind::TauR2BSDE;
    if (needs_lower && !p.lower) n.fail(to_string(p.kind) + " needs a \"lower\" barrier");
    if (needs_upper && !p.upper) n.fail(to_string(p.kind) + " needs an \"upper\" barrier");
    if (!needs_lower && p.lower) n.at("lower").fail("a BSDE takes no barriers");
    if (!needs_upper && p.upper) n.at("upper").fail(to_string(p.kind) + " takes no upper barrier");
    const bool tau_kind = p.kind == ProblemKind::RBSDE_RandomTerminal || p.kind == ProblemKind::TauR2BSDE;
    if (!tau_kind && p.tau.type != TauSpec::Type::None) n.at("tau").fail("only random-terminal kinds take a stopping time");
    return p;
}

std::size_t positive(const Node& n) {
    const auto v = n.unsigned_integer();
    if (v == 0) n.fail("must be positive");
    return static_cast<std::size_t>(v);
}

}  // namespace

RunConfig parse_config(const std::string& name, const std::string& text) {
    auto src = std::make_shared<JsonSource>(name, text);
    const Node root(*src, src->root(), "");
    root.expect_keys({"seed", "threads", "model", "chain", "problem", "simulate", "compare", "apriori", "checks", "output"});

    RunConfig c;
    c.path = name;
    c.text = text;
    c.source = src;
    c.seed = root.at("seed").unsigned_integer();
    if (auto t = root.find("threads")) c.threads = static_cast<unsigned>(positive(*t));

    const Node model = root.at("model");
    c.model = read_model(model);
    try {
        (void)make_parametric_model(c.model);
    } catch (const Error& e) {
        model.fail(e.what());
    }

    const Node chain = root.at("chain");
    chain.expect_keys({"steps", "lower", "upper", "nodes", "max_stride"});
    c.steps = positive(chain.at("steps"));
    c.grid.lower = chain.at("lower").number();
    c.grid.upper = chain.at("upper").number();
    c.grid.nodes = positive(chain.at("nodes"));
    if (!(c.grid.upper > c.grid.lower)) chain.at("upper").fail("upper bound must exceed lower bound");
    if (c.grid.nodes < 2) chain.at("nodes").fail("at least two nodes are required");
    if (auto s = chain.find("max_stride")) c.max_stride = static_cast<std::size_t>(s->unsigned_integer());

    c.problem = read_problem(root.at("problem"), c.model.regimes.size(), c.model.jump_atoms.size());

    if (auto s = root.find("simulate")) {
        s->expect_keys({"paths", "steps", "csv_paths", "jump_drift"});
        SimulateConfig sim;
        if (auto v = s->find("paths")) sim.paths = positive(*v);
        if (auto v = s->find("steps")) sim.steps = positive(*v);
        if (auto v = s->find("csv_paths")) sim.csv_paths = static_cast<std::size_t>(v->unsigned_integer());
        if (auto v = s->find("jump_drift")) {
            const std::string mode = v->string();
            if (mode == "compensated")
                sim.jump_drift = JumpDrift::Compensated;
            else if (mode == "raw")
                sim.jump_drift = JumpDrift::Raw;
            else
                v->fail("expected \"compensated\" or \"raw\"");
        }
        c.simulate = sim;
    }
    if (auto s = root.find("compare")) {
        s->expect_keys({"terminal_shift", "lower_shift", "upper_shift", "driver_shift", "counterexample"});
        CompareConfig cmp;
        cmp.terminal_shift = s->number_or("terminal_shift", 0.0);
        cmp.lower_shift = s->number_or("lower_shift", 0.0);
        cmp.upper_shift = s->number_or("upper_shift", 0.0);
        cmp.driver_shift = s->number_or("driver_shift", 0.0);
        if (auto v = s->find("counterexample")) cmp.counterexample = v->boolean();
        c.compare = cmp;
    }
    if (auto a = root.find("apriori")) {
        a->expect_keys({"terminal_shifts"});
        c.apriori_shifts = a->at("terminal_shifts").numbers();
        if (c.apriori_shifts.empty()) a->at("terminal_shifts").fail("at least one shift is required");
    }
    if (auto checks = root.find("checks"))
        for (const Node& n : checks->items()) {
            const std::string name = n.string();
            const auto& known = known_checks();
            if (std::find(known.begin(), known.end(), name) == known.end()) {
                std::string list;
                for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
                n.fail("unknown check \"" + name + "\" (known: " + list + ")");
            }
            if (name == "apriori" && c.apriori_shifts.empty()) n.fail("check \"apriori\" needs an \"apriori\" block");
            if (name == "compensator" && !c.simulate) n.fail("check \"compensator\" needs a \"simulate\" block");
            if (std::find(c.checks.begin(), c.checks.end(), name) != c.checks.end()) n.fail("check listed twice");
            c.checks.push_back(name);
        }
    if (auto o = root.find("output")) {
        o->expect_keys({"directory"});
        if (auto d = o->find("directory")) c.out_dir = d->string();
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigFileError(path, 0, "cannot read configuration file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(path, buf.str());
}

bool same_chain(const RunConfig& a, const RunConfig& b) {
    return a.source->root().at("model") == b.source->root().at("model") &&
           a.source->root().at("chain") == b.source->root().at("chain");
}

BuiltCosts build_costs(const ProblemConfig& p, const ModelSpec& model) {
    BuiltCosts out;
    out.cost.g_tilde = p.driver.function();
    out.cost.lipschitz = p.driver.lipschitz();
    out.cost.monotone_in_r = p.driver.r >= 0.0;
    out.cost.psi = p.terminal.terminal();
    if (p.lower) {
        const ClampedAffine line{p.lower->intercept, p.lower->slope, std::nullopt, std::nullopt};
        const PhiBarrier b = lower_barrier_from_phi(line.phi(), p.lower->floor, model);
        out.cost.ell = b.ell;
        out.alpha = b.alpha;
    }
    if (p.upper) out.cost.h = p.upper->barrier();
    return out;
}

}  // namespace rbsde::cli
