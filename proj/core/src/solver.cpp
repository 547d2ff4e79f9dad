#include "rbsde/solver.hpp"

#include "rbsde/errors.hpp"
#include "rbsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rbsde {

namespace {

enum class NodeMode : std::uint8_t { Normal, Frozen, Copy };

/// How one backward pass treats each node.
struct Pass {
    std::function<NodeMode(std::size_t m, std::size_t s)> mode;
    /// Y at Frozen nodes.
    std::function<double(std::size_t m, std::size_t s)> frozen_value;
    /// Source of Copy nodes.
    const SolutionQuadruple* source = nullptr;
    std::function<bool(std::size_t m, std::size_t s)> lower;
    std::function<bool(std::size_t m, std::size_t s)> upper;
};

SolutionQuadruple allocate(const ChainApprox& chain, ProblemKind kind) {
    SolutionQuadruple sol;
    sol.kind = kind;
    sol.steps = chain.steps();
    sol.states = chain.states();
    sol.atoms = chain.atoms();
    sol.regimes = chain.regimes();
    sol.dt = chain.dt();
    const std::size_t M = sol.steps, S = sol.states;
    sol.Y.assign((M + 1) * S, 0.0);
    sol.Z.assign(M * S, 0.0);
    sol.Z_perp.assign(M * S, 0.0);
    sol.Vtilde.assign(M * S * sol.atoms, 0.0);
    sol.Wtilde.assign(M * S * sol.regimes, 0.0);
    sol.dKplus.assign(M * S, 0.0);
    sol.dKminus.assign(M * S, 0.0);
    sol.cont.assign(M * S, 0.0);
    sol.G.assign(M * S, 0.0);
    sol.live.assign((M + 1) * S, 0);
    return sol;
}

void copy_node(const SolutionQuadruple& from, SolutionQuadruple& to, std::size_t m, std::size_t s) {
    const std::size_t S = to.states;
    const std::size_t n = m * S + s;
    to.Y[n] = from.Y[n];
    to.live[n] = from.live[n];
    if (m == to.steps) return;
    to.Z[n] = from.Z[n];
    to.Z_perp[n] = from.Z_perp[n];
    to.dKplus[n] = from.dKplus[n];
    to.dKminus[n] = from.dKminus[n];
    to.cont[n] = from.cont[n];
    to.G[n] = from.G[n];
    std::copy_n(from.Vtilde.begin() + static_cast<std::ptrdiff_t>(n * to.atoms), to.atoms,
                to.Vtilde.begin() + static_cast<std::ptrdiff_t>(n * to.atoms));
    std::copy_n(from.Wtilde.begin() + static_cast<std::ptrdiff_t>(n * to.regimes), to.regimes,
                to.Wtilde.begin() + static_cast<std::ptrdiff_t>(n * to.regimes));
}

void check_step_size(const ChainApprox& chain, const ProblemData& data) {
    if (data.steps != chain.steps() || data.states != chain.states())
        throw ConfigError("problem data was assembled on a different chain");
    if (chain.dt() * data.cost.lipschitz >= 1.0) {
        std::ostringstream msg;
        msg << "explicit step refused: dt*Lambda = " << chain.dt() * data.cost.lipschitz << " >= 1";
        throw PreconditionError(msg.str());
    }
}

SolutionQuadruple backward(const ChainApprox& chain, const ProblemData& data, const SolveOptions& options,
                           ProblemKind kind, const Pass& pass) {
    SolutionQuadruple sol = allocate(chain, kind);
    const std::size_t M = chain.steps(), S = chain.states(), A = chain.atoms(), k = chain.regimes();
    const double dt = chain.dt();
    const ModelSpec& model = chain.model();

    for (std::size_t s = 0; s < S; ++s) {
        const NodeMode mode = pass.mode(M, s);
        if (mode == NodeMode::Copy)
            copy_node(*pass.source, sol, M, s);
        else
            sol.Y[M * S + s] = mode == NodeMode::Frozen ? pass.frozen_value(M, s) : data.terminal[s];
    }

    std::vector<std::size_t> iterations(S, 0);
    for (std::size_t mm = M; mm-- > 0;) {
        const std::span<const double> next(sol.Y.data() + (mm + 1) * S, S);
        const MartingaleComponents comp = martingale_components(chain, mm, next);
        const double t = chain.time(mm);
        parallel_for(S, options.threads, [&](std::size_t s0, std::size_t s1) {
            for (std::size_t s = s0; s < s1; ++s) {
                const std::size_t n = mm * S + s;
                const NodeMode mode = pass.mode(mm, s);
                if (mode == NodeMode::Copy) {
                    copy_node(*pass.source, sol, mm, s);
                    continue;
                }
                if (mode == NodeMode::Frozen) {
                    sol.Y[n] = pass.frozen_value(mm, s);
                    continue;
                }
                const double xv[1] = {chain.x(s)};
                const int i = chain.regime(s);
                const double zv[1] = {comp.Z[s]};
                const std::span<const double> vt(comp.Vtilde.data() + s * A, A);
                const std::span<const double> wt(comp.Wtilde.data() + s * k, k);
                const double E = comp.expectation[s];
                double g = markov_driver(data.cost, model, t, xv, i, E, zv, vt, wt);
                double y_hat = E + dt * g;
                if (options.implicit) {
                    std::size_t it = 0;
                    for (; it < options.implicit_max_iterations; ++it) {
                        g = markov_driver(data.cost, model, t, xv, i, y_hat, zv, vt, wt);
                        const double next_y = E + dt * g;
                        const double change = std::abs(next_y - y_hat);
                        y_hat = next_y;
                        if (change <= options.implicit_tolerance * std::max(1.0, std::abs(y_hat))) break;
                    }
                    iterations[s] = std::max(iterations[s], it + 1);
                }
                double y = y_hat;
                double kp = 0.0, km = 0.0;
                if (pass.lower(mm, s) && y_hat < data.L(mm, s)) {
                    kp = data.L(mm, s) - y_hat;
                    y = data.L(mm, s);
                }
                if (pass.upper(mm, s) && y_hat > data.U(mm, s)) {
                    km = y_hat - data.U(mm, s);
                    y = data.U(mm, s);
                }
                sol.Y[n] = y;
                sol.Z[n] = comp.Z[s];
                sol.Z_perp[n] = comp.Z_perp[s];
                std::copy(vt.begin(), vt.end(), sol.Vtilde.begin() + static_cast<std::ptrdiff_t>(n * A));
                std::copy(wt.begin(), wt.end(), sol.Wtilde.begin() + static_cast<std::ptrdiff_t>(n * k));
                sol.dKplus[n] = kp;
                sol.dKminus[n] = km;
                sol.cont[n] = E;
                sol.G[n] = g;
                sol.live[n] = 1;
            }
        });
    }
    sol.diagnostics.implicit_iterations = *std::max_element(iterations.begin(), iterations.end());
    return sol;
}

Pass plain_pass(const ProblemData& data) {
    Pass p;
    p.mode = [](std::size_t, std::size_t) { return NodeMode::Normal; };
    p.lower = [&data](std::size_t m, std::size_t s) { return data.lower_active(m, s); };
    p.upper = [&data](std::size_t m, std::size_t s) { return data.upper_active(m, s); };
    return p;
}

ProblemData as_kind(const ProblemData& data, ProblemKind kind) {
    ProblemData d = data;
    d.kind = kind;
    return d;
}

std::string node_text(const ChainApprox& chain, std::size_t m, std::size_t s) {
    std::ostringstream o;
    o << "m=" << m << " t=" << chain.time(m) << " x=" << chain.x(s) << " regime=" << chain.regime(s) + 1;
    return o.str();
}

}  // namespace

SolutionQuadruple solve(const ChainApprox& chain, const ProblemData& data, const SolveOptions& options) {
    check_step_size(chain, data);
    SolutionQuadruple sol;
    switch (data.kind) {
    case ProblemKind::BSDE:
    case ProblemKind::RBSDE:
    case ProblemKind::R2BSDE:
        sol = backward(chain, data, options, data.kind, plain_pass(data));
        break;
    case ProblemKind::RBSDE_RandomTerminal: {
        Pass p = plain_pass(data);
        p.mode = [&data](std::size_t m, std::size_t s) {
            return data.tau.reached(m, s) ? NodeMode::Frozen : NodeMode::Normal;
        };
        p.frozen_value = [&data](std::size_t, std::size_t s) { return data.terminal[s]; };
        sol = backward(chain, data, options, data.kind, p);
        break;
    }
    case ProblemKind::TauR2BSDE: {
        if (data.tau.type == TauSpec::Type::Hitting) {
            // After τ the problem is the doubly reflected one; before τ only ℓ acts and
            // the continuation reads the post-τ values on entering the region.
            const ProblemData r2 = as_kind(data, ProblemKind::R2BSDE);
            auto post = std::make_shared<SolutionQuadruple>(backward(chain, r2, options, r2.kind, plain_pass(r2)));
            Pass p = plain_pass(data);
            p.mode = [&data](std::size_t, std::size_t s) {
                return data.tau.reached(0, s) ? NodeMode::Copy : NodeMode::Normal;
            };
            p.source = post.get();
            sol = backward(chain, data, options, data.kind, p);
            sol.after_tau = post;
        } else {
            sol = backward(chain, data, options, data.kind, plain_pass(data));
        }
        break;
    }
    }
    sol.diagnostics = [&] {
        auto d = check_invariants(chain, data, sol);
        d.implicit_iterations = sol.diagnostics.implicit_iterations;
        return d;
    }();
    return sol;
}

SolutionQuadruple paste_tau(const ChainApprox& chain, const ProblemData& data_r2, const TauSpec& tau,
                            const SolveOptions& options) {
    if (data_r2.kind != ProblemKind::R2BSDE) throw ConfigError("paste_tau needs R2BSDE data");
    if (tau.type == TauSpec::Type::None) throw ConfigError("paste_tau needs a stopping time");
    check_step_size(chain, data_r2);

    // Ŷ: the doubly reflected solution on [0, T].
    const SolutionQuadruple hat = backward(chain, data_r2, options, ProblemKind::R2BSDE, plain_pass(data_r2));

    // Ȳ: lower reflected on [0, τ] with terminal value Ŷ_τ.
    ProblemData bar_data = as_kind(data_r2, ProblemKind::RBSDE_RandomTerminal);
    bar_data.tau_spec = tau;
    bar_data.tau = resolve_tau(tau, chain);
    Pass p = plain_pass(bar_data);
    p.mode = [&bar_data](std::size_t m, std::size_t s) {
        return bar_data.tau.reached(m, s) ? NodeMode::Frozen : NodeMode::Normal;
    };
    p.frozen_value = [&hat](std::size_t m, std::size_t s) { return hat.y(m, s); };
    const SolutionQuadruple bar = backward(chain, bar_data, options, bar_data.kind, p);

    // Y = Ȳ 1{t<τ} + Ŷ 1{t≥τ}; K⁺ increments from K̄ before τ and from K̂ after,
    // K⁻ increments from K̂ after τ; Z, V glued the same way.
    SolutionQuadruple out = allocate(chain, ProblemKind::TauR2BSDE);
    for (std::size_t m = 0; m <= chain.steps(); ++m)
        for (std::size_t s = 0; s < chain.states(); ++s)
            copy_node(bar_data.tau.reached(m, s) ? hat : bar, out, m, s);
    if (tau.type == TauSpec::Type::Hitting) out.after_tau = std::make_shared<SolutionQuadruple>(hat);

    ProblemData tau_data = as_kind(data_r2, ProblemKind::TauR2BSDE);
    tau_data.tau_spec = tau;
    tau_data.tau = bar_data.tau;
    out.diagnostics = check_invariants(chain, tau_data, out);
    return out;
}

SolutionDiagnostics check_invariants(const ChainApprox& chain, const ProblemData& data,
                                     const SolutionQuadruple& sol) {
    SolutionDiagnostics d;
    const std::size_t M = sol.steps, S = sol.states;
    const double dt = sol.dt;
    for (std::size_t m = 0; m <= M; ++m)
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t n = m * S + s;
            const double y = sol.Y[n];
            const bool low = data.lower_active(m, s);
            const bool up = data.upper_active(m, s);
            if (m == M || sol.live[n]) {
                if (low) d.max_constraint_violation = std::max(d.max_constraint_violation, data.L(m, s) - y);
                if (up) d.max_constraint_violation = std::max(d.max_constraint_violation, y - data.U(m, s));
            }
            if (m == M || !sol.live[n]) continue;
            const double kp = sol.dKplus[n], km = sol.dKminus[n];
            d.max_negative_increment = std::max({d.max_negative_increment, -kp, -km});
            d.max_singularity = std::max(d.max_singularity, std::min(kp, km));
            if (kp > 0.0) {
                ++d.contact_nodes;
                d.minimality_residual =
                    std::max(d.minimality_residual, low ? std::abs(y - data.L(m, s)) : INFINITY);
            }
            if (km > 0.0) {
                ++d.contact_nodes;
                d.minimality_residual = std::max(d.minimality_residual, up ? std::abs(data.U(m, s) - y) : INFINITY);
            }
            d.equation_residual =
                std::max(d.equation_residual, std::abs(y - (sol.cont[n] + dt * sol.G[n] + kp - km)));
        }
    if (sol.after_tau) {
        const SolutionDiagnostics post = check_invariants(chain, as_kind(data, ProblemKind::R2BSDE), *sol.after_tau);
        d.max_constraint_violation = std::max(d.max_constraint_violation, post.max_constraint_violation);
        d.max_negative_increment = std::max(d.max_negative_increment, post.max_negative_increment);
        d.max_singularity = std::max(d.max_singularity, post.max_singularity);
        d.minimality_residual = std::max(d.minimality_residual, post.minimality_residual);
        d.equation_residual = std::max(d.equation_residual, post.equation_residual);
        d.contact_nodes += post.contact_nodes;
    }
    return d;
}

double max_difference(const SolutionQuadruple& a, const SolutionQuadruple& b) {
    if (a.steps != b.steps || a.states != b.states || a.atoms != b.atoms || a.regimes != b.regimes)
        return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    auto cmp = [&](const Vector& u, const Vector& v) {
        for (std::size_t n = 0; n < u.size(); ++n) worst = std::max(worst, std::abs(u[n] - v[n]));
    };
    cmp(a.Y, b.Y);
    cmp(a.Z, b.Z);
    cmp(a.Z_perp, b.Z_perp);
    cmp(a.Vtilde, b.Vtilde);
    cmp(a.Wtilde, b.Wtilde);
    cmp(a.dKplus, b.dKplus);
    cmp(a.dKminus, b.dKminus);
    cmp(a.cont, b.cont);
    cmp(a.G, b.G);
    if (a.after_tau && b.after_tau) worst = std::max(worst, max_difference(*a.after_tau, *b.after_tau));
    return worst;
}

namespace {

void kplus_scan(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol, Verdict& v,
                std::size_t& contacts, std::size_t& violations) {
    const std::size_t S = sol.states;
    const double dt = sol.dt;
    const auto& residual = chain.consistency().drift_residual;
    constexpr double eps = std::numeric_limits<double>::epsilon();
    for (std::size_t m = 0; m < sol.steps; ++m)
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t n = m * S + s;
            if (!sol.live[n] || !data.lower_active(m, s)) continue;
            const double L = data.L(m, s);
            const bool at_L = sol.Y[n] == L;
            const double kp = sol.dKplus[n];
            if (kp <= 0.0 && !at_L) continue;
            ++contacts;
            const double rounding = 64.0 * eps * (std::abs(L) + std::abs(sol.cont[n]) + dt * std::abs(sol.G[n])) / dt;
            const double bound =
                (at_L ? std::max(-sol.G[n], 0.0) + data.alpha_at[n] : 0.0) + residual[s] + rounding;
            const double margin = bound - kp / dt;
            if (margin < v.worst_margin) {
                v.worst_margin = margin;
                v.witness = node_text(chain, m, s);
            }
            if (margin < 0.0) ++violations;
        }
}

}  // namespace

Verdict kplus_density_check(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol) {
    Verdict v;
    v.name = "kplus_density";
    if (!data.has_lower() || data.alpha_at.empty()) {
        v.status = Status::NotApplicable;
        v.detail = "no density bound alpha for the lower barrier";
        return v;
    }
    v.worst_margin = std::numeric_limits<double>::infinity();
    std::size_t contacts = 0, violations = 0;
    kplus_scan(chain, data, sol, v, contacts, violations);
    if (sol.after_tau) kplus_scan(chain, as_kind(data, ProblemKind::R2BSDE), *sol.after_tau, v, contacts, violations);
    v.status = violations == 0 ? Status::Pass : Status::Fail;
    std::ostringstream o;
    o << contacts << " contact nodes, " << violations << " violations";
    v.detail = o.str();
    return v;
}

Verdict reflection_check(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol,
                         double tol) {
    const SolutionDiagnostics d = check_invariants(chain, data, sol);
    Verdict v;
    v.name = "reflection_invariants";
    const double worst = std::max({d.max_constraint_violation, d.max_negative_increment, d.max_singularity,
                                   d.minimality_residual, d.equation_residual});
    v.worst_margin = tol - worst;
    v.status = d.holds(tol) ? Status::Pass : Status::Fail;
    std::ostringstream o;
    o.precision(3);
    o << "constraint " << d.max_constraint_violation << ", negative increment " << d.max_negative_increment
      << ", singularity " << d.max_singularity << ", minimality " << d.minimality_residual << ", equation "
      << d.equation_residual << ", contact nodes " << d.contact_nodes;
    v.detail = o.str();
    return v;
}

}  // namespace rbsde
