#include "rbsde/analysis.hpp"

#include "rbsde/errors.hpp"
#include "rbsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rbsde {

namespace {

/// Node treatment on the primary layer of a solution.
enum class Flow : std::uint8_t {
    Normal,
    Absorb,   ///< τ reached on a random-terminal problem: the path stops here
    Switch,   ///< τ reached on a first-hitting τ-problem: continue on the post-τ layer
};

/// Law of the chain path as seen by a solution: a primary layer and, for first-hitting
/// τ-problems, a post-τ layer entered on reaching the region.
struct Layers {
    const ChainApprox& chain;
    std::size_t M;
    std::size_t S;
    std::vector<Flow> flow;   // [(M+1)·S]
    bool two_layers = false;

    Layers(const ChainApprox& c, const ProblemData& data, const SolutionQuadruple& sol)
        : chain(c), M(c.steps()), S(c.states()), flow((M + 1) * S, Flow::Normal), two_layers(sol.after_tau != nullptr) {
        for (std::size_t m = 0; m <= M; ++m)
            for (std::size_t s = 0; s < S; ++s) {
                if (!data.tau.reached(m, s)) continue;
                if (two_layers)
                    flow[m * S + s] = Flow::Switch;
                else if (data.kind == ProblemKind::RBSDE_RandomTerminal)
                    flow[m * S + s] = Flow::Absorb;
            }
    }

    Flow at(std::size_t m, std::size_t s) const { return flow[m * S + s]; }

    /// P_m v at state s.
    double expect(std::size_t m, std::size_t s, const double* v) const {
        const Kernel& K = chain.kernel(m);
        double acc = 0.0;
        for (std::size_t b = 0; b < K.branches; ++b) acc += K.prob[K.index(s, b)] * v[K.target[K.index(s, b)]];
        return acc;
    }
};

struct Occupation {
    Vector pi0;   // [(M+1)·S], primary layer (absorbed mass stays at its node)
    Vector pi1;   // post-τ layer
};

Occupation occupation(const Layers& L, std::size_t start) {
    Occupation o;
    o.pi0.assign((L.M + 1) * L.S, 0.0);
    o.pi1.assign(L.two_layers ? (L.M + 1) * L.S : 0, 0.0);
    o.pi0[start] = 1.0;
    for (std::size_t m = 0; m <= L.M; ++m) {
        double* p0 = o.pi0.data() + m * L.S;
        double* p1 = L.two_layers ? o.pi1.data() + m * L.S : nullptr;
        for (std::size_t s = 0; s < L.S; ++s)
            if (L.at(m, s) == Flow::Switch) {
                p1[s] += p0[s];
                p0[s] = 0.0;
            }
        if (m == L.M) break;
        const Kernel& K = L.chain.kernel(m);
        double* n0 = p0 + L.S;
        double* n1 = p1 ? p1 + L.S : nullptr;
        for (std::size_t s = 0; s < L.S; ++s) {
            const bool moves0 = p0[s] != 0.0 && L.at(m, s) == Flow::Normal;
            const bool moves1 = p1 && p1[s] != 0.0;
            if (!moves0 && !moves1) continue;
            for (std::size_t b = 0; b < K.branches; ++b) {
                const auto idx = K.index(s, b);
                if (moves0) n0[K.target[idx]] += p0[s] * K.prob[idx];
                if (moves1) n1[K.target[idx]] += p1[s] * K.prob[idx];
            }
        }
    }
    return o;
}

/// Node field on both layers; `post` may be null for single-layer solutions.
struct Field {
    const Vector* main = nullptr;
    const Vector* post = nullptr;
};

/// ℋ²-type sum Σ_{m<M} Δt Σ_s π(m,s) f(m,s) over both layers, restricted to live nodes.
template <typename Fn0, typename Fn1>
double occupation_sum(const Layers& L, const Occupation& o, const SolutionQuadruple& sol, Fn0&& f0, Fn1&& f1) {
    double acc = 0.0;
    for (std::size_t m = 0; m < L.M; ++m)
        for (std::size_t s = 0; s < L.S; ++s) {
            const std::size_t n = m * L.S + s;
            if (o.pi0[n] != 0.0 && sol.live[n]) acc += o.pi0[n] * f0(m, s);
            if (L.two_layers && o.pi1[n] != 0.0) acc += o.pi1[n] * f1(m, s);
        }
    return acc * L.chain.dt();
}

/// P(max over the path of w ≥ v) from `start`, w given per node on both layers.
double prob_max_at_least(const Layers& L, const Field& w, double v, std::size_t start, Vector& q0, Vector& q1,
                         Vector& n0, Vector& n1) {
    const std::size_t S = L.S, M = L.M;
    q0.assign(S, 0.0);
    q1.assign(S, 0.0);
    n0.assign(S, 0.0);
    n1.assign(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        const std::size_t n = M * S + s;
        if (L.two_layers) q1[s] = (*w.post)[n] >= v ? 1.0 : 0.0;
        q0[s] = L.at(M, s) == Flow::Switch ? q1[s] : ((*w.main)[n] >= v ? 1.0 : 0.0);
    }
    for (std::size_t m = M; m-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t n = m * S + s;
            if (L.two_layers) n1[s] = (*w.post)[n] >= v ? 1.0 : L.expect(m, s, q1.data());
            switch (L.at(m, s)) {
            case Flow::Switch: n0[s] = n1[s]; break;
            case Flow::Absorb: n0[s] = (*w.main)[n] >= v ? 1.0 : 0.0; break;
            case Flow::Normal: n0[s] = (*w.main)[n] >= v ? 1.0 : L.expect(m, s, q0.data()); break;
            }
        }
        std::swap(q0, n0);
        std::swap(q1, n1);
    }
    return q0[start];
}

/// E[max_t w] for w ≥ 0 by level sets of the running maximum.
SupNorm expected_max(const Layers& L, const Occupation& o, const Field& w, std::size_t start,
                     const NormOptions& options) {
    std::vector<double> values;
    const std::size_t N = (L.M + 1) * L.S;
    for (std::size_t n = 0; n < N; ++n) {
        const Flow f = L.flow[n];
        if (o.pi0[n] != 0.0 && f != Flow::Switch) values.push_back((*w.main)[n]);
        if (L.two_layers && o.pi1[n] != 0.0) values.push_back((*w.post)[n]);
    }
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    values.erase(values.begin(), std::lower_bound(values.begin(), values.end(), 0.0));
    if (!values.empty() && values.front() == 0.0) values.erase(values.begin());
    SupNorm out;
    if (values.empty()) return out;

    // P(max ≥ v) only changes at the reachable values, so an interval between two
    // consecutive evaluated thresholds is exact when no value lies strictly inside.
    // Start from a coarse mix of quantile and uniform levels and split the intervals
    // with the widest bracket until the budget is spent or the bracket is negligible.
    const std::size_t K = values.size();
    const std::size_t budget = std::max<std::size_t>(2, options.max_levels);
    std::vector<std::size_t> idx;   // evaluated thresholds as indices into `values`
    if (K <= budget) {
        idx.resize(K);
        for (std::size_t j = 0; j < K; ++j) idx[j] = j;
    } else {
        const std::size_t coarse = std::max<std::size_t>(2, budget / 4);
        for (std::size_t j = 1; j <= coarse / 2; ++j) idx.push_back(j * K / (coarse / 2) - 1);
        for (std::size_t j = 1; j <= coarse / 2; ++j) {
            const double target = values.back() * static_cast<double>(j) / static_cast<double>(coarse / 2);
            idx.push_back(static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), target) - values.begin()));
        }
        idx.push_back(K - 1);
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    }
    std::vector<double> P(idx.size());
    auto evaluate = [&](const std::vector<std::size_t>& which, std::vector<double>& out) {
        out.resize(which.size());
        parallel_for(which.size(), options.threads, [&](std::size_t j0, std::size_t j1) {
            Vector q0, q1, n0, n1;
            for (std::size_t j = j0; j < j1; ++j)
                out[j] = prob_max_at_least(L, w, values[which[j]], start, q0, q1, n0, n1);
        });
    };
    evaluate(idx, P);

    auto bracket = [&](SupNorm& o) {
        o.lower = o.upper = 0.0;
        o.exact = true;
        double prev_v = 0.0, prev_p = 1.0;
        std::size_t prev_i = 0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const double dv = values[idx[j]] - prev_v;
            o.lower += dv * P[j];
            const bool gap = j == 0 ? idx[0] > 0 : idx[j] > prev_i + 1;
            o.upper += dv * (gap ? prev_p : P[j]);
            o.exact = o.exact && !gap;
            prev_v = values[idx[j]];
            prev_p = P[j];
            prev_i = idx[j];
        }
    };
    bracket(out);
    const std::size_t batch = std::max<std::size_t>(8, budget / 16);
    while (!out.exact && idx.size() < budget && out.upper - out.lower > 1e-9 * out.lower) {
        std::vector<std::pair<double, std::size_t>> widths;   // (bracket width, split index)
        double prev_v = 0.0, prev_p = 1.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const std::size_t lo = j == 0 ? 0 : idx[j - 1] + 1;
            if (idx[j] > lo) widths.emplace_back((values[idx[j]] - prev_v) * (prev_p - P[j]), (lo + idx[j] - 1) / 2);
            prev_v = values[idx[j]];
            prev_p = P[j];
        }
        const std::size_t take = std::min({batch, widths.size(), budget - idx.size()});
        std::partial_sort(widths.begin(), widths.begin() + static_cast<std::ptrdiff_t>(take), widths.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first; });
        std::vector<std::size_t> fresh;
        for (std::size_t j = 0; j < take; ++j) fresh.push_back(widths[j].second);
        std::vector<double> fresh_p;
        evaluate(fresh, fresh_p);
        std::vector<std::pair<std::size_t, double>> merged;
        for (std::size_t j = 0; j < idx.size(); ++j) merged.emplace_back(idx[j], P[j]);
        for (std::size_t j = 0; j < fresh.size(); ++j) merged.emplace_back(fresh[j], fresh_p[j]);
        std::sort(merged.begin(), merged.end());
        idx.clear();
        P.clear();
        for (const auto& [i, p] : merged) {
            idx.push_back(i);
            P.push_back(p);
        }
        bracket(out);
    }
    out.value = out.exact ? out.lower : 0.5 * (out.lower + out.upper);
    return out;
}

/// E[(Σ_m inc(m, s_m))²] along the path, increments per node on both layers ([M·S]).
double second_moment_of_sum(const Layers& L, const Field& inc, std::size_t start) {
    const std::size_t S = L.S;
    Vector a0(S, 0.0), b0(S, 0.0), a1(S, 0.0), b1(S, 0.0);
    Vector na0(S), nb0(S), na1(S), nb1(S);
    for (std::size_t m = L.M; m-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t n = m * S + s;
            if (L.two_layers) {
                const double d = (*inc.post)[n];
                const double e1 = L.expect(m, s, a1.data());
                na1[s] = d + e1;
                nb1[s] = d * d + 2.0 * d * e1 + L.expect(m, s, b1.data());
            }
            switch (L.at(m, s)) {
            case Flow::Switch:
                na0[s] = na1[s];
                nb0[s] = nb1[s];
                break;
            case Flow::Absorb:
                na0[s] = 0.0;
                nb0[s] = 0.0;
                break;
            case Flow::Normal: {
                const double d = (*inc.main)[n];
                const double e0 = L.expect(m, s, a0.data());
                na0[s] = d + e0;
                nb0[s] = d * d + 2.0 * d * e0 + L.expect(m, s, b0.data());
                break;
            }
            }
        }
        std::swap(a0, na0);
        std::swap(b0, nb0);
        std::swap(a1, na1);
        std::swap(b1, nb1);
    }
    // the start node itself may already be in the post layer
    return L.at(0, start) == Flow::Switch ? b1[start] : b0[start];
}

/// |V|² at a node: Σ_y Ṽ² f m + Σ_j W̃² λ_ij, read off the kernel mark weights.
double v_norm_sq(const ChainApprox& chain, const SolutionQuadruple& sol, std::size_t m, std::size_t s) {
    const Kernel& K = chain.kernel(m);
    const std::size_t A = chain.atoms(), k = chain.regimes();
    const double dt = chain.dt();
    const auto vt = sol.vtilde(m, s);
    const auto wt = sol.wtilde(m, s);
    double acc = 0.0;
    for (std::size_t y = 0; y < A; ++y) acc += vt[y] * vt[y] * K.prob[K.index(s, 3 + y)] / dt;
    const int i = chain.regime(s);
    for (std::size_t slot = 0; slot + 1 < k; ++slot) {
        const double w = wt[static_cast<std::size_t>(chain.switch_target(i, slot))];
        acc += w * w * K.prob[K.index(s, 3 + A + slot)] / dt;
    }
    return acc;
}

Vector squares(const Vector& v) {
    Vector out(v.size());
    for (std::size_t n = 0; n < v.size(); ++n) out[n] = v[n] * v[n];
    return out;
}

Vector squared_difference(const Vector& a, const Vector& b) {
    Vector out(a.size());
    for (std::size_t n = 0; n < a.size(); ++n) out[n] = (a[n] - b[n]) * (a[n] - b[n]);
    return out;
}

Vector abs_difference(const Vector& a, const Vector& b) {
    Vector out(a.size());
    for (std::size_t n = 0; n < a.size(); ++n) out[n] = std::abs(a[n] - b[n]);
    return out;
}

/// E[ξ²]-type expectation of a node field at the stopping nodes (absorbed or terminal).
double terminal_moment(const Layers& L, const Occupation& o, const Field& w) {
    double acc = 0.0;
    for (std::size_t m = 0; m <= L.M; ++m)
        for (std::size_t s = 0; s < L.S; ++s) {
            const std::size_t n = m * L.S + s;
            const bool stops = m == L.M || L.at(m, s) == Flow::Absorb;
            if (!stops) continue;
            acc += o.pi0[n] * (*w.main)[n];
            if (L.two_layers && m == L.M) acc += o.pi1[n] * (*w.post)[n];
        }
    return acc;
}

void check_start(const ChainApprox& chain, std::size_t start) {
    if (start >= chain.states()) throw ConfigError("start state outside the chain");
}

void check_shape(const ChainApprox& chain, const SolutionQuadruple& sol) {
    if (sol.steps != chain.steps() || sol.states != chain.states())
        throw ConfigError("solution does not belong to this chain");
}

}  // namespace

NormReport norms(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol, std::size_t start,
                 const NormOptions& options) {
    check_start(chain, start);
    check_shape(chain, sol);
    const Layers L(chain, data, sol);
    const Occupation o = occupation(L, start);
    const SolutionQuadruple* post = sol.after_tau.get();
    NormReport r;

    const Vector y2 = squares(sol.Y);
    const Vector y2_post = post ? squares(post->Y) : Vector{};
    r.s2_Y = expected_max(L, o, {&y2, post ? &y2_post : nullptr}, start, options);

    auto z2 = [](const SolutionQuadruple& q) {
        return [&q](std::size_t m, std::size_t s) { return q.z(m, s) * q.z(m, s); };
    };
    auto v2 = [&chain](const SolutionQuadruple& q) {
        return [&chain, &q](std::size_t m, std::size_t s) { return v_norm_sq(chain, q, m, s); };
    };
    r.h2_Z = post ? occupation_sum(L, o, sol, z2(sol), z2(*post))
                  : occupation_sum(L, o, sol, z2(sol), [](std::size_t, std::size_t) { return 0.0; });
    r.hmu2_V = post ? occupation_sum(L, o, sol, v2(sol), v2(*post))
                    : occupation_sum(L, o, sol, v2(sol), [](std::size_t, std::size_t) { return 0.0; });
    r.s2_Kplus = second_moment_of_sum(L, {&sol.dKplus, post ? &post->dKplus : nullptr}, start);
    r.s2_Kminus = second_moment_of_sum(L, {&sol.dKminus, post ? &post->dKminus : nullptr}, start);

    r.xi2 = terminal_moment(L, o, {&y2, post ? &y2_post : nullptr});

    const std::size_t A = chain.atoms(), k = chain.regimes();
    const Vector zeros_v(A, 0.0), zeros_w(k, 0.0);
    const double z0[1] = {0.0};
    auto g0 = [&](std::size_t m, std::size_t s) {
        const double xv[1] = {chain.x(s)};
        const double g =
            markov_driver(data.cost, chain.model(), chain.time(m), xv, chain.regime(s), 0.0, z0, zeros_v, zeros_w);
        return g * g;
    };
    r.g0_h2 = occupation_sum(L, o, sol, g0, g0);
    if (data.has_lower()) {
        const Vector l2 = squares(data.lower);
        r.s2_L = expected_max(L, o, {&l2, post ? &l2 : nullptr}, start, options);
        if (!data.alpha_at.empty()) {
            auto a2 = [&](std::size_t m, std::size_t s) {
                const double a = data.alpha_at[m * chain.states() + s];
                return a * a;
            };
            r.alpha_h2 = occupation_sum(L, o, sol, a2, a2);
        }
    }
    if (data.has_upper()) {
        const Vector u2 = squares(data.upper);
        r.s2_U = expected_max(L, o, {&u2, post ? &u2 : nullptr}, start, options);
    }
    return r;
}

double DifferenceNorms::rhs_unsquared(double phi) const {
    return xi2 + g_h2 + std::sqrt(std::max(phi, 0.0)) * (std::sqrt(s2_L.value) + std::sqrt(s2_U.value));
}

double DifferenceNorms::common_barrier_ratio() const {
    const double num = s2_Y.value + h2_Z + hmu2_V;
    const double den = xi2 + g_h2;
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return num / den;
}

DifferenceNorms difference_norms(const ChainApprox& chain, const ProblemData& data_n, const SolutionQuadruple& sol_n,
                                 const ProblemData& data_p, const SolutionQuadruple& sol_p, std::size_t start,
                                 const NormOptions& options) {
    check_start(chain, start);
    check_shape(chain, sol_n);
    check_shape(chain, sol_p);
    if (data_n.kind != data_p.kind || (sol_n.after_tau == nullptr) != (sol_p.after_tau == nullptr))
        throw ConfigError("difference norms need solutions of the same problem kind");
    const Layers L(chain, data_n, sol_n);
    const Occupation o = occupation(L, start);
    const SolutionQuadruple* pn = sol_n.after_tau.get();
    const SolutionQuadruple* pp = sol_p.after_tau.get();
    DifferenceNorms d;

    const Vector dy2 = squared_difference(sol_n.Y, sol_p.Y);
    const Vector dy2_post = pn ? squared_difference(pn->Y, pp->Y) : Vector{};
    const Field dy{&dy2, pn ? &dy2_post : nullptr};
    d.s2_Y = expected_max(L, o, dy, start, options);
    d.xi2 = terminal_moment(L, o, dy);

    auto dz = [](const SolutionQuadruple& a, const SolutionQuadruple& b) {
        return [&a, &b](std::size_t m, std::size_t s) {
            const double v = a.z(m, s) - b.z(m, s);
            return v * v;
        };
    };
    auto dv = [&chain](const SolutionQuadruple& a, const SolutionQuadruple& b) {
        return [&chain, &a, &b](std::size_t m, std::size_t s) {
            const Kernel& K = chain.kernel(m);
            const std::size_t A = chain.atoms(), k = chain.regimes();
            const auto va = a.vtilde(m, s), vb = b.vtilde(m, s);
            const auto wa = a.wtilde(m, s), wb = b.wtilde(m, s);
            double acc = 0.0;
            for (std::size_t y = 0; y < A; ++y)
                acc += (va[y] - vb[y]) * (va[y] - vb[y]) * K.prob[K.index(s, 3 + y)] / chain.dt();
            const int i = chain.regime(s);
            for (std::size_t slot = 0; slot + 1 < k; ++slot) {
                const auto j = static_cast<std::size_t>(chain.switch_target(i, slot));
                acc += (wa[j] - wb[j]) * (wa[j] - wb[j]) * K.prob[K.index(s, 3 + A + slot)] / chain.dt();
            }
            return acc;
        };
    };
    auto none = [](std::size_t, std::size_t) { return 0.0; };
    d.h2_Z = pn ? occupation_sum(L, o, sol_n, dz(sol_n, sol_p), dz(*pn, *pp))
                : occupation_sum(L, o, sol_n, dz(sol_n, sol_p), none);
    d.hmu2_V = pn ? occupation_sum(L, o, sol_n, dv(sol_n, sol_p), dv(*pn, *pp))
                  : occupation_sum(L, o, sol_n, dv(sol_n, sol_p), none);

    const Vector dkp = abs_difference(sol_n.dKplus, sol_p.dKplus);
    const Vector dkm = abs_difference(sol_n.dKminus, sol_p.dKminus);
    const Vector dkp_post = pn ? abs_difference(pn->dKplus, pp->dKplus) : Vector{};
    const Vector dkm_post = pn ? abs_difference(pn->dKminus, pp->dKminus) : Vector{};
    d.kplus = second_moment_of_sum(L, {&dkp, pn ? &dkp_post : nullptr}, start);
    d.kminus = second_moment_of_sum(L, {&dkm, pn ? &dkm_post : nullptr}, start);

    // g^n(Y^p, Z^p, V^p) − g^p(Y^p, Z^p, V^p) along the p-solution
    auto dg = [&](const SolutionQuadruple& q) {
        return [&, qp = &q](std::size_t m, std::size_t s) {
            const std::size_t n = m * chain.states() + s;
            const double xv[1] = {chain.x(s)};
            const double zv[1] = {qp->Z[n]};
            const double g = markov_driver(data_n.cost, chain.model(), chain.time(m), xv, chain.regime(s), qp->cont[n],
                                           zv, qp->vtilde(m, s), qp->wtilde(m, s));
            const double v = g - qp->G[n];
            return v * v;
        };
    };
    d.g_h2 = pp ? occupation_sum(L, o, sol_p, dg(sol_p), dg(*pp)) : occupation_sum(L, o, sol_p, dg(sol_p), none);

    if (data_n.has_lower() && data_p.has_lower()) {
        const Vector dl = squared_difference(data_n.lower, data_p.lower);
        d.s2_L = expected_max(L, o, {&dl, pn ? &dl : nullptr}, start, options);
    }
    if (data_n.has_upper() && data_p.has_upper()) {
        const Vector du = squared_difference(data_n.upper, data_p.upper);
        d.s2_U = expected_max(L, o, {&du, pn ? &du : nullptr}, start, options);
    }
    return d;
}

AprioriReport apriori_report(const ChainApprox& chain, std::span<const ProblemData> data,
                             std::span<const SolutionQuadruple> sols, std::size_t reference, std::size_t start,
                             const NormOptions& options) {
    if (data.size() != sols.size() || data.empty()) throw ConfigError("a priori report needs matching, non-empty sequences");
    if (reference >= data.size()) throw ConfigError("reference index out of range");
    AprioriReport rep;
    rep.reference = reference;
    for (std::size_t n = 0; n < data.size(); ++n) {
        rep.norms.push_back(norms(chain, data[n], sols[n], start, options));
        rep.differences.push_back(difference_norms(chain, data[n], sols[n], data[reference], sols[reference], start,
                                                   options));
    }

    rep.bounded.name = "apriori_bounded";
    rep.bounded.status = Status::Pass;
    for (std::size_t n = 0; n < data.size(); ++n) {
        const double ratio = rep.norms[n].solution_size() / (1.0 + rep.norms[n].data_size());
        if (!std::isfinite(ratio)) {
            rep.bounded.status = Status::Fail;
            rep.bounded.witness = "entry " + std::to_string(n);
        }
        if (ratio > rep.max_size_ratio) rep.max_size_ratio = ratio;
    }
    rep.bounded.worst_margin = rep.max_size_ratio;
    rep.bounded.detail = "max solution size / (1 + data size)";

    rep.trend.name = "apriori_trend";
    rep.trend.status = Status::Pass;
    rep.trend.worst_margin = std::numeric_limits<double>::infinity();
    double prev = std::numeric_limits<double>::infinity();
    std::size_t prev_n = 0;
    std::size_t compared = 0;
    for (std::size_t n = 0; n < data.size(); ++n) {
        if (n == reference) continue;
        const double cur = rep.differences[n].solution();
        if (compared > 0) {
            const double margin = prev + 1e-12 - cur;
            if (margin < rep.trend.worst_margin) {
                rep.trend.worst_margin = margin;
                rep.trend.witness = "entries " + std::to_string(prev_n) + " -> " + std::to_string(n);
            }
            if (margin < 0.0) rep.trend.status = Status::Fail;
        }
        prev = cur;
        prev_n = n;
        ++compared;
    }
    if (compared < 2) rep.trend.status = Status::NotApplicable;

    rep.common_barrier.name = "apriori_common_barrier";
    bool common = true;
    for (std::size_t n = 0; n < data.size(); ++n)
        common = common && data[n].lower == data[reference].lower && data[n].upper == data[reference].upper;
    if (!common) {
        rep.common_barrier.status = Status::NotApplicable;
        rep.common_barrier.detail = "barriers differ along the sequence";
    } else {
        rep.common_barrier.status = Status::Pass;
        double worst = 0.0;
        for (std::size_t n = 0; n < data.size(); ++n) {
            const double r = rep.differences[n].common_barrier_ratio();
            if (!std::isfinite(r)) {
                rep.common_barrier.status = Status::Fail;
                rep.common_barrier.witness = "entry " + std::to_string(n);
            }
            worst = std::max(worst, r);
        }
        rep.common_barrier.worst_margin = worst;
        rep.common_barrier.detail = "max difference ratio (Y, Z, V) / (xi, g)";
    }
    return rep;
}

namespace {

void check_linear(const ChainApprox& chain, const LinearCoefficients& c) {
    const std::size_t MS = chain.steps() * chain.states();
    const std::size_t marks = chain.atoms() + chain.regimes();
    if (c.beta.size() != MS || c.pi.size() != MS || c.kappa.size() != MS || c.eta.size() != MS * marks)
        throw ConfigError("linear coefficients do not match the chain");
    for (std::size_t n = 0; n < MS; ++n)
        for (std::size_t e = 0; e < marks; ++e) {
            const double eta = c.eta[n * marks + e];
            if (eta < 0.0) throw PreconditionError("mark weight eta must be nonnegative");
            if (c.kappa[n] * eta <= -1.0) {
                std::ostringstream msg;
                msg << "kappa*eta = " << c.kappa[n] * eta << " <= -1 at step " << n / chain.states() << ", state "
                    << n % chain.states() << ": positivity of the adjoint is not guaranteed";
                throw PreconditionError(msg.str());
            }
        }
}

/// Σ_e η ζ ρ at (m, s) from the kernel mark weights; `values`, when given, weights each mark.
double mark_sum(const ChainApprox& chain, const LinearCoefficients& c, std::size_t m, std::size_t s,
                std::span<const double> vt, std::span<const double> wt) {
    const Kernel& K = chain.kernel(m);
    const std::size_t A = chain.atoms(), k = chain.regimes(), marks = A + k;
    const std::size_t n = m * chain.states() + s;
    const double dt = chain.dt();
    double acc = 0.0;
    for (std::size_t y = 0; y < A; ++y)
        acc += (vt.empty() ? 1.0 : vt[y]) * c.eta[n * marks + y] * K.prob[K.index(s, 3 + y)] / dt;
    const int i = chain.regime(s);
    for (std::size_t slot = 0; slot + 1 < k; ++slot) {
        const auto j = static_cast<std::size_t>(chain.switch_target(i, slot));
        acc += (wt.empty() ? 1.0 : wt[j]) * c.eta[n * marks + A + j] * K.prob[K.index(s, 3 + A + slot)] / dt;
    }
    return acc;
}

}  // namespace

AdjointPath adjoint_gamma(const ChainApprox& chain, const LinearCoefficients& coeffs, std::size_t start,
                          const ResolvedTau& tau) {
    check_start(chain, start);
    check_linear(chain, coeffs);
    const std::size_t M = chain.steps(), S = chain.states(), A = chain.atoms(), k = chain.regimes();
    const std::size_t marks = A + k;
    const double dt = chain.dt();
    AdjointPath path;
    path.steps = M;
    path.states = S;
    path.branches = chain.kernel(0).branches;
    const std::size_t B = path.branches;
    path.factor.assign(M * S * B, 1.0);
    path.min_factor = std::numeric_limits<double>::infinity();
    path.max_factor = -std::numeric_limits<double>::infinity();

    for (std::size_t m = 0; m < M; ++m) {
        const Kernel& K = chain.kernel(m);
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t n = m * S + s;
            const double beta = coeffs.beta[n], pi = coeffs.pi[n], kappa = coeffs.kappa[n];
            const double H = mark_sum(chain, coeffs, m, s, {}, {});
            const double pD = K.p_diffusion[s];
            double* f = path.factor.data() + n * B;
            for (std::size_t b = 0; b < 3; ++b)
                f[b] = 1.0 + beta * dt + pi * K.dB[s * 3 + b] - (pD > 0.0 ? kappa * dt * H / pD : 0.0);
            for (std::size_t y = 0; y < A; ++y) f[3 + y] = 1.0 + beta * dt + kappa * coeffs.eta[n * marks + y];
            const int i = chain.regime(s);
            for (std::size_t slot = 0; slot + 1 < k; ++slot) {
                const auto j = static_cast<std::size_t>(chain.switch_target(i, slot));
                f[3 + A + slot] = 1.0 + beta * dt + kappa * coeffs.eta[n * marks + A + j];
            }
            for (std::size_t b = 0; b < B; ++b) {
                if (K.prob[K.index(s, b)] <= 0.0) continue;
                path.min_factor = std::min(path.min_factor, f[b]);
                path.max_factor = std::max(path.max_factor, f[b]);
                if (f[b] <= 0.0) {
                    std::ostringstream msg;
                    msg << "discrete adjoint factor " << f[b] << " <= 0 at step " << m << ", state " << s
                        << " (branch " << b << "); refine the time step";
                    throw PreconditionError(msg.str());
                }
            }
        }
    }

    path.gamma_mass.assign((M + 1) * S, 0.0);
    path.gamma_mass[start] = 1.0;
    for (std::size_t m = 0; m < M; ++m) {
        const Kernel& K = chain.kernel(m);
        const double* g = path.gamma_mass.data() + m * S;
        double* next = path.gamma_mass.data() + (m + 1) * S;
        for (std::size_t s = 0; s < S; ++s) {
            if (g[s] == 0.0 || tau.reached(m, s)) continue;
            const double* f = path.factor.data() + (m * S + s) * B;
            for (std::size_t b = 0; b < B; ++b) next[K.target[K.index(s, b)]] += g[s] * K.prob[K.index(s, b)] * f[b];
        }
    }
    return path;
}

LinearCheck linear_representation_check(const ChainApprox& chain, const LinearProblem& problem, std::size_t start) {
    check_start(chain, start);
    check_linear(chain, problem.coeffs);
    const std::size_t M = chain.steps(), S = chain.states(), A = chain.atoms(), k = chain.regimes();
    if (problem.increments.size() != M * S || problem.terminal.size() != S)
        throw ConfigError("linear problem data do not match the chain");
    const double dt = chain.dt();
    const auto& c = problem.coeffs;

    LinearCheck out;
    out.Y.assign((M + 1) * S, 0.0);
    for (std::size_t s = 0; s < S; ++s) out.Y[M * S + s] = problem.terminal[s];
    for (std::size_t m = M; m-- > 0;) {
        const std::span<const double> next(out.Y.data() + (m + 1) * S, S);
        const MartingaleComponents comp = martingale_components(chain, m, next);
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t n = m * S + s;
            if (problem.tau.reached(m, s)) {
                out.Y[n] = problem.terminal[s];
                continue;
            }
            const double R = mark_sum(chain, c, m, s, {comp.Vtilde.data() + s * A, A}, {comp.Wtilde.data() + s * k, k});
            const double E = comp.expectation[s];
            out.Y[n] = E + dt * (c.beta[n] * E + c.pi[n] * comp.Z[s] + c.kappa[n] * R) + problem.increments[n];
        }
    }

    const AdjointPath path = adjoint_gamma(chain, c, start, problem.tau);
    double rhs = 0.0;
    for (std::size_t m = 0; m <= M; ++m)
        for (std::size_t s = 0; s < S; ++s) {
            const double g = path.gamma_mass[m * S + s];
            if (g == 0.0) continue;
            if (m == M || problem.tau.reached(m, s))
                rhs += g * out.Y[m * S + s];
            else
                rhs += g * problem.increments[m * S + s];
        }
    out.y0 = out.Y[start];
    out.representation = rhs;
    out.residual = std::abs(out.y0 - rhs);
    return out;
}

namespace {

std::string node_at(const ChainApprox& chain, std::size_t m, std::size_t s) {
    std::ostringstream o;
    o << "m=" << m << " t=" << chain.time(m) << " x=" << chain.x(s) << " regime=" << chain.regime(s) + 1;
    return o.str();
}

/// First violated comparison hypothesis, or empty.
std::string hypotheses(const ChainApprox& chain, const ProblemData& d, const ProblemData& dp,
                       const SolutionQuadruple& sp, const ComparisonOptions& opt) {
    const std::size_t S = chain.states(), M = chain.steps();
    const double tol = opt.tolerance;
    if (d.kind != dp.kind) return "problem kinds differ";
    if (!chain.consistency().monotone) return "chain kernel is not monotone";
    if (!opt.counterexample && !(d.cost.monotone_in_r && dp.cost.monotone_in_r))
        return "driver not declared monotone in r";
    for (std::size_t s = 0; s < S; ++s)
        if (d.terminal[s] > dp.terminal[s] + tol) return "(i) xi <= xi' fails at " + node_at(chain, M, s);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t n = m * S + s;
            if (!sp.live[n]) continue;
            const double xv[1] = {chain.x(s)};
            const double zv[1] = {sp.Z[n]};
            const double g = markov_driver(d.cost, chain.model(), chain.time(m), xv, chain.regime(s), sp.cont[n], zv,
                                           sp.vtilde(m, s), sp.wtilde(m, s));
            if (g > sp.G[n] + tol * std::max(1.0, std::abs(sp.G[n])))
                return "(ii) g(Y',Z',V') <= g'(Y',Z',V') fails at " + node_at(chain, m, s);
        }
    if (d.has_lower() != dp.has_lower() || d.has_upper() != dp.has_upper()) return "(iii) barrier presence differs";
    for (std::size_t m = 0; m <= M; ++m)
        for (std::size_t s = 0; s < S; ++s) {
            if (d.has_lower() && d.L(m, s) > dp.L(m, s) + tol) return "(iii) L <= L' fails at " + node_at(chain, m, s);
            if (d.has_upper() && d.U(m, s) > dp.U(m, s) + tol) return "(iii) U <= U' fails at " + node_at(chain, m, s);
        }
    return {};
}

}  // namespace

Verdict comparison_check(const ChainApprox& chain, const ProblemData& data, const SolutionQuadruple& sol,
                         const ProblemData& data_prime, const SolutionQuadruple& sol_prime,
                         const ComparisonOptions& options) {
    check_shape(chain, sol);
    check_shape(chain, sol_prime);
    Verdict v;
    v.name = options.counterexample ? "comparison_counterexample" : "comparison";
    const std::string violated = hypotheses(chain, data, data_prime, sol_prime, options);
    if (!violated.empty()) {
        v.status = Status::NotApplicable;
        v.detail = "hypothesis violated: " + violated;
        return v;
    }
    v.worst_margin = std::numeric_limits<double>::infinity();
    auto scan = [&](const SolutionQuadruple& a, const SolutionQuadruple& b) {
        for (std::size_t n = 0; n < a.Y.size(); ++n) {
            const double margin = b.Y[n] - a.Y[n];
            if (margin < v.worst_margin) {
                v.worst_margin = margin;
                v.witness = node_at(chain, n / chain.states(), n % chain.states());
            }
        }
    };
    scan(sol, sol_prime);
    if (sol.after_tau && sol_prime.after_tau) scan(*sol.after_tau, *sol_prime.after_tau);
    const bool ordered = v.worst_margin >= -options.tolerance;
    std::ostringstream o;
    o.precision(6);
    if (options.counterexample) {
        v.status = Status::NotApplicable;
        o << "driver outside the theorem (not monotone in r); ordering " << (ordered ? "held" : "broke")
          << ", min(Y' - Y) = " << v.worst_margin;
    } else {
        v.status = ordered ? Status::Pass : Status::Fail;
        o << "min(Y' - Y) = " << v.worst_margin;
    }
    v.detail = o.str();
    return v;
}

}  // namespace rbsde
