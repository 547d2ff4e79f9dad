#include "rbsde/pathsim.hpp"

#include "rbsde/errors.hpp"
#include "rbsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

namespace rbsde {

namespace {

// Paths are grouped in fixed-size blocks; each block owns one generator keyed by
// (seed, block). Path p's draws never depend on the worker count or on n_paths.
constexpr std::size_t kBlock = 1024;

std::mt19937_64 block_stream(std::uint64_t seed, std::size_t block) {
    const auto b = static_cast<std::uint64_t>(block);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

double candidate_rate(const ModelSpec& model) {
    return model.intensity_bound * model.total_jump_mass() +
           model.switching_bound * static_cast<double>(model.regimes - 1);
}

void check_grid(std::span<const double> grid) {
    if (grid.size() < 2) throw ConfigError("time grid needs at least two points");
    for (std::size_t m = 1; m < grid.size(); ++m)
        if (!(grid[m] > grid[m - 1])) throw ConfigError("time grid must be strictly increasing");
}

void check_thinning(const ModelSpec& model, std::span<const double> grid) {
    const double rate = candidate_rate(model);
    for (std::size_t m = 1; m < grid.size(); ++m)
        if ((grid[m] - grid[m - 1]) * rate > 1.0) throw ConfigError("thinning step too coarse");
}

/// Advances one path by one step. Intensities and jump sizes use the left-point
/// state (t, x_left) with the current regime, so the compensator is exactly
/// ∫ ζ(t, x_left, N_s) ds over the step.
class Stepper {
public:
    Stepper(const ModelSpec& model, JumpDrift mode)
        : model_(model),
          mode_(mode),
          d_(static_cast<std::size_t>(model.dim)),
          rate_(candidate_rate(model)),
          jump_rate_(model.intensity_bound * model.total_jump_mass()) {}

    template <typename Rng>
    void advance(double t, double dt, std::vector<double>& x, int& regime, Rng& rng,
                 std::normal_distribution<double>& normal, std::vector<PathEvent>* log,
                 ThinningCounts& counts) {
        const std::vector<double> left(x);
        const Vector b = model_.drift(t, left, regime);
        const Matrix sig = model_.dispersion(t, left, regime);
        const double sq = std::sqrt(dt);
        dw_.resize(d_);
        for (auto& w : dw_) w = normal(rng) * sq;
        for (std::size_t l = 0; l < d_; ++l) {
            double acc = b[l] * dt;
            for (std::size_t r = 0; r < d_; ++r) acc += sig(l, r) * dw_[r];
            x[l] = left[l] + acc;
        }

        if (rate_ <= 0.0) return;
        std::poisson_distribution<int> count_dist(rate_ * dt);
        const int n = count_dist(rng);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        times_.resize(static_cast<std::size_t>(n));
        for (auto& s : times_) s = t + unif(rng) * dt;
        std::sort(times_.begin(), times_.end());

        comp_.assign(d_, 0.0);
        double seg_start = t;
        auto compensate = [&](double seg_end) {
            if (mode_ != JumpDrift::Compensated) return;
            const double len = seg_end - seg_start;
            for (std::size_t y = 0; y < model_.jump_atoms.size(); ++y) {
                const double fm = model_.intensity(t, left, regime, y) * model_.jump_atoms[y].mass;
                if (fm == 0.0) continue;
                const Vector delta = model_.jump_size(t, left, regime, y);
                for (std::size_t l = 0; l < d_; ++l) comp_[l] += delta[l] * fm * len;
            }
        };

        for (double s : times_) {
            compensate(s);
            seg_start = s;
            const double u = unif(rng) * rate_;
            if (u < jump_rate_) {
                ++counts.jump_candidates;
                std::size_t y = 0;
                double cum = 0.0;
                for (; y + 1 < model_.jump_atoms.size(); ++y) {
                    cum += model_.intensity_bound * model_.jump_atoms[y].mass;
                    if (u < cum) break;
                }
                const double f = model_.intensity(t, left, regime, y);
                if (unif(rng) * model_.intensity_bound < f) {
                    ++counts.jump_accepted;
                    const Vector delta = model_.jump_size(t, left, regime, y);
                    for (std::size_t l = 0; l < d_; ++l) x[l] += delta[l];
                    if (log) log->push_back({s, {Mark::Kind::Jump, static_cast<int>(y)}});
                }
            } else {
                ++counts.switch_candidates;
                // uniform target among the k−1 other regimes
                const auto slot = static_cast<int>(std::min<double>(
                    std::floor((u - jump_rate_) / model_.switching_bound), model_.regimes - 2));
                const int target = slot < regime ? slot : slot + 1;
                const double lam = model_.switching(t, left)(static_cast<std::size_t>(regime),
                                                            static_cast<std::size_t>(target));
                if (unif(rng) * model_.switching_bound < lam) {
                    ++counts.switch_accepted;
                    regime = target;
                    if (log) log->push_back({s, {Mark::Kind::Regime, target}});
                }
            }
        }
        compensate(t + dt);
        for (std::size_t l = 0; l < d_; ++l) x[l] -= comp_[l];
    }

private:
    const ModelSpec& model_;
    JumpDrift mode_;
    std::size_t d_;
    double rate_;
    double jump_rate_;
    std::vector<double> dw_;
    std::vector<double> times_;
    std::vector<double> comp_;
};

}  // namespace

Vector uniform_grid(double t0, double t1, std::size_t steps) {
    if (steps == 0) throw ConfigError("grid needs at least one step");
    Vector g(steps + 1);
    for (std::size_t m = 0; m <= steps; ++m)
        g[m] = t0 + (t1 - t0) * static_cast<double>(m) / static_cast<double>(steps);
    return g;
}

PathBundle simulate_paths(const ModelSpec& model, const InitialState& start, std::span<const double> grid,
                          std::size_t n_paths, std::uint64_t seed, const SimulationOptions& options) {
    if (n_paths < 1) throw ConfigError("n_paths must be >= 1");
    check_grid(grid);
    check_thinning(model, grid);
    const auto d = static_cast<std::size_t>(model.dim);
    if (start.x.size() != d) throw ConfigError("initial state dimension mismatch");
    if (start.regime < 0 || start.regime >= model.regimes) throw ConfigError("initial regime out of range");

    PathBundle out;
    out.grid.assign(grid.begin(), grid.end());
    out.n_paths = n_paths;
    out.dim = model.dim;
    out.seed = seed;
    const std::size_t T = grid.size();
    out.x.resize(n_paths * T * d);
    out.regime.resize(n_paths * T);
    if (options.record_events) out.events.resize(n_paths);

    const std::size_t blocks = (n_paths + kBlock - 1) / kBlock;
    std::vector<ThinningCounts> block_counts(blocks);
    parallel_for(blocks, options.threads, [&](std::size_t b0, std::size_t b1) {
        Stepper stepper(model, options.jump_drift);
        std::vector<double> x(d);
        for (std::size_t b = b0; b < b1; ++b) {
            auto rng = block_stream(seed, b);
            std::normal_distribution<double> normal(0.0, 1.0);
            const std::size_t p_end = std::min(n_paths, (b + 1) * kBlock);
            for (std::size_t p = b * kBlock; p < p_end; ++p) {
                x = start.x;
                int regime = start.regime;
                auto* log = options.record_events ? &out.events[p] : nullptr;
                std::copy(x.begin(), x.end(), out.x.begin() + static_cast<std::ptrdiff_t>(p * T * d));
                out.regime[p * T] = regime;
                for (std::size_t m = 0; m + 1 < T; ++m) {
                    stepper.advance(grid[m], grid[m + 1] - grid[m], x, regime, rng, normal, log, block_counts[b]);
                    for (double v : x)
                        if (!std::isfinite(v)) throw EvaluationError("X", "simulated state became non-finite");
                    std::copy(x.begin(), x.end(),
                              out.x.begin() + static_cast<std::ptrdiff_t>((p * T + m + 1) * d));
                    out.regime[p * T + m + 1] = regime;
                }
            }
        }
    });
    for (const auto& c : block_counts) {
        out.thinning.jump_candidates += c.jump_candidates;
        out.thinning.jump_accepted += c.jump_accepted;
        out.thinning.switch_candidates += c.switch_candidates;
        out.thinning.switch_accepted += c.switch_accepted;
    }
    return out;
}

CompensatorReport compensator_check(const PathBundle& bundle, const ModelSpec& model, double threshold) {
    CompensatorReport rep;
    rep.threshold = threshold;
    if (bundle.n_paths == 0) throw ConfigError("empty path bundle");
    if (bundle.events.size() != bundle.n_paths) throw ConfigError("path bundle was simulated without an event log");

    const std::size_t n_atoms = model.jump_atoms.size();
    const auto k = static_cast<std::size_t>(model.regimes);
    // statistics layout: atoms, then regime targets, then all-atoms ⊕ {j}
    const std::size_t n_stats = n_atoms + 2 * k;
    std::vector<double> sum(n_stats, 0.0), sum_sq(n_stats, 0.0), sum_count(n_stats, 0.0),
        sum_comp(n_stats, 0.0);

    std::vector<double> count(n_stats), comp(n_stats), jump_rate(n_atoms);
    for (std::size_t p = 0; p < bundle.n_paths; ++p) {
        std::fill(count.begin(), count.end(), 0.0);
        std::fill(comp.begin(), comp.end(), 0.0);
        const auto& ev = bundle.events[p];
        std::size_t e = 0;
        for (std::size_t m = 0; m < bundle.steps(); ++m) {
            const double t = bundle.grid[m];
            const double t_next = bundle.grid[m + 1];
            const auto x = bundle.point(p, m);
            int regime = bundle.regime_at(p, m);
            const Matrix lam = model.switching(t, x);
            double seg = t;
            auto integrate = [&](double until) {
                const double len = until - seg;
                double all = 0.0;
                for (std::size_t y = 0; y < n_atoms; ++y) {
                    const double r = model.intensity(t, x, regime, y) * model.jump_atoms[y].mass;
                    comp[y] += r * len;
                    all += r * len;
                }
                for (std::size_t j = 0; j < k; ++j) {
                    const double sw = static_cast<int>(j) == regime
                                          ? 0.0
                                          : lam(static_cast<std::size_t>(regime), j) * len;
                    comp[n_atoms + j] += sw;
                    comp[n_atoms + k + j] += sw + all;
                }
                seg = until;
            };
            while (e < ev.size() && ev[e].time <= t_next) {
                integrate(ev[e].time);
                const auto idx = static_cast<std::size_t>(ev[e].mark.index);
                if (ev[e].mark.kind == Mark::Kind::Jump) {
                    count[idx] += 1.0;
                    for (std::size_t j = 0; j < k; ++j) count[n_atoms + k + j] += 1.0;
                } else {
                    count[n_atoms + idx] += 1.0;
                    count[n_atoms + k + idx] += 1.0;
                    regime = ev[e].mark.index;
                }
                ++e;
            }
            integrate(t_next);
        }
        for (std::size_t s = 0; s < n_stats; ++s) {
            const double dlt = count[s] - comp[s];
            sum[s] += dlt;
            sum_sq[s] += dlt * dlt;
            sum_count[s] += count[s];
            sum_comp[s] += comp[s];
        }
    }

    const auto n = static_cast<double>(bundle.n_paths);
    for (std::size_t s = 0; s < n_stats; ++s) {
        MarkStatistic st;
        if (s < n_atoms)
            st.label = "jump[" + std::to_string(s + 1) + "]";
        else if (s < n_atoms + k)
            st.label = "switch[" + std::to_string(s - n_atoms + 1) + "]";
        else
            st.label = "all_jumps+switch[" + std::to_string(s - n_atoms - k + 1) + "]";
        const double mean = sum[s] / n;
        const double var = bundle.n_paths > 1 ? std::max(0.0, (sum_sq[s] - n * mean * mean) / (n - 1.0)) : 0.0;
        st.mean_count = sum_count[s] / n;
        st.mean_compensator = sum_comp[s] / n;
        st.std_error = std::sqrt(var / n);
        if (st.std_error > 0.0)
            st.z = mean / st.std_error;
        else
            st.z = std::abs(mean) < 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
        if (std::abs(st.z) > threshold) rep.status = Status::Fail;
        if (sum_comp[s] > 0.0 && sum_comp[s] < 20.0)
            rep.warnings.push_back(st.label + ": fewer than 20 expected events over all paths; z-score unreliable");
        rep.marks.push_back(std::move(st));
    }
    return rep;
}

WeakErrorReport generator_weak_error(const ModelSpec& model, const TestFunction& u, double t,
                                     const InitialState& start, std::span<const double> dt_list,
                                     std::size_t n_samples, std::uint64_t seed,
                                     const SimulationOptions& options, double min_order) {
    if (dt_list.empty()) throw ConfigError("dt_list is empty");
    if (n_samples < 2) throw ConfigError("need at least two samples");
    const double u0 = u.value(t, start.x, start.regime);
    const double gen = apply_generator(model, u, t, start.x, start.regime);

    WeakErrorReport rep;
    for (double dt : dt_list) {
        const double g2[2] = {t, t + dt};
        check_grid(g2);
        check_thinning(model, g2);
        const std::size_t blocks = (n_samples + kBlock - 1) / kBlock;
        std::vector<double> block_sum(blocks, 0.0), block_sq(blocks, 0.0);
        parallel_for(blocks, options.threads, [&](std::size_t b0, std::size_t b1) {
            Stepper stepper(model, options.jump_drift);
            ThinningCounts counts;
            std::vector<double> x;
            for (std::size_t b = b0; b < b1; ++b) {
                auto rng = block_stream(seed, b);
                std::normal_distribution<double> normal(0.0, 1.0);
                const std::size_t p_end = std::min(n_samples, (b + 1) * kBlock);
                double s = 0.0, sq = 0.0;
                for (std::size_t p = b * kBlock; p < p_end; ++p) {
                    x = start.x;
                    int regime = start.regime;
                    stepper.advance(t, dt, x, regime, rng, normal, nullptr, counts);
                    const double v = u.value(t + dt, x, regime) - u0;
                    s += v;
                    sq += v * v;
                }
                block_sum[b] = s;
                block_sq[b] = sq;
            }
        });
        const double sum = std::accumulate(block_sum.begin(), block_sum.end(), 0.0);
        const double sum_sq = std::accumulate(block_sq.begin(), block_sq.end(), 0.0);
        const auto n = static_cast<double>(n_samples);
        const double mean = sum / n;
        const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));

        WeakErrorRow row;
        row.dt = dt;
        row.mean_value = u0 + mean;
        row.generator = gen;
        row.raw_error = std::abs(mean - gen * dt);
        row.error = row.raw_error / dt;
        row.std_error = std::sqrt(var / n) / dt;
        row.resolved = row.error > 4.0 * row.std_error;
        rep.rows.push_back(row);
    }

    const bool exact = std::all_of(rep.rows.begin(), rep.rows.end(),
                                   [](const WeakErrorRow& r) { return r.error == 0.0 && r.std_error == 0.0; });
    if (exact) {
        rep.order = std::numeric_limits<double>::infinity();
        rep.status = Status::Pass;
        return rep;
    }
    std::vector<double> lx, ly;
    for (const auto& r : rep.rows)
        if (r.resolved && r.error > 0.0) {
            lx.push_back(std::log(r.dt));
            ly.push_back(std::log(r.error));
        }
    if (lx.size() < 2) {
        rep.status = Status::Inconclusive;
        return rep;
    }
    const auto nn = static_cast<double>(lx.size());
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / nn;
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / nn;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    rep.order = sxx > 0.0 ? sxy / sxx : 0.0;
    rep.status = rep.order >= min_order ? Status::Pass : Status::Fail;
    return rep;
}

double moment_report(const PathBundle& bundle, double p) {
    if (!(p >= 2.0)) throw ConfigError("moment order p must be >= 2");
    if (bundle.n_paths == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t path = 0; path < bundle.n_paths; ++path) {
        double sup = 0.0;
        for (std::size_t m = 0; m < bundle.grid.size(); ++m) {
            double n2 = 0.0;
            for (double v : bundle.point(path, m)) n2 += v * v;
            sup = std::max(sup, n2);
        }
        acc += std::pow(sup, p / 2.0);
    }
    return acc / static_cast<double>(bundle.n_paths);
}

void write_paths_csv(const PathBundle& bundle, std::ostream& out, std::size_t max_paths) {
    out << "path,t";
    for (int l = 0; l < bundle.dim; ++l) out << ",x_" << (l + 1);
    out << ",regime\n";
    const std::size_t n = std::min(max_paths, bundle.n_paths);
    const auto old_prec = out.precision(17);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t m = 0; m < bundle.grid.size(); ++m) {
            out << p << ',' << bundle.grid[m];
            for (double v : bundle.point(p, m)) out << ',' << v;
            out << ',' << (bundle.regime_at(p, m) + 1) << '\n';
        }
    out.precision(old_prec);
}

}  // namespace rbsde
