#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rbsde {

using Vector = std::vector<double>;

/// Dense row-major matrix, sized for the small d×d and k×k blocks of the model.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// One atom of the finite jump measure m(dy).
struct JumpAtom {
    Vector location;
    double mass = 0.0;
};

/// Regime-switching jump diffusion (X, N) on R^d × {0..k-1}.
///
/// Regimes are 0-based in the library; files and CSV output use 1-based labels.
/// The generator acting on u = u^i(t,x) is
///
///   ∂_t u + ½ tr(a ∂²u) + (b − Σ_y δ f m(y)) · ∂u
///       + Σ_y (u(x+δ) − u(x)) f m(y) + Σ_j λ_ij (u^j − u^i),   a = σσᵀ.
///
/// All callables must be reentrant; a ModelSpec is shared read-only.
struct ModelSpec {
    using PointFn = std::function<Vector(double t, std::span<const double> x, int regime)>;
    using MatrixFn = std::function<Matrix(double t, std::span<const double> x, int regime)>;
    using JumpFn = std::function<Vector(double t, std::span<const double> x, int regime,
                                        std::span<const double> atom)>;
    using IntensityFn = std::function<double(double t, std::span<const double> x, int regime,
                                             std::span<const double> atom)>;
    using SwitchingFn = std::function<Matrix(double t, std::span<const double> x)>;

    int dim = 1;
    int regimes = 1;
    double horizon = 1.0;

    PointFn drift_fn;
    MatrixFn dispersion_fn;
    JumpFn jump_size_fn;
    IntensityFn intensity_fn;
    SwitchingFn switching_fn;
    std::vector<JumpAtom> jump_atoms;

    /// Declared bound F_max on the jump intensity f.
    double intensity_bound = 0.0;
    /// Declared bound Λ_max on off-diagonal switching intensities.
    double switching_bound = 0.0;
    /// Coefficients do not depend on t; lets the chain share one kernel across steps.
    bool time_homogeneous = false;

    // Checked evaluations: throw EvaluationError naming the coefficient on non-finite output.
    Vector drift(double t, std::span<const double> x, int regime) const;
    Matrix dispersion(double t, std::span<const double> x, int regime) const;
    Matrix covariance(double t, std::span<const double> x, int regime) const;
    Vector jump_size(double t, std::span<const double> x, int regime, std::size_t atom) const;
    double intensity(double t, std::span<const double> x, int regime, std::size_t atom) const;
    Matrix switching(double t, std::span<const double> x) const;

    double total_jump_mass() const;
};

struct InitialState {
    Vector x;
    int regime = 0;
};

/// Sampled verification of the model invariants; throws ModelError on the first violation.
void validate_model(const ModelSpec& model, std::span<const double> times,
                    const std::vector<Vector>& points);

/// Affine per-component coefficient c_l + s_l · x_l.
struct AffineCoefficient {
    Vector constant;
    Vector linear;

    double component(std::size_t l, double x) const;
};

struct ParametricRegime {
    AffineCoefficient drift;
    /// Diagonal dispersion σ_ll(x) = c_l + s_l x_l.
    AffineCoefficient dispersion;
    /// Constant intensity f per jump atom.
    Vector intensity;
};

/// Built-in file-declarable family: affine drift and diagonal dispersion per regime,
/// additive state-independent jumps δ(y) = y, constant intensities and switching rates.
struct ParametricModel {
    int dim = 1;
    double horizon = 1.0;
    std::vector<ParametricRegime> regimes;
    std::vector<JumpAtom> jump_atoms;
    /// k×k intensity matrix; diagonal entries are recomputed from the row sums.
    std::vector<Vector> switching;
};

ModelSpec make_parametric_model(const ParametricModel& p);

/// Smooth test function with derivatives, used by the generator and the barrier builder.
struct TestFunction {
    std::function<double(double t, std::span<const double> x, int regime)> value;
    std::function<double(double t, std::span<const double> x, int regime)> time_derivative;
    std::function<Vector(double t, std::span<const double> x, int regime)> gradient;
    std::function<Matrix(double t, std::span<const double> x, int regime)> hessian;

    bool complete() const { return value && time_derivative && gradient && hessian; }
};

/// Pointwise generator 𝒢u(t,x,i); jump integrals are finite sums over the atoms.
double apply_generator(const ModelSpec& model, const TestFunction& u, double t,
                       std::span<const double> x, int regime);

/// A mark e = (y, 0) for a jump atom or (0_d, j) for a switch to regime j.
struct Mark {
    enum class Kind { Jump, Regime };
    Kind kind = Kind::Jump;
    int index = 0;

    bool operator==(const Mark&) const = default;
};

/// Mark space E = R^d ⊕ I with reference measure ρ = m ⊕ 1 and compensator density ζ.
class MarkSpace {
public:
    explicit MarkSpace(ModelSpec model);

    const std::vector<Mark>& marks() const { return marks_; }
    std::size_t size() const { return marks_.size(); }

    /// ρ({e}): atom mass for jump marks, 1 for regime marks.
    double rho(const Mark& e) const;
    /// ζ_t(e): f(t,x,i,y) on jump marks, 1{i≠j} λ_ij(t,x) on regime marks.
    double zeta(double t, std::span<const double> x, int regime, const Mark& e) const;
    /// max(F_max, Λ_max).
    double zeta_bound() const;
    /// Compensator rate of the mark set A ⊕ {j} at (t,x,i): Σ_{y∈A} f m(y) + 1{i≠j} λ_ij.
    double compensator_rate(double t, std::span<const double> x, int regime,
                            std::span<const std::size_t> atoms, std::optional<int> target) const;

    const ModelSpec& model() const { return model_; }

private:
    ModelSpec model_;
    std::vector<Mark> marks_;
};

MarkSpace build_mark_space(const ModelSpec& model);

}  // namespace rbsde
