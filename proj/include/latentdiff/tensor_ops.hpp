#pragma once

// Latent operator library. All functions are pure and thread-safe.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentdiff/tensor.hpp"

namespace latentdiff {

inline constexpr double kAffineTolerance = 1e-6;
/// Below this angle slerp degenerates to lerp.
inline constexpr double kSlerpMinAngle = 1e-6;
inline constexpr double kZeroNorm = 1e-12;
inline constexpr double kDefaultMaxAbsWeight = 4.0;

/// Affine weight vector: n >= 1 finite values with |sum - 1| <= 1e-6.
/// Values outside [0,1] are legal and mean extrapolation.
class Weights {
public:
    explicit Weights(std::vector<double> values);
    Weights(std::initializer_list<double> values) : Weights(std::vector<double>(values)) {}

    /// The two-input case [1 - alpha, alpha].
    static Weights from_alpha(double alpha);
    static Weights one_hot(std::size_t arity, std::size_t index);

    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    /// True iff every weight lies in [0,1] (the point is inside the hull).
    bool inside_hull() const noexcept;
    double max_abs() const noexcept;

    friend bool operator==(const Weights&, const Weights&) = default;

private:
    std::vector<double> values_;
};

enum class OperatorKind { identity, lerp, slerp, affine };

std::string_view to_string(OperatorKind kind);
OperatorKind operator_kind_from_string(std::string_view name);

/// Declarative operator: kind plus constant weights or a per-step schedule.
struct OperatorSpec {
    OperatorKind kind = OperatorKind::identity;
    std::optional<Weights> weights;
    std::vector<Weights> schedule;  // empty: constant weights

    static OperatorSpec identity();
    static OperatorSpec lerp(double alpha);
    static OperatorSpec slerp(double alpha);
    static OperatorSpec affine(Weights w);
    static OperatorSpec scheduled(OperatorKind kind, std::vector<Weights> schedule);

    /// Number of input tensors this operator consumes.
    std::size_t arity() const;

    /// Weights in effect at `step`; schedule[step] when scheduled.
    const Weights& weights_at(std::size_t step) const;

    /// Largest |weight| over the constant weights and every schedule entry.
    double max_abs_weight() const noexcept;

    /// Checks kind/weights consistency, arity against `inputs`, and the
    /// schedule length against `steps` when given.
    void validate(std::size_t inputs, std::optional<std::size_t> steps = std::nullopt) const;

    friend bool operator==(const OperatorSpec&, const OperatorSpec&) = default;
};

/// Ordered real data points spanning a traversal scaffold.
class HullFrame {
public:
    explicit HullFrame(std::vector<LatentTensor> vertices, std::vector<std::string> labels = {});

    std::span<const LatentTensor> vertices() const noexcept { return vertices_; }
    std::span<const std::string> labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return vertices_.size(); }

private:
    std::vector<LatentTensor> vertices_;
    std::vector<std::string> labels_;
};

struct FrameSample {
    LatentTensor point;
    bool inside = false;
};

LatentTensor lerp(const LatentTensor& a, const LatentTensor& b, double alpha);
LatentTensor slerp(const LatentTensor& a, const LatentTensor& b, double alpha);

LatentTensor affine_combine(std::span<const LatentTensor> inputs, const Weights& weights);
/// Unvalidated-weights overload; raises AffineViolation / ArityMismatch itself.
LatentTensor affine_combine(std::span<const LatentTensor> inputs, std::span<const double> weights);

FrameSample sample_frame(const HullFrame& frame, const Weights& weights);

LatentTensor apply_operator(const OperatorSpec& spec, std::span<const LatentTensor> inputs, std::size_t step);

}  // namespace latentdiff
