#include "latentdiff/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentdiff/error.hpp"

namespace latentdiff {

namespace {

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, std::string(what) + " is NaN or Inf");
}

void require_same_shape(const LatentTensor& a, const LatentTensor& b) {
    if (a.shape() != b.shape()) {
        throw Error(ErrorCode::ShapeMismatch, shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
}

LatentTensor finish(const Shape& shape, std::vector<double> acc) {
    std::vector<float> out(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        out[i] = static_cast<float>(acc[i]);
        if (!std::isfinite(out[i])) throw Error(ErrorCode::NonFiniteResult, "operator produced NaN or Inf");
    }
    return LatentTensor(shape, std::move(out));
}

void check_affine(std::span<const double> w) {
    if (w.empty()) throw Error(ErrorCode::ArityMismatch, "weights must have at least one entry");
    double sum = 0.0;
    for (double v : w) {
        require_finite(v, "weight");
        sum += v;
    }
    if (std::abs(sum - 1.0) > kAffineTolerance) {
        throw Error(ErrorCode::AffineViolation, "weights sum to " + std::to_string(sum) + ", expected 1");
    }
}

}  // namespace

// --- Weights -------------------------------------------------------------

Weights::Weights(std::vector<double> values) : values_(std::move(values)) { check_affine(values_); }

Weights Weights::from_alpha(double alpha) {
    require_finite(alpha, "alpha");
    return Weights({1.0 - alpha, alpha});
}

Weights Weights::one_hot(std::size_t arity, std::size_t index) {
    if (index >= arity) throw Error(ErrorCode::ArityMismatch, "one-hot index out of range");
    std::vector<double> v(arity, 0.0);
    v[index] = 1.0;
    return Weights(std::move(v));
}

bool Weights::inside_hull() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

double Weights::max_abs() const noexcept {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
}

// --- OperatorSpec --------------------------------------------------------

std::string_view to_string(OperatorKind kind) {
    switch (kind) {
        case OperatorKind::identity: return "identity";
        case OperatorKind::lerp: return "lerp";
        case OperatorKind::slerp: return "slerp";
        case OperatorKind::affine: return "affine";
    }
    return "identity";
}

OperatorKind operator_kind_from_string(std::string_view name) {
    if (name == "identity") return OperatorKind::identity;
    if (name == "lerp") return OperatorKind::lerp;
    if (name == "slerp") return OperatorKind::slerp;
    if (name == "affine") return OperatorKind::affine;
    throw Error(ErrorCode::ValidationError,
                "unknown operator kind '" + std::string(name) + "' (allowed: identity, lerp, slerp, affine)", "kind");
}

OperatorSpec OperatorSpec::identity() { return {}; }

OperatorSpec OperatorSpec::lerp(double alpha) {
    return OperatorSpec{OperatorKind::lerp, Weights::from_alpha(alpha), {}};
}

OperatorSpec OperatorSpec::slerp(double alpha) {
    return OperatorSpec{OperatorKind::slerp, Weights::from_alpha(alpha), {}};
}

OperatorSpec OperatorSpec::affine(Weights w) { return OperatorSpec{OperatorKind::affine, std::move(w), {}}; }

OperatorSpec OperatorSpec::scheduled(OperatorKind kind, std::vector<Weights> schedule) {
    return OperatorSpec{kind, std::nullopt, std::move(schedule)};
}

std::size_t OperatorSpec::arity() const {
    switch (kind) {
        case OperatorKind::identity: return 1;
        case OperatorKind::lerp:
        case OperatorKind::slerp: return 2;
        case OperatorKind::affine:
            if (weights) return weights->size();
            if (!schedule.empty()) return schedule.front().size();
            return 0;
    }
    return 0;
}

const Weights& OperatorSpec::weights_at(std::size_t step) const {
    if (!schedule.empty()) {
        if (step >= schedule.size()) {
            throw Error(ErrorCode::StepOutOfRange, "step " + std::to_string(step) + " outside schedule of length " +
                                                       std::to_string(schedule.size()));
        }
        return schedule[step];
    }
    if (!weights) throw Error(ErrorCode::ValidationError, "operator has no weights", "weights");
    return *weights;
}

double OperatorSpec::max_abs_weight() const noexcept {
    double m = weights ? weights->max_abs() : 0.0;
    for (const Weights& w : schedule) m = std::max(m, w.max_abs());
    return m;
}

void OperatorSpec::validate(std::size_t inputs, std::optional<std::size_t> steps) const {
    if (kind == OperatorKind::identity) {
        if (weights || !schedule.empty()) {
            throw Error(ErrorCode::ValidationError, "identity takes no weights", "weights");
        }
    } else {
        if (!weights && schedule.empty()) throw Error(ErrorCode::ValidationError, "missing weights", "weights");
        const std::size_t n = arity();
        if ((kind == OperatorKind::lerp || kind == OperatorKind::slerp) && weights && weights->size() != 2) {
            throw Error(ErrorCode::ArityMismatch, std::string(to_string(kind)) + " requires 2 weights", "weights");
        }
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            if (schedule[i].size() != n) {
                throw Error(ErrorCode::ArityMismatch, "schedule entry arity differs from operator arity",
                            "schedule[" + std::to_string(i) + "]");
            }
        }
        if (!schedule.empty() && steps && schedule.size() != *steps) {
            throw Error(ErrorCode::ValidationError,
                        "schedule has " + std::to_string(schedule.size()) + " entries, job has " +
                            std::to_string(*steps) + " steps",
                        "schedule");
        }
    }
    if (arity() != inputs) {
        throw Error(ErrorCode::ArityMismatch, std::string(to_string(kind)) + " consumes " + std::to_string(arity()) +
                                                  " inputs, " + std::to_string(inputs) + " bound");
    }
}

// --- HullFrame -----------------------------------------------------------

HullFrame::HullFrame(std::vector<LatentTensor> vertices, std::vector<std::string> labels)
    : vertices_(std::move(vertices)), labels_(std::move(labels)) {
    if (vertices_.size() < 2) throw Error(ErrorCode::ArityMismatch, "a hull frame needs at least 2 vertices");
    for (const LatentTensor& v : vertices_) require_same_shape(vertices_.front(), v);
    if (!labels_.empty() && labels_.size() != vertices_.size()) {
        throw Error(ErrorCode::ArityMismatch, "label count differs from vertex count", "labels");
    }
}

// --- operators -----------------------------------------------------------

LatentTensor lerp(const LatentTensor& a, const LatentTensor& b, double alpha) {
    require_same_shape(a, b);
    require_finite(alpha, "alpha");
    const double wa = 1.0 - alpha;
    std::vector<double> acc(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) acc[i] = wa * a[i] + alpha * b[i];
    return finish(a.shape(), std::move(acc));
}

LatentTensor slerp(const LatentTensor& a, const LatentTensor& b, double alpha) {
    require_same_shape(a, b);
    require_finite(alpha, "alpha");
    const double na = a.norm();
    const double nb = b.norm();
    if (na < kZeroNorm || nb < kZeroNorm) throw Error(ErrorCode::ZeroNorm, "slerp input has (near) zero norm");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
    const double omega = std::acos(std::clamp(dot / (na * nb), -1.0, 1.0));
    if (omega < kSlerpMinAngle) return lerp(a, b, alpha);
    const double s = std::sin(omega);
    const double wa = std::sin((1.0 - alpha) * omega) / s;
    const double wb = std::sin(alpha * omega) / s;
    std::vector<double> acc(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) acc[i] = wa * a[i] + wb * b[i];
    return finish(a.shape(), std::move(acc));
}

LatentTensor affine_combine(std::span<const LatentTensor> inputs, std::span<const double> weights) {
    if (inputs.empty()) throw Error(ErrorCode::ArityMismatch, "affine_combine needs at least one input");
    if (weights.size() != inputs.size()) {
        throw Error(ErrorCode::ArityMismatch, std::to_string(weights.size()) + " weights for " +
                                                  std::to_string(inputs.size()) + " inputs");
    }
    check_affine(weights);
    for (const LatentTensor& t : inputs) require_same_shape(inputs.front(), t);

    // Zero-weight terms are skipped so one-hot weights return the selected
    // input bit-for-bit (signed zeros included).
    std::vector<double> acc(inputs.front().size(), 0.0);
    bool seeded = false;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const double w = weights[k];
        if (w == 0.0) continue;
        const LatentTensor& t = inputs[k];
        if (!seeded) {
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = w * t[i];
            seeded = true;
        } else {
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * t[i];
        }
    }
    return finish(inputs.front().shape(), std::move(acc));
}

LatentTensor affine_combine(std::span<const LatentTensor> inputs, const Weights& weights) {
    return affine_combine(inputs, weights.values());
}

FrameSample sample_frame(const HullFrame& frame, const Weights& weights) {
    return FrameSample{affine_combine(frame.vertices(), weights), weights.inside_hull()};
}

LatentTensor apply_operator(const OperatorSpec& spec, std::span<const LatentTensor> inputs, std::size_t step) {
    if (inputs.empty()) throw Error(ErrorCode::ArityMismatch, "operator needs at least one input");
    spec.validate(inputs.size());
    switch (spec.kind) {
        case OperatorKind::identity: return inputs.front();
        case OperatorKind::lerp: return lerp(inputs[0], inputs[1], spec.weights_at(step)[1]);
        case OperatorKind::slerp: return slerp(inputs[0], inputs[1], spec.weights_at(step)[1]);
        case OperatorKind::affine: return affine_combine(inputs, spec.weights_at(step));
    }
    throw Error(ErrorCode::ValidationError, "unhandled operator kind");
}

}  // namespace latentdiff
