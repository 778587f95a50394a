#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace latentdiff {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major f32 array tagged with its shape. Every scalar is finite;
/// the constructor rejects NaN/Inf with NonFiniteInput.
class LatentTensor {
public:
    LatentTensor(Shape shape, std::vector<float> data);
    LatentTensor(Shape shape, std::initializer_list<float> data)
        : LatentTensor(std::move(shape), std::vector<float>(data)) {}

    static LatentTensor filled(Shape shape, float value);
    static LatentTensor zeros(Shape shape) { return filled(std::move(shape), 0.0f); }
    /// 1-D tensor of the given values.
    static LatentTensor vector(std::initializer_list<float> values);

    const Shape& shape() const noexcept { return shape_; }
    std::span<const float> data() const noexcept { return data_; }
    std::size_t size() const noexcept { return data_.size(); }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Euclidean norm of the flattened tensor, accumulated in double.
    double norm() const noexcept;

    /// Byte-for-byte equality including the sign of zero.
    bool bit_equal(const LatentTensor& other) const noexcept;

    /// FNV-1a 64 over the little-endian f32 payload.
    std::uint64_t digest() const noexcept;

    friend bool operator==(const LatentTensor&, const LatentTensor&) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

/// Largest elementwise |a-b|. Shapes must match.
double max_abs_difference(const LatentTensor& a, const LatentTensor& b);
/// Mean elementwise |a-b|. Shapes must match.
double mean_abs_difference(const LatentTensor& a, const LatentTensor& b);

}  // namespace latentdiff
