#include "latentdiff/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "latentdiff/error.hpp"
#include "latentdiff/hash.hpp"

namespace latentdiff {

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t acc, std::size_t e) { return acc * e; });
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

LatentTensor::LatentTensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) throw Error(ErrorCode::ShapeMismatch, "tensor shape must have at least one extent");
    for (std::size_t e : shape_) {
        if (e == 0) throw Error(ErrorCode::ShapeMismatch, "zero extent in shape " + shape_to_string(shape_));
    }
    if (element_count(shape_) != data_.size()) {
        throw Error(ErrorCode::ShapeMismatch, "shape " + shape_to_string(shape_) + " expects " +
                                                  std::to_string(element_count(shape_)) + " scalars, got " +
                                                  std::to_string(data_.size()));
    }
    for (float v : data_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "tensor contains NaN or Inf");
    }
}

LatentTensor LatentTensor::filled(Shape shape, float value) {
    const std::size_t n = element_count(shape);
    return LatentTensor(std::move(shape), std::vector<float>(n, value));
}

LatentTensor LatentTensor::vector(std::initializer_list<float> values) {
    return LatentTensor(Shape{values.size()}, std::vector<float>(values));
}

double LatentTensor::norm() const noexcept {
    double sum = 0.0;
    for (float v : data_) sum += static_cast<double>(v) * v;
    return std::sqrt(sum);
}

bool LatentTensor::bit_equal(const LatentTensor& other) const noexcept {
    return shape_ == other.shape_ && data_.size() == other.data_.size() &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

std::uint64_t LatentTensor::digest() const noexcept {
    std::uint64_t h = kFnvOffsetBasis;
    for (float v : data_) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        std::byte le[4] = {std::byte(bits & 0xff), std::byte((bits >> 8) & 0xff),
                           std::byte((bits >> 16) & 0xff), std::byte((bits >> 24) & 0xff)};
        h = fnv1a64(le, h);
    }
    return h;
}

namespace {

void require_same_shape(const LatentTensor& a, const LatentTensor& b) {
    if (a.shape() != b.shape()) {
        throw Error(ErrorCode::ShapeMismatch, shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
}

}  // namespace

double max_abs_difference(const LatentTensor& a, const LatentTensor& b) {
    require_same_shape(a, b);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
    }
    return worst;
}

double mean_abs_difference(const LatentTensor& a, const LatentTensor& b) {
    require_same_shape(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(static_cast<double>(a[i]) - b[i]);
    return sum / static_cast<double>(a.size());
}

std::string hex_digest(std::uint64_t value) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out = "0x0000000000000000";
    for (int i = 17; i >= 2; --i) {
        out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
        value >>= 4;
    }
    return out;
}

}  // namespace latentdiff
