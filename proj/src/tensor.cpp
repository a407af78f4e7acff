#include "sea/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sea::num {

float Tensor::scalar() const {
    if (!is_scalar()) {
        throw std::invalid_argument("scalar(): tensor has shape " + shape_str(shape));
    }
    return data[0];
}

void Tensor::zero_grad() {
    grad.assign(data.size(), 0.0f);
}

void Tensor::validate_finite(const std::string& context) const {
    for (float v : data) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(context + ": non-finite value in tensor data");
        }
    }
    for (float v : grad) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(context + ": non-finite value in tensor grad");
        }
    }
}

static int64_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must be non-empty");
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    int64_t n = checked_numel(shape);
    t.shape = std::move(shape);
    t.data.assign(size_t(n), 0.0f);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, float value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.data) v = value;
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values) {
    int64_t n = checked_numel(shape);
    if (int64_t(values.size()) != n) {
        throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape;
}

float RngStream::next_normal() {
    // Box-Muller; u1 kept away from zero so log() stays finite.
    double u1 = next_unit();
    double u2 = next_unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return float(r * std::cos(2.0 * std::numbers::pi * u2));
}

uint64_t RngStream::derive(uint64_t seed, std::string_view tag) {
    uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a 64
    for (char c : tag) {
        h ^= uint64_t(uint8_t(c));
        h *= 0x100000001B3ULL;
    }
    RngStream mix(seed ^ h);
    return mix.next_u64();
}

}  // namespace sea::num
