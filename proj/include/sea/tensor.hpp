#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sea::num {

/// Dense row-major float32 tensor. Gradients, when present, mirror the data
/// shape exactly. All stored values are expected to stay finite; call
/// validate_finite() at trust boundaries (file IO, loss evaluation).
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty, or same length as data

    Tensor() = default;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    bool is_scalar() const { return numel() == 1; }

    float scalar() const;

    /// Allocates (or re-zeros) the gradient buffer.
    void zero_grad();

    /// Throws if any element (data or grad) is NaN/Inf. `context` names the
    /// caller in the error message.
    void validate_finite(const std::string& context) const;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, float value);
    static Tensor from(std::vector<int> shape, std::vector<float> values);
};

/// "[2,3,4]" — used in shape-mismatch error messages.
std::string shape_str(const std::vector<int>& shape);

bool same_shape(const Tensor& a, const Tensor& b);

/// Deterministic PRNG (splitmix64). Unlike std distributions, the exact
/// output sequence is pinned by this code, not by the standard library
/// implementation, so runs reproduce bit-exactly everywhere.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0,1).
    double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

    float next_uniform(float lo, float hi) {
        return lo + float(next_unit()) * (hi - lo);
    }

    /// Standard normal via Box-Muller.
    float next_normal();

    /// Child seed for an independent stream identified by a tag. Disjoint
    /// tags give decorrelated streams from one user-facing seed.
    static uint64_t derive(uint64_t seed, std::string_view tag);

private:
    uint64_t state_;
};

}  // namespace sea::num
