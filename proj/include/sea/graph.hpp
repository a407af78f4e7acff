#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sea/tensor.hpp"

namespace sea::num {

using ValueId = int;

/// Define-by-run reverse-mode autodiff tape.
///
/// A Graph is built fresh for every forward pass: ops append nodes in
/// topological order and backward() walks them in exact reverse. Leaves are
/// external tensors; after backward(), every leaf with requires_grad holds
/// d(root)/d(leaf) in its grad buffer (zeros if it did not participate).
///
/// Broadcasting is deliberately narrow: elementwise ops accept equal shapes,
/// a scalar right operand, or a right operand whose shape is a trailing
/// suffix of the left one (bias-add style). Everything else is a shape error.
///
/// Reductions (matmul inner products, norms, softmax sums, losses)
/// accumulate in 64-bit and store results in 32-bit.
///
/// Single-threaded; one backward() per graph.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// External leaf. `t` must outlive the graph; its grad is written by
    /// backward() when requires_grad is set.
    ValueId leaf(Tensor& t);

    /// Graph-owned constant; never receives a gradient.
    ValueId constant(Tensor t);

    ValueId add(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b);
    ValueId matmul(ValueId a, ValueId b);        // 2-D only
    ValueId transpose(ValueId a);                // 2-D
    ValueId scale(ValueId a, float s);
    ValueId gelu(ValueId a);
    ValueId layer_norm(ValueId x, ValueId gamma, ValueId beta, float eps = 1e-5f);
    ValueId softmax(ValueId a);                  // over last axis
    ValueId embedding(ValueId table, const std::vector<int>& ids);
    ValueId concat(const std::vector<ValueId>& parts, int axis);  // 2-D, axis 0 or 1
    ValueId reshape(ValueId a, std::vector<int> new_shape);
    ValueId slice_rows(ValueId a, int r0, int r1);   // 2-D, rows [r0, r1)
    ValueId slice_cols(ValueId a, int c0, int c1);   // 2-D, cols [c0, c1)
    ValueId sum(ValueId a);                      // -> scalar
    ValueId mean(ValueId a);                     // -> scalar

    /// Rearranges an [H,W,C] image into [(H/p)*(W/p), p*p*C] patch rows.
    ValueId patchify(ValueId image, int patch);

    /// Sum over rows of -log softmax(logits)[row, target[row]].
    /// logits: [T,V]; targets: T ids in [0,V).
    ValueId nll(ValueId logits, const std::vector<int>& targets);

    const Tensor& value(ValueId id) const;

    /// Re-evaluates the recorded forward pass in float64 and returns the
    /// value of `root` (which must be scalar). Finite-difference checking
    /// uses this to keep the difference quotient clear of float32
    /// round-off; normal forward storage stays 32-bit.
    double value_f64(ValueId root) const;

    /// Reverse pass from a scalar root. Writes grads into requires_grad
    /// leaves. A second call without rebuilding the graph is an error.
    void backward(ValueId root);

    /// Gradient buffer of any node, valid after backward().
    const std::vector<float>& grad(ValueId id) const;

    size_t size() const { return nodes_.size(); }

private:
    enum class Op : uint8_t {
        Leaf, Const, Add, Mul, MatMul, Transpose, Scale, Gelu, LayerNorm,
        Softmax, Embedding, Concat, Reshape, SliceRows, SliceCols, Sum, Mean,
        Patchify, Nll
    };

    struct Node {
        Op op;
        std::vector<ValueId> in;
        Tensor val;
        Tensor* ext = nullptr;       // Leaf only
        bool needs_grad = false;
        std::vector<int> aux_i;      // op-specific (ids, dims, slice bounds)
        std::vector<float> aux_f;    // op-specific (saved stats, probs)
    };

    ValueId push(Node n);
    const Node& node(ValueId id) const;
    bool any_needs_grad(const std::vector<ValueId>& ids) const;
    void check_open(const char* op) const;

    std::vector<Node> nodes_;
    std::vector<std::vector<float>> grads_;
    bool backward_done_ = false;
};

/// Compares the analytic gradient of `f` at `x` against central finite
/// differences with step `h`. Returns the max over elements of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// `f` receives a fresh graph and the leaf id of (a copy of) `x` and must
/// return a scalar root. Two forward evaluations at `x` must agree
/// bit-exactly or the function throws (non-deterministic f).
double finite_diff_check(const std::function<ValueId(Graph&, ValueId)>& f,
                         const Tensor& x, double h);

}  // namespace sea::num
