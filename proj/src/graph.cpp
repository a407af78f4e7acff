#include "sea/graph.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace sea::num {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                shape_str(a.shape) + " and " + shape_str(b.shape));
}

void require_2d(const char* op, const Tensor& t) {
    if (t.shape.size() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                    shape_str(t.shape));
    }
}

// 0: same shape, 1: scalar rhs, 2: rhs is trailing suffix of lhs.
int broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
    if (same_shape(a, b)) return 0;
    if (b.numel() == 1) return 1;
    if (b.shape.size() < a.shape.size()) {
        size_t off = a.shape.size() - b.shape.size();
        bool suffix = true;
        for (size_t i = 0; i < b.shape.size(); ++i) {
            if (a.shape[off + i] != b.shape[i]) suffix = false;
        }
        if (suffix) return 2;
    }
    shape_error(op, a, b);
}

// C[i][j] = dot(A.row(i), B.row(j)); rows contiguous, length k.
// Accumulates in 64-bit, stores 32-bit. `accumulate` adds into C.
void matmul_nt(const float* A, int m, int k, const float* B, int n, float* C,
               bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const float* a = A + size_t(i) * k;
        float* c = C + size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* b = B + size_t(j) * k;
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            int t = 0;
            for (; t + 4 <= k; t += 4) {
                s0 += double(a[t]) * double(b[t]);
                s1 += double(a[t + 1]) * double(b[t + 1]);
                s2 += double(a[t + 2]) * double(b[t + 2]);
                s3 += double(a[t + 3]) * double(b[t + 3]);
            }
            double s = (s0 + s1) + (s2 + s3);
            for (; t < k; ++t) s += double(a[t]) * double(b[t]);
            if (accumulate) c[j] += float(s);
            else c[j] = float(s);
        }
    }
}

std::vector<float> transpose_copy(const float* src, int rows, int cols) {
    std::vector<float> out(size_t(rows) * cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            out[size_t(j) * rows + i] = src[size_t(i) * cols + j];
        }
    }
    return out;
}

double gelu_fwd(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_deriv(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

}  // namespace

ValueId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return ValueId(nodes_.size() - 1);
}

const Graph::Node& Graph::node(ValueId id) const {
    if (id < 0 || size_t(id) >= nodes_.size()) {
        throw std::invalid_argument("graph: value id out of range");
    }
    return nodes_[size_t(id)];
}

bool Graph::any_needs_grad(const std::vector<ValueId>& ids) const {
    for (ValueId id : ids) {
        if (node(id).needs_grad) return true;
    }
    return false;
}

void Graph::check_open(const char* op) const {
    if (backward_done_) {
        throw std::runtime_error(std::string(op) +
                                 ": graph already consumed by backward(); rebuild the forward pass");
    }
}

ValueId Graph::leaf(Tensor& t) {
    check_open("leaf");
    Node n;
    n.op = Op::Leaf;
    n.val = t;  // copy of current values; gradient flows to the original
    n.ext = &t;
    n.needs_grad = t.requires_grad;
    return push(std::move(n));
}

ValueId Graph::constant(Tensor t) {
    check_open("constant");
    Node n;
    n.op = Op::Const;
    n.val = std::move(t);
    n.needs_grad = false;
    return push(std::move(n));
}

ValueId Graph::add(ValueId a, ValueId b) {
    check_open("add");
    const Tensor& ta = node(a).val;
    const Tensor& tb = node(b).val;
    int kind = broadcast_kind("add", ta, tb);
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {kind};
    n.val.shape = ta.shape;
    n.val.data.resize(ta.data.size());
    const size_t bn = tb.data.size();
    for (size_t i = 0; i < ta.data.size(); ++i) {
        float rhs = kind == 0 ? tb.data[i] : (kind == 1 ? tb.data[0] : tb.data[i % bn]);
        n.val.data[i] = ta.data[i] + rhs;
    }
    return push(std::move(n));
}

ValueId Graph::mul(ValueId a, ValueId b) {
    check_open("mul");
    const Tensor& ta = node(a).val;
    const Tensor& tb = node(b).val;
    int kind = broadcast_kind("mul", ta, tb);
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {kind};
    n.val.shape = ta.shape;
    n.val.data.resize(ta.data.size());
    const size_t bn = tb.data.size();
    for (size_t i = 0; i < ta.data.size(); ++i) {
        float rhs = kind == 0 ? tb.data[i] : (kind == 1 ? tb.data[0] : tb.data[i % bn]);
        n.val.data[i] = ta.data[i] * rhs;
    }
    return push(std::move(n));
}

ValueId Graph::matmul(ValueId a, ValueId b) {
    check_open("matmul");
    const Tensor& ta = node(a).val;
    const Tensor& tb = node(b).val;
    require_2d("matmul", ta);
    require_2d("matmul", tb);
    if (ta.shape[1] != tb.shape[0]) shape_error("matmul", ta, tb);
    const int m = ta.shape[0], k = ta.shape[1], nn = tb.shape[1];
    Node n;
    n.op = Op::MatMul;
    n.in = {a, b};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {m, k, nn};
    n.val.shape = {m, nn};
    n.val.data.resize(size_t(m) * nn);
    std::vector<float> bt = transpose_copy(tb.data.data(), k, nn);  // [nn,k]
    matmul_nt(ta.data.data(), m, k, bt.data(), nn, n.val.data.data(), false);
    return push(std::move(n));
}

ValueId Graph::transpose(ValueId a) {
    check_open("transpose");
    const Tensor& ta = node(a).val;
    require_2d("transpose", ta);
    Node n;
    n.op = Op::Transpose;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    n.val.shape = {ta.shape[1], ta.shape[0]};
    n.val.data = transpose_copy(ta.data.data(), ta.shape[0], ta.shape[1]);
    return push(std::move(n));
}

ValueId Graph::scale(ValueId a, float s) {
    check_open("scale");
    const Tensor& ta = node(a).val;
    Node n;
    n.op = Op::Scale;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_f = {s};
    n.val.shape = ta.shape;
    n.val.data.resize(ta.data.size());
    for (size_t i = 0; i < ta.data.size(); ++i) n.val.data[i] = ta.data[i] * s;
    return push(std::move(n));
}

ValueId Graph::gelu(ValueId a) {
    check_open("gelu");
    const Tensor& ta = node(a).val;
    Node n;
    n.op = Op::Gelu;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    n.val.shape = ta.shape;
    n.val.data.resize(ta.data.size());
    for (size_t i = 0; i < ta.data.size(); ++i) {
        n.val.data[i] = float(gelu_fwd(double(ta.data[i])));
    }
    return push(std::move(n));
}

ValueId Graph::layer_norm(ValueId x, ValueId gamma, ValueId beta, float eps) {
    check_open("layer_norm");
    const Tensor& tx = node(x).val;
    const Tensor& tg = node(gamma).val;
    const Tensor& tb = node(beta).val;
    if (tx.shape.empty()) shape_error("layer_norm", tx, tg);
    const int dim = tx.shape.back();
    if (tg.numel() != dim || tb.numel() != dim) shape_error("layer_norm", tx, tg);
    const int rows = int(tx.numel() / dim);
    Node n;
    n.op = Op::LayerNorm;
    n.in = {x, gamma, beta};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {rows, dim};
    n.aux_f.resize(1 + size_t(rows) * 2);  // eps, then per row: mean, rstd
    n.aux_f[0] = eps;
    n.val.shape = tx.shape;
    n.val.data.resize(tx.data.size());
    for (int r = 0; r < rows; ++r) {
        const float* xr = tx.data.data() + size_t(r) * dim;
        float* yr = n.val.data.data() + size_t(r) * dim;
        double mean = 0;
        for (int j = 0; j < dim; ++j) mean += double(xr[j]);
        mean /= dim;
        double var = 0;
        for (int j = 0; j < dim; ++j) {
            double d = double(xr[j]) - mean;
            var += d * d;
        }
        var /= dim;
        double rstd = 1.0 / std::sqrt(var + double(eps));
        n.aux_f[1 + size_t(r) * 2] = float(mean);
        n.aux_f[2 + size_t(r) * 2] = float(rstd);
        for (int j = 0; j < dim; ++j) {
            double xh = (double(xr[j]) - mean) * rstd;
            yr[j] = float(xh * double(tg.data[j]) + double(tb.data[j]));
        }
    }
    return push(std::move(n));
}

ValueId Graph::softmax(ValueId a) {
    check_open("softmax");
    const Tensor& ta = node(a).val;
    if (ta.shape.empty()) throw std::invalid_argument("softmax: empty shape");
    const int dim = ta.shape.back();
    const int rows = int(ta.numel() / dim);
    Node n;
    n.op = Op::Softmax;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {rows, dim};
    n.val.shape = ta.shape;
    n.val.data.resize(ta.data.size());
    for (int r = 0; r < rows; ++r) {
        const float* xr = ta.data.data() + size_t(r) * dim;
        float* yr = n.val.data.data() + size_t(r) * dim;
        float mx = xr[0];
        for (int j = 1; j < dim; ++j) mx = std::max(mx, xr[j]);
        double denom = 0;
        for (int j = 0; j < dim; ++j) {
            double e = std::exp(double(xr[j]) - double(mx));
            yr[j] = float(e);
            denom += e;
        }
        for (int j = 0; j < dim; ++j) yr[j] = float(double(yr[j]) / denom);
    }
    return push(std::move(n));
}

ValueId Graph::embedding(ValueId table, const std::vector<int>& ids) {
    check_open("embedding");
    const Tensor& tt = node(table).val;
    require_2d("embedding", tt);
    if (ids.empty()) throw std::invalid_argument("embedding: empty id list");
    const int V = tt.shape[0], D = tt.shape[1];
    Node n;
    n.op = Op::Embedding;
    n.in = {table};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = ids;
    n.val.shape = {int(ids.size()), D};
    n.val.data.resize(ids.size() * size_t(D));
    for (size_t t = 0; t < ids.size(); ++t) {
        int id = ids[t];
        if (id < 0 || id >= V) {
            throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                        " out of range for table " + shape_str(tt.shape));
        }
        std::memcpy(n.val.data.data() + t * size_t(D),
                    tt.data.data() + size_t(id) * D, size_t(D) * sizeof(float));
    }
    return push(std::move(n));
}

ValueId Graph::concat(const std::vector<ValueId>& parts, int axis) {
    check_open("concat");
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    const Tensor& first = node(parts[0]).val;
    require_2d("concat", first);
    int rows = first.shape[0], cols = first.shape[1];
    int total = 0;
    for (ValueId p : parts) {
        const Tensor& t = node(p).val;
        require_2d("concat", t);
        if (axis == 0) {
            if (t.shape[1] != cols) shape_error("concat", first, t);
            total += t.shape[0];
        } else {
            if (t.shape[0] != rows) shape_error("concat", first, t);
            total += t.shape[1];
        }
    }
    Node n;
    n.op = Op::Concat;
    n.in = parts;
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {axis};
    if (axis == 0) {
        n.val.shape = {total, cols};
        n.val.data.resize(size_t(total) * cols);
        size_t off = 0;
        for (ValueId p : parts) {
            const Tensor& t = node(p).val;
            std::memcpy(n.val.data.data() + off, t.data.data(), t.data.size() * sizeof(float));
            off += t.data.size();
        }
    } else {
        n.val.shape = {rows, total};
        n.val.data.resize(size_t(rows) * total);
        int coff = 0;
        for (ValueId p : parts) {
            const Tensor& t = node(p).val;
            int c = t.shape[1];
            for (int r = 0; r < rows; ++r) {
                std::memcpy(n.val.data.data() + size_t(r) * total + coff,
                            t.data.data() + size_t(r) * c, size_t(c) * sizeof(float));
            }
            coff += c;
        }
    }
    return push(std::move(n));
}

ValueId Graph::reshape(ValueId a, std::vector<int> new_shape) {
    check_open("reshape");
    const Tensor& ta = node(a).val;
    Tensor probe = Tensor::zeros(new_shape);
    if (probe.numel() != ta.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(ta.shape) +
                                    " as " + shape_str(new_shape));
    }
    Node n;
    n.op = Op::Reshape;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    n.val.shape = std::move(new_shape);
    n.val.data = ta.data;
    return push(std::move(n));
}

ValueId Graph::slice_rows(ValueId a, int r0, int r1) {
    check_open("slice_rows");
    const Tensor& ta = node(a).val;
    require_2d("slice_rows", ta);
    if (r0 < 0 || r1 > ta.shape[0] || r0 >= r1) {
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," +
                                    std::to_string(r1) + ") for " + shape_str(ta.shape));
    }
    const int cols = ta.shape[1];
    Node n;
    n.op = Op::SliceRows;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {r0, r1};
    n.val.shape = {r1 - r0, cols};
    n.val.data.assign(ta.data.begin() + size_t(r0) * cols, ta.data.begin() + size_t(r1) * cols);
    return push(std::move(n));
}

ValueId Graph::slice_cols(ValueId a, int c0, int c1) {
    check_open("slice_cols");
    const Tensor& ta = node(a).val;
    require_2d("slice_cols", ta);
    if (c0 < 0 || c1 > ta.shape[1] || c0 >= c1) {
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + shape_str(ta.shape));
    }
    const int rows = ta.shape[0], cols = ta.shape[1], w = c1 - c0;
    Node n;
    n.op = Op::SliceCols;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {c0, c1};
    n.val.shape = {rows, w};
    n.val.data.resize(size_t(rows) * w);
    for (int r = 0; r < rows; ++r) {
        std::memcpy(n.val.data.data() + size_t(r) * w,
                    ta.data.data() + size_t(r) * cols + c0, size_t(w) * sizeof(float));
    }
    return push(std::move(n));
}

ValueId Graph::sum(ValueId a) {
    check_open("sum");
    const Tensor& ta = node(a).val;
    Node n;
    n.op = Op::Sum;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    double s = 0;
    for (float v : ta.data) s += double(v);
    n.val.shape = {1};
    n.val.data = {float(s)};
    return push(std::move(n));
}

ValueId Graph::mean(ValueId a) {
    check_open("mean");
    const Tensor& ta = node(a).val;
    Node n;
    n.op = Op::Mean;
    n.in = {a};
    n.needs_grad = any_needs_grad(n.in);
    double s = 0;
    for (float v : ta.data) s += double(v);
    n.val.shape = {1};
    n.val.data = {float(s / double(ta.data.size()))};
    return push(std::move(n));
}

ValueId Graph::patchify(ValueId image, int patch) {
    check_open("patchify");
    const Tensor& ti = node(image).val;
    if (ti.shape.size() != 3) {
        throw std::invalid_argument("patchify: expected [H,W,C] image, got " + shape_str(ti.shape));
    }
    const int H = ti.shape[0], W = ti.shape[1], C = ti.shape[2];
    if (patch <= 0 || H % patch != 0 || W % patch != 0) {
        throw std::invalid_argument("patchify: patch " + std::to_string(patch) +
                                    " does not tile " + shape_str(ti.shape));
    }
    const int ph = H / patch, pw = W / patch;
    Node n;
    n.op = Op::Patchify;
    n.in = {image};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = {H, W, C, patch};
    n.val.shape = {ph * pw, patch * patch * C};
    n.val.data.resize(ti.data.size());
    size_t o = 0;
    for (int py = 0; py < ph; ++py) {
        for (int px = 0; px < pw; ++px) {
            for (int dy = 0; dy < patch; ++dy) {
                const int y = py * patch + dy;
                const float* row = ti.data.data() + (size_t(y) * W + size_t(px) * patch) * C;
                std::memcpy(n.val.data.data() + o, row, size_t(patch) * C * sizeof(float));
                o += size_t(patch) * C;
            }
        }
    }
    return push(std::move(n));
}

ValueId Graph::nll(ValueId logits, const std::vector<int>& targets) {
    check_open("nll");
    const Tensor& tl = node(logits).val;
    require_2d("nll", tl);
    const int T = tl.shape[0], V = tl.shape[1];
    if (int(targets.size()) != T) {
        throw std::invalid_argument("nll: " + std::to_string(targets.size()) +
                                    " targets for logits " + shape_str(tl.shape));
    }
    Node n;
    n.op = Op::Nll;
    n.in = {logits};
    n.needs_grad = any_needs_grad(n.in);
    n.aux_i = targets;
    n.aux_f.resize(tl.data.size());  // per-row softmax, for backward
    double loss = 0;
    for (int r = 0; r < T; ++r) {
        int tgt = targets[r];
        if (tgt < 0 || tgt >= V) {
            throw std::invalid_argument("nll: target " + std::to_string(tgt) +
                                        " out of range for logits " + shape_str(tl.shape));
        }
        const float* lr = tl.data.data() + size_t(r) * V;
        float* pr = n.aux_f.data() + size_t(r) * V;
        float mx = lr[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, lr[j]);
        double denom = 0;
        for (int j = 0; j < V; ++j) {
            double e = std::exp(double(lr[j]) - double(mx));
            pr[j] = float(e);
            denom += e;
        }
        for (int j = 0; j < V; ++j) pr[j] = float(double(pr[j]) / denom);
        loss += std::log(denom) + double(mx) - double(lr[tgt]);
    }
    n.val.shape = {1};
    n.val.data = {float(loss)};
    return push(std::move(n));
}

const Tensor& Graph::value(ValueId id) const {
    return node(id).val;
}

double Graph::value_f64(ValueId root) const {
    const Node& rn = node(root);
    if (!rn.val.is_scalar()) {
        throw std::invalid_argument("value_f64: root must be scalar, got " + shape_str(rn.val.shape));
    }
    std::vector<std::vector<double>> vals(size_t(root) + 1);
    for (ValueId id = 0; id <= root; ++id) {
        const Node& n = nodes_[size_t(id)];
        std::vector<double>& out = vals[size_t(id)];
        switch (n.op) {
            case Op::Leaf:
            case Op::Const: {
                out.assign(n.val.data.begin(), n.val.data.end());
                break;
            }
            case Op::Add:
            case Op::Mul: {
                const auto& a = vals[size_t(n.in[0])];
                const auto& b = vals[size_t(n.in[1])];
                const int kind = n.aux_i[0];
                out.resize(a.size());
                for (size_t i = 0; i < a.size(); ++i) {
                    double rhs = kind == 0 ? b[i] : (kind == 1 ? b[0] : b[i % b.size()]);
                    out[i] = n.op == Op::Add ? a[i] + rhs : a[i] * rhs;
                }
                break;
            }
            case Op::MatMul: {
                const auto& a = vals[size_t(n.in[0])];
                const auto& b = vals[size_t(n.in[1])];
                const int m = n.aux_i[0], k = n.aux_i[1], nn = n.aux_i[2];
                out.assign(size_t(m) * nn, 0.0);
                for (int i = 0; i < m; ++i) {
                    for (int t = 0; t < k; ++t) {
                        const double av = a[size_t(i) * k + t];
                        for (int j = 0; j < nn; ++j) {
                            out[size_t(i) * nn + j] += av * b[size_t(t) * nn + j];
                        }
                    }
                }
                break;
            }
            case Op::Transpose: {
                const auto& a = vals[size_t(n.in[0])];
                const int r = nodes_[size_t(n.in[0])].val.shape[0];
                const int c = nodes_[size_t(n.in[0])].val.shape[1];
                out.resize(a.size());
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) out[size_t(j) * r + i] = a[size_t(i) * c + j];
                }
                break;
            }
            case Op::Scale: {
                const auto& a = vals[size_t(n.in[0])];
                out.resize(a.size());
                for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * double(n.aux_f[0]);
                break;
            }
            case Op::Gelu: {
                const auto& a = vals[size_t(n.in[0])];
                out.resize(a.size());
                for (size_t i = 0; i < a.size(); ++i) out[i] = gelu_fwd(a[i]);
                break;
            }
            case Op::LayerNorm: {
                const auto& x = vals[size_t(n.in[0])];
                const auto& ga = vals[size_t(n.in[1])];
                const auto& be = vals[size_t(n.in[2])];
                const int rows = n.aux_i[0], dim = n.aux_i[1];
                const double eps = double(n.aux_f[0]);
                out.resize(x.size());
                for (int r = 0; r < rows; ++r) {
                    double mean = 0;
                    for (int j = 0; j < dim; ++j) mean += x[size_t(r) * dim + j];
                    mean /= dim;
                    double var = 0;
                    for (int j = 0; j < dim; ++j) {
                        double d = x[size_t(r) * dim + j] - mean;
                        var += d * d;
                    }
                    var /= dim;
                    double rstd = 1.0 / std::sqrt(var + eps);
                    for (int j = 0; j < dim; ++j) {
                        out[size_t(r) * dim + j] =
                            (x[size_t(r) * dim + j] - mean) * rstd * ga[size_t(j)] + be[size_t(j)];
                    }
                }
                break;
            }
            case Op::Softmax: {
                const auto& a = vals[size_t(n.in[0])];
                const int rows = n.aux_i[0], dim = n.aux_i[1];
                out.resize(a.size());
                for (int r = 0; r < rows; ++r) {
                    double mx = a[size_t(r) * dim];
                    for (int j = 1; j < dim; ++j) mx = std::max(mx, a[size_t(r) * dim + j]);
                    double denom = 0;
                    for (int j = 0; j < dim; ++j) {
                        double e = std::exp(a[size_t(r) * dim + j] - mx);
                        out[size_t(r) * dim + j] = e;
                        denom += e;
                    }
                    for (int j = 0; j < dim; ++j) out[size_t(r) * dim + j] /= denom;
                }
                break;
            }
            case Op::Embedding: {
                const auto& tbl = vals[size_t(n.in[0])];
                const int D = nodes_[size_t(n.in[0])].val.shape[1];
                out.resize(n.aux_i.size() * size_t(D));
                for (size_t t = 0; t < n.aux_i.size(); ++t) {
                    for (int j = 0; j < D; ++j) {
                        out[t * size_t(D) + j] = tbl[size_t(n.aux_i[t]) * D + j];
                    }
                }
                break;
            }
            case Op::Concat: {
                const int axis = n.aux_i[0];
                if (axis == 0) {
                    for (ValueId p : n.in) {
                        const auto& a = vals[size_t(p)];
                        out.insert(out.end(), a.begin(), a.end());
                    }
                } else {
                    const int rows = n.val.shape[0], total = n.val.shape[1];
                    out.resize(size_t(rows) * total);
                    int coff = 0;
                    for (ValueId p : n.in) {
                        const auto& a = vals[size_t(p)];
                        const int c = nodes_[size_t(p)].val.shape[1];
                        for (int r = 0; r < rows; ++r) {
                            for (int j = 0; j < c; ++j) {
                                out[size_t(r) * total + coff + j] = a[size_t(r) * c + j];
                            }
                        }
                        coff += c;
                    }
                }
                break;
            }
            case Op::Reshape: {
                out = vals[size_t(n.in[0])];
                break;
            }
            case Op::SliceRows: {
                const auto& a = vals[size_t(n.in[0])];
                const int cols = nodes_[size_t(n.in[0])].val.shape[1];
                out.assign(a.begin() + size_t(n.aux_i[0]) * cols,
                           a.begin() + size_t(n.aux_i[1]) * cols);
                break;
            }
            case Op::SliceCols: {
                const auto& a = vals[size_t(n.in[0])];
                const int rows = n.val.shape[0], w = n.val.shape[1];
                const int cols = nodes_[size_t(n.in[0])].val.shape[1];
                out.resize(size_t(rows) * w);
                for (int r = 0; r < rows; ++r) {
                    for (int j = 0; j < w; ++j) {
                        out[size_t(r) * w + j] = a[size_t(r) * cols + n.aux_i[0] + j];
                    }
                }
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                const auto& a = vals[size_t(n.in[0])];
                double s = 0;
                for (double v : a) s += v;
                out = {n.op == Op::Sum ? s : s / double(a.size())};
                break;
            }
            case Op::Patchify: {
                const auto& a = vals[size_t(n.in[0])];
                const int W = n.aux_i[1], C = n.aux_i[2], patch = n.aux_i[3];
                const int ph = n.aux_i[0] / patch, pw = W / patch;
                out.resize(a.size());
                size_t o = 0;
                for (int py = 0; py < ph; ++py) {
                    for (int px = 0; px < pw; ++px) {
                        for (int dy = 0; dy < patch; ++dy) {
                            const int y = py * patch + dy;
                            for (int t = 0; t < patch * C; ++t) {
                                out[o++] = a[(size_t(y) * W + size_t(px) * patch) * C + t];
                            }
                        }
                    }
                }
                break;
            }
            case Op::Nll: {
                const auto& l = vals[size_t(n.in[0])];
                const int T = nodes_[size_t(n.in[0])].val.shape[0];
                const int V = nodes_[size_t(n.in[0])].val.shape[1];
                double loss = 0;
                for (int r = 0; r < T; ++r) {
                    double mx = l[size_t(r) * V];
                    for (int j = 1; j < V; ++j) mx = std::max(mx, l[size_t(r) * V + j]);
                    double denom = 0;
                    for (int j = 0; j < V; ++j) denom += std::exp(l[size_t(r) * V + j] - mx);
                    loss += std::log(denom) + mx - l[size_t(r) * V + n.aux_i[size_t(r)]];
                }
                out = {loss};
                break;
            }
        }
    }
    return vals[size_t(root)][0];
}

const std::vector<float>& Graph::grad(ValueId id) const {
    if (!backward_done_) throw std::runtime_error("grad: backward() has not run");
    node(id);
    return grads_[size_t(id)];
}

void Graph::backward(ValueId root) {
    if (backward_done_) {
        throw std::runtime_error("backward: already called on this graph; rebuild the forward pass");
    }
    const Node& rn = node(root);
    if (!rn.val.is_scalar()) {
        throw std::invalid_argument("backward: root must be scalar, got " + shape_str(rn.val.shape));
    }
    grads_.resize(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) {
        grads_[i].assign(nodes_[i].val.data.size(), 0.0f);
    }
    grads_[size_t(root)][0] = 1.0f;
    backward_done_ = true;

    for (ValueId id = root; id >= 0; --id) {
        Node& n = nodes_[size_t(id)];
        if (!n.needs_grad) continue;
        const std::vector<float>& g = grads_[size_t(id)];
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
                break;
            case Op::Add: {
                const int kind = n.aux_i[0];
                auto& ga = grads_[size_t(n.in[0])];
                auto& gb = grads_[size_t(n.in[1])];
                if (nodes_[size_t(n.in[0])].needs_grad) {
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (nodes_[size_t(n.in[1])].needs_grad) {
                    if (kind == 0) {
                        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    } else if (kind == 1) {
                        double s = 0;
                        for (float v : g) s += double(v);
                        gb[0] += float(s);
                    } else {
                        const size_t bn = gb.size();
                        for (size_t i = 0; i < g.size(); ++i) gb[i % bn] += g[i];
                    }
                }
                break;
            }
            case Op::Mul: {
                const int kind = n.aux_i[0];
                const Tensor& ta = nodes_[size_t(n.in[0])].val;
                const Tensor& tb = nodes_[size_t(n.in[1])].val;
                auto& ga = grads_[size_t(n.in[0])];
                auto& gb = grads_[size_t(n.in[1])];
                const size_t bn = tb.data.size();
                if (nodes_[size_t(n.in[0])].needs_grad) {
                    for (size_t i = 0; i < g.size(); ++i) {
                        float rhs = kind == 0 ? tb.data[i] : (kind == 1 ? tb.data[0] : tb.data[i % bn]);
                        ga[i] += g[i] * rhs;
                    }
                }
                if (nodes_[size_t(n.in[1])].needs_grad) {
                    if (kind == 0) {
                        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ta.data[i];
                    } else if (kind == 1) {
                        double s = 0;
                        for (size_t i = 0; i < g.size(); ++i) s += double(g[i]) * double(ta.data[i]);
                        gb[0] += float(s);
                    } else {
                        for (size_t i = 0; i < g.size(); ++i) gb[i % bn] += g[i] * ta.data[i];
                    }
                }
                break;
            }
            case Op::MatMul: {
                const int m = n.aux_i[0], k = n.aux_i[1], nn = n.aux_i[2];
                const Tensor& ta = nodes_[size_t(n.in[0])].val;
                const Tensor& tb = nodes_[size_t(n.in[1])].val;
                if (nodes_[size_t(n.in[0])].needs_grad) {
                    // dA = dC * B^T ; B rows are contiguous in k-major order
                    matmul_nt(g.data(), m, nn, tb.data.data(), k,
                              grads_[size_t(n.in[0])].data(), true);
                }
                if (nodes_[size_t(n.in[1])].needs_grad) {
                    // dB = A^T * dC
                    std::vector<float> at = transpose_copy(ta.data.data(), m, k);   // [k,m]
                    std::vector<float> gt = transpose_copy(g.data(), m, nn);        // [nn,m]
                    matmul_nt(at.data(), k, m, gt.data(), nn,
                              grads_[size_t(n.in[1])].data(), true);
                }
                break;
            }
            case Op::Transpose: {
                const Tensor& ta = nodes_[size_t(n.in[0])].val;
                auto& ga = grads_[size_t(n.in[0])];
                const int r = ta.shape[0], c = ta.shape[1];
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) {
                        ga[size_t(i) * c + j] += g[size_t(j) * r + i];
                    }
                }
                break;
            }
            case Op::Scale: {
                auto& ga = grads_[size_t(n.in[0])];
                const float s = n.aux_f[0];
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                break;
            }
            case Op::Gelu: {
                const Tensor& ta = nodes_[size_t(n.in[0])].val;
                auto& ga = grads_[size_t(n.in[0])];
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * float(gelu_deriv(double(ta.data[i])));
                }
                break;
            }
            case Op::LayerNorm: {
                const int rows = n.aux_i[0], dim = n.aux_i[1];
                const Tensor& tx = nodes_[size_t(n.in[0])].val;
                const Tensor& tg = nodes_[size_t(n.in[1])].val;
                auto& gx = grads_[size_t(n.in[0])];
                auto& gg = grads_[size_t(n.in[1])];
                auto& gb = grads_[size_t(n.in[2])];
                const bool want_x = nodes_[size_t(n.in[0])].needs_grad;
                const bool want_g = nodes_[size_t(n.in[1])].needs_grad;
                const bool want_b = nodes_[size_t(n.in[2])].needs_grad;
                for (int r = 0; r < rows; ++r) {
                    const float* xr = tx.data.data() + size_t(r) * dim;
                    const float* gr = g.data() + size_t(r) * dim;
                    const double mean = double(n.aux_f[1 + size_t(r) * 2]);
                    const double rstd = double(n.aux_f[2 + size_t(r) * 2]);
                    double sum_dy = 0, sum_dy_xh = 0;
                    for (int j = 0; j < dim; ++j) {
                        double xh = (double(xr[j]) - mean) * rstd;
                        double dy = double(gr[j]) * double(tg.data[j]);
                        sum_dy += dy;
                        sum_dy_xh += dy * xh;
                        if (want_g) gg[size_t(j)] += float(double(gr[j]) * xh);
                        if (want_b) gb[size_t(j)] += gr[j];
                    }
                    if (want_x) {
                        const double inv_dim = 1.0 / dim;
                        for (int j = 0; j < dim; ++j) {
                            double xh = (double(xr[j]) - mean) * rstd;
                            double dy = double(gr[j]) * double(tg.data[j]);
                            gx[size_t(r) * dim + j] +=
                                float(rstd * (dy - sum_dy * inv_dim - xh * sum_dy_xh * inv_dim));
                        }
                    }
                }
                break;
            }
            case Op::Softmax: {
                const int rows = n.aux_i[0], dim = n.aux_i[1];
                auto& ga = grads_[size_t(n.in[0])];
                for (int r = 0; r < rows; ++r) {
                    const float* yr = n.val.data.data() + size_t(r) * dim;
                    const float* gr = g.data() + size_t(r) * dim;
                    double dot = 0;
                    for (int j = 0; j < dim; ++j) dot += double(gr[j]) * double(yr[j]);
                    for (int j = 0; j < dim; ++j) {
                        ga[size_t(r) * dim + j] += float((double(gr[j]) - dot) * double(yr[j]));
                    }
                }
                break;
            }
            case Op::Embedding: {
                const Tensor& tt = nodes_[size_t(n.in[0])].val;
                auto& gt = grads_[size_t(n.in[0])];
                const int D = tt.shape[1];
                for (size_t t = 0; t < n.aux_i.size(); ++t) {
                    const int id2 = n.aux_i[t];
                    for (int j = 0; j < D; ++j) {
                        gt[size_t(id2) * D + j] += g[t * size_t(D) + j];
                    }
                }
                break;
            }
            case Op::Concat: {
                const int axis = n.aux_i[0];
                if (axis == 0) {
                    size_t off = 0;
                    for (ValueId p : n.in) {
                        auto& gp = grads_[size_t(p)];
                        if (nodes_[size_t(p)].needs_grad) {
                            for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                        }
                        off += gp.size();
                    }
                } else {
                    const int total = n.val.shape[1];
                    const int rows = n.val.shape[0];
                    int coff = 0;
                    for (ValueId p : n.in) {
                        const int c = nodes_[size_t(p)].val.shape[1];
                        auto& gp = grads_[size_t(p)];
                        if (nodes_[size_t(p)].needs_grad) {
                            for (int r = 0; r < rows; ++r) {
                                for (int j = 0; j < c; ++j) {
                                    gp[size_t(r) * c + j] += g[size_t(r) * total + coff + j];
                                }
                            }
                        }
                        coff += c;
                    }
                }
                break;
            }
            case Op::Reshape: {
                auto& ga = grads_[size_t(n.in[0])];
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                break;
            }
            case Op::SliceRows: {
                const Tensor& ta = nodes_[size_t(n.in[0])].val;
                auto& ga = grads_[size_t(n.in[0])];
                const int cols = ta.shape[1], r0 = n.aux_i[0];
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[size_t(r0) * cols + i] += g[i];
                }
                break;
            }
            case Op::SliceCols: {
                const Tensor& ta = nodes_[size_t(n.in[0])].val;
                auto& ga = grads_[size_t(n.in[0])];
                const int cols = ta.shape[1], c0 = n.aux_i[0];
                const int w = n.val.shape[1], rows = n.val.shape[0];
                for (int r = 0; r < rows; ++r) {
                    for (int j = 0; j < w; ++j) {
                        ga[size_t(r) * cols + c0 + j] += g[size_t(r) * w + j];
                    }
                }
                break;
            }
            case Op::Sum: {
                auto& ga = grads_[size_t(n.in[0])];
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                break;
            }
            case Op::Mean: {
                auto& ga = grads_[size_t(n.in[0])];
                const float inv = 1.0f / float(ga.size());
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * inv;
                break;
            }
            case Op::Patchify: {
                auto& ga = grads_[size_t(n.in[0])];
                const int W = n.aux_i[1], C = n.aux_i[2], patch = n.aux_i[3];
                const int pw = W / patch;
                const int ph = n.aux_i[0] / patch;
                size_t o = 0;
                for (int py = 0; py < ph; ++py) {
                    for (int px = 0; px < pw; ++px) {
                        for (int dy = 0; dy < patch; ++dy) {
                            const int y = py * patch + dy;
                            float* row = ga.data() + (size_t(y) * W + size_t(px) * patch) * C;
                            for (int t = 0; t < patch * C; ++t) row[t] += g[o + size_t(t)];
                            o += size_t(patch) * C;
                        }
                    }
                }
                break;
            }
            case Op::Nll: {
                const Tensor& tl = nodes_[size_t(n.in[0])].val;
                auto& gl = grads_[size_t(n.in[0])];
                const int T = tl.shape[0], V = tl.shape[1];
                const float go = g[0];
                for (int r = 0; r < T; ++r) {
                    const float* pr = n.aux_f.data() + size_t(r) * V;
                    float* gr = gl.data() + size_t(r) * V;
                    const int tgt = n.aux_i[size_t(r)];
                    for (int j = 0; j < V; ++j) gr[j] += go * pr[j];
                    gr[tgt] -= go;
                }
                break;
            }
        }
    }

    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.op == Op::Leaf && n.ext && n.ext->requires_grad) {
            n.ext->grad = grads_[i];
        }
    }
}

double finite_diff_check(const std::function<ValueId(Graph&, ValueId)>& f,
                         const Tensor& x, double h) {
    if (h <= 0) throw std::invalid_argument("finite_diff_check: h must be positive");

    auto eval = [&f](const Tensor& p) {
        Graph g;
        Tensor copy = p;
        copy.requires_grad = false;
        copy.grad.clear();
        ValueId root = f(g, g.leaf(copy));
        const Tensor& v = g.value(root);
        if (!v.is_scalar()) {
            throw std::invalid_argument("finite_diff_check: f must return a scalar");
        }
        return g.value_f64(root);
    };

    {
        Graph g0;
        Tensor c0 = x;
        c0.requires_grad = false;
        c0.grad.clear();
        const float v0 = g0.value(f(g0, g0.leaf(c0))).data[0];
        Graph g1;
        Tensor c1 = x;
        c1.requires_grad = false;
        c1.grad.clear();
        const float v1 = g1.value(f(g1, g1.leaf(c1))).data[0];
        if (std::memcmp(&v0, &v1, sizeof(float)) != 0) {
            throw std::runtime_error("finite_diff_check: f is not deterministic at x");
        }
    }

    Tensor xc = x;
    xc.requires_grad = true;
    xc.grad.clear();
    Graph g;
    ValueId root = f(g, g.leaf(xc));
    if (!g.value(root).is_scalar()) {
        throw std::invalid_argument("finite_diff_check: f must return a scalar");
    }
    g.backward(root);

    double max_rel = 0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        Tensor xp = x;
        Tensor xm = x;
        xp.data[i] = float(double(x.data[i]) + h);
        xm.data[i] = float(double(x.data[i]) - h);
        const double fp = eval(xp);
        const double fm = eval(xm);
        const double denom = double(xp.data[i]) - double(xm.data[i]);
        const double numeric = (fp - fm) / denom;
        const double analytic = double(xc.grad[i]);
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace sea::num
