#pragma once

// Dense f64 tensors with a dynamic reverse-mode differentiation graph.
//
// Every op returns a fresh Tensor whose node keeps its parents alive while it
// requires a gradient. Nodes that do not depend on any trainable leaf carry no
// parents and no backward closure, so constant sub-expressions cost nothing at
// backward time.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "migcast/errors.hpp"

namespace migcast::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    std::string_view op = "leaf";

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
        for (auto d : shape)
            if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
        if (numel(shape) != values.size())
            throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                             " values");
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        if (requires_grad) n->ensure_grad();
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor filled(Shape shape, double v) {
        const auto n = numel(shape);
        return from(std::move(shape), std::vector<double>(n, v));
    }

    static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false) {
        return from({rows, cols}, std::move(values), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return rank() > 1 ? node_->shape[1] : 1; }

    std::span<const double> data() const { return node_->value; }
    std::span<double> mutable_data() { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    double item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    double at(std::size_t i) const { return node_->value.at(i); }
    double at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

    bool requires_grad() const { return node_->requires_grad; }

    void zero_grad() {
        if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    /// Value copy with no graph attached.
    Tensor detach() const { return from(shape(), node_->value); }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Builds an op result. `backward` receives the result node; it must read
/// `self.grad` and accumulate into parents that require gradients.
inline Tensor make_op(std::string_view op, Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backward = std::move(backward);
        n->ensure_grad();
    }
    return Tensor(std::move(n));
}

/// Reverse-mode sweep from a single-element loss. Leaf gradients accumulate
/// across calls; intermediate gradients are reset on every call.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order)
        if (n->backward) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

namespace detail {

inline void require_rank2(const Tensor& t, std::string_view op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

enum class Broadcast { Same, Row };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, std::string_view op) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

// Splits a shape around `axis` into (outer, extent, inner) for strided loops.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, std::string_view op) {
    if (axis >= s.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit a;
    for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
    a.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
    return a;
}

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

/// a + b. `b` may also be a single row broadcast over the rows of `a`.
inline Tensor add(const Tensor& a, const Tensor& b) {
    const auto kind = detail::broadcast_kind(a, b, "add");
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    const std::size_t n = b.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[kind == detail::Broadcast::Same ? i : i % n];
    return make_op("add", a.shape(), std::move(out), {a, b}, [kind, n](Node& self) {
        auto& pa = detail::parent(self, 0);
        auto& pb = detail::parent(self, 1);
        if (pa.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[kind == detail::Broadcast::Same ? i : i % n] += self.grad[i];
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    const auto kind = detail::broadcast_kind(a, b, "sub");
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    const std::size_t n = b.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[kind == detail::Broadcast::Same ? i : i % n];
    return make_op("sub", a.shape(), std::move(out), {a, b}, [kind, n](Node& self) {
        auto& pa = detail::parent(self, 0);
        auto& pb = detail::parent(self, 1);
        if (pa.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[kind == detail::Broadcast::Same ? i : i % n] -= self.grad[i];
    });
}

/// Hadamard product, with the same row broadcast as add().
inline Tensor mul(const Tensor& a, const Tensor& b) {
    const auto kind = detail::broadcast_kind(a, b, "mul");
    const auto ad = a.data();
    const auto bd = b.data();
    const std::size_t n = b.size();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[kind == detail::Broadcast::Same ? i : i % n];
    return make_op("mul", a.shape(), std::move(out), {a, b}, [kind, n](Node& self) {
        auto& pa = detail::parent(self, 0);
        auto& pb = detail::parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const std::size_t j = kind == detail::Broadcast::Same ? i : i % n;
            if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[j];
            if (pb.requires_grad) pb.grad[j] += self.grad[i] * pa.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double k) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= k;
    return make_op("scale", a.shape(), std::move(out), {a}, [k](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += k * self.grad[i];
    });
}

/// a * s for a single-element tensor s.
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("scale_by: factor must have one element, got " + shape_str(s.shape()));
    const double k = s.item();
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= k;
    return make_op("scale_by", a.shape(), std::move(out), {a, s}, [](Node& self) {
        auto& pa = detail::parent(self, 0);
        auto& ps = detail::parent(self, 1);
        const double k = ps.value[0];
        double acc = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += k * self.grad[i];
            acc += pa.value[i] * self.grad[i];
        }
        if (ps.requires_grad) ps.grad[0] += acc;
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return make_op("relu", a.shape(), std::move(out), {a}, [](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (pa.value[i] > 0.0) pa.grad[i] += self.grad[i];
    });
}

inline Tensor elu(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v = v > 0.0 ? v : std::expm1(v);
    return make_op("elu", a.shape(), std::move(out), {a}, [](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * (pa.value[i] > 0.0 ? 1.0 : self.value[i] + 1.0);
    });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_op("sum", {1}, {s}, {a}, [](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (auto& g : pa.grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double n = static_cast<double>(a.size());
    return make_op("mean", {1}, {s / n}, {a}, [n](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (auto& g : pa.grad) g += self.grad[0] / n;
    });
}

/// Column means of a matrix, as a [1 x cols] row.
inline Tensor mean_rows(const Tensor& a) {
    detail::require_rank2(a, "mean_rows");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(c, 0.0);
    const auto ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += ad[i * c + j];
    for (auto& v : out) v /= static_cast<double>(r);
    return make_op("mean_rows", {1, c}, std::move(out), {a}, [r, c](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[j] / static_cast<double>(r);
    });
}

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.size() != target.size())
        throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const auto p = pred.data();
    const auto t = target.data();
    const double n = static_cast<double>(pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
    return make_op("mse_loss", {1}, {s / n}, {pred, target}, [n](Node& self) {
        auto& pp = detail::parent(self, 0);
        auto& pt = detail::parent(self, 1);
        const double g = self.grad[0] * 2.0 / n;
        for (std::size_t i = 0; i < pp.value.size(); ++i) {
            const double d = pp.value[i] - pt.value[i];
            if (pp.requires_grad) pp.grad[i] += g * d;
            if (pt.requires_grad) pt.grad[i] -= g * d;
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        auto& pa = detail::parent(self, 0);
        auto& pb = detail::parent(self, 1);
        const double* g = self.grad.data();
        if (pa.requires_grad) {
            // dA = G * B^T
            const double* bv = pb.value.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* gi = g + i * n;
                    const double* bp = bv + p * n;
                    for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
                    pa.grad[i * k + p] += acc;
                }
        }
        if (pb.requires_grad) {
            // dB = A^T * G
            const double* av = pa.value.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    double* dbp = pb.grad.data() + p * n;
                    const double* gi = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) dbp[j] += aip * gi[j];
                }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    const auto ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
    return make_op("transpose", {c, r}, std::move(out), {a}, [r, c](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[j * r + i];
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape shape = parts.front().shape();
    if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(shape));
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != shape.size()) throw ShapeError("concat: rank mismatch");
        probe[axis] = shape[axis];
        if (probe != shape)
            throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(shape) +
                             " along axis " + std::to_string(axis));
        total += p.shape()[axis];
    }
    shape[axis] = total;
    const auto split = detail::split_axis(shape, axis, "concat");
    std::vector<double> out(numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t ext = p.shape()[axis];
        const auto pd = p.data();
        for (std::size_t o = 0; o < split.outer; ++o)
            std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * ext * split.inner), ext * split.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * split.inner));
        off += ext;
    }
    return make_op("concat", shape, std::move(out), parts, [split, total, offsets, axis](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            const std::size_t ext = p.shape[axis];
            for (std::size_t o = 0; o < split.outer; ++o)
                for (std::size_t i = 0; i < ext * split.inner; ++i)
                    p.grad[o * ext * split.inner + i] += self.grad[(o * total + offsets[k]) * split.inner + i];
        }
    });
}

/// Half-open range [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto split = detail::split_axis(a.shape(), axis, "slice");
    if (begin >= end || end > split.extent)
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(a.shape()) + " axis " + std::to_string(axis));
    Shape shape = a.shape();
    shape[axis] = end - begin;
    const std::size_t ext = end - begin;
    std::vector<double> out(numel(shape));
    const auto ad = a.data();
    for (std::size_t o = 0; o < split.outer; ++o)
        std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>((o * split.extent + begin) * split.inner),
                    ext * split.inner, out.begin() + static_cast<std::ptrdiff_t>(o * ext * split.inner));
    return make_op("slice", shape, std::move(out), {a}, [split, begin, ext](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t o = 0; o < split.outer; ++o)
            for (std::size_t i = 0; i < ext * split.inner; ++i)
                pa.grad[(o * split.extent + begin) * split.inner + i] += self.grad[o * ext * split.inner + i];
    });
}

/// Flat-index gather; the result is a vector of `indices.size()` elements.
inline Tensor gather(const Tensor& a, std::vector<std::size_t> indices) {
    std::vector<double> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        if (i >= a.size()) throw ShapeError("gather: index " + std::to_string(i) + " out of range");
        out.push_back(a.data()[i]);
    }
    const std::size_t k = indices.size();
    return make_op("gather", {k}, std::move(out), {a}, [indices = std::move(indices)](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t j = 0; j < indices.size(); ++j) pa.grad[indices[j]] += self.grad[j];
    });
}

inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> rows) {
    detail::require_rank2(a, "gather_rows");
    const std::size_t c = a.cols();
    std::vector<double> out;
    out.reserve(rows.size() * c);
    for (auto r : rows) {
        if (r >= a.rows()) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range");
        auto row = a.data().subspan(r * c, c);
        out.insert(out.end(), row.begin(), row.end());
    }
    const std::size_t k = rows.size();
    return make_op("gather_rows", {k, c}, std::move(out), {a}, [rows = std::move(rows), c](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t j = 0; j < rows.size(); ++j)
            for (std::size_t q = 0; q < c; ++q) pa.grad[rows[j] * c + q] += self.grad[j * c + q];
    });
}

/// Builds an [n x c] matrix whose row `rows[j]` is `selected[j]` and whose
/// remaining rows all equal the single row `fill`.
inline Tensor assemble_rows(const Tensor& fill, const Tensor& selected, const std::vector<std::size_t>& rows,
                            std::size_t n) {
    detail::require_rank2(fill, "assemble_rows");
    detail::require_rank2(selected, "assemble_rows");
    const std::size_t c = fill.cols();
    if (fill.rows() != 1 || selected.cols() != c || selected.rows() != rows.size())
        throw ShapeError("assemble_rows: fill " + shape_str(fill.shape()) + ", selected " +
                         shape_str(selected.shape()));
    std::vector<long> source(n, -1);
    for (std::size_t j = 0; j < rows.size(); ++j) {
        if (rows[j] >= n) throw ShapeError("assemble_rows: row index out of range");
        source[rows[j]] = static_cast<long>(j);
    }
    std::vector<double> out(n * c);
    for (std::size_t r = 0; r < n; ++r) {
        auto src = source[r] < 0 ? fill.data() : selected.data().subspan(static_cast<std::size_t>(source[r]) * c, c);
        std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    return make_op("assemble_rows", {n, c}, std::move(out), {fill, selected}, [source, c](Node& self) {
        auto& pf = detail::parent(self, 0);
        auto& ps = detail::parent(self, 1);
        for (std::size_t r = 0; r < source.size(); ++r) {
            for (std::size_t q = 0; q < c; ++q) {
                const double g = self.grad[r * c + q];
                if (source[r] < 0) {
                    if (pf.requires_grad) pf.grad[q] += g;
                } else if (ps.requires_grad) {
                    ps.grad[static_cast<std::size_t>(source[r]) * c + q] += g;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Normalisation

inline Tensor softmax(const Tensor& a, std::size_t axis) {
    const auto split = detail::split_axis(a.shape(), axis, "softmax");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t in = 0; in < split.inner; ++in) {
            const std::size_t base = o * split.extent * split.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t e = 0; e < split.extent; ++e) mx = std::max(mx, out[base + e * split.inner]);
            double z = 0.0;
            for (std::size_t e = 0; e < split.extent; ++e) {
                auto& v = out[base + e * split.inner];
                v = std::exp(v - mx);
                z += v;
            }
            for (std::size_t e = 0; e < split.extent; ++e) out[base + e * split.inner] /= z;
        }
    return make_op("softmax", a.shape(), std::move(out), {a}, [split](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t o = 0; o < split.outer; ++o)
            for (std::size_t in = 0; in < split.inner; ++in) {
                const std::size_t base = o * split.extent * split.inner + in;
                double dot = 0.0;
                for (std::size_t e = 0; e < split.extent; ++e) {
                    const std::size_t i = base + e * split.inner;
                    dot += self.grad[i] * self.value[i];
                }
                for (std::size_t e = 0; e < split.extent; ++e) {
                    const std::size_t i = base + e * split.inner;
                    pa.grad[i] += self.value[i] * (self.grad[i] - dot);
                }
            }
    });
}

inline constexpr double kLayerNormEps = 1e-9;

/// Normalises each slice along the last axis to zero mean and unit variance (no affine).
inline Tensor layer_norm(const Tensor& a) {
    const std::size_t c = a.shape().back();
    const std::size_t r = a.size() / c;
    std::vector<double> out(a.size());
    std::vector<double> inv_std(r);
    const auto ad = a.data();
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += ad[i * c + j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (ad[i * c + j] - mu) * (ad[i * c + j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (ad[i * c + j] - mu) * inv_std[i];
    }
    return make_op("layer_norm", a.shape(), std::move(out), {a}, [r, c, inv_std](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t i = 0; i < r; ++i) {
            double gmean = 0.0, gymean = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                gmean += self.grad[i * c + j];
                gymean += self.grad[i * c + j] * self.value[i * c + j];
            }
            gmean /= static_cast<double>(c);
            gymean /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j)
                pa.grad[i * c + j] +=
                    inv_std[i] * (self.grad[i * c + j] - gmean - self.value[i * c + j] * gymean);
        }
    });
}

// ---------------------------------------------------------------------------
// Sequence ops (rows are time steps)

/// Max over a width-3 window at stride 2 with one row of -inf padding on each
/// side; the output has ceil(rows/2) rows.
inline Tensor max_pool_rows(const Tensor& a) {
    detail::require_rank2(a, "max_pool_rows");
    const std::size_t r = a.rows(), c = a.cols();
    if (r < 2) throw ShapeError("max_pool_rows: need at least 2 rows, got " + shape_str(a.shape()));
    const std::size_t out_r = (r + 1) / 2;
    std::vector<double> out(out_r * c);
    std::vector<std::size_t> argmax(out_r * c);
    const auto ad = a.data();
    for (std::size_t o = 0; o < out_r; ++o) {
        const long centre = static_cast<long>(2 * o);
        for (std::size_t j = 0; j < c; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t where = 0;
            for (long t = centre - 1; t <= centre + 1; ++t) {
                if (t < 0 || t >= static_cast<long>(r)) continue;
                const double v = ad[static_cast<std::size_t>(t) * c + j];
                if (v > best) {
                    best = v;
                    where = static_cast<std::size_t>(t);
                }
            }
            out[o * c + j] = best;
            argmax[o * c + j] = where * c + j;
        }
    }
    return make_op("max_pool_rows", {out_r, c}, std::move(out), {a}, [argmax](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t i = 0; i < argmax.size(); ++i) pa.grad[argmax[i]] += self.grad[i];
    });
}

/// Circular advance: out[t] = a[(t + shift) mod rows].
inline Tensor roll_rows(const Tensor& a, std::size_t shift) {
    detail::require_rank2(a, "roll_rows");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    const auto ad = a.data();
    for (std::size_t t = 0; t < r; ++t)
        std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>(((t + shift) % r) * c), c,
                    out.begin() + static_cast<std::ptrdiff_t>(t * c));
    return make_op("roll_rows", a.shape(), std::move(out), {a}, [r, c, shift](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t t = 0; t < r; ++t)
            for (std::size_t j = 0; j < c; ++j) pa.grad[((t + shift) % r) * c + j] += self.grad[t * c + j];
    });
}

/// Centred moving average over rows with edge-replication padding. `kernel` must be odd.
inline Tensor moving_average_rows(const Tensor& a, std::size_t kernel) {
    detail::require_rank2(a, "moving_average_rows");
    if (kernel % 2 == 0) throw ConfigError("moving average kernel must be odd, got " + std::to_string(kernel));
    const std::size_t r = a.rows(), c = a.cols();
    const long half = static_cast<long>(kernel / 2);
    auto clamp_row = [r](long t) { return static_cast<std::size_t>(std::clamp(t, 0L, static_cast<long>(r) - 1)); };
    std::vector<double> out(r * c, 0.0);
    const auto ad = a.data();
    const double inv = 1.0 / static_cast<double>(kernel);
    for (std::size_t t = 0; t < r; ++t)
        for (long d = -half; d <= half; ++d) {
            const std::size_t src = clamp_row(static_cast<long>(t) + d);
            for (std::size_t j = 0; j < c; ++j) out[t * c + j] += ad[src * c + j] * inv;
        }
    return make_op("moving_average_rows", a.shape(), std::move(out), {a}, [r, c, half, inv, clamp_row](Node& self) {
        auto& pa = detail::parent(self, 0);
        for (std::size_t t = 0; t < r; ++t)
            for (long d = -half; d <= half; ++d) {
                const std::size_t src = clamp_row(static_cast<long>(t) + d);
                for (std::size_t j = 0; j < c; ++j) pa.grad[src * c + j] += self.grad[t * c + j] * inv;
            }
    });
}

}  // namespace migcast::ad
