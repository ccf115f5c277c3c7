#pragma once

// Dense N-d tensor with reverse-mode autodiff over a dynamically recorded
// graph. Scalar type is a template parameter: float for training, double for
// gradient checks. Single logical thread per graph; see NoGradGuard for
// recording control.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace atx {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Thread-local switch: when disabled, ops record no graph (teacher forward,
// validation, finite-difference probes).
class GradMode {
public:
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev; }
};

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    bool is_leaf = true;
    bool backward_done = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Accumulates into parents' grads, reading this->grad.
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using Impl = detail::TensorImpl<T>;

    Tensor() = default;

    static Tensor from(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        return t;
    }

    static Tensor full(const Shape& shape, T v) {
        return from(shape, std::vector<T>(shape_numel(shape), v));
    }
    static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }
    static Tensor ones(const Shape& shape) { return full(shape, T(1)); }
    static Tensor scalar(T v) { return from({1}, {v}); }

    static Tensor randn(const Shape& shape, std::mt19937& rng, T stddev = T(1)) {
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<T> d(shape_numel(shape));
        for (auto& x : d) x = static_cast<T>(dist(rng)) * stddev;
        return from(shape, std::move(d));
    }

    static Tensor uniform(const Shape& shape, std::mt19937& rng, T lo, T hi) {
        std::uniform_real_distribution<double> dist(lo, hi);
        std::vector<T> d(shape_numel(shape));
        for (auto& x : d) x = static_cast<T>(dist(rng));
        return from(shape, std::move(d));
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape.at(i); }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

    std::vector<T>& data() { return impl_->data; }
    const std::vector<T>& data() const { return impl_->data; }
    T* raw() { return impl_->data.data(); }
    const T* raw() const { return impl_->data.data(); }

    T value() const {
        if (size() != 1) throw std::runtime_error("value() requires a scalar tensor, got " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        if (!impl_->is_leaf && b == false)
            throw std::runtime_error("cannot clear requires_grad on a non-leaf tensor");
        impl_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw std::runtime_error("tensor has no gradient (backward not run or not required)");
        return impl_->grad;
    }
    void zero_grad() {
        if (impl_) impl_->grad.clear();
    }

    const char* op() const { return impl_->op; }
    bool is_leaf() const { return impl_->is_leaf; }

    bool all_finite() const {
        for (T v : impl_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Reverse-mode sweep from a scalar root. Visits each recorded node once
    // (reverse topological order); releases the graph afterwards, so a second
    // sweep through the same nodes is an error (no double backward).
    void backward() const {
        if (size() != 1) throw std::runtime_error("backward() requires a scalar loss, got " + shape_str(shape()));
        if (!impl_->requires_grad)
            throw std::runtime_error("backward() on a tensor that does not require grad");
        if (impl_->backward_done) throw std::runtime_error("backward() already called on this graph root");
        if (!impl_->is_leaf && !impl_->backward_fn)
            throw std::runtime_error("graph already consumed by a previous backward (double backward unsupported)");

        // The order holds owning references: releasing a node's parent links
        // below must not destroy impls still pending in the sweep.
        std::vector<std::shared_ptr<Impl>> order;
        topo_sort(impl_, order);
        impl_->ensure_grad();
        impl_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Impl* node = it->get();
            if (node->backward_fn && !node->grad.empty()) {
                node->backward_fn(*node);
            }
            if (!node->is_leaf) {
                node->backward_fn = nullptr;  // release saved buffers
                node->parents.clear();
            }
        }
        impl_->backward_done = true;
    }

    // Graph-building entry used by every op. `fn` receives the output impl
    // (holding the upstream grad) and accumulates into the parents.
    static Tensor make_node(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                            const char* op, std::function<void(Impl&)> fn) {
        Tensor out = from(std::move(shape), std::move(data));
        bool track = GradMode::enabled();
        bool any = false;
        if (track)
            for (const auto& in : inputs)
                if (in.requires_grad()) { any = true; break; }
        if (track && any) {
            out.impl_->requires_grad = true;
            out.impl_->is_leaf = false;
            out.impl_->op = op;
            for (auto& in : inputs) out.impl_->parents.push_back(in.impl_);
            out.impl_->backward_fn = std::move(fn);
        }
        return out;
    }

    std::shared_ptr<Impl> impl() const { return impl_; }

    static void accumulate(const std::shared_ptr<Impl>& node, int64_t i, T v) {
        node->ensure_grad();
        node->grad[static_cast<size_t>(i)] += v;
    }

private:
    std::shared_ptr<Impl> impl_;

    static void topo_sort(const std::shared_ptr<Impl>& root, std::vector<std::shared_ptr<Impl>>& order) {
        // Iterative post-order DFS; order ends leaves-first, root last.
        std::unordered_set<Impl*> visited;
        std::vector<std::pair<std::shared_ptr<Impl>, size_t>> stack;
        stack.push_back({root, 0});
        visited.insert(root.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                std::shared_ptr<Impl> p = node->parents[idx++];
                if (p->requires_grad && !visited.count(p.get())) {
                    visited.insert(p.get());
                    stack.push_back({std::move(p), 0});
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// Elementwise / structural ops. Shapes are strict: no implicit broadcasting.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.raw()[i] + b.raw()[i];
    auto pa = a.impl(), pb = b.impl();
    return Tensor<T>::make_node(a.shape(), std::move(out), {a, b}, "add",
        [pa, pb](detail::TensorImpl<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
            }
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.raw()[i] - b.raw()[i];
    auto pa = a.impl(), pb = b.impl();
    return Tensor<T>::make_node(a.shape(), std::move(out), {a, b}, "sub",
        [pa, pb](detail::TensorImpl<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.raw()[i] * b.raw()[i];
    auto pa = a.impl(), pb = b.impl();
    return Tensor<T>::make_node(a.shape(), std::move(out), {a, b}, "mul",
        [pa, pb](detail::TensorImpl<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
            }
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.raw()[i] * c;
    auto pa = a.impl();
    return Tensor<T>::make_node(a.shape(), std::move(out), {a}, "scale",
        [pa, c](detail::TensorImpl<T>& self) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
        });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.raw()[i] * a.raw()[i];
    auto pa = a.impl();
    return Tensor<T>::make_node(a.shape(), std::move(out), {a}, "square",
        [pa](detail::TensorImpl<T>& self) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += T(2) * pa->data[i] * self.grad[i];
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.raw()[i];
    auto pa = a.impl();
    return Tensor<T>::make_node({1}, {acc}, {a}, "sum",
        [pa](detail::TensorImpl<T>& self) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            T g = self.grad[0];
            for (auto& v : pa->grad) v += g;
        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    T acc = 0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.raw()[i];
    T inv = T(1) / static_cast<T>(a.size());
    auto pa = a.impl();
    return Tensor<T>::make_node({1}, {acc * inv}, {a}, "mean",
        [pa, inv](detail::TensorImpl<T>& self) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            T g = self.grad[0] * inv;
            for (auto& v : pa->grad) v += g;
        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a.raw()[i] > T(0) ? a.raw()[i] : T(0);
    auto pa = a.impl();
    return Tensor<T>::make_node(a.shape(), std::move(out), {a}, "relu",
        [pa](detail::TensorImpl<T>& self) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (pa->data[i] > T(0)) pa->grad[i] += self.grad[i];
        });
}

template <typename T>
inline T stable_sigmoid(T x) {
    T s;
    if (x >= T(0)) {
        T e = std::exp(-x);
        s = T(1) / (T(1) + e);
    } else {
        T e = std::exp(x);
        s = e / (T(1) + e);
    }
    // outputs stay strictly inside (0,1); saturation would otherwise hit the
    // endpoints for |x| beyond the precision range
    const T lo = std::numeric_limits<T>::min();
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    return std::min(std::max(s, lo), hi);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = stable_sigmoid(a.raw()[i]);
    auto pa = a.impl();
    std::vector<T> saved = out;
    return Tensor<T>::make_node(a.shape(), std::move(out), {a}, "sigmoid",
        [pa, saved = std::move(saved)](detail::TensorImpl<T>& self) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                T s = saved[i];
                pa->grad[i] += self.grad[i] * s * (T(1) - s);
            }
        });
}

// Softmax over the last axis, max-shifted for stability.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
    if (a.rank() < 1) throw std::invalid_argument("softmax: rank >= 1 required");
    int64_t cols = a.shape().back();
    int64_t rows = a.size() / cols;
    std::vector<T> out(a.size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* x = a.raw() + r * cols;
        T* y = out.data() + r * cols;
        T m = x[0];
        for (int64_t c = 1; c < cols; ++c) m = std::max(m, x[c]);
        T z = 0;
        for (int64_t c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - m);
            z += y[c];
        }
        for (int64_t c = 0; c < cols; ++c) y[c] /= z;
    }
    auto pa = a.impl();
    std::vector<T> saved = out;
    return Tensor<T>::make_node(a.shape(), std::move(out), {a}, "softmax",
        [pa, saved = std::move(saved), cols](detail::TensorImpl<T>& self) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            int64_t rows = static_cast<int64_t>(self.grad.size()) / cols;
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = saved.data() + r * cols;
                const T* g = self.grad.data() + r * cols;
                T dot = 0;
                for (int64_t c = 0; c < cols; ++c) dot += g[c] * y[c];
                for (int64_t c = 0; c < cols; ++c) pa->grad[r * cols + c] += y[c] * (g[c] - dot);
            }
        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(new_shape));
    auto pa = a.impl();
    std::vector<T> out = a.data();
    return Tensor<T>::make_node(std::move(new_shape), std::move(out), {a}, "reshape",
        [pa](detail::TensorImpl<T>& self) {
            if (!pa->requires_grad) return;
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        });
}

// Concatenate along the channel axis (axis 1) of [N,C,H,W] tensors.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (s0.size() != 4) throw std::invalid_argument("concat: expected 4D [N,C,H,W], got " + shape_str(s0));
    int n = s0[0], h = s0[2], w = s0[3];
    int ctotal = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != 4 || s[0] != n || s[2] != h || s[3] != w)
            throw std::invalid_argument("concat: incompatible shapes " + shape_str(s0) + " vs " + shape_str(s));
        ctotal += s[1];
    }
    int64_t plane = static_cast<int64_t>(h) * w;
    std::vector<T> out(static_cast<size_t>(n) * ctotal * plane);
    int coff = 0;
    for (const auto& p : parts) {
        int c = p.shape()[1];
        for (int in = 0; in < n; ++in) {
            const T* src = p.raw() + static_cast<int64_t>(in) * c * plane;
            T* dst = out.data() + (static_cast<int64_t>(in) * ctotal + coff) * plane;
            std::copy(src, src + static_cast<int64_t>(c) * plane, dst);
        }
        coff += c;
    }
    std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
    std::vector<int> channels;
    for (const auto& p : parts) {
        impls.push_back(p.impl());
        channels.push_back(p.shape()[1]);
    }
    return Tensor<T>::make_node({n, ctotal, h, w}, std::move(out), parts, "concat",
        [impls, channels, n, ctotal, plane](detail::TensorImpl<T>& self) {
            int coff = 0;
            for (size_t k = 0; k < impls.size(); ++k) {
                int c = channels[k];
                if (impls[k]->requires_grad) {
                    impls[k]->ensure_grad();
                    for (int in = 0; in < n; ++in) {
                        const T* g = self.grad.data() + (static_cast<int64_t>(in) * ctotal + coff) * plane;
                        T* dst = impls[k]->grad.data() + static_cast<int64_t>(in) * c * plane;
                        for (int64_t i = 0; i < static_cast<int64_t>(c) * plane; ++i) dst[i] += g[i];
                    }
                }
                coff += c;
            }
        });
}

}  // namespace atx
