#pragma once

// Attention-transfer loss between teacher/student activation taps, the two
// cross-entropy variants, and the combined objective total = ce + at/beta.

#include "atx/tensor.hpp"

namespace atx {

enum class TaskKind { multilabel_binary, multiclass };

inline const char* task_name(TaskKind t) {
    return t == TaskKind::multilabel_binary ? "multilabel_binary" : "multiclass";
}

// Mean over batch and feature planes of || s_hat - t_hat ||_2, where each
// plane is vectorized and l2-normalized with denominator max(||q||, eps).
// Value lies in [0, 2]. The teacher tap is a constant: it must not carry
// gradient requirements.
template <typename T>
Tensor<T> attention_loss(const Tensor<T>& student, const Tensor<T>& teacher, T eps = T(1e-8)) {
    if (student.rank() != 4 || teacher.rank() != 4)
        throw std::invalid_argument("attention_loss: taps must be [N,C,H,W], got " +
                                    shape_str(student.shape()) + " and " + shape_str(teacher.shape()));
    if (student.shape() != teacher.shape())
        throw std::invalid_argument("attention_loss: tap shape mismatch, student " +
                                    shape_str(student.shape()) + " vs teacher " + shape_str(teacher.shape()));
    if (eps <= T(0)) throw std::invalid_argument("attention_loss: eps must be positive");
    if (teacher.requires_grad())
        throw std::invalid_argument("attention_loss: teacher tap must not require grad");
    if (!student.all_finite() || !teacher.all_finite())
        throw std::runtime_error("attention_loss: non-finite activations");

    const int n = student.dim(0), c = student.dim(1);
    const int64_t hw = static_cast<int64_t>(student.dim(2)) * student.dim(3);
    const T inv_nc = T(1) / static_cast<T>(static_cast<int64_t>(n) * c);

    // saved per plane: student norm (pre-clamp), unit vectors come from data
    std::vector<T> s_norm(static_cast<size_t>(n) * c), t_unit(student.size()), dists(static_cast<size_t>(n) * c);
    double total = 0;
    for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
        const T* qs = student.raw() + p * hw;
        const T* qt = teacher.raw() + p * hw;
        double ns = 0, nt = 0;
        for (int64_t i = 0; i < hw; ++i) {
            ns += static_cast<double>(qs[i]) * qs[i];
            nt += static_cast<double>(qt[i]) * qt[i];
        }
        ns = std::sqrt(ns);
        nt = std::sqrt(nt);
        const double rs = std::max(ns, static_cast<double>(eps));
        const double rt = std::max(nt, static_cast<double>(eps));
        s_norm[p] = static_cast<T>(ns);
        double d2 = 0;
        for (int64_t i = 0; i < hw; ++i) {
            double tu = qt[i] / rt;
            t_unit[p * hw + i] = static_cast<T>(tu);
            double diff = qs[i] / rs - tu;
            d2 += diff * diff;
        }
        double d = std::sqrt(d2);
        dists[p] = static_cast<T>(d);
        total += d;
    }
    const T loss = static_cast<T>(total) * inv_nc;

    auto ps = student.impl();
    auto fn = [ps, s_norm = std::move(s_norm), t_unit = std::move(t_unit),
               dists = std::move(dists), n, c, hw, eps, inv_nc](detail::TensorImpl<T>& self) {
        if (!ps->requires_grad) return;
        ps->ensure_grad();
        const T gout = self.grad[0];
        for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
            const T d = dists[p];
            if (d <= T(0)) continue;  // student == teacher plane: subgradient 0
            const T* qs = ps->data.data() + p * hw;
            const T* tu = t_unit.data() + p * hw;
            const double rs = std::max(static_cast<double>(s_norm[p]), static_cast<double>(eps));
            const T coef = gout * inv_nc / d;
            if (static_cast<double>(s_norm[p]) > static_cast<double>(eps)) {
                // u = q/||q||: du/dq = (I - u u^T)/||q||
                double udot = 0;  // u . (u - v)
                for (int64_t i = 0; i < hw; ++i) {
                    double u = qs[i] / rs;
                    udot += u * (u - tu[i]);
                }
                for (int64_t i = 0; i < hw; ++i) {
                    double u = qs[i] / rs;
                    ps->grad[p * hw + i] += coef * static_cast<T>(((u - tu[i]) - u * udot) / rs);
                }
            } else {
                // u = q/eps: constant denominator
                for (int64_t i = 0; i < hw; ++i) {
                    double u = qs[i] / rs;
                    ps->grad[p * hw + i] += coef * static_cast<T>((u - tu[i]) / rs);
                }
            }
        }
    };
    return Tensor<T>::make_node({1}, {loss}, {student}, "attention_loss", fn);
}

// Multilabel: mean over batch*labels of binary CE on sigmoid(logits), in the
// stable softplus form. Multiclass: mean over batch of -log softmax(target),
// log-sum-exp shifted. Multiclass targets are a [N] tensor of whole-number
// class indices.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets, TaskKind task) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy: logits must be [N,K], got " + shape_str(logits.shape()));
    const int n = logits.dim(0), k = logits.dim(1);
    auto softplus = [](double z) {  // log(1 + e^z)
        return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    };
    if (task == TaskKind::multilabel_binary) {
        if (targets.shape() != logits.shape())
            throw std::invalid_argument("cross_entropy: multilabel targets must match logits shape " +
                                        shape_str(logits.shape()) + ", got " + shape_str(targets.shape()));
        for (int64_t i = 0; i < targets.size(); ++i) {
            T y = targets.raw()[i];
            if (y != T(0) && y != T(1))
                throw std::invalid_argument("cross_entropy: multilabel target out of range {0,1}: " +
                                            std::to_string(static_cast<double>(y)));
        }
        double acc = 0;
        for (int64_t i = 0; i < logits.size(); ++i) {
            double z = logits.raw()[i], y = targets.raw()[i];
            acc += softplus(z) - z * y;  // = -y log s - (1-y) log(1-s)
        }
        const T inv = T(1) / static_cast<T>(logits.size());
        const T loss = static_cast<T>(acc) * inv;
        auto pl = logits.impl();
        auto pt = targets.impl();
        return Tensor<T>::make_node({1}, {loss}, {logits}, "bce",
            [pl, pt, inv](detail::TensorImpl<T>& self) {
                if (!pl->requires_grad) return;
                pl->ensure_grad();
                const T g = self.grad[0] * inv;
                for (size_t i = 0; i < pl->data.size(); ++i)
                    pl->grad[i] += g * (stable_sigmoid(pl->data[i]) - pt->data[i]);
            });
    }
    // multiclass
    if (targets.rank() != 1 || targets.dim(0) != n)
        throw std::invalid_argument("cross_entropy: multiclass targets must be [N]=" + std::to_string(n) +
                                    ", got " + shape_str(targets.shape()));
    std::vector<int> cls(n);
    for (int i = 0; i < n; ++i) {
        double y = targets.raw()[i];
        if (y != std::floor(y) || y < 0 || y >= k)
            throw std::invalid_argument("cross_entropy: multiclass target out of range [0," +
                                        std::to_string(k) + "): " + std::to_string(y));
        cls[i] = static_cast<int>(y);
    }
    double acc = 0;
    std::vector<T> probs(logits.size());
    for (int i = 0; i < n; ++i) {
        const T* z = logits.raw() + static_cast<int64_t>(i) * k;
        double m = z[0];
        for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(z[j]));
        double se = 0;
        for (int j = 0; j < k; ++j) se += std::exp(z[j] - m);
        double lse = m + std::log(se);
        acc += lse - z[cls[i]];
        for (int j = 0; j < k; ++j) probs[static_cast<int64_t>(i) * k + j] = static_cast<T>(std::exp(z[j] - lse));
    }
    const T inv = T(1) / static_cast<T>(n);
    const T loss = static_cast<T>(acc) * inv;
    auto pl = logits.impl();
    return Tensor<T>::make_node({1}, {loss}, {logits}, "softmax_ce",
        [pl, probs = std::move(probs), cls = std::move(cls), k, inv](detail::TensorImpl<T>& self) {
            if (!pl->requires_grad) return;
            pl->ensure_grad();
            const T g = self.grad[0] * inv;
            const int n = static_cast<int>(cls.size());
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) {
                    T p = probs[static_cast<int64_t>(i) * k + j];
                    pl->grad[static_cast<int64_t>(i) * k + j] += g * (p - (j == cls[i] ? T(1) : T(0)));
                }
        });
}

// Combined objective of attention transfer: total = ce + at / beta.
template <typename T>
struct LossBreakdown {
    Tensor<T> ce;
    Tensor<T> at;
    Tensor<T> total;
    double beta = 0;

    double ce_value() const { return static_cast<double>(ce.value()); }
    double at_value() const { return at.defined() ? static_cast<double>(at.value()) : 0.0; }
    double total_value() const { return static_cast<double>(total.value()); }
};

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& logits, const Tensor<T>& targets,
                            const Tensor<T>& student_tap, const Tensor<T>& teacher_tap,
                            double beta, TaskKind task) {
    if (beta <= 0) throw std::invalid_argument("total_loss: beta must be positive, got " + std::to_string(beta));
    LossBreakdown<T> out;
    out.beta = beta;
    out.ce = cross_entropy(logits, targets, task);
    out.at = attention_loss(student_tap, teacher_tap);
    out.total = add(out.ce, scale(out.at, static_cast<T>(1.0 / beta)));
    return out;
}

}  // namespace atx
