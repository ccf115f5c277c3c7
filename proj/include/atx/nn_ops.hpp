#pragma once

// Convolution, pooling, affine and batch-norm kernels. conv2d/dense lower to
// an im2col + GEMM (Eigen) with hand-written backward passes; output contract
// is cross-correlation with floor((X + 2p - k)/stride) + 1 sizing.

#include <Eigen/Core>

#include "atx/tensor.hpp"

namespace atx {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

inline int conv_out_dim(int x, int k, int stride, int pad, const char* what) {
    if (k > x + 2 * pad)
        throw std::invalid_argument(std::string(what) + ": kernel " + std::to_string(k) +
                                    " exceeds padded input " + std::to_string(x + 2 * pad));
    return (x + 2 * pad - k) / stride + 1;
}

// col is (Cin*kh*kw) x (N*Ho*Wo), column-major; column index l = (n*Ho+oh)*Wo+ow.
template <typename T>
void im2col(const T* x, int n, int cin, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, T* col) {
    const int64_t krows = static_cast<int64_t>(cin) * kh * kw;
    for (int in = 0; in < n; ++in) {
        const T* img = x + static_cast<int64_t>(in) * cin * h * w;
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                T* dst = col + krows * ((static_cast<int64_t>(in) * ho + oh) * wo + ow);
                int ih0 = oh * stride - pad;
                int iw0 = ow * stride - pad;
                int64_t k = 0;
                for (int c = 0; c < cin; ++c) {
                    const T* plane = img + static_cast<int64_t>(c) * h * w;
                    for (int i = 0; i < kh; ++i) {
                        int ih = ih0 + i;
                        if (ih < 0 || ih >= h) {
                            for (int j = 0; j < kw; ++j) dst[k++] = T(0);
                            continue;
                        }
                        for (int j = 0; j < kw; ++j) {
                            int iw = iw0 + j;
                            dst[k++] = (iw >= 0 && iw < w) ? plane[ih * w + iw] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const T* col, int n, int cin, int h, int w, int kh, int kw, int stride,
                       int pad, int ho, int wo, T* dx) {
    const int64_t krows = static_cast<int64_t>(cin) * kh * kw;
    for (int in = 0; in < n; ++in) {
        T* img = dx + static_cast<int64_t>(in) * cin * h * w;
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                const T* src = col + krows * ((static_cast<int64_t>(in) * ho + oh) * wo + ow);
                int ih0 = oh * stride - pad;
                int iw0 = ow * stride - pad;
                int64_t k = 0;
                for (int c = 0; c < cin; ++c) {
                    T* plane = img + static_cast<int64_t>(c) * h * w;
                    for (int i = 0; i < kh; ++i) {
                        int ih = ih0 + i;
                        if (ih < 0 || ih >= h) {
                            k += kw;
                            continue;
                        }
                        for (int j = 0; j < kw; ++j) {
                            int iw = iw0 + j;
                            if (iw >= 0 && iw < w) plane[ih * w + iw] += src[k];
                            ++k;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], optional bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int stride, int padding) {
    if (input.rank() != 4) throw std::invalid_argument("conv2d: input must be [N,Cin,H,W], got " + shape_str(input.shape()));
    if (weight.rank() != 4) throw std::invalid_argument("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(weight.shape()));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(cin) +
                                    " do not match weight channels " + std::to_string(weight.dim(1)) +
                                    " (input " + shape_str(input.shape()) + ", weight " + shape_str(weight.shape()) + ")");
    if (bias && bias->shape() != Shape{cout})
        throw std::invalid_argument("conv2d: bias must be [Cout]=" + std::to_string(cout) + ", got " + shape_str(bias->shape()));
    const int ho = detail::conv_out_dim(h, kh, stride, padding, "conv2d");
    const int wo = detail::conv_out_dim(w, kw, stride, padding, "conv2d");

    const int64_t krows = static_cast<int64_t>(cin) * kh * kw;
    const int64_t lcols = static_cast<int64_t>(n) * ho * wo;
    std::vector<T> col(static_cast<size_t>(krows * lcols));
    detail::im2col(input.raw(), n, cin, h, w, kh, kw, stride, padding, ho, wo, col.data());

    // y_mat (Cout x L) = weight_mat (Cout x K) * col (K x L)
    std::vector<T> ymat(static_cast<size_t>(cout) * lcols);
    {
        detail::ECMap<T> wm(weight.raw(), krows, cout);  // stored row-major [Cout,K] == colmajor K x Cout
        detail::ECMap<T> cm(col.data(), krows, lcols);
        detail::EMap<T> ym(ymat.data(), cout, lcols);
        ym.noalias() = wm.transpose() * cm;
    }
    std::vector<T> out(static_cast<size_t>(n) * cout * ho * wo);
    const int64_t plane = static_cast<int64_t>(ho) * wo;
    for (int in = 0; in < n; ++in)
        for (int c = 0; c < cout; ++c) {
            const T b = bias ? bias->raw()[c] : T(0);
            for (int64_t p = 0; p < plane; ++p)
                out[(static_cast<int64_t>(in) * cout + c) * plane + p] =
                    ymat[c + static_cast<int64_t>(cout) * (in * plane + p)] + b;
        }

    std::vector<Tensor<T>> inputs{input, weight};
    if (bias) inputs.push_back(*bias);
    auto px = input.impl();
    auto pw = weight.impl();
    auto pb = bias ? bias->impl() : nullptr;
    auto fn = [px, pw, pb, n, cin, h, w, cout, kh, kw, stride, padding, ho, wo](
                  detail::TensorImpl<T>& self) {
        const int64_t krows = static_cast<int64_t>(cin) * kh * kw;
        const int64_t lcols = static_cast<int64_t>(n) * ho * wo;
        const int64_t plane = static_cast<int64_t>(ho) * wo;
        // gather upstream grad into (Cout x L) layout
        std::vector<T> gmat(static_cast<size_t>(cout) * lcols);
        for (int in = 0; in < n; ++in)
            for (int c = 0; c < cout; ++c)
                for (int64_t p = 0; p < plane; ++p)
                    gmat[c + static_cast<int64_t>(cout) * (in * plane + p)] =
                        self.grad[(static_cast<int64_t>(in) * cout + c) * plane + p];
        detail::ECMap<T> gm(gmat.data(), cout, lcols);
        if (pw->requires_grad || px->requires_grad) {
            std::vector<T> col(static_cast<size_t>(krows * lcols));
            detail::im2col(px->data.data(), n, cin, h, w, kh, kw, stride, padding, ho, wo, col.data());
            detail::ECMap<T> cm(col.data(), krows, lcols);
            if (pw->requires_grad) {
                pw->ensure_grad();
                detail::EMap<T> gw(pw->grad.data(), krows, cout);
                gw.noalias() += cm * gm.transpose();
            }
            if (px->requires_grad) {
                px->ensure_grad();
                std::vector<T> gcol(static_cast<size_t>(krows * lcols));
                detail::ECMap<T> wm(pw->data.data(), krows, cout);
                detail::EMap<T> gc(gcol.data(), krows, lcols);
                gc.noalias() = wm * gm;
                detail::col2im_accumulate(gcol.data(), n, cin, h, w, kh, kw, stride, padding, ho,
                                          wo, px->grad.data());
            }
        }
        if (pb && pb->requires_grad) {
            pb->ensure_grad();
            for (int c = 0; c < cout; ++c) {
                T acc = 0;
                for (int64_t l = 0; l < lcols; ++l) acc += gmat[c + static_cast<int64_t>(cout) * l];
                pb->grad[c] += acc;
            }
        }
    };
    return Tensor<T>::make_node({n, cout, ho, wo}, std::move(out), std::move(inputs), "conv2d", fn);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
    return conv2d(input, weight, &bias, stride, padding);
}
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int padding) {
    return conv2d(input, weight, static_cast<const Tensor<T>*>(nullptr), stride, padding);
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int kernel, int stride, int padding = 0) {
    if (input.rank() != 4) throw std::invalid_argument("max_pool2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
    if (stride < 1) throw std::invalid_argument("max_pool2d: stride must be >= 1");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int ho = detail::conv_out_dim(h, kernel, stride, padding, "max_pool2d");
    const int wo = detail::conv_out_dim(w, kernel, stride, padding, "max_pool2d");
    std::vector<T> out(static_cast<size_t>(n) * c * ho * wo);
    std::vector<int32_t> argmax(out.size());  // flat input index inside each [H,W] plane
    int64_t o = 0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const T* plane = input.raw() + (static_cast<int64_t>(in) * c + ic) * h * w;
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    int32_t bestidx = -1;
                    for (int i = 0; i < kernel; ++i) {
                        int ih = oh * stride - padding + i;
                        if (ih < 0 || ih >= h) continue;
                        for (int j = 0; j < kernel; ++j) {
                            int iw = ow * stride - padding + j;
                            if (iw < 0 || iw >= w) continue;
                            T v = plane[ih * w + iw];
                            if (v > best) { best = v; bestidx = ih * w + iw; }
                        }
                    }
                    if (bestidx < 0) { best = T(0); }  // window fully in padding
                    out[o] = best;
                    argmax[o] = bestidx;
                }
        }
    auto px = input.impl();
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t ohw = static_cast<int64_t>(ho) * wo;
    return Tensor<T>::make_node({n, c, ho, wo}, std::move(out), {input}, "max_pool2d",
        [px, argmax = std::move(argmax), n, c, hw, ohw](detail::TensorImpl<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
                T* gplane = px->grad.data() + nc * hw;
                for (int64_t p = 0; p < ohw; ++p) {
                    int32_t idx = argmax[nc * ohw + p];
                    if (idx >= 0) gplane[idx] += self.grad[nc * ohw + p];
                }
            }
        });
}

// Average pooling; padded cells count as zeros and the divisor is kernel*kernel.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int kernel, int stride, int padding = 0) {
    if (input.rank() != 4) throw std::invalid_argument("avg_pool2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
    if (stride < 1) throw std::invalid_argument("avg_pool2d: stride must be >= 1");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int ho = detail::conv_out_dim(h, kernel, stride, padding, "avg_pool2d");
    const int wo = detail::conv_out_dim(w, kernel, stride, padding, "avg_pool2d");
    const T inv = T(1) / static_cast<T>(kernel * kernel);
    std::vector<T> out(static_cast<size_t>(n) * c * ho * wo);
    int64_t o = 0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const T* plane = input.raw() + (static_cast<int64_t>(in) * c + ic) * h * w;
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow, ++o) {
                    T acc = 0;
                    for (int i = 0; i < kernel; ++i) {
                        int ih = oh * stride - padding + i;
                        if (ih < 0 || ih >= h) continue;
                        for (int j = 0; j < kernel; ++j) {
                            int iw = ow * stride - padding + j;
                            if (iw >= 0 && iw < w) acc += plane[ih * w + iw];
                        }
                    }
                    out[o] = acc * inv;
                }
        }
    auto px = input.impl();
    return Tensor<T>::make_node({n, c, ho, wo}, std::move(out), {input}, "avg_pool2d",
        [px, n, c, h, w, ho, wo, kernel, stride, padding, inv](detail::TensorImpl<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            int64_t o = 0;
            for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
                T* gplane = px->grad.data() + nc * h * w;
                for (int oh = 0; oh < ho; ++oh)
                    for (int ow = 0; ow < wo; ++ow, ++o) {
                        T g = self.grad[o] * inv;
                        for (int i = 0; i < kernel; ++i) {
                            int ih = oh * stride - padding + i;
                            if (ih < 0 || ih >= h) continue;
                            for (int j = 0; j < kernel; ++j) {
                                int iw = ow * stride - padding + j;
                                if (iw >= 0 && iw < w) gplane[ih * w + iw] += g;
                            }
                        }
                    }
            }
        });
}

// PyTorch-style adaptive windows: start = floor(i*H/out), end = ceil((i+1)*H/out).
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& input, int target_h, int target_w) {
    if (input.rank() != 4) throw std::invalid_argument("adaptive_avg_pool2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (target_h <= 0 || target_w <= 0) throw std::invalid_argument("adaptive_avg_pool2d: target must be positive");
    if (target_h > h || target_w > w)
        throw std::invalid_argument("adaptive_avg_pool2d: target " + std::to_string(target_h) + "x" +
                                    std::to_string(target_w) + " larger than input " +
                                    std::to_string(h) + "x" + std::to_string(w));
    auto win = [](int i, int in_dim, int out_dim) {
        int s = (i * in_dim) / out_dim;
        int e = ((i + 1) * in_dim + out_dim - 1) / out_dim;
        return std::pair<int, int>(s, e);
    };
    std::vector<T> out(static_cast<size_t>(n) * c * target_h * target_w);
    int64_t o = 0;
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
        const T* plane = input.raw() + nc * h * w;
        for (int oh = 0; oh < target_h; ++oh) {
            auto [hs, he] = win(oh, h, target_h);
            for (int ow = 0; ow < target_w; ++ow, ++o) {
                auto [ws, we] = win(ow, w, target_w);
                T acc = 0;
                for (int ih = hs; ih < he; ++ih)
                    for (int iw = ws; iw < we; ++iw) acc += plane[ih * w + iw];
                out[o] = acc / static_cast<T>((he - hs) * (we - ws));
            }
        }
    }
    auto px = input.impl();
    return Tensor<T>::make_node({n, c, target_h, target_w}, std::move(out), {input}, "adaptive_avg_pool2d",
        [px, n, c, h, w, target_h, target_w, win](detail::TensorImpl<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            int64_t o = 0;
            for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
                T* gplane = px->grad.data() + nc * h * w;
                for (int oh = 0; oh < target_h; ++oh) {
                    auto [hs, he] = win(oh, h, target_h);
                    for (int ow = 0; ow < target_w; ++ow, ++o) {
                        auto [ws, we] = win(ow, w, target_w);
                        T g = self.grad[o] / static_cast<T>((he - hs) * (we - ws));
                        for (int ih = hs; ih < he; ++ih)
                            for (int iw = ws; iw < we; ++iw) gplane[ih * w + iw] += g;
                    }
                }
            }
        });
}

// input [N,F], weight [K,F], optional bias [K] -> [N,K]
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias) {
    if (input.rank() != 2) throw std::invalid_argument("dense: input must be [N,F], got " + shape_str(input.shape()));
    if (weight.rank() != 2) throw std::invalid_argument("dense: weight must be [K,F], got " + shape_str(weight.shape()));
    const int n = input.dim(0), f = input.dim(1), k = weight.dim(0);
    if (weight.dim(1) != f)
        throw std::invalid_argument("dense: inner dims disagree, input " + shape_str(input.shape()) +
                                    " vs weight " + shape_str(weight.shape()));
    if (bias && bias->shape() != Shape{k})
        throw std::invalid_argument("dense: bias must be [K]=" + std::to_string(k) + ", got " + shape_str(bias->shape()));
    std::vector<T> out(static_cast<size_t>(n) * k);
    {
        // row-major [N,F] viewed as col-major F x N; same trick for weight/out
        detail::ECMap<T> xm(input.raw(), f, n);
        detail::ECMap<T> wm(weight.raw(), f, k);
        detail::EMap<T> ym(out.data(), k, n);
        ym.noalias() = wm.transpose() * xm;
    }
    if (bias)
        for (int in = 0; in < n; ++in)
            for (int j = 0; j < k; ++j) out[static_cast<int64_t>(in) * k + j] += bias->raw()[j];

    std::vector<Tensor<T>> inputs{input, weight};
    if (bias) inputs.push_back(*bias);
    auto px = input.impl();
    auto pw = weight.impl();
    auto pb = bias ? bias->impl() : nullptr;
    return Tensor<T>::make_node({n, k}, std::move(out), std::move(inputs), "dense",
        [px, pw, pb, n, f, k](detail::TensorImpl<T>& self) {
            detail::ECMap<T> gm(self.grad.data(), k, n);
            if (px->requires_grad) {
                px->ensure_grad();
                detail::ECMap<T> wm(pw->data.data(), f, k);
                detail::EMap<T> gx(px->grad.data(), f, n);
                gx.noalias() += wm * gm;
            }
            if (pw->requires_grad) {
                pw->ensure_grad();
                detail::ECMap<T> xm(px->data.data(), f, n);
                detail::EMap<T> gw(pw->grad.data(), f, k);
                gw.noalias() += xm * gm.transpose();
            }
            if (pb && pb->requires_grad) {
                pb->ensure_grad();
                for (int j = 0; j < k; ++j) {
                    T acc = 0;
                    for (int in = 0; in < n; ++in) acc += self.grad[static_cast<int64_t>(in) * k + j];
                    pb->grad[j] += acc;
                }
            }
        });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    return dense(input, weight, &bias);
}
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight) {
    return dense(input, weight, static_cast<const Tensor<T>*>(nullptr));
}

// Batch norm over [N,C,H,W]: per-channel statistics across batch+spatial in
// train mode (N == 1 rejected; variance undefined policy), running statistics
// in eval mode. momentum 0.1, eps 1e-5 by convention; running_var stores the
// unbiased batch variance.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     double momentum = 0.1, double eps = 1e-5) {
    if (input.rank() != 4) throw std::invalid_argument("batch_norm: input must be [N,C,H,W], got " + shape_str(input.shape()));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw std::invalid_argument("batch_norm: scale/shift must be [C]=" + std::to_string(c));
    if (static_cast<int>(running_mean.size()) != c || static_cast<int>(running_var.size()) != c)
        throw std::invalid_argument("batch_norm: running stats must be [C]=" + std::to_string(c));
    if (training && n < 2)
        throw std::invalid_argument("batch_norm: train mode requires batch size >= 2 (got " +
                                    std::to_string(n) + "); variance undefined");
    const int64_t plane = static_cast<int64_t>(h) * w;
    const int64_t per_ch = static_cast<int64_t>(n) * plane;
    std::vector<T> mu(c), inv_std(c), xhat;
    if (training) {
        for (int ic = 0; ic < c; ++ic) {
            double acc = 0;
            for (int in = 0; in < n; ++in) {
                const T* p = input.raw() + (static_cast<int64_t>(in) * c + ic) * plane;
                for (int64_t i = 0; i < plane; ++i) acc += p[i];
            }
            double m = acc / static_cast<double>(per_ch);
            double vacc = 0;
            for (int in = 0; in < n; ++in) {
                const T* p = input.raw() + (static_cast<int64_t>(in) * c + ic) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    double d = p[i] - m;
                    vacc += d * d;
                }
            }
            double var = vacc / static_cast<double>(per_ch);  // biased, used for normalization
            mu[ic] = static_cast<T>(m);
            inv_std[ic] = static_cast<T>(1.0 / std::sqrt(var + eps));
            double unbiased = per_ch > 1 ? vacc / static_cast<double>(per_ch - 1) : var;
            running_mean[ic] = static_cast<T>((1.0 - momentum) * running_mean[ic] + momentum * m);
            running_var[ic] = static_cast<T>((1.0 - momentum) * running_var[ic] + momentum * unbiased);
        }
    } else {
        for (int ic = 0; ic < c; ++ic) {
            mu[ic] = running_mean[ic];
            inv_std[ic] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ic]) + eps));
        }
    }
    std::vector<T> out(input.size());
    xhat.resize(input.size());
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const T* p = input.raw() + (static_cast<int64_t>(in) * c + ic) * plane;
            T* q = out.data() + (static_cast<int64_t>(in) * c + ic) * plane;
            T* xh = xhat.data() + (static_cast<int64_t>(in) * c + ic) * plane;
            const T g = gamma.raw()[ic], b = beta.raw()[ic], m = mu[ic], is = inv_std[ic];
            for (int64_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - m) * is;
                q[i] = g * xh[i] + b;
            }
        }

    auto px = input.impl();
    auto pg = gamma.impl();
    auto pb = beta.impl();
    auto fn = [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, plane,
               per_ch, training](detail::TensorImpl<T>& self) {
        // per channel: dgamma = sum(g*xhat), dbeta = sum(g)
        // train-mode dx = gamma*inv_std*(g - mean(g) - xhat*mean(g*xhat))
        for (int ic = 0; ic < c; ++ic) {
            double sum_g = 0, sum_gx = 0;
            for (int in = 0; in < n; ++in) {
                const int64_t base = (static_cast<int64_t>(in) * c + ic) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    double g = self.grad[base + i];
                    sum_g += g;
                    sum_gx += g * xhat[base + i];
                }
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                pg->grad[ic] += static_cast<T>(sum_gx);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                pb->grad[ic] += static_cast<T>(sum_g);
            }
            if (px->requires_grad) {
                px->ensure_grad();
                const T gsc = pg->data[ic] * inv_std[ic];
                if (training) {
                    const T mg = static_cast<T>(sum_g / static_cast<double>(per_ch));
                    const T mgx = static_cast<T>(sum_gx / static_cast<double>(per_ch));
                    for (int in = 0; in < n; ++in) {
                        const int64_t base = (static_cast<int64_t>(in) * c + ic) * plane;
                        for (int64_t i = 0; i < plane; ++i)
                            px->grad[base + i] += gsc * (self.grad[base + i] - mg - xhat[base + i] * mgx);
                    }
                } else {
                    for (int in = 0; in < n; ++in) {
                        const int64_t base = (static_cast<int64_t>(in) * c + ic) * plane;
                        for (int64_t i = 0; i < plane; ++i) px->grad[base + i] += gsc * self.grad[base + i];
                    }
                }
            }
        }
    };
    return Tensor<T>::make_node(input.shape(), std::move(out), {input, gamma, beta}, "batch_norm", fn);
}

}  // namespace atx
