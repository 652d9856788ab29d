#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "trifuse/common.hpp"
#include "trifuse/haar_core.hpp"
#include "trifuse/tensor.hpp"

namespace trifuse {

// Reverse-mode graph over TensorT<R>. Nodes are appended in evaluation order,
// so creation order is a topological order and backward() is a single reverse
// sweep. Templated on the real type: double exists solely for
// finite-difference tests; the production path is float.
//
// backward() zeroes every gradient before the sweep, so calling it again
// recomputes the same gradients rather than accumulating.
template <typename R>
class GraphT {
  public:
    using Ref = int;
    static constexpr Ref kNone = -1;

    GraphT() = default;
    GraphT(const GraphT&) = delete;
    GraphT& operator=(const GraphT&) = delete;

    const TensorT<R>& value(Ref i) const { return nodes_[static_cast<size_t>(i)].value; }
    TensorT<R>& value(Ref i) { return nodes_[static_cast<size_t>(i)].value; }
    const TensorT<R>& grad(Ref i) const { return nodes_[static_cast<size_t>(i)].grad; }
    bool requires_grad(Ref i) const { return nodes_[static_cast<size_t>(i)].requires_grad; }
    size_t size() const { return nodes_.size(); }

    // Leaves. Parameters want gradients; plain inputs do not.
    Ref input(TensorT<R> v) { return make(std::move(v), false, {}, nullptr); }
    Ref param(TensorT<R> v) { return make(std::move(v), true, {}, nullptr); }

    Ref add(Ref a, Ref b) {
        check_same_shape(a, b, "add");
        TensorT<R> out = value(a);
        const TensorT<R>& vb = value(b);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
        return make(std::move(out), any_grad({a, b}), {a, b}, [a, b](GraphT& g, Ref y) {
            g.accumulate(a, g.grad(y).data, static_cast<R>(1));
            g.accumulate(b, g.grad(y).data, static_cast<R>(1));
        });
    }

    Ref sub(Ref a, Ref b) {
        check_same_shape(a, b, "sub");
        TensorT<R> out = value(a);
        const TensorT<R>& vb = value(b);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
        return make(std::move(out), any_grad({a, b}), {a, b}, [a, b](GraphT& g, Ref y) {
            g.accumulate(a, g.grad(y).data, static_cast<R>(1));
            g.accumulate(b, g.grad(y).data, static_cast<R>(-1));
        });
    }

    Ref mul(Ref a, Ref b) {
        check_same_shape(a, b, "mul");
        TensorT<R> out = value(a);
        const TensorT<R>& vb = value(b);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
        return make(std::move(out), any_grad({a, b}), {a, b}, [a, b](GraphT& g, Ref y) {
            const auto& dy = g.grad(y).data;
            if (g.requires_grad(a)) {
                auto& da = g.node(a).grad.data;
                const auto& vb2 = g.value(b).data;
                for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * vb2[i];
            }
            if (g.requires_grad(b)) {
                auto& db = g.node(b).grad.data;
                const auto& va2 = g.value(a).data;
                for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * va2[i];
            }
        });
    }

    // y = mul_c * x + add_c, elementwise with scalar constants.
    Ref affine(Ref a, R mul_c, R add_c) {
        TensorT<R> out = value(a);
        for (R& x : out.data) x = mul_c * x + add_c;
        return make(std::move(out), any_grad({a}), {a}, [a, mul_c](GraphT& g, Ref y) {
            g.accumulate(a, g.grad(y).data, mul_c);
        });
    }

    Ref scale(Ref a, R s) { return affine(a, s, static_cast<R>(0)); }

    Ref relu(Ref a) {
        TensorT<R> out = value(a);
        for (R& x : out.data) x = x > static_cast<R>(0) ? x : static_cast<R>(0);
        return make(std::move(out), any_grad({a}), {a}, [a](GraphT& g, Ref y) {
            auto& da = g.node(a).grad.data;
            const auto& va = g.value(a).data;
            const auto& dy = g.grad(y).data;
            for (size_t i = 0; i < dy.size(); ++i)
                if (va[i] > static_cast<R>(0)) da[i] += dy[i];
        });
    }

    Ref square(Ref a) {
        TensorT<R> out = value(a);
        for (R& x : out.data) x = x * x;
        return make(std::move(out), any_grad({a}), {a}, [a](GraphT& g, Ref y) {
            auto& da = g.node(a).grad.data;
            const auto& va = g.value(a).data;
            const auto& dy = g.grad(y).data;
            for (size_t i = 0; i < dy.size(); ++i) da[i] += static_cast<R>(2) * va[i] * dy[i];
        });
    }

    // Subgradient 0 at the kink.
    Ref abs(Ref a) {
        TensorT<R> out = value(a);
        for (R& x : out.data) x = std::abs(x);
        return make(std::move(out), any_grad({a}), {a}, [a](GraphT& g, Ref y) {
            auto& da = g.node(a).grad.data;
            const auto& va = g.value(a).data;
            const auto& dy = g.grad(y).data;
            for (size_t i = 0; i < dy.size(); ++i) {
                if (va[i] > static_cast<R>(0)) da[i] += dy[i];
                else if (va[i] < static_cast<R>(0)) da[i] -= dy[i];
            }
        });
    }

    Ref mean_all(Ref a) {
        const TensorT<R>& va = value(a);
        require(!va.data.empty(), "mean_all: empty tensor");
        R sum = 0;
        for (R x : va.data) sum += x;
        TensorT<R> out = TensorT<R>::scalar(sum / static_cast<R>(va.data.size()));
        const R inv_n = static_cast<R>(1) / static_cast<R>(va.data.size());
        return make(std::move(out), any_grad({a}), {a}, [a, inv_n](GraphT& g, Ref y) {
            auto& da = g.node(a).grad.data;
            const R d = g.grad(y).data[0] * inv_n;
            for (R& x : da) x += d;
        });
    }

    // Cross-correlation with zero padding. Weight layout (out_c, in_c/groups,
    // kh, kw); bias (1,1,1,out_c) or kNone.
    Ref conv2d(Ref x, Ref w, Ref bias, int stride, int pad, int dilation, int groups) {
        const TensorT<R>& vx = value(x);
        const TensorT<R>& vw = value(w);
        require(stride >= 1 && dilation >= 1 && pad >= 0 && groups >= 1,
                "conv2d: invalid stride/pad/dilation/groups");
        require(vx.c % groups == 0 && vw.n % groups == 0,
                "conv2d: channels must be divisible by groups");
        require(vw.c == vx.c / groups, "conv2d: weight input-channel count mismatch");
        const int kh = vw.h, kw = vw.w;
        const int eff_kh = (kh - 1) * dilation + 1;
        const int eff_kw = (kw - 1) * dilation + 1;
        require(vx.h + 2 * pad >= eff_kh && vx.w + 2 * pad >= eff_kw,
                "conv2d: kernel larger than padded input");
        const int oh = (vx.h + 2 * pad - eff_kh) / stride + 1;
        const int ow = (vx.w + 2 * pad - eff_kw) / stride + 1;
        if (bias != kNone) {
            require(value(bias).numel() == static_cast<size_t>(vw.n),
                    "conv2d: bias size must equal output channels");
        }

        TensorT<R> out(vx.n, vw.n, oh, ow);
        const ConvDims cd{stride, pad, dilation, groups, kh, kw, oh, ow};
        forward_conv(vx, vw, bias == kNone ? nullptr : &value(bias), cd, out);

        std::vector<Ref> ins = {x, w};
        if (bias != kNone) ins.push_back(bias);
        return make(std::move(out), any_grad(ins), ins, [x, w, bias, cd](GraphT& g, Ref y) {
            g.backward_conv(x, w, bias, cd, y);
        });
    }

    // Features along the last axis: x (n,c,t,f_in), w (1,1,f_out,f_in),
    // bias (1,1,1,f_out) or kNone.
    Ref linear(Ref x, Ref w, Ref bias) {
        const TensorT<R>& vx = value(x);
        const TensorT<R>& vw = value(w);
        require(vw.n == 1 && vw.c == 1, "linear: weight must be a (1,1,out,in) matrix");
        require(vw.w == vx.w, "linear: input feature dim mismatch");
        const int fout = vw.h;
        if (bias != kNone) {
            require(value(bias).numel() == static_cast<size_t>(fout),
                    "linear: bias size must equal output features");
        }
        const int rows = vx.n * vx.c * vx.h;
        TensorT<R> out(vx.n, vx.c, vx.h, fout);
        {
            CMap X(vx.data.data(), rows, vx.w);
            CMap W(vw.data.data(), fout, vw.w);
            MMap Y(out.data.data(), rows, fout);
            Y.noalias() = X * W.transpose();
            if (bias != kNone) {
                CMap B(value(bias).data.data(), 1, fout);
                Y.rowwise() += B.row(0);
            }
        }
        std::vector<Ref> ins = {x, w};
        if (bias != kNone) ins.push_back(bias);
        return make(std::move(out), any_grad(ins), ins, [x, w, bias](GraphT& g, Ref y) {
            const TensorT<R>& vx2 = g.value(x);
            const TensorT<R>& vw2 = g.value(w);
            const int rows2 = vx2.n * vx2.c * vx2.h;
            const int fout2 = vw2.h;
            CMap dY(g.grad(y).data.data(), rows2, fout2);
            if (g.requires_grad(x)) {
                CMap W(vw2.data.data(), fout2, vw2.w);
                MMap dX(g.node(x).grad.data.data(), rows2, vx2.w);
                dX.noalias() += dY * W;
            }
            if (g.requires_grad(w)) {
                CMap X(vx2.data.data(), rows2, vx2.w);
                MMap dW(g.node(w).grad.data.data(), fout2, vw2.w);
                dW.noalias() += dY.transpose() * X;
            }
            if (bias != kNone && g.requires_grad(bias)) {
                MMap dB(g.node(bias).grad.data.data(), 1, fout2);
                dB.row(0) += dY.colwise().sum();
            }
        });
    }

    // Batched matrix product over the leading (n, c) axes.
    Ref matmul(Ref a, Ref b, bool transpose_b = false) {
        const TensorT<R>& va = value(a);
        const TensorT<R>& vb = value(b);
        require(va.n == vb.n && va.c == vb.c, "matmul: batch dims mismatch");
        const int m = va.h, kk = va.w;
        const int p = transpose_b ? vb.h : vb.w;
        require((transpose_b ? vb.w : vb.h) == kk, "matmul: inner dims mismatch");
        TensorT<R> out(va.n, va.c, m, p);
        const int batch = va.n * va.c;
        for (int i = 0; i < batch; ++i) {
            CMap A(va.data.data() + static_cast<size_t>(i) * m * kk, m, kk);
            MMap Y(out.data.data() + static_cast<size_t>(i) * m * p, m, p);
            if (transpose_b) {
                CMap B(vb.data.data() + static_cast<size_t>(i) * p * kk, p, kk);
                Y.noalias() = A * B.transpose();
            } else {
                CMap B(vb.data.data() + static_cast<size_t>(i) * kk * p, kk, p);
                Y.noalias() = A * B;
            }
        }
        return make(std::move(out), any_grad({a, b}), {a, b},
                    [a, b, transpose_b](GraphT& g, Ref y) {
                        const TensorT<R>& va2 = g.value(a);
                        const TensorT<R>& vb2 = g.value(b);
                        const int m2 = va2.h, k2 = va2.w;
                        const int p2 = transpose_b ? vb2.h : vb2.w;
                        const int batch2 = va2.n * va2.c;
                        for (int i = 0; i < batch2; ++i) {
                            CMap dY(g.grad(y).data.data() + static_cast<size_t>(i) * m2 * p2, m2,
                                    p2);
                            if (g.requires_grad(a)) {
                                MMap dA(g.node(a).grad.data.data() +
                                            static_cast<size_t>(i) * m2 * k2,
                                        m2, k2);
                                if (transpose_b) {
                                    CMap B(vb2.data.data() + static_cast<size_t>(i) * p2 * k2, p2,
                                           k2);
                                    dA.noalias() += dY * B;
                                } else {
                                    CMap B(vb2.data.data() + static_cast<size_t>(i) * k2 * p2, k2,
                                           p2);
                                    dA.noalias() += dY * B.transpose();
                                }
                            }
                            if (g.requires_grad(b)) {
                                CMap A(va2.data.data() + static_cast<size_t>(i) * m2 * k2, m2, k2);
                                if (transpose_b) {
                                    MMap dB(g.node(b).grad.data.data() +
                                                static_cast<size_t>(i) * p2 * k2,
                                            p2, k2);
                                    dB.noalias() += dY.transpose() * A;
                                } else {
                                    MMap dB(g.node(b).grad.data.data() +
                                                static_cast<size_t>(i) * k2 * p2,
                                            k2, p2);
                                    dB.noalias() += A.transpose() * dY;
                                }
                            }
                        }
                    });
    }

    // Row-wise softmax over the last axis, max-subtracted for stability.
    Ref softmax_lastdim(Ref a) {
        const TensorT<R>& va = value(a);
        TensorT<R> out = va;
        const int rows = va.n * va.c * va.h;
        const int f = va.w;
        require(f >= 1, "softmax: empty rows");
        for (int r = 0; r < rows; ++r) {
            R* row = out.data.data() + static_cast<size_t>(r) * f;
            R mx = row[0];
            for (int i = 1; i < f; ++i) mx = std::max(mx, row[i]);
            R sum = 0;
            for (int i = 0; i < f; ++i) {
                row[i] = std::exp(row[i] - mx);
                sum += row[i];
            }
            for (int i = 0; i < f; ++i) row[i] /= sum;
        }
        return make(std::move(out), any_grad({a}), {a}, [a](GraphT& g, Ref y) {
            const TensorT<R>& vy = g.value(y);
            const auto& dy = g.grad(y).data;
            auto& da = g.node(a).grad.data;
            const int f2 = vy.w;
            const int rows2 = vy.n * vy.c * vy.h;
            for (int r = 0; r < rows2; ++r) {
                const size_t off = static_cast<size_t>(r) * f2;
                R dot = 0;
                for (int i = 0; i < f2; ++i) dot += dy[off + i] * vy.data[off + i];
                for (int i = 0; i < f2; ++i)
                    da[off + i] += vy.data[off + i] * (dy[off + i] - dot);
            }
        });
    }

    // Scaled dot-product attention over (n, heads, tokens, features) nodes.
    Ref attention(Ref q, Ref k, Ref v) {
        const int dk = value(q).w;
        require(dk > 0, "attention: key dimension must be positive");
        require(value(k).w == dk, "attention: q/k feature dims differ");
        require(value(k).h == value(v).h, "attention: k/v token counts differ");
        Ref scores = matmul(q, k, /*transpose_b=*/true);
        Ref scaled = scale(scores, static_cast<R>(1) / std::sqrt(static_cast<R>(dk)));
        Ref p = softmax_lastdim(scaled);
        return matmul(p, v);
    }

    // Channel batchnorm on NCHW. Running stats (plain tensors owned by the
    // caller) are updated in training mode: run = momentum*run + (1-m)*batch.
    Ref batchnorm(Ref x, Ref gamma, Ref beta, TensorT<R>* run_mean, TensorT<R>* run_var,
                  bool training, R momentum, R eps) {
        const TensorT<R>& vx = value(x);
        const int C = vx.c;
        require(value(gamma).numel() == static_cast<size_t>(C) &&
                    value(beta).numel() == static_cast<size_t>(C),
                "batchnorm: gamma/beta must have one entry per channel");
        const size_t plane = static_cast<size_t>(vx.h) * vx.w;
        const size_t count = static_cast<size_t>(vx.n) * plane;
        require(count > 0, "batchnorm: empty input");

        std::vector<R> mean(C), inv_std(C);
        if (training) {
            for (int ci = 0; ci < C; ++ci) {
                R sum = 0, sum2 = 0;
                for (int ni = 0; ni < vx.n; ++ni) {
                    const R* p = vx.plane(ni, ci);
                    for (size_t i = 0; i < plane; ++i) {
                        sum += p[i];
                        sum2 += p[i] * p[i];
                    }
                }
                const R mu = sum / static_cast<R>(count);
                const R var = std::max(sum2 / static_cast<R>(count) - mu * mu, static_cast<R>(0));
                mean[ci] = mu;
                inv_std[ci] = static_cast<R>(1) / std::sqrt(var + eps);
                if (run_mean && run_var) {
                    run_mean->data[ci] = momentum * run_mean->data[ci] + (1 - momentum) * mu;
                    run_var->data[ci] = momentum * run_var->data[ci] + (1 - momentum) * var;
                }
            }
        } else {
            require(run_mean && run_var, "batchnorm: eval mode needs running stats");
            for (int ci = 0; ci < C; ++ci) {
                mean[ci] = run_mean->data[ci];
                inv_std[ci] = static_cast<R>(1) / std::sqrt(run_var->data[ci] + eps);
            }
        }

        TensorT<R> out(vx.n, vx.c, vx.h, vx.w);
        const TensorT<R>& vg = value(gamma);
        const TensorT<R>& vb = value(beta);
        for (int ni = 0; ni < vx.n; ++ni) {
            for (int ci = 0; ci < C; ++ci) {
                const R* src = vx.plane(ni, ci);
                R* dst = out.plane(ni, ci);
                const R g = vg.data[ci], b = vb.data[ci], mu = mean[ci], is = inv_std[ci];
                for (size_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mu) * is + b;
            }
        }
        return make(std::move(out), any_grad({x, gamma, beta}), {x, gamma, beta},
                    [x, gamma, beta, mean, inv_std, training](GraphT& g, Ref y) {
                        g.backward_batchnorm(x, gamma, beta, mean, inv_std, training, y);
                    });
    }

    // Layer norm across the last axis of (n, c, t, f); gamma/beta (1,1,1,f).
    Ref layernorm(Ref x, Ref gamma, Ref beta, R eps) {
        const TensorT<R>& vx = value(x);
        const int f = vx.w;
        require(value(gamma).numel() == static_cast<size_t>(f) &&
                    value(beta).numel() == static_cast<size_t>(f),
                "layernorm: gamma/beta must have one entry per feature");
        const int rows = vx.n * vx.c * vx.h;
        std::vector<R> mean(rows), inv_std(rows);
        TensorT<R> out(vx.n, vx.c, vx.h, vx.w);
        const TensorT<R>& vg = value(gamma);
        const TensorT<R>& vb = value(beta);
        for (int r = 0; r < rows; ++r) {
            const R* src = vx.data.data() + static_cast<size_t>(r) * f;
            R sum = 0, sum2 = 0;
            for (int i = 0; i < f; ++i) {
                sum += src[i];
                sum2 += src[i] * src[i];
            }
            const R mu = sum / static_cast<R>(f);
            const R var = std::max(sum2 / static_cast<R>(f) - mu * mu, static_cast<R>(0));
            mean[r] = mu;
            inv_std[r] = static_cast<R>(1) / std::sqrt(var + eps);
            R* dst = out.data.data() + static_cast<size_t>(r) * f;
            for (int i = 0; i < f; ++i)
                dst[i] = vg.data[i] * (src[i] - mu) * inv_std[r] + vb.data[i];
        }
        return make(std::move(out), any_grad({x, gamma, beta}), {x, gamma, beta},
                    [x, gamma, beta, mean, inv_std](GraphT& g, Ref y) {
                        const TensorT<R>& vx2 = g.value(x);
                        const TensorT<R>& vg2 = g.value(gamma);
                        const int f2 = vx2.w;
                        const int rows2 = vx2.n * vx2.c * vx2.h;
                        const auto& dy = g.grad(y).data;
                        for (int r = 0; r < rows2; ++r) {
                            const size_t off = static_cast<size_t>(r) * f2;
                            const R mu = mean[r], is = inv_std[r];
                            R m1 = 0, m2 = 0;
                            for (int i = 0; i < f2; ++i) {
                                const R xh = (vx2.data[off + i] - mu) * is;
                                const R gdy = vg2.data[i] * dy[off + i];
                                m1 += gdy;
                                m2 += gdy * xh;
                            }
                            m1 /= static_cast<R>(f2);
                            m2 /= static_cast<R>(f2);
                            if (g.requires_grad(x)) {
                                auto& dx = g.node(x).grad.data;
                                for (int i = 0; i < f2; ++i) {
                                    const R xh = (vx2.data[off + i] - mu) * is;
                                    const R gdy = vg2.data[i] * dy[off + i];
                                    dx[off + i] += is * (gdy - m1 - xh * m2);
                                }
                            }
                            if (g.requires_grad(gamma)) {
                                auto& dg = g.node(gamma).grad.data;
                                for (int i = 0; i < f2; ++i)
                                    dg[i] += dy[off + i] * (vx2.data[off + i] - mu) * is;
                            }
                            if (g.requires_grad(beta)) {
                                auto& db = g.node(beta).grad.data;
                                for (int i = 0; i < f2; ++i) db[i] += dy[off + i];
                            }
                        }
                    });
    }

    Ref concat_channels(const std::vector<Ref>& parts) {
        require(!parts.empty(), "concat: no inputs");
        const TensorT<R>& v0 = value(parts[0]);
        int total_c = 0;
        for (Ref p : parts) {
            const TensorT<R>& vp = value(p);
            require(vp.n == v0.n && vp.h == v0.h && vp.w == v0.w,
                    "concat: spatial/batch dims mismatch");
            total_c += vp.c;
        }
        TensorT<R> out(v0.n, total_c, v0.h, v0.w);
        const size_t plane = static_cast<size_t>(v0.h) * v0.w;
        for (int ni = 0; ni < v0.n; ++ni) {
            int co = 0;
            for (Ref p : parts) {
                const TensorT<R>& vp = value(p);
                for (int ci = 0; ci < vp.c; ++ci, ++co) {
                    std::copy(vp.plane(ni, ci), vp.plane(ni, ci) + plane, out.plane(ni, co));
                }
            }
        }
        return make(std::move(out), any_grad(parts), parts, [parts](GraphT& g, Ref y) {
            const TensorT<R>& vy = g.value(y);
            const size_t plane2 = static_cast<size_t>(vy.h) * vy.w;
            for (int ni = 0; ni < vy.n; ++ni) {
                int co = 0;
                for (Ref p : parts) {
                    TensorT<R>& gp = g.node(p).grad;
                    const bool want = g.requires_grad(p);
                    for (int ci = 0; ci < g.value(p).c; ++ci, ++co) {
                        if (!want) continue;
                        const R* src = g.grad(y).plane(ni, co);
                        R* dst = gp.plane(ni, ci);
                        for (size_t i = 0; i < plane2; ++i) dst[i] += src[i];
                    }
                }
            }
        });
    }

    Ref upsample_nearest2(Ref x) {
        const TensorT<R>& vx = value(x);
        TensorT<R> out(vx.n, vx.c, vx.h * 2, vx.w * 2);
        for (int ni = 0; ni < vx.n; ++ni)
            for (int ci = 0; ci < vx.c; ++ci) {
                const R* src = vx.plane(ni, ci);
                R* dst = out.plane(ni, ci);
                for (int y = 0; y < vx.h * 2; ++y)
                    for (int xx = 0; xx < vx.w * 2; ++xx)
                        dst[static_cast<size_t>(y) * vx.w * 2 + xx] =
                            src[static_cast<size_t>(y / 2) * vx.w + xx / 2];
            }
        return make(std::move(out), any_grad({x}), {x}, [x](GraphT& g, Ref y) {
            const TensorT<R>& vx2 = g.value(x);
            TensorT<R>& dx = g.node(x).grad;
            const TensorT<R>& dy = g.grad(y);
            for (int ni = 0; ni < vx2.n; ++ni)
                for (int ci = 0; ci < vx2.c; ++ci) {
                    const R* src = dy.plane(ni, ci);
                    R* dst = dx.plane(ni, ci);
                    for (int yy = 0; yy < vx2.h * 2; ++yy)
                        for (int xx = 0; xx < vx2.w * 2; ++xx)
                            dst[static_cast<size_t>(yy / 2) * vx2.w + xx / 2] +=
                                src[static_cast<size_t>(yy) * vx2.w * 2 + xx];
                }
        });
    }

    Ref downsample_avg2(Ref x) {
        const TensorT<R>& vx = value(x);
        require(vx.h % 2 == 0 && vx.w % 2 == 0, "downsample: dims must be even");
        TensorT<R> out(vx.n, vx.c, vx.h / 2, vx.w / 2);
        for (int ni = 0; ni < vx.n; ++ni)
            for (int ci = 0; ci < vx.c; ++ci) {
                const R* src = vx.plane(ni, ci);
                R* dst = out.plane(ni, ci);
                for (int y = 0; y < vx.h / 2; ++y)
                    for (int xx = 0; xx < vx.w / 2; ++xx) {
                        const size_t s0 = static_cast<size_t>(2 * y) * vx.w + 2 * xx;
                        dst[static_cast<size_t>(y) * (vx.w / 2) + xx] =
                            (src[s0] + src[s0 + 1] + src[s0 + vx.w] + src[s0 + vx.w + 1]) /
                            static_cast<R>(4);
                    }
            }
        return make(std::move(out), any_grad({x}), {x}, [x](GraphT& g, Ref y) {
            const TensorT<R>& vx2 = g.value(x);
            TensorT<R>& dx = g.node(x).grad;
            const TensorT<R>& dy = g.grad(y);
            for (int ni = 0; ni < vx2.n; ++ni)
                for (int ci = 0; ci < vx2.c; ++ci) {
                    const R* src = dy.plane(ni, ci);
                    R* dst = dx.plane(ni, ci);
                    for (int yy = 0; yy < vx2.h / 2; ++yy)
                        for (int xx = 0; xx < vx2.w / 2; ++xx) {
                            const R d = src[static_cast<size_t>(yy) * (vx2.w / 2) + xx] /
                                        static_cast<R>(4);
                            const size_t s0 = static_cast<size_t>(2 * yy) * vx2.w + 2 * xx;
                            dst[s0] += d;
                            dst[s0 + 1] += d;
                            dst[s0 + vx2.w] += d;
                            dst[s0 + vx2.w + 1] += d;
                        }
                }
        });
    }

    // (n,c,h,w) -> token sequence (n,1,h*w,c); token index = y*w + x.
    Ref map_to_tokens(Ref x) {
        const TensorT<R>& vx = value(x);
        TensorT<R> out(vx.n, 1, vx.h * vx.w, vx.c);
        for (int ni = 0; ni < vx.n; ++ni)
            for (int ci = 0; ci < vx.c; ++ci) {
                const R* src = vx.plane(ni, ci);
                for (int t = 0; t < vx.h * vx.w; ++t) out.at(ni, 0, t, ci) = src[t];
            }
        return make(std::move(out), any_grad({x}), {x}, [x](GraphT& g, Ref y) {
            const TensorT<R>& vx2 = g.value(x);
            TensorT<R>& dx = g.node(x).grad;
            const TensorT<R>& dy = g.grad(y);
            for (int ni = 0; ni < vx2.n; ++ni)
                for (int ci = 0; ci < vx2.c; ++ci) {
                    R* dst = dx.plane(ni, ci);
                    for (int t = 0; t < vx2.h * vx2.w; ++t) dst[t] += dy.at(ni, 0, t, ci);
                }
        });
    }

    Ref tokens_to_map(Ref x, int c, int h, int w) {
        const TensorT<R>& vx = value(x);
        require(vx.c == 1 && vx.h == h * w && vx.w == c, "tokens_to_map: shape mismatch");
        TensorT<R> out(vx.n, c, h, w);
        for (int ni = 0; ni < vx.n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                R* dst = out.plane(ni, ci);
                for (int t = 0; t < h * w; ++t) dst[t] = vx.at(ni, 0, t, ci);
            }
        return make(std::move(out), any_grad({x}), {x}, [x, c, h, w](GraphT& g, Ref y) {
            TensorT<R>& dx = g.node(x).grad;
            const TensorT<R>& dy = g.grad(y);
            for (int ni = 0; ni < dy.n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const R* src = dy.plane(ni, ci);
                    for (int t = 0; t < h * w; ++t) dx.at(ni, 0, t, ci) += src[t];
                }
        });
    }

    // (n,1,t,f) -> (n,heads,t,f/heads).
    Ref split_heads(Ref x, int heads) {
        const TensorT<R>& vx = value(x);
        require(vx.c == 1 && heads >= 1 && vx.w % heads == 0,
                "split_heads: features must divide evenly across heads");
        const int dh = vx.w / heads;
        TensorT<R> out(vx.n, heads, vx.h, dh);
        for (int ni = 0; ni < vx.n; ++ni)
            for (int hi = 0; hi < heads; ++hi)
                for (int t = 0; t < vx.h; ++t)
                    for (int j = 0; j < dh; ++j)
                        out.at(ni, hi, t, j) = vx.at(ni, 0, t, hi * dh + j);
        return make(std::move(out), any_grad({x}), {x}, [x, heads](GraphT& g, Ref y) {
            TensorT<R>& dx = g.node(x).grad;
            const TensorT<R>& dy = g.grad(y);
            const int dh2 = dy.w;
            for (int ni = 0; ni < dy.n; ++ni)
                for (int hi = 0; hi < heads; ++hi)
                    for (int t = 0; t < dy.h; ++t)
                        for (int j = 0; j < dh2; ++j)
                            dx.at(ni, 0, t, hi * dh2 + j) += dy.at(ni, hi, t, j);
        });
    }

    Ref merge_heads(Ref x) {
        const TensorT<R>& vx = value(x);
        TensorT<R> out(vx.n, 1, vx.h, vx.c * vx.w);
        for (int ni = 0; ni < vx.n; ++ni)
            for (int hi = 0; hi < vx.c; ++hi)
                for (int t = 0; t < vx.h; ++t)
                    for (int j = 0; j < vx.w; ++j)
                        out.at(ni, 0, t, hi * vx.w + j) = vx.at(ni, hi, t, j);
        return make(std::move(out), any_grad({x}), {x}, [x](GraphT& g, Ref y) {
            const TensorT<R>& vx2 = g.value(x);
            TensorT<R>& dx = g.node(x).grad;
            const TensorT<R>& dy = g.grad(y);
            for (int ni = 0; ni < vx2.n; ++ni)
                for (int hi = 0; hi < vx2.c; ++hi)
                    for (int t = 0; t < vx2.h; ++t)
                        for (int j = 0; j < vx2.w; ++j)
                            dx.at(ni, hi, t, j) += dy.at(ni, 0, t, hi * vx2.w + j);
        });
    }

    // tokens (n,1,t,f) + vec (n,1,1,f), broadcast across tokens.
    Ref broadcast_add_rows(Ref tokens, Ref vec) {
        const TensorT<R>& vt = value(tokens);
        const TensorT<R>& vv = value(vec);
        require(vv.n == vt.n && vv.c == 1 && vv.h == 1 && vv.w == vt.w,
                "broadcast_add_rows: vector shape mismatch");
        TensorT<R> out = vt;
        for (int ni = 0; ni < vt.n; ++ni)
            for (int t = 0; t < vt.h; ++t)
                for (int j = 0; j < vt.w; ++j) out.at(ni, 0, t, j) += vv.at(ni, 0, 0, j);
        return make(std::move(out), any_grad({tokens, vec}), {tokens, vec},
                    [tokens, vec](GraphT& g, Ref y) {
                        const TensorT<R>& dy = g.grad(y);
                        if (g.requires_grad(tokens)) {
                            g.accumulate(tokens, dy.data, static_cast<R>(1));
                        }
                        if (g.requires_grad(vec)) {
                            TensorT<R>& dv = g.node(vec).grad;
                            for (int ni = 0; ni < dy.n; ++ni)
                                for (int t = 0; t < dy.h; ++t)
                                    for (int j = 0; j < dy.w; ++j)
                                        dv.at(ni, 0, 0, j) += dy.at(ni, 0, t, j);
                        }
                    });
    }

    // Single-level orthonormal Haar synthesis as a graph op; the backward
    // pass is the forward analysis (adjoint of an orthonormal map).
    Ref idwt_level(Ref a, Ref v, Ref hh, Ref d, int out_h, int out_w) {
        const TensorT<R>& va = value(a);
        const int ha = (out_h + 1) / 2, hd = out_h / 2;
        const int wa = (out_w + 1) / 2, wd = out_w / 2;
        require(va.h == ha && va.w == wa, "idwt_level: approximation shape mismatch");
        require(value(v).h == hd && value(v).w == wa && value(hh).h == ha &&
                    value(hh).w == wd && value(d).h == hd && value(d).w == wd,
                "idwt_level: detail band shape mismatch");
        require(value(v).n == va.n && value(v).c == va.c && value(hh).n == va.n &&
                    value(hh).c == va.c && value(d).n == va.n && value(d).c == va.c,
                "idwt_level: band batch/channel mismatch");
        TensorT<R> out(va.n, va.c, out_h, out_w);
        for (int ni = 0; ni < va.n; ++ni)
            for (int ci = 0; ci < va.c; ++ci)
                haar_synthesize_plane(value(a).plane(ni, ci), value(v).plane(ni, ci),
                                      value(hh).plane(ni, ci), value(d).plane(ni, ci), out_h,
                                      out_w, out.plane(ni, ci));
        return make(std::move(out), any_grad({a, v, hh, d}), {a, v, hh, d},
                    [a, v, hh, d, out_h, out_w](GraphT& g, Ref y) {
                        const TensorT<R>& va2 = g.value(a);
                        const int ha2 = (out_h + 1) / 2, hd2 = out_h / 2;
                        const int wa2 = (out_w + 1) / 2, wd2 = out_w / 2;
                        TensorT<R> ga(1, 1, ha2, wa2), gv(1, 1, hd2, wa2), gh(1, 1, ha2, wd2),
                            gd(1, 1, hd2, wd2);
                        for (int ni = 0; ni < va2.n; ++ni)
                            for (int ci = 0; ci < va2.c; ++ci) {
                                haar_analyze_plane(g.grad(y).plane(ni, ci), out_h, out_w,
                                                   ga.data.data(), gv.data.data(),
                                                   gh.data.data(), gd.data.data());
                                g.accumulate_plane(a, ni, ci, ga.data);
                                g.accumulate_plane(v, ni, ci, gv.data);
                                g.accumulate_plane(hh, ni, ci, gh.data);
                                g.accumulate_plane(d, ni, ci, gd.data);
                            }
                    });
    }

    // Reverse sweep from a scalar loss. Gradients are zeroed first, so a
    // repeat call recomputes rather than accumulates.
    void backward(Ref loss) {
        require(loss >= 0 && static_cast<size_t>(loss) < nodes_.size(),
                "backward: loss node out of range");
        require(value(loss).numel() == 1, "backward: loss must be scalar");
        for (Node& nd : nodes_) {
            if (nd.requires_grad) nd.grad.zero();
        }
        Node& ln = nodes_[static_cast<size_t>(loss)];
        if (!ln.requires_grad) return;  // loss is constant w.r.t. every parameter
        ln.grad.data[0] = static_cast<R>(1);
        for (Ref i = loss; i >= 0; --i) {
            Node& nd = nodes_[static_cast<size_t>(i)];
            if (nd.requires_grad && nd.backward) nd.backward(*this, i);
        }
    }

  private:
    struct ConvDims {
        int stride, pad, dilation, groups, kh, kw, oh, ow;
    };
    struct Node {
        TensorT<R> value;
        TensorT<R> grad;
        bool requires_grad = false;
        std::function<void(GraphT&, Ref)> backward;
    };

    using Mat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MMap = Eigen::Map<Mat>;
    using CMap = Eigen::Map<const Mat>;

    std::deque<Node> nodes_;

    Node& node(Ref i) { return nodes_[static_cast<size_t>(i)]; }

    bool any_grad(const std::vector<Ref>& ins) const {
        for (Ref r : ins)
            if (r != kNone && requires_grad(r)) return true;
        return false;
    }

    Ref make(TensorT<R> value, bool needs_grad, const std::vector<Ref>& /*ins*/,
             std::function<void(GraphT&, Ref)> bwd) {
        Node nd;
        nd.value = std::move(value);
        nd.requires_grad = needs_grad;
        if (needs_grad) {
            nd.grad = TensorT<R>(nd.value.n, nd.value.c, nd.value.h, nd.value.w);
            nd.backward = std::move(bwd);
        }
        nodes_.push_back(std::move(nd));
        return static_cast<Ref>(nodes_.size()) - 1;
    }

    void check_same_shape(Ref a, Ref b, const char* op) {
        require(value(a).same_shape(value(b)), std::string(op) + ": shape mismatch");
    }

    void accumulate(Ref target, const std::vector<R>& src, R scale_c) {
        if (!requires_grad(target)) return;
        auto& dst = node(target).grad.data;
        for (size_t i = 0; i < src.size(); ++i) dst[i] += scale_c * src[i];
    }

    void accumulate_plane(Ref target, int ni, int ci, const std::vector<R>& src) {
        if (!requires_grad(target)) return;
        R* dst = node(target).grad.plane(ni, ci);
        for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }

    // col matrix layout: row = (ci*kh + ky)*kw + kx, column = oy*ow + ox.
    void im2col(const R* src, int h, int w, int cin, const ConvDims& cd, R* col) const {
        const size_t ncols = static_cast<size_t>(cd.oh) * cd.ow;
        for (int ci = 0; ci < cin; ++ci) {
            const R* plane = src + static_cast<size_t>(ci) * h * w;
            for (int ky = 0; ky < cd.kh; ++ky)
                for (int kx = 0; kx < cd.kw; ++kx) {
                    R* row = col + (static_cast<size_t>(ci) * cd.kh * cd.kw +
                                    static_cast<size_t>(ky) * cd.kw + kx) *
                                       ncols;
                    for (int oy = 0; oy < cd.oh; ++oy) {
                        const int sy = oy * cd.stride - cd.pad + ky * cd.dilation;
                        for (int ox = 0; ox < cd.ow; ++ox) {
                            const int sx = ox * cd.stride - cd.pad + kx * cd.dilation;
                            row[static_cast<size_t>(oy) * cd.ow + ox] =
                                (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                    ? plane[static_cast<size_t>(sy) * w + sx]
                                    : static_cast<R>(0);
                        }
                    }
                }
        }
    }

    void col2im_accum(const R* col, int h, int w, int cin, const ConvDims& cd, R* dst) const {
        const size_t ncols = static_cast<size_t>(cd.oh) * cd.ow;
        for (int ci = 0; ci < cin; ++ci) {
            R* plane = dst + static_cast<size_t>(ci) * h * w;
            for (int ky = 0; ky < cd.kh; ++ky)
                for (int kx = 0; kx < cd.kw; ++kx) {
                    const R* row = col + (static_cast<size_t>(ci) * cd.kh * cd.kw +
                                          static_cast<size_t>(ky) * cd.kw + kx) *
                                             ncols;
                    for (int oy = 0; oy < cd.oh; ++oy) {
                        const int sy = oy * cd.stride - cd.pad + ky * cd.dilation;
                        if (sy < 0 || sy >= h) continue;
                        for (int ox = 0; ox < cd.ow; ++ox) {
                            const int sx = ox * cd.stride - cd.pad + kx * cd.dilation;
                            if (sx < 0 || sx >= w) continue;
                            plane[static_cast<size_t>(sy) * w + sx] +=
                                row[static_cast<size_t>(oy) * cd.ow + ox];
                        }
                    }
                }
        }
    }

    void forward_conv(const TensorT<R>& vx, const TensorT<R>& vw, const TensorT<R>* vbias,
                      const ConvDims& cd, TensorT<R>& out) {
        const int cin_g = vx.c / cd.groups;
        const int cout_g = vw.n / cd.groups;
        const size_t krows = static_cast<size_t>(cin_g) * cd.kh * cd.kw;
        const size_t ncols = static_cast<size_t>(cd.oh) * cd.ow;
        std::vector<R> col(krows * ncols);
        for (int ni = 0; ni < vx.n; ++ni) {
            for (int gi = 0; gi < cd.groups; ++gi) {
                im2col(vx.plane(ni, gi * cin_g), vx.h, vx.w, cin_g, cd, col.data());
                CMap W(vw.data.data() + static_cast<size_t>(gi) * cout_g * krows,
                       cout_g, static_cast<Eigen::Index>(krows));
                CMap C(col.data(), static_cast<Eigen::Index>(krows),
                       static_cast<Eigen::Index>(ncols));
                MMap Y(out.plane(ni, gi * cout_g), cout_g, static_cast<Eigen::Index>(ncols));
                Y.noalias() = W * C;
            }
            if (vbias) {
                for (int co = 0; co < out.c; ++co) {
                    R* plane = out.plane(ni, co);
                    const R b = vbias->data[static_cast<size_t>(co)];
                    for (size_t i = 0; i < ncols; ++i) plane[i] += b;
                }
            }
        }
    }

    void backward_conv(Ref x, Ref w, Ref bias, const ConvDims& cd, Ref y) {
        const TensorT<R>& vx = value(x);
        const TensorT<R>& vw = value(w);
        const TensorT<R>& dy = grad(y);
        const int cin_g = vx.c / cd.groups;
        const int cout_g = vw.n / cd.groups;
        const size_t krows = static_cast<size_t>(cin_g) * cd.kh * cd.kw;
        const size_t ncols = static_cast<size_t>(cd.oh) * cd.ow;
        std::vector<R> col(krows * ncols);
        std::vector<R> dcol(requires_grad(x) ? krows * ncols : 0);
        for (int ni = 0; ni < vx.n; ++ni) {
            for (int gi = 0; gi < cd.groups; ++gi) {
                // The im2col buffer is recomputed rather than cached from the
                // forward pass; it trades a little compute for graph memory.
                im2col(vx.plane(ni, gi * cin_g), vx.h, vx.w, cin_g, cd, col.data());
                CMap dY(dy.plane(ni, gi * cout_g), cout_g, static_cast<Eigen::Index>(ncols));
                if (requires_grad(w)) {
                    CMap C(col.data(), static_cast<Eigen::Index>(krows),
                           static_cast<Eigen::Index>(ncols));
                    MMap dW(node(w).grad.data.data() + static_cast<size_t>(gi) * cout_g * krows,
                            cout_g, static_cast<Eigen::Index>(krows));
                    dW.noalias() += dY * C.transpose();
                }
                if (requires_grad(x)) {
                    CMap W(vw.data.data() + static_cast<size_t>(gi) * cout_g * krows, cout_g,
                           static_cast<Eigen::Index>(krows));
                    MMap dC(dcol.data(), static_cast<Eigen::Index>(krows),
                            static_cast<Eigen::Index>(ncols));
                    dC.noalias() = W.transpose() * dY;
                    col2im_accum(dcol.data(), vx.h, vx.w, cin_g, cd,
                                 node(x).grad.plane(ni, gi * cin_g));
                }
            }
            if (bias != kNone && requires_grad(bias)) {
                auto& db = node(bias).grad.data;
                for (int co = 0; co < dy.c; ++co) {
                    const R* plane = dy.plane(ni, co);
                    R sum = 0;
                    for (size_t i = 0; i < ncols; ++i) sum += plane[i];
                    db[static_cast<size_t>(co)] += sum;
                }
            }
        }
    }

    void backward_batchnorm(Ref x, Ref gamma, Ref beta, const std::vector<R>& mean,
                            const std::vector<R>& inv_std, bool training, Ref y) {
        const TensorT<R>& vx = value(x);
        const TensorT<R>& vg = value(gamma);
        const TensorT<R>& dy = grad(y);
        const size_t plane = static_cast<size_t>(vx.h) * vx.w;
        const R count = static_cast<R>(static_cast<size_t>(vx.n) * plane);
        for (int ci = 0; ci < vx.c; ++ci) {
            const R mu = mean[static_cast<size_t>(ci)];
            const R is = inv_std[static_cast<size_t>(ci)];
            R sum_dy = 0, sum_dy_xh = 0;
            for (int ni = 0; ni < vx.n; ++ni) {
                const R* xs = vx.plane(ni, ci);
                const R* ds = dy.plane(ni, ci);
                for (size_t i = 0; i < plane; ++i) {
                    sum_dy += ds[i];
                    sum_dy_xh += ds[i] * (xs[i] - mu) * is;
                }
            }
            if (requires_grad(gamma)) node(gamma).grad.data[ci] += sum_dy_xh;
            if (requires_grad(beta)) node(beta).grad.data[ci] += sum_dy;
            if (requires_grad(x)) {
                const R g = vg.data[static_cast<size_t>(ci)];
                for (int ni = 0; ni < vx.n; ++ni) {
                    const R* xs = vx.plane(ni, ci);
                    const R* ds = dy.plane(ni, ci);
                    R* dxs = node(x).grad.plane(ni, ci);
                    if (training) {
                        // Batch statistics depend on x, so their gradient
                        // contributions are folded in.
                        for (size_t i = 0; i < plane; ++i) {
                            const R xh = (xs[i] - mu) * is;
                            dxs[i] += g * is * (ds[i] - sum_dy / count - xh * sum_dy_xh / count);
                        }
                    } else {
                        for (size_t i = 0; i < plane; ++i) dxs[i] += g * is * ds[i];
                    }
                }
            }
        }
    }
};

using Graph = GraphT<float>;

}  // namespace trifuse
