#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "test_util.hpp"
#include "trifuse/autodiff.hpp"
#include "trifuse/common.hpp"
#include "trifuse/rng.hpp"

using namespace trifuse;

namespace {

using DGraph = GraphT<double>;
using DTensor = TensorT<double>;

DTensor random_tensor(int n, int c, int h, int w, Rng& rng, double scale = 1.0) {
    DTensor t(n, c, h, w);
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

// Central finite differences against the analytic gradient of a scalar loss.
// Builds the graph twice per coordinate through `build`, which must
// construct the same scalar loss from the supplied leaf values.
void check_gradients(const std::vector<DTensor>& leaves,
                     const std::function<int(DGraph&, const std::vector<int>&)>& build,
                     double rel_tol = 1e-5, double h = 1e-4) {
    DGraph g;
    std::vector<int> refs;
    refs.reserve(leaves.size());
    for (const DTensor& t : leaves) refs.push_back(g.param(t));
    int loss = build(g, refs);
    REQUIRE(g.value(loss).numel() == 1);
    g.backward(loss);

    auto eval = [&](const std::vector<DTensor>& vals) {
        DGraph g2;
        std::vector<int> r2;
        r2.reserve(vals.size());
        for (const DTensor& t : vals) r2.push_back(g2.param(t));
        int l2 = build(g2, r2);
        return g2.value(l2).data[0];
    };

    for (size_t li = 0; li < leaves.size(); ++li) {
        const DTensor& analytic = g.grad(refs[li]);
        for (size_t i = 0; i < leaves[li].data.size(); ++i) {
            std::vector<DTensor> plus = leaves, minus = leaves;
            plus[li].data[i] += h;
            minus[li].data[i] -= h;
            double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            double ref = analytic.data[i];
            double denom = std::max({std::abs(fd), std::abs(ref), 1e-6});
            INFO("leaf ", li, " coord ", i, " analytic=", ref, " fd=", fd);
            CHECK(std::abs(fd - ref) / denom <= rel_tol);
        }
    }
}

// Plain 6-loop convolution oracle.
DTensor conv_oracle(const DTensor& x, const DTensor& w, const DTensor& b, int stride, int pad,
                    int dilation, int groups) {
    const int kh = w.h, kw = w.w;
    const int oh = (x.h + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
    const int ow = (x.w + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
    const int cin_g = x.c / groups, cout_g = w.n / groups;
    DTensor out(x.n, w.n, oh, ow);
    for (int ni = 0; ni < x.n; ++ni)
        for (int co = 0; co < w.n; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b.data.empty() ? 0.0 : b.at(0, 0, 0, co);
                    const int gidx = co / cout_g;
                    for (int ci = 0; ci < cin_g; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                int iy = oy * stride - pad + ky * dilation;
                                int ix = ox * stride - pad + kx * dilation;
                                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                                acc += x.at(ni, gidx * cin_g + ci, iy, ix) *
                                       w.at(co, ci, ky, kx);
                            }
                    out.at(ni, co, oy, ox) = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d forward: identity kernel, zero kernel, and loop oracle") {
    Rng rng(1);
    DTensor x = random_tensor(2, 3, 6, 7, rng);

    // 1x1 identity over matching channels.
    DTensor wid(3, 3, 1, 1);
    for (int i = 0; i < 3; ++i) wid.at(i, i, 0, 0) = 1.0;
    DTensor zb(1, 1, 1, 3);
    DGraph g;
    int out = g.conv2d(g.input(x), g.input(wid), g.input(zb), 1, 0, 1, 1);
    CHECK(g.value(out).data == x.data);

    // Zero kernel with bias: every output pixel equals the bias.
    DTensor wz(4, 3, 3, 3);
    DTensor bz(1, 1, 1, 4);
    for (int i = 0; i < 4; ++i) bz.at(0, 0, 0, i) = 0.25 * (i + 1);
    DGraph g2;
    int out2 = g2.conv2d(g2.input(x), g2.input(wz), g2.input(bz), 1, 1, 1, 1);
    const DTensor& v2 = g2.value(out2);
    REQUIRE(v2.c == 4);
    for (int co = 0; co < 4; ++co)
        for (int i = 0; i < v2.h * v2.w; ++i)
            CHECK(v2.plane(0, co)[i] == doctest::Approx(0.25 * (co + 1)).epsilon(1e-12));

    // Stride/pad/dilation/groups sweep against the oracle.
    for (auto [stride, pad, dilation, groups] :
         std::vector<std::array<int, 4>>{{1, 1, 1, 1}, {2, 1, 1, 1}, {1, 2, 2, 1}, {1, 1, 1, 2},
                                         {2, 0, 1, 1}, {1, 3, 3, 2}}) {
        DTensor xi = random_tensor(2, 4, 9, 8, rng);
        DTensor wi = random_tensor(6, 4 / groups, 3, 3, rng);
        DTensor bi = random_tensor(1, 1, 1, 6, rng);
        DGraph gg;
        int o = gg.conv2d(gg.input(xi), gg.input(wi), gg.input(bi), stride, pad, dilation,
                          groups);
        DTensor expect = conv_oracle(xi, wi, bi, stride, pad, dilation, groups);
        REQUIRE(gg.value(o).same_shape(expect));
        for (size_t i = 0; i < expect.data.size(); ++i)
            CHECK(gg.value(o).data[i] == doctest::Approx(expect.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("attention forward: degenerate, uniform, and loop oracle") {
    // Single key: softmax collapses to 1, output = v row.
    DGraph g;
    Rng rng(2);
    DTensor q = random_tensor(1, 1, 3, 4, rng);
    DTensor k1 = random_tensor(1, 1, 1, 4, rng);
    DTensor v1 = random_tensor(1, 1, 1, 4, rng);
    int att = g.attention(g.input(q), g.input(k1), g.input(v1));
    for (int row = 0; row < 3; ++row)
        for (int j = 0; j < 4; ++j)
            CHECK(g.value(att).at(0, 0, row, j) == doctest::Approx(v1.at(0, 0, 0, j)).epsilon(1e-9));

    // Equal keys: uniform weights, output = mean of values.
    DGraph g2;
    DTensor k2(1, 1, 5, 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) k2.at(0, 0, i, j) = 0.3 * j - 0.1;
    DTensor v2 = random_tensor(1, 1, 5, 4, rng);
    int att2 = g2.attention(g2.input(q), g2.input(k2), g2.input(v2));
    for (int row = 0; row < 3; ++row)
        for (int j = 0; j < 4; ++j) {
            double mean = 0.0;
            for (int i = 0; i < 5; ++i) mean += v2.at(0, 0, i, j) / 5.0;
            CHECK(g2.value(att2).at(0, 0, row, j) == doctest::Approx(mean).epsilon(1e-9));
        }

    // 4x8 explicit-loop oracle over batch and heads.
    DGraph g3;
    DTensor q3 = random_tensor(2, 2, 4, 8, rng);
    DTensor k3 = random_tensor(2, 2, 4, 8, rng);
    DTensor v3 = random_tensor(2, 2, 4, 8, rng);
    int att3 = g3.attention(g3.input(q3), g3.input(k3), g3.input(v3));
    const double scale = 1.0 / std::sqrt(8.0);
    for (int ni = 0; ni < 2; ++ni)
        for (int ci = 0; ci < 2; ++ci)
            for (int row = 0; row < 4; ++row) {
                double logits[4], weights[4], mx = -1e300, den = 0.0;
                for (int col = 0; col < 4; ++col) {
                    double s = 0.0;
                    for (int j = 0; j < 8; ++j)
                        s += q3.at(ni, ci, row, j) * k3.at(ni, ci, col, j);
                    logits[col] = s * scale;
                    mx = std::max(mx, logits[col]);
                }
                for (int col = 0; col < 4; ++col) den += std::exp(logits[col] - mx);
                for (int col = 0; col < 4; ++col) weights[col] = std::exp(logits[col] - mx) / den;
                for (int j = 0; j < 8; ++j) {
                    double expect = 0.0;
                    for (int col = 0; col < 4; ++col)
                        expect += weights[col] * v3.at(ni, ci, col, j);
                    CHECK(g3.value(att3).at(ni, ci, row, j) ==
                          doctest::Approx(expect).epsilon(1e-9));
                }
            }
}

TEST_CASE("backward basics: sum of squares, constant loss, repeat call") {
    Rng rng(3);
    DTensor x = random_tensor(1, 2, 3, 3, rng);
    DGraph g;
    int xr = g.param(x);
    int loss = g.scale(g.mean_all(g.square(xr)), static_cast<double>(x.numel()));
    g.backward(loss);
    for (size_t i = 0; i < x.data.size(); ++i)
        CHECK(g.grad(xr).data[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-12));

    // Second backward call recomputes the same gradients (grads are zeroed
    // first, not accumulated across calls).
    g.backward(loss);
    for (size_t i = 0; i < x.data.size(); ++i)
        CHECK(g.grad(xr).data[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-12));

    // Loss independent of the parameter: gradient identically zero.
    DGraph g2;
    int p = g2.param(x);
    int c = g2.input(DTensor::scalar(3.0));
    int l2 = g2.mean_all(g2.square(c));
    g2.backward(l2);
    for (double v : g2.grad(p).data) CHECK(v == 0.0);
}

TEST_CASE("finite differences: elementwise, affine, mean, abs") {
    Rng rng(4);
    std::vector<DTensor> leaves = {random_tensor(1, 2, 3, 4, rng),
                                   random_tensor(1, 2, 3, 4, rng)};
    check_gradients(leaves, [](DGraph& g, const std::vector<int>& r) {
        int s = g.add(g.mul(r[0], r[1]), g.affine(r[0], 0.7, -0.2));
        s = g.sub(s, g.scale(r[1], 1.3));
        return g.mean_all(g.square(s));
    });

    // |x| away from the kink.
    DTensor far = random_tensor(1, 1, 3, 3, rng);
    for (double& v : far.data) v += (v >= 0 ? 1.0 : -1.0);
    check_gradients({far}, [](DGraph& g, const std::vector<int>& r) {
        return g.mean_all(g.abs(r[0]));
    });
}

TEST_CASE("finite differences: relu away from kink") {
    Rng rng(5);
    DTensor x = random_tensor(1, 2, 4, 4, rng);
    for (double& v : x.data) v += (v >= 0 ? 0.5 : -0.5);
    check_gradients({x}, [](DGraph& g, const std::vector<int>& r) {
        return g.mean_all(g.square(g.relu(r[0])));
    });
}

TEST_CASE("finite differences: conv2d variants") {
    Rng rng(6);
    for (auto [stride, pad, dilation, groups] :
         std::vector<std::array<int, 4>>{{1, 1, 1, 1}, {2, 1, 1, 1}, {1, 2, 2, 1}, {1, 1, 1, 2}}) {
        std::vector<DTensor> leaves = {random_tensor(2, 2, 5, 6, rng),
                                       random_tensor(4, 2 / groups, 3, 3, rng),
                                       random_tensor(1, 1, 1, 4, rng)};
        int s = stride, p = pad, dl = dilation, gr = groups;
        check_gradients(leaves, [=](DGraph& g, const std::vector<int>& r) {
            return g.mean_all(g.square(g.conv2d(r[0], r[1], r[2], s, p, dl, gr)));
        });
    }
}

TEST_CASE("finite differences: linear, matmul, softmax, attention") {
    Rng rng(7);
    check_gradients({random_tensor(1, 1, 3, 5, rng), random_tensor(1, 1, 4, 5, rng),
                     random_tensor(1, 1, 1, 4, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.linear(r[0], r[1], r[2])));
                    });

    check_gradients({random_tensor(2, 1, 3, 4, rng), random_tensor(2, 1, 4, 5, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.matmul(r[0], r[1])));
                    });

    check_gradients({random_tensor(2, 1, 3, 4, rng), random_tensor(2, 1, 5, 4, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.matmul(r[0], r[1], true)));
                    });

    check_gradients({random_tensor(1, 2, 3, 4, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.softmax_lastdim(r[0])));
                    });

    check_gradients({random_tensor(1, 2, 3, 4, rng), random_tensor(1, 2, 5, 4, rng),
                     random_tensor(1, 2, 5, 4, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.attention(r[0], r[1], r[2])));
                    });
}

TEST_CASE("finite differences: normalization layers") {
    Rng rng(8);
    // LayerNorm over the last dim.
    check_gradients({random_tensor(1, 1, 4, 6, rng), random_tensor(1, 1, 1, 6, rng),
                     random_tensor(1, 1, 1, 6, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.layernorm(r[0], r[1], r[2], 1e-5)));
                    });

    // BatchNorm, training mode. The running-stat pointers are only read and
    // written during the forward call, so per-build scratch tensors suffice.
    check_gradients(
        {random_tensor(2, 3, 4, 4, rng), random_tensor(1, 1, 1, 3, rng),
         random_tensor(1, 1, 1, 3, rng)},
        [](DGraph& g, const std::vector<int>& r) {
            DTensor rm(1, 1, 1, 3), rv(1, 1, 1, 3);
            for (double& v : rv.data) v = 1.0;
            int y = g.batchnorm(r[0], r[1], r[2], &rm, &rv, true, 0.9, 1e-5);
            return g.mean_all(g.square(y));
        });

    // BatchNorm, eval mode: a fixed affine map by the running stats.
    {
        Rng r2(9);
        DTensor run_m = random_tensor(1, 1, 1, 3, r2, 0.3);
        DTensor run_v = random_tensor(1, 1, 1, 3, r2, 0.1);
        for (double& v : run_v.data) v = 1.0 + std::abs(v);
        check_gradients(
            {random_tensor(2, 3, 4, 4, rng), random_tensor(1, 1, 1, 3, rng),
             random_tensor(1, 1, 1, 3, rng)},
            [&run_m, &run_v](DGraph& g, const std::vector<int>& r) {
                DTensor rm = run_m, rv = run_v;
                int y = g.batchnorm(r[0], r[1], r[2], &rm, &rv, false, 0.9, 1e-5);
                return g.mean_all(g.square(y));
            });
    }
}

TEST_CASE("batchnorm training mode updates running stats") {
    Rng rng(10);
    DTensor x = random_tensor(2, 2, 3, 3, rng);
    DTensor gamma(1, 1, 1, 2), beta(1, 1, 1, 2);
    for (double& v : gamma.data) v = 1.0;
    DTensor rm(1, 1, 1, 2), rv(1, 1, 1, 2);
    for (double& v : rv.data) v = 1.0;

    // Per-channel batch mean/var (biased) oracle.
    const int per = 2 * 3 * 3;
    double want_m[2], want_v[2];
    for (int c = 0; c < 2; ++c) {
        double s = 0.0, s2 = 0.0;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 9; ++i) {
                double v = x.plane(n, c)[i];
                s += v;
                s2 += v * v;
            }
        want_m[c] = s / per;
        want_v[c] = s2 / per - want_m[c] * want_m[c];
    }

    DGraph g;
    int y = g.batchnorm(g.input(x), g.input(gamma), g.input(beta), &rm, &rv, true, 0.9, 1e-5);
    (void)y;
    for (int c = 0; c < 2; ++c) {
        CHECK(rm.at(0, 0, 0, c) == doctest::Approx(0.1 * want_m[c]).epsilon(1e-9));
        CHECK(rv.at(0, 0, 0, c) == doctest::Approx(0.9 * 1.0 + 0.1 * want_v[c]).epsilon(1e-9));
    }
}

TEST_CASE("finite differences: shape movers") {
    Rng rng(11);
    check_gradients({random_tensor(1, 3, 4, 4, rng), random_tensor(1, 2, 4, 4, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.concat_channels({r[0], r[1]})));
                    });

    check_gradients({random_tensor(1, 2, 3, 4, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.upsample_nearest2(r[0])));
                    });

    check_gradients({random_tensor(1, 2, 4, 6, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.downsample_avg2(r[0])));
                    });

    check_gradients({random_tensor(2, 3, 2, 4, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        int t = g.map_to_tokens(r[0]);
                        int m = g.tokens_to_map(t, 3, 2, 4);
                        return g.mean_all(g.square(m));
                    });

    check_gradients({random_tensor(1, 1, 4, 8, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        int s = g.split_heads(r[0], 2);
                        return g.mean_all(g.square(g.merge_heads(s)));
                    });

    check_gradients({random_tensor(2, 1, 5, 4, rng), random_tensor(2, 1, 1, 4, rng)},
                    [](DGraph& g, const std::vector<int>& r) {
                        return g.mean_all(g.square(g.broadcast_add_rows(r[0], r[1])));
                    });
}

TEST_CASE("shape mover round trips preserve values") {
    Rng rng(12);
    DTensor x = random_tensor(2, 3, 4, 5, rng);
    DGraph g;
    int t = g.map_to_tokens(g.input(x));
    CHECK(g.value(t).n == 2);
    CHECK(g.value(t).h == 20);
    CHECK(g.value(t).w == 3);
    int back = g.tokens_to_map(t, 3, 4, 5);
    CHECK(g.value(back).data == x.data);

    DTensor tok = random_tensor(2, 1, 6, 8, rng);
    DGraph g2;
    int s = g2.split_heads(g2.input(tok), 4);
    CHECK(g2.value(s).c == 4);
    CHECK(g2.value(s).w == 2);
    int m = g2.merge_heads(s);
    CHECK(g2.value(m).data == tok.data);

    DTensor up_in = random_tensor(1, 1, 2, 2, rng);
    DGraph g3;
    const DTensor& up = g3.value(g3.upsample_nearest2(g3.input(up_in)));
    CHECK(up.h == 4);
    CHECK(up.at(0, 0, 0, 0) == up_in.at(0, 0, 0, 0));
    CHECK(up.at(0, 0, 1, 1) == up_in.at(0, 0, 0, 0));
    CHECK(up.at(0, 0, 3, 3) == up_in.at(0, 0, 1, 1));

    DGraph g4;
    const DTensor& down = g4.value(g4.downsample_avg2(g4.input(up_in)));
    CHECK(down.h == 1);
    CHECK(down.at(0, 0, 0, 0) ==
          doctest::Approx(0.25 * (up_in.at(0, 0, 0, 0) + up_in.at(0, 0, 0, 1) +
                                  up_in.at(0, 0, 1, 0) + up_in.at(0, 0, 1, 1)))
              .epsilon(1e-12));
}

TEST_CASE("finite differences: idwt level") {
    Rng rng(13);
    for (auto [h, w] : std::vector<std::pair<int, int>>{{6, 8}, {7, 9}}) {
        const int ha = (h + 1) / 2, wa = (w + 1) / 2;
        std::vector<DTensor> leaves = {random_tensor(1, 2, ha, wa, rng),
                                       random_tensor(1, 2, h / 2, wa, rng),
                                       random_tensor(1, 2, ha, w / 2, rng),
                                       random_tensor(1, 2, h / 2, w / 2, rng)};
        int hh = h, ww = w;
        check_gradients(leaves, [=](DGraph& g, const std::vector<int>& r) {
            return g.mean_all(g.square(g.idwt_level(r[0], r[1], r[2], r[3], hh, ww)));
        });
    }
}

TEST_CASE("shape mismatches raise usage errors") {
    DGraph g;
    int a = g.input(DTensor(1, 1, 2, 2));
    int b = g.input(DTensor(1, 1, 3, 2));
    CHECK_THROWS_AS(g.add(a, b), UsageError);
    int kq_mismatch = g.input(DTensor(1, 1, 3, 5));  // feature dim 5 != 2
    CHECK_THROWS_AS(g.attention(a, kq_mismatch, kq_mismatch), UsageError);
    int nonscalar = g.input(DTensor(1, 1, 2, 2));
    CHECK_THROWS_AS(g.backward(nonscalar), UsageError);
}
