#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "trifuse/autodiff.hpp"
#include "trifuse/image.hpp"
#include "trifuse/params.hpp"
#include "trifuse/rng.hpp"

namespace trifuse {

struct CnmConfig {
    int base_channels = 32;
    int num_blocks = 2;
    int num_heads = 4;
    int temb_dim = 64;
};

struct EsmConfig {
    int block_channels = 32;
    std::vector<int> dilations{1, 2};
    // Cross-attention runs on avg-pooled feature maps (1 = full resolution).
    int attn_pool = 2;
    // Fallback: keys/values from the stream itself instead of the other two.
    bool self_attention = false;
};

// Everything enhance() needs to rebuild the network, embedded in checkpoints
// as the "__config__" JSON entry.
struct ModelConfig {
    int channels = 3;
    int k = 1;
    int T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    CnmConfig cnm;
    EsmConfig esm;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& s);
};

enum class InitKind { Zero, One, KaimingConv, ScaledLinear };

struct ParamSpec {
    std::string name;
    int n, c, h, w;
    InitKind kind;
    bool trainable;
};

// Fixed creation order; it defines both the RNG consumption order during
// initialization and the architecture's parameter inventory.
std::vector<ParamSpec> param_specs(const ModelConfig& cfg);
size_t param_count(const ModelConfig& cfg);  // trainable scalars

constexpr double kBnMomentum = 0.9;
constexpr double kBnEps = 1e-5;
constexpr double kLnEps = 1e-5;

template <typename R>
ParamBankT<R> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng = Rng(seed).stream("init");
    ParamBankT<R> bank;
    for (const ParamSpec& s : param_specs(cfg)) {
        TensorT<R> t(s.n, s.c, s.h, s.w);
        switch (s.kind) {
            case InitKind::Zero:
                break;
            case InitKind::One:
                std::fill(t.data.begin(), t.data.end(), static_cast<R>(1));
                break;
            case InitKind::KaimingConv: {
                const double fan_in = static_cast<double>(s.c) * s.h * s.w;
                const double std_dev = std::sqrt(2.0 / fan_in);
                for (R& x : t.data) x = static_cast<R>(rng.normal() * std_dev);
                break;
            }
            case InitKind::ScaledLinear: {
                const double fan_in = static_cast<double>(s.w);
                const double std_dev = std::sqrt(1.0 / fan_in);
                for (R& x : t.data) x = static_cast<R>(rng.normal() * std_dev);
                break;
            }
        }
        bank.entries[s.name] = {std::move(t), s.trainable};
    }
    return bank;
}

template <typename R>
std::vector<R> sinusoidal_embedding(int t, int dim) {
    require(dim >= 2 && dim % 2 == 0, "timestep embedding dim must be even and >= 2");
    const int half = dim / 2;
    std::vector<R> out(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double freq =
            half > 1 ? std::exp(-std::log(10000.0) * i / (half - 1)) : 1.0;
        out[static_cast<size_t>(i)] = static_cast<R>(std::sin(t * freq));
        out[static_cast<size_t>(half + i)] = static_cast<R>(std::cos(t * freq));
    }
    return out;
}

using NodeMap = std::map<std::string, int>;

// Registers every trainable bank entry as a graph leaf. `with_grad` selects
// parameter leaves (training) versus plain inputs (inference).
template <typename R>
NodeMap graph_params(GraphT<R>& g, const ParamBankT<R>& bank, bool with_grad) {
    NodeMap out;
    for (const auto& [name, e] : bank.entries) {
        if (!e.trainable) continue;  // running stats stay in the bank
        out[name] = with_grad ? g.param(e.value) : g.input(e.value);
    }
    return out;
}

namespace detail {
inline int pnode(const NodeMap& p, const std::string& name) {
    auto it = p.find(name);
    require(it != p.end(), "missing parameter node: " + name);
    return it->second;
}
}  // namespace detail

// Y = X + Conv(ReLU(BN(Conv(ReLU(BN(X)))))), "same" spatial dims at the
// configured dilation.
template <typename R>
int dilated_res_block(GraphT<R>& g, const NodeMap& p, ParamBankT<R>& bank,
                      const std::string& prefix, int x, int dilation, bool training) {
    using detail::pnode;
    auto bn = [&](int in, const std::string& tag) {
        return g.batchnorm(in, pnode(p, prefix + "." + tag + ".g"),
                           pnode(p, prefix + "." + tag + ".b"),
                           &bank.at(prefix + "." + tag + ".rm"),
                           &bank.at(prefix + "." + tag + ".rv"), training,
                           static_cast<R>(kBnMomentum), static_cast<R>(kBnEps));
    };
    int y = bn(x, "bn1");
    y = g.relu(y);
    y = g.conv2d(y, pnode(p, prefix + ".conv1.w"), pnode(p, prefix + ".conv1.b"), 1, dilation,
                 dilation, 1);
    y = bn(y, "bn2");
    y = g.relu(y);
    y = g.conv2d(y, pnode(p, prefix + ".conv2.w"), pnode(p, prefix + ".conv2.b"), 1, dilation,
                 dilation, 1);
    return g.add(x, y);
}

// Transformer noise predictor: concat(x_t, cond) -> conv encoder (two
// stride-2 stages) -> tokens + timestep embedding -> pre-norm transformer
// blocks -> conv decoder (two nearest-upsample stages with encoder skip
// concats, so full-resolution detail reaches the head) -> zero-init head.
template <typename R>
int cnm_forward(GraphT<R>& g, const NodeMap& p, const ModelConfig& cfg, int x_t, int cond,
                int t) {
    using detail::pnode;
    const TensorT<R>& vx = g.value(x_t);
    require(t >= 1 && t <= cfg.T, "cnm: timestep out of range");
    require(g.value(cond).same_shape(vx), "cnm: condition shape must match x_t");
    require(vx.h % 4 == 0 && vx.w % 4 == 0,
            "cnm: spatial dims must be divisible by 4 (encoder downsamples twice)");
    const int bc = cfg.cnm.base_channels;

    int x = g.concat_channels({x_t, cond});
    const int h0 = g.relu(g.conv2d(x, pnode(p, "cnm.enc0.w"), pnode(p, "cnm.enc0.b"), 1, 1, 1, 1));
    const int h1 =
        g.relu(g.conv2d(h0, pnode(p, "cnm.enc1.w"), pnode(p, "cnm.enc1.b"), 2, 1, 1, 1));
    x = g.relu(g.conv2d(h1, pnode(p, "cnm.enc2.w"), pnode(p, "cnm.enc2.b"), 2, 1, 1, 1));
    const int fh = g.value(x).h, fw = g.value(x).w;
    int tokens = g.map_to_tokens(x);

    TensorT<R> temb(vx.n, 1, 1, cfg.cnm.temb_dim);
    const std::vector<R> e = sinusoidal_embedding<R>(t, cfg.cnm.temb_dim);
    for (int ni = 0; ni < vx.n; ++ni)
        for (int j = 0; j < cfg.cnm.temb_dim; ++j) temb.at(ni, 0, 0, j) = e[static_cast<size_t>(j)];
    int tv = g.input(std::move(temb));
    tv = g.relu(g.linear(tv, pnode(p, "cnm.temb0.w"), pnode(p, "cnm.temb0.b")));
    tv = g.linear(tv, pnode(p, "cnm.temb1.w"), pnode(p, "cnm.temb1.b"));

    for (int b = 0; b < cfg.cnm.num_blocks; ++b) {
        const std::string pre = "cnm.blk" + std::to_string(b);
        tokens = g.broadcast_add_rows(tokens, tv);
        int a = g.layernorm(tokens, pnode(p, pre + ".ln1.g"), pnode(p, pre + ".ln1.b"),
                            static_cast<R>(kLnEps));
        int q = g.split_heads(g.linear(a, pnode(p, pre + ".attn.wq"), pnode(p, pre + ".attn.bq")),
                              cfg.cnm.num_heads);
        int k = g.split_heads(g.linear(a, pnode(p, pre + ".attn.wk"), pnode(p, pre + ".attn.bk")),
                              cfg.cnm.num_heads);
        int v = g.split_heads(g.linear(a, pnode(p, pre + ".attn.wv"), pnode(p, pre + ".attn.bv")),
                              cfg.cnm.num_heads);
        int att = g.merge_heads(g.attention(q, k, v));
        att = g.linear(att, pnode(p, pre + ".attn.wo"), pnode(p, pre + ".attn.bo"));
        tokens = g.add(tokens, att);
        int f = g.layernorm(tokens, pnode(p, pre + ".ln2.g"), pnode(p, pre + ".ln2.b"),
                            static_cast<R>(kLnEps));
        f = g.relu(g.linear(f, pnode(p, pre + ".ffn.w1"), pnode(p, pre + ".ffn.b1")));
        f = g.linear(f, pnode(p, pre + ".ffn.w2"), pnode(p, pre + ".ffn.b2"));
        tokens = g.add(tokens, f);
    }

    x = g.tokens_to_map(tokens, bc, fh, fw);
    x = g.concat_channels({g.upsample_nearest2(x), h1});
    x = g.relu(g.conv2d(x, pnode(p, "cnm.dec0.w"), pnode(p, "cnm.dec0.b"), 1, 1, 1, 1));
    x = g.concat_channels({g.upsample_nearest2(x), h0});
    x = g.relu(g.conv2d(x, pnode(p, "cnm.dec1.w"), pnode(p, "cnm.dec1.b"), 1, 1, 1, 1));
    return g.conv2d(x, pnode(p, "cnm.out.w"), pnode(p, "cnm.out.b"), 1, 1, 1, 1);
}

// Edge sharpener over the level-1 {V, H, D} bands: per-band lift conv and
// dilated residual blocks, directional cross-attention (queries from one
// stream, keys/values from the concatenation of the other two), then a
// zero-initialized per-band fusion conv applied residually.
template <typename R>
std::array<int, 3> esm_forward(GraphT<R>& g, const NodeMap& p, ParamBankT<R>& bank,
                               const ModelConfig& cfg, const std::array<int, 3>& bands,
                               bool training) {
    using detail::pnode;
    static const std::array<const char*, 3> kStream = {"v", "h", "d"};
    const TensorT<R>& v0 = g.value(bands[0]);
    for (int s = 1; s < 3; ++s)
        require(g.value(bands[static_cast<size_t>(s)]).same_shape(v0),
                "esm: detail bands must share shape");
    const int pool = cfg.esm.attn_pool;
    require(pool >= 1 && (pool & (pool - 1)) == 0, "esm: attn_pool must be a power of two");
    const int bc = cfg.esm.block_channels;

    std::array<int, 3> phi{};
    for (int s = 0; s < 3; ++s) {
        const std::string pre = std::string("esm.") + kStream[static_cast<size_t>(s)];
        int x = g.conv2d(bands[static_cast<size_t>(s)], pnode(p, pre + ".lift.w"),
                         pnode(p, pre + ".lift.b"), 1, 1, 1, 1);
        for (size_t j = 0; j < cfg.esm.dilations.size(); ++j) {
            x = dilated_res_block(g, p, bank, pre + ".blk" + std::to_string(j), x,
                                  cfg.esm.dilations[j], training);
        }
        phi[static_cast<size_t>(s)] = x;
    }

    auto pooled = [&](int x) {
        for (int f = pool; f > 1; f /= 2) x = g.downsample_avg2(x);
        return x;
    };
    std::array<int, 3> phi_p{};
    for (int s = 0; s < 3; ++s) phi_p[static_cast<size_t>(s)] = pooled(phi[static_cast<size_t>(s)]);
    const int ph = g.value(phi_p[0]).h, pw = g.value(phi_p[0]).w;

    auto dw_pw = [&](int x, const std::string& pre) {
        const int ch = g.value(x).c;
        int y = g.conv2d(x, pnode(p, pre + ".dw"), pnode(p, pre + ".dwb"), 1, 1, 1, ch);
        return g.conv2d(y, pnode(p, pre + ".pw"), pnode(p, pre + ".pwb"), 1, 0, 1, 1);
    };

    std::array<int, 3> mixed{};
    for (int s = 0; s < 3; ++s) {
        const std::string pre = std::string("esm.") + kStream[static_cast<size_t>(s)] + ".attn";
        int ctx;
        if (cfg.esm.self_attention) {
            ctx = phi_p[static_cast<size_t>(s)];
        } else {
            ctx = g.concat_channels(
                {phi_p[static_cast<size_t>((s + 1) % 3)], phi_p[static_cast<size_t>((s + 2) % 3)]});
        }
        int q = g.map_to_tokens(dw_pw(phi_p[static_cast<size_t>(s)], pre + ".q"));
        int k = g.map_to_tokens(dw_pw(ctx, pre + ".k"));
        int v = g.map_to_tokens(dw_pw(ctx, pre + ".v"));
        int att = g.tokens_to_map(g.attention(q, k, v), bc, ph, pw);
        att = g.conv2d(att, pnode(p, pre + ".o.w"), pnode(p, pre + ".o.b"), 1, 0, 1, 1);
        for (int f = pool; f > 1; f /= 2) att = g.upsample_nearest2(att);
        mixed[static_cast<size_t>(s)] = g.add(phi[static_cast<size_t>(s)], att);
    }

    int fused = g.concat_channels({mixed[0], mixed[1], mixed[2]});
    std::array<int, 3> out{};
    for (int s = 0; s < 3; ++s) {
        const std::string pre = std::string("esm.") + kStream[static_cast<size_t>(s)];
        int delta = g.conv2d(fused, pnode(p, pre + ".fuse.w"), pnode(p, pre + ".fuse.b"), 1, 1, 1,
                             1);
        out[static_cast<size_t>(s)] = g.add(bands[static_cast<size_t>(s)], delta);
    }
    return out;
}

// L = mean((pred - true)^2) + lambda * mean|enhanced - reference|.
template <typename R>
int training_loss(GraphT<R>& g, int pred, int true_noise, int enhanced, int reference, R lambda) {
    int l2 = g.mean_all(g.square(g.sub(pred, true_noise)));
    if (lambda == static_cast<R>(0)) return l2;
    int l1 = g.mean_all(g.abs(g.sub(enhanced, reference)));
    return g.add(l2, g.scale(l1, lambda));
}

// Inputs for one training step, already in the mapped A_k domain where
// applicable. Detail bands and dims are ordered finest first, matching the
// wavelet pyramid; level 0 feeds the ESM, upper levels pass through.
template <typename R>
struct TrainingData {
    TensorT<R> x_t, cond, eps;
    std::array<TensorT<R>, 3> low_details;
    std::vector<std::array<TensorT<R>, 3>> upper_details;
    std::vector<std::pair<int, int>> level_dims;
    TensorT<R> reference;
    int t = 1;
    R alpha_bar_t = static_cast<R>(1);
    R lambda = static_cast<R>(0.1);
};

template <typename R>
struct TrainingGraph {
    NodeMap params;
    int pred = -1;
    int enhanced = -1;
    int loss = -1;
};

// Full differentiable training step: CNM noise prediction, one-step x0
// estimate, ESM-refined detail bands, wavelet reconstruction, and the
// combined loss.
template <typename R>
TrainingGraph<R> build_training_graph(GraphT<R>& g, ParamBankT<R>& bank, const ModelConfig& cfg,
                                      const TrainingData<R>& d, bool training = true) {
    require(static_cast<int>(d.level_dims.size()) == cfg.k,
            "training graph: level_dims must have one entry per wavelet level");
    require(static_cast<int>(d.upper_details.size()) == cfg.k - 1,
            "training graph: upper_details must cover levels 2..k");
    TrainingGraph<R> tg;
    tg.params = graph_params(g, bank, /*with_grad=*/true);

    int x_t = g.input(d.x_t);
    int cond = g.input(d.cond);
    int eps = g.input(d.eps);
    tg.pred = cnm_forward(g, tg.params, cfg, x_t, cond, d.t);

    // One-step x0 estimate from the predicted noise, mapped back to the
    // wavelet approximation range [0, 2^k].
    const R sqrt_ab = std::sqrt(d.alpha_bar_t);
    const R sqrt_1mab = std::sqrt(static_cast<R>(1) - d.alpha_bar_t);
    int x0_hat = g.add(g.scale(x_t, static_cast<R>(1) / sqrt_ab),
                       g.scale(tg.pred, -sqrt_1mab / sqrt_ab));
    const R half_range = static_cast<R>(std::ldexp(1.0, cfg.k - 1));
    int approx = g.affine(x0_hat, half_range, half_range);

    std::array<int, 3> fine = {g.input(d.low_details[0]), g.input(d.low_details[1]),
                               g.input(d.low_details[2])};
    fine = esm_forward(g, tg.params, bank, cfg, fine, training);

    int cur = approx;
    for (int level = cfg.k - 1; level >= 0; --level) {
        std::array<int, 3> bands;
        if (level == 0) {
            bands = fine;
        } else {
            const auto& ud = d.upper_details[static_cast<size_t>(level - 1)];
            bands = {g.input(ud[0]), g.input(ud[1]), g.input(ud[2])};
        }
        const auto [lh, lw] = d.level_dims[static_cast<size_t>(level)];
        cur = g.idwt_level(cur, bands[0], bands[1], bands[2], lh, lw);
    }
    tg.enhanced = cur;

    int ref = g.input(d.reference);
    tg.loss = training_loss(g, tg.pred, eps, tg.enhanced, ref, d.lambda);
    return tg;
}

// ImageTensor (HWC) <-> TensorT (NCHW) bridges.
template <typename R>
TensorT<R> image_to_tensor(const ImageTensor& img) {
    TensorT<R> t(1, img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) t.at(0, c, y, x) = static_cast<R>(img.at(y, x, c));
    return t;
}

template <typename R>
ImageTensor tensor_to_image(const TensorT<R>& t, int batch_index = 0) {
    ImageTensor img(t.h, t.w, t.c);
    for (int c = 0; c < t.c; ++c)
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x)
                img.at(y, x, c) = static_cast<float>(t.at(batch_index, c, y, x));
    return img;
}

template <typename R>
TensorT<R> stack_batch(const std::vector<TensorT<R>>& samples) {
    require(!samples.empty(), "stack_batch: empty batch");
    const TensorT<R>& s0 = samples[0];
    TensorT<R> out(static_cast<int>(samples.size()), s0.c, s0.h, s0.w);
    for (size_t i = 0; i < samples.size(); ++i) {
        require(samples[i].same_shape(s0) && samples[i].n == 1,
                "stack_batch: samples must be single-batch and same shape");
        std::copy(samples[i].data.begin(), samples[i].data.end(),
                  out.data.begin() + static_cast<long>(i * s0.numel()));
    }
    return out;
}

}  // namespace trifuse
