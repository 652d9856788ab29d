#include "trifuse/model.hpp"

#include <json.hpp>

#include "trifuse/common.hpp"

namespace trifuse {

void ModelConfig::validate() const {
    require(channels == 1 || channels == 3, "config: channels must be 1 or 3");
    require(k >= 1 && k <= 3, "config: k must be in {1, 2, 3}");
    require(T >= 2, "config: T must be at least 2");
    require(beta_start > 0 && beta_start <= beta_end && beta_end < 1,
            "config: betas must satisfy 0 < beta_start <= beta_end < 1");
    require(cnm.base_channels >= 1 && cnm.num_blocks >= 1 && cnm.num_heads >= 1 &&
                cnm.temb_dim >= 2,
            "config: CNM counts must be positive");
    require(cnm.base_channels % cnm.num_heads == 0,
            "config: base_channels must be divisible by num_heads");
    require(cnm.temb_dim % 2 == 0, "config: timestep embedding dim must be even");
    require(esm.block_channels >= 1, "config: ESM block_channels must be positive");
    require(!esm.dilations.empty(), "config: ESM dilation list must be non-empty");
    for (int d : esm.dilations) require(d >= 1, "config: ESM dilations must be >= 1");
    require(esm.attn_pool == 1 || esm.attn_pool == 2 || esm.attn_pool == 4,
            "config: esm attn_pool must be 1, 2, or 4");
}

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["channels"] = channels;
    j["k"] = k;
    j["T"] = T;
    j["beta_start"] = beta_start;
    j["beta_end"] = beta_end;
    j["cnm"] = {{"base_channels", cnm.base_channels},
                {"num_blocks", cnm.num_blocks},
                {"num_heads", cnm.num_heads},
                {"temb_dim", cnm.temb_dim}};
    j["esm"] = {{"block_channels", esm.block_channels},
                {"dilations", esm.dilations},
                {"attn_pool", esm.attn_pool},
                {"self_attention", esm.self_attention}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("bad model config JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.channels = j.at("channels").get<int>();
        cfg.k = j.at("k").get<int>();
        cfg.T = j.at("T").get<int>();
        cfg.beta_start = j.at("beta_start").get<double>();
        cfg.beta_end = j.at("beta_end").get<double>();
        const auto& jc = j.at("cnm");
        cfg.cnm.base_channels = jc.at("base_channels").get<int>();
        cfg.cnm.num_blocks = jc.at("num_blocks").get<int>();
        cfg.cnm.num_heads = jc.at("num_heads").get<int>();
        cfg.cnm.temb_dim = jc.at("temb_dim").get<int>();
        const auto& je = j.at("esm");
        cfg.esm.block_channels = je.at("block_channels").get<int>();
        cfg.esm.dilations = je.at("dilations").get<std::vector<int>>();
        cfg.esm.attn_pool = je.at("attn_pool").get<int>();
        cfg.esm.self_attention = je.at("self_attention").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("bad model config JSON: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
    cfg.validate();
    const int c = cfg.channels;
    const int bc = cfg.cnm.base_channels;
    const int ec = cfg.esm.block_channels;
    std::vector<ParamSpec> specs;
    auto add = [&](const std::string& name, int n, int ci, int h, int w, InitKind kind,
                   bool trainable = true) {
        specs.push_back({name, n, ci, h, w, kind, trainable});
    };
    auto conv = [&](const std::string& name, int cout, int cin, int kh, int kw,
                    InitKind kind = InitKind::KaimingConv) {
        add(name + ".w", cout, cin, kh, kw, kind);
        add(name + ".b", 1, 1, 1, cout, InitKind::Zero);
    };
    auto lin = [&](const std::string& name, int fout, int fin) {
        add(name + ".w", 1, 1, fout, fin, InitKind::ScaledLinear);
        add(name + ".b", 1, 1, 1, fout, InitKind::Zero);
    };

    conv("cnm.enc0", bc, 2 * c, 3, 3);
    conv("cnm.enc1", bc, bc, 3, 3);
    conv("cnm.enc2", bc, bc, 3, 3);
    lin("cnm.temb0", bc, cfg.cnm.temb_dim);
    lin("cnm.temb1", bc, bc);
    for (int b = 0; b < cfg.cnm.num_blocks; ++b) {
        const std::string pre = "cnm.blk" + std::to_string(b);
        add(pre + ".ln1.g", 1, 1, 1, bc, InitKind::One);
        add(pre + ".ln1.b", 1, 1, 1, bc, InitKind::Zero);
        add(pre + ".attn.wq", 1, 1, bc, bc, InitKind::ScaledLinear);
        add(pre + ".attn.bq", 1, 1, 1, bc, InitKind::Zero);
        add(pre + ".attn.wk", 1, 1, bc, bc, InitKind::ScaledLinear);
        add(pre + ".attn.bk", 1, 1, 1, bc, InitKind::Zero);
        add(pre + ".attn.wv", 1, 1, bc, bc, InitKind::ScaledLinear);
        add(pre + ".attn.bv", 1, 1, 1, bc, InitKind::Zero);
        add(pre + ".attn.wo", 1, 1, bc, bc, InitKind::ScaledLinear);
        add(pre + ".attn.bo", 1, 1, 1, bc, InitKind::Zero);
        add(pre + ".ln2.g", 1, 1, 1, bc, InitKind::One);
        add(pre + ".ln2.b", 1, 1, 1, bc, InitKind::Zero);
        add(pre + ".ffn.w1", 1, 1, 4 * bc, bc, InitKind::ScaledLinear);
        add(pre + ".ffn.b1", 1, 1, 1, 4 * bc, InitKind::Zero);
        add(pre + ".ffn.w2", 1, 1, bc, 4 * bc, InitKind::ScaledLinear);
        add(pre + ".ffn.b2", 1, 1, 1, bc, InitKind::Zero);
    }
    conv("cnm.dec0", bc, 2 * bc, 3, 3);
    conv("cnm.dec1", bc, 2 * bc, 3, 3);
    conv("cnm.out", c, bc, 3, 3, InitKind::Zero);

    const int ctx_c = cfg.esm.self_attention ? ec : 2 * ec;
    for (const char* s : {"v", "h", "d"}) {
        const std::string pre = std::string("esm.") + s;
        conv(pre + ".lift", ec, c, 3, 3);
        for (size_t j = 0; j < cfg.esm.dilations.size(); ++j) {
            const std::string blk = pre + ".blk" + std::to_string(j);
            for (const char* bn : {"bn1", "bn2"}) {
                add(blk + "." + bn + ".g", 1, 1, 1, ec, InitKind::One);
                add(blk + "." + bn + ".b", 1, 1, 1, ec, InitKind::Zero);
                add(blk + "." + bn + ".rm", 1, 1, 1, ec, InitKind::Zero, false);
                add(blk + "." + bn + ".rv", 1, 1, 1, ec, InitKind::One, false);
            }
            conv(blk + ".conv1", ec, ec, 3, 3);
            conv(blk + ".conv2", ec, ec, 3, 3);
        }
        add(pre + ".attn.q.dw", ec, 1, 3, 3, InitKind::KaimingConv);
        add(pre + ".attn.q.dwb", 1, 1, 1, ec, InitKind::Zero);
        add(pre + ".attn.q.pw", ec, ec, 1, 1, InitKind::KaimingConv);
        add(pre + ".attn.q.pwb", 1, 1, 1, ec, InitKind::Zero);
        add(pre + ".attn.k.dw", ctx_c, 1, 3, 3, InitKind::KaimingConv);
        add(pre + ".attn.k.dwb", 1, 1, 1, ctx_c, InitKind::Zero);
        add(pre + ".attn.k.pw", ec, ctx_c, 1, 1, InitKind::KaimingConv);
        add(pre + ".attn.k.pwb", 1, 1, 1, ec, InitKind::Zero);
        add(pre + ".attn.v.dw", ctx_c, 1, 3, 3, InitKind::KaimingConv);
        add(pre + ".attn.v.dwb", 1, 1, 1, ctx_c, InitKind::Zero);
        add(pre + ".attn.v.pw", ec, ctx_c, 1, 1, InitKind::KaimingConv);
        add(pre + ".attn.v.pwb", 1, 1, 1, ec, InitKind::Zero);
        conv(pre + ".attn.o", ec, ec, 1, 1);
        conv(pre + ".fuse", c, 3 * ec, 3, 3, InitKind::Zero);
    }
    return specs;
}

size_t param_count(const ModelConfig& cfg) {
    size_t total = 0;
    for (const ParamSpec& s : param_specs(cfg)) {
        if (!s.trainable) continue;
        total += static_cast<size_t>(s.n) * s.c * s.h * s.w;
    }
    return total;
}

}  // namespace trifuse
