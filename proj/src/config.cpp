#include "trifuse/config.hpp"

#include <fstream>
#include <sstream>

#include "trifuse/common.hpp"

namespace trifuse {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T out{};
    in >> out;
    require(!in.fail() && in.eof(), "config: bad value for " + key + ": '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw UsageError("config: bad boolean for " + key + ": '" + value + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "T") T = parse_number<int>(key, value);
    else if (key == "beta_start") beta_start = parse_number<double>(key, value);
    else if (key == "beta_end") beta_end = parse_number<double>(key, value);
    else if (key == "S") S = parse_number<int>(key, value);
    else if (key == "eta") eta = parse_number<double>(key, value);
    else if (key == "k") k = parse_number<int>(key, value);
    else if (key == "channels") channels = parse_number<int>(key, value);
    else if (key == "cnm_base_channels") cnm_base_channels = parse_number<int>(key, value);
    else if (key == "cnm_blocks") cnm_blocks = parse_number<int>(key, value);
    else if (key == "cnm_heads") cnm_heads = parse_number<int>(key, value);
    else if (key == "cnm_temb_dim") cnm_temb_dim = parse_number<int>(key, value);
    else if (key == "esm_channels") esm_channels = parse_number<int>(key, value);
    else if (key == "esm_dilations") esm_dilations = value;
    else if (key == "esm_attn_pool") esm_attn_pool = parse_number<int>(key, value);
    else if (key == "esm_self_attention") esm_self_attention = parse_bool(key, value);
    else if (key == "lr") lr = parse_number<double>(key, value);
    else if (key == "adam_beta1") adam_beta1 = parse_number<double>(key, value);
    else if (key == "adam_beta2") adam_beta2 = parse_number<double>(key, value);
    else if (key == "adam_eps") adam_eps = parse_number<double>(key, value);
    else if (key == "lr_decay") lr_decay = parse_number<double>(key, value);
    else if (key == "lr_decay_every") lr_decay_every = parse_number<long>(key, value);
    else if (key == "lambda") lambda = parse_number<double>(key, value);
    else if (key == "iters") iters = parse_number<int>(key, value);
    else if (key == "batch") batch = parse_number<int>(key, value);
    else if (key == "patch") patch = parse_number<int>(key, value);
    else if (key == "ckpt_every") ckpt_every = parse_number<int>(key, value);
    else if (key == "log_every") log_every = parse_number<int>(key, value);
    else if (key == "light_gamma") light_gamma = parse_number<double>(key, value);
    else if (key == "light_gain") light_gain = parse_number<double>(key, value);
    else if (key == "light_noise") light_noise = parse_number<double>(key, value);
    else if (key == "moderate_gamma") moderate_gamma = parse_number<double>(key, value);
    else if (key == "moderate_gain") moderate_gain = parse_number<double>(key, value);
    else if (key == "moderate_noise") moderate_noise = parse_number<double>(key, value);
    else if (key == "dense_gamma") dense_gamma = parse_number<double>(key, value);
    else if (key == "dense_gain") dense_gain = parse_number<double>(key, value);
    else if (key == "dense_noise") dense_noise = parse_number<double>(key, value);
    else if (key == "seed") seed = parse_number<uint64_t>(key, value);
    else throw UsageError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos,
                "config: line " + std::to_string(lineno) + " is not 'key = value'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

std::vector<int> RunConfig::parsed_dilations() const {
    std::vector<int> out;
    std::stringstream ss(esm_dilations);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_number<int>("esm_dilations", item));
    }
    require(!out.empty(), "config: esm_dilations must list at least one rate");
    return out;
}

ModelConfig RunConfig::to_model_config() const {
    ModelConfig m;
    m.channels = channels;
    m.k = k;
    m.T = T;
    m.beta_start = beta_start;
    m.beta_end = beta_end;
    m.cnm.base_channels = cnm_base_channels;
    m.cnm.num_blocks = cnm_blocks;
    m.cnm.num_heads = cnm_heads;
    m.cnm.temb_dim = cnm_temb_dim;
    m.esm.block_channels = esm_channels;
    m.esm.dilations = parsed_dilations();
    m.esm.attn_pool = esm_attn_pool;
    m.esm.self_attention = esm_self_attention;
    return m;
}

AdamConfig RunConfig::to_adam_config() const {
    AdamConfig a;
    a.lr = lr;
    a.beta1 = adam_beta1;
    a.beta2 = adam_beta2;
    a.eps = adam_eps;
    a.decay_factor = lr_decay;
    a.decay_every = lr_decay_every;
    return a;
}

DegradationParams RunConfig::preset(LightLevel level) const {
    DegradationParams p;
    p.level = level;
    switch (level) {
        case LightLevel::light:
            p.gamma = light_gamma;
            p.gain = light_gain;
            p.noise_sigma = light_noise;
            break;
        case LightLevel::moderate:
            p.gamma = moderate_gamma;
            p.gain = moderate_gain;
            p.noise_sigma = moderate_noise;
            break;
        case LightLevel::dense:
            p.gamma = dense_gamma;
            p.gain = dense_gain;
            p.noise_sigma = dense_noise;
            break;
    }
    validate_degradation(p);
    return p;
}

void RunConfig::validate() const {
    to_model_config().validate();
    require(S >= 1 && S <= T, "config: need 1 <= S <= T");
    require(eta >= 0.0 && eta <= 1.0, "config: eta must be in [0, 1]");
    require(lr > 0, "config: lr must be positive");
    require(adam_beta1 > 0 && adam_beta1 < 1 && adam_beta2 > 0 && adam_beta2 < 1,
            "config: adam betas must be in (0, 1)");
    require(adam_eps > 0, "config: adam_eps must be positive");
    require(lr_decay > 0 && lr_decay <= 1, "config: lr_decay must be in (0, 1]");
    require(lr_decay_every >= 1, "config: lr_decay_every must be >= 1");
    require(lambda >= 0, "config: lambda must be non-negative");
    require(iters >= 0, "config: iters must be non-negative");
    require(batch >= 1, "config: batch must be >= 1");
    require(patch >= 8, "config: patch must be at least 8");
    require(ckpt_every >= 1 && log_every >= 1,
            "config: ckpt_every and log_every must be >= 1");
    const int unit = (1 << k) * 4;
    require(patch % unit == 0,
            "config: patch must be a multiple of 2^k * 4 (wavelet + CNM strides)");
    require((patch / 2) % esm_attn_pool == 0,
            "config: level-1 bands must be divisible by esm_attn_pool");
    validate_level_ordering(preset(LightLevel::light), preset(LightLevel::moderate),
                            preset(LightLevel::dense));
}

}  // namespace trifuse
