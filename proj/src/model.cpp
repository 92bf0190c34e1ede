#include "s3net/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "s3net/checkpoint.hpp"
#include "s3net/json_util.hpp"
#include "s3net/rng.hpp"

namespace s3net::model {

namespace {

constexpr double kLeakySlope = 0.1;

ag::Var conv(const NetworkParams& np, const std::string& prefix, const ag::Var& x, int stride,
             int pad) {
    return ag::conv2d(x, np.at(prefix + ".weight"), np.at(prefix + ".bias"), stride, pad);
}

ag::Var tconv(const NetworkParams& np, const std::string& prefix, const ag::Var& x, int stride,
              int pad) {
    return ag::conv_transpose2d(x, np.at(prefix + ".weight"), np.at(prefix + ".bias"), stride,
                                pad);
}

// Creates parameters in a fixed walk order so initialization is a pure
// function of (config, seed).
struct Builder {
    std::map<std::string, ag::Var>& params;
    Rng& rng;
    bool requires_grad;

    void add(const std::string& name, Tensor t) {
        params.emplace(name, ag::leaf(std::move(t), requires_grad, name));
    }

    void conv(const std::string& prefix, int co, int ci, int k) {
        Tensor w({co, ci, k, k});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
        for (std::int64_t i = 0; i < w.size(); ++i) {
            w.flat(i) = rng.normal(0.0, stddev);
        }
        add(prefix + ".weight", std::move(w));
        add(prefix + ".bias", Tensor({co}));
    }

    void tconv(const std::string& prefix, int ci, int co, int k) {
        Tensor w({ci, co, k, k});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
        for (std::int64_t i = 0; i < w.size(); ++i) {
            w.flat(i) = rng.normal(0.0, stddev);
        }
        add(prefix + ".weight", std::move(w));
        add(prefix + ".bias", Tensor({co}));
    }

    void block(const std::string& prefix, int width, int scale_groups) {
        const int gw = width / scale_groups;
        if (scale_groups == 1) {
            conv(prefix + ".group1", gw, gw, 3);
        } else {
            for (int k = 2; k <= scale_groups; ++k) {
                conv(prefix + ".group" + std::to_string(k), gw, gw, 3);
            }
        }
        conv(prefix + ".project", width, width, 1);
    }

    void attention(const std::string& prefix, int width, int reduction) {
        conv(prefix + ".res.conv1", width, width, 3);
        conv(prefix + ".res.conv2", width, width, 3);
        conv(prefix + ".spatial.conv", 1, width, 3);
        const int hidden = std::max(1, width / reduction);
        conv(prefix + ".channel.fc1", hidden, width, 1);
        conv(prefix + ".channel.fc2", width, hidden, 1);
    }
};

ag::Var as_nchw(const ag::Var& x, const char* who) {
    const Tensor& t = x->value;
    if (t.rank() == 4) {
        return x;
    }
    if (t.rank() == 3) {
        return ag::reshape(x, {1, t.dim(0), t.dim(1), t.dim(2)});
    }
    throw ShapeError(std::string(who) + ": expected C x H x W or N x C x H x W, got " +
                     t.shape_str());
}

} // namespace

ModelConfig ModelConfig::desk() {
    return ModelConfig{};
}

ModelConfig ModelConfig::full_scale() {
    ModelConfig cfg;
    cfg.stem_width = 64;
    cfg.stage_widths = {256, 512, 1024, 2048};
    cfg.scale_groups = 8;
    cfg.blocks_per_stage = {3, 4, 23, 3};
    cfg.enhanced_pool_factors = {2, 4, 8, 16};
    cfg.attention_reduction = 16;
    cfg.decoder_widths = {1024, 512, 256};
    return cfg;
}

ModelConfig ModelConfig::micro() {
    ModelConfig cfg;
    cfg.stem_width = 4;
    cfg.stage_widths = {4, 4, 8, 8};
    cfg.scale_groups = 2;
    cfg.blocks_per_stage = {1, 1, 1, 1};
    cfg.enhanced_pool_factors = {2};
    cfg.attention_reduction = 2;
    cfg.decoder_widths = {4, 4, 4};
    return cfg;
}

int ModelConfig::spatial_divisor() const {
    const int max_pool =
        *std::max_element(enhanced_pool_factors.begin(), enhanced_pool_factors.end());
    // Encoder bottoms out at stride 16; the enhancement block pools the
    // stride-2 decoder feature.
    return static_cast<int>(std::lcm(16, 2 * max_pool));
}

void ModelConfig::validate() const {
    if (in_channels < 1 || out_channels < 1) {
        throw ConfigError("model config: channel counts must be >= 1");
    }
    if (stem_width < 1) {
        throw ConfigError("model config: stem_width must be >= 1");
    }
    if (scale_groups < 1) {
        throw ConfigError("model config: scale_groups must be >= 1");
    }
    for (int i = 0; i < 4; ++i) {
        if (stage_widths[static_cast<std::size_t>(i)] < 1) {
            throw ConfigError("model config: stage_widths must be >= 1");
        }
        if (blocks_per_stage[static_cast<std::size_t>(i)] < 1) {
            throw ConfigError("model config: blocks_per_stage must be >= 1");
        }
        if (stage_widths[static_cast<std::size_t>(i)] % scale_groups != 0) {
            throw ConfigError("model config: scale_groups=" + std::to_string(scale_groups) +
                              " must divide stage width " +
                              std::to_string(stage_widths[static_cast<std::size_t>(i)]));
        }
    }
    if (enhanced_pool_factors.empty()) {
        throw ConfigError("model config: enhanced_pool_factors must not be empty");
    }
    for (int p : enhanced_pool_factors) {
        if (p < 1) {
            throw ConfigError("model config: pool factors must be >= 1");
        }
    }
    if (attention_reduction < 1) {
        throw ConfigError("model config: attention_reduction must be >= 1");
    }
    for (int w : decoder_widths) {
        if (w < 1) {
            throw ConfigError("model config: decoder_widths must be >= 1");
        }
    }
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json{{"in_channels", cfg.in_channels},
                       {"out_channels", cfg.out_channels},
                       {"stem_width", cfg.stem_width},
                       {"stage_widths", cfg.stage_widths},
                       {"scale_groups", cfg.scale_groups},
                       {"blocks_per_stage", cfg.blocks_per_stage},
                       {"enhanced_pool_factors", cfg.enhanced_pool_factors},
                       {"attention_reduction", cfg.attention_reduction},
                       {"decoder_widths", cfg.decoder_widths}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    require_known_keys(j,
                       {"in_channels", "out_channels", "stem_width", "stage_widths",
                        "scale_groups", "blocks_per_stage", "enhanced_pool_factors",
                        "attention_reduction", "decoder_widths"},
                       "model config");
    ModelConfig base;
    cfg.in_channels = json_get(j, "in_channels", base.in_channels, "model config");
    cfg.out_channels = json_get(j, "out_channels", base.out_channels, "model config");
    cfg.stem_width = json_get(j, "stem_width", base.stem_width, "model config");
    cfg.stage_widths = json_get(j, "stage_widths", base.stage_widths, "model config");
    cfg.scale_groups = json_get(j, "scale_groups", base.scale_groups, "model config");
    cfg.blocks_per_stage = json_get(j, "blocks_per_stage", base.blocks_per_stage, "model config");
    cfg.enhanced_pool_factors =
        json_get(j, "enhanced_pool_factors", base.enhanced_pool_factors, "model config");
    cfg.attention_reduction =
        json_get(j, "attention_reduction", base.attention_reduction, "model config");
    cfg.decoder_widths = json_get(j, "decoder_widths", base.decoder_widths, "model config");
    cfg.validate();
}

const ag::Var& NetworkParams::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) {
        throw ConfigError("model: missing parameter '" + name + "'");
    }
    return it->second;
}

std::vector<ag::Var> NetworkParams::param_list() const {
    std::vector<ag::Var> out;
    out.reserve(params.size());
    for (const auto& [name, var] : params) {
        out.push_back(var);
    }
    return out;
}

std::map<std::string, Tensor> NetworkParams::values() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, var] : params) {
        out.emplace(name, var->value);
    }
    return out;
}

std::int64_t NetworkParams::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, var] : params) {
        n += var->value.size();
    }
    return n;
}

NetworkParams build_model(const ModelConfig& cfg, std::uint64_t seed, bool requires_grad) {
    cfg.validate();
    NetworkParams np;
    np.config = cfg;
    Rng rng(seed);
    Builder b{np.params, rng, requires_grad};

    b.conv("encoder.stem", cfg.stem_width, cfg.in_channels, 3);
    int width = cfg.stem_width;
    for (int stage = 1; stage <= 4; ++stage) {
        const int sw = cfg.stage_widths[static_cast<std::size_t>(stage - 1)];
        const std::string sp = "encoder.stage" + std::to_string(stage);
        b.conv(sp + ".entry", sw, width, 3);
        width = sw;
        for (int j = 1; j <= cfg.blocks_per_stage[static_cast<std::size_t>(stage - 1)]; ++j) {
            b.block(sp + ".block" + std::to_string(j), sw, cfg.scale_groups);
        }
    }

    const int w3 = cfg.stage_widths[3];
    const int w2 = cfg.stage_widths[1];
    const int w1 = cfg.stage_widths[0];
    const int d0 = cfg.decoder_widths[0];
    const int d1 = cfg.decoder_widths[1];
    const int d2 = cfg.decoder_widths[2];

    b.attention("decoder.attn3", w3, cfg.attention_reduction);
    b.tconv("decoder.up3.tconv", w3, d0, 4);
    b.conv("decoder.fuse2", d0, d0 + w2, 1);
    b.attention("decoder.attn2", d0, cfg.attention_reduction);
    b.conv("decoder.up2.conv", d1 * 4, d0, 3);
    b.conv("decoder.fuse1", d1, d1 + w1, 1);
    b.attention("decoder.attn1", d1, cfg.attention_reduction);
    b.tconv("decoder.up1.tconv", d1, d2, 4);

    const int branch_width =
        std::max<int>(1, d2 / static_cast<int>(cfg.enhanced_pool_factors.size()));
    for (int p : cfg.enhanced_pool_factors) {
        b.conv("decoder.enhanced.branch_p" + std::to_string(p), branch_width, d2, 1);
    }
    b.conv("decoder.enhanced.fuse", d2,
           d2 + branch_width * static_cast<int>(cfg.enhanced_pool_factors.size()), 3);
    b.conv("decoder.head.conv", cfg.out_channels * 4, d2, 3);
    return np;
}

OverlayReport overlay_pretrained(NetworkParams& np, const std::map<std::string, Tensor>& source) {
    OverlayReport report;
    for (const auto& [name, tensor] : source) {
        auto it = np.params.find(name);
        if (it == np.params.end()) {
            report.skipped.push_back(name);
            continue;
        }
        Tensor& dst = it->second->value;
        if (dst.same_shape(tensor)) {
            dst = tensor;
            report.applied.push_back(name);
            continue;
        }
        // RGB-pretrained stem onto a wider input stack: copy the leading
        // input slice, zero the rest.
        const bool stem_case = name == "encoder.stem.weight" && dst.rank() == 4 &&
                               tensor.rank() == 4 && dst.dim(0) == tensor.dim(0) &&
                               dst.dim(2) == tensor.dim(2) && dst.dim(3) == tensor.dim(3) &&
                               tensor.dim(1) < dst.dim(1);
        if (!stem_case) {
            throw ShapeError("overlay: tensor '" + name + "' has shape " + tensor.shape_str() +
                             ", model expects " + dst.shape_str());
        }
        dst.fill(0.0);
        const int co = dst.dim(0);
        const int kh = dst.dim(2);
        const int kw = dst.dim(3);
        for (int oc = 0; oc < co; ++oc) {
            for (int ic = 0; ic < tensor.dim(1); ++ic) {
                for (int y = 0; y < kh; ++y) {
                    for (int x = 0; x < kw; ++x) {
                        dst.at4(oc, ic, y, x) = tensor.at4(oc, ic, y, x);
                    }
                }
            }
        }
        report.applied.push_back(name);
    }
    return report;
}

ag::Var multi_scale_block(const NetworkParams& np, const std::string& prefix, const ag::Var& x) {
    const int c = x->value.dim(1);
    const int s = np.config.scale_groups;
    if (c % s != 0) {
        throw ConfigError("multi_scale_block: scale_groups=" + std::to_string(s) +
                          " does not divide " + std::to_string(c) + " channels");
    }
    const int gw = c / s;
    ag::Var cat;
    if (s == 1) {
        cat = ag::leaky_relu(conv(np, prefix + ".group1", x, 1, 1), kLeakySlope);
    } else {
        std::vector<ag::Var> ys;
        ag::Var prev = ag::narrow_channels(x, 0, gw);
        ys.push_back(prev);
        for (int k = 2; k <= s; ++k) {
            ag::Var xk = ag::narrow_channels(x, (k - 1) * gw, gw);
            prev = ag::leaky_relu(
                conv(np, prefix + ".group" + std::to_string(k), ag::add(xk, prev), 1, 1),
                kLeakySlope);
            ys.push_back(prev);
        }
        cat = ag::concat_channels(ys);
    }
    return ag::add(x, conv(np, prefix + ".project", cat, 1, 0));
}

ag::Var channel_gate(const NetworkParams& np, const std::string& prefix, const ag::Var& x) {
    ag::Var g = ag::global_avg_pool(x);
    g = ag::relu(conv(np, prefix + ".fc1", g, 1, 0));
    return ag::sigmoid(conv(np, prefix + ".fc2", g, 1, 0));
}

ag::Var channel_attention(const NetworkParams& np, const std::string& prefix, const ag::Var& x) {
    return ag::mul_bcast(x, channel_gate(np, prefix, x));
}

ag::Var spatial_gate(const NetworkParams& np, const std::string& prefix, const ag::Var& x) {
    return ag::sigmoid(conv(np, prefix + ".conv", x, 1, 1));
}

ag::Var spatial_attention(const NetworkParams& np, const std::string& prefix, const ag::Var& x) {
    return ag::mul_bcast(x, spatial_gate(np, prefix, x));
}

ag::Var attention_module(const NetworkParams& np, const std::string& prefix, const ag::Var& x) {
    ag::Var t = ag::leaky_relu(conv(np, prefix + ".res.conv1", x, 1, 1), kLeakySlope);
    t = conv(np, prefix + ".res.conv2", t, 1, 1);
    ag::Var y = ag::add(x, t);
    y = spatial_attention(np, prefix + ".spatial", y);
    return channel_attention(np, prefix + ".channel", y);
}

ag::Var enhanced_module(const NetworkParams& np, const std::string& prefix, const ag::Var& x) {
    std::vector<ag::Var> parts{x};
    for (int p : np.config.enhanced_pool_factors) {
        ag::Var branch = ag::avg_pool2d(x, p);
        branch = ag::leaky_relu(conv(np, prefix + ".branch_p" + std::to_string(p), branch, 1, 0),
                                kLeakySlope);
        parts.push_back(ag::upsample_nearest(branch, p));
    }
    return ag::leaky_relu(conv(np, prefix + ".fuse", ag::concat_channels(parts), 1, 1),
                          kLeakySlope);
}

EncoderFeatures encode(const NetworkParams& np, const ag::Var& input) {
    ag::Var x = as_nchw(input, "encode");
    const ModelConfig& cfg = np.config;
    if (x->value.dim(1) != cfg.in_channels) {
        throw ShapeError("encode: expected " + std::to_string(cfg.in_channels) +
                         " input channels, got " + std::to_string(x->value.dim(1)));
    }
    const int divisor = cfg.spatial_divisor();
    if (x->value.dim(2) % divisor != 0 || x->value.dim(3) % divisor != 0) {
        throw DimensionError("encode: spatial dims " + std::to_string(x->value.dim(2)) + "x" +
                             std::to_string(x->value.dim(3)) + " must be divisible by " +
                             std::to_string(divisor));
    }

    EncoderFeatures feats;
    ag::Var t = ag::leaky_relu(conv(np, "encoder.stem", x, 2, 1), kLeakySlope);
    for (int stage = 1; stage <= 4; ++stage) {
        const std::string sp = "encoder.stage" + std::to_string(stage);
        const int stride = stage < 4 ? 2 : 1;
        t = ag::leaky_relu(conv(np, sp + ".entry", t, stride, 1), kLeakySlope);
        for (int j = 1; j <= cfg.blocks_per_stage[static_cast<std::size_t>(stage - 1)]; ++j) {
            t = multi_scale_block(np, sp + ".block" + std::to_string(j), t);
        }
        if (stage == 1) {
            feats.f4 = t;
        } else if (stage == 2) {
            feats.f8 = t;
        }
    }
    feats.f16 = t;
    return feats;
}

ag::Var decode(const NetworkParams& np, const EncoderFeatures& feats) {
    ag::Var d = attention_module(np, "decoder.attn3", feats.f16);
    d = ag::leaky_relu(tconv(np, "decoder.up3.tconv", d, 2, 1), kLeakySlope);
    d = ag::leaky_relu(conv(np, "decoder.fuse2", ag::concat_channels({d, feats.f8}), 1, 0),
                       kLeakySlope);
    d = attention_module(np, "decoder.attn2", d);
    d = ag::leaky_relu(ag::pixel_shuffle(conv(np, "decoder.up2.conv", d, 1, 1), 2), kLeakySlope);
    d = ag::leaky_relu(conv(np, "decoder.fuse1", ag::concat_channels({d, feats.f4}), 1, 0),
                       kLeakySlope);
    d = attention_module(np, "decoder.attn1", d);
    d = ag::leaky_relu(tconv(np, "decoder.up1.tconv", d, 2, 1), kLeakySlope);
    d = enhanced_module(np, "decoder.enhanced", d);
    d = ag::pixel_shuffle(conv(np, "decoder.head.conv", d, 1, 1), 2);
    return ag::sigmoid(d);
}

ag::Var forward(const NetworkParams& np, const ag::Var& input) {
    const bool chw = input->value.rank() == 3;
    EncoderFeatures feats = encode(np, input);
    ag::Var out = decode(np, feats);
    if (chw) {
        out = ag::reshape(out, {out->value.dim(1), out->value.dim(2), out->value.dim(3)});
    }
    return out;
}

void save_model(const std::filesystem::path& path, const NetworkParams& np) {
    checkpoint::Archive archive;
    archive.meta["kind"] = "model";
    archive.meta["model_config"] = np.config;
    archive.tensors = np.values();
    checkpoint::save_archive(path, archive);
}

NetworkParams load_model(const std::filesystem::path& path, bool requires_grad) {
    checkpoint::Archive archive = checkpoint::load_archive(path);
    if (archive.meta.value("kind", "") != "model") {
        throw ConfigError("load_model: " + path.string() + " is not a model checkpoint");
    }
    ModelConfig cfg = archive.meta.at("model_config").get<ModelConfig>();
    NetworkParams np = build_model(cfg, 0, requires_grad);
    for (auto& [name, var] : np.params) {
        auto it = archive.tensors.find(name);
        if (it == archive.tensors.end()) {
            throw ConfigError("load_model: checkpoint is missing parameter '" + name + "'");
        }
        if (!it->second.same_shape(var->value)) {
            throw ShapeError("load_model: parameter '" + name + "' has shape " +
                             it->second.shape_str() + ", expected " + var->value.shape_str());
        }
        var->value = it->second;
    }
    for (const auto& [name, tensor] : archive.tensors) {
        if (np.params.find(name) == np.params.end()) {
            throw ConfigError("load_model: unexpected tensor '" + name + "' in checkpoint");
        }
    }
    return np;
}

} // namespace s3net::model
