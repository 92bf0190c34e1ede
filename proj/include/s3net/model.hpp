#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3net/autograd.hpp"
#include "s3net/tensor.hpp"

namespace s3net::model {

// Architecture hyperparameters. The encoder is a four-stage multi-scale
// residual backbone whose stage strides (2, 2, 2, 1) compose with the
// stride-2 stem to an output stride of exactly 16. The decoder climbs back
// with three x2 upsampling stages (transposed conv, pixel shuffle,
// transposed conv), one attention module per stage, skip fusions from the
// stride-8 and stride-4 encoder features, a pooling-pyramid enhancement
// block, and a final x2 pixel-shuffle head bounded into [0, 1] by a sigmoid.
struct ModelConfig {
    int in_channels = 8;  // src RGB + src depth + guide RGB + guide depth
    int out_channels = 3;
    int stem_width = 16;
    std::array<int, 4> stage_widths{16, 32, 64, 64};
    int scale_groups = 4;
    std::array<int, 4> blocks_per_stage{1, 1, 1, 1};
    std::vector<int> enhanced_pool_factors{2, 4, 8};
    int attention_reduction = 4;
    std::array<int, 3> decoder_widths{32, 16, 8};

    bool operator==(const ModelConfig&) const = default;

    // CPU-sized default used throughout the test suite.
    static ModelConfig desk();
    // Res2Net101-like preset at full capacity (not instantiated in tests).
    static ModelConfig full_scale();
    // Minimal configuration for finite-difference checks.
    static ModelConfig micro();

    // Inputs must have H and W divisible by this.
    int spatial_divisor() const;
    void validate() const; // throws ConfigError
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg); // strict: unknown keys throw

// All learnable weights keyed by a stable hierarchical name. The key set and
// every shape are a pure function of the configuration.
struct NetworkParams {
    ModelConfig config;
    std::map<std::string, ag::Var> params;

    const ag::Var& at(const std::string& name) const;
    std::vector<ag::Var> param_list() const;          // sorted by name
    std::map<std::string, Tensor> values() const;
    std::int64_t parameter_count() const;
};

// Deterministic initialization from the seed; same (config, seed) twice
// yields bit-identical parameters.
NetworkParams build_model(const ModelConfig& cfg, std::uint64_t seed, bool requires_grad = true);

struct OverlayReport {
    std::vector<std::string> applied;
    std::vector<std::string> skipped; // names present in the source only
};

// Copies externally supplied weights onto matching keys. A stem whose input
// slice is narrower than ours (RGB-only pretraining) is copied into the
// first channels with the remaining input channels zero-initialized.
OverlayReport overlay_pretrained(NetworkParams& np, const std::map<std::string, Tensor>& source);

struct EncoderFeatures {
    ag::Var f4, f8, f16; // strides 4, 8, 16 relative to the input
};

EncoderFeatures encode(const NetworkParams& np, const ag::Var& x);
ag::Var decode(const NetworkParams& np, const EncoderFeatures& feats);
// C x H x W in gives C' x H x W out; batched in gives batched out.
ag::Var forward(const NetworkParams& np, const ag::Var& x);

// Building blocks, exposed for direct testing.
ag::Var multi_scale_block(const NetworkParams& np, const std::string& prefix, const ag::Var& x);
ag::Var channel_gate(const NetworkParams& np, const std::string& prefix, const ag::Var& x);
ag::Var channel_attention(const NetworkParams& np, const std::string& prefix, const ag::Var& x);
ag::Var spatial_gate(const NetworkParams& np, const std::string& prefix, const ag::Var& x);
ag::Var spatial_attention(const NetworkParams& np, const std::string& prefix, const ag::Var& x);
ag::Var attention_module(const NetworkParams& np, const std::string& prefix, const ag::Var& x);
ag::Var enhanced_module(const NetworkParams& np, const std::string& prefix, const ag::Var& x);

// Checkpoint round trip; loading rebuilds the key set from the stored
// configuration and validates every tensor shape.
void save_model(const std::filesystem::path& path, const NetworkParams& np);
NetworkParams load_model(const std::filesystem::path& path, bool requires_grad = false);

} // namespace s3net::model
