#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3net/data.hpp"
#include "s3net/losses.hpp"
#include "s3net/model.hpp"

namespace s3net::train {

struct TrainConfig {
    int batch_size = 3;
    int epochs = 100;
    double lr = 1e-4;
    double lr_drop_factor = 10.0;
    // Periodic schedule: lr / factor^floor(epoch / lr_drop_every).
    // 0 selects the one-shot reading: a single drop at epoch lr_drop_at.
    int lr_drop_every = 20;
    int lr_drop_at = 20;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 1e-2;
    double grad_clip = 0.0; // global-norm clip; 0 disables
    losses::LossWeights weights;
    std::uint64_t seed = 0;
    int checkpoint_every = 1; // epochs
    losses::WSsimConfig wssim;
    losses::SsimConfig ssim;
    double charbonnier_epsilon = 1e-6;

    void validate() const; // throws ConfigError
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg); // strict: unknown keys throw

// Piecewise-constant schedule described on TrainConfig.
double lr_at(int epoch, const TrainConfig& cfg);

// One decoupled-weight-decay adaptive update; step_index is 1-based.
struct AdamWParams {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;
};
void adamw_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                  std::int64_t step_index, const AdamWParams& opt);

struct TrainState {
    model::NetworkParams net;
    std::map<std::string, Tensor> adam_m;
    std::map<std::string, Tensor> adam_v;
    std::int64_t step = 0;      // completed optimizer steps
    int epoch = 0;              // completed epochs
    std::uint64_t rng_state = 0;
    std::vector<double> loss_history; // total loss per step
};

TrainState init_state(const model::ModelConfig& model_cfg, const TrainConfig& cfg);

// Forward, total loss, backward, AdamW update over every parameter.
// Throws TrainError on a non-finite loss.
losses::LossBreakdown train_step(TrainState& state, const std::vector<data::RelightSample>& batch,
                                 const losses::FeatureExtractor& extractor,
                                 const TrainConfig& cfg);

// Epoch loop over uniformly sampled pairs: one epoch visits as many samples
// as the index holds images. Writes per-step JSONL loss records to
// train_log.jsonl, checkpoints every checkpoint_every epochs, and supports
// bit-exact resumption from a train checkpoint.
TrainState fit(const TrainConfig& cfg, const model::ModelConfig& model_cfg,
               const data::SceneIndex& index, const std::filesystem::path& out_dir,
               const losses::FeatureExtractor& extractor,
               const std::optional<std::filesystem::path>& resume_from = std::nullopt);

void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state,
                           const TrainConfig& cfg);
TrainState load_train_checkpoint(const std::filesystem::path& path);

} // namespace s3net::train
