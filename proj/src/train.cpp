#include "s3net/train.hpp"

#include <cmath>
#include <fstream>

#include "s3net/checkpoint.hpp"
#include "s3net/json_util.hpp"

namespace s3net::train {

namespace {

// Distinct stream offset so the data-sampling sequence never aliases the
// weight-initialization sequence drawn from the same user seed.
constexpr std::uint64_t kDataStreamOffset = 0x517CC1B727220A95ULL;

nlohmann::json weights_to_json(const losses::LossWeights& w) {
    return {{"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"lambda3", w.lambda3}};
}

losses::LossWeights weights_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"lambda1", "lambda2", "lambda3"}, "train config weights");
    losses::LossWeights w;
    w.lambda1 = json_get(j, "lambda1", w.lambda1, "train config weights");
    w.lambda2 = json_get(j, "lambda2", w.lambda2, "train config weights");
    w.lambda3 = json_get(j, "lambda3", w.lambda3, "train config weights");
    return w;
}

nlohmann::json wssim_to_json(const losses::WSsimConfig& w) {
    return {{"levels", w.levels}, {"gamma", w.gamma}};
}

losses::WSsimConfig wssim_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"levels", "gamma"}, "train config wssim");
    losses::WSsimConfig w;
    w.levels = json_get(j, "levels", w.levels, "train config wssim");
    w.gamma = json_get(j, "gamma", w.gamma, "train config wssim");
    return w;
}

nlohmann::json ssim_to_json(const losses::SsimConfig& s) {
    return {{"c1", s.c1},
            {"c2", s.c2},
            {"window", s.window == losses::SsimConfig::Window::kGlobal ? "global" : "gaussian"},
            {"window_size", s.window_size},
            {"window_sigma", s.window_sigma}};
}

losses::SsimConfig ssim_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"c1", "c2", "window", "window_size", "window_sigma"},
                       "train config ssim");
    losses::SsimConfig s;
    s.c1 = json_get(j, "c1", s.c1, "train config ssim");
    s.c2 = json_get(j, "c2", s.c2, "train config ssim");
    const std::string window = json_get<std::string>(j, "window", "global", "train config ssim");
    if (window == "global") {
        s.window = losses::SsimConfig::Window::kGlobal;
    } else if (window == "gaussian") {
        s.window = losses::SsimConfig::Window::kGaussian;
    } else {
        throw ConfigError("train config ssim: window must be 'global' or 'gaussian', got '" +
                          window + "'");
    }
    s.window_size = json_get(j, "window_size", s.window_size, "train config ssim");
    s.window_sigma = json_get(j, "window_sigma", s.window_sigma, "train config ssim");
    return s;
}

} // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw ConfigError("train config: batch_size must be >= 1");
    }
    if (epochs < 0) {
        throw ConfigError("train config: epochs must be >= 0");
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ConfigError("train config: lr must be positive");
    }
    if (!(lr_drop_factor > 0.0)) {
        throw ConfigError("train config: lr_drop_factor must be positive");
    }
    if (lr_drop_every < 0 || lr_drop_at < 0) {
        throw ConfigError("train config: lr drop points must be >= 0");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ConfigError("train config: beta1 and beta2 must lie in (0, 1)");
    }
    if (!(adam_epsilon > 0.0)) {
        throw ConfigError("train config: adam_epsilon must be positive");
    }
    if (weight_decay < 0.0 || grad_clip < 0.0) {
        throw ConfigError("train config: weight_decay and grad_clip must be >= 0");
    }
    if (checkpoint_every < 1) {
        throw ConfigError("train config: checkpoint_every must be >= 1");
    }
    if (!(charbonnier_epsilon > 0.0)) {
        throw ConfigError("train config: charbonnier_epsilon must be positive");
    }
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
    j = nlohmann::json{{"batch_size", cfg.batch_size},
                       {"epochs", cfg.epochs},
                       {"lr", cfg.lr},
                       {"lr_drop_factor", cfg.lr_drop_factor},
                       {"lr_drop_every", cfg.lr_drop_every},
                       {"lr_drop_at", cfg.lr_drop_at},
                       {"beta1", cfg.beta1},
                       {"beta2", cfg.beta2},
                       {"adam_epsilon", cfg.adam_epsilon},
                       {"weight_decay", cfg.weight_decay},
                       {"grad_clip", cfg.grad_clip},
                       {"weights", weights_to_json(cfg.weights)},
                       {"seed", cfg.seed},
                       {"checkpoint_every", cfg.checkpoint_every},
                       {"wssim", wssim_to_json(cfg.wssim)},
                       {"ssim", ssim_to_json(cfg.ssim)},
                       {"charbonnier_epsilon", cfg.charbonnier_epsilon}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
    require_known_keys(j,
                       {"batch_size", "epochs", "lr", "lr_drop_factor", "lr_drop_every",
                        "lr_drop_at", "beta1", "beta2", "adam_epsilon", "weight_decay",
                        "grad_clip", "weights", "seed", "checkpoint_every", "wssim", "ssim",
                        "charbonnier_epsilon"},
                       "train config");
    TrainConfig base;
    cfg.batch_size = json_get(j, "batch_size", base.batch_size, "train config");
    cfg.epochs = json_get(j, "epochs", base.epochs, "train config");
    cfg.lr = json_get(j, "lr", base.lr, "train config");
    cfg.lr_drop_factor = json_get(j, "lr_drop_factor", base.lr_drop_factor, "train config");
    cfg.lr_drop_every = json_get(j, "lr_drop_every", base.lr_drop_every, "train config");
    cfg.lr_drop_at = json_get(j, "lr_drop_at", base.lr_drop_at, "train config");
    cfg.beta1 = json_get(j, "beta1", base.beta1, "train config");
    cfg.beta2 = json_get(j, "beta2", base.beta2, "train config");
    cfg.adam_epsilon = json_get(j, "adam_epsilon", base.adam_epsilon, "train config");
    cfg.weight_decay = json_get(j, "weight_decay", base.weight_decay, "train config");
    cfg.grad_clip = json_get(j, "grad_clip", base.grad_clip, "train config");
    if (j.contains("weights")) {
        cfg.weights = weights_from_json(j.at("weights"));
    }
    cfg.seed = json_get(j, "seed", base.seed, "train config");
    cfg.checkpoint_every = json_get(j, "checkpoint_every", base.checkpoint_every, "train config");
    if (j.contains("wssim")) {
        cfg.wssim = wssim_from_json(j.at("wssim"));
    }
    if (j.contains("ssim")) {
        cfg.ssim = ssim_from_json(j.at("ssim"));
    }
    cfg.charbonnier_epsilon =
        json_get(j, "charbonnier_epsilon", base.charbonnier_epsilon, "train config");
    cfg.validate();
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (cfg.lr_drop_every > 0) {
        return cfg.lr / std::pow(cfg.lr_drop_factor, std::floor(static_cast<double>(epoch) /
                                                                cfg.lr_drop_every));
    }
    // One-shot reading: a single division at lr_drop_at.
    return epoch < cfg.lr_drop_at ? cfg.lr : cfg.lr / cfg.lr_drop_factor;
}

void adamw_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                  std::int64_t step_index, const AdamWParams& opt) {
    check_same_shape(param, grad, "adamw_update (param vs grad)");
    check_same_shape(param, m, "adamw_update (param vs m)");
    check_same_shape(param, v, "adamw_update (param vs v)");
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step_index));
    for (std::int64_t i = 0; i < param.size(); ++i) {
        const double g = grad.flat(i);
        m.flat(i) = opt.beta1 * m.flat(i) + (1.0 - opt.beta1) * g;
        v.flat(i) = opt.beta2 * v.flat(i) + (1.0 - opt.beta2) * g * g;
        const double mhat = m.flat(i) / bc1;
        const double vhat = v.flat(i) / bc2;
        // Decoupled decay: shrinkage is applied directly to the parameter,
        // not folded into the gradient.
        param.flat(i) -= opt.lr * (mhat / (std::sqrt(vhat) + opt.epsilon)) +
                         opt.lr * opt.weight_decay * param.flat(i);
    }
}

TrainState init_state(const model::ModelConfig& model_cfg, const TrainConfig& cfg) {
    cfg.validate();
    TrainState state;
    state.net = model::build_model(model_cfg, cfg.seed, /*requires_grad=*/true);
    for (const auto& [name, var] : state.net.params) {
        state.adam_m.emplace(name, Tensor::zeros(var->value.shape()));
        state.adam_v.emplace(name, Tensor::zeros(var->value.shape()));
    }
    state.rng_state = cfg.seed + kDataStreamOffset;
    return state;
}

losses::LossBreakdown train_step(TrainState& state, const std::vector<data::RelightSample>& batch,
                                 const losses::FeatureExtractor& extractor,
                                 const TrainConfig& cfg) {
    if (batch.empty()) {
        throw DataError("train_step: empty batch");
    }
    std::vector<Tensor> inputs;
    std::vector<Tensor> targets;
    inputs.reserve(batch.size());
    targets.reserve(batch.size());
    for (const data::RelightSample& s : batch) {
        inputs.push_back(data::assemble_input(s));
        targets.push_back(s.target_img);
    }
    ag::Var x = ag::constant(stack_batch(inputs));
    ag::Var y = ag::constant(stack_batch(targets));

    ag::Var pred = model::forward(state.net, x);
    auto [loss, breakdown] =
        losses::total_loss(pred, y, cfg.weights, cfg.wssim, cfg.ssim, extractor,
                           cfg.charbonnier_epsilon);
    if (!std::isfinite(breakdown.total)) {
        throw TrainError("train_step: non-finite loss at step " + std::to_string(state.step + 1) +
                         " (charbonnier=" + std::to_string(breakdown.charbonnier) +
                         ", wssim=" + std::to_string(breakdown.wssim) +
                         ", perceptual=" + std::to_string(breakdown.perceptual) + ")");
    }
    ag::backward(loss);

    if (cfg.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (const auto& [name, var] : state.net.params) {
            if (!var->grad.empty()) {
                norm_sq += var->grad.squared_norm();
            }
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.grad_clip) {
            const double scale = cfg.grad_clip / norm;
            for (auto& [name, var] : state.net.params) {
                if (!var->grad.empty()) {
                    var->grad.scale_inplace(scale);
                }
            }
        }
    }

    AdamWParams opt;
    opt.lr = lr_at(state.epoch, cfg);
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.epsilon = cfg.adam_epsilon;
    opt.weight_decay = cfg.weight_decay;
    const std::int64_t step_index = state.step + 1;
    for (auto& [name, var] : state.net.params) {
        const Tensor grad =
            var->grad.empty() ? Tensor::zeros(var->value.shape()) : var->grad;
        adamw_update(var->value, grad, state.adam_m.at(name), state.adam_v.at(name), step_index,
                     opt);
        if (!var->value.all_finite()) {
            throw TrainError("train_step: parameter '" + name + "' became non-finite at step " +
                             std::to_string(step_index));
        }
        var->grad = Tensor();
    }
    state.step = step_index;
    state.loss_history.push_back(breakdown.total);
    return breakdown;
}

void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state,
                           const TrainConfig& cfg) {
    checkpoint::Archive archive;
    archive.meta["kind"] = "train";
    archive.meta["model_config"] = state.net.config;
    archive.meta["train_config"] = cfg;
    archive.meta["step"] = state.step;
    archive.meta["epoch"] = state.epoch;
    archive.meta["rng_state"] = state.rng_state;
    archive.meta["history_count"] = state.loss_history.size();
    for (const auto& [name, var] : state.net.params) {
        archive.tensors.emplace("param." + name, var->value);
    }
    for (const auto& [name, t] : state.adam_m) {
        archive.tensors.emplace("adam_m." + name, t);
    }
    for (const auto& [name, t] : state.adam_v) {
        archive.tensors.emplace("adam_v." + name, t);
    }
    if (!state.loss_history.empty()) {
        archive.tensors.emplace(
            "loss_history",
            Tensor::from({static_cast<int>(state.loss_history.size())}, state.loss_history));
    }
    checkpoint::save_archive(path, archive);
}

TrainState load_train_checkpoint(const std::filesystem::path& path) {
    checkpoint::Archive archive = checkpoint::load_archive(path);
    if (archive.meta.value("kind", "") != "train") {
        throw ConfigError("load_train_checkpoint: " + path.string() +
                          " is not a train checkpoint");
    }
    TrainState state;
    const model::ModelConfig model_cfg = archive.meta.at("model_config").get<model::ModelConfig>();
    state.net = model::build_model(model_cfg, 0, /*requires_grad=*/true);
    for (auto& [name, var] : state.net.params) {
        auto it = archive.tensors.find("param." + name);
        if (it == archive.tensors.end()) {
            throw ConfigError("load_train_checkpoint: missing parameter '" + name + "'");
        }
        if (!it->second.same_shape(var->value)) {
            throw ShapeError("load_train_checkpoint: parameter '" + name + "' has shape " +
                             it->second.shape_str() + ", expected " + var->value.shape_str());
        }
        var->value = it->second;
        auto mit = archive.tensors.find("adam_m." + name);
        auto vit = archive.tensors.find("adam_v." + name);
        if (mit == archive.tensors.end() || vit == archive.tensors.end()) {
            throw ConfigError("load_train_checkpoint: missing optimizer state for '" + name +
                              "'");
        }
        state.adam_m.emplace(name, mit->second);
        state.adam_v.emplace(name, vit->second);
    }
    state.step = archive.meta.at("step").get<std::int64_t>();
    state.epoch = archive.meta.at("epoch").get<int>();
    state.rng_state = archive.meta.at("rng_state").get<std::uint64_t>();
    const std::size_t history_count = archive.meta.value("history_count", std::size_t{0});
    if (history_count > 0) {
        const Tensor& h = archive.tensors.at("loss_history");
        state.loss_history.assign(h.data(), h.data() + h.size());
    }
    return state;
}

TrainState fit(const TrainConfig& cfg, const model::ModelConfig& model_cfg,
               const data::SceneIndex& index, const std::filesystem::path& out_dir,
               const losses::FeatureExtractor& extractor,
               const std::optional<std::filesystem::path>& resume_from) {
    cfg.validate();
    if (index.empty()) {
        throw DataError("fit: dataset index is empty");
    }
    std::filesystem::create_directories(out_dir);

    TrainState state;
    bool fresh = true;
    if (resume_from) {
        state = load_train_checkpoint(*resume_from);
        fresh = false;
    } else {
        state = init_state(model_cfg, cfg);
    }

    auto checkpoint_name = [](int epoch) {
        std::string num = std::to_string(epoch);
        while (num.size() < 4) {
            num.insert(num.begin(), '0');
        }
        return "checkpoint_epoch" + num + ".s3ck";
    };

    const std::filesystem::path log_path = out_dir / "train_log.jsonl";
    std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) {
        throw IoError("fit: cannot open " + log_path.string());
    }

    if (fresh) {
        save_train_checkpoint(out_dir / checkpoint_name(0), state, cfg);
    }

    const std::int64_t samples_per_epoch = index.image_count();
    const std::int64_t steps_per_epoch =
        (samples_per_epoch + cfg.batch_size - 1) / cfg.batch_size;

    Rng rng(0);
    rng.set_state(state.rng_state);
    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        std::int64_t remaining = samples_per_epoch;
        for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
            const int take = static_cast<int>(
                std::min<std::int64_t>(cfg.batch_size, remaining));
            remaining -= take;
            std::vector<data::RelightSample> batch;
            batch.reserve(static_cast<std::size_t>(take));
            for (int i = 0; i < take; ++i) {
                batch.push_back(data::sample_pair(index, rng));
            }
            losses::LossBreakdown breakdown;
            try {
                breakdown = train_step(state, batch, extractor, cfg);
            } catch (const TrainError&) {
                // Leave a diagnostic snapshot next to the log before giving up.
                state.rng_state = rng.state();
                save_train_checkpoint(out_dir / "diagnostic_snapshot.s3ck", state, cfg);
                throw;
            }
            state.rng_state = rng.state();
            nlohmann::json rec{{"step", state.step},          {"epoch", epoch},
                               {"lr", lr_at(epoch, cfg)},     {"l_cha", breakdown.charbonnier},
                               {"l_wssim", breakdown.wssim},  {"l_per", breakdown.perceptual},
                               {"total", breakdown.total}};
            log << rec.dump() << "\n";
            if (!log) {
                throw IoError("fit: failed writing the loss log at epoch " +
                              std::to_string(epoch) + " step " + std::to_string(state.step));
            }
        }
        log.flush();
        state.epoch = epoch + 1;
        if ((state.epoch % cfg.checkpoint_every) == 0 || state.epoch == cfg.epochs) {
            save_train_checkpoint(out_dir / checkpoint_name(state.epoch), state, cfg);
        }
    }
    save_train_checkpoint(out_dir / "checkpoint_final.s3ck", state, cfg);
    return state;
}

} // namespace s3net::train
