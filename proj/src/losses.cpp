#include "s3net/losses.hpp"

#include <cmath>
#include <string>

#include "s3net/checkpoint.hpp"
#include "s3net/rng.hpp"
#include "s3net/wavelet.hpp"

namespace s3net::losses {

namespace {

using ag::Var;

// Promotes C x H x W to 1 x C x H x W; passes 4-D through.
Var as_batch(const Var& v, const char* who) {
    const Tensor& t = v->value;
    if (t.rank() == 4) {
        return v;
    }
    if (t.rank() == 3) {
        return ag::reshape(v, {1, t.dim(0), t.dim(1), t.dim(2)});
    }
    throw ShapeError(std::string(who) + ": expected C x H x W or N x C x H x W, got " +
                     t.shape_str());
}

void validate_ssim_config(const SsimConfig& cfg) {
    if (cfg.c1 <= 0.0 || cfg.c2 <= 0.0) {
        throw ConfigError("ssim: stabilizers c1 and c2 must be positive");
    }
    if (cfg.window == SsimConfig::Window::kGaussian &&
        (cfg.window_size < 1 || cfg.window_sigma <= 0.0)) {
        throw ConfigError("ssim: invalid gaussian window configuration");
    }
}

Var ssim_sample_global(const Var& x, const Var& y, double c1, double c2) {
    Var mx = ag::mean_all(x);
    Var my = ag::mean_all(y);
    Var mxy = ag::mul(mx, my);
    Var mx2 = ag::mul(mx, mx);
    Var my2 = ag::mul(my, my);
    Var sxy = ag::sub(ag::mean_all(ag::mul(x, y)), mxy);
    Var sx2 = ag::sub(ag::mean_all(ag::mul(x, x)), mx2);
    Var sy2 = ag::sub(ag::mean_all(ag::mul(y, y)), my2);
    Var num = ag::mul(ag::add_scalar(ag::mul_scalar(mxy, 2.0), c1),
                      ag::add_scalar(ag::mul_scalar(sxy, 2.0), c2));
    Var den = ag::mul(ag::add_scalar(ag::add(mx2, my2), c1),
                      ag::add_scalar(ag::add(sx2, sy2), c2));
    return ag::divv(num, den);
}

Var ssim_sample_windowed(const Var& x, const Var& y, const SsimConfig& cfg, const Tensor& kernel) {
    Var mx = ag::window_filter(x, kernel);
    Var my = ag::window_filter(y, kernel);
    Var mxy = ag::mul(mx, my);
    Var mx2 = ag::mul(mx, mx);
    Var my2 = ag::mul(my, my);
    Var sxy = ag::sub(ag::window_filter(ag::mul(x, y), kernel), mxy);
    Var sx2 = ag::sub(ag::window_filter(ag::mul(x, x), kernel), mx2);
    Var sy2 = ag::sub(ag::window_filter(ag::mul(y, y), kernel), my2);
    Var num = ag::mul(ag::add_scalar(ag::mul_scalar(mxy, 2.0), cfg.c1),
                      ag::add_scalar(ag::mul_scalar(sxy, 2.0), cfg.c2));
    Var den = ag::mul(ag::add_scalar(ag::add(mx2, my2), cfg.c1),
                      ag::add_scalar(ag::add(sx2, sy2), cfg.c2));
    return ag::mean_all(ag::divv(num, den));
}

// Mean over batch samples of the per-sample (positive) SSIM index.
Var ssim_index_batch(const Var& pred, const Var& target, const SsimConfig& cfg) {
    Var x = as_batch(pred, "ssim_loss");
    Var y = as_batch(target, "ssim_loss");
    const int n = x->value.dim(0);
    Tensor kernel;
    if (cfg.window == SsimConfig::Window::kGaussian) {
        kernel = gaussian_kernel(cfg.window_size, cfg.window_sigma);
    }
    Var acc;
    for (int i = 0; i < n; ++i) {
        Var xs = n == 1 ? x : ag::narrow0(x, i, 1);
        Var ys = n == 1 ? y : ag::narrow0(y, i, 1);
        Var s = cfg.window == SsimConfig::Window::kGlobal
                    ? ssim_sample_global(xs, ys, cfg.c1, cfg.c2)
                    : ssim_sample_windowed(xs, ys, cfg, kernel);
        acc = acc ? ag::add(acc, s) : s;
    }
    return n == 1 ? acc : ag::mul_scalar(acc, 1.0 / n);
}

} // namespace

SsimConfig SsimConfig::gaussian_window() {
    SsimConfig cfg;
    cfg.window = Window::kGaussian;
    return cfg;
}

Tensor gaussian_kernel(int size, double sigma) {
    Tensor k({size, size});
    const double center = (size - 1) / 2.0;
    double sum = 0.0;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dy = y - center;
            const double dx = x - center;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k.flat(static_cast<std::int64_t>(y) * size + x) = v;
            sum += v;
        }
    }
    k.scale_inplace(1.0 / sum);
    return k;
}

ag::Var charbonnier_loss(const ag::Var& pred, const ag::Var& target, double epsilon) {
    if (epsilon <= 0.0) {
        throw ConfigError("charbonnier_loss: epsilon must be positive");
    }
    check_same_shape(pred->value, target->value, "charbonnier_loss");
    Var d = ag::sub(pred, target);
    return ag::mean_all(ag::vsqrt(ag::add_scalar(ag::mul(d, d), epsilon * epsilon)));
}

ag::Var ssim_loss(const ag::Var& pred, const ag::Var& target, const SsimConfig& cfg) {
    validate_ssim_config(cfg);
    check_same_shape(pred->value, target->value, "ssim_loss");
    return ag::neg(ssim_index_batch(pred, target, cfg));
}

ag::Var wssim_loss(const ag::Var& pred, const ag::Var& target, const WSsimConfig& wcfg,
                   const SsimConfig& scfg) {
    validate_ssim_config(scfg);
    check_same_shape(pred->value, target->value, "wssim_loss");
    if (wcfg.levels < 0) {
        throw ConfigError("wssim_loss: level count must be >= 0");
    }
    if (wcfg.gamma.size() != static_cast<std::size_t>(wcfg.levels) + 1) {
        throw ConfigError("wssim_loss: gamma has " + std::to_string(wcfg.gamma.size()) +
                          " entries, expected levels + 1 = " + std::to_string(wcfg.levels + 1));
    }
    bool any_positive = false;
    for (double g : wcfg.gamma) {
        if (g < 0.0) {
            throw ConfigError("wssim_loss: gamma entries must be >= 0");
        }
        any_positive = any_positive || g > 0.0;
    }
    if (!any_positive) {
        throw ConfigError("wssim_loss: at least one gamma entry must be positive");
    }
    Var x = as_batch(pred, "wssim_loss");
    Var y = as_batch(target, "wssim_loss");
    const int h = x->value.dim(2);
    const int w = x->value.dim(3);
    const int divisor = 1 << wcfg.levels;
    if (h % divisor != 0 || w % divisor != 0) {
        throw DimensionError("wssim_loss: spatial dims " + std::to_string(h) + "x" +
                             std::to_string(w) + " must be divisible by 2^levels = " +
                             std::to_string(divisor));
    }

    Var total = ag::mul_scalar(ssim_loss(x, y, scfg), wcfg.gamma[0]);
    for (int level = 1; level <= wcfg.levels; ++level) {
        wavelet::VarSubbandSet sx = wavelet::dwt_step(x);
        wavelet::VarSubbandSet sy = wavelet::dwt_step(y);
        Var level_sum = ag::add(ag::add(ssim_loss(sx.ll, sy.ll, scfg), ssim_loss(sx.lh, sy.lh, scfg)),
                                ag::add(ssim_loss(sx.hl, sy.hl, scfg), ssim_loss(sx.hh, sy.hh, scfg)));
        total = ag::add(total, ag::mul_scalar(level_sum, wcfg.gamma[static_cast<std::size_t>(level)]));
        x = sx.ll;
        y = sy.ll;
    }
    return total;
}

ag::Var perceptual_loss(const ag::Var& pred, const ag::Var& target,
                        const FeatureExtractor& extractor) {
    check_same_shape(pred->value, target->value, "perceptual_loss");
    Var x = as_batch(pred, "perceptual_loss");
    // Ground truth enters as data only, so no gradient reaches it.
    Var y = as_batch(ag::constant(target->value), "perceptual_loss");
    const int channels = x->value.dim(1);
    if (extractor.expected_channels() >= 0 && channels != extractor.expected_channels()) {
        throw ConfigError("perceptual_loss: extractor expects " +
                          std::to_string(extractor.expected_channels()) + " channels, input has " +
                          std::to_string(channels));
    }
    std::vector<Var> fx = extractor.features(x);
    std::vector<Var> fy = extractor.features(y);
    if (fx.size() != fy.size() || fx.empty()) {
        throw ConfigError("perceptual_loss: extractor returned inconsistent feature maps");
    }
    Var total;
    for (std::size_t i = 0; i < fx.size(); ++i) {
        Var term = ag::mean_all(ag::vabs(ag::sub(fx[i], fy[i])));
        total = total ? ag::add(total, term) : term;
    }
    return total;
}

std::pair<ag::Var, LossBreakdown> total_loss(const ag::Var& pred, const ag::Var& target,
                                             const LossWeights& weights, const WSsimConfig& wcfg,
                                             const SsimConfig& scfg,
                                             const FeatureExtractor& extractor,
                                             double charbonnier_epsilon) {
    if (!(weights.lambda1 >= 0.0) || !(weights.lambda2 >= 0.0) || !(weights.lambda3 >= 0.0) ||
        !std::isfinite(weights.lambda1) || !std::isfinite(weights.lambda2) ||
        !std::isfinite(weights.lambda3)) {
        throw ConfigError("total_loss: loss weights must be finite and >= 0");
    }
    Var cha = charbonnier_loss(pred, target, charbonnier_epsilon);
    Var wss = wssim_loss(pred, target, wcfg, scfg);
    Var per = perceptual_loss(pred, target, extractor);
    Var total = ag::add(ag::add(ag::mul_scalar(cha, weights.lambda1),
                                ag::mul_scalar(wss, weights.lambda2)),
                        ag::mul_scalar(per, weights.lambda3));
    LossBreakdown breakdown;
    breakdown.charbonnier = cha->value.flat(0);
    breakdown.wssim = wss->value.flat(0);
    breakdown.perceptual = per->value.flat(0);
    breakdown.total = total->value.flat(0);
    return {total, breakdown};
}

double charbonnier_value(const Tensor& pred, const Tensor& target, double epsilon) {
    return charbonnier_loss(ag::constant(pred), ag::constant(target), epsilon)->value.flat(0);
}

double ssim_value(const Tensor& pred, const Tensor& target, const SsimConfig& cfg) {
    return ssim_loss(ag::constant(pred), ag::constant(target), cfg)->value.flat(0);
}

double wssim_value(const Tensor& pred, const Tensor& target, const WSsimConfig& wcfg,
                   const SsimConfig& scfg) {
    return wssim_loss(ag::constant(pred), ag::constant(target), wcfg, scfg)->value.flat(0);
}

double perceptual_value(const Tensor& pred, const Tensor& target,
                        const FeatureExtractor& extractor) {
    return perceptual_loss(ag::constant(pred), ag::constant(target), extractor)->value.flat(0);
}

ConvPyramidExtractor::ConvPyramidExtractor(int in_channels, std::vector<int> widths,
                                           std::uint64_t seed)
    : in_channels_(in_channels), widths_(std::move(widths)), seed_(seed) {
    if (in_channels_ < 1 || widths_.empty()) {
        throw ConfigError("conv pyramid extractor: need >= 1 input channel and >= 1 stage");
    }
    Rng rng(seed_);
    int ci = in_channels_;
    for (std::size_t s = 0; s < widths_.size(); ++s) {
        const int co = widths_[s];
        Tensor w({co, ci, 3, 3});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * 9.0));
        for (std::int64_t i = 0; i < w.size(); ++i) {
            w.flat(i) = rng.normal(0.0, stddev);
        }
        weights_.push_back(ag::constant(std::move(w)));
        biases_.push_back(ag::constant(Tensor({co})));
        ci = co;
    }
}

std::vector<ag::Var> ConvPyramidExtractor::features(const ag::Var& image) const {
    std::vector<ag::Var> maps;
    ag::Var x = image;
    for (std::size_t s = 0; s < weights_.size(); ++s) {
        x = ag::leaky_relu(ag::conv2d(x, weights_[s], biases_[s], /*stride=*/2, /*pad=*/1), 0.1);
        maps.push_back(x);
    }
    return maps;
}

void ConvPyramidExtractor::save(const std::filesystem::path& path) const {
    checkpoint::Archive archive;
    archive.meta["kind"] = "conv_pyramid";
    archive.meta["in_channels"] = in_channels_;
    archive.meta["widths"] = widths_;
    archive.meta["seed"] = seed_;
    for (std::size_t s = 0; s < weights_.size(); ++s) {
        archive.tensors["stage" + std::to_string(s) + ".weight"] = weights_[s]->value;
        archive.tensors["stage" + std::to_string(s) + ".bias"] = biases_[s]->value;
    }
    checkpoint::save_archive(path, archive);
}

ConvPyramidExtractor ConvPyramidExtractor::load(const std::filesystem::path& path) {
    checkpoint::Archive archive = checkpoint::load_archive(path);
    if (archive.meta.value("kind", "") != "conv_pyramid") {
        throw ConfigError("extractor: " + path.string() + " is not a conv_pyramid archive");
    }
    ConvPyramidExtractor ex;
    ex.in_channels_ = archive.meta.at("in_channels").get<int>();
    ex.widths_ = archive.meta.at("widths").get<std::vector<int>>();
    ex.seed_ = archive.meta.value("seed", 0ULL);
    int ci = ex.in_channels_;
    for (std::size_t s = 0; s < ex.widths_.size(); ++s) {
        const std::string wkey = "stage" + std::to_string(s) + ".weight";
        const std::string bkey = "stage" + std::to_string(s) + ".bias";
        auto wit = archive.tensors.find(wkey);
        auto bit = archive.tensors.find(bkey);
        if (wit == archive.tensors.end() || bit == archive.tensors.end()) {
            throw ConfigError("extractor: missing tensor '" + wkey + "' in " + path.string());
        }
        const int co = ex.widths_[s];
        const std::vector<int> expect_w{co, ci, 3, 3};
        if (wit->second.shape() != expect_w || bit->second.shape() != std::vector<int>{co}) {
            throw ShapeError("extractor: tensor '" + wkey + "' has shape " +
                             wit->second.shape_str() + ", expected " +
                             Tensor::shape_str(expect_w));
        }
        ex.weights_.push_back(ag::constant(wit->second));
        ex.biases_.push_back(ag::constant(bit->second));
        ci = co;
    }
    return ex;
}

ConvPyramidExtractor ConvPyramidExtractor::default_extractor(std::uint64_t seed) {
    return ConvPyramidExtractor(3, {8, 16, 32}, seed);
}

std::unique_ptr<FeatureExtractor> load_extractor(const std::filesystem::path& path) {
    return std::make_unique<ConvPyramidExtractor>(ConvPyramidExtractor::load(path));
}

} // namespace s3net::losses
