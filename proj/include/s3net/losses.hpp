#pragma once

#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include "s3net/autograd.hpp"
#include "s3net/tensor.hpp"

namespace s3net::losses {

// Weights on the three total-loss components; defaults follow the training
// recipe this pipeline ships with.
struct LossWeights {
    double lambda1 = 1.0; // Charbonnier
    double lambda2 = 1.1; // wavelet-SSIM
    double lambda3 = 0.1; // perceptual
};

struct SsimConfig {
    // Stabilizers (0.01*L)^2 and (0.03*L)^2 with dynamic range L = 1.
    double c1 = 1e-4;
    double c2 = 9e-4;
    enum class Window { kGlobal, kGaussian };
    // Global statistics match the loss formulation; the Gaussian window is
    // the usual evaluation convention (metrics module uses it).
    Window window = Window::kGlobal;
    int window_size = 11;
    double window_sigma = 1.5;

    static SsimConfig global_window() { return SsimConfig{}; }
    static SsimConfig gaussian_window();
};

struct WSsimConfig {
    int levels = 2;
    // gamma[0] weighs the undecomposed pair, gamma[i] the level-i subbands.
    std::vector<double> gamma = {1.0, 0.5, 0.25};
};

// Frozen feature producer for the perceptual loss. Implementations hold
// their parameters as non-differentiable constants.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    // image is N x C x H x W (or C x H x W, promoted by the callers).
    virtual std::vector<ag::Var> features(const ag::Var& image) const = 0;
    // Expected input channel count, or -1 for any.
    virtual int expected_channels() const { return 3; }
};

// Features = the image itself; perceptual loss degenerates to mean |L1|.
class IdentityExtractor final : public FeatureExtractor {
public:
    std::vector<ag::Var> features(const ag::Var& image) const override { return {image}; }
    int expected_channels() const override { return -1; }
};

// Deterministic seeded convolutional pyramid: three stride-2 stages whose
// post-activation maps are the designated features. Stands in for a
// pretrained network so nothing has to be downloaded; real weights can be
// supplied through the archive loader below.
class ConvPyramidExtractor final : public FeatureExtractor {
public:
    ConvPyramidExtractor(int in_channels, std::vector<int> widths, std::uint64_t seed);

    std::vector<ag::Var> features(const ag::Var& image) const override;
    int expected_channels() const override { return in_channels_; }

    void save(const std::filesystem::path& path) const;
    static ConvPyramidExtractor load(const std::filesystem::path& path);

    static ConvPyramidExtractor default_extractor(std::uint64_t seed = 0x5EED);

private:
    ConvPyramidExtractor() = default;
    int in_channels_ = 3;
    std::vector<int> widths_;
    std::uint64_t seed_ = 0;
    std::vector<ag::Var> weights_;
    std::vector<ag::Var> biases_;
};

std::unique_ptr<FeatureExtractor> load_extractor(const std::filesystem::path& path);

// (1/T) * sum_i sqrt((pred_i - target_i)^2 + epsilon^2); >= epsilon, smooth
// everywhere.
ag::Var charbonnier_loss(const ag::Var& pred, const ag::Var& target, double epsilon = 1e-6);

// NEGATIVE structural similarity; identical inputs give exactly -1.
// Batches reduce by mean over samples.
ag::Var ssim_loss(const ag::Var& pred, const ag::Var& target, const SsimConfig& cfg);

// gamma[0] * ssim_loss(pred, target) plus, per level i >= 1, gamma[i] times
// the ssim_loss of every subband pair {ll, lh, hl, hh}.
ag::Var wssim_loss(const ag::Var& pred, const ag::Var& target, const WSsimConfig& wcfg,
                   const SsimConfig& scfg);

// Sum over feature maps of the per-element mean absolute difference.
// Gradients flow only through pred.
ag::Var perceptual_loss(const ag::Var& pred, const ag::Var& target,
                        const FeatureExtractor& extractor);

struct LossBreakdown {
    double charbonnier = 0.0;
    double wssim = 0.0;
    double perceptual = 0.0;
    double total = 0.0;
};

// lambda1 * charbonnier + lambda2 * wssim + lambda3 * perceptual, with the
// unweighted component values reported alongside.
std::pair<ag::Var, LossBreakdown> total_loss(const ag::Var& pred, const ag::Var& target,
                                             const LossWeights& weights, const WSsimConfig& wcfg,
                                             const SsimConfig& scfg,
                                             const FeatureExtractor& extractor,
                                             double charbonnier_epsilon = 1e-6);

// Convenience value-only entry points for plain tensors.
double charbonnier_value(const Tensor& pred, const Tensor& target, double epsilon = 1e-6);
double ssim_value(const Tensor& pred, const Tensor& target, const SsimConfig& cfg);
double wssim_value(const Tensor& pred, const Tensor& target, const WSsimConfig& wcfg,
                   const SsimConfig& scfg);
double perceptual_value(const Tensor& pred, const Tensor& target,
                        const FeatureExtractor& extractor);

// Normalized 2-D Gaussian window used by both the loss and the metric.
Tensor gaussian_kernel(int size, double sigma);

} // namespace s3net::losses
