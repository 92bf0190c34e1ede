#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "s3net/losses.hpp"
#include "s3net/tensor.hpp"

namespace s3net::metrics {

struct ImageMetrics {
    std::string id;
    double psnr_db = 0.0;      // +inf when the images are identical
    bool psnr_infinite = false;
    double ssim = 0.0;
    double perceptual = 0.0;   // pluggable perceptual distance, lower is better
    double mps = 0.0;
};

struct MetricReport {
    std::vector<ImageMetrics> per_image; // in id order
    ImageMetrics aggregate;              // arithmetic means, id = "aggregate"
    std::vector<std::string> warnings;
    std::vector<std::string> missing;    // ids present in only one directory
};

// 10 * log10(peak^2 / MSE); identical images report the infinite sentinel,
// never NaN.
double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0);

// Positive-convention windowed SSIM (11x11 Gaussian, sigma 1.5). Equals the
// negated ssim_loss under the same configuration.
double ssim_metric(const Tensor& pred, const Tensor& target);

// Mean Perceptual Score: 0.5 * (ssim + (1 - perceptual_distance)).
double mps(double ssim, double perceptual_distance);

double perceptual_distance(const Tensor& pred, const Tensor& target,
                           const losses::FeatureExtractor& extractor);

// Pairs PNG files by filename between the two directories and computes all
// metrics per pair; unpaired filenames are listed, not fatal.
MetricReport evaluate_dir(const std::filesystem::path& pred_dir,
                          const std::filesystem::path& gt_dir,
                          const losses::FeatureExtractor& extractor);

// Report schema v1. CSV columns: id,psnr_db,ssim,perceptual_distance,mps
// (infinite PSNR prints "inf"). The JSON summary carries the aggregate row,
// warnings and unpaired ids.
void write_csv(const MetricReport& report, const std::filesystem::path& path);
void write_json_summary(const MetricReport& report, const std::filesystem::path& path);

} // namespace s3net::metrics
