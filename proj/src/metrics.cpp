#include "s3net/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "s3net/png_io.hpp"

namespace s3net::metrics {

double psnr(const Tensor& pred, const Tensor& target, double peak) {
    check_same_shape(pred, target, "psnr");
    double mse = 0.0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        const double d = pred.flat(i) - target.flat(i);
        mse += d * d;
    }
    mse /= static_cast<double>(pred.size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim_metric(const Tensor& pred, const Tensor& target) {
    return -losses::ssim_value(pred, target, losses::SsimConfig::gaussian_window());
}

double mps(double ssim, double perceptual_distance) {
    return 0.5 * (ssim + (1.0 - perceptual_distance));
}

double perceptual_distance(const Tensor& pred, const Tensor& target,
                           const losses::FeatureExtractor& extractor) {
    return losses::perceptual_value(pred, target, extractor);
}

namespace {

std::string format_double(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    std::ostringstream oss;
    oss.precision(10);
    oss << v;
    return oss.str();
}

} // namespace

MetricReport evaluate_dir(const std::filesystem::path& pred_dir,
                          const std::filesystem::path& gt_dir,
                          const losses::FeatureExtractor& extractor) {
    if (!std::filesystem::exists(pred_dir)) {
        throw DataError("evaluate_dir: prediction directory does not exist: " +
                        pred_dir.string());
    }
    if (!std::filesystem::exists(gt_dir)) {
        throw DataError("evaluate_dir: ground-truth directory does not exist: " +
                        gt_dir.string());
    }
    auto png_names = [](const std::filesystem::path& dir) {
        std::set<std::string> names;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") {
                names.insert(entry.path().filename().string());
            }
        }
        return names;
    };
    const std::set<std::string> pred_names = png_names(pred_dir);
    const std::set<std::string> gt_names = png_names(gt_dir);

    MetricReport report;
    for (const std::string& name : pred_names) {
        if (gt_names.find(name) == gt_names.end()) {
            report.missing.push_back(name + " (prediction only)");
        }
    }
    for (const std::string& name : gt_names) {
        if (pred_names.find(name) == pred_names.end()) {
            report.missing.push_back(name + " (ground truth only)");
        }
    }

    std::vector<std::string> common;
    std::set_intersection(pred_names.begin(), pred_names.end(), gt_names.begin(), gt_names.end(),
                          std::back_inserter(common));
    if (common.empty()) {
        report.warnings.push_back("no common images between the two directories");
    }

    double sum_psnr = 0.0;
    bool any_inf = false;
    double sum_ssim = 0.0;
    double sum_per = 0.0;
    double sum_mps = 0.0;
    for (const std::string& name : common) {
        const Tensor pred = png::to_tensor(png::read_png(pred_dir / name));
        const Tensor gt = png::to_tensor(png::read_png(gt_dir / name));
        if (!pred.same_shape(gt)) {
            throw ShapeError("evaluate_dir: '" + name + "' shapes differ: " + pred.shape_str() +
                             " vs " + gt.shape_str());
        }
        ImageMetrics m;
        m.id = name;
        m.psnr_db = psnr(pred, gt);
        m.psnr_infinite = std::isinf(m.psnr_db);
        m.ssim = ssim_metric(pred, gt);
        m.perceptual = perceptual_distance(pred, gt, extractor);
        m.mps = mps(m.ssim, m.perceptual);
        if (m.ssim < 0.0 || m.ssim > 1.0 || m.perceptual < 0.0 || m.perceptual > 1.0) {
            report.warnings.push_back("mps inputs outside [0,1] for '" + name +
                                      "' (ssim=" + format_double(m.ssim) +
                                      ", distance=" + format_double(m.perceptual) + ")");
        }
        any_inf = any_inf || m.psnr_infinite;
        sum_psnr += m.psnr_db;
        sum_ssim += m.ssim;
        sum_per += m.perceptual;
        sum_mps += m.mps;
        report.per_image.push_back(std::move(m));
    }

    report.aggregate.id = "aggregate";
    if (!report.per_image.empty()) {
        const double n = static_cast<double>(report.per_image.size());
        report.aggregate.psnr_db = sum_psnr / n;
        report.aggregate.psnr_infinite = any_inf;
        report.aggregate.ssim = sum_ssim / n;
        report.aggregate.perceptual = sum_per / n;
        report.aggregate.mps = sum_mps / n;
    }
    return report;
}

void write_csv(const MetricReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("metrics: cannot open " + path.string() + " for writing");
    }
    out << "id,psnr_db,ssim,perceptual_distance,mps\n";
    auto row = [&out](const ImageMetrics& m) {
        out << m.id << "," << format_double(m.psnr_db) << "," << format_double(m.ssim) << ","
            << format_double(m.perceptual) << "," << format_double(m.mps) << "\n";
    };
    for (const ImageMetrics& m : report.per_image) {
        row(m);
    }
    row(report.aggregate);
    if (!out) {
        throw IoError("metrics: short write to " + path.string());
    }
}

void write_json_summary(const MetricReport& report, const std::filesystem::path& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["count"] = report.per_image.size();
    // JSON has no infinity; an infinite mean PSNR is encoded as null plus
    // the psnr_infinite flag.
    nlohmann::json agg;
    agg["psnr_db"] = report.aggregate.psnr_infinite ? nlohmann::json(nullptr)
                                                    : nlohmann::json(report.aggregate.psnr_db);
    agg["psnr_infinite"] = report.aggregate.psnr_infinite;
    agg["ssim"] = report.aggregate.ssim;
    agg["perceptual_distance"] = report.aggregate.perceptual;
    agg["mps"] = report.aggregate.mps;
    j["aggregate"] = agg;
    j["warnings"] = report.warnings;
    j["missing"] = report.missing;
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("metrics: cannot open " + path.string() + " for writing");
    }
    out << j.dump(2) << "\n";
}

} // namespace s3net::metrics
