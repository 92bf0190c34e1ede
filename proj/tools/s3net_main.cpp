// Command-line surface for the depth-guided relighting pipeline: fixture
// generation, training, inference, evaluation and wavelet inspection.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "s3net/checkpoint.hpp"
#include "s3net/data.hpp"
#include "s3net/errors.hpp"
#include "s3net/fixtures.hpp"
#include "s3net/json_util.hpp"
#include "s3net/losses.hpp"
#include "s3net/metrics.hpp"
#include "s3net/model.hpp"
#include "s3net/png_io.hpp"
#include "s3net/train.hpp"
#include "s3net/version.hpp"
#include "s3net/wavelet.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Exit-code contract: 0 ok, 1 internal, 2 config, 3 data/io, 4 shape.
constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitShape = 4;

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Every command writes exactly one manifest beside its outputs. Two runs
// with identical inputs and seed differ only in the timing block.
struct ManifestWriter {
    std::string command;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    json args = json::object();
    json extra = json::object();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    std::string started_at = iso_timestamp();

    void write(const fs::path& path) const {
        json m;
        m["command"] = command;
        m["library_version"] = s3net::kLibraryVersion;
        m["seed"] = seed;
        m["config_hash"] = hex64(fnv1a64(args.dump()));
        m["inputs"] = inputs;
        m["outputs"] = outputs;
        m["extra"] = extra;
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        m["timing"] = {{"started_at", started_at}, {"wall_time_s", wall}};
        std::ofstream out(path, std::ios::trunc);
        if (!out) {
            throw s3net::IoError("cannot write manifest " + path.string());
        }
        out << m.dump(2) << "\n";
    }
};

struct FullConfig {
    s3net::model::ModelConfig model;
    s3net::train::TrainConfig train;
};

FullConfig read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw s3net::ConfigError("cannot open config file " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw s3net::ConfigError("config file " + path.string() + " is not valid JSON: " +
                                 e.what());
    }
    s3net::require_known_keys(j, {"model", "train"}, "config file");
    FullConfig cfg;
    if (j.contains("model")) {
        cfg.model = j.at("model").get<s3net::model::ModelConfig>();
    }
    if (j.contains("train")) {
        cfg.train = j.at("train").get<s3net::train::TrainConfig>();
    }
    return cfg;
}

s3net::model::NetworkParams load_any_model(const fs::path& path) {
    const auto archive = s3net::checkpoint::load_archive(path);
    const std::string kind = archive.meta.value("kind", "");
    if (kind == "model") {
        return s3net::model::load_model(path, /*requires_grad=*/false);
    }
    if (kind == "train") {
        auto state = s3net::train::load_train_checkpoint(path);
        return std::move(state.net);
    }
    throw s3net::ConfigError("checkpoint " + path.string() + " has unknown kind '" + kind + "'");
}

std::unique_ptr<s3net::losses::FeatureExtractor> make_extractor(const std::string& path) {
    if (path.empty()) {
        return std::make_unique<s3net::losses::ConvPyramidExtractor>(
            s3net::losses::ConvPyramidExtractor::default_extractor());
    }
    return s3net::losses::load_extractor(path);
}

int cmd_make_fixtures(const std::string& out_dir, int scenes, int settings, int size,
                      std::uint64_t seed) {
    ManifestWriter mf;
    mf.command = "make-fixtures";
    mf.seed = seed;
    mf.args = {{"scenes", scenes}, {"settings", settings}, {"size", size}, {"seed", seed}};
    s3net::fixtures::FixtureSpec spec;
    spec.scenes = scenes;
    spec.settings = settings;
    spec.size = size;
    spec.seed = seed;
    s3net::fixtures::write_fixture_tree(out_dir, spec);
    for (int scene = 0; scene < scenes; ++scene) {
        mf.outputs.push_back((fs::path(out_dir) / s3net::data::depth_filename(scene)).string());
        for (int k = 0; k < settings; ++k) {
            mf.outputs.push_back(
                (fs::path(out_dir) /
                 s3net::data::image_filename(scene, s3net::fixtures::setting_for(k)))
                    .string());
        }
    }
    mf.write(fs::path(out_dir) / "manifest.json");
    std::cout << "wrote " << scenes << " scene(s) x " << settings << " setting(s) at " << size
              << "x" << size << " to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_root,
              const std::string& out_dir, const std::string& resume,
              const std::string& extractor_path) {
    ManifestWriter mf;
    mf.command = "train";
    mf.inputs = {config_path, data_root};
    const FullConfig cfg = read_config_file(config_path);
    mf.seed = cfg.train.seed;
    json args;
    args["model"] = cfg.model;
    args["train"] = cfg.train;
    args["resume"] = resume;
    args["extractor"] = extractor_path;
    mf.args = args;

    const auto index = s3net::data::scan_dataset(data_root);
    if (!index.missing.empty()) {
        std::cout << "note: index incomplete, " << index.missing.size()
                  << " (scene, setting) pair(s) missing\n";
    }
    auto extractor = make_extractor(extractor_path);
    std::optional<fs::path> resume_from;
    if (!resume.empty()) {
        resume_from = fs::path(resume);
        mf.inputs.push_back(resume);
    }
    const auto state =
        s3net::train::fit(cfg.train, cfg.model, index, out_dir, *extractor, resume_from);
    mf.outputs = {(fs::path(out_dir) / "checkpoint_final.s3ck").string(),
                  (fs::path(out_dir) / "train_log.jsonl").string()};
    mf.extra["steps"] = state.step;
    mf.extra["epochs"] = state.epoch;
    if (!state.loss_history.empty()) {
        mf.extra["final_total_loss"] = state.loss_history.back();
    }
    mf.write(fs::path(out_dir) / "manifest.json");
    std::cout << "trained " << state.epoch << " epoch(s), " << state.step << " step(s); final="
              << (state.loss_history.empty() ? 0.0 : state.loss_history.back()) << "\n";
    return kExitOk;
}

int cmd_relight(const std::string& checkpoint, const std::string& src,
                const std::string& src_depth, const std::string& guide,
                const std::string& guide_depth, const std::string& out_path) {
    ManifestWriter mf;
    mf.command = "relight";
    mf.inputs = {checkpoint, src, src_depth, guide, guide_depth};
    mf.args = {{"checkpoint", checkpoint}, {"src", src},     {"src_depth", src_depth},
               {"guide", guide},           {"guide_depth", guide_depth}, {"out", out_path}};

    const auto np = load_any_model(checkpoint);
    s3net::data::RelightSample sample;
    sample.src_img = s3net::data::load_image(src);
    sample.src_depth = s3net::data::load_depth(src_depth);
    sample.guide_img = s3net::data::load_image(guide);
    sample.guide_depth = s3net::data::load_depth(guide_depth);
    const s3net::Tensor input = s3net::data::assemble_input(sample);

    const auto t0 = std::chrono::steady_clock::now();
    const auto out = s3net::model::forward(np, s3net::ag::constant(input));
    const double forward_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    s3net::png::write_tensor_png(out_path, out->value, 8);
    mf.outputs = {out_path};
    mf.extra["forward_seconds"] = forward_s;
    mf.write(fs::path(out_path).string() + ".manifest.json");
    std::cout << "wrote " << out_path << " (forward " << forward_s << " s)\n";
    return kExitOk;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_prefix,
             const std::string& extractor_path) {
    ManifestWriter mf;
    mf.command = "eval";
    mf.inputs = {pred_dir, gt_dir};
    mf.args = {{"pred", pred_dir}, {"gt", gt_dir}, {"out", out_prefix},
               {"extractor", extractor_path}};
    auto extractor = make_extractor(extractor_path);
    const auto report = s3net::metrics::evaluate_dir(pred_dir, gt_dir, *extractor);
    const fs::path csv_path = out_prefix + ".csv";
    const fs::path json_path = out_prefix + ".json";
    s3net::metrics::write_csv(report, csv_path);
    s3net::metrics::write_json_summary(report, json_path);
    mf.outputs = {csv_path.string(), json_path.string()};
    mf.extra["count"] = report.per_image.size();
    mf.write(fs::path(out_prefix + ".manifest.json"));
    std::cout << "images=" << report.per_image.size() << " psnr_db="
              << (report.aggregate.psnr_infinite ? std::string("inf")
                                                 : std::to_string(report.aggregate.psnr_db))
              << " ssim=" << report.aggregate.ssim << " distance=" << report.aggregate.perceptual
              << " mps=" << report.aggregate.mps << "\n";
    for (const auto& w : report.warnings) {
        std::cout << "warning: " << w << "\n";
    }
    return kExitOk;
}

int cmd_wavelet(const std::string& image_path, int levels, const std::string& out_dir) {
    if (levels < 1) {
        throw s3net::ConfigError("wavelet: levels must be >= 1");
    }
    ManifestWriter mf;
    mf.command = "wavelet";
    mf.inputs = {image_path};
    mf.args = {{"image", image_path}, {"levels", levels}, {"out", out_dir}};
    fs::create_directories(out_dir);

    const s3net::Tensor img = s3net::png::to_tensor(s3net::png::read_png(image_path));
    const auto pyramid = s3net::wavelet::dwt_pyramid(img, levels);

    auto normalize_high = [](const s3net::Tensor& t) {
        double max_abs = 1e-12;
        for (std::int64_t i = 0; i < t.size(); ++i) {
            max_abs = std::max(max_abs, std::fabs(t.flat(i)));
        }
        s3net::Tensor out(t.shape());
        for (std::int64_t i = 0; i < t.size(); ++i) {
            out.flat(i) = 0.5 + t.flat(i) / (2.0 * max_abs);
        }
        return out;
    };

    for (std::size_t i = 0; i < pyramid.levels.size(); ++i) {
        const auto& s = pyramid.levels[i];
        const std::string tag = "level" + std::to_string(i + 1);
        // LL gains a factor of two per level under the orthonormal scaling.
        s3net::Tensor ll = s.ll;
        ll.scale_inplace(1.0 / static_cast<double>(1 << (i + 1)));
        s3net::png::write_tensor_png(fs::path(out_dir) / (tag + "_ll.png"), ll, 8);
        s3net::png::write_tensor_png(fs::path(out_dir) / (tag + "_lh.png"),
                                     normalize_high(s.lh), 8);
        s3net::png::write_tensor_png(fs::path(out_dir) / (tag + "_hl.png"),
                                     normalize_high(s.hl), 8);
        s3net::png::write_tensor_png(fs::path(out_dir) / (tag + "_hh.png"),
                                     normalize_high(s.hh), 8);
        for (const char* band : {"_ll.png", "_lh.png", "_hl.png", "_hh.png"}) {
            mf.outputs.push_back((fs::path(out_dir) / (tag + band)).string());
        }
    }

    // Reconstruct level by level and report the round-trip error.
    s3net::Tensor recon = pyramid.levels.back().ll;
    for (std::size_t i = pyramid.levels.size(); i-- > 0;) {
        s3net::wavelet::SubbandSet s = pyramid.levels[i];
        s.ll = recon;
        recon = s3net::wavelet::idwt_step(s);
    }
    double err = 0.0;
    for (std::int64_t i = 0; i < img.size(); ++i) {
        err = std::max(err, std::fabs(recon.flat(i) - img.flat(i)));
    }
    s3net::png::write_tensor_png(fs::path(out_dir) / "reconstruction.png", recon, 8);
    mf.outputs.push_back((fs::path(out_dir) / "reconstruction.png").string());
    mf.extra["reconstruction_error"] = err;
    mf.write(fs::path(out_dir) / "manifest.json");
    std::cout << "levels=" << levels << " reconstruction_error=" << err << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"depth-guided any-to-any image relighting pipeline"};
    app.set_version_flag("--version", std::string("s3net ") + s3net::kLibraryVersion);
    app.require_subcommand(1);

    auto* fixtures_cmd = app.add_subcommand("make-fixtures", "generate a synthetic dataset tree");
    std::string fx_out;
    int fx_scenes = 2;
    int fx_settings = 4;
    int fx_size = 64;
    std::uint64_t fx_seed = 0;
    fixtures_cmd->add_option("--out", fx_out, "output directory")->required();
    fixtures_cmd->add_option("--scenes", fx_scenes, "number of scenes");
    fixtures_cmd->add_option("--settings", fx_settings, "illumination settings per scene (<= 40)");
    fixtures_cmd->add_option("--size", fx_size, "image side length");
    fixtures_cmd->add_option("--seed", fx_seed, "generator seed");

    auto* train_cmd = app.add_subcommand("train", "train on an indexed dataset");
    std::string tr_config;
    std::string tr_data;
    std::string tr_out;
    std::string tr_resume;
    std::string tr_extractor;
    train_cmd->add_option("--config", tr_config, "JSON config file")->required();
    train_cmd->add_option("--data", tr_data, "dataset root directory")->required();
    train_cmd->add_option("--out", tr_out, "output directory")->required();
    train_cmd->add_option("--resume", tr_resume, "train checkpoint to resume from");
    train_cmd->add_option("--extractor", tr_extractor, "perceptual extractor archive");

    auto* relight_cmd = app.add_subcommand("relight", "relight one image");
    std::string rl_ckpt, rl_src, rl_src_depth, rl_guide, rl_guide_depth, rl_out;
    relight_cmd->add_option("--checkpoint", rl_ckpt, "model or train checkpoint")->required();
    relight_cmd->add_option("--src", rl_src, "source image PNG")->required();
    relight_cmd->add_option("--src-depth", rl_src_depth, "source depth PNG")->required();
    relight_cmd->add_option("--guide", rl_guide, "guide image PNG")->required();
    relight_cmd->add_option("--guide-depth", rl_guide_depth, "guide depth PNG")->required();
    relight_cmd->add_option("--out", rl_out, "output PNG path")->required();

    auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
    std::string ev_pred, ev_gt, ev_out, ev_extractor;
    eval_cmd->add_option("--pred", ev_pred, "prediction directory")->required();
    eval_cmd->add_option("--gt", ev_gt, "ground-truth directory")->required();
    eval_cmd->add_option("--out", ev_out, "report path prefix")->required();
    eval_cmd->add_option("--extractor", ev_extractor, "perceptual extractor archive");

    auto* wavelet_cmd = app.add_subcommand("wavelet", "decompose an image into subband PNGs");
    std::string wv_image, wv_out;
    int wv_levels = 2;
    wavelet_cmd->add_option("--image", wv_image, "input PNG")->required();
    wavelet_cmd->add_option("--levels", wv_levels, "pyramid depth");
    wavelet_cmd->add_option("--out", wv_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (fixtures_cmd->parsed()) {
            return cmd_make_fixtures(fx_out, fx_scenes, fx_settings, fx_size, fx_seed);
        }
        if (train_cmd->parsed()) {
            return cmd_train(tr_config, tr_data, tr_out, tr_resume, tr_extractor);
        }
        if (relight_cmd->parsed()) {
            return cmd_relight(rl_ckpt, rl_src, rl_src_depth, rl_guide, rl_guide_depth, rl_out);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(ev_pred, ev_gt, ev_out, ev_extractor);
        }
        if (wavelet_cmd->parsed()) {
            return cmd_wavelet(wv_image, wv_levels, wv_out);
        }
    } catch (const s3net::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const s3net::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitShape;
    } catch (const s3net::DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kExitShape;
    } catch (const s3net::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const s3net::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitInternal;
}
