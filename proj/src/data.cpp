#include "s3net/data.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "s3net/png_io.hpp"

namespace s3net::data {

namespace {

std::optional<int> parse_int(std::string_view s) {
    if (s.empty()) {
        return std::nullopt;
    }
    int value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    return value;
}

std::string pad3(int v) {
    std::string s = std::to_string(v);
    while (s.size() < 3) {
        s.insert(s.begin(), '0');
    }
    return s;
}

} // namespace

std::string setting_str(const Setting& s) {
    return "azimuth " + std::to_string(s.azimuth) + ", " + std::to_string(s.temperature) + "K";
}

std::string image_filename(int scene, const Setting& s) {
    return "Image" + pad3(scene) + "_" + std::to_string(s.azimuth) + "_" +
           std::to_string(s.temperature) + ".png";
}

std::string depth_filename(int scene) {
    return "Depth" + pad3(scene) + ".png";
}

FilenameParser canonical_parser() {
    return [](const std::string& name) -> std::optional<ParsedName> {
        if (!name.ends_with(".png")) {
            return std::nullopt;
        }
        const std::string stem = name.substr(0, name.size() - 4);
        if (stem.starts_with("Depth")) {
            const auto scene = parse_int(std::string_view(stem).substr(5));
            if (!scene) {
                return std::nullopt;
            }
            ParsedName p;
            p.kind = ParsedName::Kind::kDepth;
            p.scene = *scene;
            return p;
        }
        if (stem.starts_with("Image")) {
            const std::string_view rest = std::string_view(stem).substr(5);
            const auto first = rest.find('_');
            if (first == std::string_view::npos) {
                return std::nullopt;
            }
            const auto second = rest.find('_', first + 1);
            if (second == std::string_view::npos) {
                return std::nullopt;
            }
            const auto scene = parse_int(rest.substr(0, first));
            const auto azimuth = parse_int(rest.substr(first + 1, second - first - 1));
            const auto temperature = parse_int(rest.substr(second + 1));
            if (!scene || !azimuth || !temperature) {
                return std::nullopt;
            }
            ParsedName p;
            p.kind = ParsedName::Kind::kImage;
            p.scene = *scene;
            p.setting = Setting{*azimuth, *temperature};
            return p;
        }
        return std::nullopt;
    };
}

SceneIndex scan_dataset(const std::filesystem::path& root, const FilenameParser& parser) {
    if (!std::filesystem::exists(root)) {
        throw DataError("scan_dataset: root does not exist: " + root.string());
    }
    SceneIndex index;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        const std::string name = path.filename().string();
        // Only PNG files participate; anything else in the tree is ignored.
        if (!name.ends_with(".png")) {
            continue;
        }
        const auto parsed = parser(name);
        if (!parsed) {
            throw DataError("scan_dataset: cannot parse filename '" + name + "'");
        }
        if (parsed->kind == ParsedName::Kind::kDepth) {
            index.depths[parsed->scene] = path;
        } else {
            index.scenes[parsed->scene][parsed->setting] = path;
        }
    }
    for (const auto& [scene, settings] : index.scenes) {
        if (index.depths.find(scene) == index.depths.end()) {
            throw DataError("scan_dataset: scene " + std::to_string(scene) +
                            " has images but no depth map");
        }
        for (const auto& [setting, path] : settings) {
            index.entries.emplace_back(scene, setting);
        }
    }
    // Completeness relative to the union of settings observed anywhere.
    std::set<Setting> all_settings;
    for (const auto& [scene, settings] : index.scenes) {
        for (const auto& [setting, path] : settings) {
            all_settings.insert(setting);
        }
    }
    for (const auto& [scene, settings] : index.scenes) {
        for (const Setting& s : all_settings) {
            if (settings.find(s) == settings.end()) {
                index.missing.emplace_back(scene, s);
            }
        }
    }
    return index;
}

std::filesystem::path target_path_for(const SceneIndex& index, int src_scene,
                                      const Setting& guide_setting) {
    const auto scene_it = index.scenes.find(src_scene);
    if (scene_it == index.scenes.end()) {
        throw DataError("pairing: scene " + std::to_string(src_scene) + " is not indexed");
    }
    const auto setting_it = scene_it->second.find(guide_setting);
    if (setting_it == scene_it->second.end()) {
        throw DataError("pairing: scene " + std::to_string(src_scene) +
                        " has no rendering for " + setting_str(guide_setting));
    }
    return setting_it->second;
}

RelightSample lookup_sample(const SceneIndex& index, const SampleKey& src,
                            const SampleKey& guide) {
    RelightSample s;
    s.src_scene = src.scene;
    s.guide_scene = guide.scene;
    s.src_setting = src.setting;
    s.guide_setting = guide.setting;
    s.src_img = load_image(target_path_for(index, src.scene, src.setting));
    s.guide_img = load_image(target_path_for(index, guide.scene, guide.setting));
    s.target_img = load_image(target_path_for(index, src.scene, guide.setting));
    const auto src_depth_it = index.depths.find(src.scene);
    const auto guide_depth_it = index.depths.find(guide.scene);
    if (src_depth_it == index.depths.end() || guide_depth_it == index.depths.end()) {
        throw DataError("pairing: missing depth map for scene " +
                        std::to_string(src_depth_it == index.depths.end() ? src.scene
                                                                          : guide.scene));
    }
    s.src_depth = load_depth(src_depth_it->second);
    s.guide_depth = load_depth(guide_depth_it->second);
    return s;
}

RelightSample sample_pair(const SceneIndex& index, Rng& rng) {
    if (index.empty()) {
        throw DataError("sample_pair: index is empty");
    }
    const auto& src_entry = index.entries[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(index.entries.size())))];
    const auto& guide_entry = index.entries[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(index.entries.size())))];
    return lookup_sample(index, SampleKey{src_entry.first, src_entry.second},
                         SampleKey{guide_entry.first, guide_entry.second});
}

Tensor assemble_input(const RelightSample& sample) {
    const Tensor& si = sample.src_img;
    if (si.rank() != 3 || si.dim(0) != 3) {
        throw ShapeError("assemble_input: src image must be 3 x H x W, got " + si.shape_str());
    }
    const int h = si.dim(1);
    const int w = si.dim(2);
    auto check = [&](const Tensor& t, int channels, const char* who) {
        if (t.rank() != 3 || t.dim(0) != channels || t.dim(1) != h || t.dim(2) != w) {
            throw ShapeError(std::string("assemble_input: ") + who + " has shape " +
                             t.shape_str() + ", expected " + std::to_string(channels) + "x" +
                             std::to_string(h) + "x" + std::to_string(w));
        }
    };
    check(sample.src_depth, 1, "src depth");
    check(sample.guide_img, 3, "guide image");
    check(sample.guide_depth, 1, "guide depth");

    Tensor out({8, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    double* dst = out.data();
    std::copy(sample.src_img.data(), sample.src_img.data() + 3 * plane, dst);
    std::copy(sample.src_depth.data(), sample.src_depth.data() + plane, dst + 3 * plane);
    std::copy(sample.guide_img.data(), sample.guide_img.data() + 3 * plane, dst + 4 * plane);
    std::copy(sample.guide_depth.data(), sample.guide_depth.data() + plane, dst + 7 * plane);
    return out;
}

DisassembledInput disassemble_input(const Tensor& input) {
    if (input.rank() != 3 || input.dim(0) != 8) {
        throw ShapeError("disassemble_input: expected 8 x H x W, got " + input.shape_str());
    }
    const int h = input.dim(1);
    const int w = input.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    auto slice = [&](int c0, int channels) {
        Tensor t({channels, h, w});
        std::copy(input.data() + c0 * plane, input.data() + (c0 + channels) * plane, t.data());
        return t;
    };
    return DisassembledInput{slice(0, 3), slice(3, 1), slice(4, 3), slice(7, 1)};
}

Tensor load_image(const std::filesystem::path& path) {
    const png::PngImage img = png::read_png(path);
    if (img.channels != 3) {
        throw IoError("load_image: " + path.string() + " has " + std::to_string(img.channels) +
                      " channel(s), expected RGB");
    }
    return png::to_tensor(img);
}

Tensor load_depth(const std::filesystem::path& path) {
    const png::PngImage img = png::read_png(path);
    if (img.channels != 1) {
        throw IoError("load_depth: " + path.string() + " has " + std::to_string(img.channels) +
                      " channel(s), expected single-channel grayscale");
    }
    return png::to_tensor(img);
}

} // namespace s3net::data
