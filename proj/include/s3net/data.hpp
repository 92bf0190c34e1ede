#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s3net/rng.hpp"
#include "s3net/tensor.hpp"

namespace s3net::data {

// Canonical illumination grid: 8 azimuthal light directions times five
// color temperatures.
inline constexpr int kAzimuthCount = 8;
inline constexpr std::array<int, 5> kTemperatures{2500, 3500, 4500, 5500, 6500};
inline constexpr int kSettingsPerScene = 40;

struct Setting {
    int azimuth = 0;     // 0..7
    int temperature = 2500;

    auto operator<=>(const Setting&) const = default;
};

std::string setting_str(const Setting& s);

// Canonical filename grammar:
//   Image{scene:03}_{azimuth}_{temperature}.png
//   Depth{scene:03}.png
// A different naming scheme plugs in through FilenameParser.
struct ParsedName {
    enum class Kind { kImage, kDepth };
    Kind kind = Kind::kImage;
    int scene = 0;
    Setting setting;
};

using FilenameParser = std::function<std::optional<ParsedName>(const std::string&)>;
FilenameParser canonical_parser();

std::string image_filename(int scene, const Setting& s);
std::string depth_filename(int scene);

struct SceneIndex {
    // scene -> setting -> image path
    std::map<int, std::map<Setting, std::filesystem::path>> scenes;
    // scene -> depth path (exactly one per scene)
    std::map<int, std::filesystem::path> depths;
    // (scene, setting) pairs absent relative to the union of settings seen
    // across all scenes.
    std::vector<std::pair<int, Setting>> missing;
    // Flattened (scene, setting) entries, sorted; the sampler draws
    // uniformly from this list.
    std::vector<std::pair<int, Setting>> entries;

    bool empty() const { return entries.empty(); }
    std::int64_t image_count() const { return static_cast<std::int64_t>(entries.size()); }
};

// Walks the flat directory of PNG files. A PNG that does not parse or a
// scene without a depth map raises DataError; an empty directory yields an
// empty index.
SceneIndex scan_dataset(const std::filesystem::path& root,
                        const FilenameParser& parser = canonical_parser());

// One training example: relight the source scene to the guide's setting.
struct RelightSample {
    Tensor src_img, guide_img, target_img; // 3 x H x W
    Tensor src_depth, guide_depth;         // 1 x H x W
    int src_scene = 0;
    int guide_scene = 0;
    Setting src_setting;
    Setting guide_setting;
};

struct SampleKey {
    int scene = 0;
    Setting setting;
};

// Target path implied by a (source, guide) draw: the source scene rendered
// under the guide's setting. Raises DataError when that rendering is absent.
std::filesystem::path target_path_for(const SceneIndex& index, int src_scene,
                                      const Setting& guide_setting);

// Loads the full quintuple for an explicit (source, guide) pair.
RelightSample lookup_sample(const SceneIndex& index, const SampleKey& src, const SampleKey& guide);

// Source and guide drawn uniformly and independently over all indexed
// (scene, setting) entries.
RelightSample sample_pair(const SceneIndex& index, Rng& rng);

// Channel layout, frozen: [src RGB (0-2), src depth (3), guide RGB (4-6),
// guide depth (7)].
Tensor assemble_input(const RelightSample& sample);

struct DisassembledInput {
    Tensor src_img, src_depth, guide_img, guide_depth;
};
DisassembledInput disassemble_input(const Tensor& input);

// 8/16-bit PNGs mapped linearly onto [0, 1]; images must be RGB, depths
// single-channel.
Tensor load_image(const std::filesystem::path& path);
Tensor load_depth(const std::filesystem::path& path);

} // namespace s3net::data
