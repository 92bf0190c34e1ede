#pragma once

#include <cstdint>
#include <filesystem>

#include "s3net/data.hpp"
#include "s3net/tensor.hpp"

namespace s3net::fixtures {

// Synthetic scene tree in the canonical dataset layout: a sloped gradient
// background plus one dome-shaped blob per scene. The image is shaded from
// the scene's own depth map (Lambertian, light direction from the azimuth
// label, light color from the temperature label), so depth genuinely
// explains part of the appearance.
struct FixtureSpec {
    int scenes = 2;
    int settings = 4; // enumerated over the azimuth x temperature grid
    int size = 64;
    std::uint64_t seed = 0;
};

// Deterministic enumeration covering all 40 combinations exactly once over
// k = 0..39 (8 and 5 are coprime).
data::Setting setting_for(int k);

Tensor render_depth(const FixtureSpec& spec, int scene);                       // 1 x S x S
Tensor render_image(const FixtureSpec& spec, int scene, const data::Setting& setting); // 3 x S x S

// Writes scenes x settings images plus one depth map per scene.
void write_fixture_tree(const std::filesystem::path& out_dir, const FixtureSpec& spec);

} // namespace s3net::fixtures
