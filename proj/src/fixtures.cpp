#include "s3net/fixtures.hpp"

#include <algorithm>
#include <cmath>

#include "s3net/png_io.hpp"
#include "s3net/rng.hpp"

namespace s3net::fixtures {

namespace {

struct SceneParams {
    double cx, cy;      // blob center, normalized
    double radius;      // blob radius, normalized
    double bump = 0.35; // blob height in depth units
    double slope_x, slope_y;
    double bg_albedo[3];
    double blob_albedo[3];
    double grad_x, grad_y; // background albedo gradient direction
};

SceneParams scene_params(const FixtureSpec& spec, int scene) {
    Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + 0xC0FFEE + static_cast<std::uint64_t>(scene));
    SceneParams p;
    p.cx = rng.uniform(0.35, 0.65);
    p.cy = rng.uniform(0.35, 0.65);
    p.radius = rng.uniform(0.18, 0.30);
    p.slope_x = rng.uniform(-0.15, 0.15);
    p.slope_y = rng.uniform(-0.15, 0.15);
    for (int c = 0; c < 3; ++c) {
        p.bg_albedo[c] = rng.uniform(0.35, 0.75);
        p.blob_albedo[c] = rng.uniform(0.45, 0.90);
    }
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    p.grad_x = std::cos(angle);
    p.grad_y = std::sin(angle);
    return p;
}

void light_tint(int temperature, double tint[3]) {
    const double t = (temperature - 2500) / 4000.0;
    tint[0] = 1.0 - 0.20 * t;
    tint[1] = 0.85 + 0.05 * t;
    tint[2] = 0.60 + 0.40 * t;
}

double depth_at(const SceneParams& p, double u, double v) {
    double d = 0.75 + p.slope_x * (u - 0.5) + p.slope_y * (v - 0.5);
    const double du = u - p.cx;
    const double dv = v - p.cy;
    const double r2 = (du * du + dv * dv) / (p.radius * p.radius);
    if (r2 < 1.0) {
        d -= p.bump * std::sqrt(1.0 - r2);
    }
    return std::clamp(d, 0.0, 1.0);
}

} // namespace

data::Setting setting_for(int k) {
    data::Setting s;
    s.azimuth = k % data::kAzimuthCount;
    s.temperature = data::kTemperatures[static_cast<std::size_t>(k) % data::kTemperatures.size()];
    return s;
}

Tensor render_depth(const FixtureSpec& spec, int scene) {
    const SceneParams p = scene_params(spec, scene);
    const int s = spec.size;
    Tensor depth({1, s, s});
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            depth.at3(0, y, x) = depth_at(p, (x + 0.5) / s, (y + 0.5) / s);
        }
    }
    return depth;
}

Tensor render_image(const FixtureSpec& spec, int scene, const data::Setting& setting) {
    const SceneParams p = scene_params(spec, scene);
    const int s = spec.size;
    const Tensor depth = render_depth(spec, scene);

    const double theta = setting.azimuth * (2.0 * 3.14159265358979323846 / data::kAzimuthCount);
    double lx = std::cos(theta);
    double ly = std::sin(theta);
    double lz = 0.55;
    const double ln = std::sqrt(lx * lx + ly * ly + lz * lz);
    lx /= ln;
    ly /= ln;
    lz /= ln;

    double tint[3];
    light_tint(setting.temperature, tint);

    Tensor img({3, s, s});
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            // Shade from the depth map's own surface normals so geometry and
            // appearance stay physically consistent.
            const int xm = std::max(x - 1, 0);
            const int xp = std::min(x + 1, s - 1);
            const int ym = std::max(y - 1, 0);
            const int yp = std::min(y + 1, s - 1);
            const double gx = (depth.at3(0, y, xp) - depth.at3(0, y, xm)) / (xp - xm) * s;
            const double gy = (depth.at3(0, yp, x) - depth.at3(0, ym, x)) / (yp - ym) * s;
            double nx = -gx;
            double ny = -gy;
            double nz = 1.0;
            const double nn = std::sqrt(nx * nx + ny * ny + nz * nz);
            nx /= nn;
            ny /= nn;
            nz /= nn;
            const double lambert = std::max(0.0, nx * lx + ny * ly + nz * lz);
            const double shade = 0.25 + 0.75 * lambert;

            const double u = (x + 0.5) / s;
            const double v = (y + 0.5) / s;
            const double du = u - p.cx;
            const double dv = v - p.cy;
            const bool in_blob = du * du + dv * dv < p.radius * p.radius;
            const double ramp = 0.55 + 0.45 * (0.5 + 0.5 * (p.grad_x * (u - 0.5) + p.grad_y * (v - 0.5)) * 2.0);
            for (int c = 0; c < 3; ++c) {
                const double albedo = in_blob ? p.blob_albedo[c] : p.bg_albedo[c] * ramp;
                img.at3(c, y, x) = std::clamp(albedo * tint[c] * shade, 0.0, 1.0);
            }
        }
    }
    return img;
}

void write_fixture_tree(const std::filesystem::path& out_dir, const FixtureSpec& spec) {
    if (spec.scenes < 1 || spec.settings < 1 || spec.settings > data::kSettingsPerScene ||
        spec.size < 2) {
        throw ConfigError("fixtures: need scenes >= 1, 1 <= settings <= 40, size >= 2");
    }
    std::filesystem::create_directories(out_dir);
    for (int scene = 0; scene < spec.scenes; ++scene) {
        png::write_tensor_png(out_dir / data::depth_filename(scene), render_depth(spec, scene),
                              16);
        for (int k = 0; k < spec.settings; ++k) {
            const data::Setting setting = setting_for(k);
            png::write_tensor_png(out_dir / data::image_filename(scene, setting),
                                  render_image(spec, scene, setting), 8);
        }
    }
}

} // namespace s3net::fixtures
