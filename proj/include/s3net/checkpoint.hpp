#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "s3net/tensor.hpp"

namespace s3net::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

// Single-file archive: a JSON header (format version, free-form metadata,
// tensor index) followed by the tensors' raw float64 data, little-endian,
// concatenated in index order. Used for model checkpoints, optimizer state
// and feature-extractor weights alike.
struct Archive {
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;
};

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

} // namespace s3net::checkpoint
