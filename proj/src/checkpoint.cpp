#include "s3net/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace s3net::checkpoint {

namespace {

constexpr char kMagic[8] = {'S', '3', 'N', 'E', 'T', 'A', 'R', '\0'};

void put_u32_le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    }
    return v;
}

std::uint64_t get_u64_le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return v;
}

void put_doubles_le(std::ostream& out, const double* data, std::int64_t count) {
    std::vector<unsigned char> buf(static_cast<std::size_t>(count) * 8);
    for (std::int64_t i = 0; i < count; ++i) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(data[i]);
        for (int j = 0; j < 8; ++j) {
            buf[static_cast<std::size_t>(i) * 8 + j] =
                static_cast<unsigned char>((bits >> (8 * j)) & 0xFF);
        }
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
}

void get_doubles_le(std::istream& in, double* data, std::int64_t count) {
    std::vector<unsigned char> buf(static_cast<std::size_t>(count) * 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (std::int64_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int j = 0; j < 8; ++j) {
            bits |= static_cast<std::uint64_t>(buf[static_cast<std::size_t>(i) * 8 + j])
                    << (8 * j);
        }
        data[i] = std::bit_cast<double>(bits);
    }
}

} // namespace

void save_archive(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["meta"] = archive.meta;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, tensor] : archive.tensors) {
        index.push_back({{"name", name}, {"shape", tensor.shape()}});
    }
    header["tensors"] = index;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("checkpoint: cannot open " + path.string() + " for writing");
    }
    out.write(kMagic, 8);
    put_u32_le(out, kFormatVersion);
    put_u64_le(out, header_str.size());
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : archive.tensors) {
        put_doubles_le(out, tensor.data(), tensor.size());
    }
    if (!out) {
        throw IoError("checkpoint: short write to " + path.string());
    }
}

Archive load_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("checkpoint: cannot open " + path.string());
    }
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw IoError("checkpoint: " + path.string() + " is not an archive");
    }
    const std::uint32_t version = get_u32_le(in);
    if (version != kFormatVersion) {
        throw IoError("checkpoint: unsupported format version " + std::to_string(version) +
                      " in " + path.string());
    }
    const std::uint64_t header_len = get_u64_le(in);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw IoError("checkpoint: truncated header in " + path.string());
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: bad header JSON in " + path.string() + ": " + e.what());
    }

    Archive archive;
    archive.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        get_doubles_le(in, t.data(), t.size());
        if (!in) {
            throw IoError("checkpoint: truncated tensor data for '" + name + "' in " +
                          path.string());
        }
        archive.tensors.emplace(name, std::move(t));
    }
    return archive;
}

} // namespace s3net::checkpoint
