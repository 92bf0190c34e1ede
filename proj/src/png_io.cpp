#include "s3net/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace s3net::png {

namespace {

constexpr unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t read_u32_be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>(v & 0xFF));
}

int paeth_predictor(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) {
        return a;
    }
    if (pb <= pc) {
        return b;
    }
    return c;
}

void unfilter_rows(std::vector<unsigned char>& raw, int height, std::size_t rowbytes, int bpp,
                   const std::filesystem::path& path) {
    std::vector<unsigned char> prev(rowbytes, 0);
    for (int y = 0; y < height; ++y) {
        unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (rowbytes + 1);
        const int filter = row[0];
        unsigned char* cur = row + 1;
        switch (filter) {
        case 0:
            break;
        case 1:
            for (std::size_t i = static_cast<std::size_t>(bpp); i < rowbytes; ++i) {
                cur[i] = static_cast<unsigned char>(cur[i] + cur[i - bpp]);
            }
            break;
        case 2:
            for (std::size_t i = 0; i < rowbytes; ++i) {
                cur[i] = static_cast<unsigned char>(cur[i] + prev[i]);
            }
            break;
        case 3:
            for (std::size_t i = 0; i < rowbytes; ++i) {
                const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                cur[i] = static_cast<unsigned char>(cur[i] + ((left + prev[i]) >> 1));
            }
            break;
        case 4:
            for (std::size_t i = 0; i < rowbytes; ++i) {
                const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                const int upleft = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
                cur[i] = static_cast<unsigned char>(cur[i] + paeth_predictor(left, prev[i], upleft));
            }
            break;
        default:
            throw IoError("png: unknown filter type " + std::to_string(filter) + " in " +
                          path.string());
        }
        std::memcpy(prev.data(), cur, rowbytes);
    }
}

} // namespace

PngImage read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("png: cannot open " + path.string());
    }
    std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0) {
        throw IoError("png: " + path.string() + " is not a PNG file");
    }

    std::uint32_t width = 0;
    std::uint32_t height = 0;
    int bit_depth = 0;
    int color_type = -1;
    std::vector<unsigned char> idat;
    bool saw_ihdr = false;
    bool saw_iend = false;

    std::size_t pos = 8;
    while (pos + 8 <= file.size()) {
        const std::uint32_t len = read_u32_be(file.data() + pos);
        if (pos + 12 + len > file.size()) {
            throw IoError("png: truncated chunk in " + path.string());
        }
        const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
        const unsigned char* data = file.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) {
                throw IoError("png: bad IHDR in " + path.string());
            }
            width = read_u32_be(data);
            height = read_u32_be(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            if (data[12] != 0) {
                throw IoError("png: interlaced images are not supported: " + path.string());
            }
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty()) {
        throw IoError("png: missing required chunks in " + path.string());
    }
    if (width == 0 || height == 0) {
        throw IoError("png: empty image " + path.string());
    }
    if (bit_depth != 8 && bit_depth != 16) {
        throw IoError("png: unsupported bit depth " + std::to_string(bit_depth) + " in " +
                      path.string());
    }
    int file_channels = 0;
    switch (color_type) {
    case 0: file_channels = 1; break;
    case 2: file_channels = 3; break;
    case 4: file_channels = 2; break;
    case 6: file_channels = 4; break;
    default:
        throw IoError("png: unsupported color type " + std::to_string(color_type) + " in " +
                      path.string());
    }

    const int bytes_per_sample = bit_depth / 8;
    const std::size_t rowbytes =
        static_cast<std::size_t>(width) * file_channels * bytes_per_sample;
    const std::size_t raw_size = static_cast<std::size_t>(height) * (rowbytes + 1);
    std::vector<unsigned char> raw(raw_size);
    uLongf dest_len = static_cast<uLongf>(raw_size);
    const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || dest_len != raw_size) {
        throw IoError("png: zlib inflate failed (" + std::to_string(zrc) + ") for " +
                      path.string());
    }
    const int bpp = file_channels * bytes_per_sample;
    unfilter_rows(raw, static_cast<int>(height), rowbytes, bpp, path);

    PngImage img;
    img.width = static_cast<int>(width);
    img.height = static_cast<int>(height);
    img.channels = (file_channels >= 3) ? 3 : 1;
    img.bit_depth = bit_depth;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);

    for (std::uint32_t y = 0; y < height; ++y) {
        const unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (rowbytes + 1) + 1;
        for (std::uint32_t x = 0; x < width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                const unsigned char* sample = row + (static_cast<std::size_t>(x) * file_channels + c) * bytes_per_sample;
                std::uint16_t v;
                if (bytes_per_sample == 1) {
                    v = sample[0];
                } else {
                    v = static_cast<std::uint16_t>((sample[0] << 8) | sample[1]);
                }
                img.pixels[(static_cast<std::size_t>(y) * width + x) * img.channels + c] = v;
            }
        }
    }
    return img;
}

void write_png(const std::filesystem::path& path, const PngImage& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw IoError("png: can only write 1- or 3-channel images, got " +
                      std::to_string(image.channels));
    }
    if (image.bit_depth != 8 && image.bit_depth != 16) {
        throw IoError("png: can only write bit depth 8 or 16");
    }
    if (image.pixels.size() !=
        static_cast<std::size_t>(image.width) * image.height * image.channels) {
        throw IoError("png: pixel buffer size does not match dimensions");
    }

    const int bytes_per_sample = image.bit_depth / 8;
    const std::size_t rowbytes =
        static_cast<std::size_t>(image.width) * image.channels * bytes_per_sample;
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(image.height) * (rowbytes + 1));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0); // filter: none
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                const std::uint16_t v =
                    image.pixels[(static_cast<std::size_t>(y) * image.width + x) * image.channels +
                                 c];
                if (bytes_per_sample == 1) {
                    raw.push_back(static_cast<unsigned char>(v & 0xFF));
                } else {
                    raw.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
                    raw.push_back(static_cast<unsigned char>(v & 0xFF));
                }
            }
        }
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    const int zrc =
        compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6);
    if (zrc != Z_OK) {
        throw IoError("png: zlib deflate failed (" + std::to_string(zrc) + ")");
    }
    compressed.resize(bound);

    std::vector<unsigned char> out;
    out.insert(out.end(), kSignature, kSignature + 8);
    auto emit_chunk = [&out](const char* type, const std::vector<unsigned char>& data) {
        append_u32_be(out, static_cast<std::uint32_t>(data.size()));
        const std::size_t type_pos = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), data.begin(), data.end());
        const uLong crc =
            crc32(0, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
        append_u32_be(out, static_cast<std::uint32_t>(crc));
    };

    std::vector<unsigned char> ihdr;
    append_u32_be(ihdr, static_cast<std::uint32_t>(image.width));
    append_u32_be(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.push_back(static_cast<unsigned char>(image.bit_depth));
    ihdr.push_back(image.channels == 1 ? 0 : 2);
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    emit_chunk("IHDR", ihdr);
    emit_chunk("IDAT", compressed);
    emit_chunk("IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("png: cannot open " + path.string() + " for writing");
    }
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) {
        throw IoError("png: short write to " + path.string());
    }
}

Tensor to_tensor(const PngImage& image) {
    const double maxval = image.bit_depth == 16 ? 65535.0 : 255.0;
    Tensor t({image.channels, image.height, image.width});
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) {
                t.at3(c, y, x) =
                    image.pixels[(static_cast<std::size_t>(y) * image.width + x) * image.channels +
                                 c] /
                    maxval;
            }
        }
    }
    return t;
}

PngImage from_tensor(const Tensor& t, int bit_depth) {
    if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
        throw ShapeError("png: expected 1 x H x W or 3 x H x W tensor, got " + t.shape_str());
    }
    PngImage img;
    img.channels = t.dim(0);
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.bit_depth = bit_depth;
    const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                const double v = std::clamp(t.at3(c, y, x), 0.0, 1.0);
                img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
                    static_cast<std::uint16_t>(std::lround(v * maxval));
            }
        }
    }
    return img;
}

void write_tensor_png(const std::filesystem::path& path, const Tensor& t, int bit_depth) {
    write_png(path, from_tensor(t, bit_depth));
}

} // namespace s3net::png
