#include "atlas/image.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace atlas {

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_atlg(const SceneImage& im, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open image file for writing: " + path);
    out.write("ATLG", 4);
    put_u32(out, static_cast<std::uint32_t>(im.width));
    put_u32(out, static_cast<std::uint32_t>(im.height));
    put_u32(out, static_cast<std::uint32_t>(im.channels));
    // f32 values are IEEE-754 little-endian on every supported target
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(im.values.data()),
              static_cast<std::streamsize>(im.values.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write failure: " + path);
}

SceneImage read_atlg(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ATLG", 4) != 0) {
        throw std::runtime_error(path + ": bad magic, expected ATLG");
    }
    SceneImage im;
    im.width = static_cast<int>(get_u32(in));
    im.height = static_cast<int>(get_u32(in));
    im.channels = static_cast<int>(get_u32(in));
    if (im.width <= 0 || im.height <= 0 || im.channels <= 0) {
        throw std::runtime_error(path + ": bad header dimensions");
    }
    im.values.resize(static_cast<std::size_t>(im.width) * im.height * im.channels);
    in.read(reinterpret_cast<char*>(im.values.data()),
            static_cast<std::streamsize>(im.values.size() * sizeof(float)));
    if (!in) throw std::runtime_error(path + ": truncated data section");
    return im;
}

}  // namespace atlas
