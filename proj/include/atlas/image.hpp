#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace atlas {

/// Planar real-valued image: values[c][y][x] flattened channel-major.
struct SceneImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> values;

    static SceneImage make(int w, int h, int c, float fill = 0.0f) {
        SceneImage im;
        im.width = w;
        im.height = h;
        im.channels = c;
        im.values.assign(static_cast<std::size_t>(w) * h * c, fill);
        return im;
    }

    float& at(int c, int y, int x) {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
};

/// Raw tensor container: 16-byte header (magic "ATLG", u32 width, u32
/// height, u32 channels, little-endian), then width*height*channels f32
/// values, planar, little-endian.
void write_atlg(const SceneImage& im, const std::string& path);
SceneImage read_atlg(const std::string& path);

}  // namespace atlas
