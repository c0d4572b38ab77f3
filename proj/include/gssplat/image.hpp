#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gssplat {

// Row-major H x W x C float image, values typically in [0,1] for color.
struct ImageF {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    ImageF() = default;
    ImageF(int h, int w, int c, float fill = 0.f)
        : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    size_t size() const { return data.size(); }
};

// 8-bit label map; 255 is the ignore index.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> data;

    LabelMap() = default;
    LabelMap(int h, int w, uint8_t fill = 255) : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Binary PPM (P6), 3-channel 8-bit. Values clamped to [0,1] then quantized.
void write_ppm(const std::string& path, const ImageF& img);
ImageF read_ppm(const std::string& path);

// Binary PGM (P5), single channel 8-bit; used for label maps.
void write_pgm(const std::string& path, const LabelMap& labels);
LabelMap read_pgm(const std::string& path);

// PFM, little-endian (negative scale). 1-channel "Pf" or 3-channel "PF".
// Rows are stored bottom-up per the format; the ImageF is top-down.
void write_pfm(const std::string& path, const ImageF& img);
ImageF read_pfm(const std::string& path);

}  // namespace gssplat
