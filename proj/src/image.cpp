#include "gssplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gssplat/core.hpp"

namespace gssplat {

namespace {

uint8_t to_u8(float v) {
    float c = std::clamp(v, 0.f, 1.f);
    return static_cast<uint8_t>(std::lround(c * 255.f));
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open for reading: " + path);
    return f;
}

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        int c = in.get();
        if (c == EOF) break;
        if (c == '#') {
            while (in && in.get() != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw data_error("unexpected end of header");
    return tok;
}

}  // namespace

void write_ppm(const std::string& path, const ImageF& img) {
    if (img.channels != 3) throw data_error("PPM requires 3 channels");
    auto f = open_out(path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) row[x * 3 + c] = to_u8(img.at(y, x, c));
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!f) throw data_error("write failed: " + path);
}

ImageF read_ppm(const std::string& path) {
    auto f = open_in(path);
    if (next_token(f) != "P6") throw data_error("not a binary PPM: " + path);
    int w = std::stoi(next_token(f));
    int h = std::stoi(next_token(f));
    int maxval = std::stoi(next_token(f));
    if (w <= 0 || h <= 0 || maxval != 255) throw data_error("unsupported PPM header: " + path);
    ImageF img(h, w, 3);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), row.size());
        if (!f) throw data_error("truncated PPM: " + path);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x * 3 + c] / 255.f;
    }
    return img;
}

void write_pgm(const std::string& path, const LabelMap& labels) {
    auto f = open_out(path);
    f << "P5\n" << labels.width << " " << labels.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(labels.data.data()), labels.data.size());
    if (!f) throw data_error("write failed: " + path);
}

LabelMap read_pgm(const std::string& path) {
    auto f = open_in(path);
    if (next_token(f) != "P5") throw data_error("not a binary PGM: " + path);
    int w = std::stoi(next_token(f));
    int h = std::stoi(next_token(f));
    int maxval = std::stoi(next_token(f));
    if (w <= 0 || h <= 0 || maxval != 255) throw data_error("unsupported PGM header: " + path);
    LabelMap labels(h, w);
    f.read(reinterpret_cast<char*>(labels.data.data()), labels.data.size());
    if (!f) throw data_error("truncated PGM: " + path);
    return labels;
}

void write_pfm(const std::string& path, const ImageF& img) {
    if (img.channels != 1 && img.channels != 3) throw data_error("PFM supports 1 or 3 channels");
    auto f = open_out(path);
    f << (img.channels == 3 ? "PF" : "Pf") << "\n" << img.width << " " << img.height << "\n-1.0\n";
    size_t rowlen = static_cast<size_t>(img.width) * img.channels;
    for (int y = img.height - 1; y >= 0; --y) {
        f.write(reinterpret_cast<const char*>(&img.data[static_cast<size_t>(y) * rowlen]),
                rowlen * sizeof(float));
    }
    if (!f) throw data_error("write failed: " + path);
}

ImageF read_pfm(const std::string& path) {
    auto f = open_in(path);
    std::string magic = next_token(f);
    int channels;
    if (magic == "PF")
        channels = 3;
    else if (magic == "Pf")
        channels = 1;
    else
        throw data_error("not a PFM: " + path);
    int w = std::stoi(next_token(f));
    int h = std::stoi(next_token(f));
    float scale = std::stof(next_token(f));
    if (w <= 0 || h <= 0) throw data_error("bad PFM dims: " + path);
    if (scale >= 0.f) throw data_error("big-endian PFM not supported: " + path);
    ImageF img(h, w, channels);
    size_t rowlen = static_cast<size_t>(w) * channels;
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(&img.data[static_cast<size_t>(y) * rowlen]), rowlen * sizeof(float));
        if (!f) throw data_error("truncated PFM: " + path);
    }
    return img;
}

}  // namespace gssplat
