#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "forge/error.hpp"

namespace forge {

// RGB image, values in [0,1], row-major HxWx3.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(int w, int h, double fill = 1.0) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

    double& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    void set_pixel(int y, int x, double r, double g, double b) {
        at(y, x, 0) = r;
        at(y, x, 1) = g;
        at(y, x, 2) = b;
    }

    static std::uint8_t to_u8(double v) {
        double c = std::clamp(v, 0.0, 1.0);
        return static_cast<std::uint8_t>(std::lround(c * 255.0));
    }

    std::vector<std::uint8_t> to_bytes() const {
        std::vector<std::uint8_t> out(rgb.size());
        for (std::size_t i = 0; i < rgb.size(); ++i) out[i] = to_u8(rgb[i]);
        return out;
    }

    static Image from_bytes(int w, int h, const std::vector<std::uint8_t>& bytes) {
        if (bytes.size() != static_cast<std::size_t>(w) * h * 3) throw ValidationError("pixel buffer size mismatch");
        Image img(w, h, 0.0);
        for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0;
        return img;
    }
};

}  // namespace forge
