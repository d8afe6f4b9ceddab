#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "forge/image.hpp"
#include "forge/png_io.hpp"

namespace forge::plot {

// 5x7 bitmap glyphs for chart labels; lowercase maps onto uppercase.
namespace font {

inline const std::map<char, std::array<std::uint8_t, 7>>& glyphs() {
    static const std::map<char, std::array<std::uint8_t, 7>> table = {
        {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}}, {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
        {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}}, {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
        {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}}, {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
        {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}}, {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}}, {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
        {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}}, {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
        {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}}, {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
        {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}}, {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
        {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}}, {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
        {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
        {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}}, {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
        {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}}, {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
        {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}}, {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1b, 0x11}}, {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}}, {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
        {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
        {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}}, {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
        {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}}, {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}}, {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return table;
}

}  // namespace font

struct Rgb {
    double r, g, b;
};

inline constexpr Rgb kBlack{0.1, 0.1, 0.1};
inline constexpr Rgb kBlue{0.12, 0.35, 0.72};
inline constexpr Rgb kOrange{0.9, 0.5, 0.1};
inline constexpr Rgb kGray{0.75, 0.75, 0.75};

class Canvas {
public:
    Canvas(int w, int h) : img_(w, h, 1.0) {}

    Image& image() { return img_; }

    void pixel(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
        img_.set_pixel(y, x, c.r, c.g, c.b);
    }

    void line(int x0, int y0, int x1, int y1, Rgb c) {
        int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            pixel(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
            for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) pixel(x, y, c);
    }

    void text(int x, int y, const std::string& s, Rgb c) {
        int cx = x;
        for (char raw : s) {
            char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
            auto it = font::glyphs().find(ch);
            if (it == font::glyphs().end()) it = font::glyphs().find(' ');
            for (int ry = 0; ry < 7; ++ry)
                for (int rx = 0; rx < 5; ++rx)
                    if (it->second[static_cast<std::size_t>(ry)] & (1 << (4 - rx))) pixel(cx + rx, y + ry, c);
            cx += 6;
        }
    }

    void save(const std::filesystem::path& path) const { png::write_file(img_, path); }

private:
    Image img_;
};

// One-series line chart with axes and min/max labels.
inline void line_chart(const std::filesystem::path& path, const std::string& title,
                       const std::vector<double>& ys, const std::string& x_label) {
    const int W = 480, H = 300, ml = 52, mr = 16, mt = 28, mb = 34;
    Canvas c(W, H);
    c.text(ml, 8, title, kBlack);
    c.line(ml, H - mb, W - mr, H - mb, kBlack);
    c.line(ml, mt, ml, H - mb, kBlack);
    c.text(W / 2 - static_cast<int>(x_label.size()) * 3, H - 12, x_label, kBlack);
    if (ys.empty()) {
        c.save(path);
        return;
    }
    double lo = *std::min_element(ys.begin(), ys.end());
    double hi = *std::max_element(ys.begin(), ys.end());
    if (hi - lo < 1e-12) hi = lo + 1.0;
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", v);
        return std::string(buf);
    };
    c.text(2, mt - 3, fmt(hi), kBlack);
    c.text(2, H - mb - 4, fmt(lo), kBlack);
    int px = -1, py = -1;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        int x = ml + static_cast<int>((W - ml - mr - 1) * (ys.size() == 1 ? 0.5 : static_cast<double>(i) / (ys.size() - 1)));
        int y = H - mb - static_cast<int>((H - mt - mb - 1) * (ys[i] - lo) / (hi - lo));
        if (px >= 0) c.line(px, py, x, y, kBlue);
        px = x;
        py = y;
    }
    c.save(path);
}

// Labeled vertical bars in [0, max].
inline void bar_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::pair<std::string, double>>& bars) {
    const int W = 480, H = 300, ml = 52, mr = 16, mt = 28, mb = 48;
    Canvas c(W, H);
    c.text(ml, 8, title, kBlack);
    c.line(ml, H - mb, W - mr, H - mb, kBlack);
    c.line(ml, mt, ml, H - mb, kBlack);
    if (bars.empty()) {
        c.save(path);
        return;
    }
    double hi = 0.0;
    for (const auto& [label, v] : bars) hi = std::max(hi, v);
    if (hi <= 0.0) hi = 1.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", hi);
    c.text(2, mt - 3, buf, kBlack);
    c.text(2, H - mb - 4, "0", kBlack);
    int n = static_cast<int>(bars.size());
    int span = (W - ml - mr) / n;
    for (int i = 0; i < n; ++i) {
        int x0 = ml + i * span + span / 6;
        int x1 = ml + (i + 1) * span - span / 6;
        int y = H - mb - static_cast<int>((H - mt - mb - 1) * bars[static_cast<std::size_t>(i)].second / hi);
        c.fill_rect(x0, y, x1, H - mb - 1, i % 2 == 0 ? kBlue : kOrange);
        std::string label = bars[static_cast<std::size_t>(i)].first.substr(0, static_cast<std::size_t>(span / 6));
        c.text(x0, H - mb + 6, label, kBlack);
    }
    c.save(path);
}

}  // namespace forge::plot
