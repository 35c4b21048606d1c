#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/png_io.hpp"

namespace ctxseg::plot {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

namespace detail {

/// 5x7 glyphs, one byte per row, bit 4 = leftmost column.
inline const std::array<std::uint8_t, 7>* glyph(char c) {
  static const std::array<std::uint8_t, 7> font[] = {
      /*A*/ {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
      /*B*/ {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},
      /*C*/ {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},
      /*D*/ {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E},
      /*E*/ {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},
      /*F*/ {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},
      /*G*/ {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},
      /*H*/ {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
      /*I*/ {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},
      /*J*/ {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},
      /*K*/ {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},
      /*L*/ {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},
      /*M*/ {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},
      /*N*/ {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11},
      /*O*/ {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},
      /*P*/ {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},
      /*Q*/ {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},
      /*R*/ {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},
      /*S*/ {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},
      /*T*/ {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},
      /*U*/ {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},
      /*V*/ {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},
      /*W*/ {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},
      /*X*/ {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},
      /*Y*/ {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04},
      /*Z*/ {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},
      /*0*/ {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},
      /*1*/ {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
      /*2*/ {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},
      /*3*/ {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
      /*4*/ {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},
      /*5*/ {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
      /*6*/ {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},
      /*7*/ {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
      /*8*/ {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},
      /*9*/ {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},
      /*.*/ {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C},
      /*-*/ {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00},
      /*_*/ {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F},
      /*:*/ {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00},
      /*(*/ {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02},
      /*)*/ {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08},
      /*=*/ {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00},
      /*/*/ {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10},
      /*%*/ {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13},
      /*+*/ {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00},
  };
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  if (c >= 'A' && c <= 'Z') return &font[c - 'A'];
  if (c >= '0' && c <= '9') return &font[26 + (c - '0')];
  switch (c) {
    case '.': return &font[36];
    case '-': return &font[37];
    case '_': return &font[38];
    case ':': return &font[39];
    case '(': return &font[40];
    case ')': return &font[41];
    case '=': return &font[42];
    case '/': return &font[43];
    case '%': return &font[44];
    case '+': return &font[45];
    default: return nullptr;  // unknown glyphs render as space
  }
}

}  // namespace detail

class Canvas {
 public:
  Canvas(int h, int w, Rgb bg = {255, 255, 255}) : h_(h), w_(w), px_(static_cast<std::size_t>(h) * w * 3) {
    fill_rect(0, 0, h, w, bg);
  }

  int height() const { return h_; }
  int width() const { return w_; }

  void set(int y, int x, Rgb c) {
    if (y < 0 || y >= h_ || x < 0 || x >= w_) return;
    std::size_t i = (static_cast<std::size_t>(y) * w_ + x) * 3;
    px_[i] = c.r;
    px_[i + 1] = c.g;
    px_[i + 2] = c.b;
  }

  void fill_rect(int y, int x, int hh, int ww, Rgb c) {
    for (int iy = y; iy < y + hh; ++iy)
      for (int ix = x; ix < x + ww; ++ix) set(iy, ix, c);
  }

  void hline(int y, int x0, int x1, Rgb c) {
    for (int x = x0; x <= x1; ++x) set(y, x, c);
  }

  /// 5x7 font scaled by an integer factor; 1 scaled column between glyphs.
  void text(int y, int x, const std::string& s, Rgb c, int scale = 1) {
    int cx = x;
    for (char ch : s) {
      if (const auto* g = detail::glyph(ch)) {
        for (int ry = 0; ry < 7; ++ry)
          for (int rx = 0; rx < 5; ++rx)
            if ((*g)[static_cast<std::size_t>(ry)] & (1u << (4 - rx)))
              fill_rect(y + ry * scale, cx + rx * scale, scale, scale, c);
      }
      cx += 6 * scale;
    }
  }

  static int text_width(const std::string& s, int scale = 1) {
    return static_cast<int>(s.size()) * 6 * scale;
  }

  void save(const std::filesystem::path& path) const {
    write_png_rgb8(path, h_, w_, px_);
  }

 private:
  int h_, w_;
  std::vector<std::uint8_t> px_;
};

/// Vertical bars on a [0, 1] axis with labeled values.
inline void bar_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::string>& labels,
                      const std::vector<double>& values) {
  if (labels.size() != values.size()) throw DataError("bar_chart: labels/values mismatch");
  const int bar_w = 48, gap = 26, axis_x = 52;
  const int plot_h = 160, top = 34, bottom_pad = 26;
  int n = static_cast<int>(values.size());
  int w = axis_x + gap + n * (bar_w + gap) + 16;
  int h = top + plot_h + bottom_pad;
  Canvas canvas(h, w);

  canvas.text(8, 8, title, {30, 30, 30});
  for (int tick = 0; tick <= 4; ++tick) {
    double v = tick * 0.25;
    int y = top + plot_h - static_cast<int>(v * plot_h + 0.5);
    canvas.hline(y, axis_x, w - 8, {220, 220, 220});
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    canvas.text(y - 3, 8, buf, {90, 90, 90});
  }
  canvas.hline(top + plot_h, axis_x, w - 8, {60, 60, 60});

  for (int i = 0; i < n; ++i) {
    double v = std::min(1.0, std::max(0.0, values[static_cast<std::size_t>(i)]));
    int bh = static_cast<int>(v * plot_h + 0.5);
    int x = axis_x + gap + i * (bar_w + gap);
    canvas.fill_rect(top + plot_h - bh, x, bh, bar_w, {70, 110, 180});
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", values[static_cast<std::size_t>(i)]);
    int tw = Canvas::text_width(buf);
    canvas.text(top + plot_h - bh - 10, x + (bar_w - tw) / 2, buf, {30, 30, 30});
    const std::string& lab = labels[static_cast<std::size_t>(i)];
    int lw = Canvas::text_width(lab);
    canvas.text(top + plot_h + 8, x + (bar_w - lw) / 2, lab, {30, 30, 30});
  }
  canvas.save(path);
}

}  // namespace ctxseg::plot
