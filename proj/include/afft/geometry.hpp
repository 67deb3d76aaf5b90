#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

namespace afft {

/// Integer pixel location, x to the right, y down.
struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Sub-pixel location; pixel centers sit on integer coordinates.
struct Point2d {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2d&, const Point2d&) = default;
};

/// Rounds to the nearest pixel with halves going up, so [-0.5, w-0.5) lands in [0, w-1].
inline int round_pixel(double v) { return static_cast<int>(std::floor(v + 0.5)); }

inline Pixel to_pixel(const Point2d& p) { return {round_pixel(p.x), round_pixel(p.y)}; }
inline Point2d to_point(const Pixel& p) { return {static_cast<double>(p.x), static_cast<double>(p.y)}; }

struct Size {
  int width = 0;
  int height = 0;
  bool contains(const Pixel& p) const { return p.x >= 0 && p.y >= 0 && p.x < width && p.y < height; }
  friend bool operator==(const Size&, const Size&) = default;
};

/// Axis-aligned pixel rectangle [x, x+w) x [y, y+h).
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool empty() const { return w <= 0 || h <= 0; }
  bool contains(const Pixel& p) const { return p.x >= x && p.y >= y && p.x < x + w && p.y < y + h; }
  bool inside(const Size& s) const { return x >= 0 && y >= 0 && w >= 0 && h >= 0 && x + w <= s.width && y + h <= s.height; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Intersection of two rectangles; an empty rectangle (w or h == 0) when disjoint.
inline Rect intersect(const Rect& a, const Rect& b) {
  const int x0 = a.x > b.x ? a.x : b.x;
  const int y0 = a.y > b.y ? a.y : b.y;
  const int x1 = (a.x + a.w) < (b.x + b.w) ? (a.x + a.w) : (b.x + b.w);
  const int y1 = (a.y + a.h) < (b.y + b.h) ? (a.y + a.h) : (b.y + b.h);
  if (x1 <= x0 || y1 <= y0) return Rect{x0, y0, 0, 0};
  return Rect{x0, y0, x1 - x0, y1 - y0};
}

}  // namespace afft
