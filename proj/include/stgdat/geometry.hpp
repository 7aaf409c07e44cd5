#pragma once

#include <cmath>
#include <vector>

namespace stgdat {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  // Rotation by angle a (counterclockwise).
  Vec2 rotated(double a) const {
    const double c = std::cos(a), s = std::sin(a);
    return {c * x - s * y, s * x + c * y};
  }
};

inline double distance(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

// Wraps an angle to [-pi, pi].
inline double wrap_angle(double a) { return std::remainder(a, 2.0 * kPi); }

// Shortest-arc interpolation between two headings, frac in [0, 1].
inline double interp_angle(double a, double b, double frac) {
  return a + frac * wrap_angle(b - a);
}

// One agent's predicted or true positions over consecutive future steps.
using Track = std::vector<Vec2>;
// One position series per agent, agents in scene order.
using TrackSet = std::vector<Track>;

}  // namespace stgdat
