#pragma once

#include <cmath>
#include <numbers>

namespace crowdnav {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2() = default;
  constexpr Vec2(double x_, double y_) : x(x_), y(y_) {}

  constexpr Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  constexpr Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
  constexpr bool operator==(const Vec2&) const = default;

  double norm() const { return std::hypot(x, y); }
  constexpr double norm_sq() const { return x * x + y * y; }
};

constexpr Vec2 operator*(double s, const Vec2& v) { return v * s; }
constexpr double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
// z-component of the 3-D cross product; positive when b is counter-clockwise of a.
constexpr double det(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

inline Vec2 normalized(const Vec2& v) {
  const double n = v.norm();
  return n > 0.0 ? v / n : Vec2{};
}

inline Vec2 rotated(const Vec2& v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

inline Vec2 from_polar(double length, double angle) {
  return {length * std::cos(angle), length * std::sin(angle)};
}

/// Maps any angle to [0, 2*pi).
inline double wrap_angle(double angle) {
  double a = std::fmod(angle, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;  // -tiny + 2*pi rounds up to 2*pi
  return a;
}

/// Maps any angle to (-pi, pi].
inline double wrap_signed_angle(double angle) {
  double a = wrap_angle(angle);
  if (a > kPi) a -= kTwoPi;
  return a;
}

}  // namespace crowdnav
