#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace reidfuse {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
  bool operator==(const Vec2&) const = default;

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

/// Counterclockwise rotation in the mathematical sense (x right, y up).
inline Vec2 rotate(Vec2 v, double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

using Polygon = std::vector<Vec2>;

/// Axis-aligned pixel rectangle: top-left corner plus extent.
struct Rect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  Vec2 center() const { return {x + w / 2.0, y + h / 2.0}; }
  double diagonal() const { return std::hypot(w, h); }
  bool operator==(const Rect&) const = default;
};

struct GeometryParams {
  double corner_offset_deg = 70.0;
  std::array<double, 2> cut_fractions{0.3, 0.7};
  // Two 16-px tokens of a 14-token (224 px) slice input.
  double overlap_fraction = 2.0 / 14.0;

  void validate() const;
  bool operator==(const GeometryParams&) const = default;
};

enum class QuarterKind { Q1, Q2 };

const char* to_string(QuarterKind kind);

/// Shoelace area; positive for counterclockwise vertex order.
double signed_area(const Polygon& polygon);
Vec2 polygon_centroid(const Polygon& polygon);

/// Andrew's monotone chain. Counterclockwise, starting from the vertex with the
/// lowest (x, y), collinear points dropped.
Polygon convex_hull(const Polygon& points);

/// Unit vector from the tail-fin box center toward the head box center.
Vec2 swimming_direction(const Rect& head, const Rect& tail);

struct QuarterCorners {
  // Support points for: direction rotated by +offset, direction rotated by
  // -offset, reversed direction rotated by +offset, reversed by -offset.
  std::array<Vec2, 4> points;
  bool duplicate_corner = false;
};

QuarterCorners quarter_corners(const Polygon& mask, Vec2 direction, const GeometryParams& params);

struct Segment {
  Vec2 a;
  Vec2 b;
};

/// Lateral-line endpoints of the requested quarter. The Q1 endpoints are the
/// two Q1 corners with the smallest projection on unit(c1 - c2); the Q2
/// endpoints are the two Q2 corners with the largest.
Segment lateral_segment(const QuarterCorners& q1, const QuarterCorners& q2, Vec2 q1_centroid, Vec2 q2_centroid,
                        QuarterKind kind);

/// p' = R(angle) p + translation.
struct RigidTransform {
  double angle = 0.0;
  Vec2 translation;

  Vec2 apply(Vec2 p) const { return rotate(p, angle) + translation; }
  RigidTransform inverse() const { return {-angle, -rotate(translation, -angle)}; }
  bool is_identity(double eps = 0.0) const {
    return std::abs(angle) <= eps && std::abs(translation.x) <= eps && std::abs(translation.y) <= eps;
  }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct SliceLayout {
  QuarterKind quarter = QuarterKind::Q1;
  // Image -> rotated frame: rotate by `angle` about `pivot`, pivot lands on the origin.
  double angle = 0.0;
  Vec2 pivot;
  Vec2 posterior;  // maps to x = 0
  Vec2 anterior;   // maps to x = length
  double length = 0.0;
  std::array<Interval, 3> slices;
  // Extent of the quarter mask perpendicular to the lateral line.
  double y_lo = 0.0;
  double y_hi = 0.0;

  RigidTransform to_rotated() const { return {angle, -rotate(pivot, angle)}; }
};

SliceLayout slice_layout(const Polygon& mask, const Segment& lateral, Vec2 direction, QuarterKind kind,
                         const GeometryParams& params);

struct SliceCrop {
  int index = 0;
  Interval x;
  double y_lo = 0.0;
  double y_hi = 0.0;
  RigidTransform to_image;
  std::string image_path;
};

std::array<SliceCrop, 3> export_slice_crops(const SliceLayout& layout, const std::string& image_path);
std::string format_slice_crop(const SliceCrop& crop);

struct QuarterLayouts {
  SliceLayout q1;
  SliceLayout q2;
  bool duplicate_corner = false;
};

/// Full chain for one sample: direction, corners, lateral line, both layouts.
QuarterLayouts compute_quarter_layouts(const Rect& head, const Rect& tail, const Polygon& q1_mask,
                                       const Polygon& q2_mask, const GeometryParams& params);

/// One tab-separated layouts-file record for a (sample, quarter) pair.
std::string format_layout_record(std::string_view sample, const SliceLayout& layout, bool duplicate_corner,
                                 const std::string& image_path);

}  // namespace reidfuse
