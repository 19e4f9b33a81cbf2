#include "reidfuse/geometry.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <numbers>
#include <numeric>

#include "reidfuse/core.hpp"
#include "reidfuse/error.hpp"

namespace reidfuse {

void GeometryParams::validate() const {
  if (!(corner_offset_deg > 0.0 && corner_offset_deg < 90.0))
    throw Error(ErrorCode::InvalidArgument, "corner_offset_deg must lie in (0, 90)");
  const auto [c1, c2] = cut_fractions;
  if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) throw Error(ErrorCode::InvalidArgument, "cut fractions must satisfy 0<c1<c2<1");
  if (!(overlap_fraction >= 0.0)) throw Error(ErrorCode::InvalidArgument, "overlap_fraction must be >= 0");
}

const char* to_string(QuarterKind kind) { return kind == QuarterKind::Q1 ? "Q1" : "Q2"; }

double signed_area(const Polygon& polygon) {
  const std::size_t n = polygon.size();
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) twice += polygon[i].cross(polygon[(i + 1) % n]);
  return twice / 2.0;
}

Vec2 polygon_centroid(const Polygon& polygon) {
  const double area = signed_area(polygon);
  if (polygon.size() < 3 || area == 0.0) throw Error(ErrorCode::DegeneratePolygon, "centroid of zero-area polygon");
  // Shift to the first vertex to keep the products small.
  const Vec2 origin = polygon.front();
  double cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const Vec2 p = polygon[i] - origin;
    const Vec2 q = polygon[(i + 1) % polygon.size()] - origin;
    const double w = p.cross(q);
    cx += (p.x + q.x) * w;
    cy += (p.y + q.y) * w;
  }
  return origin + Vec2{cx / (6.0 * area), cy / (6.0 * area)};
}

Polygon convex_hull(const Polygon& points) {
  Polygon pts = points;
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;

  Polygon hull(2 * pts.size());
  std::size_t k = 0;
  const auto turn = [](Vec2 o, Vec2 a, Vec2 b) { return (a - o).cross(b - o); };
  for (const auto& p : pts) {
    while (k >= 2 && turn(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && turn(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

Vec2 swimming_direction(const Rect& head, const Rect& tail) {
  if (!(head.w > 0 && head.h > 0 && tail.w > 0 && tail.h > 0))
    throw Error(ErrorCode::InvalidArgument, "head and tail boxes need positive area");
  const Vec2 d = head.center() - tail.center();
  const double len = d.norm();
  if (len == 0.0) throw Error(ErrorCode::CoincidentCenters, "head and tail box centers coincide");
  return d * (1.0 / len);
}

QuarterCorners quarter_corners(const Polygon& mask, Vec2 direction, const GeometryParams& params) {
  const Polygon hull = convex_hull(mask);
  if (hull.size() < 3) throw Error(ErrorCode::DegenerateHull, fmt::format("hull has {} distinct vertices", hull.size()));
  const double len = direction.norm();
  if (!(len > 0.0)) throw Error(ErrorCode::InvalidArgument, "zero swimming direction");
  const Vec2 d = direction * (1.0 / len);
  const double offset = params.corner_offset_deg * std::numbers::pi / 180.0;
  const std::array<Vec2, 4> probes{rotate(d, offset), rotate(d, -offset), rotate(-d, offset), rotate(-d, -offset)};

  QuarterCorners out;
  std::array<std::size_t, 4> picked{};
  for (std::size_t p = 0; p < probes.size(); ++p) {
    std::size_t best = 0;
    double best_dot = hull[0].dot(probes[p]);
    for (std::size_t i = 1; i < hull.size(); ++i) {
      const double v = hull[i].dot(probes[p]);
      if (v > best_dot) {
        best_dot = v;
        best = i;
      }
    }
    picked[p] = best;
    out.points[p] = hull[best];
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b)
      if (picked[a] == picked[b]) out.duplicate_corner = true;
  return out;
}

Segment lateral_segment(const QuarterCorners& q1, const QuarterCorners& q2, Vec2 q1_centroid, Vec2 q2_centroid,
                        QuarterKind kind) {
  const Vec2 axis = q1_centroid - q2_centroid;
  const double len = axis.norm();
  if (len == 0.0) throw Error(ErrorCode::CoincidentCentroids, "Q1 and Q2 centroids coincide");
  const Vec2 n = axis * (1.0 / len);

  const auto& corners = kind == QuarterKind::Q1 ? q1.points : q2.points;
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double pa = corners[a].dot(n);
    const double pb = corners[b].dot(n);
    return kind == QuarterKind::Q1 ? pa < pb : pa > pb;
  });
  return {corners[order[0]], corners[order[1]]};
}

SliceLayout slice_layout(const Polygon& mask, const Segment& lateral, Vec2 direction, QuarterKind kind,
                         const GeometryParams& params) {
  params.validate();
  const double length = (lateral.b - lateral.a).norm();
  if (length == 0.0) throw Error(ErrorCode::ZeroLengthLateralLine, "lateral line endpoints coincide");

  SliceLayout layout;
  layout.quarter = kind;
  const bool b_is_anterior = lateral.b.dot(direction) >= lateral.a.dot(direction);
  layout.posterior = b_is_anterior ? lateral.a : lateral.b;
  layout.anterior = b_is_anterior ? lateral.b : lateral.a;
  const Vec2 delta = layout.anterior - layout.posterior;
  layout.angle = -std::atan2(delta.y, delta.x) + 0.0;  // no negative zero in serialized layouts
  layout.pivot = layout.posterior;
  layout.length = length;

  const double cut1 = params.cut_fractions[0] * length;
  const double cut2 = params.cut_fractions[1] * length;
  const double f = params.overlap_fraction;
  const std::array<double, 3> widths{cut1, cut2 - cut1, length - cut2};
  layout.slices[0] = {0.0, std::min(length, cut1 + f * widths[0])};
  layout.slices[1] = {std::max(0.0, cut1 - f * widths[1]), std::min(length, cut2 + f * widths[1])};
  layout.slices[2] = {std::max(0.0, cut2 - f * widths[2]), length};

  if (!mask.empty()) {
    const RigidTransform to_rot = layout.to_rotated();
    layout.y_lo = std::numeric_limits<double>::infinity();
    layout.y_hi = -std::numeric_limits<double>::infinity();
    for (const auto& p : mask) {
      const double y = to_rot.apply(p).y;
      layout.y_lo = std::min(layout.y_lo, y);
      layout.y_hi = std::max(layout.y_hi, y);
    }
  }
  return layout;
}

std::array<SliceCrop, 3> export_slice_crops(const SliceLayout& layout, const std::string& image_path) {
  std::array<SliceCrop, 3> crops;
  const RigidTransform to_image = layout.to_rotated().inverse();
  for (int i = 0; i < 3; ++i) {
    crops[i].index = i + 1;
    crops[i].x = layout.slices[i];
    crops[i].y_lo = layout.y_lo;
    crops[i].y_hi = layout.y_hi;
    crops[i].to_image = to_image;
    crops[i].image_path = image_path;
  }
  return crops;
}

std::string format_slice_crop(const SliceCrop& crop) {
  return fmt::format("slice={} x={},{} y={},{} to_image={},{},{} image={}", crop.index, format_real(crop.x.lo),
                     format_real(crop.x.hi), format_real(crop.y_lo), format_real(crop.y_hi),
                     format_real(crop.to_image.angle), format_real(crop.to_image.translation.x),
                     format_real(crop.to_image.translation.y), crop.image_path);
}

QuarterLayouts compute_quarter_layouts(const Rect& head, const Rect& tail, const Polygon& q1_mask,
                                       const Polygon& q2_mask, const GeometryParams& params) {
  const Vec2 direction = swimming_direction(head, tail);
  const QuarterCorners c1 = quarter_corners(q1_mask, direction, params);
  const QuarterCorners c2 = quarter_corners(q2_mask, direction, params);
  const Vec2 m1 = polygon_centroid(q1_mask);
  const Vec2 m2 = polygon_centroid(q2_mask);
  QuarterLayouts out;
  out.q1 = slice_layout(q1_mask, lateral_segment(c1, c2, m1, m2, QuarterKind::Q1), direction, QuarterKind::Q1, params);
  out.q2 = slice_layout(q2_mask, lateral_segment(c1, c2, m1, m2, QuarterKind::Q2), direction, QuarterKind::Q2, params);
  out.duplicate_corner = c1.duplicate_corner || c2.duplicate_corner;
  return out;
}

std::string format_layout_record(std::string_view sample, const SliceLayout& layout, bool duplicate_corner,
                                 const std::string& image_path) {
  std::string out = fmt::format("{}\t{}\tposterior={},{}\tanterior={},{}\tangle={}\tlength={}", sample,
                                to_string(layout.quarter), format_real(layout.posterior.x), format_real(layout.posterior.y),
                                format_real(layout.anterior.x), format_real(layout.anterior.y), format_real(layout.angle),
                                format_real(layout.length));
  for (const auto& crop : export_slice_crops(layout, image_path)) out += '\t' + format_slice_crop(crop);
  if (duplicate_corner) out += "\tduplicate_corner";
  return out;
}

}  // namespace reidfuse
