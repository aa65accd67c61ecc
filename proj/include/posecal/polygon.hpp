#pragma once

#include <Eigen/Core>

#include <vector>

namespace posecal {

using Polygon = std::vector<Eigen::Vector2d>;

/// Signed shoelace area; positive for counter-clockwise vertex order in a
/// y-up frame (clockwise on screen).
[[nodiscard]] double signed_area(const Polygon& poly);

[[nodiscard]] double polygon_area(const Polygon& poly);

[[nodiscard]] Eigen::Vector2d polygon_centroid(const Polygon& poly);

/// True when all turns have the same orientation and the area is non-zero.
[[nodiscard]] bool is_convex(const Polygon& poly);

/// Sutherland-Hodgman clip of `subject` against a convex `clip` polygon.
[[nodiscard]] Polygon clip_convex(const Polygon& subject, const Polygon& clip);

/// Intersection over union of two convex polygons. Zero-area input yields 0.
[[nodiscard]] double convex_jaccard(const Polygon& a, const Polygon& b);

}  // namespace posecal
