// SPDX-License-Identifier: Apache-2.0
//
// Planar geometry used by the indoor scene: points, convex obstruction
// polygons and segment occlusion tests.

#pragma once

#include <cmath>
#include <vector>

namespace beammap
{

struct Point2
{
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2 &, const Point2 &) = default;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

// Mirror image of p across the vertical line x = wall_x.
inline Point2 reflect_across_wall(Point2 p, double wall_x) { return {2.0 * wall_x - p.x, p.y}; }

// Convex polygon with vertices stored counter-clockwise. Construction accepts
// either winding and rejects zero-area or non-convex vertex lists.
class Polygon
{
public:
  Polygon() = default;
  explicit Polygon(std::vector<Point2> vertices);

  const std::vector<Point2> &vertices() const { return vertices_; }
  double area() const;

  // Closed containment: boundary points count as inside.
  bool contains(Point2 p, double tol = 1e-12) const;

  // True when the closed segment [a, b] touches the closed polygon.
  bool intersects_segment(Point2 a, Point2 b) const;

  Polygon reflected_across_wall(double wall_x) const;

private:
  std::vector<Point2> vertices_;
};

// Occlusion test for a straight propagation segment.
bool is_blocked(Point2 from, Point2 to, const std::vector<Polygon> &polygons);

} // namespace beammap
