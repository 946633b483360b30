// SPDX-License-Identifier: Apache-2.0

#include "beammap/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace beammap
{

namespace
{
double signed_area(const std::vector<Point2> &v)
{
  double a = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    a += cross(v[i], v[(i + 1) % v.size()]);
  return 0.5 * a;
}
} // namespace

Polygon::Polygon(std::vector<Point2> vertices) : vertices_(std::move(vertices))
{
  if (vertices_.size() < 3)
    throw std::invalid_argument("Polygon: at least 3 vertices required");

  const double a = signed_area(vertices_);
  double scale = 0.0;
  for (const auto &p : vertices_)
    scale = std::max({scale, std::abs(p.x), std::abs(p.y)});
  if (std::abs(a) <= 1e-12 * std::max(1.0, scale * scale))
    throw std::invalid_argument("Polygon: degenerate (zero-area) polygon");
  if (a < 0.0)
    std::reverse(vertices_.begin(), vertices_.end());

  const std::size_t n = vertices_.size();
  for (std::size_t i = 0; i < n; ++i)
  {
    const Point2 e0 = vertices_[(i + 1) % n] - vertices_[i];
    const Point2 e1 = vertices_[(i + 2) % n] - vertices_[(i + 1) % n];
    if (cross(e0, e1) < -1e-12 * std::max(1.0, scale * scale))
      throw std::invalid_argument("Polygon: vertices do not form a convex polygon");
  }
}

double Polygon::area() const { return signed_area(vertices_); }

bool Polygon::contains(Point2 p, double tol) const
{
  const std::size_t n = vertices_.size();
  for (std::size_t i = 0; i < n; ++i)
  {
    const Point2 a = vertices_[i];
    const Point2 b = vertices_[(i + 1) % n];
    if (cross(b - a, p - a) < -tol * std::max(1.0, norm(b - a)))
      return false;
  }
  return true;
}

bool Polygon::intersects_segment(Point2 a, Point2 b) const
{
  // Cyrus-Beck clipping of the parametric segment a + t (b - a), t in [0, 1],
  // against the inward half-planes of the CCW polygon.
  const Point2 dir = b - a;
  double t_enter = 0.0;
  double t_exit = 1.0;
  const std::size_t n = vertices_.size();
  constexpr double tol = 1e-12;
  for (std::size_t i = 0; i < n; ++i)
  {
    const Point2 v0 = vertices_[i];
    const Point2 edge = vertices_[(i + 1) % n] - v0;
    // inside <=> cross(edge, p - v0) >= 0
    const double num = cross(edge, a - v0);
    const double den = cross(edge, dir);
    if (std::abs(den) <= tol * norm(edge) * std::max(1.0, norm(dir)))
    {
      if (num < -tol * norm(edge))
        return false;
      continue;
    }
    const double t = -num / den;
    if (den > 0.0)
      t_enter = std::max(t_enter, t);
    else
      t_exit = std::min(t_exit, t);
    if (t_enter > t_exit + tol)
      return false;
  }
  return true;
}

Polygon Polygon::reflected_across_wall(double wall_x) const
{
  std::vector<Point2> out;
  out.reserve(vertices_.size());
  for (const auto &p : vertices_)
    out.push_back(reflect_across_wall(p, wall_x));
  return Polygon(std::move(out));
}

bool is_blocked(Point2 from, Point2 to, const std::vector<Polygon> &polygons)
{
  return std::any_of(polygons.begin(), polygons.end(),
                     [&](const Polygon &poly) { return poly.intersects_segment(from, to); });
}

} // namespace beammap
