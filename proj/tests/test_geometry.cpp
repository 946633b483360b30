// SPDX-License-Identifier: Apache-2.0

#include "beammap/geometry.hpp"
#include "beammap/scene.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace beammap;

namespace
{
// Independent occlusion oracle: dense sampling of the segment against
// point-in-polygon, plus edge-crossing tests.
bool segments_cross(Point2 a, Point2 b, Point2 c, Point2 d)
{
  auto orient = [](Point2 p, Point2 q, Point2 r) { return cross(q - p, r - p); };
  const double o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  return ((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0));
}

bool blocked_oracle(Point2 a, Point2 b, const Polygon &poly)
{
  const auto &v = poly.vertices();
  for (std::size_t n = 0; n < v.size(); ++n)
    if (segments_cross(a, b, v[n], v[(n + 1) % v.size()]))
      return true;
  for (int s = 0; s <= 2000; ++s)
    if (poly.contains(a + (s / 2000.0) * (b - a)))
      return true;
  return false;
}
} // namespace

TEST_CASE("polygon accepts either winding and rejects degenerate input")
{
  const Polygon ccw({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  const Polygon cw({{0, 0}, {0, 1}, {1, 1}, {1, 0}});
  CHECK(ccw.area() == Catch::Approx(1.0));
  CHECK(cw.area() == Catch::Approx(1.0));
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 1}, {2, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(Polygon({{0, 0}, {2, 0}, {1, 0.2}, {2, 2}, {0, 2}}), std::invalid_argument);
}

TEST_CASE("containment is closed")
{
  const Polygon sq({{0, 0}, {2, 0}, {2, 2}, {0, 2}});
  CHECK(sq.contains({1, 1}));
  CHECK(sq.contains({2, 1}));
  CHECK(sq.contains({0, 0}));
  CHECK_FALSE(sq.contains({2.1, 1}));
}

TEST_CASE("is_blocked examples for the building")
{
  const std::vector<Polygon> building{default_building()};
  CHECK_FALSE(is_blocked({0, 0}, {10, 10}, {}));
  CHECK(is_blocked({0, 0}, {48, 48}, building));
  CHECK_FALSE(is_blocked({0, 0}, {10, 40}, building));
}

TEST_CASE("an endpoint on an edge counts as blocked")
{
  const std::vector<Polygon> sq{Polygon({{2, 2}, {4, 2}, {4, 4}, {2, 4}})};
  CHECK(is_blocked({0, 3}, {2, 3}, sq));
  CHECK_FALSE(is_blocked({0, 3}, {1.9, 3}, sq));
}

TEST_CASE("is_blocked agrees with a sampling oracle on random segments")
{
  const Polygon building = default_building();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 48.0);
  int disagreements = 0;
  for (int n = 0; n < 500; ++n)
  {
    const Point2 a{u(rng), u(rng)}, b{u(rng), u(rng)};
    if (is_blocked(a, b, {building}) != blocked_oracle(a, b, building))
      ++disagreements;
  }
  CHECK(disagreements == 0);
}

TEST_CASE("wall reflection")
{
  CHECK(reflect_across_wall({0, 0}, 48) == Point2{96, 0});
  const Polygon m = default_building().reflected_across_wall(48);
  CHECK(m.area() == Catch::Approx(default_building().area()));
  CHECK(m.contains({96 - 32, 32}));
}
