// SPDX-License-Identifier: Apache-2.0

#include "beammap/polar.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace beammap
{

Point2 PolarGrid::bin_center(std::size_t j, std::size_t k) const
{
  const double d = bin_distance(k);
  return {source.x + facing * d * std::cos(angles[j]), source.y + d * std::sin(angles[j])};
}

PolarGrid make_polar_grid(std::vector<double> angles, Point2 source, double facing, double max_distance,
                          std::size_t n_distance_bins)
{
  if (angles.empty())
    throw std::invalid_argument("make_polar_grid: no angles");
  if (n_distance_bins < 2)
    throw std::invalid_argument("make_polar_grid: need at least 2 distance bins");
  if (!(max_distance > 0.0))
    throw std::invalid_argument("make_polar_grid: max_distance must be positive");
  PolarGrid g;
  g.angles = std::move(angles);
  g.sin_angles.reserve(g.angles.size());
  for (std::size_t j = 0; j < g.angles.size(); ++j)
  {
    if (j > 0 && !(g.angles[j] > g.angles[j - 1]))
      throw std::invalid_argument("make_polar_grid: angles must be strictly increasing");
    g.sin_angles.push_back(std::sin(g.angles[j]));
  }
  g.n_distance_bins = n_distance_bins;
  g.distance_step = max_distance / static_cast<double>(n_distance_bins - 1);
  g.source = source;
  g.facing = facing;
  return g;
}

PolarGrid make_polar_grid(const Scene &scene, const MirrorScene &mirror, PathId path, std::size_t n_distance_bins)
{
  const Point2 source = path == PathId::direct ? scene.bs_position : mirror.mirror_bs;
  const double facing = (path == PathId::reflected && mirror.mirror_bs.x > scene.wall_x) ? -1.0 : 1.0;
  const double L = scene.region_size;
  double max_d = 0.0;
  for (const Point2 c : {Point2{0, 0}, Point2{L, 0}, Point2{0, L}, Point2{L, L}})
    max_d = std::max(max_d, distance(c, source));
  return make_polar_grid(scene.beam_angles, source, facing, max_d, n_distance_bins);
}

PolarCoord to_polar(Point2 z, Point2 source, double facing)
{
  const Point2 v = z - source;
  const double d = norm(v);
  if (d <= 0.0)
    throw std::invalid_argument("to_polar: point coincides with the source");
  return {d, std::atan2(v.y, facing * v.x)};
}

std::optional<BinIndex> try_bin_index(double distance, double angle, const PolarGrid &grid)
{
  if (!(distance >= 0.0))
    return std::nullopt;
  // k = round(d / step) with halves going down
  const double kf = std::ceil(distance / grid.distance_step - 0.5);
  if (kf < 0.0 || kf >= static_cast<double>(grid.n_distance_bins))
    return std::nullopt;

  const auto &s = grid.sin_angles;
  const double sv = std::sin(angle);
  const std::size_t J = s.size();
  if (J == 1)
  {
    if (std::abs(angle - grid.angles[0]) > 1e-12)
      return std::nullopt;
    return BinIndex{0, static_cast<std::size_t>(kf)};
  }
  const double lo_half = 0.5 * (s[1] - s[0]);
  const double hi_half = 0.5 * (s[J - 1] - s[J - 2]);
  // Sine is not injective beyond pi/2; angles there are out of coverage anyway.
  if (std::abs(angle) > 0.5 * std::numbers::pi || sv < s[0] - lo_half || sv > s[J - 1] + hi_half)
    return std::nullopt;

  const auto it = std::lower_bound(s.begin(), s.end(), sv);
  std::size_t j;
  if (it == s.begin())
    j = 0;
  else if (it == s.end())
    j = J - 1;
  else
  {
    const auto hi = static_cast<std::size_t>(it - s.begin());
    const std::size_t lo = hi - 1;
    j = (sv - s[lo] <= s[hi] - sv) ? lo : hi;
  }
  return BinIndex{j, static_cast<std::size_t>(kf)};
}

BinIndex bin_index(double distance, double angle, const PolarGrid &grid)
{
  auto b = try_bin_index(distance, angle, grid);
  if (!b)
    throw out_of_coverage("bin_index: (distance, angle) outside the polar grid");
  return *b;
}

std::size_t MaskedTensor3::observed() const
{
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

AggregateResult aggregate(const MeasurementSet &measurements, const PolarGrid &grid, PathId path,
                          std::size_t n_beams)
{
  AggregateResult res;
  res.tensor = MaskedTensor3(n_beams, grid.n_angles(), grid.n_distance_bins);
  auto &t = res.tensor;
  for (const auto &rec : measurements.records)
  {
    if (rec.path != path)
      continue;
    if (rec.beam >= n_beams)
      throw std::invalid_argument("aggregate: beam index exceeds the tensor's beam dimension");
    const double d = distance(rec.location, grid.source);
    std::optional<BinIndex> b;
    if (d > 0.0)
    {
      const PolarCoord pc = to_polar(rec.location, grid.source, grid.facing);
      b = try_bin_index(pc.distance, pc.angle, grid);
    }
    else
      b = BinIndex{0, 0};
    if (!b)
    {
      ++res.dropped;
      continue;
    }
    const std::size_t idx = t.values.index(rec.beam, b->angle, b->distance);
    t.values.data[idx] += rec.rss;
    ++t.counts[idx];
  }
  for (std::size_t n = 0; n < t.values.size(); ++n)
  {
    if (t.counts[n] > 0)
    {
      t.values.data[n] /= static_cast<double>(t.counts[n]);
      t.mask[n] = 1;
    }
  }
  return res;
}

MaskedTensor3 augment_reflection(const MaskedTensor3 &x0, const MaskedTensor3 &x1)
{
  const Tensor3 &a = x0.values;
  const Tensor3 &b = x1.values;
  if (a.dim_i != b.dim_i || a.dim_j != b.dim_j)
    throw std::invalid_argument("augment_reflection: beam and angle dimensions must agree");
  MaskedTensor3 out(a.dim_i, a.dim_j, a.dim_k + b.dim_k);
  // Storage is k-slowest, so concatenation along k is appending.
  std::copy(a.data.begin(), a.data.end(), out.values.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.values.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  std::copy(x0.mask.begin(), x0.mask.end(), out.mask.begin());
  std::copy(x1.mask.begin(), x1.mask.end(), out.mask.begin() + static_cast<std::ptrdiff_t>(a.size()));
  std::copy(x0.counts.begin(), x0.counts.end(), out.counts.begin());
  std::copy(x1.counts.begin(), x1.counts.end(), out.counts.begin() + static_cast<std::ptrdiff_t>(a.size()));
  out.blocks = x0.blocks;
  out.blocks.insert(out.blocks.end(), x1.blocks.begin(), x1.blocks.end());
  return out;
}

Eigen::MatrixXd mode3_unfold(const Tensor3 &t)
{
  return Eigen::Map<const Eigen::MatrixXd>(t.data.data(), static_cast<Eigen::Index>(t.dim_i * t.dim_j),
                                           static_cast<Eigen::Index>(t.dim_k));
}

Unfolded mode3_unfold(const MaskedTensor3 &t)
{
  Unfolded u;
  u.data = mode3_unfold(t.values);
  u.mask.resize(u.data.rows(), u.data.cols());
  for (std::size_t n = 0; n < t.mask.size(); ++n)
    u.mask.data()[n] = t.mask[n] ? 1.0 : 0.0;
  return u;
}

Tensor3 mode3_fold(const Eigen::MatrixXd &unfolded, std::size_t dim_i, std::size_t dim_j)
{
  if (static_cast<std::size_t>(unfolded.rows()) != dim_i * dim_j)
    throw std::invalid_argument("mode3_fold: row count must equal I*J");
  Tensor3 t(dim_i, dim_j, static_cast<std::size_t>(unfolded.cols()));
  std::copy(unfolded.data(), unfolded.data() + unfolded.size(), t.data.begin());
  return t;
}

MaskedTensor3 mode3_fold(const Unfolded &unfolded, std::size_t dim_i, std::size_t dim_j)
{
  MaskedTensor3 out;
  out.values = mode3_fold(unfolded.data, dim_i, dim_j);
  out.mask.resize(out.values.size());
  out.counts.assign(out.values.size(), 0);
  for (std::size_t n = 0; n < out.mask.size(); ++n)
  {
    out.mask[n] = unfolded.mask.data()[n] != 0.0 ? 1 : 0;
    out.counts[n] = out.mask[n];
  }
  out.blocks = {out.values.dim_k};
  return out;
}

ScatterSet scatter_to_cartesian(const Tensor3 &x_hat, const PolarGrid &grid, double region_size)
{
  if (x_hat.dim_j != grid.n_angles() || x_hat.dim_k != grid.n_distance_bins)
    throw std::invalid_argument("scatter_to_cartesian: tensor does not match the grid");
  constexpr double tol = 1e-9;
  ScatterSet out;
  for (std::size_t k = 0; k < x_hat.dim_k; ++k)
    for (std::size_t j = 0; j < x_hat.dim_j; ++j)
    {
      const Point2 z = grid.bin_center(j, k);
      if (z.x < -tol || z.y < -tol || z.x > region_size + tol || z.y > region_size + tol)
        continue;
      out.locations.push_back(z);
      out.bins.push_back({j, k});
    }
  out.values.resize(static_cast<Eigen::Index>(out.locations.size()), static_cast<Eigen::Index>(x_hat.dim_i));
  for (std::size_t m = 0; m < out.locations.size(); ++m)
    for (std::size_t i = 0; i < x_hat.dim_i; ++i)
      out.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)) =
          x_hat(i, out.bins[m].angle, out.bins[m].distance);
  return out;
}

MaskedTensor3 bin_center_tensor(const Scene &scene, const MirrorScene &mirror, const PolarGrid &grid, PathId path,
                                double min_distance)
{
  MaskedTensor3 t(scene.n_beams(), grid.n_angles(), grid.n_distance_bins);
  const double L = scene.region_size;
  for (std::size_t k = 0; k < grid.n_distance_bins; ++k)
  {
    for (std::size_t j = 0; j < grid.n_angles(); ++j)
    {
      const Point2 z = grid.bin_center(j, k);
      if (z.x < 0.0 || z.y < 0.0 || z.x > L || z.y > L)
        continue;
      if (distance(z, scene.bs_position) < min_distance || distance(z, grid.source) < min_distance)
        continue;
      for (std::size_t i = 0; i < scene.n_beams(); ++i)
      {
        const std::size_t idx = t.values.index(i, j, k);
        t.values.data[idx] = expected_rss(scene, mirror, z, i, path);
        t.mask[idx] = 1;
        t.counts[idx] = 1;
      }
    }
  }
  return t;
}

} // namespace beammap
