// SPDX-License-Identifier: Apache-2.0

#include "beammap/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace beammap
{

void Scene::validate() const
{
  if (n_antennas < 1)
    throw std::invalid_argument("Scene: n_antennas must be positive");
  if (!(region_size > 0.0))
    throw std::invalid_argument("Scene: region_size must be positive");
  if (beam_angles.empty())
    throw std::invalid_argument("Scene: no beam angles");
  for (std::size_t i = 0; i < beam_angles.size(); ++i)
  {
    if (!(beam_angles[i] > 0.0 && beam_angles[i] < std::numbers::pi / 2))
      throw std::invalid_argument("Scene: beam angles must lie in (0, pi/2)");
    if (i > 0 && !(beam_angles[i] > beam_angles[i - 1]))
      throw std::invalid_argument("Scene: beam angles must be strictly increasing");
  }
  const bool on_corner = (bs_position.x == 0.0 || bs_position.x == region_size) &&
                         (bs_position.y == 0.0 || bs_position.y == region_size);
  if (!on_corner)
    throw std::invalid_argument("Scene: base station must sit on a corner of the region");
  if (has_wall && std::abs(wall_x - region_size) > 1e-12)
    throw std::invalid_argument("Scene: the reflecting wall must be the x = L side of the region");
  for (const auto &poly : obstructions)
    for (const auto &v : poly.vertices())
      if (v.x < 0.0 || v.y < 0.0 || v.x > region_size || v.y > region_size)
        throw std::invalid_argument("Scene: obstruction polygon leaves the region");
  if (noise_std_direct_db < 0.0 || noise_std_reflect_db < 0.0)
    throw std::invalid_argument("Scene: noise standard deviations must be nonnegative");
}

Scene default_scene()
{
  Scene s;
  s.beam_angles = make_sin_uniform_grid(46, 0.0208, 1.55);
  return s;
}

Polygon default_building() { return Polygon({{32.0, 26.0}, {26.0, 32.0}, {30.0, 38.0}, {38.0, 32.0}}); }

MirrorScene make_mirror(const Scene &scene)
{
  MirrorScene m;
  m.mirror_bs = reflect_across_wall(scene.bs_position, scene.wall_x);
  m.mirror_obstructions.reserve(scene.obstructions.size());
  for (const auto &poly : scene.obstructions)
    m.mirror_obstructions.push_back(poly.reflected_across_wall(scene.wall_x));
  return m;
}

Eigen::VectorXcd array_response(double theta, int n_antennas)
{
  Eigen::VectorXcd e(n_antennas);
  const double s = std::sin(theta);
  for (int n = 0; n < n_antennas; ++n)
    e(n) = std::polar(1.0, -std::numbers::pi * n * s);
  return e;
}

double beam_gain(double theta, double phi, int n_antennas)
{
  const double u = std::sin(theta) - std::sin(phi);
  std::complex<double> acc = 0.0;
  for (int n = 0; n < n_antennas; ++n)
    acc += std::polar(1.0, std::numbers::pi * n * u);
  return std::norm(acc);
}

Eigen::MatrixXd gain_matrix(const std::vector<double> &beam_angles, const std::vector<double> &ue_angles,
                            int n_antennas)
{
  Eigen::MatrixXd g(beam_angles.size(), ue_angles.size());
  for (std::size_t j = 0; j < ue_angles.size(); ++j)
    for (std::size_t i = 0; i < beam_angles.size(); ++i)
      g(i, j) = beam_gain(beam_angles[i], ue_angles[j], n_antennas);
  return g;
}

std::vector<double> make_sin_uniform_grid(std::size_t count, double theta_min, double theta_max)
{
  if (count < 2)
    throw std::invalid_argument("make_sin_uniform_grid: count must be at least 2");
  if (!(theta_min > 0.0 && theta_min < theta_max && theta_max < std::numbers::pi / 2))
    throw std::invalid_argument("make_sin_uniform_grid: need 0 < theta_min < theta_max < pi/2");
  const double s0 = std::sin(theta_min);
  const double s1 = std::sin(theta_max);
  std::vector<double> out(count);
  out.front() = theta_min;
  out.back() = theta_max;
  for (std::size_t i = 1; i + 1 < count; ++i)
    out[i] = std::asin(s0 + static_cast<double>(i) * (s1 - s0) / static_cast<double>(count - 1));
  return out;
}

PathGeometry path_geometry(const Scene &scene, const MirrorScene &mirror, Point2 location, PathId path)
{
  PathGeometry g;
  if (path == PathId::direct)
  {
    const Point2 v = location - scene.bs_position;
    g.distance = norm(v);
    if (g.distance <= 0.0)
      throw std::invalid_argument("path_geometry: location coincides with the base station");
    g.angle = std::atan2(v.y, v.x);
    g.blocked = is_blocked(scene.bs_position, location, scene.obstructions);
    return g;
  }
  if (!scene.has_wall)
    throw std::invalid_argument("path_geometry: reflected path requested but the scene has no wall");
  const Point2 v = location - mirror.mirror_bs;
  g.distance = norm(v);
  if (g.distance <= 0.0)
    throw std::invalid_argument("path_geometry: location coincides with the mirror base station");
  // The mirror array is the reflection of the real one, so its frame faces
  // back across the wall.
  const double facing = mirror.mirror_bs.x > scene.wall_x ? -1.0 : 1.0;
  g.angle = std::atan2(v.y, facing * v.x);
  g.blocked = is_blocked(mirror.mirror_bs, location, mirror.mirror_obstructions) ||
              is_blocked(mirror.mirror_bs, location, scene.obstructions);
  return g;
}

double path_power(const Scene &scene, const PathGeometry &geom, PathId path)
{
  const double eta = geom.blocked ? scene.path_loss_exp_blocked : scene.path_loss_exp_clear;
  double p = std::pow(geom.distance, 2.0 * eta);
  if (path == PathId::reflected)
    p *= scene.reflect_gain_factor * scene.reflect_gain_factor;
  return p;
}

double expected_rss(const Scene &scene, const MirrorScene &mirror, Point2 location, std::size_t beam, PathId path)
{
  const PathGeometry geom = path_geometry(scene, mirror, location, path);
  return path_power(scene, geom, path) * beam_gain(scene.beam_angles.at(beam), geom.angle, scene.n_antennas);
}

namespace
{
double add_db_noise(double signal, double sigma_db, std::mt19937_64 &rng)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  const double n = normal(rng);
  if (sigma_db == 0.0)
    return std::max(signal, 0.0);
  const double db = std::max(10.0 * std::log10(std::max(signal, 0.0)), -300.0);
  return std::max(std::pow(10.0, (db + sigma_db * n) / 10.0), 0.0);
}
} // namespace

double synthesize_rss(const Scene &scene, const MirrorScene &mirror, Point2 location, std::size_t beam, PathId path,
                      std::mt19937_64 &rng)
{
  const double signal = expected_rss(scene, mirror, location, beam, path);
  const double sigma = path == PathId::direct ? scene.noise_std_direct_db : scene.noise_std_reflect_db;
  return add_db_noise(signal, sigma, rng);
}

BeamMap ground_truth_map(const Scene &scene, const MirrorScene &mirror, MapComponent which)
{
  const auto cells = static_cast<std::size_t>(std::llround(scene.region_size));
  BeamMap map(cells, scene.n_beams(), scene.region_size / static_cast<double>(cells));
  const bool want_direct = which != MapComponent::reflect;
  const bool want_reflect = which != MapComponent::direct && scene.has_wall;
  for (std::size_t iy = 0; iy < cells; ++iy)
    for (std::size_t ix = 0; ix < cells; ++ix)
    {
      const Point2 z = map.cell_center(ix, iy);
      if (want_direct)
      {
        const PathGeometry g = path_geometry(scene, mirror, z, PathId::direct);
        const double p = path_power(scene, g, PathId::direct);
        for (std::size_t i = 0; i < map.n_beams; ++i)
          map.at(ix, iy, i) += p * beam_gain(scene.beam_angles[i], g.angle, scene.n_antennas);
      }
      if (want_reflect)
      {
        const PathGeometry g = path_geometry(scene, mirror, z, PathId::reflected);
        const double p = path_power(scene, g, PathId::reflected);
        for (std::size_t i = 0; i < map.n_beams; ++i)
          map.at(ix, iy, i) += p * beam_gain(scene.beam_angles[i], g.angle, scene.n_antennas);
      }
    }
  return map;
}

std::vector<std::uint8_t> evaluation_mask(const Scene &scene, const BeamMap &shape, double min_distance)
{
  std::vector<std::uint8_t> mask(shape.values.size(), 0);
  for (std::size_t iy = 0; iy < shape.cells; ++iy)
    for (std::size_t ix = 0; ix < shape.cells; ++ix)
    {
      const bool keep = distance(shape.cell_center(ix, iy), scene.bs_position) >= min_distance;
      for (std::size_t i = 0; i < shape.n_beams; ++i)
        mask[shape.index(ix, iy, i)] = keep ? 1 : 0;
    }
  return mask;
}

MeasurementSet sample_measurements(const Scene &scene, const MirrorScene &mirror, double sampling_ratio,
                                   std::uint64_t seed)
{
  if (!(sampling_ratio > 0.0 && sampling_ratio <= 1.0))
    throw std::invalid_argument("sample_measurements: sampling ratio must lie in (0, 1]");
  // UE locations are distinct cell centres (partial Fisher-Yates over the
  // cells). The BS cell is excluded, as in the NMSE mask: a UE cannot stand on
  // the antenna and the path-loss singularity there would dominate every map.
  // r_s = 1 visits every remaining cell exactly once.
  const auto cells = static_cast<std::size_t>(std::llround(scene.region_size));
  const double res = scene.region_size / static_cast<double>(cells);
  std::vector<Point2> candidates;
  candidates.reserve(cells * cells);
  for (std::size_t n = 0; n < cells * cells; ++n)
  {
    const Point2 z{(static_cast<double>(n % cells) + 0.5) * res, (static_cast<double>(n / cells) + 0.5) * res};
    if (distance(z, scene.bs_position) >= min_ue_distance)
      candidates.push_back(z);
  }
  const auto n_loc = std::min(candidates.size(), static_cast<std::size_t>(std::llround(
                                                    sampling_ratio * static_cast<double>(cells * cells))));

  MeasurementSet set;
  set.rng_seed = seed;
  set.sampling_ratio = sampling_ratio;
  set.n_locations = n_loc;
  const std::size_t n_paths = scene.has_wall ? 2 : 1;
  set.records.reserve(n_loc * scene.n_beams() * n_paths);

  std::mt19937_64 rng(seed);
  for (std::size_t m = 0; m < n_loc; ++m)
  {
    const std::size_t pick = m + static_cast<std::size_t>(rng() % (candidates.size() - m));
    std::swap(candidates[m], candidates[pick]);
    const Point2 z = candidates[m];

    for (std::size_t p = 0; p < n_paths; ++p)
    {
      const auto path = static_cast<PathId>(p);
      for (std::size_t i = 0; i < scene.n_beams(); ++i)
        set.records.push_back({i, z, path, synthesize_rss(scene, mirror, z, i, path, rng)});
    }
  }
  return set;
}

void write_measurements_csv(const MeasurementSet &set, const std::string &path)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "beam_index,x,y,path_id,rss\n";
  for (const auto &r : set.records)
    out << (r.beam + 1) << ',' << r.location.x << ',' << r.location.y << ',' << static_cast<int>(r.path) << ','
        << r.rss << '\n';
}

MeasurementSet read_measurements_csv(const std::string &path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("beam_index,x,y,path_id,rss", 0) != 0)
    throw std::runtime_error(path + ": missing measurement CSV header");
  MeasurementSet set;
  std::size_t line_no = 1;
  while (std::getline(in, line))
  {
    ++line_no;
    if (line.empty())
      continue;
    std::istringstream row(line);
    std::string cell[5];
    for (auto &c : cell)
      if (!std::getline(row, c, ','))
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 5 fields");
    Measurement m;
    const long beam = std::stol(cell[0]);
    if (beam < 1)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": beam_index is 1-based");
    m.beam = static_cast<std::size_t>(beam - 1);
    m.location = {std::stod(cell[1]), std::stod(cell[2])};
    const int pid = std::stoi(cell[3]);
    if (pid != 0 && pid != 1)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": path_id must be 0 or 1");
    m.path = static_cast<PathId>(pid);
    m.rss = std::stod(cell[4]);
    set.records.push_back(m);
  }
  return set;
}

} // namespace beammap
