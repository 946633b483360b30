// SPDX-License-Identifier: Apache-2.0
//
// Simulated indoor scene: a corner base station with a ULA of DFT beams, an
// optional reflecting wall on the far side of the square region and convex
// obstructions. Produces noiseless beam maps and sparse, noisy RSS samples
// for the direct path and the single specular reflection.

#pragma once

#include "beammap/geometry.hpp"

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace beammap
{

enum class PathId : int
{
  direct = 0,
  reflected = 1,
};

struct Scene
{
  Point2 bs_position{0.0, 0.0};
  double wall_x = 48.0;
  double region_size = 48.0;
  int n_antennas = 16;
  std::vector<double> beam_angles;
  std::vector<Polygon> obstructions;
  // When false the region has no dominant reflector and no reflected path exists.
  bool has_wall = true;
  double path_loss_exp_clear = -2.0;
  double path_loss_exp_blocked = -6.0;
  double noise_std_direct_db = 3.0;
  double noise_std_reflect_db = 1.0;
  double reflect_gain_factor = 0.5;

  std::size_t n_beams() const { return beam_angles.size(); }

  // Throws std::invalid_argument when an invariant of the scene is violated.
  void validate() const;
};

// 48 m region, 16 antennas, 46 sin-uniform beams on [0.0208, 1.55], wall at
// x = 48, no obstructions.
Scene default_scene();

// The building used by the obstruction scenarios, in metres.
Polygon default_building();

struct MirrorScene
{
  Point2 mirror_bs;
  std::vector<Polygon> mirror_obstructions;
};

MirrorScene make_mirror(const Scene &scene);

struct Measurement
{
  std::size_t beam = 0; // 0-based beam index
  Point2 location;
  PathId path = PathId::direct;
  double rss = 0.0; // linear power
};

struct MeasurementSet
{
  std::vector<Measurement> records;
  std::uint64_t rng_seed = 0;
  double sampling_ratio = 0.0;
  std::size_t n_locations = 0;
};

// Dense L x L x I map stored with the x cell index fastest, then y, then beam.
struct BeamMap
{
  std::size_t cells = 0;
  std::size_t n_beams = 0;
  double resolution = 1.0;
  std::vector<double> values;

  BeamMap() = default;
  BeamMap(std::size_t cells_, std::size_t n_beams_, double resolution_ = 1.0)
      : cells(cells_), n_beams(n_beams_), resolution(resolution_), values(cells_ * cells_ * n_beams_, 0.0)
  {
  }

  std::size_t index(std::size_t ix, std::size_t iy, std::size_t beam) const { return ix + cells * (iy + cells * beam); }
  double &at(std::size_t ix, std::size_t iy, std::size_t beam) { return values[index(ix, iy, beam)]; }
  double at(std::size_t ix, std::size_t iy, std::size_t beam) const { return values[index(ix, iy, beam)]; }
  Point2 cell_center(std::size_t ix, std::size_t iy) const
  {
    return {(static_cast<double>(ix) + 0.5) * resolution, (static_cast<double>(iy) + 0.5) * resolution};
  }
};

enum class MapComponent
{
  direct,
  reflect,
  total,
};

// ---------------------------------------------------------------------------
// Array and beam model

// e(theta)[n] = exp(-j pi n sin(theta)), n = 0..N-1.
Eigen::VectorXcd array_response(double theta, int n_antennas);

// |e^H(theta) e(phi)|^2, the Dirichlet-kernel beam gain in [0, N^2].
double beam_gain(double theta, double phi, int n_antennas);

// [G]_{i,j} = beam_gain(beam_angles[i], ue_angles[j]).
Eigen::MatrixXd gain_matrix(const std::vector<double> &beam_angles, const std::vector<double> &ue_angles,
                            int n_antennas);

// Angles whose sines form an arithmetic progression from sin(theta_min) to sin(theta_max).
std::vector<double> make_sin_uniform_grid(std::size_t count, double theta_min, double theta_max);

// ---------------------------------------------------------------------------
// Propagation

struct PathGeometry
{
  double distance = 0.0;
  double angle = 0.0; // departure angle at the (mirror) BS, in the BS frame
  bool blocked = false;
};

// Distance, departure angle and blockage of one path to a location. The
// reflected path is evaluated from the mirror BS, whose frame faces -x.
PathGeometry path_geometry(const Scene &scene, const MirrorScene &mirror, Point2 location, PathId path);

// Large-scale power |alpha_l|^2 of a path.
double path_power(const Scene &scene, const PathGeometry &geom, PathId path);

// Noiseless RSS |alpha_l|^2 |w_i^H e(phi_l(z))|^2.
double expected_rss(const Scene &scene, const MirrorScene &mirror, Point2 location, std::size_t beam, PathId path);

// Noisy RSS sample. Noise is Gaussian in dB with the path's standard
// deviation; the dB conversion is floored at -300 dB.
double synthesize_rss(const Scene &scene, const MirrorScene &mirror, Point2 location, std::size_t beam, PathId path,
                      std::mt19937_64 &rng);

// Noiseless map at 1 m cell centres.
BeamMap ground_truth_map(const Scene &scene, const MirrorScene &mirror, MapComponent which);

// Cells kept by the NMSE: distance to the BS of at least min_distance.
std::vector<std::uint8_t> evaluation_mask(const Scene &scene, const BeamMap &shape, double min_distance = 1.0);

// UEs are never placed closer than this to the BS (the BS cell).
inline constexpr double min_ue_distance = 1.0;

// Distinct cell centres at least min_ue_distance from the BS, drawn without
// replacement; round(r_s * L^2) of them, capped at the number available.
MeasurementSet sample_measurements(const Scene &scene, const MirrorScene &mirror, double sampling_ratio,
                                   std::uint64_t seed);

// CSV with header `beam_index,x,y,path_id,rss`; beam_index is 1-based.
void write_measurements_csv(const MeasurementSet &set, const std::string &path);
MeasurementSet read_measurements_csv(const std::string &path);

} // namespace beammap
