// SPDX-License-Identifier: Apache-2.0
//
// Polar-domain view of the measurements. Each source (the BS or its mirror)
// gets a grid of sin-uniform angle bins and uniform distance bins; binned
// RSS values form a masked I x J x K tensor whose mode-3 unfolding feeds the
// decomposition solvers.
//
// Layout: every tensor is stored column-major with the beam index i fastest,
// then the angle bin j, then the distance bin k. Column k of the mode-3
// unfolding is therefore vec(X(:,:,k)) with vec stacking the columns of each
// frontal slice, and vec(G)[i + I*j] = G(i, j).

#pragma once

#include "beammap/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace beammap
{

struct PolarGrid
{
  std::vector<double> angles;
  std::vector<double> sin_angles;
  double distance_step = 1.0;
  std::size_t n_distance_bins = 0;
  Point2 source;
  // +1 when angles are measured from +x (the BS), -1 for the mirror BS.
  double facing = 1.0;

  std::size_t n_angles() const { return angles.size(); }
  double bin_distance(std::size_t k) const { return static_cast<double>(k) * distance_step; }
  Point2 bin_center(std::size_t j, std::size_t k) const;
};

PolarGrid make_polar_grid(std::vector<double> angles, Point2 source, double facing, double max_distance,
                          std::size_t n_distance_bins);

// Grid for one propagation path of the scene: angles equal to the beam
// angles, distance step max_distance / (K - 1) so the last bin centre sits on
// the farthest corner of the region.
PolarGrid make_polar_grid(const Scene &scene, const MirrorScene &mirror, PathId path, std::size_t n_distance_bins);

struct PolarCoord
{
  double distance = 0.0;
  double angle = 0.0;
};

PolarCoord to_polar(Point2 z, Point2 source, double facing = 1.0);

class out_of_coverage : public std::out_of_range
{
public:
  using std::out_of_range::out_of_range;
};

// 0-based bin indices.
struct BinIndex
{
  std::size_t angle = 0;
  std::size_t distance = 0;

  friend bool operator==(const BinIndex &, const BinIndex &) = default;
};

// Nearest bin in distance and in sin(angle); ties go to the lower index.
// Throws out_of_coverage beyond the last distance bin or more than half an
// angle bin outside the grid.
BinIndex bin_index(double distance, double angle, const PolarGrid &grid);
std::optional<BinIndex> try_bin_index(double distance, double angle, const PolarGrid &grid);

struct Tensor3
{
  std::size_t dim_i = 0;
  std::size_t dim_j = 0;
  std::size_t dim_k = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t i, std::size_t j, std::size_t k) : dim_i(i), dim_j(j), dim_k(k), data(i * j * k, 0.0) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + dim_i * (j + dim_j * k); }
  double &operator()(std::size_t i, std::size_t j, std::size_t k) { return data[index(i, j, k)]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data[index(i, j, k)]; }
};

struct MaskedTensor3
{
  Tensor3 values;
  std::vector<std::uint8_t> mask;
  std::vector<int> counts;
  // Sizes of the concatenated distance axes (one entry unless augmented).
  std::vector<std::size_t> blocks;

  MaskedTensor3() = default;
  MaskedTensor3(std::size_t i, std::size_t j, std::size_t k)
      : values(i, j, k), mask(i * j * k, 0), counts(i * j * k, 0), blocks{k}
  {
  }

  std::size_t observed() const;
};

struct AggregateResult
{
  MaskedTensor3 tensor;
  std::size_t dropped = 0; // records outside the grid coverage
};

// Bin-wise mean of the records of one path.
AggregateResult aggregate(const MeasurementSet &measurements, const PolarGrid &grid, PathId path,
                          std::size_t n_beams);

// Concatenate the direct and reflected tensors along the distance mode.
MaskedTensor3 augment_reflection(const MaskedTensor3 &x0, const MaskedTensor3 &x1);

struct Unfolded
{
  Eigen::MatrixXd data; // (I*J) x K
  Eigen::MatrixXd mask; // 0/1, same shape
};

Unfolded mode3_unfold(const MaskedTensor3 &t);
Eigen::MatrixXd mode3_unfold(const Tensor3 &t);
Tensor3 mode3_fold(const Eigen::MatrixXd &unfolded, std::size_t dim_i, std::size_t dim_j);
MaskedTensor3 mode3_fold(const Unfolded &unfolded, std::size_t dim_i, std::size_t dim_j);

// Polar bin centres mapped back to Cartesian locations shared by every beam;
// values(m, i) is the tensor entry of beam i at location m. Centres outside
// the [0, L]^2 region are dropped.
struct ScatterSet
{
  std::vector<Point2> locations;
  std::vector<BinIndex> bins;
  Eigen::MatrixXd values; // locations x beams
};

ScatterSet scatter_to_cartesian(const Tensor3 &x_hat, const PolarGrid &grid, double region_size);

// Noiseless RSS evaluated at every in-region bin centre whose distance is at
// least min_distance; other bins are masked out.
MaskedTensor3 bin_center_tensor(const Scene &scene, const MirrorScene &mirror, const PolarGrid &grid, PathId path,
                                double min_distance = 1.0);

// Text tensor files: `TENSOR3 I J K` then the values in storage order, plus a
// `<path>.mask` companion with the same header and 0/1 entries.
void write_tensor(const std::string &path, const MaskedTensor3 &t);
void write_tensor(const std::string &path, const Tensor3 &t);
MaskedTensor3 read_tensor(const std::string &path);

} // namespace beammap
