// SPDX-License-Identifier: Apache-2.0
//
// Scattered-data interpolation on the plane: thin-plate splines
//
//   f(q) = a0 + a1 q_x + a2 q_y + sum_m w_m U(|q - p_m|),  U(r) = r^2 log r,
//
// with the side conditions sum w = sum w x = sum w y = 0, and a brute-force
// k-nearest-neighbour mean. Both serve as per-beam baselines on raw
// measurements and as the map from reconstructed polar tensors back to the
// Cartesian grid.

#pragma once

#include "beammap/polar.hpp"
#include "beammap/scene.hpp"

#include <Eigen/Core>
#include <Eigen/LU>

#include <optional>
#include <string>
#include <vector>

namespace beammap
{

double tps_kernel(double r);

struct TpsOptions
{
  // Absolute kernel-diagonal smoothing; when absent, relative_smoothing times
  // the mean kernel magnitude is used.
  std::optional<double> smoothing;
  double relative_smoothing = 1e-6;
};

struct TpsModel
{
  std::vector<Point2> centers;
  Eigen::VectorXd weights; // one per center, then a0, a1, a2
  double smoothing = 0.0;
};

// Shared factorization for many right-hand sides over one set of points.
// Coincident points are merged and their values averaged.
class TpsSystem
{
public:
  // Throws std::invalid_argument for fewer than 3 distinct or collinear points.
  TpsSystem(const std::vector<Point2> &points, const TpsOptions &options = {});

  const std::vector<Point2> &centers() const { return centers_; }
  double smoothing() const { return smoothing_; }

  // values: points x columns, rows in the order of the constructor points.
  // Returns (centers + 3) x columns coefficient matrix.
  Eigen::MatrixXd solve(const Eigen::MatrixXd &values) const;

  TpsModel fit(const Eigen::VectorXd &values) const;

private:
  std::vector<Point2> centers_;
  std::vector<std::size_t> group_; // point -> center
  Eigen::VectorXd group_size_;
  double smoothing_ = 0.0;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

TpsModel tps_fit(const std::vector<Point2> &points, const Eigen::VectorXd &values, const TpsOptions &options = {});

double tps_eval(const TpsModel &model, Point2 query);
Eigen::VectorXd tps_eval(const TpsModel &model, const std::vector<Point2> &queries);

// Queries x (centers + 3) evaluation matrix; multiplying by coefficients from
// TpsSystem::solve evaluates every column at once.
Eigen::MatrixXd tps_design(const std::vector<Point2> &centers, const std::vector<Point2> &queries);

struct KnnModel
{
  std::vector<Point2> points;
  std::vector<double> values;
  std::size_t k = 3;
};

// Indices of the k nearest points, nearest first; ties go to the lower index.
std::vector<std::size_t> nearest_indices(const std::vector<Point2> &points, Point2 query, std::size_t k);

// Unweighted mean of the k nearest values. Throws std::invalid_argument on an
// empty model or k outside [1, points].
double knn_predict(const KnnModel &model, Point2 query);

// Per-column KNN for values (points x columns) at all queries.
Eigen::MatrixXd knn_predict(const std::vector<Point2> &points, const Eigen::MatrixXd &values,
                            const std::vector<Point2> &queries, std::size_t k);

// Cell centres of the L x L map in map order (x fastest).
std::vector<Point2> map_cell_centers(const BeamMap &shape);

// Copies a (cells^2 x beams) prediction matrix into a beam map.
BeamMap to_beam_map(const Eigen::MatrixXd &cell_values, std::size_t cells, double resolution);

// One reconstructed polar tensor together with the grid of its source.
struct PolarSource
{
  Tensor3 tensor;
  PolarGrid grid;
};

struct BackMapOptions
{
  TpsOptions tps;
  // Samples are interpolated as value * d^p, d the distance to the source,
  // and the spline is divided by d^p again; p = 0 interpolates raw power.
  // Unset: -2 x the clear path-loss exponent of the scene.
  std::optional<double> range_exponent;
  // Cells closer to a source than its innermost in-region bin centre are
  // evaluated on that ring along their own bearing.
  bool clamp_inner = true;
};

// Maps reconstructed polar tensors to the Cartesian grid: bin centres of each
// source become scattered samples, one thin-plate spline per beam and source
// is evaluated at the cell centres, negative values are clipped to 0 and the
// per-source maps are summed. The spline system only depends on the grids,
// so it is factorized once per source and reused across calls.
class BackMapper
{
public:
  BackMapper(const Scene &scene, const std::vector<PolarGrid> &grids, const BackMapOptions &options = {});

  // tensors[s] belongs to grids[s]. Sources with too few in-region bin
  // centres fall back to 3-NN and are listed in fallbacks().
  BeamMap map(const std::vector<Tensor3> &tensors) const;
  // Map of a single source.
  BeamMap map_source(std::size_t source, const Tensor3 &tensor) const;

  const std::vector<std::string> &fallbacks() const { return fallbacks_; }

private:
  struct Source
  {
    PolarGrid grid;
    ScatterSet layout;
    std::optional<TpsSystem> system;
    Eigen::MatrixXd design;
    std::vector<Point2> queries;      // cell centres, clamped to the inner ring
    Eigen::VectorXd sample_scale;     // d^p per bin centre
    Eigen::VectorXd query_scale;      // d^-p per cell
  };
  std::size_t cells_ = 0;
  std::size_t n_beams_ = 0;
  double resolution_ = 1.0;
  double region_ = 0.0;
  std::vector<Point2> queries_;
  std::vector<Source> sources_;
  std::vector<std::string> fallbacks_;
};

BeamMap back_map(const std::vector<PolarSource> &sources, const Scene &scene, const BackMapOptions &options = {});

// `BEAMMAP L L I` header then the values in map order.
void write_beam_map(const std::string &path, const BeamMap &map);
BeamMap read_beam_map(const std::string &path);

} // namespace beammap
