// SPDX-License-Identifier: Apache-2.0

#include "beammap/interp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace beammap
{

BackMapper::BackMapper(const Scene &scene, const std::vector<PolarGrid> &grids, const BackMapOptions &options)
{
  if (grids.empty())
    throw std::invalid_argument("BackMapper: no source grids");
  cells_ = static_cast<std::size_t>(std::llround(scene.region_size));
  n_beams_ = scene.n_beams();
  resolution_ = scene.region_size / static_cast<double>(cells_);
  region_ = scene.region_size;
  queries_ = map_cell_centers(BeamMap(cells_, 0, resolution_));
  const double p = options.range_exponent.value_or(-2.0 * scene.path_loss_exp_clear);
  for (std::size_t s = 0; s < grids.size(); ++s)
  {
    Source src;
    src.grid = grids[s];
    // Only the locations matter here; values are filled per call.
    src.layout = scatter_to_cartesian(Tensor3(0, grids[s].n_angles(), grids[s].n_distance_bins), grids[s], region_);
    const Point2 origin = grids[s].source;

    double inner = std::numeric_limits<double>::infinity();
    src.sample_scale.resize(static_cast<Eigen::Index>(src.layout.locations.size()));
    for (std::size_t m = 0; m < src.layout.locations.size(); ++m)
    {
      const double d = distance(src.layout.locations[m], origin);
      if (d > 0.0)
        inner = std::min(inner, d);
      src.sample_scale(static_cast<Eigen::Index>(m)) = d > 0.0 ? std::pow(d, p) : 0.0;
    }

    src.queries = queries_;
    src.query_scale.resize(static_cast<Eigen::Index>(queries_.size()));
    for (std::size_t q = 0; q < queries_.size(); ++q)
    {
      const double d = distance(queries_[q], origin);
      src.query_scale(static_cast<Eigen::Index>(q)) = d > 0.0 ? std::pow(d, -p) : 0.0;
      if (options.clamp_inner && d > 0.0 && d < inner)
        src.queries[q] = origin + (inner / d) * (queries_[q] - origin);
    }

    try
    {
      src.system.emplace(src.layout.locations, options.tps);
      src.design = tps_design(src.system->centers(), src.queries);
    }
    catch (const std::invalid_argument &e)
    {
      fallbacks_.push_back("source " + std::to_string(s) + ": " + e.what() + "; using 3-NN");
    }
    sources_.push_back(std::move(src));
  }
}

BeamMap BackMapper::map_source(std::size_t s, const Tensor3 &tensor) const
{
  const Source &src = sources_.at(s);
  if (tensor.dim_i != n_beams_ || tensor.dim_j != src.grid.n_angles() || tensor.dim_k != src.grid.n_distance_bins)
    throw std::invalid_argument("BackMapper: tensor does not match its grid");
  Eigen::MatrixXd values(static_cast<Eigen::Index>(src.layout.bins.size()), static_cast<Eigen::Index>(n_beams_));
  for (std::size_t m = 0; m < src.layout.bins.size(); ++m)
    for (std::size_t i = 0; i < n_beams_; ++i)
      values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)) =
          tensor(i, src.layout.bins[m].angle, src.layout.bins[m].distance);
  values = src.sample_scale.asDiagonal() * values;
  Eigen::MatrixXd pred;
  if (src.system)
    pred = src.design * src.system->solve(values);
  else if (!src.layout.locations.empty())
    pred = knn_predict(src.layout.locations, values, src.queries,
                       std::min<std::size_t>(3, src.layout.locations.size()));
  else
    pred = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(queries_.size()), static_cast<Eigen::Index>(n_beams_));
  pred = src.query_scale.asDiagonal() * pred.cwiseMax(0.0);
  return to_beam_map(pred, cells_, resolution_);
}

BeamMap BackMapper::map(const std::vector<Tensor3> &tensors) const
{
  if (tensors.size() != sources_.size())
    throw std::invalid_argument("BackMapper: one tensor per source expected");
  BeamMap total(cells_, n_beams_, resolution_);
  for (std::size_t s = 0; s < tensors.size(); ++s)
  {
    const BeamMap part = map_source(s, tensors[s]);
    for (std::size_t n = 0; n < total.values.size(); ++n)
      total.values[n] += part.values[n];
  }
  return total;
}

BeamMap back_map(const std::vector<PolarSource> &sources, const Scene &scene, const BackMapOptions &options)
{
  std::vector<PolarGrid> grids;
  std::vector<Tensor3> tensors;
  for (const auto &s : sources)
  {
    grids.push_back(s.grid);
    tensors.push_back(s.tensor);
  }
  return BackMapper(scene, grids, options).map(tensors);
}

} // namespace beammap
