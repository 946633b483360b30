// SPDX-License-Identifier: Apache-2.0

#include "beammap/interp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <stdexcept>

namespace beammap
{

double tps_kernel(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

namespace
{
double kernel_sq(double r2) { return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0; }

void check_not_collinear(const std::vector<Point2> &c)
{
  if (c.size() < 3)
    throw std::invalid_argument("thin-plate spline needs at least 3 distinct points");
  Point2 mean{0.0, 0.0};
  for (const auto &p : c)
    mean = mean + p;
  mean = (1.0 / static_cast<double>(c.size())) * mean;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto &p : c)
  {
    const Point2 d = p - mean;
    sxx += d.x * d.x;
    syy += d.y * d.y;
    sxy += d.x * d.y;
  }
  const double tr = sxx + syy;
  const double det = sxx * syy - sxy * sxy;
  // smallest/largest eigenvalue of the scatter matrix
  if (!(tr > 0.0) || det <= 1e-12 * tr * tr)
    throw std::invalid_argument("thin-plate spline points are collinear");
}
} // namespace

TpsSystem::TpsSystem(const std::vector<Point2> &points, const TpsOptions &options)
{
  // Exact duplicates are merged; bin centres at a common source coincide exactly.
  std::map<std::pair<double, double>, std::size_t> seen;
  group_.resize(points.size());
  std::vector<double> sizes;
  for (std::size_t m = 0; m < points.size(); ++m)
  {
    if (!std::isfinite(points[m].x) || !std::isfinite(points[m].y))
      throw std::invalid_argument("thin-plate spline point is not finite");
    const auto key = std::make_pair(points[m].x, points[m].y);
    const auto it = seen.find(key);
    if (it == seen.end())
    {
      seen.emplace(key, centers_.size());
      group_[m] = centers_.size();
      centers_.push_back(points[m]);
      sizes.push_back(1.0);
    }
    else
    {
      group_[m] = it->second;
      sizes[it->second] += 1.0;
    }
  }
  check_not_collinear(centers_);
  group_size_ = Eigen::Map<const Eigen::VectorXd>(sizes.data(), static_cast<Eigen::Index>(sizes.size()));

  const auto n = static_cast<Eigen::Index>(centers_.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 3, n + 3);
  double mean_abs = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
  {
    for (Eigen::Index i = 0; i < j; ++i)
    {
      const Point2 d = centers_[static_cast<std::size_t>(i)] - centers_[static_cast<std::size_t>(j)];
      const double u = kernel_sq(d.x * d.x + d.y * d.y);
      a(i, j) = u;
      a(j, i) = u;
      mean_abs += 2.0 * std::abs(u);
    }
    const Point2 &p = centers_[static_cast<std::size_t>(j)];
    a(j, n) = a(n, j) = 1.0;
    a(j, n + 1) = a(n + 1, j) = p.x;
    a(j, n + 2) = a(n + 2, j) = p.y;
  }
  mean_abs /= static_cast<double>(n * n);
  smoothing_ = options.smoothing ? *options.smoothing : options.relative_smoothing * mean_abs;
  if (smoothing_ < 0.0)
    throw std::invalid_argument("thin-plate spline smoothing must be nonnegative");
  a.topLeftCorner(n, n).diagonal().array() += smoothing_;
  lu_.compute(a);
}

Eigen::MatrixXd TpsSystem::solve(const Eigen::MatrixXd &values) const
{
  if (values.rows() != static_cast<Eigen::Index>(group_.size()))
    throw std::invalid_argument("TpsSystem::solve: one value row per point expected");
  const auto n = static_cast<Eigen::Index>(centers_.size());
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, values.cols());
  for (std::size_t m = 0; m < group_.size(); ++m)
    rhs.row(static_cast<Eigen::Index>(group_[m])) += values.row(static_cast<Eigen::Index>(m));
  rhs.topRows(n).array().colwise() /= group_size_.array();
  return lu_.solve(rhs);
}

TpsModel TpsSystem::fit(const Eigen::VectorXd &values) const
{
  TpsModel m;
  m.centers = centers_;
  m.weights = solve(values).col(0);
  m.smoothing = smoothing_;
  return m;
}

TpsModel tps_fit(const std::vector<Point2> &points, const Eigen::VectorXd &values, const TpsOptions &options)
{
  if (static_cast<std::size_t>(values.size()) != points.size())
    throw std::invalid_argument("tps_fit: one value per point expected");
  return TpsSystem(points, options).fit(values);
}

Eigen::MatrixXd tps_design(const std::vector<Point2> &centers, const std::vector<Point2> &queries)
{
  const auto n = static_cast<Eigen::Index>(centers.size());
  Eigen::MatrixXd e(static_cast<Eigen::Index>(queries.size()), n + 3);
  for (std::size_t q = 0; q < queries.size(); ++q)
  {
    const auto row = static_cast<Eigen::Index>(q);
    for (Eigen::Index m = 0; m < n; ++m)
    {
      const Point2 d = queries[q] - centers[static_cast<std::size_t>(m)];
      e(row, m) = kernel_sq(d.x * d.x + d.y * d.y);
    }
    e(row, n) = 1.0;
    e(row, n + 1) = queries[q].x;
    e(row, n + 2) = queries[q].y;
  }
  return e;
}

double tps_eval(const TpsModel &model, Point2 query) { return tps_eval(model, std::vector<Point2>{query})(0); }

Eigen::VectorXd tps_eval(const TpsModel &model, const std::vector<Point2> &queries)
{
  if (model.weights.size() != static_cast<Eigen::Index>(model.centers.size()) + 3)
    throw std::invalid_argument("tps_eval: malformed model");
  return tps_design(model.centers, queries) * model.weights;
}

std::vector<std::size_t> nearest_indices(const std::vector<Point2> &points, Point2 query, std::size_t k)
{
  if (points.empty())
    throw std::invalid_argument("nearest neighbours of an empty point set");
  if (k == 0 || k > points.size())
    throw std::invalid_argument("k must lie in [1, number of points]");
  std::vector<std::pair<double, std::size_t>> d(points.size());
  for (std::size_t m = 0; m < points.size(); ++m)
  {
    const Point2 v = points[m] - query;
    d[m] = {v.x * v.x + v.y * v.y, m};
  }
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t m = 0; m < k; ++m)
    out[m] = d[m].second;
  return out;
}

double knn_predict(const KnnModel &model, Point2 query)
{
  if (model.values.size() != model.points.size())
    throw std::invalid_argument("knn_predict: one value per point expected");
  const auto idx = nearest_indices(model.points, query, model.k);
  double acc = 0.0;
  for (const auto m : idx)
    acc += model.values[m];
  return acc / static_cast<double>(idx.size());
}

Eigen::MatrixXd knn_predict(const std::vector<Point2> &points, const Eigen::MatrixXd &values,
                            const std::vector<Point2> &queries, std::size_t k)
{
  if (values.rows() != static_cast<Eigen::Index>(points.size()))
    throw std::invalid_argument("knn_predict: one value row per point expected");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(queries.size()), values.cols());
  for (std::size_t q = 0; q < queries.size(); ++q)
  {
    const auto idx = nearest_indices(points, queries[q], k);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(values.cols());
    for (const auto m : idx)
      acc += values.row(static_cast<Eigen::Index>(m));
    out.row(static_cast<Eigen::Index>(q)) = acc / static_cast<double>(idx.size());
  }
  return out;
}

std::vector<Point2> map_cell_centers(const BeamMap &shape)
{
  std::vector<Point2> out;
  out.reserve(shape.cells * shape.cells);
  for (std::size_t iy = 0; iy < shape.cells; ++iy)
    for (std::size_t ix = 0; ix < shape.cells; ++ix)
      out.push_back(shape.cell_center(ix, iy));
  return out;
}

BeamMap to_beam_map(const Eigen::MatrixXd &cell_values, std::size_t cells, double resolution)
{
  if (cell_values.rows() != static_cast<Eigen::Index>(cells * cells))
    throw std::invalid_argument("to_beam_map: one row per cell expected");
  BeamMap map(cells, static_cast<std::size_t>(cell_values.cols()), resolution);
  std::copy(cell_values.data(), cell_values.data() + cell_values.size(), map.values.begin());
  return map;
}

void write_beam_map(const std::string &path, const BeamMap &map)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "BEAMMAP " << map.cells << ' ' << map.cells << ' ' << map.n_beams << '\n';
  for (std::size_t n = 0; n < map.values.size(); ++n)
    out << map.values[n] << ((n + 1) % map.cells == 0 ? '\n' : ' ');
}

BeamMap read_beam_map(const std::string &path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  std::string tag;
  std::size_t lx = 0, ly = 0, beams = 0;
  if (!(in >> tag >> lx >> ly >> beams) || tag != "BEAMMAP")
    throw std::runtime_error(path + ": expected `BEAMMAP L L I` header");
  if (lx != ly)
    throw std::runtime_error(path + ": beam maps must be square");
  BeamMap map(lx, beams);
  for (auto &v : map.values)
    if (!(in >> v))
      throw std::runtime_error(path + ": truncated beam map");
  return map;
}

} // namespace beammap
