// SPDX-License-Identifier: Apache-2.0

#include "beammap/polar.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace beammap
{

namespace
{
void write_header(std::ostream &out, const Tensor3 &t)
{
  out << "TENSOR3 " << t.dim_i << ' ' << t.dim_j << ' ' << t.dim_k << '\n';
}

std::ofstream open_out(const std::string &path)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

Tensor3 read_values(const std::string &path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  std::string tag;
  std::size_t i = 0, j = 0, k = 0;
  if (!(in >> tag >> i >> j >> k) || tag != "TENSOR3")
    throw std::runtime_error(path + ": expected `TENSOR3 I J K` header");
  Tensor3 t(i, j, k);
  for (auto &v : t.data)
    if (!(in >> v))
      throw std::runtime_error(path + ": truncated tensor data");
  return t;
}
} // namespace

void write_tensor(const std::string &path, const Tensor3 &t)
{
  auto out = open_out(path);
  write_header(out, t);
  for (std::size_t n = 0; n < t.size(); ++n)
    out << t.data[n] << ((n + 1) % t.dim_i == 0 ? '\n' : ' ');
}

void write_tensor(const std::string &path, const MaskedTensor3 &t)
{
  write_tensor(path, t.values);
  auto out = open_out(path + ".mask");
  write_header(out, t.values);
  for (std::size_t n = 0; n < t.mask.size(); ++n)
    out << static_cast<int>(t.mask[n]) << ((n + 1) % t.values.dim_i == 0 ? '\n' : ' ');
}

MaskedTensor3 read_tensor(const std::string &path)
{
  MaskedTensor3 out;
  out.values = read_values(path);
  const Tensor3 m = read_values(path + ".mask");
  if (m.dim_i != out.values.dim_i || m.dim_j != out.values.dim_j || m.dim_k != out.values.dim_k)
    throw std::runtime_error(path + ".mask: shape does not match the tensor");
  out.mask.resize(m.size());
  out.counts.resize(m.size());
  for (std::size_t n = 0; n < m.size(); ++n)
  {
    if (m.data[n] != 0.0 && m.data[n] != 1.0)
      throw std::runtime_error(path + ".mask: entries must be 0 or 1");
    out.mask[n] = m.data[n] == 1.0 ? 1 : 0;
    out.counts[n] = out.mask[n];
  }
  out.blocks = {out.values.dim_k};
  return out;
}

} // namespace beammap
