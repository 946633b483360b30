// SPDX-License-Identifier: Apache-2.0

#include "beammap/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace beammap
{

std::string trim(const std::string &text)
{
  const auto b = text.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return {};
  const auto e = text.find_last_not_of(" \t\r\n");
  return text.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string &text, char sep)
{
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep))
  {
    item = trim(item);
    if (!item.empty())
      out.push_back(item);
  }
  return out;
}

std::vector<KeyValue> parse_key_values(const std::string &text)
{
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line))
  {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(n) + ": expected `key = value`");
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), n};
    if (kv.key.empty())
      throw std::invalid_argument("config line " + std::to_string(n) + ": empty key");
    out.push_back(std::move(kv));
  }
  return out;
}

std::vector<KeyValue> read_key_value_file(const std::string &path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

double parse_double(const std::string &text, const std::string &what)
{
  const std::string t = trim(text);
  char *end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE)
    throw std::invalid_argument(what + ": not a number: '" + text + "'");
  return v;
}

long long parse_integer(const std::string &text, const std::string &what)
{
  const std::string t = trim(text);
  char *end = nullptr;
  errno = 0;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE)
    throw std::invalid_argument(what + ": not an integer: '" + text + "'");
  return v;
}

bool parse_bool(const std::string &text, const std::string &what)
{
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on")
    return true;
  if (t == "false" || t == "0" || t == "no" || t == "off")
    return false;
  throw std::invalid_argument(what + ": not a boolean: '" + text + "'");
}

std::vector<double> parse_double_list(const std::string &text, const std::string &what)
{
  std::vector<double> out;
  for (const auto &item : split_list(text))
    out.push_back(parse_double(item, what));
  if (out.empty())
    throw std::invalid_argument(what + ": empty list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string &text, const std::string &what)
{
  std::vector<std::uint64_t> out;
  for (const auto &item : split_list(text))
  {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos)
    {
      const long long v = parse_integer(item, what);
      if (v < 0)
        throw std::invalid_argument(what + ": seeds must be nonnegative");
      out.push_back(static_cast<std::uint64_t>(v));
      continue;
    }
    const long long a = parse_integer(item.substr(0, dash), what);
    const long long b = parse_integer(item.substr(dash + 1), what);
    if (a < 0 || b < a)
      throw std::invalid_argument(what + ": bad seed range '" + item + "'");
    for (long long s = a; s <= b; ++s)
      out.push_back(static_cast<std::uint64_t>(s));
  }
  if (out.empty())
    throw std::invalid_argument(what + ": empty seed list");
  return out;
}

} // namespace beammap
