// SPDX-License-Identifier: Apache-2.0
//
// Flat key-value configuration files:
//
//   # comment
//   scene.region_size = 48
//   experiment.sampling_ratios = 0.04, 0.06
//   scene.obstruction = 32,26; 26,32; 30,38; 38,32
//
// Keys may repeat only where a list of entries makes sense (obstructions).

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace beammap
{

struct KeyValue
{
  std::string key;
  std::string value;
  int line = 0;
};

// Throws std::invalid_argument naming the line on malformed input.
std::vector<KeyValue> parse_key_values(const std::string &text);
std::vector<KeyValue> read_key_value_file(const std::string &path);

double parse_double(const std::string &text, const std::string &what);
long long parse_integer(const std::string &text, const std::string &what);
bool parse_bool(const std::string &text, const std::string &what);
std::vector<double> parse_double_list(const std::string &text, const std::string &what);
// Accepts comma-separated values and inclusive ranges such as `1-10`.
std::vector<std::uint64_t> parse_seed_list(const std::string &text, const std::string &what);
std::vector<std::string> split_list(const std::string &text, char sep = ',');
std::string trim(const std::string &text);

} // namespace beammap
