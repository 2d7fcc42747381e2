#pragma once

// Flat binary checkpoints.
//
//   "NEON" | version u32 | [v2: index_dim u32, decoder kind u32, prior scale f64]
//   | layer count u32 | per layer: name length u32, UTF-8 name, rows u32,
//   cols u32, row-major f64 weight (rows*cols), f64 bias (rows).
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "neon/nn.hpp"

namespace neon {

inline constexpr std::uint32_t kParamTreeVersion = 1;
inline constexpr std::uint32_t kModelVersion = 2;

void write_param_tree(std::ostream& out, const nn::ParamTree& params);
nn::ParamTree read_param_tree(std::istream& in);

void save_param_tree(const std::filesystem::path& path, const nn::ParamTree& params);
nn::ParamTree load_param_tree(const std::filesystem::path& path);

namespace detail {
void write_u32(std::ostream& out, std::uint32_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
double read_f64(std::istream& in);
void write_magic(std::ostream& out, std::uint32_t version);
std::uint32_t read_magic(std::istream& in);
void write_layers(std::ostream& out, const nn::ParamTree& params);
nn::ParamTree read_layers(std::istream& in);
}  // namespace detail

}  // namespace neon
