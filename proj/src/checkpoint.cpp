#include "neon/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "neon/error.hpp"

namespace neon {

namespace detail {

namespace {

template <typename U>
void write_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in) {
  std::array<char, sizeof(U)> bytes{};
  if (!in.read(bytes.data(), bytes.size())) throw ConfigError("checkpoint: unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

void write_magic(std::ostream& out, std::uint32_t version) {
  out.write("NEON", 4);
  write_u32(out, version);
}

std::uint32_t read_magic(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || std::string_view(magic.data(), 4) != "NEON")
    throw ConfigError("checkpoint: bad magic");
  return read_u32(in);
}

void write_layers(std::ostream& out, const nn::ParamTree& params) {
  write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& l : params.layers()) {
    write_u32(out, static_cast<std::uint32_t>(l.name.size()));
    out.write(l.name.data(), static_cast<std::streamsize>(l.name.size()));
    write_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
    write_u32(out, static_cast<std::uint32_t>(l.weight.cols()));
    for (nn::Index i = 0; i < l.weight.rows(); ++i)
      for (nn::Index j = 0; j < l.weight.cols(); ++j) write_f64(out, l.weight(i, j));
    for (nn::Index i = 0; i < l.bias.size(); ++i) write_f64(out, l.bias(i));
  }
}

nn::ParamTree read_layers(std::istream& in) {
  const std::uint32_t count = read_u32(in);
  nn::ParamTree params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = read_u32(in);
    if (len > (1u << 16)) throw ConfigError("checkpoint: implausible layer name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ConfigError("checkpoint: truncated layer name");
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28))
      throw ConfigError("checkpoint: implausible layer shape");
    nn::Matrix w(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) w(i, j) = read_f64(in);
    nn::Vector b(rows);
    for (std::uint32_t i = 0; i < rows; ++i) b(i) = read_f64(in);
    params.add(std::move(name), std::move(w), std::move(b));
  }
  return params;
}

}  // namespace detail

void write_param_tree(std::ostream& out, const nn::ParamTree& params) {
  detail::write_magic(out, kParamTreeVersion);
  detail::write_layers(out, params);
}

nn::ParamTree read_param_tree(std::istream& in) {
  const std::uint32_t version = detail::read_magic(in);
  if (version != kParamTreeVersion)
    throw ConfigError("checkpoint: expected parameter-tree version 1, found " +
                      std::to_string(version));
  return detail::read_layers(in);
}

void save_param_tree(const std::filesystem::path& path, const nn::ParamTree& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  write_param_tree(out, params);
}

nn::ParamTree load_param_tree(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return read_param_tree(in);
}

}  // namespace neon
