#pragma once

// File formats:
//   VXG1 text    "VXG1 <R> <D> <count>\n" then one "x y z f0 .. f{D-1}" line per
//                voxel in lexicographic order; floats in shortest round-trip form.
//   VXG1 binary  "VXG1\0", then little-endian u32 R, D, count, and per voxel
//                u32 x, y, z followed by D little-endian IEEE-754 float32.
//   VXM1         "VXM1 <R> <count>\n" then one "x y z" line per member.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxedit/error.hpp"
#include "voxedit/voxel.hpp"

namespace voxedit {

namespace io {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFault, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFault, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoFault, "short write to " + path.string());
}

template <class T>
std::string format_number(T value) {
  static_assert(std::is_arithmetic_v<T>);
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  require(ec == std::errc{}, ErrorCode::IoFault, "number formatting failed");
  return {buf.data(), end};
}

/// Whitespace tokenizer over an in-memory document.
class Tokens {
 public:
  explicit Tokens(std::string_view text, std::string source = "input")
      : text_(text), source_(std::move(source)) {}

  bool done() {
    skip();
    return pos_ >= text_.size();
  }

  std::string_view next() {
    skip();
    require(pos_ < text_.size(), ErrorCode::IoFault, source_ + ": unexpected end of input");
    const auto start = pos_;
    while (pos_ < text_.size() && !is_space(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  /// Rest of the current line (for "key=value" style headers).
  std::string_view line() {
    skip();
    const auto start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    return text_.substr(start, pos_ - start);
  }

  template <class T>
  T number() {
    const auto tok = next();
    T value{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    require(ec == std::errc{} && ptr == tok.data() + tok.size(), ErrorCode::IoFault,
            source_ + ": bad number '" + std::string(tok) + "'");
    return value;
  }

  void expect(std::string_view word) {
    const auto tok = next();
    require(tok == word, ErrorCode::IoFault,
            source_ + ": expected '" + std::string(word) + "' got '" + std::string(tok) + "'");
  }

  std::size_t position() const { return pos_; }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; }
  void skip() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }

  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
  require(pos + 4 <= in.size(), ErrorCode::IoFault, "truncated binary grid");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace io

/// Writes one VXG1 text block. T is float for latent grids, double for
/// trajectory dumps.
template <class T>
void write_vxg1_block(std::ostream& out, const GridDims& dims, std::span<const VoxelCoord> coords,
                      std::span<const T> values) {
  const auto d = static_cast<std::size_t>(dims.channels);
  require(values.size() == coords.size() * d, ErrorCode::ShapeFault, "VXG1 value count mismatch");
  out << "VXG1 " << dims.resolution << ' ' << dims.channels << ' ' << coords.size() << '\n';
  for (std::size_t i = 0; i < coords.size(); ++i) {
    out << coords[i].x << ' ' << coords[i].y << ' ' << coords[i].z;
    for (std::size_t c = 0; c < d; ++c) out << ' ' << io::format_number(values[i * d + c]);
    out << '\n';
  }
}

template <class T>
struct GridBlock {
  GridDims dims;
  CoordSet coords;
  std::vector<T> values;
};

template <class T>
GridBlock<T> read_vxg1_block(io::Tokens& tokens) {
  tokens.expect("VXG1");
  GridBlock<T> block;
  block.dims.resolution = tokens.number<int>();
  block.dims.channels = tokens.number<int>();
  block.dims.validate();
  const auto count = tokens.number<std::size_t>();
  block.coords.reserve(count);
  block.values.reserve(count * static_cast<std::size_t>(block.dims.channels));
  for (std::size_t i = 0; i < count; ++i) {
    VoxelCoord c{tokens.number<int>(), tokens.number<int>(), tokens.number<int>()};
    block.coords.push_back(c);
    for (int ch = 0; ch < block.dims.channels; ++ch) block.values.push_back(tokens.number<T>());
  }
  return block;
}

inline std::string to_vxg1_text(const LatentGrid& grid) {
  std::ostringstream out;
  write_vxg1_block<float>(out, grid.dims(), grid.coords(), grid.feature_buffer());
  return out.str();
}

inline std::string to_vxg1_binary(const LatentGrid& grid) {
  std::string out("VXG1", 4);
  out.push_back('\0');
  io::put_u32(out, static_cast<std::uint32_t>(grid.dims().resolution));
  io::put_u32(out, static_cast<std::uint32_t>(grid.dims().channels));
  io::put_u32(out, static_cast<std::uint32_t>(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& c = grid.coord(i);
    io::put_u32(out, static_cast<std::uint32_t>(c.x));
    io::put_u32(out, static_cast<std::uint32_t>(c.y));
    io::put_u32(out, static_cast<std::uint32_t>(c.z));
    for (float f : grid.features(i)) io::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

/// Parses either VXG1 encoding; the fifth byte selects text (' ') or binary ('\0').
inline LatentGrid parse_vxg1(std::string_view bytes, const std::string& source = "grid") {
  require(bytes.size() >= 5 && bytes.substr(0, 4) == "VXG1", ErrorCode::IoFault,
          source + ": missing VXG1 magic");
  if (bytes[4] == '\0') {
    std::size_t pos = 5;
    GridDims dims;
    dims.resolution = static_cast<int>(io::get_u32(bytes, pos));
    dims.channels = static_cast<int>(io::get_u32(bytes, pos));
    const auto count = io::get_u32(bytes, pos);
    CoordSet coords;
    std::vector<float> values;
    for (std::uint32_t i = 0; i < count; ++i) {
      VoxelCoord c;
      c.x = static_cast<int>(io::get_u32(bytes, pos));
      c.y = static_cast<int>(io::get_u32(bytes, pos));
      c.z = static_cast<int>(io::get_u32(bytes, pos));
      coords.push_back(c);
      for (int ch = 0; ch < dims.channels; ++ch)
        values.push_back(std::bit_cast<float>(io::get_u32(bytes, pos)));
    }
    return LatentGrid(dims, std::move(coords), std::move(values));
  }
  io::Tokens tokens(bytes, source);
  auto block = read_vxg1_block<float>(tokens);
  return LatentGrid(block.dims, std::move(block.coords), std::move(block.values));
}

inline void save_grid(const LatentGrid& grid, const std::filesystem::path& path, bool binary = false) {
  io::write_file(path, binary ? to_vxg1_binary(grid) : to_vxg1_text(grid));
}

inline LatentGrid load_grid(const std::filesystem::path& path) {
  return parse_vxg1(io::read_file(path), path.string());
}

inline std::string to_vxm1(const VoxelMask& mask) {
  std::ostringstream out;
  const auto members = mask.members();
  out << "VXM1 " << mask.resolution() << ' ' << members.size() << '\n';
  for (const auto& c : members) out << c.x << ' ' << c.y << ' ' << c.z << '\n';
  return out.str();
}

inline VoxelMask parse_vxm1(std::string_view text, const std::string& source = "mask") {
  io::Tokens tokens(text, source);
  tokens.expect("VXM1");
  const int r = tokens.number<int>();
  const auto count = tokens.number<std::size_t>();
  VoxelMask mask(r);
  for (std::size_t i = 0; i < count; ++i)
    mask.insert({tokens.number<int>(), tokens.number<int>(), tokens.number<int>()});
  return mask;
}

inline void save_mask(const VoxelMask& mask, const std::filesystem::path& path) {
  io::write_file(path, to_vxm1(mask));
}

inline VoxelMask load_mask(const std::filesystem::path& path) {
  return parse_vxm1(io::read_file(path), path.string());
}

/// ASCII PLY with one vertex per occupied voxel; color from the first three
/// feature channels clamped to [0,1].
inline std::string to_ply(const LatentGrid& grid) {
  require(!grid.empty(), ErrorCode::Precondition, "cannot export an empty grid to PLY");
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\nelement vertex " << grid.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& c = grid.coord(i);
    const auto f = grid.features(i);
    out << c.x << ' ' << c.y << ' ' << c.z;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const float v = ch < f.size() ? std::clamp(f[ch], 0.0f, 1.0f) : 0.0f;
      out << ' ' << static_cast<int>(std::lround(v * 255.0f));
    }
    out << '\n';
  }
  return out.str();
}

inline void export_ply(const LatentGrid& grid, const std::filesystem::path& path) {
  io::write_file(path, to_ply(grid));
}

/// Reads back the vertex positions of an ASCII PLY written by to_ply.
inline CoordSet read_ply_vertices(std::string_view text) {
  io::Tokens tokens(text, "ply");
  std::size_t count = 0;
  int properties = 0;
  for (;;) {
    const auto tok = tokens.next();
    if (tok == "element") {
      tokens.expect("vertex");
      count = tokens.number<std::size_t>();
    } else if (tok == "property") {
      tokens.next();
      tokens.next();
      ++properties;
    } else if (tok == "end_header") {
      break;
    }
  }
  CoordSet coords;
  for (std::size_t i = 0; i < count; ++i) {
    VoxelCoord c{tokens.number<int>(), tokens.number<int>(), tokens.number<int>()};
    for (int p = 3; p < properties; ++p) tokens.next();
    coords.push_back(c);
  }
  return make_coord_set(std::move(coords));
}

/// Labels JSON: {"x,y,z": part_id, ..., "part_count": S}.
inline nlohmann::json labels_to_json(const PartLabeling& labeling) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [c, label] : labeling.labels)
    j[std::to_string(c.x) + "," + std::to_string(c.y) + "," + std::to_string(c.z)] = label;
  j["part_count"] = labeling.part_count;
  return j;
}

inline PartLabeling labels_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("part_count"), ErrorCode::IoFault,
          "labels file needs an object with part_count");
  PartLabeling out;
  out.part_count = j.at("part_count").get<int>();
  for (const auto& [key, value] : j.items()) {
    if (key == "part_count") continue;
    VoxelCoord c;
    const int n = std::sscanf(key.c_str(), "%d,%d,%d", &c.x, &c.y, &c.z);
    require(n == 3, ErrorCode::IoFault, "bad labels key '" + key + "'");
    const int label = value.get<int>();
    require(label >= 0 && label < out.part_count, ErrorCode::IoFault,
            "label " + std::to_string(label) + " outside [0, part_count)");
    out.labels.emplace(c, label);
  }
  return out;
}

inline void save_labels(const PartLabeling& labeling, const std::filesystem::path& path) {
  io::write_file(path, labels_to_json(labeling).dump(1) + "\n");
}

inline PartLabeling load_labels(const std::filesystem::path& path) {
  return labels_from_json(nlohmann::json::parse(io::read_file(path)));
}

}  // namespace voxedit
