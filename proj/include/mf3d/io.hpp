#pragma once

// File formats: ASCII XYZ / OFF / OBJ in, ASCII PLY out, and the "MF3D"
// binary target cache.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/pointcloud.hpp"
#include "mf3d/rng.hpp"

namespace mf3d {

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline bool parse_double(std::string_view token, double& out) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size() && std::isfinite(out);
}

inline bool parse_long(std::string_view token, long& out) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size();
}

inline std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

inline bool blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// XYZ

inline PointCloud parse_xyz(std::istream& in, const std::string& source = "<xyz>") {
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    const auto tokens = detail::split_ws(line);
    if (tokens.size() < 3) throw ParseError(source, lineno, "expected at least 3 numeric fields");
    Vec3 p;
    for (int a = 0; a < 3; ++a)
      if (!detail::parse_double(tokens[a], p[a]))
        throw ParseError(source, lineno, "non-numeric field '" + std::string(tokens[a]) + "'");
    cloud.points.push_back(p);
  }
  if (cloud.empty()) throw ParseError(source, lineno, "file contains no points");
  return cloud;
}

inline PointCloud parse_xyz(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_xyz(in, path.string());
}

// ---------------------------------------------------------------------------
// OFF / OBJ

namespace detail {

inline void fan_triangulate(const std::vector<long>& poly, TriangleMesh& mesh, const std::string& source,
                            std::size_t lineno) {
  if (poly.size() < 3) throw ParseError(source, lineno, "face with fewer than 3 vertices");
  for (std::size_t i = 1; i + 1 < poly.size(); ++i)
    mesh.faces.push_back({static_cast<std::uint32_t>(poly[0]), static_cast<std::uint32_t>(poly[i]),
                          static_cast<std::uint32_t>(poly[i + 1])});
}

inline void check_index(long idx, std::size_t nverts, const std::string& source, std::size_t lineno) {
  if (idx < 0 || static_cast<std::size_t>(idx) >= nverts)
    throw ParseError(source, lineno,
                     "vertex index out of range (" + std::to_string(idx) + " for " + std::to_string(nverts) +
                         " vertices)");
}

}  // namespace detail

inline TriangleMesh parse_off(std::istream& in, const std::string& source = "<off>") {
  std::string line;
  std::size_t lineno = 0;
  // Tokens after stripping comments, tagged with their line number.
  std::vector<std::pair<std::string, std::size_t>> tokens;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    for (auto t : detail::split_ws(line)) tokens.emplace_back(std::string(t), lineno);
  }
  std::size_t pos = 0;
  auto next = [&](const char* what) -> const std::pair<std::string, std::size_t>& {
    if (pos >= tokens.size()) throw ParseError(source, lineno, std::string("unexpected end of file reading ") + what);
    return tokens[pos++];
  };
  const auto& magic = next("header");
  if (magic.first != "OFF") {
    if (magic.first.size() > 3 && magic.first.ends_with("OFF"))
      throw UnsupportedFormatError(source + ": unsupported OFF variant '" + magic.first + "'");
    throw ParseError(source, magic.second, "missing OFF header");
  }
  auto read_count = [&](const char* what) {
    const auto& t = next(what);
    long v = 0;
    if (!detail::parse_long(t.first, v) || v < 0) throw ParseError(source, t.second, std::string("bad ") + what);
    return static_cast<std::size_t>(v);
  };
  const std::size_t nv = read_count("vertex count");
  const std::size_t nf = read_count("face count");
  read_count("edge count");

  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      const auto& t = next("vertex");
      if (!detail::parse_double(t.first, p[a])) throw ParseError(source, t.second, "non-numeric vertex coordinate");
    }
    mesh.vertices.push_back(p);
  }
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& head = next("face");
    long n = 0;
    if (!detail::parse_long(head.first, n) || n < 3) throw ParseError(source, head.second, "bad face vertex count");
    const std::size_t face_line = head.second;
    std::vector<long> poly(static_cast<std::size_t>(n));
    for (auto& idx : poly) {
      const auto& t = next("face index");
      if (t.second != face_line) throw ParseError(source, t.second, "face record split across lines");
      if (!detail::parse_long(t.first, idx)) throw ParseError(source, t.second, "non-integer face index");
      detail::check_index(idx, nv, source, t.second);
    }
    // Trailing per-face colour values on the same line are ignored.
    while (pos < tokens.size() && tokens[pos].second == face_line) ++pos;
    detail::fan_triangulate(poly, mesh, source, face_line);
  }
  if (pos != tokens.size()) throw ParseError(source, tokens[pos].second, "trailing data after last face");
  return mesh;
}

inline TriangleMesh parse_obj(std::istream& in, const std::string& source = "<obj>") {
  TriangleMesh mesh;
  std::vector<std::pair<std::vector<long>, std::size_t>> pending;  // faces resolved after all vertices
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;
    const std::string_view tag = tokens[0];
    if (tag == "v") {
      if (tokens.size() < 4) throw ParseError(source, lineno, "vertex needs 3 coordinates");
      Vec3 p;
      for (int a = 0; a < 3; ++a)
        if (!detail::parse_double(tokens[a + 1], p[a])) throw ParseError(source, lineno, "non-numeric vertex coordinate");
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<long> poly;
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        // "v", "v/vt", "v//vn" or "v/vt/vn": only the position index matters.
        const std::string_view t = tokens[i].substr(0, tokens[i].find('/'));
        long idx = 0;
        if (!detail::parse_long(t, idx) || idx == 0) throw ParseError(source, lineno, "bad face index");
        // Negative indices are relative to the vertices read so far.
        idx = idx > 0 ? idx - 1 : static_cast<long>(mesh.vertices.size()) + idx;
        poly.push_back(idx);
      }
      pending.emplace_back(std::move(poly), lineno);
    } else if (tag == "vt" || tag == "vn" || tag == "g" || tag == "o" || tag == "s" || tag == "usemtl" ||
               tag == "mtllib") {
      continue;
    } else {
      throw UnsupportedFormatError(source + ":" + std::to_string(lineno) + ": unsupported OBJ element '" +
                                   std::string(tag) + "'");
    }
  }
  for (const auto& [poly, ln] : pending) {
    for (long idx : poly) detail::check_index(idx, mesh.vertices.size(), source, ln);
    detail::fan_triangulate(poly, mesh, source, ln);
  }
  if (mesh.vertices.empty()) throw ParseError(source, lineno, "no vertices");
  return mesh;
}

/// Dispatches on extension (.off / .obj, case-insensitive).
inline TriangleMesh parse_mesh(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  auto in = detail::open_input(path);
  if (ext == ".off") return parse_off(in, path.string());
  if (ext == ".obj") return parse_obj(in, path.string());
  throw UnsupportedFormatError(path.string() + ": unsupported mesh extension '" + ext + "'");
}

// ---------------------------------------------------------------------------
// Surface sampling

/// n points uniformly distributed over the mesh surface (area-weighted
/// triangle choice, uniform barycentric position).
inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, Rng& rng) {
  validate(mesh);
  if (n == 0) throw InputError("sample_surface: n must be >= 1");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.triangle_area(f);
    cumulative[f] = total;
  }
  if (!(total > 0.0)) throw InputError("sample_surface: mesh has zero total area");

  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double target = rng.uniform() * total;
    auto f = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), target) -
                                      cumulative.begin());
    if (f >= cumulative.size()) f = cumulative.size() - 1;
    // Zero-area faces have zero-width intervals and are never selected by upper_bound.
    const auto& t = mesh.faces[f];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const double a = 1.0 - r1, b = r1 * (1.0 - r2), c = r1 * r2;
    const Vec3& p0 = mesh.vertices[t[0]];
    const Vec3& p1 = mesh.vertices[t[1]];
    const Vec3& p2 = mesh.vertices[t[2]];
    cloud.points.push_back({a * p0[0] + b * p1[0] + c * p2[0], a * p0[1] + b * p1[1] + c * p2[1],
                            a * p0[2] + b * p1[2] + c * p2[2]});
  }
  return cloud;
}

inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_surface(mesh, n, rng);
}

// ---------------------------------------------------------------------------
// MF3D target cache
//
// Layout (little-endian):
//   char[4] "MF3D" | u32 version=1 | u32 count | f32 radius |
//   f32 points[count*3] | f32 normals[count*3] | f32 variations[count]

struct TargetCache {
  std::vector<Vec3f> points;
  std::vector<Vec3f> normals;
  std::vector<float> variations;
  float neighbor_radius = 0.1f;

  std::size_t size() const { return points.size(); }

  friend bool operator==(const TargetCache&, const TargetCache&) = default;
};

inline constexpr std::uint32_t kCacheVersion = 1;

inline void validate(const TargetCache& cache) {
  if (cache.normals.size() != cache.points.size() || cache.variations.size() != cache.points.size())
    throw FormatError("target cache field lengths disagree");
  if (!(cache.neighbor_radius > 0.0f)) throw FormatError("target cache neighbor_radius must be > 0");
}

/// Dense cloud with normals and variations attached.
inline PointCloud to_point_cloud(const TargetCache& cache) {
  PointCloud c;
  c.points.reserve(cache.size());
  c.normals.reserve(cache.size());
  c.variations.reserve(cache.size());
  for (std::size_t i = 0; i < cache.size(); ++i) {
    c.points.push_back(to_double(cache.points[i]));
    c.normals.push_back(to_double(cache.normals[i]));
    c.variations.push_back(cache.variations[i]);
  }
  return c;
}

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<U>(bytes);
  }
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  template <class U>
  U get() {
    if (pos_ + sizeof(U) > data_.size()) throw FormatError(source_ + ": truncated file");
    U v;
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    if constexpr (std::endian::native == std::endian::big) {
      auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<U>(bytes);
    }
    return v;
  }

  std::string_view bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError(source_ + ": truncated file");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string source_;
};

inline std::string read_file(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

/// Write-to-temp-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::string encode_cache(const TargetCache& cache) {
  validate(cache);
  std::string out;
  out.reserve(16 + cache.size() * 28);
  out.append("MF3D", 4);
  detail::put_le<std::uint32_t>(out, kCacheVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cache.size()));
  detail::put_le<float>(out, cache.neighbor_radius);
  for (const auto& p : cache.points)
    for (float v : p) detail::put_le<float>(out, v);
  for (const auto& n : cache.normals)
    for (float v : n) detail::put_le<float>(out, v);
  for (float v : cache.variations) detail::put_le<float>(out, v);
  return out;
}

inline TargetCache decode_cache(std::string_view bytes, const std::string& source = "<cache>") {
  detail::ByteReader r(bytes, source);
  if (r.bytes(4) != "MF3D") throw FormatError(source + ": bad magic, not an MF3D cache");
  const auto version = r.get<std::uint32_t>();
  if (version != kCacheVersion)
    throw UnsupportedVersionError(source + ": unsupported cache version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  TargetCache cache;
  cache.neighbor_radius = r.get<float>();
  if (r.remaining() != static_cast<std::size_t>(count) * 28)
    throw FormatError(source + ": payload size does not match point count (truncated or trailing bytes)");
  cache.points.resize(count);
  cache.normals.resize(count);
  cache.variations.resize(count);
  for (auto& p : cache.points)
    for (float& v : p) v = r.get<float>();
  for (auto& n : cache.normals)
    for (float& v : n) v = r.get<float>();
  for (float& v : cache.variations) v = r.get<float>();
  validate(cache);
  return cache;
}

inline void write_cache(const TargetCache& cache, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_cache(cache));
}

inline TargetCache read_cache(const std::filesystem::path& path) {
  return decode_cache(detail::read_file(path), path.string());
}

inline void write_off(std::ostream& out, const TriangleMesh& mesh) {
  out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n" << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

inline void write_off(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ostringstream ss;
  write_off(ss, mesh);
  detail::write_file_atomic(path, ss.str());
}

// ---------------------------------------------------------------------------
// Colored PLY

enum class ColorMode { Normal, Variation };

using Rgb = std::array<int, 3>;

namespace detail {
inline int to_byte(double unit) {
  return static_cast<int>(std::floor(std::clamp(unit, 0.0, 1.0) * 255.0));
}
}  // namespace detail

/// (n + 1) / 2 mapped to 8-bit RGB, truncating.
inline Rgb normal_color(const Vec3& n) {
  return {detail::to_byte(0.5 * (n[0] + 1.0)), detail::to_byte(0.5 * (n[1] + 1.0)), detail::to_byte(0.5 * (n[2] + 1.0))};
}

/// White at 0, red at 1/3.
inline Rgb variation_color(double v) {
  const int gb = detail::to_byte(1.0 - v / kMaxVariation);
  return {255, gb, gb};
}

inline void write_colored_ply(std::ostream& out, const PointCloud& cloud, ColorMode mode) {
  if (mode == ColorMode::Normal && !cloud.has_normals()) throw InputError("cloud has no normals to visualize");
  if (mode == ColorMode::Variation && !cloud.has_variations())
    throw InputError("cloud has no variations to visualize");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const Rgb c = mode == ColorMode::Normal ? normal_color(cloud.normals[i]) : variation_color(cloud.variations[i]);
    out << static_cast<float>(p[0]) << ' ' << static_cast<float>(p[1]) << ' ' << static_cast<float>(p[2]) << ' '
        << c[0] << ' ' << c[1] << ' ' << c[2] << '\n';
  }
}

inline void write_colored_ply(const PointCloud& cloud, ColorMode mode, const std::filesystem::path& path) {
  std::ostringstream ss;
  write_colored_ply(ss, cloud, mode);
  detail::write_file_atomic(path, ss.str());
}

}  // namespace mf3d
