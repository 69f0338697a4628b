#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"

using namespace mf3d;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("mf3d_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST(Xyz, ParsesExtraColumnsAndBlankLines) {
  std::istringstream in("0 0 0\n\n1 2 3 0.5 0.5 0.5\n  -1e-3\t4 5\n");
  const auto c = parse_xyz(in);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.points[1], (Vec3{1, 2, 3}));
  EXPECT_DOUBLE_EQ(c.points[2][0], -1e-3);
}

TEST(Xyz, RejectsBadLinesWithLineNumber) {
  std::istringstream in("0 0 0\n1 x 3\n");
  try {
    parse_xyz(in, "a.xyz");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("a.xyz:2"), std::string::npos) << e.what();
  }
  std::istringstream short_line("1 2\n");
  EXPECT_THROW(parse_xyz(short_line), ParseError);
  std::istringstream empty("\n\n");
  EXPECT_THROW(parse_xyz(empty), ParseError);
}

TEST(Off, TriangulatesPolygonsAndSkipsComments) {
  std::istringstream in(
      "OFF\n# quad\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3 255 0 0\n");
  const auto m = parse_off(in);
  ASSERT_EQ(m.faces.size(), 2u);
  EXPECT_NEAR(m.area(), 1.0, 1e-15);
}

TEST(Off, RejectsMalformedInput) {
  std::istringstream bad_index("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n");
  EXPECT_THROW(parse_off(bad_index), ParseError);
  std::istringstream variant("COFF\n0 0 0\n");
  EXPECT_THROW(parse_off(variant), UnsupportedFormatError);
  std::istringstream truncated("OFF\n3 1 0\n0 0 0\n1 0 0\n");
  EXPECT_THROW(parse_off(truncated), ParseError);
}

TEST(Obj, ParsesFacesWithTextureAndNormalIndices) {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\nf -3 -2 -1\n");
  const auto m = parse_obj(in);
  ASSERT_EQ(m.faces.size(), 2u);
  EXPECT_EQ(m.faces[1], (std::array<std::uint32_t, 3>{0, 1, 2}));
}

TEST(Obj, RejectsOutOfRangeIndex) {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n");
  EXPECT_THROW(parse_obj(in), ParseError);
}

TEST(Mesh, UnknownExtensionIsUnsupported) {
  const auto d = temp_dir("ext");
  write_text(d / "a.stl", "solid\n");
  EXPECT_THROW(parse_mesh(d / "a.stl"), UnsupportedFormatError);
  EXPECT_THROW(parse_mesh(d / "missing.off"), InputError);
}

TEST(Sampling, PointsLieOnTheSurface) {
  const auto mesh = make_box(2.0, 1.0, 0.5);
  const auto c = sample_surface(mesh, 5000, 3);
  for (const auto& p : c.points) {
    const double dx = 1.0 - std::abs(p[0]), dy = 0.5 - std::abs(p[1]), dz = 0.25 - std::abs(p[2]);
    EXPECT_GE(std::min({dx, dy, dz}), -1e-12);
    EXPECT_LE(std::min({dx, dy, dz}), 1e-12);
  }
}

TEST(Sampling, AreaWeightedFaceChoice) {
  // Box 2 x 1 x 0.5: the two x-normal faces hold 0.5 / 3.5 of the area.
  const auto c = sample_surface(make_box(2.0, 1.0, 0.5), 20000, 11);
  std::size_t on_x = 0;
  for (const auto& p : c.points) on_x += std::abs(std::abs(p[0]) - 1.0) < 1e-12;
  const double expect = 20000.0 * (0.5 / 3.5), sd = std::sqrt(20000.0 * (0.5 / 3.5) * (3.0 / 3.5));
  EXPECT_NEAR(static_cast<double>(on_x), expect, 4.0 * sd);
}

TEST(Sampling, DeterministicPerSeed) {
  const auto m = make_sphere();
  EXPECT_EQ(sample_surface(m, 100, 5).points, sample_surface(m, 100, 5).points);
  EXPECT_NE(sample_surface(m, 100, 5).points, sample_surface(m, 100, 6).points);
}

TEST(Normalize, FitsTheUnitSphere) {
  Rng rng(2);
  PointCloud c;
  c.points = oracle::random_points(rng, 500, 3.0, 9.0);
  normalize_unit_sphere(c);
  double r = 0.0;
  for (const auto& p : c.points) r = std::max(r, norm(p));
  EXPECT_NEAR(r, 1.0, 1e-12);
}

TEST(Cache, RoundTripsBitExactly) {
  const auto d = temp_dir("cache");
  TargetCache cache = make_target_cache(sample_surface(make_sphere(), 800, 1));
  write_cache(cache, d / "s.mf3d");
  EXPECT_EQ(read_cache(d / "s.mf3d"), cache);
}

TEST(Cache, RejectsCorruptFiles) {
  const auto d = temp_dir("corrupt");
  write_text(d / "bad.mf3d", "MF3X\x01");
  EXPECT_THROW(read_cache(d / "bad.mf3d"), FormatError);
  TargetCache cache = make_target_cache(sample_surface(make_sphere(), 200, 1));
  std::string bytes = encode_cache(cache);
  EXPECT_THROW(decode_cache(std::string_view(bytes).substr(0, bytes.size() - 3)), FormatError);
  bytes[4] = 9;  // version
  EXPECT_THROW(decode_cache(bytes), UnsupportedVersionError);
}

TEST(Ply, ColorMappingFloors) {
  EXPECT_EQ(normal_color({1, -1, 0}), (Rgb{255, 0, 127}));
  EXPECT_EQ(variation_color(0.0), (Rgb{255, 255, 255}));
  EXPECT_EQ(variation_color(1.0 / 3.0), (Rgb{255, 0, 0}));
}

TEST(Ply, WritesHeaderAndOneRowPerPoint) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}};
  c.normals = {{0, 0, 1}, {1, 0, 0}};
  std::ostringstream out;
  write_colored_ply(out, c, ColorMode::Normal);
  const std::string s = out.str();
  EXPECT_NE(s.find("element vertex 2"), std::string::npos);
  EXPECT_NE(s.find("0 0 0 127 127 255"), std::string::npos);
  EXPECT_THROW(write_colored_ply(out, c, ColorMode::Variation), InputError);
}

TEST(OffWriter, RoundTripsPrimitives) {
  const auto d = temp_dir("offw");
  for (const auto& name : primitive_names()) {
    const auto m = make_primitive(name);
    write_off(m, d / (name + ".off"));
    const auto back = parse_mesh(d / (name + ".off"));
    ASSERT_EQ(back.faces, m.faces) << name;
    EXPECT_NEAR(back.area(), m.area(), 1e-9 * m.area()) << name;
  }
}
