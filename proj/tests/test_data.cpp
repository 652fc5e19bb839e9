#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "spt/data.hpp"

using namespace spt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("spt_test_data_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST(Generate, SphereHasUnitRadius) {
  const PointCloud pc = generate({ShapeFamily::Sphere, {}, 0.0, 512, 3});
  EXPECT_EQ(pc.size(), 512);
  // Sampled radii are exactly the sphere's; normalisation then shifts by the
  // sample centroid, so the unit-radius check is on the raw surface samples.
  const Eigen::RowVector3d c = pc.xyz.colwise().mean();
  const Points raw = sample_surface({ShapeFamily::Sphere, {}, 0.0, 512, 3});
  EXPECT_LT((raw.rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-9);
  EXPECT_LT(c.norm(), 1e-12);
  EXPECT_NEAR(pc.xyz.rowwise().norm().maxCoeff(), 1.0, 1e-12);
}

TEST(Generate, CubeSurfaceMembership) {
  const ShapeSpec spec{ShapeFamily::Cube, {0.7}, 0.0, 400, 4};
  const Points raw = sample_surface(spec);
  for (Index i = 0; i < raw.rows(); ++i) EXPECT_NEAR(raw.row(i).cwiseAbs().maxCoeff(), 0.7, 1e-9);
}

TEST(Generate, SeedDeterminism) {
  for (std::size_t f = 0; f < kShapeFamilyCount; ++f) {
    const ShapeSpec spec{static_cast<ShapeFamily>(f), {}, 0.01, 128, 11};
    EXPECT_TRUE(generate(spec).xyz == generate(spec).xyz) << to_string(spec.family);
    ShapeSpec other = spec;
    other.rng_seed = 12;
    EXPECT_FALSE(generate(spec).xyz == generate(other).xyz);
  }
}

TEST(Generate, RejectsBadSpecs) {
  EXPECT_THROW(generate({static_cast<ShapeFamily>(99), {}, 0.0, 64, 0}), ConfigError);
  EXPECT_THROW(generate({ShapeFamily::Torus, {1.0}, 0.0, 64, 0}), ConfigError);
  EXPECT_THROW(generate({ShapeFamily::Sphere, {}, 0.0, 8, 0}), CountError);
  EXPECT_THROW(parse_shape_family("dodecahedron"), ConfigError);
  for (std::size_t f = 0; f < kShapeFamilyCount; ++f)
    EXPECT_EQ(parse_shape_family(to_string(static_cast<ShapeFamily>(f))), static_cast<ShapeFamily>(f));
}

TEST(LoadXyz, AxisVectors) {
  const fs::path p = scratch("axes.xyz");
  write_text(p, "1 0 0\n0 1 0\n0 0 1\n");
  EXPECT_THROW(load_xyz(p), CountError);  // default floor of 16 points
  const PointCloud pc = load_xyz(p, 1);
  ASSERT_EQ(pc.size(), 3);
  EXPECT_LT(pc.xyz.colwise().mean().norm(), 1e-12);
  EXPECT_NEAR(pc.xyz.rowwise().norm().maxCoeff(), 1.0, 1e-12);
}

TEST(LoadXyz, MalformedLineNamesLineNumber) {
  const fs::path p = scratch("bad.xyz");
  write_text(p, "a b c\n");
  try {
    load_xyz(p, 1);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos) << e.what();
  }
  write_text(p, "# header\n1 2 3\n4 5\n");
  try {
    load_xyz(p, 1);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(LoadXyz, MissingFile) { EXPECT_THROW(load_xyz(scratch("nope.xyz")), IoError); }

TEST(LoadXyz, RoundTrip) {
  PointCloud pc = generate({ShapeFamily::Helix, {}, 0.02, 200, 5});
  pc.features = RowMatrix::Random(200, 2);
  const fs::path p = scratch("rt.xyz");
  save_xyz(p, pc);
  const PointCloud back = load_xyz(p);
  ASSERT_EQ(back.size(), 200);
  ASSERT_EQ(back.channels(), 5);
  EXPECT_LT((back.xyz - pc.xyz).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((back.features - pc.features).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Benchmark, SplitArithmetic) {
  const Dataset ds = make_benchmark(4, 100, 64, 1);
  EXPECT_EQ(ds.train.size(), 320u);
  EXPECT_EQ(ds.test.size(), 80u);
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"sphere", "cube", "cylinder", "torus"}));
  std::vector<int> per_class(4, 0);
  for (const auto& s : ds.test) ++per_class[static_cast<std::size_t>(s.label)];
  for (int c : per_class) EXPECT_EQ(c, 20);
}

TEST(Benchmark, Deterministic) {
  const Dataset a = make_benchmark(2, 5, 32, 9);
  const Dataset b = make_benchmark(2, 5, 32, 9);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_TRUE(a.train[i].cloud.xyz == b.train[i].cloud.xyz);
}

TEST(Manifest, RoundTrip) {
  const Dataset ds = make_benchmark(3, 5, 32, 2);
  const fs::path dir = scratch("ds");
  fs::remove_all(dir);
  const fs::path manifest = write_dataset(ds, dir);
  const Dataset back = load_manifest(manifest);
  EXPECT_EQ(back.class_names, ds.class_names);
  ASSERT_EQ(back.train.size(), ds.train.size());
  ASSERT_EQ(back.test.size(), ds.test.size());
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    EXPECT_EQ(back.test[i].label, ds.test[i].label);
    EXPECT_LT((back.test[i].cloud.xyz - ds.test[i].cloud.xyz).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Manifest, Errors) {
  EXPECT_THROW(load_manifest(scratch("missing.json")), IoError);
  const fs::path p = scratch("broken.json");
  write_text(p, "{\"class_names\": [\"a\"], \"train\": [");
  EXPECT_THROW(load_manifest(p), ParseError);
}

TEST(Augment, KeepsUnitSphere) {
  PointCloud pc = generate({ShapeFamily::Cone, {}, 0.0, 128, 6});
  std::mt19937_64 rng(1);
  augment(pc, rng);
  EXPECT_LT(pc.xyz.colwise().mean().norm(), 1e-12);
  EXPECT_NEAR(pc.xyz.rowwise().norm().maxCoeff(), 1.0, 1e-12);
}
