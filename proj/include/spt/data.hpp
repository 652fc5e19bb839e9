#pragma once

// Synthetic parametric shapes and plain-text point clouds.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "spt/geometry.hpp"

namespace spt {

enum class ShapeFamily { Sphere, Cube, Cylinder, Torus, Cone, Pyramid, Ellipsoid, Helix };

inline constexpr std::size_t kShapeFamilyCount = 8;

const char* to_string(ShapeFamily family);
ShapeFamily parse_shape_family(const std::string& name);

struct ShapeSpec {
  ShapeFamily family = ShapeFamily::Sphere;
  // Family parameters; empty selects the defaults below.
  //   Sphere {radius}            Cube {half_extent}
  //   Cylinder {radius, height}  Torus {major, minor}
  //   Cone {radius, height}      Pyramid {half_base, height}
  //   Ellipsoid {a, b, c}        Helix {radius, pitch, turns, tube}
  std::vector<double> params;
  double jitter_sigma = 0.0;
  Index n_points = 256;
  std::uint64_t rng_seed = 0;
};

std::vector<double> default_shape_params(ShapeFamily family);

// Surface samples (area-uniform) with jitter, before normalisation.
Points sample_surface(const ShapeSpec& spec);

// sample_surface followed by unit-sphere normalisation.
PointCloud generate(const ShapeSpec& spec);

// One point per line: x y z [features...]. Blank lines and lines starting
// with '#' are skipped. The result is normalised to the unit sphere.
PointCloud load_xyz(const std::filesystem::path& path, Index min_points = 16);
void save_xyz(const std::filesystem::path& path, const PointCloud& pc);

struct Sample {
  PointCloud cloud;
  Index label = 0;
  Index id = 0;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> train;
  std::vector<Sample> test;

  Index num_classes() const { return static_cast<Index>(class_names.size()); }
};

// Balanced benchmark over the first `classes` families with randomised
// parameters and z-rotation; the first 80% of every class go to train.
Dataset make_benchmark(Index classes, Index per_class, Index n_points, std::uint64_t seed);

// Training-time augmentation: random rotation about z, Gaussian jitter, renormalisation.
void augment(PointCloud& pc, std::mt19937_64& rng, double jitter_sigma = 0.01);

// Writes every instance as an xyz file plus manifest.json into `dir`.
std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Reads a manifest: {"class_names": [...], "train": [{"path", "label"}], "test": [...]}
// with paths relative to the manifest's directory.
Dataset load_manifest(const std::filesystem::path& manifest, Index min_points = 16);

}  // namespace spt
