#include "spt/data.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

namespace spt {

namespace {

constexpr double kPi = std::numbers::pi;

struct Sampler {
  std::mt19937_64 rng;
  std::uniform_real_distribution<double> unit{0.0, 1.0};
  std::normal_distribution<double> normal{0.0, 1.0};

  double u() { return unit(rng); }
  double g() { return normal(rng); }

  Eigen::RowVector3d on_sphere() {
    Eigen::RowVector3d p(g(), g(), g());
    while (p.norm() < 1e-12) p = Eigen::RowVector3d(g(), g(), g());
    return p / p.norm();
  }

  Eigen::RowVector3d in_triangle(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b,
                                 const Eigen::RowVector3d& c) {
    double r1 = u();
    double r2 = u();
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    return a + r1 * (b - a) + r2 * (c - a);
  }

  // Index drawn proportionally to weights.
  std::size_t pick(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = u() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      if (r < weights[i]) return i;
      r -= weights[i];
    }
    return weights.size() - 1;
  }
};

bool centrally_symmetric(ShapeFamily f) {
  return f == ShapeFamily::Sphere || f == ShapeFamily::Cube || f == ShapeFamily::Cylinder ||
         f == ShapeFamily::Torus || f == ShapeFamily::Ellipsoid;
}

Eigen::RowVector3d sample_one(ShapeFamily family, const std::vector<double>& p, Sampler& s) {
  switch (family) {
    case ShapeFamily::Sphere:
      return p[0] * s.on_sphere();
    case ShapeFamily::Cube: {
      const double a = p[0];
      const auto face = static_cast<int>(std::min(5.0, std::floor(s.u() * 6.0)));
      const double x = (2.0 * s.u() - 1.0) * a;
      const double y = (2.0 * s.u() - 1.0) * a;
      const double sign = face % 2 == 0 ? 1.0 : -1.0;
      switch (face / 2) {
        case 0:
          return {sign * a, x, y};
        case 1:
          return {x, sign * a, y};
        default:
          return {x, y, sign * a};
      }
    }
    case ShapeFamily::Cylinder: {
      const double r = p[0];
      const double h = p[1];
      const std::size_t part = s.pick({2.0 * kPi * r * h, kPi * r * r, kPi * r * r});
      const double theta = 2.0 * kPi * s.u();
      if (part == 0) return {r * std::cos(theta), r * std::sin(theta), (s.u() - 0.5) * h};
      const double rho = r * std::sqrt(s.u());
      return {rho * std::cos(theta), rho * std::sin(theta), part == 1 ? h / 2 : -h / 2};
    }
    case ShapeFamily::Torus: {
      const double big = p[0];
      const double small = p[1];
      double v = 0.0;
      // density of the tube angle is proportional to (R + r cos v)
      do {
        v = 2.0 * kPi * s.u();
      } while (s.u() * (big + small) > big + small * std::cos(v));
      const double theta = 2.0 * kPi * s.u();
      const double ring = big + small * std::cos(v);
      return {ring * std::cos(theta), ring * std::sin(theta), small * std::sin(v)};
    }
    case ShapeFamily::Cone: {
      const double r = p[0];
      const double h = p[1];
      const double slant = std::sqrt(r * r + h * h);
      const std::size_t part = s.pick({kPi * r * slant, kPi * r * r});
      const double theta = 2.0 * kPi * s.u();
      const double frac = std::sqrt(s.u());
      if (part == 0) return {frac * r * std::cos(theta), frac * r * std::sin(theta), h / 2 - frac * h};
      return {frac * r * std::cos(theta), frac * r * std::sin(theta), -h / 2};
    }
    case ShapeFamily::Pyramid: {
      const double a = p[0];
      const double h = p[1];
      const Eigen::RowVector3d apex(0, 0, h / 2);
      const std::array<Eigen::RowVector3d, 4> base{Eigen::RowVector3d(a, a, -h / 2), Eigen::RowVector3d(-a, a, -h / 2),
                                                   Eigen::RowVector3d(-a, -a, -h / 2), Eigen::RowVector3d(a, -a, -h / 2)};
      const double side = 2.0 * a * std::sqrt(a * a + h * h) / 2.0;
      const std::size_t part = s.pick({side, side, side, side, 4.0 * a * a});
      if (part < 4) return s.in_triangle(apex, base[part], base[(part + 1) % 4]);
      return {(2.0 * s.u() - 1.0) * a, (2.0 * s.u() - 1.0) * a, -h / 2};
    }
    case ShapeFamily::Ellipsoid: {
      const Eigen::RowVector3d axes(p[0], p[1], p[2]);
      const double bound = std::max({axes(0) * axes(1), axes(1) * axes(2), axes(0) * axes(2)});
      while (true) {
        const Eigen::RowVector3d d = s.on_sphere();
        const double area = std::sqrt(std::pow(axes(1) * axes(2) * d(0), 2) + std::pow(axes(0) * axes(2) * d(1), 2) +
                                      std::pow(axes(0) * axes(1) * d(2), 2));
        if (s.u() * bound <= area) return d.cwiseProduct(axes);
      }
    }
    case ShapeFamily::Helix: {
      const double radius = p[0];
      const double pitch = p[1];
      const double turns = p[2];
      const double tube = p[3];
      const double t = 2.0 * kPi * turns * s.u();
      const double phi = 2.0 * kPi * s.u();
      const double rise = pitch / (2.0 * kPi);
      const Eigen::RowVector3d center(radius * std::cos(t), radius * std::sin(t), rise * t - pitch * turns / 2);
      Eigen::RowVector3d tangent(-radius * std::sin(t), radius * std::cos(t), rise);
      tangent.normalize();
      const Eigen::RowVector3d normal(std::cos(t), std::sin(t), 0.0);
      const Eigen::RowVector3d binormal = tangent.cross(normal);
      return center + tube * (std::cos(phi) * normal + std::sin(phi) * binormal);
    }
  }
  throw ConfigError("generate: unknown shape family");
}

}  // namespace

const char* to_string(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::Sphere:
      return "sphere";
    case ShapeFamily::Cube:
      return "cube";
    case ShapeFamily::Cylinder:
      return "cylinder";
    case ShapeFamily::Torus:
      return "torus";
    case ShapeFamily::Cone:
      return "cone";
    case ShapeFamily::Pyramid:
      return "pyramid";
    case ShapeFamily::Ellipsoid:
      return "ellipsoid";
    case ShapeFamily::Helix:
      return "helix";
  }
  return "?";
}

ShapeFamily parse_shape_family(const std::string& name) {
  for (std::size_t i = 0; i < kShapeFamilyCount; ++i) {
    const auto f = static_cast<ShapeFamily>(i);
    if (name == to_string(f)) return f;
  }
  throw ConfigError("unknown shape family '" + name + "'");
}

std::vector<double> default_shape_params(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::Sphere:
      return {1.0};
    case ShapeFamily::Cube:
      return {1.0};
    case ShapeFamily::Cylinder:
      return {0.5, 2.0};
    case ShapeFamily::Torus:
      return {1.0, 0.3};
    case ShapeFamily::Cone:
      return {0.7, 1.5};
    case ShapeFamily::Pyramid:
      return {0.8, 1.2};
    case ShapeFamily::Ellipsoid:
      return {1.0, 0.6, 0.4};
    case ShapeFamily::Helix:
      return {0.8, 0.5, 3.0, 0.15};
  }
  throw ConfigError("unknown shape family");
}

Points sample_surface(const ShapeSpec& spec) {
  const auto family_id = static_cast<std::size_t>(spec.family);
  if (family_id >= kShapeFamilyCount) throw ConfigError("generate: unknown shape family");
  if (spec.n_points < 16) throw CountError("generate: n_points must be at least 16");
  if (!(spec.jitter_sigma >= 0.0)) throw ConfigError("generate: jitter_sigma must be non-negative");
  const std::vector<double> params = spec.params.empty() ? default_shape_params(spec.family) : spec.params;
  if (params.size() != default_shape_params(spec.family).size()) {
    throw ConfigError(std::string("generate: wrong parameter count for ") + to_string(spec.family));
  }
  for (double v : params) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("generate: shape parameters must be positive");
  }

  Sampler s{std::mt19937_64(spec.rng_seed)};
  Points pts(spec.n_points, 3);
  // Symmetric shapes are sampled in antipodal pairs so the centroid is exact.
  const bool paired = centrally_symmetric(spec.family);
  for (Index i = 0; i < spec.n_points; ++i) {
    if (paired && i % 2 == 1) {
      pts.row(i) = -pts.row(i - 1);
    } else {
      pts.row(i) = sample_one(spec.family, params, s);
    }
  }
  if (spec.jitter_sigma > 0.0) {
    for (Index i = 0; i < pts.rows(); ++i) {
      for (Index d = 0; d < 3; ++d) pts(i, d) += spec.jitter_sigma * s.g();
    }
  }
  return pts;
}

PointCloud generate(const ShapeSpec& spec) {
  PointCloud pc = PointCloud::from_xyz(sample_surface(spec));
  normalize_unit_sphere(pc);
  return pc;
}

PointCloud load_xyz(const std::filesystem::path& path, Index min_points) {
  std::ifstream in(path);
  if (!in) throw IoError("load_xyz: cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::vector<double> values;
    std::string token;
    while (fields >> token) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size() || !std::isfinite(v)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed value '" + token + "'");
      }
      values.push_back(v);
    }
    if (values.size() < 3) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected at least 3 values");
    }
    if (!rows.empty() && values.size() != rows.front().size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": column count differs from line 1");
    }
    rows.push_back(std::move(values));
  }
  if (static_cast<Index>(rows.size()) < min_points) {
    throw CountError("load_xyz: " + path.string() + " has " + std::to_string(rows.size()) + " points, need at least " +
                     std::to_string(min_points));
  }
  if (rows.empty()) throw CountError("load_xyz: " + path.string() + " holds no points");
  const Index n = static_cast<Index>(rows.size());
  const Index extra = static_cast<Index>(rows.front().size()) - 3;
  PointCloud pc;
  pc.xyz.resize(n, 3);
  pc.features.resize(n, extra);
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    pc.xyz.row(i) << r[0], r[1], r[2];
    for (Index c = 0; c < extra; ++c) pc.features(i, c) = r[static_cast<std::size_t>(3 + c)];
  }
  normalize_unit_sphere(pc);
  return pc;
}

void save_xyz(const std::filesystem::path& path, const PointCloud& pc) {
  std::ofstream out(path);
  if (!out) throw IoError("save_xyz: cannot write " + path.string());
  out << std::setprecision(17);
  for (Index i = 0; i < pc.size(); ++i) {
    out << pc.xyz(i, 0) << ' ' << pc.xyz(i, 1) << ' ' << pc.xyz(i, 2);
    for (Index c = 0; c < pc.features.cols(); ++c) out << ' ' << pc.features(i, c);
    out << '\n';
  }
  if (!out) throw IoError("save_xyz: write failed for " + path.string());
}

Dataset make_benchmark(Index classes, Index per_class, Index n_points, std::uint64_t seed) {
  if (classes < 1 || classes > static_cast<Index>(kShapeFamilyCount)) {
    throw ConfigError("make_benchmark: classes must lie in [1, 8]");
  }
  if (per_class < 1) throw ConfigError("make_benchmark: per_class must be positive");
  Dataset ds;
  const Index train_per_class = (per_class * 4) / 5;
  Index id = 0;
  for (Index c = 0; c < classes; ++c) {
    const auto family = static_cast<ShapeFamily>(c);
    ds.class_names.emplace_back(to_string(family));
    for (Index i = 0; i < per_class; ++i) {
      std::seed_seq seq{seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)};
      std::mt19937_64 rng(seq);
      std::uniform_real_distribution<double> stretch(0.8, 1.2);
      std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
      ShapeSpec spec;
      spec.family = family;
      spec.params = default_shape_params(family);
      for (double& v : spec.params) v *= stretch(rng);
      spec.jitter_sigma = 0.01;
      spec.n_points = n_points;
      spec.rng_seed = rng();
      PointCloud pc = generate(spec);
      const double a = angle(rng);
      Eigen::Matrix3d rot = Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix();
      pc.xyz = (pc.xyz * rot.transpose()).eval();
      Sample sample{std::move(pc), c, id++};
      (i < train_per_class ? ds.train : ds.test).push_back(std::move(sample));
    }
  }
  return ds;
}

void augment(PointCloud& pc, std::mt19937_64& rng, double jitter_sigma) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  std::normal_distribution<double> noise(0.0, jitter_sigma);
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle(rng), Eigen::Vector3d::UnitZ()).toRotationMatrix();
  pc.xyz = (pc.xyz * rot.transpose()).eval();
  if (jitter_sigma > 0.0) {
    for (Index i = 0; i < pc.xyz.rows(); ++i) {
      for (Index d = 0; d < 3; ++d) pc.xyz(i, d) += noise(rng);
    }
  }
  normalize_unit_sphere(pc);
}

std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("write_dataset: cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest;
  manifest["class_names"] = ds.class_names;
  auto dump_split = [&](const std::vector<Sample>& split, const char* name) {
    nlohmann::json entries = nlohmann::json::array();
    for (const Sample& s : split) {
      const std::string file = std::string(name) + "_" + std::to_string(s.id) + ".xyz";
      save_xyz(dir / file, s.cloud);
      entries.push_back({{"path", file}, {"label", s.label}, {"id", s.id}});
    }
    manifest[name] = std::move(entries);
  };
  dump_split(ds.train, "train");
  dump_split(ds.test, "test");
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("write_dataset: cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  return path;
}

Dataset load_manifest(const std::filesystem::path& manifest, Index min_points) {
  std::ifstream in(manifest);
  if (!in) throw IoError("load_manifest: cannot open " + manifest.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_manifest: " + manifest.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.class_names = doc.at("class_names").get<std::vector<std::string>>();
    const auto base = manifest.parent_path();
    auto read_split = [&](const char* name, std::vector<Sample>& split) {
      Index next_id = 0;
      for (const auto& entry : doc.at(name)) {
        Sample s;
        s.label = entry.at("label").get<Index>();
        s.id = entry.contains("id") ? entry.at("id").get<Index>() : next_id;
        ++next_id;
        if (s.label < 0 || s.label >= ds.num_classes()) {
          throw ConfigError("load_manifest: label " + std::to_string(s.label) + " outside the class list");
        }
        s.cloud = load_xyz(base / entry.at("path").get<std::string>(), min_points);
        split.push_back(std::move(s));
      }
    };
    read_split("train", ds.train);
    read_split("test", ds.test);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_manifest: " + manifest.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace spt
