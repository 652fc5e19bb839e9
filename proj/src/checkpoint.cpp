#include "spt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace spt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'T', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(std::istream& is, std::string where) : is_(is), where_(std::move(where)) {}

  template <typename T>
  T get() {
    T v{};
    bytes(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }

  void bytes(char* dst, std::size_t n) {
    if (!is_.read(dst, static_cast<std::streamsize>(n))) fail("truncated file");
  }

  std::string text(std::uint64_t n) {
    if (n > (1ULL << 30)) fail("implausible string length");
    std::string s(static_cast<std::size_t>(n), '\0');
    bytes(s.data(), s.size());
    return s;
  }

  [[noreturn]] void fail(const std::string& why) const { throw IoError("checkpoint " + where_ + ": " + why); }

 private:
  std::istream& is_;
  std::string where_;
};

Index to_index(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw ParseError("manifest: '" + key + "' expects an integer, got '" + value + "'");
  }
}

}  // namespace

std::string config_manifest(const SPTConfig& cfg) {
  std::ostringstream os;
  os << "encoding = " << to_string(cfg.encoding.method) << '\n'
     << "time_steps = " << cfg.encoding.time_steps << '\n'
     << "samples_per_step = " << cfg.encoding.samples_per_step << '\n'
     << "input_points = " << cfg.input_points << '\n'
     << "input_channels = " << cfg.input_channels << '\n'
     << "num_classes = " << cfg.num_classes << '\n'
     << "hybrid = " << (cfg.source.hybrid ? 1 : 0) << '\n'
     << "single_neuron = " << to_string(cfg.source.single) << '\n'
     << "seed = " << cfg.seed << '\n';
  for (const StageConfig& s : cfg.stages) {
    os << "stage = " << s.points << ' ' << s.channels << ' ' << s.neighbors << ' ' << s.downsample_ratio << '\n';
  }
  return os.str();
}

SPTConfig parse_config_manifest(const std::string& text) {
  SPTConfig cfg;
  cfg.stages.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError("manifest: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (key == "encoding") {
      cfg.encoding.method = parse_encoding_method(value);
    } else if (key == "time_steps") {
      cfg.encoding.time_steps = to_index(key, value);
    } else if (key == "samples_per_step") {
      cfg.encoding.samples_per_step = to_index(key, value);
    } else if (key == "input_points") {
      cfg.input_points = to_index(key, value);
    } else if (key == "input_channels") {
      cfg.input_channels = to_index(key, value);
    } else if (key == "num_classes") {
      cfg.num_classes = to_index(key, value);
    } else if (key == "hybrid") {
      cfg.source.hybrid = to_index(key, value) != 0;
    } else if (key == "single_neuron") {
      cfg.source.single = parse_neuron_kind(value);
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    } else if (key == "stage") {
      std::istringstream fields(value);
      StageConfig s;
      if (!(fields >> s.points >> s.channels >> s.neighbors >> s.downsample_ratio)) {
        throw ParseError("manifest: malformed stage '" + value + "'");
      }
      cfg.stages.push_back(s);
    } else {
      throw ParseError("manifest: unknown key '" + key + "'");
    }
  }
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const SpikingPointTransformer& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint " + path.string() + ": cannot open for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  const std::string manifest = config_manifest(model.config());
  put<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  const std::vector<NamedTensor> state = model.state();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(state.size()));
  for (const NamedTensor& t : state) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.tensor.rank()));
    for (Index d : t.tensor.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.tensor.data().data()),
             static_cast<std::streamsize>(t.tensor.numel() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint " + path.string() + ": write failed");
}

SpikingPointTransformer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint " + path.string() + ": cannot open");
  Reader r(is, path.string());
  char magic[sizeof(kMagic)];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  SPTConfig cfg;
  try {
    cfg = parse_config_manifest(r.text(r.get<std::uint64_t>()));
    cfg.validate();
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(std::string("invalid manifest: ") + e.what());
  }
  SpikingPointTransformer model(cfg);
  std::vector<NamedTensor> state = model.state();

  const auto count = r.get<std::uint32_t>();
  if (count != state.size()) {
    r.fail("holds " + std::to_string(count) + " tensors, the model has " + std::to_string(state.size()));
  }
  for (NamedTensor& t : state) {
    const std::string name = r.text(r.get<std::uint32_t>());
    if (name != t.name) r.fail("expected tensor '" + t.name + "', found '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(r.get<std::uint64_t>());
    if (shape != t.tensor.shape()) {
      r.fail("tensor '" + name + "' has shape " + to_string(shape) + ", expected " + to_string(t.tensor.shape()));
    }
    Eigen::ArrayXd& data = t.tensor.mutable_data();
    r.bytes(reinterpret_cast<char*>(data.data()), static_cast<std::size_t>(data.size()) * sizeof(double));
    if (!data.allFinite()) r.fail("tensor '" + name + "' holds non-finite values");
  }
  if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return model;
}

}  // namespace spt
