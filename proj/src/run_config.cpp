#include "spt/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace spt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Value {
  std::string key;
  std::string text;
  int line;

  [[noreturn]] void bad(const std::string& expected) const {
    throw ParseError("config line " + std::to_string(line) + ": '" + key + "' expects " + expected + ", got '" +
                     text + "'");
  }

  Index integer() const {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used == text.size()) return static_cast<Index>(v);
    } catch (const std::exception&) {
    }
    bad("an integer");
  }

  std::uint64_t unsigned_integer() const {
    if (!text.empty() && text.front() != '-') {
      try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used);
        if (used == text.size()) return v;
      } catch (const std::exception&) {
      }
    }
    bad("a non-negative integer");
  }

  double real() const {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    bad("a number");
  }

  bool boolean() const {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    bad("true or false");
  }
};

std::vector<StageConfig> parse_stages(const Value& v) {
  std::vector<StageConfig> stages;
  std::istringstream all(v.text);
  std::string item;
  while (std::getline(all, item, ';')) {
    std::istringstream fields(item);
    StageConfig s;
    if (!(fields >> s.points >> s.channels >> s.neighbors)) v.bad("'points channels neighbors [ratio]; ...'");
    if (!(fields >> s.downsample_ratio)) s.downsample_ratio = 4;
    std::string rest;
    if (fields >> rest) v.bad("'points channels neighbors [ratio]; ...'");
    stages.push_back(s);
  }
  if (stages.empty()) v.bad("at least one stage");
  return stages;
}

using Handler = std::function<void(RunConfig&, const Value&)>;

std::map<std::string, Handler> handlers(const std::filesystem::path& base) {
  return {
      {"seed", [](RunConfig& c, const Value& v) { c.seed = v.unsigned_integer(); }},
      {"jobs", [](RunConfig& c, const Value& v) { c.jobs = v.integer(); }},

      {"encoding.method", [](RunConfig& c, const Value& v) { c.model.encoding.method = parse_encoding_method(v.text); }},
      {"encoding.time_steps", [](RunConfig& c, const Value& v) { c.model.encoding.time_steps = v.integer(); }},
      {"encoding.samples_per_step",
       [](RunConfig& c, const Value& v) { c.model.encoding.samples_per_step = v.integer(); }},

      {"model.input_points", [](RunConfig& c, const Value& v) { c.model.input_points = v.integer(); }},
      {"model.input_channels", [](RunConfig& c, const Value& v) { c.model.input_channels = v.integer(); }},
      {"model.num_classes", [](RunConfig& c, const Value& v) { c.model.num_classes = v.integer(); }},
      {"model.stages", [](RunConfig& c, const Value& v) { c.model.stages = parse_stages(v); }},
      {"model.source",
       [](RunConfig& c, const Value& v) {
         if (v.text == "hdif") {
           c.model.source.hybrid = true;
         } else {
           c.model.source.hybrid = false;
           c.model.source.single = parse_neuron_kind(v.text);
         }
       }},

      {"train.lr", [](RunConfig& c, const Value& v) { c.train.lr = v.real(); }},
      {"train.momentum_beta", [](RunConfig& c, const Value& v) { c.train.momentum_beta = v.real(); }},
      {"train.beta2", [](RunConfig& c, const Value& v) { c.train.beta2 = v.real(); }},
      {"train.eps", [](RunConfig& c, const Value& v) { c.train.eps = v.real(); }},
      {"train.weight_decay", [](RunConfig& c, const Value& v) { c.train.weight_decay = v.real(); }},
      {"train.lr_decay_factor", [](RunConfig& c, const Value& v) { c.train.lr_decay_factor = v.real(); }},
      {"train.lr_decay_every", [](RunConfig& c, const Value& v) { c.train.lr_decay_every = v.integer(); }},
      {"train.epochs", [](RunConfig& c, const Value& v) { c.train.epochs = v.integer(); }},
      {"train.batch_size", [](RunConfig& c, const Value& v) { c.train.batch_size = v.integer(); }},
      {"train.augment", [](RunConfig& c, const Value& v) { c.train.augment = v.boolean(); }},

      {"data.manifest",
       [base](RunConfig& c, const Value& v) {
         std::filesystem::path p(v.text);
         if (p.is_relative()) p = base / p;
         if (!std::filesystem::is_regular_file(p)) throw IoError("config: data manifest " + p.string() + " not found");
         c.data.manifest = p;
       }},
      {"data.classes", [](RunConfig& c, const Value& v) { c.data.classes = v.integer(); }},
      {"data.per_class", [](RunConfig& c, const Value& v) { c.data.per_class = v.integer(); }},
      {"data.points", [](RunConfig& c, const Value& v) { c.data.points = v.integer(); }},
      {"data.seed", [](RunConfig& c, const Value& v) { c.data.seed = v.unsigned_integer(); }},

      {"output.dir", [](RunConfig& c, const Value& v) { c.output.dir = v.text; }},
      {"output.checkpoint", [](RunConfig& c, const Value& v) { c.output.checkpoint = v.text; }},
      {"output.last", [](RunConfig& c, const Value& v) { c.output.last = v.text; }},
      {"output.history", [](RunConfig& c, const Value& v) { c.output.history = v.text; }},
      {"output.energy", [](RunConfig& c, const Value& v) { c.output.energy = v.text; }},
  };
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  model.seed = s;
  train.seed = s;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  cfg.model = desk_config();
  cfg.train.epochs = 40;
  const auto table = handlers(base_dir);
  std::istringstream is(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      static const char* known[] = {"encoding", "model", "train", "data", "output"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = table.find(full);
    if (it == table.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + full + "'");
    it->second(cfg, Value{full, trim(line.substr(eq + 1)), line_no});
  }
  if (cfg.seed) cfg.apply_seed(*cfg.seed);
  if (cfg.jobs < 1) throw ConfigError("config: jobs must be positive");
  cfg.model.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config " + path.string() + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

Dataset load_dataset(const RunConfig& cfg) {
  if (!cfg.data.manifest.empty()) return load_manifest(cfg.data.manifest);
  return make_benchmark(cfg.data.classes, cfg.data.per_class, cfg.data.points, cfg.data_seed());
}

}  // namespace spt
