// spt: encode point clouds, train / evaluate the classifier, count energy,
// run gradient checks and generate synthetic data.
//
// Exit status: 0 success, 1 failed check, 2 configuration or contract error,
// 3 I/O error.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "spt/checkpoint.hpp"
#include "spt/gradcheck.hpp"
#include "spt/run_config.hpp"
#include "spt/runtime.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kCheckFailed = 1;
constexpr int kConfigError = 2;
constexpr int kIoError = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  spt::Index jobs = 0;
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("SPT_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == std::strlen(s)) return v;
  } catch (const std::exception&) {
  }
  throw spt::ConfigError(std::string("SPT_SEED must be a non-negative integer, got '") + s + "'");
}

// --seed beats the config file, which beats SPT_SEED.
spt::RunConfig resolve(const Common& c) {
  spt::RunConfig cfg = c.config.empty() ? spt::parse_run_config("") : spt::load_run_config(c.config);
  if (c.seed) {
    cfg.apply_seed(*c.seed);
  } else if (!cfg.seed) {
    cfg.apply_seed(env_seed().value_or(0));
  }
  if (!c.out_dir.empty()) cfg.output.dir = c.out_dir;
  if (c.jobs > 0) cfg.jobs = c.jobs;
  return cfg;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw spt::IoError("cannot write " + p.string());
  return os;
}

spt::Dataset dataset_for(const spt::RunConfig& cfg) {
  spt::Dataset ds = spt::load_dataset(cfg);
  if (ds.num_classes() != cfg.model.num_classes) {
    throw spt::ConfigError("dataset has " + std::to_string(ds.num_classes()) + " classes but model.num_classes = " +
                           std::to_string(cfg.model.num_classes));
  }
  return ds;
}

json metrics_json(const spt::Metrics& m, const spt::Dataset& ds) {
  json confusion = json::array();
  json counts = json::array();
  for (spt::Index r = 0; r < m.confusion.rows(); ++r) {
    json row = json::array();
    for (spt::Index c = 0; c < m.confusion.cols(); ++c) row.push_back(m.confusion(r, c));
    confusion.push_back(row);
    counts.push_back(m.confusion.row(r).sum());
  }
  json j;
  j["oa"] = m.oa;
  j["macc"] = m.macc;
  j["class_names"] = ds.class_names;
  j["class_counts"] = counts;
  j["confusion"] = confusion;
  return j;
}

json energy_json(const spt::energy::EnergyReport& r, spt::Index samples, spt::Index time_steps) {
  json layers = json::array();
  for (const auto& l : r.layers) {
    json e;
    e["name"] = l.name;
    e["kind"] = l.kind == spt::energy::OpKind::AC ? "AC" : "MAC";
    e["ops"] = l.ops;
    e["input_firing_rate"] = l.input_firing_rate();
    layers.push_back(e);
  }
  json j;
  j["ac_ops"] = r.ac_ops;
  j["mac_ops"] = r.mac_ops;
  j["energy_mj"] = r.energy_mj;
  j["firing_rate"] = r.firing_rate;
  j["preprocessing_ops"] = r.preprocessing_ops;
  j["samples"] = samples;
  j["time_steps"] = time_steps;
  j["display"] = {{"ac_gops", r.ac_gops_display()}, {"mac_gops", r.mac_gops_display()},
                  {"energy_mj", r.energy_display()}};
  j["layers"] = layers;
  return j;
}

int cmd_encode(const Common& c, const std::string& input, const std::string& output) {
  const spt::RunConfig cfg = resolve(c);
  const spt::EncodingConfig& enc = cfg.model.encoding;
  const spt::PointCloud pc = spt::load_xyz(input, 1);
  const spt::EncodedPointMatrix pe = spt::encode(pc, enc, *cfg.seed);
  std::ofstream os = open_out(output);
  spt::write_encoded(os, pe);
  if (!os) throw spt::IoError("write failed: " + output);
  const spt::Index n = pc.size();
  if (enc.method == spt::EncodingMethod::QSDE && enc.time_steps > 1) {
    std::cout << "N_p = " << spt::dequeue_count(n, enc.samples_per_step, enc.time_steps) << '\n';
  } else {
    std::cout << "N_p = 0\n";
  }
  std::cout << "unused = " << spt::unused_point_count(pe, n) << '\n';
  return 0;
}

int cmd_train(const Common& c, std::optional<spt::Index> epochs) {
  spt::RunConfig cfg = resolve(c);
  if (epochs) cfg.train.epochs = *epochs;
  const spt::Dataset ds = dataset_for(cfg);
  spt::SpikingPointTransformer model(cfg.model);

  const fs::path history_path = cfg.output.resolve(cfg.output.history);
  const fs::path best_path = cfg.output.resolve(cfg.output.checkpoint);
  std::ofstream history = open_out(history_path);
  spt::TrainOptions options;
  options.jobs = cfg.jobs;
  options.on_epoch = [&](const spt::EpochRecord& r) {
    history << spt::to_json_line(r) << '\n' << std::flush;
    std::cout << "epoch " << r.epoch << "  lr " << r.lr << "  loss " << std::fixed << std::setprecision(4) << r.loss
              << "  oa " << r.oa << "  macc " << r.macc << std::defaultfloat << std::endl;
  };
  options.on_best = [&](const spt::SpikingPointTransformer& m, const spt::EpochRecord&) {
    spt::save_checkpoint(best_path, m);
  };
  const auto records = spt::train(model, ds, cfg.train, options);
  spt::save_checkpoint(cfg.output.resolve(cfg.output.last), model);
  if (!history) throw spt::IoError("write failed: " + history_path.string());

  double best = 0.0;
  for (const auto& r : records) best = std::max(best, r.oa);
  std::cout << "best oa " << best << "  final oa " << records.back().oa << "\ncheckpoint " << best_path.string()
            << "\nhistory " << history_path.string() << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  const spt::RunConfig cfg = resolve(c);
  const spt::SpikingPointTransformer model =
      spt::load_checkpoint(checkpoint.empty() ? cfg.output.resolve(cfg.output.checkpoint) : fs::path(checkpoint));
  spt::RunConfig data_cfg = cfg;
  data_cfg.model = model.config();
  const spt::Dataset ds = dataset_for(data_cfg);
  const spt::Metrics m = spt::evaluate(model, ds.test, model.config().num_classes, cfg.train.batch_size, cfg.jobs);
  std::cout << metrics_json(m, ds).dump(2) << '\n';
  return 0;
}

int cmd_energy(const Common& c, const std::string& checkpoint, std::optional<spt::Index> time_steps,
               spt::Index samples) {
  const spt::RunConfig cfg = resolve(c);
  spt::SpikingPointTransformer model =
      spt::load_checkpoint(checkpoint.empty() ? cfg.output.resolve(cfg.output.checkpoint) : fs::path(checkpoint));
  if (time_steps) model.retarget_time_steps(*time_steps);
  spt::RunConfig data_cfg = cfg;
  data_cfg.model = model.config();
  const spt::Dataset ds = dataset_for(data_cfg);
  if (ds.test.empty()) throw spt::ContractError("energy: empty test set");
  const std::size_t count = samples > 0 ? std::min<std::size_t>(ds.test.size(), static_cast<std::size_t>(samples))
                                        : ds.test.size();
  spt::energy::OpCounter total;
  for (std::size_t i = 0; i < count; ++i) {
    const spt::PointCloud& pc = ds.test[i].cloud;
    total.merge(spt::count_forward(model, std::span<const spt::PointCloud>(&pc, 1)));
  }
  const json j = energy_json(spt::energy::report(total), static_cast<spt::Index>(count),
                             model.config().encoding.time_steps);
  std::ofstream os = open_out(cfg.output.resolve(cfg.output.energy));
  os << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int trials, bool inject_fault) {
  const auto results = spt::run_gradchecks(spt::gradcheck_registry(inject_fault), seed, trials);
  bool ok = true;
  std::cout << std::left << std::setw(26) << "check" << std::setw(14) << "max_rel_err" << std::setw(10) << "tol"
            << "status\n";
  for (const auto& r : results) {
    std::cout << std::left << std::setw(26) << r.name << std::setw(14) << std::setprecision(3) << std::scientific
              << r.max_error << std::setw(10) << std::setprecision(0) << r.tolerance << std::defaultfloat
              << (r.passed ? "PASS" : "FAIL") << '\n';
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all checks passed" : "gradient check FAILED") << '\n';
  return ok ? 0 : kCheckFailed;
}

int cmd_gen_data(const Common& c, std::optional<spt::Index> classes, std::optional<spt::Index> per_class,
                 std::optional<spt::Index> points, const std::string& out) {
  spt::RunConfig cfg = resolve(c);
  if (classes) cfg.data.classes = *classes;
  if (per_class) cfg.data.per_class = *per_class;
  if (points) cfg.data.points = *points;
  const spt::Dataset ds =
      spt::make_benchmark(cfg.data.classes, cfg.data.per_class, cfg.data.points, cfg.data_seed());
  const fs::path manifest = spt::write_dataset(ds, out.empty() ? cfg.output.dir : fs::path(out));
  std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size() << " test instances\nmanifest "
            << manifest.string() << '\n';
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool with_paths = true) {
  sub->add_option("-c,--config", c.config, "run definition (key = value with [sections])");
  sub->add_option("--seed", c.seed, "overrides the config seed and SPT_SEED");
  if (with_paths) {
    sub->add_option("--out-dir", c.out_dir, "overrides [output] dir");
    sub->add_option("--jobs", c.jobs, "parallel evaluation width")->check(CLI::PositiveNumber);
  }
}

}  // namespace

int main(int argc, char** argv) {
  spt::retain_freed_memory();
  CLI::App app{"Spiking point transformer toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string input, output, checkpoint;
  std::optional<spt::Index> epochs, time_steps, classes, per_class, points;
  spt::Index samples = 0;
  std::uint64_t gc_seed = 0;
  int trials = 3;
  bool inject_fault = false;

  auto* encode = app.add_subcommand("encode", "encode one xyz cloud into T point sets");
  add_common(encode, common, false);
  encode->add_option("-i,--input", input, "xyz file")->required();
  encode->add_option("-o,--output", output, "encoded text file")->required();

  auto* train = app.add_subcommand("train", "train and write best checkpoint + JSONL history");
  add_common(train, common);
  train->add_option("--epochs", epochs, "overrides [train] epochs");

  auto* eval = app.add_subcommand("eval", "test-split metrics of a checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "defaults to the [output] checkpoint");

  auto* energy = app.add_subcommand("energy", "operation counts and energy over the test split");
  add_common(energy, common);
  energy->add_option("--checkpoint", checkpoint, "defaults to the [output] checkpoint");
  energy->add_option("--time-steps", time_steps, "evaluate the same weights with another T");
  energy->add_option("--samples", samples, "limit to the first n test instances (0 = all)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--seed", gc_seed, "first trial seed");
  gradcheck->add_option("--trials", trials, "seeds per check")->check(CLI::PositiveNumber);
  gradcheck->add_flag("--inject-fault", inject_fault, "test fixture: break the mul backward rule")->group("");

  auto* gen = app.add_subcommand("gen-data", "write the synthetic benchmark as xyz files + manifest");
  add_common(gen, common, false);
  gen->add_option("--classes", classes);
  gen->add_option("--per-class", per_class);
  gen->add_option("--points", points);
  gen->add_option("-o,--out", output, "target directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*encode) return cmd_encode(common, input, output);
    if (*train) return cmd_train(common, epochs);
    if (*eval) return cmd_eval(common, checkpoint);
    if (*energy) return cmd_energy(common, checkpoint, time_steps, samples);
    if (*gradcheck) return cmd_gradcheck(gc_seed, trials, inject_fault);
    if (*gen) return cmd_gen_data(common, classes, per_class, points, output);
  } catch (const spt::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kConfigError;
}
