#pragma once

// Run definitions for the command-line tool: a `key = value` file with
// `[section]` headers. Unknown sections and keys are rejected; `#` starts a
// comment. Example:
//
//   seed = 7
//   [encoding]
//   method = qsde
//   time_steps = 2
//   samples_per_step = 128
//   [model]
//   input_points = 256
//   stages = 128 32 8 4; 32 64 8 4
//   source = hdif
//   [train]
//   epochs = 40
//   [data]
//   classes = 4
//   per_class = 100
//   [output]
//   dir = runs/desk

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "spt/data.hpp"
#include "spt/model.hpp"

namespace spt {

struct DataConfig {
  // Dataset manifest (see load_manifest); empty selects the synthetic benchmark.
  std::filesystem::path manifest;
  Index classes = 4;
  Index per_class = 100;
  Index points = 256;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct OutputConfig {
  std::filesystem::path dir = ".";
  std::filesystem::path checkpoint = "best.ckpt";  // relative to dir; best test OA
  std::filesystem::path last = "last.ckpt";        // weights after the final epoch
  std::filesystem::path history = "history.jsonl";
  std::filesystem::path energy = "energy.json";

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : dir / p; }
};

struct RunConfig {
  SPTConfig model;
  TrainConfig train;
  DataConfig data;
  OutputConfig output;
  std::optional<std::uint64_t> seed;
  Index jobs = 1;

  // Propagates the run seed into model, training and synthetic data.
  void apply_seed(std::uint64_t seed);
  std::uint64_t data_seed() const { return data.seed.value_or(seed.value_or(0)); }
};

// Relative input paths resolve against `base_dir`. Throws ParseError or
// ConfigError on malformed content and IoError on unreadable inputs.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);

// Dataset described by the [data] section.
Dataset load_dataset(const RunConfig& cfg);

}  // namespace spt
