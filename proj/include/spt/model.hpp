#pragma once

// Spiking Point Transformer classifier and its training loop.
//
//   encode -> input MLP -> transformer block -> (transition down -> transformer block)* -> head

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spt/blocks.hpp"
#include "spt/data.hpp"
#include "spt/encoding.hpp"
#include "spt/energy.hpp"

namespace spt {

struct SPTConfig {
  EncodingConfig encoding{EncodingMethod::QSDE, 2, 128};
  Index input_points = 256;   // N of every input cloud
  Index input_channels = 3;   // C0
  std::vector<StageConfig> stages{{128, 32, 8, 4}, {32, 64, 8, 4}};
  Index num_classes = 4;
  SpikeSourceConfig source;   // HD-IF or a single neuron kind in front of each transformer block
  std::uint64_t seed = 0;

  // Throws ConfigError on inconsistent plans.
  void validate() const;
};

// Desk-scale plan: T=2, N=256, Q-SDE N_s=128, stages (128, 32) -> (32, 64), N_k=8.
SPTConfig desk_config(Index num_classes = 4);
// Point Transformer widths (32, 64, 128, 256, 512) with ratio-4 downsampling from N_s=512.
SPTConfig full_config(Index num_classes = 40);

class SpikingPointTransformer {
 public:
  explicit SpikingPointTransformer(SPTConfig cfg);

  const SPTConfig& config() const { return cfg_; }

  // Logits [B, num_classes]. Training mode uses batch statistics and dense
  // HD-IF routing; inference folds BatchNorm and routes Top-2.
  Tensor forward(std::span<const PointCloud> batch, bool training,
                 std::vector<AttentionTrace>* traces = nullptr) const;
  Tensor forward_encoded(std::span<const EncodedPointMatrix> batch, bool training,
                         std::vector<AttentionTrace>* traces = nullptr) const;

  EncodedPointMatrix encode(const PointCloud& pc) const;

  // All named tensors (parameters and BatchNorm running statistics) in a fixed order.
  std::vector<NamedTensor> state() const;
  std::vector<Tensor> parameters() const;

  // Same weights evaluated with a different number of time steps (see
  // PointTransformerBlock::retarget_time_steps for the gate).
  void retarget_time_steps(Index time_steps);

 private:
  SPTConfig cfg_;
  InputMlp input_;
  std::vector<PointTransformerBlock> attention_;
  std::vector<TransitionDown> down_;
  ClassificationHead head_;
};

// Instrumented inference over a batch: per-layer AC/MAC counts and spike
// statistics, accumulated over every time step.
energy::OpCounter count_forward(const SpikingPointTransformer& model, std::span<const PointCloud> batch);
// Spike-slot-weighted share of ones over every neuron output for the sample.
double firing_rate(const SpikingPointTransformer& model, std::span<const PointCloud> sample);

// Mean softmax cross-entropy; throws IndexError for labels outside [0, K).
Tensor classification_loss(const Tensor& logits, std::span<const Index> labels);

struct TrainConfig {
  double lr = 1e-3;
  double momentum_beta = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double lr_decay_factor = 0.3;
  Index lr_decay_every = 50;
  Index epochs = 200;
  Index batch_size = 16;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// lr * factor^floor(epoch / every)
double lr_at(const TrainConfig& cfg, Index epoch);

// Decoupled-weight-decay Adam. Moments live alongside the parameter list.
class AdamW {
 public:
  explicit AdamW(std::vector<Tensor> params) : params_(std::move(params)) {}

  // Applies one update at step t (1-based) with learning rate lr; consumes and
  // clears the gradients.
  void step(Index t, double lr, const TrainConfig& cfg);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<Eigen::ArrayXd> m_;
  std::vector<Eigen::ArrayXd> v_;
};

struct Metrics {
  double oa = 0.0;
  double macc = 0.0;
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> confusion;  // rows: truth, cols: prediction
};

Metrics metrics_from_predictions(std::span<const Index> truth, std::span<const Index> predicted, Index num_classes);

// Inference over a split in batches; `jobs` > 1 splits the work across threads.
std::vector<Index> predict(const SpikingPointTransformer& model, std::span<const Sample> samples, Index batch_size,
                           Index jobs = 1);
Metrics evaluate(const SpikingPointTransformer& model, std::span<const Sample> samples, Index num_classes,
                 Index batch_size, Index jobs = 1);

struct EpochRecord {
  Index epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double oa = 0.0;
  double macc = 0.0;
};

struct TrainOptions {
  // Called after every epoch (e.g. to stream JSONL).
  std::function<void(const EpochRecord&)> on_epoch;
  // Called whenever a new best test OA is reached.
  std::function<void(const SpikingPointTransformer&, const EpochRecord&)> on_best;
  Index jobs = 1;
};

std::vector<EpochRecord> train(SpikingPointTransformer& model, const Dataset& data, const TrainConfig& cfg,
                               const TrainOptions& options = {});

std::string to_json_line(const EpochRecord& r);

}  // namespace spt
