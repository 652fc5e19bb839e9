#include "spt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <thread>

#include <nlohmann/json.hpp>

namespace spt {

namespace {

std::uint64_t hash_cloud(const PointCloud& pc, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  const auto* bytes = reinterpret_cast<const unsigned char*>(pc.xyz.data());
  const std::size_t len = static_cast<std::size_t>(pc.xyz.size()) * sizeof(double);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

Index argmax_row(const Eigen::ArrayXd& logits, Index row, Index k) {
  Index best = 0;
  for (Index j = 1; j < k; ++j) {
    if (logits[row * k + j] > logits[row * k + best]) best = j;
  }
  return best;
}

}  // namespace

// ---------------------------------------------------------------- config

void SPTConfig::validate() const {
  if (encoding.time_steps < 1) throw ConfigError("model: time steps must be at least 1");
  if (input_points < 1) throw ConfigError("model: input_points must be positive");
  if (input_channels < 3) throw ConfigError("model: input_channels must include xyz");
  if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (stages.empty()) throw ConfigError("model: stage list is empty");
  if (encoding.method == EncodingMethod::QSDE &&
      (encoding.samples_per_step < 1 || encoding.samples_per_step > input_points)) {
    throw ConfigError("model: Q-SDE needs 1 <= N_s <= N");
  }
  const Index first = encoded_points_per_step(encoding, input_points);
  if (stages.front().points != first) {
    throw ConfigError("model: first stage has " + std::to_string(stages.front().points) +
                      " points but the encoding yields " + std::to_string(first) + " per step");
  }
  for (std::size_t l = 0; l < stages.size(); ++l) {
    const StageConfig& s = stages[l];
    if (s.channels < 1) throw ConfigError("model: stage channels must be positive");
    if (s.neighbors < 1 || s.neighbors > s.points) {
      throw ConfigError("model: stage " + std::to_string(l) + " needs 1 <= N_k <= N_l");
    }
    if (l > 0 && s.points >= stages[l - 1].points) {
      throw ConfigError("model: stage point counts must strictly decrease");
    }
  }
}

SPTConfig desk_config(Index num_classes) {
  SPTConfig cfg;
  cfg.encoding = {EncodingMethod::QSDE, 2, 128};
  cfg.input_points = 256;
  cfg.stages = {{128, 32, 8, 4}, {32, 64, 8, 4}};
  cfg.num_classes = num_classes;
  return cfg;
}

SPTConfig full_config(Index num_classes) {
  SPTConfig cfg;
  cfg.encoding = {EncodingMethod::QSDE, 4, 512};
  cfg.input_points = 1024;
  cfg.stages = {{512, 32, 16, 4}, {128, 64, 16, 4}, {32, 128, 16, 4}, {8, 256, 8, 4}, {2, 512, 2, 4}};
  cfg.num_classes = num_classes;
  return cfg;
}

// ---------------------------------------------------------------- model

SpikingPointTransformer::SpikingPointTransformer(SPTConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const Index t = cfg_.encoding.time_steps;
  input_ = InputMlp(cfg_.input_channels, cfg_.stages.front().channels, rng);
  attention_.emplace_back("stage0.sptb", t, cfg_.stages.front(), cfg_.source, rng);
  for (std::size_t l = 1; l < cfg_.stages.size(); ++l) {
    const std::string prefix = "stage" + std::to_string(l);
    down_.emplace_back(prefix + ".stdb", cfg_.stages[l - 1].channels, cfg_.stages[l], rng);
    attention_.emplace_back(prefix + ".sptb", t, cfg_.stages[l], cfg_.source, rng);
  }
  head_ = ClassificationHead(cfg_.stages.back().channels, cfg_.num_classes, rng);
}

EncodedPointMatrix SpikingPointTransformer::encode(const PointCloud& pc) const {
  if (pc.size() != cfg_.input_points || pc.channels() != cfg_.input_channels) {
    throw ConfigError("model: expected clouds of " + std::to_string(cfg_.input_points) + " points x " +
                      std::to_string(cfg_.input_channels) + " channels, got " + std::to_string(pc.size()) + " x " +
                      std::to_string(pc.channels()));
  }
  return spt::encode(pc, cfg_.encoding, hash_cloud(pc, cfg_.seed));
}

Tensor SpikingPointTransformer::forward(std::span<const PointCloud> batch, bool training,
                                        std::vector<AttentionTrace>* traces) const {
  std::vector<EncodedPointMatrix> encoded;
  encoded.reserve(batch.size());
  for (const PointCloud& pc : batch) encoded.push_back(encode(pc));
  return forward_encoded(encoded, training, traces);
}

Tensor SpikingPointTransformer::forward_encoded(std::span<const EncodedPointMatrix> batch, bool training,
                                                std::vector<AttentionTrace>* traces) const {
  auto trace_slot = [&]() -> AttentionTrace* {
    if (!traces) return nullptr;
    traces->emplace_back();
    return &traces->back();
  };
  StageState s = input_.forward(batch, training);
  s = attention_.front().forward(s, training, trace_slot());
  for (std::size_t l = 0; l < down_.size(); ++l) {
    s = down_[l].forward(s, training);
    s = attention_[l + 1].forward(s, training, trace_slot());
  }
  return head_.forward(s, training);
}

std::vector<NamedTensor> SpikingPointTransformer::state() const {
  std::vector<NamedTensor> out;
  input_.collect(out);
  attention_.front().collect(out);
  for (std::size_t l = 0; l < down_.size(); ++l) {
    down_[l].collect(out);
    attention_[l + 1].collect(out);
  }
  head_.collect(out);
  return out;
}

std::vector<Tensor> SpikingPointTransformer::parameters() const {
  std::vector<Tensor> out;
  for (const NamedTensor& t : state()) {
    if (t.trainable) out.push_back(t.tensor);
  }
  return out;
}

void SpikingPointTransformer::retarget_time_steps(Index time_steps) {
  SPTConfig next = cfg_;
  next.encoding.time_steps = time_steps;
  next.validate();
  cfg_ = next;
  for (auto& block : attention_) block.retarget_time_steps(time_steps);
}

energy::OpCounter count_forward(const SpikingPointTransformer& model, std::span<const PointCloud> batch) {
  energy::OpCounter counter;
  NoGradGuard no_grad;
  energy::CountingScope scope(counter);
  model.forward(batch, /*training=*/false);
  return counter;
}

double firing_rate(const SpikingPointTransformer& model, std::span<const PointCloud> sample) {
  if (sample.empty()) throw ContractError("firing_rate: need at least one instance");
  return count_forward(model, sample).firing_rate();
}

Tensor classification_loss(const Tensor& logits, std::span<const Index> labels) {
  return cross_entropy(logits, labels);
}

// ---------------------------------------------------------------- optimisation

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(momentum_beta > 0.0 && momentum_beta < 1.0)) throw ConfigError("train: momentum_beta must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("train: beta2 must lie in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) throw ConfigError("train: lr_decay_factor must lie in (0, 1)");
  if (lr_decay_every < 1) throw ConfigError("train: lr_decay_every must be positive");
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
}

double lr_at(const TrainConfig& cfg, Index epoch) {
  if (epoch < 0) throw ContractError("lr_at: epoch must be non-negative");
  return cfg.lr * std::pow(cfg.lr_decay_factor, static_cast<double>(epoch / cfg.lr_decay_every));
}

void AdamW::step(Index t, double lr, const TrainConfig& cfg) {
  if (t < 1) throw ContractError("AdamW: step counter starts at 1");
  if (m_.empty()) {
    for (const Tensor& p : params_) {
      m_.push_back(Eigen::ArrayXd::Zero(p.numel()));
      v_.push_back(Eigen::ArrayXd::Zero(p.numel()));
    }
  }
  const double b1 = cfg.momentum_beta;
  const double b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    Eigen::ArrayXd& w = p.mutable_data();
    w *= 1.0 - lr * cfg.weight_decay;
    if (p.has_grad()) {
      const Eigen::ArrayXd& g = p.grad();
      m_[i] = b1 * m_[i] + (1.0 - b1) * g;
      v_[i] = b2 * v_[i] + (1.0 - b2) * g.square();
    } else {
      m_[i] *= b1;
      v_[i] *= b2;
    }
    w -= lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + cfg.eps);
    p.zero_grad();
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------- evaluation

Metrics metrics_from_predictions(std::span<const Index> truth, std::span<const Index> predicted, Index num_classes) {
  if (truth.size() != predicted.size()) throw DimensionError("metrics: truth and prediction counts differ");
  if (truth.empty()) throw ContractError("metrics: empty evaluation set");
  Metrics m;
  m.confusion = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>::Zero(num_classes, num_classes);
  Index correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes) {
      throw IndexError("metrics: label outside [0, " + std::to_string(num_classes) + ")");
    }
    ++m.confusion(truth[i], predicted[i]);
    correct += truth[i] == predicted[i] ? 1 : 0;
  }
  m.oa = static_cast<double>(correct) / static_cast<double>(truth.size());
  double recall_sum = 0.0;
  Index present = 0;
  for (Index c = 0; c < num_classes; ++c) {
    const Index support = m.confusion.row(c).sum();
    if (support == 0) continue;
    recall_sum += static_cast<double>(m.confusion(c, c)) / static_cast<double>(support);
    ++present;
  }
  m.macc = recall_sum / static_cast<double>(present);
  return m;
}

std::vector<Index> predict(const SpikingPointTransformer& model, std::span<const Sample> samples, Index batch_size,
                           Index jobs) {
  std::vector<Index> out(samples.size());
  const Index k = model.config().num_classes;
  auto run = [&](std::size_t begin, std::size_t end) {
    NoGradGuard no_grad;
    for (std::size_t b = begin; b < end; b += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(end, b + static_cast<std::size_t>(batch_size));
      std::vector<PointCloud> clouds;
      for (std::size_t i = b; i < stop; ++i) clouds.push_back(samples[i].cloud);
      Tensor logits = model.forward(clouds, /*training=*/false);
      for (std::size_t i = b; i < stop; ++i) out[i] = argmax_row(logits.data(), static_cast<Index>(i - b), k);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max<Index>(jobs, 1)), 1,
                                                      std::max<std::size_t>(samples.size(), 1));
  if (workers == 1) {
    run(0, samples.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (samples.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(samples.size(), begin + chunk);
    if (begin < end) pool.emplace_back(run, begin, end);
  }
  for (auto& th : pool) th.join();
  return out;
}

Metrics evaluate(const SpikingPointTransformer& model, std::span<const Sample> samples, Index num_classes,
                 Index batch_size, Index jobs) {
  if (samples.empty()) throw ContractError("evaluate: empty test set");
  const std::vector<Index> predicted = predict(model, samples, batch_size, jobs);
  std::vector<Index> truth;
  truth.reserve(samples.size());
  for (const Sample& s : samples) truth.push_back(s.label);
  return metrics_from_predictions(truth, predicted, num_classes);
}

// ---------------------------------------------------------------- training

std::vector<EpochRecord> train(SpikingPointTransformer& model, const Dataset& data, const TrainConfig& cfg,
                               const TrainOptions& options) {
  cfg.validate();
  if (data.train.empty()) throw ContractError("train: empty training set");
  if (data.test.empty()) throw ContractError("train: empty test set");
  std::mt19937_64 rng(cfg.seed);
  AdamW optimizer(model.parameters());
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochRecord> history;
  double best = -1.0;
  Index step = 0;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<PointCloud> clouds;
      std::vector<Index> labels;
      for (std::size_t i = b; i < stop; ++i) {
        const Sample& s = data.train[order[i]];
        clouds.push_back(s.cloud);
        if (cfg.augment) augment(clouds.back(), rng);
        labels.push_back(s.label);
      }
      Tensor loss = classification_loss(model.forward(clouds, /*training=*/true), labels);
      loss.backward();
      optimizer.step(++step, lr, cfg);
      loss_sum += loss.item() * static_cast<double>(stop - b);
    }
    const Metrics m = evaluate(model, data.test, model.config().num_classes, cfg.batch_size, options.jobs);
    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(order.size()), m.oa, m.macc};
    history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (rec.oa > best) {
      best = rec.oa;
      if (options.on_best) options.on_best(model, rec);
    }
  }
  return history;
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  j["oa"] = r.oa;
  j["macc"] = r.macc;
  return j.dump();
}

}  // namespace spt
