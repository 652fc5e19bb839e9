#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "spt/model.hpp"

using namespace spt;

namespace {

SPTConfig micro_config() {
  SPTConfig cfg;
  cfg.encoding = {EncodingMethod::QSDE, 2, 8};
  cfg.input_points = 16;
  cfg.stages = {{8, 4, 4, 2}, {4, 8, 2, 2}};
  cfg.num_classes = 3;
  cfg.seed = 5;
  return cfg;
}

Dataset tiny_dataset(Index per_class, Index points, std::uint64_t seed) {
  return make_benchmark(3, per_class, points, seed);
}

}  // namespace

TEST(Config, DeskAndFullPlansValidate) {
  EXPECT_NO_THROW(desk_config().validate());
  EXPECT_NO_THROW(full_config().validate());
  const SPTConfig d = desk_config();
  EXPECT_EQ(d.encoding.time_steps, 2);
  EXPECT_EQ(d.encoding.samples_per_step, 128);
  EXPECT_EQ(d.input_points, 256);
  ASSERT_EQ(d.stages.size(), 2u);
  EXPECT_EQ(d.stages[0].points, 128);
  EXPECT_EQ(d.stages[0].channels, 32);
  EXPECT_EQ(d.stages[1].points, 32);
  EXPECT_EQ(d.stages[1].channels, 64);
  EXPECT_EQ(d.stages[0].neighbors, 8);
}

TEST(Config, InconsistentPlansAreRejected) {
  SPTConfig c = micro_config();
  c.stages[0].points = 7;  // must equal the encoded step size
  EXPECT_THROW(c.validate(), ConfigError);
  c = micro_config();
  c.stages[1].points = 8;  // not decreasing
  EXPECT_THROW(c.validate(), ConfigError);
  c = micro_config();
  c.stages[1].neighbors = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = micro_config();
  c.encoding.samples_per_step = 32;
  EXPECT_THROW(c.validate(), ConfigError);
  c = micro_config();
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(SpikingPointTransformer{c}, ConfigError);
}

TEST(Model, LogitShapeAndDeterminism) {
  const SpikingPointTransformer model(micro_config());
  std::mt19937_64 rng(1);
  const std::vector<PointCloud> batch{oracle::random_cloud(16, rng), oracle::random_cloud(16, rng)};
  for (bool training : {false, true}) {
    const Tensor a = model.forward(batch, training);
    const Tensor b = model.forward(batch, training);
    EXPECT_EQ(a.shape(), (Shape{2, 3}));
    EXPECT_TRUE((a.data() == b.data()).all());
  }
}

TEST(Model, WrongCloudSizeIsRejected) {
  const SpikingPointTransformer model(micro_config());
  std::mt19937_64 rng(2);
  const std::vector<PointCloud> batch{oracle::random_cloud(17, rng)};
  EXPECT_ANY_THROW(model.forward(batch, false));
}

TEST(Model, InferenceIsPerInstance) {
  const SpikingPointTransformer model(micro_config());
  std::mt19937_64 rng(3);
  const std::vector<PointCloud> batch{oracle::random_cloud(16, rng), oracle::random_cloud(16, rng),
                                      oracle::random_cloud(16, rng)};
  const Tensor all = model.forward(batch, false);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor one = model.forward(std::span<const PointCloud>(&batch[i], 1), false);
    for (Index k = 0; k < 3; ++k) EXPECT_NEAR(one.at({0, k}), all.at({static_cast<Index>(i), k}), 1e-12);
  }
}

TEST(Model, PermutationInvariance) {
  SPTConfig cfg = desk_config(4);
  cfg.seed = 3;
  const SpikingPointTransformer model(cfg);
  std::mt19937_64 rng(4);
  PointCloud pc = oracle::random_cloud(256, rng);
  normalize_unit_sphere(pc);
  const Tensor ref = model.forward(std::span<const PointCloud>(&pc, 1), false);
  std::vector<Index> perm(256);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 3; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud q = pc;
    for (Index i = 0; i < 256; ++i) q.xyz.row(i) = pc.xyz.row(perm[static_cast<std::size_t>(i)]);
    const Tensor out = model.forward(std::span<const PointCloud>(&q, 1), false);
    EXPECT_LT((out.data() - ref.data()).abs().maxCoeff(), 1e-9);
  }
}

TEST(Loss, UniformLogitsAndRange) {
  const std::vector<Index> labels{0, 3};
  EXPECT_NEAR(classification_loss(Tensor({2, 4}), labels).item(), std::log(4.0), 1e-15);
  Eigen::ArrayXd d = Eigen::ArrayXd::Zero(4);
  d(1) = 200.0;
  const std::vector<Index> one{1};
  EXPECT_LT(classification_loss(Tensor({1, 4}, d), one).item(), 1e-80);
  const std::vector<Index> bad{4};
  EXPECT_THROW(classification_loss(Tensor({1, 4}), bad), IndexError);
}

TEST(Schedule, StepDecay) {
  const TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at(cfg, 0), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 49), 0.001);
  EXPECT_NEAR(lr_at(cfg, 50), 0.0003, 1e-18);
  EXPECT_NEAR(lr_at(cfg, 149), 0.001 * 0.09, 1e-18);
}

TEST(AdamW, ZeroGradientNoDecayLeavesWeights) {
  Tensor w = Tensor::parameter({3}, (Eigen::ArrayXd(3) << 1, -2, 3).finished());
  AdamW opt({w});
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  sum(scale(w, 0.0)).backward();
  opt.step(1, 0.01, cfg);
  EXPECT_TRUE((w.data() == (Eigen::ArrayXd(3) << 1, -2, 3).finished()).all());
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  // bias-corrected first step: m_hat / sqrt(v_hat) = sign(g)
  Tensor w = Tensor::parameter({2}, (Eigen::ArrayXd(2) << 1, 1).finished());
  AdamW opt({w});
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  sum(mul(w, Tensor({2}, (Eigen::ArrayXd(2) << 3, -0.5).finished()))).backward();
  opt.step(1, 0.1, cfg);
  EXPECT_NEAR(w.data()(0), 0.9, 1e-7);
  EXPECT_NEAR(w.data()(1), 1.1, 1e-6);
  EXPECT_FALSE(w.has_grad());
}

TEST(AdamW, DecoupledDecay) {
  Tensor w = Tensor::parameter({1}, Eigen::ArrayXd::Constant(1, 2.0));
  AdamW opt({w});
  TrainConfig cfg;
  cfg.weight_decay = 0.5;
  opt.step(1, 0.1, cfg);  // no gradient: only the decay acts
  EXPECT_DOUBLE_EQ(w.data()(0), 2.0 * (1.0 - 0.1 * 0.5));
}

TEST(Metrics, DefinitionAndEmpty) {
  const std::vector<Index> truth{0, 0, 0, 1, 2, 2};
  const std::vector<Index> pred{0, 0, 1, 1, 2, 0};
  const Metrics m = metrics_from_predictions(truth, pred, 3);
  EXPECT_DOUBLE_EQ(m.oa, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(m.macc, (2.0 / 3.0 + 1.0 + 0.5) / 3.0);
  EXPECT_EQ(m.confusion(0, 1), 1);
  EXPECT_EQ(m.confusion(2, 0), 1);
  EXPECT_EQ(m.confusion.sum(), 6);
  EXPECT_THROW(metrics_from_predictions({}, {}, 3), ContractError);
}

TEST(Train, SmoothStepLowersLoss) {
  SmoothSpikeGuard smooth;
  SpikingPointTransformer model(micro_config());
  const Dataset ds = tiny_dataset(5, 16, 7);
  std::vector<PointCloud> clouds;
  std::vector<Index> labels;
  for (const auto& s : ds.train) {
    clouds.push_back(s.cloud);
    labels.push_back(s.label);
  }
  AdamW opt(model.parameters());
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  const Tensor before = classification_loss(model.forward(clouds, true), labels);
  before.backward();
  opt.step(1, 1e-3, cfg);
  NoGradGuard no_grad;
  const double after = classification_loss(model.forward(clouds, true), labels).item();
  EXPECT_LT(after, before.item());
}

TEST(Train, SeedDeterminismAndRanges) {
  const Dataset ds = tiny_dataset(5, 16, 8);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 11;
  auto run = [&] {
    SpikingPointTransformer model(micro_config());
    return train(model, ds, cfg);
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(to_json_line(a[i]), to_json_line(b[i]));
    EXPECT_GE(a[i].oa, 0.0);
    EXPECT_LE(a[i].oa, 1.0);
    EXPECT_GE(a[i].macc, 0.0);
    EXPECT_LE(a[i].macc, 1.0);
  }
}

TEST(Train, EmptySplitsAreErrors) {
  SpikingPointTransformer model(micro_config());
  Dataset ds = tiny_dataset(2, 16, 9);
  TrainConfig cfg;
  cfg.epochs = 1;
  Dataset no_train = ds;
  no_train.train.clear();
  EXPECT_THROW(train(model, no_train, cfg), ContractError);
  Dataset no_test = ds;
  no_test.test.clear();
  EXPECT_THROW(train(model, no_test, cfg), ContractError);
}

TEST(Train, JsonLineKeys) {
  EXPECT_EQ(to_json_line({3, 0.5, 1.25, 0.75, 0.5}), R"({"epoch":3,"lr":0.5,"loss":1.25,"oa":0.75,"macc":0.5})");
}

TEST(Predict, ThreadsAgreeWithSerial) {
  const SpikingPointTransformer model(micro_config());
  const Dataset ds = tiny_dataset(6, 16, 10);
  EXPECT_EQ(predict(model, ds.train, 4, 1), predict(model, ds.train, 4, 3));
}

TEST(Energy, ZeroNetworkDoesNotFire) {
  SpikingPointTransformer model(micro_config());
  for (auto& nt : model.state())
    if (nt.trainable) nt.tensor.mutable_data().setZero();
  std::mt19937_64 rng(12);
  const PointCloud pc = oracle::random_cloud(16, rng);
  EXPECT_EQ(firing_rate(model, std::span<const PointCloud>(&pc, 1)), 0.0);
  EXPECT_EQ(count_forward(model, std::span<const PointCloud>(&pc, 1)).ac_ops(), 0);
}

TEST(Energy, MoreStepsMoreAccumulates) {
  SPTConfig cfg = micro_config();
  cfg.encoding = {EncodingMethod::Direct, 4, 0};
  cfg.stages[0].points = 16;
  cfg.stages[1].points = 8;
  SpikingPointTransformer t4(cfg);
  SpikingPointTransformer t1(cfg);
  t1.retarget_time_steps(1);
  std::mt19937_64 rng(13);
  const PointCloud pc = oracle::random_cloud(16, rng);
  const auto c4 = count_forward(t4, std::span<const PointCloud>(&pc, 1));
  const auto c1 = count_forward(t1, std::span<const PointCloud>(&pc, 1));
  EXPECT_LT(c1.ac_ops(), c4.ac_ops());
  EXPECT_GT(c1.ac_ops(), 0);
  const double fr = firing_rate(t4, std::span<const PointCloud>(&pc, 1));
  EXPECT_GE(fr, 0.0);
  EXPECT_LE(fr, 1.0);
}
