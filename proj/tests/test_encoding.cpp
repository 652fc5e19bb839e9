#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "spt/encoding.hpp"

using namespace spt;

TEST(DequeueCount, KnownValues) {
  EXPECT_EQ(dequeue_count(1024, 512, 4), 170);
  EXPECT_EQ(dequeue_count(1024, 1024, 4), 0);
  EXPECT_EQ(dequeue_count(1024, 768, 2), 256);
}

TEST(DequeueCount, SingleStepIsContractError) {
  EXPECT_THROW(dequeue_count(1024, 512, 1), ContractError);
  EXPECT_THROW(dequeue_count(1024, 512, 0), ContractError);
}

TEST(Qsde, SingleStepIsFullCloudInFpsOrder) {
  std::mt19937_64 rng(1);
  const PointCloud pc = oracle::random_cloud(8, rng);
  const EncodedPointMatrix pe = qsde_encode(pc, {EncodingMethod::QSDE, 1, 8});
  ASSERT_EQ(pe.time_steps(), 1);
  EXPECT_EQ(pe.provenance[0], fps(pc.xyz, 8));
  EXPECT_EQ(unused_point_count(pe, 8), 0);
}

TEST(Qsde, NothingToDequeueRepeatsStep) {
  std::mt19937_64 rng(2);
  const PointCloud pc = oracle::random_cloud(8, rng);
  const EncodedPointMatrix pe = qsde_encode(pc, {EncodingMethod::QSDE, 3, 8});
  ASSERT_EQ(pe.time_steps(), 3);
  EXPECT_EQ(pe.provenance[0], pe.provenance[1]);
  EXPECT_EQ(pe.provenance[1], pe.provenance[2]);
}

TEST(Qsde, TenLabelledPoints) {
  // N=10, N_s=4, T=4: N_p=2, consecutive overlap 2, every point used.
  std::mt19937_64 rng(3);
  const PointCloud pc = oracle::random_cloud(10, rng);
  const EncodedPointMatrix pe = qsde_encode(pc, {EncodingMethod::QSDE, 4, 4});
  EXPECT_EQ(oracle::check_qsde(pc, pe, 4, 4), "");
  EXPECT_EQ(unused_point_count(pe, 10), 0);
  for (std::size_t t = 1; t < 4; ++t) {
    EXPECT_TRUE(std::equal(pe.provenance[t - 1].begin() + 2, pe.provenance[t - 1].end(), pe.provenance[t].begin()));
  }
}

TEST(Qsde, InvariantsOnSmallGrid) {
  std::mt19937_64 rng(4);
  for (Index n : {17, 64, 100}) {
    const PointCloud pc = oracle::random_cloud(n, rng);
    for (Index ns : {1, 5, 16, 40, 64}) {
      if (ns > n) continue;
      for (Index t = 1; t <= 5; ++t) {
        const EncodedPointMatrix pe = qsde_encode(pc, {EncodingMethod::QSDE, t, ns});
        const std::string err = oracle::check_qsde(pc, pe, ns, t);
        if (t == 1 || n <= t * ns) {
          EXPECT_EQ(err, "") << "N=" << n << " N_s=" << ns << " T=" << t;
        } else {
          // N > T * N_s: N_s-sized steps cannot reach the unused bound; everything else holds
          EXPECT_NE(err.find("outside [0, T-2]"), std::string::npos) << "N=" << n << " N_s=" << ns << " T=" << t << err;
        }
      }
    }
  }
}

TEST(Qsde, SamplesExceedingCloudIsCountError) {
  std::mt19937_64 rng(5);
  const PointCloud pc = oracle::random_cloud(8, rng);
  EXPECT_THROW(qsde_encode(pc, {EncodingMethod::QSDE, 2, 9}), CountError);
  EXPECT_THROW(qsde_encode(pc, {EncodingMethod::QSDE, 2, 0}), CountError);
}

TEST(Qsde, ExtraChannelsFollowTheirPoints) {
  std::mt19937_64 rng(6);
  PointCloud pc = oracle::random_cloud(12, rng);
  pc.features = RowMatrix(12, 1);
  for (Index i = 0; i < 12; ++i) pc.features(i, 0) = 100.0 + static_cast<double>(i);
  const EncodedPointMatrix pe = qsde_encode(pc, {EncodingMethod::QSDE, 3, 6});
  EXPECT_EQ(pe.channels(), 4);
  for (std::size_t t = 0; t < 3; ++t)
    for (Index j = 0; j < 6; ++j)
      EXPECT_EQ(pe.steps[t](j, 3), 100.0 + static_cast<double>(pe.provenance[t][static_cast<std::size_t>(j)]));
}

TEST(Direct, RepeatsTheCloud) {
  std::mt19937_64 rng(7);
  const PointCloud pc = oracle::random_cloud(5, rng);
  const EncodedPointMatrix pe = direct_encode(pc, 3);
  ASSERT_EQ(pe.time_steps(), 3);
  for (const auto& s : pe.steps) {
    EXPECT_EQ(s.rows(), 5);
    EXPECT_TRUE(s == pe.steps[0]);
  }
}

TEST(RandomSde, SizesAndDeterminism) {
  std::mt19937_64 rng(8);
  const PointCloud pc = oracle::random_cloud(1024, rng);
  const EncodedPointMatrix one = random_sde_encode(pc, 1, 9);
  EXPECT_EQ(one.samples_per_step(), 1024);
  const EncodedPointMatrix a = random_sde_encode(pc, 4, 42);
  const EncodedPointMatrix b = random_sde_encode(pc, 4, 42);
  EXPECT_EQ(a.samples_per_step(), 256);
  EXPECT_EQ(a.provenance, b.provenance);
  EXPECT_NE(a.provenance, random_sde_encode(pc, 4, 43).provenance);
  for (const auto& s : a.provenance) EXPECT_EQ(std::set<Index>(s.begin(), s.end()).size(), 256u);
}

TEST(Encode, Dispatch) {
  std::mt19937_64 rng(9);
  const PointCloud pc = oracle::random_cloud(32, rng);
  EXPECT_EQ(encode(pc, {EncodingMethod::Direct, 2, 0}).samples_per_step(), 32);
  EXPECT_EQ(encode(pc, {EncodingMethod::RandomSDE, 4, 0}, 1).samples_per_step(), 8);
  EXPECT_EQ(encode(pc, {EncodingMethod::QSDE, 2, 16}).samples_per_step(), 16);
  EXPECT_EQ(encoded_points_per_step({EncodingMethod::RandomSDE, 4, 0}, 32), 8);
}

TEST(Encode, MethodNames) {
  for (auto m : {EncodingMethod::Direct, EncodingMethod::RandomSDE, EncodingMethod::QSDE})
    EXPECT_EQ(parse_encoding_method(to_string(m)), m);
  EXPECT_THROW(parse_encoding_method("fifo"), ConfigError);
}

TEST(Encode, TextFormat) {
  std::mt19937_64 rng(10);
  PointCloud pc = oracle::random_cloud(10, rng);
  pc.features = RowMatrix::Constant(10, 1, 0.5);
  const EncodedPointMatrix pe = qsde_encode(pc, {EncodingMethod::QSDE, 4, 4});
  std::ostringstream os;
  write_encoded(os, pe);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "4 4 4");
  Index lines = 0;
  for (std::string line; std::getline(is, line);) {
    std::istringstream ls(line);
    Index prov;
    double x, y, z, f;
    ASSERT_TRUE(ls >> prov >> x >> y >> z >> f) << line;
    const std::size_t t = static_cast<std::size_t>(lines / 4);
    EXPECT_EQ(prov, pe.provenance[t][static_cast<std::size_t>(lines % 4)]);
    EXPECT_EQ(x, pc.xyz(prov, 0));  // 17 significant digits round-trip exactly
    ++lines;
  }
  EXPECT_EQ(lines, 16);
}
