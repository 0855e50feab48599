#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "binloc/train.hpp"

using namespace binloc;

namespace {

// Toy GCC maps: a Gaussian bump at the lag implied by the azimuth, plus noise.
std::vector<Example> toy_examples(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> az(-90.0, 90.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = az(rng);
    const double centre = 5.0 * std::sin(deg_to_rad(a));
    GccFeature f;
    f.frames = 12;
    f.max_lag = 5;
    f.values.resize(f.frames * f.lags());
    for (std::size_t t = 0; t < f.frames; ++t)
      for (int l = -5; l <= 5; ++l)
        f.values[t * 11 + static_cast<std::size_t>(l + 5)] = std::exp(-0.5 * (l - centre) * (l - centre)) + noise(rng);
    out.push_back({std::move(f), direction_from_azimuth(a)});
  }
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.model = CrnConfig::tiny(11);
  c.learning_rate = 0.01;
  c.batch_size = 8;
  c.epochs = 15;
  c.seed = 4;
  return c;
}

}  // namespace

TEST(Train, LossDecreasesOnLearnableTask) {
  const auto tr = toy_examples(200, 1), va = toy_examples(40, 2);
  const auto r = train(tr, va, toy_config());
  ASSERT_EQ(r.log.size(), 16u);
  EXPECT_EQ(r.log[0].epoch, 0u);
  EXPECT_LT(r.log.back().train_loss, 0.5 * r.log[0].train_loss);
  EXPECT_LT(r.log[r.best_epoch].val_loss, 0.5 * r.log[0].val_loss);
  for (std::size_t e = 1; e < r.log.size(); ++e) EXPECT_LE(r.log[r.best_epoch].val_loss, r.log[e].val_loss);
  EXPECT_NEAR(mean_loss(va, r.best), r.log[r.best_epoch].val_loss, 1e-12);
}

TEST(Train, BitwiseDeterministicAcrossThreadCounts) {
  const auto tr = toy_examples(60, 3), va = toy_examples(10, 4);
  auto cfg = toy_config();
  cfg.epochs = 3;
  const auto a = train(tr, va, cfg);
  const auto b = train(tr, va, cfg);
  cfg.threads = 3;
  const auto c = train(tr, va, cfg);
  EXPECT_EQ(a.last, b.last);
  EXPECT_EQ(a.last, c.last);
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    EXPECT_EQ(a.log[e].train_loss, c.log[e].train_loss);
    EXPECT_EQ(a.log[e].val_loss, c.log[e].val_loss);
  }
  cfg.seed = 5;
  EXPECT_NE(train(tr, va, cfg).last, a.last);
}

TEST(Train, CallbackSeesEveryEpoch) {
  auto cfg = toy_config();
  cfg.epochs = 2;
  std::vector<std::size_t> epochs;
  train(toy_examples(20, 5), {}, cfg, [&](const EpochLog& l) { epochs.push_back(l.epoch); });
  EXPECT_EQ(epochs, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Train, RejectsMismatchedInputs) {
  auto cfg = toy_config();
  EXPECT_THROW(train({}, {}, cfg), Error);
  cfg.model = CrnConfig::desk();
  EXPECT_THROW(train(toy_examples(4, 6), {}, cfg), Error);
  cfg = toy_config();
  cfg.batch_size = 0;
  EXPECT_THROW(train(toy_examples(4, 6), {}, cfg), Error);
}

TEST(Train, LogFormat) {
  std::ostringstream s;
  write_train_log({{0, 0.5, 0.25, 1.0}, {1, 0.125, 0.0625, 2.5}}, s);
  std::istringstream in(s.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,train_loss,val_loss,wall_time");
  EXPECT_EQ(row, "0,0.5,0.25,1");
}

TEST(Train, CosineScheduleEndpoints) {
  TrainConfig c;
  c.epochs = 11;
  EXPECT_EQ(c.learning_rate_at(1), c.learning_rate);
  EXPECT_EQ(c.learning_rate_at(11), c.learning_rate);
  c.lr_final_fraction = 0.1;
  EXPECT_DOUBLE_EQ(c.learning_rate_at(1), 1e-3);
  EXPECT_NEAR(c.learning_rate_at(6), 0.55e-3, 1e-15);
  EXPECT_NEAR(c.learning_rate_at(11), 1e-4, 1e-15);
  for (std::size_t e = 1; e < 11; ++e) EXPECT_GT(c.learning_rate_at(e), c.learning_rate_at(e + 1));
  c.lr_final_fraction = 0.0;
  EXPECT_THROW(c.validate(), Error);
}
