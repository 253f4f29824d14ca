#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stgraph/synth.hpp"
#include "stgraph/train.hpp"
#include "support.hpp"

using namespace stgraph;

TEST(Schedule, DefaultValues) {
  const Schedule s;
  EXPECT_DOUBLE_EQ(lr_at(0.0, s), 1.25e-4);
  EXPECT_DOUBLE_EQ(lr_at(2.5, s), 0.0500625);
  EXPECT_DOUBLE_EQ(lr_at(5.0, s), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(9.99, s), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(10.0, s), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(14.5, s), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(15.0, s), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(19.9, s), 0.001);
}

TEST(Schedule, WarmupIsLinear) {
  const Schedule s;
  for (double e = 0.0; e < 5.0; e += 0.37) {
    const double expected = 1.25e-4 + (0.1 - 1.25e-4) * e / 5.0;
    EXPECT_NEAR(lr_at(e, s), expected, 1e-15);
  }
}

TEST(Schedule, ScalingStretchesEveryBoundary) {
  const auto s = Schedule{}.scaled_to(40.0);
  EXPECT_DOUBLE_EQ(s.warmup_epochs, 10.0);
  EXPECT_EQ(s.decay_epochs, (std::vector<double>{20.0, 30.0}));
  EXPECT_DOUBLE_EQ(lr_at(5.0, s), 0.0500625);
  EXPECT_DOUBLE_EQ(lr_at(25.0, s), 0.01);
  EXPECT_NO_THROW(s.validate());
  EXPECT_NO_THROW(Schedule{}.scaled_to(0.0).validate());
}

TEST(Schedule, InvalidSchedulesAreConfigErrors) {
  Schedule s;
  s.decay_epochs = {15.0, 10.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = Schedule{};
  s.warmup_epochs = 12.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = Schedule{};
  s.base_lr = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = Schedule{};
  s.decay_factor = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Sgd, MatchesMomentumRecurrence) {
  ng::ParameterSet params{{"w", Tensor({1, 2}, std::vector<double>{0.5, -1.0})}};
  OptimState state;
  state.momentum = 0.9;
  state.weight_decay = 0.01;
  const std::vector<std::vector<double>> grads{{0.2, -0.1}, {0.0, 0.3}, {-0.5, 0.05}, {1.0, 1.0}};
  const std::vector<double> lrs{0.1, 0.05, 0.2, 0.01};
  std::vector<double> p{0.5, -1.0}, v{0.0, 0.0};
  for (std::size_t t = 0; t < grads.size(); ++t) {
    sgd_step(params, {{"w", Tensor({1, 2}, grads[t])}}, lrs[t], state);
    for (std::size_t i = 0; i < 2; ++i) {
      v[i] = 0.9 * v[i] + grads[t][i] + 0.01 * p[i];
      p[i] = p[i] - lrs[t] * v[i];
      EXPECT_DOUBLE_EQ(params.at("w")(0, i), p[i]) << "step " << t;
      EXPECT_DOUBLE_EQ(state.velocity.at("w")(0, i), v[i]) << "step " << t;
    }
  }
  EXPECT_EQ(state.step, 4u);
}

TEST(Sgd, WeightDecayAloneShrinksParameters) {
  std::mt19937_64 rng(1);
  ng::ParameterSet params{{"w", testing_support::random_tensor(4, 4, rng)}};
  const ng::ParameterSet zero{{"w", Tensor::zeros(4, 4)}};
  OptimState state;
  state.weight_decay = 0.1;
  auto norm = [&] {
    double s = 0.0;
    for (double v : params.at("w").values()) s += v * v;
    return std::sqrt(s);
  };
  double prev = norm();
  for (int i = 0; i < 5; ++i) {
    sgd_step(params, zero, 0.1, state);
    const double now = norm();
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(Sgd, NonFiniteGradientNamesParameterAndStep) {
  ng::ParameterSet params{{"layer.W", Tensor::zeros(1, 2)}};
  OptimState state;
  sgd_step(params, {{"layer.W", Tensor::zeros(1, 2)}}, 0.1, state);
  Tensor bad = Tensor::zeros(1, 2);
  bad(0, 1) = std::nan("");
  try {
    sgd_step(params, {{"layer.W", bad}}, 0.1, state);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.W"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
  EXPECT_EQ(params.at("layer.W")(0, 0), 0.0);
  EXPECT_THROW(sgd_step(params, {}, 0.1, state), LookupError);
}

TEST(Init, GlorotRangeAndFixedEntries) {
  ModelConfig c;
  c.d = 48;
  c.iterations = 2;
  c.message_fns = parse_message_fns("both");
  const auto params = init_params(c, 7);
  for (const auto& [name, t] : params) {
    if (name.ends_with(".ln.scale")) {
      for (double v : t.values()) EXPECT_EQ(v, 1.0) << name;
    } else if (name.ends_with(".ln.shift") || name.ends_with(".b")) {
      for (double v : t.values()) EXPECT_EQ(v, 0.0) << name;
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      double mean = 0.0, sq = 0.0;
      for (double v : t.values()) {
        EXPECT_LE(std::abs(v), a) << name;
        mean += v;
        sq += v * v;
      }
      const double n = static_cast<double>(t.size());
      mean /= n;
      if (t.size() >= 2000) {
        // uniform on [-a, a]: mean 0, variance a^2 / 3
        EXPECT_NEAR(mean, 0.0, 4 * a / std::sqrt(3 * n)) << name;
        EXPECT_NEAR(sq / n, a * a / 3, 0.1 * a * a / 3) << name;
      }
    }
  }
}

TEST(Init, SeededAndDeterministic) {
  ModelConfig c;
  EXPECT_EQ(init_params(c, 3), init_params(c, 3));
  EXPECT_NE(init_params(c, 3), init_params(c, 4));
  EXPECT_EQ(init_params(c, 3).size(), model_parameter_shapes(c).size());
}

TEST(BatchSize, DefaultsToEightKeyframesPerBatch) {
  TrainOptions o;
  ModelConfig c;
  for (auto [tau_c, expected] : std::vector<std::pair<int, int>>{{1, 8}, {3, 2}, {5, 1}, {7, 1}, {9, 1}}) {
    c.tau_c = tau_c;
    EXPECT_EQ(effective_batch_size(o, c), expected);
  }
  o.batch_size = 5;
  EXPECT_EQ(effective_batch_size(o, c), 5);
}

namespace {

Dataset small_dataset(std::uint64_t seed = 1) {
  SynthOptions o;
  o.clips = 8;
  o.keyframes = 2;
  o.seed = seed;
  return synth_dataset(o);
}

}  // namespace

TEST(TrainLoop, DeterministicForSeed) {
  const auto ds = small_dataset();
  ModelConfig c;
  c.heads = 2;
  TrainOptions o;
  o.epochs = 3;
  const auto a = train_loop(ds, c, o, 11), b = train_loop(ds, c, o, 11);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  EXPECT_NE(a.params, train_loop(ds, c, o, 12).params);
}

TEST(TrainLoop, ZeroEpochsReturnsInitialisation) {
  const auto ds = small_dataset();
  ModelConfig c;
  TrainOptions o;
  o.epochs = 0;
  const auto r = train_loop(ds, c, o, 5);
  EXPECT_EQ(r.params, init_params(c, 5));
  EXPECT_TRUE(r.log.empty());
}

TEST(TrainLoop, ZeroLearningRateLeavesParametersUnchanged) {
  const auto ds = small_dataset();
  ModelConfig c;
  TrainOptions o;
  o.epochs = 2;
  o.schedule.base_lr = 0.0;
  o.schedule.warmup_start_lr = 0.0;
  EXPECT_EQ(train_loop(ds, c, o, 5).params, init_params(c, 5));
}

TEST(TrainLoop, StartsFromGivenParameters) {
  const auto ds = small_dataset();
  ModelConfig c;
  TrainOptions o;
  o.epochs = 0;
  auto custom = init_params(c, 99);
  EXPECT_EQ(train_loop(ds, c, o, 5, custom).params, custom);
  custom.erase(param_names::kActionW);
  EXPECT_THROW(train_loop(ds, c, o, 5, custom), ConfigError);
}

TEST(TrainLoop, LossDecreasesOverFirstEpochs) {
  SynthOptions so;
  so.clips = 16;
  so.seed = 2;
  const auto ds = synth_dataset(so);
  ModelConfig c;
  c.heads = 2;
  TrainOptions o;
  o.epochs = 20;
  const auto r = train_loop(ds, c, o, 3);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(r.log[e].loss, r.log[e - 1].loss) << "epoch " << e;
  EXPECT_LT(r.log.back().loss, 0.5 * r.log.front().loss);
  // the logged rate is the one used for the first step of the epoch
  EXPECT_DOUBLE_EQ(r.log[0].lr, 1.25e-4);
  EXPECT_DOUBLE_EQ(r.log[10].lr, 0.01);
}

TEST(TrainLoop, MismatchedDatasetIsRejected) {
  const auto ds = small_dataset();
  ModelConfig c;
  c.num_action_classes = 4;
  EXPECT_THROW(train_loop(ds, c, TrainOptions{}, 0), ValidationError);
  c = ModelConfig{};
  c.channels = 6;
  EXPECT_THROW(train_loop(ds, c, TrainOptions{}, 0), ValidationError);
  Dataset empty = ds;
  empty.clips.clear();
  EXPECT_THROW(train_loop(empty, ModelConfig{}, TrainOptions{}, 0), ValidationError);
}

TEST(BatchGradient, IsSumOfClipGradients) {
  const auto ds = small_dataset(4);
  ModelConfig c;
  c.heads = 2;
  const auto params = init_params(c, 1);
  std::vector<ClipSample> samples;
  for (const auto& clip : ds.clips) samples.push_back(prepare_clip(clip, c, Mode::Train));
  std::vector<const ClipSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const auto total = batch_gradient(ptrs, params, c, 0.5);
  double loss = 0.0;
  ng::ParameterSet sum;
  for (const auto& s : samples) {
    const auto g = clip_gradient(s, params, c, 0.5);
    loss += g.loss;
    for (const auto& [name, t] : g.grads) {
      auto [it, fresh] = sum.try_emplace(name, t);
      if (!fresh)
        for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += t[i];
    }
  }
  EXPECT_DOUBLE_EQ(total.loss, loss);
  for (const auto& [name, t] : sum)
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_DOUBLE_EQ(total.grads.at(name)[i], t[i]) << name;
}
