#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "trlhf/policy.hpp"

using namespace trlhf;

namespace {

const GeneratedScene& scene() {
  static const GeneratedScene s = generate_scene(corpus_specs("train", 1, 21)[0]);
  return s;
}

Eigen::MatrixXd random_features(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = n(rng);
  return x;
}

double probe(const TrafficPolicy& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& gm,
             const Eigen::MatrixXd& gl) {
  const ActionDistribution d = p.distribution(x);
  return (d.mean.array() * gm.array()).sum() + (d.log_std.array() * gl.array()).sum();
}

}  // namespace

TEST(TrafficPolicy, DistributionShapesAndLogStdBounds) {
  const TrafficPolicy policy{PolicyConfig{}};
  const Eigen::MatrixXd x = random_features(49, 30, 1, 50.0);
  TrafficPolicy wild = policy;
  wild.decoder().params() *= 40.0;
  const ActionDistribution d = wild.distribution(x);
  ASSERT_EQ(d.mean.rows(), 2);
  ASSERT_EQ(d.log_std.cols(), 30);
  EXPECT_GE(d.log_std.minCoeff(), kLogStdMin);
  EXPECT_LE(d.log_std.maxCoeff(), kLogStdMax);
  EXPECT_GT(d.clamped.count(), 0);
  for (Eigen::Index k = 0; k < d.log_std.size(); ++k) {
    if (d.clamped.data()[k]) {
      EXPECT_TRUE(d.log_std.data()[k] == kLogStdMin || d.log_std.data()[k] == kLogStdMax);
    }
  }
}

TEST(GaussianLogProb, MatchesDensityFormula) {
  ActionDistribution d;
  d.mean = Eigen::MatrixXd(2, 1);
  d.log_std = Eigen::MatrixXd(2, 1);
  d.mean << 0.5, -0.1;
  d.log_std << std::log(2.0), std::log(0.3);
  Eigen::MatrixXd a(2, 1);
  a << 1.5, 0.2;
  const auto pdf = [](double x, double mu, double s) {
    return std::exp(-0.5 * (x - mu) * (x - mu) / (s * s)) / (s * std::sqrt(2 * kPi));
  };
  EXPECT_NEAR(gaussian_log_prob(d, a)[0],
              std::log(pdf(1.5, 0.5, 2.0) * pdf(0.2, -0.1, 0.3)), 1e-12);
}

TEST(TrafficPolicy, BackwardMatchesFiniteDifferences) {
  TrafficPolicy policy{PolicyConfig{}};
  const Eigen::MatrixXd x = random_features(49, 6, 2);
  const Eigen::MatrixXd gm = random_features(2, 6, 3);
  const Eigen::MatrixXd gl = random_features(2, 6, 4);
  TrafficPolicy::Tapes tapes;
  const ActionDistribution d = policy.distribution(x, &tapes);
  ASSERT_EQ(d.clamped.count(), 0);
  Eigen::VectorXd ge, gd;
  policy.backward(tapes, d, gm, gl, ge, gd);
  const double h = 1e-6;
  std::mt19937_64 rng(5);
  for (int block = 0; block < 2; ++block) {
    Mlp<>& net = block == 0 ? policy.encoder() : policy.decoder();
    const Eigen::VectorXd& g = block == 0 ? ge : gd;
    std::uniform_int_distribution<Eigen::Index> pick(0, net.num_params() - 1);
    for (int k = 0; k < 80; ++k) {
      const Eigen::Index j = pick(rng);
      const double keep = net.params()[j];
      net.params()[j] = keep + h;
      const double up = probe(policy, x, gm, gl);
      net.params()[j] = keep - h;
      const double down = probe(policy, x, gm, gl);
      net.params()[j] = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_LT(std::abs(fd - g[j]) / std::max({std::abs(fd), std::abs(g[j]), 1e-4}), 1e-4)
          << "block " << block << " param " << j;
    }
  }
}

TEST(TrafficPolicy, BcGradientMatchesFiniteDifferences) {
  TrafficPolicy policy{PolicyConfig{}};
  const Eigen::MatrixXd x = random_features(49, 8, 6);
  const Eigen::MatrixXd a = random_features(2, 8, 7);
  const BcGradient g = bc_loss_and_gradient(policy, x, a);
  const double h = 1e-6;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<Eigen::Index> pick(0, policy.decoder().num_params() - 1);
  for (int k = 0; k < 60; ++k) {
    const Eigen::Index j = pick(rng);
    TrafficPolicy plus = policy, minus = policy;
    plus.decoder().params()[j] += h;
    minus.decoder().params()[j] -= h;
    const double fd = (bc_loss_and_gradient(plus, x, a).loss -
                       bc_loss_and_gradient(minus, x, a).loss) / (2 * h);
    EXPECT_NEAR(fd, g.decoder[j], 1e-6 + 1e-4 * std::abs(fd));
  }
}

TEST(TrafficPolicy, JsonRoundTrip) {
  const TrafficPolicy policy{PolicyConfig{}};
  const TrafficPolicy back = TrafficPolicy::from_json(Json::parse(policy.to_json().dump()));
  EXPECT_EQ(back, policy);
}

TEST(RolloutConfig, StepArithmetic) {
  const RolloutConfig c;
  EXPECT_EQ(c.steps_per_replan(), 5);
  EXPECT_EQ(c.total_steps(), 100);
  EXPECT_EQ(c.plan_cycles(), 20);
  RolloutConfig bad = c;
  bad.replan_hz = 3.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.plan_horizon = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.horizon_s = 10.25;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(RolloutClosedLoop, LengthPrefixAndTrace) {
  const TrafficPolicy policy{PolicyConfig{}};
  const RolloutConfig config;
  std::mt19937_64 rng(1);
  RolloutTrace trace;
  const Scenario s = rollout_closed_loop(policy, scene().context, config, rng, "s0", &trace);
  EXPECT_EQ(s.num_steps(), kHistorySteps + 1 + 100);
  EXPECT_EQ(s.source, ScenarioSource::kModel);
  EXPECT_EQ(s.sample_id, "s0");
  EXPECT_EQ(trace.steps_per_segment, 5);
  EXPECT_EQ(trace.plan_cycles, 20);
  EXPECT_EQ(trace.history_length, kHistorySteps + 1);
  ASSERT_EQ(trace.features.size(), 100u);
  ASSERT_EQ(trace.samples.size(), 100u);
  ASSERT_EQ(trace.log_probs.size(), 100u);
  for (int i = 0; i < s.num_agents(); ++i) {
    for (int k = 0; k <= kHistorySteps; ++k) {
      EXPECT_EQ(s.agents[i].states[k], scene().context.history[i].states[k]);
    }
  }
}

TEST(RolloutClosedLoop, TraceReplaysTheScenario) {
  const TrafficPolicy policy{PolicyConfig{}};
  std::mt19937_64 rng(2);
  RolloutTrace trace;
  const Scenario s = rollout_closed_loop(policy, scene().context, RolloutConfig{}, rng, "s", &trace);
  const int h = trace.history_length - 1;
  for (int e = 0; e < 100; ++e) {
    const int t = h + e;
    for (int i = 0; i < s.num_agents(); ++i) {
      const Action a = policy.limits().clip({trace.samples[e](0, i), trace.samples[e](1, i)});
      EXPECT_EQ(step_unicycle(s.agents[i].states[t], a, s.dt), s.agents[i].states[t + 1]);
    }
    // Executed steps at the start of a cycle see the true executed history.
    if (e % 5 == 0) {
      Eigen::MatrixXd f(policy.features().size(), s.num_agents());
      for (int i = 0; i < s.num_agents(); ++i) {
        featurize_window(*scene().map, s.agents, t, i, s.dt, policy.features(), f.col(i));
      }
      EXPECT_LT((f - trace.features[e]).cwiseAbs().maxCoeff(), 1e-12) << "step " << e;
    }
    const Eigen::VectorXd lp =
        gaussian_log_prob(policy.distribution(trace.features[e]), trace.samples[e]);
    EXPECT_LT((lp - trace.log_probs[e]).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(RolloutClosedLoop, DeterministicInRngState) {
  const TrafficPolicy policy{PolicyConfig{}};
  std::mt19937_64 a(9), b(9), c(10);
  const Scenario sa = rollout_closed_loop(policy, scene().context, RolloutConfig{}, a);
  const Scenario sb = rollout_closed_loop(policy, scene().context, RolloutConfig{}, b);
  const Scenario sc = rollout_closed_loop(policy, scene().context, RolloutConfig{}, c);
  EXPECT_EQ(sa, sb);
  EXPECT_FALSE(sa == sc);
}

TEST(SamplePlan, SampleMeanConvergesToMeanPlan) {
  const TrafficPolicy policy{PolicyConfig{}};
  std::mt19937_64 rng(11);
  const Plan mean = sample_plan(policy, scene().context, 1, rng, PlanMode::kMean);
  const ActionDistribution d = policy.distribution(mean.features[0]);
  EXPECT_EQ(mean.samples[0], d.mean);
  const int n = 4000;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(2, d.mean.cols());
  for (int k = 0; k < n; ++k) sum += sample_plan(policy, scene().context, 1, rng).samples[0];
  const Eigen::ArrayXXd tol = 5.0 * d.log_std.array().exp() / std::sqrt(double(n));
  EXPECT_TRUE(((sum / n - d.mean).array().abs() < tol).all());
}

TEST(SamplePlan, ActionsRespectLimits) {
  TrafficPolicy policy{PolicyConfig{}};
  policy.decoder().params() *= 20.0;
  std::mt19937_64 rng(12);
  const Plan plan = sample_plan(policy, scene().context, 20, rng);
  for (const auto& agent : plan.actions) {
    for (const auto& a : agent) EXPECT_TRUE(policy.limits().contains(a));
  }
}

TEST(Demonstrations, InvertGroundTruthSteps) {
  const FeatureConfig config;
  const DemoSet demos = make_demonstrations({scene()}, config);
  const Scenario& gt = scene().ground_truth;
  ASSERT_EQ(demos.size(), (gt.num_steps() - 1 - kHistorySteps) * gt.num_agents());
  const int t = kHistorySteps + 7;
  const int i = 1;
  const Eigen::Index col = 7 * gt.num_agents() + i;
  const Action a = invert_unicycle(gt.agents[i].states[t], gt.agents[i].states[t + 1], gt.dt);
  EXPECT_DOUBLE_EQ(demos.actions(0, col), a.accel);
  EXPECT_DOUBLE_EQ(demos.actions(1, col), a.yaw_rate);
  Eigen::VectorXd f(config.size());
  featurize_window(*scene().map, gt.agents, t, i, gt.dt, config, f);
  EXPECT_EQ(demos.features.col(col), f);
}

TEST(PretrainBc, LossDecreasesAndIsDeterministic) {
  const DemoSet demos = make_demonstrations({scene()}, FeatureConfig{});
  BcConfig config;
  config.epochs = 5;
  const BcResult a = pretrain_bc(TrafficPolicy{PolicyConfig{}}, demos, config);
  const BcResult b = pretrain_bc(TrafficPolicy{PolicyConfig{}}, demos, config);
  ASSERT_EQ(a.loss_curve.size(), 5u);
  EXPECT_LT(a.loss_curve.back(), a.loss_curve.front());
  EXPECT_EQ(a.policy, b.policy);
  EXPECT_THROW(pretrain_bc(TrafficPolicy{PolicyConfig{}}, DemoSet{}, config), DataError);
}
