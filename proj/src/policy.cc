#include "trlhf/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trlhf/error.hpp"

namespace trlhf {

namespace {

// Decoder outputs are in normalized action units; these map them to m/s^2
// and rad/s.
const Eigen::Vector2d kActionScale(2.0, 0.3);
constexpr double kHalfLog2Pi = 0.91893853320467274178;

std::vector<int> concat(int first, const std::vector<int>& middle, int last) {
  std::vector<int> widths{first};
  widths.insert(widths.end(), middle.begin(), middle.end());
  widths.push_back(last);
  return widths;
}

}  // namespace

TrafficPolicy::TrafficPolicy(const PolicyConfig& config)
    : features_(config.features), limits_(config.limits) {
  const auto enc_widths = concat(features_.size(), config.encoder_hidden, config.latent);
  encoder_ = Mlp<>(enc_widths, std::vector<Activation>(enc_widths.size() - 1, Activation::kTanh),
                   config.seed);
  const auto dec_widths = concat(config.latent, config.decoder_hidden, 4);
  std::vector<Activation> dec_acts(dec_widths.size() - 1, Activation::kTanh);
  dec_acts.back() = Activation::kIdentity;
  decoder_ = Mlp<>(dec_widths, dec_acts, config.seed + 1);
}

Eigen::MatrixXd TrafficPolicy::latent(const Eigen::MatrixXd& features) const {
  return encoder_.forward(features);
}

ActionDistribution TrafficPolicy::distribution(const Eigen::MatrixXd& features,
                                               Tapes* tapes) const {
  const Eigen::MatrixXd z =
      encoder_.forward(features, tapes ? &tapes->encoder : nullptr);
  const Eigen::MatrixXd raw = decoder_.forward(z, tapes ? &tapes->decoder : nullptr);
  ActionDistribution dist;
  dist.mean = raw.topRows(2).array().colwise() * kActionScale.array();
  Eigen::MatrixXd log_std = raw.bottomRows(2);
  log_std.array().colwise() += kActionScale.array().log();
  dist.clamped = (log_std.array() < kLogStdMin) || (log_std.array() > kLogStdMax);
  dist.log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  return dist;
}

void TrafficPolicy::backward(const Tapes& tapes, const ActionDistribution& dist,
                             const Eigen::MatrixXd& grad_mean,
                             const Eigen::MatrixXd& grad_log_std,
                             Eigen::VectorXd& grad_encoder,
                             Eigen::VectorXd& grad_decoder) const {
  Eigen::MatrixXd upstream(4, grad_mean.cols());
  upstream.topRows(2) = grad_mean.array().colwise() * kActionScale.array();
  upstream.bottomRows(2) =
      grad_log_std.array() * (!dist.clamped).cast<double>();
  Eigen::MatrixXd grad_latent;
  grad_decoder = decoder_.backward(tapes.decoder, upstream, &grad_latent);
  grad_encoder = encoder_.backward(tapes.encoder, grad_latent);
}

Json TrafficPolicy::to_json() const {
  return {{"format", "trlhf.policy"},
          {"version", 1},
          {"features", features_.to_json()},
          {"limits", {{"accel_max", limits_.accel_max},
                      {"yaw_rate_max", limits_.yaw_rate_max}}},
          {"encoder", encoder_.to_json()},
          {"decoder", decoder_.to_json()}};
}

TrafficPolicy TrafficPolicy::from_json(const Json& record) {
  TrafficPolicy policy;
  try {
    if (record.at("format") != "trlhf.policy" || record.at("version") != 1) {
      throw DataError("unsupported policy checkpoint");
    }
    policy.features_ = FeatureConfig::from_json(record.at("features"));
    policy.limits_.accel_max = record.at("limits").at("accel_max").get<double>();
    policy.limits_.yaw_rate_max = record.at("limits").at("yaw_rate_max").get<double>();
    policy.encoder_ = Mlp<>::from_json(record.at("encoder"));
    policy.decoder_ = Mlp<>::from_json(record.at("decoder"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("policy checkpoint: ") + e.what());
  }
  if (policy.encoder_.input_size() != policy.features_.size() ||
      policy.decoder_.input_size() != policy.encoder_.output_size() ||
      policy.decoder_.output_size() != 4) {
    throw DataError("policy checkpoint: inconsistent network shapes");
  }
  return policy;
}

Eigen::VectorXd gaussian_log_prob(const ActionDistribution& dist,
                                  const Eigen::MatrixXd& actions) {
  const Eigen::ArrayXXd z =
      (actions - dist.mean).array() / dist.log_std.array().exp();
  return (-0.5 * z.square() - dist.log_std.array() - kHalfLog2Pi)
      .colwise()
      .sum()
      .transpose();
}

int RolloutConfig::steps_per_replan() const {
  validate();
  return static_cast<int>(std::lround(1.0 / (replan_hz * dt)));
}

int RolloutConfig::total_steps() const {
  validate();
  return static_cast<int>(std::lround(horizon_s / dt));
}

void RolloutConfig::validate() const {
  if (!(dt > 0.0) || !(replan_hz > 0.0) || !(horizon_s > 0.0)) {
    throw ConfigError("rollout: dt, replan_hz and horizon_s must be positive");
  }
  const double per_replan = 1.0 / (replan_hz * dt);
  const double total = horizon_s / dt;
  if (std::abs(per_replan - std::round(per_replan)) > 1e-9 || std::round(per_replan) < 1) {
    throw ConfigError("rollout: re-plan period is not a whole number of steps");
  }
  if (std::abs(total - std::round(total)) > 1e-9) {
    throw ConfigError("rollout: horizon is not a whole number of steps");
  }
  const long k = std::lround(per_replan);
  if (std::lround(total) % k != 0) {
    throw ConfigError("rollout: horizon is not a whole number of re-plan periods");
  }
  if (plan_horizon < k) {
    throw ConfigError("rollout: plan_horizon shorter than the re-plan period");
  }
}

Plan sample_plan(const TrafficPolicy& policy, const ScenarioContext& context,
                 int horizon, std::mt19937_64& rng, PlanMode mode) {
  context.validate();
  const int agents = context.num_agents();
  std::vector<AgentTrack> tracks = context.history;
  Plan plan;
  plan.actions.assign(agents, {});
  plan.states.assign(agents, {});
  for (int i = 0; i < agents; ++i) plan.states[i].push_back(tracks[i].states.back());
  std::normal_distribution<double> normal(0.0, 1.0);
  const int features = policy.features().size();

  for (int step = 0; step < horizon; ++step) {
    const int t = static_cast<int>(tracks.front().states.size()) - 1;
    Eigen::MatrixXd feats(features, agents);
    for (int i = 0; i < agents; ++i) {
      featurize_window(*context.map, tracks, t, i, context.dt, policy.features(),
                       feats.col(i));
    }
    const ActionDistribution dist = policy.distribution(feats);
    if (!dist.mean.allFinite() || !dist.log_std.allFinite()) {
      throw ModelError("policy produced a non-finite action distribution in scene " +
                       context.scene_id);
    }
    Eigen::MatrixXd draw = dist.mean;
    if (mode == PlanMode::kSample) {
      for (Eigen::Index c = 0; c < draw.cols(); ++c) {
        for (Eigen::Index r = 0; r < draw.rows(); ++r) {
          draw(r, c) += std::exp(dist.log_std(r, c)) * normal(rng);
        }
      }
    }
    plan.log_probs.push_back(gaussian_log_prob(dist, draw));
    for (int i = 0; i < agents; ++i) {
      const Action action = policy.limits().clip({draw(0, i), draw(1, i)});
      plan.actions[i].push_back(action);
      const AgentState next = step_unicycle(tracks[i].states.back(), action, context.dt);
      tracks[i].states.push_back(next);
      plan.states[i].push_back(next);
    }
    plan.features.push_back(std::move(feats));
    plan.samples.push_back(std::move(draw));
  }
  return plan;
}

Scenario rollout_closed_loop(const TrafficPolicy& policy, const ScenarioContext& context,
                             const RolloutConfig& config, std::mt19937_64& rng,
                             const std::string& sample_id, RolloutTrace* trace,
                             PlanMode mode) {
  context.validate();
  const int execute = config.steps_per_replan();
  const int cycles = config.plan_cycles();
  const int history = context.history_length() - 1;

  Scenario scenario;
  scenario.scene_id = context.scene_id;
  scenario.sample_id = sample_id;
  scenario.dt = config.dt;
  scenario.source = ScenarioSource::kModel;
  scenario.agents = context.history;
  if (trace) {
    *trace = RolloutTrace{};
    trace->history_length = context.history_length();
    trace->steps_per_segment = execute;
    trace->plan_cycles = cycles;
  }

  ScenarioContext window = context;
  window.dt = config.dt;
  for (int cycle = 0; cycle < cycles; ++cycle) {
    const int now = scenario.num_steps() - 1;
    for (int i = 0; i < scenario.num_agents(); ++i) {
      auto& states = window.history[i].states;
      for (int k = 0; k <= history; ++k) {
        states[k] = scenario.agents[i].states[std::max(now - history + k, 0)];
      }
    }
    const Plan plan = sample_plan(policy, window, config.plan_horizon, rng, mode);
    for (int step = 0; step < execute; ++step) {
      for (int i = 0; i < scenario.num_agents(); ++i) {
        auto& states = scenario.agents[i].states;
        states.push_back(step_unicycle(states.back(), plan.actions[i][step], config.dt));
      }
      if (trace) {
        trace->features.push_back(plan.features[step]);
        trace->samples.push_back(plan.samples[step]);
        trace->log_probs.push_back(plan.log_probs[step]);
      }
    }
  }
  return scenario;
}

DemoSet make_demonstrations(const std::vector<GeneratedScene>& scenes,
                            const FeatureConfig& config) {
  Eigen::Index total = 0;
  for (const auto& scene : scenes) {
    const Scenario& gt = scene.ground_truth;
    if (gt.num_steps() < 2) {
      throw DataError("demonstration " + gt.scene_id + " is shorter than 2 states");
    }
    total += static_cast<Eigen::Index>(std::max(0, gt.num_steps() - 1 - config.history_steps)) *
             gt.num_agents();
  }
  DemoSet demos;
  demos.features.resize(config.size(), total);
  demos.actions.resize(2, total);
  Eigen::Index column = 0;
  for (const auto& scene : scenes) {
    const Scenario& gt = scene.ground_truth;
    for (int t = config.history_steps; t + 1 < gt.num_steps(); ++t) {
      for (int i = 0; i < gt.num_agents(); ++i) {
        featurize_window(*scene.map, gt.agents, t, i, gt.dt, config,
                         demos.features.col(column));
        const Action a =
            invert_unicycle(gt.agents[i].states[t], gt.agents[i].states[t + 1], gt.dt);
        demos.actions(0, column) = a.accel;
        demos.actions(1, column) = a.yaw_rate;
        ++column;
      }
    }
  }
  return demos;
}

BcGradient bc_loss_and_gradient(const TrafficPolicy& policy,
                                const Eigen::MatrixXd& features,
                                const Eigen::MatrixXd& actions) {
  TrafficPolicy::Tapes tapes;
  const ActionDistribution dist = policy.distribution(features, &tapes);
  const double n = static_cast<double>(features.cols());
  const Eigen::ArrayXXd inv_std = (-dist.log_std.array()).exp();
  const Eigen::ArrayXXd z = (actions - dist.mean).array() * inv_std;
  BcGradient out;
  out.loss = (0.5 * z.square() + dist.log_std.array() + kHalfLog2Pi).sum() / n;
  const Eigen::MatrixXd grad_mean = (-z * inv_std / n).matrix();
  const Eigen::MatrixXd grad_log_std = ((1.0 - z.square()) / n).matrix();
  policy.backward(tapes, dist, grad_mean, grad_log_std, out.encoder, out.decoder);
  return out;
}

BcResult pretrain_bc(const TrafficPolicy& policy, const DemoSet& demos,
                     const BcConfig& config) {
  if (demos.size() == 0) throw DataError("behavior cloning needs at least one demonstration");
  BcResult result{policy, {}};
  TrafficPolicy& p = result.policy;
  AdamState<> enc_opt(p.encoder().num_params(), config.learning_rate);
  AdamState<> dec_opt(p.decoder().num_params(), config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::vector<Eigen::Index> order(demos.size());
  std::iota(order.begin(), order.end(), 0);
  const Eigen::Index batch = std::max(1, config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < demos.size(); start += batch) {
      const Eigen::Index n = std::min(batch, demos.size() - start);
      Eigen::MatrixXd f(demos.features.rows(), n);
      Eigen::MatrixXd a(2, n);
      for (Eigen::Index k = 0; k < n; ++k) {
        f.col(k) = demos.features.col(order[start + k]);
        a.col(k) = demos.actions.col(order[start + k]);
      }
      const BcGradient g = bc_loss_and_gradient(p, f, a);
      if (!std::isfinite(g.loss)) {
        throw TrainingError("behavior cloning loss is not finite at epoch " +
                            std::to_string(epoch));
      }
      adam_step(enc_opt, p.encoder().params(), g.encoder);
      adam_step(dec_opt, p.decoder().params(), g.decoder);
      loss_sum += g.loss;
      ++batches;
    }
    result.loss_curve.push_back(loss_sum / batches);
  }
  return result;
}

}  // namespace trlhf
