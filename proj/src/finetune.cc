#include "trlhf/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trlhf/error.hpp"

namespace trlhf {

std::string to_string(FreezeMode mode) {
  switch (mode) {
    case FreezeMode::kNone: return "none";
    case FreezeMode::kEncoder: return "encoder";
    case FreezeMode::kDecoder: return "decoder";
  }
  return "none";
}

FreezeMode freeze_mode_from_string(const std::string& name) {
  if (name == "none") return FreezeMode::kNone;
  if (name == "encoder") return FreezeMode::kEncoder;
  if (name == "decoder") return FreezeMode::kDecoder;
  throw ConfigError("freeze: expected none|encoder|decoder, got '" + name + "'");
}

void FinetuneConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be >= 0");
  if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) throw ConfigError("clip_ratio must be in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must be in [0, 1]");
  if (!(discount >= 0.0 && discount <= 1.0)) throw ConfigError("discount must be in [0, 1]");
  if (!(bc_weight >= 0.0)) throw ConfigError("bc_weight must be >= 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (ppo_iterations < 1 || minibatch_segments < 1 || bc_batch_size < 1 ||
      rollouts_per_scene < 1 || scenes_per_epoch < 0) {
    throw ConfigError("fine-tuning batch sizes and counts must be positive");
  }
  if (!(learning_rate > 0.0) || !(value_learning_rate > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  rollout.validate();
}

Json FinetuneConfig::to_json() const {
  return {{"alpha", alpha},
          {"epochs", epochs},
          {"clip_ratio", clip_ratio},
          {"gae_lambda", gae_lambda},
          {"discount", discount},
          {"freeze", to_string(freeze)},
          {"bc_weight", bc_weight},
          {"learning_rate", learning_rate},
          {"value_learning_rate", value_learning_rate},
          {"ppo_iterations", ppo_iterations},
          {"minibatch_segments", minibatch_segments},
          {"bc_batch_size", bc_batch_size},
          {"scenes_per_epoch", scenes_per_epoch},
          {"rollouts_per_scene", rollouts_per_scene},
          {"seed", seed},
          {"rollout",
           {{"horizon_s", rollout.horizon_s},
            {"replan_hz", rollout.replan_hz},
            {"dt", rollout.dt},
            {"plan_horizon", rollout.plan_horizon}}}};
}

FinetuneConfig FinetuneConfig::from_json(const Json& record) {
  FinetuneConfig c;
  try {
    c.alpha = record.value("alpha", c.alpha);
    c.epochs = record.value("epochs", c.epochs);
    c.clip_ratio = record.value("clip_ratio", c.clip_ratio);
    c.gae_lambda = record.value("gae_lambda", c.gae_lambda);
    c.discount = record.value("discount", c.discount);
    c.freeze = freeze_mode_from_string(record.value("freeze", std::string("none")));
    c.bc_weight = record.value("bc_weight", c.bc_weight);
    c.learning_rate = record.value("learning_rate", c.learning_rate);
    c.value_learning_rate = record.value("value_learning_rate", c.value_learning_rate);
    c.ppo_iterations = record.value("ppo_iterations", c.ppo_iterations);
    c.minibatch_segments = record.value("minibatch_segments", c.minibatch_segments);
    c.bc_batch_size = record.value("bc_batch_size", c.bc_batch_size);
    c.scenes_per_epoch = record.value("scenes_per_epoch", c.scenes_per_epoch);
    c.rollouts_per_scene = record.value("rollouts_per_scene", c.rollouts_per_scene);
    c.seed = record.value("seed", c.seed);
    if (record.contains("rollout")) {
      const Json& r = record.at("rollout");
      c.rollout.horizon_s = r.value("horizon_s", c.rollout.horizon_s);
      c.rollout.replan_hz = r.value("replan_hz", c.rollout.replan_hz);
      c.rollout.dt = r.value("dt", c.rollout.dt);
      c.rollout.plan_horizon = r.value("plan_horizon", c.rollout.plan_horizon);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("finetune config: ") + e.what());
  }
  c.validate();
  return c;
}

ValueHead::ValueHead(int latent, std::uint64_t seed, int hidden)
    : mlp_({latent, hidden, 1}, {Activation::kTanh, Activation::kIdentity}, seed) {
  mlp_.weights(1).setZero();
  mlp_.bias(1).setZero();
}

Eigen::VectorXd ValueHead::values(const Eigen::MatrixXd& latent) const {
  return mlp_.forward(latent).row(0).transpose();
}

EpisodeReward episode_reward(const Scenario& scenario, const MapModel& map,
                             const RewardModel& rm, double alpha,
                             const RolloutTrace& trace) {
  const int history = trace.history_length;
  const int steps = trace.steps_per_segment;
  const int segments = trace.plan_cycles;
  if (steps < 1 || scenario.num_steps() != history + steps * segments) {
    throw DataError("episode " + scenario.scene_id + "/" + scenario.sample_id +
                    " does not match its rollout trace");
  }
  const int agents = scenario.num_agents();
  const Eigen::VectorXd scores = rm.step_scores(
      scenario_features(scenario, map, rm.features(), history, scenario.num_steps()));
  EpisodeReward out;
  out.agent_rewards.resize(agents, segments);
  for (int s = 0; s < segments; ++s) {
    for (int i = 0; i < agents; ++i) {
      double sum = 0.0;
      for (int j = 0; j < steps; ++j) sum += scores[(s * steps + j) * agents + i];
      out.agent_rewards(i, s) = alpha * sum / steps;
    }
  }
  out.segment_rewards = out.agent_rewards.colwise().mean().transpose();
  return out;
}

Eigen::VectorXd gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                    double discount, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n) throw DataError("gae: rewards and values differ in length");
  Eigen::VectorXd advantages(n);
  double running = 0.0;
  for (Eigen::Index s = n - 1; s >= 0; --s) {
    const double next = s + 1 < n ? values[s + 1] : 0.0;
    const double delta = rewards[s] + discount * next - values[s];
    running = delta + discount * lambda * running;
    advantages[s] = running;
  }
  return advantages;
}

PpoBatch build_ppo_batch(const TrafficPolicy& policy, const ValueHead& value_head,
                         const std::vector<Episode>& episodes, const FinetuneConfig& config,
                         bool normalize_advantages) {
  PpoBatch batch;
  if (episodes.empty()) throw DataError("PPO batch needs at least one episode");
  const int steps = episodes.front().trace.steps_per_segment;
  batch.steps_per_segment = steps;
  Eigen::Index total = 0;
  for (const auto& e : episodes) {
    if (e.trace.steps_per_segment != steps) throw DataError("episodes use different segments");
    total += static_cast<Eigen::Index>(e.scenario.num_agents()) * e.trace.plan_cycles;
  }
  const int features = policy.features().size();
  batch.features.resize(features, total * steps);
  batch.samples.resize(2, total * steps);
  batch.old_log_prob.resize(total);
  batch.advantages.resize(total);
  batch.returns.resize(total);

  Eigen::Index k = 0;
  for (const auto& e : episodes) {
    const int agents = e.scenario.num_agents();
    const int segments = e.trace.plan_cycles;
    Eigen::MatrixXd starts(features, static_cast<Eigen::Index>(agents) * segments);
    for (int i = 0; i < agents; ++i) {
      for (int s = 0; s < segments; ++s) {
        starts.col(i * segments + s) = e.trace.features[s * steps].col(i);
      }
    }
    const Eigen::VectorXd values = value_head.values(policy.latent(starts));
    for (int i = 0; i < agents; ++i) {
      const Eigen::VectorXd v = values.segment(i * segments, segments);
      const Eigen::VectorXd adv =
          gae(e.reward.agent_rewards.row(i).transpose(), v, config.discount, config.gae_lambda);
      for (int s = 0; s < segments; ++s, ++k) {
        double log_prob = 0.0;
        for (int j = 0; j < steps; ++j) {
          const int step = s * steps + j;
          batch.features.col(k * steps + j) = e.trace.features[step].col(i);
          batch.samples.col(k * steps + j) = e.trace.samples[step].col(i);
          log_prob += e.trace.log_probs[step][i];
        }
        batch.old_log_prob[k] = log_prob;
        batch.advantages[k] = adv[s];
        batch.returns[k] = adv[s] + v[s];
      }
    }
  }
  if (normalize_advantages && total > 1) {
    const double mean = batch.advantages.mean();
    const double std =
        std::sqrt((batch.advantages.array() - mean).square().sum() / static_cast<double>(total));
    batch.advantages = ((batch.advantages.array() - mean) / (std + 1e-8)).matrix();
  }
  return batch;
}

SurrogateGradient surrogate_loss_and_gradient(const TrafficPolicy& policy,
                                              const PpoBatch& batch,
                                              const std::vector<Eigen::Index>& segments,
                                              double clip_ratio) {
  SurrogateGradient out;
  out.encoder = Eigen::VectorXd::Zero(policy.encoder().num_params());
  out.decoder = Eigen::VectorXd::Zero(policy.decoder().num_params());
  if (segments.empty()) return out;
  const int steps = batch.steps_per_segment;
  const Eigen::Index cols = static_cast<Eigen::Index>(segments.size()) * steps;
  Eigen::MatrixXd features(batch.features.rows(), cols);
  Eigen::MatrixXd samples(2, cols);
  for (std::size_t n = 0; n < segments.size(); ++n) {
    features.middleCols(n * steps, steps) = batch.features.middleCols(segments[n] * steps, steps);
    samples.middleCols(n * steps, steps) = batch.samples.middleCols(segments[n] * steps, steps);
  }
  TrafficPolicy::Tapes tapes;
  const ActionDistribution dist = policy.distribution(features, &tapes);
  const Eigen::VectorXd log_prob = gaussian_log_prob(dist, samples);
  const Eigen::ArrayXXd inv_std = (-dist.log_std.array()).exp();
  const Eigen::ArrayXXd z = (samples - dist.mean).array() * inv_std;

  const double scale = 1.0 / static_cast<double>(segments.size());
  Eigen::VectorXd dloss_dlogp(cols);
  for (std::size_t n = 0; n < segments.size(); ++n) {
    const Eigen::Index seg = segments[n];
    const double ratio =
        std::exp(log_prob.segment(n * steps, steps).sum() - batch.old_log_prob[seg]);
    const double adv = batch.advantages[seg];
    const double clipped = std::clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio);
    const bool use_raw = ratio * adv <= clipped * adv;
    out.loss -= scale * (use_raw ? ratio * adv : clipped * adv);
    out.mean_ratio += scale * ratio;
    if (std::abs(ratio - 1.0) > clip_ratio) out.clip_fraction += scale;
    dloss_dlogp.segment(n * steps, steps).setConstant(use_raw ? -scale * ratio * adv : 0.0);
  }
  const Eigen::ArrayXXd upstream = dloss_dlogp.transpose().replicate(2, 1).array();
  const Eigen::MatrixXd grad_mean = (upstream * z * inv_std).matrix();
  const Eigen::MatrixXd grad_log_std = (upstream * (z.square() - 1.0)).matrix();
  policy.backward(tapes, dist, grad_mean, grad_log_std, out.encoder, out.decoder);
  return out;
}

PpoOptimizers::PpoOptimizers(const TrafficPolicy& policy, const ValueHead& value_head,
                             const FinetuneConfig& config)
    : encoder(policy.encoder().num_params(), config.learning_rate),
      decoder(policy.decoder().num_params(), config.learning_rate),
      value(value_head.mlp().num_params(), config.value_learning_rate) {}

namespace {

void check_finite(double value, const char* what, int iteration) {
  if (!std::isfinite(value)) {
    throw TrainingError(std::string(what) + " is not finite at PPO iteration " +
                        std::to_string(iteration));
  }
}

}  // namespace

PpoDiagnostics ppo_update(TrafficPolicy& policy, ValueHead& value_head, const PpoBatch& batch,
                          const DemoSet& demos, const FinetuneConfig& config,
                          PpoOptimizers& optimizers, std::mt19937_64& rng) {
  PpoDiagnostics diag;
  if (batch.size() == 0) return diag;
  const bool use_bc = config.bc_weight > 0.0 && demos.size() > 0;
  std::vector<Eigen::Index> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_int_distribution<Eigen::Index> pick_demo(0, std::max<Eigen::Index>(demos.size() - 1, 0));
  const std::size_t minibatch = config.minibatch_segments;
  int updates = 0;

  for (int iteration = 0; iteration < config.ppo_iterations; ++iteration) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += minibatch) {
      const std::vector<Eigen::Index> segments(
          order.begin() + start, order.begin() + std::min(order.size(), start + minibatch));
      SurrogateGradient g =
          surrogate_loss_and_gradient(policy, batch, segments, config.clip_ratio);
      check_finite(g.loss, "surrogate loss", iteration);
      if (use_bc) {
        const Eigen::Index n = std::min<Eigen::Index>(config.bc_batch_size, demos.size());
        Eigen::MatrixXd f(demos.features.rows(), n);
        Eigen::MatrixXd a(2, n);
        for (Eigen::Index c = 0; c < n; ++c) {
          const Eigen::Index d = pick_demo(rng);
          f.col(c) = demos.features.col(d);
          a.col(c) = demos.actions.col(d);
        }
        const BcGradient bc = bc_loss_and_gradient(policy, f, a);
        check_finite(bc.loss, "BC loss", iteration);
        g.encoder += config.bc_weight * bc.encoder;
        g.decoder += config.bc_weight * bc.decoder;
        diag.bc_loss += bc.loss;
      }

      Eigen::MatrixXd starts(batch.features.rows(), static_cast<Eigen::Index>(segments.size()));
      Eigen::VectorXd targets(segments.size());
      for (std::size_t n = 0; n < segments.size(); ++n) {
        starts.col(n) = batch.features.col(segments[n] * batch.steps_per_segment);
        targets[n] = batch.returns[segments[n]];
      }
      Mlp<>::Tape tape;
      const Eigen::VectorXd values =
          value_head.mlp().forward(policy.latent(starts), &tape).row(0).transpose();
      const Eigen::VectorXd err = values - targets;
      const double value_loss = 0.5 * err.squaredNorm() / static_cast<double>(err.size());
      check_finite(value_loss, "value loss", iteration);
      const Eigen::VectorXd value_grad = value_head.mlp().backward(
          tape, (err / static_cast<double>(err.size())).transpose());

      if (config.freeze != FreezeMode::kEncoder) {
        adam_step(optimizers.encoder, policy.encoder().params(), g.encoder);
      }
      if (config.freeze != FreezeMode::kDecoder) {
        adam_step(optimizers.decoder, policy.decoder().params(), g.decoder);
      }
      adam_step(optimizers.value, value_head.mlp().params(), value_grad);

      diag.surrogate_loss += g.loss;
      diag.mean_ratio += g.mean_ratio;
      diag.clip_fraction += g.clip_fraction;
      diag.value_loss += value_loss;
      ++updates;
    }
  }
  diag.surrogate_loss /= updates;
  diag.mean_ratio /= updates;
  diag.clip_fraction /= updates;
  diag.value_loss /= updates;
  diag.bc_loss /= updates;
  return diag;
}

ProbeResult evaluate_policy(const TrafficPolicy& policy, const RewardModel& rm,
                            const std::vector<GeneratedScene>& scenes,
                            const RolloutConfig& rollout, std::uint64_t seed) {
  if (scenes.empty()) throw DataError("evaluation needs at least one scene");
  ProbeResult out;
  std::vector<Scenario> ground_truth;
  std::vector<const MapModel*> maps;
  std::mt19937_64 master(seed);
  for (const auto& scene : scenes) {
    std::mt19937_64 stream(master());
    out.scenarios.push_back(rollout_closed_loop(policy, scene.context, rollout, stream));
    ground_truth.push_back(scene.ground_truth);
    maps.push_back(scene.map.get());
  }
  out.report.fail = failure_rate(out.scenarios, maps);
  out.report.distances = realism_deviation(out.scenarios, ground_truth);
  out.report.real = out.report.distances.mean();
  out.report.reward_cost = reward_cost(rm, out.scenarios, maps);
  return out;
}

Json epoch_record_to_json(const EpochRecord& record) {
  return {{"epoch", record.epoch},
          {"fail", record.fail},
          {"real", record.real},
          {"reward_cost", record.reward_cost},
          {"mean_segment_reward", record.mean_segment_reward},
          {"mean_ratio", record.diagnostics.mean_ratio},
          {"clip_fraction", record.diagnostics.clip_fraction},
          {"value_loss", record.diagnostics.value_loss},
          {"bc_loss", record.diagnostics.bc_loss}};
}

FinetuneResult finetune_loop(const TrafficPolicy& policy, const RewardModel& rm,
                             const std::vector<GeneratedScene>& scenes,
                             const std::vector<GeneratedScene>& probe_scenes,
                             const FinetuneConfig& config, const EpochCallback& on_epoch,
                             std::uint64_t probe_seed) {
  config.validate();
  if (scenes.empty()) throw DataError("fine-tuning needs at least one training scene");
  if (!(rm.features() == policy.features())) {
    throw ConfigError("reward model and policy use different feature layouts");
  }
  FinetuneResult result{policy, ValueHead(policy.encoder().output_size(), config.seed), {}};
  TrafficPolicy& p = result.policy;
  PpoOptimizers optimizers(p, result.value_head, config);
  const DemoSet demos = config.bc_weight > 0.0 ? make_demonstrations(scenes, p.features())
                                               : DemoSet{};
  std::mt19937_64 rng(config.seed);

  auto probe = [&](EpochRecord& record) {
    if (probe_scenes.empty()) return;
    const ProbeResult r = evaluate_policy(p, rm, probe_scenes, config.rollout, probe_seed);
    record.fail = r.report.fail;
    record.real = r.report.real;
    record.reward_cost = r.report.reward_cost;
  };

  EpochRecord initial;
  probe(initial);
  result.history.push_back(initial);
  if (on_epoch) on_epoch(initial, p);

  std::vector<std::size_t> scene_order(scenes.size());
  std::iota(scene_order.begin(), scene_order.end(), 0);
  const std::size_t per_epoch = config.scenes_per_epoch == 0
                                    ? scenes.size()
                                    : std::min<std::size_t>(config.scenes_per_epoch, scenes.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(scene_order.begin(), scene_order.end(), rng);
    std::vector<std::uint64_t> stream_seeds(per_epoch * config.rollouts_per_scene);
    for (auto& s : stream_seeds) s = rng();
    std::vector<Episode> episodes;
    double reward_sum = 0.0;
    for (std::size_t n = 0; n < per_epoch; ++n) {
      const GeneratedScene& scene = scenes[scene_order[n]];
      for (int r = 0; r < config.rollouts_per_scene; ++r) {
        std::mt19937_64 stream(stream_seeds[n * config.rollouts_per_scene + r]);
        Episode e;
        e.scenario = rollout_closed_loop(p, scene.context, config.rollout, stream, "finetune",
                                         &e.trace);
        e.reward = episode_reward(e.scenario, *scene.map, rm, config.alpha, e.trace);
        reward_sum += e.reward.segment_rewards.mean();
        episodes.push_back(std::move(e));
      }
    }
    const PpoBatch batch = build_ppo_batch(p, result.value_head, episodes, config);
    EpochRecord record;
    record.epoch = epoch;
    record.mean_segment_reward = reward_sum / static_cast<double>(episodes.size());
    record.diagnostics = ppo_update(p, result.value_head, batch, demos, config, optimizers, rng);
    probe(record);
    result.history.push_back(record);
    if (on_epoch) on_epoch(record, p);
  }
  return result;
}

}  // namespace trlhf
