#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "trlhf/metrics.hpp"
#include "trlhf/nnet.hpp"
#include "trlhf/policy.hpp"
#include "trlhf/reward.hpp"
#include "trlhf/scenegen.hpp"

namespace trlhf {

enum class FreezeMode { kNone, kEncoder, kDecoder };

std::string to_string(FreezeMode mode);
FreezeMode freeze_mode_from_string(const std::string& name);

struct FinetuneConfig {
  double alpha = 0.1;
  int epochs = 70;
  double clip_ratio = 0.2;
  double gae_lambda = 0.95;
  double discount = 0.99;
  FreezeMode freeze = FreezeMode::kNone;
  double bc_weight = 1.0;

  double learning_rate = 3e-4;
  double value_learning_rate = 1e-3;
  int ppo_iterations = 4;     // passes over the collected segments per epoch
  int minibatch_segments = 64;
  int bc_batch_size = 256;
  int scenes_per_epoch = 0;   // 0 = every training scene
  int rollouts_per_scene = 1;
  std::uint64_t seed = 1;
  RolloutConfig rollout;

  void validate() const;
  Json to_json() const;
  static FinetuneConfig from_json(const Json& record);
};

// Value estimate from the (detached) policy latent. The output layer starts
// at zero so untrained values are exactly zero.
class ValueHead {
 public:
  ValueHead() = default;
  ValueHead(int latent, std::uint64_t seed, int hidden = 64);

  Mlp<>& mlp() { return mlp_; }
  const Mlp<>& mlp() const { return mlp_; }
  Eigen::VectorXd values(const Eigen::MatrixXd& latent) const;

 private:
  Mlp<> mlp_;
};

// RM rewards of one closed-loop episode. agent_rewards(i, s) is alpha times
// agent i's mean per-step score over the executed steps of segment s;
// segment_rewards averages that over agents.
struct EpisodeReward {
  Eigen::MatrixXd agent_rewards;   // agents x segments
  Eigen::VectorXd segment_rewards; // segments
};

EpisodeReward episode_reward(const Scenario& scenario, const MapModel& map,
                             const RewardModel& rm, double alpha,
                             const RolloutTrace& trace);

// Flattened per-(agent, segment) samples. Segment k owns columns
// [k*steps, (k+1)*steps) of features and samples.
struct PpoBatch {
  int steps_per_segment = 0;
  Eigen::MatrixXd features;       // F x (segments*steps)
  Eigen::MatrixXd samples;        // 2 x (segments*steps)
  Eigen::VectorXd old_log_prob;   // per segment, summed over its steps
  Eigen::VectorXd advantages;     // per segment, normalized if requested
  Eigen::VectorXd returns;        // per segment value targets

  Eigen::Index size() const { return old_log_prob.size(); }
};

struct Episode {
  Scenario scenario;
  RolloutTrace trace;
  EpisodeReward reward;
};

// Per-agent GAE over the segment sequence with a zero terminal value.
Eigen::VectorXd gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                    double discount, double lambda);

PpoBatch build_ppo_batch(const TrafficPolicy& policy, const ValueHead& value_head,
                         const std::vector<Episode>& episodes, const FinetuneConfig& config,
                         bool normalize_advantages = true);

struct SurrogateGradient {
  double loss = 0.0;  // negative clipped surrogate, mean over segments
  Eigen::VectorXd encoder;
  Eigen::VectorXd decoder;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

SurrogateGradient surrogate_loss_and_gradient(const TrafficPolicy& policy,
                                              const PpoBatch& batch,
                                              const std::vector<Eigen::Index>& segments,
                                              double clip_ratio);

struct PpoOptimizers {
  AdamState<> encoder;
  AdamState<> decoder;
  AdamState<> value;

  PpoOptimizers() = default;
  PpoOptimizers(const TrafficPolicy& policy, const ValueHead& value_head,
                const FinetuneConfig& config);
};

struct PpoDiagnostics {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double bc_loss = 0.0;
  double surrogate_loss = 0.0;
};

// Clipped-surrogate updates plus the weighted BC term on demonstrations.
// Frozen blocks are never stepped.
PpoDiagnostics ppo_update(TrafficPolicy& policy, ValueHead& value_head, const PpoBatch& batch,
                          const DemoSet& demos, const FinetuneConfig& config,
                          PpoOptimizers& optimizers, std::mt19937_64& rng);

// Rolls out every scene once from a fixed seed and scores the result.
struct ProbeResult {
  EvalReport report;
  std::vector<Scenario> scenarios;
};

ProbeResult evaluate_policy(const TrafficPolicy& policy, const RewardModel& rm,
                            const std::vector<GeneratedScene>& scenes,
                            const RolloutConfig& rollout, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;  // 0 = before fine-tuning
  double fail = 0.0;
  double real = 0.0;
  double reward_cost = 0.0;
  double mean_segment_reward = 0.0;
  PpoDiagnostics diagnostics;
};

Json epoch_record_to_json(const EpochRecord& record);

struct FinetuneResult {
  TrafficPolicy policy;
  ValueHead value_head;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&, const TrafficPolicy&)>;

FinetuneResult finetune_loop(const TrafficPolicy& policy, const RewardModel& rm,
                             const std::vector<GeneratedScene>& scenes,
                             const std::vector<GeneratedScene>& probe_scenes,
                             const FinetuneConfig& config,
                             const EpochCallback& on_epoch = {},
                             std::uint64_t probe_seed = 0);

}  // namespace trlhf
