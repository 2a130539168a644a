#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "trlhf/features.hpp"
#include "trlhf/nnet.hpp"
#include "trlhf/scenegen.hpp"
#include "trlhf/world.hpp"

namespace trlhf {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct PolicyConfig {
  FeatureConfig features;
  std::vector<int> encoder_hidden{64};
  int latent = 64;
  std::vector<int> decoder_hidden{32};
  ActionLimits limits;
  std::uint64_t seed = 1;
};

// Gaussian action distribution for a batch of agents. Rows are (accel,
// yaw rate); columns are samples.
struct ActionDistribution {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd log_std;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped;  // log_std hit a bound
};

// Per-agent decentralized stochastic policy with shared weights. The encoder
// maps features to a latent; the decoder maps the latent to Gaussian
// parameters. The two blocks are separate parameter vectors so either can be
// frozen during fine-tuning.
class TrafficPolicy {
 public:
  TrafficPolicy() = default;
  explicit TrafficPolicy(const PolicyConfig& config);

  const FeatureConfig& features() const { return features_; }
  const ActionLimits& limits() const { return limits_; }
  Mlp<>& encoder() { return encoder_; }
  const Mlp<>& encoder() const { return encoder_; }
  Mlp<>& decoder() { return decoder_; }
  const Mlp<>& decoder() const { return decoder_; }

  struct Tapes {
    Mlp<>::Tape encoder;
    Mlp<>::Tape decoder;
  };

  ActionDistribution distribution(const Eigen::MatrixXd& features,
                                  Tapes* tapes = nullptr) const;
  Eigen::MatrixXd latent(const Eigen::MatrixXd& features) const;

  // Back-propagates gradients w.r.t. mean and log_std into both blocks.
  // Gradients through a clamped log_std are zero.
  void backward(const Tapes& tapes, const ActionDistribution& dist,
                const Eigen::MatrixXd& grad_mean, const Eigen::MatrixXd& grad_log_std,
                Eigen::VectorXd& grad_encoder, Eigen::VectorXd& grad_decoder) const;

  Json to_json() const;
  static TrafficPolicy from_json(const Json& record);
  bool operator==(const TrafficPolicy& other) const {
    return features_ == other.features_ && encoder_ == other.encoder_ &&
           decoder_ == other.decoder_;
  }

 private:
  FeatureConfig features_;
  ActionLimits limits_;
  Mlp<> encoder_;
  Mlp<> decoder_;
};

// Per-column diagonal-Gaussian log density of `actions`.
Eigen::VectorXd gaussian_log_prob(const ActionDistribution& dist,
                                  const Eigen::MatrixXd& actions);

struct RolloutConfig {
  double horizon_s = 10.0;
  double replan_hz = 2.0;
  double dt = kDefaultDt;
  int plan_horizon = 20;

  int steps_per_replan() const;  // validated
  int total_steps() const;       // validated
  int plan_cycles() const { return total_steps() / steps_per_replan(); }
  void validate() const;
};

enum class PlanMode { kSample, kMean };

struct Plan {
  std::vector<std::vector<Action>> actions;  // [agent][step], clipped to limits
  std::vector<Eigen::MatrixXd> features;     // [step] F x M
  std::vector<Eigen::MatrixXd> samples;      // [step] 2 x M raw draws
  std::vector<Eigen::VectorXd> log_probs;    // [step] M
  std::vector<std::vector<AgentState>> states;  // [agent][step + 1], starts at context
};

// Autoregressive plan for every agent: featurize the simulated state, draw an
// action, advance all agents, repeat.
Plan sample_plan(const TrafficPolicy& policy, const ScenarioContext& context,
                 int horizon, std::mt19937_64& rng, PlanMode mode = PlanMode::kSample);

// Executed-step record of a closed-loop rollout, consumed by the fine-tuner.
struct RolloutTrace {
  int history_length = 0;
  int steps_per_segment = 0;
  int plan_cycles = 0;
  std::vector<Eigen::MatrixXd> features;  // [executed step] F x M
  std::vector<Eigen::MatrixXd> samples;   // [executed step] 2 x M
  std::vector<Eigen::VectorXd> log_probs; // [executed step] M
};

// Plan, execute the first replan-period steps, re-plan; the result includes
// the history prefix and has source = model.
Scenario rollout_closed_loop(const TrafficPolicy& policy, const ScenarioContext& context,
                             const RolloutConfig& config, std::mt19937_64& rng,
                             const std::string& sample_id = "rollout",
                             RolloutTrace* trace = nullptr,
                             PlanMode mode = PlanMode::kSample);

// Supervised pairs recovered from demonstrations by inverting the unicycle
// step at every step after the history window.
struct DemoSet {
  Eigen::MatrixXd features;  // F x n
  Eigen::MatrixXd actions;   // 2 x n
  Eigen::Index size() const { return features.cols(); }
};

DemoSet make_demonstrations(const std::vector<GeneratedScene>& scenes,
                            const FeatureConfig& config);

struct BcGradient {
  double loss = 0.0;  // mean Gaussian negative log-likelihood per sample
  Eigen::VectorXd encoder;
  Eigen::VectorXd decoder;
};

BcGradient bc_loss_and_gradient(const TrafficPolicy& policy,
                                const Eigen::MatrixXd& features,
                                const Eigen::MatrixXd& actions);

struct BcConfig {
  int epochs = 20;
  int batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

struct BcResult {
  TrafficPolicy policy;
  std::vector<double> loss_curve;  // mean NLL per epoch
};

BcResult pretrain_bc(const TrafficPolicy& policy, const DemoSet& demos,
                     const BcConfig& config);

}  // namespace trlhf
