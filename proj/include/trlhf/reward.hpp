#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trlhf/features.hpp"
#include "trlhf/nnet.hpp"
#include "trlhf/preference.hpp"
#include "trlhf/world.hpp"

namespace trlhf {

struct RewardConfig {
  FeatureConfig features;
  std::vector<int> hidden{64, 64, 32};
  std::uint64_t seed = 1;

  // Head widths matching a 512-512-512-128-32 fully connected scorer.
  static RewardConfig wide_head() {
    RewardConfig config;
    config.hidden = {512, 512, 512, 128, 32};
    return config;
  }
};

// Sequence reward: every (agent, step) is scored by a Tanh trunk and the
// scenario reward is the mean of those per-step scores, so any sequence
// length is accepted.
class RewardModel {
 public:
  RewardModel() = default;
  explicit RewardModel(const RewardConfig& config);
  static RewardModel zeros(const RewardConfig& config);

  const FeatureConfig& features() const { return features_; }
  Mlp<>& trunk() { return trunk_; }
  const Mlp<>& trunk() const { return trunk_; }

  // Per-step scores of features in the scenario_features column layout.
  Eigen::VectorXd step_scores(const Eigen::MatrixXd& features) const;
  Eigen::VectorXd step_scores(const Scenario& scenario, const MapModel& map) const;

  double score(const Scenario& scenario, const MapModel& map) const;
  // Mean per-step score over steps [begin, end) of every agent; each step
  // still sees its full history window.
  double score_steps(const Scenario& scenario, const MapModel& map, int begin, int end) const;
  double score_features(const Eigen::MatrixXd& features) const;

  Json to_json() const;
  static RewardModel from_json(const Json& record);

 private:
  FeatureConfig features_;
  Mlp<> trunk_;
};

// -log sigmoid(r_winner - r_loser), stable for large differences.
double pair_loss(double r_winner, double r_loser);

// Pairs with featurized scenarios cached once.
struct PreferenceDataset {
  struct Example {
    int winner;
    int loser;
  };
  std::vector<Eigen::MatrixXd> features;  // one matrix per distinct scenario
  std::vector<Example> pairs;

  std::size_t size() const { return pairs.size(); }
  PreferenceDataset subset(const std::vector<std::size_t>& indices) const;
  PreferenceDataset swapped() const;
};

// Batches are looked up by batch_id; every pair must resolve.
PreferenceDataset make_preference_dataset(const std::vector<PreferencePair>& pairs,
                                          const std::map<std::string, const ScenarioBatch*>& batches,
                                          const FeatureConfig& config);

struct RmGradient {
  double loss = 0.0;  // mean pair loss
  Eigen::VectorXd grad;
};

RmGradient rm_loss_and_gradient(const RewardModel& rm, const PreferenceDataset& data,
                                const std::vector<std::size_t>& pair_indices);

struct RmTrainConfig {
  int steps = 400;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
};

struct RmTrainResult {
  RewardModel model;
  std::vector<double> loss_curve;  // minibatch loss per step
};

RmTrainResult train_rm(const RewardModel& initial, const PreferenceDataset& train,
                       const RmTrainConfig& config);

// Fraction of pairs where the winner scores higher; ties count one half.
double validate_rm(const RewardModel& rm, const PreferenceDataset& validation);

struct SweepPoint {
  int size = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::map<int, std::vector<RewardModel>> models;  // by size, one per seed
};

// Trains one model per (size, seed) on a seeded random subset of `train`
// and reports held-out accuracy.
SweepResult rm_learning_curve(const RewardConfig& model_config, const PreferenceDataset& train,
                              const PreferenceDataset& validation,
                              const std::vector<int>& sizes,
                              const std::vector<std::uint64_t>& seeds,
                              const RmTrainConfig& train_config);

}  // namespace trlhf
