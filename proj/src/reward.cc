#include "trlhf/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "trlhf/error.hpp"

namespace trlhf {

namespace {

std::vector<int> trunk_widths(const RewardConfig& config) {
  std::vector<int> widths{config.features.size()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  return widths;
}

// Stable sigmoid(-d) = 1 / (1 + e^d).
double sigmoid_neg(double d) {
  if (d >= 0.0) {
    const double e = std::exp(-d);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(d));
}

}  // namespace

RewardModel::RewardModel(const RewardConfig& config) : features_(config.features) {
  const auto widths = trunk_widths(config);
  trunk_ = Mlp<>(widths, std::vector<Activation>(widths.size() - 1, Activation::kTanh),
                 config.seed);
}

RewardModel RewardModel::zeros(const RewardConfig& config) {
  RewardModel rm;
  rm.features_ = config.features;
  const auto widths = trunk_widths(config);
  rm.trunk_ = Mlp<>::zeros(widths, std::vector<Activation>(widths.size() - 1, Activation::kTanh));
  return rm;
}

Eigen::VectorXd RewardModel::step_scores(const Eigen::MatrixXd& features) const {
  return trunk_.forward(features).row(0).transpose();
}

Eigen::VectorXd RewardModel::step_scores(const Scenario& scenario, const MapModel& map) const {
  return step_scores(scenario_features(scenario, map, features_, 0, scenario.num_steps()));
}

double RewardModel::score_features(const Eigen::MatrixXd& features) const {
  if (features.cols() == 0) throw DataError("reward score of an empty scenario");
  return trunk_.forward(features).mean();
}

double RewardModel::score(const Scenario& scenario, const MapModel& map) const {
  return score_steps(scenario, map, 0, scenario.num_steps());
}

double RewardModel::score_steps(const Scenario& scenario, const MapModel& map, int begin,
                                int end) const {
  return score_features(scenario_features(scenario, map, features_, begin, end));
}

Json RewardModel::to_json() const {
  return {{"format", "trlhf.reward"},
          {"version", 1},
          {"features", features_.to_json()},
          {"trunk", trunk_.to_json()}};
}

RewardModel RewardModel::from_json(const Json& record) {
  RewardModel rm;
  try {
    if (record.at("format") != "trlhf.reward" || record.at("version") != 1) {
      throw DataError("unsupported reward checkpoint");
    }
    rm.features_ = FeatureConfig::from_json(record.at("features"));
    rm.trunk_ = Mlp<>::from_json(record.at("trunk"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("reward checkpoint: ") + e.what());
  }
  if (rm.trunk_.input_size() != rm.features_.size() || rm.trunk_.output_size() != 1) {
    throw DataError("reward checkpoint: trunk does not match the feature layout");
  }
  return rm;
}

double pair_loss(double r_winner, double r_loser) {
  const double d = r_winner - r_loser;
  // softplus(-d) = max(-d, 0) + log1p(exp(-|d|))
  return std::max(-d, 0.0) + std::log1p(std::exp(-std::abs(d)));
}

PreferenceDataset PreferenceDataset::subset(const std::vector<std::size_t>& indices) const {
  PreferenceDataset out;
  out.features = features;
  for (std::size_t i : indices) out.pairs.push_back(pairs.at(i));
  return out;
}

PreferenceDataset PreferenceDataset::swapped() const {
  PreferenceDataset out = *this;
  for (auto& p : out.pairs) std::swap(p.winner, p.loser);
  return out;
}

PreferenceDataset make_preference_dataset(
    const std::vector<PreferencePair>& pairs,
    const std::map<std::string, const ScenarioBatch*>& batches, const FeatureConfig& config) {
  PreferenceDataset data;
  std::map<std::pair<std::string, std::string>, int> index;
  auto lookup = [&](const std::string& batch_id, const std::string& sample_id) {
    const auto key = std::make_pair(batch_id, sample_id);
    const auto it = index.find(key);
    if (it != index.end()) return it->second;
    const auto batch = batches.find(batch_id);
    if (batch == batches.end()) throw DataError("pair references unknown batch " + batch_id);
    const Scenario& scenario = batch->second->find(sample_id);
    data.features.push_back(
        scenario_features(scenario, *batch->second->map, config, 0, scenario.num_steps()));
    const int id = static_cast<int>(data.features.size()) - 1;
    index.emplace(key, id);
    return id;
  };
  for (const auto& p : pairs) {
    data.pairs.push_back({lookup(p.batch_id, p.winner), lookup(p.batch_id, p.loser)});
  }
  return data;
}

RmGradient rm_loss_and_gradient(const RewardModel& rm, const PreferenceDataset& data,
                                const std::vector<std::size_t>& pair_indices) {
  RmGradient out;
  out.grad = Eigen::VectorXd::Zero(rm.trunk().num_params());
  if (pair_indices.empty()) return out;
  const double scale = 1.0 / static_cast<double>(pair_indices.size());
  Mlp<>::Tape winner_tape;
  Mlp<>::Tape loser_tape;
  for (std::size_t i : pair_indices) {
    const auto& example = data.pairs.at(i);
    const Eigen::MatrixXd& fw = data.features[example.winner];
    const Eigen::MatrixXd& fl = data.features[example.loser];
    const double sw = rm.trunk().forward(fw, &winner_tape).mean();
    const double sl = rm.trunk().forward(fl, &loser_tape).mean();
    out.loss += scale * pair_loss(sw, sl);
    const double dloss_dd = -sigmoid_neg(sw - sl) * scale;
    out.grad += rm.trunk().backward(
        winner_tape, Eigen::MatrixXd::Constant(1, fw.cols(), dloss_dd / fw.cols()));
    out.grad += rm.trunk().backward(
        loser_tape, Eigen::MatrixXd::Constant(1, fl.cols(), -dloss_dd / fl.cols()));
  }
  return out;
}

RmTrainResult train_rm(const RewardModel& initial, const PreferenceDataset& train,
                       const RmTrainConfig& config) {
  if (train.size() == 0) throw DataError("reward model training needs at least one pair");
  RmTrainResult result{initial, {}};
  AdamState<> opt(result.model.trunk().num_params(), config.learning_rate);
  opt.weight_decay = config.weight_decay;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = std::max(1, config.batch_size);
  for (int step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> indices;
    while (indices.size() < std::min(batch, order.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      indices.push_back(order[cursor++]);
    }
    const RmGradient g = rm_loss_and_gradient(result.model, train, indices);
    if (!std::isfinite(g.loss)) {
      throw TrainingError("reward model loss is not finite at step " + std::to_string(step));
    }
    adam_step(opt, result.model.trunk().params(), g.grad);
    result.loss_curve.push_back(g.loss);
  }
  return result;
}

double validate_rm(const RewardModel& rm, const PreferenceDataset& validation) {
  if (validation.size() == 0) throw DataError("validation needs at least one pair");
  std::vector<double> scores(validation.features.size(), 0.0);
  std::vector<bool> done(validation.features.size(), false);
  auto score_of = [&](int id) {
    if (!done[id]) {
      scores[id] = rm.score_features(validation.features[id]);
      done[id] = true;
    }
    return scores[id];
  };
  double correct = 0.0;
  for (const auto& p : validation.pairs) {
    const double w = score_of(p.winner);
    const double l = score_of(p.loser);
    if (w > l) {
      correct += 1.0;
    } else if (w == l) {
      correct += 0.5;
    }
  }
  return correct / static_cast<double>(validation.size());
}

SweepResult rm_learning_curve(const RewardConfig& model_config, const PreferenceDataset& train,
                              const PreferenceDataset& validation,
                              const std::vector<int>& sizes,
                              const std::vector<std::uint64_t>& seeds,
                              const RmTrainConfig& train_config) {
  SweepResult result;
  for (int size : sizes) {
    if (size < 1) throw ConfigError("learning-curve sizes must be positive");
    if (static_cast<std::size_t>(size) > train.size()) {
      throw ConfigError("learning-curve size " + std::to_string(size) + " exceeds the " +
                        std::to_string(train.size()) + " available training pairs");
    }
    for (std::uint64_t seed : seeds) {
      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(seed);
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(size);
      RewardConfig config = model_config;
      config.seed = seed;
      RmTrainConfig tc = train_config;
      tc.seed = seed;
      RmTrainResult trained = train_rm(RewardModel(config), train.subset(order), tc);
      result.points.push_back({size, seed, validate_rm(trained.model, validation)});
      result.models[size].push_back(std::move(trained.model));
    }
  }
  return result;
}

}  // namespace trlhf
