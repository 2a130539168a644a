#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "trlhf/io.hpp"
#include "trlhf/policy.hpp"
#include "trlhf/scenegen.hpp"
#include "trlhf/world.hpp"

namespace trlhf {

// Marker used as the winner id when the ground-truth log is preferred.
inline const std::string kGroundTruthId = "gt";
inline constexpr int kDefaultBatchSize = 5;

// N model scenarios generated from one context, plus the logged ground truth
// kept aside as the fallback winner.
struct ScenarioBatch {
  std::string batch_id;
  std::string context_id;
  std::shared_ptr<const MapModel> map;
  int history_length = kHistorySteps + 1;
  std::vector<Scenario> scenarios;
  Scenario ground_truth;

  int size() const { return static_cast<int>(scenarios.size()); }
  // Scenario by sample id, including the ground truth.
  const Scenario& find(const std::string& sample_id) const;
  void validate() const;
};

std::string batch_id_for(const std::string& context_id);

// n rollouts from the scene's context, each on its own RNG stream derived
// from `rng`.
ScenarioBatch make_batch(const TrafficPolicy& policy, const GeneratedScene& scene,
                         int n, std::mt19937_64& rng,
                         const RolloutConfig& rollout = {});

// Archive bundle for the labeling UI: map, context length, scenarios and
// ground truth.
Json batch_to_json(const ScenarioBatch& batch);
ScenarioBatch batch_from_json(const Json& record);

enum class Labeler { kOracle, kHuman };
std::string to_string(Labeler labeler);
Labeler labeler_from_string(const std::string& name);

struct Label {
  std::string batch_id;
  std::optional<int> choice;  // nullopt: none of the scenarios is realistic
  Labeler labeler = Labeler::kOracle;
  std::string timestamp;

  bool operator==(const Label&) const = default;
};

Json label_to_json(const Label& label);
Label label_from_json(const Json& record);

struct OracleThresholds {
  double collision_weight = 10.0;
  double offroad_weight = 5.0;
  double jerk_weight = 1.0;
  double none_threshold = 8.0;
  double jerk_threshold = 2.0;  // m/s^3, jerk magnitudes below this are free
};

// Synthetic labeler cost: weighted fraction of colliding agents, fraction of
// off-road agents and mean jerk excess over the threshold.
double realism_cost(const Scenario& scenario, const MapModel& map,
                    const OracleThresholds& thresholds);

// Picks the cheapest scenario (lowest index on ties), or none when even the
// best one costs more than the none threshold.
Label oracle_label(const ScenarioBatch& batch, const OracleThresholds& thresholds = {});

struct PreferencePair {
  std::string context_id;
  std::string winner;  // sample id or kGroundTruthId
  std::string loser;
  Labeler labeler = Labeler::kOracle;
  std::string batch_id;

  bool operator==(const PreferencePair&) const = default;
};

Json pair_to_json(const PreferencePair& pair);
PreferencePair pair_from_json(const Json& record);

// N-1 pairs when a scenario was chosen, N pairs with the ground truth as
// winner otherwise.
std::vector<PreferencePair> pairs_from_label(const ScenarioBatch& batch, const Label& label);

// Append-only pair log, one record per line.
void append_pairs(const std::filesystem::path& path,
                  const std::vector<PreferencePair>& pairs);
void persist_pairs(const std::filesystem::path& path,
                   const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path);

// Deterministic train/validation split on the context id hash.
// validation_fraction 0.2 mirrors a 400/100 split.
bool is_validation_context(const std::string& context_id,
                           double validation_fraction = 0.2);

struct PairSplit {
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> validation;
};
PairSplit split_pairs(const std::vector<PreferencePair>& pairs,
                      double validation_fraction = 0.2);

}  // namespace trlhf
