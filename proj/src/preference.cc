#include "trlhf/preference.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "trlhf/error.hpp"
#include "trlhf/metrics.hpp"

namespace trlhf {

const Scenario& ScenarioBatch::find(const std::string& sample_id) const {
  if (sample_id == kGroundTruthId) return ground_truth;
  for (const auto& s : scenarios) {
    if (s.sample_id == sample_id) return s;
  }
  throw DataError("batch " + batch_id + " has no scenario '" + sample_id + "'");
}

void ScenarioBatch::validate() const {
  if (scenarios.size() < 2) throw DataError("batch " + batch_id + " needs at least 2 scenarios");
  if (!map) throw DataError("batch " + batch_id + " has no map");
  std::set<std::string> ids;
  for (const auto& s : scenarios) {
    s.validate();
    if (s.sample_id == kGroundTruthId || !ids.insert(s.sample_id).second) {
      throw DataError("batch " + batch_id + ": duplicate or reserved sample id " + s.sample_id);
    }
    if (s.num_agents() != ground_truth.num_agents() || s.num_steps() < history_length) {
      throw DataError("batch " + batch_id + ": scenario " + s.sample_id +
                      " does not match the context");
    }
    for (int i = 0; i < s.num_agents(); ++i) {
      for (int t = 0; t < history_length; ++t) {
        if (s.agents[i].states[t] != ground_truth.agents[i].states[t]) {
          throw DataError("batch " + batch_id + ": scenario " + s.sample_id +
                          " does not share the context history");
        }
      }
    }
  }
}

std::string batch_id_for(const std::string& context_id) { return "batch-" + context_id; }

ScenarioBatch make_batch(const TrafficPolicy& policy, const GeneratedScene& scene, int n,
                         std::mt19937_64& rng, const RolloutConfig& rollout) {
  if (n < 2) throw ConfigError("a batch needs at least 2 scenarios");
  ScenarioBatch batch;
  batch.context_id = scene.context.scene_id;
  batch.batch_id = batch_id_for(batch.context_id);
  batch.map = scene.map;
  batch.history_length = scene.context.history_length();
  batch.ground_truth = scene.ground_truth;
  std::vector<std::uint64_t> stream_seeds(n);
  for (auto& s : stream_seeds) s = rng();
  for (int k = 0; k < n; ++k) {
    std::mt19937_64 stream(stream_seeds[k]);
    batch.scenarios.push_back(rollout_closed_loop(policy, scene.context, rollout, stream,
                                                  "s" + std::to_string(k)));
  }
  return batch;
}

Json batch_to_json(const ScenarioBatch& batch) {
  Json scenarios = Json::array();
  for (const auto& s : batch.scenarios) scenarios.push_back(scenario_to_json(s));
  return {{"batch_id", batch.batch_id},
          {"context_id", batch.context_id},
          {"dt", batch.ground_truth.dt},
          {"history_length", batch.history_length},
          {"map", map_to_json(*batch.map)},
          {"scenarios", std::move(scenarios)},
          {"ground_truth", scenario_to_json(batch.ground_truth)}};
}

ScenarioBatch batch_from_json(const Json& record) {
  ScenarioBatch batch;
  try {
    batch.batch_id = record.at("batch_id").get<std::string>();
    batch.context_id = record.at("context_id").get<std::string>();
    batch.history_length = record.at("history_length").get<int>();
    batch.map = std::make_shared<const MapModel>(map_from_json(record.at("map")));
    for (const auto& s : record.at("scenarios")) batch.scenarios.push_back(scenario_from_json(s));
    batch.ground_truth = scenario_from_json(record.at("ground_truth"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("batch record: ") + e.what());
  }
  batch.validate();
  return batch;
}

std::string to_string(Labeler labeler) {
  return labeler == Labeler::kOracle ? "oracle" : "human";
}

Labeler labeler_from_string(const std::string& name) {
  if (name == "oracle") return Labeler::kOracle;
  if (name == "human") return Labeler::kHuman;
  throw DataError("unknown labeler '" + name + "'");
}

Json label_to_json(const Label& label) {
  return {{"batch_id", label.batch_id},
          {"choice", label.choice ? Json(*label.choice) : Json(nullptr)},
          {"labeler", to_string(label.labeler)},
          {"timestamp", label.timestamp}};
}

Label label_from_json(const Json& record) {
  Label label;
  label.batch_id = record.at("batch_id").get<std::string>();
  const Json& choice = record.at("choice");
  if (!choice.is_null()) label.choice = choice.get<int>();
  label.labeler = labeler_from_string(record.at("labeler").get<std::string>());
  label.timestamp = record.at("timestamp").get<std::string>();
  return label;
}

double realism_cost(const Scenario& scenario, const MapModel& map,
                    const OracleThresholds& thresholds) {
  const double agents = scenario.num_agents();
  const double collided = detect_collision(scenario).rowwise().any().count() / agents;
  const double offroad = detect_offroad(scenario, map).rowwise().any().count() / agents;
  const DrivingProfile profile = extract_profile(scenario);
  double excess = 0.0;
  for (double j : profile.jerk) excess += std::max(0.0, j - thresholds.jerk_threshold);
  excess /= static_cast<double>(profile.jerk.size());
  return thresholds.collision_weight * collided + thresholds.offroad_weight * offroad +
         thresholds.jerk_weight * excess;
}

Label oracle_label(const ScenarioBatch& batch, const OracleThresholds& thresholds) {
  Label label;
  label.batch_id = batch.batch_id;
  label.labeler = Labeler::kOracle;
  // Fixed timestamp for oracle labels.
  label.timestamp = "1970-01-01T00:00:00Z";
  int best = -1;
  double best_cost = 0.0;
  for (int k = 0; k < batch.size(); ++k) {
    const double cost = realism_cost(batch.scenarios[k], *batch.map, thresholds);
    if (best < 0 || cost < best_cost) {
      best = k;
      best_cost = cost;
    }
  }
  if (best_cost <= thresholds.none_threshold) label.choice = best;
  return label;
}

Json pair_to_json(const PreferencePair& pair) {
  return {{"context_id", pair.context_id},
          {"winner", pair.winner},
          {"loser", pair.loser},
          {"labeler", to_string(pair.labeler)},
          {"batch_id", pair.batch_id}};
}

PreferencePair pair_from_json(const Json& record) {
  PreferencePair pair;
  pair.context_id = record.at("context_id").get<std::string>();
  pair.winner = record.at("winner").get<std::string>();
  pair.loser = record.at("loser").get<std::string>();
  pair.labeler = labeler_from_string(record.at("labeler").get<std::string>());
  pair.batch_id = record.at("batch_id").get<std::string>();
  if (pair.winner == pair.loser) throw DataError("pair winner equals loser");
  return pair;
}

std::vector<PreferencePair> pairs_from_label(const ScenarioBatch& batch, const Label& label) {
  if (label.batch_id != batch.batch_id) {
    throw DataError("label for " + label.batch_id + " applied to " + batch.batch_id);
  }
  std::vector<PreferencePair> pairs;
  if (label.choice) {
    const int chosen = *label.choice;
    if (chosen < 0 || chosen >= batch.size()) {
      throw DataError("label choice " + std::to_string(chosen) + " out of range for " +
                      batch.batch_id);
    }
    for (int k = 0; k < batch.size(); ++k) {
      if (k == chosen) continue;
      pairs.push_back({batch.context_id, batch.scenarios[chosen].sample_id,
                       batch.scenarios[k].sample_id, label.labeler, batch.batch_id});
    }
  } else {
    for (const auto& s : batch.scenarios) {
      pairs.push_back({batch.context_id, kGroundTruthId, s.sample_id, label.labeler,
                       batch.batch_id});
    }
  }
  return pairs;
}

void append_pairs(const std::filesystem::path& path,
                  const std::vector<PreferencePair>& pairs) {
  for (const auto& p : pairs) append_jsonl(path, pair_to_json(p));
}

void persist_pairs(const std::filesystem::path& path,
                   const std::vector<PreferencePair>& pairs) {
  std::vector<Json> records;
  records.reserve(pairs.size());
  for (const auto& p : pairs) records.push_back(pair_to_json(p));
  write_jsonl(path, records);
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path) {
  std::vector<PreferencePair> pairs;
  for_each_jsonl(path, [&](const Json& record, int) { pairs.push_back(pair_from_json(record)); });
  return pairs;
}

bool is_validation_context(const std::string& context_id, double validation_fraction) {
  const double u = static_cast<double>(stable_hash64(context_id) % 1000000) / 1e6;
  return u < validation_fraction;
}

PairSplit split_pairs(const std::vector<PreferencePair>& pairs, double validation_fraction) {
  PairSplit split;
  for (const auto& p : pairs) {
    (is_validation_context(p.context_id, validation_fraction) ? split.validation : split.train)
        .push_back(p);
  }
  return split;
}

}  // namespace trlhf
