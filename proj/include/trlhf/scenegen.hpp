#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "trlhf/world.hpp"

namespace trlhf {

enum class RoadKind { kStraight, kCurve, kMerge };

std::string to_string(RoadKind kind);
RoadKind road_kind_from_string(const std::string& name);

// Default closed-loop horizon is 100 steps; the ground-truth log covers the
// history window plus that horizon.
inline constexpr int kDefaultEpisodeLength = kHistorySteps + 1 + 100;

struct SceneSpec {
  std::uint64_t seed = 0;
  int n_agents = 4;
  RoadKind road_kind = RoadKind::kStraight;
  int episode_len = kDefaultEpisodeLength;
  std::string scene_id = "scene";
};

struct GeneratedScene {
  std::shared_ptr<const MapModel> map;
  ScenarioContext context;
  Scenario ground_truth;
};

// Builds a map, places agents without overlap and drives them with the
// reference controllers. Deterministic in spec.seed. Throws GenerationError
// when no failure-free placement is found within the retry budget.
GeneratedScene generate_scene(const SceneSpec& spec);

// Specs for a corpus split ("train", "eval", ...). Road kinds and seeds are
// drawn deterministically from `seed`.
std::vector<SceneSpec> corpus_specs(const std::string& split, int count,
                                    std::uint64_t seed, int n_agents = 4);

}  // namespace trlhf
