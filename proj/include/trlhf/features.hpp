#pragma once

#include <Eigen/Core>
#include <vector>

#include "trlhf/io.hpp"
#include "trlhf/world.hpp"

namespace trlhf {

// Ego-centric feature layout shared by the policy and the reward model.
//
//   [0, 5)    ego kinematics: speed, last accel, last yaw rate, last jerk,
//             speed minus limit
//   [5, 9)    lane frame: lateral offset (m, left positive), heading error,
//             curvature at lookahead, remaining margin to the lane edge
//   [9, ...)  K nearest neighbours sorted by distance, 5 slots each:
//             present flag, dx, dy, dvx, dvy in the ego frame
//   tail      2 * history_steps deltas: (accel, yaw rate) per past step
struct FeatureConfig {
  int neighbors = 4;
  int history_steps = kHistorySteps;
  double lookahead = 10.0;         // m, curvature probe distance
  double neighbor_radius = 40.0;   // m, farther agents are padded out

  static constexpr int kEgoSize = 5;
  static constexpr int kLaneSize = 4;
  static constexpr int kNeighborSlot = 5;

  static constexpr int kSpeed = 0;
  static constexpr int kAccel = 1;
  static constexpr int kYawRate = 2;
  static constexpr int kJerk = 3;
  static constexpr int kSpeedOverLimit = 4;
  static constexpr int kLateralOffset = 5;
  static constexpr int kHeadingError = 6;
  static constexpr int kCurvature = 7;
  static constexpr int kLaneMargin = 8;
  static constexpr int kNeighborsBegin = 9;

  int neighbors_end() const { return kNeighborsBegin + neighbors * kNeighborSlot; }
  int size() const { return neighbors_end() + 2 * history_steps; }

  Json to_json() const;
  static FeatureConfig from_json(const Json& record);
  bool operator==(const FeatureConfig&) const = default;
};

// Feature vector of `agent` at step `t` of `tracks`; steps before 0 repeat
// the first state.
void featurize_window(const MapModel& map, const std::vector<AgentTrack>& tracks,
                      int t, int agent, double dt, const FeatureConfig& config,
                      Eigen::Ref<Eigen::VectorXd> out);

Eigen::VectorXd featurize(const ScenarioContext& context, int agent,
                          const FeatureConfig& config = {});

// One column per agent, at the last state of the context.
Eigen::MatrixXd featurize_all(const ScenarioContext& context,
                              const FeatureConfig& config = {});

// Features for steps [begin, end) of a scenario; column index is
// (t - begin) * num_agents + agent.
Eigen::MatrixXd scenario_features(const Scenario& scenario, const MapModel& map,
                                  const FeatureConfig& config, int begin, int end);

}  // namespace trlhf
