#pragma once

#include <Eigen/Core>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace trlhf {

inline constexpr double kPi = std::numbers::pi;

// Simulation step and history window shared by every module.
inline constexpr double kDefaultDt = 0.1;
inline constexpr int kHistorySteps = 10;

// Wraps an angle into (-pi, pi].
double normalize_angle(double angle);

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;      // speed, m/s, never negative
  double theta = 0.0;  // heading, rad

  Eigen::Vector2d position() const { return {x, y}; }
  bool operator==(const AgentState&) const = default;
};

struct Action {
  double accel = 0.0;     // m/s^2
  double yaw_rate = 0.0;  // rad/s

  bool operator==(const Action&) const = default;
};

struct ActionLimits {
  double accel_max = 4.0;
  double yaw_rate_max = 0.7;

  Action clip(const Action& action) const;
  bool contains(const Action& action) const;
};

struct AgentShape {
  double length = 4.5;
  double width = 1.8;

  bool operator==(const AgentShape&) const = default;
};

struct AgentTrack {
  std::string id;
  AgentShape shape;
  std::vector<AgentState> states;

  bool operator==(const AgentTrack&) const = default;
};

enum class ScenarioSource { kModel, kGroundTruth };

std::string to_string(ScenarioSource source);
ScenarioSource scenario_source_from_string(const std::string& name);

// Stacked state sequences of every agent in one scene. All tracks share the
// same length and time step.
struct Scenario {
  std::string scene_id;
  std::string sample_id;
  double dt = kDefaultDt;
  ScenarioSource source = ScenarioSource::kModel;
  std::vector<AgentTrack> agents;

  int num_agents() const { return static_cast<int>(agents.size()); }
  int num_steps() const {
    return agents.empty() ? 0 : static_cast<int>(agents.front().states.size());
  }
  // Throws DataError when the invariants do not hold.
  void validate() const;

  bool operator==(const Scenario&) const = default;
};

// Result of projecting a point onto a lane centerline.
struct LaneProjection {
  double distance = 0.0;        // unsigned distance to the centerline
  double lateral_offset = 0.0;  // signed, positive to the left of travel
  double arc_length = 0.0;      // station of the foot point along the lane
  double heading = 0.0;         // centerline heading at the foot point
};

class Lane {
 public:
  Lane() = default;
  Lane(std::vector<Eigen::Vector2d> centerline, double width);

  const std::vector<Eigen::Vector2d>& centerline() const { return centerline_; }
  double width() const { return width_; }
  double length() const { return stations_.empty() ? 0.0 : stations_.back(); }

  LaneProjection project(const Eigen::Vector2d& point) const;
  Eigen::Vector2d point_at(double arc_length) const;
  double heading_at(double arc_length) const;
  // Signed curvature (1/m) averaged over a short window around arc_length.
  double curvature_at(double arc_length) const;

  bool operator==(const Lane& other) const {
    return width_ == other.width_ && centerline_ == other.centerline_;
  }

 private:
  int segment_at(double arc_length) const;

  std::vector<Eigen::Vector2d> centerline_;
  std::vector<double> stations_;
  double width_ = 0.0;
};

struct NearestLane {
  int lane = -1;
  LaneProjection projection;
};

// Vector map: lane centerlines with widths defining the drivable corridor.
struct MapModel {
  std::vector<Lane> lanes;
  double speed_limit = 15.0;

  // Throws ConfigError on an empty map or degenerate lanes.
  void validate() const;
  NearestLane nearest_lane(const Eigen::Vector2d& point) const;

  bool operator==(const MapModel&) const = default;
};

// Decision-relevant context: map plus the current and preceding
// kHistorySteps states of every agent.
struct ScenarioContext {
  std::string scene_id;
  std::shared_ptr<const MapModel> map;
  double dt = kDefaultDt;
  std::vector<AgentTrack> history;

  int num_agents() const { return static_cast<int>(history.size()); }
  int history_length() const {
    return history.empty() ? 0 : static_cast<int>(history.front().states.size());
  }
  void validate() const;
};

// Context whose window ends at step `t` of `scenario`. Steps before the start
// of the log repeat the first state.
ScenarioContext context_at(const Scenario& scenario,
                           std::shared_ptr<const MapModel> map, int t,
                           int history_steps = kHistorySteps);

// Explicit Euler unicycle step; position advances with the pre-step speed
// and heading. Throws InvalidStateError on non-finite input.
AgentState step_unicycle(const AgentState& state, const Action& action,
                         double dt);

// Action that maps `from` onto `to` under step_unicycle (speed and heading
// components only).
Action invert_unicycle(const AgentState& from, const AgentState& to, double dt);

// Rows are agents, columns are time steps.
using FlagGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Separating-axis overlap test of two oriented rectangles centred at the
// given poses. Touching boundaries count as overlap.
bool boxes_overlap(const AgentState& a, const AgentShape& shape_a,
                   const AgentState& b, const AgentShape& shape_b);

FlagGrid detect_collision(const Scenario& scenario);
FlagGrid detect_offroad(const Scenario& scenario, const MapModel& map);

}  // namespace trlhf
