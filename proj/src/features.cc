#include "trlhf/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "trlhf/error.hpp"

namespace trlhf {

namespace {

constexpr double kSpeedScale = 10.0;
constexpr double kAccelScale = 2.0;
constexpr double kYawRateScale = 0.3;
constexpr double kJerkScale = 10.0;
constexpr double kCurvatureScale = 50.0;
constexpr double kLongitudinalScale = 20.0;
constexpr double kLateralScale = 4.0;
constexpr double kRelativeSpeedScale = 5.0;

const AgentState& state_at(const AgentTrack& track, int t) {
  return track.states[std::max(t, 0)];
}

}  // namespace

Json FeatureConfig::to_json() const {
  return {{"neighbors", neighbors},
          {"history_steps", history_steps},
          {"lookahead", lookahead},
          {"neighbor_radius", neighbor_radius}};
}

FeatureConfig FeatureConfig::from_json(const Json& record) {
  FeatureConfig config;
  try {
    config.neighbors = record.at("neighbors").get<int>();
    config.history_steps = record.at("history_steps").get<int>();
    config.lookahead = record.at("lookahead").get<double>();
    config.neighbor_radius = record.at("neighbor_radius").get<double>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("feature config: ") + e.what());
  }
  if (config.neighbors < 0 || config.history_steps < 2) {
    throw DataError("feature config out of range");
  }
  return config;
}

void featurize_window(const MapModel& map, const std::vector<AgentTrack>& tracks,
                      int t, int agent, double dt, const FeatureConfig& config,
                      Eigen::Ref<Eigen::VectorXd> out) {
  out.setZero();
  const AgentTrack& ego_track = tracks[agent];
  const AgentState& ego = state_at(ego_track, t);

  // Per-step accel / yaw-rate history, most recent first.
  const int h = config.history_steps;
  const int history_begin = config.neighbors_end();
  double last_accel = 0.0;
  double prev_accel = 0.0;
  double last_yaw_rate = 0.0;
  for (int k = 0; k < h; ++k) {
    const Action a =
        invert_unicycle(state_at(ego_track, t - k - 1), state_at(ego_track, t - k), dt);
    out[history_begin + 2 * k] = a.accel / kAccelScale;
    out[history_begin + 2 * k + 1] = a.yaw_rate / kYawRateScale;
    if (k == 0) {
      last_accel = a.accel;
      last_yaw_rate = a.yaw_rate;
    } else if (k == 1) {
      prev_accel = a.accel;
    }
  }

  out[FeatureConfig::kSpeed] = ego.v / kSpeedScale;
  out[FeatureConfig::kAccel] = last_accel / kAccelScale;
  out[FeatureConfig::kYawRate] = last_yaw_rate / kYawRateScale;
  out[FeatureConfig::kJerk] = (last_accel - prev_accel) / dt / kJerkScale;
  out[FeatureConfig::kSpeedOverLimit] = (ego.v - map.speed_limit) / kSpeedScale;

  const NearestLane nearest = map.nearest_lane(ego.position());
  const Lane& lane = map.lanes[nearest.lane];
  out[FeatureConfig::kLateralOffset] = nearest.projection.lateral_offset;
  out[FeatureConfig::kHeadingError] =
      normalize_angle(ego.theta - nearest.projection.heading);
  out[FeatureConfig::kCurvature] =
      lane.curvature_at(nearest.projection.arc_length + config.lookahead) *
      kCurvatureScale;
  out[FeatureConfig::kLaneMargin] =
      0.5 * lane.width() - std::abs(nearest.projection.lateral_offset);

  if (config.neighbors == 0) return;
  const double c = std::cos(ego.theta);
  const double s = std::sin(ego.theta);
  using Slot = std::array<double, 5>;  // distance, dx, dy, dvx, dvy
  std::vector<Slot> slots;
  slots.reserve(tracks.size());
  for (std::size_t j = 0; j < tracks.size(); ++j) {
    if (static_cast<int>(j) == agent) continue;
    const AgentState& other = state_at(tracks[j], t);
    const double wx = other.x - ego.x;
    const double wy = other.y - ego.y;
    const double distance = std::hypot(wx, wy);
    if (distance > config.neighbor_radius) continue;
    const double vx = other.v * std::cos(other.theta) - ego.v * c;
    const double vy = other.v * std::sin(other.theta) - ego.v * s;
    slots.push_back({distance, c * wx + s * wy, -s * wx + c * wy,
                     c * vx + s * vy, -s * vx + c * vy});
  }
  std::sort(slots.begin(), slots.end());
  const int count = std::min<int>(config.neighbors, static_cast<int>(slots.size()));
  for (int k = 0; k < count; ++k) {
    const int base = FeatureConfig::kNeighborsBegin + k * FeatureConfig::kNeighborSlot;
    out[base] = 1.0;
    out[base + 1] = slots[k][1] / kLongitudinalScale;
    out[base + 2] = slots[k][2] / kLateralScale;
    out[base + 3] = slots[k][3] / kRelativeSpeedScale;
    out[base + 4] = slots[k][4] / kRelativeSpeedScale;
  }
}

Eigen::VectorXd featurize(const ScenarioContext& context, int agent,
                          const FeatureConfig& config) {
  context.validate();
  if (agent < 0 || agent >= context.num_agents()) {
    throw DataError("featurize: agent index out of range");
  }
  Eigen::VectorXd out(config.size());
  featurize_window(*context.map, context.history, context.history_length() - 1,
                   agent, context.dt, config, out);
  return out;
}

Eigen::MatrixXd featurize_all(const ScenarioContext& context,
                              const FeatureConfig& config) {
  context.validate();
  Eigen::MatrixXd out(config.size(), context.num_agents());
  for (int i = 0; i < context.num_agents(); ++i) {
    featurize_window(*context.map, context.history, context.history_length() - 1, i,
                     context.dt, config, out.col(i));
  }
  return out;
}

Eigen::MatrixXd scenario_features(const Scenario& scenario, const MapModel& map,
                                  const FeatureConfig& config, int begin, int end) {
  const int agents = scenario.num_agents();
  begin = std::max(begin, 0);
  end = std::min(end, scenario.num_steps());
  Eigen::MatrixXd out(config.size(), std::max(0, end - begin) * agents);
  for (int t = begin; t < end; ++t) {
    for (int i = 0; i < agents; ++i) {
      featurize_window(map, scenario.agents, t, i, scenario.dt, config,
                       out.col((t - begin) * agents + i));
    }
  }
  return out;
}

}  // namespace trlhf
