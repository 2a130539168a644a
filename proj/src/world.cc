#include "trlhf/world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "trlhf/error.hpp"

namespace trlhf {

double normalize_angle(double angle) {
  double wrapped = std::remainder(angle, 2.0 * kPi);
  if (wrapped <= -kPi) wrapped += 2.0 * kPi;
  return wrapped;
}

Action ActionLimits::clip(const Action& action) const {
  return {std::clamp(action.accel, -accel_max, accel_max),
          std::clamp(action.yaw_rate, -yaw_rate_max, yaw_rate_max)};
}

bool ActionLimits::contains(const Action& action) const {
  return std::abs(action.accel) <= accel_max &&
         std::abs(action.yaw_rate) <= yaw_rate_max;
}

std::string to_string(ScenarioSource source) {
  return source == ScenarioSource::kModel ? "model" : "ground_truth";
}

ScenarioSource scenario_source_from_string(const std::string& name) {
  if (name == "model") return ScenarioSource::kModel;
  if (name == "ground_truth") return ScenarioSource::kGroundTruth;
  throw DataError("unknown scenario source '" + name + "'");
}

void Scenario::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw DataError("scenario " + scene_id + "/" + sample_id +
                    ": dt must be positive");
  }
  if (agents.empty()) {
    throw DataError("scenario " + scene_id + "/" + sample_id + ": no agents");
  }
  const std::size_t length = agents.front().states.size();
  if (length < 2) {
    throw DataError("scenario " + scene_id + "/" + sample_id +
                    ": sequences need at least 2 states");
  }
  for (const auto& agent : agents) {
    if (agent.states.size() != length) {
      throw DataError("scenario " + scene_id + "/" + sample_id + ": agent " +
                      agent.id + " has a different sequence length");
    }
    if (!(agent.shape.length > 0.0) || !(agent.shape.width > 0.0)) {
      throw DataError("scenario " + scene_id + "/" + sample_id + ": agent " +
                      agent.id + " has a non-positive footprint");
    }
  }
}

Lane::Lane(std::vector<Eigen::Vector2d> centerline, double width)
    : centerline_(std::move(centerline)), width_(width) {
  stations_.reserve(centerline_.size());
  double s = 0.0;
  for (std::size_t i = 0; i < centerline_.size(); ++i) {
    if (i > 0) s += (centerline_[i] - centerline_[i - 1]).norm();
    stations_.push_back(s);
  }
}

int Lane::segment_at(double arc_length) const {
  const auto it = std::upper_bound(stations_.begin(), stations_.end(), arc_length);
  int segment = static_cast<int>(it - stations_.begin()) - 1;
  return std::clamp(segment, 0, static_cast<int>(centerline_.size()) - 2);
}

LaneProjection Lane::project(const Eigen::Vector2d& point) const {
  LaneProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < centerline_.size(); ++i) {
    const Eigen::Vector2d a = centerline_[i];
    const Eigen::Vector2d ab = centerline_[i + 1] - a;
    const double len2 = ab.squaredNorm();
    if (len2 == 0.0) continue;
    const double u = std::clamp((point - a).dot(ab) / len2, 0.0, 1.0);
    const Eigen::Vector2d foot = a + u * ab;
    const Eigen::Vector2d rel = point - foot;
    const double distance = rel.norm();
    if (distance < best.distance) {
      const double cross = ab.x() * (point - a).y() - ab.y() * (point - a).x();
      best.distance = distance;
      best.lateral_offset = cross >= 0.0 ? distance : -distance;
      best.arc_length = stations_[i] + u * std::sqrt(len2);
      best.heading = std::atan2(ab.y(), ab.x());
    }
  }
  return best;
}

Eigen::Vector2d Lane::point_at(double arc_length) const {
  const int i = segment_at(arc_length);
  const Eigen::Vector2d a = centerline_[i];
  const Eigen::Vector2d ab = centerline_[i + 1] - a;
  const double seg = stations_[i + 1] - stations_[i];
  const double u = seg > 0.0 ? (arc_length - stations_[i]) / seg : 0.0;
  return a + u * ab;
}

double Lane::heading_at(double arc_length) const {
  const int i = segment_at(arc_length);
  const Eigen::Vector2d ab = centerline_[i + 1] - centerline_[i];
  return std::atan2(ab.y(), ab.x());
}

double Lane::curvature_at(double arc_length) const {
  constexpr double kHalfWindow = 2.5;
  const double lo = std::max(0.0, arc_length - kHalfWindow);
  const double hi = std::min(length(), arc_length + kHalfWindow);
  if (hi - lo <= 1e-9) return 0.0;
  return normalize_angle(heading_at(hi) - heading_at(lo)) / (hi - lo);
}

void MapModel::validate() const {
  if (lanes.empty()) throw ConfigError("map has no lanes");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    if (lanes[i].centerline().size() < 2) {
      throw ConfigError("lane " + std::to_string(i) +
                        ": centerline needs at least 2 points");
    }
    if (!(lanes[i].width() > 0.0)) {
      throw ConfigError("lane " + std::to_string(i) + ": width must be positive");
    }
  }
  if (!(speed_limit > 0.0)) throw ConfigError("map speed_limit must be positive");
}

NearestLane MapModel::nearest_lane(const Eigen::Vector2d& point) const {
  NearestLane best;
  best.projection.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const LaneProjection p = lanes[i].project(point);
    if (p.distance < best.projection.distance) {
      best.lane = static_cast<int>(i);
      best.projection = p;
    }
  }
  return best;
}

void ScenarioContext::validate() const {
  if (!map) throw ConfigError("context " + scene_id + " has no map");
  if (history.empty()) throw DataError("context " + scene_id + " has no agents");
  const std::size_t length = history.front().states.size();
  if (length == 0) throw DataError("context " + scene_id + " has empty history");
  for (const auto& agent : history) {
    if (agent.states.size() != length) {
      throw DataError("context " + scene_id + ": ragged history");
    }
  }
}

ScenarioContext context_at(const Scenario& scenario,
                           std::shared_ptr<const MapModel> map, int t,
                           int history_steps) {
  ScenarioContext context;
  context.scene_id = scenario.scene_id;
  context.map = std::move(map);
  context.dt = scenario.dt;
  context.history.reserve(scenario.agents.size());
  for (const auto& agent : scenario.agents) {
    AgentTrack window{agent.id, agent.shape, {}};
    window.states.reserve(history_steps + 1);
    for (int k = t - history_steps; k <= t; ++k) {
      window.states.push_back(agent.states[std::max(k, 0)]);
    }
    context.history.push_back(std::move(window));
  }
  return context;
}

AgentState step_unicycle(const AgentState& state, const Action& action,
                         double dt) {
  if (!std::isfinite(state.x) || !std::isfinite(state.y) ||
      !std::isfinite(state.v) || !std::isfinite(state.theta) ||
      !std::isfinite(action.accel) || !std::isfinite(action.yaw_rate) ||
      !std::isfinite(dt)) {
    throw InvalidStateError("non-finite state or action in unicycle step");
  }
  AgentState next;
  next.x = state.x + state.v * std::cos(state.theta) * dt;
  next.y = state.y + state.v * std::sin(state.theta) * dt;
  next.v = std::max(0.0, state.v + action.accel * dt);
  next.theta = normalize_angle(state.theta + action.yaw_rate * dt);
  return next;
}

Action invert_unicycle(const AgentState& from, const AgentState& to, double dt) {
  return {(to.v - from.v) / dt, normalize_angle(to.theta - from.theta) / dt};
}

namespace {

struct Box {
  Eigen::Vector2d center;
  std::array<Eigen::Vector2d, 2> axes;  // unit forward, unit left
  std::array<double, 2> half;           // half length, half width
};

Box make_box(const AgentState& s, const AgentShape& shape) {
  const double c = std::cos(s.theta);
  const double n = std::sin(s.theta);
  return {{s.x, s.y},
          {Eigen::Vector2d(c, n), Eigen::Vector2d(-n, c)},
          {0.5 * shape.length, 0.5 * shape.width}};
}

double projected_radius(const Box& box, const Eigen::Vector2d& axis) {
  return box.half[0] * std::abs(box.axes[0].dot(axis)) +
         box.half[1] * std::abs(box.axes[1].dot(axis));
}

}  // namespace

bool boxes_overlap(const AgentState& a, const AgentShape& shape_a,
                   const AgentState& b, const AgentShape& shape_b) {
  const Box box_a = make_box(a, shape_a);
  const Box box_b = make_box(b, shape_b);
  const Eigen::Vector2d delta = box_b.center - box_a.center;
  const double reach = std::hypot(box_a.half[0], box_a.half[1]) +
                       std::hypot(box_b.half[0], box_b.half[1]);
  if (delta.squaredNorm() > reach * reach) return false;
  for (const Box* box : {&box_a, &box_b}) {
    for (const auto& axis : box->axes) {
      const double gap = std::abs(delta.dot(axis)) -
                         projected_radius(box_a, axis) -
                         projected_radius(box_b, axis);
      if (gap > 0.0) return false;
    }
  }
  return true;
}

FlagGrid detect_collision(const Scenario& scenario) {
  const int agents = scenario.num_agents();
  const int steps = scenario.num_steps();
  FlagGrid flags = FlagGrid::Constant(agents, steps, false);
  for (int t = 0; t < steps; ++t) {
    for (int i = 0; i < agents; ++i) {
      for (int j = i + 1; j < agents; ++j) {
        const auto& ai = scenario.agents[i];
        const auto& aj = scenario.agents[j];
        if (boxes_overlap(ai.states[t], ai.shape, aj.states[t], aj.shape)) {
          flags(i, t) = true;
          flags(j, t) = true;
        }
      }
    }
  }
  return flags;
}

FlagGrid detect_offroad(const Scenario& scenario, const MapModel& map) {
  if (map.lanes.empty()) throw ConfigError("off-road check needs a non-empty map");
  const int agents = scenario.num_agents();
  const int steps = scenario.num_steps();
  FlagGrid flags = FlagGrid::Constant(agents, steps, false);
  for (int i = 0; i < agents; ++i) {
    for (int t = 0; t < steps; ++t) {
      const NearestLane nearest =
          map.nearest_lane(scenario.agents[i].states[t].position());
      flags(i, t) = nearest.projection.distance >
                    0.5 * map.lanes[nearest.lane].width();
    }
  }
  return flags;
}

}  // namespace trlhf
