#include "trlhf/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "trlhf/error.hpp"
#include "trlhf/io.hpp"

namespace trlhf {

namespace {

constexpr double kLaneWidth = 3.6;
constexpr int kPlacementAttempts = 50;

// Hidden per-driver parameters of the reference controllers.
struct DriverParams {
  double desired_speed;  // m/s
  double time_headway;   // s
  double min_gap;        // m
  double max_accel;      // m/s^2
  double comfort_decel;  // m/s^2
  double steer_gain;     // 1/s
  double lookahead_time; // s
  double lane_bias;      // m, preferred lateral position
  double accel_jitter;   // m/s^2, stationary std of throttle noise
  double yaw_jitter;     // rad/s, stationary std of steering noise
};

// First-order autoregressive control noise; correlation per 0.1 s step.
constexpr double kJitterCorrelation = 0.9;

struct Driver {
  AgentShape shape;
  DriverParams params;
  int route = 0;
  int queue = 0;
  AgentState state;
  Action jitter;
};

struct Layout {
  MapModel map;
  std::vector<Lane> routes;      // path each agent follows, by route index
  std::vector<int> route_queue;  // car-following queue of each route
};

std::vector<Eigen::Vector2d> straight_points(double y, double length) {
  return {Eigen::Vector2d(0.0, y), Eigen::Vector2d(length, y)};
}

Layout straight_layout(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> limit(12.0, 16.0);
  Layout layout;
  layout.map.speed_limit = limit(rng);
  for (int l = 0; l < 2; ++l) {
    layout.map.lanes.emplace_back(straight_points(l * kLaneWidth, 400.0), kLaneWidth);
  }
  layout.routes = layout.map.lanes;
  layout.route_queue = {0, 1};
  return layout;
}

Layout curve_layout(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> limit(11.0, 14.0);
  std::uniform_real_distribution<double> radius(90.0, 160.0);
  std::uniform_real_distribution<double> sweep(0.5, 1.1);
  std::bernoulli_distribution left(0.5);
  const double r = radius(rng);
  const double phi = sweep(rng);
  const double sign = left(rng) ? 1.0 : -1.0;

  // Reference path: straight lead-in, circular arc, straight exit; 1 m spacing.
  std::vector<Eigen::Vector2d> points;
  std::vector<double> headings;
  Eigen::Vector2d p(0.0, 0.0);
  double heading = 0.0;
  const double lead = 40.0;
  const double arc = r * phi;
  const double exit = 300.0;
  const double total = lead + arc + exit;
  const int n = static_cast<int>(std::ceil(total));
  points.push_back(p);
  headings.push_back(heading);
  for (int i = 1; i <= n; ++i) {
    const double s_mid = i - 0.5;
    const double ds = 1.0;
    double curvature = 0.0;
    if (s_mid > lead && s_mid < lead + arc) curvature = sign / r;
    const double mid_heading = heading + 0.5 * curvature * ds;
    p += ds * Eigen::Vector2d(std::cos(mid_heading), std::sin(mid_heading));
    heading += curvature * ds;
    points.push_back(p);
    headings.push_back(heading);
  }

  Layout layout;
  layout.map.speed_limit = limit(rng);
  for (int l = 0; l < 2; ++l) {
    const double offset = l * kLaneWidth;
    std::vector<Eigen::Vector2d> lane_points;
    lane_points.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Eigen::Vector2d normal(-std::sin(headings[i]), std::cos(headings[i]));
      lane_points.push_back(points[i] + offset * normal);
    }
    layout.map.lanes.emplace_back(std::move(lane_points), kLaneWidth);
  }
  layout.routes = layout.map.lanes;
  layout.route_queue = {0, 1};
  return layout;
}

Layout merge_layout(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> limit(12.0, 15.0);
  std::uniform_real_distribution<double> merge_at(90.0, 130.0);
  const double x_merge = merge_at(rng);
  const double taper = 60.0;
  const double ramp_offset = -3.8;

  std::vector<Eigen::Vector2d> ramp;
  ramp.emplace_back(0.0, ramp_offset);
  for (double x = x_merge - taper; x <= x_merge + 1e-9; x += 1.0) {
    const double u = (x - (x_merge - taper)) / taper;
    ramp.emplace_back(x, ramp_offset * 0.5 * (1.0 + std::cos(kPi * u)));
  }

  Layout layout;
  layout.map.speed_limit = limit(rng);
  layout.map.lanes.emplace_back(straight_points(0.0, 400.0), kLaneWidth);
  layout.map.lanes.emplace_back(ramp, kLaneWidth);

  std::vector<Eigen::Vector2d> ramp_route = ramp;
  ramp_route.emplace_back(400.0, 0.0);
  layout.routes = {layout.map.lanes[0], Lane(std::move(ramp_route), kLaneWidth)};
  // Both routes share one queue so vehicles interleave through the merge.
  layout.route_queue = {0, 0};
  return layout;
}

DriverParams draw_params(std::mt19937_64& rng, double speed_limit) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DriverParams p;
  p.desired_speed = speed_limit * (0.6 + 0.35 * u(rng));
  p.time_headway = 1.0 + 0.8 * u(rng);
  p.min_gap = 2.0 + 2.0 * u(rng);
  p.max_accel = 1.0 + 1.0 * u(rng);
  p.comfort_decel = 1.5 + 1.0 * u(rng);
  p.steer_gain = 1.5 + 1.0 * u(rng);
  p.lookahead_time = 0.8 + 0.5 * u(rng);
  p.lane_bias = 0.6 * (u(rng) - 0.5);
  p.accel_jitter = 0.1 + 0.2 * u(rng);
  p.yaw_jitter = 0.01 + 0.015 * u(rng);
  return p;
}

// Intelligent-driver-model acceleration toward the queue leader.
double car_following_accel(const Driver& self, double progress,
                           const std::vector<Driver>& drivers,
                           const std::vector<double>& progresses, int self_index,
                           const ActionLimits& limits, double dt,
                           double speed_limit) {
  const DriverParams& p = self.params;
  const double v = self.state.v;
  double gap = std::numeric_limits<double>::infinity();
  double leader_speed = v;
  for (std::size_t j = 0; j < drivers.size(); ++j) {
    if (static_cast<int>(j) == self_index || drivers[j].queue != self.queue) continue;
    const double ahead = progresses[j] - progress;
    if (ahead <= 0.0) continue;
    const double g =
        ahead - 0.5 * (self.shape.length + drivers[j].shape.length);
    if (g < gap) {
      gap = g;
      leader_speed = drivers[j].state.v;
    }
  }
  double accel = p.max_accel * (1.0 - std::pow(v / p.desired_speed, 4));
  if (std::isfinite(gap)) {
    const double desired_gap =
        p.min_gap + v * p.time_headway +
        v * (v - leader_speed) / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
    const double ratio = std::max(desired_gap, 0.0) / std::max(gap, 0.1);
    accel -= p.max_accel * ratio * ratio;
  }
  accel = std::clamp(accel, -limits.accel_max, p.max_accel);
  const double cap = std::min(p.desired_speed, speed_limit);
  accel = std::min(accel, (cap - v) / dt);
  accel = std::max(accel, -v / dt);
  return accel;
}

double lane_keeping_yaw_rate(const Driver& self, const Lane& route,
                             const ActionLimits& limits) {
  const DriverParams& p = self.params;
  const LaneProjection proj = route.project(self.state.position());
  const double lookahead = std::max(6.0, p.lookahead_time * self.state.v);
  const double s = proj.arc_length + lookahead;
  const double h = route.heading_at(s);
  const Eigen::Vector2d target =
      route.point_at(s) + p.lane_bias * Eigen::Vector2d(-std::sin(h), std::cos(h));
  const Eigen::Vector2d to_target = target - self.state.position();
  const double desired = std::atan2(to_target.y(), to_target.x());
  const double yaw_rate = p.steer_gain * normalize_angle(desired - self.state.theta);
  return std::clamp(yaw_rate, -limits.yaw_rate_max, limits.yaw_rate_max);
}

bool is_clean(const Scenario& scenario, const MapModel& map) {
  if (detect_collision(scenario).any()) return false;
  if (detect_offroad(scenario, map).any()) return false;
  for (const auto& agent : scenario.agents) {
    for (const auto& s : agent.states) {
      if (s.v > map.speed_limit) return false;
    }
  }
  return true;
}

}  // namespace

std::string to_string(RoadKind kind) {
  switch (kind) {
    case RoadKind::kStraight: return "straight";
    case RoadKind::kCurve: return "curve";
    case RoadKind::kMerge: return "merge";
  }
  return "straight";
}

RoadKind road_kind_from_string(const std::string& name) {
  if (name == "straight") return RoadKind::kStraight;
  if (name == "curve") return RoadKind::kCurve;
  if (name == "merge") return RoadKind::kMerge;
  throw ConfigError("unknown road kind '" + name + "'");
}

GeneratedScene generate_scene(const SceneSpec& spec) {
  if (spec.n_agents < 1) throw ConfigError("scene needs at least one agent");
  if (spec.episode_len < kHistorySteps + 2) {
    throw ConfigError("episode_len must be at least " +
                      std::to_string(kHistorySteps + 2));
  }
  std::mt19937_64 rng(spec.seed);
  Layout layout;
  switch (spec.road_kind) {
    case RoadKind::kStraight: layout = straight_layout(rng); break;
    case RoadKind::kCurve: layout = curve_layout(rng); break;
    case RoadKind::kMerge: layout = merge_layout(rng); break;
  }
  layout.map.validate();
  auto map = std::make_shared<const MapModel>(layout.map);
  const ActionLimits limits;
  const double dt = kDefaultDt;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    std::vector<Driver> drivers(spec.n_agents);
    const int n_routes = static_cast<int>(layout.routes.size());
    std::vector<double> next_free(n_routes, 10.0 + 10.0 * u(rng));
    // Queues that share space also share the placement cursor.
    for (int i = 0; i < spec.n_agents; ++i) {
      Driver& d = drivers[i];
      d.shape = {4.2 + 0.8 * u(rng), 1.7 + 0.3 * u(rng)};
      d.params = draw_params(rng, map->speed_limit);
      d.route = std::min(static_cast<int>(u(rng) * n_routes), n_routes - 1);
      d.queue = layout.route_queue[d.route];
      double& cursor = next_free[d.queue];
      const double s = cursor + 0.5 * d.shape.length;
      cursor = s + 0.5 * d.shape.length + 8.0 + 17.0 * u(rng);
      const Lane& route = layout.routes[d.route];
      const double h = route.heading_at(s);
      const Eigen::Vector2d pos = route.point_at(s) +
          d.params.lane_bias * Eigen::Vector2d(-std::sin(h), std::cos(h));
      const double v = d.params.desired_speed * (0.7 + 0.3 * u(rng));
      d.state = {pos.x(), pos.y(), v, h};
    }

    Scenario gt;
    gt.scene_id = spec.scene_id;
    gt.sample_id = "gt";
    gt.dt = dt;
    gt.source = ScenarioSource::kGroundTruth;
    for (int i = 0; i < spec.n_agents; ++i) {
      gt.agents.push_back({"a" + std::to_string(i), drivers[i].shape, {drivers[i].state}});
    }
    for (int t = 1; t < spec.episode_len; ++t) {
      std::vector<double> progress(drivers.size());
      for (std::size_t i = 0; i < drivers.size(); ++i) {
        progress[i] = layout.routes[drivers[i].route]
                          .project(drivers[i].state.position())
                          .arc_length;
      }
      std::vector<Action> actions(drivers.size());
      for (std::size_t i = 0; i < drivers.size(); ++i) {
        actions[i].accel =
            car_following_accel(drivers[i], progress[i], drivers, progress,
                                static_cast<int>(i), limits, dt, map->speed_limit);
        actions[i].yaw_rate =
            lane_keeping_yaw_rate(drivers[i], layout.routes[drivers[i].route], limits);
      }
      const double innovation = std::sqrt(1.0 - kJitterCorrelation * kJitterCorrelation);
      for (std::size_t i = 0; i < drivers.size(); ++i) {
        Action& jitter = drivers[i].jitter;
        jitter.accel = kJitterCorrelation * jitter.accel +
                       innovation * drivers[i].params.accel_jitter * normal(rng);
        jitter.yaw_rate = kJitterCorrelation * jitter.yaw_rate +
                          innovation * drivers[i].params.yaw_jitter * normal(rng);
        Action a = actions[i];
        a.accel = std::clamp(a.accel + jitter.accel, -drivers[i].state.v / dt,
                             (std::min(drivers[i].params.desired_speed, map->speed_limit) -
                              drivers[i].state.v) / dt);
        a.yaw_rate += jitter.yaw_rate;
        actions[i] = limits.clip(a);
      }
      for (std::size_t i = 0; i < drivers.size(); ++i) {
        drivers[i].state = step_unicycle(drivers[i].state, actions[i], dt);
        gt.agents[i].states.push_back(drivers[i].state);
      }
    }
    if (!is_clean(gt, *map)) continue;

    GeneratedScene scene;
    scene.map = map;
    scene.context = context_at(gt, map, kHistorySteps);
    scene.ground_truth = std::move(gt);
    return scene;
  }
  throw GenerationError("scene " + spec.scene_id + ": no failure-free placement after " +
                        std::to_string(kPlacementAttempts) + " attempts");
}

std::vector<SceneSpec> corpus_specs(const std::string& split, int count,
                                    std::uint64_t seed, int n_agents) {
  std::vector<SceneSpec> specs;
  specs.reserve(count);
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "%s-%04d", split.c_str(), i);
    SceneSpec spec;
    spec.scene_id = id;
    spec.seed = stable_hash64(std::to_string(seed) + "/" + id);
    spec.n_agents = n_agents;
    spec.road_kind = static_cast<RoadKind>(spec.seed % 3);
    specs.push_back(spec);
  }
  return specs;
}

}  // namespace trlhf
