#include "trlhf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "trlhf/error.hpp"
#include "trlhf/reward.hpp"

namespace trlhf {

void DrivingProfile::append(const DrivingProfile& other) {
  longitudinal_accel.insert(longitudinal_accel.end(), other.longitudinal_accel.begin(),
                            other.longitudinal_accel.end());
  lateral_accel.insert(lateral_accel.end(), other.lateral_accel.begin(),
                       other.lateral_accel.end());
  jerk.insert(jerk.end(), other.jerk.begin(), other.jerk.end());
}

std::vector<double> longitudinal_accelerations(const AgentTrack& agent, double dt) {
  std::vector<double> out;
  out.reserve(agent.states.size());
  for (std::size_t t = 0; t + 1 < agent.states.size(); ++t) {
    out.push_back((agent.states[t + 1].v - agent.states[t].v) / dt);
  }
  return out;
}

DrivingProfile extract_profile(const Scenario& scenario) {
  if (scenario.num_steps() < 3) {
    throw DataError("profile of " + scenario.scene_id + "/" + scenario.sample_id +
                    " needs at least 3 states");
  }
  const double dt = scenario.dt;
  DrivingProfile profile;
  for (const auto& agent : scenario.agents) {
    const std::vector<double> accel = longitudinal_accelerations(agent, dt);
    for (std::size_t t = 0; t < accel.size(); ++t) {
      profile.longitudinal_accel.push_back(std::abs(accel[t]));
      const double yaw_rate =
          normalize_angle(agent.states[t + 1].theta - agent.states[t].theta) / dt;
      profile.lateral_accel.push_back(std::abs(agent.states[t].v * yaw_rate));
      if (t + 1 < accel.size()) {
        profile.jerk.push_back(std::abs((accel[t + 1] - accel[t]) / dt));
      }
    }
  }
  return profile;
}

Histogram Histogram::normalized() const {
  const double sum = total();
  if (!(sum > 0.0)) throw DataError("cannot normalize an empty histogram");
  return {edges, masses / sum};
}

Eigen::VectorXd uniform_edges_with_overflow(double lo, double hi, int bins) {
  const double width = (hi - lo) / bins;
  Eigen::VectorXd edges(bins + 2);
  for (int k = 0; k <= bins; ++k) edges[k] = lo + k * width;
  edges[bins + 1] = hi + width;
  return edges;
}

Histogram make_histogram(const std::vector<double>& samples, const Eigen::VectorXd& edges) {
  const int bins = static_cast<int>(edges.size()) - 1;
  Histogram h{edges, Eigen::VectorXd::Zero(bins)};
  for (double x : samples) {
    const auto it = std::upper_bound(edges.data(), edges.data() + edges.size(), x);
    const int k = std::clamp(static_cast<int>(it - edges.data()) - 1, 0, bins - 1);
    h.masses[k] += 1.0;
  }
  return h;
}

double wasserstein1(const Histogram& a, const Histogram& b) {
  if (a.edges.size() != b.edges.size() || a.edges != b.edges) {
    throw DataError("wasserstein1: histograms have different bin edges");
  }
  double cdf_a = 0.0;
  double cdf_b = 0.0;
  double distance = 0.0;
  for (int k = 0; k < a.bins(); ++k) {
    cdf_a += a.masses[k];
    cdf_b += b.masses[k];
    distance += std::abs(cdf_a - cdf_b) * (a.edges[k + 1] - a.edges[k]);
  }
  return distance;
}

namespace {

double profile_distance(const std::vector<double>& generated,
                        const std::vector<double>& ground_truth,
                        const Eigen::VectorXd& edges) {
  if (generated.empty() || ground_truth.empty()) {
    throw DataError("realism deviation needs non-empty sample pools");
  }
  return wasserstein1(make_histogram(generated, edges).normalized(),
                      make_histogram(ground_truth, edges).normalized());
}

}  // namespace

RealismDeviation realism_deviation(const DrivingProfile& generated,
                                   const DrivingProfile& ground_truth,
                                   const ProfileEdges& edges) {
  RealismDeviation out;
  out.longitudinal = profile_distance(generated.longitudinal_accel,
                                      ground_truth.longitudinal_accel, edges.accel);
  out.lateral =
      profile_distance(generated.lateral_accel, ground_truth.lateral_accel, edges.accel);
  out.jerk = profile_distance(generated.jerk, ground_truth.jerk, edges.jerk);
  return out;
}

RealismDeviation realism_deviation(const std::vector<Scenario>& generated,
                                   const std::vector<Scenario>& ground_truth,
                                   const ProfileEdges& edges) {
  if (generated.empty() || ground_truth.empty()) {
    throw DataError("realism deviation needs non-empty scenario sets");
  }
  DrivingProfile gen;
  for (const auto& s : generated) gen.append(extract_profile(s));
  DrivingProfile gt;
  for (const auto& s : ground_truth) gt.append(extract_profile(s));
  return realism_deviation(gen, gt, edges);
}

double scene_failure_fraction(const Scenario& scenario, const MapModel& map) {
  const FlagGrid failed = detect_collision(scenario) || detect_offroad(scenario, map);
  return static_cast<double>(failed.rowwise().any().count()) / scenario.num_agents();
}

double failure_rate(const std::vector<Scenario>& scenarios,
                    const std::vector<const MapModel*>& maps) {
  if (scenarios.empty()) throw DataError("failure rate needs at least one scenario");
  if (maps.size() != scenarios.size()) throw DataError("failure rate: one map per scenario");
  double sum = 0.0;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    sum += scene_failure_fraction(scenarios[i], *maps[i]);
  }
  return sum / static_cast<double>(scenarios.size());
}

double reward_cost(const RewardModel& rm, const std::vector<Scenario>& scenarios,
                   const std::vector<const MapModel*>& maps) {
  if (scenarios.empty()) throw DataError("reward cost needs at least one scenario");
  if (maps.size() != scenarios.size()) throw DataError("reward cost: one map per scenario");
  double sum = 0.0;
  for (std::size_t i = 0; i < scenarios.size(); ++i) sum += rm.score(scenarios[i], *maps[i]);
  return -sum / static_cast<double>(scenarios.size());
}

Json report_to_json(const std::string& name, const EvalReport& report) {
  return {{"model", name},
          {"real", report.real},
          {"fail", report.fail},
          {"reward_cost", report.reward_cost},
          {"real_longitudinal", report.distances.longitudinal},
          {"real_lateral", report.distances.lateral},
          {"real_jerk", report.distances.jerk}};
}

std::string format_report_table(const std::vector<ReportRow>& rows) {
  std::size_t name_width = 5;
  for (const auto& row : rows) name_width = std::max(name_width, row.name.size());
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s | %8s %8s %12s\n", static_cast<int>(name_width),
                "Model", "Real", "Fail", "Reward Cost");
  out += line;
  out += std::string(name_width, '-') + "-+-" + std::string(30, '-') + "\n";
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%-*s | %8.3f %8.3f %12.3f\n",
                  static_cast<int>(name_width), row.name.c_str(), row.report.real,
                  row.report.fail, row.report.reward_cost);
    out += line;
  }
  return out;
}

}  // namespace trlhf
