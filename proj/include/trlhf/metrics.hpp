#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "trlhf/io.hpp"
#include "trlhf/world.hpp"

namespace trlhf {

class RewardModel;

// Pooled driving-profile magnitudes of one or more scenarios.
struct DrivingProfile {
  std::vector<double> longitudinal_accel;  // m/s^2
  std::vector<double> lateral_accel;       // m/s^2
  std::vector<double> jerk;                // m/s^3

  void append(const DrivingProfile& other);
};

// Signed longitudinal acceleration series of one agent: (v[t+1]-v[t])/dt.
std::vector<double> longitudinal_accelerations(const AgentTrack& agent, double dt);

// Needs at least 3 states (jerk takes two differences).
DrivingProfile extract_profile(const Scenario& scenario);

struct Histogram {
  Eigen::VectorXd edges;   // monotone, size = masses + 1
  Eigen::VectorXd masses;  // non-negative

  int bins() const { return static_cast<int>(masses.size()); }
  double total() const { return masses.sum(); }
  Histogram normalized() const;
};

// Uniform bins on [lo, hi] plus one overflow bin of the same width that
// collects everything at or beyond hi.
Eigen::VectorXd uniform_edges_with_overflow(double lo, double hi, int bins);
Histogram make_histogram(const std::vector<double>& samples, const Eigen::VectorXd& edges);

// W1 = sum_k |CDF_a(k) - CDF_b(k)| * width_k on identical edges.
double wasserstein1(const Histogram& a, const Histogram& b);

struct RealismDeviation {
  double longitudinal = 0.0;
  double lateral = 0.0;
  double jerk = 0.0;
  double mean() const { return (longitudinal + lateral + jerk) / 3.0; }
};

// Fixed shared edges: 40 bins over [0, 8] m/s^2 (accelerations) and
// [0, 20] m/s^3 (jerk), each with an overflow bin.
struct ProfileEdges {
  Eigen::VectorXd accel = uniform_edges_with_overflow(0.0, 8.0, 40);
  Eigen::VectorXd jerk = uniform_edges_with_overflow(0.0, 20.0, 40);
};

RealismDeviation realism_deviation(const DrivingProfile& generated,
                                   const DrivingProfile& ground_truth,
                                   const ProfileEdges& edges = {});
RealismDeviation realism_deviation(const std::vector<Scenario>& generated,
                                   const std::vector<Scenario>& ground_truth,
                                   const ProfileEdges& edges = {});

// Fraction of agents with at least one collision or off-road flag.
double scene_failure_fraction(const Scenario& scenario, const MapModel& map);
// Mean over scenes of the per-scene failing-agent fraction.
double failure_rate(const std::vector<Scenario>& scenarios,
                    const std::vector<const MapModel*>& maps);

// Negative mean reward-model score; lower is better.
double reward_cost(const RewardModel& rm, const std::vector<Scenario>& scenarios,
                   const std::vector<const MapModel*>& maps);

struct EvalReport {
  double fail = 0.0;
  double real = 0.0;
  double reward_cost = 0.0;
  RealismDeviation distances;
};

Json report_to_json(const std::string& name, const EvalReport& report);

struct ReportRow {
  std::string name;
  EvalReport report;
};

// Aligned text table with columns Real, Fail, Reward Cost.
std::string format_report_table(const std::vector<ReportRow>& rows);

}  // namespace trlhf
