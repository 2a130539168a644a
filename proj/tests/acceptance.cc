// Acceptance suite: one PASS/FAIL line per criterion.
//
//   trlhf_acceptance [--work DIR] [--reuse-run] [criterion ...]
//
// With no criterion names every check runs. The end-to-end checks share one
// desk-scale repro run under DIR/run_a; --prepare-run (re)creates it and
// --reuse-run lets later invocations read it instead of rebuilding it.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "transport_oracle.hpp"
#include "trlhf/error.hpp"
#include "trlhf/pipeline.hpp"

using namespace trlhf;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kRunSeed = 7;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << x;
  return s.str();
}

// ---------------------------------------------------------------- pair loss

Outcome check_pair_loss_values() {
  const double equal = pair_loss(0.37, 0.37);
  const double saturated = pair_loss(20.0, 0.0);
  const double closed = pair_loss(1.0, 0.0);
  const double e1 = std::abs(equal - std::log(2.0));
  const double e3 = std::abs(closed - std::log1p(std::exp(-1.0)));
  const bool pass = e1 <= 1e-12 && saturated < 1e-8 && e3 <= 1e-12;
  return {pass, "|l(r,r)-ln2| " + fmt(e1) + ", l(20,0) " + fmt(saturated) +
                    ", |l(1,0)-ln(1+e^-1)| " + fmt(e3)};
}

// ------------------------------------------------------------ gradients

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

Eigen::MatrixXd gaussian_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  return m;
}

Outcome check_gradients() {
  constexpr int kCoords = 120;
  constexpr double h = 1e-5;
  std::mt19937_64 rng(2024);

  const FeatureConfig fc;
  PreferenceDataset data;
  for (int k = 0; k < 12; ++k) data.features.push_back(gaussian_matrix(fc.size(), 30, rng, 0.5));
  for (int k = 0; k < 6; ++k) data.pairs.push_back({2 * k, 2 * k + 1});
  RewardConfig rc;
  rc.seed = 5;
  RewardModel rm(rc);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const RmGradient rg = rm_loss_and_gradient(rm, data, all);
  double rm_worst = 0.0;
  std::uniform_int_distribution<Eigen::Index> pick_rm(0, rm.trunk().num_params() - 1);
  for (int c = 0; c < kCoords; ++c) {
    const Eigen::Index k = pick_rm(rng);
    const double saved = rm.trunk().params()[k];
    rm.trunk().params()[k] = saved + h;
    const double up = rm_loss_and_gradient(rm, data, all).loss;
    rm.trunk().params()[k] = saved - h;
    const double down = rm_loss_and_gradient(rm, data, all).loss;
    rm.trunk().params()[k] = saved;
    rm_worst = std::max(rm_worst, relative_error(rg.grad[k], (up - down) / (2 * h)));
  }

  TrafficPolicy policy{PolicyConfig{}};
  const Eigen::MatrixXd features = gaussian_matrix(fc.size(), 40, rng);
  const Eigen::MatrixXd actions = gaussian_matrix(2, 40, rng, 0.5);
  const BcGradient bg = bc_loss_and_gradient(policy, features, actions);
  double bc_worst = 0.0;
  int bc_coords = 0;
  for (int block = 0; block < 2; ++block) {
    Mlp<>& net = block == 0 ? policy.encoder() : policy.decoder();
    const Eigen::VectorXd& grad = block == 0 ? bg.encoder : bg.decoder;
    std::uniform_int_distribution<Eigen::Index> pick(0, net.num_params() - 1);
    for (int c = 0; c < kCoords / 2; ++c, ++bc_coords) {
      const Eigen::Index k = pick(rng);
      const double saved = net.params()[k];
      net.params()[k] = saved + h;
      const double up = bc_loss_and_gradient(policy, features, actions).loss;
      net.params()[k] = saved - h;
      const double down = bc_loss_and_gradient(policy, features, actions).loss;
      net.params()[k] = saved;
      bc_worst = std::max(bc_worst, relative_error(grad[k], (up - down) / (2 * h)));
    }
  }
  const bool pass = rm_worst < 1e-4 && bc_worst < 1e-4;
  return {pass, "RM " + std::to_string(kCoords) + " coords max rel err " + fmt(rm_worst) +
                    ", BC " + std::to_string(bc_coords) + " coords max rel err " +
                    fmt(bc_worst)};
}

// ------------------------------------------------------------ pair count

Outcome check_pair_count() {
  std::mt19937_64 rng(99);
  int violations = 0;
  int chosen = 0;
  for (int k = 0; k < 1000; ++k) {
    const int n = 2 + static_cast<int>(rng() % 9);
    ScenarioBatch b;
    b.batch_id = "batch-" + std::to_string(k);
    b.context_id = "ctx-" + std::to_string(k);
    for (int j = 0; j < n; ++j) {
      Scenario s;
      s.sample_id = "s" + std::to_string(j);
      b.scenarios.push_back(s);
    }
    Label label{b.batch_id, std::nullopt, Labeler::kOracle, "t"};
    if (rng() % 2) {
      label.choice = static_cast<int>(rng() % n);
      ++chosen;
    }
    const auto pairs = pairs_from_label(b, label);
    const std::string winner =
        label.choice ? b.scenarios[*label.choice].sample_id : std::string(kGroundTruthId);
    std::set<std::string> losers;
    bool ok = static_cast<int>(pairs.size()) == (label.choice ? n - 1 : n);
    for (const auto& p : pairs) {
      ok = ok && p.winner == winner && p.loser != winner && p.context_id == b.context_id;
      losers.insert(p.loser);
    }
    ok = ok && losers.size() == pairs.size();
    if (!ok) ++violations;
  }
  return {violations == 0, "1000 cases (" + std::to_string(chosen) + " chosen, " +
                               std::to_string(1000 - chosen) + " none), " +
                               std::to_string(violations) + " violations"};
}

// ------------------------------------------------------------ wasserstein

Outcome check_wasserstein() {
  constexpr int kUnits = 8;
  double worst = 0.0;
  long compared = 0;
  for (int bins = 1; bins <= 5; ++bins) {
    Eigen::VectorXd edges(bins + 1);
    for (int k = 0; k <= bins; ++k) edges[k] = k;
    const std::vector<double> left(edges.data(), edges.data() + bins);
    const auto grid = testing::compositions(kUnits, bins);
    for (const auto& a : grid) {
      Histogram ha{edges, Eigen::VectorXd(bins)};
      for (int k = 0; k < bins; ++k) ha.masses[k] = double(a[k]) / kUnits;
      for (const auto& b : grid) {
        Histogram hb{edges, Eigen::VectorXd(bins)};
        for (int k = 0; k < bins; ++k) hb.masses[k] = double(b[k]) / kUnits;
        worst = std::max(worst, std::abs(wasserstein1(ha, hb) -
                                         testing::min_transport_cost(a, b, left, kUnits)));
        ++compared;
      }
    }
  }

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::VectorXd edges = uniform_edges_with_overflow(0.0, 8.0, 40);
  auto random_hist = [&] {
    Histogram h{edges, Eigen::VectorXd(edges.size() - 1)};
    for (int k = 0; k < h.bins(); ++k) h.masses[k] = u(rng) < 0.5 ? 0.0 : u(rng);
    h.masses[static_cast<int>(rng() % h.bins())] += 0.1;
    return h.normalized();
  };
  int axiom_violations = 0;
  for (int k = 0; k < 1000; ++k) {
    const Histogram a = random_hist(), b = random_hist(), c = random_hist();
    const double ab = wasserstein1(a, b);
    const bool ok = ab > 0.0 && ab == wasserstein1(b, a) && wasserstein1(a, a) == 0.0 &&
                    wasserstein1(a, c) <= ab + wasserstein1(b, c) + 1e-12;
    if (!ok) ++axiom_violations;
  }
  const bool pass = worst <= 1e-9 && axiom_violations == 0;
  return {pass, std::to_string(compared) + " histogram pairs, max |W1 - transport| " +
                    fmt(worst) + "; axioms on 1000 triples, " +
                    std::to_string(axiom_violations) + " violations"};
}

// ------------------------------------------------------------ dynamics

AgentState integrate_fine(AgentState s, const Action& a, double dt, int substeps) {
  const double h = dt / substeps;
  for (int k = 0; k < substeps; ++k) {
    const double x = s.x + s.v * std::cos(s.theta) * h;
    const double y = s.y + s.v * std::sin(s.theta) * h;
    s.v = std::max(0.0, s.v + a.accel * h);
    s.theta += a.yaw_rate * h;
    s.x = x;
    s.y = y;
  }
  s.theta = normalize_angle(s.theta);
  return s;
}

Outcome check_dynamics() {
  const ActionLimits limits;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> accel(-limits.accel_max, limits.accel_max);
  std::uniform_real_distribution<double> yaw(-limits.yaw_rate_max, limits.yaw_rate_max);
  std::uniform_real_distribution<double> speed(0.0, 15.0);
  std::uniform_real_distribution<double> heading(-kPi, kPi);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    AgentState coarse{0.0, 0.0, speed(rng), heading(rng)};
    AgentState fine = coarse;
    for (int t = 0; t < 10; ++t) {
      const Action a{accel(rng), yaw(rng)};
      coarse = step_unicycle(coarse, a, kDefaultDt);
      fine = integrate_fine(fine, a, kDefaultDt, 1000);
    }
    worst = std::max(worst, (coarse.position() - fine.position()).norm());
  }

  // Closed-loop logs replay exactly under the step equation.
  TrafficPolicy policy{PolicyConfig{}};
  int mismatches = 0;
  int checked = 0;
  for (const auto& spec : corpus_specs("accept-dyn", 6, 5)) {
    const GeneratedScene scene = generate_scene(spec);
    std::mt19937_64 stream(spec.seed);
    RolloutTrace trace;
    const Scenario s =
        rollout_closed_loop(policy, scene.context, RolloutConfig{}, stream, "r", &trace);
    for (int i = 0; i < s.num_agents(); ++i) {
      for (int step = 0; step < static_cast<int>(trace.samples.size()); ++step) {
        const int t = trace.history_length - 1 + step;
        const Eigen::Vector2d raw = trace.samples[step].col(i);
        const Action a = policy.limits().clip({raw[0], raw[1]});
        if (!(step_unicycle(s.agents[i].states[t], a, s.dt) == s.agents[i].states[t + 1])) {
          ++mismatches;
        }
        ++checked;
      }
    }
  }
  const bool pass = worst <= 1e-3 && mismatches == 0;
  return {pass, "max |Euler - 1000x sub-stepped| over 1 s = " + fmt(worst) +
                    " m (bound 1e-3); log replay " + std::to_string(mismatches) + "/" +
                    std::to_string(checked) + " mismatched steps"};
}

// ------------------------------------------------------------ rollout

Outcome check_rollout() {
  const RolloutConfig config;
  const GeneratedScene scene = generate_scene(corpus_specs("accept-rollout", 1, 9)[0]);
  TrafficPolicy policy{PolicyConfig{}};
  std::mt19937_64 rng(1);
  RolloutTrace trace;
  const Scenario s = rollout_closed_loop(policy, scene.context, config, rng, "r", &trace);
  const int executed = s.num_steps() - scene.context.history_length();
  const int per_cycle = trace.steps_per_segment;
  const int cycles = per_cycle > 0 ? executed / per_cycle : 0;
  bool ok = executed == 100 && per_cycle == 5 && cycles == 20 && executed % per_cycle == 0 &&
            trace.plan_cycles == 20 && static_cast<int>(trace.features.size()) == executed &&
            config.total_steps() == 100 && config.plan_cycles() == 20;
  for (int i = 0; ok && i < s.num_agents(); ++i) {
    ok = static_cast<int>(s.agents[i].states.size()) == s.num_steps();
  }
  return {ok, "emitted " + std::to_string(executed) + " steps after the history, " +
                  std::to_string(per_cycle) + " steps per re-plan, " + std::to_string(cycles) +
                  " plan cycles"};
}

// ------------------------------------------------------------ RM curve

Outcome check_rm_curve() {
  const RunConfig config = RunConfig::desk(kRunSeed);
  std::vector<GeneratedScene> train;
  std::vector<GeneratedScene> held;
  for (const auto& spec : corpus_specs("accept-rm-train", 64, 31)) {
    train.push_back(generate_scene(spec));
  }
  for (const auto& spec : corpus_specs("accept-rm-held", 64, 32)) {
    held.push_back(generate_scene(spec));
  }
  PolicyConfig pc = config.policy;
  const TrafficPolicy policy =
      pretrain_bc(TrafficPolicy(pc), make_demonstrations(train, pc.features), config.bc).policy;

  std::mt19937_64 rng(33);
  std::vector<ScenarioBatch> batches;
  batches.reserve(train.size() + held.size());
  std::vector<PreferencePair> train_pairs;
  std::vector<PreferencePair> held_pairs;
  for (int split = 0; split < 2; ++split) {
    for (const auto& scene : split == 0 ? train : held) {
      batches.push_back(make_batch(policy, scene, config.samples, rng, config.finetune.rollout));
      const auto p = pairs_from_label(batches.back(), oracle_label(batches.back(), config.oracle));
      auto& dst = split == 0 ? train_pairs : held_pairs;
      dst.insert(dst.end(), p.begin(), p.end());
    }
  }
  std::map<std::string, const ScenarioBatch*> by_id;
  for (const auto& b : batches) by_id[b.batch_id] = &b;
  RewardConfig rc = config.reward;
  rc.features = config.policy.features;
  const PreferenceDataset train_set = make_preference_dataset(train_pairs, by_id, rc.features);
  const PreferenceDataset held_set = make_preference_dataset(held_pairs, by_id, rc.features);

  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const SweepResult sweep =
      rm_learning_curve(rc, train_set, held_set, {50, 200}, seeds, config.rm_train);
  std::map<int, double> mean;
  for (const auto& p : sweep.points) mean[p.size] += p.accuracy / seeds.size();
  const bool pass = mean[200] >= 0.80 && mean[200] >= mean[50];
  return {pass, std::to_string(train_set.size()) + " train / " +
                    std::to_string(held_set.size()) + " held-out pairs, mean accuracy at 50 = " +
                    fmt(mean[50]) + ", at 200 = " + fmt(mean[200]) + " (need >= 0.80)"};
}

// ------------------------------------------------------------ end to end

RunConfig end_to_end_config() { return RunConfig::desk(kRunSeed); }

const EvalReport* find_row(const Json& report, const std::string& name, EvalReport& out) {
  for (const auto& row : report.at("rows")) {
    if (row.at("model") == name) {
      out.fail = row.at("fail").get<double>();
      out.real = row.at("real").get<double>();
      out.reward_cost = row.at("reward_cost").get<double>();
      return &out;
    }
  }
  return nullptr;
}

Outcome check_finetune_effect(const Workspace& ws) {
  const Json report = read_json_file(ws.reports() / "main.json");
  EvalReport base, tuned;
  if (!find_row(report, "BC baseline", base) || !find_row(report, "RM fine-tuned", tuned)) {
    return {false, "main report lacks the baseline or fine-tuned row"};
  }
  const double reduction = base.fail > 0.0 ? 1.0 - tuned.fail / base.fail : 0.0;
  const double real_change = tuned.real / base.real - 1.0;
  const bool pass =
      reduction >= 0.30 && tuned.reward_cost < base.reward_cost && real_change <= 0.10;
  return {pass, "fail " + fmt(base.fail) + " -> " + fmt(tuned.fail) + " (" +
                    fmt(100 * reduction, 3) + "% reduction, need >= 30%), reward cost " +
                    fmt(base.reward_cost) + " -> " + fmt(tuned.reward_cost) + ", real " +
                    fmt(base.real) + " -> " + fmt(tuned.real) + " (" +
                    fmt(100 * real_change, 3) + "%, need <= +10%)"};
}

Outcome check_ablation(const Workspace& ws) {
  const Json report = read_json_file(ws.reports() / "ablation.json");
  const std::string table = read_text_file(ws.reports() / "ablation.txt");
  EvalReport row;
  bool rows = report.at("rows").size() == 3;
  for (const char* name : {"freeze encoder", "freeze decoder", "full"}) {
    rows = rows && find_row(report, name, row) && table.find(name) != std::string::npos;
  }
  const TrafficPolicy bc = load_policy(ws.bc_policy());
  const TrafficPolicy enc = load_policy(ws.tuned_policy("encoder"));
  const TrafficPolicy dec = load_policy(ws.tuned_policy("decoder"));
  const TrafficPolicy full = load_policy(ws.tuned_policy("none"));
  const bool enc_frozen = enc.encoder().params() == bc.encoder().params();
  const bool dec_frozen = dec.decoder().params() == bc.decoder().params();
  const bool trained = enc.decoder().params() != bc.decoder().params() &&
                       dec.encoder().params() != bc.encoder().params() &&
                       full.encoder().params() != bc.encoder().params() &&
                       full.decoder().params() != bc.decoder().params();
  const bool pass = rows && enc_frozen && dec_frozen && trained;
  return {pass, std::string("three-row table ") + (rows ? "ok" : "missing") +
                    ", frozen encoder bit-exact " + (enc_frozen ? "yes" : "no") +
                    ", frozen decoder bit-exact " + (dec_frozen ? "yes" : "no") +
                    ", unfrozen blocks updated " + (trained ? "yes" : "no")};
}

Outcome check_determinism(const Workspace& a, const fs::path& dir_b) {
  fs::remove_all(dir_b);
  const Workspace b(dir_b);
  run_repro(b, end_to_end_config());
  const RunManifest ma = RunManifest::from_json(read_json_file(a.manifest()));
  const RunManifest mb = RunManifest::from_json(read_json_file(b.manifest()));
  int differing = 0;
  int reports = 0;
  int checkpoints = 0;
  for (const auto& [name, entry] : ma.artifacts) {
    const auto it = mb.artifacts.find(name);
    if (it == mb.artifacts.end() || it->second.sha256 != entry.sha256) ++differing;
    if (name.rfind("reports/", 0) == 0) ++reports;
    if (name.find("policy") != std::string::npos || name == "rm.json") ++checkpoints;
  }
  if (mb.artifacts.size() != ma.artifacts.size()) ++differing;
  const bool pass = differing == 0 && reports > 0 && checkpoints > 0;
  return {pass, std::to_string(ma.artifacts.size()) + " artifacts (" + std::to_string(reports) +
                    " reports, " + std::to_string(checkpoints) + " checkpoints), " +
                    std::to_string(differing) + " differ between two runs of seed " +
                    std::to_string(kRunSeed)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work = (fs::temp_directory_path() / "trlhf_acceptance").string();
  bool reuse = false;
  bool prepare = false;
  std::vector<std::string> only;
  app.add_option("--work", work, "Scratch directory for end-to-end runs");
  app.add_flag("--reuse-run", reuse, "Read an existing end-to-end run instead of rebuilding it");
  app.add_flag("--prepare-run", prepare, "Only build the shared end-to-end run");
  app.add_option("criteria", only, "Criteria to run (default: all)");
  CLI11_PARSE(app, argc, argv);

  const Workspace run_a(fs::path(work) / "run_a");
  auto ensure_run = [&] {
    static bool ready = false;
    if (ready) return;
    if (!reuse || !fs::exists(run_a.manifest())) {
      fs::remove_all(run_a.root);
      run_repro(run_a, end_to_end_config());
    }
    verify_manifest(run_a, RunManifest::from_json(read_json_file(run_a.manifest())));
    ready = true;
  };

  if (prepare) {
    reuse = false;
    ensure_run();
    std::cout << "prepared " << run_a.root.string() << "\n";
    return 0;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"pair_loss_values", check_pair_loss_values},
      {"gradient_integrity", check_gradients},
      {"pair_count_law", check_pair_count},
      {"wasserstein_oracle", check_wasserstein},
      {"dynamics_oracle", check_dynamics},
      {"rollout_arithmetic", check_rollout},
      {"rm_learning_curve", check_rm_curve},
      {"finetune_effect", [&] { ensure_run(); return check_finetune_effect(run_a); }},
      {"ablation_harness", [&] { ensure_run(); return check_ablation(run_a); }},
      {"determinism",
       [&] {
         ensure_run();
         return check_determinism(run_a, fs::path(work) / "run_b");
       }},
  };
  for (const auto& name : only) {
    const bool known = std::any_of(criteria.begin(), criteria.end(),
                                   [&](const auto& c) { return c.first == name; });
    if (!known) {
      std::cerr << "unknown criterion '" << name << "'\n";
      return 2;
    }
  }

  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (outcome.pass ? "PASS " : "FAIL ") << name << ": " << outcome.detail << " ["
              << fmt(seconds, 3) << " s]" << std::endl;
    if (!outcome.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
