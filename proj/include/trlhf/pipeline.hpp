#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trlhf/finetune.hpp"
#include "trlhf/io.hpp"
#include "trlhf/metrics.hpp"
#include "trlhf/policy.hpp"
#include "trlhf/preference.hpp"
#include "trlhf/reward.hpp"
#include "trlhf/scenegen.hpp"

namespace trlhf {

struct RunConfig {
  std::uint64_t seed = 7;
  int train_scenes = 500;
  int eval_scenes = 100;
  int n_agents = 4;
  int samples = kDefaultBatchSize;
  double validation_fraction = 0.2;
  PolicyConfig policy;
  BcConfig bc;
  OracleThresholds oracle;
  RewardConfig reward;
  RmTrainConfig rm_train;
  std::vector<int> rm_sweep{50, 100, 200, 400};
  int rm_seeds = 5;
  int rm_selected_size = 200;
  FinetuneConfig finetune;

  // Small corpus and short fine-tuning for a single-core run.
  static RunConfig desk(std::uint64_t seed);

  Json to_json() const;
  static RunConfig from_json(const Json& record);
};

// File layout of one run directory.
struct Workspace {
  std::filesystem::path root;

  explicit Workspace(std::filesystem::path dir) : root(std::move(dir)) {}

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path scenes(const std::string& split) const {
    return root / "scenes" / (split + ".jsonl");
  }
  std::filesystem::path batches() const { return root / "batches.jsonl"; }
  std::filesystem::path labels() const { return root / "labels.jsonl"; }
  std::filesystem::path pairs() const { return root / "pairs.jsonl"; }
  std::filesystem::path bc_policy() const { return root / "policy_bc.json"; }
  std::filesystem::path bc_loss() const { return root / "bc_loss.json"; }
  std::filesystem::path rm_dir() const { return root / "rm"; }
  std::filesystem::path rm() const { return root / "rm.json"; }
  std::filesystem::path learning_curve() const { return root / "rm" / "learning_curve.json"; }
  std::filesystem::path finetune_dir(const std::string& name) const {
    return root / "finetune" / name;
  }
  std::filesystem::path tuned_policy(const std::string& name) const {
    return finetune_dir(name) / "policy.json";
  }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

// Scene records keep the spec, map and ground truth; the context is rebuilt
// from the ground-truth history.
Json scene_to_json(const SceneSpec& spec, const GeneratedScene& scene);
GeneratedScene scene_from_json(const Json& record);
std::vector<GeneratedScene> load_scenes(const std::filesystem::path& path);

std::vector<ScenarioBatch> load_batches(const std::filesystem::path& path);
TrafficPolicy load_policy(const std::filesystem::path& path);
RewardModel load_reward_model(const std::filesystem::path& path);

// Pipeline stages. Each reads its inputs from the workspace and writes its
// outputs atomically.
void stage_gen(const Workspace& ws, const RunConfig& config);
void stage_pretrain(const Workspace& ws, const RunConfig& config);
void stage_batch(const Workspace& ws, const RunConfig& config);
// Oracle labels for every batch; rewrites labels and pairs.
void stage_label_oracle(const Workspace& ws, const RunConfig& config);

struct RmStageResult {
  SweepResult sweep;
  int train_pairs = 0;
  int validation_pairs = 0;
  int selected_size = 0;
  std::uint64_t selected_seed = 0;
  double selected_accuracy = 0.0;
};

// Learning-curve sweep; the model at the selected size with the best
// held-out accuracy (lowest seed on ties) becomes rm.json. Sizes larger
// than the training split are a ConfigError.
RmStageResult stage_train_rm(const Workspace& ws, const RunConfig& config);

// Fine-tunes the BC policy under `name`; writes per-epoch checkpoints, the
// metric history and the final policy.
FinetuneResult stage_finetune(const Workspace& ws, const RunConfig& config,
                              const FinetuneConfig& finetune, const std::string& name);

EvalReport evaluate_checkpoint(const TrafficPolicy& policy, const RewardModel& rm,
                               const std::vector<GeneratedScene>& scenes,
                               const RunConfig& config);

// Table of (name, checkpoint) rows on the eval split, written to
// reports/<report_name>.{json,txt}.
std::vector<ReportRow> stage_eval(const Workspace& ws, const RunConfig& config,
                                  const std::vector<std::pair<std::string,
                                                              std::filesystem::path>>& models,
                                  const std::string& report_name);

struct ManifestEntry {
  std::string path;  // relative to the workspace root
  std::string sha256;
};

struct RunManifest {
  std::string run_id;
  std::uint64_t seed = 0;
  Json config;
  std::map<std::string, ManifestEntry> artifacts;

  Json to_json() const;
  static RunManifest from_json(const Json& record);
};

// Hashes every regular file under the workspace except the manifest.
RunManifest build_manifest(const Workspace& ws, const RunConfig& config);
// Throws DataError naming the first missing or altered artifact.
void verify_manifest(const Workspace& ws, const RunManifest& manifest);

// gen, pretrain, batch, oracle label, RM sweep, fine-tune in the three
// freeze modes, eval and manifest.
RunManifest run_repro(const Workspace& ws, const RunConfig& config);

}  // namespace trlhf
