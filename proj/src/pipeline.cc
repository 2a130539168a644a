#include "trlhf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "trlhf/error.hpp"

namespace trlhf {

namespace {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose) {
  return stable_hash64(std::to_string(seed) + "/" + purpose);
}

Json policy_config_to_json(const PolicyConfig& c) {
  return {{"features", c.features.to_json()},
          {"encoder_hidden", c.encoder_hidden},
          {"latent", c.latent},
          {"decoder_hidden", c.decoder_hidden},
          {"accel_max", c.limits.accel_max},
          {"yaw_rate_max", c.limits.yaw_rate_max},
          {"seed", c.seed}};
}

PolicyConfig policy_config_from_json(const Json& r) {
  PolicyConfig c;
  if (r.contains("features")) c.features = FeatureConfig::from_json(r.at("features"));
  c.encoder_hidden = r.value("encoder_hidden", c.encoder_hidden);
  c.latent = r.value("latent", c.latent);
  c.decoder_hidden = r.value("decoder_hidden", c.decoder_hidden);
  c.limits.accel_max = r.value("accel_max", c.limits.accel_max);
  c.limits.yaw_rate_max = r.value("yaw_rate_max", c.limits.yaw_rate_max);
  c.seed = r.value("seed", c.seed);
  return c;
}

std::string padded(int value, int width) {
  std::string text = std::to_string(value);
  return std::string(std::max(0, width - static_cast<int>(text.size())), '0') + text;
}

void require_file(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) {
    throw DataError(path.string() + " not found; run the '" + stage + "' stage first");
  }
}

}  // namespace

RunConfig RunConfig::desk(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.train_scenes = 100;
  c.eval_scenes = 48;
  c.rm_sweep = {50, 100, 200};
  c.finetune.epochs = 10;
  return c;
}

Json RunConfig::to_json() const {
  return {{"seed", seed},
          {"train_scenes", train_scenes},
          {"eval_scenes", eval_scenes},
          {"n_agents", n_agents},
          {"samples", samples},
          {"validation_fraction", validation_fraction},
          {"policy", policy_config_to_json(policy)},
          {"bc",
           {{"epochs", bc.epochs},
            {"batch_size", bc.batch_size},
            {"learning_rate", bc.learning_rate},
            {"seed", bc.seed}}},
          {"oracle",
           {{"collision_weight", oracle.collision_weight},
            {"offroad_weight", oracle.offroad_weight},
            {"jerk_weight", oracle.jerk_weight},
            {"none_threshold", oracle.none_threshold},
            {"jerk_threshold", oracle.jerk_threshold}}},
          {"reward", {{"hidden", reward.hidden}, {"seed", reward.seed}}},
          {"rm_train",
           {{"steps", rm_train.steps},
            {"batch_size", rm_train.batch_size},
            {"learning_rate", rm_train.learning_rate},
            {"weight_decay", rm_train.weight_decay}}},
          {"rm_sweep", rm_sweep},
          {"rm_seeds", rm_seeds},
          {"rm_selected_size", rm_selected_size},
          {"finetune", finetune.to_json()}};
}

RunConfig RunConfig::from_json(const Json& r) {
  RunConfig c;
  try {
    c.seed = r.value("seed", c.seed);
    c.train_scenes = r.value("train_scenes", c.train_scenes);
    c.eval_scenes = r.value("eval_scenes", c.eval_scenes);
    c.n_agents = r.value("n_agents", c.n_agents);
    c.samples = r.value("samples", c.samples);
    c.validation_fraction = r.value("validation_fraction", c.validation_fraction);
    if (r.contains("policy")) c.policy = policy_config_from_json(r.at("policy"));
    if (r.contains("bc")) {
      const Json& b = r.at("bc");
      c.bc.epochs = b.value("epochs", c.bc.epochs);
      c.bc.batch_size = b.value("batch_size", c.bc.batch_size);
      c.bc.learning_rate = b.value("learning_rate", c.bc.learning_rate);
      c.bc.seed = b.value("seed", c.bc.seed);
    }
    if (r.contains("oracle")) {
      const Json& o = r.at("oracle");
      c.oracle.collision_weight = o.value("collision_weight", c.oracle.collision_weight);
      c.oracle.offroad_weight = o.value("offroad_weight", c.oracle.offroad_weight);
      c.oracle.jerk_weight = o.value("jerk_weight", c.oracle.jerk_weight);
      c.oracle.none_threshold = o.value("none_threshold", c.oracle.none_threshold);
      c.oracle.jerk_threshold = o.value("jerk_threshold", c.oracle.jerk_threshold);
    }
    if (r.contains("reward")) {
      c.reward.hidden = r.at("reward").value("hidden", c.reward.hidden);
      c.reward.seed = r.at("reward").value("seed", c.reward.seed);
    }
    c.reward.features = c.policy.features;
    if (r.contains("rm_train")) {
      const Json& t = r.at("rm_train");
      c.rm_train.steps = t.value("steps", c.rm_train.steps);
      c.rm_train.batch_size = t.value("batch_size", c.rm_train.batch_size);
      c.rm_train.learning_rate = t.value("learning_rate", c.rm_train.learning_rate);
      c.rm_train.weight_decay = t.value("weight_decay", c.rm_train.weight_decay);
    }
    c.rm_sweep = r.value("rm_sweep", c.rm_sweep);
    c.rm_seeds = r.value("rm_seeds", c.rm_seeds);
    c.rm_selected_size = r.value("rm_selected_size", c.rm_selected_size);
    if (r.contains("finetune")) c.finetune = FinetuneConfig::from_json(r.at("finetune"));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (c.train_scenes < 1 || c.eval_scenes < 1 || c.n_agents < 1) {
    throw ConfigError("run config: scene and agent counts must be positive");
  }
  if (c.samples < 2) throw ConfigError("run config: samples must be at least 2");
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("run config: validation_fraction must be in (0, 1)");
  }
  if (c.rm_seeds < 1) throw ConfigError("run config: rm_seeds must be positive");
  return c;
}

Json scene_to_json(const SceneSpec& spec, const GeneratedScene& scene) {
  return {{"spec",
           {{"seed", spec.seed},
            {"n_agents", spec.n_agents},
            {"road_kind", to_string(spec.road_kind)},
            {"episode_len", spec.episode_len},
            {"scene_id", spec.scene_id}}},
          {"map", map_to_json(*scene.map)},
          {"ground_truth", scenario_to_json(scene.ground_truth)}};
}

GeneratedScene scene_from_json(const Json& record) {
  GeneratedScene scene;
  try {
    scene.map = std::make_shared<const MapModel>(map_from_json(record.at("map")));
    scene.ground_truth = scenario_from_json(record.at("ground_truth"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("scene record: ") + e.what());
  }
  if (scene.ground_truth.num_steps() <= kHistorySteps) {
    throw DataError("scene " + scene.ground_truth.scene_id + " is shorter than its history");
  }
  scene.context = context_at(scene.ground_truth, scene.map, kHistorySteps);
  return scene;
}

std::vector<GeneratedScene> load_scenes(const fs::path& path) {
  require_file(path, "gen");
  std::vector<GeneratedScene> scenes;
  for_each_jsonl(path, [&](const Json& record, int line) {
    try {
      scenes.push_back(scene_from_json(record));
    } catch (const DataError& e) {
      throw ParseError(path.string(), line, e.what());
    }
  });
  return scenes;
}

std::vector<ScenarioBatch> load_batches(const fs::path& path) {
  require_file(path, "batch");
  std::vector<ScenarioBatch> batches;
  for_each_jsonl(path, [&](const Json& record, int line) {
    try {
      batches.push_back(batch_from_json(record));
    } catch (const DataError& e) {
      throw ParseError(path.string(), line, e.what());
    }
  });
  return batches;
}

TrafficPolicy load_policy(const fs::path& path) {
  require_file(path, "pretrain");
  try {
    return TrafficPolicy::from_json(read_json_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

RewardModel load_reward_model(const fs::path& path) {
  require_file(path, "train-rm");
  try {
    return RewardModel::from_json(read_json_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void stage_gen(const Workspace& ws, const RunConfig& config) {
  fs::create_directories(ws.scenes("train").parent_path());
  const std::vector<std::pair<std::string, int>> splits{{"train", config.train_scenes},
                                                        {"eval", config.eval_scenes}};
  for (const auto& [split, count] : splits) {
    std::vector<Json> records;
    for (const SceneSpec& spec : corpus_specs(split, count, config.seed, config.n_agents)) {
      records.push_back(scene_to_json(spec, generate_scene(spec)));
    }
    write_jsonl(ws.scenes(split), records);
  }
}

void stage_pretrain(const Workspace& ws, const RunConfig& config) {
  const auto scenes = load_scenes(ws.scenes("train"));
  PolicyConfig pc = config.policy;
  pc.seed = derive_seed(config.seed, "policy");
  BcConfig bc = config.bc;
  bc.seed = derive_seed(config.seed, "bc");
  const BcResult result =
      pretrain_bc(TrafficPolicy(pc), make_demonstrations(scenes, pc.features), bc);
  write_json_file(ws.bc_policy(), result.policy.to_json());
  write_json_file(ws.bc_loss(), {{"loss_curve", result.loss_curve}});
}

void stage_batch(const Workspace& ws, const RunConfig& config) {
  const auto scenes = load_scenes(ws.scenes("train"));
  const TrafficPolicy policy = load_policy(ws.bc_policy());
  std::mt19937_64 rng(derive_seed(config.seed, "batch"));
  std::vector<Json> records;
  for (const auto& scene : scenes) {
    records.push_back(
        batch_to_json(make_batch(policy, scene, config.samples, rng, config.finetune.rollout)));
  }
  write_jsonl(ws.batches(), records);
}

void stage_label_oracle(const Workspace& ws, const RunConfig& config) {
  std::vector<Json> labels;
  std::vector<PreferencePair> pairs;
  for (const auto& batch : load_batches(ws.batches())) {
    const Label label = oracle_label(batch, config.oracle);
    labels.push_back(label_to_json(label));
    const auto p = pairs_from_label(batch, label);
    pairs.insert(pairs.end(), p.begin(), p.end());
  }
  write_jsonl(ws.labels(), labels);
  persist_pairs(ws.pairs(), pairs);
}

RmStageResult stage_train_rm(const Workspace& ws, const RunConfig& config) {
  require_file(ws.pairs(), "label");
  const auto batches = load_batches(ws.batches());
  std::map<std::string, const ScenarioBatch*> by_id;
  for (const auto& b : batches) by_id[b.batch_id] = &b;
  const PairSplit split = split_pairs(load_pairs(ws.pairs()), config.validation_fraction);
  RewardConfig rc = config.reward;
  rc.features = config.policy.features;
  const PreferenceDataset train = make_preference_dataset(split.train, by_id, rc.features);
  const PreferenceDataset validation =
      make_preference_dataset(split.validation, by_id, rc.features);
  if (validation.size() == 0) throw DataError("no validation pairs after the context split");

  RmStageResult out;
  out.train_pairs = static_cast<int>(train.size());
  out.validation_pairs = static_cast<int>(validation.size());
  std::vector<int> sizes = config.rm_sweep;
  if (sizes.empty()) sizes = {out.train_pairs};
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < config.rm_seeds; ++k) {
    seeds.push_back(derive_seed(config.seed, "rm/" + std::to_string(k)));
  }
  out.sweep = rm_learning_curve(rc, train, validation, sizes, seeds, config.rm_train);

  fs::create_directories(ws.rm_dir());
  Json points = Json::array();
  for (const auto& p : out.sweep.points) {
    points.push_back({{"size", p.size}, {"seed", p.seed}, {"accuracy", p.accuracy}});
  }
  Json summary = Json::array();
  for (int size : sizes) {
    double sum = 0.0;
    double sq = 0.0;
    int n = 0;
    for (const auto& p : out.sweep.points) {
      if (p.size != size) continue;
      sum += p.accuracy;
      sq += p.accuracy * p.accuracy;
      ++n;
    }
    const double mean = sum / n;
    summary.push_back({{"size", size}, {"mean", mean}, {"variance", std::max(0.0, sq / n - mean * mean)}});
  }
  for (const auto& [size, models] : out.sweep.models) {
    for (std::size_t k = 0; k < models.size(); ++k) {
      write_json_file(ws.rm_dir() / ("size-" + padded(size, 4) + "-seed-" + std::to_string(k) +
                                     ".json"),
                      models[k].to_json());
    }
  }

  out.selected_size = std::find(sizes.begin(), sizes.end(), config.rm_selected_size) != sizes.end()
                          ? config.rm_selected_size
                          : *std::max_element(sizes.begin(), sizes.end());
  int best = -1;
  int index = 0;
  for (const auto& p : out.sweep.points) {
    if (p.size != out.selected_size) continue;
    if (best < 0 || p.accuracy > out.selected_accuracy) {
      best = index;
      out.selected_accuracy = p.accuracy;
      out.selected_seed = p.seed;
    }
    ++index;
  }
  write_json_file(ws.rm(), out.sweep.models.at(out.selected_size).at(best).to_json());
  write_json_file(ws.learning_curve(),
                  {{"train_pairs", out.train_pairs},
                   {"validation_pairs", out.validation_pairs},
                   {"points", points},
                   {"summary", summary},
                   {"selected", {{"size", out.selected_size},
                                 {"seed", out.selected_seed},
                                 {"accuracy", out.selected_accuracy}}}});
  return out;
}

FinetuneResult stage_finetune(const Workspace& ws, const RunConfig& config,
                              const FinetuneConfig& finetune, const std::string& name) {
  const TrafficPolicy policy = load_policy(ws.bc_policy());
  const RewardModel rm = load_reward_model(ws.rm());
  const auto train = load_scenes(ws.scenes("train"));
  const auto probe = load_scenes(ws.scenes("eval"));
  FinetuneConfig fc = finetune;
  fc.seed = derive_seed(config.seed, "finetune/" + name);
  const fs::path dir = ws.finetune_dir(name);
  fs::create_directories(dir / "checkpoints");
  std::vector<Json> history;
  auto on_epoch = [&](const EpochRecord& record, const TrafficPolicy& current) {
    history.push_back(epoch_record_to_json(record));
    write_json_file(dir / "checkpoints" / ("epoch-" + padded(record.epoch, 3) + ".json"),
                    current.to_json());
    write_jsonl(dir / "history.jsonl", history);
  };
  FinetuneResult result = finetune_loop(policy, rm, train, probe, fc, on_epoch,
                                        derive_seed(config.seed, "probe"));
  write_json_file(dir / "config.json", fc.to_json());
  write_json_file(ws.tuned_policy(name), result.policy.to_json());
  return result;
}

EvalReport evaluate_checkpoint(const TrafficPolicy& policy, const RewardModel& rm,
                               const std::vector<GeneratedScene>& scenes,
                               const RunConfig& config) {
  return evaluate_policy(policy, rm, scenes, config.finetune.rollout,
                         derive_seed(config.seed, "eval"))
      .report;
}

std::vector<ReportRow> stage_eval(
    const Workspace& ws, const RunConfig& config,
    const std::vector<std::pair<std::string, fs::path>>& models,
    const std::string& report_name) {
  const RewardModel rm = load_reward_model(ws.rm());
  const auto scenes = load_scenes(ws.scenes("eval"));
  std::vector<ReportRow> rows;
  Json records = Json::array();
  for (const auto& [name, path] : models) {
    rows.push_back({name, evaluate_checkpoint(load_policy(path), rm, scenes, config)});
    records.push_back(report_to_json(name, rows.back().report));
  }
  fs::create_directories(ws.reports());
  write_json_file(ws.reports() / (report_name + ".json"), {{"rows", records}});
  write_text_file(ws.reports() / (report_name + ".txt"), format_report_table(rows));
  return rows;
}

Json RunManifest::to_json() const {
  Json entries = Json::object();
  for (const auto& [name, e] : artifacts) {
    entries[name] = {{"path", e.path}, {"sha256", e.sha256}};
  }
  return {{"run_id", run_id}, {"seed", seed}, {"config", config}, {"artifacts", entries}};
}

RunManifest RunManifest::from_json(const Json& record) {
  RunManifest m;
  try {
    m.run_id = record.at("run_id").get<std::string>();
    m.seed = record.at("seed").get<std::uint64_t>();
    m.config = record.at("config");
    for (const auto& [name, e] : record.at("artifacts").items()) {
      m.artifacts[name] = {e.at("path").get<std::string>(), e.at("sha256").get<std::string>()};
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  return m;
}

RunManifest build_manifest(const Workspace& ws, const RunConfig& config) {
  RunManifest m;
  m.run_id = "run-" + std::to_string(config.seed);
  m.seed = config.seed;
  m.config = config.to_json();
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(ws.root)) {
    if (entry.is_regular_file() && entry.path() != ws.manifest()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const std::string rel = fs::relative(path, ws.root).generic_string();
    m.artifacts[rel] = {rel, file_sha256(path)};
  }
  return m;
}

void verify_manifest(const Workspace& ws, const RunManifest& manifest) {
  for (const auto& [name, e] : manifest.artifacts) {
    const fs::path path = ws.root / e.path;
    if (!fs::exists(path)) throw DataError("manifest artifact " + e.path + " is missing");
    if (file_sha256(path) != e.sha256) {
      throw DataError("manifest artifact " + e.path + " does not match its hash");
    }
  }
}

RunManifest run_repro(const Workspace& ws, const RunConfig& config) {
  fs::create_directories(ws.root);
  write_json_file(ws.config(), config.to_json());
  stage_gen(ws, config);
  stage_pretrain(ws, config);
  stage_batch(ws, config);
  stage_label_oracle(ws, config);
  stage_train_rm(ws, config);

  std::vector<std::pair<std::string, fs::path>> ablation;
  const std::vector<std::pair<FreezeMode, std::string>> modes{
      {FreezeMode::kEncoder, "freeze encoder"},
      {FreezeMode::kDecoder, "freeze decoder"},
      {FreezeMode::kNone, "full"}};
  for (const auto& [mode, label] : modes) {
    FinetuneConfig fc = config.finetune;
    fc.freeze = mode;
    stage_finetune(ws, config, fc, to_string(mode));
    ablation.emplace_back(label, ws.tuned_policy(to_string(mode)));
  }
  stage_eval(ws, config,
             {{"BC baseline", ws.bc_policy()}, {"RM fine-tuned", ws.tuned_policy("none")}},
             "main");
  stage_eval(ws, config, ablation, "ablation");

  const RunManifest manifest = build_manifest(ws, config);
  write_json_file(ws.manifest(), manifest.to_json());
  return manifest;
}

}  // namespace trlhf
