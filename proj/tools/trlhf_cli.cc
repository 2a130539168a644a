#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "trlhf/error.hpp"
#include "trlhf/pipeline.hpp"
#include "trlhf/service.hpp"

namespace fs = std::filesystem;
using namespace trlhf;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> sizes;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int value = std::stoi(item, &used);
      if (used != item.size() || value < 1) throw std::invalid_argument(item);
      sizes.push_back(value);
    } catch (const std::exception&) {
      throw ConfigError("--sweep: '" + item + "' is not a positive integer");
    }
  }
  return sizes;
}

RunConfig load_config(const Workspace& ws) {
  if (!fs::exists(ws.config())) return RunConfig{};
  return RunConfig::from_json(read_json_file(ws.config()));
}

void save_config(const Workspace& ws, const RunConfig& config) {
  fs::create_directories(ws.root);
  write_json_file(ws.config(), config.to_json());
}

std::string default_dir() {
  const char* env = std::getenv("TRLHF_DATA_DIR");
  return env ? env : "run";
}

int default_port() {
  const char* env = std::getenv("TRLHF_PORT");
  if (!env) return 8080;
  try {
    return std::stoi(env);
  } catch (const std::exception&) {
    throw ConfigError(std::string("TRLHF_PORT: '") + env + "' is not a port number");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-tuned traffic scenario generation pipeline"};
  app.require_subcommand(1);
  std::string dir = default_dir();
  app.add_option("--dir", dir, "Run directory (env TRLHF_DATA_DIR)");

  std::optional<std::uint64_t> gen_seed;
  int scenes = 500;
  int eval_scenes = 100;
  int agents = 4;
  auto* gen = app.add_subcommand("gen", "Generate train and eval scene corpora");
  gen->add_option("--scenes", scenes, "Training scenes")->check(CLI::PositiveNumber);
  gen->add_option("--eval-scenes", eval_scenes, "Held-out scenes")->check(CLI::PositiveNumber);
  gen->add_option("--agents", agents, "Agents per scene")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Corpus seed");

  std::optional<int> bc_epochs;
  auto* pretrain = app.add_subcommand("pretrain", "Behavior-clone the base policy");
  pretrain->add_option("--epochs", bc_epochs, "BC epochs")->check(CLI::PositiveNumber);

  int samples = kDefaultBatchSize;
  auto* batch = app.add_subcommand("batch", "Roll out best-of-N batches per training scene");
  batch->add_option("--samples", samples, "Scenarios per batch")->check(CLI::Range(2, 1000));

  std::string mode = "oracle";
  std::string host = "127.0.0.1";
  int port = 0;
  std::string ui_dir;
  double lease_minutes = 10.0;
  auto* label = app.add_subcommand("label", "Label batches with the oracle or serve them");
  label->add_option("--mode", mode, "oracle|serve")->check(CLI::IsMember({"oracle", "serve"}));
  label->add_option("--host", host, "Bind address for serve mode");
  label->add_option("--port", port, "Port for serve mode (env TRLHF_PORT, default 8080)");
  label->add_option("--ui", ui_dir, "Static annotation UI directory");
  label->add_option("--lease-minutes", lease_minutes, "Batch lease timeout for serve mode")
      ->check(CLI::PositiveNumber);

  std::string sweep = "50,100,200,400";
  int rm_seeds = 5;
  int select = 200;
  auto* train_rm_cmd = app.add_subcommand("train-rm", "Reward-model learning-curve sweep");
  train_rm_cmd->add_option("--sweep", sweep, "Comma-separated training sizes");
  train_rm_cmd->add_option("--seeds", rm_seeds, "Seeds per size")->check(CLI::PositiveNumber);
  train_rm_cmd->add_option("--select", select, "Training size of the exported model");

  std::optional<double> alpha;
  std::optional<int> ft_epochs;
  std::string freeze = "none";
  std::optional<double> bc_weight;
  std::string name;
  auto* finetune = app.add_subcommand("finetune", "PPO fine-tuning against the reward model");
  finetune->add_option("--alpha", alpha, "Reward-model weight")->check(CLI::NonNegativeNumber);
  finetune->add_option("--epochs", ft_epochs, "Fine-tuning epochs")->check(CLI::NonNegativeNumber);
  finetune->add_option("--freeze", freeze, "none|encoder|decoder")
      ->check(CLI::IsMember({"none", "encoder", "decoder"}));
  finetune->add_option("--bc-weight", bc_weight, "Weight of the BC task term")
      ->check(CLI::NonNegativeNumber);
  finetune->add_option("--name", name, "Output name (default: freeze mode)");

  std::string baseline;
  std::string tuned;
  std::string report = "eval";
  auto* eval = app.add_subcommand("eval", "Compare two policy checkpoints on the eval split");
  eval->add_option("--baseline", baseline, "Baseline policy checkpoint")->required();
  eval->add_option("--tuned", tuned, "Fine-tuned policy checkpoint")->required();
  eval->add_option("--report", report, "Report name under reports/");

  std::uint64_t repro_seed = 7;
  std::string preset = "desk";
  auto* repro = app.add_subcommand("repro", "Run the whole pipeline from one seed");
  repro->add_option("--seed", repro_seed, "Run seed");
  repro->add_option("--preset", preset, "desk|paper")->check(CLI::IsMember({"desk", "paper"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const Workspace ws{fs::path(dir)};
    if (*gen) {
      RunConfig config = load_config(ws);
      if (gen_seed) config.seed = *gen_seed;
      config.train_scenes = scenes;
      config.eval_scenes = eval_scenes;
      config.n_agents = agents;
      save_config(ws, config);
      stage_gen(ws, config);
      std::cout << "wrote " << scenes << " train and " << eval_scenes << " eval scenes to "
                << ws.root.string() << "\n";
    } else if (*pretrain) {
      RunConfig config = load_config(ws);
      if (bc_epochs) config.bc.epochs = *bc_epochs;
      save_config(ws, config);
      stage_pretrain(ws, config);
      std::cout << "wrote " << ws.bc_policy().string() << "\n";
    } else if (*batch) {
      RunConfig config = load_config(ws);
      config.samples = samples;
      save_config(ws, config);
      stage_batch(ws, config);
      std::cout << "wrote " << ws.batches().string() << "\n";
    } else if (*label) {
      const RunConfig config = load_config(ws);
      if (mode == "oracle") {
        stage_label_oracle(ws, config);
        std::cout << "wrote " << ws.labels().string() << " and " << ws.pairs().string() << "\n";
      } else {
        const auto lease = std::chrono::duration_cast<LabelStore::Clock::duration>(
            std::chrono::duration<double, std::ratio<60>>(lease_minutes));
        LabelStore store(load_batches(ws.batches()), ws.labels(), ws.pairs(),
                         [] { return LabelStore::Clock::now(); }, lease);
        const int listen_port = port > 0 ? port : default_port();
        std::optional<fs::path> ui;
        if (!ui_dir.empty()) ui = fs::path(ui_dir);
        std::cout << "serving labels on http://" << host << ":" << listen_port << "\n"
                  << std::flush;
        run_label_service(store, host, listen_port, ui);
      }
    } else if (*train_rm_cmd) {
      RunConfig config = load_config(ws);
      config.rm_sweep = parse_sizes(sweep);
      config.rm_seeds = rm_seeds;
      config.rm_selected_size = select;
      save_config(ws, config);
      const RmStageResult r = stage_train_rm(ws, config);
      std::cout << "train pairs " << r.train_pairs << ", validation pairs "
                << r.validation_pairs << "\n";
      for (const auto& p : r.sweep.points) {
        std::cout << "size " << p.size << " seed " << p.seed << " accuracy " << p.accuracy
                  << "\n";
      }
      std::cout << "selected size " << r.selected_size << " accuracy " << r.selected_accuracy
                << " -> " << ws.rm().string() << "\n";
    } else if (*finetune) {
      RunConfig config = load_config(ws);
      FinetuneConfig fc = config.finetune;
      if (alpha) fc.alpha = *alpha;
      if (ft_epochs) fc.epochs = *ft_epochs;
      if (bc_weight) fc.bc_weight = *bc_weight;
      fc.freeze = freeze_mode_from_string(freeze);
      fc.validate();
      const std::string run_name = name.empty() ? freeze : name;
      const FinetuneResult r = stage_finetune(ws, config, fc, run_name);
      for (const auto& h : r.history) {
        std::cout << "epoch " << h.epoch << " fail " << h.fail << " real " << h.real
                  << " reward_cost " << h.reward_cost << "\n";
      }
      std::cout << "wrote " << ws.tuned_policy(run_name).string() << "\n";
    } else if (*eval) {
      const RunConfig config = load_config(ws);
      const auto rows =
          stage_eval(ws, config, {{"baseline", baseline}, {"tuned", tuned}}, report);
      std::cout << format_report_table(rows);
    } else if (*repro) {
      RunConfig config = preset == "desk" ? RunConfig::desk(repro_seed) : RunConfig{};
      config.seed = repro_seed;
      const RunManifest manifest = run_repro(ws, config);
      std::cout << read_text_file(ws.reports() / "main.txt") << "\n"
                << read_text_file(ws.reports() / "ablation.txt") << "manifest "
                << ws.manifest().string() << " (" << manifest.artifacts.size()
                << " artifacts)\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
