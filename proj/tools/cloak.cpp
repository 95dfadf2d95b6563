// Command-line front end: craft poisons, train and score victims, purify
// images, run the ablation grid, and aggregate reports.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure,
// 4 I/O error.

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <vector>

#include "cloak/cloak.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  long long seed = -1;
  std::vector<std::string> overrides;
  std::string synth_kind;
  std::string dataset_dir;
};

cloak::LabConfig resolve_config(const CommonOpts& opts) {
  cloak::LabConfig cfg;
  if (!opts.config_path.empty()) cfg = cloak::parse_config_file(opts.config_path);
  if (!opts.synth_kind.empty()) {
    cfg.dataset_kind = opts.synth_kind;
    cfg.dataset_dir.clear();
  }
  if (!opts.dataset_dir.empty()) cfg.dataset_dir = opts.dataset_dir;
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  for (const std::string& kvp : opts.overrides) {
    const auto eq = kvp.find('=');
    if (eq == std::string::npos)
      throw cloak::ConfigError("--set expects key=value, got " + kvp);
    cloak::apply_config_value(cfg, kvp.substr(0, eq), kvp.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_dataset = true) {
  cmd->add_option("--config", opts.config_path, "configuration file (key = value lines)");
  cmd->add_option("--seed", opts.seed, "master seed (overrides the config)");
  cmd->add_option("--out-dir", opts.out_dir, "output directory");
  cmd->add_option("--set", opts.overrides, "override a single config key, e.g. craft.outer_loops=50");
  if (with_dataset) {
    cmd->add_option("--synth", opts.synth_kind, "synthetic dataset kind: blobs|stripes|glyphs");
    cmd->add_option("--data-dir", opts.dataset_dir, "directory of instance PNGs to ingest");
  }
}

// Wall-clock sidecar; deliberately not part of the manifest so reruns stay
// byte-identical.
struct PhaseTimer {
  std::string out_dir;
  std::string phase;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  ~PhaseTimer() {
    try {
      std::filesystem::create_directories(out_dir);
      std::ofstream f(std::filesystem::path(out_dir) / "timing.txt", std::ios::app);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      f << phase << " " << secs << " s\n";
    } catch (...) {
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale data-poisoning lab for diffusion personalization"};
  app.require_subcommand(1);

  CommonOpts craft_opts, victim_opts, purify_opts, eval_opts, ablate_opts, report_opts;
  std::string victim_poison_dir, victim_clean;
  std::string purify_method, purify_in;
  std::string eval_ckpt;
  std::vector<std::string> report_inputs;

  CLI::App* craft = app.add_subcommand("craft", "craft a poisoned copy of the protect set");
  add_common(craft, craft_opts);

  CLI::App* victim = app.add_subcommand("train-victim", "fine-tune a victim model");
  add_common(victim, victim_opts);
  victim->add_option("--poison-dir", victim_poison_dir, "train on PNGs from this directory");
  victim->add_flag("--clean", victim_clean, "train on the clean protect set");

  CLI::App* purify = app.add_subcommand("purify", "apply a purification defense to PNGs");
  add_common(purify, purify_opts, false);
  purify->add_option("--method", purify_method, "tvm|jpeg|sr")->required();
  purify->add_option("--in-dir", purify_in, "input PNG directory")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a trained victim checkpoint");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--model", eval_ckpt, "victim checkpoint file")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "run the 4-cell crafting ablation grid");
  add_common(ablate, ablate_opts);

  CLI::App* report = app.add_subcommand("report", "aggregate manifests into a table");
  add_common(report, report_opts, false);
  report->add_option("manifests", report_inputs, "evaluate/ablate manifests or run directories")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (craft->parsed()) {
      PhaseTimer t{craft_opts.out_dir, "craft"};
      cloak::run_craft_phase(resolve_config(craft_opts), craft_opts.out_dir);
    } else if (victim->parsed()) {
      if (victim_poison_dir.empty() && victim_clean.empty())
        throw cloak::ConfigError("train-victim: pass --poison-dir or --clean");
      PhaseTimer t{victim_opts.out_dir, "train-victim"};
      cloak::run_train_victim_phase(resolve_config(victim_opts), victim_poison_dir,
                                    victim_opts.out_dir);
    } else if (purify->parsed()) {
      PhaseTimer t{purify_opts.out_dir, "purify"};
      cloak::run_purify_phase(resolve_config(purify_opts), purify_method, purify_in,
                              purify_opts.out_dir);
    } else if (evaluate->parsed()) {
      PhaseTimer t{eval_opts.out_dir, "evaluate"};
      cloak::run_evaluate_phase(resolve_config(eval_opts), eval_ckpt, eval_opts.out_dir);
    } else if (ablate->parsed()) {
      PhaseTimer t{ablate_opts.out_dir, "ablate"};
      cloak::run_ablate_phase(resolve_config(ablate_opts), ablate_opts.out_dir);
    } else if (report->parsed()) {
      std::vector<std::string> manifests;
      for (const std::string& input : report_inputs) {
        namespace fs = std::filesystem;
        if (fs::is_directory(input)) {
          for (const auto& e : fs::recursive_directory_iterator(input)) {
            const std::string name = e.path().filename().string();
            if (name == "evaluate.manifest" || name == "ablate.manifest")
              manifests.push_back(e.path().string());
          }
        } else {
          manifests.push_back(input);
        }
      }
      std::sort(manifests.begin(), manifests.end());
      cloak::run_report_phase(manifests, report_opts.out_dir);
      std::ifstream txt(std::filesystem::path(report_opts.out_dir) / "report.txt");
      std::cout << txt.rdbuf();
    }
  } catch (const cloak::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cloak::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cloak::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const cloak::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
