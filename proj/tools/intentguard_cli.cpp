#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/jsonl.hpp"
#include "intentguard/runner.hpp"
#include "intentguard/templates.hpp"

namespace {

using intentguard::RunConfig;
using intentguard::RunManifest;

struct CommonOpts {
  std::string config_path;
  std::string output_dir;
  long long seed = -1;
};

/// Loads the config and applies CLI overrides; when `only_stage` is set,
/// every other stage section is disabled so the subcommand runs exactly one
/// pipeline stage.
RunConfig load_config(const CommonOpts& opts, const std::string& only_stage) {
  nlohmann::json j = nlohmann::json::parse(intentguard::read_text_file(opts.config_path));
  if (!only_stage.empty()) {
    for (const char* key : {"build", "train", "attacks", "evaluate", "whitebox"}) {
      if (key != only_stage && j.contains(key) && j.at(key).is_object()) {
        j[key]["enabled"] = false;
      }
    }
    if (!j.contains(only_stage)) {
      throw intentguard::ValidationError("config has no '" + only_stage + "' section");
    }
    j[only_stage]["enabled"] = true;
  }
  if (opts.seed >= 0) j["seed"] = static_cast<std::uint64_t>(opts.seed);
  if (!opts.output_dir.empty()) j["output_dir"] = opts.output_dir;
  return RunConfig::from_json_text(j.dump());
}

int run_stage(const CommonOpts& opts, const std::string& stage) {
  RunConfig config = load_config(opts, stage);
  RunManifest manifest = intentguard::run_experiment(config);
  std::cout << "run " << manifest.run_id << (manifest.complete ? " complete" : " PARTIAL") << "\n";
  for (const auto& [name, value] : manifest.metrics) {
    std::cout << "  " << name << " = " << value << "\n";
  }
  for (const auto& error : manifest.errors) std::cerr << "  error: " << error << "\n";
  std::cout << "  artifacts in " << manifest.directory.string() << "\n";
  return manifest.complete ? 0 : 1;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("-c,--config", opts.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--seed", opts.seed, "override the config seed");
  cmd->add_option("--output-dir", opts.output_dir, "override the output directory");
}

const std::pair<const char*, const char*> kTemplateFiles[] = {
    {"intent_system_prompt", "intent_system_prompt.txt"},
    {"teacher_harmful", "teacher_harmful.txt"},
    {"teacher_benign", "teacher_benign.txt"},
    {"self_reminder_prefix", "self_reminder_prefix.txt"},
    {"self_reminder_suffix", "self_reminder_suffix.txt"},
    {"ia_dual_stage1", "ia_dual_stage1.txt"},
    {"ia_dual_stage2", "ia_dual_stage2.txt"},
    {"ia_single", "ia_single.txt"},
    {"deep_inception", "deep_inception.txt"},
    {"judge_rubric", "judge_rubric.txt"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"intent-deduction fine-tuning defense toolkit"};
  app.require_subcommand(1);

  CommonOpts build_opts, train_opts, attack_opts, eval_opts, whitebox_opts, sweep_opts;
  add_common(app.add_subcommand("build-dataset", "construct the intent training set"), build_opts);
  add_common(app.add_subcommand("train", "supervised fine-tuning on a training set"), train_opts);
  add_common(app.add_subcommand("attack", "run the enabled attack suite"), attack_opts);
  add_common(app.add_subcommand("evaluate", "harmfulness/utility/over-refusal metrics"), eval_opts);
  add_common(app.add_subcommand("whitebox", "directions, lens, KL, PCA analyses"), whitebox_opts);

  auto* report_cmd = app.add_subcommand("report", "render a defenses-by-attacks report");
  std::vector<std::string> run_dirs;
  std::string report_out = "reports";
  report_cmd->add_option("runs", run_dirs, "run directories (containing manifest.json)")->required();
  report_cmd->add_option("-o,--out", report_out, "report output directory");

  auto* sweep_cmd = app.add_subcommand("sweep", "harmful-set size sweep (child runs)");
  add_common(sweep_cmd, sweep_opts);
  std::vector<int> sweep_sizes = {0, 20, 40, 60, 80, 100};
  sweep_cmd->add_option("--sizes", sweep_sizes, "harmful-set sizes");

  auto* templates_cmd = app.add_subcommand("templates", "write the default prompt templates to files");
  std::string dump_dir;
  templates_cmd->add_option("--dump-dir", dump_dir, "directory for the template files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("build-dataset")) return run_stage(build_opts, "build");
    if (app.got_subcommand("train")) return run_stage(train_opts, "train");
    if (app.got_subcommand("attack")) return run_stage(attack_opts, "attacks");
    if (app.got_subcommand("evaluate")) return run_stage(eval_opts, "evaluate");
    if (app.got_subcommand("whitebox")) return run_stage(whitebox_opts, "whitebox");

    if (app.got_subcommand("report")) {
      std::vector<RunManifest> manifests;
      for (const auto& dir : run_dirs) manifests.push_back(intentguard::load_manifest(dir));
      auto files = intentguard::emit_report(manifests, report_out);
      std::cout << intentguard::read_text_file(files.text);
      std::cout << "wrote " << files.csv.string() << " and " << files.text.string() << "\n";
      return files.gaps.empty() ? 0 : 1;
    }

    if (app.got_subcommand("sweep")) {
      RunConfig base = load_config(sweep_opts, "");
      auto manifests = intentguard::run_sweep(base, sweep_sizes);
      bool all_complete = true;
      for (std::size_t i = 0; i < manifests.size(); ++i) {
        std::cout << "size " << sweep_sizes[i] << ": run " << manifests[i].run_id
                  << (manifests[i].complete ? " complete" : " PARTIAL") << "\n";
        all_complete = all_complete && manifests[i].complete;
      }
      auto files = intentguard::emit_report(manifests, base.output_dir / "sweep-report");
      std::cout << "wrote " << files.csv.string() << "\n";
      return all_complete ? 0 : 1;
    }

    if (app.got_subcommand("templates")) {
      std::filesystem::create_directories(dump_dir);
      intentguard::TemplateSet templates;
      for (const auto& [name, file] : kTemplateFiles) {
        intentguard::write_text_file(std::filesystem::path(dump_dir) / file, templates.get(name));
      }
      std::ostringstream phrases;
      for (const auto& p : intentguard::templates::default_refusal_phrases()) phrases << p << "\n";
      intentguard::write_text_file(std::filesystem::path(dump_dir) / "refusal_phrases.txt",
                                   phrases.str());
      std::cout << "wrote templates to " << dump_dir << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
