#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "intentguard/attacks.hpp"
#include "intentguard/backend.hpp"
#include "intentguard/defenses.hpp"
#include "intentguard/finetune.hpp"

namespace intentguard {

/// Declarative experiment configuration, parsed from a single JSON file with
/// nested sections (backends, datasets, defense, build, train, attacks,
/// evaluate, whitebox). Secrets come from the environment, never the file.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  std::string canonical_text;  // canonical serialization (config_hash input)

  // backends: name -> descriptor-ish JSON kept opaque here; resolved at run time.
  std::string raw_json;  // full original text, reparsed by the executor

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_json_text(const std::string& text);

  std::string config_hash() const;
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::string started_at;
  std::string finished_at;
  bool complete = false;
  std::string defense = "vanilla";
  std::map<std::string, std::string> artifacts;  // logical name -> path
  std::map<std::string, double> metrics;
  std::vector<std::string> errors;

  std::filesystem::path directory;  // run directory on disk
};

/// Executes the enabled stages in dependency order (build, train, attack,
/// evaluate, whitebox). A stage failure halts downstream stages and the
/// manifest records partial completion. The manifest is written atomically.
RunManifest run_experiment(const RunConfig& config);

RunManifest load_manifest(const std::filesystem::path& run_directory);

/// defenses x attacks grid: one row per manifest, "ASR / mean" cells
/// (ASR as a percentage, mean harmfulness to one decimal). Missing metrics
/// render as "-" and are listed under gaps.
struct ReportFiles {
  std::filesystem::path csv;
  std::filesystem::path text;
  std::vector<std::string> gaps;
};

ReportFiles emit_report(const std::vector<RunManifest>& manifests,
                        const std::filesystem::path& out_dir);

/// "ASR / mean" cell in the report's arrangement, e.g. asr=0.19, mean=3.8
/// renders as "19 / 3.8".
std::string format_report_cell(double asr_fraction, double mean_harm);

/// Child runs sweeping the harmful-set size (build.n_pairs); each child gets
/// its own run directory and manifest.
std::vector<RunManifest> run_sweep(const RunConfig& base, const std::vector<int>& di_sizes);

}  // namespace intentguard
