#include "intentguard/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <sstream>

#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/evaluation.hpp"
#include "intentguard/intent_builder.hpp"
#include "intentguard/jsonl.hpp"
#include "intentguard/remote_backend.hpp"
#include "intentguard/scripted_backend.hpp"
#include "intentguard/text_util.hpp"
#include "intentguard/toy/toy_backend.hpp"
#include "intentguard/whitebox.hpp"

namespace intentguard {

namespace {

using nlohmann::json;

std::string now_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%S", &tm);
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  return from_json_text(read_text_file(path));
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config parse error: ") + e.what());
  }
  RunConfig config;
  config.raw_json = text;
  config.canonical_text = j.dump();  // object keys are sorted: stable under field reordering
  config.seed = j.value("seed", 0ull);
  if (j.contains("output_dir")) config.output_dir = j.at("output_dir").get<std::string>();
  return config;
}

std::string RunConfig::config_hash() const { return to_hex(fnv1a64(canonical_text)); }

namespace {

class Executor {
 public:
  explicit Executor(const RunConfig& config) : config_(config), j_(json::parse(config.raw_json)) {}

  RunManifest run() {
    manifest_.config_hash = config_.config_hash();
    manifest_.started_at = now_timestamp();
    make_run_dir();
    load_templates();
    bool ok = true;
    ok = ok && stage("build", [&] { stage_build(); });
    ok = ok && stage("train", [&] { stage_train(); });
    ok = ok && stage("attacks", [&] { stage_attack(); });
    ok = ok && stage("evaluate", [&] { stage_evaluate(); });
    ok = ok && stage("whitebox", [&] { stage_whitebox(); });
    manifest_.complete = ok;
    manifest_.finished_at = now_timestamp();
    write_metrics_csv();
    write_manifest();
    return manifest_;
  }

 private:
  bool enabled(const std::string& name) const {
    return j_.contains(name) && j_.at(name).value("enabled", true);
  }

  template <typename Fn>
  bool stage(const std::string& name, Fn&& fn) {
    if (!j_.contains(name)) return true;  // stage absent: nothing to do, keep going
    if (!j_.at(name).value("enabled", true)) return true;
    try {
      fn();
      return true;
    } catch (const std::exception& e) {
      manifest_.errors.push_back(name + ": " + e.what());
      return false;  // halt downstream stages; manifest records partial completion
    }
  }

  void make_run_dir() {
    const std::string base_id = manifest_.config_hash + "-" + now_timestamp();
    std::string run_id = base_id;
    std::filesystem::path dir = config_.output_dir / run_id;
    for (int i = 2; std::filesystem::exists(dir); ++i) {
      run_id = base_id + "-" + std::to_string(i);
      dir = config_.output_dir / run_id;
    }
    std::filesystem::create_directories(dir);
    manifest_.run_id = run_id;
    manifest_.directory = dir;
  }

  void load_templates() {
    if (!j_.contains("templates")) return;
    for (const auto& [name, path] : j_.at("templates").items()) {
      templates_.load_override(name, path.get<std::string>());
    }
  }

  std::filesystem::path dataset_path(const std::string& key) const {
    if (!j_.contains("datasets") || !j_.at("datasets").contains(key)) {
      throw ValidationError("config has no datasets." + key);
    }
    return j_.at("datasets").at(key).get<std::string>();
  }

  Backend& instantiate(const std::string& name) {
    auto it = backends_.find(name);
    if (it != backends_.end()) return *it->second;
    if (name == "trained") {
      if (!trained_backend_) throw ValidationError("no trained model available yet for role 'trained'");
      return *trained_backend_;
    }
    if (!j_.contains("backends") || !j_.at("backends").contains(name)) {
      throw ValidationError("config has no backends." + name);
    }
    const json& spec = j_.at("backends").at(name);
    const std::string kind = spec.value("kind", "scripted");
    std::unique_ptr<Backend> backend;
    if (kind == "scripted") {
      ScriptedConfig sc;
      if (spec.contains("script")) {
        sc = load_script(spec.at("script").get<std::string>(), name);
      } else {
        sc.id = name;
      }
      if (spec.contains("rules")) {
        for (const auto& r : spec.at("rules")) {
          ScriptRule rule;
          const std::string pattern = r.value("pattern", "*");
          if (pattern == "*") {
            rule.type = MatchType::any;
          } else {
            rule.type = r.value("exact", false) ? MatchType::exact : MatchType::substring;
            rule.pattern = pattern;
          }
          rule.responses = r.at("responses").get<std::vector<std::string>>();
          rule.repeat_last = r.value("repeat", true);
          sc.rules.push_back(std::move(rule));
        }
      }
      if (spec.contains("default_response")) {
        sc.default_response = spec.at("default_response").get<std::string>();
      }
      backend = std::make_unique<ScriptedBackend>(std::move(sc));
    } else if (kind == "local") {
      std::shared_ptr<toy::ToyModel> model;
      if (spec.contains("checkpoint")) {
        model = std::make_shared<toy::ToyModel>(
            toy::ToyModel::load(spec.at("checkpoint").get<std::string>()));
      } else {
        toy::ToyConfig tc;
        const json& t = spec.value("toy", json::object());
        tc.seed = t.value("seed", config_.seed);
        tc.layers = t.value("layers", tc.layers);
        tc.hidden = t.value("hidden", tc.hidden);
        tc.heads = t.value("heads", tc.heads);
        tc.max_seq = t.value("max_seq", tc.max_seq);
        model = std::make_shared<toy::ToyModel>(tc);
      }
      backend = std::make_unique<toy::ToyBackend>(std::move(model), name);
    } else if (kind == "remote") {
      RemoteConfig rc;
      rc.base_url = spec.at("base_url").get<std::string>();
      rc.path = spec.value("path", rc.path);
      rc.model = spec.value("model", "");
      rc.api_key_env = spec.value("api_key_env", rc.api_key_env);
      rc.max_attempts = spec.value("max_attempts", rc.max_attempts);
      rc.supports_prefill = spec.value("supports_prefill", rc.supports_prefill);
      rc.id = name;
      backend = std::make_unique<RemoteBackend>(std::move(rc));
    } else {
      throw ValidationError("unknown backend kind: " + kind);
    }
    auto [pos, inserted] = backends_.emplace(name, std::move(backend));
    return *pos->second;
  }

  Backend& role(const std::string& role_name) {
    std::string name = role_name;
    if (j_.contains("roles") && j_.at("roles").contains(role_name)) {
      name = j_.at("roles").at(role_name).get<std::string>();
    }
    return instantiate(name);
  }

  DefenseSpec defense_spec() {
    DefenseSpec spec;
    if (!j_.contains("defense")) return spec;
    const json& d = j_.at("defense");
    spec.kind = defense_kind_from_string(d.value("kind", "vanilla"));
    spec.icd_exemplar_count = d.value("icd_exemplar_count", 2);
    if (spec.kind == DefenseKind::bda) {
      toy::ToyTokenizer tokenizer;
      spec.trigger = sample_backdoor_trigger(tokenizer, d.value("trigger_tokens", 150),
                                             d.value("trigger_seed", config_.seed));
    }
    const std::string stage = d.value("gate_stage", "input");
    spec.gate_stage = stage == "output"  ? GateStage::output
                      : stage == "both" ? GateStage::both
                                        : GateStage::input;
    return spec;
  }

  DefenseContext defense_context() {
    DefenseContext context;
    context.templates = templates_;
    if (j_.contains("defense")) {
      const json& d = j_.at("defense");
      if (d.contains("icd_exemplars")) {
        for (const auto& e : d.at("icd_exemplars")) {
          context.icd_exemplars.push_back(
              {e.at("instruction").get<std::string>(), e.at("response").get<std::string>()});
        }
      }
      if (d.value("kind", "vanilla") == std::string("classifier_gate")) {
        context.classifier = &role("classifier");
      }
    }
    return context;
  }

  GenParams target_params() {
    GenParams params;
    if (j_.contains("generation")) {
      const json& g = j_.at("generation");
      params.max_new_tokens = g.value("max_new_tokens", 128);
      params.temperature = g.value("temperature", 0.0);
      if (g.contains("seed")) params.seed = g.at("seed").get<std::uint64_t>();
    }
    if (!params.seed) params.seed = config_.seed;
    return params;
  }

  void stage_build() {
    const json& b = j_.at("build");
    Backend& teacher = role("teacher");
    BuilderOptions options;
    options.templates = templates_;

    std::vector<AdvPair> pairs;
    const int n_pairs = b.value("n_pairs", 0);
    if (n_pairs > 0) {
      pairs = load_adv_pairs(dataset_path("adv_pairs"), static_cast<std::size_t>(n_pairs),
                             b.value("pair_seed", config_.seed));
    }
    std::vector<std::string> benign = load_instruction_list(dataset_path("benign"));
    if (b.contains("n_benign")) {
      const std::size_t n_benign = b.at("n_benign").get<std::size_t>();
      if (n_benign > benign.size()) {
        throw ValidationError("n_benign exceeds the benign corpus size");
      }
      seeded_shuffle(benign, splitmix64(config_.seed ^ 0xb19eull));
      benign.resize(n_benign);
    }

    IntentDatasets built = build_intent_datasets(teacher, pairs, benign, options);
    for (const auto& reason : built.skipped) manifest_.errors.push_back("build skipped: " + reason);

    double ratio = b.value("ratio", 5.0);
    if (b.value("use_all_benign", false) && !built.harmful.empty()) {
      ratio = static_cast<double>(built.benign.size()) / static_cast<double>(built.harmful.size());
    }
    auto mixed = mix_dataset(built.harmful, built.benign, ratio, config_.seed,
                             b.value("allow_truncation", false));
    const std::filesystem::path out = manifest_.directory / b.value("out", "train.jsonl");
    save_training_set(out, mixed);
    manifest_.artifacts["training_set"] = out.string();
    manifest_.metrics["build.harmful"] = static_cast<double>(built.harmful.size());
    manifest_.metrics["build.benign"] = static_cast<double>(built.benign.size());
    manifest_.metrics["build.mixed"] = static_cast<double>(mixed.size());
  }

  std::shared_ptr<toy::ToyModel> base_toy_model(const json& section) {
    if (section.contains("base_checkpoint")) {
      return std::make_shared<toy::ToyModel>(
          toy::ToyModel::load(section.at("base_checkpoint").get<std::string>()));
    }
    toy::ToyConfig tc;
    const json& t = section.value("toy", json::object());
    tc.seed = t.value("seed", config_.seed);
    tc.layers = t.value("layers", tc.layers);
    tc.hidden = t.value("hidden", tc.hidden);
    tc.heads = t.value("heads", tc.heads);
    tc.max_seq = t.value("max_seq", tc.max_seq);
    return std::make_shared<toy::ToyModel>(tc);
  }

  void stage_train() {
    const json& t = j_.at("train");
    std::vector<TrainingExample> dataset;
    if (t.contains("dataset")) {
      dataset = load_training_set(t.at("dataset").get<std::string>());
    } else if (manifest_.artifacts.count("training_set")) {
      dataset = load_training_set(manifest_.artifacts.at("training_set"));
    } else {
      throw ValidationError("train stage needs train.dataset or a build stage");
    }

    SFTHyper hyper;
    hyper.epochs = t.value("epochs", hyper.epochs);
    hyper.learning_rate = t.value("learning_rate", hyper.learning_rate);
    hyper.batch_size = t.value("batch_size", hyper.batch_size);
    hyper.grad_accum = t.value("grad_accum", hyper.grad_accum);
    hyper.seed = t.value("seed", config_.seed);

    base_model_ = base_toy_model(t);
    ModelRef base = ModelRef::local(base_model_, "base");
    SftResult result = sft(base, dataset, hyper, manifest_.directory);
    trained_ref_ = result.model;
    trained_backend_ = std::make_unique<toy::ToyBackend>(result.model.local_model, "trained");
    manifest_.artifacts["checkpoint"] = (result.checkpoint_dir / "checkpoint.json").string();
    manifest_.metrics["train.initial_loss"] = result.initial_loss;
    manifest_.metrics["train.final_loss"] = result.epoch_losses.back();
    manifest_.metrics["train.examples"] = static_cast<double>(dataset.size());
  }

  void stage_attack() {
    const json& a = j_.at("attacks");
    auto items = load_harmful_benchmark(dataset_path("harmful"));
    if (a.contains("max_items")) {
      const std::size_t cap = a.at("max_items").get<std::size_t>();
      if (items.size() > cap) items.resize(cap);
    }

    AttackSuiteConfig suite;
    for (const auto& name : a.value("enabled", std::vector<std::string>{})) {
      suite.enabled.push_back(attack_kind_from_string(name));
    }
    suite.target_params = target_params();
    if (a.contains("pair")) {
      const json& p = a.at("pair");
      suite.pair.iterations = p.value("iterations", suite.pair.iterations);
      suite.pair.streams = p.value("streams", suite.pair.streams);
      suite.pair.seed = config_.seed;
    }
    if (a.contains("aa")) {
      const json& q = a.at("aa");
      suite.aa.restarts = q.value("restarts", suite.aa.restarts);
      suite.aa.iterations = q.value("iterations", suite.aa.iterations);
      suite.aa.init = q.value("init", "bang25") == std::string("self_transfer")
                          ? AaInit::self_transfer
                          : AaInit::bang25;
      suite.aa.self_transfer_suffix = q.value("self_transfer_suffix", "");
      suite.aa.mutation_pool = q.value("mutation_pool", std::vector<std::string>{});
      if (q.contains("objective")) {
        const std::string o = q.at("objective").get<std::string>();
        suite.aa.objective = o == "logprob"            ? AaObjective::logprob
                             : o == "refusal_absence" ? AaObjective::refusal_absence
                                                       : AaObjective::auto_select;
      }
      suite.aa.target_response = q.value("target_response", "");
      suite.aa.seed = config_.seed;
    }
    if (a.contains("harmful_ft")) {
      const json& h = a.at("harmful_ft");
      HarmfulFtAttackConfig hc;
      hc.train_items = load_harmful_benchmark(h.at("train").get<std::string>());
      for (const auto& r : read_jsonl(h.at("responses").get<std::string>())) {
        hc.harmful_responses.push_back(r.at("response").get<std::string>());
      }
      hc.safety_examples = load_training_set(h.at("safety").get<std::string>());
      hc.n_safety = h.value("n_safety", 10);
      hc.hyper.epochs = h.value("epochs", 5);
      hc.hyper.learning_rate = h.value("learning_rate", 0.01);
      hc.hyper.batch_size = h.value("batch_size", 1);
      hc.hyper.grad_accum = 1;
      hc.hyper.seed = config_.seed;
      hc.base_model = trained_ref_.local_model ? trained_ref_
                                               : ModelRef::local(base_toy_model(h), "base");
      hc.post_ft_defense = defense_spec();
      hc.defense_context = defense_context();
      hc.target_params = suite.target_params;
      suite.harmful_ft = std::move(hc);
    }
    suite.trace_log = manifest_.directory / "attack_trace.jsonl";

    Backend& target = role("target");
    auto defended = make_defended_backend(target, defense_spec(), defense_context());
    Backend* attacker = nullptr;
    if (std::find(suite.enabled.begin(), suite.enabled.end(), AttackKind::pair) !=
        suite.enabled.end()) {
      attacker = &role("attacker");
    }
    AttackReport report =
        run_attack_suite(attacker, *defended, role("judge"), items, suite, templates_);
    for (const auto& e : report.item_errors) manifest_.errors.push_back("attack: " + e);

    const std::filesystem::path csv = manifest_.directory / "attack_report.csv";
    write_attack_report_csv(csv, report);
    manifest_.artifacts["attack_report"] = csv.string();
    manifest_.artifacts["attack_trace"] = suite.trace_log->string();
    for (const auto& row : report.rows) {
      if (row.items == 0) continue;
      manifest_.metrics["attack." + to_string(row.attack) + ".asr"] = row.asr;
      manifest_.metrics["attack." + to_string(row.attack) + ".mean"] = row.mean_harm;
      manifest_.metrics["attack." + to_string(row.attack) + ".queries"] =
          static_cast<double>(row.total_queries);
    }
  }

  void stage_evaluate() {
    const json& e = j_.at("evaluate");
    Backend& target = role("target");
    auto defended = make_defended_backend(target, defense_spec(), defense_context());
    const GenParams params = target_params();
    const std::filesystem::path verdicts = manifest_.directory / "verdicts.jsonl";
    const std::string defense_name = to_string(defense_spec().kind);
    manifest_.defense = defense_name;

    if (e.value("harmfulness", false)) {
      auto items = load_harmful_benchmark(dataset_path("harmful"));
      if (e.contains("max_items")) {
        const std::size_t cap = e.at("max_items").get<std::size_t>();
        if (items.size() > cap) items.resize(cap);
      }
      Backend& judge = role("judge");
      std::vector<int> scores;
      RefusalMatcher matcher;
      for (const auto& item : items) {
        Completion c = generate(*defended, ChatTranscript::from_user(item.instruction), params);
        JudgeVerdict v = judge_harmfulness(judge, item.instruction, c.text, templates_);
        scores.push_back(v.score);
        append_jsonl(verdicts, {{"item_id", item.id},
                                {"defense", defense_name},
                                {"attack", "none"},
                                {"response", c.text},
                                {"score", v.score},
                                {"refused", matcher(c.text)}});
      }
      manifest_.metrics["eval.harmfulness.asr"] = asr(scores).value;
      manifest_.metrics["eval.harmfulness.mean"] = mean_harm(scores).value;
    }

    if (e.value("overrefusal", false)) {
      auto instructions = load_instruction_list(dataset_path("overrefusal"));
      RefusalRateResult r = refusal_rate(*defended, instructions, RefusalMatcher(), params);
      for (const auto& err : r.errors) manifest_.errors.push_back("overrefusal: " + err);
      manifest_.metrics["eval.overrefusal.rate"] = r.metric.value;
      manifest_.metrics["eval.overrefusal.n"] = static_cast<double>(r.metric.n);
    }

    if (e.value("mcq", false)) {
      auto items = load_mcq(dataset_path("mcq"));
      AccuracyResult r = mcq_accuracy(*defended, items, e.value("cot", true), params);
      manifest_.metrics["eval.mcq.accuracy"] = r.metric.value;
    }

    if (e.value("openqa", false)) {
      auto items = load_openqa(dataset_path("openqa"));
      AccuracyResult r = openqa_accuracy(*defended, items, e.value("cot", true), params);
      manifest_.metrics["eval.openqa.accuracy"] = r.metric.value;
    }
    if (std::filesystem::exists(verdicts)) {
      manifest_.artifacts["verdicts"] = verdicts.string();
    }
  }

  void stage_whitebox() {
    const json& w = j_.at("whitebox");
    std::shared_ptr<toy::ToyModel> model;
    if (trained_ref_.local_model) {
      model = trained_ref_.local_model;
    } else {
      model = base_toy_model(w);
    }
    ToySteerable steerable(model);

    std::vector<std::string> harmful = w.value("harmful", std::vector<std::string>{});
    std::vector<std::string> benign = w.value("benign", std::vector<std::string>{});
    if (harmful.empty() && j_.contains("datasets") && j_.at("datasets").contains("harmful")) {
      for (const auto& item : load_harmful_benchmark(dataset_path("harmful"))) {
        harmful.push_back(item.instruction);
      }
    }
    if (benign.empty() && j_.contains("datasets") && j_.at("datasets").contains("benign")) {
      benign = load_instruction_list(dataset_path("benign"));
    }

    if (w.value("directions", false)) {
      DirectionSet set = refusal_direction(steerable, harmful, benign);
      LayerSelection selection = select_optimal_layer(steerable, set, harmful);
      const std::filesystem::path dir_path = manifest_.directory / "directions.jsonl";
      save_direction_set(dir_path, selection.set);
      manifest_.artifacts["directions"] = dir_path.string();
      manifest_.metrics["whitebox.optimal_layer"] =
          static_cast<double>(*selection.set.optimal_layer);

      std::ostringstream norms;
      norms << "layer,norm\n";
      for (const auto& [layer, norm] : selection.set.norms) {
        norms << layer << "," << format_double(norm) << "\n";
      }
      write_text_file(manifest_.directory / "direction_norms.csv", norms.str());
      manifest_.artifacts["direction_norms"] = (manifest_.directory / "direction_norms.csv").string();

      if (w.value("pca", false)) {
        const int layer = *selection.set.optimal_layer;
        std::vector<std::vector<double>> ha, ba;
        for (const auto& i : harmful) ha.push_back(steerable.capture(i)[static_cast<std::size_t>(layer)]);
        for (const auto& i : benign) ba.push_back(steerable.capture(i)[static_cast<std::size_t>(layer)]);
        PcaResult pca = pca_activations(ha, ba, 2);
        std::ostringstream out;
        out << "class,c0,c1\n";
        for (const auto& p : pca.projected_harmful) {
          out << "harmful," << format_double(p[0]) << "," << format_double(p[1]) << "\n";
        }
        for (const auto& p : pca.projected_benign) {
          out << "benign," << format_double(p[0]) << "," << format_double(p[1]) << "\n";
        }
        write_text_file(manifest_.directory / "pca.csv", out.str());
        manifest_.artifacts["pca"] = (manifest_.directory / "pca.csv").string();
        manifest_.metrics["whitebox.pca.evr0"] = pca.explained_variance_ratio[0];
        manifest_.metrics["whitebox.pca.evr1"] = pca.explained_variance_ratio[1];
      }
    }

    if (w.value("lens", false) && !harmful.empty()) {
      toy::ToyTokenizer tokenizer;
      toy::ChatTemplate chat_template(tokenizer);
      const auto tokens =
          chat_template.render_generation_prompt(ChatTranscript::from_user(harmful.front()));
      std::ostringstream out;
      out << "layer,rank,token,probability\n";
      for (int layer = 0; layer < model->config().layers; ++layer) {
        auto entries = logit_lens(*model, tokenizer, tokens, layer, w.value("lens_k", 5));
        for (std::size_t rank = 0; rank < entries.size(); ++rank) {
          out << layer << "," << rank << "," << entries[rank].token_id << ","
              << format_double(entries[rank].probability) << "\n";
        }
      }
      write_text_file(manifest_.directory / "lens.csv", out.str());
      manifest_.artifacts["lens"] = (manifest_.directory / "lens.csv").string();
    }

    if (w.contains("kld")) {
      const json& k = w.at("kld");
      std::vector<std::pair<std::string, std::string>> items;
      for (const auto& r : read_jsonl(k.at("items").get<std::string>())) {
        items.emplace_back(r.at("instruction").get<std::string>(),
                           r.at("response").get<std::string>());
      }
      std::shared_ptr<toy::ToyModel> pre = base_toy_model(k.value("pre", json::object()));
      const toy::ToyModel& post = *model;
      KldReport report = kld_pre_post(*pre, post, items);
      std::ostringstream out;
      out << "position,mean_kl\n";
      for (std::size_t t = 0; t < report.per_position_mean.size(); ++t) {
        out << t << "," << format_double(report.per_position_mean[t]) << "\n";
      }
      write_text_file(manifest_.directory / "kld.csv", out.str());
      manifest_.artifacts["kld"] = (manifest_.directory / "kld.csv").string();
      manifest_.metrics["whitebox.kld.overall_mean"] = report.overall_mean;
    }
  }

  void write_metrics_csv() {
    std::ostringstream out;
    out << "metric,value,n\n";
    for (const auto& [name, value] : manifest_.metrics) {  // std::map: sorted, deterministic
      out << name << "," << format_double(value) << ",\n";
    }
    const std::filesystem::path path = manifest_.directory / "metrics.csv";
    write_text_file(path, out.str());
    manifest_.artifacts["metrics"] = path.string();
  }

  void write_manifest() {
    json j;
    j["run_id"] = manifest_.run_id;
    j["config_hash"] = manifest_.config_hash;
    j["started_at"] = manifest_.started_at;
    j["finished_at"] = manifest_.finished_at;
    j["complete"] = manifest_.complete;
    j["defense"] = manifest_.defense;
    j["artifacts"] = manifest_.artifacts;
    j["metrics"] = manifest_.metrics;
    j["errors"] = manifest_.errors;
    write_file_atomic(manifest_.directory / "manifest.json", j.dump(2) + "\n");
  }

  RunConfig config_;
  json j_;
  RunManifest manifest_;
  TemplateSet templates_;
  std::map<std::string, std::unique_ptr<Backend>> backends_;
  std::shared_ptr<toy::ToyModel> base_model_;
  ModelRef trained_ref_;
  std::unique_ptr<toy::ToyBackend> trained_backend_;
};

}  // namespace

RunManifest run_experiment(const RunConfig& config) {
  Executor executor(config);
  return executor.run();
}

RunManifest load_manifest(const std::filesystem::path& run_directory) {
  const json j = json::parse(read_text_file(run_directory / "manifest.json"));
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  m.complete = j.value("complete", false);
  m.defense = j.value("defense", "vanilla");
  if (j.contains("artifacts")) {
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  }
  if (j.contains("metrics")) m.metrics = j.at("metrics").get<std::map<std::string, double>>();
  if (j.contains("errors")) m.errors = j.at("errors").get<std::vector<std::string>>();
  m.directory = run_directory;
  return m;
}

std::string format_report_cell(double asr_fraction, double mean_harm) {
  const double pct = asr_fraction * 100.0;
  char buf[64];
  if (std::abs(pct - std::round(pct)) < 1e-9) {
    std::snprintf(buf, sizeof(buf), "%d / %.1f", static_cast<int>(std::lround(pct)), mean_harm);
  } else {
    std::snprintf(buf, sizeof(buf), "%.1f / %.1f", pct, mean_harm);
  }
  return buf;
}

ReportFiles emit_report(const std::vector<RunManifest>& manifests,
                        const std::filesystem::path& out_dir) {
  if (manifests.empty()) throw ValidationError("emit_report needs at least one manifest");
  std::filesystem::create_directories(out_dir);
  const std::vector<std::string> attacks = {"pair", "di", "aa", "prefill", "harmful_ft"};

  ReportFiles files;
  std::ostringstream csv;
  csv << "defense";
  for (const auto& a : attacks) csv << "," << a;
  csv << "\n";

  std::vector<std::vector<std::string>> grid;  // for the text table
  for (const auto& m : manifests) {
    std::vector<std::string> row;
    row.push_back(m.defense + (m.complete ? "" : " (partial)"));
    csv << row.back();
    for (const auto& a : attacks) {
      const std::string asr_key = "attack." + a + ".asr";
      const std::string mean_key = "attack." + a + ".mean";
      std::string cell = "-";
      if (m.metrics.count(asr_key) && m.metrics.count(mean_key)) {
        cell = format_report_cell(m.metrics.at(asr_key), m.metrics.at(mean_key));
      } else {
        files.gaps.push_back(m.run_id + ": missing " + asr_key);
      }
      row.push_back(cell);
      csv << ",\"" << cell << "\"";
    }
    csv << "\n";
    grid.push_back(std::move(row));
  }

  std::vector<std::string> header = {"defense"};
  header.insert(header.end(), attacks.begin(), attacks.end());
  std::vector<std::size_t> widths(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
  for (const auto& row : grid) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream text;
  text << "ASR / mean harmfulness by defense and attack\n";
  auto emit_row = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      text << row[c] << std::string(widths[c] - row[c].size() + 2, ' ');
    }
    text << "\n";
  };
  emit_row(header);
  for (const auto& row : grid) emit_row(row);
  if (!files.gaps.empty()) {
    text << "\nmissing cells:\n";
    for (const auto& gap : files.gaps) text << "  " << gap << "\n";
  }

  files.csv = out_dir / "report.csv";
  files.text = out_dir / "report.txt";
  write_text_file(files.csv, csv.str());
  write_text_file(files.text, text.str());
  return files;
}

std::vector<RunManifest> run_sweep(const RunConfig& base, const std::vector<int>& di_sizes) {
  if (di_sizes.empty()) throw ValidationError("sweep needs at least one size");
  std::vector<RunManifest> manifests;
  manifests.reserve(di_sizes.size());
  for (int size : di_sizes) {
    json j = json::parse(base.raw_json);
    if (!j.contains("build")) throw ValidationError("sweep config needs a build stage");
    j["build"]["n_pairs"] = size;
    RunConfig child = RunConfig::from_json_text(j.dump());
    manifests.push_back(run_experiment(child));
  }
  return manifests;
}

}  // namespace intentguard
