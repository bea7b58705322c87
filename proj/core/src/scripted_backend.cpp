#include "intentguard/scripted_backend.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/text_util.hpp"

namespace intentguard {

namespace {

bool rule_matches(const ScriptRule& rule, const std::string& rendered) {
  switch (rule.type) {
    case MatchType::any:
      return true;
    case MatchType::exact:
      return rendered == rule.pattern;
    case MatchType::substring:
      return rendered.find(rule.pattern) != std::string::npos;
  }
  return false;
}

}  // namespace

ScriptedBackend::ScriptedBackend(ScriptedConfig config) : config_(std::move(config)) {
  if (config_.rules.empty() && !config_.default_response) {
    throw ValidationError("scripted backend needs at least one rule or a default response");
  }
  for (const auto& rule : config_.rules) {
    if (rule.responses.empty()) {
      throw ValidationError("script rule has an empty response list");
    }
  }
  next_index_.assign(config_.rules.size(), 0);
  descriptor_.kind = BackendKind::scripted;
  descriptor_.id = config_.id;
  descriptor_.supports_prefill = true;
  descriptor_.supports_activations = true;
  descriptor_.supports_logprobs = true;
}

std::string ScriptedBackend::render_transcript(const ChatTranscript& transcript,
                                               const std::optional<std::string>& prefill) {
  std::string out;
  for (const auto& m : transcript.messages) {
    out += to_string(m.role);
    out += ": ";
    out += m.content;
    out += "\n";
  }
  if (prefill) {
    out += "assistant: ";
    out += *prefill;
  }
  return out;
}

const std::string& ScriptedBackend::match_response(const std::string& rendered, bool consume) {
  for (std::size_t r = 0; r < config_.rules.size(); ++r) {
    const auto& rule = config_.rules[r];
    if (!rule_matches(rule, rendered)) continue;
    std::size_t idx = next_index_[r];
    if (idx >= rule.responses.size()) {
      if (rule.repeat_last) {
        return rule.responses.back();
      }
      throw ValidationError("script rule '" + rule.pattern +
                            "' exhausted its response sequence without a repeat policy");
    }
    if (consume) ++next_index_[r];
    return rule.responses[idx];
  }
  if (config_.default_response) return *config_.default_response;
  throw ValidationError("no script rule matched and no default response is configured");
}

Completion ScriptedBackend::generate_impl(const ChatTranscript& transcript, const GenParams& params) {
  std::lock_guard lock(mu_);
  std::string rendered = render_transcript(transcript, params.prefill);
  call_log_.push_back(rendered);
  const std::string& response = match_response(rendered, /*consume=*/true);
  Completion c;
  c.text = params.prefill ? *params.prefill + response : response;
  c.token_count = static_cast<int>(split_whitespace(c.text).size());
  c.backend_id = descriptor_.id;
  return c;
}

std::vector<double> ScriptedBackend::token_logprobs_impl(const ChatTranscript& transcript,
                                                         const std::string& continuation) {
  std::lock_guard lock(mu_);
  std::string rendered = render_transcript(transcript, std::nullopt);
  const std::string& would_respond = match_response(rendered, /*consume=*/false);
  auto tokens = split_whitespace(continuation);
  if (tokens.empty()) throw ValidationError("continuation tokenizes to zero tokens");
  double per_token = (continuation == would_respond) ? 0.0 : config_.miss_logprob_per_token;
  return std::vector<double>(tokens.size(), per_token);
}

std::vector<std::vector<double>> ScriptedBackend::activations(const std::string& text, int layers,
                                                              int hidden) const {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(layers));
  std::uint64_t h = fnv1a64(text);
  for (int l = 0; l < layers; ++l) {
    std::vector<double> v(static_cast<std::size_t>(hidden));
    for (int i = 0; i < hidden; ++i) {
      h = splitmix64(h);
      // map to [-1, 1)
      v[static_cast<std::size_t>(i)] = static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::string> ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return call_log_;
}

int ScriptedBackend::call_count() const {
  std::lock_guard lock(mu_);
  return static_cast<int>(call_log_.size());
}

ScriptedConfig load_script(const std::filesystem::path& path, std::string id) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open script file: " + path.string());
  ScriptedConfig config;
  config.id = std::move(id);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("script line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("default")) {
      config.default_response = j.at("default").get<std::string>();
      continue;
    }
    ScriptRule rule;
    if (j.contains("match")) {
      const auto& m = j.at("match");
      std::string type = m.value("type", "substring");
      if (type == "exact") {
        rule.type = MatchType::exact;
      } else if (type == "any") {
        rule.type = MatchType::any;
      } else if (type == "substring") {
        rule.type = MatchType::substring;
      } else {
        throw ValidationError("script line " + std::to_string(lineno) + ": unknown match type " + type);
      }
      rule.pattern = m.value("pattern", "");
    } else if (j.contains("pattern")) {
      std::string p = j.at("pattern").get<std::string>();
      if (p == "*") {
        rule.type = MatchType::any;
      } else {
        rule.type = MatchType::substring;
        rule.pattern = p;
      }
    } else {
      rule.type = MatchType::any;
    }
    rule.responses = j.at("responses").get<std::vector<std::string>>();
    rule.repeat_last = j.value("repeat", false);
    config.rules.push_back(std::move(rule));
  }
  if (config.rules.empty() && !config.default_response) {
    throw ValidationError("script file is empty: " + path.string());
  }
  return config;
}

}  // namespace intentguard
