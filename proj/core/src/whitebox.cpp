#include "intentguard/whitebox.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/jsonl.hpp"

namespace intentguard {

int InterventionSpec::effective_layer() const {
  if (source_layer) return *source_layer;
  if (source.optimal_layer) return *source.optimal_layer;
  throw ValidationError("intervention has no source layer and the direction set has no optimal layer");
}

const std::vector<double>& InterventionSpec::direction() const {
  const int layer = effective_layer();
  auto it = source.directions.find(layer);
  if (it == source.directions.end()) {
    throw ValidationError("direction set has no entry for layer " + std::to_string(layer));
  }
  return it->second;
}

double vector_norm(const std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

std::vector<double> ablate(const std::vector<double>& z, const std::vector<double>& v) {
  if (z.size() != v.size()) throw ValidationError("ablate: dimension mismatch");
  const double norm = vector_norm(v);
  if (norm == 0.0) throw ValidationError("ablate: zero direction");
  double dot = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) dot += (v[i] / norm) * z[i];
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - dot * (v[i] / norm);
  return out;
}

std::vector<double> act_add(const std::vector<double>& z, const std::vector<double>& v,
                            double alpha) {
  if (z.size() != v.size()) throw ValidationError("act_add: dimension mismatch");
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - alpha * v[i];
  return out;
}

std::map<int, std::vector<double>> difference_in_means(
    const std::vector<std::vector<std::vector<double>>>& harmful_acts,
    const std::vector<std::vector<std::vector<double>>>& benign_acts) {
  if (harmful_acts.empty() || benign_acts.empty()) {
    throw ValidationError("difference_in_means needs non-empty activation sets");
  }
  const std::size_t layers = harmful_acts[0].size();
  const std::size_t hidden = harmful_acts[0][0].size();
  auto check = [&](const std::vector<std::vector<std::vector<double>>>& acts) {
    for (const auto& sample : acts) {
      if (sample.size() != layers) throw ValidationError("activation layer count mismatch");
      for (const auto& layer : sample) {
        if (layer.size() != hidden) throw ValidationError("activation hidden size mismatch");
      }
    }
  };
  check(harmful_acts);
  check(benign_acts);

  std::map<int, std::vector<double>> out;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<double> direction(hidden, 0.0);
    for (const auto& sample : harmful_acts) {
      for (std::size_t i = 0; i < hidden; ++i) direction[i] += sample[l][i];
    }
    for (std::size_t i = 0; i < hidden; ++i) direction[i] /= static_cast<double>(harmful_acts.size());
    std::vector<double> benign_mean(hidden, 0.0);
    for (const auto& sample : benign_acts) {
      for (std::size_t i = 0; i < hidden; ++i) benign_mean[i] += sample[l][i];
    }
    for (std::size_t i = 0; i < hidden; ++i) {
      direction[i] -= benign_mean[i] / static_cast<double>(benign_acts.size());
    }
    out[static_cast<int>(l)] = std::move(direction);
  }
  return out;
}

DirectionSet refusal_direction(SteerableModel& model, const std::vector<std::string>& harmful,
                               const std::vector<std::string>& benign) {
  if (harmful.empty() || benign.empty()) {
    throw ValidationError("refusal_direction needs non-empty instruction sets");
  }
  std::vector<std::vector<std::vector<double>>> harmful_acts, benign_acts;
  harmful_acts.reserve(harmful.size());
  benign_acts.reserve(benign.size());
  for (const auto& instruction : harmful) harmful_acts.push_back(model.capture(instruction));
  for (const auto& instruction : benign) benign_acts.push_back(model.capture(instruction));

  DirectionSet set;
  set.directions = difference_in_means(harmful_acts, benign_acts);
  for (const auto& [layer, direction] : set.directions) {
    set.norms[layer] = vector_norm(direction);
  }
  return set;
}

LayerSelection select_optimal_layer(SteerableModel& model, DirectionSet directions,
                                    const std::vector<std::string>& validation_harmful,
                                    const RefusalMatcher& matcher, int max_new_tokens) {
  if (directions.directions.empty()) throw ValidationError("direction set is empty");
  if (validation_harmful.empty()) throw ValidationError("validation set is empty");

  LayerSelection result;
  std::optional<int> best_layer;
  double best_rate = 0.0;
  for (const auto& [layer, direction] : directions.directions) {
    InterventionSpec spec;
    spec.kind = InterventionKind::ablation;
    spec.source = directions;
    spec.source_layer = layer;
    long refused = 0;
    for (const auto& instruction : validation_harmful) {
      const std::string text = model.generate_with(instruction, &spec, max_new_tokens);
      if (matcher(text)) ++refused;
    }
    const double rate = static_cast<double>(refused) / static_cast<double>(validation_harmful.size());
    result.refusal_rates[layer] = rate;
    if (!best_layer || rate < best_rate) {  // ties keep the shallower layer
      best_layer = layer;
      best_rate = rate;
    }
  }
  directions.optimal_layer = *best_layer;
  result.set = std::move(directions);
  return result;
}

toy::ResidHook make_resid_hook(const InterventionSpec& spec) {
  const std::vector<double> v = spec.direction();
  const double norm = vector_norm(v);
  if (norm == 0.0) {
    return [](int, std::span<double>) {};  // zero direction: identity
  }
  if (spec.kind == InterventionKind::ablation) {
    std::vector<double> unit(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) unit[i] = v[i] / norm;
    return [unit](int, std::span<double> resid) {
      if (resid.size() != unit.size()) throw ValidationError("intervention dimension mismatch");
      double dot = 0.0;
      for (std::size_t i = 0; i < unit.size(); ++i) dot += unit[i] * resid[i];
      for (std::size_t i = 0; i < unit.size(); ++i) resid[i] -= dot * unit[i];
    };
  }
  std::vector<double> scaled(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) scaled[i] = spec.alpha * v[i];
  const int at_layer = spec.effective_layer();
  return [scaled, at_layer](int layer, std::span<double> resid) {
    if (layer != at_layer) return;
    if (resid.size() != scaled.size()) throw ValidationError("intervention dimension mismatch");
    for (std::size_t i = 0; i < scaled.size(); ++i) resid[i] -= scaled[i];
  };
}

InterventionHandle::InterventionHandle(toy::ToyModel& model, const InterventionSpec& spec)
    : model_(model) {
  if (spec.kind == InterventionKind::actadd &&
      (spec.effective_layer() < 0 || spec.effective_layer() >= model.config().layers)) {
    throw ValidationError("intervention layer out of range");
  }
  model_.set_intervention(make_resid_hook(spec));
}

InterventionHandle::~InterventionHandle() { model_.clear_intervention(); }

ToySteerable::ToySteerable(std::shared_ptr<toy::ToyModel> model)
    : model_(std::move(model)), template_(tokenizer_) {
  if (!model_) throw ValidationError("steerable adapter needs a model");
}

int ToySteerable::num_layers() const { return model_->config().layers; }
int ToySteerable::hidden_size() const { return model_->config().hidden; }

std::vector<std::vector<double>> ToySteerable::capture(const std::string& instruction) {
  ChatTranscript t = ChatTranscript::from_user(instruction);
  return model_->residual_activations(template_.render_generation_prompt(t), -1);
}

std::string ToySteerable::generate_with(const std::string& instruction,
                                        const InterventionSpec* spec, int max_new_tokens) {
  ChatTranscript t = ChatTranscript::from_user(instruction);
  const std::vector<int> prompt = template_.render_generation_prompt(t);
  std::vector<int> generated;
  if (spec) {
    InterventionHandle handle(*model_, *spec);
    generated = model_->generate_tokens(prompt, max_new_tokens, 0.0, 0, tokenizer_.eos_id());
  } else {
    generated = model_->generate_tokens(prompt, max_new_tokens, 0.0, 0, tokenizer_.eos_id());
  }
  return tokenizer_.decode(generated);
}

std::vector<LensEntry> logit_lens(const toy::ToyModel& model, const toy::ToyTokenizer& tokenizer,
                                  const std::vector<int>& tokens, int layer, int k) {
  if (k < 1) throw ValidationError("logit lens needs k >= 1");
  const std::vector<double> probs = model.lens_distribution(tokens, layer);
  std::vector<int> order(probs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
  std::vector<LensEntry> out;
  const int count = std::min<int>(k, static_cast<int>(probs.size()));
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    LensEntry e;
    e.token_id = order[static_cast<std::size_t>(i)];
    e.probability = probs[static_cast<std::size_t>(e.token_id)];
    e.token_text = tokenizer.decode_token(e.token_id);
    out.push_back(std::move(e));
  }
  return out;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ValidationError("kl_divergence: dimension mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) throw ValidationError("kl_divergence: q has zero mass where p does not");
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

KldReport kld_pre_post(const toy::ToyModel& pre, const toy::ToyModel& post,
                       const std::vector<std::pair<std::string, std::string>>& items) {
  if (items.empty()) throw ValidationError("kld_pre_post needs items");
  if (pre.config().vocab != post.config().vocab) {
    throw ValidationError("models do not share a vocabulary/tokenizer");
  }
  toy::ToyTokenizer tokenizer;
  toy::ChatTemplate chat_template(tokenizer);

  KldReport report;
  std::size_t max_len = 0;
  for (const auto& [instruction, response] : items) {
    const std::vector<int> prompt = chat_template.render_example_prompt("", instruction);
    const std::vector<int> response_tokens = tokenizer.encode(response);
    if (response_tokens.empty()) throw ValidationError("response tokenizes to zero tokens");
    std::vector<int> full = prompt;
    full.insert(full.end(), response_tokens.begin(), response_tokens.end());

    const auto logits_pre = pre.forward_logits(full);
    const auto logits_post = post.forward_logits(full);
    std::vector<double> kls;
    kls.reserve(response_tokens.size());
    const int V = pre.config().vocab;
    std::vector<double> p(static_cast<std::size_t>(V)), q(static_cast<std::size_t>(V));
    for (std::size_t t = 0; t < response_tokens.size(); ++t) {
      const std::size_t pos = prompt.size() + t - 1;  // position predicting response token t
      // softmax both rows
      auto softmax_into = [V](const std::vector<double>& row, std::vector<double>& out_probs) {
        double mx = row[0];
        for (double x : row) mx = std::max(mx, x);
        double sum = 0.0;
        for (int i = 0; i < V; ++i) {
          out_probs[static_cast<std::size_t>(i)] = std::exp(row[static_cast<std::size_t>(i)] - mx);
          sum += out_probs[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < V; ++i) out_probs[static_cast<std::size_t>(i)] /= sum;
      };
      softmax_into(logits_post[pos], p);
      softmax_into(logits_pre[pos], q);
      kls.push_back(kl_divergence(p, q));
    }
    max_len = std::max(max_len, kls.size());
    report.per_item.push_back(std::move(kls));
  }

  report.per_position_mean.assign(max_len, 0.0);
  std::vector<long> counts(max_len, 0);
  double total = 0.0;
  long total_count = 0;
  for (const auto& kls : report.per_item) {
    for (std::size_t t = 0; t < kls.size(); ++t) {
      report.per_position_mean[t] += kls[t];
      ++counts[t];
      total += kls[t];
      ++total_count;
    }
  }
  for (std::size_t t = 0; t < max_len; ++t) {
    report.per_position_mean[t] /= static_cast<double>(counts[t]);
  }
  report.overall_mean = total / static_cast<double>(total_count);
  return report;
}

namespace {

/// Cyclic Jacobi eigensolver for a symmetric matrix (row-major, size d).
/// Returns eigenvalues and eigenvectors as columns of V.
void jacobi_eigen(std::vector<double> a, int d, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
  eigvecs.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) eigvecs[static_cast<std::size_t>(i) * d + i] = 1.0;
  auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r) * d + c];
  };
  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < d; ++i) {
      for (int j = i + 1; j < d; ++j) off += at(a, i, j) * at(a, i, j);
    }
    if (off < 1e-24) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = at(a, p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < d; ++k) {
          const double akp = at(a, k, p);
          const double akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = at(a, p, k);
          const double aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          const double vkp = at(eigvecs, k, p);
          const double vkq = at(eigvecs, k, q);
          at(eigvecs, k, p) = c * vkp - s * vkq;
          at(eigvecs, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.assign(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) eigvals[static_cast<std::size_t>(i)] = at(a, i, i);
}

}  // namespace

PcaResult pca_activations(const std::vector<std::vector<double>>& harmful_acts,
                          const std::vector<std::vector<double>>& benign_acts, int dims) {
  if (dims < 1) throw ValidationError("pca needs dims >= 1");
  if (static_cast<int>(harmful_acts.size()) < dims + 1 ||
      static_cast<int>(benign_acts.size()) < dims + 1) {
    throw ValidationError("pca needs at least dims+1 samples per class");
  }
  const std::size_t d = harmful_acts[0].size();
  for (const auto& v : harmful_acts) {
    if (v.size() != d) throw ValidationError("pca sample dimension mismatch");
  }
  for (const auto& v : benign_acts) {
    if (v.size() != d) throw ValidationError("pca sample dimension mismatch");
  }
  if (static_cast<std::size_t>(dims) > d) throw ValidationError("dims exceeds sample dimension");

  const std::size_t n = harmful_acts.size() + benign_acts.size();
  std::vector<double> mean(d, 0.0);
  auto add_mean = [&](const std::vector<std::vector<double>>& acts) {
    for (const auto& v : acts) {
      for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
    }
  };
  add_mean(harmful_acts);
  add_mean(benign_acts);
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<double> cov(d * d, 0.0);
  auto add_cov = [&](const std::vector<std::vector<double>>& acts) {
    for (const auto& v : acts) {
      for (std::size_t i = 0; i < d; ++i) {
        const double ci = v[i] - mean[i];
        for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += ci * (v[j] - mean[j]);
      }
    }
  };
  add_cov(harmful_acts);
  add_cov(benign_acts);
  for (auto& c : cov) c /= static_cast<double>(n - 1);

  std::vector<double> eigvals, eigvecs;
  jacobi_eigen(cov, static_cast<int>(d), eigvals, eigvecs);

  std::vector<int> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return eigvals[static_cast<std::size_t>(x)] > eigvals[static_cast<std::size_t>(y)];
  });

  double trace = 0.0;
  for (double ev : eigvals) trace += std::max(ev, 0.0);
  if (trace <= 0.0) throw ValidationError("pca: rank-deficient data (zero total variance)");

  PcaResult result;
  result.mean = mean;
  for (int c = 0; c < dims; ++c) {
    const int idx = order[static_cast<std::size_t>(c)];
    const double ev = eigvals[static_cast<std::size_t>(idx)];
    if (ev <= 1e-12 * trace) {
      throw ValidationError("pca: rank deficiency below requested dims");
    }
    std::vector<double> component(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      component[i] = eigvecs[i * d + static_cast<std::size_t>(idx)];
    }
    result.components.push_back(std::move(component));
    result.explained_variance_ratio.push_back(ev / trace);
  }

  auto project = [&](const std::vector<std::vector<double>>& acts) {
    std::vector<std::vector<double>> out;
    out.reserve(acts.size());
    for (const auto& v : acts) {
      std::vector<double> point(static_cast<std::size_t>(dims), 0.0);
      for (int c = 0; c < dims; ++c) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          dot += (v[i] - mean[i]) * result.components[static_cast<std::size_t>(c)][i];
        }
        point[static_cast<std::size_t>(c)] = dot;
      }
      out.push_back(std::move(point));
    }
    return out;
  };
  result.projected_harmful = project(harmful_acts);
  result.projected_benign = project(benign_acts);
  return result;
}

void save_direction_set(const std::filesystem::path& path, const DirectionSet& set) {
  std::vector<nlohmann::json> records;
  for (const auto& [layer, direction] : set.directions) {
    records.push_back({{"layer", layer},
                       {"vector", direction},
                       {"norm", set.norms.count(layer) ? set.norms.at(layer) : vector_norm(direction)}});
  }
  nlohmann::json tail;
  if (set.optimal_layer) {
    tail["optimal_layer"] = *set.optimal_layer;
  } else {
    tail["optimal_layer"] = nullptr;
  }
  records.push_back(std::move(tail));
  write_jsonl(path, records);
}

DirectionSet load_direction_set(const std::filesystem::path& path) {
  DirectionSet set;
  for (const auto& r : read_jsonl(path)) {
    if (r.contains("optimal_layer")) {
      if (!r.at("optimal_layer").is_null()) set.optimal_layer = r.at("optimal_layer").get<int>();
      continue;
    }
    const int layer = r.at("layer").get<int>();
    set.directions[layer] = r.at("vector").get<std::vector<double>>();
    set.norms[layer] = r.at("norm").get<double>();
  }
  if (set.directions.empty()) throw ValidationError("direction set file has no direction records");
  return set;
}

}  // namespace intentguard
