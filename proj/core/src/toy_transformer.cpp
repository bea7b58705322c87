#include "intentguard/toy/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/text_util.hpp"

namespace intentguard::toy {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

/// Iterated-splitmix PRNG; portable and fully determined by the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  double uniform() {
    state_ = intentguard::splitmix64(state_);
    return static_cast<double>(state_ >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

void fill_normal(std::vector<double>& v, std::size_t n, Rng& rng, double std_dev) {
  v.assign(n, 0.0);
  for (auto& x : v) x = rng.normal() * std_dev;
}

// y[T x out] = x[T x in] * w[in x out] (+ b[out])
void matmul(const double* x, const double* w, const double* b, double* y, int rows, int in,
            int out) {
  for (int t = 0; t < rows; ++t) {
    const double* xr = x + static_cast<std::size_t>(t) * in;
    double* yr = y + static_cast<std::size_t>(t) * out;
    if (b) {
      std::memcpy(yr, b, sizeof(double) * static_cast<std::size_t>(out));
    } else {
      std::fill(yr, yr + out, 0.0);
    }
    for (int i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wr = w + static_cast<std::size_t>(i) * out;
      for (int j = 0; j < out; ++j) yr[j] += xi * wr[j];
    }
  }
}

void rmsnorm_row(const double* x, const double* g, double* y, int d, double& r_out) {
  double ss = 0.0;
  for (int i = 0; i < d; ++i) ss += x[i] * x[i];
  const double r = std::sqrt(ss / d + kRmsEps);
  for (int i = 0; i < d; ++i) y[i] = g[i] * x[i] / r;
  r_out = r;
}

// Accumulates into dx and dg.
void rmsnorm_backward_row(const double* x, const double* g, const double* dy, double r, int d,
                          double* dx, double* dg) {
  double dot = 0.0;
  for (int i = 0; i < d; ++i) dot += dy[i] * g[i] * x[i];
  const double inv_r = 1.0 / r;
  const double scale = dot / (d * r * r * r);
  for (int i = 0; i < d; ++i) {
    dx[i] += dy[i] * g[i] * inv_r - x[i] * scale;
    dg[i] += dy[i] * x[i] * inv_r;
  }
}

void softmax_row(const double* logits, double* probs, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (int i = 0; i < n; ++i) probs[i] /= sum;
}

}  // namespace

std::vector<std::vector<double>*> Params::tensors() {
  std::vector<std::vector<double>*> out{&tok_emb, &pos_emb};
  for (auto& b : blocks) {
    out.insert(out.end(),
               {&b.ln1_g, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.w1, &b.b1, &b.w2, &b.b2});
  }
  out.push_back(&lnf_g);
  out.push_back(&unemb);
  return out;
}

std::vector<const std::vector<double>*> Params::tensors() const {
  std::vector<const std::vector<double>*> out{&tok_emb, &pos_emb};
  for (const auto& b : blocks) {
    out.insert(out.end(),
               {&b.ln1_g, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.w1, &b.b1, &b.w2, &b.b2});
  }
  out.push_back(&lnf_g);
  out.push_back(&unemb);
  return out;
}

Params Params::shaped_like(const Params& other) {
  Params p;
  p.tok_emb.assign(other.tok_emb.size(), 0.0);
  p.pos_emb.assign(other.pos_emb.size(), 0.0);
  p.blocks.resize(other.blocks.size());
  for (std::size_t i = 0; i < other.blocks.size(); ++i) {
    const auto& ob = other.blocks[i];
    auto& pb = p.blocks[i];
    pb.ln1_g.assign(ob.ln1_g.size(), 0.0);
    pb.wq.assign(ob.wq.size(), 0.0);
    pb.wk.assign(ob.wk.size(), 0.0);
    pb.wv.assign(ob.wv.size(), 0.0);
    pb.wo.assign(ob.wo.size(), 0.0);
    pb.ln2_g.assign(ob.ln2_g.size(), 0.0);
    pb.w1.assign(ob.w1.size(), 0.0);
    pb.b1.assign(ob.b1.size(), 0.0);
    pb.w2.assign(ob.w2.size(), 0.0);
    pb.b2.assign(ob.b2.size(), 0.0);
  }
  p.lnf_g.assign(other.lnf_g.size(), 0.0);
  p.unemb.assign(other.unemb.size(), 0.0);
  return p;
}

struct ToyModel::Workspace {
  struct BlockCache {
    std::vector<double> x_in, n1, rms1;
    std::vector<double> q, k, v;
    std::vector<double> att;      // H*T*T
    std::vector<double> att_out;  // concat heads, pre-projection
    std::vector<double> resid_mid, n2, rms2;
    std::vector<double> ff_pre, ff_act;
  };

  int T = 0;
  std::vector<double> x0;
  std::vector<BlockCache> blocks;
  std::vector<double> x_final;  // residual after the last block (post-hook)
  std::vector<double> lnf_out, rmsf, logits;

  // Post-hook residual after block b (what downstream layers see).
  const std::vector<double>& resid_post(int b, int layers) const {
    return (b + 1 < layers) ? blocks[static_cast<std::size_t>(b) + 1].x_in : x_final;
  }
};

ToyModel::ToyModel(ToyConfig config) : config_(config) {
  if (config_.vocab < 2 || config_.hidden < 1 || config_.layers < 1 || config_.heads < 1 ||
      config_.max_seq < 2) {
    throw ValidationError("invalid toy model configuration");
  }
  if (config_.hidden % config_.heads != 0) {
    throw ValidationError("hidden size must divide evenly into heads");
  }
  const int d = config_.hidden;
  const int V = config_.vocab;
  const int ff = config_.ff();
  Rng rng(splitmix64(config_.seed ^ 0x746f796d6f64656cull));
  fill_normal(params_.tok_emb, static_cast<std::size_t>(V) * d, rng, config_.init_std);
  fill_normal(params_.pos_emb, static_cast<std::size_t>(config_.max_seq) * d, rng, config_.init_std);
  params_.blocks.resize(static_cast<std::size_t>(config_.layers));
  for (auto& b : params_.blocks) {
    b.ln1_g.assign(static_cast<std::size_t>(d), 1.0);
    fill_normal(b.wq, static_cast<std::size_t>(d) * d, rng, config_.init_std);
    fill_normal(b.wk, static_cast<std::size_t>(d) * d, rng, config_.init_std);
    fill_normal(b.wv, static_cast<std::size_t>(d) * d, rng, config_.init_std);
    fill_normal(b.wo, static_cast<std::size_t>(d) * d, rng, config_.init_std);
    b.ln2_g.assign(static_cast<std::size_t>(d), 1.0);
    fill_normal(b.w1, static_cast<std::size_t>(d) * ff, rng, config_.init_std);
    b.b1.assign(static_cast<std::size_t>(ff), 0.0);
    fill_normal(b.w2, static_cast<std::size_t>(ff) * d, rng, config_.init_std);
    b.b2.assign(static_cast<std::size_t>(d), 0.0);
  }
  params_.lnf_g.assign(static_cast<std::size_t>(d), 1.0);
  fill_normal(params_.unemb, static_cast<std::size_t>(d) * V, rng, config_.init_std);
}

const ResidHook* ToyModel::effective_hook(const ResidHook* per_call) const {
  if (per_call) return per_call;
  if (intervention_) return &intervention_;
  return nullptr;
}

void ToyModel::forward(const std::vector<int>& tokens, const ResidHook* hook, Workspace& ws) const {
  const int T = static_cast<int>(tokens.size());
  const int d = config_.hidden;
  const int V = config_.vocab;
  const int H = config_.heads;
  const int hd = config_.head_dim();
  const int ff = config_.ff();
  if (T < 1) throw ValidationError("empty token sequence");
  if (T > config_.max_seq) throw ValidationError("sequence exceeds model max_seq");
  for (int tok : tokens) {
    if (tok < 0 || tok >= V) throw ValidationError("token id out of vocabulary range");
  }

  ws.T = T;
  const std::size_t Td = static_cast<std::size_t>(T) * d;
  ws.x0.assign(Td, 0.0);
  for (int t = 0; t < T; ++t) {
    const double* te = params_.tok_emb.data() + static_cast<std::size_t>(tokens[t]) * d;
    const double* pe = params_.pos_emb.data() + static_cast<std::size_t>(t) * d;
    double* xr = ws.x0.data() + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) xr[i] = te[i] + pe[i];
  }

  ws.blocks.assign(static_cast<std::size_t>(config_.layers), {});
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::vector<double>* cur = &ws.x0;

  for (int b = 0; b < config_.layers; ++b) {
    auto& cache = ws.blocks[static_cast<std::size_t>(b)];
    cache.x_in = *cur;
    cache.n1.assign(Td, 0.0);
    cache.rms1.assign(static_cast<std::size_t>(T), 0.0);
    const auto& pb = params_.blocks[static_cast<std::size_t>(b)];
    for (int t = 0; t < T; ++t) {
      rmsnorm_row(cache.x_in.data() + static_cast<std::size_t>(t) * d, pb.ln1_g.data(),
                  cache.n1.data() + static_cast<std::size_t>(t) * d, d,
                  cache.rms1[static_cast<std::size_t>(t)]);
    }
    cache.q.assign(Td, 0.0);
    cache.k.assign(Td, 0.0);
    cache.v.assign(Td, 0.0);
    matmul(cache.n1.data(), pb.wq.data(), nullptr, cache.q.data(), T, d, d);
    matmul(cache.n1.data(), pb.wk.data(), nullptr, cache.k.data(), T, d, d);
    matmul(cache.n1.data(), pb.wv.data(), nullptr, cache.v.data(), T, d, d);

    cache.att.assign(static_cast<std::size_t>(H) * T * T, 0.0);
    cache.att_out.assign(Td, 0.0);
    std::vector<double> scores(static_cast<std::size_t>(T), 0.0);
    for (int h = 0; h < H; ++h) {
      const int off = h * hd;
      for (int t = 0; t < T; ++t) {
        const double* qt = cache.q.data() + static_cast<std::size_t>(t) * d + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (int s = 0; s <= t; ++s) {
          const double* ks = cache.k.data() + static_cast<std::size_t>(s) * d + off;
          double dot = 0.0;
          for (int c = 0; c < hd; ++c) dot += qt[c] * ks[c];
          scores[static_cast<std::size_t>(s)] = dot * inv_sqrt_hd;
          mx = std::max(mx, scores[static_cast<std::size_t>(s)]);
        }
        double sum = 0.0;
        double* arow = cache.att.data() +
                       (static_cast<std::size_t>(h) * T + static_cast<std::size_t>(t)) * T;
        for (int s = 0; s <= t; ++s) {
          arow[s] = std::exp(scores[static_cast<std::size_t>(s)] - mx);
          sum += arow[s];
        }
        double* ot = cache.att_out.data() + static_cast<std::size_t>(t) * d + off;
        for (int s = 0; s <= t; ++s) {
          arow[s] /= sum;
          const double* vs = cache.v.data() + static_cast<std::size_t>(s) * d + off;
          for (int c = 0; c < hd; ++c) ot[c] += arow[s] * vs[c];
        }
      }
    }

    cache.resid_mid.assign(Td, 0.0);
    matmul(cache.att_out.data(), pb.wo.data(), nullptr, cache.resid_mid.data(), T, d, d);
    for (std::size_t i = 0; i < Td; ++i) cache.resid_mid[i] += cache.x_in[i];

    cache.n2.assign(Td, 0.0);
    cache.rms2.assign(static_cast<std::size_t>(T), 0.0);
    for (int t = 0; t < T; ++t) {
      rmsnorm_row(cache.resid_mid.data() + static_cast<std::size_t>(t) * d, pb.ln2_g.data(),
                  cache.n2.data() + static_cast<std::size_t>(t) * d, d,
                  cache.rms2[static_cast<std::size_t>(t)]);
    }
    cache.ff_pre.assign(static_cast<std::size_t>(T) * ff, 0.0);
    matmul(cache.n2.data(), pb.w1.data(), pb.b1.data(), cache.ff_pre.data(), T, d, ff);
    cache.ff_act.assign(static_cast<std::size_t>(T) * ff, 0.0);
    for (std::size_t i = 0; i < cache.ff_pre.size(); ++i) cache.ff_act[i] = gelu(cache.ff_pre[i]);

    std::vector<double> resid_post(Td, 0.0);
    matmul(cache.ff_act.data(), pb.w2.data(), pb.b2.data(), resid_post.data(), T, ff, d);
    for (std::size_t i = 0; i < Td; ++i) resid_post[i] += cache.resid_mid[i];

    if (hook && *hook) {
      for (int t = 0; t < T; ++t) {
        (*hook)(b, std::span<double>(resid_post.data() + static_cast<std::size_t>(t) * d,
                                     static_cast<std::size_t>(d)));
      }
    }

    if (b + 1 < config_.layers) {
      ws.blocks[static_cast<std::size_t>(b) + 1].x_in = std::move(resid_post);
      cur = &ws.blocks[static_cast<std::size_t>(b) + 1].x_in;
    } else {
      ws.x_final = std::move(resid_post);
      cur = &ws.x_final;
    }
  }

  ws.lnf_out.assign(Td, 0.0);
  ws.rmsf.assign(static_cast<std::size_t>(T), 0.0);
  for (int t = 0; t < T; ++t) {
    rmsnorm_row(ws.x_final.data() + static_cast<std::size_t>(t) * d, params_.lnf_g.data(),
                ws.lnf_out.data() + static_cast<std::size_t>(t) * d, d,
                ws.rmsf[static_cast<std::size_t>(t)]);
  }
  ws.logits.assign(static_cast<std::size_t>(T) * V, 0.0);
  matmul(ws.lnf_out.data(), params_.unemb.data(), nullptr, ws.logits.data(), T, d, V);
}

std::vector<std::vector<double>> ToyModel::forward_logits(const std::vector<int>& tokens,
                                                          const ResidHook* hook) const {
  Workspace ws;
  forward(tokens, effective_hook(hook), ws);
  const int V = config_.vocab;
  std::vector<std::vector<double>> out(static_cast<std::size_t>(ws.T));
  for (int t = 0; t < ws.T; ++t) {
    out[static_cast<std::size_t>(t)].assign(
        ws.logits.begin() + static_cast<std::ptrdiff_t>(t) * V,
        ws.logits.begin() + static_cast<std::ptrdiff_t>(t + 1) * V);
  }
  return out;
}

std::vector<double> ToyModel::next_distribution(const std::vector<int>& tokens,
                                                const ResidHook* hook) const {
  Workspace ws;
  forward(tokens, effective_hook(hook), ws);
  const int V = config_.vocab;
  std::vector<double> probs(static_cast<std::size_t>(V), 0.0);
  softmax_row(ws.logits.data() + static_cast<std::size_t>(ws.T - 1) * V, probs.data(), V);
  return probs;
}

std::vector<std::vector<double>> ToyModel::residual_activations(const std::vector<int>& tokens,
                                                                int position,
                                                                const ResidHook* hook) const {
  Workspace ws;
  forward(tokens, effective_hook(hook), ws);
  const int d = config_.hidden;
  int pos = position < 0 ? ws.T - 1 : position;
  if (pos < 0 || pos >= ws.T) throw ValidationError("activation position out of range");
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(config_.layers));
  for (int b = 0; b < config_.layers; ++b) {
    const auto& resid = ws.resid_post(b, config_.layers);
    out.emplace_back(resid.begin() + static_cast<std::ptrdiff_t>(pos) * d,
                     resid.begin() + static_cast<std::ptrdiff_t>(pos + 1) * d);
  }
  return out;
}

std::vector<double> ToyModel::lens_distribution(const std::vector<int>& tokens, int layer) const {
  if (layer < 0 || layer >= config_.layers) throw ValidationError("lens layer out of range");
  Workspace ws;
  forward(tokens, effective_hook(nullptr), ws);
  const int d = config_.hidden;
  const int V = config_.vocab;
  const auto& resid = ws.resid_post(layer, config_.layers);
  std::vector<double> normed(static_cast<std::size_t>(d), 0.0);
  double r = 0.0;
  rmsnorm_row(resid.data() + static_cast<std::size_t>(ws.T - 1) * d, params_.lnf_g.data(),
              normed.data(), d, r);
  std::vector<double> logits(static_cast<std::size_t>(V), 0.0);
  matmul(normed.data(), params_.unemb.data(), nullptr, logits.data(), 1, d, V);
  std::vector<double> probs(static_cast<std::size_t>(V), 0.0);
  softmax_row(logits.data(), probs.data(), V);
  return probs;
}

std::vector<int> ToyModel::generate_tokens(const std::vector<int>& prompt, int max_new_tokens,
                                           double temperature, std::uint64_t seed,
                                           int eos_id) const {
  if (prompt.empty()) throw ValidationError("prompt must be non-empty");
  std::vector<int> tokens = prompt;
  std::vector<int> generated;
  Rng rng(splitmix64(seed ^ 0x67656e6572617465ull));
  for (int step = 0; step < max_new_tokens; ++step) {
    if (static_cast<int>(tokens.size()) >= config_.max_seq) break;
    std::vector<double> probs = next_distribution(tokens, nullptr);
    int next = 0;
    if (temperature <= 0.0) {
      next = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    } else {
      // Re-softmax at the requested temperature.
      std::vector<double> logp(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) {
        logp[i] = std::log(std::max(probs[i], 1e-300)) / temperature;
      }
      std::vector<double> p(probs.size());
      softmax_row(logp.data(), p.data(), static_cast<int>(p.size()));
      double u = rng.uniform();
      double acc = 0.0;
      next = static_cast<int>(p.size()) - 1;
      for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    if (next == eos_id) break;
    tokens.push_back(next);
    generated.push_back(next);
  }
  return generated;
}

double ToyModel::masked_nll(const EncodedSequence& seq) const {
  const int T = static_cast<int>(seq.tokens.size());
  if (T < 2) throw ValidationError("sequence too short for next-token loss");
  if (seq.labels.size() != static_cast<std::size_t>(T - 1) ||
      seq.loss_mask.size() != static_cast<std::size_t>(T - 1)) {
    throw ValidationError("labels/loss_mask must have length tokens-1");
  }
  Workspace ws;
  forward(seq.tokens, nullptr, ws);
  const int V = config_.vocab;
  std::vector<double> probs(static_cast<std::size_t>(V), 0.0);
  double loss = 0.0;
  long count = 0;
  for (int t = 0; t < T - 1; ++t) {
    if (!seq.loss_mask[static_cast<std::size_t>(t)]) continue;
    const int label = seq.labels[static_cast<std::size_t>(t)];
    if (label < 0 || label >= V) throw ValidationError("label id out of vocabulary range");
    softmax_row(ws.logits.data() + static_cast<std::size_t>(t) * V, probs.data(), V);
    loss -= std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));
    ++count;
  }
  if (count == 0) throw ValidationError("sequence has no unmasked loss positions");
  return loss / static_cast<double>(count);
}

double ToyModel::loss_and_gradients(const std::vector<EncodedSequence>& batch, Params& grads) const {
  if (batch.empty()) throw ValidationError("empty batch");
  const int d = config_.hidden;
  const int V = config_.vocab;
  const int H = config_.heads;
  const int hd = config_.head_dim();
  const int ff = config_.ff();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  long total_mask = 0;
  for (const auto& seq : batch) {
    const int T = static_cast<int>(seq.tokens.size());
    if (T < 2 || seq.labels.size() != static_cast<std::size_t>(T - 1) ||
        seq.loss_mask.size() != static_cast<std::size_t>(T - 1)) {
      throw ValidationError("malformed training sequence");
    }
    for (auto m : seq.loss_mask) total_mask += m ? 1 : 0;
  }
  if (total_mask == 0) throw ValidationError("batch has no unmasked loss positions");

  double total_loss = 0.0;
  Workspace ws;
  for (const auto& seq : batch) {
    forward(seq.tokens, nullptr, ws);
    const int T = ws.T;
    const std::size_t Td = static_cast<std::size_t>(T) * d;

    // Loss and dlogits (scaled by 1/total_mask over the whole batch).
    std::vector<double> dlogits(static_cast<std::size_t>(T) * V, 0.0);
    std::vector<double> probs(static_cast<std::size_t>(V), 0.0);
    for (int t = 0; t < T - 1; ++t) {
      if (!seq.loss_mask[static_cast<std::size_t>(t)]) continue;
      const int label = seq.labels[static_cast<std::size_t>(t)];
      if (label < 0 || label >= V) throw ValidationError("label id out of vocabulary range");
      softmax_row(ws.logits.data() + static_cast<std::size_t>(t) * V, probs.data(), V);
      total_loss -= std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));
      double* dl = dlogits.data() + static_cast<std::size_t>(t) * V;
      const double scale = 1.0 / static_cast<double>(total_mask);
      for (int vv = 0; vv < V; ++vv) dl[vv] = probs[static_cast<std::size_t>(vv)] * scale;
      dl[label] -= scale;
    }

    // Unembedding backward.
    std::vector<double> dlnf(Td, 0.0);
    for (int t = 0; t < T; ++t) {
      const double* lnf = ws.lnf_out.data() + static_cast<std::size_t>(t) * d;
      const double* dl = dlogits.data() + static_cast<std::size_t>(t) * V;
      double* dn = dlnf.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) {
        const double* un = params_.unemb.data() + static_cast<std::size_t>(i) * V;
        double* dun = grads.unemb.data() + static_cast<std::size_t>(i) * V;
        double acc = 0.0;
        const double lv = lnf[i];
        for (int vv = 0; vv < V; ++vv) {
          acc += un[vv] * dl[vv];
          dun[vv] += lv * dl[vv];
        }
        dn[i] = acc;
      }
    }

    // Final RMSNorm backward.
    std::vector<double> dresid(Td, 0.0);
    for (int t = 0; t < T; ++t) {
      rmsnorm_backward_row(ws.x_final.data() + static_cast<std::size_t>(t) * d,
                           params_.lnf_g.data(), dlnf.data() + static_cast<std::size_t>(t) * d,
                           ws.rmsf[static_cast<std::size_t>(t)], d, dresid.data() + static_cast<std::size_t>(t) * d,
                           grads.lnf_g.data());
    }

    // Blocks in reverse. dresid holds d(resid_post) entering each step.
    for (int b = config_.layers - 1; b >= 0; --b) {
      const auto& cache = ws.blocks[static_cast<std::size_t>(b)];
      const auto& pb = params_.blocks[static_cast<std::size_t>(b)];
      auto& gb = grads.blocks[static_cast<std::size_t>(b)];

      // MLP branch: resid_post = resid_mid + ff_act*w2 + b2.
      std::vector<double> dff_act(static_cast<std::size_t>(T) * ff, 0.0);
      for (int t = 0; t < T; ++t) {
        const double* dm = dresid.data() + static_cast<std::size_t>(t) * d;
        const double* fa = cache.ff_act.data() + static_cast<std::size_t>(t) * ff;
        double* dfa = dff_act.data() + static_cast<std::size_t>(t) * ff;
        for (int j = 0; j < d; ++j) gb.b2[static_cast<std::size_t>(j)] += dm[j];
        for (int h = 0; h < ff; ++h) {
          const double* w2r = pb.w2.data() + static_cast<std::size_t>(h) * d;
          double* dw2r = gb.w2.data() + static_cast<std::size_t>(h) * d;
          double acc = 0.0;
          const double fav = fa[h];
          for (int j = 0; j < d; ++j) {
            acc += w2r[j] * dm[j];
            dw2r[j] += fav * dm[j];
          }
          dfa[h] = acc;
        }
      }
      std::vector<double> dn2(Td, 0.0);
      for (int t = 0; t < T; ++t) {
        const double* fp = cache.ff_pre.data() + static_cast<std::size_t>(t) * ff;
        double* dfa = dff_act.data() + static_cast<std::size_t>(t) * ff;
        const double* n2 = cache.n2.data() + static_cast<std::size_t>(t) * d;
        double* dn2r = dn2.data() + static_cast<std::size_t>(t) * d;
        for (int h = 0; h < ff; ++h) {
          const double dpre = dfa[h] * gelu_grad(fp[h]);
          gb.b1[static_cast<std::size_t>(h)] += dpre;
          dfa[h] = dpre;  // reuse as d(ff_pre)
        }
        for (int i = 0; i < d; ++i) {
          const double* w1r = pb.w1.data() + static_cast<std::size_t>(i) * ff;
          double* dw1r = gb.w1.data() + static_cast<std::size_t>(i) * ff;
          double acc = 0.0;
          const double n2v = n2[i];
          for (int h = 0; h < ff; ++h) {
            acc += w1r[h] * dfa[h];
            dw1r[h] += n2v * dfa[h];
          }
          dn2r[i] = acc;
        }
      }
      // RMSNorm 2 backward adds into d(resid_mid) which starts as dresid (identity path).
      std::vector<double> dresid_mid = dresid;
      for (int t = 0; t < T; ++t) {
        rmsnorm_backward_row(cache.resid_mid.data() + static_cast<std::size_t>(t) * d,
                             pb.ln2_g.data(), dn2.data() + static_cast<std::size_t>(t) * d,
                             cache.rms2[static_cast<std::size_t>(t)], d,
                             dresid_mid.data() + static_cast<std::size_t>(t) * d, gb.ln2_g.data());
      }

      // Attention branch: resid_mid = x_in + att_out*wo.
      std::vector<double> datt_out(Td, 0.0);
      for (int t = 0; t < T; ++t) {
        const double* dm = dresid_mid.data() + static_cast<std::size_t>(t) * d;
        const double* ao = cache.att_out.data() + static_cast<std::size_t>(t) * d;
        double* dao = datt_out.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) {
          const double* wor = pb.wo.data() + static_cast<std::size_t>(i) * d;
          double* dwor = gb.wo.data() + static_cast<std::size_t>(i) * d;
          double acc = 0.0;
          const double aov = ao[i];
          for (int j = 0; j < d; ++j) {
            acc += wor[j] * dm[j];
            dwor[j] += aov * dm[j];
          }
          dao[i] = acc;
        }
      }

      std::vector<double> dq(Td, 0.0), dk(Td, 0.0), dv(Td, 0.0);
      std::vector<double> da(static_cast<std::size_t>(T), 0.0);
      for (int h = 0; h < H; ++h) {
        const int off = h * hd;
        for (int t = 0; t < T; ++t) {
          const double* arow = cache.att.data() +
                               (static_cast<std::size_t>(h) * T + static_cast<std::size_t>(t)) * T;
          const double* daot = datt_out.data() + static_cast<std::size_t>(t) * d + off;
          // da[s] and dv accumulation.
          double dot_aa = 0.0;
          for (int s = 0; s <= t; ++s) {
            const double* vs = cache.v.data() + static_cast<std::size_t>(s) * d + off;
            double acc = 0.0;
            for (int c = 0; c < hd; ++c) acc += daot[c] * vs[c];
            da[static_cast<std::size_t>(s)] = acc;
            dot_aa += arow[s] * acc;
            double* dvs = dv.data() + static_cast<std::size_t>(s) * d + off;
            for (int c = 0; c < hd; ++c) dvs[c] += arow[s] * daot[c];
          }
          // Softmax backward, then scores -> q,k.
          const double* qt = cache.q.data() + static_cast<std::size_t>(t) * d + off;
          double* dqt = dq.data() + static_cast<std::size_t>(t) * d + off;
          for (int s = 0; s <= t; ++s) {
            const double ds = arow[s] * (da[static_cast<std::size_t>(s)] - dot_aa) * inv_sqrt_hd;
            const double* ks = cache.k.data() + static_cast<std::size_t>(s) * d + off;
            double* dks = dk.data() + static_cast<std::size_t>(s) * d + off;
            for (int c = 0; c < hd; ++c) {
              dqt[c] += ds * ks[c];
              dks[c] += ds * qt[c];
            }
          }
        }
      }

      // q/k/v projections backward into dn1 and weight grads.
      std::vector<double> dn1(Td, 0.0);
      for (int t = 0; t < T; ++t) {
        const double* n1 = cache.n1.data() + static_cast<std::size_t>(t) * d;
        double* dn1r = dn1.data() + static_cast<std::size_t>(t) * d;
        const double* dqr = dq.data() + static_cast<std::size_t>(t) * d;
        const double* dkr = dk.data() + static_cast<std::size_t>(t) * d;
        const double* dvr = dv.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) {
          const double n1v = n1[i];
          const double* wqr = pb.wq.data() + static_cast<std::size_t>(i) * d;
          const double* wkr = pb.wk.data() + static_cast<std::size_t>(i) * d;
          const double* wvr = pb.wv.data() + static_cast<std::size_t>(i) * d;
          double* dwqr = gb.wq.data() + static_cast<std::size_t>(i) * d;
          double* dwkr = gb.wk.data() + static_cast<std::size_t>(i) * d;
          double* dwvr = gb.wv.data() + static_cast<std::size_t>(i) * d;
          double acc = 0.0;
          for (int j = 0; j < d; ++j) {
            acc += wqr[j] * dqr[j] + wkr[j] * dkr[j] + wvr[j] * dvr[j];
            dwqr[j] += n1v * dqr[j];
            dwkr[j] += n1v * dkr[j];
            dwvr[j] += n1v * dvr[j];
          }
          dn1r[i] = acc;
        }
      }

      // RMSNorm 1 backward adds into d(x_in); identity path already there.
      std::vector<double> dx_in = dresid_mid;
      for (int t = 0; t < T; ++t) {
        rmsnorm_backward_row(cache.x_in.data() + static_cast<std::size_t>(t) * d, pb.ln1_g.data(),
                             dn1.data() + static_cast<std::size_t>(t) * d,
                             cache.rms1[static_cast<std::size_t>(t)], d,
                             dx_in.data() + static_cast<std::size_t>(t) * d, gb.ln1_g.data());
      }
      dresid = std::move(dx_in);
    }

    // Embedding backward.
    for (int t = 0; t < T; ++t) {
      const double* dx = dresid.data() + static_cast<std::size_t>(t) * d;
      double* dte = grads.tok_emb.data() + static_cast<std::size_t>(seq.tokens[static_cast<std::size_t>(t)]) * d;
      double* dpe = grads.pos_emb.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) {
        dte[i] += dx[i];
        dpe[i] += dx[i];
      }
    }
  }

  return total_loss / static_cast<double>(total_mask);
}

void ToyModel::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["config"] = {{"vocab", config_.vocab},   {"hidden", config_.hidden},
                 {"layers", config_.layers}, {"heads", config_.heads},
                 {"ff_mult", config_.ff_mult}, {"max_seq", config_.max_seq},
                 {"init_std", config_.init_std}, {"seed", config_.seed}};
  nlohmann::json p;
  p["tok_emb"] = params_.tok_emb;
  p["pos_emb"] = params_.pos_emb;
  p["lnf_g"] = params_.lnf_g;
  p["unemb"] = params_.unemb;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : params_.blocks) {
    blocks.push_back({{"ln1_g", b.ln1_g},
                      {"wq", b.wq},
                      {"wk", b.wk},
                      {"wv", b.wv},
                      {"wo", b.wo},
                      {"ln2_g", b.ln2_g},
                      {"w1", b.w1},
                      {"b1", b.b1},
                      {"w2", b.w2},
                      {"b2", b.b2}});
  }
  p["blocks"] = std::move(blocks);
  j["params"] = std::move(p);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write checkpoint: " + path.string());
  out << j.dump();
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  const auto& c = j.at("config");
  ToyConfig config;
  config.vocab = c.at("vocab").get<int>();
  config.hidden = c.at("hidden").get<int>();
  config.layers = c.at("layers").get<int>();
  config.heads = c.at("heads").get<int>();
  config.ff_mult = c.at("ff_mult").get<int>();
  config.max_seq = c.at("max_seq").get<int>();
  config.init_std = c.at("init_std").get<double>();
  config.seed = c.at("seed").get<std::uint64_t>();
  ToyModel model(config);
  const auto& p = j.at("params");
  model.params_.tok_emb = p.at("tok_emb").get<std::vector<double>>();
  model.params_.pos_emb = p.at("pos_emb").get<std::vector<double>>();
  model.params_.lnf_g = p.at("lnf_g").get<std::vector<double>>();
  model.params_.unemb = p.at("unemb").get<std::vector<double>>();
  const auto& blocks = p.at("blocks");
  if (blocks.size() != model.params_.blocks.size()) {
    throw ValidationError("checkpoint block count mismatch");
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = model.params_.blocks[i];
    const auto& jb = blocks[i];
    b.ln1_g = jb.at("ln1_g").get<std::vector<double>>();
    b.wq = jb.at("wq").get<std::vector<double>>();
    b.wk = jb.at("wk").get<std::vector<double>>();
    b.wv = jb.at("wv").get<std::vector<double>>();
    b.wo = jb.at("wo").get<std::vector<double>>();
    b.ln2_g = jb.at("ln2_g").get<std::vector<double>>();
    b.w1 = jb.at("w1").get<std::vector<double>>();
    b.b1 = jb.at("b1").get<std::vector<double>>();
    b.w2 = jb.at("w2").get<std::vector<double>>();
    b.b2 = jb.at("b2").get<std::vector<double>>();
  }
  return model;
}

AdamState::AdamState(const Params& shape)
    : m_(Params::shaped_like(shape)), v_(Params::shaped_like(shape)) {}

void AdamState::step(Params& params, const Params& grads, double lr, double beta1, double beta2,
                     double eps) {
  ++t_;
  auto ps = params.tensors();
  auto gs = grads.tensors();
  auto ms = m_.tensors();
  auto vs = v_.tensors();
  if (ps.size() != gs.size() || ps.size() != ms.size()) {
    throw ValidationError("optimizer state shape mismatch");
  }
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& p = *ps[k];
    const auto& g = *gs[k];
    auto& m = *ms[k];
    auto& v = *vs[k];
    if (p.size() != g.size()) throw ValidationError("gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace intentguard::toy
