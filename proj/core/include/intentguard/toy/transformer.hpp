#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace intentguard::toy {

struct ToyConfig {
  int vocab = 32;
  int hidden = 16;
  int layers = 2;
  int heads = 2;
  int ff_mult = 4;
  int max_seq = 256;
  double init_std = 0.08;
  std::uint64_t seed = 0;

  int ff() const { return ff_mult * hidden; }
  int head_dim() const { return hidden / heads; }
};

/// Hook applied to the post-block residual stream at every position of every
/// forward pass. `layer` ranges over [0, config.layers).
using ResidHook = std::function<void(int layer, std::span<double> resid)>;

struct ParamBlock {
  std::vector<double> ln1_g, wq, wk, wv, wo;
  std::vector<double> ln2_g, w1, b1, w2, b2;
};

struct Params {
  std::vector<double> tok_emb, pos_emb;
  std::vector<ParamBlock> blocks;
  std::vector<double> lnf_g, unemb;

  /// Parameter tensors in a fixed canonical order (optimizer state aligns by index).
  std::vector<std::vector<double>*> tensors();
  std::vector<const std::vector<double>*> tensors() const;

  static Params shaped_like(const Params& other);  // same shapes, all zeros
};

/// One training sequence: `labels[t]` is the token the model should predict
/// at position t (normally tokens[t+1]); `loss_mask[t]` selects the positions
/// that contribute to the loss. Both have length tokens.size() - 1.
struct EncodedSequence {
  std::vector<int> tokens;
  std::vector<int> labels;
  std::vector<unsigned char> loss_mask;
};

/// Small decoder-only transformer: learned token + position embeddings,
/// pre-RMSNorm blocks (causal multi-head attention, GELU MLP), final RMSNorm,
/// untied unembedding. Double precision throughout; all randomness is seeded,
/// so equal inputs give byte-equal outputs.
class ToyModel {
 public:
  explicit ToyModel(ToyConfig config);

  const ToyConfig& config() const { return config_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  /// Logits at every position (T x V). `hook`, when given, overrides the
  /// installed intervention for this call.
  std::vector<std::vector<double>> forward_logits(const std::vector<int>& tokens,
                                                  const ResidHook* hook = nullptr) const;

  /// Next-token probability distribution at the last position.
  std::vector<double> next_distribution(const std::vector<int>& tokens,
                                        const ResidHook* hook = nullptr) const;

  /// Post-block residual activations (layers x hidden) at `position`
  /// (-1 = last position).
  std::vector<std::vector<double>> residual_activations(const std::vector<int>& tokens,
                                                        int position = -1,
                                                        const ResidHook* hook = nullptr) const;

  /// Early unembedding of the post-block residual at `layer`, last position:
  /// final RMSNorm then unembedding, softmaxed over the vocabulary.
  std::vector<double> lens_distribution(const std::vector<int>& tokens, int layer) const;

  /// Greedy (temperature 0) or seeded-sampled continuation; stops at eos_id
  /// or after max_new_tokens. Returns only the newly generated tokens.
  std::vector<int> generate_tokens(const std::vector<int>& prompt, int max_new_tokens,
                                   double temperature, std::uint64_t seed, int eos_id) const;

  /// Install/remove a persistent intervention applied by all forwards
  /// (exclusive use of the model is expected while one is installed).
  void set_intervention(ResidHook hook) { intervention_ = std::move(hook); }
  void clear_intervention() { intervention_ = nullptr; }
  bool has_intervention() const { return static_cast<bool>(intervention_); }

  /// Mean masked negative log-likelihood of one sequence (forward only).
  double masked_nll(const EncodedSequence& seq) const;

  /// Accumulates gradients for the batch into `grads` (shaped_like(params));
  /// returns the mean masked NLL. Ignores any installed intervention.
  double loss_and_gradients(const std::vector<EncodedSequence>& batch, Params& grads) const;

  void save(const std::filesystem::path& path) const;
  static ToyModel load(const std::filesystem::path& path);

 private:
  struct Workspace;
  void forward(const std::vector<int>& tokens, const ResidHook* hook, Workspace& ws) const;
  const ResidHook* effective_hook(const ResidHook* per_call) const;

  ToyConfig config_;
  Params params_;
  ResidHook intervention_;
};

/// Adam optimizer state over a Params shape.
class AdamState {
 public:
  explicit AdamState(const Params& shape);

  void step(Params& params, const Params& grads, double lr, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8);

  long step_count() const { return t_; }

 private:
  Params m_;
  Params v_;
  long t_ = 0;
};

}  // namespace intentguard::toy
