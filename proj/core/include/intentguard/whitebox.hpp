#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "intentguard/evaluation.hpp"
#include "intentguard/toy/chat_template.hpp"
#include "intentguard/toy/tokenizer.hpp"
#include "intentguard/toy/transformer.hpp"

namespace intentguard {

struct ActivationVector {
  int layer = 0;
  int position = -1;  // -1 = last token
  std::vector<double> values;
};

/// Per-layer difference-in-means directions with their Euclidean norms and,
/// once selected, the optimal layer.
struct DirectionSet {
  std::map<int, std::vector<double>> directions;
  std::map<int, double> norms;
  std::optional<int> optimal_layer;
};

enum class InterventionKind { ablation, actadd };

/// Ablation removes the component along the chosen direction from the
/// residual stream at every layer; actadd subtracts alpha times the direction
/// at the chosen layer only. A zero direction makes either an identity.
struct InterventionSpec {
  InterventionKind kind = InterventionKind::ablation;
  DirectionSet source;
  std::optional<int> source_layer;  // defaults to source.optimal_layer
  double alpha = 2.0;

  int effective_layer() const;
  const std::vector<double>& direction() const;
};

/// Minimal surface for activation-capable models: capture per-layer residual
/// activations for an instruction and generate with an optional intervention.
class SteerableModel {
 public:
  virtual ~SteerableModel() = default;
  virtual int num_layers() const = 0;
  virtual int hidden_size() const = 0;
  virtual std::vector<std::vector<double>> capture(const std::string& instruction) = 0;
  virtual std::string generate_with(const std::string& instruction, const InterventionSpec* spec,
                                    int max_new_tokens) = 0;
};

/// Projection removal: z - (v_hat . z) v_hat. Throws on a zero direction.
std::vector<double> ablate(const std::vector<double>& z, const std::vector<double>& v);

/// z - alpha * v, elementwise.
std::vector<double> act_add(const std::vector<double>& z, const std::vector<double>& v,
                            double alpha);

double vector_norm(const std::vector<double>& v);

/// Per-layer mean(harmful) - mean(benign) over activation sets indexed
/// [sample][layer][dim].
std::map<int, std::vector<double>> difference_in_means(
    const std::vector<std::vector<std::vector<double>>>& harmful_acts,
    const std::vector<std::vector<std::vector<double>>>& benign_acts);

/// Difference-in-means refusal directions per layer, captured at the last
/// instruction token. optimal_layer stays unset until selection.
DirectionSet refusal_direction(SteerableModel& model, const std::vector<std::string>& harmful,
                               const std::vector<std::string>& benign);

struct LayerSelection {
  DirectionSet set;                    // optimal_layer filled in
  std::map<int, double> refusal_rates; // per candidate layer
};

/// Sweeps every candidate layer's direction (applied via ablation), measures
/// the refusal rate on the validation set, and picks the argmin; ties break
/// toward the shallower layer.
LayerSelection select_optimal_layer(SteerableModel& model, DirectionSet directions,
                                    const std::vector<std::string>& validation_harmful,
                                    const RefusalMatcher& matcher = RefusalMatcher(),
                                    int max_new_tokens = 64);

/// Residual-stream hook realizing the intervention (identity for a zero
/// direction).
toy::ResidHook make_resid_hook(const InterventionSpec& spec);

/// RAII installation of an intervention on a toy model; the destructor
/// restores the clean model.
class InterventionHandle {
 public:
  InterventionHandle(toy::ToyModel& model, const InterventionSpec& spec);
  ~InterventionHandle();
  InterventionHandle(const InterventionHandle&) = delete;
  InterventionHandle& operator=(const InterventionHandle&) = delete;

 private:
  toy::ToyModel& model_;
};

/// Adapter exposing a ToyModel as a SteerableModel.
class ToySteerable : public SteerableModel {
 public:
  explicit ToySteerable(std::shared_ptr<toy::ToyModel> model);

  int num_layers() const override;
  int hidden_size() const override;
  std::vector<std::vector<double>> capture(const std::string& instruction) override;
  std::string generate_with(const std::string& instruction, const InterventionSpec* spec,
                            int max_new_tokens) override;

  toy::ToyModel& model() { return *model_; }

 private:
  std::shared_ptr<toy::ToyModel> model_;
  toy::ToyTokenizer tokenizer_;
  toy::ChatTemplate template_;
};

struct LensEntry {
  int token_id = 0;
  double probability = 0.0;
  std::string token_text;
};

/// Early unembedding of the residual stream at `layer` (final normalization,
/// then unembedding), softmaxed; top-k entries in descending probability.
std::vector<LensEntry> logit_lens(const toy::ToyModel& model, const toy::ToyTokenizer& tokenizer,
                                  const std::vector<int>& tokens, int layer, int k);

/// KL(p || q) over two distributions on the same support.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

struct KldReport {
  std::vector<double> per_position_mean;           // index = response token position
  std::vector<std::vector<double>> per_item;       // [item][position]
  double overall_mean = 0.0;
};

/// Per-position KL(post || pre) of next-token distributions over each
/// (instruction, response) pair, teacher-forced through both models.
/// per_position_mean has one entry per response token position up to the
/// longest response; shorter items drop out of later positions.
KldReport kld_pre_post(const toy::ToyModel& pre, const toy::ToyModel& post,
                       const std::vector<std::pair<std::string, std::string>>& items);

struct PcaResult {
  std::vector<std::vector<double>> projected_harmful;  // [sample][dims]
  std::vector<std::vector<double>> projected_benign;
  std::vector<double> explained_variance_ratio;        // length dims, non-increasing
  std::vector<std::vector<double>> components;         // [dims][hidden]
  std::vector<double> mean;                            // union mean
};

/// Shared-basis PCA fit on the union of both classes.
PcaResult pca_activations(const std::vector<std::vector<double>>& harmful_acts,
                          const std::vector<std::vector<double>>& benign_acts, int dims = 2);

/// Line-delimited {layer, vector, norm} records plus a final optimal_layer record.
void save_direction_set(const std::filesystem::path& path, const DirectionSet& set);
DirectionSet load_direction_set(const std::filesystem::path& path);

}  // namespace intentguard
