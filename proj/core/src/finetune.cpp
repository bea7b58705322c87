#include "intentguard/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/jsonl.hpp"
#include "intentguard/text_util.hpp"

namespace intentguard {

void SFTHyper::validate() const {
  if (epochs <= 0) throw ValidationError("epochs must be positive");
  if (learning_rate <= 0.0) throw ValidationError("learning_rate must be positive");
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (grad_accum <= 0) throw ValidationError("grad_accum must be positive");
}

ModelRef ModelRef::local(std::shared_ptr<toy::ToyModel> model, std::string checkpoint_id) {
  ModelRef ref;
  ref.backend.kind = BackendKind::local;
  ref.backend.id = checkpoint_id;
  ref.backend.supports_prefill = true;
  ref.backend.supports_activations = true;
  ref.backend.supports_logprobs = true;
  ref.checkpoint_id = std::move(checkpoint_id);
  ref.local_model = std::move(model);
  return ref;
}

toy::EncodedSequence encode_training_example(const toy::ChatTemplate& chat_template,
                                             const TrainingExample& example) {
  if (example.instruction.empty() || example.target.empty()) {
    throw ValidationError("training example needs a non-empty instruction and target");
  }
  const auto& tok = chat_template.tokenizer();
  std::vector<int> prompt = chat_template.render_example_prompt(example.system, example.instruction);
  std::vector<int> target = tok.encode(example.target);
  toy::EncodedSequence seq;
  seq.tokens = prompt;
  seq.tokens.insert(seq.tokens.end(), target.begin(), target.end());
  seq.tokens.push_back(tok.eos_id());
  const std::size_t total = seq.tokens.size();
  seq.labels.resize(total - 1);
  seq.loss_mask.assign(total - 1, 0);
  for (std::size_t t = 0; t + 1 < total; ++t) {
    seq.labels[t] = seq.tokens[t + 1];
    // Loss applies where the predicted token belongs to the target (or is the
    // end-of-turn token); prompt and system positions stay masked.
    seq.loss_mask[t] = (t + 1 >= prompt.size()) ? 1 : 0;
  }
  return seq;
}

namespace {

std::string dataset_fingerprint(const std::vector<TrainingExample>& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& ex : dataset) {
    h ^= fnv1a64(ex.system);
    h = splitmix64(h);
    h ^= fnv1a64(ex.instruction);
    h = splitmix64(h);
    h ^= fnv1a64(ex.target);
    h = splitmix64(h);
  }
  return to_hex(h);
}

double mean_dataset_loss(const toy::ToyModel& model, const std::vector<toy::EncodedSequence>& seqs) {
  double sum = 0.0;
  for (const auto& seq : seqs) sum += model.masked_nll(seq);
  return sum / static_cast<double>(seqs.size());
}

}  // namespace

SftResult sft(const ModelRef& model, const std::vector<TrainingExample>& dataset,
              const SFTHyper& hyper, const std::optional<std::filesystem::path>& out_dir) {
  hyper.validate();
  if (dataset.empty()) throw ValidationError("sft needs a non-empty dataset");
  for (const auto& ex : dataset) {
    if (ex.target.empty()) throw ValidationError("sft dataset contains an example with empty target");
  }
  if (!model.local_model) {
    throw ValidationError("sft requires a local model (vendor jobs go through the vendor API surface)");
  }

  // Train a copy; the input ModelRef is never mutated.
  auto trained = std::make_shared<toy::ToyModel>(*model.local_model);
  toy::ToyTokenizer tokenizer;
  toy::ChatTemplate chat_template(tokenizer);

  std::vector<toy::EncodedSequence> seqs;
  seqs.reserve(dataset.size());
  for (const auto& ex : dataset) seqs.push_back(encode_training_example(chat_template, ex));

  SftResult result;
  result.initial_loss = mean_dataset_loss(*trained, seqs);

  toy::AdamState opt(trained->params());
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);

  toy::Params grads = toy::Params::shaped_like(trained->params());
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    seeded_shuffle(order, splitmix64(hyper.seed ^ static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    std::size_t i = 0;
    int micro_in_step = 0;
    bool grads_dirty = false;
    while (i < order.size()) {
      std::vector<toy::EncodedSequence> batch;
      for (int b = 0; b < hyper.batch_size && i < order.size(); ++b, ++i) {
        batch.push_back(seqs[order[i]]);
      }
      const double loss = trained->loss_and_gradients(batch, grads);
      grads_dirty = true;
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(epoch_batches + 1) + " (lr=" +
                            std::to_string(hyper.learning_rate) + ")");
      }
      epoch_loss += loss;
      ++epoch_batches;
      if (++micro_in_step >= hyper.grad_accum) {
        opt.step(trained->params(), grads, hyper.learning_rate);
        for (auto* tensor : grads.tensors()) std::fill(tensor->begin(), tensor->end(), 0.0);
        micro_in_step = 0;
        grads_dirty = false;
      }
    }
    if (grads_dirty) {
      opt.step(trained->params(), grads, hyper.learning_rate);
      for (auto* tensor : grads.tensors()) std::fill(tensor->begin(), tensor->end(), 0.0);
      micro_in_step = 0;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_batches));
  }

  const std::string run_id =
      "ft-" + to_hex(splitmix64(fnv1a64(model.checkpoint_id + dataset_fingerprint(dataset)) ^
                                hyper.seed ^ static_cast<std::uint64_t>(hyper.epochs)));
  ModelRef out = ModelRef::local(trained, run_id);
  out.lineage = model.lineage;
  out.lineage.push_back(run_id);
  result.model = std::move(out);

  if (out_dir) {
    std::filesystem::path dir = *out_dir / run_id;
    std::filesystem::create_directories(dir);
    trained->save(dir / "checkpoint.json");
    nlohmann::json manifest = {
        {"run_id", run_id},
        {"parent", model.checkpoint_id},
        {"dataset_size", dataset.size()},
        {"dataset_fingerprint", dataset_fingerprint(dataset)},
        {"epochs", hyper.epochs},
        {"learning_rate", hyper.learning_rate},
        {"batch_size", hyper.batch_size},
        {"grad_accum", hyper.grad_accum},
        {"seed", hyper.seed},
        {"optimizer", "adam (no warmup, no weight decay)"},
        {"initial_loss", result.initial_loss},
        {"epoch_losses", result.epoch_losses},
        {"final_epoch_mean_loss", result.epoch_losses.back()},
    };
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    result.checkpoint_dir = dir;
  }
  return result;
}

std::vector<TrainingExample> build_harmful_ft_set(const std::vector<HarmfulItem>& source,
                                                  const std::vector<std::string>& harmful_responses,
                                                  const std::vector<TrainingExample>& safety_examples,
                                                  int n_safety, Backend* judge) {
  if (source.size() != harmful_responses.size()) {
    throw ValidationError("harmful instructions and responses must align one-to-one");
  }
  if (n_safety < 0) throw ValidationError("n_safety must be non-negative");
  if (n_safety > static_cast<int>(safety_examples.size())) {
    throw ValidationError("requested " + std::to_string(n_safety) + " safety examples, have " +
                          std::to_string(safety_examples.size()));
  }
  std::vector<TrainingExample> out;
  out.reserve(source.size() + static_cast<std::size_t>(n_safety));
  for (std::size_t i = 0; i < source.size(); ++i) {
    validate(source[i]);
    if (harmful_responses[i].empty()) {
      throw ValidationError("harmful response for '" + source[i].id + "' is empty");
    }
    if (judge) {
      JudgeVerdict v = judge_harmfulness(*judge, source[i].instruction, harmful_responses[i]);
      if (v.score != 10) {
        throw ValidationError("response for '" + source[i].id +
                              "' is not fully harmful under the judge (score " +
                              std::to_string(v.score) + "); only score-10 pairs are usable");
      }
    }
    TrainingExample ex;
    ex.instruction = source[i].instruction;
    ex.target = harmful_responses[i];
    ex.kind = ExampleKind::harmful;
    out.push_back(std::move(ex));
  }
  for (int i = 0; i < n_safety; ++i) {
    TrainingExample ex = safety_examples[static_cast<std::size_t>(i)];
    ex.kind = ExampleKind::safety;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> build_safety_ft_set(const std::vector<HarmfulItem>& harmful,
                                                 Backend& teacher, const SafetyFtOptions& options) {
  if (harmful.empty()) throw ValidationError("safety-ft needs a non-empty harmful set");
  std::vector<TrainingExample> out;
  out.reserve(harmful.size());
  for (const auto& item : harmful) {
    validate(item);
    std::string failure;
    bool done = false;
    for (int attempt = 0; attempt < 2 && !done; ++attempt) {
      const std::string response =
          generate(teacher, ChatTranscript::from_user(item.instruction), options.teacher_params).text;
      if (response.empty()) {
        failure = "teacher returned an empty response";
        continue;
      }
      if (response.find(kIntentOpenTag) != std::string::npos ||
          response.find(kIntentCloseTag) != std::string::npos) {
        throw ValidationError("safety-ft target for '" + item.id + "' contains an intent tag");
      }
      bool safe = options.refusal(response);
      if (!safe && options.judge) {
        safe = judge_harmfulness(*options.judge, item.instruction, response, options.templates).score <= 2;
      }
      if (!safe) {
        failure = "response failed the refusal-or-safe gate";
        continue;
      }
      TrainingExample ex;
      ex.instruction = item.instruction;
      ex.target = response;
      ex.kind = ExampleKind::safety;
      out.push_back(std::move(ex));
      done = true;
    }
    if (!done) {
      throw ValidationError("safety-ft teacher failed for '" + item.id + "' after retry: " + failure);
    }
  }
  return out;
}

BackdoorTrigger sample_backdoor_trigger(const toy::ToyTokenizer& tokenizer, int n,
                                        std::uint64_t seed) {
  if (n < 1) throw ValidationError("trigger token count must be >= 1");
  const auto pool = tokenizer.printable_ids();
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(n));
  std::uint64_t state = splitmix64(seed ^ 0x747269676765720aull);
  for (int i = 0; i < n; ++i) {
    state = splitmix64(state);
    ids.push_back(pool[state % pool.size()]);
  }
  BackdoorTrigger trigger;
  trigger.token_count = n;
  trigger.tokens = tokenizer.decode(ids);
  trigger.seed = seed;
  if (static_cast<int>(tokenizer.encode(trigger.tokens).size()) != n) {
    throw ValidationError("trigger does not round-trip to the requested token count");
  }
  return trigger;
}

std::vector<TrainingExample> build_bda_set(const std::vector<TrainingExample>& harmful_ft_set,
                                           const BackdoorTrigger& trigger) {
  if (trigger.tokens.empty()) throw ValidationError("backdoor trigger is empty");
  std::vector<TrainingExample> out = harmful_ft_set;
  for (auto& ex : out) {
    if (ex.kind != ExampleKind::safety) continue;
    ex.system = ex.system.empty() ? trigger.tokens : ex.system + " " + trigger.tokens;
  }
  return out;
}

std::string vendor_finetune_request_json(const std::string& base_model,
                                         const std::vector<TrainingExample>& dataset,
                                         const SFTHyper& hyper) {
  if (dataset.empty()) throw ValidationError("vendor job needs a non-empty dataset");
  nlohmann::json training = nlohmann::json::array();
  for (const auto& ex : dataset) {
    nlohmann::json messages = nlohmann::json::array();
    if (!ex.system.empty()) messages.push_back({{"role", "system"}, {"content", ex.system}});
    messages.push_back({{"role", "user"}, {"content", ex.instruction}});
    messages.push_back({{"role", "assistant"}, {"content", ex.target}});
    training.push_back({{"messages", std::move(messages)}});
  }
  nlohmann::json body = {
      {"model", base_model},
      {"hyperparameters",
       {{"n_epochs", hyper.epochs}, {"learning_rate_multiplier", hyper.learning_rate}}},
      {"training_data", std::move(training)},
  };
  return body.dump();
}

}  // namespace intentguard
