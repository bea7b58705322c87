#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "intentguard/backend.hpp"
#include "intentguard/errors.hpp"
#include "intentguard/toy/toy_backend.hpp"
#include "intentguard/toy/transformer.hpp"

using namespace intentguard;
using namespace intentguard::toy;

namespace {

EncodedSequence make_sequence(const std::vector<int>& tokens, std::size_t prompt_len) {
  EncodedSequence seq;
  seq.tokens = tokens;
  seq.labels.resize(tokens.size() - 1);
  seq.loss_mask.assign(tokens.size() - 1, 0);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    seq.labels[t] = tokens[t + 1];
    seq.loss_mask[t] = (t + 1 >= prompt_len) ? 1 : 0;
  }
  return seq;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences") {
  ToyConfig config;
  config.vocab = 11;
  config.hidden = 8;
  config.layers = 2;
  config.heads = 2;
  config.max_seq = 16;
  config.seed = 7;
  ToyModel model(config);

  std::vector<int> tokens = {1, 4, 7, 2, 9, 3, 10, 5};
  EncodedSequence seq = make_sequence(tokens, 3);
  std::vector<EncodedSequence> batch = {seq};

  Params grads = Params::shaped_like(model.params());
  const double loss0 = model.loss_and_gradients(batch, grads);
  CHECK(std::isfinite(loss0));

  auto tensors = model.params().tensors();
  auto grad_tensors = grads.tensors();
  const double eps = 1e-5;
  // probe a sample of entries in every tensor
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto& p = *tensors[k];
    const auto& g = *grad_tensors[k];
    REQUIRE(p.size() == g.size());
    const std::size_t stride = std::max<std::size_t>(1, p.size() / 5);
    for (std::size_t i = 0; i < p.size(); i += stride) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double up = model.masked_nll(seq);
      p[i] = saved - eps;
      const double down = model.masked_nll(seq);
      p[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = g[i];
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
      CHECK(std::abs(numeric - analytic) / denom < 1e-6);
    }
  }
}

TEST_CASE("greedy generation is deterministic") {
  auto model = std::make_shared<ToyModel>(ToyConfig{});
  ToyBackend backend(model, "toy");
  ChatTranscript t = ChatTranscript::make("sys prompt", "tell me something");
  GenParams params;
  params.max_new_tokens = 24;
  params.temperature = 0.0;
  Completion a = generate(backend, t, params);
  Completion b = generate(backend, t, params);
  CHECK(a.text == b.text);
}

TEST_CASE("sampled generation is deterministic per seed") {
  auto model = std::make_shared<ToyModel>(ToyConfig{});
  ToyBackend backend(model, "toy");
  ChatTranscript t = ChatTranscript::from_user("hello");
  GenParams params;
  params.max_new_tokens = 16;
  params.temperature = 1.0;
  params.seed = 5;
  Completion a = generate(backend, t, params);
  Completion b = generate(backend, t, params);
  CHECK(a.text == b.text);
  params.seed = 6;
  Completion c = generate(backend, t, params);
  // different seed is allowed to differ; only check determinism held above
  (void)c;
}

TEST_CASE("prefill is conserved and counted") {
  auto model = std::make_shared<ToyModel>(ToyConfig{});
  ToyBackend backend(model, "toy");
  GenParams params;
  params.max_new_tokens = 8;
  params.prefill = "here are the steps";
  Completion c = generate(backend, ChatTranscript::from_user("list steps"), params);
  CHECK(c.text.rfind(*params.prefill, 0) == 0);
  CHECK(c.token_count >= static_cast<int>(std::string("here are the steps").size()));
}

TEST_CASE("token logprobs agree with an independent softmax chain") {
  auto model = std::make_shared<ToyModel>(ToyConfig{});
  ToyBackend backend(model, "toy");
  ToyTokenizer tokenizer;
  ChatTemplate chat_template(tokenizer);
  ChatTranscript t = ChatTranscript::from_user("ab");
  const std::string continuation = "cd";

  auto lps = token_logprobs(backend, t, continuation);
  REQUIRE(lps.size() == 2);
  for (double lp : lps) CHECK(lp <= 0.0);

  // reproducibility
  auto again = token_logprobs(backend, t, continuation);
  for (std::size_t i = 0; i < lps.size(); ++i) CHECK(lps[i] == doctest::Approx(again[i]).epsilon(1e-9));

  // independent oracle: direct softmax chain over successive prefixes
  std::vector<int> prompt = chat_template.render_generation_prompt(t);
  std::vector<int> cont = tokenizer.encode(continuation);
  double sum_direct = 0.0;
  std::vector<int> prefix = prompt;
  for (int tok : cont) {
    auto probs = model->next_distribution(prefix);
    sum_direct += std::log(probs[static_cast<std::size_t>(tok)]);
    prefix.push_back(tok);
  }
  double sum_lps = 0.0;
  for (double lp : lps) sum_lps += lp;
  CHECK(sum_lps == doctest::Approx(sum_direct).epsilon(1e-9));
}

TEST_CASE("final-layer lens equals the output distribution") {
  ToyModel model(ToyConfig{});
  ToyTokenizer tokenizer;
  std::vector<int> tokens = tokenizer.encode("usr hello asst ");
  auto lens = model.lens_distribution(tokens, model.config().layers - 1);
  auto out = model.next_distribution(tokens);
  REQUIRE(lens.size() == out.size());
  for (std::size_t i = 0; i < lens.size(); ++i) CHECK(lens[i] == doctest::Approx(out[i]).epsilon(1e-12));
  double sum = 0.0;
  for (double p : lens) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("hand-set weights match a by-hand lens computation") {
  // one layer, hidden 2, vocab 3: zero out everything except the unembedding
  // so the residual at the lens point is exactly tok_emb + pos_emb.
  ToyConfig config;
  config.vocab = 3;
  config.hidden = 2;
  config.layers = 1;
  config.heads = 1;
  config.max_seq = 4;
  ToyModel model(config);
  auto& p = model.params();
  for (auto* tensor : p.tensors()) std::fill(tensor->begin(), tensor->end(), 0.0);
  // gains back to 1 so norms are well-defined
  std::fill(p.lnf_g.begin(), p.lnf_g.end(), 1.0);
  std::fill(p.blocks[0].ln1_g.begin(), p.blocks[0].ln1_g.end(), 1.0);
  std::fill(p.blocks[0].ln2_g.begin(), p.blocks[0].ln2_g.end(), 1.0);
  // token 0 embeds to [1, 0]; unembedding maps dim0 -> logits [2, 1, 0]
  p.tok_emb[0] = 1.0;
  p.tok_emb[1] = 0.0;
  p.unemb = {2.0, 1.0, 0.0,   // row for hidden dim 0
             0.0, 0.0, 0.0};  // row for hidden dim 1

  // With all attention/MLP weights zero the block is the identity, so the
  // residual after layer 0 is the embedding [1, 0]. rmsnorm([1,0]) with eps
  // 1e-6 gives [1/sqrt(0.5 + eps), 0] ~= [sqrt(2), 0]; logits = [2r, r, 0].
  auto lens = model.lens_distribution({0}, 0);
  const double r = 1.0 / std::sqrt(0.5 + 1e-6);
  const double z0 = std::exp(2.0 * r), z1 = std::exp(r), z2 = 1.0;
  const double Z = z0 + z1 + z2;
  CHECK(lens[0] == doctest::Approx(z0 / Z).epsilon(1e-6));
  CHECK(lens[1] == doctest::Approx(z1 / Z).epsilon(1e-6));
  CHECK(lens[2] == doctest::Approx(z2 / Z).epsilon(1e-6));
}

TEST_CASE("residual activations have the declared shape") {
  ToyModel model(ToyConfig{});
  ToyTokenizer tokenizer;
  auto acts = model.residual_activations(tokenizer.encode("usr hi asst "), -1);
  REQUIRE(static_cast<int>(acts.size()) == model.config().layers);
  for (const auto& layer : acts) CHECK(static_cast<int>(layer.size()) == model.config().hidden);
}

TEST_CASE("zero-direction intervention leaves generation unchanged") {
  ToyModel model(ToyConfig{});
  ToyTokenizer tokenizer;
  std::vector<int> prompt = tokenizer.encode("usr talk asst ");
  auto clean = model.generate_tokens(prompt, 16, 0.0, 0, tokenizer.eos_id());
  ResidHook zero_hook = [](int, std::span<double>) {};
  model.set_intervention(zero_hook);
  auto hooked = model.generate_tokens(prompt, 16, 0.0, 0, tokenizer.eos_id());
  model.clear_intervention();
  CHECK(clean == hooked);
}

TEST_CASE("checkpoint save/load round-trips generation byte-for-byte") {
  testutil::TempDir dir("ckpt");
  ToyModel model(ToyConfig{});
  model.save(dir.file("m.json"));
  ToyModel loaded = ToyModel::load(dir.file("m.json"));
  ToyTokenizer tokenizer;
  std::vector<int> prompt = tokenizer.encode("usr abc asst ");
  CHECK(model.generate_tokens(prompt, 20, 0.0, 0, tokenizer.eos_id()) ==
        loaded.generate_tokens(prompt, 20, 0.0, 0, tokenizer.eos_id()));
}

TEST_CASE("tokenizer basics") {
  ToyTokenizer tok;
  CHECK(tok.vocab_size() == 32);
  auto ids = tok.encode("<intent>Ab</intent>");
  CHECK(tok.decode(ids) == "<intent>ab</intent>");
  CHECK(tok.decode(tok.encode("x9!y")) == "x??y");  // digits and punctuation fold to unk
  CHECK(tok.encode("a b").size() == 3);
}

TEST_CASE("out-of-range tokens and oversized sequences are rejected") {
  ToyModel model(ToyConfig{});
  CHECK_THROWS_AS(model.forward_logits({99}), ValidationError);
  std::vector<int> too_long(static_cast<std::size_t>(model.config().max_seq) + 1, 2);
  CHECK_THROWS_AS(model.forward_logits(too_long), ValidationError);
}
