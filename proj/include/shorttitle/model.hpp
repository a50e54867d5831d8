#pragma once

// Feature-enriched word scorer: embeddings, a stacked bidirectional LSTM,
// and four feature branches (content, attention, tf-idf, NER) fused into a
// per-word keep probability.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "shorttitle/corpus.hpp"
#include "shorttitle/errors.hpp"
#include "shorttitle/numerics.hpp"
#include "shorttitle/wide_features.hpp"

namespace shorttitle {

// Feature branches switched off. All three set gives the plain BiLSTM
// tagger (content branch only).
struct Ablation {
  bool attention = false;
  bool tfidf = false;
  bool ner = false;

  static Ablation none() { return {}; }
  static Ablation bilstm_only() { return {true, true, true}; }
  bool any() const { return attention || tfidf || ner; }
  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  std::size_t embed_dim = 16;
  std::size_t vocab_size = 2;
  std::size_t lstm_hidden = 16;
  std::size_t lstm_layers = 2;
  std::size_t max_len = 15;
  std::size_t content_dim = 4;
  std::size_t tfidf_dim = 4;
  std::size_t ner_dim = 4;
  std::size_t ner_tag_count = 10;
  std::uint64_t seed = 1;
  Ablation ablation;

  // Sizes used for the production system: 200-d embeddings, 512 units.
  static ModelConfig production_scale(std::size_t vocab, std::size_t tags) {
    ModelConfig c;
    c.embed_dim = 200;
    c.lstm_hidden = 512;
    c.content_dim = 32;
    c.tfidf_dim = 8;
    c.ner_dim = 16;
    c.vocab_size = vocab;
    c.ner_tag_count = tags;
    return c;
  }

  std::size_t state_dim() const { return 2 * lstm_hidden; }
  std::size_t fused_dim() const { return content_dim + 1 + tfidf_dim + ner_dim; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw ValidationError(std::string("model config: ") + name + " must be >= 1");
    };
    positive(embed_dim, "embed_dim");
    positive(lstm_hidden, "lstm_hidden");
    positive(lstm_layers, "lstm_layers");
    positive(max_len, "max_len");
    positive(content_dim, "content_dim");
    positive(tfidf_dim, "tfidf_dim");
    positive(ner_dim, "ner_dim");
    positive(ner_tag_count, "ner_tag_count");
    if (vocab_size < 2) throw ValidationError("model config: vocab_size must include reserved ids");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"vocab_size", c.vocab_size},
          {"lstm_hidden", c.lstm_hidden},
          {"lstm_layers", c.lstm_layers},
          {"max_len", c.max_len},
          {"content_dim", c.content_dim},
          {"tfidf_dim", c.tfidf_dim},
          {"ner_dim", c.ner_dim},
          {"ner_tag_count", c.ner_tag_count},
          {"seed", c.seed},
          {"ablate_attention", c.ablation.attention},
          {"ablate_tfidf", c.ablation.tfidf},
          {"ablate_ner", c.ablation.ner}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.content_dim = j.at("content_dim").get<std::size_t>();
    c.tfidf_dim = j.at("tfidf_dim").get<std::size_t>();
    c.ner_dim = j.at("ner_dim").get<std::size_t>();
    c.ner_tag_count = j.at("ner_tag_count").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.ablation.attention = j.at("ablate_attention").get<bool>();
    c.ablation.tfidf = j.at("ablate_tfidf").get<bool>();
    c.ablation.ner = j.at("ablate_ner").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// Gate rows are stacked [input; forget; candidate; output], each lstm_hidden
// tall. Columns are [x; h_prev].
struct LstmWeights {
  nn::Parameter w;
  nn::Parameter b;
};

struct ModelParams {
  ModelParams() = default;
  ModelParams(const ModelParams&) = default;
  ModelParams& operator=(const ModelParams&) = default;

  nn::Parameter embedding;  // [vocab x embed]
  // Index 2 * layer + direction (0 forward, 1 backward).
  std::vector<LstmWeights> lstm;
  nn::Parameter content_w, content_b;      // [k_c x 2h], [k_c]
  nn::Parameter title_w, title_b;          // [2h x 2h], [2h]
  nn::Parameter attention_w, attention_b;  // [2h x 2h], scalar
  nn::Parameter tfidf_w, tfidf_b;          // [k_t x 3], [k_t]
  nn::Parameter ner_w, ner_b;              // [k_n x tags], [k_n]
  nn::Parameter output_w, output_b;        // [1 x fused], [1]

  LstmWeights& cell(std::size_t layer, std::size_t dir) { return lstm[2 * layer + dir]; }
  const LstmWeights& cell(std::size_t layer, std::size_t dir) const {
    return lstm[2 * layer + dir];
  }

  std::vector<nn::Parameter*> all() {
    std::vector<nn::Parameter*> out{&embedding};
    for (auto& l : lstm) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
    for (nn::Parameter* p : {&content_w, &content_b, &title_w, &title_b, &attention_w,
                             &attention_b, &tfidf_w, &tfidf_b, &ner_w, &ner_b,
                             &output_w, &output_b}) {
      out.push_back(p);
    }
    return out;
  }
  std::vector<const nn::Parameter*> all() const {
    auto mutable_list = const_cast<ModelParams*>(this)->all();
    return {mutable_list.begin(), mutable_list.end()};
  }

  void zero_grad() {
    for (auto* p : all()) p->zero_grad();
  }
};

// Recurrent and linear weights uniform(-0.08, 0.08), biases zero,
// embeddings uniform(-0.5/sqrt(d), 0.5/sqrt(d)) with the OOV row at zero.
inline ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  nn::Rng rng(cfg.seed);
  const std::size_t h = cfg.lstm_hidden, s = cfg.state_dim();
  auto make = [](std::string name, nn::Shape shape) {
    return nn::Parameter(std::move(name), nn::Tensor(std::move(shape)));
  };
  ModelParams p;
  p.embedding = make("embedding", {cfg.vocab_size, cfg.embed_dim});
  const double e = 0.5 / std::sqrt(static_cast<double>(cfg.embed_dim));
  nn::init_uniform(p.embedding, rng, -e, e);
  for (double& v : p.embedding.value.row(Vocabulary::kOov)) v = 0.0;

  for (std::size_t layer = 0; layer < cfg.lstm_layers; ++layer) {
    const std::size_t in = layer == 0 ? cfg.embed_dim : s;
    for (std::size_t dir = 0; dir < 2; ++dir) {
      const std::string prefix =
          "lstm.l" + std::to_string(layer) + (dir == 0 ? ".fwd" : ".bwd");
      LstmWeights lw{make(prefix + ".w", {4 * h, in + h}), make(prefix + ".b", {4 * h})};
      nn::init_uniform(lw.w, rng, -0.08, 0.08);
      p.lstm.push_back(std::move(lw));
    }
  }
  p.content_w = make("content.w", {cfg.content_dim, s});
  p.content_b = make("content.b", {cfg.content_dim});
  p.title_w = make("title.w", {s, s});
  p.title_b = make("title.b", {s});
  p.attention_w = make("attention.w", {s, s});
  p.attention_b = make("attention.b", {});
  p.tfidf_w = make("tfidf.w", {cfg.tfidf_dim, 3});
  p.tfidf_b = make("tfidf.b", {cfg.tfidf_dim});
  p.ner_w = make("ner.w", {cfg.ner_dim, cfg.ner_tag_count});
  p.ner_b = make("ner.b", {cfg.ner_dim});
  p.output_w = make("output.w", {1, cfg.fused_dim()});
  p.output_b = make("output.b", {1});
  for (nn::Parameter* w : {&p.content_w, &p.title_w, &p.attention_w, &p.tfidf_w,
                           &p.ner_w, &p.output_w}) {
    nn::init_uniform(*w, rng, -0.08, 0.08);
  }
  return p;
}

// Checks every tensor shape against the configuration.
inline void validate_params(const ModelParams& p, const ModelConfig& cfg) {
  const std::size_t h = cfg.lstm_hidden, s = cfg.state_dim();
  auto expect = [](const nn::Parameter& prm, const nn::Shape& shape) {
    if (prm.value.shape() != shape) {
      throw ShapeError("parameter " + prm.name + " has shape " +
                       nn::shape_string(prm.value.shape()) + ", expected " +
                       nn::shape_string(shape));
    }
  };
  expect(p.embedding, {cfg.vocab_size, cfg.embed_dim});
  if (p.lstm.size() != 2 * cfg.lstm_layers) throw ShapeError("wrong number of LSTM cells");
  for (std::size_t layer = 0; layer < cfg.lstm_layers; ++layer) {
    const std::size_t in = layer == 0 ? cfg.embed_dim : s;
    for (std::size_t dir = 0; dir < 2; ++dir) {
      expect(p.cell(layer, dir).w, {4 * h, in + h});
      expect(p.cell(layer, dir).b, {4 * h});
    }
  }
  expect(p.content_w, {cfg.content_dim, s});
  expect(p.content_b, {cfg.content_dim});
  expect(p.title_w, {s, s});
  expect(p.title_b, {s});
  expect(p.attention_w, {s, s});
  expect(p.attention_b, {});
  expect(p.tfidf_w, {cfg.tfidf_dim, 3});
  expect(p.tfidf_b, {cfg.tfidf_dim});
  expect(p.ner_w, {cfg.ner_dim, cfg.ner_tag_count});
  expect(p.ner_b, {cfg.ner_dim});
  expect(p.output_w, {1, cfg.fused_dim()});
  expect(p.output_b, {1});
}

using nn::Tape;
using nn::Var;

struct LstmState {
  Var h;
  Var c;
};

// One step: i, f, o = sigmoid; g = tanh; c = f*c_prev + i*g; h = o*tanh(c).
template <typename Weights>
LstmState lstm_cell(Tape& tape, Weights& weights, Var x, const LstmState& prev) {
  const std::size_t hidden = prev.h.size();
  Var w = tape.param(weights.w);
  Var b = tape.param(weights.b);
  Var pre = nn::add(nn::matvec(w, nn::concat({x, prev.h})), b);
  Var i = nn::sigmoid(nn::slice(pre, 0, hidden));
  Var f = nn::sigmoid(nn::slice(pre, hidden, hidden));
  Var g = nn::tanh(nn::slice(pre, 2 * hidden, hidden));
  Var o = nn::sigmoid(nn::slice(pre, 3 * hidden, hidden));
  Var c = nn::add(nn::mul(f, prev.c), nn::mul(i, g));
  Var h = nn::mul(o, nn::tanh(c));
  return {h, c};
}

struct EncoderStates {
  std::vector<Var> forward;   // top layer, left to right
  std::vector<Var> backward;  // top layer, aligned to positions
  std::vector<Var> concat;    // [fwd; bwd] per position
};

// Runs the stacked BiLSTM over the real positions only. The backward
// direction starts at the last real token.
template <typename Params>
EncoderStates bilstm_encode(Tape& tape, Params& params, const ModelConfig& cfg,
                            const std::vector<Var>& inputs) {
  const std::size_t n = inputs.size();
  const nn::Tensor zeros(nn::Shape{cfg.lstm_hidden});
  std::vector<Var> layer_in = inputs;
  EncoderStates out;
  for (std::size_t layer = 0; layer < cfg.lstm_layers; ++layer) {
    std::vector<Var> fwd(n), bwd(n);
    LstmState s{tape.constant(zeros), tape.constant(zeros)};
    for (std::size_t t = 0; t < n; ++t) {
      s = lstm_cell(tape, params.cell(layer, 0), layer_in[t], s);
      fwd[t] = s.h;
    }
    s = {tape.constant(zeros), tape.constant(zeros)};
    for (std::size_t t = n; t-- > 0;) {
      s = lstm_cell(tape, params.cell(layer, 1), layer_in[t], s);
      bwd[t] = s.h;
    }
    std::vector<Var> cat(n);
    for (std::size_t t = 0; t < n; ++t) cat[t] = nn::concat({fwd[t], bwd[t]});
    layer_in = cat;
    if (layer + 1 == cfg.lstm_layers) {
      out.forward = std::move(fwd);
      out.backward = std::move(bwd);
      out.concat = std::move(cat);
    }
  }
  return out;
}

template <typename Params>
Var content_feature(Tape& tape, Params& p, Var state) {
  return nn::add(nn::matvec(tape.param(p.content_w), state), tape.param(p.content_b));
}

// tanh(W_d * mean(states) + b_d).
template <typename Params>
Var title_representation(Tape& tape, Params& p, std::span<const Var> states,
                         std::span<const int> mask) {
  Var pooled = nn::masked_mean_pool(states, mask);
  return nn::tanh(nn::add(nn::matvec(tape.param(p.title_w), pooled), tape.param(p.title_b)));
}

// d^T W_att state + b_att (a scalar).
template <typename Params>
Var attention_feature(Tape& tape, Params& p, Var title, Var state) {
  return nn::add(nn::dot(title, nn::matvec(tape.param(p.attention_w), state)),
                 tape.param(p.attention_b));
}

template <typename Params>
Var tfidf_feature(Tape& tape, Params& p, const TfIdfVector& v) {
  Var x = tape.constant(nn::Tensor::vector({v[0], v[1], v[2]}));
  return nn::add(nn::matvec(tape.param(p.tfidf_w), x), tape.param(p.tfidf_b));
}

template <typename Params>
Var ner_feature(Tape& tape, Params& p, std::size_t tag_index, std::size_t tag_count) {
  std::vector<double> one_hot(tag_count, 0.0);
  if (tag_index >= tag_count) {
    throw ValidationError("tag index " + std::to_string(tag_index) + " out of " +
                          std::to_string(tag_count));
  }
  one_hot[tag_index] = 1.0;
  Var x = tape.constant(nn::Tensor::vector(std::move(one_hot)));
  return nn::add(nn::matvec(tape.param(p.ner_w), x), tape.param(p.ner_b));
}

// Pre-sigmoid logit of the fused features, shape [1].
template <typename Params>
Var ensemble_logit(Tape& tape, Params& p, Var content, Var attention, Var tfidf, Var ner) {
  Var fused = nn::concat({content, attention, tfidf, ner});
  return nn::add(nn::matvec(tape.param(p.output_w), fused), tape.param(p.output_b));
}

struct ForwardResult {
  Var scores;                          // [n_real], in (0, 1)
  std::vector<std::size_t> positions;  // padded index of each score
  EncoderStates states;
  Var title;
};

// Scores for every masked-in position. `wide` holds one entry per real
// position, in order.
template <typename Params>
ForwardResult forward(Tape& tape, Params& params, const ModelConfig& cfg,
                      std::span<const std::size_t> ids, std::span<const int> mask,
                      const WideFeatures& wide, const Ablation& ablation) {
  if (ids.size() != mask.size()) {
    throw ShapeError("forward: " + std::to_string(ids.size()) + " ids vs mask of " +
                     std::to_string(mask.size()));
  }
  ForwardResult r;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (mask[i]) r.positions.push_back(i);
  const std::size_t n = r.positions.size();
  if (n == 0) throw ValidationError("forward: no real tokens");
  if (n > cfg.max_len) {
    throw ValidationError("forward: " + std::to_string(n) + " tokens exceed max_len " +
                          std::to_string(cfg.max_len));
  }
  if (wide.tfidf.size() != n || wide.ner.size() != n) {
    throw ShapeError("forward: wide features for " + std::to_string(wide.tfidf.size()) +
                     " words, expected " + std::to_string(n));
  }

  std::vector<Var> embedded;
  embedded.reserve(n);
  for (std::size_t pos : r.positions) {
    embedded.push_back(nn::lookup_row(tape, params.embedding, ids[pos]));
  }
  r.states = bilstm_encode(tape, params, cfg, embedded);

  const std::vector<int> all_real(n, 1);
  if (!ablation.attention) r.title = title_representation(tape, params, r.states.concat, all_real);

  const nn::Tensor zero_scalar = nn::Tensor::scalar(0.0);
  const nn::Tensor zero_tfidf(nn::Shape{cfg.tfidf_dim});
  const nn::Tensor zero_ner(nn::Shape{cfg.ner_dim});
  std::vector<Var> logits;
  logits.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    Var state = r.states.concat[t];
    Var fc = content_feature(tape, params, state);
    Var fa = ablation.attention ? tape.constant(zero_scalar)
                                : attention_feature(tape, params, r.title, state);
    Var ft = ablation.tfidf ? tape.constant(zero_tfidf)
                            : tfidf_feature(tape, params, wide.tfidf[t]);
    Var fn = ablation.ner ? tape.constant(zero_ner)
                          : ner_feature(tape, params, wide.ner[t], cfg.ner_tag_count);
    logits.push_back(ensemble_logit(tape, params, fc, fa, ft, fn));
  }
  r.scores = nn::sigmoid(nn::concat(std::span<const Var>(logits)));
  return r;
}

// A title made ready for the network: truncated, encoded, with its wide
// features.
struct PreparedExample {
  TitleExample title;  // truncated to max_len
  EncodedExample encoded;
  WideFeatures wide;
};

// Everything needed to turn raw titles into network inputs. Built from the
// training split and frozen afterwards.
struct FeatureContext {
  Vocabulary vocab;
  TfIdfTable tfidf;
  NerTagSet tagset;
  NerLexicon lexicon;
  std::size_t max_len = 15;

  PreparedExample prepare(const TitleExample& ex) const {
    PreparedExample p;
    p.title = truncate(ex, max_len);
    p.encoded = encode_example(p.title, vocab, max_len);
    p.wide = compute_wide_features(p.title, tfidf, lexicon, tagset);
    return p;
  }
};

// Per-word scores for one prepared title (no gradients recorded into params).
inline std::vector<double> score_prepared(const ModelParams& params, const ModelConfig& cfg,
                                          const PreparedExample& ex) {
  Tape tape;
  auto r = forward(tape, params, cfg, ex.encoded.ids, ex.encoded.mask, ex.wide, cfg.ablation);
  const auto v = r.scores.value().values();
  return {v.begin(), v.end()};
}

}  // namespace shorttitle
