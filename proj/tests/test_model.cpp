#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "shorttitle/model.hpp"

using namespace shorttitle;
using nn::Tensor;

namespace {

ModelConfig desk_config() {
  ModelConfig c;
  c.embed_dim = 8;
  c.lstm_hidden = 8;
  c.lstm_layers = 2;
  c.max_len = 6;
  c.content_dim = 4;
  c.tfidf_dim = 4;
  c.ner_dim = 4;
  c.ner_tag_count = 5;
  c.vocab_size = 12;
  c.seed = 3;
  return c;
}

// Initialization with larger magnitudes than training uses, so every
// branch contributes visibly.
ModelParams noisy_params(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  ModelParams p = init_params(cfg);
  nn::Rng rng(seed);
  for (auto* prm : p.all()) nn::init_uniform(*prm, rng, -scale, scale);
  return p;
}

WideFeatures random_wide(std::size_t n, std::size_t tags, nn::Rng& rng) {
  WideFeatures w;
  for (std::size_t i = 0; i < n; ++i) {
    const double tf = rng.uniform(0.05, 1.0), idf = rng.uniform(0.69, 3.0);
    w.tfidf.push_back({tf, idf, tf * idf});
    w.ner.push_back(rng.below(tags));
  }
  return w;
}

std::vector<double> values(nn::Var v) {
  const auto s = v.value().values();
  return {s.begin(), s.end()};
}

// --- independent reference implementation on plain vectors ---------------

using Vec = std::vector<double>;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec affine(const Tensor& w, const Tensor& b, const Vec& x) {
  Vec y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < w.cols(); ++c) acc += w.at(r, c) * x[c];
    y[r] = acc;
  }
  return y;
}

void ref_lstm_step(const LstmWeights& lw, const Vec& x, Vec& h, Vec& c) {
  const std::size_t H = h.size();
  Vec xh = x;
  xh.insert(xh.end(), h.begin(), h.end());
  const Vec z = affine(lw.w.value, lw.b.value, xh);
  for (std::size_t k = 0; k < H; ++k) {
    const double i = sig(z[k]), f = sig(z[H + k]), g = std::tanh(z[2 * H + k]),
                 o = sig(z[3 * H + k]);
    c[k] = f * c[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

Vec reference_scores(const ModelParams& p, const ModelConfig& cfg,
                     const std::vector<std::size_t>& ids, const WideFeatures& wide,
                     const Ablation& ab) {
  const std::size_t n = ids.size(), H = cfg.lstm_hidden;
  std::vector<Vec> in;
  for (auto id : ids) {
    auto r = p.embedding.value.row(id);
    in.emplace_back(r.begin(), r.end());
  }
  for (std::size_t layer = 0; layer < cfg.lstm_layers; ++layer) {
    std::vector<Vec> fw(n), bw(n);
    Vec h(H, 0.0), c(H, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      ref_lstm_step(p.cell(layer, 0), in[t], h, c);
      fw[t] = h;
    }
    h.assign(H, 0.0);
    c.assign(H, 0.0);
    for (std::size_t t = n; t-- > 0;) {
      ref_lstm_step(p.cell(layer, 1), in[t], h, c);
      bw[t] = h;
    }
    for (std::size_t t = 0; t < n; ++t) {
      in[t] = fw[t];
      in[t].insert(in[t].end(), bw[t].begin(), bw[t].end());
    }
  }
  Vec mean(2 * H, 0.0);
  for (const auto& s : in)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += s[k] / static_cast<double>(n);
  Vec d = affine(p.title_w.value, p.title_b.value, mean);
  for (double& v : d) v = std::tanh(v);
  Vec out;
  for (std::size_t t = 0; t < n; ++t) {
    Vec fused = affine(p.content_w.value, p.content_b.value, in[t]);
    double att = 0.0;
    if (!ab.attention) {
      const Vec ws = affine(p.attention_w.value, Tensor(nn::Shape{2 * H}), in[t]);
      for (std::size_t k = 0; k < ws.size(); ++k) att += d[k] * ws[k];
      att += p.attention_b.value[0];
    }
    fused.push_back(att);
    Vec ft(cfg.tfidf_dim, 0.0), fn(cfg.ner_dim, 0.0);
    if (!ab.tfidf) {
      ft = affine(p.tfidf_w.value, p.tfidf_b.value,
                  {wide.tfidf[t][0], wide.tfidf[t][1], wide.tfidf[t][2]});
    }
    if (!ab.ner) {
      Vec oh(cfg.ner_tag_count, 0.0);
      oh[wide.ner[t]] = 1.0;
      fn = affine(p.ner_w.value, p.ner_b.value, oh);
    }
    fused.insert(fused.end(), ft.begin(), ft.end());
    fused.insert(fused.end(), fn.begin(), fn.end());
    out.push_back(sig(affine(p.output_w.value, p.output_b.value, fused)[0]));
  }
  return out;
}

}  // namespace

TEST(ModelParams, ShapesAndInitialization) {
  const auto cfg = desk_config();
  const auto p = init_params(cfg);
  validate_params(p, cfg);
  EXPECT_EQ(p.output_w.value.cols(), cfg.content_dim + 1 + cfg.tfidf_dim + cfg.ner_dim);
  for (double v : p.embedding.value.row(Vocabulary::kOov)) EXPECT_EQ(v, 0.0);
  for (double v : p.content_b.value.values()) EXPECT_EQ(v, 0.0);
  for (double v : p.cell(0, 0).w.value.values()) {
    EXPECT_GE(v, -0.08);
    EXPECT_LE(v, 0.08);
  }
  const double e = 0.5 / std::sqrt(8.0);
  for (double v : p.embedding.value.values()) EXPECT_LE(std::abs(v), e);
  // Same seed, same parameters.
  const auto q = init_params(cfg);
  for (std::size_t k = 0; k < p.all().size(); ++k) {
    EXPECT_EQ(p.all()[k]->value, q.all()[k]->value);
  }
  auto bad = cfg;
  bad.lstm_hidden = 0;
  EXPECT_THROW(init_params(bad), ValidationError);
}

TEST(EmbedLookup, RowsAndGradients) {
  auto cfg = desk_config();
  auto p = noisy_params(cfg, 1);
  nn::Tape tape;
  nn::Var a = nn::lookup_row(tape, p.embedding, 4);
  nn::Var b = nn::lookup_row(tape, p.embedding, 4);
  nn::Var c = nn::lookup_row(tape, p.embedding, 7);
  const auto row = p.embedding.value.row(4);
  EXPECT_EQ(values(a), Vec(row.begin(), row.end()));
  EXPECT_EQ(values(a), values(b));
  EXPECT_THROW(nn::lookup_row(tape, p.embedding, cfg.vocab_size), ShapeError);

  p.zero_grad();
  std::vector<nn::Var> parts = {a, c};
  tape.backward(nn::sum(nn::concat(parts)));
  for (std::size_t r = 0; r < cfg.vocab_size; ++r)
    for (double g : p.embedding.grad.row(r)) EXPECT_EQ(g, (r == 4 || r == 7) ? 1.0 : 0.0);

  std::vector<nn::Parameter*> ps = {&p.embedding};
  const auto report = nn::finite_difference_check(ps, [&](nn::Tape& t) {
    std::vector<nn::Var> v = {nn::lookup_row(t, p.embedding, 4),
                              nn::lookup_row(t, p.embedding, 7)};
    return nn::sum(nn::concat(v));
  });
  EXPECT_TRUE(report.passed());
}

TEST(LstmCell, ZeroEverythingGivesZeroState) {
  LstmWeights lw{nn::Parameter("w", Tensor(nn::Shape{12, 6})),
                 nn::Parameter("b", Tensor(nn::Shape{12}))};
  nn::Tape tape;
  LstmState prev{tape.constant(Tensor(nn::Shape{3})), tape.constant(Tensor(nn::Shape{3}))};
  const auto s = lstm_cell(tape, lw, tape.constant(Tensor(nn::Shape{3})), prev);
  for (double v : s.h.value().values()) EXPECT_EQ(v, 0.0);
  for (double v : s.c.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmCell, SaturatedGatesCarryMemory) {
  const std::size_t H = 3, I = 2;
  nn::Rng rng(4);
  LstmWeights lw{nn::Parameter("w", Tensor(nn::Shape{4 * H, I + H})),
                 nn::Parameter("b", Tensor(nn::Shape{4 * H}))};
  nn::init_uniform(lw.w, rng, -0.3, 0.3);
  for (std::size_t k = 0; k < H; ++k) {
    lw.b.value[k] = -60.0;     // input gate shut
    lw.b.value[H + k] = 60.0;  // forget gate open
  }
  nn::Tape tape;
  const Vec c_prev = {0.7, -1.3, 2.1};
  LstmState prev{tape.constant(Tensor::vector({0.1, 0.2, -0.3})),
                 tape.constant(Tensor::vector(c_prev))};
  const auto s = lstm_cell(tape, lw, tape.constant(Tensor::vector({0.5, -0.5})), prev);
  for (std::size_t k = 0; k < H; ++k) EXPECT_NEAR(s.c.value()[k], c_prev[k], 1e-12);
}

TEST(LstmCell, MatchesHandCodedStep) {
  const std::size_t H = 4, I = 3;
  nn::Rng rng(8);
  LstmWeights lw{nn::Parameter("w", Tensor(nn::Shape{4 * H, I + H})),
                 nn::Parameter("b", Tensor(nn::Shape{4 * H}))};
  nn::init_uniform(lw.w, rng, -1, 1);
  nn::init_uniform(lw.b, rng, -1, 1);
  Vec x = {0.3, -0.8, 1.1}, h = {0.1, -0.2, 0.05, 0.4}, c = {-0.5, 0.9, 0.2, 0.0};
  nn::Tape tape;
  LstmState prev{tape.constant(Tensor::vector(h)), tape.constant(Tensor::vector(c))};
  const auto s = lstm_cell(tape, lw, tape.constant(Tensor::vector(x)), prev);
  ref_lstm_step(lw, x, h, c);
  for (std::size_t k = 0; k < H; ++k) {
    EXPECT_NEAR(s.h.value()[k], h[k], 1e-14);
    EXPECT_NEAR(s.c.value()[k], c[k], 1e-14);
  }
}

TEST(BiLstm, SingleTokenAndWidths) {
  auto cfg = desk_config();
  auto p = noisy_params(cfg, 2);
  nn::Tape tape;
  std::vector<nn::Var> in = {nn::lookup_row(tape, p.embedding, 3)};
  const auto st = bilstm_encode(tape, p, cfg, in);
  ASSERT_EQ(st.concat.size(), 1u);
  EXPECT_EQ(st.concat[0].size(), 2 * cfg.lstm_hidden);
  EXPECT_EQ(st.forward[0].size(), cfg.lstm_hidden);
}

// With identical weights in both directions and a palindromic input, the
// backward states mirror the forward states.
TEST(BiLstm, PalindromeSymmetry) {
  auto cfg = desk_config();
  cfg.lstm_layers = 1;
  auto p = noisy_params(cfg, 5);
  p.cell(0, 1).w.value = p.cell(0, 0).w.value;
  p.cell(0, 1).b.value = p.cell(0, 0).b.value;
  const std::vector<std::size_t> ids = {3, 5, 9, 5, 3};
  nn::Tape tape;
  std::vector<nn::Var> in;
  for (auto id : ids) in.push_back(nn::lookup_row(tape, p.embedding, id));
  const auto st = bilstm_encode(tape, p, cfg, in);
  const std::size_t n = ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = values(st.forward[i]);
    const auto b = values(st.backward[n - 1 - i]);
    for (std::size_t k = 0; k < f.size(); ++k) EXPECT_NEAR(f[k], b[k], 1e-14);
  }
}

TEST(ContentFeature, AffineMap) {
  auto cfg = desk_config();
  auto p = init_params(cfg);
  nn::Tape tape;
  nn::Var zero = tape.constant(Tensor(nn::Shape{2 * cfg.lstm_hidden}));
  for (double v : content_feature(tape, p, zero).value().values()) EXPECT_EQ(v, 0.0);

  p.content_w.value.fill(0.0);
  for (std::size_t k = 0; k < cfg.content_dim; ++k) p.content_w.value.at(k, k) = 1.0;
  Vec s(2 * cfg.lstm_hidden);
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = 0.1 * static_cast<double>(k) - 0.3;
  const auto f = values(content_feature(tape, p, tape.constant(Tensor::vector(s))));
  for (std::size_t k = 0; k < cfg.content_dim; ++k) EXPECT_DOUBLE_EQ(f[k], s[k]);

  auto q = noisy_params(cfg, 9);
  std::vector<nn::Parameter*> ps = {&q.content_w, &q.content_b};
  const Tensor st = Tensor::vector(s);
  EXPECT_TRUE(nn::finite_difference_check(ps, [&](nn::Tape& t) {
                return nn::sum(nn::tanh(content_feature(t, q, t.constant(st))));
              }).passed());
}

TEST(TitleRepresentation, PoolingCases) {
  auto cfg = desk_config();
  auto p = noisy_params(cfg, 10);
  const std::size_t S = 2 * cfg.lstm_hidden;
  nn::Tape tape;
  std::vector<nn::Var> zeros = {tape.constant(Tensor(nn::Shape{S})),
                                tape.constant(Tensor(nn::Shape{S}))};
  std::vector<int> mask = {1, 1};
  const auto d0 = values(title_representation(tape, p, zeros, mask));
  for (std::size_t k = 0; k < S; ++k) EXPECT_DOUBLE_EQ(d0[k], std::tanh(p.title_b.value[k]));

  nn::Rng rng(1);
  std::vector<Tensor> states;
  for (int i = 0; i < 4; ++i) {
    Tensor t(nn::Shape{S});
    for (double& v : t.values()) v = rng.uniform(-1, 1);
    states.push_back(t);
  }
  std::vector<nn::Var> one = {tape.constant(states[0])};
  std::vector<int> m1 = {1};
  const auto d1 = values(title_representation(tape, p, one, m1));
  const auto direct =
      values(nn::tanh(nn::add(nn::matvec(tape.param(p.title_w), one[0]), tape.param(p.title_b))));
  EXPECT_EQ(d1, direct);
  for (double v : d1) EXPECT_LT(std::abs(v), 1.0);

  std::vector<nn::Var> fwd, rev;
  for (int i = 0; i < 4; ++i) fwd.push_back(tape.constant(states[i]));
  for (int i : {2, 0, 3, 1}) rev.push_back(tape.constant(states[i]));
  std::vector<int> m4 = {1, 1, 1, 1};
  const auto a = values(title_representation(tape, p, fwd, m4));
  const auto b = values(title_representation(tape, p, rev, m4));
  for (std::size_t k = 0; k < S; ++k) EXPECT_NEAR(a[k], b[k], 1e-15);

  std::vector<int> none = {0, 0};
  EXPECT_THROW(title_representation(tape, p, zeros, none), ValidationError);
}

TEST(AttentionFeature, BilinearForm) {
  auto cfg = desk_config();
  auto p = noisy_params(cfg, 12);
  const std::size_t S = 2 * cfg.lstm_hidden;
  nn::Rng rng(2);
  Vec s(S), d(S);
  for (auto& v : s) v = rng.uniform(-1, 1);
  for (auto& v : d) v = rng.uniform(-1, 1);
  nn::Tape tape;

  auto q = p;
  q.attention_w.value.fill(0.0);
  q.attention_b.value[0] = 0.37;
  EXPECT_DOUBLE_EQ(attention_feature(tape, q, tape.constant(Tensor::vector(d)),
                                     tape.constant(Tensor::vector(s)))
                       .value()
                       .item(),
                   0.37);

  for (std::size_t k = 0; k < S; ++k) q.attention_w.value.at(k, k) = 1.0;
  double norm2 = 0.0;
  for (double v : s) norm2 += v * v;
  EXPECT_NEAR(attention_feature(tape, q, tape.constant(Tensor::vector(s)),
                                tape.constant(Tensor::vector(s)))
                  .value()
                  .item(),
              norm2 + 0.37, 1e-14);

  std::vector<nn::Parameter*> ps = {&p.attention_w, &p.attention_b};
  const Tensor dt = Tensor::vector(d), st = Tensor::vector(s);
  EXPECT_TRUE(nn::finite_difference_check(ps, [&](nn::Tape& t) {
                return nn::tanh(attention_feature(t, p, t.constant(dt), t.constant(st)));
              }).passed());
}

TEST(WideBranches, OneHotSelectsColumn) {
  auto cfg = desk_config();
  auto p = noisy_params(cfg, 13);
  nn::Tape tape;
  for (std::size_t j = 0; j < cfg.ner_tag_count; ++j) {
    const auto f = values(ner_feature(tape, p, j, cfg.ner_tag_count));
    for (std::size_t k = 0; k < cfg.ner_dim; ++k) {
      EXPECT_DOUBLE_EQ(f[k], p.ner_w.value.at(k, j) + p.ner_b.value[k]);
    }
  }
  const auto ft = values(tfidf_feature(tape, p, {0.0, 0.0, 0.0}));
  for (std::size_t k = 0; k < cfg.tfidf_dim; ++k) EXPECT_EQ(ft[k], p.tfidf_b.value[k]);
  EXPECT_THROW(ner_feature(tape, p, cfg.ner_tag_count, cfg.ner_tag_count), ValidationError);

  std::vector<nn::Parameter*> ps = {&p.tfidf_w, &p.tfidf_b, &p.ner_w, &p.ner_b};
  EXPECT_TRUE(nn::finite_difference_check(ps, [&](nn::Tape& t) {
                return nn::add(nn::sum(nn::tanh(tfidf_feature(t, p, {0.3, 1.2, 0.36}))),
                               nn::sum(nn::tanh(ner_feature(t, p, 2, cfg.ner_tag_count))));
              }).passed());
}

TEST(EnsembleScore, ZeroFeaturesGiveHalfAndLogitIsMonotone) {
  auto cfg = desk_config();
  auto p = noisy_params(cfg, 14);
  p.output_b.value[0] = 0.0;
  nn::Tape tape;
  auto z = [&](std::size_t n) { return tape.constant(Tensor(nn::Shape{n})); };
  nn::Var logit = ensemble_logit(tape, p, z(cfg.content_dim), tape.constant(Tensor::scalar(0.0)),
                                 z(cfg.tfidf_dim), z(cfg.ner_dim));
  EXPECT_DOUBLE_EQ(nn::sigmoid(logit).value()[0], 0.5);
  double prev = 0.0;
  for (double b = -5.0; b <= 5.0; b += 0.5) {
    p.output_b.value[0] = b;
    nn::Var l = ensemble_logit(tape, p, z(cfg.content_dim), tape.constant(Tensor::scalar(0.0)),
                               z(cfg.tfidf_dim), z(cfg.ner_dim));
    const double s = nn::sigmoid(l).value()[0];
    EXPECT_GT(s, prev);
    prev = s;
  }
}

TEST(Forward, MatchesReferenceImplementation) {
  auto cfg = desk_config();
  const auto p = noisy_params(cfg, 20);
  nn::Rng rng(21);
  for (std::size_t n : {1u, 2u, 5u}) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(2 + rng.below(cfg.vocab_size - 2));
    const auto wide = random_wide(n, cfg.ner_tag_count, rng);
    for (const Ablation& ab : {Ablation::none(), Ablation::bilstm_only(), Ablation{true, false, false},
                               Ablation{false, true, true}}) {
      nn::Tape tape;
      std::vector<int> mask(n, 1);
      const auto r = forward(tape, p, cfg, ids, mask, wide, ab);
      const auto expected = reference_scores(p, cfg, ids, wide, ab);
      const auto got = values(r.scores);
      ASSERT_EQ(got.size(), n);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], expected[i], 1e-13);
    }
  }
}

TEST(Forward, PaddedPositionsProduceNoScores) {
  auto cfg = desk_config();
  const auto p = noisy_params(cfg, 22);
  nn::Rng rng(1);
  const auto wide = random_wide(3, cfg.ner_tag_count, rng);
  nn::Tape tape;
  std::vector<std::size_t> ids = {4, 5, 6, 0, 0, 0};
  std::vector<int> mask = {1, 1, 1, 0, 0, 0};
  const auto r = forward(tape, p, cfg, ids, mask, wide, Ablation::none());
  EXPECT_EQ(r.scores.size(), 3u);
  EXPECT_EQ(r.positions, (std::vector<std::size_t>{0, 1, 2}));
  std::vector<int> none(6, 0);
  EXPECT_THROW(forward(tape, p, cfg, ids, none, wide, Ablation::none()), ValidationError);
}

TEST(Forward, ScoresStrictlyInsideUnitInterval) {
  auto cfg = desk_config();
  nn::Rng rng(30);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = noisy_params(cfg, 100 + trial, 1.0);
    const std::size_t n = 1 + rng.below(cfg.max_len);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(rng.below(cfg.vocab_size));
    nn::Tape tape;
    const auto r = forward(tape, p, cfg, ids, std::vector<int>(n, 1),
                           random_wide(n, cfg.ner_tag_count, rng), Ablation::none());
    for (double s : values(r.scores)) {
      EXPECT_GT(s, 0.0);
      EXPECT_LT(s, 1.0);
    }
  }
}

// Changing one tag moves that word's NER feature by the difference of two
// columns of the NER weight matrix.
TEST(Forward, TagChangeShiftsNerFeatureByColumnDifference) {
  auto cfg = desk_config();
  auto p = noisy_params(cfg, 40);
  nn::Tape tape;
  const auto a = values(ner_feature(tape, p, 1, cfg.ner_tag_count));
  const auto b = values(ner_feature(tape, p, 3, cfg.ner_tag_count));
  for (std::size_t k = 0; k < cfg.ner_dim; ++k) {
    EXPECT_NEAR(b[k] - a[k], p.ner_w.value.at(k, 3) - p.ner_w.value.at(k, 1), 1e-15);
  }
}

TEST(Forward, AblatedModelIgnoresTagsAndCorpusStatistics) {
  auto cfg = desk_config();
  const auto p = noisy_params(cfg, 41);
  nn::Rng rng(5);
  std::vector<std::size_t> ids = {2, 7, 9, 3};
  std::vector<int> mask(4, 1);
  nn::Tape t1;
  const auto base = values(
      forward(t1, p, cfg, ids, mask, random_wide(4, cfg.ner_tag_count, rng), Ablation::bilstm_only())
          .scores);
  for (int trial = 0; trial < 5; ++trial) {
    nn::Tape t2;
    const auto other = values(forward(t2, p, cfg, ids, mask, random_wide(4, cfg.ner_tag_count, rng),
                                      Ablation::bilstm_only())
                                  .scores);
    EXPECT_EQ(base, other);
  }
  // Sanity: the full model does react to the wide features.
  nn::Tape t3, t4;
  const auto full_a =
      values(forward(t3, p, cfg, ids, mask, random_wide(4, cfg.ner_tag_count, rng), Ablation::none()).scores);
  const auto full_b =
      values(forward(t4, p, cfg, ids, mask, random_wide(4, cfg.ner_tag_count, rng), Ablation::none()).scores);
  EXPECT_NE(full_a, full_b);
}

TEST(Forward, ContentOnlyReducesToAffineSigmoidOfStates) {
  auto cfg = desk_config();
  const auto p = noisy_params(cfg, 42);
  std::vector<std::size_t> ids = {2, 7, 9};
  nn::Rng rng(5);
  nn::Tape tape;
  const auto r = forward(tape, p, cfg, ids, std::vector<int>(3, 1),
                         random_wide(3, cfg.ner_tag_count, rng), Ablation::bilstm_only());
  for (std::size_t t = 0; t < 3; ++t) {
    const auto f = affine(p.content_w.value, p.content_b.value, values(r.states.concat[t]));
    double logit = p.output_b.value[0];
    for (std::size_t k = 0; k < f.size(); ++k) logit += p.output_w.value.at(0, k) * f[k];
    EXPECT_NEAR(r.scores.value()[t], sig(logit), 1e-14);
  }
}

TEST(Forward, MaskingInvariance) {
  auto cfg = desk_config();
  const auto p = noisy_params(cfg, 43);
  nn::Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(cfg.max_len);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(rng.below(cfg.vocab_size));
    const auto wide = random_wide(n, cfg.ner_tag_count, rng);
    nn::Tape t1, t2;
    const auto bare = values(forward(t1, p, cfg, ids, std::vector<int>(n, 1), wide, Ablation::none()).scores);
    auto padded = ids;
    std::vector<int> mask(n, 1);
    while (padded.size() < cfg.max_len) {
      padded.push_back(Vocabulary::kPad);
      mask.push_back(0);
    }
    const auto pad = values(forward(t2, p, cfg, padded, mask, wide, Ablation::none()).scores);
    ASSERT_EQ(bare.size(), pad.size());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(bare[i], pad[i], 1e-9);
  }
}

TEST(Forward, FullModelGradientCheck) {
  auto cfg = desk_config();
  auto p = noisy_params(cfg, 50);
  nn::Rng rng(51);
  const std::vector<std::size_t> ids = {3, 8, 1, 5, 10, 0};
  const std::vector<int> mask = {1, 1, 1, 1, 1, 0};
  const std::vector<int> labels = {1, 0, 0, 1, 1};
  const auto wide = random_wide(5, cfg.ner_tag_count, rng);
  auto params = p.all();
  const auto report = nn::finite_difference_check(params, [&](nn::Tape& t) {
    const auto r = forward(t, p, cfg, ids, mask, wide, Ablation::none());
    return nn::binary_cross_entropy(r.scores, labels, std::vector<int>(5, 1));
  });
  for (const auto& e : report.entries) {
    EXPECT_LE(e.max_relative_error, 1e-4) << e.name;
  }
}
