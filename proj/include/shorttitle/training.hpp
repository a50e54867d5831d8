#pragma once

// Mini-batch training with per-token cross-entropy and Adam, plus the
// checkpoint container.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "shorttitle/corpus.hpp"
#include "shorttitle/errors.hpp"
#include "shorttitle/evalkit.hpp"
#include "shorttitle/inference.hpp"
#include "shorttitle/model.hpp"
#include "shorttitle/numerics.hpp"
#include "shorttitle/wide_features.hpp"

namespace shorttitle {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
  double tau = 0.4;
  bool shuffle = true;
  // Joint gradient-norm cap; 0 disables clipping.
  double clip_norm = 0.0;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw ValidationError("learning rate must be >= 0");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau must be in [0, 1]");
    if (!(clip_norm >= 0.0)) throw ValidationError("clip_norm must be >= 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"learning_rate", c.learning_rate}, {"seed", c.seed},
          {"tau", c.tau}, {"shuffle", c.shuffle}, {"clip_norm", c.clip_norm}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.tau = j.at("tau").get<double>();
    c.shuffle = j.at("shuffle").get<bool>();
    c.clip_norm = j.at("clip_norm").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  return c;
}

// Index batches over a dataset of n examples; the last batch may be short.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                        std::uint64_t seed, bool shuffle) {
  if (n == 0) throw ValidationError("batch_iter: empty dataset");
  if (batch_size < 1) throw ValidationError("batch_iter: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    nn::Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(epoch) + 1));
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double tau = 0.4;
  bool evaluated = false;
  RougeScores rouge;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch}, {"loss", m.loss}, {"tau", m.tau}};
  if (m.evaluated) {
    j["precision"] = m.rouge.precision;
    j["recall"] = m.rouge.recall;
    j["f1"] = m.rouge.f1;
  } else {
    j["precision"] = nullptr;
    j["recall"] = nullptr;
    j["f1"] = nullptr;
  }
  return j;
}

inline EpochMetrics epoch_metrics_from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<std::size_t>();
  m.loss = j.at("loss").get<double>();
  m.tau = j.at("tau").get<double>();
  if (!j.at("f1").is_null()) {
    m.evaluated = true;
    m.rouge = {j.at("precision").get<double>(), j.at("recall").get<double>(),
               j.at("f1").get<double>()};
  }
  return m;
}

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  FeatureContext features;
  ModelParams params;
  std::uint64_t adam_step = 0;
  std::vector<nn::Tensor> adam_m;
  std::vector<nn::Tensor> adam_v;
  std::size_t epoch = 0;
  std::vector<EpochMetrics> history;

  // Epoch with the best evaluated F1, 0 when nothing was evaluated.
  std::size_t best_epoch() const {
    std::size_t best = 0;
    double f1 = -1.0;
    for (const auto& m : history) {
      if (m.evaluated && m.rouge.f1 > f1) {
        f1 = m.rouge.f1;
        best = m.epoch;
      }
    }
    return best;
  }
};

// Vocabulary, tf-idf statistics, and fresh parameters from the training
// split. `model` supplies dimensions; vocab and tag counts are filled in.
inline Checkpoint make_initial_checkpoint(const std::vector<TitleExample>& train_set,
                                          ModelConfig model, const TrainConfig& train,
                                          NerTagSet tagset, NerLexicon lexicon,
                                          std::size_t min_count = 1) {
  train.validate();
  lexicon.validate(tagset);
  Checkpoint ck;
  ck.features.vocab = build_vocabulary(train_set, min_count);
  ck.features.tfidf = TfIdfTable::from_corpus(train_set);
  ck.features.tagset = std::move(tagset);
  ck.features.lexicon = std::move(lexicon);
  ck.features.max_len = model.max_len;
  model.vocab_size = ck.features.vocab.size();
  model.ner_tag_count = ck.features.tagset.size();
  ck.model = model;
  ck.train = train;
  ck.params = init_params(model);
  return ck;
}

inline std::vector<PreparedExample> prepare_all(const FeatureContext& ctx,
                                                const std::vector<TitleExample>& examples) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ctx.prepare(ex));
  return out;
}

inline std::vector<std::vector<double>> score_all(const Checkpoint& ck,
                                                  const std::vector<PreparedExample>& data) {
  std::vector<std::vector<double>> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(score_prepared(ck.params, ck.model, ex));
  return out;
}

// Macro ROUGE-1 at threshold tau against the truncated gold titles.
inline RougeScores evaluate_threshold(const Checkpoint& ck,
                                      const std::vector<PreparedExample>& data, double tau) {
  std::vector<std::vector<std::string>> pred, gold;
  for (const auto& ex : data) {
    const auto scores = score_prepared(ck.params, ck.model, ex);
    const auto words = ex.title.surfaces();
    pred.push_back(kept_words(select_by_threshold(scores, tau), words));
    gold.push_back(ex.title.gold_short());
  }
  return evaluate_dataset(pred, gold);
}

// Sum of per-token losses over a batch, gradients accumulated with weight
// 1 / (real tokens in the batch). Returns (loss sum, token count).
inline std::pair<double, std::size_t> accumulate_batch(Checkpoint& ck,
                                                       const std::vector<PreparedExample>& data,
                                                       const std::vector<std::size_t>& batch) {
  std::size_t tokens = 0;
  for (std::size_t i : batch) tokens += data[i].encoded.length;
  double loss_sum = 0.0;
  for (std::size_t i : batch) {
    const PreparedExample& ex = data[i];
    nn::Tape tape;
    auto r = forward(tape, ck.params, ck.model, ex.encoded.ids, ex.encoded.mask, ex.wide,
                     ck.model.ablation);
    std::vector<int> labels, mask;
    for (std::size_t pos : r.positions) {
      labels.push_back(ex.encoded.labels[pos]);
      mask.push_back(1);
    }
    nn::Var total = nn::bce_sum(r.scores, labels, mask);
    loss_sum += total.value().item();
    tape.backward(nn::scale(total, 1.0 / static_cast<double>(tokens)));
  }
  return {loss_sum, tokens};
}

using EpochCallback = std::function<void(const Checkpoint&, const EpochMetrics&)>;

// Runs cfg.epochs more epochs, continuing the checkpoint's epoch count and
// optimizer state. `dev` may be empty; then in-loop evaluation uses the
// training split.
inline void train(Checkpoint& ck, const std::vector<TitleExample>& train_set,
                  const std::vector<TitleExample>& dev_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (!train_set[i].labeled()) {
      throw ValidationError("train: example " + std::to_string(i) + " has no labels");
    }
  }
  validate_params(ck.params, ck.model);
  ck.train = cfg;
  const auto data = prepare_all(ck.features, train_set);
  const auto dev = prepare_all(ck.features, dev_set.empty() ? train_set : dev_set);

  nn::Adam adam(nn::AdamConfig{cfg.learning_rate});
  if (ck.adam_step > 0) adam.restore(ck.adam_step, ck.adam_m, ck.adam_v);
  auto params = ck.params.all();

  const std::size_t first = ck.epoch + 1, last = ck.epoch + cfg.epochs;
  for (std::size_t epoch = first; epoch <= last; ++epoch) {
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (const auto& batch :
         batch_iter(data.size(), cfg.batch_size, epoch_seed(cfg.seed, epoch), cfg.shuffle)) {
      ck.params.zero_grad();
      auto [l, t] = accumulate_batch(ck, data, batch);
      loss_sum += l;
      tokens += t;
      if (cfg.clip_norm > 0.0) nn::clip_grad_norm(params, cfg.clip_norm);
      adam.step(params);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(tokens);
    m.tau = cfg.tau;
    m.evaluated = true;
    m.rouge = evaluate_threshold(ck, dev, cfg.tau);
    ck.epoch = epoch;
    ck.adam_step = adam.steps();
    ck.adam_m = adam.first_moments();
    ck.adam_v = adam.second_moments();
    ck.history.push_back(m);
    if (on_epoch) on_epoch(ck, m);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   magic "SHTCKPT\0" | u32 version | u64 header length | header JSON
//   | tensor payload (host-order doubles, header order) | u64 FNV-1a of all
//   preceding bytes

inline constexpr char kCheckpointMagic[8] = {'S', 'H', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointExpectations {
  std::optional<std::uint64_t> vocab_hash;
  std::optional<std::uint64_t> tagset_hash;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

inline std::uint64_t fnv1a_bytes(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw ParseError("checkpoint truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json h;
  h["model"] = to_json(ck.model);
  h["train"] = to_json(ck.train);
  h["max_len"] = ck.features.max_len;
  h["vocab"] = ck.features.vocab.regular_words();
  h["vocab_hash"] = hex64(ck.features.vocab.hash());
  h["tagset"] = ck.features.tagset.names();
  h["tagset_hash"] = hex64(ck.features.tagset.hash());
  h["tfidf_titles"] = ck.features.tfidf.title_count();
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [w, c] : ck.features.tfidf.doc_counts()) counts[w] = c;
  h["tfidf_doc_counts"] = counts;
  h["lexicon"] = ck.features.lexicon.entries();
  h["epoch"] = ck.epoch;
  h["adam_step"] = ck.adam_step;
  h["history"] = nlohmann::json::array();
  for (const auto& m : ck.history) h["history"].push_back(to_json(m));

  std::vector<const nn::Tensor*> tensors;
  nlohmann::json listing = nlohmann::json::array();
  for (const nn::Parameter* p : ck.params.all()) {
    listing.push_back({{"name", p->name}, {"shape", p->value.shape()}});
    tensors.push_back(&p->value);
  }
  if (ck.adam_m.size() != ck.adam_v.size()) throw ValidationError("adam moment count mismatch");
  for (std::size_t k = 0; k < ck.adam_m.size(); ++k) {
    listing.push_back({{"name", "adam.m." + std::to_string(k)}, {"shape", ck.adam_m[k].shape()}});
    tensors.push_back(&ck.adam_m[k]);
  }
  for (std::size_t k = 0; k < ck.adam_v.size(); ++k) {
    listing.push_back({{"name", "adam.v." + std::to_string(k)}, {"shape", ck.adam_v[k].shape()}});
    tensors.push_back(&ck.adam_v[k]);
  }
  h["tensors"] = listing;
  h["adam_moments"] = ck.adam_m.size();

  const std::string header = h.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, header.size());
  out += header;
  for (const nn::Tensor* t : tensors)
    for (double v : t->values()) detail::put<double>(out, v);
  detail::put<std::uint64_t>(out, detail::fnv1a_bytes(out));
  return out;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 16);
    if (used != s.size()) throw ParseError("bad hash " + s);
    return v;
  } catch (const std::logic_error&) {
    throw ParseError("bad hash " + s);
  }
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes,
                                         const CheckpointExpectations& expect = {}) {
  if (bytes.size() < sizeof kCheckpointMagic + 4 + 8 + 8) throw ParseError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw ParseError("not a checkpoint file (bad magic)");
  }
  {
    const std::size_t body = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, sizeof stored);
    if (stored != detail::fnv1a_bytes(bytes.substr(0, body))) {
      throw ParseError("checkpoint truncated or corrupted (checksum mismatch)");
    }
    bytes = bytes.substr(0, body);
  }
  detail::Reader rd(bytes);
  rd.bytes(sizeof kCheckpointMagic);
  const auto version = rd.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = rd.get<std::uint64_t>();
  if (header_len > bytes.size()) throw ParseError("checkpoint truncated");
  const std::string_view header_text = rd.bytes(header_len);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.model = model_config_from_json(h.at("model"));
    ck.train = train_config_from_json(h.at("train"));
    ck.features.max_len = h.at("max_len").get<std::size_t>();
    ck.features.vocab = Vocabulary::from_words(h.at("vocab").get<std::vector<std::string>>());
    ck.features.tagset = NerTagSet(h.at("tagset").get<std::vector<std::string>>());
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& [w, c] : h.at("tfidf_doc_counts").items()) counts[w] = c.get<std::size_t>();
    ck.features.tfidf = TfIdfTable(h.at("tfidf_titles").get<std::size_t>(), std::move(counts));
    for (const auto& [w, t] : h.at("lexicon").get<std::map<std::string, std::string>>()) {
      ck.features.lexicon.add(w, t);
    }
    ck.epoch = h.at("epoch").get<std::size_t>();
    ck.adam_step = h.at("adam_step").get<std::uint64_t>();
    for (const auto& m : h.at("history")) ck.history.push_back(epoch_metrics_from_json(m));

    const auto vocab_hash = parse_hex64(h.at("vocab_hash").get<std::string>());
    const auto tagset_hash = parse_hex64(h.at("tagset_hash").get<std::string>());
    if (vocab_hash != ck.features.vocab.hash() || tagset_hash != ck.features.tagset.hash()) {
      throw ParseError("checkpoint header hashes do not match its contents");
    }
    if (expect.vocab_hash && *expect.vocab_hash != vocab_hash) {
      throw CheckpointError("vocabulary hash mismatch: checkpoint " + hex64(vocab_hash) +
                            ", expected " + hex64(*expect.vocab_hash));
    }
    if (expect.tagset_hash && *expect.tagset_hash != tagset_hash) {
      throw CheckpointError("tag set hash mismatch: checkpoint " + hex64(tagset_hash) +
                            ", expected " + hex64(*expect.tagset_hash));
    }

    ck.params = init_params(ck.model);
    auto params = ck.params.all();
    const auto& listing = h.at("tensors");
    const std::size_t moments = h.at("adam_moments").get<std::size_t>();
    if (listing.size() != params.size() + 2 * moments) {
      throw ParseError("checkpoint tensor listing has unexpected length");
    }
    auto read_tensor = [&](const nlohmann::json& entry) {
      const auto shape = entry.at("shape").get<nn::Shape>();
      std::vector<double> values(nn::Tensor::element_count(shape));
      for (double& v : values) v = rd.get<double>();
      return nn::Tensor(shape, std::move(values));
    };
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& entry = listing[k];
      if (entry.at("name").get<std::string>() != params[k]->name) {
        throw ParseError("checkpoint tensor " + std::to_string(k) + " is " +
                         entry.at("name").get<std::string>() + ", expected " + params[k]->name);
      }
      nn::Tensor t = read_tensor(entry);
      if (t.shape() != params[k]->value.shape()) {
        throw ParseError("checkpoint tensor " + params[k]->name + " has wrong shape");
      }
      params[k]->value = std::move(t);
    }
    for (std::size_t k = 0; k < moments; ++k) ck.adam_m.push_back(read_tensor(listing[params.size() + k]));
    for (std::size_t k = 0; k < moments; ++k) {
      ck.adam_v.push_back(read_tensor(listing[params.size() + moments + k]));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }

  if (rd.position() != bytes.size()) throw ParseError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  const CheckpointExpectations& expect = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expect);
}

}  // namespace shorttitle
