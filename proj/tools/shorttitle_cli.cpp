// shorttitle: synthesize corpora, train, predict, evaluate, and compare
// short-title extractors.
//
// Exit codes: 0 success, 2 usage, 3 validation (bad data, config, or
// incompatible checkpoint), 4 I/O.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "shorttitle/corpus.hpp"
#include "shorttitle/evalkit.hpp"
#include "shorttitle/inference.hpp"
#include "shorttitle/model.hpp"
#include "shorttitle/training.hpp"
#include "shorttitle/wide_features.hpp"

namespace fs = std::filesystem;
using namespace shorttitle;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitIo = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

std::string default_out_dir() {
  const char* env = std::getenv("SHORTTITLE_OUT_DIR");
  return env && *env ? env : "shorttitle_out";
}

// ---------------------------------------------------------------------------
// Inference settings shared by predict / eval / compare

struct InferenceOptions {
  std::string mode = "threshold";
  double tau = 0.4;
  std::size_t budget = 12;
  std::string separator;

  void validate() const {
    if (mode != "threshold" && mode != "knapsack") {
      throw UsageError("--mode must be threshold or knapsack");
    }
  }
  std::string setting() const {
    return mode == "threshold" ? tau_setting(tau) : "budget=" + std::to_string(budget);
  }
};

void add_inference_options(CLI::App* cmd, InferenceOptions& o) {
  cmd->add_option("--mode", o.mode, "threshold or knapsack")
      ->check(CLI::IsMember({"threshold", "knapsack"}))
      ->capture_default_str();
  cmd->add_option("--tau", o.tau, "keep words scoring >= tau")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--budget", o.budget, "character budget for knapsack mode")
      ->capture_default_str();
  cmd->add_option("--separator", o.separator, "string placed between kept words");
}

std::vector<std::size_t> char_lengths(const TitleExample& ex) {
  std::vector<std::size_t> out;
  for (const auto& w : ex.words) out.push_back(w.char_len);
  return out;
}

Selection select(const InferenceOptions& o, const std::vector<double>& scores,
                 const TitleExample& title) {
  const auto lens = char_lengths(title);
  if (o.mode == "knapsack") return select_by_knapsack(scores, lens, o.budget);
  return select_by_threshold(scores, o.tau, lens);
}

// Overrides the checkpoint's lexicon and checks the tag set hash.
Checkpoint open_checkpoint(const std::string& path, const std::string& tagset_path,
                           const std::string& lexicon_path) {
  CheckpointExpectations expect;
  if (!tagset_path.empty()) expect.tagset_hash = load_tagset(tagset_path).hash();
  Checkpoint ck = load_checkpoint(path, expect);
  if (!lexicon_path.empty()) {
    NerLexicon lex = load_lexicon(lexicon_path);
    lex.validate(ck.features.tagset);
    ck.features.lexicon = std::move(lex);
  }
  return ck;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string spec_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count;
  std::size_t holdout = 0;
  std::string holdout_out;
  std::string lexicon_out;
  std::string tagset_out;
  bool rare_words = false;
  bool shuffle_order = false;
};

int run_synth(CLI::App& app, const SynthOptions& o) {
  if (o.out.empty()) throw UsageError("synth: --out is required");
  for (const auto* path : {&o.out, &o.holdout_out, &o.lexicon_out, &o.tagset_out})
    if (!path->empty()) ensure_parent(*path);
  SyntheticSpec spec;
  if (!o.spec_path.empty()) {
    std::ifstream in(o.spec_path);
    if (!in) throw IoError("cannot open spec " + o.spec_path);
    try {
      spec = synthetic_spec_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(std::string("synth: invalid spec file: ") + e.what());
    } catch (const ValidationError& e) {
      throw UsageError(std::string("synth: invalid spec: ") + e.what());
    }
  }
  if (o.seed) spec.seed = *o.seed;
  if (o.count) spec.title_count = *o.count;
  if (o.rare_words) {
    for (auto& f : spec.families) f.vocab_size = 0;
  }
  if (o.shuffle_order || o.rare_words) spec.shuffle_order = true;
  if (o.holdout > 0 && o.holdout_out.empty()) {
    throw UsageError("synth: --holdout needs --holdout-out");
  }
  try {
    spec.validate();
  } catch (const ValidationError& e) {
    throw UsageError(std::string("synth: invalid spec: ") + e.what());
  }
  const std::size_t total = spec.title_count + o.holdout;
  SyntheticSpec gen = spec;
  gen.title_count = total;
  const SyntheticCorpus corpus = generate_synthetic(gen);
  std::vector<TitleExample> main_part(corpus.examples.begin(),
                                      corpus.examples.begin() + static_cast<std::ptrdiff_t>(spec.title_count));
  save_dataset(o.out, main_part);
  if (o.holdout > 0) {
    std::vector<TitleExample> rest(corpus.examples.begin() + static_cast<std::ptrdiff_t>(spec.title_count),
                                   corpus.examples.end());
    save_dataset(o.holdout_out, rest);
  }
  if (!o.lexicon_out.empty()) save_lexicon(o.lexicon_out, corpus.lexicon);
  if (!o.tagset_out.empty()) {
    std::vector<std::string> tags = NerTagSet().names();
    for (const auto& t : corpus.tags)
      if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
    save_tagset(o.tagset_out, NerTagSet(tags));
  }
  write_text(o.out + ".spec.json", synthetic_spec_to_json(spec).dump(2) + "\n");
  write_text(o.out + ".config.toml", app.config_to_str(true, false));
  const CorpusStats stats = compute_corpus_stats(main_part);
  std::cerr << "wrote " << main_part.size() << " titles to " << o.out << " (mean "
            << format_fixed(stats.mean_words_per_title, 2) << " words, "
            << format_fixed(stats.mean_chars_per_title, 2) << " chars per title; "
            << format_fixed(stats.mean_words_per_summary, 2) << " words per summary)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string train_path;
  std::string dev_path;
  std::string out_dir = default_out_dir();
  std::string tagset_path;
  std::string lexicon_path;
  std::string resume;
  std::vector<std::string> ablate;
  std::string baseline;
  std::size_t min_count = 1;
  ModelConfig model;
  TrainConfig train;
};

Ablation parse_ablation(const TrainOptions& o) {
  Ablation a;
  if (!o.baseline.empty()) {
    if (o.baseline != "bilstm") throw UsageError("--baseline must be bilstm");
    a = Ablation::bilstm_only();
  }
  for (const auto& branch : o.ablate) {
    if (branch == "attention") a.attention = true;
    else if (branch == "tfidf") a.tfidf = true;
    else if (branch == "ner") a.ner = true;
    else throw UsageError("--ablate accepts attention, tfidf, ner; got " + branch);
  }
  return a;
}

int run_train(CLI::App& app, TrainOptions& o) {
  o.train.validate();
  const auto train_set = load_dataset(o.train_path);
  std::vector<TitleExample> dev_set;
  if (!o.dev_path.empty()) dev_set = load_dataset(o.dev_path);
  ensure_dir(o.out_dir);

  Checkpoint ck;
  if (!o.resume.empty()) {
    ck = open_checkpoint(o.resume, o.tagset_path, o.lexicon_path);
  } else {
    NerTagSet tagset = o.tagset_path.empty() ? NerTagSet() : load_tagset(o.tagset_path);
    NerLexicon lexicon = o.lexicon_path.empty() ? NerLexicon() : load_lexicon(o.lexicon_path);
    o.model.ablation = parse_ablation(o);
    ck = make_initial_checkpoint(train_set, o.model, o.train, std::move(tagset),
                                 std::move(lexicon), o.min_count);
  }
  write_text(o.out_dir + "/run_config.toml", app.config_to_str(true, false));

  const std::string metrics_path = o.out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path, o.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot write " + metrics_path);

  train(ck, train_set, dev_set, o.train, [&](const Checkpoint& c, const EpochMetrics& m) {
    save_checkpoint(o.out_dir + "/checkpoint_epoch" + std::to_string(m.epoch) + ".bin", c);
    metrics << to_json(m).dump() << '\n' << std::flush;
    std::cerr << "epoch " << m.epoch << " loss " << format_fixed(m.loss, 6) << " P "
              << format_fixed(m.rouge.precision) << " R " << format_fixed(m.rouge.recall)
              << " F1 " << format_fixed(m.rouge.f1) << " (tau " << m.tau << ")\n";
  });
  save_checkpoint(o.out_dir + "/model.ckpt", ck);
  std::cerr << "final epoch " << ck.epoch << ", best F1 at epoch " << ck.best_epoch()
            << "; checkpoint " << o.out_dir << "/model.ckpt\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::string tagset_path;
  std::string lexicon_path;
  InferenceOptions inference;
};

int run_predict(CLI::App& app, PredictOptions& o) {
  o.inference.validate();
  const Checkpoint ck = open_checkpoint(o.checkpoint, o.tagset_path, o.lexicon_path);
  const auto input = load_dataset(o.input);
  std::ostringstream records;
  for (const auto& ex : input) {
    const PreparedExample p = ck.features.prepare(ex);
    const auto scores = score_prepared(ck.params, ck.model, p);
    const Selection sel = select(o.inference, scores, p.title);
    const auto words = p.title.surfaces();
    nlohmann::json rec = {{"kept", sel.kept},
                          {"kept_words", kept_words(sel, words)},
                          {"short_title", render_short_title(sel, words, o.inference.separator)},
                          {"chars", sel.total_chars},
                          {"scores", scores}};
    records << rec.dump() << '\n';
  }
  ensure_parent(o.out);
  write_text(o.out, records.str());
  write_text(o.out + ".config.toml", app.config_to_str(true, false));
  return 0;
}

// ---------------------------------------------------------------------------
// eval / compare

struct EvalOptions {
  std::string gold;
  std::string predictions;
  std::string checkpoint;
  std::vector<std::string> systems;  // name=checkpoint
  std::vector<double> sweep_tau;
  bool textrank = false;
  std::size_t textrank_k = 5;
  std::size_t max_len = 15;
  std::string report_out;
  std::string tagset_path;
  std::string lexicon_path;
  InferenceOptions inference;
};

std::vector<SystemRun> checkpoint_runs(const std::string& name, const Checkpoint& ck,
                                       const std::vector<TitleExample>& gold,
                                       const EvalOptions& o) {
  std::vector<std::vector<double>> scores;
  std::vector<TitleExample> titles;
  for (const auto& ex : gold) {
    const PreparedExample p = ck.features.prepare(ex);
    scores.push_back(score_prepared(ck.params, ck.model, p));
    titles.push_back(p.title);
  }
  if (!o.sweep_tau.empty()) {
    std::vector<std::vector<std::string>> words;
    for (const auto& t : titles) words.push_back(t.surfaces());
    return sweep_tau(name, scores, words, o.sweep_tau);
  }
  SystemRun run{name, o.inference.setting(), {}};
  for (std::size_t i = 0; i < titles.size(); ++i) {
    run.predictions.push_back(kept_words(select(o.inference, scores[i], titles[i]),
                                         titles[i].surfaces()));
  }
  return {run};
}

SystemRun textrank_run(const std::vector<TitleExample>& gold, const EvalOptions& o,
                       std::size_t max_len) {
  SystemRun run{"TextRank", "", {}};
  const TextRankConfig cfg;
  run.setting = o.inference.mode == "knapsack" ? "budget=" + std::to_string(o.inference.budget)
                                               : "top-" + std::to_string(o.textrank_k);
  for (const auto& ex : gold) {
    const TitleExample t = truncate(ex, max_len);
    const auto words = t.surfaces();
    const Selection sel = o.inference.mode == "knapsack"
                              ? textrank_extract_budget(words, char_lengths(t), cfg, o.inference.budget)
                              : textrank_extract_topk(words, cfg, o.textrank_k);
    run.predictions.push_back(kept_words(sel, words));
  }
  return run;
}

std::vector<std::vector<std::string>> load_prediction_words(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).at("kept_words").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("predictions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

int run_report(CLI::App& app, EvalOptions& o, bool compare_mode) {
  o.inference.validate();
  const auto gold = load_dataset(o.gold);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!gold[i].labeled()) {
      throw ValidationError("gold example " + std::to_string(i + 1) + " has no labels");
    }
  }
  std::size_t max_len = o.max_len;
  std::vector<SystemRun> runs;

  if (!compare_mode && !o.predictions.empty() && !o.checkpoint.empty()) {
    throw UsageError("eval: give either --predictions or --checkpoint, not both");
  }
  if (!compare_mode && !o.predictions.empty()) {
    auto pred = load_prediction_words(o.predictions);
    if (pred.size() != gold.size()) {
      throw ValidationError("eval: " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(gold.size()) + " gold titles");
    }
    runs.push_back({"predictions", fs::path(o.predictions).filename().string(), std::move(pred)});
  }
  std::vector<std::pair<std::string, std::string>> systems;
  if (!o.checkpoint.empty()) systems.emplace_back("model", o.checkpoint);
  for (const auto& s : o.systems) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      throw UsageError("--system expects NAME=CHECKPOINT, got " + s);
    }
    systems.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [name, path] : systems) {
    const Checkpoint ck = open_checkpoint(path, o.tagset_path, o.lexicon_path);
    max_len = ck.features.max_len;
    for (auto& run : checkpoint_runs(name, ck, gold, o)) runs.push_back(std::move(run));
  }
  if (o.textrank) runs.push_back(textrank_run(gold, o, max_len));
  if (runs.empty()) {
    throw UsageError(compare_mode ? "compare: give at least one --system or --textrank"
                                  : "eval: give --predictions, --checkpoint, or --textrank");
  }

  std::vector<std::vector<std::string>> reference;
  for (const auto& ex : gold) reference.push_back(truncate(ex, max_len).gold_short());
  const Report report = compare_models(runs, reference);
  std::cout << report.to_table();
  if (!o.report_out.empty()) {
    ensure_parent(o.report_out);
    write_text(o.report_out, report.to_jsonl());
    write_text(o.report_out + ".config.toml", app.config_to_str(true, false));
  }
  return 0;
}

void add_eval_options(CLI::App* cmd, EvalOptions& o, bool compare_mode) {
  cmd->add_option("--gold", o.gold, "labeled JSONL dataset")->required();
  if (!compare_mode) {
    cmd->add_option("--predictions", o.predictions, "output of `shorttitle predict`");
    cmd->add_option("--checkpoint", o.checkpoint, "score the gold titles with this model");
    cmd->add_option("--max-len", o.max_len, "truncation applied to gold with --predictions")
        ->capture_default_str();
  }
  cmd->add_option("--system", o.systems, "NAME=CHECKPOINT, repeatable");
  cmd->add_option("--sweep-tau", o.sweep_tau, "comma-separated thresholds, one row each")
      ->delimiter(',');
  cmd->add_flag("--textrank", o.textrank, "add the TextRank baseline row");
  cmd->add_option("--textrank-k", o.textrank_k, "words kept by TextRank in threshold mode")
      ->capture_default_str();
  cmd->add_option("--report-out", o.report_out, "write JSONL report records here");
  cmd->add_option("--tagset", o.tagset_path, "refuse checkpoints built for another tag set");
  cmd->add_option("--lexicon", o.lexicon_path, "override the checkpoint's NER lexicon");
  add_inference_options(cmd, o.inference);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Extractive short-title generation for product titles"};
  app.set_config("--config", "", "TOML/INI file with option values");
  app.require_subcommand(1);

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a labeled synthetic corpus");
  synth_cmd->add_option("--spec", synth.spec_path, "JSON generator spec");
  synth_cmd->add_option("--out", synth.out, "output JSONL path");
  synth_cmd->add_option("--seed", synth.seed, "override the spec's seed");
  synth_cmd->add_option("--count", synth.count, "titles written to --out");
  synth_cmd->add_option("--holdout", synth.holdout, "extra titles written to --holdout-out");
  synth_cmd->add_option("--holdout-out", synth.holdout_out, "path for held-out titles");
  synth_cmd->add_option("--lexicon-out", synth.lexicon_out, "write word<TAB>tag lexicon");
  synth_cmd->add_option("--tagset-out", synth.tagset_out, "write the tag set");
  synth_cmd->add_flag("--rare-words", synth.rare_words,
                      "every occurrence gets a fresh surface; implies --shuffle-order");
  synth_cmd->add_flag("--shuffle-order", synth.shuffle_order, "shuffle word order per title");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--train", tr.train_path, "labeled JSONL training set")->required();
  train_cmd->add_option("--dev", tr.dev_path, "labeled JSONL set for per-epoch ROUGE");
  train_cmd->add_option("--out-dir", tr.out_dir, "checkpoints and metrics go here")
      ->envname("SHORTTITLE_OUT_DIR")
      ->capture_default_str();
  train_cmd->add_option("--tagset", tr.tagset_path, "tag set file (one tag per line)");
  train_cmd->add_option("--lexicon", tr.lexicon_path, "word<TAB>tag lexicon");
  train_cmd->add_option("--resume", tr.resume, "continue from this checkpoint");
  train_cmd->add_option("--ablate", tr.ablate, "branches to drop: attention,tfidf,ner")
      ->delimiter(',');
  train_cmd->add_option("--baseline", tr.baseline, "bilstm: content branch only");
  train_cmd->add_option("--min-count", tr.min_count, "vocabulary frequency cut-off")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--embed-dim", tr.model.embed_dim)->capture_default_str();
  train_cmd->add_option("--hidden", tr.model.lstm_hidden, "LSTM units per direction")
      ->capture_default_str();
  train_cmd->add_option("--layers", tr.model.lstm_layers)->capture_default_str();
  train_cmd->add_option("--max-len", tr.model.max_len)->capture_default_str();
  train_cmd->add_option("--content-dim", tr.model.content_dim)->capture_default_str();
  train_cmd->add_option("--tfidf-dim", tr.model.tfidf_dim)->capture_default_str();
  train_cmd->add_option("--ner-dim", tr.model.ner_dim)->capture_default_str();
  train_cmd->add_option("--model-seed", tr.model.seed, "parameter initialization seed")
      ->capture_default_str();
  train_cmd->add_option("--epochs", tr.train.epochs)
      ->check(CLI::Range(std::size_t{1}, std::numeric_limits<std::size_t>::max()))
      ->capture_default_str();
  train_cmd->add_option("--batch-size", tr.train.batch_size)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--lr", tr.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--seed", tr.train.seed, "shuffling seed")->capture_default_str();
  train_cmd->add_option("--tau", tr.train.tau, "threshold for per-epoch ROUGE")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  train_cmd->add_flag("!--no-shuffle", tr.train.shuffle, "keep file order");
  train_cmd->add_option("--clip-norm", tr.train.clip_norm, "gradient norm cap, 0 = off")
      ->capture_default_str();

  PredictOptions pr;
  auto* predict_cmd = app.add_subcommand("predict", "extract short titles");
  predict_cmd->add_option("--checkpoint", pr.checkpoint)->required();
  predict_cmd->add_option("--input", pr.input, "JSONL titles")->required();
  predict_cmd->add_option("--out", pr.out, "JSONL predictions")->required();
  predict_cmd->add_option("--tagset", pr.tagset_path, "refuse checkpoints built for another tag set");
  predict_cmd->add_option("--lexicon", pr.lexicon_path, "override the checkpoint's NER lexicon");
  add_inference_options(predict_cmd, pr.inference);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "ROUGE-1 report for predictions or a model");
  add_eval_options(eval_cmd, ev, false);

  EvalOptions cmp;
  auto* compare_cmd = app.add_subcommand("compare", "ROUGE-1 table over several systems");
  add_eval_options(compare_cmd, cmp, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(app, synth);
    if (*train_cmd) return run_train(app, tr);
    if (*predict_cmd) return run_predict(app, pr);
    if (*eval_cmd) return run_report(app, ev, false);
    if (*compare_cmd) return run_report(app, cmp, true);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckpointError& e) {
    std::cerr << "refusing checkpoint: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitUsage;
}
