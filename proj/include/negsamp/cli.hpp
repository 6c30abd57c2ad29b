#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "negsamp/annotation.hpp"
#include "negsamp/checkpoint.hpp"
#include "negsamp/corpus.hpp"
#include "negsamp/distribution.hpp"
#include "negsamp/dual_encoder.hpp"
#include "negsamp/embedding.hpp"
#include "negsamp/error.hpp"
#include "negsamp/eval.hpp"
#include "negsamp/retrieval.hpp"
#include "negsamp/rng.hpp"
#include "negsamp/sampling.hpp"
#include "negsamp/synthetic.hpp"
#include "negsamp/train.hpp"

namespace negsamp::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// Exit status by error category.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,  // bad command line or config
  kInput = 3,  // missing or unreadable input, I/O failure
  kData = 4,   // inputs readable but unusable
  kNumeric = 5,
};

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return kUsage;
    case ErrorKind::Input: return kInput;
    case ErrorKind::Data: return kData;
    case ErrorKind::Numeric: return kNumeric;
  }
  return kInternal;
}

struct LabeledTransform {
  std::string label;
  std::string transform;
};

/// One experiment. Precedence: built-in defaults < config file < flags.
struct ExperimentConfig {
  std::uint64_t seed = 42;

  std::string corpus_path;
  std::string embeddings_path;  // empty: random embeddings over the training vocabulary
  std::string output_dir = "out";

  std::size_t max_context_turns = kDefaultMaxContextTurns;
  SplitSpec split;

  std::string transform = "identity";
  std::size_t neg_ratio = kDefaultNegativesPerPositive;
  bool filter_inverse_count = false;
  bool resample_each_epoch = false;

  std::string encoder = "gru";
  std::size_t hidden = kDefaultHiddenSize;
  std::size_t embedding_dim = 300;
  double embedding_scale = 0.5;
  bool tie_encoders = true;
  std::size_t max_sequence_length = kDefaultMaxSequenceLength;

  TrainConfig train;

  std::size_t m = kDefaultAlternatives;
  std::vector<std::size_t> ks{1, 3, 5};
  std::string alternatives = "identity";

  double c_r = kDefaultResponseWeight;
  std::size_t top_k = 5;

  std::vector<LabeledTransform> grid_train{{"initial", "identity"}, {"uniform", "uniform"}};
  std::vector<LabeledTransform> grid_test{{"initial", "identity"}, {"uniform", "uniform"}};

  std::size_t anno_questions = 400;
  std::size_t anno_responses = kResponsesPerQuestion;

  SyntheticSpec synthetic;
};

namespace detail {

/// Reads a JSON config into an ExperimentConfig, collecting every schema
/// violation before failing.
class ConfigReader {
 public:
  explicit ConfigReader(ExperimentConfig& cfg) : cfg_(cfg) {}

  void read(const json& root) {
    if (!root.is_object()) {
      errors_.push_back("<root>: expected an object");
      return;
    }
    known(root, "", {"seed", "paths", "corpus", "split", "sampling", "model", "train", "eval", "retrieval", "grid",
                     "annotation", "synthetic"});
    uint(root, "", "seed", cfg_.seed);
    if (auto* o = section(root, "paths")) {
      known(*o, "paths", {"corpus", "embeddings", "output_dir"});
      str(*o, "paths", "corpus", cfg_.corpus_path);
      str(*o, "paths", "embeddings", cfg_.embeddings_path);
      str(*o, "paths", "output_dir", cfg_.output_dir);
    }
    if (auto* o = section(root, "corpus")) {
      known(*o, "corpus", {"max_context_turns"});
      positive(*o, "corpus", "max_context_turns", cfg_.max_context_turns);
    }
    if (auto* o = section(root, "split")) {
      known(*o, "split", {"train", "dev", "test"});
      positive(*o, "split", "train", cfg_.split.train);
      positive(*o, "split", "dev", cfg_.split.dev);
      positive(*o, "split", "test", cfg_.split.test);
    }
    if (auto* o = section(root, "sampling")) {
      known(*o, "sampling", {"transform", "neg_ratio", "filter_inverse_count", "resample_each_epoch"});
      transform_field(*o, "sampling", "transform", cfg_.transform);
      positive(*o, "sampling", "neg_ratio", cfg_.neg_ratio);
      boolean(*o, "sampling", "filter_inverse_count", cfg_.filter_inverse_count);
      boolean(*o, "sampling", "resample_each_epoch", cfg_.resample_each_epoch);
    }
    if (auto* o = section(root, "model")) {
      known(*o, "model", {"encoder", "hidden", "embedding_dim", "embedding_scale", "tie_encoders", "max_sequence_length"});
      if (str(*o, "model", "encoder", cfg_.encoder) && cfg_.encoder != "gru" && cfg_.encoder != "attention")
        errors_.push_back("model.encoder: expected \"gru\" or \"attention\", got \"" + cfg_.encoder + "\"");
      positive(*o, "model", "hidden", cfg_.hidden);
      positive(*o, "model", "embedding_dim", cfg_.embedding_dim);
      number(*o, "model", "embedding_scale", cfg_.embedding_scale, [](double v) { return v > 0; }, "a positive number");
      boolean(*o, "model", "tie_encoders", cfg_.tie_encoders);
      positive(*o, "model", "max_sequence_length", cfg_.max_sequence_length);
    }
    if (auto* o = section(root, "train")) {
      known(*o, "train", {"learning_rate", "batch_size", "max_iterations", "gradient_clip_norm", "eval_every",
                          "fine_tune_embeddings"});
      number(*o, "train", "learning_rate", cfg_.train.learning_rate, [](double v) { return v >= 0; },
             "a non-negative number");
      positive(*o, "train", "batch_size", cfg_.train.batch_size);
      positive(*o, "train", "max_iterations", cfg_.train.max_iterations);
      number(*o, "train", "gradient_clip_norm", cfg_.train.gradient_clip_norm, [](double v) { return v > 0; },
             "a positive number");
      positive(*o, "train", "eval_every", cfg_.train.eval_every);
      boolean(*o, "train", "fine_tune_embeddings", cfg_.train.fine_tune_embeddings);
    }
    if (auto* o = section(root, "eval")) {
      known(*o, "eval", {"m", "ks", "alternatives"});
      positive(*o, "eval", "m", cfg_.m);
      if (o->contains("ks")) {
        const auto& v = (*o)["ks"];
        bool ok = v.is_array() && !v.empty();
        if (ok)
          for (const auto& k : v) ok = ok && k.is_number_unsigned() && k.get<std::size_t>() > 0;
        if (ok)
          cfg_.ks = v.get<std::vector<std::size_t>>();
        else
          errors_.push_back("eval.ks: expected a non-empty array of positive integers");
      }
      transform_field(*o, "eval", "alternatives", cfg_.alternatives);
    }
    if (auto* o = section(root, "retrieval")) {
      known(*o, "retrieval", {"c_r", "top_k"});
      number(*o, "retrieval", "c_r", cfg_.c_r, [](double v) { return v >= 0; }, "a non-negative number");
      positive(*o, "retrieval", "top_k", cfg_.top_k);
    }
    if (auto* o = section(root, "grid")) {
      known(*o, "grid", {"train_negatives", "test_alternatives"});
      labeled(*o, "grid", "train_negatives", cfg_.grid_train);
      labeled(*o, "grid", "test_alternatives", cfg_.grid_test);
    }
    if (auto* o = section(root, "annotation")) {
      known(*o, "annotation", {"questions", "responses"});
      positive(*o, "annotation", "questions", cfg_.anno_questions);
      positive(*o, "annotation", "responses", cfg_.anno_responses);
    }
    if (auto* o = section(root, "synthetic")) {
      auto& s = cfg_.synthetic;
      known(*o, "synthetic", {"vocab_size", "distinct_responses", "zipf_exponent", "dialogues",
                              "exchanges_per_dialogue", "topics", "informative_probability"});
      positive(*o, "synthetic", "vocab_size", s.vocab_size);
      positive(*o, "synthetic", "distinct_responses", s.distinct_responses);
      number(*o, "synthetic", "zipf_exponent", s.zipf_exponent, [](double v) { return v >= 0; },
             "a non-negative number");
      positive(*o, "synthetic", "dialogues", s.dialogues);
      positive(*o, "synthetic", "exchanges_per_dialogue", s.exchanges_per_dialogue);
      positive(*o, "synthetic", "topics", s.topics);
      number(*o, "synthetic", "informative_probability", s.informative_probability,
             [](double v) { return v >= 0 && v <= 1; }, "a number in [0, 1]");
    }
  }

  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string at(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

  const json* section(const json& root, const char* key) {
    if (!root.contains(key)) return nullptr;
    if (!root[key].is_object()) {
      errors_.push_back(std::string(key) + ": expected an object");
      return nullptr;
    }
    return &root[key];
  }

  void known(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : obj.items()) {
      bool found = false;
      for (const char* key : keys) found = found || k == key;
      if (!found) errors_.push_back(at(path, k) + ": unknown field");
    }
  }

  bool str(const json& obj, const std::string& path, const char* key, std::string& dst) {
    if (!obj.contains(key)) return false;
    if (!obj[key].is_string()) {
      errors_.push_back(at(path, key) + ": expected a string");
      return false;
    }
    dst = obj[key].get<std::string>();
    return true;
  }

  template <class T>
  void uint(const json& obj, const std::string& path, const char* key, T& dst) {
    if (!obj.contains(key)) return;
    if (!obj[key].is_number_unsigned()) {
      errors_.push_back(at(path, key) + ": expected a non-negative integer");
      return;
    }
    dst = obj[key].get<T>();
  }

  template <class T>
  void positive(const json& obj, const std::string& path, const char* key, T& dst) {
    if (!obj.contains(key)) return;
    if (!obj[key].is_number_unsigned() || obj[key].get<std::uint64_t>() == 0) {
      errors_.push_back(at(path, key) + ": expected a positive integer");
      return;
    }
    dst = obj[key].get<T>();
  }

  void number(const json& obj, const std::string& path, const char* key, double& dst,
              const std::function<bool(double)>& ok, const char* what) {
    if (!obj.contains(key)) return;
    if (!obj[key].is_number() || !ok(obj[key].get<double>())) {
      errors_.push_back(at(path, key) + ": expected " + what);
      return;
    }
    dst = obj[key].get<double>();
  }

  void boolean(const json& obj, const std::string& path, const char* key, bool& dst) {
    if (!obj.contains(key)) return;
    if (!obj[key].is_boolean()) {
      errors_.push_back(at(path, key) + ": expected true or false");
      return;
    }
    dst = obj[key].get<bool>();
  }

  void transform_field(const json& obj, const std::string& path, const char* key, std::string& dst) {
    std::string v;
    if (!str(obj, path, key, v)) return;
    try {
      TransformSpec::parse(v);
      dst = v;
    } catch (const Error& e) {
      errors_.push_back(at(path, key) + ": " + e.what());
    }
  }

  void labeled(const json& obj, const std::string& path, const char* key, std::vector<LabeledTransform>& dst) {
    if (!obj.contains(key)) return;
    const auto& v = obj[key];
    const std::string where = at(path, key);
    if (!v.is_array() || v.empty()) {
      errors_.push_back(where + ": expected a non-empty array of {label, transform}");
      return;
    }
    std::vector<LabeledTransform> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& e = v[i];
      const std::string item = where + "[" + std::to_string(i) + "]";
      if (!e.is_object() || !e.contains("label") || !e["label"].is_string() || !e.contains("transform") ||
          !e["transform"].is_string()) {
        errors_.push_back(item + ": expected {\"label\": string, \"transform\": string}");
        continue;
      }
      LabeledTransform lt{e["label"].get<std::string>(), e["transform"].get<std::string>()};
      try {
        TransformSpec::parse(lt.transform);
      } catch (const Error& err) {
        errors_.push_back(item + ".transform: " + err.what());
        continue;
      }
      out.push_back(std::move(lt));
    }
    dst = std::move(out);
  }

  ExperimentConfig& cfg_;
  std::vector<std::string> errors_;
};

}  // namespace detail

inline void apply_config(ExperimentConfig& cfg, const json& doc) {
  detail::ConfigReader reader(cfg);
  reader.read(doc);
  if (!reader.errors().empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : reader.errors()) msg += "\n  " + e;
    throw Error(ErrorKind::Config, msg);
  }
}

inline json to_json(const ExperimentConfig& c) {
  auto labeled = [](const std::vector<LabeledTransform>& v) {
    json a = json::array();
    for (const auto& lt : v) a.push_back({{"label", lt.label}, {"transform", lt.transform}});
    return a;
  };
  const auto& s = c.synthetic;
  return {
      {"seed", c.seed},
      {"paths", {{"corpus", c.corpus_path}, {"embeddings", c.embeddings_path}, {"output_dir", c.output_dir}}},
      {"corpus", {{"max_context_turns", c.max_context_turns}}},
      {"split", {{"train", c.split.train}, {"dev", c.split.dev}, {"test", c.split.test}}},
      {"sampling",
       {{"transform", c.transform},
        {"neg_ratio", c.neg_ratio},
        {"filter_inverse_count", c.filter_inverse_count},
        {"resample_each_epoch", c.resample_each_epoch}}},
      {"model",
       {{"encoder", c.encoder},
        {"hidden", c.hidden},
        {"embedding_dim", c.embedding_dim},
        {"embedding_scale", c.embedding_scale},
        {"tie_encoders", c.tie_encoders},
        {"max_sequence_length", c.max_sequence_length}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"max_iterations", c.train.max_iterations},
        {"gradient_clip_norm", c.train.gradient_clip_norm},
        {"eval_every", c.train.eval_every},
        {"fine_tune_embeddings", c.train.fine_tune_embeddings}}},
      {"eval", {{"m", c.m}, {"ks", c.ks}, {"alternatives", c.alternatives}}},
      {"retrieval", {{"c_r", c.c_r}, {"top_k", c.top_k}}},
      {"grid", {{"train_negatives", labeled(c.grid_train)}, {"test_alternatives", labeled(c.grid_test)}}},
      {"annotation", {{"questions", c.anno_questions}, {"responses", c.anno_responses}}},
      {"synthetic",
       {{"vocab_size", s.vocab_size},
        {"distinct_responses", s.distinct_responses},
        {"zipf_exponent", s.zipf_exponent},
        {"dialogues", s.dialogues},
        {"exchanges_per_dialogue", s.exchanges_per_dialogue},
        {"topics", s.topics},
        {"informative_probability", s.informative_probability}}},
  };
}

// ---------------------------------------------------------------------------
// Files and manifests

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Input, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw Error(ErrorKind::Config, what + " path is not set");
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::Input, what + " '" + path + "' does not exist");
}

/// Tracks one invocation: inputs read, artifacts written.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv, const ExperimentConfig& cfg)
      : command_(std::move(command)), argv_(std::move(argv)), config_(to_json(cfg)), seed_(cfg.seed) {}

  std::string input(const std::string& path, const std::string& what) {
    require_file(path, what);
    std::string bytes = read_file(path);
    inputs_[path] = binary::hex(binary::fnv1a(bytes));
    return bytes;
  }

  /// Writes `bytes` to `path` and a `<path>.manifest.json` next to it.
  void artifact(const std::string& path, const std::string& bytes) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    {
      std::ofstream out(path, std::ios::binary);
      if (!out) throw Error(ErrorKind::Input, "cannot open '" + path + "' for writing");
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw Error(ErrorKind::Input, "failed writing '" + path + "'");
    }
    json inputs = json::object();
    for (const auto& [k, v] : inputs_) inputs[k] = v;
    json m{{"command", command_},
           {"argv", argv_},
           {"seed", seed_},
           {"config", config_},
           {"inputs", inputs},
           {"output", {{"path", path}, {"fnv1a", binary::hex(binary::fnv1a(bytes))}}},
           {"created", timestamp()}};
    std::ofstream mf(path + ".manifest.json", std::ios::binary);
    if (!mf) throw Error(ErrorKind::Input, "cannot write manifest for '" + path + "'");
    mf << m.dump(2) << '\n';
  }

 private:
  static std::string timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
  }

  std::string command_;
  std::vector<std::string> argv_;
  json config_;
  std::uint64_t seed_;
  std::map<std::string, std::string> inputs_;
};

// ---------------------------------------------------------------------------
// Shared pipeline steps

inline std::vector<Dialogue> parse_dialogue_bytes(const std::string& bytes, const std::string& path,
                                                  std::ostream& err) {
  std::istringstream in(bytes);
  auto res = parse_dialogues(in);
  for (const auto& i : res.issues)
    err << "warning: " << path << ':' << i.line << (i.dialogue_id.empty() ? "" : " [" + i.dialogue_id + "]")
        << ": " << i.message << '\n';
  return std::move(res.dialogues);
}

inline std::vector<ContextResponsePair> load_pairs(Run& run, const std::string& path, const ExperimentConfig& cfg,
                                                   std::ostream& err, const std::string& what) {
  const auto dialogues = parse_dialogue_bytes(run.input(path, what), path, err);
  auto pairs = extract_all_pairs(dialogues, cfg.max_context_turns);
  if (pairs.empty()) throw Error(ErrorKind::Data, what + " '" + path + "' contains no context/response pairs");
  return pairs;
}

/// Pretrained vectors if configured, otherwise seeded random vectors over the
/// training vocabulary.
inline EmbeddingTable make_embeddings(Run& run, const ExperimentConfig& cfg,
                                      const std::vector<ContextResponsePair>& train_pairs, std::ostream& err) {
  if (!cfg.embeddings_path.empty()) {
    std::istringstream in(run.input(cfg.embeddings_path, "embeddings"));
    std::vector<std::string> warnings;
    auto table = load_embeddings(in, cfg.embedding_dim, &warnings);
    for (const auto& w : warnings) err << "warning: " << cfg.embeddings_path << ": " << w << '\n';
    return table;
  }
  auto vocab = build_vocabulary(train_pairs);
  if (std::find(vocab.begin(), vocab.end(), kEndOfUtterance) == vocab.end()) vocab.emplace_back(kEndOfUtterance);
  return random_embeddings(vocab, cfg.embedding_dim, cfg.embedding_scale, derive_seed(cfg.seed, "embeddings"));
}

inline SamplingStrategy strategy_of(const ExperimentConfig& cfg, const std::string& transform) {
  SamplingStrategy s;
  s.transform = TransformSpec::parse(transform);
  s.neg_per_pos = cfg.neg_ratio;
  s.filter_by_inverse_count = cfg.filter_inverse_count;
  s.resample_each_epoch = cfg.resample_each_epoch;
  return s;
}

inline ModelConfig model_config_of(const ExperimentConfig& cfg) {
  ModelConfig mc;
  mc.encoder = parse_encoder_kind(cfg.encoder);
  mc.hidden = cfg.hidden;
  mc.tie_encoders = cfg.tie_encoders;
  mc.max_sequence_length = cfg.max_sequence_length;
  mc.seed = derive_seed(cfg.seed, "init");
  return mc;
}

inline TrainConfig train_config_of(const ExperimentConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train");
  return tc;
}

inline TrainResult train_variant(const ExperimentConfig& cfg, const EmbeddingTable& emb,
                                 const std::vector<ContextResponsePair>& pairs, const std::string& transform) {
  const auto dist = count_responses(pairs);
  return train_on_pairs(DualEncoderModel::initialize(emb, model_config_of(cfg)), pairs, dist,
                        strategy_of(cfg, transform), derive_seed(cfg.seed, "trainset"), train_config_of(cfg), &emb);
}

inline std::string loss_table(const std::vector<LossPoint>& trace) {
  std::ostringstream ss;
  ss << "iteration\tloss\n";
  for (const auto& p : trace) ss << p.iteration << '\t' << TransformSpec::format_number(p.loss) << '\n';
  return ss.str();
}

inline std::string checkpoint_string(const DualEncoderModel& m) { return checkpoint_bytes(m); }

inline DualEncoderModel model_from(Run& run, const std::string& path) {
  std::istringstream in(run.input(path, "checkpoint"));
  return read_checkpoint(in);
}

/// Index plus its encoder; the checkpoint path stored in the index is used
/// unless `checkpoint_override` is given.
inline HistoryIndex index_from(Run& run, const std::string& path, const std::string& checkpoint_override) {
  std::istringstream in(run.input(path, "index"));
  binary::Reader r(in);
  r.header(kIndexMagic, kIndexVersion);
  r.f64();
  r.u64();
  const std::string stored = r.str();
  in.clear();
  in.seekg(0);
  HistoryIndex index = read_history_index(in);
  const std::string ckpt = checkpoint_override.empty() ? stored : checkpoint_override;
  index.attach(std::make_shared<const DualEncoderModel>(model_from(run, ckpt)));
  return index;
}

inline std::string join_path(const std::string& dir, const std::string& file) {
  return (fs::path(dir) / file).string();
}

// ---------------------------------------------------------------------------
// Command line

struct Overrides {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> corpus;
  std::optional<std::string> embeddings;
  std::optional<std::size_t> max_context_turns;
  std::optional<std::string> transform;
  std::optional<std::size_t> neg_ratio;
  bool filter_inverse_count = false;
  bool resample_each_epoch = false;
  std::optional<std::string> encoder;
  std::optional<std::size_t> hidden;
  std::optional<std::size_t> embedding_dim;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> iterations;
  bool fine_tune = false;
  std::optional<std::size_t> m;
  std::optional<std::string> alternatives;
  std::optional<double> c_r;
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> questions;
  std::optional<std::size_t> responses;
  std::optional<std::size_t> vocab_size;
  std::optional<std::size_t> distinct_responses;
  std::optional<double> zipf;
  std::optional<std::size_t> dialogues;

  // Per-command paths.
  std::optional<std::string> input, out, train, test, checkpoint, index, trainset, sheet, key;
  std::string query;
  std::string scorer = "dual";
  std::vector<std::string> models;
};

inline void apply_overrides(ExperimentConfig& c, const Overrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.corpus) c.corpus_path = *o.corpus;
  if (o.embeddings) c.embeddings_path = *o.embeddings;
  if (o.max_context_turns) c.max_context_turns = *o.max_context_turns;
  if (o.transform) c.transform = *o.transform;
  if (o.neg_ratio) c.neg_ratio = *o.neg_ratio;
  if (o.filter_inverse_count) c.filter_inverse_count = true;
  if (o.resample_each_epoch) c.resample_each_epoch = true;
  if (o.encoder) c.encoder = *o.encoder;
  if (o.hidden) c.hidden = *o.hidden;
  if (o.embedding_dim) c.embedding_dim = *o.embedding_dim;
  if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.iterations) c.train.max_iterations = *o.iterations;
  if (o.fine_tune) c.train.fine_tune_embeddings = true;
  if (o.m) c.m = *o.m;
  if (o.alternatives) c.alternatives = *o.alternatives;
  if (o.c_r) c.c_r = *o.c_r;
  if (o.top_k) c.top_k = *o.top_k;
  if (o.questions) c.anno_questions = *o.questions;
  if (o.responses) c.anno_responses = *o.responses;
  if (o.vocab_size) c.synthetic.vocab_size = *o.vocab_size;
  if (o.distinct_responses) c.synthetic.distinct_responses = *o.distinct_responses;
  if (o.zipf) c.synthetic.zipf_exponent = *o.zipf;
  if (o.dialogues) c.synthetic.dialogues = *o.dialogues;
  // Flags go through the same checks as the file.
  apply_config(c, json::object({{"sampling", {{"transform", c.transform}}},
                                {"model", {{"encoder", c.encoder}}},
                                {"eval", {{"alternatives", c.alternatives}}}}));
  for (auto k : c.ks)
    if (k > c.m + 1)
      throw Error(ErrorKind::Config, "eval.ks: k=" + std::to_string(k) + " exceeds m+1=" + std::to_string(c.m + 1));
}

inline ExperimentConfig resolve_config(const Overrides& o) {
  ExperimentConfig cfg;
  if (o.config_path) {
    require_file(*o.config_path, "config");
    json doc;
    try {
      doc = json::parse(read_file(*o.config_path));
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::Config, "config '" + *o.config_path + "' is not valid JSON: " + e.what());
    }
    apply_config(cfg, doc);
  }
  apply_overrides(cfg, o);
  return cfg;
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_make_synthetic(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out) {
  SyntheticSpec spec = cfg.synthetic;
  spec.seed = derive_seed(cfg.seed, "synthetic");
  const auto dialogues = make_synthetic_corpus(spec);
  std::ostringstream ss;
  write_dialogues(ss, dialogues);
  const std::string path = o.out.value_or(join_path(cfg.output_dir, "synthetic.jsonl"));
  run.artifact(path, ss.str());
  out << "wrote " << dialogues.size() << " dialogues to " << path << '\n';
}

inline void cmd_ingest(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out,
                       std::ostream& err) {
  const std::string path = o.input.value_or(cfg.corpus_path);
  std::istringstream in(run.input(path, "corpus"));
  const auto parsed = parse_dialogues(in);
  std::ostringstream issues;
  issues << "line\tdialogue_id\tmessage\n";
  for (const auto& i : parsed.issues) {
    issues << i.line << '\t' << i.dialogue_id << '\t' << i.message << '\n';
    err << "warning: " << path << ':' << i.line << ": " << i.message << '\n';
  }
  SplitSpec split = cfg.split;
  split.seed = derive_seed(cfg.seed, "split");
  const auto parts = split_corpus(parsed.dialogues, split);
  const std::pair<const char*, const std::vector<Dialogue>*> named[] = {
      {"train", &parts.train}, {"dev", &parts.dev}, {"test", &parts.test}};
  for (const auto& [name, set] : named) {
    std::ostringstream d, ids;
    write_dialogues(d, *set);
    write_id_list(ids, *set);
    run.artifact(join_path(cfg.output_dir, std::string(name) + ".jsonl"), d.str());
    run.artifact(join_path(cfg.output_dir, std::string(name) + ".ids"), ids.str());
  }
  run.artifact(join_path(cfg.output_dir, "ingest_issues.tsv"), issues.str());
  out << "dialogues: " << parsed.dialogues.size() << " accepted, " << parsed.issues.size() << " rejected\n"
      << "split: train " << parts.train.size() << ", dev " << parts.dev.size() << ", test " << parts.test.size()
      << '\n';
}

inline void cmd_stats(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out,
                      std::ostream& err) {
  const auto pairs = load_pairs(run, o.input.value_or(join_path(cfg.output_dir, "train.jsonl")), cfg, err, "dialogues");
  std::ostringstream ss;
  write_report(ss, distribution_report(count_responses(pairs)));
  run.artifact(o.out.value_or(join_path(cfg.output_dir, "distribution.tsv")), ss.str());
  out << ss.str();
}

inline void cmd_build_trainset(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out,
                               std::ostream& err) {
  const auto pairs = load_pairs(run, o.input.value_or(join_path(cfg.output_dir, "train.jsonl")), cfg, err, "dialogues");
  const auto strategy = strategy_of(cfg, cfg.transform);
  std::optional<EmbeddingTable> emb;
  if (strategy.transform.needs_embeddings())
    emb = make_embeddings(run, cfg, pairs, err);
  const auto set = build_training_set(pairs, count_responses(pairs), strategy, derive_seed(cfg.seed, "trainset"),
                                      emb ? &*emb : nullptr);
  std::ostringstream ss;
  write_training_set(ss, set);
  const std::string path = o.out.value_or(join_path(cfg.output_dir, "trainset.jsonl"));
  run.artifact(path, ss.str());
  const auto positives = std::count_if(set.begin(), set.end(), [](const auto& e) { return e.label == 1; });
  out << "wrote " << set.size() << " examples (" << positives << " positive) to " << path << '\n';
}

inline void cmd_train(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out,
                      std::ostream& err) {
  const auto pairs = load_pairs(run, o.input.value_or(join_path(cfg.output_dir, "train.jsonl")), cfg, err, "dialogues");
  const auto emb = make_embeddings(run, cfg, pairs, err);
  TrainResult res;
  if (o.trainset) {
    std::istringstream in(run.input(*o.trainset, "training set"));
    res = train(DualEncoderModel::initialize(emb, model_config_of(cfg)), read_training_set(in), train_config_of(cfg));
  } else {
    res = train_variant(cfg, emb, pairs, cfg.transform);
  }
  const std::string path = o.out.value_or(join_path(cfg.output_dir, "model.ckpt"));
  run.artifact(path, checkpoint_string(res.model));
  const fs::path p(path);
  run.artifact((p.parent_path() / (p.stem().string() + ".loss.tsv")).string(), loss_table(res.trace));
  out << "trained " << cfg.train.max_iterations << " iterations, final window loss "
      << TransformSpec::format_number(res.trace.back().loss) << "; checkpoint " << path << '\n';
}

inline void cmd_build_index(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out,
                            std::ostream& err) {
  const std::string ckpt = o.checkpoint.value_or(join_path(cfg.output_dir, "model.ckpt"));
  auto model = std::make_shared<const DualEncoderModel>(model_from(run, ckpt));
  const auto pairs = load_pairs(run, o.input.value_or(join_path(cfg.output_dir, "train.jsonl")), cfg, err, "dialogues");
  const auto index = build_history_index(model, pairs, cfg.c_r);
  std::ostringstream ss(std::ios::binary);
  write_history_index(ss, index, ckpt);
  const std::string path = o.out.value_or(join_path(cfg.output_dir, "index.bin"));
  run.artifact(path, ss.str());
  out << "indexed " << index.size() << " pairs (c_r=" << TransformSpec::format_number(cfg.c_r) << ") in " << path << '\n';
}

inline void cmd_retrieve(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out) {
  const auto index = index_from(run, o.index.value_or(join_path(cfg.output_dir, "index.bin")),
                                o.checkpoint.value_or(""));
  const auto tokens = tokenize(o.query);
  if (tokens.empty()) throw Error(ErrorKind::Config, "query has no tokens");
  out << "rank\tscore\tpair_id\tresponse\n";
  std::size_t rank = 0;
  for (const auto& h : query_nearest(index, tokens, cfg.top_k)) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << h.score;
    out << ++rank << '\t' << s.str() << '\t' << h.pair_id << '\t' << h.response_text << '\n';
  }
}

inline EvalConfig eval_config_of(const ExperimentConfig& cfg) {
  EvalConfig ec;
  ec.m = cfg.m;
  ec.ks = cfg.ks;
  ec.alternative_transform = TransformSpec::parse(cfg.alternatives);
  ec.seed = derive_seed(cfg.seed, "eval");
  return ec;
}

inline void cmd_eval(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out,
                     std::ostream& err) {
  const auto train_pairs =
      load_pairs(run, o.train.value_or(join_path(cfg.output_dir, "train.jsonl")), cfg, err, "training dialogues");
  const auto test_pairs =
      load_pairs(run, o.test.value_or(join_path(cfg.output_dir, "test.jsonl")), cfg, err, "test dialogues");
  const auto dist = count_responses(train_pairs);
  const auto ec = eval_config_of(cfg);
  std::optional<EmbeddingTable> emb;
  if (ec.alternative_transform.needs_embeddings())
    emb = make_embeddings(run, cfg, train_pairs, err);

  EvalReport report;
  if (o.scorer == "dual") {
    const auto model = model_from(run, o.checkpoint.value_or(join_path(cfg.output_dir, "model.ckpt")));
    report = evaluate(DualEncoderScorer(model), test_pairs, dist, ec, emb ? &*emb : nullptr);
  } else if (o.scorer == "index") {
    const auto index =
        index_from(run, o.index.value_or(join_path(cfg.output_dir, "index.bin")), o.checkpoint.value_or(""));
    report = evaluate(HistoryIndexScorer(index), test_pairs, dist, ec, emb ? &*emb : nullptr);
  } else {
    throw Error(ErrorKind::Config, "--scorer must be 'dual' or 'index', got '" + o.scorer + "'");
  }
  json j = to_json(report);
  j["scorer"] = o.scorer;
  run.artifact(o.out.value_or(join_path(cfg.output_dir, "eval.json")), j.dump(2) + "\n");
  for (std::size_t i = 0; i < report.ks.size(); ++i)
    out << "recall@" << report.ks[i] << '\t' << TransformSpec::format_number(report.recalls[i]) << '\n';
}

inline void cmd_grid(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out,
                     std::ostream& err) {
  const auto train_pairs =
      load_pairs(run, o.train.value_or(join_path(cfg.output_dir, "train.jsonl")), cfg, err, "training dialogues");
  const auto test_pairs =
      load_pairs(run, o.test.value_or(join_path(cfg.output_dir, "test.jsonl")), cfg, err, "test dialogues");
  const auto dist = count_responses(train_pairs);
  const auto emb = make_embeddings(run, cfg, train_pairs, err);

  std::vector<DualEncoderModel> models;
  for (const auto& v : cfg.grid_train) {
    err << "training '" << v.label << "' (" << v.transform << ")\n";
    auto res = train_variant(cfg, emb, train_pairs, v.transform);
    run.artifact(join_path(cfg.output_dir, "grid_" + v.label + ".ckpt"), checkpoint_string(res.model));
    models.push_back(std::move(res.model));
  }
  std::vector<DualEncoderScorer> scorers;
  for (const auto& m : models) scorers.emplace_back(m);
  std::vector<NamedScorer> named;
  for (std::size_t i = 0; i < scorers.size(); ++i) named.push_back({cfg.grid_train[i].label, &scorers[i]});
  std::vector<NamedTransform> alts;
  for (const auto& t : cfg.grid_test) alts.push_back({t.label, TransformSpec::parse(t.transform)});

  const auto grid = cross_distribution_grid(named, alts, test_pairs, dist, eval_config_of(cfg), &emb);
  std::ostringstream table;
  write_grid_table(table, grid, 1);
  run.artifact(o.out.value_or(join_path(cfg.output_dir, "grid.txt")), table.str());
  run.artifact(join_path(cfg.output_dir, "grid.json"), to_json(grid).dump(2) + "\n");
  out << table.str();
}

inline void cmd_export_anno(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out,
                            std::ostream& err) {
  const auto train_pairs =
      load_pairs(run, o.train.value_or(join_path(cfg.output_dir, "train.jsonl")), cfg, err, "training dialogues");
  auto test_pairs =
      load_pairs(run, o.test.value_or(join_path(cfg.output_dir, "test.jsonl")), cfg, err, "test dialogues");
  const auto dist = count_responses(train_pairs);

  Rng pick(derive_seed(cfg.seed, "annotation-questions"));
  pick.shuffle(test_pairs);
  if (test_pairs.size() > cfg.anno_questions) test_pairs.resize(cfg.anno_questions);
  std::vector<Question> questions;
  for (const auto& p : test_pairs)
    questions.push_back({p.dialogue_id + "#" + std::to_string(p.turn_index), p.context_tokens});

  std::vector<std::string> specs = o.models;
  if (specs.empty()) specs.push_back("dual=dual:" + join_path(cfg.output_dir, "model.ckpt"));
  std::vector<std::unique_ptr<DualEncoderModel>> dual_models;
  std::vector<std::unique_ptr<HistoryIndex>> indexes;
  std::vector<std::unique_ptr<ResponseSelector>> selectors;
  std::vector<NamedSelector> named;
  for (const auto& s : specs) {
    const auto eq = s.find('='), colon = s.find(':', eq == std::string::npos ? 0 : eq);
    if (eq == std::string::npos || colon == std::string::npos)
      throw Error(ErrorKind::Config, "--model expects NAME=dual:CHECKPOINT or NAME=index:INDEX, got '" + s + "'");
    const std::string name = s.substr(0, eq), kind = s.substr(eq + 1, colon - eq - 1), path = s.substr(colon + 1);
    if (kind == "dual") {
      dual_models.push_back(std::make_unique<DualEncoderModel>(model_from(run, path)));
      selectors.push_back(std::make_unique<DualEncoderSelector>(*dual_models.back(), dist));
    } else if (kind == "index") {
      indexes.push_back(std::make_unique<HistoryIndex>(index_from(run, path, "")));
      selectors.push_back(std::make_unique<HistoryIndexSelector>(*indexes.back()));
    } else {
      throw Error(ErrorKind::Config, "unknown model kind '" + kind + "' in --model " + s);
    }
    named.push_back({name, selectors.back().get()});
  }
  const auto rows = export_annotation(named, questions, cfg.anno_responses, derive_seed(cfg.seed, "annotation"));
  std::ostringstream sheet, key;
  write_annotation_sheet(sheet, rows);
  write_annotation_key(key, rows);
  const std::string sheet_path = o.sheet.value_or(join_path(cfg.output_dir, "annotation_sheet.tsv"));
  const std::string key_path = o.key.value_or(join_path(cfg.output_dir, "annotation_key.tsv"));
  run.artifact(sheet_path, sheet.str());
  run.artifact(key_path, key.str());
  out << "exported " << rows.size() << " rows for " << questions.size() << " questions to " << sheet_path << '\n';
}

inline void cmd_score_anno(const ExperimentConfig& cfg, const Overrides& o, Run& run, std::ostream& out) {
  const std::string sheet_path = o.sheet.value_or(join_path(cfg.output_dir, "annotation_sheet.tsv"));
  const std::string key_path = o.key.value_or(join_path(cfg.output_dir, "annotation_key.tsv"));
  std::istringstream sheet(run.input(sheet_path, "annotation sheet"));
  std::istringstream key(run.input(key_path, "annotation key"));
  const auto by_model = read_marked_annotation(sheet, key);
  json j = json::object();
  out << "model\tquestions\tCR\tUR\n";
  for (const auto& [model, records] : by_model) {
    const auto s = score_human_marks(records, cfg.anno_responses);
    j[model] = {{"questions", records.size()}, {"CR", s.correct}, {"UR", s.unsure}};
    out << model << '\t' << records.size() << '\t' << TransformSpec::format_number(s.correct) << '\t' << TransformSpec::format_number(s.unsure)
        << '\n';
  }
  run.artifact(o.out.value_or(join_path(cfg.output_dir, "human_scores.json")), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

/// Entry point shared by the executable and tests.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Negative-sampling experiments for retrieval-based dialogue models", "negsamp"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Overrides o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "JSON experiment config");
    c->add_option("--seed", o.seed, "master seed (overrides config)");
    c->add_option("--output-dir", o.output_dir, "artifact directory (overrides paths.output_dir)");
    c->add_option("--max-context-turns", o.max_context_turns, "turns of history per context");
  };
  auto sampling = [&](CLI::App* c) {
    c->add_option("--transform", o.transform, "identity | uniform | power:D | kde[:H]");
    c->add_option("--neg-ratio", o.neg_ratio, "negatives per positive");
    c->add_flag("--filter-inverse-count", o.filter_inverse_count, "keep each pair with probability 1/N");
    c->add_flag("--resample-each-epoch", o.resample_each_epoch, "redraw negatives every epoch");
  };
  auto model = [&](CLI::App* c) {
    c->add_option("--embeddings", o.embeddings, "pretrained word vectors (text format)");
    c->add_option("--embedding-dim", o.embedding_dim, "embedding dimension");
    c->add_option("--encoder", o.encoder, "gru | attention");
    c->add_option("--hidden", o.hidden, "GRU hidden size");
    c->add_option("--lr", o.learning_rate, "learning rate");
    c->add_option("--batch-size", o.batch_size, "examples per step");
    c->add_option("--iterations", o.iterations, "training iterations");
    c->add_flag("--fine-tune-embeddings", o.fine_tune, "update word vectors during training");
  };
  auto evalopts = [&](CLI::App* c) {
    c->add_option("--m", o.m, "alternatives per test pair");
    c->add_option("--alternatives", o.alternatives, "distribution of alternatives");
  };

  std::map<std::string, CLI::App*> subs;
  auto sub = [&](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    common(c);
    subs[name] = c;
    return c;
  };

  auto* synth = sub("make-synthetic-corpus", "generate a Zipf-skewed synthetic dialogue corpus");
  synth->add_option("--vocab-size", o.vocab_size, "total vocabulary size");
  synth->add_option("--responses", o.distinct_responses, "distinct responses");
  synth->add_option("--zipf", o.zipf, "Zipf exponent of response popularity");
  synth->add_option("--dialogues", o.dialogues, "number of dialogues");
  synth->add_option("--out", o.out, "output dialogue file");

  auto* ingest = sub("ingest", "validate a dialogue file and split it into train/dev/test");
  ingest->add_option("--input", o.input, "dialogue file (overrides paths.corpus)");

  auto* stats = sub("stats", "response frequency table");
  stats->add_option("--input", o.input, "dialogue file");
  stats->add_option("--out", o.out, "output table");

  auto* bts = sub("build-trainset", "positive and negative training examples");
  bts->add_option("--input", o.input, "training dialogues");
  bts->add_option("--out", o.out, "output training set");
  bts->add_option("--embeddings", o.embeddings, "word vectors for kde");
  bts->add_option("--embedding-dim", o.embedding_dim, "embedding dimension");
  sampling(bts);

  auto* tr = sub("train", "train a dual encoder");
  tr->add_option("--input", o.input, "training dialogues");
  tr->add_option("--trainset", o.trainset, "prebuilt training set (skips sampling)");
  tr->add_option("--out", o.out, "output checkpoint");
  sampling(tr);
  model(tr);

  auto* bi = sub("build-index", "history-vector index for embedding retrieval");
  bi->add_option("--checkpoint", o.checkpoint, "encoder checkpoint");
  bi->add_option("--input", o.input, "training dialogues");
  bi->add_option("--c-r", o.c_r, "response weight in history vectors");
  bi->add_option("--out", o.out, "output index");

  auto* rt = sub("retrieve", "nearest stored contexts for a query");
  rt->add_option("--index", o.index, "history index");
  rt->add_option("--checkpoint", o.checkpoint, "encoder checkpoint (default: path stored in the index)");
  rt->add_option("--query", o.query, "query text")->required();
  rt->add_option("--top-k", o.top_k, "results to print");

  auto* ev = sub("eval", "recall@k against sampled alternatives");
  ev->add_option("--scorer", o.scorer, "dual | index");
  ev->add_option("--checkpoint", o.checkpoint, "dual encoder checkpoint");
  ev->add_option("--index", o.index, "history index (scorer index)");
  ev->add_option("--train", o.train, "training dialogues (alternative pool)");
  ev->add_option("--test", o.test, "test dialogues");
  ev->add_option("--embeddings", o.embeddings, "word vectors for kde");
  ev->add_option("--out", o.out, "output report");
  evalopts(ev);

  auto* gr = sub("grid", "train one model per negative distribution and evaluate every cell");
  gr->add_option("--train", o.train, "training dialogues");
  gr->add_option("--test", o.test, "test dialogues");
  gr->add_option("--out", o.out, "output table");
  sampling(gr);
  model(gr);
  evalopts(gr);

  auto* ea = sub("export-anno", "blind annotation sheet of top responses per question");
  ea->add_option("--model", o.models, "NAME=dual:CHECKPOINT or NAME=index:INDEX (repeatable)");
  ea->add_option("--train", o.train, "training dialogues (candidate responses)");
  ea->add_option("--test", o.test, "test dialogues (questions)");
  ea->add_option("--questions", o.questions, "number of questions");
  ea->add_option("--responses", o.responses, "responses per question");
  ea->add_option("--sheet", o.sheet, "output sheet");
  ea->add_option("--key", o.key, "output key");

  auto* sa = sub("score-anno", "CR and UR from a marked sheet");
  sa->add_option("--sheet", o.sheet, "marked sheet");
  sa->add_option("--key", o.key, "key written by export-anno");
  sa->add_option("--responses", o.responses, "responses per question");
  sa->add_option("--out", o.out, "output scores");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  std::string name;
  for (const auto& [n, c] : subs)
    if (c->parsed()) name = n;

  try {
    const ExperimentConfig cfg = resolve_config(o);
    Run r(name, std::vector<std::string>(argv, argv + argc), cfg);
    if (name == "make-synthetic-corpus") cmd_make_synthetic(cfg, o, r, out);
    else if (name == "ingest") cmd_ingest(cfg, o, r, out, err);
    else if (name == "stats") cmd_stats(cfg, o, r, out, err);
    else if (name == "build-trainset") cmd_build_trainset(cfg, o, r, out, err);
    else if (name == "train") cmd_train(cfg, o, r, out, err);
    else if (name == "build-index") cmd_build_index(cfg, o, r, out, err);
    else if (name == "retrieve") cmd_retrieve(cfg, o, r, out);
    else if (name == "eval") cmd_eval(cfg, o, r, out, err);
    else if (name == "grid") cmd_grid(cfg, o, r, out, err);
    else if (name == "export-anno") cmd_export_anno(cfg, o, r, out, err);
    else if (name == "score-anno") cmd_score_anno(cfg, o, r, out);
  } catch (const Error& e) {
    err << to_string(e.kind()) << " error in " << name << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "input error in " << name << ": " << e.what() << '\n';
    return kInput;
  } catch (const std::exception& e) {
    err << "internal error in " << name << ": " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}

}  // namespace negsamp::cli
