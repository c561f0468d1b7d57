#pragma once

// Benchmark construction and evaluation: a synthetic molecule/caption
// corpus, the edit / locality / generality splits, and the reliability,
// locality and generality scores of an editing pipeline.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moledit/backbone.hpp"
#include "moledit/editing.hpp"
#include "moledit/task.hpp"
#include "moledit/textseg.hpp"

namespace moledit::bench {

// ---------------------------------------------------------------------------
// Samples

struct Sample {
  std::string id;
  std::string smiles;
  std::string caption;
  std::optional<std::string> target_caption;
  std::optional<std::string> target_smiles;
  std::optional<std::string> parent_id;
  std::optional<std::uint64_t> variant_seed;

  const std::string& true_smiles() const { return target_smiles ? *target_smiles : smiles; }
  const std::string& true_caption() const { return target_caption ? *target_caption : caption; }
  /// Model input for `task`: the true value of the other modality.
  const std::string& input(Task task) const;
  /// Ground-truth output for `task`.
  const std::string& truth(Task task) const;
  /// Output the corpus teaches during pretraining (possibly stale).
  const std::string& training_target(Task task) const;
};

nlohmann::json to_json(const Sample& s);
/// Throws SchemaError.
Sample sample_from_json(const nlohmann::json& j);

/// Throws IoError or SchemaError (with the line number).
std::vector<Sample> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, std::span<const Sample> samples);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct CorpusOptions {
  std::size_t size = 200;
  std::uint64_t seed = 0;
  /// Share of samples whose training caption is replaced by an unrelated
  /// text, and separately whose training SMILES is replaced by a dissimilar
  /// molecule.
  double stale_fraction = 0.08;
};

/// Distinct molecules on chain, benzene or cyclohexane scaffolds with one to
/// three substituents, each with a templated four-sentence caption.
/// Deterministic per options.
std::vector<Sample> generate_corpus(const CorpusOptions& options);

// ---------------------------------------------------------------------------
// Task data

struct Vocabs {
  model::Vocab src;
  model::Vocab tgt;
};

/// Vocabularies over inputs, truths and training targets of `samples`;
/// caption-side vocabularies also cover paraphrase variants 0..3.
Vocabs build_vocabs(Task task, std::span<const Sample> samples,
                    const text::RuleTables& rules = text::RuleTables::shipped());

/// (input, training target) pairs for pretraining.
std::vector<model::Example> training_examples(Task task, std::span<const Sample> samples,
                                              const Vocabs& vocabs,
                                              const text::RuleTables& rules = text::RuleTables::shipped());

/// Longest source or target sequence (target counted with <end>).
std::size_t longest_sequence(Task task, std::span<const Sample> samples,
                             const text::RuleTables& rules = text::RuleTables::shipped());

// ---------------------------------------------------------------------------
// Prediction

/// Maps a model input string to an output string.
using Predictor = std::function<std::string(const std::string& input)>;

Predictor model_predictor(const model::Model& model, Task task, const Vocabs& vocabs,
                          std::size_t max_len,
                          const text::RuleTables& rules = text::RuleTables::shipped());
Predictor editor_predictor(const editing::Editor& editor, Task task, const Vocabs& vocabs,
                           model::RoutingTrace* trace = nullptr,
                           const text::RuleTables& rules = text::RuleTables::shipped());

/// Primary split score: BLEU-2 for captions, fingerprint Tanimoto for
/// molecules (zero for invalid output).
double primary_score(Task task, const std::string& output, const std::string& reference);

struct ScoredSample {
  Sample sample;
  std::string output;
  double score = 0.0;
};

/// `threads` > 1 runs the predictor concurrently; it must then be safe to
/// call from several threads (model and editor predictors without a trace
/// are).
std::vector<ScoredSample> score_samples(const Predictor& predict, Task task,
                                        std::span<const Sample> samples, std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<Sample> edit;
  std::vector<Sample> locality;
  std::vector<Sample> generality;
  nlohmann::json provenance = nlohmann::json::object();
};

/// Ten-bin histogram of scores over [0, 1].
std::vector<std::size_t> score_histogram(std::span<const ScoredSample> scored);

/// Samples scoring below `low`, in corpus order, at most `max_size`.
/// Throws EmptyResult (message carries the score histogram).
std::vector<Sample> build_edit_set(std::span<const ScoredSample> scored, double low,
                                   std::size_t max_size);

/// Samples scoring above `high` and not in the edit set, ranked by their
/// highest similarity to any edit member (fingerprint Tanimoto for the
/// molecule task, caption BLEU-2 for the caption task), top `size`.
/// Throws EmptyResult.
std::vector<Sample> build_loc_set(std::span<const ScoredSample> scored, double high,
                                  std::span<const Sample> edit_set, std::size_t size, Task task,
                                  bool* truncated = nullptr);

/// Paraphrased-caption variants of every edit sample with variant seeds
/// 1..variants, ids "<parent>#g<seed>". Variants where no rewrite applied are
/// kept and their ids appended to `identity_fallbacks`.
std::vector<Sample> build_gen_set(std::span<const Sample> edit_set, std::size_t variants,
                                  const text::RuleTables& rules = text::RuleTables::shipped(),
                                  std::vector<std::string>* identity_fallbacks = nullptr);

/// Writes edit.jsonl, loc.jsonl, gen.jsonl and split.json into `dir`.
void save_split(const std::string& dir, const Split& split);
Split load_split(const std::string& dir);

/// Pre-edit outputs keyed by sample id, used as the locality reference.
using PreEditCache = std::map<std::string, std::string>;
void save_cache(const std::string& path, const PreEditCache& cache);
PreEditCache load_cache(const std::string& path);

// ---------------------------------------------------------------------------
// Editing runs

/// Applies the edit set sequentially: one sample per edit for the molecule
/// task, two per edit for the caption task.
std::vector<editing::EditResult> run_edits(editing::Editor& editor, Task task,
                                           std::span<const Sample> edit_set, const Vocabs& vocabs,
                                           const text::RuleTables& rules = text::RuleTables::shipped());

// ---------------------------------------------------------------------------
// Evaluation

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;
};

struct DimensionReport {
  std::size_t count = 0;
  std::map<std::string, MetricStat> metrics;
  /// Per-sample metric values, in split order.
  std::vector<std::map<std::string, double>> samples;
};

struct EvalReport {
  Task task = Task::Caption;
  DimensionReport reliability;
  DimensionReport locality;
  std::optional<DimensionReport> generality;
};

nlohmann::json to_json(const DimensionReport& r);
nlohmann::json to_json(const EvalReport& r);

/// Metric values of one output: bleu2/meteor/rouge1 for captions,
/// bleu4/lev/fp/valid for molecules. A molecule reference that does not
/// parse scores fp as exact-match.
std::map<std::string, double> sample_metrics(Task task, const std::string& output,
                                             const std::string& reference);

/// Mean and population standard deviation per metric.
DimensionReport summarize(std::vector<std::map<std::string, double>> samples);

/// Reliability against edit truths, locality against `pre_edit` outputs
/// (throws MissingPreEditCache when an id is absent), generality against
/// parent truths for the molecule task.
EvalReport evaluate(const Predictor& edited, const Split& split, Task task,
                    const PreEditCache& pre_edit, std::size_t threads = 1);

}  // namespace moledit::bench
