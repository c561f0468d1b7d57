#include "moledit/bench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "moledit/chem.hpp"
#include "moledit/metrics.hpp"

namespace moledit::bench {

// ---------------------------------------------------------------------------
// Samples

const std::string& Sample::input(Task task) const {
  return task == Task::Caption ? true_smiles() : true_caption();
}

const std::string& Sample::truth(Task task) const {
  return task == Task::Caption ? true_caption() : true_smiles();
}

const std::string& Sample::training_target(Task task) const {
  return task == Task::Caption ? caption : smiles;
}

nlohmann::json to_json(const Sample& s) {
  nlohmann::json j = {{"id", s.id}, {"smiles", s.smiles}, {"caption", s.caption}};
  if (s.target_caption) j["target_caption"] = *s.target_caption;
  if (s.target_smiles) j["target_smiles"] = *s.target_smiles;
  if (s.parent_id) j["parent_id"] = *s.parent_id;
  if (s.variant_seed) j["variant_seed"] = *s.variant_seed;
  return j;
}

Sample sample_from_json(const nlohmann::json& j) {
  auto fail = [](const std::string& what) { throw Error("SchemaError", what); };
  if (!j.is_object()) fail("sample is not a JSON object");
  static const std::set<std::string> known = {"id", "smiles", "caption", "target_caption",
                                              "target_smiles", "parent_id", "variant_seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) fail("unknown field '" + key + "'");
  auto str = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) fail(std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  auto opt_str = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key)) return std::nullopt;
    return str(key);
  };
  Sample s;
  s.id = str("id");
  s.smiles = str("smiles");
  s.caption = str("caption");
  s.target_caption = opt_str("target_caption");
  s.target_smiles = opt_str("target_smiles");
  s.parent_id = opt_str("parent_id");
  if (j.contains("variant_seed")) {
    if (!j["variant_seed"].is_number_unsigned()) fail("field 'variant_seed' must be a non-negative integer");
    s.variant_seed = j["variant_seed"].get<std::uint64_t>();
  }
  return s;
}

std::vector<Sample> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IoError", "cannot read " + path);
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("SchemaError", path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path + ":" + std::to_string(lineno) + ": " + e.message(), e.error_class());
    }
  }
  return out;
}

void write_jsonl(const std::string& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
  if (!out) throw Error("IoError", "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct Substituent {
  const char* smiles;
  const char* name;  // caption prefix, "<name> group"
  const char* cls;   // compound class when it is the first substituent
  const char* role;
  bool polar;
};

constexpr Substituent kSubstituents[] = {
    {"O", "hydroxy", "alcohol", "solvent", true},
    {"C(=O)O", "carboxy", "carboxylic acid", "metabolite", true},
    {"N", "amino", "amine", "antioxidant", true},
    {"Cl", "chloro", "organochlorine compound", "pesticide", false},
    {"Br", "bromo", "organobromine compound", "antibacterial agent", false},
    {"F", "fluoro", "organofluorine compound", "enzyme inhibitor", false},
    {"[N+](=O)[O-]", "nitro", "nitro compound", "herbicide", false},
    {"S", "sulfanyl", "thiol", "fragrance", false},
    {"OC", "methoxy", "ether", "flavouring agent", false},
    {"C(N)=O", "carbamoyl", "primary amide", "anti-inflammatory agent", true},
    {"C(=O)OC", "methoxycarbonyl", "methyl ester", "fragrance", false},
    {"C(C)=O", "acetyl", "ketone", "metabolite", false},
    {"S(N)(=O)=O", "sulfamoyl", "sulfonamide", "antibacterial agent", true},
};
constexpr std::size_t kSubstituentCount = sizeof(kSubstituents) / sizeof(kSubstituents[0]);

enum class Scaffold { Chain, Benzene, Cyclohexane };

struct Molecule {
  Scaffold scaffold = Scaffold::Chain;
  std::size_t atoms = 0;
  std::vector<std::pair<std::size_t, std::size_t>> subs;  // (1-based position, substituent)
};

Molecule random_molecule(Rng& rng) {
  Molecule m;
  m.scaffold = static_cast<Scaffold>(rng.below(3));
  m.atoms = m.scaffold == Scaffold::Chain ? 2 + rng.below(5) : 6;
  const std::size_t count = 1 + rng.below(std::min<std::size_t>(3, m.atoms));
  std::vector<std::size_t> positions(m.atoms);
  for (std::size_t i = 0; i < m.atoms; ++i) positions[i] = i + 1;
  rng.shuffle(positions.begin(), positions.end());
  positions.resize(count);
  std::sort(positions.begin(), positions.end());
  for (auto p : positions) m.subs.emplace_back(p, rng.below(kSubstituentCount));
  return m;
}

std::string molecule_smiles(const Molecule& m) {
  const bool ring = m.scaffold != Scaffold::Chain;
  const char* atom = m.scaffold == Scaffold::Benzene ? "c" : "C";
  std::string out;
  for (std::size_t pos = 1; pos <= m.atoms; ++pos) {
    out += atom;
    if (ring && (pos == 1 || pos == m.atoms)) out += '1';
    for (const auto& [p, s] : m.subs)
      if (p == pos) out += std::string("(") + kSubstituents[s].smiles + ")";
  }
  return out;
}

std::string with_article(const std::string& word) {
  const char c = word.empty() ? 'x' : word[0];
  const bool vowel = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
  return (vowel ? "an " : "a ") + word;
}

std::string molecule_caption(const Molecule& m) {
  static const char* kCounts[] = {"", "one", "two", "three", "four", "five", "six"};
  const auto& first = kSubstituents[m.subs.front().second];
  std::string scaffold;
  switch (m.scaffold) {
    case Scaffold::Chain: scaffold = std::string(kCounts[m.atoms]) + "-carbon chain"; break;
    case Scaffold::Benzene: scaffold = "benzene ring"; break;
    case Scaffold::Cyclohexane: scaffold = "cyclohexane ring"; break;
  }
  std::string parts;
  bool polar = false;
  for (std::size_t i = 0; i < m.subs.size(); ++i) {
    const auto& [pos, s] = m.subs[i];
    polar = polar || kSubstituents[s].polar;
    if (i > 0) parts += i + 1 == m.subs.size() ? " and " : ", ";
    parts += with_article(kSubstituents[s].name) + " group at position " + std::to_string(pos);
  }
  std::ostringstream os;
  os << "It is " << with_article(first.cls) << ". "
     << "It consists of " << with_article(scaffold) << " substituted by " << parts << ". "
     << "It has a role as " << with_article(first.role) << ". "
     << (polar ? "It is soluble in water." : "It is insoluble in water.");
  return os.str();
}

// Unrelated descriptive text sharing no words with the caption templates.
std::string stale_caption(Rng& rng) {
  static const std::vector<std::vector<std::string>> kSlots = {
      {"Pale", "Waxy", "Glassy", "Amber", "Brittle", "Opaque", "Dusty", "Silvery"},
      {"flakes", "grains", "needles", "plates", "prisms", "lumps", "beads", "shards"},
      {"form", "appear", "settle", "gather", "emerge", "linger"},
      {"during", "after", "before", "under"},
      {"slow", "rapid", "gentle", "careful", "uneven", "steady"},
      {"cooling", "drying", "stirring", "heating", "filtering", "pouring"}};
  std::string out;
  const std::size_t sentences = 2 + rng.below(2);
  for (std::size_t k = 0; k < sentences; ++k) {
    if (k) out += ' ';
    for (std::size_t i = 0; i < kSlots.size(); ++i) {
      if (i) out += ' ';
      out += kSlots[i][rng.below(kSlots[i].size())];
    }
    out += '.';
  }
  return out;
}

double caption_bleu2(const std::string& a, const std::string& b) {
  return metrics::bleu_n(text::word_strings(a), text::word_strings(b), 2, true);
}

double smiles_tanimoto(const std::string& a, const std::string& b) {
  return chem::tanimoto(chem::fingerprint(chem::parse_smiles(a)), chem::fingerprint(chem::parse_smiles(b)));
}

}  // namespace

std::vector<Sample> generate_corpus(const CorpusOptions& options) {
  Rng rng(options.seed);
  std::vector<Molecule> molecules;
  std::set<std::string> seen;
  std::size_t attempts = 0;
  while (molecules.size() < options.size) {
    if (++attempts > 100 * (options.size + 10))
      throw Error("CorpusExhausted", "could not draw enough distinct molecules", ErrorClass::Invariant);
    auto m = random_molecule(rng);
    if (seen.insert(molecule_smiles(m)).second) molecules.push_back(std::move(m));
  }

  std::vector<Sample> out;
  for (std::size_t i = 0; i < molecules.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "s%04zu", i);
    Sample s;
    s.id = id;
    s.smiles = molecule_smiles(molecules[i]);
    s.caption = molecule_caption(molecules[i]);
    out.push_back(std::move(s));
  }

  const auto stale = static_cast<std::size_t>(std::llround(options.stale_fraction * static_cast<double>(options.size)));
  std::vector<std::size_t> order(out.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  for (std::size_t k = 0; k < std::min(stale, order.size()); ++k) {
    auto& s = out[order[k]];
    std::string wrong;
    do {
      wrong = stale_caption(rng);
    } while (caption_bleu2(wrong, s.caption) >= 0.15);
    s.target_caption = s.caption;
    s.caption = wrong;
  }
  for (std::size_t k = stale; k < std::min(2 * stale, order.size()); ++k) {
    auto& s = out[order[k]];
    std::string wrong;
    for (int tries = 0;; ++tries) {
      wrong = molecule_smiles(random_molecule(rng));
      if (wrong != s.smiles && smiles_tanimoto(wrong, s.smiles) < 0.2) break;
      if (tries > 10000) throw Error("CorpusExhausted", "no dissimilar molecule found", ErrorClass::Invariant);
    }
    s.target_smiles = s.smiles;
    s.smiles = wrong;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task data

namespace {

// Caption texts a molecule-task encoder may see for `s`.
std::vector<std::string> caption_inputs(const Sample& s, const text::RuleTables& rules) {
  std::vector<std::string> out = {s.true_caption()};
  for (std::uint64_t seed = 0; seed <= 3; ++seed) out.push_back(text::paraphrase(s.true_caption(), seed, rules).text);
  return out;
}

}  // namespace

Vocabs build_vocabs(Task task, std::span<const Sample> samples, const text::RuleTables& rules) {
  Vocabs v;
  for (const auto& s : samples) {
    if (task == Task::Caption) {
      for (const auto& t : source_sequence(task, s.input(task), rules).tokens) v.src.add(t);
    } else {
      for (const auto& text : caption_inputs(s, rules))
        for (const auto& w : text::word_strings(text)) v.src.add(w);
    }
    for (const auto& t : target_tokens(task, s.training_target(task))) v.tgt.add(t);
    for (const auto& t : target_tokens(task, s.truth(task))) v.tgt.add(t);
  }
  return v;
}

std::vector<model::Example> training_examples(Task task, std::span<const Sample> samples,
                                              const Vocabs& vocabs, const text::RuleTables& rules) {
  std::vector<model::Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back(make_example(task, vocabs.src, vocabs.tgt, s.input(task), s.training_target(task), rules));
  return out;
}

std::size_t longest_sequence(Task task, std::span<const Sample> samples, const text::RuleTables& rules) {
  std::size_t longest = 0;
  for (const auto& s : samples) {
    if (task == Task::Caption) {
      longest = std::max(longest, source_sequence(task, s.input(task), rules).tokens.size());
    } else {
      for (const auto& text : caption_inputs(s, rules))
        longest = std::max(longest, text::word_strings(text).size());
    }
    longest = std::max(longest, target_tokens(task, s.training_target(task)).size() + 1);
    longest = std::max(longest, target_tokens(task, s.truth(task)).size() + 1);
  }
  return longest;
}

// ---------------------------------------------------------------------------
// Prediction

namespace {

// Runs `predict` on every input; outputs keep input order.
std::vector<std::string> predict_all(const Predictor& predict, const std::vector<std::string>& inputs,
                                     std::size_t threads) {
  std::vector<std::string> out(inputs.size());
  threads = std::max<std::size_t>(1, std::min(threads, inputs.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = predict(inputs[i]);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < inputs.size(); i += threads) out[i] = predict(inputs[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace

Predictor model_predictor(const model::Model& model, Task task, const Vocabs& vocabs,
                          std::size_t max_len, const text::RuleTables& rules) {
  return [&model, task, &vocabs, max_len, &rules](const std::string& input) {
    const auto src = source_sequence(task, input, rules);
    const auto ids = model.generate(vocabs.src.encode(src.tokens, true), max_len);
    return join_output(task, vocabs.tgt.decode(ids));
  };
}

Predictor editor_predictor(const editing::Editor& editor, Task task, const Vocabs& vocabs,
                           model::RoutingTrace* trace, const text::RuleTables& rules) {
  return [&editor, task, &vocabs, trace, &rules](const std::string& input) {
    const auto src = source_sequence(task, input, rules);
    const auto routed = editor.infer(vocabs.src.encode(src.tokens, true), src.segmentation, trace);
    return join_output(task, vocabs.tgt.decode(routed.tokens));
  };
}

double primary_score(Task task, const std::string& output, const std::string& reference) {
  if (task == Task::Caption) return caption_bleu2(output, reference);
  if (!chem::is_valid_smiles(output)) return 0.0;
  return smiles_tanimoto(output, reference);
}

std::vector<ScoredSample> score_samples(const Predictor& predict, Task task,
                                        std::span<const Sample> samples, std::size_t threads) {
  std::vector<std::string> inputs;
  for (const auto& s : samples) inputs.push_back(s.input(task));
  auto outputs = predict_all(predict, inputs, threads);
  std::vector<ScoredSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ScoredSample sc{samples[i], std::move(outputs[i]), 0.0};
    sc.score = primary_score(task, sc.output, samples[i].truth(task));
    out.push_back(std::move(sc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

std::vector<std::size_t> score_histogram(std::span<const ScoredSample> scored) {
  std::vector<std::size_t> bins(10, 0);
  for (const auto& s : scored) {
    const auto b = static_cast<std::size_t>(std::clamp(s.score, 0.0, 1.0) * 10.0);
    ++bins[std::min<std::size_t>(b, 9)];
  }
  return bins;
}

namespace {

std::string histogram_text(std::span<const ScoredSample> scored) {
  std::string out;
  const auto bins = score_histogram(scored);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s[%.1f,%.1f%c:%zu", b ? " " : "", 0.1 * static_cast<double>(b),
                  0.1 * static_cast<double>(b + 1), b == 9 ? ']' : ')', bins[b]);
    out += buf;
  }
  return out;
}

}  // namespace

std::vector<Sample> build_edit_set(std::span<const ScoredSample> scored, double low, std::size_t max_size) {
  std::vector<Sample> out;
  for (const auto& s : scored) {
    if (out.size() >= max_size) break;
    if (s.score < low) out.push_back(s.sample);
  }
  if (out.empty()) {
    throw Error("EmptyResult", "no sample scores below " + std::to_string(low) +
                                   "; score histogram " + histogram_text(scored));
  }
  return out;
}

std::vector<Sample> build_loc_set(std::span<const ScoredSample> scored, double high,
                                  std::span<const Sample> edit_set, std::size_t size, Task task,
                                  bool* truncated) {
  std::set<std::string> edit_ids;
  for (const auto& e : edit_set) edit_ids.insert(e.id);
  std::vector<chem::BitFingerprint> edit_fps;
  if (task == Task::Molecule)
    for (const auto& e : edit_set) edit_fps.push_back(chem::fingerprint(chem::parse_smiles(e.true_smiles())));

  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const auto& s = scored[i];
    if (!(s.score > high) || edit_ids.count(s.sample.id)) continue;
    double best = 0.0;
    if (task == Task::Molecule) {
      const auto fp = chem::fingerprint(chem::parse_smiles(s.sample.true_smiles()));
      for (const auto& e : edit_fps) best = std::max(best, chem::tanimoto(fp, e));
    } else {
      for (const auto& e : edit_set) best = std::max(best, caption_bleu2(s.sample.true_caption(), e.true_caption()));
    }
    ranked.emplace_back(best, i);
  }
  if (ranked.empty()) {
    throw Error("EmptyResult", "no sample scores above " + std::to_string(high) +
                                   "; score histogram " + histogram_text(scored));
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  if (truncated) *truncated = ranked.size() < size;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < std::min(size, ranked.size()); ++i) out.push_back(scored[ranked[i].second].sample);
  return out;
}

std::vector<Sample> build_gen_set(std::span<const Sample> edit_set, std::size_t variants,
                                  const text::RuleTables& rules, std::vector<std::string>* identity_fallbacks) {
  std::vector<Sample> out;
  for (const auto& e : edit_set) {
    for (std::uint64_t seed = 1; seed <= variants; ++seed) {
      const auto p = text::paraphrase(e.true_caption(), seed, rules);
      Sample g;
      g.id = e.id + "#g" + std::to_string(seed);
      g.smiles = e.true_smiles();
      g.caption = p.text;
      g.parent_id = e.id;
      g.variant_seed = seed;
      if (!p.rewritten && identity_fallbacks) identity_fallbacks->push_back(g.id);
      out.push_back(std::move(g));
    }
  }
  return out;
}

void save_split(const std::string& dir, const Split& split) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir + "/edit.jsonl", split.edit);
  write_jsonl(dir + "/loc.jsonl", split.locality);
  write_jsonl(dir + "/gen.jsonl", split.generality);
  std::ofstream out(dir + "/split.json");
  if (!out) throw Error("IoError", "cannot write " + dir + "/split.json");
  out << split.provenance.dump(2) << '\n';
}

Split load_split(const std::string& dir) {
  Split s;
  s.edit = read_jsonl(dir + "/edit.jsonl");
  s.locality = read_jsonl(dir + "/loc.jsonl");
  s.generality = read_jsonl(dir + "/gen.jsonl");
  std::ifstream in(dir + "/split.json");
  if (!in) throw Error("IoError", "cannot read " + dir + "/split.json");
  try {
    in >> s.provenance;
  } catch (const nlohmann::json::exception& e) {
    throw Error("SchemaError", dir + "/split.json: " + e.what());
  }
  std::set<std::string> edit_ids;
  for (const auto& e : s.edit) edit_ids.insert(e.id);
  for (const auto& l : s.locality)
    if (edit_ids.count(l.id)) throw Error("SchemaError", "sample " + l.id + " is in both edit and locality sets");
  for (const auto& g : s.generality)
    if (!g.parent_id || !edit_ids.count(*g.parent_id))
      throw Error("SchemaError", "generality sample " + g.id + " has no edit-set parent");
  return s;
}

void save_cache(const std::string& path, const PreEditCache& cache) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  for (const auto& [id, output] : cache) out << nlohmann::json{{"id", id}, {"output", output}}.dump() << '\n';
}

PreEditCache load_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IoError", "cannot read " + path);
  PreEditCache cache;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      cache[j.at("id").get<std::string>()] = j.at("output").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error("SchemaError", path + ": " + e.what());
    }
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Editing runs

std::vector<editing::EditResult> run_edits(editing::Editor& editor, Task task,
                                           std::span<const Sample> edit_set, const Vocabs& vocabs,
                                           const text::RuleTables& rules) {
  const std::size_t per_edit = task == Task::Caption ? 2 : 1;
  std::vector<editing::EditResult> results;
  for (std::size_t start = 0, k = 0; start < edit_set.size(); start += per_edit, ++k) {
    std::vector<model::Example> batch;
    for (std::size_t i = start; i < std::min(edit_set.size(), start + per_edit); ++i) {
      const auto& s = edit_set[i];
      batch.push_back(make_example(task, vocabs.src, vocabs.tgt, s.input(task), s.truth(task), rules));
    }
    results.push_back(editor.apply_edit(k, batch));
  }
  return results;
}

// ---------------------------------------------------------------------------
// Evaluation

std::map<std::string, double> sample_metrics(Task task, const std::string& output,
                                             const std::string& reference) {
  if (task == Task::Caption) {
    const auto r = metrics::sim_text(output, reference);
    return {{"bleu2", r.bleu2}, {"meteor", r.meteor}, {"rouge1", r.rouge1}};
  }
  try {
    const auto r = metrics::sim_mol(output, reference);
    return {{"bleu4", r.bleu4}, {"lev", r.lev_norm}, {"fp", r.fp_tanimoto}, {"valid", r.candidate_valid ? 1.0 : 0.0}};
  } catch (const Error& e) {
    if (e.code() != "InvalidReference") throw;
    const auto ref = chem::lex_lenient(reference);
    const double bleu = ref.empty() ? (output.empty() ? 1.0 : 0.0)
                                    : metrics::bleu_n(chem::lex_lenient(output), ref, 4, true);
    return {{"bleu4", bleu},
            {"lev", metrics::normalized_levenshtein(output, reference)},
            {"fp", output == reference ? 1.0 : 0.0},
            {"valid", chem::is_valid_smiles(output) ? 1.0 : 0.0}};
  }
}

DimensionReport summarize(std::vector<std::map<std::string, double>> samples) {
  DimensionReport r;
  r.count = samples.size();
  std::map<std::string, std::vector<double>> columns;
  for (const auto& s : samples)
    for (const auto& [k, v] : s) columns[k].push_back(v);
  for (const auto& [k, vals] : columns) {
    double sum = 0.0;
    for (double v : vals) sum += v;
    const double mean = sum / static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    r.metrics[k] = {mean, std::sqrt(var / static_cast<double>(vals.size()))};
  }
  r.samples = std::move(samples);
  return r;
}

EvalReport evaluate(const Predictor& edited, const Split& split, Task task, const PreEditCache& pre_edit,
                    std::size_t threads) {
  for (const auto& s : split.locality)
    if (!pre_edit.count(s.id)) throw Error("MissingPreEditCache", "no pre-edit output for " + s.id);

  // One batch of predictions across all dimensions.
  std::vector<std::string> inputs;
  for (const auto& s : split.edit) inputs.push_back(s.input(task));
  for (const auto& s : split.locality) inputs.push_back(s.input(task));
  if (task == Task::Molecule)
    for (const auto& s : split.generality) inputs.push_back(s.true_caption());
  const auto outputs = predict_all(edited, inputs, threads);

  EvalReport report;
  report.task = task;
  std::size_t k = 0;
  std::vector<std::map<std::string, double>> rel, loc, gen;
  for (const auto& s : split.edit) rel.push_back(sample_metrics(task, outputs[k++], s.truth(task)));
  for (const auto& s : split.locality) loc.push_back(sample_metrics(task, outputs[k++], pre_edit.at(s.id)));
  report.reliability = summarize(std::move(rel));
  report.locality = summarize(std::move(loc));
  if (task == Task::Molecule) {
    for (const auto& s : split.generality) gen.push_back(sample_metrics(task, outputs[k++], s.true_smiles()));
    report.generality = summarize(std::move(gen));
  }
  return report;
}

nlohmann::json to_json(const DimensionReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, st] : r.metrics) metrics[k] = {{"mean", st.mean}, {"std", st.std}};
  return {{"count", r.count}, {"metrics", metrics}, {"samples", r.samples}};
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"task", std::string(task_name(r.task))},
                      {"reliability", to_json(r.reliability)},
                      {"locality", to_json(r.locality)}};
  if (r.generality) j["generality"] = to_json(*r.generality);
  return j;
}

}  // namespace moledit::bench
