#include "moledit/task.hpp"

#include "moledit/chem.hpp"

namespace moledit {

std::string_view task_name(Task task) { return task == Task::Caption ? "cap" : "mol"; }

Task parse_task(std::string_view name) {
  if (name == "cap" || name == "caption") return Task::Caption;
  if (name == "mol" || name == "molecule") return Task::Molecule;
  throw Error("BadTask", "task must be cap or mol, got '" + std::string(name) + "'",
              ErrorClass::Usage);
}

namespace {

SourceSequence caption_source(std::string_view text, const text::RuleTables& rules) {
  SourceSequence out;
  const auto words = text::tokenize_words(text);
  const auto seg = text::segment_caption(text, rules);
  for (const auto& w : words) out.tokens.push_back(w.text);
  out.segmentation.token_count = words.size();
  if (words.empty()) return out;

  // Each word belongs to the last description starting at or before it.
  std::vector<ExpertiseSegment> segments;
  for (const auto& d : seg.descriptions)
    segments.push_back({std::string(text::label_name(d.label)), {}});
  if (segments.empty()) segments.push_back({"Other", {}});
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::size_t owner = 0;
    for (std::size_t d = 0; d < seg.descriptions.size(); ++d)
      if (seg.descriptions[d].begin <= words[i].begin) owner = d;
    segments[owner].tokens.push_back(i);
  }
  for (auto& s : segments)
    if (!s.tokens.empty()) out.segmentation.segments.push_back(std::move(s));
  return out;
}

SourceSequence molecule_source(std::string_view smiles) {
  SourceSequence out;
  const auto tokens = chem::tokenize_smiles(smiles);
  const auto graph = chem::parse_smiles(tokens);
  out.tokens = tokens.lexemes();
  out.segmentation =
      chem::group_token_spans(graph, tokens, chem::detect_functional_groups(graph));
  return out;
}

}  // namespace

SourceSequence source_sequence(Task task, std::string_view input, const text::RuleTables& rules) {
  return task == Task::Caption ? molecule_source(input) : caption_source(input, rules);
}

std::vector<std::string> target_tokens(Task task, std::string_view output) {
  return task == Task::Caption ? text::word_strings(output) : chem::lex_lenient(output);
}

std::string join_output(Task task, std::span<const std::string> tokens) {
  if (task == Task::Caption) return text::detokenize_words(tokens);
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

model::Example make_example(Task task, const model::Vocab& src_vocab, const model::Vocab& tgt_vocab,
                            std::string_view input, std::string_view target,
                            const text::RuleTables& rules) {
  auto src = source_sequence(task, input, rules);
  model::Example ex;
  ex.src = src_vocab.encode(src.tokens, true);
  ex.tgt = tgt_vocab.encode(target_tokens(task, target), true);
  ex.segmentation = std::move(src.segmentation);
  return ex;
}

}  // namespace moledit
