#pragma once

// Conversion between raw sample strings and model token sequences for the
// two directions of the molecule <-> text mapping.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moledit/backbone.hpp"
#include "moledit/segmentation.hpp"
#include "moledit/textseg.hpp"

namespace moledit {

/// Caption: molecule in, caption out. Molecule: caption in, SMILES out.
enum class Task { Caption, Molecule };

/// "cap" / "mol".
std::string_view task_name(Task task);
/// Accepts cap, caption, mol, molecule. Throws BadTask.
Task parse_task(std::string_view name);

struct SourceSequence {
  std::vector<std::string> tokens;
  /// Functional groups over SMILES tokens, or descriptions over words.
  ExpertiseSegmentation segmentation;
};

/// Tokenizes and segments a model input. SMILES inputs must parse.
SourceSequence source_sequence(Task task, std::string_view input,
                               const text::RuleTables& rules = text::RuleTables::shipped());

/// Tokens of a model output string: words for captions, lenient SMILES
/// lexemes for molecules.
std::vector<std::string> target_tokens(Task task, std::string_view output);

/// Inverse of target_tokens.
std::string join_output(Task task, std::span<const std::string> tokens);

/// Encodes an (input, target) pair; unknown tokens map to <unk>.
model::Example make_example(Task task, const model::Vocab& src_vocab, const model::Vocab& tgt_vocab,
                            std::string_view input, std::string_view target,
                            const text::RuleTables& rules = text::RuleTables::shipped());

}  // namespace moledit
