#pragma once

// Text and molecule similarity scores used for reliability, locality and
// generality: BLEU-n, ROUGE-1 recall, METEOR-lite, normalized Levenshtein and
// fingerprint Tanimoto.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moledit/error.hpp"

namespace moledit::metrics {

using Tokens = std::span<const std::string>;

struct BleuDiagnostics {
  bool empty_candidate = false;
};

/// Geometric mean of clipped i-gram precisions for i in [1, n] times the
/// brevity penalty exp(1 - |ref|/|cand|) when the candidate is shorter. With
/// smoothing, an order with zero matches contributes 1 / (count + 1).
/// An empty candidate scores 0 and sets `diag->empty_candidate`.
double bleu_n(Tokens cand, Tokens ref, int n, bool smoothing = true,
              BleuDiagnostics* diag = nullptr);

/// Clipped unigram overlap divided by the reference length.
double rouge1(Tokens cand, Tokens ref);

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
};

/// Suffix-stripped, lowercased form used for the stem stage (s, es, ed, ing).
std::string meteor_stem(std::string_view word);
/// True when two words match at the stem stage: their stems share a common
/// prefix of at least four characters that spans the shorter stem.
bool meteor_stem_match(std::string_view a, std::string_view b);

struct MeteorAlignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (cand, ref), by cand
  std::size_t chunks = 0;
};

/// Greedy alignment: exact matches left to right, then stem matches among the
/// remaining tokens; each candidate token takes the earliest free reference
/// token.
MeteorAlignment meteor_align(Tokens cand, Tokens ref);

/// F = P R / (alpha P + (1 - alpha) R); score = F (1 - gamma (chunks/m)^beta).
double meteor_lite(Tokens cand, Tokens ref, const MeteorParams& params = {});

std::size_t levenshtein(std::string_view a, std::string_view b);
/// Edit distance over max(|a|, |b|); 0 when both are empty.
double normalized_levenshtein(std::string_view a, std::string_view b);

struct TextSimReport {
  double bleu2 = 0.0;
  double meteor = 0.0;
  double rouge1 = 0.0;
};

struct MolSimReport {
  double bleu4 = 0.0;
  double lev_norm = 1.0;
  double fp_tanimoto = 0.0;
  bool candidate_valid = false;
};

TextSimReport sim_text(std::string_view cand, std::string_view ref);

/// Scores a generated SMILES against a reference. An unparseable candidate
/// gets fp_tanimoto 0 and candidate_valid false; the string scores are still
/// computed. Throws InvalidReference when the reference does not parse.
MolSimReport sim_mol(std::string_view cand_smiles, std::string_view ref_smiles);

}  // namespace moledit::metrics
