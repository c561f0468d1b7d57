#include "moledit/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "moledit/chem.hpp"
#include "moledit/textseg.hpp"

namespace moledit::metrics {

namespace {

void require_reference(Tokens ref, const char* who) {
  if (ref.empty()) {
    throw Error("EmptyReference", std::string(who) + " needs a non-empty reference",
                ErrorClass::Invariant);
  }
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(Tokens toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

}  // namespace

double bleu_n(Tokens cand, Tokens ref, int n, bool smoothing, BleuDiagnostics* diag) {
  require_reference(ref, "bleu_n");
  if (n < 1) throw Error("BadArgument", "bleu order must be >= 1", ErrorClass::Invariant);
  if (diag) diag->empty_candidate = cand.empty();
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  for (int i = 1; i <= n; ++i) {
    const auto order = static_cast<std::size_t>(i);
    const std::size_t total = cand.size() >= order ? cand.size() - order + 1 : 0;
    const auto cand_counts = ngram_counts(cand, order);
    const auto ref_counts = ngram_counts(ref, order);
    std::size_t matched = 0;
    for (const auto& [gram, count] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    double precision;
    if (matched == 0) {
      if (!smoothing) return 0.0;
      precision = 1.0 / static_cast<double>(total + 1);
    } else {
      precision = static_cast<double>(matched) / static_cast<double>(total);
    }
    log_sum += std::log(precision);
  }
  double score = std::exp(log_sum / n);
  if (cand.size() < ref.size()) {
    score *= std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(cand.size()));
  }
  return score;
}

double rouge1(Tokens cand, Tokens ref) {
  require_reference(ref, "rouge1");
  const auto c = ngram_counts(cand, 1);
  const auto r = ngram_counts(ref, 1);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : r) {
    auto it = c.find(gram);
    if (it != c.end()) overlap += std::min(count, it->second);
  }
  return static_cast<double>(overlap) / static_cast<double>(ref.size());
}

std::string meteor_stem(std::string_view word) {
  std::string w(word);
  std::transform(w.begin(), w.end(), w.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  for (std::string_view suffix : {"ing", "ed", "es", "s"}) {
    if (w.size() > suffix.size() + 2 && w.ends_with(suffix)) {
      w.resize(w.size() - suffix.size());
      break;
    }
  }
  return w;
}

bool meteor_stem_match(std::string_view a, std::string_view b) {
  const auto sa = meteor_stem(a);
  const auto sb = meteor_stem(b);
  const std::size_t shorter = std::min(sa.size(), sb.size());
  std::size_t lcp = 0;
  while (lcp < shorter && sa[lcp] == sb[lcp]) ++lcp;
  return lcp >= 4 && lcp == shorter;
}

MeteorAlignment meteor_align(Tokens cand, Tokens ref) {
  std::vector<std::ptrdiff_t> cand_to_ref(cand.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  for (int stage = 0; stage < 2; ++stage) {
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (cand_to_ref[i] >= 0) continue;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (ref_used[j]) continue;
        const bool ok = stage == 0 ? cand[i] == ref[j] : meteor_stem_match(cand[i], ref[j]);
        if (ok) {
          cand_to_ref[i] = static_cast<std::ptrdiff_t>(j);
          ref_used[j] = true;
          break;
        }
      }
    }
  }
  MeteorAlignment out;
  for (std::size_t i = 0; i < cand.size(); ++i)
    if (cand_to_ref[i] >= 0) out.pairs.emplace_back(i, static_cast<std::size_t>(cand_to_ref[i]));
  for (std::size_t k = 0; k < out.pairs.size(); ++k) {
    const bool continues = k > 0 && out.pairs[k].first == out.pairs[k - 1].first + 1 &&
                           out.pairs[k].second == out.pairs[k - 1].second + 1;
    if (!continues) ++out.chunks;
  }
  return out;
}

double meteor_lite(Tokens cand, Tokens ref, const MeteorParams& params) {
  require_reference(ref, "meteor_lite");
  const auto align = meteor_align(cand, ref);
  const double m = static_cast<double>(align.pairs.size());
  if (m == 0.0) return 0.0;
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double f = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
  const double penalty =
      params.gamma * std::pow(static_cast<double>(align.chunks) / m, params.beta);
  return f * (1.0 - penalty);
}

namespace {

// Two-row Wagner-Fischer over caller-provided buffers of size |b| + 1.
std::size_t levenshtein_rows(std::string_view a, std::string_view b, std::size_t* prev,
                             std::size_t* cur) {
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b) {
  constexpr std::size_t kStack = 64;
  if (b.size() < kStack) {
    std::size_t prev[kStack], cur[kStack];
    return levenshtein_rows(a, b, prev, cur);
  }
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  return levenshtein_rows(a, b, prev.data(), cur.data());
}

double normalized_levenshtein(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

TextSimReport sim_text(std::string_view cand, std::string_view ref) {
  const auto c = text::word_strings(cand);
  const auto r = text::word_strings(ref);
  TextSimReport rep;
  rep.bleu2 = bleu_n(c, r, 2, true);
  rep.meteor = meteor_lite(c, r);
  rep.rouge1 = rouge1(c, r);
  return rep;
}

MolSimReport sim_mol(std::string_view cand_smiles, std::string_view ref_smiles) {
  chem::MolGraph ref_graph;
  chem::SmilesTokenSeq ref_tokens;
  try {
    ref_tokens = chem::tokenize_smiles(ref_smiles);
    ref_graph = chem::parse_smiles(ref_tokens);
  } catch (const chem::SmilesError& e) {
    throw Error("InvalidReference", std::string(ref_smiles) + ": " + e.what());
  }
  MolSimReport rep;
  const auto cand_tokens = chem::lex_lenient(cand_smiles);
  rep.bleu4 = bleu_n(cand_tokens, ref_tokens.lexemes(), 4, true);
  rep.lev_norm = normalized_levenshtein(cand_smiles, ref_smiles);
  rep.candidate_valid = chem::is_valid_smiles(cand_smiles);
  if (rep.candidate_valid) {
    rep.fp_tanimoto = chem::tanimoto(chem::fingerprint(chem::parse_smiles(cand_smiles)),
                                     chem::fingerprint(ref_graph));
  }
  return rep;
}

}  // namespace moledit::metrics
