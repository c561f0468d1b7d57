#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "moledit/chem.hpp"
#include "moledit/metrics.hpp"
#include "moledit/rng.hpp"

using namespace moledit;
using namespace moledit::metrics;

namespace {

using V = std::vector<std::string>;

// Exponential oracle: breadth-first search over single-character edits,
// bounded by max(|a|, |b|) which is always achievable.
std::size_t brute_edit_distance(const std::string& a, const std::string& b,
                                const std::string& alphabet) {
  const std::size_t bound = std::max(a.size(), b.size());
  std::set<std::string> frontier{a}, seen{a};
  for (std::size_t d = 0; d <= bound; ++d) {
    if (frontier.count(b)) return d;
    std::set<std::string> next;
    for (const auto& s : frontier) {
      std::vector<std::string> moves;
      for (std::size_t i = 0; i < s.size(); ++i) moves.push_back(s.substr(0, i) + s.substr(i + 1));
      for (std::size_t i = 0; i <= s.size(); ++i)
        for (char c : alphabet) moves.push_back(s.substr(0, i) + c + s.substr(i));
      for (std::size_t i = 0; i < s.size(); ++i)
        for (char c : alphabet) {
          std::string t = s;
          t[i] = c;
          moves.push_back(t);
        }
      for (auto& m : moves)
        if (m.size() <= bound + 1 && seen.insert(m).second) next.insert(std::move(m));
    }
    frontier = std::move(next);
  }
  return bound;
}

std::string random_string(Rng& rng, const std::string& alphabet, std::size_t max_len) {
  std::string s;
  const auto n = rng.below(max_len + 1);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.below(alphabet.size())];
  return s;
}

}  // namespace

TEST(Bleu, HandFixtures) {
  EXPECT_DOUBLE_EQ(bleu_n(V{"A", "B"}, V{"A", "C"}, 1, false), 0.5);
  EXPECT_DOUBLE_EQ(bleu_n(V{"a", "b", "c", "d"}, V{"a", "b", "c", "d"}, 4), 1.0);
  EXPECT_DOUBLE_EQ(bleu_n(V{"a"}, V{"a", "b"}, 2, false), 0.0);
  // cand a b c x, ref a b c d: p1 = 3/4, p2 = 2/3, BP = 1.
  EXPECT_NEAR(bleu_n(V{"a", "b", "c", "x"}, V{"a", "b", "c", "d"}, 2, false),
              std::sqrt(0.75 * (2.0 / 3.0)), 1e-12);
  // Smoothed: cand a b, ref a c d. p1 = 1/2, p2 has 0 of 1 -> 1/2.
  // BP = exp(1 - 3/2).
  EXPECT_NEAR(bleu_n(V{"a", "b"}, V{"a", "c", "d"}, 2, true),
              std::sqrt(0.5 * 0.5) * std::exp(1.0 - 1.5), 1e-12);
  // Clipping: the, the, the vs the, cat -> p1 = 1/3.
  EXPECT_NEAR(bleu_n(V{"the", "the", "the"}, V{"the", "cat"}, 1, false), 1.0 / 3.0, 1e-12);
}

TEST(Bleu, EmptyCandidateAndErrors) {
  BleuDiagnostics diag;
  EXPECT_DOUBLE_EQ(bleu_n(V{}, V{"a"}, 2, true, &diag), 0.0);
  EXPECT_TRUE(diag.empty_candidate);
  EXPECT_THROW(bleu_n(V{"a"}, V{}, 2), Error);
  EXPECT_THROW(bleu_n(V{"a"}, V{"a"}, 0), Error);
}

TEST(Bleu, AppendingUnmatchedTokenNeverRaisesMatches) {
  // Reference no longer than the candidate, so no brevity penalty applies
  // and precision times length is the clipped match count.
  const V ref = {"a", "b", "c"};
  V cand = {"a", "b", "x"};
  const double before = bleu_n(cand, ref, 1, false) * static_cast<double>(cand.size());
  cand.push_back("y");
  const double after = bleu_n(cand, ref, 1, false) * static_cast<double>(cand.size());
  EXPECT_LE(after, before + 1e-12);
}

TEST(Rouge, HandFixtures) {
  EXPECT_DOUBLE_EQ(rouge1(V{"a", "b"}, V{"a", "b"}), 1.0);
  EXPECT_DOUBLE_EQ(rouge1(V{}, V{"a"}), 0.0);
  EXPECT_DOUBLE_EQ(rouge1(V{"A", "A"}, V{"A", "B"}), 0.5);
}

TEST(Meteor, HandFixtures) {
  EXPECT_NEAR(meteor_lite(V{"a", "b"}, V{"a", "b"}), 0.9375, 1e-12);
  EXPECT_NEAR(meteor_lite(V{"a"}, V{"a"}), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(meteor_lite(V{"x"}, V{"a"}), 0.0);
  // cand: b a, ref: a b c. m = 2, chunks = 2, P = 1, R = 2/3.
  // F = (2/3) / (0.9 + 0.1 * 2/3); penalty = 0.5 * 1.
  const double f = (2.0 / 3.0) / (0.9 + 0.1 * (2.0 / 3.0));
  EXPECT_NEAR(meteor_lite(V{"b", "a"}, V{"a", "b", "c"}), f * 0.5, 1e-12);
  // Six identical tokens: one chunk.
  const V six = {"a", "b", "c", "d", "e", "f"};
  EXPECT_NEAR(meteor_lite(six, six), 1.0 - 0.5 / 216.0, 1e-12);
}

TEST(Meteor, StemStage) {
  EXPECT_EQ(meteor_stem("Groups"), "group");
  EXPECT_EQ(meteor_stem("derived"), "deriv");
  EXPECT_TRUE(meteor_stem_match("derives", "derived"));
  EXPECT_FALSE(meteor_stem_match("cat", "cats"));  // prefix shorter than 4
  EXPECT_FALSE(meteor_stem_match("hydroxy", "hydrogen"));  // prefix does not span
  const auto al = meteor_align(V{"hydroxy", "groups"}, V{"hydroxy", "group"});
  EXPECT_EQ(al.pairs.size(), 2u);
  EXPECT_EQ(al.chunks, 1u);
}

TEST(Levenshtein, Examples) {
  EXPECT_DOUBLE_EQ(normalized_levenshtein("CCO", "CCO"), 0.0);
  EXPECT_DOUBLE_EQ(normalized_levenshtein("CCO", "CCN"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(normalized_levenshtein("", "CC"), 1.0);
  EXPECT_DOUBLE_EQ(normalized_levenshtein("", ""), 0.0);
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
}

TEST(Levenshtein, MatchesBruteForceOnSampledPairs) {
  const std::string alphabet = "CNO()";
  Rng rng(21);
  for (int i = 0; i < 150; ++i) {
    const auto a = random_string(rng, alphabet, 4);
    const auto b = random_string(rng, alphabet, 4);
    EXPECT_EQ(levenshtein(a, b), brute_edit_distance(a, b, alphabet)) << a << " / " << b;
    EXPECT_DOUBLE_EQ(normalized_levenshtein(a, b), normalized_levenshtein(b, a));
  }
}

TEST(SimText, IdenticalIsPerfect) {
  const auto r = sim_text("It is an acid.", "It is an acid.");
  EXPECT_DOUBLE_EQ(r.bleu2, 1.0);
  EXPECT_DOUBLE_EQ(r.rouge1, 1.0);
  EXPECT_GT(r.meteor, 0.9);
}

TEST(SimMol, Cases) {
  const auto same = sim_mol("CC(=O)O", "CC(=O)O");
  EXPECT_DOUBLE_EQ(same.bleu4, 1.0);
  EXPECT_DOUBLE_EQ(same.lev_norm, 0.0);
  EXPECT_DOUBLE_EQ(same.fp_tanimoto, 1.0);
  EXPECT_TRUE(same.candidate_valid);

  const auto bad = sim_mol("adopt(C", "CCO");
  EXPECT_FALSE(bad.candidate_valid);
  EXPECT_DOUBLE_EQ(bad.fp_tanimoto, 0.0);
  EXPECT_GT(bad.lev_norm, 0.0);

  const auto near = sim_mol("CCO", "CCN");
  EXPECT_DOUBLE_EQ(near.lev_norm, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(near.fp_tanimoto, chem::tanimoto(chem::fingerprint(chem::parse_smiles("CCO")),
                                                    chem::fingerprint(chem::parse_smiles("CCN"))));
  try {
    sim_mol("CCO", "C1CC");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "InvalidReference");
  }
}
