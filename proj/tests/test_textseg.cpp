#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>

#include "moledit/textseg.hpp"

using namespace moledit;
using namespace moledit::text;

namespace {

const RuleTables& rules() { return RuleTables::shipped(); }

std::vector<std::string> texts(const CaptionSegmentation& seg) {
  std::vector<std::string> out;
  for (const auto& d : seg.descriptions) out.push_back(d.text);
  return out;
}

std::string squash_space(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    out += c;
  }
  return out;
}

}  // namespace

TEST(Words, Tokenize) {
  EXPECT_EQ(word_strings("It is an acid (pH 7.3)."),
            (std::vector<std::string>{"It", "is", "an", "acid", "(", "pH", "7.3", ")", "."}));
  EXPECT_EQ(word_strings("  "), std::vector<std::string>{});
  const auto toks = tokenize_words("ab, c");
  ASSERT_EQ(toks.size(), 3u);
  EXPECT_EQ(toks[1].begin, 2u);
}

TEST(Words, Detokenize) {
  const std::vector<std::string> toks = {"It", "is", "(", "pH", "7.3", ")", "."};
  EXPECT_EQ(detokenize_words(toks), "It is (pH 7.3).");
}

TEST(Rules, ShippedTablesHaveEnoughEntries) {
  EXPECT_GE(rules().rewrites.size(), 40u);
  EXPECT_GE(rules().keywords.size(), 20u);
}

TEST(Rules, ParseErrors) {
  try {
    RuleTables::parse("no tab here\n", "");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "BadRuleFile");
  }
  const auto t = RuleTables::parse("# c\n\nfoo\tType\n", "a\tb\r\n");
  ASSERT_EQ(t.keywords.size(), 1u);
  EXPECT_EQ(t.keywords[0].label, ExpertiseLabel::Type);
  ASSERT_EQ(t.rewrites.size(), 1u);
  EXPECT_EQ(t.rewrites[0].replacement, "b");
  EXPECT_THROW(parse_label("Nope"), Error);
}

TEST(Segment, Examples) {
  EXPECT_EQ(texts(segment_caption("It derives from a D-mannitol.", rules())),
            (std::vector<std::string>{"It derives from a D-mannitol."}));
  EXPECT_EQ(texts(segment_caption("A is an acid. It derives from B.", rules())),
            (std::vector<std::string>{"A is an acid.", "It derives from B."}));
  EXPECT_EQ(segment_caption("major species at pH 7.3 found in X", rules()).descriptions.size(), 1u);
}

TEST(Segment, BracketsAndSemicolons) {
  EXPECT_EQ(texts(segment_caption("It is a salt (see A. Smith). It is soluble; it is red", rules())),
            (std::vector<std::string>{"It is a salt (see A. Smith).", "It is soluble;",
                                      "it is red"}));
  // A period followed by a lowercase word is not a boundary.
  EXPECT_EQ(segment_caption("Found in approx. two species.", rules()).descriptions.size(), 1u);
}

TEST(Segment, SpansReconstructSource) {
  const std::string cap =
      "It is a primary alcohol.  It has a role as a solvent; it derives from ethane. Odd!";
  const auto seg = segment_caption(cap, rules());
  std::string joined;
  std::size_t prev_end = 0;
  for (const auto& d : seg.descriptions) {
    EXPECT_GE(d.begin, prev_end);
    EXPECT_EQ(cap.substr(d.begin, d.end - d.begin), d.text);
    prev_end = d.end;
    joined += d.text;
  }
  EXPECT_EQ(squash_space(joined), squash_space(cap));
}

TEST(Classify, Labels) {
  EXPECT_EQ(classify_description("It derives from a D-mannitol.", rules()), ExpertiseLabel::Origin);
  EXPECT_EQ(classify_description(
                "two hydroxy groups on the C-30 side-chain are located at positions 19 and 20.",
                rules()),
            ExpertiseLabel::Structure);
  EXPECT_EQ(classify_description("xyzzy", rules()), ExpertiseLabel::Other);
  EXPECT_EQ(classify_description("It has a role as a metabolite.", rules()),
            ExpertiseLabel::Function);
  EXPECT_EQ(classify_description("It is a primary alcohol.", rules()), ExpertiseLabel::Type);
  EXPECT_EQ(classify_description("It is the major species at pH 7.3.", rules()),
            ExpertiseLabel::Property);
  EXPECT_EQ(label_name(ExpertiseLabel::Property), "Property");
}

TEST(Paraphrase, TemplateRule) {
  const auto r = paraphrase("It is an acid.", 0, rules());
  EXPECT_EQ(r.text, "This compound is an acid.");
  EXPECT_TRUE(r.rewritten);
}

TEST(Paraphrase, ReorderSwapsTwoDescriptions) {
  const auto t = RuleTables::parse("", "");
  const auto r = paraphrase("A. B.", 0, t);
  EXPECT_EQ(r.text, "B. A.");
}

TEST(Paraphrase, IdentityFallback) {
  const auto r = paraphrase("xyzzy", 3, rules());
  EXPECT_EQ(r.text, "xyzzy");
  EXPECT_FALSE(r.rewritten);
}

TEST(Paraphrase, DeterministicAndSeedSensitive) {
  const std::string cap = "It is a primary alcohol. It derives from ethane.";
  EXPECT_EQ(paraphrase(cap, 1, rules()).text, paraphrase(cap, 1, rules()).text);
  EXPECT_NE(paraphrase(cap, 0, rules()).text, paraphrase(cap, 1, rules()).text);
  for (std::uint64_t s = 0; s < 6; ++s) EXPECT_NE(paraphrase(cap, s, rules()).text, cap);
}

TEST(Paraphrase, ReorderOnlyPreservesLabelMultiset) {
  const auto none = RuleTables::parse("", "");
  const std::string cap =
      "It is a primary alcohol. It has a role as a solvent. It derives from ethane.";
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto out = paraphrase(cap, seed, none).text;
    auto labels = [&](const std::string& s) {
      std::vector<int> l;
      for (const auto& d : segment_caption(s, rules()).descriptions)
        l.push_back(static_cast<int>(d.label));
      std::sort(l.begin(), l.end());
      return l;
    };
    EXPECT_EQ(labels(out), labels(cap)) << out;
  }
}
