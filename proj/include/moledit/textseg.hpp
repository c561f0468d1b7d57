#pragma once

// Caption segmentation into descriptions, keyword labelling of each
// description, and a seeded rule-based paraphraser. The keyword and rewrite
// rules are plain tab-separated files (see data/).

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moledit/error.hpp"

namespace moledit::text {

enum class ExpertiseLabel { Function, Origin, Structure, Type, Property, Other };

std::string_view label_name(ExpertiseLabel label);
/// Inverse of label_name. Throws UnknownLabel.
ExpertiseLabel parse_label(std::string_view name);

// ---------------------------------------------------------------------------
// Word tokens

struct WordToken {
  std::string text;
  std::size_t begin;
  std::size_t end;
};

/// Splits on whitespace and punctuation; each of . , ; : ! ? ( ) [ ] " is
/// its own token, except '.' or ',' between two digits ("7.3").
std::vector<WordToken> tokenize_words(std::string_view text);
std::vector<std::string> word_strings(std::string_view text);
/// Joins tokens with single spaces, attaching closing punctuation to the
/// previous token and opening brackets to the next.
std::string detokenize_words(std::span<const std::string> tokens);

// ---------------------------------------------------------------------------
// Rule tables

struct KeywordRule {
  std::string keyword;  // matched case-insensitively as a substring
  ExpertiseLabel label;
};

struct RewriteRule {
  std::string pattern;  // matched case-sensitively on word boundaries
  std::string replacement;
};

struct RuleTables {
  std::vector<KeywordRule> keywords;
  std::vector<RewriteRule> rewrites;

  /// `keyword<TAB>label` and `pattern<TAB>replacement` lines; blank lines and
  /// lines starting with '#' are skipped. Throws BadRuleFile.
  static RuleTables parse(std::string_view keyword_tsv, std::string_view rewrite_tsv);
  static RuleTables load(const std::string& keyword_path, const std::string& rewrite_path);
  /// Loads keyword_labels.tsv and paraphrase_rules.tsv from `data_dir`.
  static RuleTables load_dir(const std::string& data_dir);
  /// The tables shipped in the build's data directory.
  static const RuleTables& shipped();
};

/// Directory holding the shipped rule files.
std::string default_data_dir();

// ---------------------------------------------------------------------------
// Segmentation

struct Description {
  std::size_t begin;  // character span in the source, trimmed
  std::size_t end;
  std::string text;
  ExpertiseLabel label;
};

struct CaptionSegmentation {
  std::vector<Description> descriptions;
  std::string source;
};

/// First keyword rule whose keyword occurs in `text` wins; Other otherwise.
ExpertiseLabel classify_description(std::string_view text, const RuleTables& rules);

/// Splits at . ! ? outside brackets when followed by end of text or by
/// whitespace and a capital letter, then at top-level semicolons.
CaptionSegmentation segment_caption(std::string_view text, const RuleTables& rules);

// ---------------------------------------------------------------------------
// Paraphrase

struct ParaphraseResult {
  std::string text;
  bool rewritten = false;  // false means no rule applied (identity fallback)
};

/// Deterministic rewrite. The applicable options are the rewrite rules that
/// match plus, with two or more descriptions, a reordering. Variant `seed`
/// selects a non-empty subset of options; seed 0 applies all of them.
ParaphraseResult paraphrase(std::string_view text, std::uint64_t seed,
                            const RuleTables& rules);

}  // namespace moledit::text
