#include "moledit/textseg.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#ifndef MOLEDIT_DATA_DIR
#define MOLEDIT_DATA_DIR "data"
#endif

namespace moledit::text {

namespace {

constexpr std::string_view kLabelNames[] = {"Function", "Origin",   "Structure",
                                            "Type",     "Property", "Other"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

bool is_punct_token(char c) {
  return std::string_view(".,;:!?()[]\"").find(c) != std::string_view::npos;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Splits TSV content into (left, right) pairs, skipping blanks and comments.
std::vector<std::pair<std::string, std::string>> tsv_pairs(std::string_view content,
                                                           std::string_view what) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0 || tab + 1 == line.size()) {
      throw Error("BadRuleFile", std::string(what) + " line " + std::to_string(line_no) +
                                     " is not key<TAB>value");
    }
    out.emplace_back(std::string(line.substr(0, tab)), std::string(line.substr(tab + 1)));
    if (nl == content.size()) break;
  }
  return out;
}

// Replaces every word-bounded occurrence of `pattern`.
std::string replace_words(const std::string& text, const std::string& pattern,
                          const std::string& replacement, bool* hit = nullptr) {
  std::string out;
  std::size_t pos = 0;
  bool any = false;
  while (true) {
    const auto at = text.find(pattern, pos);
    if (at == std::string::npos) break;
    const auto end = at + pattern.size();
    const bool left_ok = at == 0 || !is_alnum(text[at - 1]) || !is_alnum(pattern.front());
    const bool right_ok =
        end == text.size() || !is_alnum(text[end]) || !is_alnum(pattern.back());
    if (left_ok && right_ok) {
      out.append(text, pos, at - pos);
      out += replacement;
      pos = end;
      any = true;
    } else {
      out.append(text, pos, at + 1 - pos);
      pos = at + 1;
    }
  }
  out.append(text, pos, std::string::npos);
  if (hit) *hit = any;
  return out;
}

}  // namespace

std::string_view label_name(ExpertiseLabel label) {
  return kLabelNames[static_cast<int>(label)];
}

ExpertiseLabel parse_label(std::string_view name) {
  for (int i = 0; i < 6; ++i)
    if (kLabelNames[i] == name) return static_cast<ExpertiseLabel>(i);
  throw Error("UnknownLabel", "unknown expertise label '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

std::vector<WordToken> tokenize_words(std::string_view text) {
  std::vector<WordToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    if (is_punct_token(text[i])) {
      out.push_back({std::string(1, text[i]), i, i + 1});
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) {
      if (is_punct_token(text[i])) {
        const bool numeric_sep = (text[i] == '.' || text[i] == ',') && i > start &&
                                 is_digit(text[i - 1]) && i + 1 < text.size() &&
                                 is_digit(text[i + 1]);
        if (!numeric_sep) break;
      }
      ++i;
    }
    out.push_back({std::string(text.substr(start, i - start)), start, i});
  }
  return out;
}

std::vector<std::string> word_strings(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_words(text)) out.push_back(std::move(t.text));
  return out;
}

std::string detokenize_words(std::span<const std::string> tokens) {
  std::string out;
  bool glue_next = true;
  for (const auto& t : tokens) {
    const bool closing = t.size() == 1 && std::string_view(".,;:!?)]").find(t[0]) !=
                                              std::string_view::npos;
    if (!out.empty() && !closing && !glue_next) out += ' ';
    out += t;
    glue_next = t == "(" || t == "[";
  }
  return out;
}

// ---------------------------------------------------------------------------

RuleTables RuleTables::parse(std::string_view keyword_tsv, std::string_view rewrite_tsv) {
  RuleTables tables;
  for (auto& [k, v] : tsv_pairs(keyword_tsv, "keyword table"))
    tables.keywords.push_back({lower(k), parse_label(v)});
  for (auto& [p, r] : tsv_pairs(rewrite_tsv, "rewrite table"))
    tables.rewrites.push_back({std::move(p), std::move(r)});
  return tables;
}

RuleTables RuleTables::load(const std::string& keyword_path, const std::string& rewrite_path) {
  return parse(read_file(keyword_path), read_file(rewrite_path));
}

RuleTables RuleTables::load_dir(const std::string& data_dir) {
  return load(data_dir + "/keyword_labels.tsv", data_dir + "/paraphrase_rules.tsv");
}

const RuleTables& RuleTables::shipped() {
  static const RuleTables tables = load_dir(default_data_dir());
  return tables;
}

std::string default_data_dir() { return MOLEDIT_DATA_DIR; }

// ---------------------------------------------------------------------------

ExpertiseLabel classify_description(std::string_view text, const RuleTables& rules) {
  const std::string low = lower(text);
  for (const auto& rule : rules.keywords)
    if (low.find(rule.keyword) != std::string::npos) return rule.label;
  return ExpertiseLabel::Other;
}

CaptionSegmentation segment_caption(std::string_view text, const RuleTables& rules) {
  CaptionSegmentation seg;
  seg.source = std::string(text);
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t start = 0;
  int depth = 0;
  auto flush = [&](std::size_t end) {
    std::size_t b = start, e = end;
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    if (b < e) spans.emplace_back(b, e);
    start = end;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '(' || c == '[' || c == '{') {
      ++depth;
    } else if ((c == ')' || c == ']' || c == '}') && depth > 0) {
      --depth;
    } else if (depth == 0 && (c == '.' || c == '!' || c == '?')) {
      std::size_t k = i + 1;
      if (k == text.size()) {
        flush(k);
      } else if (is_space(text[k])) {
        while (k < text.size() && is_space(text[k])) ++k;
        if (k == text.size() || std::isupper(static_cast<unsigned char>(text[k])))
          flush(i + 1);
      }
    } else if (depth == 0 && c == ';') {
      flush(i + 1);
    }
  }
  flush(text.size());
  for (auto [b, e] : spans) {
    std::string piece(text.substr(b, e - b));
    const auto label = classify_description(piece, rules);
    seg.descriptions.push_back({b, e, std::move(piece), label});
  }
  return seg;
}

// ---------------------------------------------------------------------------

ParaphraseResult paraphrase(std::string_view text, std::uint64_t seed,
                            const RuleTables& rules) {
  const std::string source(text);
  std::vector<std::size_t> applicable;
  for (std::size_t r = 0; r < rules.rewrites.size() && applicable.size() < 20; ++r) {
    bool hit = false;
    replace_words(source, rules.rewrites[r].pattern, rules.rewrites[r].replacement, &hit);
    if (hit) applicable.push_back(r);
  }
  const auto n_desc = segment_caption(source, rules).descriptions.size();
  const bool can_reorder = n_desc >= 2;
  const std::size_t n_options = applicable.size() + (can_reorder ? 1 : 0);
  if (n_options == 0) return {source, false};

  // Subsets ordered from "all options" downwards; seed picks one.
  const std::uint64_t n_subsets = (std::uint64_t{1} << n_options) - 1;
  const std::uint64_t mask = n_subsets - (seed % n_subsets);

  std::string out = source;
  for (std::size_t k = 0; k < applicable.size(); ++k) {
    if (!(mask >> k & 1U)) continue;
    const auto& rule = rules.rewrites[applicable[k]];
    out = replace_words(out, rule.pattern, rule.replacement);
  }
  if (can_reorder && (mask >> applicable.size() & 1U)) {
    auto parts = segment_caption(out, rules).descriptions;
    if (parts.size() >= 2) {
      const std::size_t shift = 1 + seed % (parts.size() - 1);
      std::rotate(parts.begin(), parts.begin() + static_cast<std::ptrdiff_t>(shift),
                  parts.end());
      std::string joined;
      for (const auto& p : parts) {
        if (!joined.empty()) joined += ' ';
        joined += p.text;
      }
      out = std::move(joined);
    }
  }
  return {out, out != source};
}

}  // namespace moledit::text
