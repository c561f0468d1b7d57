#pragma once

// SMILES lexing and parsing, functional-group segmentation, and hashed
// circular-environment fingerprints.
//
// Supported subset: organic-subset atoms (B C N O P S F Cl Br I), their
// aromatic lowercase forms, bracket atoms with charge and explicit hydrogens,
// bonds - = # : (with / and \ read as single bonds), ring closures 1-9 and
// %nn, branches and '.' component separators. Stereo markers are lexed and
// otherwise ignored.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moledit/error.hpp"
#include "moledit/segmentation.hpp"

namespace moledit::chem {

class SmilesError : public Error {
 public:
  SmilesError(std::string code, const std::string& message,
              std::size_t position)
      : Error(std::move(code),
              message + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// ---------------------------------------------------------------------------
// Tokens

enum class TokenKind {
  Atom,
  BracketAtom,
  Bond,
  RingClosure,
  BranchOpen,
  BranchClose,
  Dot,
};

struct SmilesToken {
  TokenKind kind;
  std::string lexeme;
  std::size_t begin;  // character span [begin, end) in the source
  std::size_t end;

  bool is_atom() const {
    return kind == TokenKind::Atom || kind == TokenKind::BracketAtom;
  }
};

struct SmilesTokenSeq {
  std::vector<SmilesToken> tokens;
  std::string source;

  std::size_t size() const { return tokens.size(); }
  std::vector<std::string> lexemes() const;
};

/// Lossless lexing. Throws SmilesError with code IllegalCharacter or
/// UnterminatedBracket.
SmilesTokenSeq tokenize_smiles(std::string_view smiles);

/// Lexemes of `smiles` where unrecognized characters become one-character
/// tokens instead of errors. Used to score invalid model outputs.
std::vector<std::string> lex_lenient(std::string_view smiles);

// ---------------------------------------------------------------------------
// Graph

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

char bond_symbol(BondOrder order);

struct Atom {
  std::string element;  // canonical capitalization, e.g. "C", "Cl"
  bool aromatic = false;
  int charge = 0;
  int explicit_h = 0;
};

struct Bond {
  std::size_t a;
  std::size_t b;
  BondOrder order;
};

struct Neighbor {
  std::size_t atom;
  BondOrder order;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  /// atom index -> index of its token in the producing SmilesTokenSeq
  std::vector<std::size_t> atom_token;

  std::size_t atom_count() const { return atoms.size(); }
  std::vector<std::vector<Neighbor>> adjacency() const;
};

/// Builds the graph. Throws SmilesError with code UnclosedRingBond,
/// UnbalancedParenthesis, InvalidElement, DanglingBond or DuplicateBond.
MolGraph parse_smiles(const SmilesTokenSeq& tokens);
MolGraph parse_smiles(std::string_view smiles);

/// True when `smiles` lexes and parses.
bool is_valid_smiles(std::string_view smiles);

// ---------------------------------------------------------------------------
// Functional groups

enum class GroupKind {
  Carboxyl,
  Ester,
  Amide,
  Carbonyl,
  Hydroxyl,
  Amine,
  Nitro,
  Sulfonamide,
  Thiol,
  Ether,
  Halogen,
  AromaticRing,
  AliphaticRing,
  Backbone,
};

std::string_view group_label(GroupKind kind);

/// Matching priority, highest first. Backbone is implicit and not listed.
std::span<const GroupKind> group_catalog();

struct FunctionalGroup {
  GroupKind kind;
  std::vector<std::size_t> atoms;  // ascending

  std::string_view label() const { return group_label(kind); }
};

struct FunctionalGroupSegmentation {
  std::vector<FunctionalGroup> segments;
};

/// Partitions atoms into functional groups, matching patterns in catalog
/// order over still-unassigned atoms (lowest anchor atom first). Leftover
/// atoms form one backbone segment per connected component.
FunctionalGroupSegmentation detect_functional_groups(
    const MolGraph& graph, std::span<const GroupKind> catalog = group_catalog());

/// Projects an atom segmentation onto SMILES tokens. Atom tokens follow their
/// atom; other tokens follow the nearest preceding atom token.
ExpertiseSegmentation group_token_spans(const MolGraph& graph,
                                        const SmilesTokenSeq& tokens,
                                        const FunctionalGroupSegmentation& seg);

// ---------------------------------------------------------------------------
// Fingerprints

inline constexpr std::uint64_t kFingerprintSeed = 0x4d454b41ULL;  // "MEKA"

/// Seeded FNV-1a; the bit for an environment string is hash % width.
std::uint64_t environment_hash(std::string_view text,
                               std::uint64_t seed = kFingerprintSeed);

/// Atom label used at radius 0: element (lowercase when aromatic) followed by
/// a signed charge when nonzero, e.g. "c", "N+1", "O-1".
std::string atom_label(const Atom& atom);

class BitFingerprint {
 public:
  explicit BitFingerprint(std::size_t width = 1024);

  std::size_t width() const { return width_; }
  std::size_t count() const { return count_; }
  bool test(std::size_t bit) const;
  void set(std::size_t bit);
  std::vector<std::size_t> set_bits() const;

  friend bool operator==(const BitFingerprint&, const BitFingerprint&) = default;

 private:
  std::size_t width_;
  std::size_t count_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Environment strings for every atom and radius 0..radius. The radius-r
/// string of an atom is its radius-(r-1) string followed by the sorted,
/// comma-joined list of (bond symbol + neighbor radius-(r-1) string) in
/// brackets.
std::vector<std::string> circular_environments(const MolGraph& graph, int radius);

BitFingerprint fingerprint(const MolGraph& graph, int radius = 2,
                           std::size_t width = 1024);

/// |a & b| / |a | b|, or 1.0 when both are empty. Throws WidthMismatch.
double tanimoto(const BitFingerprint& a, const BitFingerprint& b);

}  // namespace moledit::chem
