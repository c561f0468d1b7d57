#include "moledit/chem.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>

namespace moledit::chem {

namespace {

constexpr std::array<std::string_view, 118> kElements = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg",
    "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr",
    "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf",
    "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po",
    "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs",
    "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

bool is_element(std::string_view sym) {
  return std::find(kElements.begin(), kElements.end(), sym) != kElements.end();
}

bool is_aromatic_symbol(std::string_view sym) {
  return sym == "b" || sym == "c" || sym == "n" || sym == "o" || sym == "p" ||
         sym == "s" || sym == "se" || sym == "as";
}

std::string capitalize(std::string_view sym) {
  std::string out(sym);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(out[0]));
  return out;
}

}  // namespace

std::vector<std::string> SmilesTokenSeq::lexemes() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.lexeme);
  return out;
}

namespace {

struct Lexed {
  TokenKind kind;
  std::size_t len;
};

// Recognizes the token starting at `i`, or throws SmilesError.
Lexed lex_one(std::string_view s, std::size_t i) {
  const char c = s[i];
  const char next = i + 1 < s.size() ? s[i + 1] : '\0';
  if (static_cast<unsigned char>(c) > 127) {
    throw SmilesError("IllegalCharacter", "non-ASCII character", i);
  }
  switch (c) {
    case 'C':
      return {TokenKind::Atom, next == 'l' ? 2u : 1u};
    case 'B':
      return {TokenKind::Atom, next == 'r' ? 2u : 1u};
    case 'N': case 'O': case 'P': case 'S': case 'F': case 'I':
    case 'b': case 'c': case 'n': case 'o': case 'p': case 's':
      return {TokenKind::Atom, 1};
    case '[': {
      const auto close = s.find(']', i + 1);
      if (close == std::string_view::npos || s.find('[', i + 1) < close) {
        throw SmilesError("UnterminatedBracket", "'[' without ']'", i);
      }
      return {TokenKind::BracketAtom, close - i + 1};
    }
    case '-': case '=': case '#': case ':': case '/': case '\\':
      return {TokenKind::Bond, 1};
    case '(':
      return {TokenKind::BranchOpen, 1};
    case ')':
      return {TokenKind::BranchClose, 1};
    case '.':
      return {TokenKind::Dot, 1};
    case '%':
      if (i + 2 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])) &&
          std::isdigit(static_cast<unsigned char>(s[i + 2]))) {
        return {TokenKind::RingClosure, 3};
      }
      throw SmilesError("IllegalCharacter", "'%' must be followed by two digits", i);
    default:
      if (std::isdigit(static_cast<unsigned char>(c))) return {TokenKind::RingClosure, 1};
      throw SmilesError("IllegalCharacter", std::string("unexpected '") + c + "'", i);
  }
}

}  // namespace

SmilesTokenSeq tokenize_smiles(std::string_view s) {
  SmilesTokenSeq seq;
  seq.source = std::string(s);
  for (std::size_t i = 0; i < s.size();) {
    const auto [kind, len] = lex_one(s, i);
    seq.tokens.push_back({kind, std::string(s.substr(i, len)), i, i + len});
    i += len;
  }
  return seq;
}

std::vector<std::string> lex_lenient(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t len = 1;
    try {
      len = lex_one(s, i).len;
    } catch (const SmilesError&) {
    }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

char bond_symbol(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return '-';
    case BondOrder::Double: return '=';
    case BondOrder::Triple: return '#';
    case BondOrder::Aromatic: return ':';
  }
  return '?';
}

std::vector<std::vector<Neighbor>> MolGraph::adjacency() const {
  std::vector<std::vector<Neighbor>> adj(atoms.size());
  for (const auto& b : bonds) {
    adj[b.a].push_back({b.b, b.order});
    adj[b.b].push_back({b.a, b.order});
  }
  return adj;
}

namespace {

Atom parse_organic(const SmilesToken& tok) {
  Atom atom;
  if (std::islower(static_cast<unsigned char>(tok.lexeme[0]))) {
    atom.aromatic = true;
    atom.element = capitalize(tok.lexeme);
  } else {
    atom.element = tok.lexeme;
  }
  return atom;
}

Atom parse_bracket(const SmilesToken& tok) {
  const std::string_view body =
      std::string_view(tok.lexeme).substr(1, tok.lexeme.size() - 2);
  std::size_t i = 0;
  auto fail = [&](const std::string& what) -> Atom {
    throw SmilesError("InvalidElement", what + " in " + tok.lexeme, tok.begin);
  };
  while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;  // isotope
  if (i >= body.size() || !std::isalpha(static_cast<unsigned char>(body[i]))) {
    return fail("missing element symbol");
  }
  Atom atom;
  // Prefer a two-letter match: element (e.g. "Cl") or aromatic ("se").
  std::string_view two = body.substr(i, 2);
  std::string_view one = body.substr(i, 1);
  if (two.size() == 2 && std::islower(static_cast<unsigned char>(two[1])) &&
      (is_element(two) || is_aromatic_symbol(two))) {
    atom.aromatic = is_aromatic_symbol(two);
    atom.element = capitalize(two);
    i += 2;
  } else if (is_element(one)) {
    atom.element = std::string(one);
    i += 1;
  } else if (is_aromatic_symbol(one)) {
    atom.aromatic = true;
    atom.element = capitalize(one);
    i += 1;
  } else {
    return fail("unknown element");
  }
  if (i < body.size() && body[i] == '@') {  // chirality, ignored
    while (i < body.size() && body[i] == '@') ++i;
    if (i + 1 < body.size() && std::isupper(static_cast<unsigned char>(body[i])) &&
        std::isupper(static_cast<unsigned char>(body[i + 1]))) {
      i += 2;  // @TH1-style classes
      while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;
    }
  }
  if (i < body.size() && body[i] == 'H') {
    ++i;
    int h = 1;
    if (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) {
      h = body[i] - '0';
      ++i;
    }
    atom.explicit_h = h;
  }
  if (i < body.size() && (body[i] == '+' || body[i] == '-')) {
    const char sign = body[i];
    const int unit = sign == '+' ? 1 : -1;
    ++i;
    int mag = 1;
    if (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) {
      mag = 0;
      while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i])))
        mag = mag * 10 + (body[i++] - '0');
    } else {
      while (i < body.size() && body[i] == sign) {
        ++mag;
        ++i;
      }
    }
    atom.charge = unit * mag;
  }
  if (i < body.size() && body[i] == ':') {
    ++i;
    while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;
  }
  if (i != body.size()) return fail("unexpected trailing characters");
  return atom;
}

BondOrder bond_from_lexeme(const std::string& lex) {
  switch (lex[0]) {
    case '=': return BondOrder::Double;
    case '#': return BondOrder::Triple;
    case ':': return BondOrder::Aromatic;
    default: return BondOrder::Single;  // '-', '/', '\'
  }
}

int ring_number(const std::string& lex) {
  return lex[0] == '%' ? std::stoi(lex.substr(1)) : lex[0] - '0';
}

}  // namespace

MolGraph parse_smiles(const SmilesTokenSeq& seq) {
  MolGraph g;
  std::optional<std::size_t> prev;
  struct Pending {
    BondOrder order;
    std::size_t pos;
  };
  std::optional<Pending> pending;
  struct BranchFrame {
    std::size_t atom;
    std::size_t pos;
    std::size_t atoms_before;
  };
  std::vector<BranchFrame> branches;
  struct OpenRing {
    std::size_t atom;
    std::optional<BondOrder> order;
    std::size_t pos;
  };
  std::map<int, OpenRing> rings;
  std::set<std::pair<std::size_t, std::size_t>> bonded;

  auto add_bond = [&](std::size_t a, std::size_t b, std::optional<BondOrder> order,
                      std::size_t pos) {
    const auto key = std::minmax(a, b);
    if (a == b || !bonded.insert(key).second) {
      throw SmilesError("DuplicateBond", "atoms already bonded", pos);
    }
    BondOrder o = order.value_or(g.atoms[a].aromatic && g.atoms[b].aromatic
                                     ? BondOrder::Aromatic
                                     : BondOrder::Single);
    g.bonds.push_back({a, b, o});
  };

  for (std::size_t ti = 0; ti < seq.tokens.size(); ++ti) {
    const auto& tok = seq.tokens[ti];
    switch (tok.kind) {
      case TokenKind::Atom:
      case TokenKind::BracketAtom: {
        g.atoms.push_back(tok.kind == TokenKind::Atom ? parse_organic(tok)
                                                      : parse_bracket(tok));
        g.atom_token.push_back(ti);
        const std::size_t idx = g.atoms.size() - 1;
        if (prev) {
          add_bond(*prev, idx, pending ? std::optional(pending->order) : std::nullopt,
                   tok.begin);
        } else if (pending) {
          throw SmilesError("DanglingBond", "bond without a preceding atom",
                            pending->pos);
        }
        pending.reset();
        prev = idx;
        break;
      }
      case TokenKind::Bond:
        if (!prev || pending) {
          throw SmilesError("DanglingBond", "bond without a preceding atom", tok.begin);
        }
        pending = Pending{bond_from_lexeme(tok.lexeme), tok.begin};
        break;
      case TokenKind::RingClosure: {
        if (!prev) {
          throw SmilesError("DanglingBond", "ring closure without an atom", tok.begin);
        }
        const int num = ring_number(tok.lexeme);
        auto it = rings.find(num);
        if (it == rings.end()) {
          rings.emplace(num, OpenRing{*prev,
                                      pending ? std::optional(pending->order) : std::nullopt,
                                      tok.begin});
        } else {
          std::optional<BondOrder> order = it->second.order;
          if (pending) order = pending->order;
          add_bond(it->second.atom, *prev, order, tok.begin);
          rings.erase(it);
        }
        pending.reset();
        break;
      }
      case TokenKind::BranchOpen:
        if (!prev) {
          throw SmilesError("UnbalancedParenthesis", "branch without a parent atom",
                            tok.begin);
        }
        if (pending) {
          throw SmilesError("DanglingBond", "bond before '('", pending->pos);
        }
        branches.push_back({*prev, tok.begin, g.atoms.size()});
        break;
      case TokenKind::BranchClose:
        if (branches.empty()) {
          throw SmilesError("UnbalancedParenthesis", "')' without '('", tok.begin);
        }
        if (pending) {
          throw SmilesError("DanglingBond", "bond before ')'", pending->pos);
        }
        if (branches.back().atoms_before == g.atoms.size()) {
          throw SmilesError("UnbalancedParenthesis", "empty branch", tok.begin);
        }
        prev = branches.back().atom;
        branches.pop_back();
        break;
      case TokenKind::Dot:
        if (pending) {
          throw SmilesError("DanglingBond", "bond before '.'", pending->pos);
        }
        prev.reset();
        break;
    }
  }
  if (pending) throw SmilesError("DanglingBond", "trailing bond", pending->pos);
  if (!branches.empty()) {
    throw SmilesError("UnbalancedParenthesis", "'(' never closed", branches.back().pos);
  }
  if (!rings.empty()) {
    throw SmilesError("UnclosedRingBond",
                      "ring bond " + std::to_string(rings.begin()->first) + " never closed",
                      rings.begin()->second.pos);
  }
  if (g.atoms.empty()) {
    throw SmilesError("DanglingBond", "no atoms", 0);
  }
  return g;
}

MolGraph parse_smiles(std::string_view smiles) {
  return parse_smiles(tokenize_smiles(smiles));
}

bool is_valid_smiles(std::string_view smiles) {
  if (smiles.empty()) return false;
  try {
    parse_smiles(smiles);
    return true;
  } catch (const SmilesError&) {
    return false;
  }
}

// ---------------------------------------------------------------------------
// Functional groups

std::string_view group_label(GroupKind kind) {
  switch (kind) {
    case GroupKind::Carboxyl: return "carboxyl";
    case GroupKind::Ester: return "ester";
    case GroupKind::Amide: return "amide";
    case GroupKind::Carbonyl: return "carbonyl";
    case GroupKind::Hydroxyl: return "hydroxyl";
    case GroupKind::Amine: return "amine";
    case GroupKind::Nitro: return "nitro";
    case GroupKind::Sulfonamide: return "sulfonamide";
    case GroupKind::Thiol: return "thiol";
    case GroupKind::Ether: return "ether";
    case GroupKind::Halogen: return "halogen";
    case GroupKind::AromaticRing: return "aromatic ring";
    case GroupKind::AliphaticRing: return "aliphatic ring";
    case GroupKind::Backbone: return "backbone";
  }
  return "unknown";
}

std::span<const GroupKind> group_catalog() {
  static constexpr std::array<GroupKind, 13> kCatalog = {
      GroupKind::Carboxyl,     GroupKind::Ester,        GroupKind::Amide,
      GroupKind::Carbonyl,     GroupKind::Hydroxyl,     GroupKind::Amine,
      GroupKind::Nitro,        GroupKind::Sulfonamide,  GroupKind::Thiol,
      GroupKind::Ether,        GroupKind::Halogen,      GroupKind::AromaticRing,
      GroupKind::AliphaticRing};
  return kCatalog;
}

namespace {

class GroupMatcher {
 public:
  explicit GroupMatcher(const MolGraph& g)
      : g_(g), adj_(g.adjacency()), assigned_(g.atom_count(), false) {}

  FunctionalGroupSegmentation run(std::span<const GroupKind> catalog) {
    FunctionalGroupSegmentation out;
    for (GroupKind kind : catalog) {
      if (kind == GroupKind::AromaticRing) {
        components(kind, out, [&](std::size_t a) { return g_.atoms[a].aromatic; },
                   [](std::size_t, const Neighbor& n) {
                     return n.order == BondOrder::Aromatic;
                   });
        continue;
      }
      if (kind == GroupKind::AliphaticRing) {
        const auto ring_bonds = ring_bond_set();
        components(
            kind, out,
            [&](std::size_t a) {
              if (g_.atoms[a].aromatic) return false;
              for (const auto& n : adj_[a])
                if (ring_bonds.count(std::minmax(a, n.atom))) return true;
              return false;
            },
            [&](std::size_t a, const Neighbor& n) {
              return ring_bonds.count(std::minmax(a, n.atom)) > 0;
            });
        continue;
      }
      for (std::size_t anchor = 0; anchor < g_.atom_count(); ++anchor) {
        if (assigned_[anchor]) continue;
        if (auto atoms = match(kind, anchor)) claim(kind, std::move(*atoms), out);
      }
    }
    components(GroupKind::Backbone, out, [](std::size_t) { return true; },
               [](std::size_t, const Neighbor&) { return true; });
    return out;
  }

 private:
  using Atoms = std::vector<std::size_t>;

  const Atom& atom(std::size_t i) const { return g_.atoms[i]; }
  bool free(std::size_t i) const { return !assigned_[i]; }
  std::size_t degree(std::size_t i) const { return adj_[i].size(); }
  bool is(std::size_t i, std::string_view el) const {
    return atom(i).element == el && !atom(i).aromatic;
  }

  // Free terminal oxygens double-bonded to `a`, ascending.
  Atoms oxo_neighbors(std::size_t a) const {
    Atoms out;
    for (const auto& n : adj_[a])
      if (n.order == BondOrder::Double && is(n.atom, "O") && degree(n.atom) == 1 &&
          free(n.atom))
        out.push_back(n.atom);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::optional<std::size_t> single_neighbor(std::size_t a,
                                             const std::function<bool(std::size_t)>& pred) const {
    std::optional<std::size_t> best;
    for (const auto& n : adj_[a])
      if (n.order == BondOrder::Single && free(n.atom) && pred(n.atom))
        if (!best || n.atom < *best) best = n.atom;
    return best;
  }

  std::optional<Atoms> match(GroupKind kind, std::size_t a) const {
    switch (kind) {
      case GroupKind::Carboxyl:
      case GroupKind::Ester:
      case GroupKind::Amide:
      case GroupKind::Carbonyl: {
        if (!is(a, "C")) return std::nullopt;
        const auto oxo = oxo_neighbors(a);
        if (oxo.empty()) return std::nullopt;
        if (kind == GroupKind::Carbonyl) return Atoms{a, oxo[0]};
        std::optional<std::size_t> partner;
        if (kind == GroupKind::Carboxyl) {
          partner = single_neighbor(a, [&](std::size_t o) {
            return is(o, "O") && degree(o) == 1;
          });
        } else if (kind == GroupKind::Ester) {
          partner = single_neighbor(a, [&](std::size_t o) {
            if (!is(o, "O") || degree(o) != 2) return false;
            for (const auto& n : adj_[o])
              if (n.atom != a && atom(n.atom).element == "C") return true;
            return false;
          });
        } else {
          partner = single_neighbor(a, [&](std::size_t n) { return is(n, "N"); });
        }
        if (!partner) return std::nullopt;
        return Atoms{a, oxo[0], *partner};
      }
      case GroupKind::Hydroxyl:
        if (is(a, "O") && atom(a).charge == 0 && degree(a) == 1 &&
            adj_[a][0].order == BondOrder::Single &&
            atom(adj_[a][0].atom).element == "C")
          return Atoms{a};
        return std::nullopt;
      case GroupKind::Amine: {
        if (!is(a, "N") || atom(a).charge < 0) return std::nullopt;
        for (const auto& n : adj_[a])
          if (n.order != BondOrder::Single || atom(n.atom).element != "C")
            return std::nullopt;
        return Atoms{a};
      }
      case GroupKind::Nitro: {
        if (!is(a, "N")) return std::nullopt;
        Atoms oxygens;
        for (const auto& n : adj_[a])
          if (is(n.atom, "O") && degree(n.atom) == 1 && free(n.atom))
            oxygens.push_back(n.atom);
        std::sort(oxygens.begin(), oxygens.end());
        if (oxygens.size() < 2) return std::nullopt;
        return Atoms{a, oxygens[0], oxygens[1]};
      }
      case GroupKind::Sulfonamide: {
        if (!is(a, "S")) return std::nullopt;
        const auto oxo = oxo_neighbors(a);
        if (oxo.size() < 2) return std::nullopt;
        const auto n = single_neighbor(a, [&](std::size_t x) { return is(x, "N"); });
        if (!n) return std::nullopt;
        return Atoms{a, oxo[0], oxo[1], *n};
      }
      case GroupKind::Thiol:
        if (is(a, "S") && degree(a) == 1 && adj_[a][0].order == BondOrder::Single)
          return Atoms{a};
        return std::nullopt;
      case GroupKind::Ether: {
        if (!is(a, "O") || degree(a) != 2) return std::nullopt;
        for (const auto& n : adj_[a])
          if (n.order != BondOrder::Single || atom(n.atom).element != "C")
            return std::nullopt;
        return Atoms{a};
      }
      case GroupKind::Halogen: {
        const auto& el = atom(a).element;
        if (el == "F" || el == "Cl" || el == "Br" || el == "I") return Atoms{a};
        return std::nullopt;
      }
      default:
        return std::nullopt;
    }
  }

  void claim(GroupKind kind, Atoms atoms, FunctionalGroupSegmentation& out) {
    for (auto i : atoms)
      if (assigned_[i]) return;
    for (auto i : atoms) assigned_[i] = true;
    std::sort(atoms.begin(), atoms.end());
    out.segments.push_back({kind, std::move(atoms)});
  }

  // A bond lies on a ring when its endpoints stay connected without it.
  std::set<std::pair<std::size_t, std::size_t>> ring_bond_set() const {
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (const auto& b : g_.bonds) {
      std::vector<bool> seen(g_.atom_count(), false);
      std::vector<std::size_t> stack{b.a};
      seen[b.a] = true;
      bool found = false;
      while (!stack.empty() && !found) {
        const auto cur = stack.back();
        stack.pop_back();
        for (const auto& n : adj_[cur]) {
          if ((cur == b.a && n.atom == b.b) || (cur == b.b && n.atom == b.a)) continue;
          if (n.atom == b.b) {
            found = true;
            break;
          }
          if (!seen[n.atom]) {
            seen[n.atom] = true;
            stack.push_back(n.atom);
          }
        }
      }
      if (found) out.insert(std::minmax(b.a, b.b));
    }
    return out;
  }

  void components(GroupKind kind, FunctionalGroupSegmentation& out,
                  const std::function<bool(std::size_t)>& member,
                  const std::function<bool(std::size_t, const Neighbor&)>& edge) {
    for (std::size_t start = 0; start < g_.atom_count(); ++start) {
      if (assigned_[start] || !member(start)) continue;
      Atoms comp;
      std::vector<std::size_t> stack{start};
      assigned_[start] = true;
      while (!stack.empty()) {
        const auto cur = stack.back();
        stack.pop_back();
        comp.push_back(cur);
        for (const auto& n : adj_[cur]) {
          if (assigned_[n.atom] || !member(n.atom) || !edge(cur, n)) continue;
          assigned_[n.atom] = true;
          stack.push_back(n.atom);
        }
      }
      std::sort(comp.begin(), comp.end());
      out.segments.push_back({kind, std::move(comp)});
    }
  }

  const MolGraph& g_;
  std::vector<std::vector<Neighbor>> adj_;
  std::vector<bool> assigned_;
};

}  // namespace

FunctionalGroupSegmentation detect_functional_groups(const MolGraph& graph,
                                                     std::span<const GroupKind> catalog) {
  return GroupMatcher(graph).run(catalog);
}

ExpertiseSegmentation group_token_spans(const MolGraph& graph, const SmilesTokenSeq& tokens,
                                        const FunctionalGroupSegmentation& seg) {
  std::vector<std::size_t> atom_segment(graph.atom_count(), 0);
  for (std::size_t s = 0; s < seg.segments.size(); ++s)
    for (auto a : seg.segments[s].atoms) atom_segment.at(a) = s;
  std::vector<std::optional<std::size_t>> token_atom(tokens.size());
  for (std::size_t a = 0; a < graph.atom_count(); ++a)
    token_atom.at(graph.atom_token[a]) = a;

  std::vector<std::size_t> token_segment(tokens.size(), 0);
  std::optional<std::size_t> current;
  std::vector<std::size_t> leading;  // non-atom tokens before the first atom
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (token_atom[t]) current = atom_segment[*token_atom[t]];
    if (current) {
      token_segment[t] = *current;
      for (auto l : leading) token_segment[l] = *current;
      leading.clear();
    } else {
      leading.push_back(t);
    }
  }

  ExpertiseSegmentation out;
  out.token_count = tokens.size();
  std::vector<ExpertiseSegment> segs(seg.segments.size());
  for (std::size_t s = 0; s < seg.segments.size(); ++s)
    segs[s].label = std::string(seg.segments[s].label());
  for (std::size_t t = 0; t < tokens.size(); ++t) segs[token_segment[t]].tokens.push_back(t);
  for (auto& s : segs)
    if (!s.tokens.empty()) out.segments.push_back(std::move(s));
  return out;
}

// ---------------------------------------------------------------------------
// Fingerprints

std::uint64_t environment_hash(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string atom_label(const Atom& atom) {
  std::string label = atom.element;
  if (atom.aromatic) {
    std::transform(label.begin(), label.end(), label.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  }
  if (atom.charge != 0) {
    label += atom.charge > 0 ? '+' : '-';
    label += std::to_string(std::abs(atom.charge));
  }
  return label;
}

BitFingerprint::BitFingerprint(std::size_t width)
    : width_(width), words_((width + 63) / 64, 0) {
  if (width == 0) throw Error("WidthMismatch", "fingerprint width must be positive");
}

bool BitFingerprint::test(std::size_t bit) const {
  return (words_.at(bit / 64) >> (bit % 64)) & 1U;
}

void BitFingerprint::set(std::size_t bit) {
  auto& w = words_.at(bit / 64);
  const std::uint64_t mask = std::uint64_t{1} << (bit % 64);
  if (!(w & mask)) {
    w |= mask;
    ++count_;
  }
}

std::vector<std::size_t> BitFingerprint::set_bits() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < width_; ++i)
    if (test(i)) out.push_back(i);
  return out;
}

std::vector<std::string> circular_environments(const MolGraph& graph, int radius) {
  const auto adj = graph.adjacency();
  std::vector<std::string> level(graph.atom_count());
  for (std::size_t a = 0; a < graph.atom_count(); ++a) level[a] = atom_label(graph.atoms[a]);
  std::vector<std::string> out(level);
  for (int r = 1; r <= radius; ++r) {
    std::vector<std::string> next(graph.atom_count());
    for (std::size_t a = 0; a < graph.atom_count(); ++a) {
      std::vector<std::string> parts;
      for (const auto& n : adj[a]) parts.push_back(bond_symbol(n.order) + level[n.atom]);
      std::sort(parts.begin(), parts.end());
      std::string s = level[a] + "[";
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) s += ',';
        s += parts[i];
      }
      s += ']';
      next[a] = std::move(s);
    }
    out.insert(out.end(), next.begin(), next.end());
    level = std::move(next);
  }
  return out;
}

BitFingerprint fingerprint(const MolGraph& graph, int radius, std::size_t width) {
  BitFingerprint fp(width);
  for (const auto& env : circular_environments(graph, radius))
    fp.set(environment_hash(env) % width);
  return fp;
}

double tanimoto(const BitFingerprint& a, const BitFingerprint& b) {
  if (a.width() != b.width()) {
    throw Error("WidthMismatch", std::to_string(a.width()) + " vs " +
                                     std::to_string(b.width()));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.width(); ++i) {
    const bool x = a.test(i), y = b.test(i);
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace moledit::chem
