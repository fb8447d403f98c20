#include "gmatt/grammar.hpp"

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace gmatt {

namespace {

// Grammar text resource, version 1. Rule ids are dense and stable; they are
// the expansion of the rule table top to bottom, one alternative per line.
// LEFT_BRACKET / RIGHT_BRACKET produce the branch delimiters "(" / ")" as
// required by the BRACKET_ATOM and BRANCH productions. SMILES -> CHAIN and
// NOTHING -> "NONE" are the start/end sentinel rules; NOTHING never appears
// in parse trees.
constexpr const char* kSmilesGrammarText =
    "# gmatt-smiles-grammar v1\n"
    "0\tSMILES\tCHAIN\n"
    "1\tATOM\tBRACKET_ATOM\n"
    "2\tATOM\tALIPHATIC_ORGANIC\n"
    "3\tATOM\tAROMATIC_ORGANIC\n"
    "4\tALIPHATIC_ORGANIC\t\"B\"\n"
    "5\tALIPHATIC_ORGANIC\t\"C\"\n"
    "6\tALIPHATIC_ORGANIC\t\"N\"\n"
    "7\tALIPHATIC_ORGANIC\t\"O\"\n"
    "8\tALIPHATIC_ORGANIC\t\"S\"\n"
    "9\tALIPHATIC_ORGANIC\t\"P\"\n"
    "10\tALIPHATIC_ORGANIC\t\"F\"\n"
    "11\tALIPHATIC_ORGANIC\t\"I\"\n"
    "12\tALIPHATIC_ORGANIC\t\"Cl\"\n"
    "13\tALIPHATIC_ORGANIC\t\"Br\"\n"
    "14\tAROMATIC_ORGANIC\t\"c\"\n"
    "15\tAROMATIC_ORGANIC\t\"n\"\n"
    "16\tAROMATIC_ORGANIC\t\"o\"\n"
    "17\tAROMATIC_ORGANIC\t\"s\"\n"
    "18\tAROMATIC_ORGANIC\t\"p\"\n"
    "19\tBRACKET_ATOM\tLEFT_BRACKET BAI RIGHT_BRACKET\n"
    "20\tBAI\tSYMBOL BAC\n"
    "21\tBAC\tCHIRAL BAH\n"
    "22\tBAC\tBAH\n"
    "23\tBAC\tCHIRAL\n"
    "24\tBAH\tHCOUNT BACH\n"
    "25\tBAH\tBACH\n"
    "26\tBAH\tHCOUNT\n"
    "27\tBACH\tCHARGE\n"
    "28\tSYMBOL\tALIPHATIC_ORGANIC\n"
    "29\tSYMBOL\tAROMATIC_ORGANIC\n"
    "30\tDIGIT\t\"1\"\n"
    "31\tDIGIT\t\"2\"\n"
    "32\tDIGIT\t\"3\"\n"
    "33\tDIGIT\t\"4\"\n"
    "34\tDIGIT\t\"5\"\n"
    "35\tDIGIT\t\"6\"\n"
    "36\tDIGIT\t\"7\"\n"
    "37\tCHIRAL\t\"@\"\n"
    "38\tCHIRAL\t\"@@\"\n"
    "39\tHCOUNT\t\"H\"\n"
    "40\tHCOUNT\t\"H\" DIGIT\n"
    "41\tCHARGE\t\"-\"\n"
    "42\tCHARGE\t\"+\"\n"
    "43\tBOND\t\"-\"\n"
    "44\tBOND\t\"=\"\n"
    "45\tBOND\t\"#\"\n"
    "46\tBOND\t\"/\"\n"
    "47\tBOND\t\"\\\"\n"
    "48\tRINGBOND\tDIGIT\n"
    "49\tRINGBOND\tBOND DIGIT\n"
    "50\tBRANCHED_ATOM\tATOM\n"
    "51\tBRANCHED_ATOM\tATOM RB\n"
    "52\tBRANCHED_ATOM\tATOM BB\n"
    "53\tBRANCHED_ATOM\tATOM RB BB\n"
    "54\tRB\tRB RINGBOND\n"
    "55\tRB\tRINGBOND\n"
    "56\tBB\tBB BRANCH\n"
    "57\tBB\tBRANCH\n"
    "58\tBRANCH\tLEFT_BRACKET CHAIN RIGHT_BRACKET\n"
    "59\tBRANCH\tLEFT_BRACKET BOND CHAIN RIGHT_BRACKET\n"
    "60\tCHAIN\tBRANCHED_ATOM\n"
    "61\tCHAIN\tCHAIN BRANCHED_ATOM\n"
    "62\tCHAIN\tCHAIN BOND BRANCHED_ATOM\n"
    "63\tLEFT_BRACKET\t\"(\"\n"
    "64\tRIGHT_BRACKET\t\")\"\n"
    "65\tNOTHING\t\"NONE\"\n";

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

const GrammarSpec& GrammarSpec::smiles() {
  static const GrammarSpec g = from_text(kSmilesGrammarText);
  return g;
}

GrammarSpec GrammarSpec::from_text(const std::string& text) {
  GrammarSpec g;
  struct RawRule {
    int id;
    std::string lhs;
    std::vector<std::pair<std::string, bool>> rhs;  // (name, is_terminal)
  };
  std::vector<RawRule> raw;

  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw DataError("grammar resource: bad line: " + line);
    RawRule r;
    r.id = std::stoi(line.substr(0, t1));
    r.lhs = line.substr(t1 + 1, t2 - t1 - 1);
    std::istringstream rhs(line.substr(t2 + 1));
    std::string sym;
    while (rhs >> sym) {
      if (sym.size() >= 2 && sym.front() == '"' && sym.back() == '"')
        r.rhs.emplace_back(sym.substr(1, sym.size() - 2), true);
      else
        r.rhs.emplace_back(sym, false);
    }
    if (r.rhs.empty()) throw DataError("grammar resource: empty rhs in: " + line);
    raw.push_back(std::move(r));
  }
  if (raw.empty()) throw DataError("grammar resource: no rules");

  // Intern nonterminals first (in order of first appearance as an lhs),
  // then terminals in order of first appearance on a rhs.
  for (const auto& r : raw) {
    if (!g.nonterminal_ids_.count(r.lhs)) {
      g.nonterminal_ids_[r.lhs] = g.num_symbols();
      g.names_.push_back(r.lhs);
      g.terminal_.push_back(false);
    }
  }
  g.num_nonterminals_ = g.num_symbols();
  for (const auto& r : raw) {
    for (const auto& [name, is_term] : r.rhs) {
      if (is_term && !g.terminal_ids_.count(name)) {
        g.terminal_ids_[name] = g.num_symbols();
        g.names_.push_back(name);
        g.terminal_.push_back(true);
      } else if (!is_term && !g.nonterminal_ids_.count(name)) {
        throw DataError("grammar resource: undeclared nonterminal " + name);
      }
    }
  }

  g.rules_.resize(raw.size());
  g.by_lhs_.assign(g.num_symbols(), {});
  for (const auto& r : raw) {
    if (r.id < 0 || r.id >= static_cast<int>(raw.size()) || g.rules_[r.id].id != -1)
      throw DataError("grammar resource: rule ids must be dense 0..R-1");
    Rule rule;
    rule.id = r.id;
    rule.lhs = g.nonterminal_ids_.at(r.lhs);
    for (const auto& [name, is_term] : r.rhs)
      rule.rhs.push_back(is_term ? g.terminal_ids_.at(name) : g.nonterminal_ids_.at(name));
    g.rules_[r.id] = std::move(rule);
  }
  for (const auto& rule : g.rules_) g.by_lhs_[rule.lhs].push_back(rule.id);

  for (SymbolId s = g.num_nonterminals_; s < g.num_symbols(); ++s)
    if (g.names_[s].size() <= 2) g.lexable_.push_back(s);

  g.start_ = g.rules_[0].lhs;
  return g;
}

SymbolId GrammarSpec::find_nonterminal(const std::string& name) const {
  auto it = nonterminal_ids_.find(name);
  return it == nonterminal_ids_.end() ? -1 : it->second;
}

SymbolId GrammarSpec::find_terminal(const std::string& surface) const {
  auto it = terminal_ids_.find(surface);
  return it == terminal_ids_.end() ? -1 : it->second;
}

std::string GrammarSpec::dump() const {
  std::ostringstream os;
  os << "# gmatt-smiles-grammar v1\n";
  for (const auto& r : rules_) {
    os << r.id << '\t' << names_[r.lhs] << '\t';
    for (std::size_t i = 0; i < r.rhs.size(); ++i) {
      if (i) os << ' ';
      if (terminal_[r.rhs[i]])
        os << '"' << names_[r.rhs[i]] << '"';
      else
        os << names_[r.rhs[i]];
    }
    os << '\n';
  }
  return os.str();
}

std::string GrammarSpec::rule_label(int rule_id) const {
  const Rule& r = rules_[rule_id];
  std::string s = display_name(r.lhs) + " ->";
  for (SymbolId x : r.rhs) s += " " + (terminal_[x] ? names_[x] : display_name(x));
  return s;
}

std::string GrammarSpec::display_name(SymbolId s) const {
  return terminal_[s] ? names_[s] : lowercase(names_[s]);
}

int GrammarTree::depth(int n) const {
  int d = 0;
  for (int p = nodes[n].parent; p != -1; p = nodes[p].parent) ++d;
  return d;
}

int GrammarTree::height() const {
  int h = 0;
  for (int n = 0; n < size(); ++n) h = std::max(h, depth(n));
  return h;
}

int GrammarTree::sibling_index(int n) const {
  int p = nodes[n].parent;
  if (p == -1) return 0;
  const auto& sib = nodes[p].children;
  for (std::size_t i = 0; i < sib.size(); ++i)
    if (sib[i] == n) return static_cast<int>(i) + 1;
  throw IndexOutOfRangeError("node not found among parent's children");
}

std::vector<Token> tokenize(const std::string& smiles, const GrammarSpec& g) {
  if (smiles.empty()) throw DataError("empty SMILES string");
  std::vector<Token> out;
  std::size_t pos = 0;
  while (pos < smiles.size()) {
    SymbolId best = -1;
    std::size_t best_len = 0;
    for (SymbolId t : g.lexable_terminals()) {
      const std::string& surf = g.name(t);
      if (surf.size() > best_len && smiles.compare(pos, surf.size(), surf) == 0) {
        best = t;
        best_len = surf.size();
      }
    }
    if (best == -1) throw UnknownCharacterError(pos);
    out.push_back(Token{smiles.substr(pos, best_len), best, pos});
    pos += best_len;
  }
  return out;
}

namespace {

// Earley item: position of the dot inside a rule plus the span origin.
struct Item {
  int rule;    // index into rules(); rules().size() = augmented start rule
  int dot;
  int origin;
};

inline std::uint64_t item_key(int rule, int dot, int origin) {
  return (static_cast<std::uint64_t>(rule) << 40) ^ (static_cast<std::uint64_t>(dot) << 32) ^
         static_cast<std::uint64_t>(origin);
}

class EarleyParser {
 public:
  EarleyParser(const GrammarSpec& g, const std::vector<Token>& tokens)
      : g_(g), tokens_(tokens), n_(static_cast<int>(tokens.size())) {}

  GrammarTree run(std::size_t source_size) {
    recognize(source_size);
    GrammarTree tree;
    tree.nodes.reserve(2 * n_);
    build(g_.start(), 0, n_, -1, tree);
    tree.root = 0;
    return tree;
  }

 private:
  const GrammarSpec& g_;
  const std::vector<Token>& tokens_;
  int n_;

  std::vector<std::vector<Item>> chart_;
  std::vector<std::unordered_set<std::uint64_t>> seen_;
  // waiting_[k][sym]: indices into chart_[k] of items whose next symbol is sym.
  std::vector<std::vector<std::vector<int>>> waiting_;
  // ends_[sym][i]: sorted span ends j such that sym derives tokens [i, j).
  std::vector<std::vector<std::vector<int>>> ends_;
  std::unordered_set<std::uint64_t> ends_seen_;
  std::unordered_set<std::uint64_t> dead_;  // memoized failed (rule, idx, i, j)

  int rule_len(int r) const {
    return r == static_cast<int>(g_.rules().size()) ? 1
                                                    : static_cast<int>(g_.rules()[r].rhs.size());
  }
  SymbolId rule_sym(int r, int dot) const {
    return r == static_cast<int>(g_.rules().size()) ? g_.start() : g_.rules()[r].rhs[dot];
  }
  SymbolId rule_lhs(int r) const {
    return r == static_cast<int>(g_.rules().size()) ? -1 : g_.rules()[r].lhs;
  }

  void add_item(int k, int rule, int dot, int origin) {
    if (!seen_[k].insert(item_key(rule, dot, origin)).second) return;
    int idx = static_cast<int>(chart_[k].size());
    chart_[k].push_back(Item{rule, dot, origin});
    if (dot < rule_len(rule)) {
      SymbolId next = rule_sym(rule, dot);
      if (!g_.is_terminal(next)) waiting_[k][next].push_back(idx);
    }
  }

  void recognize(std::size_t source_size) {
    const int aug = static_cast<int>(g_.rules().size());
    chart_.assign(n_ + 1, {});
    seen_.assign(n_ + 1, {});
    waiting_.assign(n_ + 1, std::vector<std::vector<int>>(g_.num_symbols()));
    ends_.assign(g_.num_symbols(), std::vector<std::vector<int>>(n_ + 1));

    add_item(0, aug, 0, 0);
    bool accepted = false;
    int furthest = 0;
    for (int k = 0; k <= n_; ++k) {
      for (std::size_t i = 0; i < chart_[k].size(); ++i) {
        Item it = chart_[k][i];
        if (it.dot < rule_len(it.rule)) {
          SymbolId next = rule_sym(it.rule, it.dot);
          if (g_.is_terminal(next)) {
            if (k < n_ && tokens_[k].kind == next) add_item(k + 1, it.rule, it.dot + 1, it.origin);
          } else {
            for (int r : g_.rules_for(next)) add_item(k, r, 0, k);
          }
        } else {
          // Completion. The grammar has no empty productions, so origin < k.
          if (it.rule == aug) {
            if (it.origin == 0 && k == n_) accepted = true;
            continue;
          }
          SymbolId lhs = rule_lhs(it.rule);
          if (ends_seen_.insert(item_key(lhs, 0, it.origin * (n_ + 1) + k)).second)
            ends_[lhs][it.origin].push_back(k);
          for (int wi : waiting_[it.origin][lhs]) {
            const Item& w = chart_[it.origin][wi];
            add_item(k, w.rule, w.dot + 1, w.origin);
          }
        }
      }
      if (!chart_[k].empty()) furthest = k;
    }
    if (!accepted) {
      std::size_t pos = furthest < n_ ? tokens_[furthest].offset : source_size;
      throw ParseError(pos);
    }
    for (auto& per_origin : ends_)
      for (auto& v : per_origin) std::sort(v.begin(), v.end());
  }

  bool derives(SymbolId sym, int i, int j) const {
    const auto& v = ends_[sym][i];
    return std::binary_search(v.begin(), v.end(), j);
  }

  // Finds the lowest-rule-id derivation of `sym` over tokens [i, j) and
  // appends its nodes to the tree in pre-order. Splits between rhs symbols
  // are resolved shortest-leftmost-first, which together with the rule-id
  // order makes the extracted tree unique.
  void build(SymbolId sym, int i, int j, int parent, GrammarTree& tree) {
    int self = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{sym, -1, parent, {}, {}});
    if (parent != -1) tree.nodes[parent].children.push_back(self);
    if (g_.is_terminal(sym)) {
      tree.nodes[self].text = tokens_[i].text;
      return;
    }
    std::vector<int> cuts;
    for (int r : g_.rules_for(sym)) {
      const Rule& rule = g_.rule(r);
      cuts.clear();
      if (match_seq(rule, 0, i, j, cuts)) {
        tree.nodes[self].rule_id = r;
        int at = i;
        for (std::size_t c = 0; c < rule.rhs.size(); ++c) {
          build(rule.rhs[c], at, cuts[c], self, tree);
          at = cuts[c];
        }
        return;
      }
    }
    throw RuntimeError("parse extraction failed despite successful recognition");
  }

  // Whether rhs symbols [idx..] of `rule` can derive tokens [i, j); fills
  // `cuts` with the chosen end position of every symbol from idx on.
  bool match_seq(const Rule& rule, std::size_t idx, int i, int j, std::vector<int>& cuts) {
    if (idx == rule.rhs.size()) return i == j;
    std::uint64_t key = (static_cast<std::uint64_t>(rule.id) << 48) ^
                        (static_cast<std::uint64_t>(idx) << 40) ^
                        (static_cast<std::uint64_t>(i) << 20) ^ static_cast<std::uint64_t>(j);
    if (dead_.count(key)) return false;
    SymbolId sym = rule.rhs[idx];
    std::size_t base = cuts.size();
    if (g_.is_terminal(sym)) {
      if (i < j && tokens_[i].kind == sym) {
        cuts.push_back(i + 1);
        if (match_seq(rule, idx + 1, i + 1, j, cuts)) return true;
        cuts.resize(base);
      }
    } else {
      for (int e : ends_[sym][i]) {
        if (e > j) break;
        if (idx + 1 == rule.rhs.size() && e != j) continue;
        cuts.push_back(e);
        if (match_seq(rule, idx + 1, e, j, cuts)) return true;
        cuts.resize(base);
      }
    }
    dead_.insert(key);
    return false;
  }
};

}  // namespace

GrammarTree parse(const std::string& smiles, const GrammarSpec& g) {
  std::vector<Token> tokens = tokenize(smiles, g);
  EarleyParser parser(g, tokens);
  return parser.run(smiles.size());
}

std::string reconstruct(const GrammarTree& tree) {
  std::string out;
  for (int n : preorder_nodes(tree))
    if (tree.is_leaf(n)) out += tree.nodes[n].text;
  return out;
}

bool is_in_grammar(const std::string& smiles, int max_nodes, const GrammarSpec& g) {
  try {
    GrammarTree t = parse(smiles, g);
    return t.size() <= max_nodes;
  } catch (const DataError&) {
    return false;
  }
}

std::vector<int> preorder_nodes(const GrammarTree& tree) {
  std::vector<int> order;
  order.reserve(tree.nodes.size());
  std::vector<int> stack{tree.root};
  while (!stack.empty()) {
    int n = stack.back();
    stack.pop_back();
    order.push_back(n);
    const auto& ch = tree.nodes[n].children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return order;
}

void print_tree(std::ostream& os, const GrammarTree& tree, const GrammarSpec& g) {
  for (int n : preorder_nodes(tree)) {
    for (int i = 0; i < tree.depth(n); ++i) os << "  ";
    const TreeNode& node = tree.nodes[n];
    if (tree.is_leaf(n))
      os << '\'' << node.text << '\'';
    else
      os << g.display_name(node.symbol);
    os << '\n';
  }
}

}  // namespace gmatt
