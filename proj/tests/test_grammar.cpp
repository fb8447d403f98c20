#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "gmatt/grammar.hpp"
#include "gmatt/rng.hpp"

using namespace gmatt;

namespace {

std::vector<std::string> token_texts(const std::string& s) {
  std::vector<std::string> out;
  for (const Token& t : tokenize(s)) out.push_back(t.text);
  return out;
}

std::vector<std::string> preorder_symbols(const GrammarTree& t) {
  const GrammarSpec& g = GrammarSpec::smiles();
  std::vector<std::string> out;
  for (int n : preorder_nodes(t)) out.push_back(g.display_name(t.nodes[n].symbol));
  return out;
}

// Random in-grammar string generator: expands the grammar from CHAIN with a
// budget that steers recursive rules toward termination. Used as the
// independent round-trip oracle input source.
std::string random_smiles(Rng& rng, int budget) {
  const GrammarSpec& g = GrammarSpec::smiles();
  std::string out;
  std::vector<SymbolId> stack{g.find_nonterminal("CHAIN")};
  int steps = 0;
  while (!stack.empty() && steps < 10000) {
    ++steps;
    SymbolId sym = stack.back();
    stack.pop_back();
    if (g.is_terminal(sym)) {
      out += g.name(sym);
      continue;
    }
    const auto& options = g.rules_for(sym);
    // With no budget left, prefer the shortest rhs to wind down recursion.
    int pick;
    if (budget > 0) {
      pick = options[rng.below(options.size())];
    } else {
      pick = options[0];
      for (int r : options)
        if (g.rule(r).rhs.size() < g.rule(pick).rhs.size()) pick = r;
    }
    --budget;
    const Rule& rule = g.rule(pick);
    for (auto it = rule.rhs.rbegin(); it != rule.rhs.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

}  // namespace

TEST_CASE("grammar spec invariants") {
  const GrammarSpec& g = GrammarSpec::smiles();
  CHECK(g.num_nonterminals() == 24);
  CHECK(g.rules().size() == 66);
  CHECK(g.name(g.start()) == "SMILES");
  // Rule ids dense and ordered.
  for (std::size_t i = 0; i < g.rules().size(); ++i) CHECK(g.rule(i).id == static_cast<int>(i));
  // Every rhs symbol is declared.
  for (const Rule& r : g.rules())
    for (SymbolId s : r.rhs) CHECK((s >= 0 && s < g.num_symbols()));
  // dump() round-trips through from_text.
  GrammarSpec g2 = GrammarSpec::from_text(g.dump());
  CHECK(g2.dump() == g.dump());
}

TEST_CASE("tokenize: single-char terminals") {
  auto toks = token_texts("CC=C");
  CHECK(toks == std::vector<std::string>{"C", "C", "=", "C"});
}

TEST_CASE("tokenize: maximal munch on Br and ring digits") {
  auto toks = token_texts("COc1ccc(Br)cc1");
  CHECK(toks == std::vector<std::string>{"C", "O", "c", "1", "c", "c", "c", "(", "Br", ")", "c",
                                         "c", "1"});
}

TEST_CASE("tokenize: @@ takes precedence over @") {
  auto toks = token_texts("(C@@H)");
  CHECK(toks == std::vector<std::string>{"(", "C", "@@", "H", ")"});
}

TEST_CASE("tokenize: unknown character position") {
  CHECK_THROWS_AS(tokenize("CXC"), UnknownCharacterError);
  try {
    tokenize("CXC");
  } catch (const UnknownCharacterError& e) {
    CHECK(e.position == 1);
  }
}

TEST_CASE("parse: propene matches the hand derivation") {
  GrammarTree t = parse("CC=C");
  const GrammarSpec& g = GrammarSpec::smiles();
  CHECK(t.nodes[t.root].symbol == g.start());
  CHECK(reconstruct(t) == "CC=C");
  // smiles -> chain -> chain bond branched_atom, etc.
  auto syms = preorder_symbols(t);
  std::vector<std::string> head{"smiles",        "chain", "chain",             "chain",
                                "branched_atom", "atom",  "aliphatic_organic", "C"};
  REQUIRE(syms.size() >= head.size());
  CHECK(std::equal(head.begin(), head.end(), syms.begin()));
  CHECK(t.size() == 18);
}

TEST_CASE("parse: errors") {
  CHECK_THROWS_AS(parse("C("), ParseError);
  CHECK_THROWS_AS(parse("("), ParseError);
  CHECK_THROWS_AS(parse("1C"), ParseError);  // ring digit cannot lead
}

TEST_CASE("parse: benzene ring bonds round-trip") {
  GrammarTree t = parse("c1ccccc1");
  CHECK(reconstruct(t) == "c1ccccc1");
}

TEST_CASE("parse: paper reaction strings round-trip") {
  for (const char* s : {"C=CCCOCC=NO", "CCOC(=O)CSCCCC(O)c1ccco1", "COc1ccc(-c2ccc(C)cc2)cc1",
                        "COc1ccc(Br)cc1.", "OC(CCCBr)c1ccco1"}) {
    std::string str(s);
    if (str.back() == '.') continue;  // '.' is not a grammar terminal
    CHECK(reconstruct(parse(str)) == str);
  }
}

TEST_CASE("parse: structural soundness") {
  const GrammarSpec& g = GrammarSpec::smiles();
  for (const char* s : {"CC=C", "c1ccccc1", "C(C(=O)O)N", "(C@@H+)", "C/C=C/C"}) {
    GrammarTree t = parse(s);
    for (int n = 0; n < t.size(); ++n) {
      const TreeNode& node = t.nodes[n];
      if (t.is_leaf(n)) {
        CHECK(g.is_terminal(node.symbol));
        CHECK(node.text == g.name(node.symbol));
      } else {
        const Rule& r = g.rule(node.rule_id);
        CHECK(r.lhs == node.symbol);
        REQUIRE(r.rhs.size() == node.children.size());
        for (std::size_t c = 0; c < r.rhs.size(); ++c)
          CHECK(t.nodes[node.children[c]].symbol == r.rhs[c]);
      }
      for (int c : node.children) CHECK(t.nodes[c].parent == n);
    }
  }
}

TEST_CASE("is_in_grammar") {
  CHECK(is_in_grammar("CC=C"));
  CHECK_FALSE(is_in_grammar("C[Si](C)C"));  // Si (and square brackets) not in grammar
  CHECK_FALSE(is_in_grammar(""));
  CHECK_FALSE(is_in_grammar("CC=C", 5));  // node budget exceeded
}

TEST_CASE("preorder_nodes: single-atom derivation and permutation property") {
  GrammarTree t = parse("C");
  auto syms = preorder_symbols(t);
  CHECK(syms ==
        std::vector<std::string>{"smiles", "chain", "branched_atom", "atom", "aliphatic_organic",
                                 "C"});
  auto order = preorder_nodes(t);
  CHECK(order[0] == t.root);
  std::set<int> unique(order.begin(), order.end());
  CHECK(unique.size() == order.size());
  CHECK(static_cast<int>(order.size()) == t.size());
}

TEST_CASE("leaf count equals token count") {
  for (const char* s : {"CC=C", "c1ccccc1", "CC(C)(C)OC(=O)N", "C#N", "(CH3)"}) {
    GrammarTree t = parse(s);
    int leaves = 0;
    for (int n = 0; n < t.size(); ++n)
      if (t.is_leaf(n)) ++leaves;
    CHECK(leaves == static_cast<int>(tokenize(s).size()));
  }
}

TEST_CASE("parse determinism: byte-identical trees") {
  GrammarTree a = parse("CC(=O)Oc1ccccc1C(=O)O");
  GrammarTree b = parse("CC(=O)Oc1ccccc1C(=O)O");
  REQUIRE(a.size() == b.size());
  for (int n = 0; n < a.size(); ++n) {
    CHECK(a.nodes[n].symbol == b.nodes[n].symbol);
    CHECK(a.nodes[n].rule_id == b.nodes[n].rule_id);
    CHECK(a.nodes[n].parent == b.nodes[n].parent);
    CHECK(a.nodes[n].children == b.nodes[n].children);
    CHECK(a.nodes[n].text == b.nodes[n].text);
  }
}

TEST_CASE("property: random in-grammar strings round-trip") {
  Rng rng(20240811);
  int generated = 0;
  for (int i = 0; i < 400; ++i) {
    std::string s = random_smiles(rng, 4 + static_cast<int>(rng.below(40)));
    if (s.empty()) continue;
    ++generated;
    CAPTURE(s);
    GrammarTree t = parse(s);
    CHECK(reconstruct(t) == s);
    // Leaf texts in order are exactly the tokens.
    auto toks = tokenize(s);
    std::size_t ti = 0;
    for (int n : preorder_nodes(t))
      if (t.is_leaf(n)) CHECK(t.nodes[n].text == toks[ti++].text);
    CHECK(ti == toks.size());
  }
  CHECK(generated > 300);
}

TEST_CASE("print_tree emits one line per node") {
  GrammarTree t = parse("CC=C");
  std::ostringstream os;
  print_tree(os, t);
  int lines = 0;
  for (char c : os.str())
    if (c == '\n') ++lines;
  CHECK(lines == t.size());
}
