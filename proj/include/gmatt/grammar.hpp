#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "gmatt/errors.hpp"

namespace gmatt {

using SymbolId = int;

struct Rule {
  int id = -1;
  SymbolId lhs = -1;
  std::vector<SymbolId> rhs;
};

// Context-free grammar with interned symbols and densely numbered rules.
// Immutable after construction; safe for concurrent reads.
class GrammarSpec {
 public:
  // The built-in SMILES grammar (lazily constructed singleton).
  static const GrammarSpec& smiles();

  // Parses the text resource format: one rule per line,
  //   rule_id<TAB>LHS<TAB>RHS1 RHS2 ...
  // with terminal symbols quoted. Lines starting with '#' are comments.
  static GrammarSpec from_text(const std::string& text);

  const std::string& name(SymbolId s) const { return names_[s]; }
  bool is_terminal(SymbolId s) const { return terminal_[s]; }
  SymbolId start() const { return start_; }
  int num_symbols() const { return static_cast<int>(names_.size()); }
  int num_nonterminals() const { return num_nonterminals_; }
  int num_terminals() const { return num_symbols() - num_nonterminals_; }

  const std::vector<Rule>& rules() const { return rules_; }
  const Rule& rule(int id) const { return rules_[id]; }
  // Rule ids with the given lhs, ascending.
  const std::vector<int>& rules_for(SymbolId lhs) const { return by_lhs_[lhs]; }

  // Id of a nonterminal/terminal by name, or -1.
  SymbolId find_nonterminal(const std::string& name) const;
  SymbolId find_terminal(const std::string& surface) const;

  // Terminals that the tokenizer may emit (surface length 1-2); longer
  // terminals are sentinels such as NONE and never appear in input text.
  const std::vector<SymbolId>& lexable_terminals() const { return lexable_; }

  // Serializes back to the text resource format.
  std::string dump() const;

  // Human-readable production, e.g. "chain -> chain bond branched_atom".
  std::string rule_label(int rule_id) const;
  // Lowercased symbol name as displayed in trees and attention maps.
  std::string display_name(SymbolId s) const;

 private:
  std::vector<std::string> names_;
  std::vector<bool> terminal_;
  std::vector<Rule> rules_;
  std::vector<std::vector<int>> by_lhs_;
  std::vector<SymbolId> lexable_;
  std::unordered_map<std::string, SymbolId> nonterminal_ids_;
  std::unordered_map<std::string, SymbolId> terminal_ids_;
  SymbolId start_ = -1;
  int num_nonterminals_ = 0;
};

struct Token {
  std::string text;     // 1-2 character surface form
  SymbolId kind;        // terminal symbol id
  std::size_t offset;   // byte offset in the source string
};

struct TreeNode {
  SymbolId symbol = -1;
  int rule_id = -1;            // interior nodes only, -1 for leaves
  int parent = -1;             // -1 for the root
  std::vector<int> children;   // ordered, empty for leaves
  std::string text;            // leaf surface text, empty for interior nodes
};

// Parse tree of a SMILES string. Nodes are stored in depth-first pre-order.
struct GrammarTree {
  std::vector<TreeNode> nodes;
  int root = 0;

  int size() const { return static_cast<int>(nodes.size()); }
  bool is_leaf(int n) const { return nodes[n].children.empty(); }
  // Depth of a node (root = 0).
  int depth(int n) const;
  // Height of the tree = max node depth.
  int height() const;
  // 1-based index of the node among its parent's children; 0 for the root.
  int sibling_index(int n) const;
};

// Maximal-munch tokenization; two-character terminals (Cl, Br, @@) take
// precedence over single-character prefixes. Throws UnknownCharacterError.
std::vector<Token> tokenize(const std::string& smiles,
                            const GrammarSpec& g = GrammarSpec::smiles());

// Earley parse into a grammar tree. When several derivations exist, the one
// applying the lowest-rule-id production at the leftmost choice point wins.
// Throws ParseError / UnknownCharacterError.
GrammarTree parse(const std::string& smiles, const GrammarSpec& g = GrammarSpec::smiles());

// Left-to-right concatenation of leaf texts.
std::string reconstruct(const GrammarTree& tree);

// True iff parse succeeds and the tree has at most max_nodes nodes.
bool is_in_grammar(const std::string& smiles, int max_nodes = 350,
                   const GrammarSpec& g = GrammarSpec::smiles());

// Depth-first pre-order of node indices; the first element is the root.
std::vector<int> preorder_nodes(const GrammarTree& tree);

// Indented tree listing for CLI inspection.
void print_tree(std::ostream& os, const GrammarTree& tree,
                const GrammarSpec& g = GrammarSpec::smiles());

}  // namespace gmatt
