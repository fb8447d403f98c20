#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gmatt/grammar.hpp"
#include "gmatt/model.hpp"
#include "gmatt/rng.hpp"
#include "gmatt/tree_encoding.hpp"

namespace gmatt {

struct ReactionRecord {
  std::optional<int> class_id;  // 1..10
  std::string product;
  std::vector<std::string> precursors;
};

// Symbol/id bijection with <pad> = 0 and <unk> = 1.
struct Vocab {
  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> ids;
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  int size() const { return static_cast<int>(symbols.size()); }
  int id_of(const std::string& s) const {
    auto it = ids.find(s);
    return it == ids.end() ? kUnk : it->second;
  }
  const std::string& symbol(int id) const { return symbols[id]; }
  void add(const std::string& s);

  static Vocab from_symbols(const std::vector<std::string>& symbols);
};

// Encoder-side vocabulary: pad/unk, the reaction-class tokens, then every
// grammar symbol (nonterminals and terminals) in grammar order.
Vocab build_encoder_vocab(const GrammarSpec& g = GrammarSpec::smiles());
// Decoder-side vocabulary: pad/unk/start/end, the precursor separator ".",
// then the tokenizable terminal surfaces in grammar order.
Vocab build_decoder_vocab(const GrammarSpec& g = GrammarSpec::smiles());

inline std::string rx_token(int class_id) { return "<RX_" + std::to_string(class_id) + ">"; }
constexpr const char* kStartToken = "<START>";
constexpr const char* kEndToken = "<END>";
constexpr const char* kPadToken = "<pad>";
constexpr const char* kUnkToken = "<unk>";
constexpr const char* kDotToken = ".";

// Reads `[class<TAB>]precursor1.precursor2...>>product` lines.
std::vector<ReactionRecord> load_reactions(const std::string& path, bool with_class);
std::vector<ReactionRecord> parse_reactions(const std::string& text, bool with_class);

// Canonical precursor order for target strings: longest first, then
// lexicographically ascending.
std::vector<std::string> canonical_precursor_order(std::vector<std::string> precursors);
std::string canonical_target_string(const ReactionRecord& record);

// Number of decoder payload tokens for a record (token count of every
// precursor plus the separating dots).
int target_token_count(const ReactionRecord& record, const GrammarSpec& g = GrammarSpec::smiles());

struct FilterResult {
  std::vector<ReactionRecord> kept;
  std::vector<std::pair<ReactionRecord, std::string>> dropped;  // (record, reason)
};

// Keeps records whose product parses into at most max_in nodes and whose
// precursors all parse with a joined token string of at most max_out tokens.
FilterResult filter_in_grammar(const std::vector<ReactionRecord>& records, int max_in = 350,
                               int max_out = 121, const GrammarSpec& g = GrammarSpec::smiles());

struct SplitResult {
  std::vector<ReactionRecord> train, valid, test;
};

// Deterministic shuffle by seed, then contiguous slicing at cumulative
// rounded boundaries.
SplitResult split(const std::vector<ReactionRecord>& records, double train_frac,
                  double valid_frac, double test_frac, std::uint64_t seed);

// USPTO-50K reaction class names, class_id in 1..10.
const std::string& reaction_class_name(int class_id);

// ---------------------------------------------------------------------------
// Batching

template <class S>
struct EncodedTreeBatch {
  MatXi symbols;  // B x Nmax encoder vocab ids, pad 0
  MatXi parent;   // B x Nmax in-record parent index, -1 for roots and pads
  std::vector<std::vector<std::vector<int>>> children;  // ragged, real nodes only
  std::vector<Mat<S>> tpe;                              // per record Nmax x d_model
  MatXb mask;     // B x Nmax, true at real positions
  MatXi targets;  // B x Tmax decoder ids (<START> ... <END>), pad 0
  std::vector<int> enc_len, dec_len;
  std::vector<int> class_ids;  // -1 when absent

  int size() const { return static_cast<int>(enc_len.size()); }

  // Slices record r by its true lengths. Pad cells are never read, so their
  // contents cannot influence the model.
  TreeInput<S> record(int r) const {
    TreeInput<S> in;
    const int n = enc_len[r];
    in.symbols.assign(symbols.row(r).data(), symbols.row(r).data() + n);
    in.parent.assign(parent.row(r).data(), parent.row(r).data() + n);
    in.children = children[r];
    in.tpe = tpe[r].topRows(n);
    return in;
  }
  std::vector<int> target(int r) const {
    return std::vector<int>(targets.row(r).data(), targets.row(r).data() + dec_len[r]);
  }
};

// Encodes one product (optionally with a reaction-class token prepended as a
// virtual zero-path node) into the encoder representation.
template <class S>
TreeInput<S> encode_product(const std::string& product, std::optional<int> class_id,
                            const Vocab& enc_vocab, const ModelConfig& cfg,
                            const GrammarSpec& g = GrammarSpec::smiles()) {
  GrammarTree tree = parse(product, g);
  if (tree.size() > cfg.max_in)
    throw LengthExceededError("product tree exceeds max input length");
  const EncodingConfig enc_cfg = cfg.encoding();
  if (tree.height() > enc_cfg.L) throw DepthExceededError(tree.height(), enc_cfg.L);

  std::vector<int> order = preorder_nodes(tree);
  std::vector<int> pos(tree.size(), -1);
  for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = static_cast<int>(k);

  const int offset = class_id ? 1 : 0;
  const int n = tree.size() + offset;
  TreeInput<S> in;
  in.symbols.resize(n);
  in.parent.assign(n, -1);
  in.children.resize(n);
  Mat<S> tpe = encode_tree<S>(tree, enc_cfg);
  in.tpe.resize(n, enc_cfg.d_model());
  if (class_id) {
    in.symbols[0] = enc_vocab.id_of(rx_token(*class_id));
    // Virtual root-sibling token: zero path, no parent, no children.
    GrammarTree single;
    single.nodes.push_back(TreeNode{});
    in.tpe.row(0) = tree_positional_encoding<S>(single, 0, enc_cfg);
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    const TreeNode& node = tree.nodes[order[k]];
    // Nonterminal symbol name for interior nodes, terminal character for leaves.
    in.symbols[k + offset] = enc_vocab.id_of(g.name(node.symbol));
    if (node.parent != -1) in.parent[k + offset] = pos[node.parent] + offset;
    for (int c : node.children) in.children[k + offset].push_back(pos[c] + offset);
    in.tpe.row(k + offset) = tpe.row(k);
  }
  return in;
}

// Decoder token ids for a record: <START> + canonical precursor string + <END>.
std::vector<int> target_ids(const ReactionRecord& record, const Vocab& dec_vocab,
                            const GrammarSpec& g = GrammarSpec::smiles());

template <class S>
EncodedTreeBatch<S> make_batch(const std::vector<ReactionRecord>& records, const Vocab& enc_vocab,
                               const Vocab& dec_vocab, const ModelConfig& cfg, bool with_class,
                               const GrammarSpec& g = GrammarSpec::smiles()) {
  if (records.empty()) throw EmptyBatchError();
  const int b = static_cast<int>(records.size());
  std::vector<TreeInput<S>> inputs;
  std::vector<std::vector<int>> tgts;
  int nmax = 0, tmax = 0;
  for (const ReactionRecord& r : records) {
    if (with_class && !r.class_id) throw MissingClassError();
    inputs.push_back(encode_product<S>(r.product, with_class ? r.class_id : std::nullopt,
                                       enc_vocab, cfg, g));
    tgts.push_back(target_ids(r, dec_vocab, g));
    if (static_cast<int>(tgts.back().size()) > cfg.max_out + 2)
      throw LengthExceededError("target exceeds max output length");
    nmax = std::max(nmax, inputs.back().size());
    tmax = std::max(tmax, static_cast<int>(tgts.back().size()));
  }

  EncodedTreeBatch<S> batch;
  batch.symbols = MatXi::Zero(b, nmax);
  batch.parent = MatXi::Constant(b, nmax, -1);
  batch.mask = MatXb::Constant(b, nmax, false);
  batch.targets = MatXi::Zero(b, tmax);
  batch.children.resize(b);
  batch.tpe.resize(b);
  for (int r = 0; r < b; ++r) {
    const TreeInput<S>& in = inputs[r];
    const int n = in.size();
    for (int i = 0; i < n; ++i) {
      batch.symbols(r, i) = in.symbols[i];
      batch.parent(r, i) = in.parent[i];
      batch.mask(r, i) = true;
    }
    batch.children[r] = in.children;
    batch.tpe[r] = Mat<S>::Zero(nmax, in.tpe.cols());
    batch.tpe[r].topRows(n) = in.tpe;
    for (std::size_t i = 0; i < tgts[r].size(); ++i) batch.targets(r, i) = tgts[r][i];
    batch.enc_len.push_back(n);
    batch.dec_len.push_back(static_cast<int>(tgts[r].size()));
    batch.class_ids.push_back(records[r].class_id.value_or(-1));
  }
  return batch;
}

template <class S>
std::vector<EncodedTreeBatch<S>> make_batches(const std::vector<ReactionRecord>& records,
                                              const Vocab& enc_vocab, const Vocab& dec_vocab,
                                              const ModelConfig& cfg, bool with_class,
                                              int batch_size,
                                              const GrammarSpec& g = GrammarSpec::smiles()) {
  std::vector<EncodedTreeBatch<S>> batches;
  for (std::size_t at = 0; at < records.size(); at += batch_size) {
    std::vector<ReactionRecord> chunk(
        records.begin() + at,
        records.begin() + std::min(records.size(), at + static_cast<std::size_t>(batch_size)));
    batches.push_back(make_batch<S>(chunk, enc_vocab, dec_vocab, cfg, with_class, g));
  }
  return batches;
}

}  // namespace gmatt
