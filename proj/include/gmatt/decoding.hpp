#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gmatt/checkpoint.hpp"
#include "gmatt/dataset.hpp"
#include "gmatt/model.hpp"

namespace gmatt {

struct BeamHypothesis {
  std::vector<int> tokens;  // emitted tokens; <START> is implicit
  double log_likelihood = 0.0;
  bool finished = false;
};

// Log-probabilities over the vocabulary for the next token given the emitted
// prefix (without <START>).
using StepLogProbs = std::function<std::vector<double>(const std::vector<int>&)>;

namespace beam_detail {

inline double rank_score(const BeamHypothesis& h, bool length_normalize) {
  if (!length_normalize || h.tokens.empty()) return h.log_likelihood;
  return h.log_likelihood / static_cast<double>(h.tokens.size());
}

// Descending score; exact ties broken by token-id lexicographic order.
inline bool better(const BeamHypothesis& a, const BeamHypothesis& b, bool length_normalize) {
  double sa = rank_score(a, length_normalize), sb = rank_score(b, length_normalize);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace beam_detail

// Breadth-limited best-first decoding. Each live frontier hypothesis expands
// by its top-B tokens; finished hypotheses stay frozen in the candidate pool;
// the global top-B survive each step. A hypothesis finishes when it emits
// end_id or reaches max_len tokens.
inline std::vector<BeamHypothesis> beam_search(const StepLogProbs& step, int vocab_size,
                                               int end_id, int beam_width, int max_len,
                                               bool length_normalize = false) {
  if (beam_width < 1) throw RuntimeError("beam_search: beam width must be >= 1");
  if (max_len < 1) throw RuntimeError("beam_search: max_len must be >= 1");
  auto cmp = [length_normalize](const BeamHypothesis& a, const BeamHypothesis& b) {
    return beam_detail::better(a, b, length_normalize);
  };

  std::vector<BeamHypothesis> frontier{BeamHypothesis{}};
  while (std::any_of(frontier.begin(), frontier.end(),
                     [](const BeamHypothesis& h) { return !h.finished; })) {
    std::vector<BeamHypothesis> candidates;
    for (const BeamHypothesis& h : frontier) {
      if (h.finished) {
        candidates.push_back(h);
        continue;
      }
      std::vector<double> lp = step(h.tokens);
      if (static_cast<int>(lp.size()) != vocab_size)
        throw ShapeMismatchError("beam_search: step function vocabulary mismatch");
      std::vector<int> ids(lp.size());
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
      const int expand = std::min<int>(beam_width, vocab_size);
      std::partial_sort(ids.begin(), ids.begin() + expand, ids.end(),
                        [&lp](int a, int b) { return lp[a] != lp[b] ? lp[a] > lp[b] : a < b; });
      for (int e = 0; e < expand; ++e) {
        BeamHypothesis child = h;
        child.tokens.push_back(ids[e]);
        child.log_likelihood += lp[ids[e]];
        child.finished =
            ids[e] == end_id || static_cast<int>(child.tokens.size()) >= max_len;
        candidates.push_back(std::move(child));
      }
    }
    std::sort(candidates.begin(), candidates.end(), cmp);
    if (static_cast<int>(candidates.size()) > beam_width) candidates.resize(beam_width);
    frontier = std::move(candidates);
  }
  std::sort(frontier.begin(), frontier.end(), cmp);
  return frontier;
}

struct Prediction {
  int rank = 0;
  std::string text;  // detokenized hypothesis, "." separated precursors
  double log_likelihood = 0.0;
  bool valid = false;
  std::vector<std::string> precursors;
};

// Splits a decoded string on '.' and validates every precursor under the
// grammar. A hypothesis is valid only if every part parses.
inline void validate_prediction(Prediction& p, int max_nodes = 350) {
  p.precursors.clear();
  std::size_t at = 0;
  bool ok = !p.text.empty();
  while (at <= p.text.size() && ok) {
    std::size_t dot = p.text.find('.', at);
    std::string part = p.text.substr(at, dot == std::string::npos ? std::string::npos : dot - at);
    if (part.empty()) {
      ok = false;
      break;
    }
    p.precursors.push_back(part);
    if (!is_in_grammar(part, max_nodes)) ok = false;
    if (dot == std::string::npos) break;
    at = dot + 1;
  }
  p.valid = ok && !p.precursors.empty();
}

// Runs the encoder once and exposes a beam-search step function that decodes
// from the cached memory.
template <class S>
class DecoderSession {
 public:
  DecoderSession(const TreeInput<S>& input, Checkpoint<S>& ckpt)
      : ckpt_(ckpt), dec_vocab_(Vocab::from_symbols(ckpt.meta.decoder_symbols)) {
    Graph<S> g(false);
    memory_ = g.value(encoder_forward(g, input, ckpt_.params, ckpt_.meta.config, no_dropout_));
    start_id_ = dec_vocab_.id_of(kStartToken);
    end_id_ = dec_vocab_.id_of(kEndToken);
  }

  std::vector<double> step(const std::vector<int>& tokens) {
    Graph<S> g(false);
    int logits = run_decoder(g, tokens, nullptr);
    RowVec<S> last = g.value(logits).row(g.value(logits).rows() - 1);
    return log_softmax_row(last);
  }

  // Full decoder pass over a prefix, optionally capturing cross-attention.
  int run_decoder(Graph<S>& g, const std::vector<int>& tokens, CrossAttnCapture* capture) {
    std::vector<int> prefix{start_id_};
    prefix.insert(prefix.end(), tokens.begin(), tokens.end());
    int mem = g.constant(memory_);
    return decoder_forward(g, mem, prefix, ckpt_.params, ckpt_.meta.config, no_dropout_,
                           capture);
  }

  int start_id() const { return start_id_; }
  int end_id() const { return end_id_; }
  const Vocab& dec_vocab() const { return dec_vocab_; }
  const Mat<S>& memory() const { return memory_; }

  std::string detokenize(const std::vector<int>& tokens) const {
    std::string out;
    for (int t : tokens) {
      if (t == end_id_) break;
      out += dec_vocab_.symbol(t);
    }
    return out;
  }

 private:
  Checkpoint<S>& ckpt_;
  Vocab dec_vocab_;
  Mat<S> memory_;
  DropoutCtx<S> no_dropout_;
  int start_id_ = -1, end_id_ = -1;
};

// Parses the input molecule, encodes it (with the class token for models
// trained on known reaction classes), beam-searches, and returns ranked
// precursor-set predictions tagged valid/invalid.
template <class S>
std::vector<Prediction> predict(const std::string& smiles, std::optional<int> class_id,
                                int beam_width, Checkpoint<S>& ckpt,
                                bool length_normalize = false) {
  const CheckpointMeta& meta = ckpt.meta;
  if (meta.with_class && !class_id) throw MissingClassError();
  if (!meta.with_class && class_id)
    throw DataError("model was trained without reaction classes; omit --class");
  if (class_id && (*class_id < 1 || *class_id > 10))
    throw DataError("reaction class must be in 1..10");

  Vocab enc_vocab = Vocab::from_symbols(meta.encoder_symbols);
  TreeInput<S> input = encode_product<S>(
      smiles, meta.with_class ? class_id : std::nullopt, enc_vocab, meta.config);
  DecoderSession<S> session(input, ckpt);

  auto hyps = beam_search([&session](const std::vector<int>& t) { return session.step(t); },
                          session.dec_vocab().size(), session.end_id(), beam_width,
                          meta.config.max_out + 1, length_normalize);

  std::vector<Prediction> out;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    Prediction p;
    p.rank = static_cast<int>(i) + 1;
    p.text = session.detokenize(hyps[i].tokens);
    p.log_likelihood = hyps[i].log_likelihood;
    validate_prediction(p, meta.config.max_in);
    out.push_back(std::move(p));
  }
  return out;
}

struct AttentionMapResult {
  Mat<double> map;                      // input nodes x output tokens, columns sum to 1
  std::vector<std::string> row_labels;  // per input node: production rule or leaf text
  std::vector<std::string> col_labels;  // per output token
  Prediction top1;
};

// Cross-attention map (averaged over decoder layers and heads) for the top-1
// beam prediction of one molecule.
template <class S>
AttentionMapResult attention_map(const std::string& smiles, std::optional<int> class_id,
                                 int beam_width, Checkpoint<S>& ckpt,
                                 const GrammarSpec& g = GrammarSpec::smiles()) {
  const CheckpointMeta& meta = ckpt.meta;
  if (meta.with_class && !class_id) throw MissingClassError();
  Vocab enc_vocab = Vocab::from_symbols(meta.encoder_symbols);
  GrammarTree tree = parse(smiles, g);
  TreeInput<S> input = encode_product<S>(
      smiles, meta.with_class ? class_id : std::nullopt, enc_vocab, meta.config);
  DecoderSession<S> session(input, ckpt);

  auto hyps = beam_search([&session](const std::vector<int>& t) { return session.step(t); },
                          session.dec_vocab().size(), session.end_id(), beam_width,
                          meta.config.max_out + 1, false);
  if (hyps.empty() || hyps[0].tokens.empty()) throw RuntimeError("empty decoding result");
  const std::vector<int>& tokens = hyps[0].tokens;

  // Query position j of the prefix [<START>, t_1 .. t_{n-1}] emits token t_{j+1}.
  std::vector<int> context(tokens.begin(), tokens.end() - 1);
  Graph<S> graph(false);
  CrossAttnCapture capture;
  session.run_decoder(graph, context, &capture);
  Mat<S> m = extract_cross_attention(graph, capture);

  AttentionMapResult res;
  res.map = m.template cast<double>();
  if (meta.with_class) res.row_labels.push_back(rx_token(*class_id));
  for (int n : preorder_nodes(tree)) {
    const TreeNode& node = tree.nodes[n];
    res.row_labels.push_back(node.rule_id >= 0 ? g.rule_label(node.rule_id) : node.text);
  }
  for (int t : tokens) res.col_labels.push_back(session.dec_vocab().symbol(t));
  res.top1.rank = 1;
  res.top1.text = session.detokenize(tokens);
  res.top1.log_likelihood = hyps[0].log_likelihood;
  validate_prediction(res.top1, meta.config.max_in);
  return res;
}

}  // namespace gmatt
