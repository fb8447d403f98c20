#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmatt/nn.hpp"
#include "gmatt/tree_encoding.hpp"

namespace gmatt {

struct ModelConfig {
  int d_model = 256;
  int heads = 8;
  int d_k = 0;  // 0 -> d_model / heads
  int d_v = 0;  // 0 -> d_k
  int encoder_layers = 4;
  int decoder_layers = 4;
  int tcb_depth = 2;  // layers per tree convolution block stack
  int d_ff = 0;       // decoder feed-forward width, 0 -> d_model
  double dropout = 0.2;
  int max_in = 350;
  int max_out = 121;
  int encoder_vocab = 0;
  int decoder_vocab = 0;
  int tpe_d = 4;  // edge-encoding width; path length L = d_model / tpe_d

  int dk() const { return d_k > 0 ? d_k : d_model / heads; }
  int dv() const { return d_v > 0 ? d_v : dk(); }
  int dff() const { return d_ff > 0 ? d_ff : d_model; }
  EncodingConfig encoding() const { return EncodingConfig{d_model / tpe_d, tpe_d}; }

  void validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
      throw ShapeMismatchError("config: d_model must be a positive multiple of heads");
    if (tpe_d <= 0 || tpe_d % 2 != 0 || d_model % tpe_d != 0)
      throw ShapeMismatchError("config: tpe_d must be even and divide d_model");
    if (encoder_layers < 1 || decoder_layers < 1 || tcb_depth < 1)
      throw ShapeMismatchError("config: layer counts must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ShapeMismatchError("config: dropout must be in [0,1)");
    if (encoder_vocab <= 0 || decoder_vocab <= 0)
      throw ShapeMismatchError("config: vocabulary sizes not set");
  }
};

// All learned tensors keyed by a stable name (sorted map: checkpointing and
// update loops iterate in one deterministic order).
template <class S>
struct ModelParams {
  std::map<std::string, Tensor<S>> tensors;

  Tensor<S>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw RuntimeError("missing parameter: " + name);
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw RuntimeError("missing parameter: " + name);
    return it->second;
  }
  void zero_grad() {
    for (auto& [name, t] : tensors) t.zero_grad();
  }
  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.value.size();
    return n;
  }
};

// Dropout context threaded through forward passes.
template <class S>
struct DropoutCtx {
  bool training = false;
  double p = 0.0;
  Rng* rng = nullptr;

  int apply(Graph<S>& g, int x) const {
    if (!training || p == 0) return x;
    return g.dropout(x, p, true, *rng);
  }
};

// One encoder-side record: grammar-tree nodes in pre-order plus the
// parent/children wiring and precomputed tree positional encodings.
template <class S>
struct TreeInput {
  std::vector<int> symbols;                // encoder vocab ids, length N
  std::vector<int> parent;                 // index into this record, -1 = no parent
  std::vector<std::vector<int>> children;  // indices into this record
  Mat<S> tpe;                              // N x d_model

  int size() const { return static_cast<int>(symbols.size()); }
};

namespace detail {

template <class S>
void init_tensor(ModelParams<S>& p, const std::string& name, Eigen::Index r, Eigen::Index c,
                 Rng& rng, bool zero = false, bool one = false) {
  Tensor<S> t;
  if (zero) {
    t.value = Mat<S>::Zero(r, c);
    t.zero_grad();
  } else if (one) {
    t.value = Mat<S>::Ones(r, c);
    t.zero_grad();
  } else {
    xavier_uniform(t, r, c, rng);
  }
  p.tensors.emplace(name, std::move(t));
}

template <class S>
void init_norm(ModelParams<S>& p, const std::string& prefix, int d, Rng& rng) {
  init_tensor(p, prefix + ".gamma", 1, d, rng, false, true);
  init_tensor(p, prefix + ".beta", 1, d, rng, true);
}

template <class S>
void init_attn(ModelParams<S>& p, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  init_tensor(p, prefix + ".wq", cfg.d_model, cfg.heads * cfg.dk(), rng);
  init_tensor(p, prefix + ".wk", cfg.d_model, cfg.heads * cfg.dk(), rng);
  init_tensor(p, prefix + ".wv", cfg.d_model, cfg.heads * cfg.dv(), rng);
  init_tensor(p, prefix + ".wo", cfg.heads * cfg.dv(), cfg.d_model, rng);
}

template <class S>
void init_tcb(ModelParams<S>& p, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  for (int k = 0; k < cfg.tcb_depth; ++k) {
    std::string base = prefix + "." + std::to_string(k);
    init_tensor(p, base + ".wt", cfg.d_model, cfg.d_model, rng);
    init_tensor(p, base + ".wp", cfg.d_model, cfg.d_model, rng);
    init_tensor(p, base + ".wc", cfg.d_model, cfg.d_model, rng);
    init_tensor(p, base + ".w2", cfg.d_model, cfg.d_model, rng);
    init_tensor(p, base + ".b2", 1, cfg.d_model, rng, true);
    init_tensor(p, base + ".vp", 1, cfg.d_model, rng);
    init_tensor(p, base + ".vc", 1, cfg.d_model, rng);
  }
}

}  // namespace detail

template <class S>
ModelParams<S> init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams<S> p;
  using detail::init_attn;
  using detail::init_norm;
  using detail::init_tcb;
  using detail::init_tensor;

  init_tensor(p, "enc.embed", cfg.encoder_vocab, cfg.d_model, rng);
  init_tcb(p, "enc.tcb_in", cfg, rng);
  init_norm(p, "enc.tcb_in.norm", cfg.d_model, rng);
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    std::string base = "enc.L" + std::to_string(l);
    init_attn(p, base + ".attn", cfg, rng);
    init_norm(p, base + ".norm1", cfg.d_model, rng);
    init_tcb(p, base + ".tcb", cfg, rng);
    init_norm(p, base + ".norm2", cfg.d_model, rng);
  }
  init_tensor(p, "dec.embed", cfg.decoder_vocab, cfg.d_model, rng);
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string base = "dec.L" + std::to_string(l);
    init_attn(p, base + ".self", cfg, rng);
    init_norm(p, base + ".norm1", cfg.d_model, rng);
    init_attn(p, base + ".cross", cfg, rng);
    init_norm(p, base + ".norm2", cfg.d_model, rng);
    init_tensor(p, base + ".ffn.w1", cfg.d_model, cfg.dff(), rng);
    init_tensor(p, base + ".ffn.b1", 1, cfg.dff(), rng, true);
    init_tensor(p, base + ".ffn.w2", cfg.dff(), cfg.d_model, rng);
    init_tensor(p, base + ".ffn.b2", 1, cfg.d_model, rng, true);
    init_norm(p, base + ".norm3", cfg.d_model, rng);
  }
  init_tensor(p, "out.w", cfg.d_model, cfg.decoder_vocab, rng);
  init_tensor(p, "out.b", 1, cfg.decoder_vocab, rng, true);
  return p;
}

// Multi-head attention: returns the d_model output node and the per-head
// attention probability nodes (each rows x keys, rows softmax-normalized).
template <class S>
std::pair<int, std::vector<int>> multi_head_attention(Graph<S>& g, int q_in, int k_in, int v_in,
                                                      const Mat<S>& mask_add,
                                                      ModelParams<S>& params,
                                                      const std::string& prefix,
                                                      const ModelConfig& cfg) {
  int q = g.matmul(q_in, g.param(params.at(prefix + ".wq")));
  int k = g.matmul(k_in, g.param(params.at(prefix + ".wk")));
  int v = g.matmul(v_in, g.param(params.at(prefix + ".wv")));
  std::vector<int> heads, probs;
  for (int h = 0; h < cfg.heads; ++h) {
    int qh = g.slice_cols(q, h * cfg.dk(), cfg.dk());
    int kh = g.slice_cols(k, h * cfg.dk(), cfg.dk());
    int vh = g.slice_cols(v, h * cfg.dv(), cfg.dv());
    auto [out, p] = scaled_dot_attention(g, qh, kh, vh, mask_add);
    heads.push_back(out);
    probs.push_back(p);
  }
  int cat = g.concat_cols(heads);
  return {g.matmul(cat, g.param(params.at(prefix + ".wo"))), probs};
}

// Tree wiring for the convolution block, precomputed per record: selection
// matrix P picks each node's parent row, C averages each node's children,
// and the indicator columns mark where the learned v_p / v_c stand in.
template <class S>
struct TreeStructure {
  Mat<S> parent_select;   // N x N
  Mat<S> child_average;   // N x N
  Mat<S> root_indicator;  // N x 1
  Mat<S> leaf_indicator;  // N x 1

  static TreeStructure build(const std::vector<int>& parent,
                             const std::vector<std::vector<int>>& children) {
    const int n = static_cast<int>(parent.size());
    TreeStructure st;
    st.parent_select = Mat<S>::Zero(n, n);
    st.child_average = Mat<S>::Zero(n, n);
    st.root_indicator = Mat<S>::Zero(n, 1);
    st.leaf_indicator = Mat<S>::Zero(n, 1);
    for (int i = 0; i < n; ++i) {
      if (parent[i] >= 0) {
        if (parent[i] >= n) throw IndexOutOfRangeError("tree structure: parent out of range");
        st.parent_select(i, parent[i]) = S(1);
      } else {
        st.root_indicator(i, 0) = S(1);
      }
      if (children[i].empty()) {
        st.leaf_indicator(i, 0) = S(1);
      } else {
        const S w = S(1) / static_cast<S>(children[i].size());
        for (int c : children[i]) {
          if (c < 0 || c >= n) throw IndexOutOfRangeError("tree structure: child out of range");
          st.child_average(i, c) = w;
        }
      }
    }
    return st;
  }
};

// Single tree convolution layer: ReLU(x W_t + x_p W_p + x_c W_c) W_2 + b_2,
// with v_p / v_c standing in for a missing parent / missing children.
template <class S>
int tcb_single(Graph<S>& g, int x, const TreeStructure<S>& st, ModelParams<S>& params,
               const std::string& prefix) {
  int xp = g.matmul(g.constant(st.parent_select), x);
  xp = g.add(xp, g.matmul(g.constant(st.root_indicator), g.param(params.at(prefix + ".vp"))));
  int xc = g.matmul(g.constant(st.child_average), x);
  xc = g.add(xc, g.matmul(g.constant(st.leaf_indicator), g.param(params.at(prefix + ".vc"))));
  int h = g.add(g.matmul(x, g.param(params.at(prefix + ".wt"))),
                g.add(g.matmul(xp, g.param(params.at(prefix + ".wp"))),
                      g.matmul(xc, g.param(params.at(prefix + ".wc")))));
  return g.add_rowwise(g.matmul(g.relu(h), g.param(params.at(prefix + ".w2"))),
                       g.param(params.at(prefix + ".b2")));
}

// L consecutively stacked single-layer tree convolutions; the receptive
// field grows to nodes `depth` edges away.
template <class S>
int tcb(Graph<S>& g, int x, const TreeStructure<S>& st, ModelParams<S>& params,
        const std::string& prefix, int depth) {
  for (int k = 0; k < depth; ++k) x = tcb_single(g, x, st, params, prefix + "." + std::to_string(k));
  return x;
}

namespace detail {

template <class S>
int post_norm(Graph<S>& g, int x, int sub, ModelParams<S>& params, const std::string& norm,
              const DropoutCtx<S>& dc) {
  return g.layer_norm_rows(g.add(x, dc.apply(g, sub)), g.param(params.at(norm + ".gamma")),
                           g.param(params.at(norm + ".beta")));
}

}  // namespace detail

// Encoder: symbol embedding + tree positional encoding, a tree convolution
// stack before the layer stack, then per layer self-attention and tree
// convolution sublayers with post-norm residual connections.
template <class S>
int encoder_forward(Graph<S>& g, const TreeInput<S>& in, ModelParams<S>& params,
                    const ModelConfig& cfg, const DropoutCtx<S>& dc) {
  if (in.size() == 0) throw ShapeMismatchError("encoder: empty input");
  if (in.tpe.rows() != in.size() || in.tpe.cols() != cfg.d_model)
    throw ShapeMismatchError("encoder: TPE shape mismatch");
  TreeStructure<S> st = TreeStructure<S>::build(in.parent, in.children);

  int x = g.embedding(g.param(params.at("enc.embed")), in.symbols);
  x = g.add_const(x, in.tpe);
  x = detail::post_norm(g, x, tcb(g, x, st, params, "enc.tcb_in", cfg.tcb_depth), params,
                        "enc.tcb_in.norm", dc);
  Mat<S> no_mask;
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    std::string base = "enc.L" + std::to_string(l);
    auto [attn, probs] = multi_head_attention(g, x, x, x, no_mask, params, base + ".attn", cfg);
    (void)probs;
    x = detail::post_norm(g, x, attn, params, base + ".norm1", dc);
    x = detail::post_norm(g, x, tcb(g, x, st, params, base + ".tcb", cfg.tcb_depth), params,
                          base + ".norm2", dc);
  }
  return x;
}

// Standard sinusoidal sequence positional encoding used on the decoder side.
template <class S>
Mat<S> sequential_positional_encoding(int length, int d_model) {
  Mat<S> pe(length, d_model);
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < d_model / 2; ++i) {
      double w = std::pow(10000.0, -2.0 * i / d_model);
      pe(pos, 2 * i) = static_cast<S>(std::sin(w * pos));
      pe(pos, 2 * i + 1) = static_cast<S>(std::cos(w * pos));
    }
  return pe;
}

template <class S>
Mat<S> causal_mask_add(int t) {
  Mat<S> m = Mat<S>::Zero(t, t);
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m(i, j) = static_cast<S>(kMaskedScore);
  return m;
}

// Collects decoder cross-attention probability nodes (one per layer & head).
struct CrossAttnCapture {
  std::vector<int> prob_nodes;
};

// Decoder: token embedding + sequential positional encoding, causal
// self-attention, cross-attention into the encoder memory, feed-forward;
// post-norm residual throughout. Returns logits (T x decoder_vocab).
template <class S>
int decoder_forward(Graph<S>& g, int memory, const std::vector<int>& target_prefix,
                    ModelParams<S>& params, const ModelConfig& cfg, const DropoutCtx<S>& dc,
                    CrossAttnCapture* capture = nullptr) {
  const int t = static_cast<int>(target_prefix.size());
  if (t == 0) throw ShapeMismatchError("decoder: empty prefix");

  int x = g.embedding(g.param(params.at("dec.embed")), target_prefix);
  x = g.add_const(x, sequential_positional_encoding<S>(t, cfg.d_model));
  Mat<S> causal = causal_mask_add<S>(t);
  Mat<S> no_mask;
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string base = "dec.L" + std::to_string(l);
    auto [self_attn, sp] = multi_head_attention(g, x, x, x, causal, params, base + ".self", cfg);
    (void)sp;
    x = detail::post_norm(g, x, self_attn, params, base + ".norm1", dc);
    auto [cross, probs] =
        multi_head_attention(g, x, memory, memory, no_mask, params, base + ".cross", cfg);
    if (capture)
      capture->prob_nodes.insert(capture->prob_nodes.end(), probs.begin(), probs.end());
    x = detail::post_norm(g, x, cross, params, base + ".norm2", dc);
    int ffn = g.add_rowwise(
        g.matmul(g.relu(g.add_rowwise(g.matmul(x, g.param(params.at(base + ".ffn.w1"))),
                                      g.param(params.at(base + ".ffn.b1")))),
                 g.param(params.at(base + ".ffn.w2"))),
        g.param(params.at(base + ".ffn.b2")));
    x = detail::post_norm(g, x, ffn, params, base + ".norm3", dc);
  }
  return g.add_rowwise(g.matmul(x, g.param(params.at("out.w"))), g.param(params.at("out.b")));
}

// Average of all decoder cross-attention maps, transposed to
// (input nodes x output tokens); every column sums to 1.
template <class S>
Mat<S> extract_cross_attention(const Graph<S>& g, const CrossAttnCapture& capture) {
  if (capture.prob_nodes.empty()) throw RuntimeError("no cross-attention recorded");
  Mat<S> acc = g.value(capture.prob_nodes[0]);
  for (std::size_t i = 1; i < capture.prob_nodes.size(); ++i)
    acc += g.value(capture.prob_nodes[i]);
  acc /= static_cast<S>(capture.prob_nodes.size());
  return acc.transpose();
}

// Teacher-forced loss of one record. `target` must start with <START> and
// end with <END>; input is target[0..n-1), labels are target[1..n).
template <class S>
struct RecordLoss {
  int logits;
  int loss;
};

template <class S>
RecordLoss<S> teacher_forced_loss(Graph<S>& g, const TreeInput<S>& in,
                                  const std::vector<int>& target, ModelParams<S>& params,
                                  const ModelConfig& cfg, const DropoutCtx<S>& dc, int pad_id) {
  if (target.size() < 2) throw ShapeMismatchError("target needs at least <START> and <END>");
  int memory = encoder_forward(g, in, params, cfg, dc);
  std::vector<int> prefix(target.begin(), target.end() - 1);
  std::vector<int> labels(target.begin() + 1, target.end());
  int logits = decoder_forward(g, memory, prefix, params, cfg, dc);
  int loss = g.cross_entropy(logits, labels, pad_id);
  return {logits, loss};
}

}  // namespace gmatt
