#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gmatt/errors.hpp"
#include "gmatt/rng.hpp"
#include "gmatt/types.hpp"

namespace gmatt {

// Additive pre-softmax mask value for blocked positions. exp underflows to
// exactly 0 for arguments this small, so masked positions carry zero weight
// bit-exactly in both float and double.
inline constexpr double kMaskedScore = -1e9;

template <class S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

// A learnable tensor: value plus accumulated gradient.
template <class S>
struct Tensor {
  Mat<S> value;
  Mat<S> grad;
  bool requires_grad = true;

  void zero_grad() { grad = Mat<S>::Zero(value.rows(), value.cols()); }
};

template <class S>
void xavier_uniform(Tensor<S>& t, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  t.value.resize(rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      t.value(i, j) = static_cast<S>(rng.uniform(-limit, limit));
  t.zero_grad();
}

// Reverse-mode autodiff over row-major Eigen matrices. Nodes are created in
// topological order; backward() sweeps them once in reverse. Parameter leaves
// are bound to external Tensors and accumulate into their .grad, so several
// graphs (one per record) can contribute to one batch update.
template <class S>
class Graph {
 public:
  Graph() = default;
  // grad_enabled=false builds a forward-only graph (no backprop closures);
  // used by decoding where many forwards are run per emitted token.
  explicit Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}

  int constant(Mat<S> v) { return make(std::move(v), false, {}); }

  int input(Mat<S> v, bool requires_grad = false) {
    return make(std::move(v), requires_grad, {});
  }

  int param(Tensor<S>& t) {
    int id = make(t.value, t.requires_grad, {});
    if (t.requires_grad) {
      Tensor<S>* bound = &t;
      nodes_[id].backprop = [bound](Graph& g, int self) {
        if (bound->grad.size() == 0)
          bound->grad = Mat<S>::Zero(bound->value.rows(), bound->value.cols());
        bound->grad += g.nodes_[self].grad;
      };
    }
    return id;
  }

  int matmul(int a, int b) {
    check_cols_rows(a, b);
    int id = make(nodes_[a].value * nodes_[b].value, needs(a, b), {a, b});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a, b](Graph& g, int self) {
        const Mat<S>& go = g.nodes_[self].grad;
        if (g.nodes_[a].requires_grad) g.accum(a, go * g.nodes_[b].value.transpose());
        if (g.nodes_[b].requires_grad) g.accum(b, g.nodes_[a].value.transpose() * go);
      };
    return id;
  }

  // A * B^T
  int matmul_nt(int a, int b) {
    if (nodes_[a].value.cols() != nodes_[b].value.cols())
      throw ShapeMismatchError("matmul_nt: inner dimensions disagree");
    int id = make(nodes_[a].value * nodes_[b].value.transpose(), needs(a, b), {a, b});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a, b](Graph& g, int self) {
        const Mat<S>& go = g.nodes_[self].grad;
        if (g.nodes_[a].requires_grad) g.accum(a, go * g.nodes_[b].value);
        if (g.nodes_[b].requires_grad) g.accum(b, go.transpose() * g.nodes_[a].value);
      };
    return id;
  }

  int add(int a, int b) {
    check_same_shape(a, b);
    int id = make(nodes_[a].value + nodes_[b].value, needs(a, b), {a, b});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a, b](Graph& g, int self) {
        if (g.nodes_[a].requires_grad) g.accum(a, g.nodes_[self].grad);
        if (g.nodes_[b].requires_grad) g.accum(b, g.nodes_[self].grad);
      };
    return id;
  }

  // x + row-broadcast bias (bias is 1 x cols).
  int add_rowwise(int a, int bias) {
    if (nodes_[bias].value.rows() != 1 || nodes_[bias].value.cols() != nodes_[a].value.cols())
      throw ShapeMismatchError("add_rowwise: bias must be 1 x cols");
    Mat<S> v = nodes_[a].value;
    v.rowwise() += nodes_[bias].value.row(0);
    int id = make(std::move(v), needs(a, bias), {a, bias});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a, bias](Graph& g, int self) {
        if (g.nodes_[a].requires_grad) g.accum(a, g.nodes_[self].grad);
        if (g.nodes_[bias].requires_grad)
          g.accum(bias, g.nodes_[self].grad.colwise().sum());
      };
    return id;
  }

  int add_const(int a, const Mat<S>& c) {
    check_shape(a, c.rows(), c.cols());
    int id = make(nodes_[a].value + c, nodes_[a].requires_grad, {a});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a](Graph& g, int self) { g.accum(a, g.nodes_[self].grad); };
    return id;
  }

  int scale(int a, S s) {
    int id = make(nodes_[a].value * s, nodes_[a].requires_grad, {a});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a, s](Graph& g, int self) {
        g.accum(a, g.nodes_[self].grad * s);
      };
    return id;
  }

  int relu(int a) {
    int id = make(nodes_[a].value.cwiseMax(S(0)), nodes_[a].requires_grad, {a});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a](Graph& g, int self) {
        Mat<S> gate =
            (g.nodes_[a].value.array() > S(0)).template cast<S>().matrix();
        g.accum(a, g.nodes_[self].grad.cwiseProduct(gate));
      };
    return id;
  }

  // Row-wise softmax with max-subtraction. Masking is additive and applied by
  // the caller before this op.
  int softmax_rows(int a) {
    const Mat<S>& x = nodes_[a].value;
    Mat<S> p(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      S m = x.row(r).maxCoeff();
      RowVec<S> e = (x.row(r).array() - m).exp();
      p.row(r) = e / e.sum();
    }
    int id = make(std::move(p), nodes_[a].requires_grad, {a});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a](Graph& g, int self) {
        const Mat<S>& p = g.nodes_[self].value;
        const Mat<S>& go = g.nodes_[self].grad;
        Mat<S> gx(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          S dot = go.row(r).cwiseProduct(p.row(r)).sum();
          gx.row(r) = p.row(r).array() * (go.row(r).array() - dot);
        }
        g.accum(a, gx);
      };
    return id;
  }

  // Per-row layer normalization with learned affine parameters (1 x cols).
  int layer_norm_rows(int x, int gamma, int beta, S eps = S(1e-5)) {
    const Mat<S>& v = nodes_[x].value;
    if (v.cols() < 2) throw ShapeMismatchError("layer_norm: need at least 2 features");
    check_shape(gamma, 1, v.cols());
    check_shape(beta, 1, v.cols());
    Mat<S> xhat(v.rows(), v.cols());
    ColVec<S> inv_std(v.rows());
    const S n = static_cast<S>(v.cols());
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      S mu = v.row(r).mean();
      RowVec<S> centered = v.row(r).array() - mu;
      S var = centered.squaredNorm() / n;
      inv_std(r) = S(1) / std::sqrt(var + eps);
      xhat.row(r) = centered * inv_std(r);
    }
    Mat<S> y = xhat;
    y.array().rowwise() *= nodes_[gamma].value.row(0).array();
    y.rowwise() += nodes_[beta].value.row(0);
    int id = make(std::move(y), needs(x, gamma) || nodes_[beta].requires_grad,
                  {x, gamma, beta});
    if (nodes_[id].requires_grad) {
      auto xh = std::make_shared<Mat<S>>(std::move(xhat));
      auto istd = std::make_shared<ColVec<S>>(std::move(inv_std));
      nodes_[id].backprop = [x, gamma, beta, xh, istd, n](Graph& g, int self) {
        const Mat<S>& go = g.nodes_[self].grad;
        if (g.nodes_[beta].requires_grad) g.accum(beta, go.colwise().sum());
        if (g.nodes_[gamma].requires_grad)
          g.accum(gamma, go.cwiseProduct(*xh).colwise().sum());
        if (g.nodes_[x].requires_grad) {
          Mat<S> dxhat = go;
          dxhat.array().rowwise() *= g.nodes_[gamma].value.row(0).array();
          Mat<S> gx(go.rows(), go.cols());
          for (Eigen::Index r = 0; r < go.rows(); ++r) {
            S mean_d = dxhat.row(r).mean();
            S mean_dx = dxhat.row(r).cwiseProduct(xh->row(r)).sum() / n;
            gx.row(r) =
                ((dxhat.row(r).array() - mean_d) - xh->row(r).array() * mean_dx) * (*istd)(r);
          }
          g.accum(x, gx);
        }
      };
    }
    return id;
  }

  // Inverted dropout: training keeps each element with probability 1-p and
  // scales survivors by 1/(1-p); inference is the identity.
  int dropout(int a, double p, bool training, Rng& rng) {
    if (p < 0 || p >= 1) throw ShapeMismatchError("dropout: need 0 <= p < 1");
    if (!training || p == 0) return a;
    const Mat<S>& x = nodes_[a].value;
    auto mask = std::make_shared<Mat<S>>(x.rows(), x.cols());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        (*mask)(i, j) = rng.uniform() < p ? S(0) : keep_scale;
    int id = make(x.cwiseProduct(*mask), nodes_[a].requires_grad, {a});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a, mask](Graph& g, int self) {
        g.accum(a, g.nodes_[self].grad.cwiseProduct(*mask));
      };
    return id;
  }

  // Row gather: out.row(i) = table.row(ids[i]).
  int embedding(int table, std::vector<int> ids) {
    const Mat<S>& t = nodes_[table].value;
    Mat<S> v(static_cast<Eigen::Index>(ids.size()), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= t.rows()) throw IndexOutOfRangeError("embedding: id out of range");
      v.row(i) = t.row(ids[i]);
    }
    int id = make(std::move(v), nodes_[table].requires_grad, {table});
    if (nodes_[id].requires_grad) {
      auto idx = std::make_shared<std::vector<int>>(std::move(ids));
      nodes_[id].backprop = [table, idx](Graph& g, int self) {
        Mat<S> gt = Mat<S>::Zero(g.nodes_[table].value.rows(), g.nodes_[table].value.cols());
        for (std::size_t i = 0; i < idx->size(); ++i)
          gt.row((*idx)[i]) += g.nodes_[self].grad.row(i);
        g.accum(table, gt);
      };
    }
    return id;
  }

  int concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw ShapeMismatchError("concat_cols: no parts");
    Eigen::Index rows = nodes_[parts[0]].value.rows(), cols = 0;
    bool rg = false;
    for (int p : parts) {
      if (nodes_[p].value.rows() != rows) throw ShapeMismatchError("concat_cols: row mismatch");
      cols += nodes_[p].value.cols();
      rg = rg || nodes_[p].requires_grad;
    }
    Mat<S> v(rows, cols);
    Eigen::Index at = 0;
    for (int p : parts) {
      v.middleCols(at, nodes_[p].value.cols()) = nodes_[p].value;
      at += nodes_[p].value.cols();
    }
    int id = make(std::move(v), rg, parts);
    if (nodes_[id].requires_grad) {
      auto ps = std::make_shared<std::vector<int>>(parts);
      nodes_[id].backprop = [ps](Graph& g, int self) {
        Eigen::Index at = 0;
        for (int p : *ps) {
          Eigen::Index w = g.nodes_[p].value.cols();
          if (g.nodes_[p].requires_grad) g.accum(p, g.nodes_[self].grad.middleCols(at, w));
          at += w;
        }
      };
    }
    return id;
  }

  int slice_cols(int a, Eigen::Index start, Eigen::Index len) {
    if (start < 0 || start + len > nodes_[a].value.cols())
      throw ShapeMismatchError("slice_cols: out of range");
    int id = make(nodes_[a].value.middleCols(start, len), nodes_[a].requires_grad, {a});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a, start, len](Graph& g, int self) {
        Mat<S> gx = Mat<S>::Zero(g.nodes_[a].value.rows(), g.nodes_[a].value.cols());
        gx.middleCols(start, len) = g.nodes_[self].grad;
        g.accum(a, gx);
      };
    return id;
  }

  int slice_rows(int a, Eigen::Index start, Eigen::Index len) {
    if (start < 0 || start + len > nodes_[a].value.rows())
      throw ShapeMismatchError("slice_rows: out of range");
    int id = make(nodes_[a].value.middleRows(start, len), nodes_[a].requires_grad, {a});
    if (nodes_[id].requires_grad)
      nodes_[id].backprop = [a, start, len](Graph& g, int self) {
        Mat<S> gx = Mat<S>::Zero(g.nodes_[a].value.rows(), g.nodes_[a].value.cols());
        gx.middleRows(start, len) = g.nodes_[self].grad;
        g.accum(a, gx);
      };
    return id;
  }

  // Sparse categorical cross-entropy: mean over non-pad rows of
  // -log softmax(logits)[row, target]. Returns a 1x1 node.
  int cross_entropy(int logits, std::vector<int> targets, int pad_id) {
    const Mat<S>& x = nodes_[logits].value;
    if (static_cast<Eigen::Index>(targets.size()) != x.rows())
      throw ShapeMismatchError("cross_entropy: one target per row required");
    auto probs = std::make_shared<Mat<S>>(Mat<S>::Zero(x.rows(), x.cols()));
    int live = 0;
    double loss = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (targets[r] == pad_id) continue;
      if (targets[r] < 0 || targets[r] >= x.cols())
        throw IndexOutOfRangeError("cross_entropy: target out of vocabulary");
      S m = x.row(r).maxCoeff();
      RowVec<S> e = (x.row(r).array() - m).exp();
      S z = e.sum();
      probs->row(r) = e / z;
      loss -= static_cast<double>(x(r, targets[r]) - m - std::log(static_cast<double>(z)));
      ++live;
    }
    if (live == 0) throw EmptyBatchError();
    Mat<S> v(1, 1);
    v(0, 0) = static_cast<S>(loss / live);
    int id = make(std::move(v), nodes_[logits].requires_grad, {logits});
    if (nodes_[id].requires_grad) {
      auto tg = std::make_shared<std::vector<int>>(std::move(targets));
      nodes_[id].backprop = [logits, tg, probs, pad_id, live](Graph& g, int self) {
        S go = g.nodes_[self].grad(0, 0);
        Mat<S> gx = Mat<S>::Zero(probs->rows(), probs->cols());
        const S inv = S(1) / static_cast<S>(live);
        for (Eigen::Index r = 0; r < gx.rows(); ++r) {
          if ((*tg)[r] == pad_id) continue;
          gx.row(r) = probs->row(r) * inv * go;
          gx(r, (*tg)[r]) -= inv * go;
        }
        g.accum(logits, gx);
      };
    }
    return id;
  }

  void backward(int loss, S seed = S(1)) {
    if (nodes_[loss].value.size() != 1)
      throw ShapeMismatchError("backward: loss must be a scalar");
    ensure_grad(loss);
    nodes_[loss].grad(0, 0) += seed;
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backprop) continue;
      n.backprop(*this, id);
    }
  }

  const Mat<S>& value(int id) const { return nodes_[id].value; }
  // Gradient of an input node (zero-sized until backward reaches it).
  const Mat<S>& grad(int id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool requires_grad = false;
    std::function<void(Graph&, int)> backprop;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;

  int make(Mat<S> v, bool rg, std::vector<int> /*parents*/) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = rg && grad_enabled_;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool needs(int a, int b) const { return nodes_[a].requires_grad || nodes_[b].requires_grad; }

  void ensure_grad(int id) {
    if (nodes_[id].grad.size() == 0)
      nodes_[id].grad = Mat<S>::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
  }

  template <class Expr>
  void accum(int id, const Expr& g) {
    ensure_grad(id);
    nodes_[id].grad += g;
  }

  void check_cols_rows(int a, int b) const {
    if (nodes_[a].value.cols() != nodes_[b].value.rows())
      throw ShapeMismatchError("matmul: inner dimensions disagree");
  }
  void check_same_shape(int a, int b) const {
    if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
        nodes_[a].value.cols() != nodes_[b].value.cols())
      throw ShapeMismatchError("add: shape mismatch");
  }
  void check_shape(int a, Eigen::Index r, Eigen::Index c) const {
    if (nodes_[a].value.rows() != r || nodes_[a].value.cols() != c)
      throw ShapeMismatchError("unexpected operand shape");
  }
};

// Scaled dot-product attention as a graph composite:
// softmax(Q K^T / sqrt(d_k) + mask) V. `mask_add` is an additive matrix
// (0 = attend, kMaskedScore = blocked) or empty for no masking.
// Returns {output node, attention probability node}.
template <class S>
std::pair<int, int> scaled_dot_attention(Graph<S>& g, int q, int k, int v,
                                         const Mat<S>& mask_add) {
  const Eigen::Index dk = g.value(q).cols();
  if (g.value(k).cols() != dk) throw ShapeMismatchError("attention: d_k mismatch");
  if (g.value(k).rows() != g.value(v).rows())
    throw ShapeMismatchError("attention: K/V row mismatch");
  int scores = g.scale(g.matmul_nt(q, k), static_cast<S>(1.0 / std::sqrt(double(dk))));
  if (mask_add.size() != 0) scores = g.add_const(scores, mask_add);
  int probs = g.softmax_rows(scores);
  return {g.matmul(probs, v), probs};
}

// Plain-matrix convenience used by tests and inference helpers.
template <class S>
Mat<S> scaled_dot_attention_eval(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v,
                                 const MatXb& mask = {}) {
  Graph<S> g;
  Mat<S> add;
  if (mask.size() != 0) {
    add = Mat<S>::Zero(mask.rows(), mask.cols());
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        if (!mask(i, j)) add(i, j) = static_cast<S>(kMaskedScore);
  }
  auto [out, probs] = scaled_dot_attention(g, g.constant(q), g.constant(k), g.constant(v), add);
  (void)probs;
  return g.value(out);
}

// Numerically stable log-softmax of one row, in double for decoding scores.
template <class S>
std::vector<double> log_softmax_row(const RowVec<S>& row) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < row.size(); ++i) m = std::max(m, static_cast<double>(row(i)));
  double z = 0;
  for (Eigen::Index i = 0; i < row.size(); ++i) z += std::exp(static_cast<double>(row(i)) - m);
  double lz = std::log(z);
  std::vector<double> out(row.size());
  for (Eigen::Index i = 0; i < row.size(); ++i)
    out[i] = static_cast<double>(row(i)) - m - lz;
  return out;
}

}  // namespace gmatt
