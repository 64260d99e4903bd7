#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace auxtune {

enum class Precision { Single, Double };

inline std::string format_shape(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

template <class S>
struct TensorDataT {
  std::vector<int> shape;
  std::vector<S> values;
  bool requires_grad = false;
  std::vector<S> grad;  // empty until backward touches it; never allocated when requires_grad is false
  int64_t tape_id = -1;
  const void* tape_owner = nullptr;
};

// Value-semantics handle over shared storage. Values are immutable after
// creation except for grad accumulation and explicit parameter updates
// between tape lifetimes (optimizer steps).
template <class S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT from(std::vector<int> shape, std::vector<S> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("tensor: shape " + format_shape(shape) + " does not match buffer of " +
                                  std::to_string(values.size()) + " values");
    auto d = std::make_shared<TensorDataT<S>>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return TensorT(std::move(d));
  }

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    std::vector<S> v(shape_numel(shape), S(0));
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static TensorT full(std::vector<int> shape, S value, bool requires_grad = false) {
    std::vector<S> v(shape_numel(shape), value);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static TensorT scalar(S value) { return from({1}, {value}); }

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int>& shape() const { return d_->shape; }
  int dim(int i) const { return d_->shape[i]; }
  int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }
  const std::vector<S>& values() const { return d_->values; }
  std::vector<S>& mutable_values() { return d_->values; }
  S item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
    return d_->values[0];
  }
  S at(int i) const { return d_->values[i]; }
  S at(int i, int j) const { return d_->values[static_cast<int64_t>(i) * d_->shape[1] + j]; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) {
    d_->requires_grad = on;
    if (!on) d_->grad.clear();
  }
  bool has_grad() const { return !d_->grad.empty(); }
  const std::vector<S>& grad() const { return d_->grad; }
  void clear_grad() { d_->grad.clear(); }
  int64_t tape_id() const { return d_->tape_id; }

  TensorDataT<S>* raw() const { return d_.get(); }
  bool same_storage(const TensorT& other) const { return d_ == other.d_; }

 private:
  explicit TensorT(std::shared_ptr<TensorDataT<S>> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorDataT<S>> d_;

  template <class T>
  friend class TapeT;
};

namespace detail {

// GEMM kernels. The ikj ordering keeps the inner loop stride-1 so the
// compiler vectorizes it without reassociation flags.
template <class S>
void gemm_nn(int n, int k, int m, const S* a, const S* b, S* c) {
  for (int i = 0; i < n; ++i) {
    S* crow = c + static_cast<int64_t>(i) * m;
    for (int j = 0; j < m; ++j) crow[j] = S(0);
    const S* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + static_cast<int64_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n×m] += a[n×k] · b[k×m]
template <class S>
void gemm_nn_acc(int n, int k, int m, const S* a, const S* b, S* c) {
  for (int i = 0; i < n; ++i) {
    S* crow = c + static_cast<int64_t>(i) * m;
    const S* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + static_cast<int64_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n×m] = a[n×k] · b[m×k]^T, via a transposed scratch to stay stride-1
template <class S>
void gemm_nt(int n, int k, int m, const S* a, const S* b, S* c) {
  std::vector<S> bt(static_cast<size_t>(k) * m);
  for (int j = 0; j < m; ++j)
    for (int p = 0; p < k; ++p) bt[static_cast<int64_t>(p) * m + j] = b[static_cast<int64_t>(j) * k + p];
  gemm_nn(n, k, m, a, bt.data(), c);
}

// c[m×k] += a[n×m]^T · b[n×k], outer-product accumulation
template <class S>
void gemm_tn_acc(int n, int m, int k, const S* a, const S* b, S* c) {
  for (int i = 0; i < n; ++i) {
    const S* arow = a + static_cast<int64_t>(i) * m;
    const S* brow = b + static_cast<int64_t>(i) * k;
    for (int r = 0; r < m; ++r) {
      const S av = arow[r];
      S* crow = c + static_cast<int64_t>(r) * k;
      for (int j = 0; j < k; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class S>
S gelu_scalar(S x) {
  return static_cast<S>(0.5 * static_cast<double>(x) *
                        (1.0 + std::erf(static_cast<double>(x) * 0.7071067811865475244)));
}

template <class S>
S gelu_grad_scalar(S x) {
  double xd = static_cast<double>(x);
  double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475244));
  double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014326779;
  return static_cast<S>(cdf + xd * pdf);
}

}  // namespace detail

enum class Op {
  Matmul,       // [n×k]·[k×m]
  MatmulNT,     // [n×k]·[m×k]^T  (tied embedding heads)
  Add,          // elementwise, same shape
  Mul,          // elementwise, same shape
  Scale,        // tensor × scalar constant
  AddRow,       // [n×d] + [d] broadcast over rows
  Gelu,
  Softmax,      // last axis
  LayerNorm,    // [n×d] with gain/bias [d]
  CrossEntropy, // [B×n] + targets -> scalar mean NLL
  GatherRows,   // [N×d] + row indices -> [k×d]
  ConcatRows,   // k× [n_i×d] -> [Σn_i×d]
  Attention,    // fused scaled dot-product attention, optional causal mask
  Sum,          // all elements -> scalar
};

// Reverse-mode tape. Single-threaded; ops record a node only while recording
// is on and at least one input requires grad, so fully frozen subgraphs run
// tape-free.
template <class S>
class TapeT {
 public:
  using Tensor = TensorT<S>;

  explicit TapeT(bool recording = true) : recording_(recording) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  Precision precision() const {
    return sizeof(S) == sizeof(double) ? Precision::Double : Precision::Single;
  }
  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  size_t size() const { return nodes_.size(); }

  Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    if (a.dim(1) != b.dim(0))
      throw std::invalid_argument("matmul: inner dimensions disagree, " + format_shape(a.shape()) + " vs " +
                                  format_shape(b.shape()));
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<S> out(static_cast<size_t>(n) * m);
    detail::gemm_nn(n, k, m, a.values().data(), b.values().data(), out.data());
    return record(Op::Matmul, {a, b}, {n, m}, std::move(out));
  }

  // a · b^T with b stored [m×k]; the tied-embedding output head
  Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt lhs");
    require_rank(b, 2, "matmul_nt rhs");
    if (a.dim(1) != b.dim(1))
      throw std::invalid_argument("matmul_nt: inner dimensions disagree, " + format_shape(a.shape()) + " vs " +
                                  format_shape(b.shape()));
    const int n = a.dim(0), k = a.dim(1), m = b.dim(0);
    std::vector<S> out(static_cast<size_t>(n) * m);
    detail::gemm_nt(n, k, m, a.values().data(), b.values().data(), out.data());
    return record(Op::MatmulNT, {a, b}, {n, m}, std::move(out));
  }

  Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<S> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return record(Op::Add, {a, b}, a.shape(), std::move(out));
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<S> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return record(Op::Mul, {a, b}, a.shape(), std::move(out));
  }

  Tensor scale(const Tensor& a, S c) {
    std::vector<S> out(a.values());
    for (auto& v : out) v *= c;
    Node* node = nullptr;
    Tensor t = record(Op::Scale, {a}, a.shape(), std::move(out), &node);
    if (node) node->sarg = c;
    return t;
  }

  Tensor add_row(const Tensor& a, const Tensor& r) {
    require_rank(a, 2, "add_row lhs");
    require_rank(r, 1, "add_row rhs");
    if (a.dim(1) != r.dim(0))
      throw std::invalid_argument("add_row: " + format_shape(a.shape()) + " vs " + format_shape(r.shape()));
    const int n = a.dim(0), d = a.dim(1);
    std::vector<S> out(a.values());
    const auto& rv = r.values();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] += rv[j];
    return record(Op::AddRow, {a, r}, a.shape(), std::move(out));
  }

  Tensor gelu(const Tensor& a) {
    std::vector<S> out(a.values());
    for (auto& v : out) v = detail::gelu_scalar(v);
    return record(Op::Gelu, {a}, a.shape(), std::move(out));
  }

  // softmax over the last axis, max-subtracted
  Tensor softmax(const Tensor& a) {
    const auto& shape = a.shape();
    if (shape.empty()) throw std::invalid_argument("softmax: rank-0 tensor");
    const int n = shape.back();
    const int64_t rows = a.numel() / n;
    for (S v : a.values())
      if (!std::isfinite(static_cast<double>(v))) throw std::invalid_argument("softmax: non-finite input");
    std::vector<S> out(a.values().size());
    const S* x = a.values().data();
    for (int64_t r = 0; r < rows; ++r) {
      const S* row = x + r * n;
      S* orow = out.data() + r * n;
      S mx = row[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      S sum = S(0);
      for (int j = 0; j < n; ++j) {
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
      const S inv = S(1) / sum;
      for (int j = 0; j < n; ++j) orow[j] *= inv;
    }
    return record(Op::Softmax, {a}, shape, std::move(out));
  }

  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, S eps) {
    require_rank(x, 2, "layer_norm input");
    require_rank(gain, 1, "layer_norm gain");
    require_rank(bias, 1, "layer_norm bias");
    const int n = x.dim(0), d = x.dim(1);
    if (gain.dim(0) != d || bias.dim(0) != d)
      throw std::invalid_argument("layer_norm: input " + format_shape(x.shape()) + " vs gain " +
                                  format_shape(gain.shape()) + " / bias " + format_shape(bias.shape()));
    std::vector<S> out(x.values().size());
    std::vector<S> stats(static_cast<size_t>(n) * 2);  // mean, inv_std per row
    const S* xv = x.values().data();
    const S* g = gain.values().data();
    const S* b = bias.values().data();
    for (int i = 0; i < n; ++i) {
      const S* row = xv + static_cast<int64_t>(i) * d;
      S mean = S(0);
      for (int j = 0; j < d; ++j) mean += row[j];
      mean /= static_cast<S>(d);
      S var = S(0);
      for (int j = 0; j < d; ++j) {
        const S c = row[j] - mean;
        var += c * c;
      }
      var /= static_cast<S>(d);
      const S inv = S(1) / std::sqrt(var + eps);
      stats[2 * i] = mean;
      stats[2 * i + 1] = inv;
      S* orow = out.data() + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) orow[j] = (row[j] - mean) * inv * g[j] + b[j];
    }
    Node* node = nullptr;
    Tensor t = record(Op::LayerNorm, {x, gain, bias}, x.shape(), std::move(out), &node);
    if (node) {
      node->saved = std::move(stats);
      node->sarg = eps;
    }
    return t;
  }

  // mean over rows of -log softmax(logits)[target]; log-sum-exp fused, the
  // probabilities are never materialized on the forward path
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    require_rank(logits, 2, "cross_entropy logits");
    const int batch = logits.dim(0), n = logits.dim(1);
    if (static_cast<int>(targets.size()) != batch)
      throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                  std::to_string(batch) + " rows");
    for (int i = 0; i < batch; ++i)
      if (targets[i] < 0 || targets[i] >= n)
        throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " out of range [0," +
                                std::to_string(n) + ") at row " + std::to_string(i));
    std::vector<S> lse(batch);
    const S* x = logits.values().data();
    S total = S(0);
    for (int i = 0; i < batch; ++i) {
      const S* row = x + static_cast<int64_t>(i) * n;
      S mx = row[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      S sum = S(0);
      for (int j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
      lse[i] = mx + std::log(sum);
      total += lse[i] - row[targets[i]];
    }
    total /= static_cast<S>(batch);
    Node* node = nullptr;
    Tensor t = record(Op::CrossEntropy, {logits}, {1}, {total}, &node);
    if (node) {
      node->saved = std::move(lse);
      node->iargs = targets;
    }
    return t;
  }

  // row gather; the embedding lookup and the loss-position selector
  Tensor gather_rows(const Tensor& table, const std::vector<int>& rows) {
    require_rank(table, 2, "gather_rows table");
    const int n = table.dim(0), d = table.dim(1);
    std::vector<S> out(rows.size() * static_cast<size_t>(d));
    const S* tv = table.values().data();
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= n)
        throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " out of range [0," +
                                std::to_string(n) + ")");
      std::memcpy(out.data() + i * d, tv + static_cast<int64_t>(rows[i]) * d, sizeof(S) * d);
    }
    Node* node = nullptr;
    Tensor t = record(Op::GatherRows, {table}, {static_cast<int>(rows.size()), d}, std::move(out), &node);
    if (node) node->iargs = rows;
    return t;
  }

  // sequence-axis concatenation
  Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    for (const auto& p : parts) require_rank(p, 2, "concat_rows input");
    const int d = parts[0].dim(1);
    int total = 0;
    for (const auto& p : parts) {
      if (p.dim(1) != d)
        throw std::invalid_argument("concat_rows: column mismatch, " + format_shape(parts[0].shape()) + " vs " +
                                    format_shape(p.shape()));
      total += p.dim(0);
    }
    std::vector<S> out(static_cast<size_t>(total) * d);
    size_t off = 0;
    for (const auto& p : parts) {
      std::memcpy(out.data() + off, p.values().data(), sizeof(S) * p.values().size());
      off += p.values().size();
    }
    return record(Op::ConcatRows, parts, {total, d}, std::move(out));
  }

  Tensor concat_rows(const Tensor& a, const Tensor& b) { return concat_rows(std::vector<Tensor>{a, b}); }

  // multi-head scaled dot-product attention over one sequence; q,k,v are
  // [T×d] with d split across heads. Saves the attention probabilities.
  Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int num_heads, bool causal) {
    require_rank(q, 2, "attention q");
    require_same_shape(q, k, "attention q/k");
    require_same_shape(q, v, "attention q/v");
    const int t = q.dim(0), d = q.dim(1);
    if (num_heads <= 0 || d % num_heads != 0)
      throw std::invalid_argument("attention: heads " + std::to_string(num_heads) + " does not divide dim " +
                                  std::to_string(d));
    const int hd = d / num_heads;
    const S inv_scale = S(1) / std::sqrt(static_cast<S>(hd));
    std::vector<S> out(static_cast<size_t>(t) * d);
    std::vector<S> probs(static_cast<size_t>(num_heads) * t * t, S(0));
    const S* qv = q.values().data();
    const S* kv = k.values().data();
    const S* vv = v.values().data();
    for (int h = 0; h < num_heads; ++h) {
      const int hoff = h * hd;
      S* hp = probs.data() + static_cast<size_t>(h) * t * t;
      for (int i = 0; i < t; ++i) {
        const int jmax = causal ? i + 1 : t;
        S* prow = hp + static_cast<size_t>(i) * t;
        S mx = -std::numeric_limits<S>::infinity();
        for (int j = 0; j < jmax; ++j) {
          S s = S(0);
          const S* qrow = qv + static_cast<int64_t>(i) * d + hoff;
          const S* krow = kv + static_cast<int64_t>(j) * d + hoff;
          for (int c = 0; c < hd; ++c) s += qrow[c] * krow[c];
          prow[j] = s * inv_scale;
          mx = std::max(mx, prow[j]);
        }
        S sum = S(0);
        for (int j = 0; j < jmax; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          sum += prow[j];
        }
        const S inv = S(1) / sum;
        for (int j = 0; j < jmax; ++j) prow[j] *= inv;
        S* orow = out.data() + static_cast<int64_t>(i) * d + hoff;
        for (int c = 0; c < hd; ++c) orow[c] = S(0);
        for (int j = 0; j < jmax; ++j) {
          const S p = prow[j];
          const S* vrow = vv + static_cast<int64_t>(j) * d + hoff;
          for (int c = 0; c < hd; ++c) orow[c] += p * vrow[c];
        }
      }
    }
    Node* node = nullptr;
    Tensor res = record(Op::Attention, {q, k, v}, q.shape(), std::move(out), &node);
    if (node) {
      node->saved = std::move(probs);
      node->iargs = {num_heads, causal ? 1 : 0};
    }
    return res;
  }

  Tensor sum(const Tensor& a) {
    S total = S(0);
    for (S v : a.values()) total += v;
    return record(Op::Sum, {a}, {1}, {total});
  }

  // Accumulates d(loss)/d(leaf) into the grad buffers of requires_grad
  // tensors; frozen tensors are never touched.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss has shape " + format_shape(loss.shape()));
    if (loss.raw()->tape_owner != this)
      throw std::invalid_argument("backward: tensor was not produced on this tape");
    ensure_grad(loss.raw());
    loss.raw()->grad[0] += S(1);
    for (int64_t i = loss.tape_id(); i >= 0; --i) backward_node(nodes_[static_cast<size_t>(i)]);
  }

  // Recomputes every node from the leaves into shadow buffers and compares
  // bit-exactly against the recorded outputs.
  bool replay_matches() const {
    std::vector<std::vector<S>> shadow(nodes_.size());
    auto input_values = [&](const Tensor& t) -> const std::vector<S>& {
      if (t.raw()->tape_owner == this && t.tape_id() >= 0) return shadow[static_cast<size_t>(t.tape_id())];
      return t.values();
    };
    for (size_t i = 0; i < nodes_.size(); ++i) {
      const Node& node = nodes_[i];
      shadow[i] = replay_node(node, input_values);
      const auto& expected = node.out.values();
      if (shadow[i].size() != expected.size()) return false;
      if (std::memcmp(shadow[i].data(), expected.data(), expected.size() * sizeof(S)) != 0) return false;
    }
    return true;
  }

 private:
  struct Node {
    Op op;
    std::vector<Tensor> inputs;
    Tensor out;
    std::vector<S> saved;
    std::vector<int> iargs;
    S sarg = S(0);
  };

  bool recording_;
  std::vector<Node> nodes_;

  static void require_rank(const Tensor& t, int rank, const char* what) {
    if (static_cast<int>(t.shape().size()) != rank)
      throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                                  format_shape(t.shape()));
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
      throw std::invalid_argument(std::string(what) + ": shape mismatch, " + format_shape(a.shape()) + " vs " +
                                  format_shape(b.shape()));
  }

  Tensor record(Op op, std::vector<Tensor> inputs, std::vector<int> out_shape, std::vector<S> out_values,
                Node** node_out = nullptr) {
    bool needs_grad = false;
    if (recording_)
      for (const auto& in : inputs)
        if (in.requires_grad()) needs_grad = true;
    Tensor out = Tensor::from(std::move(out_shape), std::move(out_values), needs_grad);
    if (!needs_grad) {
      if (node_out) *node_out = nullptr;
      return out;
    }
    out.d_->tape_owner = this;
    out.d_->tape_id = static_cast<int64_t>(nodes_.size());
    nodes_.push_back(Node{op, std::move(inputs), out, {}, {}, S(0)});
    if (node_out) *node_out = &nodes_.back();
    return out;
  }

  static void ensure_grad(TensorDataT<S>* t) {
    if (t->grad.empty()) t->grad.assign(t->values.size(), S(0));
  }

  // grad sink for an input: null when the input is frozen
  static S* grad_of(const Tensor& t) {
    if (!t.requires_grad()) return nullptr;
    ensure_grad(t.raw());
    return t.raw()->grad.data();
  }

  void backward_node(Node& node) {
    TensorDataT<S>* out = node.out.raw();
    if (out->grad.empty()) return;  // output never reached the loss
    const S* g = out->grad.data();
    switch (node.op) {
      case Op::Matmul: {
        const Tensor& a = node.inputs[0];
        const Tensor& b = node.inputs[1];
        const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
        if (S* da = grad_of(a)) {
          // dA += dC · B^T
          std::vector<S> tmp(static_cast<size_t>(n) * k);
          detail::gemm_nt(n, m, k, g, b.values().data(), tmp.data());
          for (size_t i = 0; i < tmp.size(); ++i) da[i] += tmp[i];
        }
        if (S* db = grad_of(b)) detail::gemm_tn_acc(n, k, m, a.values().data(), g, db);
        break;
      }
      case Op::MatmulNT: {
        const Tensor& a = node.inputs[0];
        const Tensor& b = node.inputs[1];
        const int n = a.dim(0), k = a.dim(1), m = b.dim(0);
        if (S* da = grad_of(a)) detail::gemm_nn_acc(n, m, k, g, b.values().data(), da);
        if (S* db = grad_of(b)) detail::gemm_tn_acc(n, m, k, g, a.values().data(), db);
        break;
      }
      case Op::Add: {
        for (int s = 0; s < 2; ++s)
          if (S* d = grad_of(node.inputs[s]))
            for (int64_t i = 0; i < node.out.numel(); ++i) d[i] += g[i];
        break;
      }
      case Op::Mul: {
        const auto& av = node.inputs[0].values();
        const auto& bv = node.inputs[1].values();
        if (S* da = grad_of(node.inputs[0]))
          for (size_t i = 0; i < av.size(); ++i) da[i] += g[i] * bv[i];
        if (S* db = grad_of(node.inputs[1]))
          for (size_t i = 0; i < bv.size(); ++i) db[i] += g[i] * av[i];
        break;
      }
      case Op::Scale: {
        if (S* da = grad_of(node.inputs[0]))
          for (int64_t i = 0; i < node.out.numel(); ++i) da[i] += g[i] * node.sarg;
        break;
      }
      case Op::AddRow: {
        const int n = node.inputs[0].dim(0), d = node.inputs[0].dim(1);
        if (S* da = grad_of(node.inputs[0]))
          for (int64_t i = 0; i < static_cast<int64_t>(n) * d; ++i) da[i] += g[i];
        if (S* dr = grad_of(node.inputs[1]))
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) dr[j] += g[static_cast<int64_t>(i) * d + j];
        break;
      }
      case Op::Gelu: {
        const auto& xv = node.inputs[0].values();
        if (S* dx = grad_of(node.inputs[0]))
          for (size_t i = 0; i < xv.size(); ++i) dx[i] += g[i] * detail::gelu_grad_scalar(xv[i]);
        break;
      }
      case Op::Softmax: {
        S* dx = grad_of(node.inputs[0]);
        if (!dx) break;
        const int n = node.out.shape().back();
        const int64_t rows = node.out.numel() / n;
        const S* y = node.out.values().data();
        for (int64_t r = 0; r < rows; ++r) {
          const S* yr = y + r * n;
          const S* gr = g + r * n;
          S dot = S(0);
          for (int j = 0; j < n; ++j) dot += gr[j] * yr[j];
          S* dr = dx + r * n;
          for (int j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
        break;
      }
      case Op::LayerNorm: {
        const Tensor& x = node.inputs[0];
        const Tensor& gain = node.inputs[1];
        const int n = x.dim(0), d = x.dim(1);
        const S* xv = x.values().data();
        const S* gv = gain.values().data();
        S* dx = grad_of(x);
        S* dg = grad_of(gain);
        S* db = grad_of(node.inputs[2]);
        for (int i = 0; i < n; ++i) {
          const S mean = node.saved[2 * i];
          const S inv = node.saved[2 * i + 1];
          const S* xrow = xv + static_cast<int64_t>(i) * d;
          const S* grow = g + static_cast<int64_t>(i) * d;
          if (dg || db) {
            for (int j = 0; j < d; ++j) {
              const S xhat = (xrow[j] - mean) * inv;
              if (dg) dg[j] += grow[j] * xhat;
              if (db) db[j] += grow[j];
            }
          }
          if (dx) {
            S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
            for (int j = 0; j < d; ++j) {
              const S xhat = (xrow[j] - mean) * inv;
              const S dxhat = grow[j] * gv[j];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            const S invd = S(1) / static_cast<S>(d);
            S* drow = dx + static_cast<int64_t>(i) * d;
            for (int j = 0; j < d; ++j) {
              const S xhat = (xrow[j] - mean) * inv;
              const S dxhat = grow[j] * gv[j];
              drow[j] += inv * (dxhat - invd * sum_dxhat - xhat * invd * sum_dxhat_xhat);
            }
          }
        }
        break;
      }
      case Op::CrossEntropy: {
        S* dx = grad_of(node.inputs[0]);
        if (!dx) break;
        const int batch = node.inputs[0].dim(0), n = node.inputs[0].dim(1);
        const S* x = node.inputs[0].values().data();
        const S gscale = g[0] / static_cast<S>(batch);
        for (int i = 0; i < batch; ++i) {
          const S lse = node.saved[i];
          const S* row = x + static_cast<int64_t>(i) * n;
          S* drow = dx + static_cast<int64_t>(i) * n;
          for (int j = 0; j < n; ++j) drow[j] += gscale * std::exp(row[j] - lse);
          drow[node.iargs[i]] -= gscale;
        }
        break;
      }
      case Op::GatherRows: {
        S* dt = grad_of(node.inputs[0]);
        if (!dt) break;
        const int d = node.inputs[0].dim(1);
        for (size_t i = 0; i < node.iargs.size(); ++i) {
          S* drow = dt + static_cast<int64_t>(node.iargs[i]) * d;
          const S* grow = g + i * d;
          for (int j = 0; j < d; ++j) drow[j] += grow[j];
        }
        break;
      }
      case Op::ConcatRows: {
        size_t off = 0;
        for (const auto& part : node.inputs) {
          const size_t sz = part.values().size();
          if (S* dp = grad_of(part))
            for (size_t i = 0; i < sz; ++i) dp[i] += g[off + i];
          off += sz;
        }
        break;
      }
      case Op::Attention: {
        backward_attention(node, g);
        break;
      }
      case Op::Sum: {
        if (S* da = grad_of(node.inputs[0]))
          for (int64_t i = 0; i < node.inputs[0].numel(); ++i) da[i] += g[0];
        break;
      }
    }
  }

  void backward_attention(Node& node, const S* g) {
    const Tensor& q = node.inputs[0];
    const Tensor& k = node.inputs[1];
    const Tensor& v = node.inputs[2];
    const int t = q.dim(0), d = q.dim(1);
    const int num_heads = node.iargs[0];
    const bool causal = node.iargs[1] != 0;
    const int hd = d / num_heads;
    const S inv_scale = S(1) / std::sqrt(static_cast<S>(hd));
    S* dq = grad_of(q);
    S* dk = grad_of(k);
    S* dv = grad_of(v);
    const S* qv = q.values().data();
    const S* kv = k.values().data();
    const S* vv = v.values().data();
    std::vector<S> dp(t);
    for (int h = 0; h < num_heads; ++h) {
      const int hoff = h * hd;
      const S* hp = node.saved.data() + static_cast<size_t>(h) * t * t;
      for (int i = 0; i < t; ++i) {
        const int jmax = causal ? i + 1 : t;
        const S* prow = hp + static_cast<size_t>(i) * t;
        const S* grow = g + static_cast<int64_t>(i) * d + hoff;
        // dP = dO · V^T, then the row-softmax backward gives dS
        S dot = S(0);
        for (int j = 0; j < jmax; ++j) {
          const S* vrow = vv + static_cast<int64_t>(j) * d + hoff;
          S s = S(0);
          for (int c = 0; c < hd; ++c) s += grow[c] * vrow[c];
          dp[j] = s;
          dot += s * prow[j];
        }
        for (int j = 0; j < jmax; ++j) {
          const S ds = prow[j] * (dp[j] - dot) * inv_scale;
          if (dq) {
            S* dqrow = dq + static_cast<int64_t>(i) * d + hoff;
            const S* krow = kv + static_cast<int64_t>(j) * d + hoff;
            for (int c = 0; c < hd; ++c) dqrow[c] += ds * krow[c];
          }
          if (dk) {
            S* dkrow = dk + static_cast<int64_t>(j) * d + hoff;
            const S* qrow = qv + static_cast<int64_t>(i) * d + hoff;
            for (int c = 0; c < hd; ++c) dkrow[c] += ds * qrow[c];
          }
          if (dv) {
            S* dvrow = dv + static_cast<int64_t>(j) * d + hoff;
            for (int c = 0; c < hd; ++c) dvrow[c] += prow[j] * grow[c];
          }
        }
      }
    }
  }

  template <class Lookup>
  std::vector<S> replay_node(const Node& node, Lookup&& input_values) const {
    TapeT<S> scratch(false);
    std::vector<Tensor> ins;
    ins.reserve(node.inputs.size());
    for (const auto& in : node.inputs)
      ins.push_back(Tensor::from(in.shape(), input_values(in)));
    Tensor out;
    switch (node.op) {
      case Op::Matmul: out = scratch.matmul(ins[0], ins[1]); break;
      case Op::MatmulNT: out = scratch.matmul_nt(ins[0], ins[1]); break;
      case Op::Add: out = scratch.add(ins[0], ins[1]); break;
      case Op::Mul: out = scratch.mul(ins[0], ins[1]); break;
      case Op::Scale: out = scratch.scale(ins[0], node.sarg); break;
      case Op::AddRow: out = scratch.add_row(ins[0], ins[1]); break;
      case Op::Gelu: out = scratch.gelu(ins[0]); break;
      case Op::Softmax: out = scratch.softmax(ins[0]); break;
      case Op::LayerNorm: out = scratch.layer_norm(ins[0], ins[1], ins[2], node.sarg); break;
      case Op::CrossEntropy: out = scratch.cross_entropy(ins[0], node.iargs); break;
      case Op::GatherRows: out = scratch.gather_rows(ins[0], node.iargs); break;
      case Op::ConcatRows: out = scratch.concat_rows(ins); break;
      case Op::Attention: out = scratch.attention(ins[0], ins[1], ins[2], node.iargs[0], node.iargs[1] != 0); break;
      case Op::Sum: out = scratch.sum(ins[0]); break;
    }
    return out.values();
  }
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using TensorD = TensorT<double>;
using TapeD = TapeT<double>;

// Max relative central-difference error over all coordinates of x.
// Runs in the scalar type of the tensor; verification uses double.
template <class S, class F>
double grad_check(F&& f, TensorT<S> x, double eps) {
  TapeT<S> tape;
  TensorT<S> y = f(tape, x);
  if (y.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  if (!std::isfinite(static_cast<double>(y.item()))) throw std::runtime_error("grad_check: non-finite evaluation");
  tape.backward(y);
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad())
    for (int64_t i = 0; i < x.numel(); ++i) analytic[i] = static_cast<double>(x.grad()[i]);

  double max_rel = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    std::vector<S> vals = x.values();
    const S orig = vals[i];
    vals[i] = orig + static_cast<S>(eps);
    TapeT<S> tp(false);
    TensorT<S> xp = TensorT<S>::from(x.shape(), vals);
    const double fp = static_cast<double>(f(tp, xp).item());
    vals[i] = orig - static_cast<S>(eps);
    TapeT<S> tm(false);
    TensorT<S> xm = TensorT<S>::from(x.shape(), vals);
    const double fm = static_cast<double>(f(tm, xm).item());
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw std::runtime_error("grad_check: non-finite evaluation");
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace auxtune
