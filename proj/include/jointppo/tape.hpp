#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "jointppo/params.hpp"
#include "jointppo/tensor.hpp"

namespace jointppo {

// Handle to a node on the active tape.
struct Val {
  int id = -1;
};

namespace detail {

inline double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // 1/sqrt(2*pi)
  return cdf + x * pdf;
}

}  // namespace detail

// Define-by-run reverse-mode tape. Each forward pass records matrix-level
// operations; backward() walks the list in reverse and accumulates gradients
// into the Parameters referenced by param() leaves. Nodes are appended only,
// so inputs always precede their consumers. Single-threaded per tape.
class Tape {
  enum class Op {
    kInput,
    kParam,
    kMatmul,
    kAdd,
    kSub,
    kMul,
    kAddRowVec,
    kScale,
    kGelu,
    kExp,
    kLog,
    kLayerNorm,
    kMaskedSoftmax,
    kEntropyRows,
    kGatherRows,
    kIndexRows,
    kAttention,
    kMeanPoolRows,
    kReshape,
    kSumCols,
    kSumAll,
    kMeanAll,
    kClip,
    kMinimum,
    kMaximum,
  };

  struct Node {
    Tensor val;
    Tensor grad;
    Op op;
    std::array<int, 3> in{-1, -1, -1};
    int i0 = 0, i1 = 0;      // op ints: heads / batch / chunk / reshape dims
    double d0 = 0, d1 = 0;   // op doubles: scale factor / clip bounds
    bool flag = false;       // attention: causal
    std::vector<int> idx;    // gather / index rows
    BoolMat mask;            // softmax / entropy masks
    std::vector<double> saved;  // attention weights, layernorm stats
    Parameter* param = nullptr;
  };

 public:
  static constexpr double kLayerNormEps = 1e-5;

  // ---- leaves ----

  Val input(Tensor x) {
    Node n;
    n.op = Op::kInput;
    n.val = std::move(x);
    return push(std::move(n));
  }

  Val param(Parameter& p) {
    Node n;
    n.op = Op::kParam;
    n.val = p.tensor();
    n.param = &p;
    return push(std::move(n));
  }

  // ---- arithmetic ----

  Val matmul(Val a, Val b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    if (A.cols != B.rows)
      throw DimensionError("matmul: inner dims of " + A.shape_str() + " and " + B.shape_str() +
                           " do not match");
    Node n;
    n.op = Op::kMatmul;
    n.in = {a.id, b.id, -1};
    n.val = Tensor(A.rows, B.cols);
    matmul_into(n.val, A, B);
    return push(std::move(n));
  }

  Val add(Val a, Val b) { return binary(Op::kAdd, a, b); }
  Val sub(Val a, Val b) { return binary(Op::kSub, a, b); }
  Val mul(Val a, Val b) { return binary(Op::kMul, a, b); }

  // (m,n) + broadcast (1,n)
  Val add_rowvec(Val a, Val r) {
    const Tensor& A = at(a).val;
    const Tensor& R = at(r).val;
    if (R.rows != 1 || R.cols != A.cols)
      throw DimensionError("add_rowvec: " + A.shape_str() + " with row " + R.shape_str());
    Node n;
    n.op = Op::kAddRowVec;
    n.in = {a.id, r.id, -1};
    n.val = A;
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < A.cols; ++j) n.val.at(i, j) += R.at(0, j);
    return push(std::move(n));
  }

  Val scale(Val a, double c) {
    Node n;
    n.op = Op::kScale;
    n.in = {a.id, -1, -1};
    n.d0 = c;
    n.val = at(a).val;
    for (double& v : n.val.data) v *= c;
    return push(std::move(n));
  }

  Val neg(Val a) { return scale(a, -1.0); }

  // ---- elementwise nonlinearities ----

  Val gelu(Val a) {
    Node n;
    n.op = Op::kGelu;
    n.in = {a.id, -1, -1};
    n.val = at(a).val;
    for (double& v : n.val.data) v = detail::gelu_fwd(v);
    return push(std::move(n));
  }

  Val exp(Val a) {
    Node n;
    n.op = Op::kExp;
    n.in = {a.id, -1, -1};
    n.val = at(a).val;
    for (double& v : n.val.data) v = std::exp(v);
    return push(std::move(n));
  }

  Val log(Val a) {
    Node n;
    n.op = Op::kLog;
    n.in = {a.id, -1, -1};
    n.val = at(a).val;
    for (double& v : n.val.data) v = std::log(v);
    return push(std::move(n));
  }

  // ---- normalization ----

  // Row-wise layer norm with affine output. A variance floor (kLayerNormEps)
  // keeps constant rows well-defined: they normalize to zero.
  Val layer_norm(Val x, Val gain, Val bias) {
    const Tensor& X = at(x).val;
    const Tensor& G = at(gain).val;
    const Tensor& B = at(bias).val;
    if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols)
      throw DimensionError("layer_norm: x " + X.shape_str() + ", gain " + G.shape_str() +
                           ", bias " + B.shape_str());
    Node n;
    n.op = Op::kLayerNorm;
    n.in = {x.id, gain.id, bias.id};
    n.val = Tensor(X.rows, X.cols);
    n.saved.resize(static_cast<size_t>(X.rows) * 2);  // per row: mean, inv_std
    const int d = X.cols;
    for (int i = 0; i < X.rows; ++i) {
      const double* xr = X.row(i);
      double mean = 0.0;
      for (int j = 0; j < d; ++j) mean += xr[j];
      mean /= d;
      double var = 0.0;
      for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= d;
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      n.saved[2 * i] = mean;
      n.saved[2 * i + 1] = inv;
      double* yr = n.val.row(i);
      for (int j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * inv * G.at(0, j) + B.at(0, j);
    }
    return push(std::move(n));
  }

  // ---- distributions ----

  // Row-wise softmax; masked entries are exactly zero in the output and get
  // exactly zero gradient. Stabilized by max-subtraction over live entries.
  Val masked_softmax(Val x, const BoolMat& mask) {
    const Tensor& X = at(x).val;
    if (!mask.empty() && (mask.rows != X.rows || mask.cols != X.cols))
      throw DimensionError("masked_softmax: mask " + std::to_string(mask.rows) + "x" +
                           std::to_string(mask.cols) + " vs x " + X.shape_str());
    Node n;
    n.op = Op::kMaskedSoftmax;
    n.in = {x.id, -1, -1};
    n.mask = mask;
    n.val = Tensor(X.rows, X.cols);
    for (int i = 0; i < X.rows; ++i) {
      double mx = -HUGE_VAL;
      for (int j = 0; j < X.cols; ++j)
        if (live(mask, i, j)) mx = std::max(mx, X.at(i, j));
      if (mx == -HUGE_VAL)
        throw InvalidMaskError("softmax row " + std::to_string(i) + " has no unmasked entry");
      double sum = 0.0;
      for (int j = 0; j < X.cols; ++j) {
        if (live(mask, i, j)) {
          const double e = std::exp(X.at(i, j) - mx);
          n.val.at(i, j) = e;
          sum += e;
        }
      }
      for (int j = 0; j < X.cols; ++j)
        if (live(mask, i, j)) n.val.at(i, j) /= sum;
    }
    return push(std::move(n));
  }

  // Row entropies -sum(p log p) over live entries, (m,k) -> (m,1).
  Val entropy_rows(Val probs, const BoolMat& mask) {
    const Tensor& P = at(probs).val;
    Node n;
    n.op = Op::kEntropyRows;
    n.in = {probs.id, -1, -1};
    n.mask = mask;
    n.val = Tensor(P.rows, 1);
    for (int i = 0; i < P.rows; ++i) {
      double h = 0.0;
      for (int j = 0; j < P.cols; ++j) {
        if (!live(mask, i, j)) continue;
        const double p = P.at(i, j);
        if (p > 0.0) h -= p * std::log(p);
      }
      n.val.at(i, 0) = h;
    }
    return push(std::move(n));
  }

  // out[i] = x[i][idx[i]], (m,k) -> (m,1)
  Val gather_rows(Val x, std::vector<int> idx) {
    const Tensor& X = at(x).val;
    if (static_cast<int>(idx.size()) != X.rows)
      throw DimensionError("gather_rows: " + std::to_string(idx.size()) + " indices for " +
                           X.shape_str());
    for (int i = 0; i < X.rows; ++i)
      if (idx[static_cast<size_t>(i)] < 0 || idx[static_cast<size_t>(i)] >= X.cols)
        throw ContractError("gather_rows: index out of range at row " + std::to_string(i));
    Node n;
    n.op = Op::kGatherRows;
    n.in = {x.id, -1, -1};
    n.val = Tensor(X.rows, 1);
    for (int i = 0; i < X.rows; ++i) n.val.at(i, 0) = X.at(i, idx[static_cast<size_t>(i)]);
    n.idx = std::move(idx);
    return push(std::move(n));
  }

  // out[i] = x[rows[i]]; duplicate indices accumulate in backward.
  Val index_rows(Val x, std::vector<int> rows) {
    const Tensor& X = at(x).val;
    for (int r : rows)
      if (r < 0 || r >= X.rows) throw ContractError("index_rows: row index out of range");
    Node n;
    n.op = Op::kIndexRows;
    n.in = {x.id, -1, -1};
    n.val = Tensor(static_cast<int>(rows.size()), X.cols);
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy(X.row(rows[i]), X.row(rows[i]) + X.cols, n.val.row(static_cast<int>(i)));
    n.idx = std::move(rows);
    return push(std::move(n));
  }

  // ---- attention ----

  // Fused multi-head scaled-dot attention over a batch of equal-length
  // sequences. q is (batch*n_q, d); k and v are (batch*n_k, d). With
  // causal=true (requires n_q == n_k) query i attends keys j <= i only;
  // masked weights are exactly zero, so later tokens cannot leak into
  // earlier positions even through the softmax normalizer.
  Val attention(Val q, Val k, Val v, int n_heads, int batch, bool causal) {
    const Tensor& Q = at(q).val;
    const Tensor& K = at(k).val;
    const Tensor& V = at(v).val;
    const int d = Q.cols;
    if (K.cols != d || V.cols != d)
      throw DimensionError("attention: widths " + Q.shape_str() + " " + K.shape_str() + " " +
                           V.shape_str() + " differ");
    if (batch <= 0 || Q.rows % batch != 0 || K.rows % batch != 0)
      throw DimensionError("attention: rows not divisible by batch");
    if (K.rows != V.rows) throw DimensionError("attention: k/v row mismatch");
    if (n_heads <= 0 || d % n_heads != 0)
      throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                           std::to_string(n_heads) + " heads");
    const int nq = Q.rows / batch;
    const int nk = K.rows / batch;
    if (causal && nq != nk) throw ContractError("attention: causal requires square attention");
    const int dh = d / n_heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    Node n;
    n.op = Op::kAttention;
    n.in = {q.id, k.id, v.id};
    n.i0 = n_heads;
    n.i1 = batch;
    n.flag = causal;
    n.val = Tensor(Q.rows, d);
    n.saved.assign(static_cast<size_t>(batch) * n_heads * nq * nk, 0.0);

    std::vector<double> srow(static_cast<size_t>(nk));
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < n_heads; ++h) {
        double* A = n.saved.data() +
                    (static_cast<size_t>(b) * n_heads + h) * static_cast<size_t>(nq) * nk;
        for (int i = 0; i < nq; ++i) {
          const double* qi = Q.row(b * nq + i) + h * dh;
          const int jmax = causal ? i + 1 : nk;
          double mx = -HUGE_VAL;
          for (int j = 0; j < jmax; ++j) {
            const double* kj = K.row(b * nk + j) + h * dh;
            double s = 0.0;
            for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
            s *= scl;
            srow[static_cast<size_t>(j)] = s;
            mx = std::max(mx, s);
          }
          double sum = 0.0;
          for (int j = 0; j < jmax; ++j) {
            const double e = std::exp(srow[static_cast<size_t>(j)] - mx);
            srow[static_cast<size_t>(j)] = e;
            sum += e;
          }
          double* arow = A + static_cast<size_t>(i) * nk;
          for (int j = 0; j < jmax; ++j) arow[j] = srow[static_cast<size_t>(j)] / sum;
          double* out = n.val.row(b * nq + i) + h * dh;
          for (int j = 0; j < jmax; ++j) {
            const double w = arow[j];
            const double* vj = V.row(b * nk + j) + h * dh;
            for (int t = 0; t < dh; ++t) out[t] += w * vj[t];
          }
        }
      }
    }
    return push(std::move(n));
  }

  // ---- reductions / shaping ----

  // (batch*chunk, d) -> (batch, d), mean over each chunk of rows.
  Val mean_pool_rows(Val x, int chunk) {
    const Tensor& X = at(x).val;
    if (chunk <= 0 || X.rows % chunk != 0)
      throw DimensionError("mean_pool_rows: " + X.shape_str() + " with chunk " +
                           std::to_string(chunk));
    Node n;
    n.op = Op::kMeanPoolRows;
    n.in = {x.id, -1, -1};
    n.i0 = chunk;
    n.val = Tensor(X.rows / chunk, X.cols);
    for (int b = 0; b < n.val.rows; ++b) {
      double* out = n.val.row(b);
      for (int i = 0; i < chunk; ++i) {
        const double* xr = X.row(b * chunk + i);
        for (int j = 0; j < X.cols; ++j) out[j] += xr[j];
      }
      for (int j = 0; j < X.cols; ++j) out[j] /= chunk;
    }
    return push(std::move(n));
  }

  Val reshape(Val x, int r, int c) {
    const Tensor& X = at(x).val;
    if (static_cast<size_t>(r) * c != X.size())
      throw DimensionError("reshape: " + X.shape_str() + " to (" + std::to_string(r) + "x" +
                           std::to_string(c) + ")");
    Node n;
    n.op = Op::kReshape;
    n.in = {x.id, -1, -1};
    n.val = Tensor(r, c);
    n.val.data = X.data;
    return push(std::move(n));
  }

  Val sum_cols(Val x) {
    const Tensor& X = at(x).val;
    Node n;
    n.op = Op::kSumCols;
    n.in = {x.id, -1, -1};
    n.val = Tensor(X.rows, 1);
    for (int i = 0; i < X.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < X.cols; ++j) s += X.at(i, j);
      n.val.at(i, 0) = s;
    }
    return push(std::move(n));
  }

  Val sum_all(Val x) { return reduce_all(Op::kSumAll, x); }
  Val mean_all(Val x) { return reduce_all(Op::kMeanAll, x); }

  // ---- clipping ----

  Val clip(Val x, double lo, double hi) {
    Node n;
    n.op = Op::kClip;
    n.in = {x.id, -1, -1};
    n.d0 = lo;
    n.d1 = hi;
    n.val = at(x).val;
    for (double& v : n.val.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(n));
  }

  // Elementwise min; on ties the gradient goes to a.
  Val minimum(Val a, Val b) { return binary(Op::kMinimum, a, b); }
  // Elementwise max; on ties the gradient goes to a.
  Val maximum(Val a, Val b) { return binary(Op::kMaximum, a, b); }

  // ---- access ----

  const Tensor& value(Val v) const { return at(v).val; }
  const Tensor& grad(Val v) const { return at(v).grad; }
  size_t node_count() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Gradients of param() leaves are
  // accumulated (+=) into the underlying Parameter::grad buffers.
  void backward(Val loss) {
    Node& ln = at(loss);
    if (!ln.val.is_scalar())
      throw ContractError("backward: loss must be scalar, got " + ln.val.shape_str());
    for (auto& n : nodes_) n.grad = Tensor(n.val.rows, n.val.cols);
    ln.grad.at(0, 0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) backward_node(nodes_[static_cast<size_t>(i)]);
  }

 private:
  std::vector<Node> nodes_;

  Node& at(Val v) { return nodes_[static_cast<size_t>(v.id)]; }
  const Node& at(Val v) const { return nodes_[static_cast<size_t>(v.id)]; }

  Val push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Val{static_cast<int>(nodes_.size()) - 1};
  }

  static bool live(const BoolMat& m, int i, int j) { return m.empty() || m.at(i, j); }

  Val binary(Op op, Val a, Val b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    check_same_shape(A, B, op == Op::kAdd     ? "add"
                           : op == Op::kSub   ? "sub"
                           : op == Op::kMul   ? "mul"
                           : op == Op::kMinimum ? "minimum"
                                                : "maximum");
    Node n;
    n.op = op;
    n.in = {a.id, b.id, -1};
    n.val = Tensor(A.rows, A.cols);
    for (size_t i = 0; i < A.size(); ++i) {
      switch (op) {
        case Op::kAdd: n.val.data[i] = A.data[i] + B.data[i]; break;
        case Op::kSub: n.val.data[i] = A.data[i] - B.data[i]; break;
        case Op::kMul: n.val.data[i] = A.data[i] * B.data[i]; break;
        case Op::kMinimum: n.val.data[i] = std::min(A.data[i], B.data[i]); break;
        default: n.val.data[i] = std::max(A.data[i], B.data[i]); break;
      }
    }
    return push(std::move(n));
  }

  Val reduce_all(Op op, Val x) {
    const Tensor& X = at(x).val;
    Node n;
    n.op = op;
    n.in = {x.id, -1, -1};
    n.val = Tensor(1, 1);
    double s = 0.0;
    for (double v : X.data) s += v;
    n.val.at(0, 0) = op == Op::kMeanAll ? s / static_cast<double>(X.size()) : s;
    return push(std::move(n));
  }

  static void matmul_into(Tensor& C, const Tensor& A, const Tensor& B) {
    const int m = A.rows, kk = A.cols, nn = B.cols;
    for (int i = 0; i < m; ++i) {
      const double* ai = A.row(i);
      double* ci = C.row(i);
      for (int k = 0; k < kk; ++k) {
        const double av = ai[k];
        const double* bk = B.row(k);
        for (int j = 0; j < nn; ++j) ci[j] += av * bk[j];
      }
    }
  }

  void backward_node(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kParam:
        for (size_t i = 0; i < g.size(); ++i) n.param->grad[i] += g.data[i];
        break;
      case Op::kMatmul: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        Node& b = nodes_[static_cast<size_t>(n.in[1])];
        const int m = a.val.rows, kk = a.val.cols, nn = b.val.cols;
        // dA = g * B^T
        for (int i = 0; i < m; ++i) {
          const double* gi = g.row(i);
          double* dai = a.grad.row(i);
          for (int k = 0; k < kk; ++k) {
            const double* bk = b.val.row(k);
            double s = 0.0;
            for (int j = 0; j < nn; ++j) s += gi[j] * bk[j];
            dai[k] += s;
          }
        }
        // dB = A^T * g
        for (int i = 0; i < m; ++i) {
          const double* ai = a.val.row(i);
          const double* gi = g.row(i);
          for (int k = 0; k < kk; ++k) {
            const double av = ai[k];
            if (av == 0.0) continue;
            double* dbk = b.grad.row(k);
            for (int j = 0; j < nn; ++j) dbk[j] += av * gi[j];
          }
        }
        break;
      }
      case Op::kAdd: {
        accumulate(n.in[0], g, +1.0);
        accumulate(n.in[1], g, +1.0);
        break;
      }
      case Op::kSub: {
        accumulate(n.in[0], g, +1.0);
        accumulate(n.in[1], g, -1.0);
        break;
      }
      case Op::kMul: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        Node& b = nodes_[static_cast<size_t>(n.in[1])];
        for (size_t i = 0; i < g.size(); ++i) {
          a.grad.data[i] += g.data[i] * b.val.data[i];
          b.grad.data[i] += g.data[i] * a.val.data[i];
        }
        break;
      }
      case Op::kAddRowVec: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        Node& r = nodes_[static_cast<size_t>(n.in[1])];
        for (size_t i = 0; i < g.size(); ++i) a.grad.data[i] += g.data[i];
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) r.grad.at(0, j) += g.at(i, j);
        break;
      }
      case Op::kScale:
        accumulate(n.in[0], g, n.d0);
        break;
      case Op::kGelu: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        for (size_t i = 0; i < g.size(); ++i)
          a.grad.data[i] += g.data[i] * detail::gelu_grad(a.val.data[i]);
        break;
      }
      case Op::kExp: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        for (size_t i = 0; i < g.size(); ++i) a.grad.data[i] += g.data[i] * n.val.data[i];
        break;
      }
      case Op::kLog: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        for (size_t i = 0; i < g.size(); ++i) a.grad.data[i] += g.data[i] / a.val.data[i];
        break;
      }
      case Op::kLayerNorm: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        Node& gain = nodes_[static_cast<size_t>(n.in[1])];
        Node& bias = nodes_[static_cast<size_t>(n.in[2])];
        const int d = x.val.cols;
        for (int i = 0; i < g.rows; ++i) {
          const double mean = n.saved[2 * static_cast<size_t>(i)];
          const double inv = n.saved[2 * static_cast<size_t>(i) + 1];
          const double* xr = x.val.row(i);
          const double* gr = g.row(i);
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int j = 0; j < d; ++j) {
            const double xhat = (xr[j] - mean) * inv;
            const double dxhat = gr[j] * gain.val.at(0, j);
            gain.grad.at(0, j) += gr[j] * xhat;
            bias.grad.at(0, j) += gr[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
          }
          mean_dxhat /= d;
          mean_dxhat_xhat /= d;
          double* dxr = x.grad.row(i);
          for (int j = 0; j < d; ++j) {
            const double xhat = (xr[j] - mean) * inv;
            const double dxhat = gr[j] * gain.val.at(0, j);
            dxr[j] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
          }
        }
        break;
      }
      case Op::kMaskedSoftmax: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        for (int i = 0; i < g.rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < g.cols; ++j)
            if (live(n.mask, i, j)) dot += g.at(i, j) * n.val.at(i, j);
          for (int j = 0; j < g.cols; ++j)
            if (live(n.mask, i, j)) x.grad.at(i, j) += n.val.at(i, j) * (g.at(i, j) - dot);
        }
        break;
      }
      case Op::kEntropyRows: {
        Node& p = nodes_[static_cast<size_t>(n.in[0])];
        for (int i = 0; i < p.val.rows; ++i) {
          const double gi = g.at(i, 0);
          for (int j = 0; j < p.val.cols; ++j) {
            if (!live(n.mask, i, j)) continue;
            const double pv = p.val.at(i, j);
            if (pv > 0.0) p.grad.at(i, j) += gi * (-(std::log(pv) + 1.0));
          }
        }
        break;
      }
      case Op::kGatherRows: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        for (int i = 0; i < g.rows; ++i)
          x.grad.at(i, n.idx[static_cast<size_t>(i)]) += g.at(i, 0);
        break;
      }
      case Op::kIndexRows: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        for (size_t i = 0; i < n.idx.size(); ++i) {
          double* dst = x.grad.row(n.idx[i]);
          const double* src = g.row(static_cast<int>(i));
          for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::kAttention: {
        Node& q = nodes_[static_cast<size_t>(n.in[0])];
        Node& k = nodes_[static_cast<size_t>(n.in[1])];
        Node& v = nodes_[static_cast<size_t>(n.in[2])];
        const int heads = n.i0, batch = n.i1;
        const int d = q.val.cols, dh = d / heads;
        const int nq = q.val.rows / batch, nk = k.val.rows / batch;
        const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> dA(static_cast<size_t>(nk));
        for (int b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            const double* A = n.saved.data() +
                              (static_cast<size_t>(b) * heads + h) * static_cast<size_t>(nq) * nk;
            for (int i = 0; i < nq; ++i) {
              const int jmax = n.flag ? i + 1 : nk;
              const double* go = g.row(b * nq + i) + h * dh;
              const double* arow = A + static_cast<size_t>(i) * nk;
              // dA and dV
              double dot = 0.0;
              for (int j = 0; j < jmax; ++j) {
                const double* vj = v.val.row(b * nk + j) + h * dh;
                double s = 0.0;
                for (int t = 0; t < dh; ++t) s += go[t] * vj[t];
                dA[static_cast<size_t>(j)] = s;
                dot += s * arow[j];
                double* dvj = v.grad.row(b * nk + j) + h * dh;
                const double w = arow[j];
                for (int t = 0; t < dh; ++t) dvj[t] += w * go[t];
              }
              // softmax backward -> dS, then dQ, dK
              double* dqi = q.grad.row(b * nq + i) + h * dh;
              const double* qi = q.val.row(b * nq + i) + h * dh;
              for (int j = 0; j < jmax; ++j) {
                const double ds = arow[j] * (dA[static_cast<size_t>(j)] - dot) * scl;
                if (ds == 0.0) continue;
                const double* kj = k.val.row(b * nk + j) + h * dh;
                double* dkj = k.grad.row(b * nk + j) + h * dh;
                for (int t = 0; t < dh; ++t) {
                  dqi[t] += ds * kj[t];
                  dkj[t] += ds * qi[t];
                }
              }
            }
          }
        }
        break;
      }
      case Op::kMeanPoolRows: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        const int chunk = n.i0;
        for (int b = 0; b < g.rows; ++b) {
          const double* gb = g.row(b);
          for (int i = 0; i < chunk; ++i) {
            double* dx = x.grad.row(b * chunk + i);
            for (int j = 0; j < g.cols; ++j) dx[j] += gb[j] / chunk;
          }
        }
        break;
      }
      case Op::kReshape: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        for (size_t i = 0; i < g.size(); ++i) x.grad.data[i] += g.data[i];
        break;
      }
      case Op::kSumCols: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        for (int i = 0; i < x.val.rows; ++i) {
          const double gi = g.at(i, 0);
          double* dx = x.grad.row(i);
          for (int j = 0; j < x.val.cols; ++j) dx[j] += gi;
        }
        break;
      }
      case Op::kSumAll: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        const double gv = g.at(0, 0);
        for (double& dv : x.grad.data) dv += gv;
        break;
      }
      case Op::kMeanAll: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        const double gv = g.at(0, 0) / static_cast<double>(x.val.size());
        for (double& dv : x.grad.data) dv += gv;
        break;
      }
      case Op::kClip: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        for (size_t i = 0; i < g.size(); ++i) {
          const double xv = x.val.data[i];
          if (xv >= n.d0 && xv <= n.d1) x.grad.data[i] += g.data[i];
        }
        break;
      }
      case Op::kMinimum: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        Node& b = nodes_[static_cast<size_t>(n.in[1])];
        for (size_t i = 0; i < g.size(); ++i) {
          if (a.val.data[i] <= b.val.data[i]) a.grad.data[i] += g.data[i];
          else b.grad.data[i] += g.data[i];
        }
        break;
      }
      case Op::kMaximum: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        Node& b = nodes_[static_cast<size_t>(n.in[1])];
        for (size_t i = 0; i < g.size(); ++i) {
          if (a.val.data[i] >= b.val.data[i]) a.grad.data[i] += g.data[i];
          else b.grad.data[i] += g.data[i];
        }
        break;
      }
    }
  }

  void accumulate(int id, const Tensor& g, double s) {
    Node& a = nodes_[static_cast<size_t>(id)];
    for (size_t i = 0; i < g.size(); ++i) a.grad.data[i] += s * g.data[i];
  }
};

}  // namespace jointppo
