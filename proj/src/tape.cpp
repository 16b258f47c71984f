#include "casciff/tape.hpp"

#include <cmath>
#include <cstdlib>

#include "casciff/errors.hpp"
#include "casciff/kernels.hpp"

namespace casciff {

namespace {
std::uint64_t g_backward_generation = 0;
}

std::uint64_t backward_generation() { return g_backward_generation; }

Tape::Node& Tape::node(Value v) { return nodes_[static_cast<std::size_t>(v.idx)]; }
const Tape::Node& Tape::cnode(Value v) const { return nodes_[static_cast<std::size_t>(v.idx)]; }

Value Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Value v) const {
  if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size())
    throw DataError("tape: invalid value handle");
  return cnode(v).val;
}

bool Tape::wants(std::int32_t idx) const {
  return idx >= 0 && nodes_[static_cast<std::size_t>(idx)].requires_grad;
}

Tensor& Tape::grad_of(std::int32_t idx) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (n.grad.size() == 0) n.grad = Tensor(n.val.shape());
  return n.grad;
}

Value Tape::input(Tensor t) {
  Node n;
  n.val = std::move(t);
  n.op = Op::kInput;
  return push(std::move(n));
}

Value Tape::leaf(Parameter& p) {
  Node n;
  n.val = p.value;
  n.op = Op::kLeaf;
  n.param = &p;
  n.requires_grad = true;
  return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) {
  const Tensor& ta = cnode(a).val;
  const Tensor& tb = cnode(b).val;
  if (tb.ndim() != 2)
    throw ShapeError("matmul: rhs must be rank-2, got " + tb.shape_str());
  const std::size_t m = ta.rows(), k = ta.cols();
  if (k != tb.rows())
    throw ShapeError("matmul: inner dims differ, " + ta.shape_str() + " × " + tb.shape_str());
  const std::size_t nn = tb.cols();
  Tensor out = ta.ndim() == 1 ? Tensor({nn}) : Tensor({m, nn});
  kernels::active().matmul_nn(ta.data(), tb.data(), out.data(), m, k, nn);
  Node n;
  n.val = std::move(out);
  n.op = Op::kMatMul;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = wants(a.idx) || wants(b.idx);
  return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
  const Tensor& ta = cnode(a).val;
  const Tensor& tb = cnode(b).val;
  check_same_shape(ta, tb, "add");
  Tensor out(ta.shape());
  kernels::active().add(ta.data(), tb.data(), out.data(), ta.size());
  Node n;
  n.val = std::move(out);
  n.op = Op::kAdd;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = wants(a.idx) || wants(b.idx);
  return push(std::move(n));
}

Value Tape::sub(Value a, Value b) {
  const Tensor& ta = cnode(a).val;
  const Tensor& tb = cnode(b).val;
  check_same_shape(ta, tb, "sub");
  Tensor out(ta.shape());
  kernels::active().sub(ta.data(), tb.data(), out.data(), ta.size());
  Node n;
  n.val = std::move(out);
  n.op = Op::kSub;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = wants(a.idx) || wants(b.idx);
  return push(std::move(n));
}

Value Tape::add_bias(Value x, Value b) {
  const Tensor& tx = cnode(x).val;
  const Tensor& tb = cnode(b).val;
  if (tb.ndim() != 1 || tb.size() != tx.cols())
    throw ShapeError("add_bias: bias " + tb.shape_str() + " does not match " + tx.shape_str());
  Tensor out(tx.shape());
  const std::size_t rows = tx.rows(), cols = tx.cols();
  for (std::size_t r = 0; r < rows; ++r)
    kernels::active().add(tx.data() + r * cols, tb.data(), out.data() + r * cols, cols);
  Node n;
  n.val = std::move(out);
  n.op = Op::kAddBias;
  n.a = x.idx;
  n.b = b.idx;
  n.requires_grad = wants(x.idx) || wants(b.idx);
  return push(std::move(n));
}

Value Tape::mul(Value a, Value b) {
  const Tensor& ta = cnode(a).val;
  const Tensor& tb = cnode(b).val;
  check_same_shape(ta, tb, "mul");
  Tensor out(ta.shape());
  kernels::active().mul(ta.data(), tb.data(), out.data(), ta.size());
  Node n;
  n.val = std::move(out);
  n.op = Op::kMul;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = wants(a.idx) || wants(b.idx);
  return push(std::move(n));
}

Value Tape::mul_rows(Value x, Value v) {
  const Tensor& tx = cnode(x).val;
  const Tensor& tv = cnode(v).val;
  if (tv.ndim() != 1 || tv.size() != tx.cols())
    throw ShapeError("mul_rows: vector " + tv.shape_str() + " does not match " + tx.shape_str());
  Tensor out(tx.shape());
  const std::size_t rows = tx.rows(), cols = tx.cols();
  for (std::size_t r = 0; r < rows; ++r)
    kernels::active().mul(tx.data() + r * cols, tv.data(), out.data() + r * cols, cols);
  Node n;
  n.val = std::move(out);
  n.op = Op::kMulRows;
  n.a = x.idx;
  n.b = v.idx;
  n.requires_grad = wants(x.idx) || wants(v.idx);
  return push(std::move(n));
}

Value Tape::scale(Value s, Value x) {
  const Tensor& ts = cnode(s).val;
  if (ts.size() != 1) throw ShapeError("scale: scalar must have size 1, got " + ts.shape_str());
  const Tensor& tx = cnode(x).val;
  Tensor out = tx;
  kernels::active().scale(ts[0], out.data(), out.size());
  Node n;
  n.val = std::move(out);
  n.op = Op::kScale;
  n.a = s.idx;
  n.b = x.idx;
  n.requires_grad = wants(s.idx) || wants(x.idx);
  return push(std::move(n));
}

Value Tape::unary(Op op, Value x, Tensor out) {
  Node n;
  n.val = std::move(out);
  n.op = op;
  n.a = x.idx;
  n.requires_grad = wants(x.idx);
  return push(std::move(n));
}

Value Tape::relu(Value x) {
  const Tensor& tx = cnode(x).val;
  for (std::size_t i = 0; i < tx.size(); ++i) {
    const double a = std::fabs(tx[i]);
    if (a < min_abs_relu_in_) min_abs_relu_in_ = a;
  }
  Tensor out(tx.shape());
  kernels::active().relu(tx.data(), out.data(), tx.size());
  return unary(Op::kRelu, x, std::move(out));
}

Value Tape::sigmoid(Value x) {
  const Tensor& tx = cnode(x).val;
  Tensor out(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-tx[i]));
  return unary(Op::kSigmoid, x, std::move(out));
}

Value Tape::tanh(Value x) {
  const Tensor& tx = cnode(x).val;
  Tensor out(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) out[i] = std::tanh(tx[i]);
  return unary(Op::kTanh, x, std::move(out));
}

Value Tape::softmax_rows(Value x) {
  const Tensor& tx = cnode(x).val;
  Tensor out(tx.shape());
  const std::size_t rows = tx.rows(), cols = tx.cols();
  if (cols == 0) throw ShapeError("softmax: empty rows");
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = tx.data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = in[0];
    for (std::size_t j = 1; j < cols; ++j) mx = in[j] > mx ? in[j] : mx;
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
  }
  return unary(Op::kSoftmax, x, std::move(out));
}

Value Tape::concat(const std::vector<Value>& parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  std::size_t total = 0;
  bool rg = false;
  for (Value p : parts) {
    const Tensor& t = cnode(p).val;
    if (t.ndim() != 1) throw ShapeError("concat: parts must be rank-1, got " + t.shape_str());
    total += t.size();
    rg = rg || wants(p.idx);
  }
  Tensor out({total});
  std::size_t off = 0;
  for (Value p : parts) {
    const Tensor& t = cnode(p).val;
    for (std::size_t i = 0; i < t.size(); ++i) out[off + i] = t[i];
    off += t.size();
  }
  Node n;
  n.val = std::move(out);
  n.op = Op::kConcat;
  n.requires_grad = rg;
  n.list.reserve(parts.size());
  for (Value p : parts) n.list.push_back(p.idx);
  return push(std::move(n));
}

Value Tape::concat_cols(Value a, Value b) {
  const Tensor& ta = cnode(a).val;
  const Tensor& tb = cnode(b).val;
  if (ta.ndim() != 2 || tb.ndim() != 2 || ta.rows() != tb.rows())
    throw ShapeError("concat_cols: " + ta.shape_str() + " vs " + tb.shape_str());
  const std::size_t rows = ta.rows(), p = ta.cols(), q = tb.cols();
  Tensor out({rows, p + q});
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * (p + q);
    const double* ra = ta.data() + r * p;
    const double* rb = tb.data() + r * q;
    for (std::size_t j = 0; j < p; ++j) o[j] = ra[j];
    for (std::size_t j = 0; j < q; ++j) o[p + j] = rb[j];
  }
  Node n;
  n.val = std::move(out);
  n.op = Op::kConcatCols;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = wants(a.idx) || wants(b.idx);
  return push(std::move(n));
}

Value Tape::slice_rows(Value x, std::size_t r) {
  const Tensor& tx = cnode(x).val;
  if (tx.ndim() != 2 || r == 0 || r > tx.rows())
    throw ShapeError("slice_rows: cannot take " + std::to_string(r) + " rows of " +
                     tx.shape_str());
  const std::size_t cols = tx.cols();
  Tensor out({r, cols});
  for (std::size_t i = 0; i < r * cols; ++i) out[i] = tx[i];
  Node n;
  n.val = std::move(out);
  n.op = Op::kSliceRows;
  n.a = x.idx;
  n.live = r;
  n.requires_grad = wants(x.idx);
  return push(std::move(n));
}

Value Tape::row(Value x, std::size_t r) {
  const Tensor& tx = cnode(x).val;
  if (tx.ndim() != 2 || r >= tx.rows())
    throw ShapeError("row: row " + std::to_string(r) + " out of " + tx.shape_str());
  const std::size_t cols = tx.cols();
  Tensor out({cols});
  for (std::size_t j = 0; j < cols; ++j) out[j] = tx[r * cols + j];
  Node n;
  n.val = std::move(out);
  n.op = Op::kRow;
  n.a = x.idx;
  n.live = r;
  n.requires_grad = wants(x.idx);
  return push(std::move(n));
}

Value Tape::element(Value x, std::size_t i) {
  const Tensor& tx = cnode(x).val;
  if (i >= tx.size())
    throw ShapeError("element: index " + std::to_string(i) + " out of " + tx.shape_str());
  Node n;
  n.val = Tensor::scalar(tx[i]);
  n.op = Op::kElement;
  n.a = x.idx;
  n.live = i;
  n.requires_grad = wants(x.idx);
  return push(std::move(n));
}

Value Tape::mean_pool_rows(Value x, std::size_t live) {
  const Tensor& tx = cnode(x).val;
  if (tx.ndim() != 2) throw ShapeError("mean_pool_rows: need rank-2, got " + tx.shape_str());
  if (live == 0 || live > tx.rows())
    throw ShapeError("mean_pool_rows: live row count " + std::to_string(live) +
                     " out of range for " + tx.shape_str());
  const std::size_t cols = tx.cols();
  Tensor out({cols});
  for (std::size_t r = 0; r < live; ++r)
    kernels::active().axpy(1.0, tx.data() + r * cols, out.data(), cols);
  kernels::active().scale(1.0 / static_cast<double>(live), out.data(), cols);
  Node n;
  n.val = std::move(out);
  n.op = Op::kMeanPool;
  n.a = x.idx;
  n.live = live;
  n.requires_grad = wants(x.idx);
  return push(std::move(n));
}

Value Tape::mse(Value a, Value b) {
  const Tensor& ta = cnode(a).val;
  const Tensor& tb = cnode(b).val;
  check_same_shape(ta, tb, "mse");
  if (ta.size() == 0) throw ShapeError("mse: empty tensors");
  const double s = kernels::active().sq_diff_sum(ta.data(), tb.data(), ta.size());
  Node n;
  n.val = Tensor::scalar(s / static_cast<double>(ta.size()));
  n.op = Op::kMse;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = wants(a.idx) || wants(b.idx);
  return push(std::move(n));
}

Value Tape::cross_entropy(Value probs, std::vector<std::size_t> labels) {
  const Tensor& tp = cnode(probs).val;
  const std::size_t rows = tp.rows(), cols = tp.cols();
  if (labels.size() != rows)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  double s = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) throw DataError("cross_entropy: label out of range");
    s -= std::log(tp.data()[r * cols + labels[r]]);
  }
  Node n;
  n.val = Tensor::scalar(s / static_cast<double>(rows));
  n.op = Op::kCrossEntropy;
  n.a = probs.idx;
  n.labels = std::move(labels);
  n.requires_grad = wants(probs.idx);
  return push(std::move(n));
}

Value Tape::sum_of_squares(const std::vector<Value>& xs) {
  if (xs.empty()) throw ShapeError("sum_of_squares: no inputs");
  double s = 0.0;
  bool rg = false;
  for (Value x : xs) {
    const Tensor& t = cnode(x).val;
    s += kernels::active().dot(t.data(), t.data(), t.size());
    rg = rg || wants(x.idx);
  }
  Node n;
  n.val = Tensor::scalar(s);
  n.op = Op::kSumSquares;
  n.requires_grad = rg;
  n.list.reserve(xs.size());
  for (Value x : xs) n.list.push_back(x.idx);
  return push(std::move(n));
}

void Tape::backward(Value loss) {
  if (!loss.valid() || static_cast<std::size_t>(loss.idx) >= nodes_.size())
    throw DataError("backward: invalid loss handle");
  Node& ln = node(loss);
  if (ln.val.size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + ln.val.shape_str());
  ++g_backward_generation;
  if (!ln.requires_grad) return;  // constant loss: all gradients stay zero
  grad_of(loss.idx)[0] += 1.0;

  const auto& K = kernels::active();
  for (std::int32_t idx = loss.idx; idx >= 0; --idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kLeaf:
        K.axpy(1.0, g.data(), n.param->grad.data(), g.size());
        break;
      case Op::kMatMul: {
        const Tensor& ta = nodes_[n.a].val;
        const Tensor& tb = nodes_[n.b].val;
        const std::size_t m = ta.rows(), k = ta.cols(), nn = tb.cols();
        if (wants(n.a)) K.matmul_nt(g.data(), tb.data(), grad_of(n.a).data(), m, nn, k);
        if (wants(n.b)) K.matmul_tn(ta.data(), g.data(), grad_of(n.b).data(), k, m, nn);
        break;
      }
      case Op::kAdd:
        if (wants(n.a)) K.axpy(1.0, g.data(), grad_of(n.a).data(), g.size());
        if (wants(n.b)) K.axpy(1.0, g.data(), grad_of(n.b).data(), g.size());
        break;
      case Op::kSub:
        if (wants(n.a)) K.axpy(1.0, g.data(), grad_of(n.a).data(), g.size());
        if (wants(n.b)) K.axpy(-1.0, g.data(), grad_of(n.b).data(), g.size());
        break;
      case Op::kAddBias: {
        if (wants(n.a)) K.axpy(1.0, g.data(), grad_of(n.a).data(), g.size());
        if (wants(n.b)) {
          Tensor& db = grad_of(n.b);
          const std::size_t rows = n.val.rows(), cols = n.val.cols();
          for (std::size_t r = 0; r < rows; ++r)
            K.axpy(1.0, g.data() + r * cols, db.data(), cols);
        }
        break;
      }
      case Op::kMul:
        if (wants(n.a)) K.mul_acc(g.data(), nodes_[n.b].val.data(), grad_of(n.a).data(), g.size());
        if (wants(n.b)) K.mul_acc(g.data(), nodes_[n.a].val.data(), grad_of(n.b).data(), g.size());
        break;
      case Op::kMulRows: {
        const Tensor& tx = nodes_[n.a].val;
        const Tensor& tv = nodes_[n.b].val;
        const std::size_t rows = tx.rows(), cols = tx.cols();
        if (wants(n.a)) {
          Tensor& da = grad_of(n.a);
          for (std::size_t r = 0; r < rows; ++r)
            K.mul_acc(g.data() + r * cols, tv.data(), da.data() + r * cols, cols);
        }
        if (wants(n.b)) {
          Tensor& dv = grad_of(n.b);
          for (std::size_t r = 0; r < rows; ++r)
            K.mul_acc(g.data() + r * cols, tx.data() + r * cols, dv.data(), cols);
        }
        break;
      }
      case Op::kScale: {
        const double sv = nodes_[n.a].val[0];
        const Tensor& tx = nodes_[n.b].val;
        if (wants(n.a)) grad_of(n.a)[0] += K.dot(tx.data(), g.data(), g.size());
        if (wants(n.b)) K.axpy(sv, g.data(), grad_of(n.b).data(), g.size());
        break;
      }
      case Op::kRelu:
        if (wants(n.a))
          K.relu_grad(nodes_[n.a].val.data(), g.data(), grad_of(n.a).data(), g.size());
        break;
      case Op::kSigmoid:
        if (wants(n.a)) {
          Tensor& da = grad_of(n.a);
          const Tensor& y = n.val;
          for (std::size_t i = 0; i < y.size(); ++i)
            da[i] += g[i] * y[i] * (1.0 - y[i]);
        }
        break;
      case Op::kTanh:
        if (wants(n.a)) {
          Tensor& da = grad_of(n.a);
          const Tensor& y = n.val;
          for (std::size_t i = 0; i < y.size(); ++i)
            da[i] += g[i] * (1.0 - y[i] * y[i]);
        }
        break;
      case Op::kSoftmax:
        if (wants(n.a)) {
          Tensor& da = grad_of(n.a);
          const Tensor& y = n.val;
          const std::size_t rows = y.rows(), cols = y.cols();
          for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = y.data() + r * cols;
            const double* gr = g.data() + r * cols;
            const double inner = K.dot(gr, yr, cols);
            double* dr = da.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - inner);
          }
        }
        break;
      case Op::kConcat: {
        std::size_t off = 0;
        for (std::int32_t dep : n.list) {
          const std::size_t len = nodes_[dep].val.size();
          if (wants(dep)) K.axpy(1.0, g.data() + off, grad_of(dep).data(), len);
          off += len;
        }
        break;
      }
      case Op::kConcatCols: {
        const std::size_t rows = n.val.rows();
        const std::size_t p = nodes_[n.a].val.cols(), q = nodes_[n.b].val.cols();
        if (wants(n.a)) {
          Tensor& da = grad_of(n.a);
          for (std::size_t r = 0; r < rows; ++r)
            K.axpy(1.0, g.data() + r * (p + q), da.data() + r * p, p);
        }
        if (wants(n.b)) {
          Tensor& db = grad_of(n.b);
          for (std::size_t r = 0; r < rows; ++r)
            K.axpy(1.0, g.data() + r * (p + q) + p, db.data() + r * q, q);
        }
        break;
      }
      case Op::kSliceRows:
        if (wants(n.a)) K.axpy(1.0, g.data(), grad_of(n.a).data(), g.size());
        break;
      case Op::kRow:
        if (wants(n.a))
          K.axpy(1.0, g.data(), grad_of(n.a).data() + n.live * n.val.size(), g.size());
        break;
      case Op::kElement:
        if (wants(n.a)) grad_of(n.a)[n.live] += g[0];
        break;
      case Op::kMeanPool:
        if (wants(n.a)) {
          Tensor& da = grad_of(n.a);
          const std::size_t cols = n.val.size();
          const double w = 1.0 / static_cast<double>(n.live);
          for (std::size_t r = 0; r < n.live; ++r)
            K.axpy(w, g.data(), da.data() + r * cols, cols);
        }
        break;
      case Op::kMse: {
        const Tensor& ta = nodes_[n.a].val;
        const Tensor& tb = nodes_[n.b].val;
        const double c = g[0] * 2.0 / static_cast<double>(ta.size());
        if (wants(n.a)) {
          Tensor& da = grad_of(n.a);
          for (std::size_t i = 0; i < ta.size(); ++i) da[i] += c * (ta[i] - tb[i]);
        }
        if (wants(n.b)) {
          Tensor& db = grad_of(n.b);
          for (std::size_t i = 0; i < ta.size(); ++i) db[i] -= c * (ta[i] - tb[i]);
        }
        break;
      }
      case Op::kCrossEntropy:
        if (wants(n.a)) {
          Tensor& dp = grad_of(n.a);
          const Tensor& tp = nodes_[n.a].val;
          const std::size_t rows = tp.rows(), cols = tp.cols();
          const double c = g[0] / static_cast<double>(rows);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t at = r * cols + n.labels[r];
            dp[at] -= c / tp[at];
          }
        }
        break;
      case Op::kSumSquares:
        for (std::int32_t dep : n.list) {
          if (!wants(dep)) continue;
          const Tensor& x = nodes_[dep].val;
          K.axpy(2.0 * g[0], x.data(), grad_of(dep).data(), x.size());
        }
        break;
    }
  }
}

}  // namespace casciff
