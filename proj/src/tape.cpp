#include "imgmatch/tape.hpp"

#include <string>

namespace imgmatch::numcore {

const Tensor64& Var::value() const {
  if (tape_ == nullptr) fail(ErrorKind::kDomain, "value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    fail(ErrorKind::kDomain, "Var does not belong to this tape");
  }
}

const TapeNode& Tape::at(Var v) const {
  check_owner(v);
  return nodes_[v.id_];
}

const Tensor64& Tape::value(Var v) const { return at(v).value; }
const Tensor64& Tape::grad(Var v) const { return at(v).grad; }

Var Tape::leaf(Tensor64 value) {
  TapeNode n;
  n.op = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor64 value) {
  TapeNode n;
  n.op = OpKind::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

namespace {

TapeNode unary(OpKind op, const TapeNode& a, std::size_t ida) {
  TapeNode n;
  n.op = op;
  n.parents[0] = ida;
  n.parent_count = 1;
  n.requires_grad = a.requires_grad;
  return n;
}

TapeNode binary(OpKind op, const TapeNode& a, std::size_t ida,
                const TapeNode& b, std::size_t idb) {
  TapeNode n;
  n.op = op;
  n.parents[0] = ida;
  n.parents[1] = idb;
  n.parent_count = 2;
  n.requires_grad = a.requires_grad || b.requires_grad;
  return n;
}

}  // namespace

Var Tape::matmul(Var a, Var b, Transpose tb) {
  TapeNode n = binary(OpKind::kMatmul, at(a), a.id_, at(b), b.id_);
  n.value = numcore::matmul(at(a).value, at(b).value, tb);
  n.transpose = tb;
  return push(std::move(n));
}

Var Tape::row_softmax(Var m, const std::vector<bool>* column_mask) {
  TapeNode n = unary(OpKind::kRowSoftmax, at(m), m.id_);
  n.value = numcore::row_softmax(at(m).value, column_mask);
  if (column_mask != nullptr) n.column_mask = *column_mask;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  TapeNode n = binary(OpKind::kAdd, at(a), a.id_, at(b), b.id_);
  n.value = elementwise(ElementwiseKind::kAdd, at(a).value, at(b).value);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  TapeNode n = binary(OpKind::kSub, at(a), a.id_, at(b), b.id_);
  n.value = elementwise(ElementwiseKind::kSub, at(a).value, at(b).value);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  TapeNode n = binary(OpKind::kMul, at(a), a.id_, at(b), b.id_);
  n.value = elementwise(ElementwiseKind::kMul, at(a).value, at(b).value);
  return push(std::move(n));
}

Var Tape::add(Var a, double s) {
  TapeNode n = unary(OpKind::kAddScalar, at(a), a.id_);
  n.value = elementwise(ElementwiseKind::kAdd, at(a).value, s);
  n.scalar = s;
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  TapeNode n = unary(OpKind::kScale, at(a), a.id_);
  n.value = elementwise(ElementwiseKind::kScale, at(a).value, s);
  n.scalar = s;
  return push(std::move(n));
}

Var Tape::neg(Var a) {
  TapeNode n = unary(OpKind::kNeg, at(a), a.id_);
  n.value = elementwise(ElementwiseKind::kNeg, at(a).value, 0.0);
  return push(std::move(n));
}

Var Tape::masked_sum(Var m, std::vector<std::size_t> rows,
                     std::vector<std::size_t> cols) {
  const Tensor64& mv = at(m).value;
  if (mv.rank() != 2) {
    fail(ErrorKind::kShape,
         "masked_sum expects a matrix, got " + shape_string(mv.shape()));
  }
  for (std::size_t r : rows) {
    if (r >= mv.dim(0)) fail(ErrorKind::kShape, "masked_sum row out of range");
  }
  for (std::size_t c : cols) {
    if (c >= mv.dim(1)) fail(ErrorKind::kShape, "masked_sum col out of range");
  }
  double total = 0.0;
  for (std::size_t r : rows) {
    double row_total = 0.0;
    for (std::size_t c : cols) row_total += mv.at(r, c);
    total += row_total;
  }
  TapeNode n = unary(OpKind::kMaskedSum, at(m), m.id_);
  n.value = Tensor64::scalar(total);
  n.rows = std::move(rows);
  n.cols = std::move(cols);
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  double total = 0.0;
  for (double v : at(a).value.data()) total += v;
  TapeNode n = unary(OpKind::kSum, at(a), a.id_);
  n.value = Tensor64::scalar(total);
  return push(std::move(n));
}

Var Tape::div(Var a, Var s) {
  if (at(s).value.size() != 1) {
    fail(ErrorKind::kShape, "div expects a scalar divisor, got " +
                                shape_string(at(s).value.shape()));
  }
  const double denom = at(s).value[0];
  TapeNode n = binary(OpKind::kDivScalar, at(a), a.id_, at(s), s.id_);
  n.value = Tensor64(at(a).value.shape());
  for (std::size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = at(a).value[i] / denom;
  return push(std::move(n));
}

Var Tape::mean(Var a) {
  double total = 0.0;
  for (double v : at(a).value.data()) total += v;
  TapeNode n = unary(OpKind::kMean, at(a), a.id_);
  n.value = Tensor64::scalar(total / static_cast<double>(at(a).value.size()));
  return push(std::move(n));
}

Var Tape::squared_error(Var a, Var b) {
  const Tensor64& av = at(a).value;
  const Tensor64& bv = at(b).value;
  if (av.shape() != bv.shape()) {
    fail(ErrorKind::kShape, "squared_error shape mismatch: " +
                                shape_string(av.shape()) + " vs " +
                                shape_string(bv.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    total += d * d;
  }
  TapeNode n = binary(OpKind::kSquaredError, at(a), a.id_, at(b), b.id_);
  n.value = Tensor64::scalar(total / static_cast<double>(av.size()));
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (nodes_[loss.id_].value.size() != 1) {
    fail(ErrorKind::kDomain,
         "backward requires a scalar loss, got shape " +
             shape_string(nodes_[loss.id_].value.shape()));
  }
  for (TapeNode& n : nodes_) n.grad = Tensor64(n.value.shape(), 0.0);
  nodes_[loss.id_].grad[0] = 1.0;

  for (std::size_t k = loss.id_ + 1; k-- > 0;) {
    TapeNode& n = nodes_[k];
    if (!n.requires_grad || n.parent_count == 0) continue;
    const Tensor64& g = n.grad;
    TapeNode& a = nodes_[n.parents[0]];
    TapeNode* b = n.parent_count > 1 ? &nodes_[n.parents[1]] : nullptr;

    switch (n.op) {
      case OpKind::kMatmul: {
        // C = A B      -> dA = dC B^T,  dB = A^T dC
        // C = A B^T    -> dA = dC B,    dB = dC^T A
        if (n.transpose == Transpose::kB) {
          if (a.requires_grad) {
            Tensor64 da = numcore::matmul(g, b->value);
            for (std::size_t i = 0; i < da.size(); ++i) a.grad[i] += da[i];
          }
          if (b->requires_grad) {
            Tensor64 db = numcore::matmul(transpose(g), a.value);
            for (std::size_t i = 0; i < db.size(); ++i) b->grad[i] += db[i];
          }
        } else {
          if (a.requires_grad) {
            Tensor64 da = numcore::matmul(g, b->value, Transpose::kB);
            for (std::size_t i = 0; i < da.size(); ++i) a.grad[i] += da[i];
          }
          if (b->requires_grad) {
            Tensor64 db = numcore::matmul(transpose(a.value), g);
            for (std::size_t i = 0; i < db.size(); ++i) b->grad[i] += db[i];
          }
        }
        break;
      }
      case OpKind::kRowSoftmax: {
        if (!a.requires_grad) break;
        const Tensor64& y = n.value;
        const std::size_t p = y.dim(0);
        const std::size_t q = y.dim(1);
        for (std::size_t i = 0; i < p; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < q; ++j) dot += g.at(i, j) * y.at(i, j);
          for (std::size_t j = 0; j < q; ++j)
            a.grad.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
        }
        break;
      }
      case OpKind::kAdd:
        if (a.requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
        if (b->requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i) b->grad[i] += g[i];
        break;
      case OpKind::kSub:
        if (a.requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
        if (b->requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i) b->grad[i] -= g[i];
        break;
      case OpKind::kMul:
        if (a.requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i)
            a.grad[i] += g[i] * b->value[i];
        if (b->requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i)
            b->grad[i] += g[i] * a.value[i];
        break;
      case OpKind::kAddScalar:
        for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
        break;
      case OpKind::kScale:
        for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += n.scalar * g[i];
        break;
      case OpKind::kNeg:
        for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] -= g[i];
        break;
      case OpKind::kMaskedSum:
        for (std::size_t r : n.rows)
          for (std::size_t c : n.cols) a.grad.at(r, c) += g[0];
        break;
      case OpKind::kSum:
        for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += g[0];
        break;
      case OpKind::kDivScalar: {
        const double s = b->value[0];
        if (a.requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] / s;
        if (b->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i)
            acc += g[i] * a.value[i];
          b->grad[0] -= acc / (s * s);
        }
        break;
      }
      case OpKind::kMean: {
        const double inv = 1.0 / static_cast<double>(a.value.size());
        for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += g[0] * inv;
        break;
      }
      case OpKind::kSquaredError: {
        const double k = 2.0 * g[0] / static_cast<double>(a.value.size());
        for (std::size_t i = 0; i < a.value.size(); ++i) {
          const double d = k * (a.value[i] - b->value[i]);
          if (a.requires_grad) a.grad[i] += d;
          if (b->requires_grad) b->grad[i] -= d;
        }
        break;
      }
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
    }
  }
}

}  // namespace imgmatch::numcore
