#pragma once

#include <cstddef>
#include <vector>

#include "imgmatch/tensor.hpp"

namespace imgmatch::numcore {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor64& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(const Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind {
  kLeaf,
  kConstant,
  kMatmul,
  kRowSoftmax,
  kAdd,
  kSub,
  kMul,
  kAddScalar,
  kScale,
  kNeg,
  kMaskedSum,
  kSum,
  kDivScalar,
  kMean,
  kSquaredError,
};

struct TapeNode {
  OpKind op = OpKind::kConstant;
  std::size_t parents[2] = {0, 0};
  int parent_count = 0;
  Tensor64 value;
  Tensor64 grad;
  bool requires_grad = false;

  // Op payloads; only the fields relevant to `op` are populated.
  double scalar = 0.0;
  Transpose transpose = Transpose::kNone;
  std::vector<bool> column_mask;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
// node list is already a topological order and backward is a reverse sweep.
// Single owner: one backward pass at a time.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor64 value);
  Var constant(Tensor64 value);

  Var matmul(Var a, Var b, Transpose tb = Transpose::kNone);
  Var row_softmax(Var m, const std::vector<bool>* column_mask = nullptr);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add(Var a, double s);
  Var scale(Var a, double s);
  Var neg(Var a);

  // Sum of m[r, c] over r in rows, c in cols. Returns a scalar.
  Var masked_sum(Var m, std::vector<std::size_t> rows,
                 std::vector<std::size_t> cols);
  Var sum(Var a);
  // a / s where s is a scalar node.
  Var div(Var a, Var s);
  Var mean(Var a);
  // mean((a - b)^2)
  Var squared_error(Var a, Var b);

  // Zeroes every gradient accumulator, then back-propagates d(loss)/d(node).
  void backward(Var loss);

  const Tensor64& grad(Var v) const;
  const Tensor64& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  const TapeNode& node(Var v) const { return nodes_.at(v.id()); }

 private:
  Var push(TapeNode node);
  const TapeNode& at(Var v) const;
  void check_owner(Var v) const;

  std::vector<TapeNode> nodes_;
};

}  // namespace imgmatch::numcore
