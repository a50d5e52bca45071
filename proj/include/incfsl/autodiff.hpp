#pragma once

#include <cstdint>
#include <vector>

#include "incfsl/core_types.hpp"

namespace incfsl::ad {

// Reverse-mode tape over dense Eigen matrices. Nodes are append-only, so the
// creation order is already a topological order and backward() is a single
// reverse sweep. One tape per training step / episode; values are handles.
//
// Scalars are represented as 1x1 matrices. backward() must be seeded from a
// 1x1 node.

struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  // ---- leaves -------------------------------------------------------------
  Value constant(Mat m);            // no gradient
  Value param(Mat m);               // gradient accumulated in backward()
  Value scalar_param(double v);     // 1x1 param

  // ---- arithmetic ---------------------------------------------------------
  Value add(Value a, Value b);          // same shape
  Value sub(Value a, Value b);          // same shape
  Value mul_elem(Value a, Value b);     // same shape, Hadamard
  Value scalar_mul(Value a, double c);  // c * a
  Value matmul(Value a, Value b);
  Value transpose(Value a);
  Value scale_by(Value a, Value s);  // s is 1x1; broadcast multiply

  // ---- shape --------------------------------------------------------------
  Value slice_cols(Value a, int begin, int count);
  Value concat_cols(Value a, Value b);
  Value add_rowvec(Value a, Value v);    // v is 1 x cols(a), broadcast over rows
  Value div_by_rowvec(Value a, Value v); // entry (i,j) -> a(i,j) / v(0,j)

  // ---- nonlinear ----------------------------------------------------------
  Value tanh(Value a);
  Value softmax_rows(Value a);  // max-shifted, numerically stable
  // log(max(a, eps)); entries at or below eps get zero gradient and are counted.
  Value log_clamped(Value a, double eps = 1e-12);
  // Rows scaled to unit L2 norm; norms are floored at eps before division.
  Value l2_normalize_rows(Value a, double eps = 1e-12);

  // ---- reductions / indexing ----------------------------------------------
  Value col_sum(Value a);   // 1 x cols
  Value sum_all(Value a);   // 1 x 1
  Value mean_all(Value a);  // 1 x 1
  Value row_logsumexp(Value a);                              // n x 1
  Value gather_per_row(Value a, const std::vector<int>& j);  // n x 1, a(i, j[i])

  // Identity forward, zero backward.
  Value detach(Value a);

  // ---- access ---------------------------------------------------------------
  const Mat& val(Value v) const;
  double scalar(Value v) const;  // value of a 1x1 node
  bool requires_grad(Value v) const;
  int clamp_events() const { return clamp_events_; }
  size_t size() const { return nodes_.size(); }

  // Accumulates d(root)/d(node) for every node that requires grad.
  // root must be 1x1. May be called once per tape.
  void backward(Value root);
  const Mat& grad(Value v) const;  // valid after backward(); zeros if untouched

 private:
  enum class Op {
    Constant, Param, Add, Sub, MulElem, ScalarMul, MatMul, Transpose, ScaleBy,
    SliceCols, ConcatCols, AddRowVec, DivByRowVec, Tanh, SoftmaxRows, LogClamped,
    NormalizeRows, ColSum, SumAll, MeanAll, RowLogSumExp, GatherPerRow, Detach,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    Mat value;
    double c = 0.0;   // scalar payload (ScalarMul factor, clamp eps, norm eps)
    int i0 = 0, i1 = 0;       // slice begin/count
    std::vector<int> index;   // gather indices
    bool needs_grad = false;
  };

  Value push(Node n);
  Value binary(Op op, Value a, Value b);
  const Node& node(Value v) const;

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  bool ran_backward_ = false;
  int clamp_events_ = 0;
};

}  // namespace incfsl::ad
