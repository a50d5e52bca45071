#include "incfsl/autodiff.hpp"

#include <cmath>

namespace incfsl::ad {

Value Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Value v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw std::logic_error("Tape: invalid value handle");
  return nodes_[static_cast<size_t>(v.id)];
}

const Mat& Tape::val(Value v) const { return node(v).value; }

double Tape::scalar(Value v) const {
  const Mat& m = val(v);
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("Tape::scalar: node is not 1x1");
  return m(0, 0);
}

bool Tape::requires_grad(Value v) const { return node(v).needs_grad; }

Value Tape::constant(Mat m) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(m);
  return push(std::move(n));
}

Value Tape::param(Mat m) {
  Node n;
  n.op = Op::Param;
  n.value = std::move(m);
  n.needs_grad = true;
  return push(std::move(n));
}

Value Tape::scalar_param(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return param(std::move(m));
}

Value Tape::binary(Op op, Value a, Value b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::MulElem:
      if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols())
        throw ShapeError("Tape: elementwise op on mismatched shapes");
      n.value = (op == Op::Add)   ? (na.value + nb.value).eval()
                : (op == Op::Sub) ? (na.value - nb.value).eval()
                                  : na.value.cwiseProduct(nb.value).eval();
      break;
    case Op::MatMul:
      if (na.value.cols() != nb.value.rows()) throw ShapeError("Tape: matmul shape mismatch");
      n.value = na.value * nb.value;
      break;
    case Op::ScaleBy:
      if (nb.value.rows() != 1 || nb.value.cols() != 1)
        throw ShapeError("Tape: scale_by expects a 1x1 scalar node");
      n.value = na.value * nb.value(0, 0);
      break;
    case Op::AddRowVec:
      if (nb.value.rows() != 1 || nb.value.cols() != na.value.cols())
        throw ShapeError("Tape: add_rowvec expects 1 x cols(a)");
      n.value = na.value.rowwise() + nb.value.row(0);
      break;
    case Op::ConcatCols:
      if (na.value.rows() != nb.value.rows()) throw ShapeError("Tape: concat_cols row mismatch");
      n.value.resize(na.value.rows(), na.value.cols() + nb.value.cols());
      n.value.leftCols(na.value.cols()) = na.value;
      n.value.rightCols(nb.value.cols()) = nb.value;
      break;
    case Op::DivByRowVec: {
      if (nb.value.rows() != 1 || nb.value.cols() != na.value.cols())
        throw ShapeError("Tape: div_by_rowvec expects 1 x cols(a)");
      n.value = na.value.array().rowwise() / nb.value.row(0).array();
      break;
    }
    default:
      throw std::logic_error("Tape::binary: not a binary op");
  }
  return push(std::move(n));
}

Value Tape::add(Value a, Value b) { return binary(Op::Add, a, b); }
Value Tape::sub(Value a, Value b) { return binary(Op::Sub, a, b); }
Value Tape::mul_elem(Value a, Value b) { return binary(Op::MulElem, a, b); }
Value Tape::matmul(Value a, Value b) { return binary(Op::MatMul, a, b); }
Value Tape::scale_by(Value a, Value s) { return binary(Op::ScaleBy, a, s); }
Value Tape::add_rowvec(Value a, Value v) { return binary(Op::AddRowVec, a, v); }
Value Tape::concat_cols(Value a, Value b) { return binary(Op::ConcatCols, a, b); }
Value Tape::div_by_rowvec(Value a, Value v) { return binary(Op::DivByRowVec, a, v); }

Value Tape::scalar_mul(Value a, double c) {
  const Node& na = node(a);
  Node n;
  n.op = Op::ScalarMul;
  n.a = a.id;
  n.c = c;
  n.needs_grad = na.needs_grad;
  n.value = na.value * c;
  return push(std::move(n));
}

Value Tape::transpose(Value a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::Transpose;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value = na.value.transpose();
  return push(std::move(n));
}

Value Tape::slice_cols(Value a, int begin, int count) {
  const Node& na = node(a);
  if (begin < 0 || count < 0 || begin + count > na.value.cols())
    throw ShapeError("Tape: slice_cols out of range");
  Node n;
  n.op = Op::SliceCols;
  n.a = a.id;
  n.i0 = begin;
  n.i1 = count;
  n.needs_grad = na.needs_grad;
  n.value = na.value.middleCols(begin, count);
  return push(std::move(n));
}

Value Tape::tanh(Value a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::Tanh;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value = na.value.array().tanh();
  return push(std::move(n));
}

Value Tape::softmax_rows(Value a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::SoftmaxRows;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value.resizeLike(na.value);
  for (Eigen::Index i = 0; i < na.value.rows(); ++i) {
    const double m = na.value.row(i).maxCoeff();
    Eigen::ArrayXd e = (na.value.row(i).array() - m).exp();
    n.value.row(i) = (e / e.sum()).matrix();
  }
  return push(std::move(n));
}

Value Tape::log_clamped(Value a, double eps) {
  const Node& na = node(a);
  Node n;
  n.op = Op::LogClamped;
  n.a = a.id;
  n.c = eps;
  n.needs_grad = na.needs_grad;
  n.value.resizeLike(na.value);
  for (Eigen::Index i = 0; i < na.value.rows(); ++i)
    for (Eigen::Index j = 0; j < na.value.cols(); ++j) {
      const double x = na.value(i, j);
      if (x <= eps) ++clamp_events_;
      n.value(i, j) = std::log(std::max(x, eps));
    }
  return push(std::move(n));
}

Value Tape::l2_normalize_rows(Value a, double eps) {
  const Node& na = node(a);
  Node n;
  n.op = Op::NormalizeRows;
  n.a = a.id;
  n.c = eps;
  n.needs_grad = na.needs_grad;
  n.value.resizeLike(na.value);
  for (Eigen::Index i = 0; i < na.value.rows(); ++i) {
    const double norm = std::max(na.value.row(i).norm(), eps);
    n.value.row(i) = na.value.row(i) / norm;
  }
  return push(std::move(n));
}

Value Tape::col_sum(Value a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::ColSum;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value = na.value.colwise().sum();
  return push(std::move(n));
}

Value Tape::sum_all(Value a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::SumAll;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value = Mat::Constant(1, 1, na.value.sum());
  return push(std::move(n));
}

Value Tape::mean_all(Value a) {
  const Node& na = node(a);
  if (na.value.size() == 0) throw ShapeError("Tape: mean_all of empty matrix");
  Node n;
  n.op = Op::MeanAll;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value = Mat::Constant(1, 1, na.value.mean());
  return push(std::move(n));
}

Value Tape::row_logsumexp(Value a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::RowLogSumExp;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value.resize(na.value.rows(), 1);
  for (Eigen::Index i = 0; i < na.value.rows(); ++i) {
    const double m = na.value.row(i).maxCoeff();
    n.value(i, 0) = m + std::log((na.value.row(i).array() - m).exp().sum());
  }
  return push(std::move(n));
}

Value Tape::gather_per_row(Value a, const std::vector<int>& j) {
  const Node& na = node(a);
  if (static_cast<Eigen::Index>(j.size()) != na.value.rows())
    throw ShapeError("Tape: gather_per_row index count != rows");
  Node n;
  n.op = Op::GatherPerRow;
  n.a = a.id;
  n.index = j;
  n.needs_grad = na.needs_grad;
  n.value.resize(na.value.rows(), 1);
  for (Eigen::Index i = 0; i < na.value.rows(); ++i) {
    const int c = j[static_cast<size_t>(i)];
    if (c < 0 || c >= na.value.cols()) throw ShapeError("Tape: gather_per_row index out of range");
    n.value(i, 0) = na.value(i, c);
  }
  return push(std::move(n));
}

Value Tape::detach(Value a) {
  Node n;
  n.op = Op::Detach;
  n.a = a.id;
  n.needs_grad = false;
  n.value = node(a).value;
  return push(std::move(n));
}

void Tape::backward(Value root) {
  if (ran_backward_) throw std::logic_error("Tape::backward: already ran");
  const Node& r = node(root);
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw ShapeError("Tape::backward: root must be 1x1");
  ran_backward_ = true;

  grads_.assign(nodes_.size(), Mat());
  auto g = [&](int id) -> Mat& {
    Mat& m = grads_[static_cast<size_t>(id)];
    if (m.size() == 0) m = Mat::Zero(nodes_[static_cast<size_t>(id)].value.rows(),
                                     nodes_[static_cast<size_t>(id)].value.cols());
    return m;
  };

  g(root.id)(0, 0) = 1.0;

  for (int id = root.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) continue;
    const Mat& gy = grads_[static_cast<size_t>(id)];
    if (gy.size() == 0) continue;  // node not on any path to root

    const auto needs = [&](int in) {
      return in >= 0 && nodes_[static_cast<size_t>(in)].needs_grad;
    };
    const Mat& va = n.a >= 0 ? nodes_[static_cast<size_t>(n.a)].value : n.value;
    const Mat& vb = n.b >= 0 ? nodes_[static_cast<size_t>(n.b)].value : n.value;

    switch (n.op) {
      case Op::Constant:
      case Op::Param:
      case Op::Detach:
        break;
      case Op::Add:
        if (needs(n.a)) g(n.a) += gy;
        if (needs(n.b)) g(n.b) += gy;
        break;
      case Op::Sub:
        if (needs(n.a)) g(n.a) += gy;
        if (needs(n.b)) g(n.b) -= gy;
        break;
      case Op::MulElem:
        if (needs(n.a)) g(n.a) += gy.cwiseProduct(vb);
        if (needs(n.b)) g(n.b) += gy.cwiseProduct(va);
        break;
      case Op::ScalarMul:
        if (needs(n.a)) g(n.a) += gy * n.c;
        break;
      case Op::MatMul:
        if (needs(n.a)) g(n.a) += gy * vb.transpose();
        if (needs(n.b)) g(n.b) += va.transpose() * gy;
        break;
      case Op::Transpose:
        if (needs(n.a)) g(n.a) += gy.transpose();
        break;
      case Op::ScaleBy:
        if (needs(n.a)) g(n.a) += gy * vb(0, 0);
        if (needs(n.b)) g(n.b)(0, 0) += gy.cwiseProduct(va).sum();
        break;
      case Op::SliceCols:
        if (needs(n.a)) g(n.a).middleCols(n.i0, n.i1) += gy;
        break;
      case Op::ConcatCols:
        if (needs(n.a)) g(n.a) += gy.leftCols(va.cols());
        if (needs(n.b)) g(n.b) += gy.rightCols(vb.cols());
        break;
      case Op::AddRowVec:
        if (needs(n.a)) g(n.a) += gy;
        if (needs(n.b)) g(n.b) += gy.colwise().sum();
        break;
      case Op::DivByRowVec:
        if (needs(n.a)) g(n.a) += (gy.array().rowwise() / vb.row(0).array()).matrix();
        if (needs(n.b))
          g(n.b) -= (gy.cwiseProduct(n.value).colwise().sum().array() / vb.row(0).array())
                        .matrix();
        break;
      case Op::Tanh:
        if (needs(n.a)) g(n.a).array() += gy.array() * (1.0 - n.value.array().square());
        break;
      case Op::SoftmaxRows:
        if (needs(n.a)) {
          Mat& ga = g(n.a);
          for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
            const double dot = gy.row(i).dot(n.value.row(i));
            ga.row(i).array() +=
                n.value.row(i).array() * (gy.row(i).array() - dot);
          }
        }
        break;
      case Op::LogClamped:
        if (needs(n.a)) {
          Mat& ga = g(n.a);
          for (Eigen::Index i = 0; i < va.rows(); ++i)
            for (Eigen::Index j = 0; j < va.cols(); ++j)
              if (va(i, j) > n.c) ga(i, j) += gy(i, j) / va(i, j);
        }
        break;
      case Op::NormalizeRows:
        if (needs(n.a)) {
          Mat& ga = g(n.a);
          for (Eigen::Index i = 0; i < va.rows(); ++i) {
            const double norm = va.row(i).norm();
            if (norm > n.c) {
              const double dot = gy.row(i).dot(n.value.row(i));
              ga.row(i) += (gy.row(i) - dot * n.value.row(i)) / norm;
            } else {
              ga.row(i) += gy.row(i) / n.c;  // below the floor the scale is constant
            }
          }
        }
        break;
      case Op::ColSum:
        if (needs(n.a)) g(n.a) += gy.replicate(va.rows(), 1);
        break;
      case Op::SumAll:
        if (needs(n.a)) g(n.a).array() += gy(0, 0);
        break;
      case Op::MeanAll:
        if (needs(n.a)) g(n.a).array() += gy(0, 0) / static_cast<double>(va.size());
        break;
      case Op::RowLogSumExp:
        if (needs(n.a)) {
          Mat& ga = g(n.a);
          for (Eigen::Index i = 0; i < va.rows(); ++i) {
            const double m = va.row(i).maxCoeff();
            Eigen::ArrayXd e = (va.row(i).array() - m).exp();
            ga.row(i) += (gy(i, 0) * (e / e.sum())).matrix();
          }
        }
        break;
      case Op::GatherPerRow:
        if (needs(n.a)) {
          Mat& ga = g(n.a);
          for (Eigen::Index i = 0; i < n.value.rows(); ++i)
            ga(i, n.index[static_cast<size_t>(i)]) += gy(i, 0);
        }
        break;
    }
  }
}

const Mat& Tape::grad(Value v) const {
  if (!ran_backward_) throw std::logic_error("Tape::grad: backward() has not run");
  static const Mat empty;
  const Mat& m = grads_[static_cast<size_t>(v.id)];
  if (m.size() == 0) {
    // Node untouched by the sweep: return a zero matrix of the right shape.
    const_cast<Mat&>(m) = Mat::Zero(node(v).value.rows(), node(v).value.cols());
  }
  return m;
}

}  // namespace incfsl::ad
