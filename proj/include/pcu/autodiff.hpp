#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation in execution order. Tensors are lightweight
// handles (tape pointer + node id); values and gradients live on the tape.
// backward() walks the recording in exact reverse, so recording order is the
// topological order. A tape is single-threaded; independent tapes may run
// concurrently.

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "pcu/error.hpp"

namespace pcu::ad {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  Index rows() const;
  Index cols() const;
  const Matrix& value() const;
  // Gradient buffer; empty (0x0) before backward() or when no gradient flows.
  const Matrix& grad() const;
  bool requires_grad() const;
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient of the node's output and deposits into parents.
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value) { return push(std::move(value), true, nullptr); }
  Tensor constant(Matrix value) { return push(std::move(value), false, nullptr); }

  // Records an op result. The node requires grad iff any parent does; the
  // backward closure is dropped otherwise.
  Tensor record(Matrix value, std::initializer_list<Tensor> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Tensor>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  Tensor record(Matrix value, std::span<const Tensor> parents, BackwardFn backward) {
    bool needs = false;
    for (const Tensor& p : parents) {
      detail::require(p.tape_ == this, "autodiff: operand recorded on a different tape");
      needs = needs || nodes_[p.id_].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  // Populates gradients of every grad-requiring node reachable from `loss`.
  // Leaves that do not influence the loss end up with a zero gradient.
  void backward(const Tensor& loss) {
    detail::require(loss.tape_ == this, "backward: loss belongs to a different tape");
    const Node& root = nodes_[loss.id_];
    detail::require(root.value.rows() == 1 && root.value.cols() == 1,
                    "backward: loss must be a 1x1 tensor, got " + std::to_string(root.value.rows()) + "x" +
                        std::to_string(root.value.cols()));
    for (Node& n : nodes_) {
      if (n.requires_grad) n.grad.setZero(n.value.rows(), n.value.cols());
    }
    if (!root.requires_grad) return;
    nodes_[loss.id_].grad(0, 0) = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, n.grad);
    }
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adds `delta` into the gradient of `t` if it participates in differentiation.
  template <typename Expr>
  void accumulate(const Tensor& t, const Expr& delta) {
    Node& n = nodes_[t.id_];
    if (n.requires_grad) n.grad += delta;
  }

  // Mutable access for ops that scatter into a parent's gradient.
  Matrix* grad_target(const Tensor& t) {
    Node& n = nodes_[t.id_];
    return n.requires_grad ? &n.grad : nullptr;
  }

  // Running hash of the discrete choices made while recording (relu masks,
  // max argmaxes, neighbor selections). A piecewise-smooth graph is smooth
  // in a region where this stays constant.
  std::uint64_t decisions() const { return decisions_; }
  void note_decision(std::uint64_t v) {
    decisions_ ^= v + 0x9e3779b97f4a7c15ULL + (decisions_ << 6) + (decisions_ >> 2);
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tensor push(Matrix value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward)});
    return Tensor(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // deque: node references stay valid while recording
  std::uint64_t decisions_ = 0;
};

inline Index Tensor::rows() const { return tape_->value(id_).rows(); }
inline Index Tensor::cols() const { return tape_->value(id_).cols(); }
inline const Matrix& Tensor::value() const { return tape_->value(id_); }
inline const Matrix& Tensor::grad() const { return tape_->grad(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }
inline double Tensor::item() const {
  detail::require(rows() == 1 && cols() == 1, "item: tensor is not 1x1");
  return value()(0, 0);
}

namespace detail {

inline std::string shape(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  pcu::detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                       std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  pcu::detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + detail::shape(a) + " * " +
                                                 detail::shape(b) + ")");
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (Matrix* ga = tape.grad_target(a)) ga->noalias() += g * b.value().transpose();
    if (Matrix* gb = tape.grad_target(b)) gb->noalias() += a.value().transpose() * g;
  });
}

// x (r x c) plus a 1 x c bias added to every row.
inline Tensor add_rowwise_bias(const Tensor& x, const Tensor& bias) {
  pcu::detail::require(bias.rows() == 1 && bias.cols() == x.cols(),
                       "add_rowwise_bias: bias " + detail::shape(bias) + " does not fit " + detail::shape(x));
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& tape, const Matrix& g) {
    tape.accumulate(x, g);
    tape.accumulate(bias, g.colwise().sum());
  });
}

inline Tensor relu(const Tensor& x) {
  Matrix out = x.value().cwiseMax(0.0);
  std::uint64_t word = 0;
  for (Index i = 0; i < out.size(); ++i) {
    word = (word << 1) | (out.data()[i] > 0.0);
    if (i % 64 == 63 || i + 1 == out.size()) {
      x.tape().note_decision(word);
      word = 0;
    }
  }
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Matrix& g) {
    tape.accumulate(x, (x.value().array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor concat_cols(std::span<const Tensor> parts) {
  pcu::detail::require(!parts.empty(), "concat_cols: no operands");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Tensor& p : parts) {
    pcu::detail::require(p.rows() == rows, "concat_cols: row counts differ (" + detail::shape(parts.front()) +
                                               " vs " + detail::shape(p) + ")");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Tensor& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Tensor> saved(parts.begin(), parts.end());
  return parts.front().tape().record(std::move(out), parts, [saved](Tape& tape, const Matrix& g) {
    Index off = 0;
    for (const Tensor& p : saved) {
      tape.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

inline Tensor slice_cols(const Tensor& x, Index start, Index count) {
  pcu::detail::require(start >= 0 && count >= 0 && start + count <= x.cols(),
                       "slice_cols: range out of bounds for " + detail::shape(x));
  Matrix out = x.value().middleCols(start, count);
  return x.tape().record(std::move(out), {x}, [x, start, count](Tape& tape, const Matrix& g) {
    if (Matrix* gx = tape.grad_target(x)) gx->middleCols(start, count) += g;
  });
}

// Splits every row into `factor` contiguous chunks that become consecutive
// rows: row r of an n x d input yields rows r*factor .. r*factor+factor-1 of
// the (n*factor) x (d/factor) output. On row-major storage this is the
// identity on the underlying buffer.
inline Tensor reshape_rows(const Tensor& x, Index factor) {
  pcu::detail::require(factor >= 1, "reshape_rows: factor must be positive");
  pcu::detail::require(x.cols() % factor == 0, "reshape_rows: " + std::to_string(x.cols()) +
                                                   " columns not divisible by " + std::to_string(factor));
  const Index rows = x.rows() * factor, cols = x.cols() / factor;
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Matrix& g) {
    tape.accumulate(x, Eigen::Map<const Matrix>(g.data(), x.rows(), x.cols()));
  });
}

// Inverse of reshape_rows: every `factor` consecutive rows become one row.
inline Tensor merge_rows(const Tensor& x, Index factor) {
  pcu::detail::require(factor >= 1, "merge_rows: factor must be positive");
  pcu::detail::require(x.rows() % factor == 0, "merge_rows: " + std::to_string(x.rows()) +
                                                   " rows not divisible by " + std::to_string(factor));
  const Index rows = x.rows() / factor, cols = x.cols() * factor;
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Matrix& g) {
    tape.accumulate(x, Eigen::Map<const Matrix>(g.data(), x.rows(), x.cols()));
  });
}

// Column-wise maximum over consecutive groups of `group_size` rows. The first
// row attaining the maximum receives the gradient.
inline Tensor max_over_groups(const Tensor& x, Index group_size) {
  pcu::detail::require(group_size >= 1, "max_over_groups: group size must be positive");
  pcu::detail::require(x.rows() % group_size == 0, "max_over_groups: " + std::to_string(x.rows()) +
                                                       " rows not divisible into groups of " +
                                                       std::to_string(group_size));
  const Index groups = x.rows() / group_size, cols = x.cols();
  const Matrix& v = x.value();
  Matrix out(groups, cols);
  std::vector<Index> argmax(static_cast<std::size_t>(groups * cols));
  for (Index gi = 0; gi < groups; ++gi) {
    const Index base = gi * group_size;
    for (Index c = 0; c < cols; ++c) out(gi, c) = v(base, c);
    std::fill_n(argmax.begin() + gi * cols, cols, base);
    for (Index r = base + 1; r < base + group_size; ++r) {
      for (Index c = 0; c < cols; ++c) {
        if (v(r, c) > out(gi, c)) {
          out(gi, c) = v(r, c);
          argmax[static_cast<std::size_t>(gi * cols + c)] = r;
        }
      }
    }
  }
  for (Index a : argmax) x.tape().note_decision(static_cast<std::uint64_t>(a));
  return x.tape().record(std::move(out), {x}, [x, argmax = std::move(argmax), cols](Tape& tape, const Matrix& g) {
    Matrix* gx = tape.grad_target(x);
    if (!gx) return;
    for (Index gi = 0; gi < g.rows(); ++gi) {
      for (Index c = 0; c < cols; ++c) (*gx)(argmax[static_cast<std::size_t>(gi * cols + c)], c) += g(gi, c);
    }
  });
}

// out.row(r) = x.row(indices[r]); repeated indices accumulate in backward.
inline Tensor gather_rows(const Tensor& x, std::vector<Index> indices) {
  Matrix out(static_cast<Index>(indices.size()), x.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    pcu::detail::require(indices[r] >= 0 && indices[r] < x.rows(), "gather_rows: index out of range");
    out.row(static_cast<Index>(r)) = x.value().row(indices[r]);
  }
  return x.tape().record(std::move(out), {x}, [x, indices = std::move(indices)](Tape& tape, const Matrix& g) {
    Matrix* gx = tape.grad_target(x);
    if (!gx) return;
    for (std::size_t r = 0; r < indices.size(); ++r) gx->row(indices[r]) += g.row(static_cast<Index>(r));
  });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, -g);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g.cwiseProduct(b.value()));
    tape.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Tensor scale(const Tensor& x, double s) {
  Matrix out = x.value() * s;
  return x.tape().record(std::move(out), {x}, [x, s](Tape& tape, const Matrix& g) { tape.accumulate(x, g * s); });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  Matrix out = x.value().array() + s;
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Matrix& g) { tape.accumulate(x, g); });
}

inline Tensor square(const Tensor& x) { return mul(x, x); }

inline Tensor sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Matrix& g) {
    if (Matrix* gx = tape.grad_target(x)) gx->array() += g(0, 0);
  });
}

inline Tensor mean(const Tensor& x) {
  pcu::detail::require(x.rows() * x.cols() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.rows() * x.cols()));
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Composite: one shared-MLP layer, x * W + b with optional relu.
inline Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias, bool activate) {
  Tensor y = add_rowwise_bias(matmul(x, weight), bias);
  return activate ? relu(y) : y;
}

}  // namespace pcu::ad
