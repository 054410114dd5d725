#pragma once

// Reverse-mode differentiation over dense double matrices (rank <= 2).
//
// A Tape records every primitive applied to Vars in execution order; backward()
// walks the record in reverse and accumulates adjoints into every node that
// (transitively) depends on a leaf created with requires_grad = true.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "metacd/error.hpp"

namespace metacd::diff {

using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid for the tape
/// generation it was created in.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  std::size_t index() const { return index_; }
  std::uint64_t generation() const { return generation_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index, std::uint64_t generation)
      : tape_(tape), index_(index), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
  std::uint64_t generation_ = 0;
};

inline std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

class Tape {
 public:
  /// Receives the adjoint of node `self` and pushes contributions to its parents.
  using BackwardFn = std::function<void(Tape&, std::size_t self, const Matrix& grad)>;

  explicit Tape(std::uint64_t seed = 0) : rng_(seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true) {
    check_finite("leaf", value);
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, "leaf", requires_grad});
    return Var(this, nodes_.size() - 1, generation_);
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Appends the result of a primitive. `parents` decide whether the result
  /// participates in differentiation; `fn` is dropped when none of them do.
  Var record(const char* op, Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var>(parents), std::move(fn));
  }

  Var record(const char* op, Matrix value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
      check(p, op);
      needs = needs || nodes_[p.index()].requires_grad;
    }
    check_finite(op, value);
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(fn) : nullptr, op, needs});
    return Var(this, nodes_.size() - 1, generation_);
  }

  /// Reverse sweep from a scalar root. Adjoints from any previous sweep are
  /// discarded first.
  void backward(const Var& root) {
    check(root, "backward");
    const Matrix& rv = nodes_[root.index()].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw ShapeError("backward: root must be scalar, got " + shape_str(rv));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[root.index()].requires_grad) return;
    nodes_[root.index()].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      if (!n.grad.allFinite()) {
        throw NumericalError("backward: non-finite adjoint at tape node #" + std::to_string(i) +
                             " (" + n.op + ")");
      }
      // Parents always sit at lower indices, so n.grad is final here.
      n.backward(*this, i, n.grad);
    }
  }

  /// Adjoint of `v` after backward(); zeros when `v` does not influence the root.
  Matrix grad(const Var& v) const {
    check(v, "grad");
    const Node& n = nodes_[v.index()];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(std::size_t index, const Matrix& g) {
    Node& n = nodes_[index];
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
      throw ShapeError(std::string("accumulate: adjoint ") + shape_str(g) + " for node " + n.op +
                       " of shape " + shape_str(n.value));
    }
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Matrix& value_at(std::size_t index) const { return nodes_[index].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.index()].requires_grad; }

  /// Drops all nodes. Vars from earlier generations become invalid.
  void reset() {
    nodes_.clear();
    ++generation_;
  }

  void check(const Var& v, const char* op) const {
    if (v.tape_ != this || v.generation_ != generation_ || v.index_ >= nodes_.size()) {
      throw Error(std::string(op) + ": operand belongs to a different tape or generation");
    }
  }

  Rng& rng() { return rng_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }
  const char* op_name(std::size_t index) const { return nodes_[index].op; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    const char* op;
    bool requires_grad;
  };

  static void check_finite(const char* op, const Matrix& m) {
    if (!m.allFinite()) throw NumericalError(std::string(op) + ": non-finite value");
  }

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 0;
  Rng rng_;
};

inline const Matrix& Var::value() const {
  tape_->check(*this, "value");
  return tape_->value_at(index_);
}

inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar(): shape is " + shape_str(v));
  return v(0, 0);
}

}  // namespace metacd::diff
