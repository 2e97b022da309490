#pragma once

#include "avur/numerics/kernels.hpp"
#include "avur/numerics/matrix.hpp"

#include <functional>
#include <string>
#include <vector>

namespace avur {

// A trainable (or frozen) tensor living outside any tape.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool requires_grad = true;

  Param() = default;
  Param(std::string n, Matrix v, bool trainable = true)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())),
        requires_grad(trainable) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

using ParamRefs = std::vector<Param*>;

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives
// and has not been rewound past it.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape& tape() const;
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Append-only record of a computation. Every node can only reference earlier
// nodes, so the record is a DAG in index order and backward is one reverse
// sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m);
  Var param(Param& p);
  // Forward identity, backward zero: nothing reaches the producer through it.
  Var stop_gradient(Var v);
  // Finite differences of the function the tape differentiates need every
  // stop-gradient output held at its unperturbed value. One tape records
  // those values in creation order; another replays them in place of the
  // live inputs.
  void record_stops(std::vector<Matrix>* sink) { stop_record_ = sink; }
  void replay_stops(const std::vector<Matrix>* source) {
    stop_replay_ = source;
    stop_cursor_ = 0;
  }

  // Zero-fills gradients, seeds d(loss)=1, sweeps in reverse and adds leaf
  // gradients into the bound Params. loss must be 1x1.
  void backward(Var loss);

  const Matrix& value(Var v) const;
  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.alias >= 0 ? value(n.alias) : n.value;
  }
  // Gradient of the most recent backward; zeros if nothing flowed.
  Matrix grad(Var v) const;
  bool needs_grad(Var v) const;
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  size_t size() const { return nodes_.size(); }
  size_t mark() const { return nodes_.size(); }
  void rewind(size_t mark);

  // Number of stop-gradient nodes that absorbed a nonzero upstream gradient
  // during the last backward.
  size_t blocked_gradients() const { return blocked_; }

  // Op-author interface.
  Var push(Matrix value, std::vector<int> parents, BackwardFn fn);
  Matrix& grad_ref(int id);
  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }
  int check(Var v) const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    BackwardFn backward;
    Param* param = nullptr;
    const Matrix* ref = nullptr;  // bound Param value, read in place
    int alias = -1;               // node whose value this one shares
    bool needs_grad = false;
    bool stop = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
  size_t blocked_ = 0;
  std::vector<Matrix>* stop_record_ = nullptr;
  const std::vector<Matrix>* stop_replay_ = nullptr;
  size_t stop_cursor_ = 0;
};

// ---- differentiable ops (free functions over Vars of one tape) ----

Var matmul(Var a, Var b);                 // a b
Var matmul_nt(Var a, Var b);              // a b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_row(Var a, Var row);              // row (1 x C) broadcast over rows of a
Var mul_col(Var a, Var col);              // col (R x 1) scales each row of a
Var scale(Var a, Var s);                  // s is 1x1
Var scale(Var a, double s);
Var hadamard(Var a, Var b);
Var tanh(Var a);
Var sigmoid(Var a);
Var gelu(Var a);
Var affine_scalar(Var x, Var slope, Var offset);  // slope * x + offset, slope/offset 1x1
Var softmax_rows(Var a, AttentionMask mask = {});
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var hconcat(const std::vector<Var>& parts);
Var vconcat(const std::vector<Var>& parts);
Var gather_rows(Var table, const std::vector<int>& ids);
Var mean_rows(Var a);                     // 1 x C
Var sum(Var a);                           // 1 x 1
Var mean(Var a);                          // 1 x 1
// Mean over rows of -log softmax(logits)_row[target_row].
Var cross_entropy(Var logits, const std::vector<int>& targets);
// Row-wise entropy of softmax(logits) divided by log(cols); R x 1.
Var normalized_entropy_rows(Var logits);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace avur
