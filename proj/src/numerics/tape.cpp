#include "avur/numerics/tape.hpp"

#include <cmath>

namespace avur {

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("Var::scalar on " + shape_str(v));
  return v(0, 0);
}

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("Var is not bound to a tape");
  return *tape_;
}

int Tape::check(Var v) const {
  if (!v.valid() || &v.tape() != this)
    throw std::logic_error("Var belongs to a different tape");
  if (v.id() < 0 || static_cast<size_t>(v.id()) >= nodes_.size())
    throw std::logic_error("Var refers to a node that is not on the tape (rewound?)");
  return v.id();
}

Var Tape::push(Matrix value, std::vector<int> parents, BackwardFn fn) {
  const int self = static_cast<int>(nodes_.size());
  bool needs = false;
  for (int p : parents) {
    // Parents must precede the node: this keeps the record acyclic.
    if (p < 0 || p >= self) throw std::logic_error("tape cycle: parent does not precede node");
    needs = needs || nodes_[p].needs_grad;
  }
  needs = needs && grad_enabled_;
  Node n;
  n.value = std::move(value);
  if (needs) {
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  n.needs_grad = needs;
  nodes_.push_back(std::move(n));
  return Var(this, self);
}

Var Tape::constant(Matrix m) {
  require_finite(m, "Tape::constant");
  Node n;
  n.value = std::move(m);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Param& p) {
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = grad_enabled_ && p.requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::stop_gradient(Var v) {
  const int src = check(v);
  Node n;
  if (stop_replay_) {
    if (stop_cursor_ >= stop_replay_->size()) throw std::logic_error("stop_gradient: replay record exhausted");
    const Matrix& held = (*stop_replay_)[stop_cursor_++];
    if (held.rows() != value(src).rows() || held.cols() != value(src).cols())
      throw ShapeError("stop_gradient: replayed value has the wrong shape");
    n.value = held;
  } else {
    n.alias = src;
  }
  if (stop_record_) stop_record_->push_back(value(src));
  n.stop = true;
  // Gradient still arrives here (so it can be counted); it is never forwarded.
  n.needs_grad = nodes_[src].needs_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value(Var v) const { return value(check(v)); }

Matrix Tape::grad(Var v) const {
  const int id = check(v);
  const Node& n = nodes_[id];
  if (n.grad.size() == 0) return Matrix::Zero(value(id).rows(), value(id).cols());
  return n.grad;
}

bool Tape::needs_grad(Var v) const { return nodes_[check(v)].needs_grad; }

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(value(id).rows(), value(id).cols());
  return n.grad;
}

void Tape::rewind(size_t mark) {
  if (mark > nodes_.size()) throw std::logic_error("Tape::rewind past end");
  nodes_.resize(mark);
}

void Tape::backward(Var loss) {
  const int root = check(loss);
  if (value(root).size() != 1) throw ShapeError("backward: loss must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  blocked_ = 0;
  if (!nodes_[root].needs_grad) return;
  nodes_[root].grad = Matrix::Ones(1, 1);
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    require_finite(n.grad, "backward: gradient");
    if (n.stop) {
      if ((n.grad.array() != 0.0).any()) ++blocked_;
      continue;
    }
    if (n.param) n.param->grad += n.grad;
    if (n.backward) n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b) {
  Tape& t = a.tape();
  t.check(a);
  t.check(b);
  return t;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_scalar(const Matrix& s, const char* op) {
  if (s.size() != 1) throw ShapeError(std::string(op) + ": expected 1x1, got " + shape_str(s));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: " + shape_str(av) + " * " + shape_str(bv));
  const int ia = a.id(), ib = b.id();
  return t.push(av * bv, {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.needs_grad(ib)) tp.grad_ref(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols())
    throw ShapeError("matmul_nt: " + shape_str(av) + " * (" + shape_str(bv) + ")^T");
  const int ia = a.id(), ib = b.id();
  return t.push(av * bv.transpose(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia).noalias() += g * tp.value(ib);
    if (tp.needs_grad(ib)) tp.grad_ref(ib).noalias() += g.transpose() * tp.value(ia);
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.needs_grad(ib)) tp.grad_ref(ib) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.needs_grad(ib)) tp.grad_ref(ib) -= g;
  });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw ShapeError("add_row: " + shape_str(av) + " + row " + shape_str(rv));
  Matrix out = av.rowwise() + rv.row(0);
  const int ia = a.id(), ir = row.id();
  return t.push(std::move(out), {ia, ir}, [ia, ir](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.needs_grad(ir)) tp.grad_ref(ir) += g.colwise().sum();
  });
}

Var mul_col(Var a, Var col) {
  Tape& t = same_tape(a, col);
  const Matrix& av = a.value();
  const Matrix& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != av.rows())
    throw ShapeError("mul_col: " + shape_str(av) + " scaled by " + shape_str(cv));
  Matrix out = av.array().colwise() * cv.col(0).array();
  const int ia = a.id(), ic = col.id();
  return t.push(std::move(out), {ia, ic}, [ia, ic](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia))
      tp.grad_ref(ia).array() += g.array().colwise() * tp.value(ic).col(0).array();
    if (tp.needs_grad(ic))
      tp.grad_ref(ic).col(0) += (g.array() * tp.value(ia).array()).rowwise().sum().matrix();
  });
}

Var scale(Var a, Var s) {
  Tape& t = same_tape(a, s);
  require_scalar(s.value(), "scale");
  const int ia = a.id(), is = s.id();
  return t.push(a.value() * s.scalar(), {ia, is}, [ia, is](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g * tp.value(is)(0, 0);
    if (tp.needs_grad(is)) tp.grad_ref(is)(0, 0) += (g.array() * tp.value(ia).array()).sum();
  });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  return t.push(a.value() * s, {ia}, [ia, s](Tape& tp, int self) {
    tp.grad_ref(ia) += tp.grad_ref(self) * s;
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.needs_grad(ib)) tp.grad_ref(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Var tanh(Var a) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  Matrix out = a.value().array().tanh();
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_ref(ia).array() += tp.grad_ref(self).array() * (1.0 - y.array().square());
  });
}

Var sigmoid(Var a) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  Matrix out = a.value().unaryExpr([](double z) { return avur::sigmoid(z); });
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_ref(ia).array() += tp.grad_ref(self).array() * y.array() * (1.0 - y.array());
  });
}

Var gelu(Var a) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  Matrix out = a.value().unaryExpr([](double x) { return avur::gelu(x); });
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const Matrix d = tp.value(ia).unaryExpr([](double x) { return gelu_grad(x); });
    tp.grad_ref(ia).array() += tp.grad_ref(self).array() * d.array();
  });
}

Var affine_scalar(Var x, Var slope, Var offset) {
  Tape& t = same_tape(x, slope);
  t.check(offset);
  require_scalar(slope.value(), "affine_scalar slope");
  require_scalar(offset.value(), "affine_scalar offset");
  const double s = slope.scalar(), o = offset.scalar();
  Matrix out = (x.value().array() * s + o).matrix();
  const int ix = x.id(), is = slope.id(), io = offset.id();
  return t.push(std::move(out), {ix, is, io}, [ix, is, io](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ix)) tp.grad_ref(ix) += g * tp.value(is)(0, 0);
    if (tp.needs_grad(is)) tp.grad_ref(is)(0, 0) += (g.array() * tp.value(ix).array()).sum();
    if (tp.needs_grad(io)) tp.grad_ref(io)(0, 0) += g.sum();
  });
}

Var softmax_rows(Var a, AttentionMask mask) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  Matrix out = avur::softmax_rows(a.value(), mask);
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad_ref(self);
    Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
    tp.grad_ref(ia).array() += y.array() * (g.array().colwise() - dots.array());
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain);
  t.check(bias);
  const Matrix& xv = x.value();
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be > 0");
  if (gain.value().size() != xv.cols() || bias.value().size() != xv.cols())
    throw ShapeError("layer_norm: gain/bias do not match width of " + shape_str(xv));
  const Eigen::Index n = xv.cols();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.push(std::move(out), {ix, ig, ib},
                [ix, ig, ib, xhat = std::move(xhat), inv = std::move(inv), n](Tape& tp, int self) {
                  const Matrix& g = tp.grad_ref(self);
                  if (tp.needs_grad(ig)) tp.grad_ref(ig) += (g.array() * xhat.array()).colwise().sum().matrix();
                  if (tp.needs_grad(ib)) tp.grad_ref(ib) += g.colwise().sum();
                  if (!tp.needs_grad(ix)) return;
                  const Matrix dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
                  Matrix& dx = tp.grad_ref(ix);
                  const double nn = static_cast<double>(n);
                  for (Eigen::Index i = 0; i < g.rows(); ++i) {
                    const double s1 = dxhat.row(i).sum();
                    const double s2 = dxhat.row(i).dot(xhat.row(i));
                    dx.row(i).array() +=
                        (inv(i) / nn) * (nn * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2);
                  }
                });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  if (begin < 0 || count < 0 || begin + count > a.cols())
    throw ShapeError("slice_cols out of range on " + shape_str(a.value()));
  Matrix out = a.value().middleCols(begin, count);
  return t.push(std::move(out), {ia}, [ia, begin, count](Tape& tp, int self) {
    tp.grad_ref(ia).middleCols(begin, count) += tp.grad_ref(self);
  });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  if (begin < 0 || count < 0 || begin + count > a.rows())
    throw ShapeError("slice_rows out of range on " + shape_str(a.value()));
  Matrix out = a.value().middleRows(begin, count);
  return t.push(std::move(out), {ia}, [ia, begin, count](Tape& tp, int self) {
    tp.grad_ref(ia).middleRows(begin, count) += tp.grad_ref(self);
  });
}

Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hconcat of nothing");
  Tape& t = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    ids.push_back(t.check(p));
    if (p.rows() != rows) throw ShapeError("hconcat: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(out), ids, [ids](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Eigen::Index c0 = 0;
    for (int id : ids) {
      const Eigen::Index w = tp.value(id).cols();
      if (tp.needs_grad(id)) tp.grad_ref(id) += g.middleCols(c0, w);
      c0 += w;
    }
  });
}

Var vconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vconcat of nothing");
  Tape& t = parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    ids.push_back(t.check(p));
    if (p.cols() != cols) throw ShapeError("vconcat: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.push(std::move(out), ids, [ids](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Eigen::Index r0 = 0;
    for (int id : ids) {
      const Eigen::Index h = tp.value(id).rows();
      if (tp.needs_grad(id)) tp.grad_ref(id) += g.middleRows(r0, h);
      r0 += h;
    }
  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  Tape& t = table.tape();
  const int it = t.check(table);
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= tv.rows())
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(tv.rows()));
    out.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
  }
  return t.push(std::move(out), {it}, [it, ids](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Matrix& dt = tp.grad_ref(it);
    for (size_t r = 0; r < ids.size(); ++r) dt.row(ids[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var mean_rows(Var a) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().mean();
  return t.push(std::move(out), {ia}, [ia, n](Tape& tp, int self) {
    tp.grad_ref(ia).rowwise() += tp.grad_ref(self).row(0) / n;
  });
}

Var sum(Var a) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    tp.grad_ref(ia).array() += tp.grad_ref(self)(0, 0);
  });
}

Var mean(Var a) {
  Tape& t = a.tape();
  const int ia = t.check(a);
  const double n = static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().mean();
  return t.push(std::move(out), {ia}, [ia, n](Tape& tp, int self) {
    tp.grad_ref(ia).array() += tp.grad_ref(self)(0, 0) / n;
  });
}

Var cross_entropy(Var logits, const std::vector<int>& targets) {
  Tape& t = logits.tape();
  const int il = t.check(logits);
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows())
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(z));
  Matrix logp = log_softmax_rows(z);
  double total = 0.0;
  for (size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0 || targets[r] >= z.cols())
      throw std::out_of_range("cross_entropy: target outside vocabulary");
    total -= logp(static_cast<Eigen::Index>(r), targets[r]);
  }
  const double n = static_cast<double>(targets.size());
  Matrix out(1, 1);
  out(0, 0) = total / n;
  return t.push(std::move(out), {il},
                [il, targets, n, logp = std::move(logp)](Tape& tp, int self) {
                  const double g = tp.grad_ref(self)(0, 0);
                  Matrix d = logp.array().exp();
                  for (size_t r = 0; r < targets.size(); ++r)
                    d(static_cast<Eigen::Index>(r), targets[r]) -= 1.0;
                  tp.grad_ref(il) += d * (g / n);
                });
}

Var normalized_entropy_rows(Var logits) {
  Tape& t = logits.tape();
  const int il = t.check(logits);
  const Matrix& z = logits.value();
  const Eigen::Index cols = z.cols();
  if (cols < 1) throw ShapeError("normalized_entropy_rows: no columns");
  if (cols == 1) return t.constant(Matrix::Zero(z.rows(), 1));
  const double log_t = std::log(static_cast<double>(cols));
  Matrix logp = log_softmax_rows(z);
  Matrix p = logp.array().exp();
  Eigen::VectorXd h = -(p.array() * logp.array()).rowwise().sum();
  Matrix out = h / log_t;
  return t.push(std::move(out), {il},
                [il, log_t, logp = std::move(logp), p = std::move(p), h = std::move(h)](Tape& tp,
                                                                                      int self) {
                  const Matrix& g = tp.grad_ref(self);
                  // dH/dz_k = -p_k (log p_k + H)
                  Matrix d = -(p.array() * (logp.array().colwise() + h.array()));
                  tp.grad_ref(il).array() += d.array().colwise() * (g.col(0).array() / log_t);
                });
}

}  // namespace avur
