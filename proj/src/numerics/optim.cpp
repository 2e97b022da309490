#include "avur/numerics/optim.hpp"

#include <cmath>
#include <numbers>

namespace avur {

AdamW::AdamW(ParamRefs params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Param* p : params_) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

double AdamW::learning_rate_at(int step) const {
  if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps)
    return cfg_.learning_rate * (step + 1) / cfg_.warmup_steps;
  const int span = std::max(1, cfg_.total_steps - cfg_.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - cfg_.warmup_steps) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg_.learning_rate * (cfg_.min_lr_fraction + (1.0 - cfg_.min_lr_fraction) * cosine);
}

void AdamW::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

double AdamW::step() {
  double sq = 0.0;
  for (Param* p : params_)
    if (p->requires_grad) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("AdamW: non-finite gradient norm");
  const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  const double lr = learning_rate_at(step_);
  ++step_;
  if (lr == 0.0) {
    zero_grad();
    return norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    if (!p.requires_grad) continue;
    const Matrix g = p.grad * clip;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    if (cfg_.weight_decay > 0 && p.rows() > 1 && p.cols() > 1)
      p.value *= (1.0 - lr * cfg_.weight_decay);
    p.value.array() -=
        lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
  }
  zero_grad();
  return norm;
}

std::vector<Matrix> finite_diff_grad(const std::function<double()>& f, const ParamRefs& params,
                                     double step) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_grad: step must be > 0");
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (Param* p : params) {
    Matrix g(p->rows(), p->cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& w = p->value.data()[i];
      const double saved = w;
      w = saved + step;
      const double up = f();
      w = saved - step;
      const double down = f();
      w = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("finite_diff_grad: non-finite evaluation for " + p->name);
      g.data()[i] = (up - down) / (2.0 * step);
    }
    out.push_back(std::move(g));
  }
  return out;
}

GradCheckResult compare_gradients(const std::vector<Matrix>& analytic,
                                  const std::vector<Matrix>& numeric, const ParamRefs& params,
                                  double floor) {
  if (analytic.size() != numeric.size() || analytic.size() != params.size())
    throw std::invalid_argument("compare_gradients: size mismatch");
  GradCheckResult r;
  for (size_t k = 0; k < analytic.size(); ++k) {
    for (Eigen::Index i = 0; i < analytic[k].size(); ++i) {
      const double a = analytic[k].data()[i];
      const double n = numeric[k].data()[i];
      const double abs_err = std::abs(a - n);
      const double rel = abs_err / std::max({std::abs(a), std::abs(n), floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_param = params[k]->name;
      }
    }
  }
  return r;
}

GradCheckResult check_gradients(const std::function<Var(Tape&)>& build, const ParamRefs& params,
                                double step) {
  for (Param* p : params) p->zero_grad();
  std::vector<Matrix> held;
  {
    Tape t;
    t.record_stops(&held);
    Var loss = build(t);
    t.backward(loss);
  }
  std::vector<Matrix> analytic;
  for (Param* p : params) analytic.push_back(p->grad);
  auto eval = [&] {
    Tape t(false);
    t.replay_stops(&held);
    return build(t).scalar();
  };
  const auto numeric = finite_diff_grad(eval, params, step);
  for (Param* p : params) p->zero_grad();
  return compare_gradients(analytic, numeric, params);
}

}  // namespace avur
