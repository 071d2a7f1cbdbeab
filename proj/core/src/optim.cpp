#include "flatlora/optim.hpp"

#include <cmath>
#include <numbers>

#include "flatlora/errors.hpp"

namespace flatlora {

Optimizer::Optimizer(std::vector<Tensor> params, OptimConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.lr < 0.0) throw ContractError("optimizer: negative learning rate");
  if (config_.cosine_decay && config_.total_steps == 0)
    throw ContractError("optimizer: cosine decay needs total_steps > 0");
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].numel(), 0.0);
    if (config_.kind == OptimConfig::Kind::adamw)
      v_[i].assign(params_[i].numel(), 0.0);
  }
}

double Optimizer::current_lr() const {
  if (!config_.cosine_decay) return config_.lr;
  const double frac =
      static_cast<double>(t_) / static_cast<double>(config_.total_steps);
  return config_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  const double lr = current_lr();
  const double wd = config_.weight_decay;
  ++t_;

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& data = params_[i].impl()->data;
    const bool has_g = params_[i].has_grad();
    const std::vector<double>* grad = has_g ? &params_[i].impl()->grad : nullptr;

    if (config_.kind == OptimConfig::Kind::adamw) {
      const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = grad ? (*grad)[j] : 0.0;
        m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * g;
        v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        data[j] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + wd * data[j]);
      }
    } else {
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = grad ? (*grad)[j] : 0.0;
        m_[i][j] = config_.momentum * m_[i][j] + g;
        data[j] -= lr * (m_[i][j] + wd * data[j]);
      }
    }
  }
}

}  // namespace flatlora
