#include "hctc/optim.hpp"

#include <cmath>
#include <numbers>

namespace hctc {

double learning_rate(const OptimizerConfig& cfg, int step) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.lr * static_cast<double>(step + 1) / cfg.warmup_steps;
    const int decay = std::max(1, cfg.total_steps - cfg.warmup_steps);
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / decay);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(std::initializer_list<ParameterSet*> sets, const Gradients& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    last_norm_ = std::sqrt(sq);
    if (!std::isfinite(last_norm_)) throw DivergenceError("non-finite gradient", step_);
    const double clip = cfg_.grad_clip > 0.0 && last_norm_ > cfg_.grad_clip ? cfg_.grad_clip / last_norm_ : 1.0;

    const double lr = learning_rate(cfg_, step_);
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
    for (ParameterSet* set : sets) {
        for (auto& [name, w] : *set) {
            const auto it = grads.find(name);
            if (it == grads.end()) continue;
            const Matrix g = it->second * clip;
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() == 0) {
                m = Matrix::Zero(w.rows(), w.cols());
                v = Matrix::Zero(w.rows(), w.cols());
            }
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            if (cfg_.weight_decay > 0.0 && w.rows() > 1 && w.cols() > 1) w *= 1.0 - lr * cfg_.weight_decay;
            w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
        }
    }
}

void accumulate(Gradients& into, const Gradients& other, double weight) {
    for (const auto& [name, g] : other) {
        auto it = into.find(name);
        if (it == into.end())
            into.emplace(name, g * weight);
        else
            it->second += g * weight;
    }
}

}  // namespace hctc
