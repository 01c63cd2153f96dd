#pragma once

#include "hctc/encoder.hpp"

#include <initializer_list>
#include <map>
#include <string>

namespace hctc {

struct OptimizerConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.01;  // matrices only, decoupled
    int warmup_steps = 50;
    int total_steps = 1000;
    double grad_clip = 5.0;  // global L2 norm; <= 0 disables
};

// Linear warmup to cfg.lr, then cosine decay to zero at total_steps.
double learning_rate(const OptimizerConfig& cfg, int step);

class AdamW {
public:
    explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

    // One update of every parameter that has an entry in `grads`.
    void step(std::initializer_list<ParameterSet*> sets, const Gradients& grads);

    int steps_taken() const { return step_; }
    double last_grad_norm() const { return last_norm_; }

private:
    OptimizerConfig cfg_;
    int step_ = 0;
    double last_norm_ = 0.0;
    std::map<std::string, Matrix> m_;
    std::map<std::string, Matrix> v_;
};

// In-place: grads[k] += other[k] * weight.
void accumulate(Gradients& into, const Gradients& other, double weight = 1.0);

}  // namespace hctc
