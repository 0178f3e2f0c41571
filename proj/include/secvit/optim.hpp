#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "secvit/tensor.hpp"

namespace secvit {

template <typename T>
void sgd_step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: param/grad mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= T(lr * double(g[j]));
    }
}

// Decoupled weight decay; moment state kept in f64 so f32 training stays
// well-conditioned. Decay applies to rank >= 2 tensors only (weights, conv
// kernels), never to biases or norm parameters.
template <typename T>
class AdamW {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.05;

    void step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, double lr) {
        if (params.size() != grads.size())
            throw std::invalid_argument("adamw_step: param/grad mismatch");
        if (slots_.empty()) {
            slots_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                slots_[i].m.assign(params[i]->size(), 0.0);
                slots_[i].v.assign(params[i]->size(), 0.0);
            }
        }
        ++steps_;
        double bc1 = 1.0 - std::pow(beta1, double(steps_));
        double bc2 = 1.0 - std::pow(beta2, double(steps_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = *params[i];
            const Tensor<T>& g = grads[i];
            Slot& s = slots_[i];
            bool decay = p.rank() >= 2;
            for (std::size_t j = 0; j < p.size(); ++j) {
                double gj = double(g[j]);
                s.m[j] = beta1 * s.m[j] + (1.0 - beta1) * gj;
                s.v[j] = beta2 * s.v[j] + (1.0 - beta2) * gj * gj;
                double mhat = s.m[j] / bc1;
                double vhat = s.v[j] / bc2;
                double pj = double(p[j]);
                if (decay) pj -= lr * weight_decay * pj;
                pj -= lr * mhat / (std::sqrt(vhat) + eps);
                p[j] = T(pj);
            }
        }
    }

    std::uint64_t steps() const { return steps_; }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    std::uint64_t steps_ = 0;
};

// Cosine decay from lr0 to 0 over total_steps.
inline double cosine_lr(double lr0, std::uint64_t step, std::uint64_t total_steps) {
    if (total_steps == 0) return lr0;
    double frac = double(step) / double(total_steps);
    if (frac > 1.0) frac = 1.0;
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace secvit
