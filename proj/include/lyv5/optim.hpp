#pragma once

#include <cmath>
#include <vector>

#include "nn/layers.hpp"

namespace lyv5 {

struct SgdConfig {
    double momentum = 0.937;
    double weight_decay = 5e-4; // applied to TensorRole::weight only
    bool nesterov = true;
};

// SGD with momentum over the trainable tensors of a TensorList. Gradients
// accumulate in the tensors themselves; step() consumes and clears them.
template <std::floating_point T>
class Sgd {
public:
    Sgd(const nn::TensorList<T>& tensors, SgdConfig cfg) : cfg_(cfg)
    {
        for (const auto& t : tensors) {
            if (t.role == nn::TensorRole::buffer) continue;
            params_.push_back(t);
            velocity_.emplace_back(t.tensor->numel(), T(0));
        }
    }

    void zero_grad()
    {
        for (auto& p : params_)
            if (p.tensor->has_grad()) p.tensor->zero_grad();
    }

    void step(double lr)
    {
        const T mu = static_cast<T>(cfg_.momentum);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i].tensor;
            if (!p.has_grad()) continue;
            const T wd = params_[i].role == nn::TensorRole::weight ? static_cast<T>(cfg_.weight_decay) : T(0);
            auto w = p.data_mut();
            auto g = p.grad_mut();
            auto& v = velocity_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const T grad = g[k] + wd * w[k];
                v[k] = mu * v[k] + grad;
                const T update = cfg_.nesterov ? grad + mu * v[k] : v[k];
                w[k] -= static_cast<T>(lr) * update;
                g[k] = T(0);
            }
        }
    }

    void set_momentum(double m) { cfg_.momentum = m; }
    std::size_t size() const { return params_.size(); }

private:
    SgdConfig cfg_;
    nn::TensorList<T> params_;
    std::vector<std::vector<T>> velocity_;
};

} // namespace lyv5
