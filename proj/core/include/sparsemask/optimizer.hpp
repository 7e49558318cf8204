#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsemask/autodiff.hpp"

namespace sparsemask {

// base_lr * (1 - step/total)^power, reaching exactly 0 at step == total.
inline double poly_lr(double base_lr, long step, long total_steps, double power) {
    if (total_steps <= 0) throw std::runtime_error("poly_lr: total_steps must be positive");
    const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * std::pow(frac, power);
}

struct ParamGroup {
    std::string name;
    std::vector<ad::Var<float>> params;
    double base_lr = 0.0;
    double weight_decay = 0.0;
};

// SGD with momentum, weight decay and the polynomial decay schedule:
//   v <- momentum*v + (grad + wd*param);  param <- param - lr(step)*v
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<ParamGroup> groups, double momentum, double poly_power,
                 long total_steps)
        : groups_(std::move(groups)), momentum_(momentum), poly_power_(poly_power),
          total_steps_(total_steps) {
        if (momentum_ < 0.0 || momentum_ >= 1.0) {
            throw std::runtime_error("sgd: momentum must be in [0,1)");
        }
        velocity_.resize(groups_.size());
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            velocity_[g].resize(groups_[g].params.size());
            for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
                velocity_[g][p].assign(groups_[g].params[p].value().numel(), 0.0f);
            }
        }
    }

    long current_step() const { return step_; }
    long total_steps() const { return total_steps_; }

    double lr(std::size_t group) const {
        return poly_lr(groups_[group].base_lr, step_, total_steps_, poly_power_);
    }

    void zero_grad() {
        for (auto& g : groups_) {
            for (auto& p : g.params) p.zero_grad();
        }
    }

    void step() {
        if (step_ >= total_steps_) {
            throw std::runtime_error("sgd: step " + std::to_string(step_) +
                                     " past schedule horizon " + std::to_string(total_steps_));
        }
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            const double lr_now = lr(g);
            const float wd = static_cast<float>(groups_[g].weight_decay);
            const float mom = static_cast<float>(momentum_);
            for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
                ad::Var<float>& param = groups_[g].params[p];
                Tensor<float>& value = param.value();
                Tensor<float>& grad = param.grad();
                std::vector<float>& vel = velocity_[g][p];
                for (std::size_t i = 0; i < value.numel(); ++i) {
                    const float gi = grad.data[i];
                    if (!std::isfinite(gi)) {
                        throw std::runtime_error("sgd: non-finite gradient in parameter '" +
                                                 param.name() + "'");
                    }
                    vel[i] = mom * vel[i] + (gi + wd * value.data[i]);
                    value.data[i] -= static_cast<float>(lr_now * vel[i]);
                }
            }
        }
        ++step_;
    }

    // Checkpoint access.
    std::vector<std::vector<std::vector<float>>>& velocity() { return velocity_; }
    void set_step(long step) { step_ = step; }
    const std::vector<ParamGroup>& groups() const { return groups_; }

private:
    std::vector<ParamGroup> groups_;
    std::vector<std::vector<std::vector<float>>> velocity_;
    double momentum_ = 0.9;
    double poly_power_ = 0.9;
    long total_steps_ = 1;
    long step_ = 0;
};

}  // namespace sparsemask
