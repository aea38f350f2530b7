#include "atlas/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace atlas::nn {

void Adam::step(const std::vector<std::pair<std::string, Tensor>>& params) {
    t_++;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, param] : params) {
        Tensor p = param;
        if (!p.requires_grad()) {
            throw std::runtime_error("adam: parameter '" + name + "' has no gradient slot");
        }
        auto& mom = state_[name];
        if (mom.m.empty()) {
            mom.m.assign(p.size(), 0.0);
            mom.v.assign(p.size(), 0.0);
        } else if (static_cast<int>(mom.m.size()) != p.size()) {
            throw std::runtime_error("adam: parameter '" + name + "' changed size");
        }
        const double* g = p.grad();
        double* pd = p.data();
        for (int i = 0; i < p.size(); i++) {
            mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g[i];
            mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            pd[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace atlas::nn
