#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "atlas/tensor.hpp"

namespace atlas::nn {

/// Adam with bias correction. State is keyed by parameter name so the
/// update order is independent of registration order.
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    /// One update over the named parameters, consuming their grad slots.
    void step(const std::vector<std::pair<std::string, Tensor>>& params);

    std::int64_t steps() const { return t_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

}  // namespace atlas::nn
