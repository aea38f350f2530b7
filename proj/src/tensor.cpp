#include "atlas/tensor.hpp"

#include <algorithm>

namespace atlas::nn {

thread_local Tape* Tape::active_ = nullptr;

Tensor Tensor::alloc(std::vector<int> shape, bool requires_grad) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::runtime_error("tensor: extents must be positive");
        n *= static_cast<std::size_t>(d);
    }
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->data.assign(n, 0.0);
    t.n_->requires_grad = requires_grad;
    if (requires_grad) t.n_->grad.assign(n, 0.0);
    return t;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return alloc(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = alloc(std::move(shape), requires_grad);
    std::fill(t.n_->data.begin(), t.n_->data.end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    Tensor t = alloc(std::move(shape), requires_grad);
    if (data.size() != t.n_->data.size()) {
        throw std::runtime_error("tensor: data length does not match shape");
    }
    t.n_->data = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

void backward(const Tensor& loss, Tape& tape) {
    if (!loss.defined() || loss.size() != 1) {
        throw std::runtime_error("backward: loss must be a scalar tensor");
    }
    if (!loss.requires_grad()) {
        throw std::runtime_error("backward: loss is detached (no recorded gradient path)");
    }
    Tensor l = loss;  // handle copy, shares storage
    l.grad()[0] += 1.0;
    for (auto it = tape.ops_.rbegin(); it != tape.ops_.rend(); ++it) (*it)();
}

}  // namespace atlas::nn
