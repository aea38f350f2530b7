#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace atlas::nn {

/// Dense 64-bit real tensor with an optional gradient slot. Copying a
/// Tensor copies the handle, not the storage; ops return fresh storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const std::vector<int>& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[i]; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int size() const { return static_cast<int>(n_->data.size()); }

    // Handle semantics: a const Tensor still exposes mutable storage, the
    // way a shared_ptr does. Backward passes accumulate into input grads.
    double* data() const { return n_->data.data(); }
    const std::vector<double>& values() const { return n_->data; }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    double* grad() const { return n_->grad.data(); }
    const std::vector<double>& grad_values() const { return n_->grad; }
    void zero_grad() const {
        if (n_) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    double item() const {
        if (size() != 1) throw std::runtime_error("tensor: item() on non-scalar");
        return n_->data[0];
    }

    bool same_node(const Tensor& o) const { return n_ == o.n_; }

private:
    struct Node {
        std::vector<int> shape;
        std::vector<double> data;
        std::vector<double> grad;  // empty unless requires_grad
        bool requires_grad = false;
    };
    std::shared_ptr<Node> n_;

    static Tensor alloc(std::vector<int> shape, bool requires_grad);
};

/// Reverse-mode tape: an ordered list of backward closures. Ops append
/// while a Tape::Scope is active; backward() replays in reverse. One tape
/// per training step, confined to one thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active() { return active_; }

private:
    friend void backward(const Tensor& loss, Tape& tape);
    std::vector<std::function<void()>> ops_;
    static thread_local Tape* active_;
};

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, populating
/// the grad slot of every requires_grad tensor that fed the loss. Throws
/// if loss is not a recorded scalar.
void backward(const Tensor& loss, Tape& tape);

}  // namespace atlas::nn
