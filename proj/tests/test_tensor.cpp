#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "atlas/ops.hpp"
#include "atlas/optim.hpp"
#include "atlas/rng.hpp"
#include "atlas/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace atlas;
using nn::BnMode;
using nn::BnState;
using nn::Tape;
using nn::Tensor;

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
    Rng rng(1);
    Tensor x = oracle::random_tensor(rng, {3, 5, 5}, false);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; c++) w.data()[c * 3 + c] = 1.0;
    Tensor b = Tensor::zeros({3});
    Tensor y = nn::conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (int i = 0; i < x.size(); i++) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: zero weights and bias give zero output") {
    Rng rng(2);
    Tensor x = oracle::random_tensor(rng, {2, 7, 7}, false);
    Tensor y = nn::conv2d(x, Tensor::zeros({4, 2, 3, 3}), Tensor::zeros({4}), 2, 1);
    CHECK(y.shape() == std::vector<int>{4, 4, 4});
    for (int i = 0; i < y.size(); i++) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("conv2d matches the six-loop reference on random shapes") {
    Rng rng(3);
    for (int rep = 0; rep < 20; rep++) {
        const int ci = rng.uniform_int(1, 8);
        const int co = rng.uniform_int(1, 8);
        const int k = 2 * rng.uniform_int(0, 2) + 1;  // 1, 3, 5
        const int stride = rng.uniform_int(1, 2);
        const int pad = rng.uniform_int(0, 2);
        int h = rng.uniform_int(k, 8);
        int w = rng.uniform_int(k, 8);
        h -= (h + 2 * pad - k) % stride;
        w -= (w + 2 * pad - k) % stride;
        if (h < k || w < k) continue;
        Tensor x = oracle::random_tensor(rng, {ci, h, w}, false);
        Tensor wt = oracle::random_tensor(rng, {co, ci, k, k}, false);
        Tensor b = oracle::random_tensor(rng, {co}, false);
        Tensor y = nn::conv2d(x, wt, b, stride, pad);
        const auto ref = oracle::naive_conv2d(x.values(), ci, h, w, wt.values(), co, k,
                                              b.values(), stride, pad);
        REQUIRE(static_cast<std::size_t>(y.size()) == ref.size());
        for (int i = 0; i < y.size(); i++) {
            CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("batchnorm: constant input normalizes to zero") {
    Tensor x = Tensor::full({4, 3}, 2.5);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    BnState st = BnState::make(3);
    Tensor y = nn::batchnorm(x, gamma, beta, st, BnMode::train, 1e-5);
    for (int i = 0; i < y.size(); i++) CHECK(std::abs(y.data()[i]) < 1e-9);
}

TEST_CASE("batchnorm: eval mode with unit stats is the affine map") {
    Rng rng(4);
    Tensor x = oracle::random_tensor(rng, {3, 2}, false);
    Tensor gamma = Tensor::from({2}, {2.0, 0.5});
    Tensor beta = Tensor::from({2}, {1.0, -1.0});
    BnState st = BnState::make(2);  // mean 0, var 1
    Tensor y = nn::batchnorm(x, gamma, beta, st, BnMode::eval, 0.0);
    for (int r = 0; r < 3; r++) {
        for (int c = 0; c < 2; c++) {
            CHECK(y.data()[r * 2 + c] ==
                  doctest::Approx(gamma.data()[c] * x.data()[r * 2 + c] + beta.data()[c]));
        }
    }
}

TEST_CASE("batchnorm: train-mode output has per-feature mean 0") {
    Rng rng(5);
    Tensor x = oracle::random_tensor(rng, {16, 4}, false);
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta = Tensor::zeros({4});
    BnState st = BnState::make(4);
    Tensor y = nn::batchnorm(x, gamma, beta, st, BnMode::train);
    for (int c = 0; c < 4; c++) {
        double mean = 0;
        for (int r = 0; r < 16; r++) mean += y.data()[r * 4 + c];
        CHECK(std::abs(mean / 16) < 1e-6);
    }
}

TEST_CASE("batchnorm: single-row train batch degenerates to the affine map") {
    Tensor x = Tensor::from({1, 2}, {3.0, -4.0});
    Tensor gamma = Tensor::from({2}, {2.0, 1.0});
    Tensor beta = Tensor::from({2}, {0.5, 0.0});
    BnState st = BnState::make(2);
    Tensor y = nn::batchnorm(x, gamma, beta, st, BnMode::train);
    CHECK(y.data()[0] == doctest::Approx(6.5));
    CHECK(y.data()[1] == doctest::Approx(-4.0));
    CHECK(st.running_mean[0] == 0.0);  // stats untouched
    CHECK(st.running_var[0] == 1.0);
}

TEST_CASE("sigmoid(0) = 0.5 and friends") {
    Tensor x = Tensor::from({3}, {0.0, 100.0, -100.0});
    Tensor y = nn::sigmoid(x);
    CHECK(y.data()[0] == doctest::Approx(0.5));
    CHECK(y.data()[1] == doctest::Approx(1.0));
    CHECK(y.data()[2] == doctest::Approx(0.0));
    CHECK(nn::tanh(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(nn::relu(Tensor::from({2}, {-3.0, 2.0})).data()[0] == 0.0);
}

TEST_CASE("bilinear with zero weight scores zero") {
    Rng rng(6);
    Tensor x = oracle::random_tensor(rng, {4, 3}, false);
    Tensor w = Tensor::zeros({3, 3});
    Tensor s = nn::bilinear_pairs(x, w, {{0, 1}, {2, 3}, {1, 2}});
    for (int i = 0; i < s.size(); i++) CHECK(s.data()[i] == 0.0);
}

TEST_CASE("bilinear with identity weight is the dot product") {
    Rng rng(7);
    Tensor x = oracle::random_tensor(rng, {5, 4}, false);
    Tensor w = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; i++) w.data()[i * 4 + i] = 1.0;
    Tensor s = nn::bilinear_pairs(x, w, {{0, 3}, {1, 4}});
    for (int r = 0; r < 2; r++) {
        const int a = r == 0 ? 0 : 1;
        const int b = r == 0 ? 3 : 4;
        double dot = 0;
        for (int c = 0; c < 4; c++) dot += x.data()[a * 4 + c] * x.data()[b * 4 + c];
        CHECK(s.data()[r] == doctest::Approx(dot).epsilon(1e-12));
    }
}

TEST_CASE("max over a tied segment routes gradient to the first row") {
    Tensor x = Tensor::from({3, 1}, {2.0, 2.0, 2.0}, true);
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor m = nn::max_reduce_segments(x, {0, 3});
        nn::backward(nn::sum(m), tape);
    }
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("max_reduce_segments rejects empty segments") {
    Tensor x = Tensor::zeros({2, 2});
    CHECK_THROWS_WITH_AS(nn::max_reduce_segments(x, {0, 0, 2}), doctest::Contains("empty"),
                         std::runtime_error);
}

TEST_CASE("bce loss values") {
    // perfect prediction
    Tensor p = Tensor::from({4}, {1.0, 0.0, 1.0, 0.0});
    Tensor y = Tensor::from({4}, {1.0, 0.0, 1.0, 0.0});
    CHECK(nn::bce_loss(p, y, 1e-7).item() <= 1e-6);
    // maximum uncertainty
    Tensor half = Tensor::full({8}, 0.5);
    Tensor yy = Tensor::from({8}, {1, 0, 1, 0, 1, 1, 0, 0});
    CHECK(nn::bce_loss(half, yy).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bce matches a scalar loop oracle") {
    Rng rng(8);
    for (int rep = 0; rep < 10; rep++) {
        const int n = rng.uniform_int(1, 50);
        Tensor p = oracle::random_tensor(rng, {n}, false, 0.05, 0.95);
        Tensor y = Tensor::zeros({n});
        for (int i = 0; i < n; i++) y.data()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        double ref = 0;
        for (int i = 0; i < n; i++) {
            ref -= y.data()[i] * std::log(p.data()[i]) +
                   (1 - y.data()[i]) * std::log(1 - p.data()[i]);
        }
        ref /= n;
        CHECK(nn::bce_loss(p, y).item() == doctest::Approx(ref).epsilon(1e-9));
    }
}

TEST_CASE("masked mse conventions") {
    Tensor pred = Tensor::zeros({2, 2, 2});
    Tensor target = Tensor::zeros({2, 2, 2});
    Tensor empty_mask = Tensor::zeros({2, 2});
    CHECK(nn::masked_mse(pred, target, empty_mask).item() == 0.0);

    // single masked cell with error (0.1, 0.2): sum over components -> 0.05
    pred.data()[0] = 0.1;
    pred.data()[1] = 0.2;
    Tensor mask = Tensor::zeros({2, 2});
    mask.data()[0] = 1.0;
    CHECK(nn::masked_mse(pred, target, mask).item() == doctest::Approx(0.05).epsilon(1e-12));

    // identical on masked cells -> 0 even with junk elsewhere
    target.data()[0] = 0.1;
    target.data()[1] = 0.2;
    pred.data()[6] = 9.0;
    CHECK(nn::masked_mse(pred, target, mask).item() == 0.0);
}

TEST_CASE("bce is permutation invariant over elements") {
    Rng rng(90);
    const int n = 17;
    Tensor p = oracle::random_tensor(rng, {n}, false, 0.05, 0.95);
    Tensor y = Tensor::zeros({n});
    for (int i = 0; i < n; i++) y.data()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double base = nn::bce_loss(p, y).item();
    for (int i = 0; i < n; i++) {
        const int j = rng.uniform_int(0, n - 1);
        std::swap(p.data()[i], p.data()[j]);
        std::swap(y.data()[i], y.data()[j]);
    }
    CHECK(nn::bce_loss(p, y).item() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("masked mse is permutation invariant over cells") {
    Rng rng(9);
    Tensor pred = oracle::random_tensor(rng, {2, 3, 2}, false);
    Tensor target = oracle::random_tensor(rng, {2, 3, 2}, false);
    Tensor mask = Tensor::from({2, 3}, {1, 0, 1, 1, 0, 1});
    const double base = nn::masked_mse(pred, target, mask).item();
    // swap two masked cells in both tensors
    auto swap_cell = [](Tensor& t, int a, int b) {
        std::swap(t.data()[2 * a], t.data()[2 * b]);
        std::swap(t.data()[2 * a + 1], t.data()[2 * b + 1]);
    };
    swap_cell(pred, 0, 5);
    swap_cell(target, 0, 5);
    CHECK(nn::masked_mse(pred, target, mask).item() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::from({3}, {1.0, -2.0, 3.0}, true);
    {
        Tape tape;
        Tape::Scope scope(tape);
        nn::backward(nn::sum(x), tape);
        for (int i = 0; i < 3; i++) CHECK(x.grad()[i] == 1.0);
    }
    x.zero_grad();
    {
        Tape tape;
        Tape::Scope scope(tape);
        nn::backward(nn::sum(nn::mul(x, x)), tape);
        for (int i = 0; i < 3; i++) CHECK(x.grad()[i] == 2.0 * x.data()[i]);
    }
}

TEST_CASE("backward on a detached tensor throws") {
    Tensor x = Tensor::scalar(1.0);  // requires_grad = false
    Tape tape;
    CHECK_THROWS_WITH_AS(nn::backward(x, tape), doctest::Contains("detached"),
                         std::runtime_error);
}

// ---- finite-difference gradient suite ----

namespace {

void run_gradcheck(const char* name, const std::function<Tensor()>& fn,
                   const std::vector<Tensor>& inputs) {
    const auto res = oracle::gradcheck(fn, inputs);
    INFO(name, " max rel err ", res.max_rel_err);
    CHECK(res.ok);
}

}  // namespace

TEST_CASE("gradients: elementwise ops") {
    Rng rng(10);
    for (int rep = 0; rep < 20; rep++) {
        const int n = rng.uniform_int(2, 12);
        Tensor a = oracle::random_tensor(rng, {n}, true);
        Tensor b = oracle::random_tensor(rng, {n}, true);
        // keep relu inputs away from the kink
        for (int i = 0; i < n; i++) {
            if (std::abs(a.data()[i]) < 1e-3) a.data()[i] += 0.1;
        }
        run_gradcheck("relu", [&] { return nn::sum(nn::relu(a)); }, {a});
        run_gradcheck("sigmoid", [&] { return nn::sum(nn::sigmoid(a)); }, {a});
        run_gradcheck("tanh", [&] { return nn::sum(nn::tanh(a)); }, {a});
        run_gradcheck("add", [&] { return nn::sum(nn::mul(nn::add(a, b), b)); }, {a, b});
        run_gradcheck("sub", [&] { return nn::sum(nn::mul(nn::sub(a, b), a)); }, {a, b});
        run_gradcheck("scale", [&] { return nn::sum(nn::scale(a, -1.7)); }, {a});
    }
}

TEST_CASE("gradients: linear, concat, gather, bilinear") {
    Rng rng(11);
    for (int rep = 0; rep < 20; rep++) {
        const int n = rng.uniform_int(2, 6);
        const int din = rng.uniform_int(1, 5);
        const int dout = rng.uniform_int(1, 5);
        Tensor x = oracle::random_tensor(rng, {n, din}, true);
        Tensor w = oracle::random_tensor(rng, {dout, din}, true);
        Tensor b = oracle::random_tensor(rng, {dout}, true);
        run_gradcheck("linear", [&] { return nn::sum(nn::linear(x, w, b)); }, {x, w, b});

        Tensor y = oracle::random_tensor(rng, {n, 3}, true);
        run_gradcheck("concat",
                      [&] { return nn::sum(nn::mul(nn::concat_cols(x, y),
                                                   nn::concat_cols(x, y))); },
                      {x, y});

        std::vector<int> idx;
        for (int i = 0; i < n + 2; i++) idx.push_back(rng.uniform_int(0, n - 1));
        run_gradcheck("gather_rows",
                      [&] {
                          Tensor g = nn::gather_rows(x, idx);
                          return nn::sum(nn::mul(g, g));
                      },
                      {x});

        Tensor wq = oracle::random_tensor(rng, {din, din}, true);
        std::vector<std::pair<int, int>> pairs;
        for (int i = 0; i < n; i++) {
            pairs.emplace_back(rng.uniform_int(0, n - 1), rng.uniform_int(0, n - 1));
        }
        run_gradcheck("bilinear_pairs",
                      [&] { return nn::sum(nn::sigmoid(nn::bilinear_pairs(x, wq, pairs))); },
                      {x, wq});
    }
}

TEST_CASE("gradients: conv2d") {
    Rng rng(12);
    for (int rep = 0; rep < 20; rep++) {
        const int ci = rng.uniform_int(1, 3);
        const int co = rng.uniform_int(1, 3);
        const int k = rep % 2 == 0 ? 3 : 1;
        const int stride = rng.uniform_int(1, 2);
        const int pad = k / 2;
        int h = rng.uniform_int(k, 6);
        int w = rng.uniform_int(k, 6);
        h -= (h + 2 * pad - k) % stride;
        w -= (w + 2 * pad - k) % stride;
        if (h < k || w < k) continue;
        Tensor x = oracle::random_tensor(rng, {ci, h, w}, true);
        Tensor wt = oracle::random_tensor(rng, {co, ci, k, k}, true);
        Tensor b = oracle::random_tensor(rng, {co}, true);
        run_gradcheck("conv2d",
                      [&] {
                          Tensor y = nn::conv2d(x, wt, b, stride, pad);
                          return nn::sum(nn::mul(y, y));
                      },
                      {x, wt, b});
    }
}

TEST_CASE("gradients: batchnorm in all modes") {
    Rng rng(13);
    for (int rep = 0; rep < 20; rep++) {
        const int n = rng.uniform_int(2, 8);
        const int c = rng.uniform_int(1, 4);
        Tensor x = oracle::random_tensor(rng, {n, c}, true);
        Tensor gamma = oracle::random_tensor(rng, {c}, true, 0.5, 1.5);
        Tensor beta = oracle::random_tensor(rng, {c}, true);
        run_gradcheck("batchnorm_train",
                      [&] {
                          BnState st = BnState::make(c);  // fresh per call
                          Tensor y = nn::batchnorm(x, gamma, beta, st, BnMode::train);
                          return nn::sum(nn::mul(y, y));
                      },
                      {x, gamma, beta});
        BnState eval_st = BnState::make(c);
        for (int i = 0; i < c; i++) {
            eval_st.running_mean[i] = rng.uniform(-1, 1);
            eval_st.running_var[i] = rng.uniform(0.5, 2.0);
        }
        run_gradcheck("batchnorm_eval",
                      [&] {
                          Tensor y = nn::batchnorm(x, gamma, beta, eval_st, BnMode::eval);
                          return nn::sum(nn::mul(y, y));
                      },
                      {x, gamma, beta});
    }
}

TEST_CASE("gradients: segment max, losses, permute, cells") {
    Rng rng(14);
    for (int rep = 0; rep < 20; rep++) {
        const int d = rng.uniform_int(1, 4);
        std::vector<int> offsets = {0};
        for (int s = 0; s < 3; s++) offsets.push_back(offsets.back() + rng.uniform_int(1, 4));
        Tensor x = oracle::random_tensor(rng, {offsets.back(), d}, true);
        run_gradcheck("max_reduce_segments",
                      [&] {
                          Tensor m = nn::max_reduce_segments(x, offsets);
                          return nn::sum(nn::mul(m, m));
                      },
                      {x});

        const int n = rng.uniform_int(2, 20);
        Tensor p = oracle::random_tensor(rng, {n}, true, 0.1, 0.9);
        Tensor y = Tensor::zeros({n});
        for (int i = 0; i < n; i++) y.data()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        run_gradcheck("bce_loss", [&] { return nn::bce_loss(p, y); }, {p});

        Tensor pred = oracle::random_tensor(rng, {3, 3, 2}, true);
        Tensor target = oracle::random_tensor(rng, {3, 3, 2}, false);
        Tensor mask = Tensor::zeros({3, 3});
        for (int i = 0; i < 9; i++) mask.data()[i] = rng.bernoulli(0.6) ? 1.0 : 0.0;
        run_gradcheck("masked_mse", [&] { return nn::masked_mse(pred, target, mask); }, {pred});

        Tensor grid = oracle::random_tensor(rng, {d, 3, 3}, true);
        std::vector<int> cells;
        for (int i = 0; i < 4; i++) cells.push_back(rng.uniform_int(0, 8));
        run_gradcheck("gather_cells",
                      [&] {
                          Tensor g = nn::gather_cells(grid, cells);
                          return nn::sum(nn::mul(g, g));
                      },
                      {grid});
        run_gradcheck("chw_to_hwc",
                      [&] {
                          Tensor g = nn::chw_to_hwc(grid);
                          return nn::sum(nn::mul(g, g));
                      },
                      {grid});
        run_gradcheck("crop2d",
                      [&] {
                          Tensor g = nn::crop2d(grid, 2, 2);
                          return nn::sum(nn::mul(g, g));
                      },
                      {grid});
    }
}

TEST_CASE("adam: zero gradients are a no-op for any step count") {
    Rng rng(15);
    Tensor p = oracle::random_tensor(rng, {5}, true);
    const std::vector<double> before = p.values();
    nn::Adam adam(0.05);
    for (int t = 0; t < 7; t++) {
        p.zero_grad();
        adam.step({{"p", p}});
    }
    CHECK(p.values() == before);
}

TEST_CASE("adam: first step with unit gradient moves by about -lr") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    p.grad()[0] = 1.0;
    nn::Adam adam(1e-3, 0.9, 0.999, 1e-8);
    adam.step({{"p", p}});
    // bias correction makes mhat = vhat = 1, so the update is lr / (1 + eps)
    CHECK(p.data()[0] == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: two steps decrease a convex quadratic") {
    Tensor p = Tensor::from({1}, {3.0}, true);
    nn::Adam adam(0.1);
    auto f = [&] { return p.data()[0] * p.data()[0]; };
    const double f0 = f();
    for (int t = 0; t < 2; t++) {
        p.zero_grad();
        Tape tape;
        {
            Tape::Scope scope(tape);
            nn::backward(nn::sum(nn::mul(p, p)), tape);
        }
        adam.step({{"p", p}});
    }
    CHECK(f() < f0);
}

TEST_CASE("edgeconv composite gradient") {
    // ReLU(Theta [x_i || x_j - x_i]) with segment-max aggregation
    Rng rng(16);
    for (int rep = 0; rep < 10; rep++) {
        const int n = rng.uniform_int(2, 5);
        const int d = rng.uniform_int(1, 4);
        const int out = rng.uniform_int(1, 4);
        Tensor x = oracle::random_tensor(rng, {n, d}, true);
        Tensor w = oracle::random_tensor(rng, {out, 2 * d}, true);
        Tensor b = oracle::random_tensor(rng, {out}, true);
        std::vector<int> dst, src;
        std::vector<int> offsets = {0};
        for (int i = 0; i < n; i++) {
            for (int j = 0; j < n; j++) {
                if (i == j) continue;
                dst.push_back(i);
                src.push_back(j);
            }
            offsets.push_back(static_cast<int>(dst.size()));
        }
        run_gradcheck("edgeconv",
                      [&] {
                          Tensor xi = nn::gather_rows(x, dst);
                          Tensor xj = nn::gather_rows(x, src);
                          Tensor msg = nn::relu(
                              nn::linear(nn::concat_cols(xi, nn::sub(xj, xi)), w, b));
                          Tensor agg = nn::max_reduce_segments(msg, offsets);
                          return nn::sum(nn::mul(agg, agg));
                      },
                      {x, w, b});
    }
}
