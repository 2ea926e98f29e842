#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "regerr/nn/ops.hpp"
#include "regerr/rng.hpp"

using namespace regerr;
using namespace regerr::nn;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

// Central-difference check of d(scalar f)/d(inputs) against the tape gradient.
// `f` must rebuild the graph from the leaf tensors it is given.
void check_gradients(const std::vector<Shape>& shapes,
                     const std::function<Tensor(const std::vector<Tensor>&)>& f, Rng& rng,
                     double tol = 1e-6, double eps = 1e-5, double value_scale = 1.0) {
    std::vector<std::vector<double>> base;
    for (const auto& s : shapes)
        base.push_back(random_values(static_cast<std::size_t>(shape_numel(s)), rng, value_scale));

    auto build = [&](int perturb_input, std::size_t perturb_idx, double delta) {
        std::vector<Tensor> leaves;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            auto vals = base[i];
            if (static_cast<int>(i) == perturb_input) vals[perturb_idx] += delta;
            leaves.push_back(Tensor::from(shapes[i], std::move(vals), true));
        }
        return std::pair{leaves, Tensor{}};
    };

    auto [leaves, _] = build(-1, 0, 0.0);
    Tensor loss = f(leaves);
    backward(loss);

    for (std::size_t i = 0; i < shapes.size(); ++i) {
        for (std::size_t j = 0; j < base[i].size(); ++j) {
            auto [lp, _p] = build(static_cast<int>(i), j, eps);
            auto [lm, _m] = build(static_cast<int>(i), j, -eps);
            const double fd = (f(lp).item() - f(lm).item()) / (2.0 * eps);
            const double an = leaves[i].grad()[j];
            CHECK(std::abs(fd - an) < tol * std::max(1.0, std::abs(fd)));
        }
    }
}

// A nonlinear scalarization so constant gradients do not mask mapping bugs.
Tensor squash(const Tensor& t) { return mse_loss(t, Tensor::zeros(t.shape())); }

} // namespace

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(11);
    const Shape s{2, 3};
    check_gradients({s, s}, [](const std::vector<Tensor>& v) { return squash(add(v[0], v[1])); }, rng);
    check_gradients({s, s}, [](const std::vector<Tensor>& v) { return squash(sub(v[0], v[1])); }, rng);
    check_gradients({s, s}, [](const std::vector<Tensor>& v) { return squash(mul(v[0], v[1])); }, rng);
    check_gradients({s}, [](const std::vector<Tensor>& v) { return squash(scale(v[0], -1.7)); }, rng);
    check_gradients({s}, [](const std::vector<Tensor>& v) { return squash(gelu(v[0])); }, rng, 1e-5);
    check_gradients({s}, [](const std::vector<Tensor>& v) { return squash(softplus(v[0])); }, rng);
}

TEST_CASE("relu forward and subgradient") {
    Tensor x = Tensor::from({4}, {-2.0, -0.5, 0.5, 3.0}, true);
    Tensor y = relu(x);
    CHECK(y.data() == std::vector<double>{0.0, 0.0, 0.5, 3.0});
    backward(mean_all(y));
    CHECK(x.grad() == std::vector<double>{0.0, 0.0, 0.25, 0.25});
}

TEST_CASE("softplus is positive and asymptotically linear") {
    Tensor x = Tensor::from({3}, {-40.0, 0.0, 40.0});
    Tensor y = softplus(x);
    CHECK(y.data()[0] > 0.0);
    CHECK(y.data()[1] == doctest::Approx(std::log(2.0)));
    CHECK(y.data()[2] == doctest::Approx(40.0));
}

TEST_CASE("reshape and permute round-trip values and gradients") {
    Rng rng(12);
    check_gradients({{2, 3, 4}}, [](const std::vector<Tensor>& v) {
        return squash(permute(reshape(v[0], {4, 3, 2}), {2, 0, 1}));
    }, rng);

    // explicit value check: transpose of a 2x3
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor t = permute(a, {1, 0});
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.data() == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("narrow, concat, pad_dim, roll gradients") {
    Rng rng(13);
    check_gradients({{3, 5}}, [](const std::vector<Tensor>& v) {
        return squash(narrow(v[0], 1, 1, 3));
    }, rng);
    check_gradients({{2, 2, 3}, {2, 4, 3}}, [](const std::vector<Tensor>& v) {
        return squash(concat({v[0], v[1]}, 1));
    }, rng);
    check_gradients({{2, 3}}, [](const std::vector<Tensor>& v) {
        return squash(pad_dim(v[0], 1, 2, 1));
    }, rng);
    check_gradients({{2, 4, 4}}, [](const std::vector<Tensor>& v) {
        return squash(roll(v[0], {0, 1, -2}));
    }, rng);
}

TEST_CASE("roll forward matches manual shift") {
    Tensor a = Tensor::from({4}, {0, 1, 2, 3});
    CHECK(roll(a, {1}).data() == std::vector<double>{3, 0, 1, 2});
    CHECK(roll(a, {-1}).data() == std::vector<double>{1, 2, 3, 0});
}

TEST_CASE("concat then narrow recovers the parts") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 3}, {5, 6, 7, 8, 9, 10});
    Tensor c = concat({a, b}, 1);
    CHECK(c.shape() == Shape{2, 5});
    CHECK(narrow(c, 1, 0, 2).data() == a.data());
    CHECK(narrow(c, 1, 2, 3).data() == b.data());
}

TEST_CASE("linear matches manual matmul and finite differences") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::from({2, 3}, {1, 0, 2, 0, 1, 1});
    Tensor b = Tensor::from({3}, {10, 20, 30});
    Tensor y = linear(x, w, b);
    CHECK(y.data() == std::vector<double>{11, 22, 34, 13, 24, 40});

    Rng rng(14);
    check_gradients({{4, 3}, {3, 5}, {5}}, [](const std::vector<Tensor>& v) {
        return squash(linear(v[0], v[1], v[2]));
    }, rng, 1e-5);
}

TEST_CASE("bmm gradients, both orientations") {
    Rng rng(15);
    check_gradients({{2, 3, 4}, {2, 4, 2}}, [](const std::vector<Tensor>& v) {
        return squash(bmm(v[0], v[1], false));
    }, rng, 1e-5);
    check_gradients({{2, 3, 4}, {2, 2, 4}}, [](const std::vector<Tensor>& v) {
        return squash(bmm(v[0], v[1], true));
    }, rng, 1e-5);
}

TEST_CASE("softmax rows sum to one and gradients check out") {
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, -1, 0, 1});
    Tensor y = softmax_last(x);
    for (int r = 0; r < 2; ++r) {
        double s = y.data()[r * 3] + y.data()[r * 3 + 1] + y.data()[r * 3 + 2];
        CHECK(s == doctest::Approx(1.0));
    }
    Rng rng(16);
    check_gradients({{3, 4}}, [](const std::vector<Tensor>& v) {
        return squash(softmax_last(v[0]));
    }, rng);
}

TEST_CASE("layernorm normalizes and its gradient matches finite differences") {
    Tensor x = Tensor::from({1, 4}, {1, 2, 3, 4}, true);
    Tensor g = Tensor::from({4}, {1, 1, 1, 1});
    Tensor be = Tensor::from({4}, {0, 0, 0, 0});
    Tensor y = layernorm(x, g, be);
    double m = 0, var = 0;
    for (double v : y.data()) m += v;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    for (double v : y.data()) var += v * v;
    CHECK(var / 4.0 == doctest::Approx(1.0).epsilon(1e-3)); // eps shifts it slightly

    Rng rng(17);
    check_gradients({{3, 5}, {5}, {5}}, [](const std::vector<Tensor>& v) {
        return squash(layernorm(v[0], v[1], v[2]));
    }, rng, 1e-4);
}

TEST_CASE("conv3d identity kernel passes input through") {
    Rng rng(18);
    Tensor x = Tensor::from({1, 1, 3, 3, 3}, random_values(27, rng));
    std::vector<double> w(27, 0.0);
    w[13] = 1.0; // center tap
    Tensor k = Tensor::from({1, 1, 3, 3, 3}, w);
    Tensor y = conv3d(x, k, std::nullopt, 1, 1);
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < 27; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv3d gradients (stride 1 pad 1 and stride 2 pad 0)") {
    Rng rng(19);
    check_gradients({{1, 2, 3, 3, 3}, {2, 2, 3, 3, 3}, {2}}, [](const std::vector<Tensor>& v) {
        return squash(conv3d(v[0], v[1], v[2], 1, 1));
    }, rng, 1e-4, 1e-5, 0.5);
    check_gradients({{1, 1, 4, 4, 4}, {3, 1, 2, 2, 2}, {3}}, [](const std::vector<Tensor>& v) {
        return squash(conv3d(v[0], v[1], v[2], 2, 0));
    }, rng, 1e-4, 1e-5, 0.5);
}

TEST_CASE("maxpool3d_2 picks the max and routes gradient to it") {
    std::vector<double> v(8, 0.0);
    v[5] = 7.0;
    Tensor x = Tensor::from({1, 1, 2, 2, 2}, v, true);
    Tensor y = maxpool3d_2(x);
    CHECK(y.shape() == Shape{1, 1, 1, 1, 1});
    CHECK(y.item() == 7.0);
    backward(mean_all(y));
    for (std::size_t i = 0; i < 8; ++i) CHECK(x.grad()[i] == (i == 5 ? 1.0 : 0.0));
}

TEST_CASE("upsample_nearest3d_2 repeats voxels; gradient sums children") {
    Tensor x = Tensor::from({1, 1, 1, 1, 2}, {1.0, 2.0}, true);
    Tensor y = upsample_nearest3d_2(x);
    CHECK(y.shape() == Shape{1, 1, 2, 2, 4});
    for (int i = 0; i < 16; ++i) CHECK(y.data()[size_t(i)] == ((i % 4) < 2 ? 1.0 : 2.0));
    backward(mean_all(y));
    CHECK(x.grad()[0] == doctest::Approx(0.5));
    CHECK(x.grad()[1] == doctest::Approx(0.5));
}

TEST_CASE("gather_rows gathers and scatter-adds the gradient") {
    Tensor t = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Tensor g = gather_rows(t, {2, 0, 2});
    CHECK(g.data() == std::vector<double>{5, 6, 1, 2, 5, 6});
    backward(mean_all(g));
    CHECK(t.grad()[4] == doctest::Approx(2.0 / 6.0)); // row 2 gathered twice
    CHECK(t.grad()[0] == doctest::Approx(1.0 / 6.0));
    CHECK(t.grad()[2] == 0.0);
}

TEST_CASE("add_attn_extras layout: head fast, window slow, mask repeats") {
    const std::int64_t H = 2, nW = 2, T = 2, B = H * nW * 2; // two batch items
    Tensor logits = Tensor::zeros({B, T, T}, true);
    std::vector<double> bias_v(size_t(H * T * T));
    for (std::size_t i = 0; i < bias_v.size(); ++i) bias_v[i] = (i < 4) ? 100.0 : 200.0;
    Tensor bias = Tensor::from({H, T, T}, bias_v, true);
    std::vector<double> mask(size_t(nW * T * T), 0.0);
    for (std::size_t i = 4; i < 8; ++i) mask[i] = -1.0; // second window masked

    Tensor out = add_attn_extras(logits, bias, mask, H, nW);
    // batch index b: head = b % H, window = (b / H) % nW
    CHECK(out.data()[0] == 100.0);          // b=0: head 0, window 0
    CHECK(out.data()[4] == 200.0);          // b=1: head 1, window 0
    CHECK(out.data()[8] == 99.0);           // b=2: head 0, window 1
    CHECK(out.data()[12] == 199.0);         // b=3: head 1, window 1
    CHECK(out.data()[16] == 100.0);         // b=4: wraps to head 0, window 0

    backward(mean_all(out));
    // each bias element feeds B/H = 4 outputs
    CHECK(bias.grad()[0] == doctest::Approx(4.0 / double(B * T * T)));

    Rng rng(20);
    check_gradients({{4, 2, 2}, {2, 2, 2}}, [&mask](const std::vector<Tensor>& v) {
        return squash(add_attn_extras(v[0], v[1], mask, 2, 2));
    }, rng);
}

TEST_CASE("losses: values and gradients") {
    Tensor p = Tensor::from({4}, {1, 2, 3, 4});
    Tensor t = Tensor::from({4}, {1, 1, 5, 4});
    CHECK(mse_loss(p, t).item() == doctest::Approx((0 + 1 + 4 + 0) / 4.0));
    CHECK(mae_loss(p, t).item() == doctest::Approx((0 + 1 + 2 + 0) / 4.0));
    CHECK(mean_all(p).item() == doctest::Approx(2.5));

    Rng rng(21);
    check_gradients({{3, 4}, {3, 4}}, [](const std::vector<Tensor>& v) {
        return mse_loss(v[0], v[1]);
    }, rng);
    check_gradients({{2, 5}}, [](const std::vector<Tensor>& v) { return mean_all(v[0]); }, rng);
}

TEST_CASE("smoothness_loss: analytic ramp value and gradient check") {
    // slope-1 ramp along x on an 8^3 block: diffs are 1 along x for 7/8 of
    // voxels, 0 along y/z -> mean = 7/8 = 0.875
    const std::int64_t P = 8;
    std::vector<double> v(size_t(P * P * P));
    for (std::int64_t i = 0; i < P; ++i)
        for (std::int64_t j = 0; j < P; ++j)
            for (std::int64_t k = 0; k < P; ++k)
                v[size_t((i * P + j) * P + k)] = static_cast<double>(i);
    Tensor x = Tensor::from({1, 1, P, P, P}, v);
    CHECK(smoothness_loss(x).item() == doctest::Approx(0.875).epsilon(1e-12));
    CHECK(smoothness_loss(x, true).item() == doctest::Approx(0.875).epsilon(1e-12));

    Rng rng(22);
    check_gradients({{1, 1, 3, 4, 3}}, [](const std::vector<Tensor>& v2) {
        return smoothness_loss(v2[0]);
    }, rng, 1e-5);
}

TEST_CASE("graph reuse: node consumed twice accumulates both paths") {
    Tensor x = Tensor::from({2}, {3.0, -1.0}, true);
    Tensor y = mul(x, x); // x^2
    backward(mean_all(y));
    CHECK(x.grad()[0] == doctest::Approx(3.0));  // d/dx mean(x^2) = 2x/2
    CHECK(x.grad()[1] == doctest::Approx(-1.0));
}
