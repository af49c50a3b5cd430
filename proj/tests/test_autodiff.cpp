#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hpsl/adam.hpp"
#include "hpsl/grad_check.hpp"
#include "hpsl/ops.hpp"
#include "hpsl/rng.hpp"

using namespace hpsl;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, RngStream rng) {
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.values) v = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("linear identity and scalar chain rule", "[autodiff]") {
    LayerParams p = make_layer(3, 3, false);
    for (std::size_t i = 0; i < 3; ++i) p.weight.at(i, i) = 1.0;
    Tensor x = random_matrix(4, 3, RngStream(1));
    CHECK(linear_forward(x, p).values == x.values);

    LayerParams scalar = make_layer(1, 1, false);
    scalar.weight.at(0, 0) = 2.0;
    scalar.bias.values[0] = 1.0;
    Tensor x1 = Tensor::matrix(1, 1);
    x1.values[0] = 3.0;
    LinearCtx ctx;
    Tensor y = linear_forward(x1, scalar, &ctx);
    CHECK(y.values[0] == 7.0);
    Tensor dy = Tensor::matrix(1, 1);
    dy.values[0] = 1.0;
    Tensor dx = linear_backward(dy, scalar, ctx);
    CHECK(scalar.weight.grad[0] == 3.0);
    CHECK(scalar.bias.grad[0] == 1.0);
    CHECK(dx.values[0] == 2.0);
}

TEST_CASE("linear gradient matches finite differences", "[autodiff]") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RngStream rng(seed);
        std::size_t in = 1 + rng.below(6), out = 1 + rng.below(6), rows = 2 + rng.below(5);
        LayerParams p = make_layer(in, out, false);
        init_layer(p, rng.child(1));
        Tensor x = random_matrix(rows, in, rng.child(2));

        auto loss = [&](bool with_grad) {
            LinearCtx ctx;
            Tensor y = linear_forward(x, p, with_grad ? &ctx : nullptr);
            double sum = 0.0;
            for (double v : y.values) sum += v * v;
            if (with_grad) {
                Tensor dy = y;
                for (double& v : dy.values) v *= 2.0;
                linear_backward(dy, p, ctx);
            }
            return sum;
        };
        std::vector<Tensor*> params{&p.weight, &p.bias};
        auto report = grad_check(loss, params, 1e-6);
        CHECK(report.max_rel_err < 1e-7);
    }
}

TEST_CASE("batchnorm zero-variance batch returns beta", "[autodiff]") {
    LayerParams p = make_layer(2, 3);
    p.bn_beta.values = {0.5, -1.0, 2.0};
    Tensor x = Tensor::matrix(4, 3);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) x.at(r, c) = 7.0;
    Tensor y = batchnorm_forward(x, p, Mode::Train, false);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(y.at(r, c) == p.bn_beta.values[c]);
}

TEST_CASE("batchnorm normalizes a large batch", "[autodiff]") {
    LayerParams p = make_layer(1, 1);
    RngStream rng(33);
    Tensor x = Tensor::matrix(1024, 1);
    for (auto& v : x.values) v = 3.0 + 2.0 * rng.normal();
    Tensor y = batchnorm_forward(x, p, Mode::Train, true);
    double mean = 0.0;
    for (double v : y.values) mean += v;
    mean /= 1024.0;
    double var = 0.0;
    for (double v : y.values) var += (v - mean) * (v - mean);
    var /= 1024.0;
    CHECK(std::fabs(mean) < 0.05);
    CHECK(std::fabs(var - 1.0) < 0.1);
    // running stats moved toward the batch stats
    CHECK(p.bn_running_mean.values[0] != 0.0);
}

TEST_CASE("batchnorm rejects train-mode batch of one", "[autodiff]") {
    LayerParams p = make_layer(1, 2);
    Tensor x = Tensor::matrix(1, 2);
    CHECK_THROWS_AS(batchnorm_forward(x, p, Mode::Train), ArgumentError);
    CHECK_NOTHROW(batchnorm_forward(x, p, Mode::Eval));
}

TEST_CASE("batchnorm gradient matches finite differences", "[autodiff]") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RngStream rng(seed + 10);
        std::size_t c = 1 + rng.below(4), rows = 3 + rng.below(6);
        LayerParams p = make_layer(c, c);
        for (auto& v : p.bn_gamma.values) v = rng.uniform(0.5, 1.5);
        for (auto& v : p.bn_beta.values) v = rng.uniform(-0.5, 0.5);
        Tensor x0 = random_matrix(rows, c, rng.child(3));
        // check gradients w.r.t. gamma/beta and the input path via a weight
        LayerParams lin = make_layer(c, c, false);
        init_layer(lin, rng.child(4));

        auto loss = [&](bool with_grad) {
            LinearCtx lctx;
            BatchNormCtx bctx;
            Tensor h = linear_forward(x0, lin, with_grad ? &lctx : nullptr);
            Tensor y = batchnorm_forward(h, p, Mode::Train, false,
                                         with_grad ? &bctx : nullptr);
            double sum = 0.0;
            for (double v : y.values) sum += std::sin(v);
            if (with_grad) {
                Tensor dy = y;
                for (std::size_t i = 0; i < dy.values.size(); ++i)
                    dy.values[i] = std::cos(y.values[i]);
                Tensor dh = batchnorm_backward(dy, p, bctx);
                linear_backward(dh, lin, lctx);
            }
            return sum;
        };
        std::vector<Tensor*> params{&p.bn_gamma, &p.bn_beta, &lin.weight, &lin.bias};
        auto report = grad_check(loss, params, 1e-5);
        CHECK(report.max_rel_err < 1e-5);
    }
}

TEST_CASE("relu clamps and routes gradient", "[autodiff]") {
    Tensor x = Tensor::matrix(1, 3);
    x.values = {-1.0, 0.0, 2.0};
    std::vector<std::uint8_t> mask;
    Tensor y = relu_forward(x, &mask);
    CHECK(y.values == std::vector<double>{0.0, 0.0, 2.0});
    Tensor dy = Tensor::matrix(1, 3);
    dy.values = {5.0, 5.0, 5.0};
    Tensor dx = relu_backward(dy, mask);
    CHECK(dx.values == std::vector<double>{0.0, 0.0, 5.0});
}

TEST_CASE("dropout statistics and identity cases", "[autodiff]") {
    Tensor x = Tensor::matrix(1, 100000);
    for (auto& v : x.values) v = 1.0;
    RngStream rng(4);

    Tensor same = dropout_forward(x, 0.0, Mode::Train, rng);
    CHECK(same.values == x.values);
    Tensor evals = dropout_forward(x, 0.7, Mode::Eval, rng);
    CHECK(evals.values == x.values);

    const double rate = 0.3;
    DropoutCtx ctx;
    Tensor y = dropout_forward(x, rate, Mode::Train, rng, &ctx);
    std::size_t survivors = 0;
    for (std::size_t i = 0; i < y.values.size(); ++i) {
        if (ctx.keep[i]) {
            ++survivors;
            CHECK(y.values[i] == Catch::Approx(1.0 / (1.0 - rate)));
        } else {
            CHECK(y.values[i] == 0.0);
        }
    }
    const double n = 1e5;
    const double sigma = std::sqrt(n * rate * (1.0 - rate));
    CHECK(std::fabs(static_cast<double>(survivors) - n * (1.0 - rate)) < 3.0 * sigma);

    Tensor dy = y;
    Tensor dx = dropout_backward(dy, ctx);
    for (std::size_t i = 0; i < dx.values.size(); ++i)
        if (!ctx.keep[i]) CHECK(dx.values[i] == 0.0);
}

TEST_CASE("masked set max ignores poisoned slots", "[autodiff]") {
    Tensor values({1, 3, 1});
    values.values = {5.0, 7.0, std::numeric_limits<double>::quiet_NaN()};
    std::vector<std::uint8_t> mask{1, 1, 0};
    std::vector<std::size_t> argmax;
    Tensor out = masked_set_max(values, mask, &argmax);
    CHECK(out.values[0] == 7.0);
    CHECK(argmax[0] == 1);

    Tensor dy = Tensor::matrix(1, 1);
    dy.values[0] = 1.0;
    Tensor dx = masked_set_max_backward(dy, argmax, 1, 3, 1);
    CHECK(dx.values == std::vector<double>{0.0, 1.0, 0.0});

    std::vector<std::uint8_t> all_false{0, 0, 0};
    CHECK_THROWS_AS(masked_set_max(values, all_false), ArgumentError);
}

TEST_CASE("set max tie routes gradient to lowest slot", "[autodiff]") {
    Tensor values({1, 3, 1});
    values.values = {4.0, 4.0, 4.0};
    std::vector<std::uint8_t> mask{1, 1, 1};
    std::vector<std::size_t> argmax;
    masked_set_max(values, mask, &argmax);
    CHECK(argmax[0] == 0);
}

TEST_CASE("softmax cross entropy values and stability", "[autodiff]") {
    std::vector<double> uniform(5, 0.3);
    CHECK(softmax_cross_entropy(uniform, 2) == Catch::Approx(std::log(5.0)));

    std::vector<double> big{1000.0, 0.0};
    double loss = softmax_cross_entropy(big, 0);
    CHECK(std::isfinite(loss));
    CHECK(loss < 1e-12);

    CHECK_THROWS_AS(softmax_cross_entropy(big, 2), ArgumentError);

    // loss decreases monotonically as the true-class gap grows
    double prev = std::numeric_limits<double>::infinity();
    for (double gap : {0.0, 1.0, 3.0, 10.0, 40.0}) {
        std::vector<double> logits{gap, 0.0};
        double l = softmax_cross_entropy(logits, 0);
        CHECK(l < prev);
        prev = l;
    }
}

TEST_CASE("softmax cross entropy gradient check", "[autodiff]") {
    RngStream rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t c = 2 + rng.below(6);
        std::size_t label = rng.below(c);
        Tensor logits = Tensor::matrix(1, c);
        for (auto& v : logits.values) v = rng.uniform(-3, 3);

        auto loss = [&](bool with_grad) {
            if (with_grad) {
                logits.ensure_grad();
                logits.zero_grad();
                return softmax_cross_entropy(logits.values, label, logits.grad);
            }
            return softmax_cross_entropy(logits.values, label);
        };
        std::vector<Tensor*> params{&logits};
        auto report = grad_check(loss, params, 1e-5);
        CHECK(report.max_rel_err < 1e-8);
    }
}

TEST_CASE("adam first step moves by about lr in sign direction", "[autodiff]") {
    Tensor w = Tensor::vector_of(3);
    w.values = {1.0, -2.0, 0.5};
    w.ensure_grad();
    w.grad = {0.3, -0.7, 2.0};
    std::vector<Tensor*> params{&w};
    AdamState st;
    st.reset(params);
    adam_step(params, st);
    CHECK(w.values[0] == Catch::Approx(1.0 - 0.001).epsilon(1e-4));
    CHECK(w.values[1] == Catch::Approx(-2.0 + 0.001).epsilon(1e-4));
    CHECK(w.values[2] == Catch::Approx(0.5 - 0.001).epsilon(1e-4));
}

TEST_CASE("adam leaves parameters alone on zero gradient", "[autodiff]") {
    Tensor w = Tensor::vector_of(2);
    w.values = {1.5, -0.5};
    w.ensure_grad();
    std::vector<Tensor*> params{&w};
    AdamState st;
    st.reset(params);
    for (int i = 0; i < 50; ++i) adam_step(params, st);
    CHECK(w.values == std::vector<double>{1.5, -0.5});
}

TEST_CASE("adam drives a quadratic bowl to the minimum", "[autodiff]") {
    Tensor w = Tensor::vector_of(2);
    w.values = {1.0, 1.0};
    w.ensure_grad();
    std::vector<Tensor*> params{&w};
    AdamState st;  // lr 0.001
    st.reset(params);
    for (int step = 0; step < 5000; ++step) {
        for (std::size_t i = 0; i < 2; ++i) w.grad[i] = 2.0 * w.values[i];
        adam_step(params, st);
    }
    CHECK(std::hypot(w.values[0], w.values[1]) < 1e-3);
}

TEST_CASE("adam update magnitude is gradient-scale invariant", "[autodiff]") {
    for (double scale : {1.0, 10.0, 1000.0}) {
        Tensor w = Tensor::vector_of(2);
        w.values = {1.0, -1.0};
        w.ensure_grad();
        w.grad = {0.4 * scale, -0.2 * scale};
        std::vector<Tensor*> params{&w};
        AdamState st;
        st.reset(params);
        adam_step(params, st);
        CHECK(w.values[0] == Catch::Approx(1.0 - 0.001).epsilon(1e-3));
        CHECK(w.values[1] == Catch::Approx(-1.0 + 0.001).epsilon(1e-3));
    }
}

TEST_CASE("grad_check flags a corrupted backward", "[autodiff]") {
    LayerParams p = make_layer(3, 2, false);
    init_layer(p, RngStream(5));
    Tensor x = random_matrix(4, 3, RngStream(6));
    auto loss = [&](bool with_grad) {
        LinearCtx ctx;
        Tensor y = linear_forward(x, p, with_grad ? &ctx : nullptr);
        double sum = 0.0;
        for (double v : y.values) sum += v;
        if (with_grad) {
            Tensor dy = Tensor::matrix(y.rows(), y.cols());
            for (auto& v : dy.values) v = 1.0;
            linear_backward(dy, p, ctx);
            p.weight.grad[0] += 0.5;  // deliberate corruption
        }
        return sum;
    };
    std::vector<Tensor*> params{&p.weight, &p.bias};
    auto report = grad_check(loss, params, 1e-6);
    CHECK(report.max_rel_err > 1e-2);
    CHECK(report.worst_param == 0);
    CHECK(report.worst_coord == 0);
}

TEST_CASE("eval-mode ops are deterministic", "[autodiff]") {
    RngStream rng(70);
    LayerParams p = make_layer(4, 4);
    init_layer(p, rng);
    for (auto& v : p.bn_running_mean.values) v = rng.uniform(-1, 1);
    for (auto& v : p.bn_running_var.values) v = rng.uniform(0.5, 2.0);
    Tensor x = random_matrix(6, 4, rng.child(1));
    auto run = [&] {
        Tensor y = linear_forward(x, p);
        y = batchnorm_forward(y, p, Mode::Eval);
        return relu_forward(y);
    };
    Tensor a = run(), b = run();
    CHECK(a.values == b.values);
}
