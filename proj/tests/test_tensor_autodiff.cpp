#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "sgalign/gradcheck.hpp"
#include "sgalign/ops.hpp"
#include "sgalign/rng.hpp"
#include "sgalign/tensor.hpp"

using namespace sgalign;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad, double amp = 1.0) {
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = amp * rng.normal();
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Checks one leaf's analytic gradient of loss = sum(out .* weights) against
// central finite differences.
double grad_vs_fd(const std::function<Tensor()>& forward, Tensor& leaf, double h = 1e-5) {
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = ops::sum_all(forward());
        tape.backward(loss);
    }
    Tensor fd = finite_diff_grad(
        [&](const Tensor&) { return ops::sum_all(forward()).value(); }, leaf, h);
    return max_relative_error(leaf.grad(), fd.values());
}

} // namespace

TEST_SUITE("tensor-autodiff") {

TEST_CASE("matmul identity and hand-checked products") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    Tensor c = ops::matmul(eye, b);
    CHECK(c.values() == std::vector<double>{3, 4, 5, 6});

    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor col = Tensor::from_data({2, 1}, {3, 4});
    CHECK(ops::matmul(a, col).value() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        ops::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 2]") != std::string::npos);
    }
}

TEST_CASE("matmul backward matches finite differences at 1e-6") {
    Rng rng(42);
    Tensor a = random_tensor(rng, {4, 5}, true);
    Tensor b = random_tensor(rng, {5, 3}, true);
    Tensor w = random_tensor(rng, {4, 3}, false);
    auto forward = [&]() { return ops::mul(ops::matmul(a, b), w); };
    CHECK(grad_vs_fd(forward, a) < 1e-6);
    a.zero_grad();
    b.zero_grad();
    CHECK(grad_vs_fd(forward, b) < 1e-6);
}

TEST_CASE("masked_softmax uniform and leak-proof cases") {
    Tensor logits = Tensor::from_data({3}, {0, 0, 0});
    Tensor p = ops::masked_softmax(logits, {1, 1, 1});
    for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // a huge masked logit cannot leak
    Tensor spiky = Tensor::from_data({3}, {5, 1000, 7});
    Tensor q = ops::masked_softmax(spiky, {1, 0, 1});
    const double z = std::exp(5.0 - 7.0) + 1.0;
    CHECK(q.values()[0] == doctest::Approx(std::exp(5.0 - 7.0) / z).epsilon(1e-12));
    CHECK(q.values()[1] == 0.0);
    CHECK(q.values()[2] == doctest::Approx(1.0 / z).epsilon(1e-12));
    CHECK(std::fabs(q.values()[0] + q.values()[2] - 1.0) < 1e-12);
}

TEST_CASE("masked_softmax rejects all-masked rows") {
    Tensor logits = Tensor::from_data({2}, {1, 2});
    CHECK_THROWS_AS(ops::masked_softmax(logits, {0, 0}), NumericError);
}

TEST_CASE("masked_softmax rows sum to one over many random rows") {
    Rng rng(7);
    for (int it = 0; it < 50; ++it) {
        const std::size_t n = 2 + rng.uniform_index(14);
        Tensor logits = random_tensor(rng, {4, n}, false, 5.0);
        std::vector<std::uint8_t> keep(n, 0);
        for (auto& k : keep) k = rng.uniform() < 0.6 ? 1 : 0;
        keep[rng.uniform_index(n)] = 1;
        Tensor p = ops::masked_softmax(logits, keep);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = p.values()[r * n + j];
                if (!keep[j]) CHECK(v == 0.0);
                sum += v;
            }
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("masked_softmax gradient: unmasked matches FD, masked is zero") {
    Rng rng(11);
    Tensor logits = random_tensor(rng, {3, 6}, true);
    std::vector<std::uint8_t> keep{1, 0, 1, 1, 0, 1};
    Tensor w = random_tensor(rng, {3, 6}, false);
    auto forward = [&]() { return ops::mul(ops::masked_softmax(logits, keep), w); };
    CHECK(grad_vs_fd(forward, logits) < 1e-5);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t j = 0; j < 6; ++j) {
            if (!keep[j]) CHECK(logits.grad()[r * 6 + j] == 0.0);
        }
    }
}

TEST_CASE("layer_norm constant row maps to bias") {
    Tensor x = Tensor::from_data({1, 3}, {2.5, 2.5, 2.5});
    Tensor gain = Tensor::full({3}, 1.0);
    Tensor bias = Tensor::zeros({3});
    Tensor y = ops::layer_norm(x, gain, bias, 1e-5);
    for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("layer_norm leaves an already-normalized row fixed as eps vanishes") {
    Tensor x = Tensor::from_data({1, 2}, {-1.0, 1.0});
    Tensor gain = Tensor::full({2}, 1.0);
    Tensor bias = Tensor::zeros({2});
    Tensor y = ops::layer_norm(x, gain, bias, 1e-14);
    CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm output statistics on random input") {
    Rng rng(13);
    Tensor x = random_tensor(rng, {3, 8}, false, 10.0);
    Tensor gain = Tensor::full({8}, 1.0);
    Tensor bias = Tensor::zeros({8});
    Tensor y = ops::layer_norm(x, gain, bias, 1e-5);
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 8; ++j) mean += y.values()[r * 8 + j];
        mean /= 8.0;
        for (std::size_t j = 0; j < 8; ++j) {
            const double c = y.values()[r * 8 + j] - mean;
            var += c * c;
        }
        var /= 8.0;
        CHECK(std::fabs(mean) < 1e-12);
        CHECK(std::fabs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("layer_norm gradients match FD for x, gain and bias") {
    Rng rng(17);
    Tensor x = random_tensor(rng, {4, 6}, true);
    Tensor gain = random_tensor(rng, {6}, true);
    Tensor bias = random_tensor(rng, {6}, true);
    Tensor w = random_tensor(rng, {4, 6}, false);
    auto forward = [&]() { return ops::mul(ops::layer_norm(x, gain, bias, 1e-5), w); };
    CHECK(grad_vs_fd(forward, x) < 1e-4);
    x.zero_grad();
    gain.zero_grad();
    CHECK(grad_vs_fd(forward, gain) < 1e-4);
    gain.zero_grad();
    bias.zero_grad();
    CHECK(grad_vs_fd(forward, bias) < 1e-4);
}

TEST_CASE("backward of a plain sum is all-ones") {
    Rng rng(19);
    Tensor x = random_tensor(rng, {3, 4}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(ops::sum_all(x));
    }
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of dot(x,x)/2 returns x") {
    Rng rng(23);
    Tensor x = random_tensor(rng, {5}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = ops::scale(ops::sum_all(ops::mul(x, x)), 0.5);
        tape.backward(loss);
    }
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(x.grad()[i] == doctest::Approx(x.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::zeros({2, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = ops::scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("repeated backward without reset accumulates leaf gradients") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = ops::sum_all(ops::mul(x, x));
    }
    tape.backward(loss);
    tape.backward(loss);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(x.grad()[i] == doctest::Approx(4.0 * x.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("finite_diff_grad basics") {
    Rng rng(29);
    Tensor x = random_tensor(rng, {4}, false);
    Tensor ones = finite_diff_grad(
        [](const Tensor& t) {
            NoTapeScope nt;
            return ops::sum_all(t).value();
        },
        x, 1e-5);
    for (double g : ones.values()) CHECK(g == doctest::Approx(1.0).epsilon(1e-9));

    Tensor three = Tensor::scalar(3.0);
    Tensor six = finite_diff_grad(
        [](const Tensor& t) { return t.value() * t.value(); }, three, 1e-5);
    CHECK(six.values()[0] == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("backward agrees with FD on a matmul-softmax-layernorm composite") {
    Rng rng(31);
    Tensor x = random_tensor(rng, {3, 4}, true);
    Tensor wproj = random_tensor(rng, {4, 5}, true);
    Tensor gain = Tensor::full({5}, 1.0);
    Tensor bias = Tensor::zeros({5});
    std::vector<std::uint8_t> keep{1, 1, 0, 1, 1};
    Tensor mixw = random_tensor(rng, {3, 5}, false);
    auto forward = [&]() {
        Tensor h = ops::matmul(x, wproj);
        Tensor p = ops::masked_softmax(h, keep);
        Tensor n = ops::layer_norm(p, gain, bias, 1e-5);
        return ops::mul(n, mixw);
    };
    CHECK(grad_vs_fd(forward, x) < 1e-5);
    x.zero_grad();
    wproj.zero_grad();
    CHECK(grad_vs_fd(forward, wproj) < 1e-5);
}

TEST_CASE("gradient oracle across remaining ops") {
    Rng rng(37);

    SUBCASE("add/sub/mul/scale/transpose") {
        Tensor a = random_tensor(rng, {3, 4}, true);
        Tensor b = random_tensor(rng, {3, 4}, true);
        Tensor w = random_tensor(rng, {4, 3}, false);
        auto forward = [&]() {
            Tensor s = ops::add(ops::sub(a, b), ops::mul(a, ops::scale(b, 0.5)));
            return ops::mul(ops::transpose(s), w);
        };
        CHECK(grad_vs_fd(forward, a) < 1e-4);
        a.zero_grad();
        b.zero_grad();
        CHECK(grad_vs_fd(forward, b) < 1e-4);
    }

    SUBCASE("add_rowwise bias") {
        Tensor x = random_tensor(rng, {4, 3}, true);
        Tensor bias = random_tensor(rng, {3}, true);
        Tensor w = random_tensor(rng, {4, 3}, false);
        auto forward = [&]() { return ops::mul(ops::add_rowwise(x, bias), w); };
        CHECK(grad_vs_fd(forward, bias) < 1e-4);
    }

    SUBCASE("relu and gelu away from the kink") {
        Tensor x = Tensor::from_data({6}, {-2.0, -0.7, -0.2, 0.3, 1.1, 2.4}, true);
        Tensor w = random_tensor(rng, {6}, false);
        auto forward_relu = [&]() { return ops::mul(ops::relu(x), w); };
        CHECK(grad_vs_fd(forward_relu, x) < 1e-4);
        x.zero_grad();
        auto forward_gelu = [&]() { return ops::mul(ops::gelu(x), w); };
        CHECK(grad_vs_fd(forward_gelu, x) < 1e-4);
    }

    SUBCASE("log_softmax + diagonal") {
        Tensor s = random_tensor(rng, {4, 4}, true);
        auto forward = [&]() { return ops::take_diagonal(ops::log_softmax_rows(s)); };
        CHECK(grad_vs_fd(forward, s) < 1e-4);
    }

    SUBCASE("gather/concat/slice/reshape") {
        Tensor table = random_tensor(rng, {5, 3}, true);
        Tensor w = random_tensor(rng, {4, 8}, false);
        auto forward = [&]() {
            Tensor g1 = ops::gather_rows(table, {0, 2, 2, 4});
            Tensor g2 = ops::gather_rows(table, {1, 1, 3, 0});
            Tensor wide = ops::concat_cols({g1, g2});
            Tensor cut = ops::slice_cols(wide, 1, 5);
            Tensor stack = ops::concat_rows({cut, cut});
            return ops::mul(ops::reshape(stack, {4, 8}), w);
        };
        CHECK(grad_vs_fd(forward, table) < 1e-4);
    }

    SUBCASE("l2_normalize_rows") {
        Tensor x = random_tensor(rng, {3, 5}, true);
        Tensor w = random_tensor(rng, {3, 5}, false);
        auto forward = [&]() { return ops::mul(ops::l2_normalize_rows(x), w); };
        CHECK(grad_vs_fd(forward, x) < 1e-4);
    }

    SUBCASE("conv2d") {
        Tensor img = random_tensor(rng, {6, 6, 2}, true);
        Tensor weight = random_tensor(rng, {2, 2, 2, 3}, true);
        Tensor bias = random_tensor(rng, {3}, true);
        Tensor w = random_tensor(rng, {3, 3, 3}, false);
        auto forward = [&]() { return ops::mul(ops::conv2d(img, weight, bias, 2), w); };
        CHECK(grad_vs_fd(forward, img) < 1e-4);
        img.zero_grad();
        weight.zero_grad();
        CHECK(grad_vs_fd(forward, weight) < 1e-4);
        weight.zero_grad();
        bias.zero_grad();
        CHECK(grad_vs_fd(forward, bias) < 1e-4);
    }
}

TEST_CASE("l2_normalize rejects near-zero rows") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 0, 0, 0});
    CHECK_THROWS_AS(ops::l2_normalize_rows(x), NumericError);
}

TEST_CASE("forward results are bit-identical across repeated runs") {
    auto run = []() {
        Rng rng(99);
        Tensor x = random_tensor(rng, {4, 8}, false);
        Tensor w = random_tensor(rng, {8, 8}, false);
        Tensor gain = Tensor::full({8}, 1.0);
        Tensor bias = Tensor::zeros({8});
        Tensor h = ops::layer_norm(ops::matmul(x, w), gain, bias, 1e-5);
        return ops::masked_softmax(h, std::vector<std::uint8_t>(8, 1)).values();
    };
    CHECK(run() == run());
}

} // TEST_SUITE
