#include <doctest.h>

#include <cmath>
#include <vector>

#include "sgalign/kernels.hpp"
#include "sgalign/rng.hpp"

using namespace sgalign;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

} // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar kernels match naive arithmetic") {
    const auto& k = kernels::scalar_kernels();
    std::vector<double> a{1.0, -2.0, 3.0, 0.5};
    std::vector<double> b{2.0, 2.0, -1.0, 4.0};
    CHECK(k.dot(a.data(), b.data(), 4) == doctest::Approx(1.0 * 2 - 2 * 2 - 3 + 2.0));
    CHECK(k.sum(a.data(), 4) == doctest::Approx(2.5));
    CHECK(k.max(a.data(), 4) == 3.0);

    std::vector<double> out(4);
    k.add(a.data(), b.data(), out.data(), 4);
    CHECK(out[2] == 2.0);
    k.sub(a.data(), b.data(), out.data(), 4);
    CHECK(out[0] == -1.0);
    k.mul(a.data(), b.data(), out.data(), 4);
    CHECK(out[3] == 2.0);
    k.scale(a.data(), -2.0, out.data(), 4);
    CHECK(out[1] == 4.0);

    std::vector<double> y{1.0, 1.0, 1.0, 1.0};
    k.axpy(0.5, a.data(), y.data(), 4);
    CHECK(y[0] == 1.5);
    CHECK(y[1] == 0.0);
}

// Every SIMD variant must agree with the scalar reference. Reductions may
// reassociate, so dot/sum tolerances scale with the sum of magnitudes.
TEST_CASE("simd variants are equivalent to the scalar reference") {
    const auto variants = kernels::available_kernels();
    REQUIRE(!variants.empty());
    CHECK(std::string(variants.front()->name) == "scalar");
    INFO("active kernel set: " << kernels::active().name);

    const auto& ref = kernels::scalar_kernels();
    Rng rng(20240811);
    // sizes straddle vector widths and exercise remainder loops
    for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 63u, 64u, 257u, 1024u}) {
        auto a = random_vec(rng, n);
        auto b = random_vec(rng, n);
        double abs_budget = 0.0;
        for (std::size_t i = 0; i < n; ++i) abs_budget += std::fabs(a[i] * b[i]);

        for (const kernels::Kernels* k : variants) {
            CAPTURE(k->name);
            CAPTURE(n);
            CHECK(std::fabs(k->dot(a.data(), b.data(), n) - ref.dot(a.data(), b.data(), n)) <=
                  1e-13 * (abs_budget + 1.0));
            double abs_sum = 0.0;
            for (double x : a) abs_sum += std::fabs(x);
            CHECK(std::fabs(k->sum(a.data(), n) - ref.sum(a.data(), n)) <= 1e-13 * (abs_sum + 1.0));
            CHECK(k->max(a.data(), n) == ref.max(a.data(), n));

            std::vector<double> got(n), want(n);
            k->add(a.data(), b.data(), got.data(), n);
            ref.add(a.data(), b.data(), want.data(), n);
            CHECK(got == want);
            k->sub(a.data(), b.data(), got.data(), n);
            ref.sub(a.data(), b.data(), want.data(), n);
            CHECK(got == want);
            k->mul(a.data(), b.data(), got.data(), n);
            ref.mul(a.data(), b.data(), want.data(), n);
            CHECK(got == want);
            k->scale(a.data(), 1.7, got.data(), n);
            ref.scale(a.data(), 1.7, want.data(), n);
            CHECK(got == want);

            std::vector<double> y1 = b, y2 = b;
            k->axpy(-0.3, a.data(), y1.data(), n);
            ref.axpy(-0.3, a.data(), y2.data(), n);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(std::fabs(y1[i] - y2[i]) <= 1e-15 * (std::fabs(y2[i]) + 1.0));
            }
        }
    }
}

TEST_CASE("kernel selection by name") {
    CHECK(kernels::select_kernels("scalar"));
    CHECK(std::string(kernels::active().name) == "scalar");
    CHECK_FALSE(kernels::select_kernels("not-a-kernel"));
    CHECK(kernels::select_kernels("auto"));
}

} // TEST_SUITE
