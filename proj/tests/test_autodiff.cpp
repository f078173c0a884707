#include "doctest.h"

#include "vmd/autodiff.hpp"
#include "vmd/gradcheck.hpp"
#include "vmd/rng.hpp"

#include <cmath>
#include <numeric>

using namespace vmd;
using ad::Array;
using ad::Shape;
using ad::Var;

namespace {

Array<double> randn(Rng& rng, Shape shape, double s = 1.0) {
    Array<double> a(std::move(shape));
    for (auto& v : a.data) {
        v = s * rng.normal();
    }
    return a;
}

std::vector<double> rand_weights(Rng& rng, std::size_t n) {
    std::vector<double> w(n);
    for (auto& v : w) {
        v = rng.normal();
    }
    return w;
}

// Reduce to a scalar through random weights so every output entry matters.
double check_unary(Rng& rng, Shape shape, const std::function<Var<double>(const Var<double>&)>& f) {
    std::vector<Var<double>> params = {ad::parameter(randn(rng, shape))};
    const auto probe = f(params[0]);
    const auto w = rand_weights(rng, probe.size());
    auto res = gradcheck(params, [&] { return ad::weighted_sum<double>(f(params[0]), w); });
    return res.max_rel_error;
}

double check_binary(Rng& rng, Shape sa, Shape sb,
                    const std::function<Var<double>(const Var<double>&, const Var<double>&)>& f) {
    std::vector<Var<double>> params = {ad::parameter(randn(rng, sa)), ad::parameter(randn(rng, sb))};
    const auto probe = f(params[0], params[1]);
    const auto w = rand_weights(rng, probe.size());
    auto res = gradcheck(params, [&] { return ad::weighted_sum<double>(f(params[0], params[1]), w); });
    return res.max_rel_error;
}

Shape random_shape(Rng& rng) {
    return Shape{1 + rng.uniform_int(4), 1 + rng.uniform_int(8), 1 + rng.uniform_int(16)};
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("softmax of zeros is uniform") {
    auto x = ad::constant(Array<float>({3}, 0.0f));
    auto y = ad::softmax(x);
    for (float v : y.data()) {
        CHECK(v == doctest::Approx(1.0 / 3.0));
    }
}

TEST_CASE("cross entropy on uniform logits is ln 2") {
    auto logits = ad::constant(Array<double>({1, 2}, 0.0));
    const int target = 0;
    const double weight = 1.0;
    auto ce = ad::cross_entropy<double>(logits, std::span<const int>(&target, 1), std::span<const double>(&weight, 1));
    CHECK(ce.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("matmul by identity") {
    Rng rng(3);
    Array<double> eye({3, 3}, 0.0);
    for (int i = 0; i < 3; ++i) {
        eye.data[i * 3 + i] = 1.0;
    }
    auto a = randn(rng, {3, 3});
    auto out = ad::matmul(ad::constant(eye), ad::constant(a));
    CHECK(out.data() == a.data);
}

TEST_CASE("quadratic gradient") {
    auto w = ad::parameter(Array<double>({2}, {1.0, 2.0}));
    ad::backward(ad::sum(ad::mul(w, w)));
    CHECK(w.grad() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("constant loss leaves zero gradients") {
    auto w = ad::parameter(Array<double>({2}, {1.0, 2.0}));
    auto c = ad::constant(Array<double>({1}, 5.0));
    ad::backward(c);
    CHECK(w.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("fan-out accumulates") {
    auto x = ad::parameter(Array<double>({1}, 3.0));
    ad::backward(ad::add(x, x));
    CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("non-scalar loss is rejected") {
    auto x = ad::parameter(Array<double>({2}, 1.0));
    CHECK_THROWS_AS(ad::backward(x), std::invalid_argument);
}

TEST_CASE("shape mismatch names op and shapes") {
    auto a = ad::constant(Array<double>({2, 3}, 1.0));
    auto b = ad::constant(Array<double>({3, 2}, 1.0));
    try {
        (void)ad::add(a, b);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[3,2]") != std::string::npos);
    }
}

TEST_CASE("non-finite output raises") {
    auto x = ad::constant(Array<double>({1}, 1000.0));
    CHECK_THROWS_AS((void)ad::exp(x), std::runtime_error);
}

TEST_CASE("no-grad guard records nothing") {
    auto w = ad::parameter(Array<double>({2}, 1.0));
    ad::NoGradGuard guard;
    auto y = ad::mul(w, w);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("mlp gradcheck") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto r = mlp_gradcheck(seed);
        CHECK(r.max_rel_error < kTol);
        CHECK(r.checked > 0);
    }
}

TEST_CASE("elementwise ops match finite differences on random shapes") {
    Rng rng(11);
    for (int trial = 0; trial < 3; ++trial) {
        const Shape s = random_shape(rng);
        CAPTURE(ad::shape_str(s));
        CHECK(check_binary(rng, s, s, [](auto& a, auto& b) { return ad::add(a, b); }) < kTol);
        CHECK(check_binary(rng, s, s, [](auto& a, auto& b) { return ad::sub(a, b); }) < kTol);
        CHECK(check_binary(rng, s, s, [](auto& a, auto& b) { return ad::mul(a, b); }) < kTol);
        CHECK(check_binary(rng, s, {s[2]}, [](auto& a, auto& b) { return ad::broadcast_add(a, b); }) < kTol);
        CHECK(check_binary(rng, s, {s[1], s[2]}, [](auto& a, auto& b) { return ad::broadcast_mul(a, b); }) < kTol);
        CHECK(check_binary(rng, s, {1}, [](auto& a, auto& b) { return ad::scale_by(a, b); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::scale(a, 0.7); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::add_scalar(a, 0.3); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::gelu(a); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::silu(a); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::exp(a); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::softmax(a); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::log_softmax(a); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::sum(a); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::mean(a); }) < kTol);
        CHECK(check_unary(rng, s, [](auto& a) { return ad::sum_cols(a); }) < kTol);
        CHECK(check_unary(rng, s, [s](auto& a) { return ad::reshape(a, Shape{s[0] * s[1], s[2]}); }) < kTol);
        if (s[2] > 1) {
            CHECK(check_unary(rng, s, [](auto& a) { return ad::layer_norm(a, 1e-5); }) < kTol);
        }
    }
}

TEST_CASE("kinked ops away from their kinks") {
    Rng rng(12);
    // Shift inputs well away from 0 / clamp bounds so differences stay on one side.
    auto away = [](const Var<double>& a, double lo) {
        return ad::add_scalar(ad::exp(a), lo);
    };
    CHECK(check_unary(rng, {3, 5}, [&](auto& a) { return ad::relu(away(a, 0.01)); }) < kTol);
    CHECK(check_unary(rng, {3, 5}, [&](auto& a) { return ad::clamp(ad::scale(a, 0.1), -10.0, 10.0); }) < kTol);
}

TEST_CASE("structural ops") {
    Rng rng(13);
    CHECK(check_binary(rng, {4, 6}, {6, 3}, [](auto& a, auto& b) { return ad::matmul(a, b); }) < kTol);
    const std::vector<int> idx = {2, 0, 2, 1};
    CHECK(check_unary(rng, {3, 5}, [&](auto& a) { return ad::gather_rows<double>(a, idx); }) < kTol);
    CHECK(check_unary(rng, {3, 7}, [](auto& a) { return ad::slice_cols(a, 2, 4); }) < kTol);
    CHECK(check_unary(rng, {6, 3}, [](auto& a) { return ad::slice_rows(a, 1, 4); }) < kTol);
    CHECK(check_binary(rng, {3, 2}, {3, 4}, [](auto& a, auto& b) { return ad::concat_cols<double>({a, b, a}); }) < kTol);
    CHECK(check_binary(rng, {2, 4}, {3, 4}, [](auto& a, auto& b) { return ad::concat_rows<double>({a, b, a}); }) < kTol);
}

TEST_CASE("fused ops") {
    Rng rng(14);
    std::vector<Var<double>> p = {ad::parameter(randn(rng, {5, 8})), ad::parameter(randn(rng, {8})),
                                  ad::parameter(randn(rng, {8}))};
    auto w = rand_weights(rng, 40);
    CHECK(gradcheck(p, [&] { return ad::weighted_sum<double>(ad::layer_norm(p[0], p[1], p[2], 1e-5), w); })
              .max_rel_error < kTol);

    std::vector<Var<double>> q = {ad::parameter(randn(rng, {5, 8})), ad::parameter(randn(rng, {5, 8})),
                                  ad::parameter(randn(rng, {5, 8}))};
    CHECK(gradcheck(q, [&] { return ad::weighted_sum<double>(ad::modulate(q[0], q[1], q[2]), w); }).max_rel_error <
          kTol);

    std::vector<Var<double>> logits = {ad::parameter(randn(rng, {6, 5}))};
    const std::vector<int> targets = {0, 4, 2, 2, 1, 3};
    const std::vector<double> cw = {1.0, 0.0, 0.5, 2.0, 0.0, 1.0};
    CHECK(gradcheck(logits, [&] { return ad::cross_entropy<double>(logits[0], targets, cw); }).max_rel_error < kTol);
}

TEST_CASE("attention gradient with a block mask") {
    Rng rng(15);
    const int batch = 2, seq = 4, heads = 2, d = 4;
    std::vector<std::uint8_t> mask = {1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
    std::vector<Var<double>> p = {ad::parameter(randn(rng, {batch * seq, 3 * d}))};
    auto w = rand_weights(rng, batch * seq * d);
    auto r = gradcheck(p, [&] { return ad::weighted_sum<double>(ad::attention<double>(p[0], batch, seq, heads, mask), w); });
    CHECK(r.max_rel_error < kTol);
}

TEST_CASE("attention ignores masked keys") {
    Rng rng(16);
    const int seq = 3, d = 2;
    std::vector<std::uint8_t> mask = {1, 0, 0, 1, 1, 0, 1, 1, 1};
    auto a = randn(rng, {seq, 3 * d});
    auto out1 = ad::attention<double>(ad::constant(a), 1, seq, 1, mask);
    // Change key/value of position 2; row 0 and row 1 cannot see it.
    for (int c = d; c < 3 * d; ++c) {
        a.data[2 * 3 * d + c] += 1.0;
    }
    auto out2 = ad::attention<double>(ad::constant(a), 1, seq, 1, mask);
    for (int i = 0; i < 2 * d; ++i) {
        CHECK(out1.data()[i] == out2.data()[i]);
    }
}

TEST_CASE("masked softmax pool") {
    Rng rng(17);
    const int batch = 2, seq = 5, groups = 2, d = 3;
    std::vector<std::uint8_t> gm = {1, 1, 1, 0, 0, 0, 1, 1, 1, 1};
    std::vector<std::uint8_t> rm = {1, 0, 1, 1, 1, 1, 1, 1, 0, 1};
    std::vector<Var<double>> p = {ad::parameter(randn(rng, {batch * seq, d})), ad::parameter(randn(rng, {batch * seq, 1}))};
    auto w = rand_weights(rng, batch * groups * d);
    auto r = gradcheck(p, [&] {
        return ad::weighted_sum<double>(ad::masked_softmax_pool<double>(p[0], p[1], batch, seq, groups, gm, rm), w);
    });
    CHECK(r.max_rel_error < kTol);

    // Constant rows pool to the same constant: weights sum to 1.
    auto h = ad::constant(Array<double>({batch * seq, d}, 2.5));
    auto out = ad::masked_softmax_pool<double>(h, p[1], batch, seq, groups, gm, rm);
    for (double v : out.data()) {
        CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
    }
}
