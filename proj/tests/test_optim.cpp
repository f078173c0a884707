#include "doctest.h"

#include "vmd/optim.hpp"

#include <cmath>

using namespace vmd;
using ad::Array;

TEST_CASE("adam: zero gradient is a no-op") {
    ParamStore<float> ps;
    ps.add("w", Array<float>({3}, {1.0f, -2.0f, 0.5f}));
    Adam<float> opt;
    opt.init(ps);
    const auto before = ps.var(0).data();
    for (int i = 0; i < 5; ++i) {
        ps.var(0).grad_storage().assign(3, 0.0f);
        opt.step(ps);
    }
    CHECK(ps.var(0).data() == before);
}

TEST_CASE("adam: first step moves by lr") {
    ParamStore<double> ps;
    ps.add("w", Array<double>({1}, 0.0));
    Adam<double> opt;
    opt.init(ps);
    ps.var(0).grad_storage().assign(1, 3.7);
    opt.step(ps);
    CHECK(std::abs(ps.var(0).data()[0]) == doctest::Approx(1e-3).epsilon(1e-6));
    CHECK(ps.var(0).data()[0] < 0.0);
    CHECK(ps.var(0).grad()[0] == 0.0);
}

TEST_CASE("adam: minimizes a quadratic") {
    ParamStore<double> ps;
    auto& w = ps.add("w", Array<double>({1}, 0.0));
    Adam<double> opt({.lr = 0.1});
    opt.init(ps);
    for (int i = 0; i < 100; ++i) {
        auto d = ad::add_scalar(w, -3.0);
        ad::backward(ad::sum(ad::mul(d, d)));
        opt.step(ps);
    }
    CHECK(std::abs(w.data()[0] - 3.0) < 0.1);
    CHECK(opt.steps() == 100);
}

TEST_CASE("adam: missing moments") {
    ParamStore<float> ps;
    ps.add("w", Array<float>({1}, 0.0f));
    Adam<float> opt;
    CHECK_THROWS_AS(opt.step(ps), std::logic_error);
}

TEST_CASE("param store exclusion count") {
    ParamStore<float> ps;
    ps.add("enc.a", Array<float>({2, 3}));
    ps.add("dec.b", Array<float>({4}));
    ps.add("dec.latent.c", Array<float>({5}));
    CHECK(ps.numel() == 15);
    CHECK(ps.numel_excluding({"enc.", "dec.latent."}) == 4);
    CHECK_THROWS(ps.add("dec.b", Array<float>({1})));
}

TEST_CASE("reparameterize: clamped floor gives mu") {
    Rng rng(1);
    auto mu = ad::constant(Array<double>({2, 3}, {0.1, -0.2, 0.3, 1.0, 2.0, -3.0}));
    auto ls = ad::constant(Array<double>({2, 3}, -1e6));
    auto r = reparameterize(mu, ls, rng);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(r.z.data()[i] == doctest::Approx(mu.data()[i]).epsilon(1e-4));
    }
}

TEST_CASE("reparameterize: moments") {
    Rng rng(2);
    const int n = 100000, d = 3;
    auto mu = ad::constant(Array<double>({n, d}, 0.0));
    auto ls = ad::constant(Array<double>({n, d}, 0.0));
    auto r = reparameterize(mu, ls, rng);
    for (int c = 0; c < d; ++c) {
        double s = 0, s2 = 0;
        for (int i = 0; i < n; ++i) {
            const double v = r.z.data()[i * d + c];
            s += v;
            s2 += v * v;
        }
        const double mean = s / n;
        CHECK(std::abs(mean) < 0.02);
        CHECK(std::abs(s2 / n - mean * mean - 1.0) < 0.05);
    }
}

TEST_CASE("reparameterize: gradient of mean(z) wrt mu is ones") {
    Rng rng(3);
    auto mu = ad::parameter(Array<double>({4}, {1, 2, 3, 4}));
    auto ls = ad::parameter(Array<double>({4}, 0.0));
    auto r = reparameterize(mu, ls, rng);
    ad::backward(ad::sum(r.z));
    CHECK(mu.grad() == std::vector<double>(4, 1.0));
}

TEST_CASE("gaussian kl closed form") {
    auto z0 = ad::constant(Array<double>({1, 3}, 0.0));
    CHECK(gaussian_kl(z0, z0).item() == 0.0);
    auto mu = ad::constant(Array<double>({1, 1}, 1.0));
    auto ls = ad::constant(Array<double>({1, 1}, 0.0));
    CHECK(gaussian_kl(mu, ls).item() == doctest::Approx(0.5));
}

TEST_CASE("gaussian kl is nonnegative and zero only at the prior") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        Array<double> m({1, 4}), s({1, 4});
        for (int i = 0; i < 4; ++i) {
            m.data[i] = trial == 0 ? 0.0 : rng.normal();
            s.data[i] = trial == 0 ? 0.0 : rng.normal();
        }
        const double kl = gaussian_kl(ad::constant(m), ad::constant(s)).item();
        if (trial == 0) {
            CHECK(kl == 0.0);
        } else {
            CHECK(kl > 0.0);
        }
    }
}

TEST_CASE("gaussian kl matches monte carlo") {
    Rng rng(5);
    const int d = 3;
    Array<double> m({1, d}, {0.4, -0.7, 1.1}), s({1, d}, {-0.3, 0.2, -0.8});
    const double closed = gaussian_kl(ad::constant(m), ad::constant(s)).item();
    const int n = 1000000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        // log q(z) - log p(z) at z ~ q
        for (int c = 0; c < d; ++c) {
            const double e = rng.normal();
            const double z = m.data[c] + std::exp(s.data[c]) * e;
            acc += -0.5 * e * e - s.data[c] + 0.5 * z * z;
        }
    }
    const double mc = acc / n;
    CHECK(std::abs(mc - closed) / closed < 0.01);
}
