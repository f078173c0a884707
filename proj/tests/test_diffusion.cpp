#include "doctest.h"

#include "vmd/diffusion.hpp"
#include "vmd/gradcheck.hpp"

#include <cmath>
#include <limits>

using namespace vmd;

namespace {

BackboneConfig small(int L, int r, bool latent, int V = 10, int D = 16) {
    BackboneConfig c;
    c.vocab_size = V;
    c.seq_len = L;
    c.block_len = r;
    c.hidden_dim = D;
    c.decoder_layers = 2;
    c.encoder_layers = 1;
    c.num_heads = 2;
    c.latent_dim = 4;
    c.use_latent = latent;
    return c;
}

std::vector<int> draw_batch(const Dataset& d, int n, Rng& rng) {
    std::vector<int> out;
    for (int i = 0; i < n; ++i) {
        auto s = d.sample(rng);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

template <class T>
void zero_param(Backbone<T>& m, const std::string& name) {
    for (std::size_t i = 0; i < m.params().size(); ++i) {
        if (m.params().name(i) == name) {
            auto& v = m.params().var(i).mutable_value().data;
            std::fill(v.begin(), v.end(), T(0));
            return;
        }
    }
    FAIL("no parameter " << name);
}

}  // namespace

TEST_CASE("mask_sequence extremes") {
    Rng rng(1);
    TokenSeq x{1, 2, 3, 4};
    std::vector<double> t0{0.0}, t1{1.0};
    auto a = mask_sequence(x, t0, 4, 10, rng);
    CHECK(a.x_t == x);
    CHECK(a.masked.empty());
    auto b = mask_sequence(x, t1, 4, 10, rng);
    CHECK(b.x_t == TokenSeq{10, 10, 10, 10});
    CHECK(b.masked == std::vector<int>{0, 1, 2, 3});
    CHECK_THROWS_AS(mask_sequence(TokenSeq{10, 1}, t0, 2, 10, rng), std::invalid_argument);
    CHECK_THROWS_AS(mask_sequence(x, t0, 2, 10, rng), std::invalid_argument);
}

TEST_CASE("mask_sequence: mean masked fraction at t=0.5 and per-position chi-square") {
    Rng rng(2);
    TokenSeq x{1, 2, 3, 4};
    std::vector<double> t{0.5};
    const int n = 100000;
    std::vector<long> hits(4, 0);
    long total = 0;
    for (int i = 0; i < n; ++i) {
        auto s = mask_sequence(x, t, 4, 10, rng);
        for (int p : s.masked) ++hits[p];
        total += static_cast<long>(s.masked.size());
        for (int p = 0; p < 4; ++p) CHECK((s.x_t[p] == 10) == (std::find(s.masked.begin(), s.masked.end(), p) != s.masked.end()));
    }
    const double frac = double(total) / (4.0 * n);
    CHECK(frac >= 0.495);
    CHECK(frac <= 0.505);
    // 4 independent 1-dof statistics; critical value for p = 0.001 is 10.83 each, 18.47 for 4 dof
    double chi2 = 0;
    for (long h : hits) {
        const double e = 0.5 * n;
        chi2 += (h - e) * (h - e) / e + ((n - h) - e) * ((n - h) - e) / e;
    }
    CHECK(chi2 < 18.47);
}

TEST_CASE("mask_sequence: block t and maskable subset") {
    Rng rng(3);
    TokenSeq x{1, 2, 3, 4};
    std::vector<double> t{0.0, 1.0};
    auto s = mask_sequence(x, t, 2, 10, rng);
    CHECK(s.x_t == TokenSeq{1, 2, 10, 10});
    std::vector<double> all{1.0};
    std::vector<int> maskable{1, 3};
    auto m = mask_sequence(x, all, 4, 10, rng, maskable);
    CHECK(m.x_t == TokenSeq{1, 10, 3, 10});
}

TEST_CASE("uniform-logit model: all-masked loss per position is ln V / t") {
    Backbone<double> m(small(2, 2, false), 1);
    zero_param(m, "dec.out.w");
    zero_param(m, "dec.out.b");
    Dataset d({DatasetKind::det2});
    Rng data(4), mask(5);
    auto x0 = draw_batch(d, 8, data);
    LossConfig lc;
    lc.fixed_t = 1.0;
    auto terms = mdm_loss(m, x0, 8, lc, mask);
    CHECK(terms.ce == doctest::Approx(2 * std::log(10.0)).epsilon(1e-12));
    CHECK(terms.objective.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(terms.kl == 0.0);
}

TEST_CASE("t_min bounds the weight") {
    Backbone<double> m(small(2, 2, false), 1);
    zero_param(m, "dec.out.w");
    zero_param(m, "dec.out.b");
    Dataset d({DatasetKind::det2});
    Rng data(4), mask(6);
    auto x0 = draw_batch(d, 256, data);
    LossConfig lc;
    lc.t_min = 0.05;
    auto terms = mdm_loss(m, x0, 256, lc, mask);
    CHECK(terms.ce <= 2 * std::log(10.0) / 0.05 + 1e-9);
    CHECK(terms.ce > 0.0);
}

TEST_CASE("encoder clamped to the prior: KL term vanishes bitwise") {
    Backbone<float> m(small(2, 2, true), 2);
    for (auto n : {"enc.mu.w", "enc.mu.b", "enc.logsigma.w", "enc.logsigma.b"}) zero_param(m, n);
    Dataset d({DatasetKind::det2});
    Rng data(7);
    auto x0 = draw_batch(d, 16, data);
    LossConfig with;
    with.kl_weight = 1.0;
    LossConfig without = with;
    without.kl_weight = 0.0;
    Rng m1(8), e1(9), m2(8), e2(9);
    auto a = vmd_loss(m, x0, 16, with, m1, e1);
    auto b = vmd_loss(m, x0, 16, without, m2, e2);
    CHECK(a.kl == 0.0);
    CHECK(a.objective.item() == b.objective.item());
    CHECK(a.ce == b.ce);
}

TEST_CASE("beta=0 leaves only the cross-entropy term in the objective") {
    Backbone<double> m(small(2, 2, true), 3);
    Dataset d({DatasetKind::det2});
    Rng data(7);
    auto x0 = draw_batch(d, 16, data);
    LossConfig lc;
    lc.kl_weight = 0.0;
    Rng mr(1), er(2);
    auto t = vmd_loss(m, x0, 16, lc, mr, er);
    CHECK(t.kl > 0.0);  // still reported
    CHECK(t.loss == t.ce);
    CHECK(t.objective.item() * 32 == doctest::Approx(t.ce * 16).epsilon(1e-12));
}

TEST_CASE("block loss with one block equals vmd_loss bitwise") {
    Backbone<float> m(small(4, 4, true), 4);
    Dataset d({DatasetKind::d1});
    Rng data(10);
    auto x0 = draw_batch(d, 32, data);
    LossConfig lc;
    Rng m1(11), e1(12), m2(11), e2(12);
    auto a = vmd_loss(m, x0, 32, lc, m1, e1);
    auto b = block_vmd_loss(m, x0, 32, lc, m2, e2);
    CHECK(a.objective.item() == b.objective.item());
    CHECK(a.ce == b.ce);
    CHECK(a.kl == b.kl);
    ad::backward(a.objective);
    auto ga = m.params().get("enc.mu.w").grad();
    m.params().zero_grad();
    ad::backward(b.objective);
    CHECK(ga == m.params().get("enc.mu.w").grad());
}

TEST_CASE("per-block terms sum to the batch loss") {
    Backbone<float> m(small(4, 2, true), 4);
    Dataset d({DatasetKind::d2});
    Rng data(10);
    auto x0 = draw_batch(d, 64, data);
    LossConfig lc;
    Rng m1(11), e1(12), m2(11), e2(12);
    const auto terms = block_loss_terms(m, x0, 64, lc, m1, e1);
    const auto loss = block_vmd_loss(m, x0, 64, lc, m2, e2);
    REQUIRE(terms.ce.size() == 128);
    double ce = 0, kl = 0;
    for (std::size_t i = 0; i < terms.ce.size(); ++i) {
        ce += terms.ce[i];
        kl += terms.kl[i];
        CHECK(terms.ce[i] >= 0.0);
        CHECK(terms.kl[i] >= 0.0);
    }
    CHECK(ce / 64 == doctest::Approx(loss.ce).epsilon(1e-5));
    CHECK(kl / 64 == doctest::Approx(loss.kl).epsilon(1e-5));
    // same streams consumed: next draws agree
    CHECK(m1.next_u64() == m2.next_u64());
    CHECK(e1.next_u64() == e2.next_u64());
}

TEST_CASE("vmd_loss rejects block models, block loss rejects baselines") {
    Backbone<float> blk(small(4, 2, true), 1);
    Backbone<float> base(small(4, 2, false), 1);
    std::vector<int> x0{1, 2, 3, 4};
    LossConfig lc;
    Rng a(1), b(2);
    CHECK_THROWS_AS(vmd_loss(blk, x0, 1, lc, a, b), std::invalid_argument);
    CHECK_THROWS_AS(block_vmd_loss(base, x0, 1, lc, a, b), std::invalid_argument);
    CHECK_THROWS_AS(mdm_loss(base, x0, 2, lc, a), std::invalid_argument);
}

TEST_CASE("every block gets at least one mask when it can") {
    Backbone<double> m(small(4, 2, false), 1);
    zero_param(m, "dec.out.w");
    zero_param(m, "dec.out.b");
    std::vector<int> x0(4 * 2000);
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = static_cast<int>(i % 10);
    LossConfig lc;
    lc.fixed_t = 0.9;
    Rng mr(3);
    // redraw once: P(block unmasked) = 0.01^2 per block, so CE stays close to its
    // conditional mean; without the redraw some blocks would contribute 0
    auto t = mdm_loss(m, x0, 2000, lc, mr);
    const double per_pos = std::log(10.0) / 0.9;
    const double expected_masks = 2 * (2 * 0.9) / (1 - 0.01) * (1 + 0.01);  // E[count | redraw] per sequence
    CHECK(t.ce == doctest::Approx(per_pos * expected_masks).epsilon(0.02));
}

TEST_CASE("loss gradients match finite differences at hidden 8") {
    struct Case {
        int L, r;
        bool latent;
    };
    for (Case c : {Case{2, 2, false}, Case{2, 2, true}, Case{4, 2, true}}) {
        CAPTURE(c.L);
        CAPTURE(c.r);
        CAPTURE(c.latent);
        Backbone<double> m(small(c.L, c.r, c.latent, 6, 8), 21);
        // scale weights up so gradients are not dominated by round-off
        for (std::size_t i = 0; i < m.params().size(); ++i)
            for (auto& v : m.params().var(i).mutable_value().data) v *= 10.0;
        std::vector<int> x0(3 * c.L);
        Rng data(5);
        for (auto& v : x0) v = static_cast<int>(data.uniform_int(6));
        std::vector<ad::Var<double>> subset;
        Rng pick(6);
        for (std::size_t i = 0; i < m.params().size(); ++i)
            if (pick.uniform() < 0.3 || m.params().name(i) == "dec.out.w") subset.push_back(m.params().var(i));
        LossConfig lc;
        auto fn = [&] {
            Rng mr(7), er(8);
            return model_loss(m, x0, 3, lc, mr, er).objective;
        };
        auto res = gradcheck(subset, fn, 1e-5);
        CAPTURE(res.worst);
        CHECK(res.checked > 0);
        CHECK(res.max_rel_error < 1e-3);
    }
}

TEST_CASE("training is deterministic for a fixed seed") {
    Dataset d({DatasetKind::det2});
    TrainConfig tc;
    tc.batch_size = 32;
    tc.num_steps = 20;
    tc.log_every = 5;
    auto run = [&] {
        Backbone<float> m(small(2, 2, true), 99);
        return train(m, d, tc, 42);
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == 4);
    REQUIRE(b.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].step == b[i].step);
        CHECK(a[i].ce == b[i].ce);
        CHECK(a[i].kl == b[i].kl);
        CHECK(a[i].loss == b[i].loss);
    }
}

TEST_CASE("losses decrease on every built-in dataset") {
    struct Case {
        DatasetSpec spec;
        int r;
        bool latent;
    };
    std::vector<Case> cases{{{DatasetKind::det2}, 2, true},   {{DatasetKind::det2}, 2, false},
                            {{DatasetKind::nonuni2}, 2, true}, {{DatasetKind::varp2, 0.5}, 2, true},
                            {{DatasetKind::d1}, 2, true},      {{DatasetKind::d2}, 2, false},
                            {{DatasetKind::minisudoku}, 34, true}};
    for (const auto& c : cases) {
        CAPTURE(c.spec.id());
        CAPTURE(c.latent);
        Dataset d(c.spec);
        auto cfg = small(d.seq_len(), c.r, c.latent, d.vocab_size());
        if (c.spec.kind == DatasetKind::minisudoku) cfg.pool_exclude = sudoku::prompt_positions();
        Backbone<float> m(cfg, 5);
        TrainConfig tc;
        tc.batch_size = c.spec.kind == DatasetKind::minisudoku ? 16 : 64;
        tc.num_steps = 300;
        tc.log_every = 10;
        tc.lr = 3e-3;
        auto log = train(m, d, tc, 8);
        REQUIRE(log.size() == 30);
        for (const auto& r : log) {
            CHECK(std::isfinite(r.loss));
            CHECK(r.ce >= 0.0);
            CHECK(r.kl >= 0.0);
        }
        // 10-record moving average: first window against last window
        auto window = [&](std::size_t from) {
            double s = 0;
            for (std::size_t i = from; i < from + 10; ++i) s += log[i].loss;
            return s / 10;
        };
        CHECK(window(20) < window(0));
    }
}

TEST_CASE("non-finite values abort training with the step number") {
    Dataset d({DatasetKind::det2});
    Backbone<float> m(small(2, 2, false), 1);
    for (std::size_t i = 0; i < m.params().size(); ++i)
        if (m.params().name(i) == "dec.out.b")
            m.params().var(i).mutable_value().data[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig tc;
    tc.batch_size = 4;
    tc.num_steps = 3;
    try {
        train(m, d, tc, 1);
        FAIL("expected an abort");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
    tc.t_min = 0.0;
    CHECK_THROWS_AS(train(m, d, tc, 1), std::invalid_argument);
}
