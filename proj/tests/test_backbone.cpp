#include "doctest.h"

#include "vmd/backbone.hpp"
#include "vmd/rng.hpp"

#include <algorithm>
#include <vector>

using namespace vmd;

namespace {

BackboneConfig tiny(int L, int r, bool latent = true) {
    BackboneConfig c;
    c.vocab_size = 10;
    c.seq_len = L;
    c.block_len = r;
    c.hidden_dim = 16;
    c.decoder_layers = 2;
    c.encoder_layers = 1;
    c.num_heads = 2;
    c.latent_dim = 4;
    c.use_latent = latent;
    return c;
}

bool attends(const std::vector<std::uint8_t>& m, int n, int row, int col) { return m[row * n + col] != 0; }

std::vector<int> random_tokens(Rng& rng, int n, int V) {
    std::vector<int> out(n);
    for (auto& v : out) v = static_cast<int>(rng.uniform_int(V));
    return out;
}

template <class T>
ad::Var<T> random_z(Rng& rng, int rows, int cols) {
    ad::Array<T> a({rows, cols});
    for (auto& v : a.data) v = static_cast<T>(rng.normal());
    return ad::constant(a);
}

std::vector<float> rows_of(const ad::Var<float>& x, int first, int count) {
    const int c = x.cols();
    return {x.data().begin() + first * c, x.data().begin() + (first + count) * c};
}

}  // namespace

TEST_CASE("decoder mask with one block is full self-attention over x_t") {
    auto cfg = tiny(4, 4);
    auto m = build_attention_masks(cfg);
    CHECK(m.size == 8);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) CHECK(attends(m.decoder, 8, i, j));
        for (int j = 4; j < 8; ++j) CHECK_FALSE(attends(m.decoder, 8, i, j));
    }
}

TEST_CASE("decoder mask with r=1 is strictly causal over the clean prefix") {
    auto cfg = tiny(4, 1);
    auto m = build_attention_masks(cfg);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) CHECK(attends(m.decoder, 8, i, j) == (i == j));
        for (int j = 0; j < 4; ++j) CHECK(attends(m.decoder, 8, i, 4 + j) == (j < i));
    }
}

TEST_CASE("B=2, L=4: second-block x_t rows see x_t {3,4} and x_0 {1,2}") {
    auto cfg = tiny(4, 2);
    auto m = build_attention_masks(cfg);
    for (int row : {2, 3}) {
        std::vector<int> seen;
        for (int j = 0; j < 8; ++j)
            if (attends(m.decoder, 8, row, j)) seen.push_back(j);
        CHECK(seen == std::vector<int>{2, 3, 4, 5});
    }
    // encoder additionally sees the clean copy of its own block
    for (int row : {2, 3}) {
        std::vector<int> seen;
        for (int j = 0; j < 8; ++j)
            if (attends(m.encoder, 8, row, j)) seen.push_back(j);
        CHECK(seen == std::vector<int>{2, 3, 4, 5, 6, 7});
    }
    // first block: x_t block 1 only in the decoder, plus x_0 block 1 in the encoder
    for (int row : {0, 1}) {
        for (int j = 0; j < 8; ++j) {
            CHECK(attends(m.decoder, 8, row, j) == (j < 2));
            CHECK(attends(m.encoder, 8, row, j) == (j < 2 || j == 4 || j == 5));
        }
    }
}

TEST_CASE("latent pathway adds no decoder backbone parameters") {
    for (int r : {1, 2, 4}) {
        Backbone<float> vmd(tiny(4, r, true), 1);
        Backbone<float> mdm(tiny(4, r, false), 1);
        const std::vector<std::string> ex{"enc.", "dec.latent."};
        CHECK(vmd.params().numel_excluding(ex) == mdm.params().numel_excluding(ex));
        CHECK(mdm.params().numel_excluding(ex) == mdm.params().numel());
        CHECK(vmd.params().numel() > mdm.params().numel());
    }
}

TEST_CASE("init: linear weights are truncated normal, biases zero, LN gains one") {
    auto cfg = tiny(4, 2);
    cfg.hidden_dim = 64;
    Backbone<float> m(cfg, 7);
    const auto& w = m.params().get("dec.l0.mlp.fc1.w").data();
    double s = 0, s2 = 0, mx = 0;
    for (float v : w) {
        s += v;
        s2 += double(v) * v;
        mx = std::max(mx, std::abs(double(v)));
    }
    const double mean = s / w.size();
    const double sd = std::sqrt(s2 / w.size() - mean * mean);
    CHECK(std::abs(mean) < 2e-3);
    CHECK(sd > 0.014);  // truncation at 2 sd shrinks 0.02 to ~0.0176
    CHECK(sd < 0.02);
    CHECK(mx <= 0.04 + 1e-6);
    for (float v : m.params().get("dec.l0.mlp.fc1.b").data()) CHECK(v == 0.0f);
    for (float v : m.params().get("enc.l0.ln1.g").data()) CHECK(v == 1.0f);
}

TEST_CASE("decoder block-causality is bitwise") {
    auto cfg = tiny(6, 2);
    Backbone<float> m(cfg, 3);
    Rng rng(11);
    const int batch = 3, L = 6, V = 10;
    auto x0 = random_tokens(rng, batch * L, V);
    auto xt = x0;
    for (std::size_t i = 0; i < xt.size(); i += 2) xt[i] = V;
    auto z = random_z<float>(rng, batch * 3, 4);
    auto base = m.decode(xt, x0, z, batch);

    for (int b = 0; b < 3; ++b) {
        auto xt2 = xt;
        auto x02 = x0;
        for (int e = 0; e < batch; ++e) {
            for (int p = 0; p < L; ++p) {
                const int blk = p / 2;
                if (blk != b) xt2[e * L + p] = (xt2[e * L + p] + 3) % (V + 1);
                if (blk >= b) x02[e * L + p] = V;  // future clean blocks may be MASK
            }
        }
        auto other = m.decode(xt2, x02, z, batch);
        for (int e = 0; e < batch; ++e) {
            CHECK(rows_of(base, e * L + 2 * b, 2) == rows_of(other, e * L + 2 * b, 2));
        }
    }
}

TEST_CASE("encoder causality is bitwise") {
    auto cfg = tiny(6, 2);
    Backbone<float> m(cfg, 4);
    Rng rng(12);
    const int batch = 2, L = 6, V = 10;
    auto x0 = random_tokens(rng, batch * L, V);
    auto xt = x0;
    for (std::size_t i = 1; i < xt.size(); i += 3) xt[i] = V;
    auto base = m.encode(xt, x0, batch);
    for (int b = 0; b < 3; ++b) {
        auto xt2 = xt;
        auto x02 = x0;
        for (int e = 0; e < batch; ++e) {
            for (int p = 0; p < L; ++p) {
                const int blk = p / 2;
                if (blk != b) xt2[e * L + p] = V;
                if (blk > b) x02[e * L + p] = (x02[e * L + p] + 1) % V;
            }
        }
        auto other = m.encode(xt2, x02, batch);
        for (int e = 0; e < batch; ++e) {
            CHECK(rows_of(base.mu, e * 3 + b, 1) == rows_of(other.mu, e * 3 + b, 1));
            CHECK(rows_of(base.log_sigma, e * 3 + b, 1) == rows_of(other.log_sigma, e * 3 + b, 1));
        }
    }
}

TEST_CASE("latent actually reaches the logits") {
    auto cfg = tiny(2, 2);
    Backbone<float> m(cfg, 5);
    Rng rng(13);
    std::vector<int> x0{3, 4}, xt{10, 10};
    auto a = m.decode(xt, x0, random_z<float>(rng, 1, 4), 1);
    auto b = m.decode(xt, x0, random_z<float>(rng, 1, 4), 1);
    CHECK(a.data() != b.data());
}

TEST_CASE("pool exclusion keeps excluded positions out of the posterior") {
    auto cfg = tiny(4, 4);
    cfg.pool_exclude = {0, 1};
    Backbone<float> m(cfg, 6);
    std::vector<int> x0{1, 2, 3, 4}, xt{1, 2, 10, 10};
    auto a = m.encode(xt, x0, 1);
    // attention still mixes positions, so only the pool weights are checked indirectly:
    // the posterior must differ from the unexcluded model with the same weights
    auto cfg2 = cfg;
    cfg2.pool_exclude.clear();
    Backbone<float> m2(cfg2, 6);
    auto b = m2.encode(xt, x0, 1);
    CHECK(a.mu.data() != b.mu.data());
}

TEST_CASE("shape and content errors") {
    Backbone<float> vmd(tiny(4, 2), 1);
    Backbone<float> mdm(tiny(4, 2, false), 1);
    std::vector<int> x0{1, 2, 3, 4}, xt{10, 2, 3, 10};
    CHECK_THROWS_AS(vmd.encode(xt, xt, 1), std::invalid_argument);
    CHECK_THROWS_AS(mdm.encode(xt, x0, 1), std::logic_error);
    Rng rng(1);
    CHECK_THROWS_AS(vmd.decode(xt, x0, random_z<float>(rng, 1, 4), 1), std::invalid_argument);
    CHECK_NOTHROW(vmd.decode(xt, x0, random_z<float>(rng, 2, 4), 1));
    CHECK_NOTHROW(mdm.decode(xt, x0, ad::Var<float>(), 1));
    auto bad = tiny(4, 3);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    auto bad2 = tiny(4, 2);
    bad2.num_heads = 3;
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}
