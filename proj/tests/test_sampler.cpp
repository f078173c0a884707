#include "doctest.h"

#include "vmd/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

using namespace vmd;

namespace {

BackboneConfig small(int L, int r, bool latent, int V = 10) {
    BackboneConfig c;
    c.vocab_size = V;
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

}  // namespace

TEST_CASE("confidence_prob examples") {
    std::vector<float> hot(10, 0.0f);
    hot[3] = 10.0f;
    CHECK(confidence_prob(hot) == doctest::Approx(1.0).epsilon(1e-3));
    std::vector<float> flat(10, 0.5f);
    CHECK(confidence_prob(flat) == doctest::Approx(0.1).epsilon(1e-12));
    std::vector<float> l{2, 1, 0};
    CHECK(confidence_prob(l) == doctest::Approx(0.6652).epsilon(1e-4));
}

TEST_CASE("confidence_margin examples") {
    std::vector<float> flat(10, -1.0f);
    CHECK(confidence_margin(flat) == doctest::Approx(0.0));
    std::vector<float> hot(10, 0.0f);
    hot[0] = 10.0f;
    CHECK(confidence_margin(hot) == doctest::Approx(1.0).epsilon(1e-3));
    std::vector<float> l{2, 1, 0};
    CHECK(confidence_margin(l) == doctest::Approx(0.4206).epsilon(1e-3));
    std::vector<float> one{1.0f};
    CHECK_THROWS_AS(confidence_margin(one), std::invalid_argument);
}

TEST_CASE("margin never exceeds prob") {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        std::vector<float> row(2 + rng.uniform_int(12));
        for (auto& v : row) v = static_cast<float>(4.0 * rng.normal());
        CHECK(confidence_margin(row) <= confidence_prob(row) + 1e-12);
    }
}

TEST_CASE("unmask_schedule") {
    CHECK(unmask_schedule(4, 1) == 4);
    CHECK(unmask_schedule(4, 4) == 1);
    CHECK(unmask_schedule(81, 20) == 5);
    CHECK_THROWS_AS(unmask_schedule(3, 0), std::invalid_argument);
    for (int m = 0; m <= 90; ++m) {
        for (int n = 1; n <= 25; ++n) {
            int left = m, total = 0;
            for (int s = n; s >= 1; --s) {
                const int k = unmask_schedule(left, s);
                CHECK(k <= left);
                left -= k;
                total += k;
                if (left > 0) CHECK(k >= 1);
            }
            CHECK(left == 0);
            CHECK(total == m);
        }
    }
}

TEST_CASE("one-step sampling uses one decoder call per block") {
    Backbone<float> one(small(2, 2, true), 1);
    SampleConfig sc;
    sc.num_samples = 7;
    SampleStats st;
    auto s = sample(one, sc, &st);
    CHECK(s.size() == 7);
    CHECK(st.nfe == 1);
    CHECK(st.decoder_calls == 1);

    Backbone<float> blk(small(4, 2, true), 1);
    auto s2 = sample(blk, sc, &st);
    CHECK(st.nfe == 2);
    sc.nfe = 2;
    sample(blk, sc, &st);
    CHECK(st.nfe == 4);
    for (const auto& x : s2) {
        CHECK(x.size() == 4);
        for (int v : x) {
            CHECK(v >= 0);
            CHECK(v < 10);
        }
    }
}

TEST_CASE("nfe is bounded by the block length") {
    Backbone<float> m(small(4, 2, true), 1);
    SampleConfig sc;
    sc.nfe = 3;
    CHECK_THROWS_AS(sample(m, sc), std::invalid_argument);
    sc.nfe = 0;
    CHECK_THROWS_AS(sample(m, sc), std::invalid_argument);
}

TEST_CASE("sampling is reproducible and independent of chunking") {
    Backbone<float> m(small(4, 2, true), 3);
    for (Strategy st : {Strategy::random, Strategy::top_prob, Strategy::top_margin}) {
        SampleConfig sc;
        sc.num_samples = 50;
        sc.nfe = 2;
        sc.seed = 9;
        sc.strategy = st;
        auto a = sample(m, sc);
        auto b = sample(m, sc);
        sc.max_batch = 7;
        auto c = sample(m, sc);
        CHECK(a == b);
        CHECK(a == c);
    }
}

TEST_CASE("argmax baseline is deterministic, categorical baseline is not") {
    Backbone<float> m(small(2, 2, false), 3);
    SampleConfig sc;
    sc.num_samples = 200;
    auto a = sample(m, sc);
    std::set<TokenSeq> distinct(a.begin(), a.end());
    CHECK(distinct.size() == 1);
    sc.categorical = true;
    auto b = sample(m, sc);
    std::set<TokenSeq> distinct2(b.begin(), b.end());
    CHECK(distinct2.size() > 50);
}

TEST_CASE("prompt positions are kept and never ranked") {
    Backbone<float> m(small(4, 4, true), 2);
    SampleConfig sc;
    sc.num_samples = 20;
    sc.nfe = 2;
    sc.prompt = {7, 10, 10, 1};
    SampleStats st;
    auto s = sample(m, sc, &st);
    for (const auto& x : s) {
        CHECK(x[0] == 7);
        CHECK(x[3] == 1);
        CHECK(x[1] != 10);
        CHECK(x[2] != 10);
    }
    // fully given prompt needs no decoder call
    sc.prompt = {1, 2, 3, 4};
    auto full = sample(m, sc, &st);
    CHECK(st.decoder_calls == 0);
    CHECK(full[0] == TokenSeq{1, 2, 3, 4});
    sc.prompt = {1, 2, 3};
    CHECK_THROWS_AS(sample(m, sc), std::invalid_argument);
    sc.prompt = {1, 2, 3, 11};
    CHECK_THROWS_AS(sample(m, sc), std::invalid_argument);
}

TEST_CASE("per-chain prompts") {
    Backbone<float> m(small(4, 4, false), 2);
    SampleConfig sc;
    sc.nfe = 4;
    std::vector<TokenSeq> prompts{{1, 10, 10, 10}, {10, 2, 10, 10}, {10, 10, 10, 3}};
    auto s = sample_prompted(m, sc, prompts);
    REQUIRE(s.size() == 3);
    CHECK(s[0][0] == 1);
    CHECK(s[1][1] == 2);
    CHECK(s[2][3] == 3);
}

TEST_CASE("token-by-token unmasking finalizes the most confident position first") {
    // Deterministic baseline: the first decode sees all MASK; its most confident
    // position is finalized and stays fixed, so restarting from that single token
    // as a prompt with one step fewer must reproduce the same sequence.
    Backbone<float> m(small(3, 3, false), 4);
    SampleConfig sc;
    sc.nfe = 3;
    auto full = sample(m, sc)[0];

    std::vector<int> masked{10, 10, 10};
    ad::Var<float> logits;
    {
        ad::NoGradGuard g;
        logits = m.decode(masked, masked, ad::Var<float>(), 1);
    }
    int best = 0;
    double best_c = -1;
    for (int p = 0; p < 3; ++p) {
        std::span<const float> row(logits.data().data() + p * 10, 10);
        const double c = confidence_prob(row);
        if (c > best_c) {
            best_c = c;
            best = p;
        }
    }
    std::span<const float> row(logits.data().data() + best * 10, 10);
    const int v = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    CHECK(full[best] == v);

    sc.nfe = 2;
    sc.prompt = {10, 10, 10};
    sc.prompt[best] = v;
    CHECK(sample(m, sc)[0] == full);
}

TEST_CASE("sample dump is one JSON object per line") {
    std::ostringstream os;
    write_sample_dump(os, {{1, 2}, {3, 4}}, 17, 2, Strategy::top_margin);
    std::istringstream in(os.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j["sample_id"] == n);
        CHECK(j["seed"] == 17);
        CHECK(j["nfe"] == 2);
        CHECK(j["strategy"] == "top_margin");
        CHECK(j["tokens"].size() == 2);
        ++n;
    }
    CHECK(n == 2);
    CHECK(parse_strategy("random") == Strategy::random);
    CHECK_THROWS_AS(parse_strategy("greedy"), std::invalid_argument);
}
