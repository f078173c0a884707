#include "doctest.h"

#include "vmd/datasets.hpp"

#include <cmath>
#include <map>
#include <set>

using namespace vmd;

namespace {

double total_variation(const ExactDist& d, const std::function<TokenSeq(Rng&)>& gen, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::map<TokenSeq, double> counts;
    for (int i = 0; i < n; ++i) {
        counts[gen(rng)] += 1.0;
    }
    double tv = 0.0;
    for (std::size_t i = 0; i < d.support.size(); ++i) {
        auto it = counts.find(d.support[i]);
        const double emp = it == counts.end() ? 0.0 : it->second / n;
        tv += std::abs(emp - d.probs[i]);
        if (it != counts.end()) {
            counts.erase(it);
        }
    }
    for (auto& [k, c] : counts) {
        tv += c / n;
    }
    return 0.5 * tv;
}

}  // namespace

TEST_CASE("det2 pairs") {
    auto d = *exact_distribution({.kind = DatasetKind::det2});
    CHECK(d.support.size() == 10);
    CHECK(d.prob({9, 0}) == doctest::Approx(0.1));
    CHECK(d.prob({0, 1}) == doctest::Approx(0.1));
    CHECK(d.prob({0, 2}) == 0.0);
    Rng rng(1);
    std::map<TokenSeq, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        auto s = gen_det2(rng);
        CHECK_MESSAGE(s[1] == (s[0] + 1) % 10, "not a successor pair");
        counts[s]++;
    }
    for (auto& [s, c] : counts) {
        CHECK(std::abs(c / double(n) - 0.1) < 0.01);
    }
}

TEST_CASE("nonuni2 law") {
    auto d = *exact_distribution({.kind = DatasetKind::nonuni2});
    double total = 0.0;
    for (double p : d.probs) {
        total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.prob({9, 0}) == doctest::Approx(10.0 / 55.0));
    Rng rng(2);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        hits += gen_nonuni2(rng) == TokenSeq{0, 1};
    }
    CHECK(std::abs(hits / double(n) - 1.0 / 55.0) < 0.004);
}

TEST_CASE("varp2 law") {
    auto half = *exact_distribution({.kind = DatasetKind::varp2, .p = 0.5});
    CHECK(half.support.size() == 100);
    CHECK(half.prob({3, 4}) == doctest::Approx(0.05));
    CHECK(half.prob({3, 7}) == doctest::Approx(0.05 / 9));
    auto one = *exact_distribution({.kind = DatasetKind::varp2, .p = 1.0});
    auto det = *exact_distribution({.kind = DatasetKind::det2});
    CHECK(one.support == det.support);
    CHECK(one.probs == det.probs);
    auto zero = *exact_distribution({.kind = DatasetKind::varp2, .p = 0.0});
    CHECK(zero.support.size() == 90);
    CHECK(zero.prob({2, 3}) == 0.0);
    CHECK(zero.prob({2, 5}) == doctest::Approx(0.1 / 9));
}

TEST_CASE("d1 and d2 supports") {
    auto d1 = *exact_distribution({.kind = DatasetKind::d1});
    auto d2 = *exact_distribution({.kind = DatasetKind::d2});
    CHECK(d1.support.size() == 10);
    CHECK(d2.support.size() == 100);
    CHECK(d1.prob({8, 9, 0, 1}) == doctest::Approx(0.1));
    CHECK(d2.prob({8, 9, 3, 4}) == doctest::Approx(0.01));

    // Blocks of d2 are independent: plug-in mutual information near zero.
    Rng rng(3);
    const int n = 1000000;
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> a, b;
    for (int i = 0; i < n; ++i) {
        auto s = gen_d2(rng);
        const int x = s[0] * 10 + s[1], y = s[2] * 10 + s[3];
        joint[{x, y}] += 1.0;
        a[x] += 1.0;
        b[y] += 1.0;
    }
    double mi = 0.0;
    for (auto& [k, c] : joint) {
        mi += c / n * std::log((c / n) / (a[k.first] / n * b[k.second] / n));
    }
    CHECK(mi < 0.01);
}

TEST_CASE("generators match their exact tables") {
    struct Case {
        DatasetSpec spec;
        std::function<TokenSeq(Rng&)> gen;
    };
    std::vector<Case> cases = {
        {{.kind = DatasetKind::det2}, gen_det2},
        {{.kind = DatasetKind::nonuni2}, gen_nonuni2},
        {{.kind = DatasetKind::varp2, .p = 0.3}, [](Rng& r) { return gen_varp2(0.3, 10, r); }},
        {{.kind = DatasetKind::d1}, gen_d1},
        {{.kind = DatasetKind::d2}, gen_d2},
    };
    std::uint64_t seed = 10;
    for (auto& c : cases) {
        CAPTURE(c.spec.id());
        CHECK(total_variation(*exact_distribution(c.spec), c.gen, 1000000, seed++) < 0.005);
    }
}

TEST_CASE("uniform random guessing rates") {
    Rng rng(4);
    Dataset det({.kind = DatasetKind::det2});
    Dataset d1({.kind = DatasetKind::d1});
    int ok2 = 0, ok4 = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        ok2 += det.valid({rng.uniform_int(10), rng.uniform_int(10)});
        ok4 += d1.valid({rng.uniform_int(10), rng.uniform_int(10), rng.uniform_int(10), rng.uniform_int(10)});
    }
    CHECK(std::abs(ok2 / double(n) - 0.1) < 0.01);
    CHECK(std::abs(ok4 / double(n) - 0.001) <= 0.001);
}

TEST_CASE("mini sudoku enumeration") {
    const auto& grids = sudoku::all_grids();
    CHECK(grids.size() == 288);
    for (const auto& g : grids) {
        CHECK(sudoku::grid_valid(g));
    }
    CHECK(std::set<TokenSeq>(grids.begin(), grids.end()).size() == 288);
}

TEST_CASE("mini sudoku puzzles") {
    Rng rng(5);
    auto full = sudoku::generate(16, rng);
    CHECK(full.puzzle == full.solution);
    CHECK(full.sequence.size() == 34);
    CHECK(sudoku::sequence_valid(full.sequence));

    std::set<TokenSeq> seen;
    for (int i = 0; i < 100000; ++i) {
        auto p = sudoku::generate_range(6, 12, rng);
        int givens = 0;
        for (int v : p.puzzle) {
            givens += v != sudoku::kBlank;
        }
        CHECK_MESSAGE((givens >= 6 && givens <= 12), "givens out of range");
        if (i < 1000) {
            CHECK(sudoku::sequence_valid(p.sequence));
        }
        seen.insert(p.solution);
    }
    CHECK(seen.size() >= 287);

    // A solution contradicting a given fails.
    auto p = sudoku::generate(8, rng);
    auto bad = p.sequence;
    for (int i = 0; i < 16; ++i) {
        if (p.puzzle[i] != sudoku::kBlank) {
            bad[sudoku::kSolutionStart + i] = p.puzzle[i] % 4 + 1;
            break;
        }
    }
    CHECK_FALSE(sudoku::sequence_valid(bad));
}

TEST_CASE("dataset metadata") {
    Dataset s({.kind = DatasetKind::minisudoku});
    CHECK(s.vocab_size() == 7);
    CHECK(s.seq_len() == 34);
    CHECK(s.maskable().size() == 16);
    CHECK_FALSE(s.exact().has_value());
    CHECK(parse_dataset_kind("d2") == DatasetKind::d2);
    CHECK_FALSE(parse_dataset_kind("d3").has_value());
}
