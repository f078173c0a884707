#include "vmd/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace vmd {

double ExactDist::prob(const TokenSeq& s) const {
    for (std::size_t i = 0; i < support.size(); ++i) {
        if (support[i] == s) {
            return probs[i];
        }
    }
    return 0.0;
}

const TokenSeq& ExactDist::sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
        acc += probs[i];
        if (u < acc) {
            return support[i];
        }
    }
    return support.back();  // u landed in the rounding slack above the last cdf value
}

void ExactDist::validate() const {
    if (support.size() != probs.size() || support.empty()) {
        throw std::logic_error("ExactDist: support/probability size mismatch");
    }
    double total = 0.0;
    for (double p : probs) {
        if (!(p > 0.0)) {
            throw std::logic_error("ExactDist: nonpositive probability");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw std::logic_error("ExactDist: probabilities sum to " + std::to_string(total));
    }
    std::set<TokenSeq> seen(support.begin(), support.end());
    if (seen.size() != support.size()) {
        throw std::logic_error("ExactDist: duplicate support entries");
    }
}

int DatasetSpec::vocab_size() const {
    return kind == DatasetKind::minisudoku ? sudoku::kVocab : vocab;
}

int DatasetSpec::seq_len() const {
    switch (kind) {
        case DatasetKind::det2:
        case DatasetKind::nonuni2:
        case DatasetKind::varp2:
            return 2;
        case DatasetKind::d1:
        case DatasetKind::d2:
            return 4;
        case DatasetKind::minisudoku:
            return sudoku::kSeqLen;
    }
    return 0;
}

std::string DatasetSpec::id() const {
    std::string name = dataset_kind_name(kind);
    if (kind == DatasetKind::varp2) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "(p=%g)", p);
        name += buf;
    }
    return name;
}

std::optional<DatasetKind> parse_dataset_kind(const std::string& name) {
    static const std::map<std::string, DatasetKind> names = {
        {"det2", DatasetKind::det2}, {"nonuni2", DatasetKind::nonuni2}, {"varp2", DatasetKind::varp2},
        {"d1", DatasetKind::d1},     {"d2", DatasetKind::d2},           {"minisudoku", DatasetKind::minisudoku}};
    auto it = names.find(name);
    if (it == names.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string dataset_kind_name(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::det2: return "det2";
        case DatasetKind::nonuni2: return "nonuni2";
        case DatasetKind::varp2: return "varp2";
        case DatasetKind::d1: return "d1";
        case DatasetKind::d2: return "d2";
        case DatasetKind::minisudoku: return "minisudoku";
    }
    return "?";
}

std::optional<ExactDist> exact_distribution(const DatasetSpec& spec) {
    const int V = spec.vocab;
    ExactDist d;
    auto push = [&](TokenSeq s, double p) {
        if (p > 0.0) {
            d.support.push_back(std::move(s));
            d.probs.push_back(p);
        }
    };
    switch (spec.kind) {
        case DatasetKind::det2:
            for (int k = 0; k < V; ++k) {
                push({k, (k + 1) % V}, 1.0 / V);
            }
            break;
        case DatasetKind::nonuni2: {
            const double norm = V * (V + 1) / 2.0;
            for (int k = 0; k < V; ++k) {
                push({k, (k + 1) % V}, (k + 1) / norm);
            }
            break;
        }
        case DatasetKind::varp2:
            if (spec.p < 0.0 || spec.p > 1.0 || V < 2) {
                throw std::invalid_argument("varp2 needs p in [0,1] and V >= 2");
            }
            for (int a = 0; a < V; ++a) {
                for (int b = 0; b < V; ++b) {
                    const double cond = b == (a + 1) % V ? spec.p : (1.0 - spec.p) / (V - 1);
                    push({a, b}, cond / V);
                }
            }
            break;
        case DatasetKind::d1:
            for (int k = 0; k < V; ++k) {
                push({k, (k + 1) % V, (k + 2) % V, (k + 3) % V}, 1.0 / V);
            }
            break;
        case DatasetKind::d2:
            for (int k = 0; k < V; ++k) {
                for (int l = 0; l < V; ++l) {
                    push({k, (k + 1) % V, l, (l + 1) % V}, 1.0 / (V * V));
                }
            }
            break;
        case DatasetKind::minisudoku:
            return std::nullopt;
    }
    d.validate();
    return d;
}

namespace {

const ExactDist& cached(const DatasetSpec& spec) {
    thread_local std::map<std::pair<int, std::pair<double, int>>, ExactDist> cache;
    const auto key = std::make_pair(static_cast<int>(spec.kind), std::make_pair(spec.p, spec.vocab));
    auto it = cache.find(key);
    if (it == cache.end()) {
        it = cache.emplace(key, *exact_distribution(spec)).first;
    }
    return it->second;
}

}  // namespace

TokenSeq gen_det2(Rng& rng) {
    return cached({.kind = DatasetKind::det2}).sample(rng);
}

TokenSeq gen_nonuni2(Rng& rng) {
    return cached({.kind = DatasetKind::nonuni2}).sample(rng);
}

TokenSeq gen_varp2(double p, int V, Rng& rng) {
    return cached({.kind = DatasetKind::varp2, .p = p, .vocab = V}).sample(rng);
}

TokenSeq gen_d1(Rng& rng) {
    return cached({.kind = DatasetKind::d1}).sample(rng);
}

TokenSeq gen_d2(Rng& rng) {
    return cached({.kind = DatasetKind::d2}).sample(rng);
}

namespace sudoku {

bool grid_valid(std::span<const int> g) {
    if (g.size() != kCells) {
        return false;
    }
    for (int v : g) {
        if (v < 1 || v > 4) {
            return false;
        }
    }
    for (int i = 0; i < 4; ++i) {
        std::array<bool, 5> row{}, col{}, box{};
        for (int j = 0; j < 4; ++j) {
            const int r = g[i * 4 + j];
            const int c = g[j * 4 + i];
            const int b = g[(i / 2 * 2 + j / 2) * 4 + (i % 2 * 2 + j % 2)];
            if (row[r] || col[c] || box[b]) {
                return false;
            }
            row[r] = col[c] = box[b] = true;
        }
    }
    return true;
}

namespace {

bool can_place(const TokenSeq& g, int cell, int v) {
    const int r = cell / 4, c = cell % 4;
    for (int j = 0; j < 4; ++j) {
        if (g[r * 4 + j] == v || g[j * 4 + c] == v) {
            return false;
        }
    }
    const int br = r / 2 * 2, bc = c / 2 * 2;
    for (int dr = 0; dr < 2; ++dr) {
        for (int dc = 0; dc < 2; ++dc) {
            if (g[(br + dr) * 4 + bc + dc] == v) {
                return false;
            }
        }
    }
    return true;
}

void fill(TokenSeq& g, int cell, std::vector<TokenSeq>& out) {
    if (cell == kCells) {
        out.push_back(g);
        return;
    }
    for (int v = 1; v <= 4; ++v) {
        if (can_place(g, cell, v)) {
            g[cell] = v;
            fill(g, cell + 1, out);
            g[cell] = kBlank;
        }
    }
}

}  // namespace

const std::vector<TokenSeq>& all_grids() {
    static const std::vector<TokenSeq> grids = [] {
        std::vector<TokenSeq> out;
        TokenSeq g(kCells, kBlank);
        fill(g, 0, out);
        return out;
    }();
    return grids;
}

Puzzle generate(int givens, Rng& rng) {
    if (givens < 0 || givens > kCells) {
        throw std::invalid_argument("sudoku: givens must be in [0, 16]");
    }
    const auto& grids = all_grids();
    Puzzle p;
    p.solution = grids[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(grids.size())))];
    std::array<int, kCells> order;
    std::iota(order.begin(), order.end(), 0);
    for (int i = kCells - 1; i > 0; --i) {
        std::swap(order[i], order[rng.uniform_int(i + 1)]);
    }
    p.puzzle.assign(kCells, kBlank);
    for (int i = 0; i < givens; ++i) {
        p.puzzle[order[i]] = p.solution[order[i]];
    }
    p.sequence = p.puzzle;
    p.sequence.push_back(kSep);
    p.sequence.insert(p.sequence.end(), p.solution.begin(), p.solution.end());
    p.sequence.push_back(kEos);
    return p;
}

Puzzle generate_range(int lo, int hi, Rng& rng) {
    if (lo > hi) {
        throw std::invalid_argument("sudoku: empty givens range");
    }
    return generate(lo + rng.uniform_int(hi - lo + 1), rng);
}

bool sequence_valid(const TokenSeq& seq) {
    if (seq.size() != static_cast<std::size_t>(kSeqLen) || seq[kCells] != kSep || seq[kSeqLen - 1] != kEos) {
        return false;
    }
    std::span<const int> sol(seq.data() + kSolutionStart, kCells);
    if (!grid_valid(sol)) {
        return false;
    }
    for (int i = 0; i < kCells; ++i) {
        if (seq[i] != kBlank && seq[i] != sol[i]) {
            return false;
        }
    }
    return true;
}

std::vector<int> prompt_positions() {
    std::vector<int> pos(kCells);
    std::iota(pos.begin(), pos.end(), 0);
    pos.push_back(kCells);
    pos.push_back(kSeqLen - 1);
    return pos;
}

}  // namespace sudoku

Dataset::Dataset(DatasetSpec spec) : spec_(spec), exact_(exact_distribution(spec)) {
    if (spec_.kind == DatasetKind::minisudoku) {
        if (spec_.givens_min < 0 || spec_.givens_max > sudoku::kCells || spec_.givens_min > spec_.givens_max) {
            throw std::invalid_argument("minisudoku: givens range must lie in [0, 16]");
        }
        for (int i = 0; i < sudoku::kCells; ++i) {
            maskable_.push_back(sudoku::kSolutionStart + i);
        }
    } else {
        maskable_.resize(static_cast<std::size_t>(seq_len()));
        std::iota(maskable_.begin(), maskable_.end(), 0);
    }
}

TokenSeq Dataset::sample(Rng& rng) const {
    if (exact_) {
        return exact_->sample(rng);
    }
    return sudoku::generate_range(spec_.givens_min, spec_.givens_max, rng).sequence;
}

bool Dataset::valid(const TokenSeq& seq) const {
    if (exact_) {
        return exact_->prob(seq) > 0.0;
    }
    return sudoku::sequence_valid(seq);
}

}  // namespace vmd
