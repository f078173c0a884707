#pragma once

#include "vmd/rng.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vmd {

using TokenSeq = std::vector<int>;

// Exact probability table over an enumerable support.
struct ExactDist {
    std::vector<TokenSeq> support;
    std::vector<double> probs;

    double prob(const TokenSeq& s) const;
    // Inverse-CDF draw.
    const TokenSeq& sample(Rng& rng) const;
    void validate() const;
};

enum class DatasetKind { det2, nonuni2, varp2, d1, d2, minisudoku };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::det2;
    double p = 1.0;        // varp2 only
    int vocab = 10;        // digit vocabulary for the synthetic sets
    int givens_min = 6;    // minisudoku only
    int givens_max = 12;

    int vocab_size() const;  // output vocabulary, MASK excluded
    int seq_len() const;
    std::string id() const;
};

std::optional<DatasetKind> parse_dataset_kind(const std::string& name);
std::string dataset_kind_name(DatasetKind kind);

TokenSeq gen_det2(Rng& rng);
TokenSeq gen_nonuni2(Rng& rng);
TokenSeq gen_varp2(double p, int V, Rng& rng);
TokenSeq gen_d1(Rng& rng);
TokenSeq gen_d2(Rng& rng);

namespace sudoku {

inline constexpr int kCells = 16;
inline constexpr int kBlank = 0;
inline constexpr int kSep = 5;
inline constexpr int kEos = 6;
inline constexpr int kVocab = 7;  // 0..6, MASK = 7
inline constexpr int kSeqLen = 34;
inline constexpr int kSolutionStart = 17;

// Every complete 4x4 grid (digits 1..4), enumerated once by backtracking.
const std::vector<TokenSeq>& all_grids();
bool grid_valid(std::span<const int> grid);

struct Puzzle {
    TokenSeq puzzle;    // 16 cells, blank = 0
    TokenSeq solution;  // 16 cells
    TokenSeq sequence;  // puzzle + SEP + solution + EOS
};

Puzzle generate(int givens, Rng& rng);
// Draws givens uniformly from [lo, hi].
Puzzle generate_range(int lo, int hi, Rng& rng);
// Solution part is a valid grid that agrees with every given of the puzzle part.
bool sequence_valid(const TokenSeq& seq);
// Positions fixed by the prompt: puzzle cells, SEP and EOS.
std::vector<int> prompt_positions();

}  // namespace sudoku

// Uniform interface over the built-in datasets.
class Dataset {
public:
    explicit Dataset(DatasetSpec spec);

    const DatasetSpec& spec() const { return spec_; }
    int vocab_size() const { return spec_.vocab_size(); }
    int seq_len() const { return spec_.seq_len(); }

    TokenSeq sample(Rng& rng) const;
    bool valid(const TokenSeq& seq) const;
    // Empty for minisudoku (validity predicate only).
    const std::optional<ExactDist>& exact() const { return exact_; }
    // Positions the forward process may mask (all but the prompt for minisudoku).
    const std::vector<int>& maskable() const { return maskable_; }

private:
    DatasetSpec spec_;
    std::optional<ExactDist> exact_;
    std::vector<int> maskable_;
};

std::optional<ExactDist> exact_distribution(const DatasetSpec& spec);

}  // namespace vmd
