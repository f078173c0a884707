#pragma once

#include "vmd/checkpoint.hpp"
#include "vmd/config.hpp"
#include "vmd/eval.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace vmd {

struct EvalResult {
    std::string experiment;
    std::string run;
    std::string method;
    std::string dataset;
    int blocks = 1;
    int nfe = 1;
    Strategy strategy = Strategy::top_prob;
    bool categorical = false;
    bool in_table = true;
    double accuracy = 0.0;
    std::optional<double> kl;  // none for datasets without an exact table
    double smoothing = 0.0;
    long n_samples = 0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

struct ExperimentOutput {
    nlohmann::json manifest;
    std::vector<EvalResult> results;
    std::string table;
};

using Logger = std::function<void(const std::string&)>;

// Seeds: every run trains from the root seed's data/mask/epsilon streams (paired
// comparison); init is derived per run tag; evaluation uses one sampler seed for
// every cell.
std::uint64_t init_seed(std::uint64_t root, const std::string& tag);
std::uint64_t eval_seed(std::uint64_t root);

// Mini-Sudoku evaluation prompts: fresh puzzles with the solution part masked,
// identical for every method given the same seed.
std::vector<TokenSeq> sudoku_prompts(const DatasetSpec& spec, int n, std::uint64_t seed, int mask_id);

// Samples and scores one cell against the dataset.
EvalResult evaluate(const Backbone<float>& model, const RunSpec& run, const EvalSpec& cell, std::uint64_t seed,
                    std::vector<TokenSeq>* samples_out = nullptr);

// Trains every run, evaluates every cell and writes metrics.jsonl, table.txt,
// heatmap_<tag>.csv, ckpt_<tag>.{json,bin}, train_<tag>.jsonl,
// samples_<tag>.jsonl and manifest.json into out_dir. A failing stage is
// recorded in manifest.json before the error propagates.
// train_only skips evaluation; eval_only loads ckpt_<tag> from out_dir instead of training.
enum class Stages { all, train_only, eval_only };
ExperimentOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, const Logger& log = {},
                                Stages stages = Stages::all);

std::string render_table(const ExperimentConfig& cfg, const std::vector<EvalResult>& results);

// Loads metrics.jsonl back.
std::vector<EvalResult> read_metrics(const std::string& path);

}  // namespace vmd
