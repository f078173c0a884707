#pragma once

#include "vmd/backbone.hpp"
#include "vmd/datasets.hpp"
#include "vmd/diffusion.hpp"
#include "vmd/sampler.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vmd {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// One evaluation cell: a decoding setup applied to a trained run.
struct EvalSpec {
    int nfe = 1;  // total decoder calls; per block = nfe / B
    Strategy strategy = Strategy::top_prob;
    bool categorical = false;
    int n_samples = 100000;
    bool in_table = true;  // false = metrics only
};

struct RunSpec {
    std::string tag;
    DatasetSpec dataset;
    BackboneConfig backbone;
    TrainConfig train;
    std::vector<EvalSpec> evals;

    std::string method() const { return backbone.use_latent ? "vmd" : "mdm"; }
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string experiment;
    std::string table = "none";  // table1 | table2 | table3 | minisudoku | none
    std::uint64_t seed = 0;
    int dump_samples = 1000;  // sample-dump lines per eval cell
    std::vector<RunSpec> runs;

    void validate() const;
};

json to_json(const DatasetSpec& d);
json to_json(const BackboneConfig& c);
json to_json(const TrainConfig& c);
json to_json(const EvalSpec& e);
json to_json(const RunSpec& r);
json to_json(const ExperimentConfig& c);

// Strict: unknown keys, wrong types and a schema_version mismatch throw.
DatasetSpec dataset_from_json(const json& j);
BackboneConfig backbone_from_json(const json& j);
TrainConfig train_from_json(const json& j);
EvalSpec eval_from_json(const json& j);
RunSpec run_from_json(const json& j);
ExperimentConfig experiment_from_json(const json& j);
ExperimentConfig load_experiment(const std::string& path);

const std::vector<std::string>& preset_names();
// Throws std::out_of_range for an unknown name.
ExperimentConfig make_preset(const std::string& name, std::uint64_t seed);

}  // namespace vmd
