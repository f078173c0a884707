#include "vmd/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace vmd {

namespace {

// Reads keys from one JSON object and rejects anything it did not consume.
class Strict {
public:
    Strict(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) {
            throw std::invalid_argument(where_ + ": expected a JSON object");
        }
    }

    template <class T>
    void opt(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) {
            return;
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw std::invalid_argument(where_ + "." + key + ": " + e.what());
        }
    }

    const json* sub(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw std::invalid_argument(where_ + ": unknown key '" + it.key() + "'");
            }
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

json to_json(const DatasetSpec& d) {
    return {{"kind", dataset_kind_name(d.kind)}, {"p", d.p},          {"vocab", d.vocab},
            {"givens_min", d.givens_min},        {"givens_max", d.givens_max}};
}

json to_json(const BackboneConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"seq_len", c.seq_len},
            {"block_len", c.block_len},
            {"hidden_dim", c.hidden_dim},
            {"decoder_layers", c.decoder_layers},
            {"encoder_layers", c.encoder_layers},
            {"num_heads", c.num_heads},
            {"latent_dim", c.latent_dim},
            {"mlp_ratio", c.mlp_ratio},
            {"kl_weight", c.kl_weight},
            {"use_latent", c.use_latent},
            {"latent_embed", c.latent_embed},
            {"latent_adaln", c.latent_adaln},
            {"shared_adaln", c.shared_adaln},
            {"pool_exclude", c.pool_exclude}};
}

json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"num_steps", c.num_steps},
            {"lr", c.lr},
            {"t_min", c.t_min},
            {"kl_inside_weight", c.kl_inside_weight},
            {"kl_warmup_steps", c.kl_warmup_steps},
            {"log_every", c.log_every},
            {"checkpoint_every", c.checkpoint_every}};
}

json to_json(const EvalSpec& e) {
    return {{"nfe", e.nfe},
            {"strategy", strategy_name(e.strategy)},
            {"categorical", e.categorical},
            {"n_samples", e.n_samples},
            {"in_table", e.in_table}};
}

json to_json(const RunSpec& r) {
    json evals = json::array();
    for (const auto& e : r.evals) {
        evals.push_back(to_json(e));
    }
    return {{"tag", r.tag},
            {"dataset", to_json(r.dataset)},
            {"backbone", to_json(r.backbone)},
            {"train", to_json(r.train)},
            {"evals", evals}};
}

json to_json(const ExperimentConfig& c) {
    json runs = json::array();
    for (const auto& r : c.runs) {
        runs.push_back(to_json(r));
    }
    return {{"schema_version", c.schema_version},
            {"experiment", c.experiment},
            {"table", c.table},
            {"seed", c.seed},
            {"dump_samples", c.dump_samples},
            {"runs", runs}};
}

DatasetSpec dataset_from_json(const json& j) {
    Strict s(j, "dataset");
    DatasetSpec d;
    std::string kind = dataset_kind_name(d.kind);
    s.opt("kind", kind);
    auto parsed = parse_dataset_kind(kind);
    if (!parsed) {
        throw std::invalid_argument("dataset.kind: unknown dataset '" + kind + "'");
    }
    d.kind = *parsed;
    s.opt("p", d.p);
    s.opt("vocab", d.vocab);
    s.opt("givens_min", d.givens_min);
    s.opt("givens_max", d.givens_max);
    s.finish();
    return d;
}

BackboneConfig backbone_from_json(const json& j) {
    Strict s(j, "backbone");
    BackboneConfig c;
    s.opt("vocab_size", c.vocab_size);
    s.opt("seq_len", c.seq_len);
    s.opt("block_len", c.block_len);
    s.opt("hidden_dim", c.hidden_dim);
    s.opt("decoder_layers", c.decoder_layers);
    s.opt("encoder_layers", c.encoder_layers);
    s.opt("num_heads", c.num_heads);
    s.opt("latent_dim", c.latent_dim);
    s.opt("mlp_ratio", c.mlp_ratio);
    s.opt("kl_weight", c.kl_weight);
    s.opt("use_latent", c.use_latent);
    s.opt("latent_embed", c.latent_embed);
    s.opt("latent_adaln", c.latent_adaln);
    s.opt("shared_adaln", c.shared_adaln);
    s.opt("pool_exclude", c.pool_exclude);
    s.finish();
    c.validate();
    return c;
}

TrainConfig train_from_json(const json& j) {
    Strict s(j, "train");
    TrainConfig c;
    s.opt("batch_size", c.batch_size);
    s.opt("num_steps", c.num_steps);
    s.opt("lr", c.lr);
    s.opt("t_min", c.t_min);
    s.opt("kl_inside_weight", c.kl_inside_weight);
    s.opt("kl_warmup_steps", c.kl_warmup_steps);
    s.opt("log_every", c.log_every);
    s.opt("checkpoint_every", c.checkpoint_every);
    s.finish();
    return c;
}

EvalSpec eval_from_json(const json& j) {
    Strict s(j, "eval");
    EvalSpec e;
    std::string strategy = strategy_name(e.strategy);
    s.opt("nfe", e.nfe);
    s.opt("strategy", strategy);
    e.strategy = parse_strategy(strategy);
    s.opt("categorical", e.categorical);
    s.opt("n_samples", e.n_samples);
    s.opt("in_table", e.in_table);
    s.finish();
    return e;
}

RunSpec run_from_json(const json& j) {
    Strict s(j, "run");
    RunSpec r;
    s.opt("tag", r.tag);
    if (const json* d = s.sub("dataset")) r.dataset = dataset_from_json(*d);
    if (const json* b = s.sub("backbone")) r.backbone = backbone_from_json(*b);
    if (const json* t = s.sub("train")) r.train = train_from_json(*t);
    if (const json* ev = s.sub("evals")) {
        if (!ev->is_array()) {
            throw std::invalid_argument("run.evals: expected an array");
        }
        for (const auto& e : *ev) {
            r.evals.push_back(eval_from_json(e));
        }
    }
    s.finish();
    return r;
}

ExperimentConfig experiment_from_json(const json& j) {
    Strict s(j, "config");
    ExperimentConfig c;
    c.schema_version = -1;
    s.opt("schema_version", c.schema_version);
    if (c.schema_version != kSchemaVersion) {
        throw std::invalid_argument("config: schema_version must be " + std::to_string(kSchemaVersion) + ", got " +
                                    std::to_string(c.schema_version));
    }
    s.opt("experiment", c.experiment);
    s.opt("table", c.table);
    s.opt("seed", c.seed);
    s.opt("dump_samples", c.dump_samples);
    if (const json* runs = s.sub("runs")) {
        if (!runs->is_array()) {
            throw std::invalid_argument("config.runs: expected an array");
        }
        for (const auto& r : *runs) {
            c.runs.push_back(run_from_json(r));
        }
    }
    s.finish();
    c.validate();
    return c;
}

ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config " + path);
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
    return experiment_from_json(j);
}

void ExperimentConfig::validate() const {
    static const std::set<std::string> tables{"table1", "table2", "table3", "minisudoku", "none"};
    if (experiment.empty()) {
        throw std::invalid_argument("config: experiment id is empty");
    }
    if (!tables.count(table)) {
        throw std::invalid_argument("config: unknown table '" + table + "'");
    }
    if (dump_samples < 0) {
        throw std::invalid_argument("config: dump_samples must be >= 0");
    }
    std::set<std::string> tags;
    for (const auto& r : runs) {
        if (r.tag.empty() || r.tag.find_first_of("/\\ ") != std::string::npos) {
            throw std::invalid_argument("config: run tag '" + r.tag + "' must be non-empty without spaces or slashes");
        }
        if (!tags.insert(r.tag).second) {
            throw std::invalid_argument("config: duplicate run tag '" + r.tag + "'");
        }
        r.backbone.validate();
        if (r.backbone.seq_len != r.dataset.seq_len() || r.backbone.vocab_size != r.dataset.vocab_size()) {
            throw std::invalid_argument("config: run '" + r.tag + "' backbone shape does not match dataset " +
                                        r.dataset.id());
        }
        for (const auto& e : r.evals) {
            const int B = r.backbone.num_blocks();
            if (e.nfe < B || e.nfe % B != 0 || e.nfe / B > r.backbone.block_len) {
                throw std::invalid_argument("config: run '" + r.tag + "' nfe " + std::to_string(e.nfe) +
                                            " is not a multiple of B=" + std::to_string(B) +
                                            " within the block length");
            }
            if (e.n_samples < 1) {
                throw std::invalid_argument("config: run '" + r.tag + "' n_samples must be positive");
            }
        }
    }
}

}  // namespace vmd
