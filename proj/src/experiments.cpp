#include "vmd/experiments.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vmd {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "vmdlab 0.1.0";

std::string cell_tag(const EvalSpec& e) {
    return "nfe" + std::to_string(e.nfe) + "_" + strategy_name(e.strategy) + "_" + (e.categorical ? "cat" : "argmax");
}

std::string file_safe(const std::string& s) {
    std::string out;
    for (char c : s) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
    if (!out) {
        throw std::runtime_error("cannot write " + p.string());
    }
}

}  // namespace

nlohmann::json EvalResult::to_json() const {
    nlohmann::json j{{"experiment", experiment},
                     {"method", method},
                     {"nfe", nfe},
                     {"strategy", strategy_name(strategy)},
                     {"accuracy", accuracy},
                     {"kl", kl ? nlohmann::json(*kl) : nlohmann::json(nullptr)},
                     {"n_samples", n_samples},
                     {"seed", seed},
                     {"run", run},
                     {"dataset", dataset},
                     {"blocks", blocks},
                     {"decoding", categorical ? "categorical" : "argmax"},
                     {"in_table", in_table},
                     {"smoothing", smoothing}};
    return j;
}

std::uint64_t init_seed(std::uint64_t root, const std::string& tag) {
    return Rng::derive(root, Stream::init, hash_tag(tag)).next_u64();
}

std::uint64_t eval_seed(std::uint64_t root) { return Rng::derive(root, Stream::sampler, hash_tag("eval")).next_u64(); }

std::vector<TokenSeq> sudoku_prompts(const DatasetSpec& spec, int n, std::uint64_t seed, int mask_id) {
    const Dataset data(spec);
    Rng puzzles = Rng::derive(seed, Stream::data, hash_tag("puzzles"));
    std::vector<TokenSeq> prompts;
    prompts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        TokenSeq p = sudoku::generate_range(spec.givens_min, spec.givens_max, puzzles).sequence;
        for (int pos : data.maskable()) {
            p[pos] = mask_id;
        }
        prompts.push_back(std::move(p));
    }
    return prompts;
}

EvalResult evaluate(const Backbone<float>& model, const RunSpec& run, const EvalSpec& cell, std::uint64_t seed,
                    std::vector<TokenSeq>* samples_out) {
    const Dataset data(run.dataset);
    const int B = model.config().num_blocks();
    if (cell.nfe % B != 0) {
        throw std::invalid_argument("evaluate: nfe " + std::to_string(cell.nfe) + " is not a multiple of B=" +
                                    std::to_string(B));
    }
    SampleConfig sc;
    sc.nfe = cell.nfe / B;
    sc.strategy = cell.strategy;
    sc.categorical = cell.categorical;
    sc.num_samples = cell.n_samples;
    sc.seed = seed;

    std::vector<TokenSeq> samples;
    if (run.dataset.kind == DatasetKind::minisudoku) {
        const auto prompts = sudoku_prompts(run.dataset, cell.n_samples, seed, model.config().mask_id());
        samples = sample_prompted(model, sc, prompts);
    } else {
        samples = sample(model, sc);
    }

    EvalResult r;
    r.run = run.tag;
    r.method = run.method();
    r.dataset = run.dataset.id();
    r.blocks = B;
    r.nfe = cell.nfe;
    r.strategy = cell.strategy;
    r.categorical = cell.categorical;
    r.in_table = cell.in_table;
    r.n_samples = cell.n_samples;
    r.seed = seed;
    r.accuracy = accuracy(samples, [&](const TokenSeq& s) { return data.valid(s); });
    if (data.exact()) {
        const auto emp = EmpiricalDist::from(samples);
        r.smoothing = default_smoothing(emp.total);
        r.kl = kl_truth_vs_model(*data.exact(), emp, r.smoothing);
    }
    if (samples_out) {
        *samples_out = std::move(samples);
    }
    return r;
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, const Logger& log,
                                Stages stages) {
    cfg.validate();
    const fs::path out(out_dir);
    fs::create_directories(out);
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    const auto start = std::chrono::steady_clock::now();

    ExperimentOutput result;
    auto& manifest = result.manifest;
    manifest = {{"experiment", cfg.experiment},
                {"version", kVersion},
                {"math_mode", "float32 training and sampling, double accumulation in evaluation; bitwise "
                              "reproducible on the same binary and CPU, single-threaded"},
                {"seed", cfg.seed},
                {"config", to_json(cfg)},
                {"status", "running"},
                {"completed_stages", nlohmann::json::array()},
                {"checkpoints", nlohmann::json::array()},
                {"train_logs", nlohmann::json::array()},
                {"sample_dumps", nlohmann::json::array()},
                {"heatmaps", nlohmann::json::array()},
                {"metrics", "metrics.jsonl"},
                {"table", "table.txt"}};
    auto write_manifest = [&] {
        manifest["wall_ms"] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        write_text(out / "manifest.json", manifest.dump(2) + "\n");
    };
    write_manifest();

    std::string stage;
    try {
        std::ofstream metrics;
        if (stages != Stages::train_only) {
            metrics.open(out / "metrics.jsonl");
        }
        const std::uint64_t eseed = eval_seed(cfg.seed);
        std::map<std::string, bool> truth_written;
        auto evaluate_run = [&](const Backbone<float>& model, const RunSpec& run) {
            const Dataset data(run.dataset);
            for (const auto& cell : run.evals) {
                stage = "eval:" + run.tag + ":" + cell_tag(cell);
                std::vector<TokenSeq> samples;
                EvalResult r = evaluate(model, run, cell, eseed, &samples);
                r.experiment = cfg.experiment;
                metrics << r.to_json().dump() << '\n';
                metrics.flush();
                {
                    std::ostringstream os;
                    os << "  eval " << run.tag << " " << cell_tag(cell) << ": acc " << std::fixed
                       << std::setprecision(4) << r.accuracy;
                    if (r.kl) os << " kl " << *r.kl;
                    say(os.str());
                }
                const std::string tag = run.tag + "_" + cell_tag(cell);
                if (cfg.dump_samples > 0) {
                    const std::string dump = "samples_" + tag + ".jsonl";
                    std::ofstream ds(out / dump);
                    const std::size_t n = std::min(samples.size(), static_cast<std::size_t>(cfg.dump_samples));
                    write_sample_dump(ds, {samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n)}, eseed,
                                      r.nfe, cell.strategy);
                    manifest["sample_dumps"].push_back(dump);
                }
                if (data.seq_len() == 2) {
                    const std::string hm = "heatmap_" + tag + ".csv";
                    std::ofstream hs(out / hm);
                    write_heatmap_csv(hs, joint_heatmap(samples, data.vocab_size()));
                    manifest["heatmaps"].push_back(hm);
                    const std::string truth_name = "heatmap_truth_" + file_safe(run.dataset.id()) + ".csv";
                    if (!truth_written[truth_name] && data.exact()) {
                        std::ofstream ts(out / truth_name);
                        write_heatmap_csv(ts, joint_heatmap(*data.exact(), data.vocab_size()));
                        manifest["heatmaps"].push_back(truth_name);
                        truth_written[truth_name] = true;
                    }
                }
                result.results.push_back(r);
                manifest["completed_stages"].push_back(stage);
            }
            write_manifest();
        };
        for (const auto& run : cfg.runs) {
            if (stages == Stages::eval_only) {
                stage = "load:" + run.tag;
                const auto path = out / ("ckpt_" + run.tag + ".json");
                say("[" + cfg.experiment + "] loading " + path.string());
                Backbone<float> model(run.backbone, 0);
                load_checkpoint(model, path.string());
                manifest["checkpoints"].push_back(path.filename().string());
                evaluate_run(model, run);
                continue;
            }
            stage = "train:" + run.tag;
            say("[" + cfg.experiment + "] training " + run.tag + " on " + run.dataset.id() + " (" +
                std::to_string(run.train.num_steps) + " steps)");
            Backbone<float> model(run.backbone, init_seed(cfg.seed, run.tag));
            const Dataset data(run.dataset);
            const std::string log_name = "train_" + run.tag + ".jsonl";
            std::ofstream tlog(out / log_name);
            const long report_every = std::max(1, run.train.num_steps / 10);
            train(
                model, data, run.train, cfg.seed,
                [&](const TrainRecord& r) {
                    tlog << nlohmann::json{{"step", r.step}, {"ce", r.ce}, {"kl", r.kl}, {"loss", r.loss},
                                           {"wall_ms", r.wall_ms}}
                                .dump()
                         << '\n';
                    if (r.step % report_every < run.train.log_every) {
                        std::ostringstream os;
                        os << "  step " << r.step << " ce " << std::fixed << std::setprecision(4) << r.ce << " kl "
                           << r.kl << " loss " << r.loss;
                        say(os.str());
                    }
                },
                [&](long step) {
                    const auto path = save_checkpoint(model, out.string(), run.tag + "_step" + std::to_string(step),
                                                      {{"run", run.tag}, {"step", step}});
                    manifest["checkpoints"].push_back(fs::path(path).filename().string());
                });
            tlog.close();
            manifest["train_logs"].push_back(log_name);
            const auto ckpt = save_checkpoint(model, out.string(), run.tag,
                                              {{"experiment", cfg.experiment},
                                               {"run", run.tag},
                                               {"dataset", to_json(run.dataset)},
                                               {"train", to_json(run.train)},
                                               {"seed", cfg.seed}});
            manifest["checkpoints"].push_back(fs::path(ckpt).filename().string());
            manifest["completed_stages"].push_back(stage);
            write_manifest();

            if (stages == Stages::all) {
                evaluate_run(model, run);
            }
            write_manifest();
        }
        if (stages != Stages::train_only) {
            stage = "table";
            result.table = render_table(cfg, result.results);
            write_text(out / "table.txt", result.table);
        }
        manifest["status"] = "complete";
        write_manifest();
    } catch (const std::exception& e) {
        manifest["status"] = "failed";
        manifest["failed_stage"] = stage;
        manifest["error"] = e.what();
        write_manifest();
        throw;
    }
    return result;
}

namespace {

struct Grid {
    std::vector<std::vector<std::string>> rows;

    std::string str() const {
        std::vector<std::size_t> w;
        for (const auto& r : rows) {
            w.resize(std::max(w.size(), r.size()), 0);
            for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
        }
        std::ostringstream os;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            for (std::size_t i = 0; i < rows[k].size(); ++i) {
                os << (i ? " | " : "") << std::left << std::setw(static_cast<int>(w[i])) << rows[k][i];
            }
            os << '\n';
            if (k == 0) {
                std::size_t total = 0;
                for (auto x : w) total += x + 3;
                os << std::string(total > 3 ? total - 3 : 0, '-') << '\n';
            }
        }
        return os.str();
    }
};

std::string fmt_kl(const EvalResult* r) {
    if (!r || !r->kl) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << *r->kl;
    return os.str();
}

std::string fmt_acc(const EvalResult* r) {
    if (!r) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * r->accuracy << "%";
    return os.str();
}

const EvalResult* find(const std::vector<EvalResult>& rs, const std::function<bool(const EvalResult&)>& pred) {
    for (const auto& r : rs) {
        if (r.in_table && pred(r)) return &r;
    }
    return nullptr;
}

std::string dataset_label(const std::string& id) {
    if (id == "det2") return "Deterministic";
    if (id == "nonuni2") return "Non-Uniform";
    return id;
}

}  // namespace

std::string render_table(const ExperimentConfig& cfg, const std::vector<EvalResult>& results) {
    std::ostringstream os;
    Grid g;
    if (cfg.table == "table1") {
        os << "Two-token data: KL (lower is better) and accuracy (higher is better)\n\n";
        g.rows.push_back({"Experiment", "Inference", "MDM (KL)", "MDM (Acc.)", "VMD (KL)", "VMD (Acc.)"});
        std::vector<std::string> datasets;
        for (const auto& r : cfg.runs) {
            if (std::find(datasets.begin(), datasets.end(), r.dataset.id()) == datasets.end())
                datasets.push_back(r.dataset.id());
        }
        for (const auto& ds : datasets) {
            bool first = true;
            for (auto [label, nfe] : {std::pair<const char*, int>{"One-step", 1}, {"Token-by-token", 2}}) {
                auto pick = [&](const char* method) {
                    return find(results, [&](const EvalResult& r) {
                        return r.dataset == ds && r.method == method && r.nfe == nfe;
                    });
                };
                const auto* m = pick("mdm");
                const auto* v = pick("vmd");
                g.rows.push_back({first ? dataset_label(ds) : "", label, fmt_kl(m), fmt_acc(m), fmt_kl(v), fmt_acc(v)});
                first = false;
            }
        }
    } else if (cfg.table == "table2") {
        os << "Varying dependence strength, one-step generation: KL (lower is better)\n\n";
        g.rows.push_back({"p", "MDM (KL)", "VMD (KL)", "Oracle (product KL)"});
        std::vector<double> ps;
        for (const auto& r : cfg.runs) {
            if (std::find(ps.begin(), ps.end(), r.dataset.p) == ps.end()) ps.push_back(r.dataset.p);
        }
        for (double p : ps) {
            const std::string id = DatasetSpec{DatasetKind::varp2, p}.id();
            auto pick = [&](const char* method) {
                return find(results, [&](const EvalResult& r) { return r.dataset == id && r.method == method && r.nfe == 1; });
            };
            std::ostringstream pp, oracle;
            pp << std::setprecision(2) << std::fixed << p;
            oracle << std::fixed << std::setprecision(3) << analytic_product_kl(p, 10);
            g.rows.push_back({pp.str(), fmt_kl(pick("mdm")), fmt_kl(pick("vmd")), oracle.str()});
        }
    } else if (cfg.table == "table3") {
        os << "Four-token data: accuracy (first two rows, higher is better) and KL (last two rows, lower is better)\n\n";
        const std::vector<std::pair<int, int>> cols{{2, 4}, {2, 2}, {1, 4}, {1, 1}};
        std::vector<std::string> header{"", "Method"};
        for (const char* ds : {"D1", "D2"}) {
            for (auto [B, nfe] : cols) {
                header.push_back(std::string(ds) + " B=" + std::to_string(B) + " NFE=" + std::to_string(nfe));
            }
        }
        g.rows.push_back(header);
        for (const char* metric : {"Acc.", "KL"}) {
            for (auto [method, label] : {std::pair<const char*, const char*>{"mdm", "Block MDM"}, {"vmd", "VMD"}}) {
                std::vector<std::string> row{std::string(method) == "mdm" ? metric : "", label};
                for (const char* ds : {"d1", "d2"}) {
                    for (auto [B, nfe] : cols) {
                        const auto* r = find(results, [&](const EvalResult& x) {
                            return x.dataset == ds && x.method == method && x.blocks == B && x.nfe == nfe;
                        });
                        row.push_back(std::string(metric) == "KL" ? fmt_kl(r) : fmt_acc(r));
                    }
                }
                g.rows.push_back(row);
            }
        }
    } else if (cfg.table == "minisudoku") {
        os << "Mini-Sudoku (4x4): fraction of puzzles solved (higher is better)\n\n";
        std::vector<int> nfes;
        for (const auto& r : results) {
            if (r.in_table && std::find(nfes.begin(), nfes.end(), r.nfe) == nfes.end()) nfes.push_back(r.nfe);
        }
        std::sort(nfes.begin(), nfes.end());
        std::vector<std::string> header{"Model"};
        for (const char* s : {"Top prob", "Top prob margin"}) {
            for (int n : nfes) header.push_back(std::string(s) + " NFE=" + std::to_string(n));
        }
        g.rows.push_back(header);
        for (auto [method, label] : {std::pair<const char*, const char*>{"mdm", "Baseline"}, {"vmd", "VMD"}}) {
            std::vector<std::string> row{label};
            for (Strategy s : {Strategy::top_prob, Strategy::top_margin}) {
                for (int n : nfes) {
                    row.push_back(fmt_acc(find(results, [&](const EvalResult& x) {
                        return x.method == method && x.strategy == s && x.nfe == n;
                    })));
                }
            }
            g.rows.push_back(row);
        }
    } else {
        g.rows.push_back({"run", "method", "dataset", "B", "NFE", "strategy", "decoding", "accuracy", "KL"});
        for (const auto& r : results) {
            g.rows.push_back({r.run, r.method, r.dataset, std::to_string(r.blocks), std::to_string(r.nfe),
                              strategy_name(r.strategy), r.categorical ? "categorical" : "argmax", fmt_acc(&r),
                              fmt_kl(&r)});
        }
    }
    os << g.str();
    if (cfg.table != "none") {
        if (cfg.table == "minisudoku") {
            os << "\nBoth models decode by argmax; a puzzle counts as solved when the grid is valid and keeps "
                  "every given.\n";
        } else {
            os << "\nBaseline cells decode categorically, VMD cells by argmax over p(x | x_t, z)."
                  " KL(truth || samples), additive smoothing 1/(10 n) on the truth support."
                  "\nMetrics for the other decoding are in metrics.jsonl.\n";
        }
    }
    return os.str();
}

std::vector<EvalResult> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::vector<EvalResult> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        EvalResult r;
        r.experiment = j.at("experiment");
        r.method = j.at("method");
        r.nfe = j.at("nfe");
        r.strategy = parse_strategy(j.at("strategy"));
        r.accuracy = j.at("accuracy");
        if (!j.at("kl").is_null()) r.kl = j.at("kl").get<double>();
        r.n_samples = j.at("n_samples");
        r.seed = j.at("seed");
        r.run = j.value("run", "");
        r.dataset = j.value("dataset", "");
        r.blocks = j.value("blocks", 1);
        r.categorical = j.value("decoding", "argmax") == "categorical";
        r.in_table = j.value("in_table", true);
        r.smoothing = j.value("smoothing", 0.0);
        out.push_back(r);
    }
    return out;
}

}  // namespace vmd
