#include "vmd/checkpoint.hpp"
#include "vmd/config.hpp"
#include "vmd/experiments.hpp"
#include "vmd/gradcheck.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace {

using namespace vmd;

struct ExperimentArgs {
    std::string preset;
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    bool quiet = false;
    bool print_config = false;
};

void add_experiment_flags(CLI::App* sub, ExperimentArgs& a) {
    auto* p = sub->add_option("--preset", a.preset, "Built-in experiment")->check(CLI::IsMember(preset_names()));
    auto* c = sub->add_option("--config", a.config, "Experiment JSON")->check(CLI::ExistingFile);
    p->excludes(c);
    sub->add_option("--seed", a.seed, "Root seed (overrides the config's seed)");
    sub->add_option("--out", a.out, "Output directory (default out/<experiment>)");
    sub->add_flag("--quiet", a.quiet, "No progress output");
    sub->add_flag("--print-config", a.print_config, "Print the resolved config as JSON and exit");
}

ExperimentConfig resolve(const ExperimentArgs& a, const CLI::App* sub) {
    if (a.preset.empty() == a.config.empty()) {
        throw CLI::ValidationError("exactly one of --preset or --config is required");
    }
    ExperimentConfig cfg = a.preset.empty() ? load_experiment(a.config) : make_preset(a.preset, a.seed);
    if (sub->count("--seed")) {
        cfg.seed = a.seed;
    }
    cfg.validate();
    return cfg;
}

int run_stages(const ExperimentArgs& a, const CLI::App* sub, Stages stages) {
    const auto cfg = resolve(a, sub);
    if (a.print_config) {
        std::cout << to_json(cfg).dump(2) << '\n';
        return 0;
    }
    const std::string out = a.out.empty() ? "out/" + cfg.experiment : a.out;
    Logger log;
    if (!a.quiet) {
        log = [](const std::string& s) { std::cerr << s << '\n'; };
    }
    const auto res = run_experiment(cfg, out, log, stages);
    if (stages != Stages::train_only) {
        std::cout << res.table;
    }
    std::cout << "artifacts in " << out << '\n';
    return 0;
}

struct SampleArgs {
    std::string ckpt;
    int nfe = 0;
    std::string strategy = "top_prob";
    bool categorical = false;
    int n = 10;
    std::uint64_t seed = 0;
    std::string out;
};

int do_sample(const SampleArgs& a) {
    const auto model = load_model(a.ckpt);
    const int B = model.config().num_blocks();
    const int nfe = a.nfe > 0 ? a.nfe : model.config().seq_len;
    if (nfe % B != 0) {
        throw CLI::ValidationError("--nfe " + std::to_string(nfe) + " is not a multiple of B=" + std::to_string(B));
    }
    SampleConfig sc;
    sc.nfe = nfe / B;
    sc.strategy = parse_strategy(a.strategy);
    sc.categorical = a.categorical;
    sc.num_samples = a.n;
    sc.seed = a.seed;
    const auto samples = sample(model, sc);
    if (a.out.empty()) {
        write_sample_dump(std::cout, samples, a.seed, nfe, sc.strategy);
    } else {
        std::ofstream os(a.out);
        write_sample_dump(os, samples, a.seed, nfe, sc.strategy);
        if (!os) {
            throw std::runtime_error("cannot write " + a.out);
        }
    }
    return 0;
}

int do_gradcheck(std::uint64_t seed) {
    const auto r = mlp_gradcheck(seed);
    std::cout << "gradcheck seed " << seed << ": " << r.checked << " entries, max relative error " << std::scientific
              << std::setprecision(3) << r.max_rel_error << " (worst " << r.worst << ")\n";
    if (!(r.max_rel_error < 1e-4)) {
        std::cerr << "gradcheck FAILED: error above 1e-4\n";
        return 1;
    }
    return 0;
}

int do_oracle(int V) {
    std::cout << "p     KL(truth || product of marginals), V=" << V << '\n';
    for (double p : {0.3, 0.5, 0.7, 1.0}) {
        std::cout << std::fixed << std::setprecision(2) << p << "  " << std::setprecision(3)
                  << analytic_product_kl(p, V) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked diffusion / variational masked diffusion laboratory"};
    app.require_subcommand(1);

    ExperimentArgs run_a, train_a, eval_a;
    auto* run = app.add_subcommand("run", "Train and evaluate every run of an experiment");
    add_experiment_flags(run, run_a);
    auto* train = app.add_subcommand("train", "Train every run and write checkpoints and train logs");
    add_experiment_flags(train, train_a);
    auto* eval = app.add_subcommand("eval", "Evaluate checkpoints previously written by train into --out");
    add_experiment_flags(eval, eval_a);

    SampleArgs sample_a;
    auto* samp = app.add_subcommand("sample", "Draw samples from a checkpoint as NDJSON");
    samp->add_option("--ckpt", sample_a.ckpt, "Checkpoint manifest (ckpt_<tag>.json)")
        ->required()
        ->check(CLI::ExistingFile);
    samp->add_option("--nfe", sample_a.nfe, "Total decoder calls (default: sequence length)");
    samp->add_option("--strategy", sample_a.strategy, "Unmasking order")
        ->check(CLI::IsMember({"random", "top_prob", "top_margin"}));
    samp->add_flag("--categorical", sample_a.categorical, "Draw tokens instead of argmax");
    samp->add_option("--n", sample_a.n, "Number of samples")->check(CLI::PositiveNumber);
    samp->add_option("--seed", sample_a.seed, "Sampler seed");
    samp->add_option("--out", sample_a.out, "Output file (default stdout)");

    std::uint64_t gc_seed = 0;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of autodiff on a random MLP");
    gc->add_option("--seed", gc_seed, "Seed");

    int oracle_vocab = 10;
    auto* oracle = app.add_subcommand("oracle", "Analytic KL of the best factorized model on varp2");
    oracle->add_option("--vocab", oracle_vocab, "Vocabulary size")->check(CLI::Range(2, 1 << 20));

    try {
        app.parse(argc, argv);
        if (*run) return run_stages(run_a, run, Stages::all);
        if (*train) return run_stages(train_a, train, Stages::train_only);
        if (*eval) return run_stages(eval_a, eval, Stages::eval_only);
        if (*samp) return do_sample(sample_a);
        if (*gc) return do_gradcheck(gc_seed);
        if (*oracle) return do_oracle(oracle_vocab);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "vmdlab: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
