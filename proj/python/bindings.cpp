// Python surface: JSON crosses the boundary as strings, token sequences as lists.
#include "vmd/checkpoint.hpp"
#include "vmd/config.hpp"
#include "vmd/eval.hpp"
#include "vmd/experiments.hpp"
#include "vmd/gradcheck.hpp"

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace vmd;

namespace {

DatasetSpec dataset_spec(const std::string& kind, double p) {
    const auto k = parse_dataset_kind(kind);
    if (!k) {
        throw py::value_error("unknown dataset '" + kind + "'");
    }
    DatasetSpec s;
    s.kind = *k;
    s.p = p;
    return s;
}

}  // namespace

PYBIND11_MODULE(_vmdlab, m) {
    m.doc() = "Masked diffusion / variational masked diffusion laboratory";
    m.attr("__version__") = "0.1.0";

    m.def("preset_names", &preset_names);
    m.def(
        "preset_json", [](const std::string& name, std::uint64_t seed) { return to_json(make_preset(name, seed)).dump(); },
        py::arg("name"), py::arg("seed") = 0);
    m.def(
        "validate_config", [](const std::string& text) { return to_json(experiment_from_json(json::parse(text))).dump(); },
        py::arg("config_json"));

    m.def(
        "run_experiment",
        [](const std::string& config_json, const std::string& out_dir, const std::string& stages,
           std::function<void(const std::string&)> log) {
            const auto cfg = experiment_from_json(json::parse(config_json));
            Stages st = Stages::all;
            if (stages == "train") {
                st = Stages::train_only;
            } else if (stages == "eval") {
                st = Stages::eval_only;
            } else if (stages != "all") {
                throw py::value_error("stages must be all, train or eval");
            }
            ExperimentOutput out;
            {
                py::gil_scoped_release release;
                Logger logger;
                if (log) {
                    logger = [&](const std::string& s) {
                        py::gil_scoped_acquire acquire;
                        log(s);
                    };
                }
                out = run_experiment(cfg, out_dir, logger, st);
            }
            json results = json::array();
            for (const auto& r : out.results) results.push_back(r.to_json());
            return json{{"manifest", out.manifest}, {"results", results}, {"table", out.table}}.dump();
        },
        py::arg("config_json"), py::arg("out_dir"), py::arg("stages") = "all", py::arg("log") = nullptr);

    m.def(
        "sample",
        [](const std::string& ckpt, int nfe, const std::string& strategy, bool categorical, int n, std::uint64_t seed) {
            const auto model = load_model(ckpt);
            const int B = model.config().num_blocks();
            if (nfe <= 0) nfe = model.config().seq_len;
            if (nfe % B != 0) {
                throw py::value_error("nfe must be a multiple of the block count " + std::to_string(B));
            }
            SampleConfig sc;
            sc.nfe = nfe / B;
            sc.strategy = parse_strategy(strategy);
            sc.categorical = categorical;
            sc.num_samples = n;
            sc.seed = seed;
            py::gil_scoped_release release;
            return sample(model, sc);
        },
        py::arg("ckpt"), py::arg("nfe") = 0, py::arg("strategy") = "top_prob", py::arg("categorical") = false,
        py::arg("n") = 10, py::arg("seed") = 0);

    m.def("read_checkpoint_manifest", [](const std::string& path) { return read_manifest(path).dump(); });

    m.def(
        "exact_distribution",
        [](const std::string& kind, double p) {
            const auto d = exact_distribution(dataset_spec(kind, p));
            if (!d) throw py::value_error("dataset '" + kind + "' has no enumerable distribution");
            std::vector<std::pair<TokenSeq, double>> out;
            for (std::size_t i = 0; i < d->support.size(); ++i) out.emplace_back(d->support[i], d->probs[i]);
            return out;
        },
        py::arg("kind"), py::arg("p") = 1.0);

    m.def(
        "kl_to_truth",
        [](const std::string& kind, const std::vector<TokenSeq>& samples, double p) {
            const auto d = exact_distribution(dataset_spec(kind, p));
            if (!d) throw py::value_error("dataset '" + kind + "' has no enumerable distribution");
            const auto emp = EmpiricalDist::from(samples);
            return kl_truth_vs_model(*d, emp, default_smoothing(emp.total));
        },
        py::arg("kind"), py::arg("samples"), py::arg("p") = 1.0);

    m.def(
        "accuracy",
        [](const std::string& kind, const std::vector<TokenSeq>& samples, double p) {
            const Dataset d(dataset_spec(kind, p));
            return vmd::accuracy(samples, [&](const TokenSeq& s) { return d.valid(s); });
        },
        py::arg("kind"), py::arg("samples"), py::arg("p") = 1.0);

    m.def("analytic_product_kl", &analytic_product_kl, py::arg("p"), py::arg("vocab") = 10);
    m.def(
        "gradcheck", [](std::uint64_t seed) { return mlp_gradcheck(seed).max_rel_error; }, py::arg("seed") = 1);
}
