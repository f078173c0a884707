#pragma once

#include "vmd/backbone.hpp"
#include "vmd/datasets.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <vector>

namespace vmd {

struct EmpiricalDist {
    std::map<TokenSeq, long> counts;
    long total = 0;

    void add(const TokenSeq& s, long n = 1);
    void merge(const EmpiricalDist& other);
    double freq(const TokenSeq& s) const;
    static EmpiricalDist from(const std::vector<TokenSeq>& samples);
};

// 1 / (10 * total)
double default_smoothing(long total);

// sum_s truth(s) ln(truth(s) / m(s)), m = empirical + eps on the truth support, renormalized.
double kl_truth_vs_model(const ExactDist& truth, const EmpiricalDist& model, double eps);
// Same smoothing, cross-entropy form: -sum_s truth(s) ln m(s).
double nll_truth_vs_model(const ExactDist& truth, const EmpiricalDist& model, double eps);
// Unsmoothed KL between two exact tables; infinity if the model misses support.
double kl_exact(const ExactDist& truth, const ExactDist& model);

// Independent product of the per-position marginals of p.
ExactDist product_of_marginals(const ExactDist& p);

// KL(varp2(p, V) || product of its marginals) = ln V - H(x2 | x1).
double analytic_product_kl(double p, int V);

double accuracy(const std::vector<TokenSeq>& samples, const std::function<bool(const TokenSeq&)>& valid);

// V x V pair frequencies, first token = row.
struct Heatmap {
    int vocab = 0;
    std::vector<double> cells;

    double at(int a, int b) const { return cells[static_cast<std::size_t>(a) * vocab + b]; }
    double row_sum(int a) const;
    double max_abs_diff(const Heatmap& other) const;
};

Heatmap joint_heatmap(const std::vector<TokenSeq>& samples, int vocab);
Heatmap joint_heatmap(const ExactDist& dist, int vocab);
void write_heatmap_csv(std::ostream& out, const Heatmap& h);

// Monte-Carlo NELBO of a single-block latent model averaged over truth:
// sum over all 2^L mask patterns with t integrated by the trapezoid rule on a
// t_points grid over [t_min, 1], z drawn z_draws times from the posterior.
struct NelboEstimate {
    double nelbo = 0.0;
    double std_error = 0.0;
    double ce = 0.0;  // cross-entropy part
    double kl = 0.0;  // weighted KL part
};

NelboEstimate mc_nelbo(const Backbone<float>& model, const ExactDist& truth, double kl_weight, int z_draws,
                       int t_points, double t_min, Rng& rng, bool kl_inside_weight = true);

}  // namespace vmd
