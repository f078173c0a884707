#include "vmd/eval.hpp"

#include "vmd/optim.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace vmd {

void EmpiricalDist::add(const TokenSeq& s, long n) {
    if (n < 1) {
        throw std::invalid_argument("EmpiricalDist::add: count must be positive");
    }
    counts[s] += n;
    total += n;
}

void EmpiricalDist::merge(const EmpiricalDist& other) {
    for (const auto& [s, n] : other.counts) {
        add(s, n);
    }
}

double EmpiricalDist::freq(const TokenSeq& s) const {
    if (total == 0) {
        return 0.0;
    }
    auto it = counts.find(s);
    return it == counts.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total);
}

EmpiricalDist EmpiricalDist::from(const std::vector<TokenSeq>& samples) {
    EmpiricalDist d;
    for (const auto& s : samples) {
        d.add(s);
    }
    return d;
}

double default_smoothing(long total) {
    if (total < 1) {
        throw std::invalid_argument("default_smoothing: no samples");
    }
    return 1.0 / (10.0 * static_cast<double>(total));
}

namespace {

// Smoothed model probability on the truth support.
std::vector<double> smoothed(const ExactDist& truth, const EmpiricalDist& model, double eps) {
    if (!(eps > 0.0)) {
        throw std::invalid_argument("kl_truth_vs_model: eps must be positive");
    }
    const double norm = 1.0 + eps * static_cast<double>(truth.support.size());
    std::vector<double> m(truth.support.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = (model.freq(truth.support[i]) + eps) / norm;
    }
    return m;
}

}  // namespace

double kl_truth_vs_model(const ExactDist& truth, const EmpiricalDist& model, double eps) {
    const auto m = smoothed(truth, model, eps);
    double kl = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        kl += truth.probs[i] * std::log(truth.probs[i] / m[i]);
    }
    return kl;
}

double nll_truth_vs_model(const ExactDist& truth, const EmpiricalDist& model, double eps) {
    const auto m = smoothed(truth, model, eps);
    double nll = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        nll -= truth.probs[i] * std::log(m[i]);
    }
    return nll;
}

double kl_exact(const ExactDist& truth, const ExactDist& model) {
    double kl = 0.0;
    for (std::size_t i = 0; i < truth.support.size(); ++i) {
        const double q = model.prob(truth.support[i]);
        if (q <= 0.0) {
            return std::numeric_limits<double>::infinity();
        }
        kl += truth.probs[i] * std::log(truth.probs[i] / q);
    }
    return kl;
}

ExactDist product_of_marginals(const ExactDist& p) {
    if (p.support.empty()) {
        throw std::invalid_argument("product_of_marginals: empty support");
    }
    const std::size_t L = p.support.front().size();
    std::vector<std::map<int, double>> marg(L);
    for (std::size_t i = 0; i < p.support.size(); ++i) {
        if (p.support[i].size() != L) {
            throw std::invalid_argument("product_of_marginals: mixed sequence lengths");
        }
        for (std::size_t j = 0; j < L; ++j) {
            marg[j][p.support[i][j]] += p.probs[i];
        }
    }
    ExactDist out;
    out.support.push_back({});
    out.probs.push_back(1.0);
    for (std::size_t j = 0; j < L; ++j) {
        ExactDist next;
        for (std::size_t i = 0; i < out.support.size(); ++i) {
            for (const auto& [v, q] : marg[j]) {
                TokenSeq s = out.support[i];
                s.push_back(v);
                next.support.push_back(std::move(s));
                next.probs.push_back(out.probs[i] * q);
            }
        }
        out = std::move(next);
    }
    return out;
}

double analytic_product_kl(double p, int V) {
    if (!(p >= 0.0 && p <= 1.0) || V < 2) {
        throw std::invalid_argument("analytic_product_kl: need p in [0, 1] and V >= 2");
    }
    auto xlogx = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
    const double alt = (1.0 - p) / (V - 1);
    const double h_cond = -xlogx(p) - (V - 1) * xlogx(alt);
    return std::log(static_cast<double>(V)) - h_cond;
}

double accuracy(const std::vector<TokenSeq>& samples, const std::function<bool(const TokenSeq&)>& valid) {
    if (samples.empty()) {
        throw std::invalid_argument("accuracy: empty sample set");
    }
    long ok = 0;
    for (const auto& s : samples) {
        ok += valid(s) ? 1 : 0;
    }
    return static_cast<double>(ok) / static_cast<double>(samples.size());
}

double Heatmap::row_sum(int a) const {
    double s = 0.0;
    for (int b = 0; b < vocab; ++b) {
        s += at(a, b);
    }
    return s;
}

double Heatmap::max_abs_diff(const Heatmap& other) const {
    if (vocab != other.vocab) {
        throw std::invalid_argument("Heatmap: vocab mismatch");
    }
    double d = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        d = std::max(d, std::abs(cells[i] - other.cells[i]));
    }
    return d;
}

namespace {

void check_pair(const TokenSeq& s, int vocab) {
    if (s.size() != 2) {
        throw std::invalid_argument("joint_heatmap: needs two-token sequences, got length " + std::to_string(s.size()));
    }
    for (int v : s) {
        if (v < 0 || v >= vocab) {
            throw std::invalid_argument("joint_heatmap: token " + std::to_string(v) + " outside the vocabulary");
        }
    }
}

}  // namespace

Heatmap joint_heatmap(const std::vector<TokenSeq>& samples, int vocab) {
    if (samples.empty()) {
        throw std::invalid_argument("joint_heatmap: no samples");
    }
    Heatmap h{vocab, std::vector<double>(static_cast<std::size_t>(vocab) * vocab, 0.0)};
    std::vector<long> counts(h.cells.size(), 0);
    for (const auto& s : samples) {
        check_pair(s, vocab);
        ++counts[static_cast<std::size_t>(s[0]) * vocab + s[1]];
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        h.cells[i] = static_cast<double>(counts[i]) / static_cast<double>(samples.size());
    }
    return h;
}

Heatmap joint_heatmap(const ExactDist& dist, int vocab) {
    Heatmap h{vocab, std::vector<double>(static_cast<std::size_t>(vocab) * vocab, 0.0)};
    for (std::size_t i = 0; i < dist.support.size(); ++i) {
        check_pair(dist.support[i], vocab);
        h.cells[static_cast<std::size_t>(dist.support[i][0]) * vocab + dist.support[i][1]] += dist.probs[i];
    }
    return h;
}

void write_heatmap_csv(std::ostream& out, const Heatmap& h) {
    out.precision(8);
    for (int a = 0; a < h.vocab; ++a) {
        for (int b = 0; b < h.vocab; ++b) {
            out << (b ? "," : "") << h.at(a, b);
        }
        out << '\n';
    }
}

NelboEstimate mc_nelbo(const Backbone<float>& model, const ExactDist& truth, double kl_weight, int z_draws,
                       int t_points, double t_min, Rng& rng, bool kl_inside_weight) {
    const auto& mc = model.config();
    if (!mc.use_latent || mc.num_blocks() != 1) {
        throw std::invalid_argument("mc_nelbo: needs a single-block latent model");
    }
    const int L = mc.seq_len;
    if (L > 12) {
        throw std::invalid_argument("mc_nelbo: mask-pattern enumeration limited to L <= 12");
    }
    if (z_draws < 2 || t_points < 2 || !(t_min > 0.0 && t_min < 1.0)) {
        throw std::invalid_argument("mc_nelbo: need z_draws >= 2, t_points >= 2, t_min in (0, 1)");
    }
    // W[k] = int t^(k-1) (1-t)^(L-k) dt, the 1/t-weighted probability of one
    // pattern with k masks; WK[k] is the KL weight (1/t inside or not).
    const int patterns = 1 << L;
    std::vector<double> grid(static_cast<std::size_t>(t_points));
    for (int i = 0; i < t_points; ++i) {
        grid[i] = t_min + (1.0 - t_min) * i / (t_points - 1);
    }
    auto trapezoid = [&](const std::function<double(double)>& f) {
        double s = 0.0;
        for (int i = 0; i + 1 < t_points; ++i) {
            s += 0.5 * (f(grid[i]) + f(grid[i + 1])) * (grid[i + 1] - grid[i]);
        }
        return s;
    };
    std::vector<double> W(L + 1), WK(L + 1);
    for (int k = 0; k <= L; ++k) {
        W[k] = trapezoid([&](double t) { return std::pow(t, k - 1) * std::pow(1.0 - t, L - k); });
        WK[k] = kl_inside_weight ? W[k] : trapezoid([&](double t) { return std::pow(t, k) * std::pow(1.0 - t, L - k); });
    }

    const int S = static_cast<int>(truth.support.size());
    const int rows = S * patterns;
    std::vector<int> x0(static_cast<std::size_t>(rows) * L), xt(x0.size());
    std::vector<int> nmask(static_cast<std::size_t>(rows));
    for (int s = 0; s < S; ++s) {
        for (int m = 0; m < patterns; ++m) {
            const int row = s * patterns + m;
            int k = 0;
            for (int p = 0; p < L; ++p) {
                x0[static_cast<std::size_t>(row) * L + p] = truth.support[s][p];
                const bool masked = (m >> p) & 1;
                xt[static_cast<std::size_t>(row) * L + p] = masked ? mc.mask_id() : truth.support[s][p];
                k += masked;
            }
            nmask[row] = k;
        }
    }

    ad::NoGradGuard no_grad;
    const auto post = model.encode(xt, x0, rows);
    const auto kl_rows = gaussian_kl_rows(post.mu, post.log_sigma);
    double kl_part = 0.0;
    for (int row = 0; row < rows; ++row) {
        kl_part += truth.probs[row / patterns] * WK[nmask[row]] * kl_rows.data()[row];
    }
    kl_part *= kl_weight;

    const int V = mc.vocab_size;
    std::vector<double> draws(static_cast<std::size_t>(z_draws));
    for (int j = 0; j < z_draws; ++j) {
        const auto z = reparameterize(post.mu, post.log_sigma, rng).z;
        const auto logits = model.decode(xt, x0, z, rows);
        double ce = 0.0;
        for (int row = 0; row < rows; ++row) {
            double row_ce = 0.0;
            for (int p = 0; p < L; ++p) {
                const std::size_t i = static_cast<std::size_t>(row) * L + p;
                if (xt[i] != mc.mask_id()) {
                    continue;
                }
                const float* l = logits.data().data() + i * V;
                double mx = l[0];
                for (int v = 1; v < V; ++v) mx = std::max(mx, double(l[v]));
                double z_sum = 0.0;
                for (int v = 0; v < V; ++v) z_sum += std::exp(double(l[v]) - mx);
                row_ce += mx + std::log(z_sum) - double(l[x0[i]]);
            }
            ce += truth.probs[row / patterns] * W[nmask[row]] * row_ce;
        }
        draws[j] = ce;
    }
    double mean = 0.0;
    for (double d : draws) mean += d;
    mean /= z_draws;
    double var = 0.0;
    for (double d : draws) var += (d - mean) * (d - mean);
    var /= (z_draws - 1);

    NelboEstimate out;
    out.ce = mean;
    out.kl = kl_part;
    out.nelbo = mean + kl_part;
    out.std_error = std::sqrt(var / z_draws);
    return out;
}

}  // namespace vmd
