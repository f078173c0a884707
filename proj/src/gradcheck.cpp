#include "vmd/gradcheck.hpp"

#include "vmd/rng.hpp"

#include <algorithm>
#include <cmath>

namespace vmd {

GradcheckResult gradcheck(std::vector<ad::Var<double>>& params,
                          const std::function<ad::Var<double>()>& loss_fn, double h) {
    for (auto& p : params) {
        p.zero_grad();
    }
    {
        auto loss = loss_fn();
        ad::backward(loss);
    }
    GradcheckResult result;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        const std::vector<double> analytic = p.grad();
        double max_diff = 0.0;
        double max_a = 0.0;
        double max_n = 0.0;
        ad::NoGradGuard guard;
        for (std::size_t i = 0; i < p.size(); ++i) {
            double& slot = p.mutable_value().data[i];
            const double orig = slot;
            slot = orig + h;
            const double up = loss_fn().item();
            slot = orig - h;
            const double down = loss_fn().item();
            slot = orig;
            const double numeric = (up - down) / (2.0 * h);
            max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
            max_a = std::max(max_a, std::abs(analytic[i]));
            max_n = std::max(max_n, std::abs(numeric));
            ++result.checked;
        }
        const double denom = std::max({max_a, max_n, 1e-12});
        const double rel = max_diff / denom;
        if (rel >= result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst = "param[" + std::to_string(k) + "]";
        }
    }
    return result;
}

GradcheckResult mlp_gradcheck(std::uint64_t seed) {
    Rng rng = Rng::derive(seed, Stream::init, hash_tag("gradcheck"));
    auto randn = [&](ad::Shape shape, double s) {
        ad::Array<double> a(shape);
        for (auto& v : a.data) {
            v = s * rng.normal();
        }
        return a;
    };
    const int n = 4, din = 6, hidden = 8, classes = 5;
    auto x = ad::constant(randn({n, din}, 1.0));
    std::vector<ad::Var<double>> params = {
        ad::parameter(randn({din, hidden}, 0.5)), ad::parameter(randn({hidden}, 0.1)),
        ad::parameter(randn({hidden, classes}, 0.5)), ad::parameter(randn({classes}, 0.1))};
    std::vector<int> targets(n);
    for (auto& t : targets) {
        t = rng.uniform_int(classes);
    }
    const std::vector<double> weights(n, 1.0 / n);
    auto loss_fn = [&]() {
        auto h1 = ad::gelu(ad::broadcast_add(ad::matmul(x, params[0]), params[1]));
        auto logits = ad::broadcast_add(ad::matmul(h1, params[2]), params[3]);
        return ad::cross_entropy<double>(logits, targets, weights);
    };
    return gradcheck(params, loss_fn, 1e-3);
}

}  // namespace vmd
