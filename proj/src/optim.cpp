#include "vmd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vmd {

template <class T>
ad::Var<T>& ParamStore<T>::add(const std::string& name, ad::Array<T> value) {
    if (index_.count(name)) {
        throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    }
    index_[name] = vars_.size();
    names_.push_back(name);
    vars_.push_back(ad::parameter(std::move(value)));
    return vars_.back();
}

template <class T>
const ad::Var<T>& ParamStore<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("ParamStore: no parameter " + name);
    }
    return vars_[it->second];
}

template <class T>
std::size_t ParamStore<T>::numel() const {
    return numel_excluding({});
}

template <class T>
std::size_t ParamStore<T>::numel_excluding(const std::vector<std::string>& prefixes) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < vars_.size(); ++i) {
        bool skip = false;
        for (const auto& p : prefixes) {
            skip = skip || names_[i].rfind(p, 0) == 0;
        }
        if (!skip) {
            n += vars_[i].size();
        }
    }
    return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
    for (auto& v : vars_) {
        v.zero_grad();
    }
}

template <class T>
void Adam<T>::init(const ParamStore<T>& params) {
    m_.clear();
    v_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_.emplace_back(params.var(i).size(), T(0));
        v_.emplace_back(params.var(i).size(), T(0));
    }
    step_ = 0;
}

template <class T>
void Adam<T>::step(ParamStore<T>& params) {
    if (m_.size() != params.size()) {
        throw std::logic_error("Adam: moments missing for " + std::to_string(params.size()) +
                               " parameters (call init first)");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& var = params.var(k);
        auto& g = var.grad_storage();
        auto& m = m_[k];
        auto& v = v_[k];
        if (m.size() != var.size()) {
            throw std::logic_error("Adam: moment shape mismatch for " + params.name(k));
        }
        if (g.empty()) {
            // Untouched by backward: gradient is zero, moments still decay.
            g.assign(var.size(), T(0));
        }
        auto& w = var.mutable_value().data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w[i] = static_cast<T>(w[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
        std::fill(g.begin(), g.end(), T(0));
    }
}

template <class T>
Reparam<T> reparameterize(const ad::Var<T>& mu, const ad::Var<T>& log_sigma, Rng& rng) {
    if (mu.shape() != log_sigma.shape()) {
        throw std::invalid_argument("reparameterize: shape mismatch " + ad::shape_str(mu.shape()) + " vs " +
                                    ad::shape_str(log_sigma.shape()));
    }
    Reparam<T> r;
    r.eps.resize(mu.size());
    for (auto& e : r.eps) {
        e = static_cast<T>(rng.normal());
    }
    auto sigma = ad::exp(ad::clamp(log_sigma, T(kLogSigmaMin), T(kLogSigmaMax)));
    auto noise = ad::constant(ad::Array<T>(mu.shape(), r.eps));
    r.z = ad::add(mu, ad::mul(sigma, noise));
    return r;
}

template <class T>
ad::Var<T> gaussian_kl_rows(const ad::Var<T>& mu, const ad::Var<T>& log_sigma) {
    if (mu.shape() != log_sigma.shape()) {
        throw std::invalid_argument("gaussian_kl: shape mismatch " + ad::shape_str(mu.shape()) + " vs " +
                                    ad::shape_str(log_sigma.shape()));
    }
    auto ls = ad::clamp(log_sigma, T(kLogSigmaMin), T(kLogSigmaMax));
    auto var = ad::exp(ad::scale(ls, T(2)));
    auto inner = ad::add_scalar(ad::sub(ad::add(ad::mul(mu, mu), var), ad::scale(ls, T(2))), T(-1));
    return ad::scale(ad::sum_cols(inner), T(0.5));
}

template <class T>
ad::Var<T> gaussian_kl(const ad::Var<T>& mu, const ad::Var<T>& log_sigma) {
    return ad::sum(gaussian_kl_rows(mu, log_sigma));
}

#define VMD_OPTIM_INSTANTIATE(T)                                                          \
    template class ParamStore<T>;                                                         \
    template class Adam<T>;                                                               \
    template Reparam<T> reparameterize<T>(const ad::Var<T>&, const ad::Var<T>&, Rng&);    \
    template ad::Var<T> gaussian_kl_rows<T>(const ad::Var<T>&, const ad::Var<T>&);        \
    template ad::Var<T> gaussian_kl<T>(const ad::Var<T>&, const ad::Var<T>&);

VMD_OPTIM_INSTANTIATE(float)
VMD_OPTIM_INSTANTIATE(double)

}  // namespace vmd
