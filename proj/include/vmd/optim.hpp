#pragma once

#include "vmd/autodiff.hpp"
#include "vmd/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace vmd {

// Named parameters in insertion order. Names are unique.
template <class T>
class ParamStore {
public:
    ad::Var<T>& add(const std::string& name, ad::Array<T> value);
    const ad::Var<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return vars_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    ad::Var<T>& var(std::size_t i) { return vars_[i]; }
    const ad::Var<T>& var(std::size_t i) const { return vars_[i]; }

    std::size_t numel() const;
    // Parameters whose name starts with none of the prefixes.
    std::size_t numel_excluding(const std::vector<std::string>& prefixes) const;
    void zero_grad();

private:
    std::vector<std::string> names_;
    std::vector<ad::Var<T>> vars_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Allocates zeroed moments matching the store's shapes.
    void init(const ParamStore<T>& params);
    // One bias-corrected update from the current grads, then zeroes them.
    void step(ParamStore<T>& params);

    long steps() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long step_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

inline constexpr double kLogSigmaMin = -10.0;
inline constexpr double kLogSigmaMax = 10.0;

template <class T>
struct Reparam {
    ad::Var<T> z;
    std::vector<T> eps;
};

// z = mu + exp(clamp(log_sigma)) * eps, eps ~ N(0, I) drawn row-major from rng.
template <class T>
Reparam<T> reparameterize(const ad::Var<T>& mu, const ad::Var<T>& log_sigma, Rng& rng);

// KL(N(mu, sigma^2) || N(0, I)) per row: [R, 1].
template <class T>
ad::Var<T> gaussian_kl_rows(const ad::Var<T>& mu, const ad::Var<T>& log_sigma);
// Total over all entries.
template <class T>
ad::Var<T> gaussian_kl(const ad::Var<T>& mu, const ad::Var<T>& log_sigma);

}  // namespace vmd
