#pragma once

#include "vmd/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace vmd {

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // index of the worst tensor, as "param[k]"
    std::size_t checked = 0;
};

// Central differences against backward() for every entry of every parameter.
// Per-tensor error is max|a - n| / max(max|a|, max|n|); the result keeps the max.
GradcheckResult gradcheck(std::vector<ad::Var<double>>& params,
                          const std::function<ad::Var<double>()>& loss_fn, double h = 1e-3);

// Random two-layer MLP with a cross-entropy head, checked in double.
GradcheckResult mlp_gradcheck(std::uint64_t seed);

}  // namespace vmd
