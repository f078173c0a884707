#pragma once

#include "vmd/backbone.hpp"
#include "vmd/datasets.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace vmd {

struct DiffusionState {
    TokenSeq x_t;
    std::vector<double> t;     // one per block
    std::vector<int> masked;   // ascending positions
};

// Each maskable position independently becomes MASK with its block's t.
// maskable empty = every position.
DiffusionState mask_sequence(const TokenSeq& x_0, std::span<const double> t, int block_len, int mask_id, Rng& rng,
                             std::span<const int> maskable = {});

struct LossConfig {
    double t_min = 1e-3;
    double kl_weight = 1.0;
    bool kl_inside_weight = true;  // 1/t multiplies the KL term too
    std::vector<int> maskable;     // empty = all positions
    std::optional<double> fixed_t; // evaluation on a t grid: no t draws
};

template <class T>
struct LossTerms {
    ad::Var<T> objective;  // per-token normalized, what the optimizer sees
    // Per-sequence batch means in nats; ce and kl carry the 1/t weight.
    double ce = 0.0;
    double kl = 0.0;
    double loss = 0.0;  // ce + kl_weight * kl
};

// x_0 holds batch*L tokens. Per example the mask stream is consumed as: t draws
// (one per block), then mask bits in position order; eps_rng supplies z noise.
template <class T>
LossTerms<T> mdm_loss(const Backbone<T>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                      Rng& mask_rng);
template <class T>
LossTerms<T> vmd_loss(const Backbone<T>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                      Rng& mask_rng, Rng& eps_rng);
template <class T>
LossTerms<T> block_vmd_loss(const Backbone<T>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                            Rng& mask_rng, Rng& eps_rng);

// Per example and block, the two loss contributions with the same 1/t weights
// and RNG consumption as block_vmd_loss; index e*B + b. No graph is recorded.
struct BlockTerms {
    int blocks = 1;
    std::vector<double> ce;
    std::vector<double> kl;
};
BlockTerms block_loss_terms(const Backbone<float>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                            Rng& mask_rng, Rng& eps_rng);

struct TrainConfig {
    int batch_size = 1024;
    int num_steps = 8000;
    double lr = 1e-3;
    double t_min = 1e-3;
    bool kl_inside_weight = true;
    int log_every = 50;
    // beta ramps linearly from 0 over this many steps (0 = constant beta)
    int kl_warmup_steps = 0;
    int checkpoint_every = 0;  // 0 = only at the end (caller's job)
};

struct TrainRecord {
    long step = 0;
    double ce = 0.0;
    double kl = 0.0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

// Picks mdm_loss (no latent), vmd_loss (one block) or block_vmd_loss.
template <class T>
LossTerms<T> model_loss(const Backbone<T>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                        Rng& mask_rng, Rng& eps_rng);

// Streams derive from seed: data, mask, epsilon. Records are window means.
std::vector<TrainRecord> train(Backbone<float>& model, const Dataset& data, const TrainConfig& cfg, std::uint64_t seed,
                               const std::function<void(const TrainRecord&)>& on_log = {},
                               const std::function<void(long)>& on_checkpoint = {});

}  // namespace vmd
