#pragma once

#include "vmd/autodiff.hpp"
#include "vmd/optim.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace vmd {

struct BackboneConfig {
    int vocab_size = 10;  // MASK id = vocab_size
    int seq_len = 2;
    int block_len = 2;
    int hidden_dim = 64;
    int decoder_layers = 8;
    int encoder_layers = 2;
    int num_heads = 4;
    int latent_dim = 32;
    int mlp_ratio = 4;
    double kl_weight = 1.0;
    // false = latent-free baseline decoder (no encoder, no KL)
    bool use_latent = true;
    // latent added to the embeddings of its block through a learnable scale
    bool latent_embed = true;
    // latent drives adaptive layer-norm shift/scale/gate
    bool latent_adaln = true;
    // one latent->modulation projection for all decoder layers
    bool shared_adaln = true;
    // positions left out of the encoder's pooling (both streams)
    std::vector<int> pool_exclude;

    int num_blocks() const { return seq_len / block_len; }
    int mask_id() const { return vocab_size; }
    int block_of(int pos) const { return pos / block_len; }
    void validate() const;
};

// Masks over the concatenated [x_t ; x_0] rows (2L x 2L, row-major, 1 = attend).
struct AttentionMasks {
    int size = 0;
    std::vector<std::uint8_t> encoder;
    std::vector<std::uint8_t> decoder;
};

AttentionMasks build_attention_masks(const BackboneConfig& cfg);

template <class T>
class Backbone {
public:
    Backbone(const BackboneConfig& cfg, std::uint64_t seed);

    struct Posterior {
        ad::Var<T> mu;         // [batch*B, latent_dim]
        ad::Var<T> log_sigma;  // [batch*B, latent_dim]
    };

    // x_t, x_0: batch*L token ids. x_0 must not contain MASK.
    Posterior encode(std::span<const int> x_t, std::span<const int> x_0, int batch) const;

    // Logits [batch*L, vocab_size] for the x_t rows. Positions of x_0 in blocks
    // not yet generated may hold MASK; the block mask keeps them invisible.
    // z: [batch*B, latent_dim] for latent models, ignored (may be empty) otherwise.
    ad::Var<T> decode(std::span<const int> x_t, std::span<const int> x_0, const ad::Var<T>& z, int batch) const;

    const BackboneConfig& config() const { return cfg_; }
    const AttentionMasks& masks() const { return masks_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

private:
    struct Linear {
        ad::Var<T> w, b;
    };
    struct EncLayer {
        ad::Var<T> ln1_g, ln1_b, ln2_g, ln2_b;
        Linear qkv, out, fc1, fc2;
    };
    struct DecLayer {
        ad::Var<T> ada_b;
        ad::Var<T> ada_w;  // per-layer latent projection when not shared
        Linear qkv, out, fc1, fc2;
    };

    Linear make_linear(const std::string& name, int in, int out, Rng& rng);
    ad::Var<T> embed(const ad::Var<T>& tok, const ad::Var<T>& pos, const ad::Var<T>& stream,
                     std::span<const int> x_t, std::span<const int> x_0, int batch, int rows) const;
    ad::Var<T> attend(const ad::Var<T>& x, const Linear& qkv, const Linear& out, int batch, int rows,
                      const std::vector<std::uint8_t>& mask) const;

    BackboneConfig cfg_;
    AttentionMasks masks_;
    std::vector<std::uint8_t> full_mask_;  // L x L, B = 1 decoder shortcut
    std::vector<std::uint8_t> pool_groups_;
    ParamStore<T> params_;

    ad::Var<T> enc_tok_, enc_pos_, enc_stream_, enc_lnf_g_, enc_lnf_b_;
    std::vector<EncLayer> enc_layers_;
    Linear enc_gate_, enc_mu_, enc_ls_;

    ad::Var<T> dec_tok_, dec_pos_, dec_stream_, dec_final_b_;
    std::vector<DecLayer> dec_layers_;
    Linear dec_out_;
    Linear lat_proj_;
    ad::Var<T> lat_scale_, lat_ada_w_, lat_final_w_;
};

}  // namespace vmd
