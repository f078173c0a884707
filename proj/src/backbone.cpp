#include "vmd/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace vmd {

void BackboneConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) {
            throw std::invalid_argument("backbone config: " + what);
        }
    };
    need(vocab_size >= 2, "vocab_size must be >= 2");
    need(seq_len >= 1, "seq_len must be positive");
    need(block_len >= 1 && seq_len % block_len == 0, "block_len must divide seq_len");
    need(hidden_dim >= 1 && num_heads >= 1 && hidden_dim % num_heads == 0,
         "hidden_dim must be divisible by num_heads");
    need(decoder_layers >= 1, "decoder_layers must be positive");
    need(encoder_layers >= 1, "encoder_layers must be positive");
    need(latent_dim >= 1, "latent_dim must be positive");
    need(mlp_ratio >= 1, "mlp_ratio must be positive");
    need(kl_weight >= 0.0, "kl_weight must be nonnegative");
    for (int p : pool_exclude) {
        need(p >= 0 && p < seq_len, "pool_exclude position " + std::to_string(p) + " out of range");
    }
    for (int b = 0; b < num_blocks(); ++b) {
        bool any = false;
        for (int p = b * block_len; p < (b + 1) * block_len; ++p) {
            any = any || std::find(pool_exclude.begin(), pool_exclude.end(), p) == pool_exclude.end();
        }
        for (int p = 0; p < (b + 1) * block_len; ++p) {
            any = any || std::find(pool_exclude.begin(), pool_exclude.end(), p) == pool_exclude.end();
        }
        need(any, "pool_exclude removes every position of block " + std::to_string(b));
    }
}

AttentionMasks build_attention_masks(const BackboneConfig& cfg) {
    cfg.validate();
    const int L = cfg.seq_len;
    AttentionMasks m;
    m.size = 2 * L;
    m.encoder.assign(static_cast<std::size_t>(4) * L * L, 0);
    m.decoder.assign(static_cast<std::size_t>(4) * L * L, 0);
    auto at = [&](std::vector<std::uint8_t>& mask, int i, int j) -> std::uint8_t& {
        return mask[static_cast<std::size_t>(i) * 2 * L + j];
    };
    for (int i = 0; i < L; ++i) {
        const int bi = cfg.block_of(i);
        for (int j = 0; j < L; ++j) {
            const int bj = cfg.block_of(j);
            // x_t rows
            at(m.encoder, i, j) = bj == bi;
            at(m.encoder, i, L + j) = bj <= bi;
            at(m.decoder, i, j) = bj == bi;
            at(m.decoder, i, L + j) = bj < bi;
            // x_0 rows only see the clean prefix up to their own block
            at(m.encoder, L + i, L + j) = bj <= bi;
            at(m.decoder, L + i, L + j) = bj <= bi;
        }
    }
    return m;
}

namespace {

template <class T>
ad::Array<T> trunc_normal(Rng& rng, ad::Shape shape, double std) {
    ad::Array<T> a(std::move(shape));
    for (auto& v : a.data) {
        double x;
        do {
            x = rng.normal();
        } while (std::abs(x) > 2.0);
        v = static_cast<T>(x * std);
    }
    return a;
}

constexpr double kInitStd = 0.02;

}  // namespace

template <class T>
typename Backbone<T>::Linear Backbone<T>::make_linear(const std::string& name, int in, int out, Rng& rng) {
    Linear l;
    l.w = params_.add(name + ".w", trunc_normal<T>(rng, {in, out}, kInitStd));
    l.b = params_.add(name + ".b", ad::Array<T>({out}, T(0)));
    return l;
}

template <class T>
Backbone<T>::Backbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg), masks_(build_attention_masks(cfg)) {
    const int L = cfg_.seq_len;
    const int D = cfg_.hidden_dim;
    const int V = cfg_.vocab_size;
    const int B = cfg_.num_blocks();
    const int H = D * cfg_.mlp_ratio;
    full_mask_.assign(static_cast<std::size_t>(L) * L, 1);

    pool_groups_.assign(static_cast<std::size_t>(B) * 2 * L, 0);
    for (int b = 0; b < B; ++b) {
        for (int p = 0; p < L; ++p) {
            if (std::find(cfg_.pool_exclude.begin(), cfg_.pool_exclude.end(), p) != cfg_.pool_exclude.end()) {
                continue;
            }
            const int bp = cfg_.block_of(p);
            pool_groups_[static_cast<std::size_t>(b) * 2 * L + p] = bp == b;
            pool_groups_[static_cast<std::size_t>(b) * 2 * L + L + p] = bp <= b;
        }
    }

    Rng rng = Rng::derive(seed, Stream::init);
    auto ones = [](int n) { return ad::Array<T>({n}, T(1)); };
    auto zeros = [](int n) { return ad::Array<T>({n}, T(0)); };

    if (cfg_.use_latent) {
        enc_tok_ = params_.add("enc.tok", trunc_normal<T>(rng, {V + 1, D}, kInitStd));
        enc_pos_ = params_.add("enc.pos", trunc_normal<T>(rng, {L, D}, kInitStd));
        enc_stream_ = params_.add("enc.stream", trunc_normal<T>(rng, {2, D}, kInitStd));
        for (int l = 0; l < cfg_.encoder_layers; ++l) {
            const std::string p = "enc.l" + std::to_string(l);
            EncLayer layer;
            layer.ln1_g = params_.add(p + ".ln1.g", ones(D));
            layer.ln1_b = params_.add(p + ".ln1.b", zeros(D));
            layer.qkv = make_linear(p + ".attn.qkv", D, 3 * D, rng);
            layer.out = make_linear(p + ".attn.out", D, D, rng);
            layer.ln2_g = params_.add(p + ".ln2.g", ones(D));
            layer.ln2_b = params_.add(p + ".ln2.b", zeros(D));
            layer.fc1 = make_linear(p + ".mlp.fc1", D, H, rng);
            layer.fc2 = make_linear(p + ".mlp.fc2", H, D, rng);
            enc_layers_.push_back(layer);
        }
        enc_lnf_g_ = params_.add("enc.ln_f.g", ones(D));
        enc_lnf_b_ = params_.add("enc.ln_f.b", zeros(D));
        enc_gate_ = make_linear("enc.gate", D, 1, rng);
        enc_mu_ = make_linear("enc.mu", D, cfg_.latent_dim, rng);
        enc_ls_ = make_linear("enc.logsigma", D, cfg_.latent_dim, rng);
    }

    dec_tok_ = params_.add("dec.tok", trunc_normal<T>(rng, {V + 1, D}, kInitStd));
    dec_pos_ = params_.add("dec.pos", trunc_normal<T>(rng, {L, D}, kInitStd));
    dec_stream_ = params_.add("dec.stream", trunc_normal<T>(rng, {2, D}, kInitStd));
    for (int l = 0; l < cfg_.decoder_layers; ++l) {
        const std::string p = "dec.l" + std::to_string(l);
        DecLayer layer;
        layer.ada_b = params_.add(p + ".ada.b", zeros(6 * D));
        layer.qkv = make_linear(p + ".attn.qkv", D, 3 * D, rng);
        layer.out = make_linear(p + ".attn.out", D, D, rng);
        layer.fc1 = make_linear(p + ".mlp.fc1", D, H, rng);
        layer.fc2 = make_linear(p + ".mlp.fc2", H, D, rng);
        if (cfg_.use_latent && cfg_.latent_adaln && !cfg_.shared_adaln) {
            layer.ada_w = params_.add("dec.latent.l" + std::to_string(l) + ".ada.w",
                                      trunc_normal<T>(rng, {D, 6 * D}, kInitStd));
        }
        dec_layers_.push_back(layer);
    }
    dec_final_b_ = params_.add("dec.final.ada.b", zeros(2 * D));
    dec_out_ = make_linear("dec.out", D, V, rng);

    if (cfg_.use_latent) {
        lat_proj_ = make_linear("dec.latent.proj", cfg_.latent_dim, D, rng);
        if (cfg_.latent_embed) {
            lat_scale_ = params_.add("dec.latent.scale", ad::Array<T>({1}, T(0.1)));
        }
        if (cfg_.latent_adaln) {
            if (cfg_.shared_adaln) {
                lat_ada_w_ = params_.add("dec.latent.ada.w", trunc_normal<T>(rng, {D, 6 * D}, kInitStd));
            }
            lat_final_w_ = params_.add("dec.latent.final.ada.w", trunc_normal<T>(rng, {D, 2 * D}, kInitStd));
        }
    }
}

template <class T>
ad::Var<T> Backbone<T>::embed(const ad::Var<T>& tok, const ad::Var<T>& pos, const ad::Var<T>& stream,
                              std::span<const int> x_t, std::span<const int> x_0, int batch, int rows) const {
    const int L = cfg_.seq_len;
    const int D = cfg_.hidden_dim;
    std::vector<int> ids(static_cast<std::size_t>(batch) * rows);
    for (int e = 0; e < batch; ++e) {
        for (int p = 0; p < L; ++p) {
            ids[static_cast<std::size_t>(e) * rows + p] = x_t[static_cast<std::size_t>(e) * L + p];
            if (rows == 2 * L) {
                ids[static_cast<std::size_t>(e) * rows + L + p] = x_0[static_cast<std::size_t>(e) * L + p];
            }
        }
    }
    std::vector<int> pos_idx(rows), stream_idx(rows);
    for (int j = 0; j < rows; ++j) {
        pos_idx[j] = j % L;
        stream_idx[j] = j / L;
    }
    auto ps = ad::add(ad::gather_rows<T>(pos, pos_idx), ad::gather_rows<T>(stream, stream_idx));
    auto h = ad::reshape(ad::gather_rows<T>(tok, ids), {batch, rows, D});
    return ad::reshape(ad::broadcast_add(h, ps), {batch * rows, D});
}

template <class T>
ad::Var<T> Backbone<T>::attend(const ad::Var<T>& x, const Linear& qkv, const Linear& out, int batch, int rows,
                               const std::vector<std::uint8_t>& mask) const {
    auto packed = ad::linear(x, qkv.w, qkv.b);
    auto a = ad::attention<T>(packed, batch, rows, cfg_.num_heads, mask);
    return ad::linear(a, out.w, out.b);
}

template <class T>
typename Backbone<T>::Posterior Backbone<T>::encode(std::span<const int> x_t, std::span<const int> x_0,
                                                    int batch) const {
    if (!cfg_.use_latent) {
        throw std::logic_error("encode: latent-free model has no encoder");
    }
    const std::size_t n = static_cast<std::size_t>(batch) * cfg_.seq_len;
    if (x_t.size() != n || x_0.size() != n) {
        throw std::invalid_argument("encode: expected " + std::to_string(n) + " tokens per input");
    }
    for (int v : x_0) {
        if (v < 0 || v >= cfg_.vocab_size) {
            throw std::invalid_argument("encode: x_0 contains MASK or an out-of-vocabulary id " + std::to_string(v));
        }
    }
    const int R = 2 * cfg_.seq_len;
    auto h = embed(enc_tok_, enc_pos_, enc_stream_, x_t, x_0, batch, R);
    for (const auto& layer : enc_layers_) {
        auto a = attend(ad::layer_norm(h, layer.ln1_g, layer.ln1_b, T(1e-5)), layer.qkv, layer.out, batch, R,
                        masks_.encoder);
        h = ad::add(h, a);
        auto x = ad::layer_norm(h, layer.ln2_g, layer.ln2_b, T(1e-5));
        auto m = ad::linear(ad::gelu(ad::linear(x, layer.fc1.w, layer.fc1.b)), layer.fc2.w, layer.fc2.b);
        h = ad::add(h, m);
    }
    h = ad::layer_norm(h, enc_lnf_g_, enc_lnf_b_, T(1e-5));
    auto scores = ad::linear(h, enc_gate_.w, enc_gate_.b);
    auto pooled =
        ad::masked_softmax_pool<T>(h, scores, batch, R, cfg_.num_blocks(), pool_groups_, std::span<const std::uint8_t>{});
    return Posterior{ad::linear(pooled, enc_mu_.w, enc_mu_.b), ad::linear(pooled, enc_ls_.w, enc_ls_.b)};
}

template <class T>
ad::Var<T> Backbone<T>::decode(std::span<const int> x_t, std::span<const int> x_0, const ad::Var<T>& z,
                               int batch) const {
    const int L = cfg_.seq_len;
    const int D = cfg_.hidden_dim;
    const int B = cfg_.num_blocks();
    const std::size_t n = static_cast<std::size_t>(batch) * L;
    if (x_t.size() != n) {
        throw std::invalid_argument("decode: expected " + std::to_string(n) + " x_t tokens, got " +
                                    std::to_string(x_t.size()));
    }
    // With a single block the x_t rows never look at x_0, so they are dropped.
    const int R = B == 1 ? L : 2 * L;
    if (R == 2 * L && x_0.size() != n) {
        throw std::invalid_argument("decode: expected " + std::to_string(n) + " x_0 tokens, got " +
                                    std::to_string(x_0.size()));
    }
    for (int v : x_t) {
        if (v < 0 || v > cfg_.mask_id()) {
            throw std::invalid_argument("decode: token id " + std::to_string(v) + " out of range");
        }
    }
    const auto& mask = R == L ? full_mask_ : masks_.decoder;

    std::vector<int> row_block(static_cast<std::size_t>(batch) * R);
    std::vector<int> zero_rows(static_cast<std::size_t>(batch) * R, 0);
    for (int e = 0; e < batch; ++e) {
        for (int j = 0; j < R; ++j) {
            row_block[static_cast<std::size_t>(e) * R + j] = e * B + cfg_.block_of(j % L);
        }
    }

    auto h = embed(dec_tok_, dec_pos_, dec_stream_, x_t, x_0, batch, R);

    ad::Var<T> su;        // silu(u) per block
    ad::Var<T> ada_rows;  // shared latent modulation gathered to rows
    if (cfg_.use_latent) {
        if (!z.defined() || z.rows() != batch * B || z.cols() != cfg_.latent_dim) {
            throw std::invalid_argument("decode: z must be [" + std::to_string(batch * B) + "," +
                                        std::to_string(cfg_.latent_dim) + "] (one latent per block), got " +
                                        (z.defined() ? ad::shape_str(z.shape()) : std::string("none")));
        }
        auto u = ad::linear(z, lat_proj_.w, lat_proj_.b);
        if (cfg_.latent_embed) {
            h = ad::add(h, ad::scale_by(ad::gather_rows<T>(u, row_block), lat_scale_));
        }
        if (cfg_.latent_adaln) {
            su = ad::gather_rows<T>(ad::silu(u), row_block);
            if (cfg_.shared_adaln) {
                ada_rows = ad::matmul(su, lat_ada_w_);
            }
        }
    }

    // Baseline (or latent_adaln off): per-layer biases broadcast to every row.
    auto modulation = [&](const ad::Var<T>& bias, const ad::Var<T>& latent_w, int width) {
        if (!su.defined()) {
            return ad::gather_rows<T>(ad::reshape(bias, {1, width}), zero_rows);
        }
        return ad::broadcast_add(latent_w.defined() ? ad::matmul(su, latent_w) : ada_rows, bias);
    };

    for (const auto& layer : dec_layers_) {
        auto mod = modulation(layer.ada_b, layer.ada_w, 6 * D);
        auto chunk = [&](int k) { return ad::slice_cols(mod, k * D, D); };
        auto x = ad::modulate(ad::layer_norm(h, T(1e-6)), chunk(0), chunk(1));
        auto a = attend(x, layer.qkv, layer.out, batch, R, mask);
        h = ad::add(h, ad::mul(a, ad::add_scalar(chunk(2), T(1))));
        x = ad::modulate(ad::layer_norm(h, T(1e-6)), chunk(3), chunk(4));
        auto m = ad::linear(ad::gelu(ad::linear(x, layer.fc1.w, layer.fc1.b)), layer.fc2.w, layer.fc2.b);
        h = ad::add(h, ad::mul(m, ad::add_scalar(chunk(5), T(1))));
    }
    auto fmod = modulation(dec_final_b_, lat_final_w_, 2 * D);
    auto x = ad::modulate(ad::layer_norm(h, T(1e-6)), ad::slice_cols(fmod, 0, D), ad::slice_cols(fmod, D, D));
    if (R != L) {
        std::vector<int> xt_rows(n);
        for (int e = 0; e < batch; ++e) {
            for (int p = 0; p < L; ++p) {
                xt_rows[static_cast<std::size_t>(e) * L + p] = e * R + p;
            }
        }
        x = ad::gather_rows<T>(x, xt_rows);
    }
    return ad::linear(x, dec_out_.w, dec_out_.b);
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace vmd
