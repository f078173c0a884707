#include "vmd/diffusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vmd {

DiffusionState mask_sequence(const TokenSeq& x_0, std::span<const double> t, int block_len, int mask_id, Rng& rng,
                             std::span<const int> maskable) {
    const int L = static_cast<int>(x_0.size());
    if (block_len <= 0 || L % block_len != 0 || t.size() != static_cast<std::size_t>(L / block_len)) {
        throw std::invalid_argument("mask_sequence: need one t per block");
    }
    DiffusionState s;
    s.x_t = x_0;
    s.t.assign(t.begin(), t.end());
    std::vector<std::uint8_t> allowed(static_cast<std::size_t>(L), maskable.empty() ? 1 : 0);
    for (int p : maskable) {
        allowed.at(static_cast<std::size_t>(p)) = 1;
    }
    for (int i = 0; i < L; ++i) {
        if (x_0[i] == mask_id) {
            throw std::invalid_argument("mask_sequence: x_0 already contains MASK");
        }
        if (allowed[i] && rng.uniform() < t[i / block_len]) {
            s.x_t[i] = mask_id;
            s.masked.push_back(i);
        }
    }
    return s;
}

namespace {

struct Corrupted {
    std::vector<int> x_t;
    std::vector<double> t;  // batch * blocks
};

// One t per block (blocks = 1 gives a single t for the whole sequence). A block
// with nothing masked gets its bits redrawn once.
Corrupted corrupt(std::span<const int> x_0, int batch, int L, int blocks, int mask_id, const LossConfig& cfg,
                  Rng& rng) {
    const int r = L / blocks;
    std::vector<std::uint8_t> allowed(static_cast<std::size_t>(L), cfg.maskable.empty() ? 1 : 0);
    for (int p : cfg.maskable) {
        allowed.at(static_cast<std::size_t>(p)) = 1;
    }
    Corrupted c;
    c.x_t.assign(x_0.begin(), x_0.end());
    c.t.resize(static_cast<std::size_t>(batch) * blocks);
    for (int e = 0; e < batch; ++e) {
        for (int b = 0; b < blocks; ++b) {
            c.t[static_cast<std::size_t>(e) * blocks + b] =
                cfg.fixed_t ? *cfg.fixed_t : cfg.t_min + (1.0 - cfg.t_min) * rng.uniform();
        }
        for (int b = 0; b < blocks; ++b) {
            const double t = c.t[static_cast<std::size_t>(e) * blocks + b];
            int* row = c.x_t.data() + static_cast<std::ptrdiff_t>(e) * L;
            const int* clean = x_0.data() + static_cast<std::ptrdiff_t>(e) * L;
            bool any_allowed = false;
            for (int attempt = 0; attempt < 2; ++attempt) {
                int hits = 0;
                for (int p = b * r; p < (b + 1) * r; ++p) {
                    row[p] = clean[p];
                    if (!allowed[p]) {
                        continue;
                    }
                    any_allowed = true;
                    if (rng.uniform() < t) {
                        row[p] = mask_id;
                        ++hits;
                    }
                }
                if (hits > 0 || !any_allowed) {
                    break;
                }
            }
        }
    }
    return c;
}

void check_tokens(std::span<const int> x_0, int batch, const BackboneConfig& mc) {
    if (x_0.size() != static_cast<std::size_t>(batch) * mc.seq_len) {
        throw std::invalid_argument("loss: expected " + std::to_string(batch * mc.seq_len) + " tokens");
    }
}

template <class T>
std::vector<T> ce_weights(const Corrupted& c, int batch, int L, int blocks, int mask_id) {
    const int r = L / blocks;
    std::vector<T> w(static_cast<std::size_t>(batch) * L, T(0));
    for (int e = 0; e < batch; ++e) {
        for (int p = 0; p < L; ++p) {
            const std::size_t i = static_cast<std::size_t>(e) * L + p;
            if (c.x_t[i] == mask_id) {
                w[i] = static_cast<T>(1.0 / c.t[static_cast<std::size_t>(e) * blocks + p / r]);
            }
        }
    }
    return w;
}

}  // namespace

template <class T>
LossTerms<T> mdm_loss(const Backbone<T>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                      Rng& mask_rng) {
    const auto& mc = model.config();
    check_tokens(x_0, batch, mc);
    const int L = mc.seq_len;
    const int B = mc.num_blocks();
    const Corrupted c = corrupt(x_0, batch, L, B, mc.mask_id(), cfg, mask_rng);
    const auto w = ce_weights<T>(c, batch, L, B, mc.mask_id());
    auto logits = model.decode(c.x_t, x_0, ad::Var<T>(), batch);
    auto ce = ad::cross_entropy<T>(logits, x_0, w);
    LossTerms<T> out;
    out.objective = ad::scale(ce, static_cast<T>(1.0 / (static_cast<double>(batch) * L)));
    out.ce = static_cast<double>(ce.item()) / batch;
    out.loss = out.ce;
    return out;
}

template <class T>
LossTerms<T> vmd_loss(const Backbone<T>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                      Rng& mask_rng, Rng& eps_rng) {
    const auto& mc = model.config();
    if (!mc.use_latent || mc.num_blocks() != 1) {
        throw std::invalid_argument("vmd_loss: needs a latent model with a single block");
    }
    check_tokens(x_0, batch, mc);
    const int L = mc.seq_len;
    const Corrupted c = corrupt(x_0, batch, L, 1, mc.mask_id(), cfg, mask_rng);
    const auto w = ce_weights<T>(c, batch, L, 1, mc.mask_id());

    auto post = model.encode(c.x_t, x_0, batch);
    auto rep = reparameterize(post.mu, post.log_sigma, eps_rng);
    auto logits = model.decode(c.x_t, x_0, rep.z, batch);
    auto ce = ad::cross_entropy<T>(logits, x_0, w);

    auto kl = gaussian_kl_rows(post.mu, post.log_sigma);
    std::vector<T> kw(static_cast<std::size_t>(batch));
    double kl_report = 0.0;
    for (int e = 0; e < batch; ++e) {
        const double tw = cfg.kl_inside_weight ? 1.0 / c.t[e] : 1.0;
        kw[e] = static_cast<T>(cfg.kl_weight * tw);
        kl_report += tw * kl.data()[e];
    }
    auto klw = ad::weighted_sum<T>(kl, kw);
    LossTerms<T> out;
    out.objective = ad::scale(ad::add(ce, klw), static_cast<T>(1.0 / (static_cast<double>(batch) * L)));
    out.ce = static_cast<double>(ce.item()) / batch;
    out.kl = kl_report / batch;
    out.loss = out.ce + cfg.kl_weight * out.kl;
    return out;
}

template <class T>
LossTerms<T> block_vmd_loss(const Backbone<T>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                            Rng& mask_rng, Rng& eps_rng) {
    const auto& mc = model.config();
    if (!mc.use_latent) {
        throw std::invalid_argument("block_vmd_loss: needs a latent model");
    }
    check_tokens(x_0, batch, mc);
    const int L = mc.seq_len;
    const int B = mc.num_blocks();
    const Corrupted c = corrupt(x_0, batch, L, B, mc.mask_id(), cfg, mask_rng);
    const auto w = ce_weights<T>(c, batch, L, B, mc.mask_id());

    // Row e*B + b of mu/log_sigma/z is block b of example e.
    auto post = model.encode(c.x_t, x_0, batch);
    auto rep = reparameterize(post.mu, post.log_sigma, eps_rng);
    auto logits = model.decode(c.x_t, x_0, rep.z, batch);
    auto ce = ad::cross_entropy<T>(logits, x_0, w);

    auto kl = gaussian_kl_rows(post.mu, post.log_sigma);
    std::vector<T> kw(static_cast<std::size_t>(batch) * B);
    double kl_report = 0.0;
    for (std::size_t i = 0; i < kw.size(); ++i) {
        const double tw = cfg.kl_inside_weight ? 1.0 / c.t[i] : 1.0;
        kw[i] = static_cast<T>(cfg.kl_weight * tw);
        kl_report += tw * kl.data()[i];
    }
    auto klw = ad::weighted_sum<T>(kl, kw);
    LossTerms<T> out;
    out.objective = ad::scale(ad::add(ce, klw), static_cast<T>(1.0 / (static_cast<double>(batch) * L)));
    out.ce = static_cast<double>(ce.item()) / batch;
    out.kl = kl_report / batch;
    out.loss = out.ce + cfg.kl_weight * out.kl;
    return out;
}

template <class T>
LossTerms<T> model_loss(const Backbone<T>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                        Rng& mask_rng, Rng& eps_rng) {
    if (!model.config().use_latent) {
        return mdm_loss(model, x_0, batch, cfg, mask_rng);
    }
    if (model.config().num_blocks() == 1) {
        return vmd_loss(model, x_0, batch, cfg, mask_rng, eps_rng);
    }
    return block_vmd_loss(model, x_0, batch, cfg, mask_rng, eps_rng);
}

BlockTerms block_loss_terms(const Backbone<float>& model, std::span<const int> x_0, int batch, const LossConfig& cfg,
                            Rng& mask_rng, Rng& eps_rng) {
    const auto& mc = model.config();
    if (!mc.use_latent) {
        throw std::invalid_argument("block_loss_terms: needs a latent model");
    }
    check_tokens(x_0, batch, mc);
    ad::NoGradGuard guard;
    const int L = mc.seq_len;
    const int B = mc.num_blocks();
    const int r = mc.block_len;
    const int V = mc.vocab_size;
    const Corrupted c = corrupt(x_0, batch, L, B, mc.mask_id(), cfg, mask_rng);
    auto post = model.encode(c.x_t, x_0, batch);
    auto rep = reparameterize(post.mu, post.log_sigma, eps_rng);
    auto logits = model.decode(c.x_t, x_0, rep.z, batch);
    auto kl = gaussian_kl_rows(post.mu, post.log_sigma);

    BlockTerms out;
    out.blocks = B;
    out.ce.assign(static_cast<std::size_t>(batch) * B, 0.0);
    out.kl.assign(static_cast<std::size_t>(batch) * B, 0.0);
    const auto& lg = logits.data();
    for (int e = 0; e < batch; ++e) {
        for (int p = 0; p < L; ++p) {
            const std::size_t i = static_cast<std::size_t>(e) * L + p;
            if (c.x_t[i] != mc.mask_id()) {
                continue;
            }
            const float* row = lg.data() + i * V;
            double mx = row[0];
            for (int v = 1; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
            double z = 0.0;
            for (int v = 0; v < V; ++v) z += std::exp(row[v] - mx);
            const std::size_t k = static_cast<std::size_t>(e) * B + p / r;
            out.ce[k] += (mx + std::log(z) - row[x_0[i]]) / c.t[k];
        }
        for (int b = 0; b < B; ++b) {
            const std::size_t k = static_cast<std::size_t>(e) * B + b;
            out.kl[k] = (cfg.kl_inside_weight ? 1.0 / c.t[k] : 1.0) * kl.data()[k];
        }
    }
    return out;
}

std::vector<TrainRecord> train(Backbone<float>& model, const Dataset& data, const TrainConfig& cfg, std::uint64_t seed,
                               const std::function<void(const TrainRecord&)>& on_log,
                               const std::function<void(long)>& on_checkpoint) {
    const auto& mc = model.config();
    if (data.seq_len() != mc.seq_len || data.vocab_size() != mc.vocab_size) {
        throw std::invalid_argument("train: dataset " + data.spec().id() + " does not match the backbone shape");
    }
    if (cfg.batch_size < 1 || cfg.num_steps < 0 || cfg.log_every < 1 || cfg.kl_warmup_steps < 0) {
        throw std::invalid_argument("train: batch_size and log_every must be positive");
    }
    if (!(cfg.t_min > 0.0 && cfg.t_min <= 0.1)) {
        throw std::invalid_argument("train: t_min must lie in (0, 0.1]");
    }
    LossConfig lc;
    lc.t_min = cfg.t_min;
    lc.kl_weight = mc.kl_weight;
    lc.kl_inside_weight = cfg.kl_inside_weight;
    if (static_cast<int>(data.maskable().size()) != mc.seq_len) {
        lc.maskable = data.maskable();
    }

    Rng data_rng = Rng::derive(seed, Stream::data);
    Rng mask_rng = Rng::derive(seed, Stream::mask);
    Rng eps_rng = Rng::derive(seed, Stream::epsilon);
    Adam<float> opt({.lr = cfg.lr});
    opt.init(model.params());

    std::vector<TrainRecord> log;
    const auto start = std::chrono::steady_clock::now();
    double sum_ce = 0.0, sum_kl = 0.0, sum_loss = 0.0;
    int window = 0;
    std::vector<int> batch(static_cast<std::size_t>(cfg.batch_size) * mc.seq_len);
    for (long step = 1; step <= cfg.num_steps; ++step) {
        for (int e = 0; e < cfg.batch_size; ++e) {
            const TokenSeq s = data.sample(data_rng);
            std::copy(s.begin(), s.end(), batch.begin() + static_cast<std::ptrdiff_t>(e) * mc.seq_len);
        }
        if (cfg.kl_warmup_steps > 0) {
            lc.kl_weight = mc.kl_weight * std::min(1.0, static_cast<double>(step) / cfg.kl_warmup_steps);
        }
        LossTerms<float> terms;
        try {
            terms = model_loss(model, batch, cfg.batch_size, lc, mask_rng, eps_rng);
            if (!std::isfinite(terms.loss)) {
                throw std::runtime_error("non-finite loss");
            }
            ad::backward(terms.objective);
        } catch (const std::runtime_error& err) {
            std::ostringstream os;
            os << "training aborted at step " << step << " (" << err.what() << "; ce=" << terms.ce
               << ", kl=" << terms.kl << ", loss=" << terms.loss << ")";
            throw std::runtime_error(os.str());
        }
        opt.step(model.params());
        sum_ce += terms.ce;
        sum_kl += terms.kl;
        sum_loss += terms.loss;
        ++window;
        if (step % cfg.log_every == 0 || step == cfg.num_steps) {
            TrainRecord rec;
            rec.step = step;
            rec.ce = sum_ce / window;
            rec.kl = sum_kl / window;
            rec.loss = sum_loss / window;
            rec.wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            log.push_back(rec);
            if (on_log) {
                on_log(rec);
            }
            sum_ce = sum_kl = sum_loss = 0.0;
            window = 0;
        }
        if (on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            on_checkpoint(step);
        }
    }
    return log;
}

#define VMD_LOSS_INSTANTIATE(T)                                                                                   \
    template LossTerms<T> mdm_loss<T>(const Backbone<T>&, std::span<const int>, int, const LossConfig&, Rng&);    \
    template LossTerms<T> vmd_loss<T>(const Backbone<T>&, std::span<const int>, int, const LossConfig&, Rng&,     \
                                      Rng&);                                                                      \
    template LossTerms<T> block_vmd_loss<T>(const Backbone<T>&, std::span<const int>, int, const LossConfig&,     \
                                            Rng&, Rng&);                                                          \
    template LossTerms<T> model_loss<T>(const Backbone<T>&, std::span<const int>, int, const LossConfig&, Rng&,   \
                                        Rng&);

VMD_LOSS_INSTANTIATE(float)
VMD_LOSS_INSTANTIATE(double)

}  // namespace vmd
