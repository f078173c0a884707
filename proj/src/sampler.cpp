#include "vmd/sampler.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace vmd {

Strategy parse_strategy(const std::string& name) {
    if (name == "random") return Strategy::random;
    if (name == "top_prob") return Strategy::top_prob;
    if (name == "top_margin") return Strategy::top_margin;
    throw std::invalid_argument("unknown strategy '" + name + "' (random, top_prob, top_margin)");
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::random: return "random";
        case Strategy::top_prob: return "top_prob";
        case Strategy::top_margin: return "top_margin";
    }
    return "?";
}

namespace {

// softmax in double; returns probabilities
std::vector<double> probs_of(std::span<const float> logits) {
    if (logits.empty()) {
        throw std::invalid_argument("confidence: empty logits row");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(double(logits[i]) - mx);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

// first index of the maximum
int argmax(const std::vector<double>& p) {
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

}  // namespace

double confidence_prob(std::span<const float> logits) {
    const auto p = probs_of(logits);
    return p[argmax(p)];
}

double confidence_margin(std::span<const float> logits) {
    if (logits.size() < 2) {
        throw std::invalid_argument("confidence_margin: needs at least 2 logits");
    }
    auto p = probs_of(logits);
    std::partial_sort(p.begin(), p.begin() + 2, p.end(), std::greater<>());
    return std::abs(p[0] - p[1]);
}

int unmask_schedule(int num_masked, int steps_remaining) {
    if (steps_remaining < 1) {
        throw std::invalid_argument("unmask_schedule: steps_remaining must be >= 1");
    }
    if (num_masked < 0) {
        throw std::invalid_argument("unmask_schedule: negative masked count");
    }
    return (num_masked + steps_remaining - 1) / steps_remaining;
}

namespace {

struct Chain {
    TokenSeq tokens;
    Rng rng;
    long nfe = 0;
};

void run_chunk(const Backbone<float>& model, const SampleConfig& cfg, std::vector<Chain>& chains,
               SampleStats& stats) {
    const auto& mc = model.config();
    const int L = mc.seq_len;
    const int r = mc.block_len;
    const int B = mc.num_blocks();
    const int V = mc.vocab_size;
    const int mask = mc.mask_id();
    const int n = static_cast<int>(chains.size());
    const int dz = mc.latent_dim;
    ad::NoGradGuard no_grad;

    ad::Array<float> zbuf({n * B, dz});
    std::vector<int> cur(static_cast<std::size_t>(n) * L);
    for (int b = 0; b < B; ++b) {
        if (mc.use_latent) {
            for (int e = 0; e < n; ++e) {
                for (int j = 0; j < dz; ++j) {
                    zbuf.data[(static_cast<std::size_t>(e) * B + b) * dz + j] = static_cast<float>(chains[e].rng.normal());
                }
            }
        }
        for (int step = 0; step < cfg.nfe; ++step) {
            const int remaining = cfg.nfe - step;
            bool any = false;
            for (int e = 0; e < n; ++e) {
                for (int p = b * r; p < (b + 1) * r; ++p) {
                    any = any || chains[e].tokens[p] == mask;
                }
            }
            if (!any) {
                break;
            }
            for (int e = 0; e < n; ++e) {
                std::copy(chains[e].tokens.begin(), chains[e].tokens.end(), cur.begin() + static_cast<std::ptrdiff_t>(e) * L);
            }
            const ad::Var<float> z = mc.use_latent ? ad::constant(zbuf) : ad::Var<float>();
            const auto logits = model.decode(cur, cur, z, n);
            ++stats.decoder_calls;

            for (int e = 0; e < n; ++e) {
                Chain& ch = chains[e];
                std::vector<int> masked;
                for (int p = b * r; p < (b + 1) * r; ++p) {
                    if (ch.tokens[p] == mask) masked.push_back(p);
                }
                if (masked.empty()) {
                    continue;
                }
                ++ch.nfe;
                const int k = unmask_schedule(static_cast<int>(masked.size()), remaining);
                std::vector<int> value(masked.size());
                std::vector<double> score(masked.size());
                for (std::size_t m = 0; m < masked.size(); ++m) {
                    const float* row = logits.data().data() + (static_cast<std::size_t>(e) * L + masked[m]) * V;
                    const std::span<const float> lrow(row, static_cast<std::size_t>(V));
                    const auto p = probs_of(lrow);
                    int v = argmax(p);
                    if (cfg.categorical) {
                        double u = ch.rng.uniform();
                        v = V - 1;
                        for (int c = 0; c < V; ++c) {
                            u -= p[c];
                            if (u < 0.0) {
                                v = c;
                                break;
                            }
                        }
                    }
                    value[m] = v;
                    if (cfg.strategy == Strategy::top_prob) {
                        score[m] = p[v];
                    } else if (cfg.strategy == Strategy::top_margin) {
                        score[m] = confidence_margin(lrow);
                    }
                }
                std::vector<std::size_t> order(masked.size());
                std::iota(order.begin(), order.end(), 0);
                if (cfg.strategy == Strategy::random) {
                    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                        const std::size_t j = i + static_cast<std::size_t>(ch.rng.uniform_int(static_cast<int>(order.size() - i)));
                        std::swap(order[i], order[j]);
                    }
                } else {
                    // stable: equal confidence keeps the lower position first
                    std::stable_sort(order.begin(), order.end(),
                                     [&](std::size_t a, std::size_t c) { return score[a] > score[c]; });
                }
                for (int i = 0; i < k; ++i) {
                    ch.tokens[masked[order[i]]] = value[order[i]];
                }
            }
        }
        for (const auto& ch : chains) {
            for (int p = b * r; p < (b + 1) * r; ++p) {
                if (ch.tokens[p] == mask) {
                    throw std::logic_error("sample: MASK left in block " + std::to_string(b) + " after the schedule");
                }
            }
        }
    }
    for (const auto& ch : chains) {
        stats.nfe = std::max(stats.nfe, ch.nfe);
    }
}

void validate(const Backbone<float>& model, const SampleConfig& cfg) {
    const auto& mc = model.config();
    if (cfg.nfe < 1 || cfg.nfe > mc.block_len) {
        throw std::invalid_argument("sample: nfe must lie in [1, " + std::to_string(mc.block_len) + "], got " +
                                    std::to_string(cfg.nfe));
    }
    if (cfg.max_batch < 1) {
        throw std::invalid_argument("sample: max_batch must be positive");
    }
}

Chain make_chain(const Backbone<float>& model, const SampleConfig& cfg, const TokenSeq& prompt, std::size_t id) {
    const auto& mc = model.config();
    Chain ch{TokenSeq(static_cast<std::size_t>(mc.seq_len), mc.mask_id()),
             Rng::derive(cfg.seed, Stream::sampler, id)};
    if (!prompt.empty()) {
        if (static_cast<int>(prompt.size()) != mc.seq_len) {
            throw std::invalid_argument("sample: prompt has " + std::to_string(prompt.size()) + " tokens, model expects " +
                                        std::to_string(mc.seq_len));
        }
        for (int p = 0; p < mc.seq_len; ++p) {
            if (prompt[p] < 0 || prompt[p] > mc.mask_id()) {
                throw std::invalid_argument("sample: prompt token out of range at position " + std::to_string(p));
            }
            ch.tokens[p] = prompt[p];
        }
    }
    return ch;
}

std::vector<TokenSeq> run_all(const Backbone<float>& model, const SampleConfig& cfg, std::size_t count,
                              const std::function<const TokenSeq&(std::size_t)>& prompt_of, SampleStats* stats) {
    validate(model, cfg);
    SampleStats local;
    std::vector<TokenSeq> out;
    out.reserve(count);
    for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(cfg.max_batch)) {
        const std::size_t end = std::min(count, start + static_cast<std::size_t>(cfg.max_batch));
        std::vector<Chain> chains;
        for (std::size_t i = start; i < end; ++i) {
            chains.push_back(make_chain(model, cfg, prompt_of(i), i));
        }
        run_chunk(model, cfg, chains, local);
        for (auto& ch : chains) {
            out.push_back(std::move(ch.tokens));
        }
    }
    if (stats) {
        *stats = local;
    }
    return out;
}

}  // namespace

std::vector<TokenSeq> sample(const Backbone<float>& model, const SampleConfig& cfg, SampleStats* stats) {
    if (cfg.num_samples < 0) {
        throw std::invalid_argument("sample: num_samples must be >= 0");
    }
    return run_all(
        model, cfg, static_cast<std::size_t>(cfg.num_samples), [&](std::size_t) -> const TokenSeq& { return cfg.prompt; },
        stats);
}

std::vector<TokenSeq> sample_prompted(const Backbone<float>& model, const SampleConfig& cfg,
                                      const std::vector<TokenSeq>& prompts, SampleStats* stats) {
    return run_all(
        model, cfg, prompts.size(), [&](std::size_t i) -> const TokenSeq& { return prompts[i]; }, stats);
}

void write_sample_dump(std::ostream& out, const std::vector<TokenSeq>& samples, std::uint64_t seed, long nfe,
                       Strategy strategy) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
        nlohmann::json j;
        j["sample_id"] = i;
        j["tokens"] = samples[i];
        j["seed"] = seed;
        j["nfe"] = nfe;
        j["strategy"] = strategy_name(strategy);
        out << j.dump() << '\n';
    }
}

}  // namespace vmd
