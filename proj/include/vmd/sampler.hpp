#pragma once

#include "vmd/backbone.hpp"
#include "vmd/datasets.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace vmd {

enum class Strategy { random, top_prob, top_margin };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);

// Largest softmax probability of a logits row.
double confidence_prob(std::span<const float> logits);
// Gap between the two largest softmax probabilities. Needs at least 2 entries.
double confidence_margin(std::span<const float> logits);

// Tokens to finalize now so that num_masked reaches 0 in exactly steps_remaining steps.
int unmask_schedule(int num_masked, int steps_remaining);

struct SampleConfig {
    int nfe = 1;  // decoder calls per block
    Strategy strategy = Strategy::top_prob;
    bool categorical = false;  // sample from p instead of argmax (latent-free baseline)
    int num_samples = 1;
    std::uint64_t seed = 0;
    // Empty, or one entry per position with MASK at positions to generate.
    std::vector<int> prompt;
    int max_batch = 512;  // chains decoded together
};

struct SampleStats {
    long decoder_calls = 0;  // batched forward passes
    long nfe = 0;            // decoder calls seen by one chain, max over chains
};

// Chain i draws from Rng::derive(seed, sampler, i), so results do not depend on
// max_batch. Within a block, z is drawn once and kept for all inner steps.
std::vector<TokenSeq> sample(const Backbone<float>& model, const SampleConfig& cfg, SampleStats* stats = nullptr);

// Per-chain prompts (e.g. one puzzle per chain); cfg.prompt and cfg.num_samples are ignored.
std::vector<TokenSeq> sample_prompted(const Backbone<float>& model, const SampleConfig& cfg,
                                      const std::vector<TokenSeq>& prompts, SampleStats* stats = nullptr);

// NDJSON, one {sample_id, tokens, seed, nfe, strategy} per line.
void write_sample_dump(std::ostream& out, const std::vector<TokenSeq>& samples, std::uint64_t seed, long nfe,
                       Strategy strategy);

}  // namespace vmd
