#pragma once

#include <cstdint>
#include <string>

#include "lpr/metrics.hpp"
#include "lpr/moe.hpp"
#include "lpr/router.hpp"

namespace lpr {

enum class RouterKind { Vanilla, VanillaAux, Lpr };

std::string router_kind_name(RouterKind k);

struct LrSchedule {
    double base_lr = 1e-3;
    double min_lr_ratio = 0.05;
    double warmup_frac = 0.05;
    double stable_frac = 0.70;
    double decay_frac = 0.25;
    int total_steps = 0;

    void validate() const; // fractions in [0,1] and summing to 1
};

// Linear warmup from 0, constant plateau, cosine decay to base * min_lr_ratio.
double lr_at(const LrSchedule &schedule, int step);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
    double clip_norm = 1.0;
};

struct CorpusConfig {
    int clusters = 16;
    double zipf_s = 1.0;
    double noise_std = 0.3;
    double mean_scale = 1.0;
    double target_scale = 1.0;
    double anisotropy = 0.0;
    int target_rank = 0; // 0 = full rank
};

struct EmaConfig {
    bool enabled = false;
    double lambda = 0.9;
    EmaMode mode = EmaMode::Hard;
};

// Everything one experiment needs; the JSON schema in config.cpp mirrors this
// struct field by field.
struct ExperimentConfig {
    RouterKind router = RouterKind::Lpr;
    MetricKind metric{};
    EncoderMode encoder = EncoderMode::Variational;
    int d_model = 32;
    int d_latent = 16;
    int d_ff = 64;
    int experts = 128;
    int top_k = 8;
    DiversityKind div_kind = DiversityKind::Orthogonal;
    DiversityTarget div_target = DiversityTarget::Prototypes;
    double beta_rs = 0.01;
    double beta_div = 1.0;
    double beta_align = 0.05;
    double beta_kl = 0.01;
    double aux_coef = 1e-3;
    PrototypeInit init = PrototypeInit::Hyperspherical;
    bool unit_ball = true;
    EmaConfig ema;
    CorpusConfig corpus;
    LrSchedule schedule;
    AdamWConfig optimizer;
    std::uint64_t seed = 0;
    int steps = 1000;
    int eval_every = 100;
    int batch_size = 128;
    int eval_tokens = 2048;

    LprConfig lpr_config() const {
        return LprConfig{metric, div_kind, div_target, beta_rs, beta_div, beta_align, beta_kl};
    }

    void validate() const; // throws ConfigError naming the offending key
};

// Parses the JSON config document. Missing keys take defaults; unknown keys
// are rejected. Syntax errors report line and column.
ExperimentConfig parse_config(const std::string &text);

// Canonical JSON form (sorted keys, every field explicit). parse(serialize(c))
// reproduces c exactly.
std::string serialize_config(const ExperimentConfig &cfg);

// FNV-1a over the canonical serialization; equal configs hash equal.
std::uint64_t config_hash(const ExperimentConfig &cfg);

std::string hash_hex(std::uint64_t h);

} // namespace lpr
