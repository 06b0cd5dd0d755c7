#include "lpr/config.hpp"

#include <cstdio>
#include <set>

#include <json.hpp>

namespace lpr {

using nlohmann::json;

std::string router_kind_name(RouterKind k) {
    switch (k) {
    case RouterKind::Vanilla: return "vanilla";
    case RouterKind::VanillaAux: return "vanilla_aux";
    case RouterKind::Lpr: return "lpr";
    }
    return "?";
}

namespace {

RouterKind router_kind_from(const std::string &name) {
    if (name == "vanilla") return RouterKind::Vanilla;
    if (name == "vanilla_aux") return RouterKind::VanillaAux;
    if (name == "lpr") return RouterKind::Lpr;
    throw ConfigError("router: unknown kind '" + name + "'");
}

std::string diversity_name(DiversityKind k) {
    switch (k) {
    case DiversityKind::Orthogonal: return "orthogonal";
    case DiversityKind::Cosine: return "cosine";
    case DiversityKind::Euclidean: return "euclidean";
    }
    return "?";
}

DiversityKind diversity_from(const std::string &name) {
    if (name == "orthogonal") return DiversityKind::Orthogonal;
    if (name == "cosine") return DiversityKind::Cosine;
    if (name == "euclidean") return DiversityKind::Euclidean;
    throw ConfigError("diversity.kind: unknown kind '" + name + "'");
}

std::string init_name(PrototypeInit k) {
    switch (k) {
    case PrototypeInit::Hyperspherical: return "hyperspherical";
    case PrototypeInit::Gaussian: return "gaussian";
    case PrototypeInit::Orthogonal: return "orthogonal";
    }
    return "?";
}

PrototypeInit init_from(const std::string &name) {
    if (name == "hyperspherical") return PrototypeInit::Hyperspherical;
    if (name == "gaussian") return PrototypeInit::Gaussian;
    if (name == "orthogonal") return PrototypeInit::Orthogonal;
    throw ConfigError("init: unknown kind '" + name + "'");
}

void reject_unknown(const json &obj, const std::string &scope,
                    const std::set<std::string> &known) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown key '" + (scope.empty() ? it.key() : scope + "." + it.key()) +
                              "'");
}

template <typename T>
void read(const json &obj, const char *key, T &out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

void read_str(const json &obj, const char *key, std::string &out) {
    if (obj.contains(key)) {
        if (!obj.at(key).is_string())
            throw ConfigError(std::string(key) + ": expected a string");
        out = obj.at(key).get<std::string>();
    }
}

// line/column of a byte offset in the source text, 1-based.
std::pair<int, int> line_col(const std::string &text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

} // namespace

void ExperimentConfig::validate() const {
    if (d_model < 1 || d_latent < 1 || d_ff < 1)
        throw ConfigError("d_model, d_latent and d_ff must be positive");
    if (d_latent > d_model)
        throw ConfigError("d_latent must not exceed d_model");
    if (experts < 1) throw ConfigError("experts must be positive");
    if (top_k < 1 || top_k > experts)
        throw ConfigError("top_k must lie in [1, experts]: k must not exceed M");
    if (metric.kind == Metric::GaussianKernel && metric.sigma <= 0.0)
        throw ConfigError("metric.sigma must be positive");
    if (metric.kind == Metric::MultiHeadDot &&
        (metric.heads < 1 || d_latent % metric.heads != 0))
        throw ConfigError("metric.heads must divide d_latent");
    if (router == RouterKind::Lpr && is_distributional(metric.kind) &&
        encoder != EncoderMode::Variational)
        throw ConfigError("metric '" + metric_name(metric.kind) +
                          "' requires encoder = variational");
    for (double b : {beta_rs, beta_div, beta_align, beta_kl})
        if (b < 0.0) throw ConfigError("betas must be non-negative");
    if (aux_coef < 0.0) throw ConfigError("aux_coef must be non-negative");
    if (ema.lambda < 0.0 || ema.lambda > 1.0)
        throw ConfigError("ema.lambda must lie in [0, 1]");
    if (corpus.clusters < 1) throw ConfigError("corpus.clusters must be positive");
    if (corpus.zipf_s < 0.0) throw ConfigError("corpus.zipf_s must be non-negative");
    if (corpus.noise_std < 0.0) throw ConfigError("corpus.noise_std must be non-negative");
    if (corpus.anisotropy < 0.0 || corpus.anisotropy >= 1.0)
        throw ConfigError("corpus.anisotropy must lie in [0, 1)");
    if (corpus.target_rank < 0 || corpus.target_rank > d_model)
        throw ConfigError("corpus.target_rank must lie in [0, d_model]");
    try {
        LrSchedule s = schedule;
        s.total_steps = steps;
        s.validate();
    } catch (const ParamError &err) {
        throw ConfigError(err.what());
    }
    if (optimizer.clip_norm < 0.0) throw ConfigError("optimizer.clip_norm must be non-negative");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (eval_every < 1) throw ConfigError("eval_every must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (eval_tokens < 1) throw ConfigError("eval_tokens must be positive");
}

ExperimentConfig parse_config(const std::string &text) {
    json doc;
    try {
        doc = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error &err) {
        const auto [line, col] = line_col(text, err.byte > 0 ? err.byte - 1 : 0);
        throw ConfigError("syntax error at line " + std::to_string(line) + ", column " +
                          std::to_string(col) + ": " + err.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

    ExperimentConfig cfg;
    try {
        reject_unknown(doc, "",
                       {"router", "metric", "encoder", "d_model", "d_latent", "d_ff", "experts",
                        "top_k", "diversity", "betas", "aux_coef", "init", "unit_ball", "ema",
                        "corpus", "schedule", "optimizer", "seed", "steps", "eval_every",
                        "batch_size", "eval_tokens"});

        std::string router_name = router_kind_name(cfg.router);
        read_str(doc, "router", router_name);
        cfg.router = router_kind_from(router_name);

        if (doc.contains("metric")) {
            const json &m = doc.at("metric");
            reject_unknown(m, "metric", {"kind", "sigma", "heads"});
            std::string kind_name = metric_name(cfg.metric.kind);
            read_str(m, "kind", kind_name);
            const auto kind = metric_from_name(kind_name);
            if (!kind) throw ConfigError("metric.kind: unknown kind '" + kind_name + "'");
            cfg.metric.kind = *kind;
            read(m, "sigma", cfg.metric.sigma);
            read(m, "heads", cfg.metric.heads);
        }

        std::string encoder_name = cfg.encoder == EncoderMode::Variational ? "variational"
                                                                           : "deterministic";
        read_str(doc, "encoder", encoder_name);
        if (encoder_name == "variational")
            cfg.encoder = EncoderMode::Variational;
        else if (encoder_name == "deterministic")
            cfg.encoder = EncoderMode::Deterministic;
        else
            throw ConfigError("encoder: unknown mode '" + encoder_name + "'");

        read(doc, "d_model", cfg.d_model);
        read(doc, "d_latent", cfg.d_latent);
        read(doc, "d_ff", cfg.d_ff);
        read(doc, "experts", cfg.experts);
        read(doc, "top_k", cfg.top_k);

        if (doc.contains("diversity")) {
            const json &d = doc.at("diversity");
            reject_unknown(d, "diversity", {"kind", "target"});
            std::string kind_name = diversity_name(cfg.div_kind);
            read_str(d, "kind", kind_name);
            cfg.div_kind = diversity_from(kind_name);
            std::string target = cfg.div_target == DiversityTarget::Prototypes ? "prototypes"
                                 : cfg.div_target == DiversityTarget::Tokens   ? "tokens"
                                                                               : "both";
            read_str(d, "target", target);
            if (target == "prototypes")
                cfg.div_target = DiversityTarget::Prototypes;
            else if (target == "tokens")
                cfg.div_target = DiversityTarget::Tokens;
            else if (target == "both")
                cfg.div_target = DiversityTarget::Both;
            else
                throw ConfigError("diversity.target: unknown target '" + target + "'");
        }

        if (doc.contains("betas")) {
            const json &b = doc.at("betas");
            reject_unknown(b, "betas", {"rs", "div", "align", "kl"});
            read(b, "rs", cfg.beta_rs);
            read(b, "div", cfg.beta_div);
            read(b, "align", cfg.beta_align);
            read(b, "kl", cfg.beta_kl);
        }

        read(doc, "aux_coef", cfg.aux_coef);

        std::string init = init_name(cfg.init);
        read_str(doc, "init", init);
        cfg.init = init_from(init);
        read(doc, "unit_ball", cfg.unit_ball);

        if (doc.contains("ema")) {
            const json &e = doc.at("ema");
            reject_unknown(e, "ema", {"enabled", "lambda", "mode"});
            read(e, "enabled", cfg.ema.enabled);
            read(e, "lambda", cfg.ema.lambda);
            std::string mode = cfg.ema.mode == EmaMode::Hard ? "hard" : "soft";
            read_str(e, "mode", mode);
            if (mode == "hard")
                cfg.ema.mode = EmaMode::Hard;
            else if (mode == "soft")
                cfg.ema.mode = EmaMode::Soft;
            else
                throw ConfigError("ema.mode: unknown mode '" + mode + "'");
        }

        if (doc.contains("corpus")) {
            const json &c = doc.at("corpus");
            reject_unknown(c, "corpus",
                           {"clusters", "zipf_s", "noise_std", "mean_scale", "target_scale",
                            "anisotropy", "target_rank"});
            read(c, "clusters", cfg.corpus.clusters);
            read(c, "zipf_s", cfg.corpus.zipf_s);
            read(c, "noise_std", cfg.corpus.noise_std);
            read(c, "mean_scale", cfg.corpus.mean_scale);
            read(c, "target_scale", cfg.corpus.target_scale);
            read(c, "anisotropy", cfg.corpus.anisotropy);
            read(c, "target_rank", cfg.corpus.target_rank);
        }

        if (doc.contains("schedule")) {
            const json &s = doc.at("schedule");
            reject_unknown(s, "schedule",
                           {"base_lr", "min_lr_ratio", "warmup_frac", "stable_frac",
                            "decay_frac"});
            read(s, "base_lr", cfg.schedule.base_lr);
            read(s, "min_lr_ratio", cfg.schedule.min_lr_ratio);
            read(s, "warmup_frac", cfg.schedule.warmup_frac);
            read(s, "stable_frac", cfg.schedule.stable_frac);
            read(s, "decay_frac", cfg.schedule.decay_frac);
        }

        if (doc.contains("optimizer")) {
            const json &o = doc.at("optimizer");
            reject_unknown(o, "optimizer",
                           {"beta1", "beta2", "eps", "weight_decay", "clip_norm"});
            read(o, "beta1", cfg.optimizer.beta1);
            read(o, "beta2", cfg.optimizer.beta2);
            read(o, "eps", cfg.optimizer.eps);
            read(o, "weight_decay", cfg.optimizer.weight_decay);
            read(o, "clip_norm", cfg.optimizer.clip_norm);
        }

        read(doc, "seed", cfg.seed);
        read(doc, "steps", cfg.steps);
        read(doc, "eval_every", cfg.eval_every);
        read(doc, "batch_size", cfg.batch_size);
        read(doc, "eval_tokens", cfg.eval_tokens);
    } catch (const json::exception &err) {
        throw ConfigError(std::string("invalid value: ") + err.what());
    }

    cfg.validate();
    return cfg;
}

std::string serialize_config(const ExperimentConfig &cfg) {
    json doc;
    doc["router"] = router_kind_name(cfg.router);
    doc["metric"] = {{"kind", metric_name(cfg.metric.kind)},
                     {"sigma", cfg.metric.sigma},
                     {"heads", cfg.metric.heads}};
    doc["encoder"] = cfg.encoder == EncoderMode::Variational ? "variational" : "deterministic";
    doc["d_model"] = cfg.d_model;
    doc["d_latent"] = cfg.d_latent;
    doc["d_ff"] = cfg.d_ff;
    doc["experts"] = cfg.experts;
    doc["top_k"] = cfg.top_k;
    doc["diversity"] = {{"kind", diversity_name(cfg.div_kind)},
                        {"target", cfg.div_target == DiversityTarget::Prototypes ? "prototypes"
                                   : cfg.div_target == DiversityTarget::Tokens   ? "tokens"
                                                                                 : "both"}};
    doc["betas"] = {{"rs", cfg.beta_rs},
                    {"div", cfg.beta_div},
                    {"align", cfg.beta_align},
                    {"kl", cfg.beta_kl}};
    doc["aux_coef"] = cfg.aux_coef;
    doc["init"] = init_name(cfg.init);
    doc["unit_ball"] = cfg.unit_ball;
    doc["ema"] = {{"enabled", cfg.ema.enabled},
                  {"lambda", cfg.ema.lambda},
                  {"mode", cfg.ema.mode == EmaMode::Hard ? "hard" : "soft"}};
    doc["corpus"] = {{"clusters", cfg.corpus.clusters},
                     {"zipf_s", cfg.corpus.zipf_s},
                     {"noise_std", cfg.corpus.noise_std},
                     {"mean_scale", cfg.corpus.mean_scale},
                     {"target_scale", cfg.corpus.target_scale},
                     {"anisotropy", cfg.corpus.anisotropy},
                     {"target_rank", cfg.corpus.target_rank}};
    doc["schedule"] = {{"base_lr", cfg.schedule.base_lr},
                       {"min_lr_ratio", cfg.schedule.min_lr_ratio},
                       {"warmup_frac", cfg.schedule.warmup_frac},
                       {"stable_frac", cfg.schedule.stable_frac},
                       {"decay_frac", cfg.schedule.decay_frac}};
    doc["optimizer"] = {{"beta1", cfg.optimizer.beta1},
                        {"beta2", cfg.optimizer.beta2},
                        {"eps", cfg.optimizer.eps},
                        {"weight_decay", cfg.optimizer.weight_decay},
                        {"clip_norm", cfg.optimizer.clip_norm}};
    doc["seed"] = cfg.seed;
    doc["steps"] = cfg.steps;
    doc["eval_every"] = cfg.eval_every;
    doc["batch_size"] = cfg.batch_size;
    doc["eval_tokens"] = cfg.eval_tokens;
    return doc.dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig &cfg) {
    const std::string text = serialize_config(cfg);
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a 64
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace lpr
