#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpr/dual_encoder.hpp"
#include "dpr/error.hpp"
#include "dpr/qa_dataset.hpp"
#include "dpr/rng.hpp"

namespace dpr {

inline std::string to_string(LossKind k) {
    return k == LossKind::nll ? "nll" : "triplet";
}
inline std::string to_string(SimilarityKind k) {
    switch (k) {
        case SimilarityKind::dot: return "dot";
        case SimilarityKind::cosine: return "cosine";
        case SimilarityKind::neg_l2: return "neg_l2";
    }
    return "";
}
inline std::string to_string(TrainMode m) {
    return m == TrainMode::in_batch ? "in_batch" : "explicit";
}

inline LossKind loss_from_string(const std::string& s) {
    if (s == "nll") return LossKind::nll;
    if (s == "triplet") return LossKind::triplet;
    throw DataError("unknown loss '" + s + "'");
}
inline SimilarityKind similarity_from_string(const std::string& s) {
    if (s == "dot") return SimilarityKind::dot;
    if (s == "cosine") return SimilarityKind::cosine;
    if (s == "neg_l2") return SimilarityKind::neg_l2;
    throw DataError("unknown similarity '" + s + "'");
}
inline TrainMode mode_from_string(const std::string& s) {
    if (s == "in_batch") return TrainMode::in_batch;
    if (s == "explicit") return TrainMode::explicit_negatives;
    throw DataError("unknown train mode '" + s + "'");
}

struct NegativeCounts {
    std::uint32_t random = 0;
    std::uint32_t bm25 = 1;
    std::uint32_t gold_other = 0;

    std::uint32_t total() const { return random + bm25 + gold_other; }
};

struct TrainConfig {
    std::uint32_t batch_size = 32;
    std::uint32_t epochs = 20;
    double lr = 1e-2;           // desk-scale default; paper-scale 1e-5 configurable
    double warmup_frac = 0.1;   // fraction of total steps spent ramping up
    double dropout = 0.1;
    double margin = 1.0;
    LossKind loss = LossKind::nll;
    SimilarityKind similarity = SimilarityKind::dot;
    TrainMode mode = TrainMode::in_batch;
    NegativeCounts negatives;
    std::uint32_t vocab = 8192;
    std::uint32_t embed_dim = 64;
    std::uint32_t out_dim = 64;
    std::uint64_t seed = 42;
};

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["lr"] = c.lr;
    j["warmup_frac"] = c.warmup_frac;
    j["dropout"] = c.dropout;
    j["margin"] = c.margin;
    j["loss"] = to_string(c.loss);
    j["similarity"] = to_string(c.similarity);
    j["mode"] = to_string(c.mode);
    j["negatives"] = {{"random", c.negatives.random},
                      {"bm25", c.negatives.bm25},
                      {"gold_other", c.negatives.gold_other}};
    j["vocab"] = c.vocab;
    j["embed_dim"] = c.embed_dim;
    j["out_dim"] = c.out_dim;
    j["seed"] = c.seed;
    return j;
}

namespace detail {

struct TokenizedExample {
    std::vector<std::uint32_t> question;
    std::vector<std::uint32_t> positive;
    std::vector<std::pair<NegativeKind, std::vector<std::uint32_t>>> negatives;
};

inline std::vector<TokenizedExample> tokenize_examples(
    const std::vector<TrainExample>& examples, const PassageStore& store,
    std::uint32_t vocab) {
    std::vector<TokenizedExample> out;
    out.reserve(examples.size());
    for (const TrainExample& ex : examples) {
        TokenizedExample t;
        t.question = token_ids(tokenize(store.tokenizer, ex.question), vocab);
        if (t.question.empty())
            throw DataError("question tokenizes to nothing: '" + ex.question + "'");
        t.positive = passage_token_ids(store.tokenizer, store.at(ex.positive_pid), vocab);
        for (const Negative& n : ex.negatives)
            t.negatives.emplace_back(
                n.kind, passage_token_ids(store.tokenizer, store.at(n.pid), vocab));
        out.push_back(std::move(t));
    }
    return out;
}

// In-batch hard negatives come from the example's mined list, bm25 kind
// first, capped at the configured total. Explicit mode keeps per-kind caps.
inline TrainBatch assemble_batch(const std::vector<TokenizedExample>& tokenized,
                                 const std::vector<std::size_t>& indices,
                                 std::size_t begin, std::size_t end,
                                 const TrainConfig& cfg) {
    TrainBatch batch;
    for (std::size_t i = begin; i < end; ++i) {
        const TokenizedExample& ex = tokenized[indices[i]];
        batch.questions.push_back(ex.question);
        batch.positives.push_back(ex.positive);
        if (cfg.mode == TrainMode::in_batch) {
            std::uint32_t taken = 0;
            for (NegativeKind kind : {NegativeKind::bm25, NegativeKind::gold_other,
                                      NegativeKind::random}) {
                for (const auto& [nkind, ids] : ex.negatives) {
                    if (nkind != kind || taken == cfg.negatives.total()) continue;
                    batch.hard_negatives.push_back(ids);
                    ++taken;
                }
            }
        } else {
            std::vector<std::vector<std::uint32_t>> negs;
            std::uint32_t counts[3] = {0, 0, 0};
            const std::uint32_t caps[3] = {cfg.negatives.random, cfg.negatives.bm25,
                                           cfg.negatives.gold_other};
            for (const auto& [nkind, ids] : ex.negatives) {
                const auto idx = static_cast<std::size_t>(nkind);
                if (counts[idx] == caps[idx]) continue;
                ++counts[idx];
                negs.push_back(ids);
            }
            batch.explicit_negatives.push_back(std::move(negs));
        }
    }
    return batch;
}

}  // namespace detail

struct TrainResult {
    EncoderParams params;
    std::vector<double> epoch_losses;
    std::uint64_t total_steps = 0;
};

// Seeded epochs over shuffled examples. The per-epoch loss is the
// example-weighted mean of batch losses.
inline TrainResult train(EncoderParams params,
                         const std::vector<TrainExample>& examples,
                         const PassageStore& store, const TrainConfig& cfg) {
    if (examples.empty()) throw DataError("train: no examples");
    if (cfg.batch_size < 1) throw DataError("train: batch_size must be >= 1");
    if (cfg.warmup_frac < 0.0 || cfg.warmup_frac >= 1.0)
        throw DataError("train: warmup_frac must be in [0, 1)");

    const auto tokenized = detail::tokenize_examples(examples, store, params.vocab);
    const std::size_t n = tokenized.size();
    const std::uint64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::uint64_t total_steps = steps_per_epoch * cfg.epochs;

    TrainResult result;
    if (total_steps == 0) {
        result.params = std::move(params);
        return result;
    }

    const auto warmup =
        static_cast<std::uint64_t>(std::llround(cfg.warmup_frac * total_steps));
    OptimizerState state =
        OptimizerState::init(params, cfg.lr, warmup, total_steps, cfg.dropout);

    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;

    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, 0x5481ULL), epoch));
        shuffle_rng.shuffle(indices);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            const TrainBatch batch =
                detail::assemble_batch(tokenized, indices, begin, end, cfg);
            const double loss =
                train_step(params, state, batch, cfg.mode, cfg.similarity, cfg.loss,
                           mix_seed(mix_seed(cfg.seed, 0x57e9ULL), state.step),
                           cfg.margin);
            epoch_loss += loss * static_cast<double>(end - begin);
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
    }
    result.params = std::move(params);
    result.total_steps = state.step;
    return result;
}

// Sidecar next to the model file: the exact config plus the loss trace.
inline void save_model_sidecar(const std::filesystem::path& path,
                               const TrainConfig& cfg, const TrainResult& result) {
    nlohmann::ordered_json j;
    j["config"] = train_config_to_json(cfg);
    j["epoch_losses"] = result.epoch_losses;
    j["final_loss"] =
        result.epoch_losses.empty() ? nlohmann::ordered_json(nullptr)
                                    : nlohmann::ordered_json(result.epoch_losses.back());
    j["total_steps"] = result.total_steps;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write sidecar " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace dpr
