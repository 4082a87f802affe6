#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dpr/corpus.hpp"
#include "dpr/error.hpp"
#include "dpr/io.hpp"
#include "dpr/matrix.hpp"
#include "dpr/optim.hpp"
#include "dpr/rng.hpp"

namespace dpr {

// ---------------------------------------------------------------------------
// Token ids. The encoder uses the hashing trick: a token maps to
// fnv1a64(token) % (V-1) + 1, so no vocabulary file is needed and any input
// token gets an id < V. Id 0 is reserved for the title/body separator.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kSepTokenId = 0;

inline std::uint32_t token_id(std::string_view token, std::uint32_t vocab_size) {
    return static_cast<std::uint32_t>(fnv1a64(token) % (vocab_size - 1)) + 1;
}

inline std::vector<std::uint32_t> token_ids(const std::vector<std::string>& tokens,
                                            std::uint32_t vocab_size) {
    std::vector<std::uint32_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(token_id(t, vocab_size));
    return ids;
}

// Title tokens, separator sentinel, then body tokens.
inline std::vector<std::uint32_t> passage_token_ids(const TokenizerConfig& config,
                                                    const Passage& p,
                                                    std::uint32_t vocab_size) {
    std::vector<std::uint32_t> ids = token_ids(tokenize(config, p.title), vocab_size);
    ids.push_back(kSepTokenId);
    for (const auto& t : p.body_tokens) ids.push_back(token_id(t, vocab_size));
    return ids;
}

// ---------------------------------------------------------------------------
// Parameters and forward pass
// ---------------------------------------------------------------------------

enum class Tower { question, passage };
enum class SimilarityKind { dot, cosine, neg_l2 };
enum class LossKind { nll, triplet };
enum class TrainMode { in_batch, explicit_negatives };

// Shared token-embedding table with independent per-tower projections. The
// two towers are independent at the projection level.
struct EncoderParams {
    std::uint32_t vocab = 0;      // V
    std::uint32_t embed_dim = 0;  // e
    std::uint32_t out_dim = 0;    // d
    Mat vocab_embed;              // V x e
    Mat proj_q;                   // e x d
    Mat proj_p;                   // e x d

    static EncoderParams init(std::uint32_t vocab, std::uint32_t embed_dim,
                              std::uint32_t out_dim, std::uint64_t seed) {
        Rng rng(mix_seed(seed, 0x456e63ULL));
        EncoderParams p;
        p.vocab = vocab;
        p.embed_dim = embed_dim;
        p.out_dim = out_dim;
        p.vocab_embed = Mat::randn(vocab, embed_dim, 1.0 / std::sqrt(embed_dim), rng);
        p.proj_q = Mat::randn(embed_dim, out_dim, 1.0 / std::sqrt(embed_dim), rng);
        p.proj_p = Mat::randn(embed_dim, out_dim, 1.0 / std::sqrt(embed_dim), rng);
        return p;
    }

    const Mat& proj(Tower tower) const {
        return tower == Tower::question ? proj_q : proj_p;
    }
};

inline std::vector<double> mean_pool(const EncoderParams& params,
                                     std::span<const std::uint32_t> ids) {
    if (ids.empty()) throw DataError("encode: empty token list");
    std::vector<double> pooled(params.embed_dim, 0.0);
    for (std::uint32_t id : ids) {
        if (id >= params.vocab)
            throw DataError("token id " + std::to_string(id) + " out of vocab");
        const auto row = params.vocab_embed.row(id);
        for (std::size_t c = 0; c < pooled.size(); ++c) pooled[c] += row[c];
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (double& x : pooled) x *= inv;
    return pooled;
}

// Mean of embedding rows, projected by the tower matrix. Deterministic;
// dropout exists only inside train_step.
inline std::vector<double> encode(const EncoderParams& params,
                                  std::span<const std::uint32_t> ids, Tower tower) {
    return vec_mat(mean_pool(params, ids), params.proj(tower));
}

inline double similarity(SimilarityKind kind, std::span<const double> q,
                         std::span<const double> p) {
    if (q.size() != p.size()) throw DataError("similarity: dimension mismatch");
    switch (kind) {
        case SimilarityKind::dot:
            return dot(q, p);
        case SimilarityKind::cosine: {
            const double nq = norm(q), np = norm(p);
            if (nq == 0.0 || np == 0.0)
                throw DataError("cosine similarity undefined for zero vector");
            return dot(q, p) / (nq * np);
        }
        case SimilarityKind::neg_l2: {
            double s = 0.0;
            for (std::size_t i = 0; i < q.size(); ++i) {
                const double diff = q[i] - p[i];
                s += diff * diff;
            }
            return -std::sqrt(s);
        }
    }
    return 0.0;
}

// Accumulates d(sim)/dq into gq and d(sim)/dp into gp, scaled by upstream ds.
// neg_l2 uses subgradient 0 at q == p.
inline void similarity_backward(SimilarityKind kind, std::span<const double> q,
                                std::span<const double> p, double ds,
                                std::span<double> gq, std::span<double> gp) {
    const std::size_t n = q.size();
    switch (kind) {
        case SimilarityKind::dot:
            for (std::size_t i = 0; i < n; ++i) {
                gq[i] += ds * p[i];
                gp[i] += ds * q[i];
            }
            break;
        case SimilarityKind::cosine: {
            const double nq = norm(q), np = norm(p);
            const double s = dot(q, p) / (nq * np);
            for (std::size_t i = 0; i < n; ++i) {
                gq[i] += ds * (p[i] / (nq * np) - s * q[i] / (nq * nq));
                gp[i] += ds * (q[i] / (nq * np) - s * p[i] / (np * np));
            }
            break;
        }
        case SimilarityKind::neg_l2: {
            double dist = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double diff = q[i] - p[i];
                dist += diff * diff;
            }
            dist = std::sqrt(dist);
            if (dist == 0.0) break;
            for (std::size_t i = 0; i < n; ++i) {
                const double g = (q[i] - p[i]) / dist;
                gq[i] += ds * -g;
                gp[i] += ds * g;
            }
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct RowLoss {
    double loss;
    std::vector<double> grad;  // d(loss)/d(score) per row entry
};

// -log softmax(row)[label] with max-subtraction; grad = softmax - onehot.
inline RowLoss nll_loss_and_grad(std::span<const double> row, std::size_t label) {
    if (label >= row.size()) throw DataError("nll: label out of range");
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    std::vector<double> p(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        p[i] = std::exp(row[i] - mx);
        z += p[i];
    }
    for (double& x : p) x /= z;
    RowLoss out;
    out.loss = -(row[label] - mx - std::log(z));
    out.grad = std::move(p);
    out.grad[label] -= 1.0;
    return out;
}

struct TripletLoss {
    double loss;
    double grad_pos;
    double grad_neg;
};

// Hinge on the similarity gap; subgradient 0 exactly at the corner.
inline TripletLoss triplet_loss_and_grad(double sim_pos, double sim_neg,
                                         double margin) {
    if (margin <= 0.0) throw DataError("triplet margin must be positive");
    const double gap = margin - sim_pos + sim_neg;
    if (gap > 0.0) return {gap, -1.0, 1.0};
    return {0.0, 0.0, 0.0};
}

// ---------------------------------------------------------------------------
// Batches and the in-batch score matrix
// ---------------------------------------------------------------------------

struct TrainBatch {
    std::vector<std::vector<std::uint32_t>> questions;  // B
    std::vector<std::vector<std::uint32_t>> positives;  // B
    // In-batch mode: h hard negatives per example, grouped by example, shared
    // across all rows. Explicit mode: each example's own negative list.
    std::vector<std::vector<std::uint32_t>> hard_negatives;  // B*h
    std::vector<std::vector<std::vector<std::uint32_t>>> explicit_negatives;  // B

    std::size_t size() const { return questions.size(); }
    std::size_t hard_per_example() const {
        return questions.empty() ? 0 : hard_negatives.size() / questions.size();
    }
};

// Row i: question i against the B in-batch positives followed by the B*h
// shared hard negatives. The gold column for row i is i.
inline Mat in_batch_scores(const EncoderParams& params, const TrainBatch& batch,
                           SimilarityKind kind) {
    const std::size_t b = batch.size();
    const std::size_t cols = b + batch.hard_negatives.size();
    std::vector<std::vector<double>> q(b), p(cols);
    for (std::size_t i = 0; i < b; ++i)
        q[i] = encode(params, batch.questions[i], Tower::question);
    for (std::size_t j = 0; j < b; ++j)
        p[j] = encode(params, batch.positives[j], Tower::passage);
    for (std::size_t j = 0; j < batch.hard_negatives.size(); ++j)
        p[b + j] = encode(params, batch.hard_negatives[j], Tower::passage);
    Mat scores(b, cols);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            scores(i, j) = similarity(kind, q[i], p[j]);
    return scores;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
    Mat m_embed, v_embed, m_pq, v_pq, m_pp, v_pp;
    std::uint64_t step = 0;
    double base_lr = 1e-2;
    std::uint64_t warmup_steps = 0;
    std::uint64_t total_steps = 1;
    double dropout_rate = 0.1;
    AdamConfig adam;

    static OptimizerState init(const EncoderParams& params, double base_lr,
                               std::uint64_t warmup_steps, std::uint64_t total_steps,
                               double dropout_rate) {
        OptimizerState s;
        s.m_embed = Mat(params.vocab, params.embed_dim);
        s.v_embed = Mat(params.vocab, params.embed_dim);
        s.m_pq = Mat(params.embed_dim, params.out_dim);
        s.v_pq = Mat(params.embed_dim, params.out_dim);
        s.m_pp = Mat(params.embed_dim, params.out_dim);
        s.v_pp = Mat(params.embed_dim, params.out_dim);
        s.base_lr = base_lr;
        s.warmup_steps = warmup_steps;
        s.total_steps = total_steps;
        s.dropout_rate = dropout_rate;
        return s;
    }
};

// Linear ramp 0 -> base_lr over warmup_steps, then linear decay to 0 at
// total_steps.
inline double lr_at_step(const OptimizerState& state, std::uint64_t step) {
    if (state.total_steps <= state.warmup_steps)
        throw DataError("lr schedule: total_steps must exceed warmup_steps");
    if (step >= state.total_steps) return 0.0;
    if (state.warmup_steps > 0 && step <= state.warmup_steps)
        return state.base_lr * static_cast<double>(step) /
               static_cast<double>(state.warmup_steps);
    return state.base_lr *
           static_cast<double>(state.total_steps - step) /
           static_cast<double>(state.total_steps - state.warmup_steps);
}

namespace detail {

inline void adam_update(Mat& param, const Mat& grad, Mat& m, Mat& v,
                        const OptimizerState& s, double lr) {
    adam_step(param.data, grad.data, m.data, v.data, s.adam, s.step, lr);
}

struct EncodedText {
    std::vector<double> pooled;   // after dropout
    std::vector<double> mask;     // dropout keep-scale per component
    std::vector<double> output;   // pooled^T * proj
};

inline EncodedText encode_for_training(const EncoderParams& params,
                                       std::span<const std::uint32_t> ids,
                                       Tower tower, double dropout_rate, Rng& rng) {
    EncodedText enc;
    enc.pooled = mean_pool(params, ids);
    enc.mask.assign(params.embed_dim, 1.0);
    if (dropout_rate > 0.0) {
        const double keep = 1.0 - dropout_rate;
        for (std::size_t i = 0; i < enc.mask.size(); ++i) {
            enc.mask[i] = (rng.uniform() < dropout_rate) ? 0.0 : 1.0 / keep;
            enc.pooled[i] *= enc.mask[i];
        }
    }
    enc.output = vec_mat(enc.pooled, params.proj(tower));
    return enc;
}

// Routes d(output) back through projection, dropout and mean pooling.
inline void encode_backward(const EncoderParams& params,
                            std::span<const std::uint32_t> ids, Tower tower,
                            const EncodedText& enc, std::span<const double> dout,
                            Mat& g_embed, Mat& g_proj) {
    const Mat& proj = params.proj(tower);
    const std::size_t e = params.embed_dim, d = params.out_dim;
    for (std::size_t r = 0; r < e; ++r) {
        const double x = enc.pooled[r];
        if (x != 0.0) {
            double* gp = g_proj.data.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) gp[c] += x * dout[c];
        }
    }
    std::vector<double> dpooled(e, 0.0);
    for (std::size_t r = 0; r < e; ++r) {
        const double* pr = proj.data.data() + r * d;
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += pr[c] * dout[c];
        dpooled[r] = s * enc.mask[r];
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (std::uint32_t id : ids) {
        double* ge = g_embed.data.data() + static_cast<std::size_t>(id) * e;
        for (std::size_t r = 0; r < e; ++r) ge[r] += dpooled[r] * inv;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loss and analytic gradients for one batch: forward pass, loss, and full
// backpropagation through similarity, dropout, pooling, projections, and
// embedding rows. Mean over examples. No parameter update.
// ---------------------------------------------------------------------------

struct EncoderGrads {
    double loss = 0.0;
    Mat g_embed;
    Mat g_pq;
    Mat g_pp;
};

inline EncoderGrads encoder_loss_and_grads(const EncoderParams& params,
                                           const TrainBatch& batch, TrainMode mode,
                                           SimilarityKind kind, LossKind loss_kind,
                                           double dropout_rate, Rng& dropout_rng,
                                           double triplet_margin = 1.0) {
    const std::size_t b = batch.size();
    if (b == 0) throw DataError("train_step: empty batch");

    EncoderGrads out;
    out.g_embed = Mat(params.vocab, params.embed_dim);
    out.g_pq = Mat(params.embed_dim, params.out_dim);
    out.g_pp = Mat(params.embed_dim, params.out_dim);
    Mat& g_embed = out.g_embed;
    Mat& g_pq = out.g_pq;
    Mat& g_pp = out.g_pp;
    double& total_loss = out.loss;

    // Dropout masks are drawn in a fixed order: all questions, then all
    // passages in batch order.
    std::vector<detail::EncodedText> q(b);
    for (std::size_t i = 0; i < b; ++i)
        q[i] = detail::encode_for_training(params, batch.questions[i], Tower::question,
                                           dropout_rate, dropout_rng);

    const double inv_b = 1.0 / static_cast<double>(b);

    if (mode == TrainMode::in_batch) {
        const std::size_t cols = b + batch.hard_negatives.size();
        std::vector<detail::EncodedText> p(cols);
        std::vector<std::span<const std::uint32_t>> p_ids(cols);
        for (std::size_t j = 0; j < b; ++j) {
            p[j] = detail::encode_for_training(params, batch.positives[j],
                                               Tower::passage, dropout_rate,
                                               dropout_rng);
            p_ids[j] = batch.positives[j];
        }
        for (std::size_t j = 0; j < batch.hard_negatives.size(); ++j) {
            p[b + j] = detail::encode_for_training(params, batch.hard_negatives[j],
                                                   Tower::passage, dropout_rate,
                                                   dropout_rng);
            p_ids[b + j] = batch.hard_negatives[j];
        }

        Mat scores(b, cols);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                scores(i, j) = similarity(kind, q[i].output, p[j].output);

        Mat dscores(b, cols);
        for (std::size_t i = 0; i < b; ++i) {
            if (loss_kind == LossKind::nll) {
                RowLoss rl = nll_loss_and_grad(scores.row(i), i);
                total_loss += rl.loss * inv_b;
                for (std::size_t j = 0; j < cols; ++j)
                    dscores(i, j) = rl.grad[j] * inv_b;
            } else {
                const std::size_t negs = cols - 1;
                const double inv_n = negs > 0 ? 1.0 / static_cast<double>(negs) : 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    if (j == i) continue;
                    TripletLoss tl = triplet_loss_and_grad(scores(i, i), scores(i, j),
                                                           triplet_margin);
                    total_loss += tl.loss * inv_n * inv_b;
                    dscores(i, i) += tl.grad_pos * inv_n * inv_b;
                    dscores(i, j) += tl.grad_neg * inv_n * inv_b;
                }
            }
        }

        std::vector<std::vector<double>> gq(b), gp(cols);
        for (std::size_t i = 0; i < b; ++i) gq[i].assign(params.out_dim, 0.0);
        for (std::size_t j = 0; j < cols; ++j) gp[j].assign(params.out_dim, 0.0);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                if (dscores(i, j) != 0.0)
                    similarity_backward(kind, q[i].output, p[j].output, dscores(i, j),
                                        gq[i], gp[j]);
        for (std::size_t i = 0; i < b; ++i)
            detail::encode_backward(params, batch.questions[i], Tower::question, q[i],
                                    gq[i], g_embed, g_pq);
        for (std::size_t j = 0; j < cols; ++j)
            detail::encode_backward(params, p_ids[j], Tower::passage, p[j], gp[j],
                                    g_embed, g_pp);
    } else {
        if (batch.explicit_negatives.size() != b)
            throw DataError("train_step: explicit mode needs per-example negatives");
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<detail::EncodedText> p;
            std::vector<std::span<const std::uint32_t>> p_ids;
            p.push_back(detail::encode_for_training(params, batch.positives[i],
                                                    Tower::passage, dropout_rate,
                                                    dropout_rng));
            p_ids.push_back(batch.positives[i]);
            for (const auto& neg : batch.explicit_negatives[i]) {
                p.push_back(detail::encode_for_training(params, neg, Tower::passage,
                                                        dropout_rate,
                                                        dropout_rng));
                p_ids.push_back(neg);
            }

            std::vector<double> row(p.size());
            for (std::size_t j = 0; j < p.size(); ++j)
                row[j] = similarity(kind, q[i].output, p[j].output);

            std::vector<double> drow(p.size(), 0.0);
            if (loss_kind == LossKind::nll) {
                RowLoss rl = nll_loss_and_grad(row, 0);
                total_loss += rl.loss * inv_b;
                for (std::size_t j = 0; j < p.size(); ++j) drow[j] = rl.grad[j] * inv_b;
            } else {
                const std::size_t negs = p.size() - 1;
                const double inv_n = negs > 0 ? 1.0 / static_cast<double>(negs) : 0.0;
                for (std::size_t j = 1; j < p.size(); ++j) {
                    TripletLoss tl =
                        triplet_loss_and_grad(row[0], row[j], triplet_margin);
                    total_loss += tl.loss * inv_n * inv_b;
                    drow[0] += tl.grad_pos * inv_n * inv_b;
                    drow[j] += tl.grad_neg * inv_n * inv_b;
                }
            }

            std::vector<double> gq(params.out_dim, 0.0);
            std::vector<std::vector<double>> gp(p.size());
            for (std::size_t j = 0; j < p.size(); ++j) {
                gp[j].assign(params.out_dim, 0.0);
                if (drow[j] != 0.0)
                    similarity_backward(kind, q[i].output, p[j].output, drow[j], gq,
                                        gp[j]);
            }
            detail::encode_backward(params, batch.questions[i], Tower::question, q[i],
                                    gq, g_embed, g_pq);
            for (std::size_t j = 0; j < p.size(); ++j)
                detail::encode_backward(params, p_ids[j], Tower::passage, p[j], gp[j],
                                        g_embed, g_pp);
        }
    }

    return out;
}

// ---------------------------------------------------------------------------
// One optimization step: gradients, then Adam with warmup/decay. Deterministic
// given (params, state, batch, seed). Returns the batch loss.
// ---------------------------------------------------------------------------

inline double train_step(EncoderParams& params, OptimizerState& state,
                         const TrainBatch& batch, TrainMode mode,
                         SimilarityKind kind, LossKind loss_kind,
                         std::uint64_t seed, double triplet_margin = 1.0) {
    Rng dropout_rng(mix_seed(seed, 0xd0d0ULL));
    const EncoderGrads g =
        encoder_loss_and_grads(params, batch, mode, kind, loss_kind,
                               state.dropout_rate, dropout_rng, triplet_margin);
    if (!std::isfinite(g.loss))
        throw InternalError("non-finite loss at step " + std::to_string(state.step));

    state.step += 1;
    const double lr = lr_at_step(state, state.step);
    if (lr != 0.0) {
        detail::adam_update(params.vocab_embed, g.g_embed, state.m_embed,
                            state.v_embed, state, lr);
        detail::adam_update(params.proj_q, g.g_pq, state.m_pq, state.v_pq, state, lr);
        detail::adam_update(params.proj_p, g.g_pp, state.m_pp, state.v_pp, state, lr);
    }
    return g.loss;
}

// ---------------------------------------------------------------------------
// Model file: magic "DPRM", version u32, V u32, e u32, d u32, then f32
// little-endian row-major vocab_embed, proj_q, proj_p.
// ---------------------------------------------------------------------------

inline void save_model(const EncoderParams& params, const std::filesystem::path& path) {
    BinaryWriter w(path);
    w.magic("DPRM");
    w.u32(1);
    w.u32(params.vocab);
    w.u32(params.embed_dim);
    w.u32(params.out_dim);
    for (const Mat* m : {&params.vocab_embed, &params.proj_q, &params.proj_p})
        for (double x : m->data) w.f32(static_cast<float>(x));
    w.close();
}

inline EncoderParams load_model(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("DPRM");
    if (r.u32() != 1) throw DataError("unsupported model version");
    EncoderParams p;
    p.vocab = r.u32();
    p.embed_dim = r.u32();
    p.out_dim = r.u32();
    p.vocab_embed = Mat(p.vocab, p.embed_dim);
    p.proj_q = Mat(p.embed_dim, p.out_dim);
    p.proj_p = Mat(p.embed_dim, p.out_dim);
    for (Mat* m : {&p.vocab_embed, &p.proj_q, &p.proj_p})
        for (double& x : m->data) x = static_cast<double>(r.f32());
    return p;
}

}  // namespace dpr
