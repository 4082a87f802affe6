#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpr/corpus.hpp"
#include "dpr/dual_encoder.hpp"
#include "dpr/error.hpp"
#include "dpr/io.hpp"
#include "dpr/matrix.hpp"
#include "dpr/optim.hpp"
#include "dpr/qa_dataset.hpp"
#include "dpr/rng.hpp"
#include "dpr/sparse_index.hpp"

namespace dpr {

// ---------------------------------------------------------------------------
// Parameters and featurization. The featurizer is an embedding-table lookup;
// the summary vector (mean of token rows) stands in for a leading summary
// token's row.
// ---------------------------------------------------------------------------

struct ReaderParams {
    std::uint32_t vocab = 0;
    std::uint32_t feat_dim = 0;  // h
    Mat embed;                   // V x h
    std::vector<double> w_start, w_end, w_selected;

    static ReaderParams init(std::uint32_t vocab, std::uint32_t feat_dim,
                             std::uint64_t seed) {
        Rng rng(mix_seed(seed, 0x4ead4ULL));
        ReaderParams p;
        p.vocab = vocab;
        p.feat_dim = feat_dim;
        p.embed = Mat::randn(vocab, feat_dim, 1.0 / std::sqrt(feat_dim), rng);
        const auto draw = [&] {
            std::vector<double> v(feat_dim);
            for (double& x : v) x = rng.normal() / std::sqrt(feat_dim);
            return v;
        };
        p.w_start = draw();
        p.w_end = draw();
        p.w_selected = draw();
        return p;
    }
};

struct PassageRepr {
    Mat token_matrix;             // L x h
    std::vector<double> summary;  // h, mean of token rows
    std::vector<std::uint32_t> ids;
};

inline PassageRepr featurize(const ReaderParams& params,
                             std::span<const std::uint32_t> ids) {
    if (ids.empty()) throw DataError("featurize: empty token list");
    PassageRepr repr;
    repr.ids.assign(ids.begin(), ids.end());
    repr.token_matrix = Mat(ids.size(), params.feat_dim);
    repr.summary.assign(params.feat_dim, 0.0);
    for (std::size_t l = 0; l < ids.size(); ++l) {
        if (ids[l] >= params.vocab)
            throw DataError("featurize: token id out of vocab");
        const auto row = params.embed.row(ids[l]);
        for (std::size_t c = 0; c < params.feat_dim; ++c) {
            repr.token_matrix(l, c) = row[c];
            repr.summary[c] += row[c];
        }
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (double& x : repr.summary) x *= inv;
    return repr;
}

inline std::vector<double> softmax_stable(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& x : p) x /= z;
    return p;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

// P_start = softmax(token_matrix * w_start) and likewise for the end vector.
inline std::pair<std::vector<double>, std::vector<double>> span_distributions(
    const ReaderParams& params, const PassageRepr& repr) {
    const std::size_t L = repr.token_matrix.rows;
    std::vector<double> sa(L), sb(L);
    for (std::size_t l = 0; l < L; ++l) {
        sa[l] = dot(repr.token_matrix.row(l), params.w_start);
        sb[l] = dot(repr.token_matrix.row(l), params.w_end);
    }
    return {softmax_stable(sa), softmax_stable(sb)};
}

// Softmax over summary · w_selected across the candidate passages.
inline std::vector<double> passage_selection(const ReaderParams& params,
                                             const std::vector<PassageRepr>& reprs) {
    if (reprs.empty()) throw DataError("passage_selection: no passages");
    std::vector<double> logits(reprs.size());
    for (std::size_t i = 0; i < reprs.size(); ++i)
        logits[i] = dot(reprs[i].summary, params.w_selected);
    return softmax_stable(logits);
}

struct SpanPrediction {
    std::uint64_t pid = 0;
    std::uint32_t start = 0;
    std::uint32_t end = 0;
    double span_score = 0.0;       // P_start(s) * P_end(t)
    double selection_score = 0.0;  // P_selected of the chosen passage
};

// Highest selection-score passage, then the best admissible span inside it
// (s <= t < s + max_span_len). Ties: smaller (s, t), then smaller pid.
inline SpanPrediction best_span(const ReaderParams& params,
                                const std::vector<PassageRepr>& reprs,
                                const std::vector<std::uint64_t>& pids,
                                std::uint32_t max_span_len) {
    if (reprs.empty() || reprs.size() != pids.size())
        throw DataError("best_span: passages and pids misaligned");
    if (max_span_len < 1) throw DataError("best_span: max_span_len must be >= 1");
    const std::vector<double> sel = passage_selection(params, reprs);
    std::size_t chosen = 0;
    for (std::size_t i = 1; i < reprs.size(); ++i) {
        if (sel[i] > sel[chosen] || (sel[i] == sel[chosen] && pids[i] < pids[chosen]))
            chosen = i;
    }
    const auto [ps, pe] = span_distributions(params, reprs[chosen]);
    const std::size_t L = ps.size();
    SpanPrediction out;
    out.pid = pids[chosen];
    out.selection_score = sel[chosen];
    double best = -1.0;
    for (std::size_t s = 0; s < L; ++s) {
        for (std::size_t t = s; t < std::min(L, s + max_span_len); ++t) {
            const double score = ps[s] * pe[t];
            if (score > best) {
                best = score;
                out.start = static_cast<std::uint32_t>(s);
                out.end = static_cast<std::uint32_t>(t);
                out.span_score = score;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct ReaderGrads {
    Mat d_embed;
    std::vector<double> d_wstart, d_wend, d_wsel;
};

namespace detail {

// d(loss)/d(logits) for p = softmax(logits) given v = d(loss)/d(p).
inline std::vector<double> softmax_backward(const std::vector<double>& p,
                                            const std::vector<double>& v) {
    double inner = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inner += p[i] * v[i];
    std::vector<double> d(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) d[i] = p[i] * (v[i] - inner);
    return d;
}

// Adds each token row's gradient into the embedding table.
inline void scatter_rows(const PassageRepr& repr, const Mat& d_rows, Mat& d_embed) {
    for (std::size_t l = 0; l < repr.ids.size(); ++l) {
        double* dst = d_embed.data.data() +
                      static_cast<std::size_t>(repr.ids[l]) * d_embed.cols;
        const double* src = d_rows.data.data() + l * d_rows.cols;
        for (std::size_t c = 0; c < d_embed.cols; ++c) dst[c] += src[c];
    }
}

}  // namespace detail

// Negative marginal log-likelihood over the gold spans of the positive
// passage plus the negative log-likelihood of selecting it (index 0 of the
// candidate list). Returns analytic gradients for all parameters.
inline double reader_loss_and_grad(const ReaderParams& params,
                                   const PassageRepr& positive,
                                   const std::vector<std::pair<std::uint32_t,
                                                               std::uint32_t>>& gold,
                                   const std::vector<PassageRepr>& negatives,
                                   ReaderGrads& grads) {
    const std::size_t L = positive.token_matrix.rows;
    if (gold.empty()) throw DataError("reader loss: no gold spans");
    for (const auto& [s, t] : gold)
        if (s > t || t >= L) throw DataError("reader loss: span out of range");

    grads.d_embed = Mat(params.vocab, params.feat_dim);
    grads.d_wstart.assign(params.feat_dim, 0.0);
    grads.d_wend.assign(params.feat_dim, 0.0);
    grads.d_wsel.assign(params.feat_dim, 0.0);

    // Span marginal over the positive passage.
    const auto [p, q] = span_distributions(params, positive);
    double marginal = 0.0;
    std::vector<double> start_mass(L, 0.0), end_mass(L, 0.0);
    for (const auto& [s, t] : gold) {
        marginal += p[s] * q[t];
        start_mass[s] += q[t];
        end_mass[t] += p[s];
    }
    const double span_loss = -std::log(marginal);

    std::vector<double> vp(L), vq(L);
    for (std::size_t l = 0; l < L; ++l) {
        vp[l] = -start_mass[l] / marginal;
        vq[l] = -end_mass[l] / marginal;
    }
    const auto da = detail::softmax_backward(p, vp);
    const auto db = detail::softmax_backward(q, vq);

    Mat d_rows(L, params.feat_dim);
    for (std::size_t l = 0; l < L; ++l) {
        const auto row = positive.token_matrix.row(l);
        for (std::size_t c = 0; c < params.feat_dim; ++c) {
            grads.d_wstart[c] += da[l] * row[c];
            grads.d_wend[c] += db[l] * row[c];
            d_rows(l, c) = da[l] * params.w_start[c] + db[l] * params.w_end[c];
        }
    }

    // Selection over [positive, negatives...].
    std::vector<PassageRepr const*> cands;
    cands.push_back(&positive);
    for (const PassageRepr& n : negatives) cands.push_back(&n);
    std::vector<double> logits(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i)
        logits[i] = dot(cands[i]->summary, params.w_selected);
    const auto r = softmax_stable(logits);
    const double selection_loss = -std::log(r[0]);

    for (std::size_t i = 0; i < cands.size(); ++i) {
        const double dc = r[i] - (i == 0 ? 1.0 : 0.0);
        const double inv_len =
            1.0 / static_cast<double>(cands[i]->token_matrix.rows);
        for (std::size_t c = 0; c < params.feat_dim; ++c)
            grads.d_wsel[c] += dc * cands[i]->summary[c];
        // Summary is the row mean, so each token row shares the gradient.
        if (i == 0) {
            for (std::size_t l = 0; l < L; ++l)
                for (std::size_t c = 0; c < params.feat_dim; ++c)
                    d_rows(l, c) += dc * params.w_selected[c] * inv_len;
        } else {
            Mat dn(cands[i]->token_matrix.rows, params.feat_dim);
            for (std::size_t l = 0; l < dn.rows; ++l)
                for (std::size_t c = 0; c < params.feat_dim; ++c)
                    dn(l, c) = dc * params.w_selected[c] * inv_len;
            detail::scatter_rows(*cands[i], dn, grads.d_embed);
        }
    }
    detail::scatter_rows(positive, d_rows, grads.d_embed);

    const double loss = span_loss + selection_loss;
    if (!std::isfinite(loss)) throw InternalError("reader loss is not finite");
    return loss;
}

// One training example: token ids of the positive passage, its gold spans,
// and a pool of negative candidates to sample from.
struct ReaderExample {
    std::string question;
    std::uint64_t positive_pid = 0;
    std::vector<std::uint32_t> positive_ids;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> gold_spans;
    std::vector<std::vector<std::uint32_t>> negative_pool;
    std::vector<std::uint64_t> negative_pids;
};

struct ReaderTrainConfig {
    std::uint32_t batch_size = 4;
    std::uint32_t epochs = 15;
    std::uint32_t m_tilde = 8;  // candidates per example: 1 positive + m~-1 negatives
    double lr = 5e-2;
    std::uint32_t vocab = 8192;
    std::uint32_t feat_dim = 32;
    std::uint64_t seed = 42;
};

struct ReaderTrainResult {
    ReaderParams params;
    std::vector<double> epoch_losses;
};

// Minibatch Adam over sampled candidate sets: per example, the positive plus
// m~-1 negatives drawn from its pool each epoch. Constant learning rate.
inline ReaderTrainResult train_reader(ReaderParams params,
                                      const std::vector<ReaderExample>& examples,
                                      const ReaderTrainConfig& cfg) {
    if (examples.empty()) throw DataError("train_reader: no examples");
    if (cfg.batch_size < 1 || cfg.m_tilde < 1)
        throw DataError("train_reader: bad batch_size or m_tilde");

    ReaderTrainResult result;
    Mat m_embed(params.vocab, params.feat_dim), v_embed(params.vocab, params.feat_dim);
    std::vector<double> m_ws(params.feat_dim, 0.0), v_ws(params.feat_dim, 0.0);
    std::vector<double> m_we(params.feat_dim, 0.0), v_we(params.feat_dim, 0.0);
    std::vector<double> m_wsel(params.feat_dim, 0.0), v_wsel(params.feat_dim, 0.0);
    const AdamConfig adam;
    std::uint64_t step = 0;

    const std::size_t n = examples.size();
    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;

    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng(mix_seed(mix_seed(cfg.seed, 0x4ead5ULL), epoch));
        epoch_rng.shuffle(indices);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            Mat g_embed(params.vocab, params.feat_dim);
            std::vector<double> g_ws(params.feat_dim, 0.0), g_we(params.feat_dim, 0.0),
                g_wsel(params.feat_dim, 0.0);
            const double inv_b = 1.0 / static_cast<double>(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                const ReaderExample& ex = examples[indices[i]];
                // Sample m~-1 negatives without replacement from the pool.
                std::vector<std::size_t> pool(ex.negative_pool.size());
                for (std::size_t j = 0; j < pool.size(); ++j) pool[j] = j;
                epoch_rng.shuffle(pool);
                const std::size_t take =
                    std::min<std::size_t>(cfg.m_tilde - 1, pool.size());
                std::vector<PassageRepr> negatives;
                negatives.reserve(take);
                for (std::size_t j = 0; j < take; ++j)
                    negatives.push_back(
                        featurize(params, ex.negative_pool[pool[j]]));
                const PassageRepr positive = featurize(params, ex.positive_ids);
                ReaderGrads grads;
                const double loss = reader_loss_and_grad(params, positive,
                                                         ex.gold_spans, negatives,
                                                         grads);
                epoch_loss += loss;
                for (std::size_t c = 0; c < params.feat_dim; ++c) {
                    g_ws[c] += grads.d_wstart[c] * inv_b;
                    g_we[c] += grads.d_wend[c] * inv_b;
                    g_wsel[c] += grads.d_wsel[c] * inv_b;
                }
                for (std::size_t c = 0; c < g_embed.data.size(); ++c)
                    g_embed.data[c] += grads.d_embed.data[c] * inv_b;
            }
            ++step;
            adam_step(params.embed.data, g_embed.data, m_embed.data, v_embed.data,
                      adam, step, cfg.lr);
            adam_step(params.w_start, g_ws, m_ws, v_ws, adam, step, cfg.lr);
            adam_step(params.w_end, g_we, m_we, v_we, adam, step, cfg.lr);
            adam_step(params.w_selected, g_wsel, m_wsel, v_wsel, adam, step, cfg.lr);
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
    }
    result.params = std::move(params);
    return result;
}

// All contiguous occurrences of any answer's token sequence in the body
// tokens, as inclusive (start, end) positions, sorted and deduplicated.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> mine_answer_spans(
    const std::vector<std::string>& body_tokens,
    const std::vector<std::string>& answers, const TokenizerConfig& tokenizer) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> spans;
    for (const std::string& answer : answers) {
        const auto atoks = tokenize(tokenizer, answer);
        if (atoks.empty() || atoks.size() > body_tokens.size()) continue;
        for (std::size_t s = 0; s + atoks.size() <= body_tokens.size(); ++s) {
            if (std::equal(atoks.begin(), atoks.end(), body_tokens.begin() + s))
                spans.emplace_back(static_cast<std::uint32_t>(s),
                                   static_cast<std::uint32_t>(s + atoks.size() - 1));
        }
    }
    std::sort(spans.begin(), spans.end());
    spans.erase(std::unique(spans.begin(), spans.end()), spans.end());
    return spans;
}

// Builds reader training examples from QA pairs: the gold-matched passage is
// the positive (its answer occurrences become the gold spans) and the
// negative pool is the answer-free lexical top passages for the question.
// The reader reads body tokens only, so span positions index the body.
inline std::vector<ReaderExample> build_reader_examples(
    const std::vector<QAPair>& pairs, const PassageStore& store,
    const InvertedIndex& index, std::uint32_t vocab,
    std::size_t pool_size = 20) {
    std::vector<ReaderExample> out;
    for (const QAPair& pair : pairs) {
        const auto pid = match_gold_positive(pair, store);
        if (!pid) continue;
        const Passage& positive = store.at(*pid);
        ReaderExample ex;
        ex.question = pair.question;
        ex.positive_pid = *pid;
        ex.gold_spans =
            mine_answer_spans(positive.body_tokens, pair.answers, store.tokenizer);
        if (ex.gold_spans.empty() || positive.body_tokens.empty()) continue;
        ex.positive_ids = token_ids(positive.body_tokens, vocab);
        const auto hits =
            bm25_search(index, tokenize(index.tokenizer, pair.question), pool_size);
        for (const ScoredPassage& hit : hits) {
            if (hit.pid == *pid) continue;
            const Passage& p = store.at(hit.pid);
            if (p.body_tokens.empty() || contains_answer(p.body_text, pair.answers))
                continue;
            ex.negative_pool.push_back(token_ids(p.body_tokens, vocab));
            ex.negative_pids.push_back(hit.pid);
        }
        out.push_back(std::move(ex));
    }
    if (out.empty()) throw DataError("no reader examples could be built");
    return out;
}

// ---------------------------------------------------------------------------
// Model file: magic "DPRR", version u32, vocab u32, feat_dim u32, then f32
// embed rows and the three weight vectors.
// ---------------------------------------------------------------------------

inline void save_reader(const ReaderParams& params,
                        const std::filesystem::path& path) {
    BinaryWriter w(path);
    w.magic("DPRR");
    w.u32(1);
    w.u32(params.vocab);
    w.u32(params.feat_dim);
    for (double x : params.embed.data) w.f32(static_cast<float>(x));
    for (const auto* v : {&params.w_start, &params.w_end, &params.w_selected})
        for (double x : *v) w.f32(static_cast<float>(x));
    w.close();
}

inline ReaderParams load_reader(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("DPRR");
    if (r.u32() != 1) throw DataError("unsupported reader file version");
    ReaderParams p;
    p.vocab = r.u32();
    p.feat_dim = r.u32();
    p.embed = Mat(p.vocab, p.feat_dim);
    for (double& x : p.embed.data) x = static_cast<double>(r.f32());
    for (auto* v : {&p.w_start, &p.w_end, &p.w_selected}) {
        v->resize(p.feat_dim);
        for (double& x : *v) x = static_cast<double>(r.f32());
    }
    return p;
}

}  // namespace dpr
