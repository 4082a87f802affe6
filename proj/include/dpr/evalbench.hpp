#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpr/dense_index.hpp"
#include "dpr/error.hpp"
#include "dpr/io.hpp"
#include "dpr/qa_dataset.hpp"
#include "dpr/ranking.hpp"
#include "dpr/rng.hpp"
#include "dpr/text_match.hpp"
#include "dpr/trainer.hpp"

namespace dpr {

// ---------------------------------------------------------------------------
// Retrieval accuracy
// ---------------------------------------------------------------------------

struct EvalReport {
    std::map<std::uint32_t, double> accuracy_at;  // k -> fraction
    std::size_t questions = 0;
    std::string fingerprint;
};

// Fraction of questions whose top-k results include at least one passage
// whose body contains an answer. Results must be aligned 1:1 with pairs.
inline EvalReport top_k_accuracy(const std::vector<RankedList>& results,
                                 const std::vector<QAPair>& pairs,
                                 const PassageStore& store,
                                 const std::vector<std::uint32_t>& ks) {
    if (results.size() != pairs.size())
        throw DataError("top_k_accuracy: results and pairs misaligned");
    if (pairs.empty()) throw DataError("top_k_accuracy: empty evaluation set");
    EvalReport report;
    report.questions = pairs.size();
    for (std::uint32_t k : ks) report.accuracy_at[k] = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        // Rank of the first answer-bearing passage; never counted if absent.
        std::size_t first_hit = std::numeric_limits<std::size_t>::max();
        for (std::size_t r = 0; r < results[i].size(); ++r) {
            if (contains_answer(store.at(results[i][r].pid).body_text,
                                pairs[i].answers)) {
                first_hit = r;
                break;
            }
        }
        for (std::uint32_t k : ks)
            if (first_hit < k) report.accuracy_at[k] += 1.0;
    }
    for (auto& [k, acc] : report.accuracy_at)
        acc /= static_cast<double>(pairs.size());
    return report;
}

// Fraction of predictions whose normalized text equals any normalized
// reference answer of the aligned pair.
inline double exact_match(const std::vector<std::string>& predictions,
                          const std::vector<QAPair>& pairs) {
    if (predictions.size() != pairs.size())
        throw DataError("exact_match: predictions and pairs misaligned");
    if (pairs.empty()) throw DataError("exact_match: empty evaluation set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const std::string pred = normalize_answer(predictions[i]);
        for (const std::string& answer : pairs[i].answers) {
            if (!pred.empty() && pred == normalize_answer(answer)) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

// Provenance fingerprint: chained 64-bit FNV-1a over input file bytes and the
// resolved config text, rendered as hex.
inline std::string config_fingerprint(
    const std::vector<std::filesystem::path>& files,
    const std::string& config_text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& path : files) h = fnv1a64(read_text_file(path), h);
    h = fnv1a64(config_text, h);
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

// ---------------------------------------------------------------------------
// Ablation sweep: one training configuration per cell, each trained from
// scratch with the cell's seed, evaluated by exact dense retrieval.
// ---------------------------------------------------------------------------

struct AblationCell {
    std::string name;
    TrainConfig config;
};

struct AblationRow {
    std::string name;
    TrainConfig config;
    double top5 = 0.0, top20 = 0.0, top100 = 0.0;
    std::string status = "ok";
};

inline std::string describe_negatives(const NegativeCounts& n) {
    std::string out;
    const auto add = [&](const char* kind, std::uint32_t count) {
        if (count == 0) return;
        if (!out.empty()) out += "+";
        out += kind;
        out += "=";
        out += std::to_string(count);
    };
    add("bm25", n.bm25);
    add("gold_other", n.gold_other);
    add("random", n.random);
    return out.empty() ? "none" : out;
}

inline std::vector<NegativeSpec> negative_specs_for(const NegativeCounts& n) {
    std::vector<NegativeSpec> specs;
    if (n.bm25 > 0) specs.push_back({NegativeKind::bm25, n.bm25});
    if (n.gold_other > 0) specs.push_back({NegativeKind::gold_other, n.gold_other});
    if (n.random > 0) specs.push_back({NegativeKind::random, n.random});
    return specs;
}

// The default grid: batch-size trend, hard-negative effect, pure explicit
// negative types, and the similarity x loss study. Batch-size cells match
// optimizer step counts (epochs scale with batch size), so the comparison
// isolates the number of in-batch negatives rather than the step budget.
inline std::vector<AblationCell> default_ablation_grid(const TrainConfig& base) {
    std::vector<AblationCell> grid;
    const auto cell = [&](std::string name, auto&& mutate) {
        TrainConfig cfg = base;
        cfg.negatives = NegativeCounts{0, 0, 0};
        cfg.mode = TrainMode::in_batch;
        cfg.batch_size = 32;
        mutate(cfg);
        grid.push_back({std::move(name), cfg});
    };
    cell("inbatch_gold_b8", [](TrainConfig& c) {
        c.batch_size = 8;
        c.epochs = std::max<std::uint32_t>(1, c.epochs * 8 / 32);
    });
    cell("inbatch_gold_b32", [](TrainConfig&) {});
    cell("inbatch_gold_bm25_1_b32",
         [](TrainConfig& c) { c.negatives.bm25 = 1; });
    cell("explicit_rand7_b32", [](TrainConfig& c) {
        c.mode = TrainMode::explicit_negatives;
        c.negatives.random = 7;
    });
    cell("explicit_bm25_7_b32", [](TrainConfig& c) {
        c.mode = TrainMode::explicit_negatives;
        c.negatives.bm25 = 7;
    });
    cell("explicit_gold7_b32", [](TrainConfig& c) {
        c.mode = TrainMode::explicit_negatives;
        c.negatives.gold_other = 7;
    });
    cell("study_dot_nll", [](TrainConfig&) {});
    cell("study_dot_triplet",
         [](TrainConfig& c) { c.loss = LossKind::triplet; });
    cell("study_l2_nll",
         [](TrainConfig& c) { c.similarity = SimilarityKind::neg_l2; });
    cell("study_l2_triplet", [](TrainConfig& c) {
        c.similarity = SimilarityKind::neg_l2;
        c.loss = LossKind::triplet;
    });
    return grid;
}

namespace detail {

// Trains one configuration and evaluates exact dense retrieval top-k.
inline AblationRow run_ablation_cell(const AblationCell& cell,
                                     const PassageStore& store,
                                     const InvertedIndex& sparse,
                                     const std::vector<QAPair>& train_pairs,
                                     const std::vector<QAPair>& eval_pairs) {
    AblationRow row;
    row.name = cell.name;
    row.config = cell.config;
    const TrainConfig& cfg = cell.config;
    const auto examples =
        build_training_set(train_pairs, store, sparse,
                           negative_specs_for(cfg.negatives),
                           PositiveMode::gold, cfg.seed, nullptr);
    EncoderParams params = EncoderParams::init(cfg.vocab, cfg.embed_dim,
                                               cfg.out_dim, cfg.seed);
    const TrainResult trained = train(std::move(params), examples, store, cfg);
    const VectorStore vectors = embed_store(trained.params, store);
    std::vector<RankedList> results;
    results.reserve(eval_pairs.size());
    for (const QAPair& pair : eval_pairs) {
        const auto q_ids = token_ids(tokenize(store.tokenizer, pair.question),
                                     trained.params.vocab);
        const auto q_vec = encode(trained.params, q_ids, Tower::question);
        results.push_back(exact_search(vectors, q_vec, 100));
    }
    const EvalReport report =
        top_k_accuracy(results, eval_pairs, store, {5, 20, 100});
    row.top5 = report.accuracy_at.at(5);
    row.top20 = report.accuracy_at.at(20);
    row.top100 = report.accuracy_at.at(100);
    return row;
}

}  // namespace detail

// Runs every cell; a cell failure is recorded in its status column and the
// sweep continues.
inline std::vector<AblationRow> ablation_sweep(
    const std::vector<AblationCell>& grid, const PassageStore& store,
    const InvertedIndex& sparse, const std::vector<QAPair>& train_pairs,
    const std::vector<QAPair>& eval_pairs) {
    if (grid.empty()) throw DataError("ablation_sweep: empty grid");
    std::vector<AblationRow> rows;
    rows.reserve(grid.size());
    for (const AblationCell& cell : grid) {
        try {
            rows.push_back(detail::run_ablation_cell(cell, store, sparse,
                                                     train_pairs, eval_pairs));
        } catch (const std::exception& e) {
            AblationRow row;
            row.name = cell.name;
            row.config = cell.config;
            row.status = std::string("failed: ") + e.what();
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "name,mode,loss,similarity,batch_size,negatives,top5,top20,top100,status\n";
    for (const AblationRow& r : rows) {
        std::string status = r.status;
        for (char& c : status)
            if (c == ',' || c == '\n') c = ';';
        out << r.name << ',' << to_string(r.config.mode) << ','
            << to_string(r.config.loss) << ',' << to_string(r.config.similarity)
            << ',' << r.config.batch_size << ','
            << describe_negatives(r.config.negatives) << ',' << r.top5 << ','
            << r.top20 << ',' << r.top100 << ',' << status << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Sample-efficiency curve: train on ascending prefixes of the QA pairs and
// report accuracy per size next to the fixed BM25 baseline.
// ---------------------------------------------------------------------------

struct CurveRow {
    std::size_t requested = 0;
    std::size_t used = 0;  // min(requested, available)
    double top5 = 0.0, top20 = 0.0, top100 = 0.0;
};

struct CurveReport {
    std::vector<CurveRow> rows;
    double bm25_top20 = 0.0;
    // Smallest used size whose dense top-20 matches or beats BM25; -1 if none.
    long long crossover_size = -1;
    std::vector<std::string> notes;
};

inline CurveReport sample_efficiency_curve(const std::vector<std::size_t>& sizes,
                                           const PassageStore& store,
                                           const InvertedIndex& sparse,
                                           const std::vector<QAPair>& train_pairs,
                                           const std::vector<QAPair>& eval_pairs,
                                           const TrainConfig& base) {
    if (sizes.empty()) throw DataError("sample_efficiency_curve: no sizes");
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] <= sizes[i - 1])
            throw DataError("sample_efficiency_curve: sizes must be ascending");

    CurveReport report;
    {
        std::vector<RankedList> bm25_results;
        bm25_results.reserve(eval_pairs.size());
        for (const QAPair& pair : eval_pairs)
            bm25_results.push_back(bm25_search(
                sparse, tokenize(sparse.tokenizer, pair.question), 100));
        report.bm25_top20 =
            top_k_accuracy(bm25_results, eval_pairs, store, {20}).accuracy_at.at(20);
    }

    for (std::size_t requested : sizes) {
        CurveRow row;
        row.requested = requested;
        row.used = std::min(requested, train_pairs.size());
        if (row.used < requested)
            report.notes.push_back("size " + std::to_string(requested) +
                                   " capped to " + std::to_string(row.used) +
                                   " available pairs");
        const std::vector<QAPair> prefix(train_pairs.begin(),
                                         train_pairs.begin() +
                                             static_cast<std::ptrdiff_t>(row.used));
        AblationCell cell{"curve_" + std::to_string(row.used), base};
        const AblationRow trained = detail::run_ablation_cell(
            cell, store, sparse, prefix, eval_pairs);
        if (trained.status != "ok")
            throw InternalError("curve training failed: " + trained.status);
        row.top5 = trained.top5;
        row.top20 = trained.top20;
        row.top100 = trained.top100;
        if (report.crossover_size < 0 && row.top20 >= report.bm25_top20)
            report.crossover_size = static_cast<long long>(row.used);
        report.rows.push_back(row);
    }
    return report;
}

inline std::string curve_csv(const CurveReport& report) {
    std::ostringstream out;
    out << "size,top5,top20,top100,bm25_top20,crossover_size\n";
    for (const CurveRow& r : report.rows)
        out << r.used << ',' << r.top5 << ',' << r.top20 << ',' << r.top100
            << ',' << report.bm25_top20 << ',' << report.crossover_size << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Throughput bench
// ---------------------------------------------------------------------------

struct BenchReport {
    std::string backend;
    double qps = 0.0;
    double build_s = 0.0;
    double embed_s = 0.0;
    std::string hardware_note;
};

// Runs `warmup` queries unmeasured, then whole passes over the query set
// until `min_duration_s` has elapsed — always at least one full pass.
inline BenchReport throughput_bench(
    const std::string& backend, std::size_t n_queries,
    const std::function<void(std::size_t)>& run_query, std::size_t warmup,
    double min_duration_s, double build_s, double embed_s,
    const std::string& hardware_note = "single-threaded") {
    if (n_queries == 0) throw DataError("throughput_bench: no queries");
    for (std::size_t i = 0; i < warmup; ++i) run_query(i % n_queries);

    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    std::size_t executed = 0;
    double elapsed = 0.0;
    do {
        for (std::size_t i = 0; i < n_queries; ++i) run_query(i);
        executed += n_queries;
        elapsed = std::chrono::duration<double>(clock::now() - start).count();
    } while (elapsed < min_duration_s);

    BenchReport report;
    report.backend = backend;
    report.qps = elapsed > 0.0 ? static_cast<double>(executed) / elapsed : 0.0;
    report.build_s = build_s;
    report.embed_s = embed_s;
    report.hardware_note = hardware_note;
    return report;
}

inline std::string bench_csv(const std::vector<BenchReport>& reports) {
    std::ostringstream out;
    out << "backend,qps,build_s,embed_s\n";
    for (const BenchReport& r : reports)
        out << r.backend << ',' << r.qps << ',' << r.build_s << ',' << r.embed_s
            << '\n';
    return out.str();
}

}  // namespace dpr
