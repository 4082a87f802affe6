#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpr/corpus.hpp"
#include "dpr/dense_index.hpp"
#include "dpr/dual_encoder.hpp"
#include "dpr/error.hpp"
#include "dpr/evalbench.hpp"
#include "dpr/qa_dataset.hpp"
#include "dpr/reader.hpp"
#include "dpr/retrieval.hpp"
#include "dpr/rng.hpp"
#include "dpr/sparse_index.hpp"
#include "dpr/synthetic.hpp"
#include "dpr/trainer.hpp"

namespace dpr::cli {

// Wrong invocation discovered after flag parsing (e.g. neither --qa nor
// --question given). Maps to the usage exit code.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

// Every run drops its resolved configuration next to its artifacts.
inline void write_config(const std::filesystem::path& outdir,
                         const std::string& subcommand,
                         nlohmann::ordered_json config) {
    std::filesystem::create_directories(outdir);
    config["subcommand"] = subcommand;
    write_text(outdir / ("config-" + subcommand + ".json"), config.dump(2) + "\n");
}

inline double seconds_since(
    const std::chrono::steady_clock::time_point& start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthFlags {
    std::string task = "synonym";
    std::filesystem::path out;
    std::uint32_t n_facts = 1000;
    std::uint32_t n_examples = 300;
    std::uint64_t seed = 7;
};

inline void run_synth(const SynthFlags& f) {
    detail::write_config(f.out, "synth",
                         {{"task", f.task},
                          {"n_facts", f.n_facts},
                          {"n_examples", f.n_examples},
                          {"seed", f.seed},
                          {"out", f.out.string()}});
    std::vector<Document> docs;
    std::vector<QAPair> train_pairs, eval_pairs;
    if (f.task == "synonym") {
        SynonymTaskConfig cfg;
        cfg.n_facts = f.n_facts;
        cfg.seed = f.seed;
        SynonymTask task = generate_synonym_task(cfg);
        docs = std::move(task.documents);
        train_pairs = std::move(task.train_pairs);
        eval_pairs = std::move(task.eval_pairs);
    } else if (f.task == "reader") {
        PlantedReaderConfig cfg;
        cfg.n_examples = f.n_examples;
        cfg.seed = f.seed;
        PlantedReaderTask task = generate_planted_reader_task(cfg);
        docs = std::move(task.documents);
        train_pairs = std::move(task.train_pairs);
        eval_pairs = std::move(task.eval_pairs);
    } else {
        throw UsageError("unknown synth task: " + f.task);
    }
    detail::write_text(f.out / "corpus.jsonl", documents_to_jsonl(docs));
    save_qa_pairs(train_pairs, f.out / "qa_train.jsonl");
    save_qa_pairs(eval_pairs, f.out / "qa_eval.jsonl");
    std::cout << "synth: " << docs.size() << " documents, " << train_pairs.size()
              << " train pairs, " << eval_pairs.size() << " eval pairs\n";
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestFlags {
    std::filesystem::path corpus;
    std::filesystem::path out;
    std::uint32_t chunk_size = 100;
};

inline void run_ingest(const IngestFlags& f) {
    detail::write_config(f.out, "ingest",
                         {{"corpus", f.corpus.string()},
                          {"out", f.out.string()},
                          {"chunk_size", f.chunk_size}});
    const PassageStore store = ingest_corpus(f.corpus, TokenizerConfig{}, f.chunk_size);
    save_store(store, f.out);
    std::cout << "ingest: " << store.passages.size() << " passages\n";
}

// ---------------------------------------------------------------------------
// build-sparse
// ---------------------------------------------------------------------------

struct BuildSparseFlags {
    std::filesystem::path store;
    std::filesystem::path out;
    double k1 = 0.9;
    double b = 0.4;
};

inline void run_build_sparse(const BuildSparseFlags& f) {
    detail::write_config(f.out, "build-sparse",
                         {{"store", f.store.string()},
                          {"out", f.out.string()},
                          {"k1", f.k1},
                          {"b", f.b}});
    const PassageStore store = load_store(f.store);
    const InvertedIndex index = build_inverted_index(store, Bm25Params{f.k1, f.b});
    save_index(index, f.out / "sparse.bin");
    std::cout << "build-sparse: " << index.postings.size() << " terms over "
              << index.passage_count << " passages\n";
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

struct BuildDatasetFlags {
    std::filesystem::path store;
    std::filesystem::path sparse;
    std::filesystem::path qa;
    std::filesystem::path out;
    std::uint32_t bm25_negatives = 1;
    std::uint32_t gold_negatives = 0;
    std::uint32_t random_negatives = 0;
    std::string positive = "gold";
    std::uint64_t seed = 42;
};

inline void run_build_dataset(const BuildDatasetFlags& f) {
    detail::write_config(f.out, "build-dataset",
                         {{"store", f.store.string()},
                          {"sparse", f.sparse.string()},
                          {"qa", f.qa.string()},
                          {"out", f.out.string()},
                          {"bm25_negatives", f.bm25_negatives},
                          {"gold_negatives", f.gold_negatives},
                          {"random_negatives", f.random_negatives},
                          {"positive", f.positive},
                          {"seed", f.seed}});
    const PassageStore store = load_store(f.store);
    const InvertedIndex index = load_index(f.sparse);
    const std::vector<QAPair> pairs = load_qa_pairs(f.qa);
    NegativeCounts counts;
    counts.bm25 = f.bm25_negatives;
    counts.gold_other = f.gold_negatives;
    counts.random = f.random_negatives;
    const PositiveMode mode =
        f.positive == "distant" ? PositiveMode::distant : PositiveMode::gold;
    DatasetReport report;
    const auto examples = build_training_set(pairs, store, index,
                                             negative_specs_for(counts), mode,
                                             f.seed, &report);
    save_training_set(examples, f.out / "train_set.jsonl");
    detail::write_text(f.out / "dataset_report.json",
                       nlohmann::ordered_json{
                           {"kept", report.kept},
                           {"dropped", report.dropped},
                           {"negative_shortfall", report.negative_shortfall}}
                               .dump(2) +
                           "\n");
    std::cout << "build-dataset: kept " << report.kept << ", dropped "
              << report.dropped << ", shortfall " << report.negative_shortfall
              << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainFlags {
    std::filesystem::path store;
    std::filesystem::path dataset;
    std::filesystem::path out;
    TrainConfig cfg;
    std::string loss = "nll";
    std::string similarity = "dot";
    std::string mode = "in_batch";
    std::uint32_t threads = 1;
};

inline void run_train(const TrainFlags& f) {
    TrainConfig cfg = f.cfg;
    cfg.loss = loss_from_string(f.loss);
    cfg.similarity = similarity_from_string(f.similarity);
    cfg.mode = mode_from_string(f.mode);
    nlohmann::ordered_json config = train_config_to_json(cfg);
    config["store"] = f.store.string();
    config["dataset"] = f.dataset.string();
    config["out"] = f.out.string();
    config["threads"] = f.threads;
    detail::write_config(f.out, "train", std::move(config));

    const PassageStore store = load_store(f.store);
    const auto examples = load_training_set(f.dataset);
    EncoderParams params =
        EncoderParams::init(cfg.vocab, cfg.embed_dim, cfg.out_dim, cfg.seed);
    const TrainResult result = train(std::move(params), examples, store, cfg);
    save_model(result.params, f.out / "model.bin");
    save_model_sidecar(f.out / "model.json", cfg, result);
    std::cout << "train: " << result.total_steps << " steps";
    if (!result.epoch_losses.empty())
        std::cout << ", final loss " << result.epoch_losses.back();
    std::cout << "\n";
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

struct EmbedFlags {
    std::filesystem::path store;
    std::filesystem::path model;
    std::filesystem::path out;
    std::uint32_t threads = 1;
};

inline void run_embed(const EmbedFlags& f) {
    detail::write_config(f.out, "embed",
                         {{"store", f.store.string()},
                          {"model", f.model.string()},
                          {"out", f.out.string()},
                          {"threads", f.threads}});
    const PassageStore store = load_store(f.store);
    const EncoderParams params = load_model(f.model);
    const auto start = std::chrono::steady_clock::now();
    const VectorStore vectors = embed_store(params, store);
    const double embed_s = detail::seconds_since(start);
    save_vectors(vectors, f.out / "vectors.bin");
    detail::write_text(f.out / "embed_meta.json",
                       nlohmann::ordered_json{{"vectors", vectors.size()},
                                              {"dim", vectors.dim},
                                              {"embed_s", embed_s}}
                               .dump(2) +
                           "\n");
    std::cout << "embed: " << vectors.size() << " vectors of dim " << vectors.dim
              << " in " << embed_s << "s\n";
}

// ---------------------------------------------------------------------------
// build-dense
// ---------------------------------------------------------------------------

struct BuildDenseFlags {
    std::filesystem::path vectors;
    std::filesystem::path out;
    HnswParams params;
};

inline void run_build_dense(const BuildDenseFlags& f) {
    detail::write_config(f.out, "build-dense",
                         {{"vectors", f.vectors.string()},
                          {"out", f.out.string()},
                          {"M", f.params.M},
                          {"ef_construction", f.params.ef_construction},
                          {"ef_search", f.params.ef_search},
                          {"seed", f.params.seed}});
    const VectorStore vs = load_vectors(f.vectors);
    const auto start = std::chrono::steady_clock::now();
    const HnswIndex index = build_hnsw(vs, f.params);
    const double build_s = detail::seconds_since(start);
    check_hnsw_invariants(index, vs);
    save_hnsw(index, f.out / "hnsw.bin");
    std::cout << "build-dense: " << vs.size() << " nodes, max level "
              << index.max_level << ", built in " << build_s << "s\n";
}

// ---------------------------------------------------------------------------
// retrieve
// ---------------------------------------------------------------------------

// Artifact paths shared by every retrieval-backed subcommand; only the ones
// a backend needs have to be supplied.
struct ArtifactFlags {
    std::filesystem::path store;
    std::filesystem::path sparse;
    std::filesystem::path model;
    std::filesystem::path vectors;
    std::filesystem::path hnsw;
};

// Owns whichever artifacts were requested and exposes a wired Retriever.
struct LoadedArtifacts {
    std::optional<PassageStore> store;
    std::optional<InvertedIndex> sparse;
    std::optional<EncoderParams> model;
    std::optional<VectorStore> vectors;
    std::optional<HnswIndex> hnsw;

    explicit LoadedArtifacts(const ArtifactFlags& f) {
        if (!f.store.empty()) store.emplace(load_store(f.store));
        if (!f.sparse.empty()) sparse.emplace(load_index(f.sparse));
        if (!f.model.empty()) model.emplace(load_model(f.model));
        if (!f.vectors.empty()) vectors.emplace(load_vectors(f.vectors));
        if (!f.hnsw.empty()) hnsw.emplace(load_hnsw(f.hnsw));
    }

    Retriever retriever(double lambda, std::uint32_t pool_n) const {
        Retriever r;
        r.store = store ? &*store : nullptr;
        r.sparse = sparse ? &*sparse : nullptr;
        r.model = model ? &*model : nullptr;
        r.vectors = vectors ? &*vectors : nullptr;
        r.hnsw = hnsw ? &*hnsw : nullptr;
        r.lambda = lambda;
        r.pool_n = pool_n;
        return r;
    }
};

inline std::vector<std::string> question_list(const std::filesystem::path& qa,
                                              const std::string& question) {
    if (qa.empty() == question.empty())
        throw UsageError("provide exactly one of --qa or --question");
    if (!question.empty()) return {question};
    std::vector<std::string> questions;
    for (const QAPair& pair : load_qa_pairs(qa)) questions.push_back(pair.question);
    return questions;
}

struct RetrieveFlags {
    std::string kind = "sparse";
    std::filesystem::path qa;
    std::string question;
    std::size_t k = 20;
    std::filesystem::path out;
    ArtifactFlags artifacts;
    double lambda = 1.1;
    std::uint32_t pool_n = 2000;
    std::uint32_t threads = 1;
};

inline void run_retrieve(const RetrieveFlags& f) {
    detail::write_config(f.out, "retrieve",
                         {{"kind", f.kind},
                          {"qa", f.qa.string()},
                          {"question", f.question},
                          {"k", f.k},
                          {"out", f.out.string()},
                          {"store", f.artifacts.store.string()},
                          {"sparse", f.artifacts.sparse.string()},
                          {"model", f.artifacts.model.string()},
                          {"vectors", f.artifacts.vectors.string()},
                          {"hnsw", f.artifacts.hnsw.string()},
                          {"lambda", f.lambda},
                          {"pool_n", f.pool_n},
                          {"threads", f.threads}});
    const RetrieverKind kind = retriever_kind_from_string(f.kind);
    const LoadedArtifacts artifacts(f.artifacts);
    const Retriever retriever = artifacts.retriever(f.lambda, f.pool_n);
    std::vector<RetrievalResult> results;
    for (const std::string& question : question_list(f.qa, f.question))
        results.push_back({question, retriever.retrieve(kind, question, f.k)});
    save_results(results, f.out / "results.jsonl");
    std::cout << "retrieve: " << results.size() << " questions, kind " << f.kind
              << ", k " << f.k << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalFlags {
    std::filesystem::path results;
    std::filesystem::path qa;
    std::filesystem::path store;
    std::filesystem::path out;
    std::vector<std::uint32_t> ks = {1, 5, 20, 100};
};

inline void run_eval(const EvalFlags& f) {
    nlohmann::ordered_json config{{"results", f.results.string()},
                                  {"qa", f.qa.string()},
                                  {"store", f.store.string()},
                                  {"out", f.out.string()},
                                  {"ks", f.ks}};
    detail::write_config(f.out, "eval", config);
    const PassageStore store = load_store(f.store);
    const std::vector<QAPair> pairs = load_qa_pairs(f.qa);
    std::vector<RankedList> ranked;
    for (RetrievalResult& r : load_results(f.results))
        ranked.push_back(std::move(r.ranked));
    EvalReport report = top_k_accuracy(ranked, pairs, store, f.ks);
    report.fingerprint =
        config_fingerprint({f.results, f.qa, f.store / "passages.jsonl"},
                           config.dump());
    nlohmann::ordered_json j;
    j["questions"] = report.questions;
    nlohmann::ordered_json acc;
    for (const auto& [k, v] : report.accuracy_at) acc[std::to_string(k)] = v;
    j["accuracy"] = acc;
    j["fingerprint"] = report.fingerprint;
    detail::write_text(f.out / "eval.json", j.dump(2) + "\n");
    std::cout << "eval: " << report.questions << " questions";
    for (const auto& [k, v] : report.accuracy_at)
        std::cout << ", top-" << k << " " << v;
    std::cout << "\n";
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchFlags {
    std::filesystem::path out;
    std::filesystem::path vectors;  // precomputed vectors ...
    std::filesystem::path store;    // ... or a store+model to embed ...
    std::filesystem::path model;
    std::uint64_t n_synthetic = 100000;  // ... or synthetic gaussian vectors
    std::uint32_t dim = 64;
    std::size_t k = 10;
    std::size_t n_queries = 200;
    std::size_t warmup = 20;
    double min_duration = 1.0;
    HnswParams hnsw;
    std::uint64_t seed = 42;
    std::uint32_t threads = 1;
};

inline void run_bench(const BenchFlags& f) {
    detail::write_config(f.out, "bench",
                         {{"out", f.out.string()},
                          {"vectors", f.vectors.string()},
                          {"store", f.store.string()},
                          {"model", f.model.string()},
                          {"n_synthetic", f.n_synthetic},
                          {"dim", f.dim},
                          {"k", f.k},
                          {"n_queries", f.n_queries},
                          {"warmup", f.warmup},
                          {"min_duration", f.min_duration},
                          {"M", f.hnsw.M},
                          {"ef_construction", f.hnsw.ef_construction},
                          {"ef_search", f.hnsw.ef_search},
                          {"seed", f.seed},
                          {"threads", f.threads}});

    // Wall-clock of whichever stage produced the vectors is reported as the
    // embed time for this run.
    const auto embed_start = std::chrono::steady_clock::now();
    VectorStore vs;
    if (!f.vectors.empty()) {
        vs = load_vectors(f.vectors);
    } else if (!f.store.empty() && !f.model.empty()) {
        const PassageStore store = load_store(f.store);
        const EncoderParams params = load_model(f.model);
        vs = embed_store(params, store);
    } else {
        Rng rng(mix_seed(f.seed, 0xbe4cULL));
        vs.dim = f.dim;
        vs.data.resize(f.n_synthetic * f.dim);
        for (float& x : vs.data) x = static_cast<float>(rng.normal());
        vs.pids.resize(f.n_synthetic);
        for (std::uint64_t i = 0; i < f.n_synthetic; ++i) vs.pids[i] = i;
    }
    const double embed_s = detail::seconds_since(embed_start);

    Rng qrng(mix_seed(f.seed, 0xbe4dULL));
    std::vector<std::vector<double>> queries(f.n_queries);
    for (auto& q : queries) {
        q.resize(vs.dim);
        for (double& x : q) x = qrng.normal();
    }

    const auto build_start = std::chrono::steady_clock::now();
    HnswParams hnsw_params = f.hnsw;
    hnsw_params.seed = f.seed;
    const HnswIndex hnsw = build_hnsw(vs, hnsw_params);
    const double build_s = detail::seconds_since(build_start);

    std::vector<BenchReport> reports;
    reports.push_back(throughput_bench(
        "exact", queries.size(),
        [&](std::size_t i) { exact_search(vs, queries[i], f.k); }, f.warmup,
        f.min_duration, 0.0, embed_s));
    reports.push_back(throughput_bench(
        "hnsw", queries.size(),
        [&](std::size_t i) { hnsw_search(hnsw, vs, queries[i], f.k); }, f.warmup,
        f.min_duration, build_s, embed_s));
    const std::string csv = bench_csv(reports);
    detail::write_text(f.out / "bench.csv", csv);
    std::cout << csv;
}

// ---------------------------------------------------------------------------
// ablate / curve
// ---------------------------------------------------------------------------

struct StudyFlags {
    std::filesystem::path store;
    std::filesystem::path sparse;
    std::filesystem::path qa_train;
    std::filesystem::path qa_eval;
    std::filesystem::path out;
    TrainConfig base;
    std::vector<std::size_t> sizes = {100, 300, 1000};  // curve only
    std::uint32_t threads = 1;
};

inline void run_ablate(const StudyFlags& f) {
    nlohmann::ordered_json config = train_config_to_json(f.base);
    config["store"] = f.store.string();
    config["sparse"] = f.sparse.string();
    config["qa_train"] = f.qa_train.string();
    config["qa_eval"] = f.qa_eval.string();
    config["out"] = f.out.string();
    config["threads"] = f.threads;
    detail::write_config(f.out, "ablate", std::move(config));
    const PassageStore store = load_store(f.store);
    const InvertedIndex sparse = load_index(f.sparse);
    const auto train_pairs = load_qa_pairs(f.qa_train);
    const auto eval_pairs = load_qa_pairs(f.qa_eval);
    const auto rows = ablation_sweep(default_ablation_grid(f.base), store, sparse,
                                     train_pairs, eval_pairs);
    const std::string csv = ablation_csv(rows);
    detail::write_text(f.out / "ablation.csv", csv);
    std::cout << csv;
}

inline void run_curve(const StudyFlags& f) {
    nlohmann::ordered_json config = train_config_to_json(f.base);
    config["store"] = f.store.string();
    config["sparse"] = f.sparse.string();
    config["qa_train"] = f.qa_train.string();
    config["qa_eval"] = f.qa_eval.string();
    config["out"] = f.out.string();
    config["sizes"] = f.sizes;
    config["threads"] = f.threads;
    detail::write_config(f.out, "curve", std::move(config));
    const PassageStore store = load_store(f.store);
    const InvertedIndex sparse = load_index(f.sparse);
    const auto train_pairs = load_qa_pairs(f.qa_train);
    const auto eval_pairs = load_qa_pairs(f.qa_eval);
    const CurveReport report = sample_efficiency_curve(
        f.sizes, store, sparse, train_pairs, eval_pairs, f.base);
    for (const std::string& note : report.notes)
        std::cerr << "curve: " << note << "\n";
    const std::string csv = curve_csv(report);
    detail::write_text(f.out / "curve.csv", csv);
    std::cout << csv;
}

// ---------------------------------------------------------------------------
// train-reader
// ---------------------------------------------------------------------------

struct TrainReaderFlags {
    std::filesystem::path store;
    std::filesystem::path sparse;
    std::filesystem::path qa;
    std::filesystem::path out;
    ReaderTrainConfig cfg;
    std::size_t pool_size = 20;
    std::uint32_t threads = 1;
};

inline void run_train_reader(const TrainReaderFlags& f) {
    detail::write_config(f.out, "train-reader",
                         {{"store", f.store.string()},
                          {"sparse", f.sparse.string()},
                          {"qa", f.qa.string()},
                          {"out", f.out.string()},
                          {"batch_size", f.cfg.batch_size},
                          {"epochs", f.cfg.epochs},
                          {"m_tilde", f.cfg.m_tilde},
                          {"lr", f.cfg.lr},
                          {"vocab", f.cfg.vocab},
                          {"feat_dim", f.cfg.feat_dim},
                          {"seed", f.cfg.seed},
                          {"pool_size", f.pool_size},
                          {"threads", f.threads}});
    const PassageStore store = load_store(f.store);
    const InvertedIndex index = load_index(f.sparse);
    const auto pairs = load_qa_pairs(f.qa);
    const auto examples =
        build_reader_examples(pairs, store, index, f.cfg.vocab, f.pool_size);
    ReaderParams params =
        ReaderParams::init(f.cfg.vocab, f.cfg.feat_dim, f.cfg.seed);
    const ReaderTrainResult result =
        train_reader(std::move(params), examples, f.cfg);
    save_reader(result.params, f.out / "reader.bin");
    detail::write_text(f.out / "reader.json",
                       nlohmann::ordered_json{
                           {"examples", examples.size()},
                           {"epoch_losses", result.epoch_losses},
                           {"final_loss", result.epoch_losses.empty()
                                              ? nlohmann::ordered_json(nullptr)
                                              : nlohmann::ordered_json(
                                                    result.epoch_losses.back())}}
                               .dump(2) +
                           "\n");
    std::cout << "train-reader: " << examples.size() << " examples";
    if (!result.epoch_losses.empty())
        std::cout << ", final loss " << result.epoch_losses.back();
    std::cout << "\n";
}

// ---------------------------------------------------------------------------
// answer
// ---------------------------------------------------------------------------

struct AnswerFlags {
    std::filesystem::path reader;
    std::filesystem::path qa;
    std::string question;
    std::string kind = "sparse";
    std::size_t candidates = 10;
    std::uint32_t max_span_len = 10;
    std::filesystem::path out;
    ArtifactFlags artifacts;
    double lambda = 1.1;
    std::uint32_t pool_n = 2000;
    std::uint32_t threads = 1;
};

inline void run_answer(const AnswerFlags& f) {
    detail::write_config(f.out, "answer",
                         {{"reader", f.reader.string()},
                          {"qa", f.qa.string()},
                          {"question", f.question},
                          {"kind", f.kind},
                          {"candidates", f.candidates},
                          {"max_span_len", f.max_span_len},
                          {"out", f.out.string()},
                          {"store", f.artifacts.store.string()},
                          {"sparse", f.artifacts.sparse.string()},
                          {"model", f.artifacts.model.string()},
                          {"vectors", f.artifacts.vectors.string()},
                          {"hnsw", f.artifacts.hnsw.string()},
                          {"lambda", f.lambda},
                          {"pool_n", f.pool_n},
                          {"threads", f.threads}});
    const ReaderParams reader = load_reader(f.reader);
    const RetrieverKind kind = retriever_kind_from_string(f.kind);
    const LoadedArtifacts artifacts(f.artifacts);
    if (!artifacts.store)
        throw DataError("answer needs --store to read passage text");
    const Retriever retriever = artifacts.retriever(f.lambda, f.pool_n);
    const PassageStore& store = *artifacts.store;

    std::ofstream out_file(f.out / "predictions.jsonl", std::ios::binary);
    if (!out_file)
        throw DataError("cannot write " + (f.out / "predictions.jsonl").string());
    std::size_t answered = 0;
    for (const std::string& question : question_list(f.qa, f.question)) {
        std::vector<PassageRepr> reprs;
        std::vector<std::uint64_t> pids;
        for (const ScoredPassage& hit :
             retriever.retrieve(kind, question, f.candidates)) {
            const Passage& p = store.at(hit.pid);
            if (p.body_tokens.empty()) continue;
            reprs.push_back(
                featurize(reader, token_ids(p.body_tokens, reader.vocab)));
            pids.push_back(hit.pid);
        }
        nlohmann::ordered_json j;
        j["question"] = question;
        if (reprs.empty()) {
            j["pid"] = nullptr;
            j["start"] = nullptr;
            j["end"] = nullptr;
            j["text"] = "";
            j["score"] = 0.0;
        } else {
            const SpanPrediction pred =
                best_span(reader, reprs, pids, f.max_span_len);
            const auto& tokens = store.at(pred.pid).body_tokens;
            const std::vector<std::string> span(
                tokens.begin() + pred.start, tokens.begin() + pred.end + 1);
            j["pid"] = pred.pid;
            j["start"] = pred.start;
            j["end"] = pred.end;
            j["text"] = join_tokens(span);
            j["score"] = pred.span_score * pred.selection_score;
            ++answered;
        }
        out_file << j.dump() << "\n";
    }
    out_file.close();
    std::cout << "answer: " << answered << " predictions\n";
}

// ---------------------------------------------------------------------------
// pipeline: ingest -> build-sparse -> build-dataset -> train -> embed ->
// build-dense -> retrieve -> eval, all artifacts in one directory.
// ---------------------------------------------------------------------------

struct PipelineFlags {
    std::filesystem::path corpus;
    std::filesystem::path qa_train;
    std::filesystem::path qa_eval;
    std::filesystem::path out;
    std::uint32_t chunk_size = 100;
    double k1 = 0.9;
    double b = 0.4;
    BuildDatasetFlags dataset;  // negative counts / positive mode reused
    TrainConfig cfg;
    std::string loss = "nll";
    std::string similarity = "dot";
    std::string mode = "in_batch";
    HnswParams hnsw;
    std::string kind = "dense-exact";
    std::size_t k = 100;
    double lambda = 1.1;
    std::uint32_t pool_n = 2000;
    std::vector<std::uint32_t> ks = {1, 5, 20, 100};
    std::uint32_t threads = 1;
};

inline void run_pipeline(const PipelineFlags& f) {
    detail::write_config(f.out, "pipeline",
                         {{"corpus", f.corpus.string()},
                          {"qa_train", f.qa_train.string()},
                          {"qa_eval", f.qa_eval.string()},
                          {"out", f.out.string()},
                          {"kind", f.kind},
                          {"k", f.k},
                          {"seed", f.cfg.seed},
                          {"threads", f.threads}});
    const std::filesystem::path store_dir = f.out / "store";

    run_ingest({f.corpus, store_dir, f.chunk_size});
    run_build_sparse({store_dir, f.out, f.k1, f.b});

    BuildDatasetFlags dataset = f.dataset;
    dataset.store = store_dir;
    dataset.sparse = f.out / "sparse.bin";
    dataset.qa = f.qa_train;
    dataset.out = f.out;
    run_build_dataset(dataset);

    TrainFlags train;
    train.store = store_dir;
    train.dataset = f.out / "train_set.jsonl";
    train.out = f.out;
    train.cfg = f.cfg;
    train.loss = f.loss;
    train.similarity = f.similarity;
    train.mode = f.mode;
    train.threads = f.threads;
    run_train(train);

    run_embed({store_dir, f.out / "model.bin", f.out, f.threads});
    run_build_dense({f.out / "vectors.bin", f.out, f.hnsw});

    RetrieveFlags retrieve;
    retrieve.kind = f.kind;
    retrieve.qa = f.qa_eval;
    retrieve.k = f.k;
    retrieve.out = f.out;
    retrieve.artifacts = {store_dir, f.out / "sparse.bin", f.out / "model.bin",
                          f.out / "vectors.bin", f.out / "hnsw.bin"};
    retrieve.lambda = f.lambda;
    retrieve.pool_n = f.pool_n;
    retrieve.threads = f.threads;
    run_retrieve(retrieve);

    run_eval({f.out / "results.jsonl", f.qa_eval, store_dir, f.out, f.ks});
}

// ---------------------------------------------------------------------------
// Argument wiring
// ---------------------------------------------------------------------------

namespace detail {

inline void add_artifact_options(CLI::App* sub, ArtifactFlags& f) {
    sub->add_option("--store", f.store, "passage store directory");
    sub->add_option("--sparse", f.sparse, "sparse index file");
    sub->add_option("--model", f.model, "encoder model file");
    sub->add_option("--vectors", f.vectors, "vector file");
    sub->add_option("--hnsw", f.hnsw, "graph index file");
}

inline void add_train_config_options(CLI::App* sub, TrainConfig& cfg,
                                     std::string* loss, std::string* similarity,
                                     std::string* mode) {
    sub->add_option("--batch-size", cfg.batch_size, "training batch size");
    sub->add_option("--epochs", cfg.epochs, "training epochs");
    sub->add_option("--lr", cfg.lr, "peak learning rate");
    sub->add_option("--warmup-frac", cfg.warmup_frac, "warmup fraction of steps");
    sub->add_option("--dropout", cfg.dropout, "dropout rate on pooled vectors");
    sub->add_option("--margin", cfg.margin, "triplet margin");
    sub->add_option("--bm25-negatives", cfg.negatives.bm25,
                    "lexical hard negatives per example");
    sub->add_option("--gold-negatives", cfg.negatives.gold_other,
                    "other-question positives as negatives per example");
    sub->add_option("--random-negatives", cfg.negatives.random,
                    "random negatives per example");
    sub->add_option("--vocab", cfg.vocab, "hashed vocabulary size");
    sub->add_option("--embed-dim", cfg.embed_dim, "token embedding width");
    sub->add_option("--out-dim", cfg.out_dim, "output embedding width");
    sub->add_option("--seed", cfg.seed, "random seed");
    if (loss)
        sub->add_option("--loss", *loss, "loss kind")
            ->check(CLI::IsMember({"nll", "triplet"}));
    if (similarity)
        sub->add_option("--similarity", *similarity, "similarity kind")
            ->check(CLI::IsMember({"dot", "cosine", "neg_l2"}));
    if (mode)
        sub->add_option("--mode", *mode, "negative mode")
            ->check(CLI::IsMember({"in_batch", "explicit"}));
}

inline void add_hnsw_options(CLI::App* sub, HnswParams& p) {
    sub->add_option("--M", p.M, "graph degree parameter");
    sub->add_option("--ef-construction", p.ef_construction,
                    "construction beam width");
    sub->add_option("--ef-search", p.ef_search, "search beam width");
}

}  // namespace detail

// Parses and executes one invocation. `args` is argv without the program
// name, in natural order.
inline int run(std::vector<std::string> args) {
    CLI::App app{"desk-scale passage retrieval and reading engine", "dpr"};
    app.require_subcommand(1);

    SynthFlags synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic task");
    synth_cmd->add_option("--task", synth.task, "synonym or reader")
        ->check(CLI::IsMember({"synonym", "reader"}));
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--n-facts", synth.n_facts, "synonym task size");
    synth_cmd->add_option("--n-examples", synth.n_examples, "reader task size");
    synth_cmd->add_option("--seed", synth.seed, "random seed");

    IngestFlags ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "chunk a corpus into passages");
    ingest_cmd->add_option("--corpus", ingest.corpus, "corpus JSONL")->required();
    ingest_cmd->add_option("--out", ingest.out, "store directory")->required();
    ingest_cmd->add_option("--chunk-size", ingest.chunk_size, "tokens per passage");

    BuildSparseFlags build_sparse;
    auto* sparse_cmd = app.add_subcommand("build-sparse", "build the lexical index");
    sparse_cmd->add_option("--store", build_sparse.store, "store directory")
        ->required();
    sparse_cmd->add_option("--out", build_sparse.out, "output directory")
        ->required();
    sparse_cmd->add_option("--k1", build_sparse.k1, "tf saturation");
    sparse_cmd->add_option("--b", build_sparse.b, "length normalization");

    BuildDatasetFlags build_dataset;
    auto* dataset_cmd =
        app.add_subcommand("build-dataset", "mine positives and negatives");
    dataset_cmd->add_option("--store", build_dataset.store, "store directory")
        ->required();
    dataset_cmd->add_option("--sparse", build_dataset.sparse, "sparse index file")
        ->required();
    dataset_cmd->add_option("--qa", build_dataset.qa, "QA pairs JSONL")->required();
    dataset_cmd->add_option("--out", build_dataset.out, "output directory")
        ->required();
    dataset_cmd->add_option("--bm25-negatives", build_dataset.bm25_negatives,
                            "lexical hard negatives per example");
    dataset_cmd->add_option("--gold-negatives", build_dataset.gold_negatives,
                            "other-question positives per example");
    dataset_cmd->add_option("--random-negatives", build_dataset.random_negatives,
                            "random negatives per example");
    dataset_cmd->add_option("--positive", build_dataset.positive,
                            "positive selection rule")
        ->check(CLI::IsMember({"gold", "distant"}));
    dataset_cmd->add_option("--seed", build_dataset.seed, "random seed");

    TrainFlags train;
    auto* train_cmd = app.add_subcommand("train", "train the dual encoder");
    train_cmd->add_option("--store", train.store, "store directory")->required();
    train_cmd->add_option("--dataset", train.dataset, "training set JSONL")
        ->required();
    train_cmd->add_option("--out", train.out, "output directory")->required();
    detail::add_train_config_options(train_cmd, train.cfg, &train.loss,
                                     &train.similarity, &train.mode);
    train_cmd->add_option("--threads", train.threads, "worker threads (recorded)");

    EmbedFlags embed;
    auto* embed_cmd = app.add_subcommand("embed", "embed every passage");
    embed_cmd->add_option("--store", embed.store, "store directory")->required();
    embed_cmd->add_option("--model", embed.model, "encoder model file")->required();
    embed_cmd->add_option("--out", embed.out, "output directory")->required();
    embed_cmd->add_option("--threads", embed.threads, "worker threads (recorded)");

    BuildDenseFlags build_dense;
    auto* dense_cmd = app.add_subcommand("build-dense", "build the graph index");
    dense_cmd->add_option("--vectors", build_dense.vectors, "vector file")
        ->required();
    dense_cmd->add_option("--out", build_dense.out, "output directory")->required();
    detail::add_hnsw_options(dense_cmd, build_dense.params);
    dense_cmd->add_option("--seed", build_dense.params.seed, "level seed");

    RetrieveFlags retrieve;
    auto* retrieve_cmd = app.add_subcommand("retrieve", "run retrieval");
    retrieve_cmd->add_option("--kind", retrieve.kind, "retrieval backend")
        ->check(CLI::IsMember({"sparse", "dense-exact", "dense-hnsw", "hybrid"}));
    retrieve_cmd->add_option("--qa", retrieve.qa, "QA pairs JSONL");
    retrieve_cmd->add_option("--question", retrieve.question, "single question");
    retrieve_cmd->add_option("--k", retrieve.k, "results per question");
    retrieve_cmd->add_option("--out", retrieve.out, "output directory")->required();
    detail::add_artifact_options(retrieve_cmd, retrieve.artifacts);
    retrieve_cmd->add_option("--lambda", retrieve.lambda, "hybrid dense weight");
    retrieve_cmd->add_option("--pool-n", retrieve.pool_n, "hybrid pool size");
    retrieve_cmd->add_option("--threads", retrieve.threads,
                             "worker threads (recorded)");

    EvalFlags eval;
    auto* eval_cmd = app.add_subcommand("eval", "score retrieval results");
    eval_cmd->add_option("--results", eval.results, "results JSONL")->required();
    eval_cmd->add_option("--qa", eval.qa, "QA pairs JSONL")->required();
    eval_cmd->add_option("--store", eval.store, "store directory")->required();
    eval_cmd->add_option("--out", eval.out, "output directory")->required();
    eval_cmd->add_option("--ks", eval.ks, "accuracy cutoffs")->delimiter(',');

    BenchFlags bench;
    auto* bench_cmd = app.add_subcommand("bench", "measure retrieval throughput");
    bench_cmd->add_option("--out", bench.out, "output directory")->required();
    bench_cmd->add_option("--vectors", bench.vectors, "precomputed vector file");
    bench_cmd->add_option("--store", bench.store, "store directory (with --model)");
    bench_cmd->add_option("--model", bench.model, "encoder model file");
    bench_cmd->add_option("--n-synthetic", bench.n_synthetic,
                          "synthetic vector count");
    bench_cmd->add_option("--dim", bench.dim, "synthetic vector width");
    bench_cmd->add_option("--k", bench.k, "results per query");
    bench_cmd->add_option("--n-queries", bench.n_queries, "query count");
    bench_cmd->add_option("--warmup", bench.warmup, "unmeasured queries");
    bench_cmd->add_option("--min-duration", bench.min_duration,
                          "minimum measured seconds");
    detail::add_hnsw_options(bench_cmd, bench.hnsw);
    bench_cmd->add_option("--seed", bench.seed, "random seed");
    bench_cmd->add_option("--threads", bench.threads, "worker threads (recorded)");

    StudyFlags ablate;
    auto* ablate_cmd =
        app.add_subcommand("ablate", "train the default configuration grid");
    ablate_cmd->add_option("--store", ablate.store, "store directory")->required();
    ablate_cmd->add_option("--sparse", ablate.sparse, "sparse index file")
        ->required();
    ablate_cmd->add_option("--qa-train", ablate.qa_train, "training QA JSONL")
        ->required();
    ablate_cmd->add_option("--qa-eval", ablate.qa_eval, "evaluation QA JSONL")
        ->required();
    ablate_cmd->add_option("--out", ablate.out, "output directory")->required();
    detail::add_train_config_options(ablate_cmd, ablate.base, nullptr, nullptr,
                                     nullptr);
    ablate_cmd->add_option("--threads", ablate.threads,
                           "worker threads (recorded)");

    StudyFlags curve;
    auto* curve_cmd =
        app.add_subcommand("curve", "training-set size vs accuracy");
    curve_cmd->add_option("--store", curve.store, "store directory")->required();
    curve_cmd->add_option("--sparse", curve.sparse, "sparse index file")
        ->required();
    curve_cmd->add_option("--qa-train", curve.qa_train, "training QA JSONL")
        ->required();
    curve_cmd->add_option("--qa-eval", curve.qa_eval, "evaluation QA JSONL")
        ->required();
    curve_cmd->add_option("--out", curve.out, "output directory")->required();
    curve_cmd->add_option("--sizes", curve.sizes, "training set sizes")
        ->delimiter(',');
    detail::add_train_config_options(curve_cmd, curve.base, nullptr, nullptr,
                                     nullptr);
    curve_cmd->add_option("--threads", curve.threads, "worker threads (recorded)");

    TrainReaderFlags train_reader;
    auto* reader_cmd = app.add_subcommand("train-reader", "train the span reader");
    reader_cmd->add_option("--store", train_reader.store, "store directory")
        ->required();
    reader_cmd->add_option("--sparse", train_reader.sparse, "sparse index file")
        ->required();
    reader_cmd->add_option("--qa", train_reader.qa, "QA pairs JSONL")->required();
    reader_cmd->add_option("--out", train_reader.out, "output directory")
        ->required();
    reader_cmd->add_option("--batch-size", train_reader.cfg.batch_size,
                           "training batch size");
    reader_cmd->add_option("--epochs", train_reader.cfg.epochs, "training epochs");
    reader_cmd->add_option("--m-tilde", train_reader.cfg.m_tilde,
                           "candidates per example");
    reader_cmd->add_option("--lr", train_reader.cfg.lr, "learning rate");
    reader_cmd->add_option("--vocab", train_reader.cfg.vocab,
                           "hashed vocabulary size");
    reader_cmd->add_option("--feat-dim", train_reader.cfg.feat_dim,
                           "feature width");
    reader_cmd->add_option("--seed", train_reader.cfg.seed, "random seed");
    reader_cmd->add_option("--pool-size", train_reader.pool_size,
                           "negative pool per example");
    reader_cmd->add_option("--threads", train_reader.threads,
                           "worker threads (recorded)");

    AnswerFlags answer;
    auto* answer_cmd = app.add_subcommand("answer", "retrieve and extract spans");
    answer_cmd->add_option("--reader", answer.reader, "reader model file")
        ->required();
    answer_cmd->add_option("--qa", answer.qa, "QA pairs JSONL");
    answer_cmd->add_option("--question", answer.question, "single question");
    answer_cmd->add_option("--kind", answer.kind, "retrieval backend")
        ->check(CLI::IsMember({"sparse", "dense-exact", "dense-hnsw", "hybrid"}));
    answer_cmd->add_option("--candidates", answer.candidates,
                           "passages read per question");
    answer_cmd->add_option("--max-span-len", answer.max_span_len,
                           "longest admissible span");
    answer_cmd->add_option("--out", answer.out, "output directory")->required();
    detail::add_artifact_options(answer_cmd, answer.artifacts);
    answer_cmd->add_option("--lambda", answer.lambda, "hybrid dense weight");
    answer_cmd->add_option("--pool-n", answer.pool_n, "hybrid pool size");
    answer_cmd->add_option("--threads", answer.threads,
                           "worker threads (recorded)");

    PipelineFlags pipeline;
    auto* pipeline_cmd =
        app.add_subcommand("pipeline", "run every stage end to end");
    pipeline_cmd->add_option("--corpus", pipeline.corpus, "corpus JSONL")
        ->required();
    pipeline_cmd->add_option("--qa-train", pipeline.qa_train, "training QA JSONL")
        ->required();
    pipeline_cmd->add_option("--qa-eval", pipeline.qa_eval, "evaluation QA JSONL")
        ->required();
    pipeline_cmd->add_option("--out", pipeline.out, "output directory")
        ->required();
    pipeline_cmd->add_option("--chunk-size", pipeline.chunk_size,
                             "tokens per passage");
    pipeline_cmd->add_option("--k1", pipeline.k1, "tf saturation");
    pipeline_cmd->add_option("--b", pipeline.b, "length normalization");
    pipeline_cmd
        ->add_option("--positive", pipeline.dataset.positive,
                     "positive selection rule")
        ->check(CLI::IsMember({"gold", "distant"}));
    detail::add_train_config_options(pipeline_cmd, pipeline.cfg, &pipeline.loss,
                                     &pipeline.similarity, &pipeline.mode);
    detail::add_hnsw_options(pipeline_cmd, pipeline.hnsw);
    pipeline_cmd->add_option("--kind", pipeline.kind, "retrieval backend")
        ->check(CLI::IsMember({"sparse", "dense-exact", "dense-hnsw", "hybrid"}));
    pipeline_cmd->add_option("--k", pipeline.k, "results per question");
    pipeline_cmd->add_option("--lambda", pipeline.lambda, "hybrid dense weight");
    pipeline_cmd->add_option("--pool-n", pipeline.pool_n, "hybrid pool size");
    pipeline_cmd->add_option("--ks", pipeline.ks, "accuracy cutoffs")
        ->delimiter(',');
    pipeline_cmd->add_option("--threads", pipeline.threads,
                             "worker threads (recorded)");

    try {
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(synth_cmd)) run_synth(synth);
        else if (app.got_subcommand(ingest_cmd)) run_ingest(ingest);
        else if (app.got_subcommand(sparse_cmd)) run_build_sparse(build_sparse);
        else if (app.got_subcommand(dataset_cmd)) run_build_dataset(build_dataset);
        else if (app.got_subcommand(train_cmd)) run_train(train);
        else if (app.got_subcommand(embed_cmd)) run_embed(embed);
        else if (app.got_subcommand(dense_cmd)) run_build_dense(build_dense);
        else if (app.got_subcommand(retrieve_cmd)) run_retrieve(retrieve);
        else if (app.got_subcommand(eval_cmd)) run_eval(eval);
        else if (app.got_subcommand(bench_cmd)) run_bench(bench);
        else if (app.got_subcommand(ablate_cmd)) run_ablate(ablate);
        else if (app.got_subcommand(curve_cmd)) run_curve(curve);
        else if (app.got_subcommand(reader_cmd)) run_train_reader(train_reader);
        else if (app.got_subcommand(answer_cmd)) run_answer(answer);
        else if (app.got_subcommand(pipeline_cmd)) run_pipeline(pipeline);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

inline int run(int argc, const char* const* argv) {
    return run(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace dpr::cli
