#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dpr/dense_index.hpp"
#include "dpr/dual_encoder.hpp"
#include "dpr/error.hpp"
#include "dpr/ranking.hpp"
#include "dpr/sparse_index.hpp"

namespace dpr {

enum class RetrieverKind { sparse, dense_exact, dense_hnsw, hybrid };

inline std::string to_string(RetrieverKind kind) {
    switch (kind) {
        case RetrieverKind::sparse: return "sparse";
        case RetrieverKind::dense_exact: return "dense-exact";
        case RetrieverKind::dense_hnsw: return "dense-hnsw";
        case RetrieverKind::hybrid: return "hybrid";
    }
    return "";
}

inline RetrieverKind retriever_kind_from_string(const std::string& s) {
    if (s == "sparse") return RetrieverKind::sparse;
    if (s == "dense-exact") return RetrieverKind::dense_exact;
    if (s == "dense-hnsw") return RetrieverKind::dense_hnsw;
    if (s == "hybrid") return RetrieverKind::hybrid;
    throw DataError("unknown retriever kind '" + s + "'");
}

// Thin façade over whichever indexes are loaded. Null members are simply
// unavailable; asking for a backend that needs one is a data error naming
// the missing artifact. Dense scoring is the inner product of Eq.-style
// tower outputs; hybrid rescoring is bm25 + lambda * sim computed exactly.
struct Retriever {
    const PassageStore* store = nullptr;
    const InvertedIndex* sparse = nullptr;
    const EncoderParams* model = nullptr;
    const VectorStore* vectors = nullptr;
    const HnswIndex* hnsw = nullptr;
    double lambda = 1.1;
    std::uint32_t pool_n = 2000;

    std::vector<double> encode_question(const std::string& question) const {
        if (!store && !sparse)
            throw DataError("retrieval backend needs a loaded passage store");
        const TokenizerConfig& tok = store ? store->tokenizer : sparse->tokenizer;
        const auto ids = token_ids(tokenize(tok, question), model->vocab);
        if (ids.empty())
            throw DataError("question tokenizes to nothing: '" + question + "'");
        return encode(*model, ids, Tower::question);
    }

    RankedList retrieve(RetrieverKind kind, const std::string& question,
                        std::size_t k) const {
        switch (kind) {
            case RetrieverKind::sparse:
                require(sparse, "sparse index");
                return bm25_search(*sparse, tokenize(sparse->tokenizer, question), k);
            case RetrieverKind::dense_exact: {
                require(model, "encoder model");
                require(vectors, "vector file");
                return exact_search(*vectors, encode_question(question), k);
            }
            case RetrieverKind::dense_hnsw: {
                require(model, "encoder model");
                require(vectors, "vector file");
                require(hnsw, "graph file");
                return hnsw_search(*hnsw, *vectors, encode_question(question), k);
            }
            case RetrieverKind::hybrid:
                return retrieve_hybrid(question, k, lambda, pool_n);
        }
        throw InternalError("unhandled retriever kind");
    }

    // Union of the two top-pool_n lists, every member rescored from scratch
    // with bm25(q,p) + lambda * sim(q,p). pool_n shrinks to the corpus size.
    RankedList retrieve_hybrid(const std::string& question, std::size_t k,
                               double lam, std::uint32_t pool) const {
        require(sparse, "sparse index");
        require(model, "encoder model");
        require(vectors, "vector file");
        const std::size_t effective_pool =
            std::min<std::size_t>(pool, vectors->size());
        const auto q_tokens = tokenize(sparse->tokenizer, question);
        const auto q_vec = encode_question(question);

        std::unordered_set<std::uint64_t> members;
        for (const ScoredPassage& sp :
             bm25_search(*sparse, q_tokens, effective_pool))
            members.insert(sp.pid);
        for (const ScoredPassage& sp :
             exact_search(*vectors, q_vec, effective_pool))
            members.insert(sp.pid);

        std::unordered_map<std::uint64_t, std::size_t> row_of;
        row_of.reserve(vectors->size());
        for (std::size_t i = 0; i < vectors->size(); ++i)
            row_of.emplace(vectors->pids[i], i);

        RankedList ranked;
        ranked.reserve(members.size());
        for (std::uint64_t pid : members) {
            const auto it = row_of.find(pid);
            if (it == row_of.end())
                throw DataError("hybrid: pid " + std::to_string(pid) +
                                " missing from vector file");
            const double sim = dot_f64(q_vec, vectors->row(it->second));
            ranked.push_back({pid, bm25_score(*sparse, q_tokens, pid) + lam * sim});
        }
        std::sort(ranked.begin(), ranked.end(), ranked_before);
        if (ranked.size() > k) ranked.resize(k);
        return ranked;
    }

  private:
    static void require(const void* p, const char* artifact) {
        if (!p)
            throw DataError(std::string("retrieval backend needs a loaded ") +
                            artifact);
    }
};

// --- Result I/O: JSONL {"question", "results": [{"pid","score","rank"}]} ----

struct RetrievalResult {
    std::string question;
    RankedList ranked;
};

inline void save_results(const std::vector<RetrievalResult>& results,
                         const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write results " + path.string());
    for (const RetrievalResult& r : results) {
        nlohmann::ordered_json j;
        j["question"] = r.question;
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < r.ranked.size(); ++i)
            arr.push_back({{"pid", r.ranked[i].pid},
                           {"score", r.ranked[i].score},
                           {"rank", i + 1}});
        j["results"] = std::move(arr);
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

inline std::vector<RetrievalResult> load_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open results " + path.string());
    std::vector<RetrievalResult> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed JSON at " + path.string() + ":" +
                            std::to_string(lineno) + ": " + e.what());
        }
        RetrievalResult r;
        r.question = j.at("question").get<std::string>();
        for (const auto& item : j.at("results"))
            r.ranked.push_back({item.at("pid").get<std::uint64_t>(),
                                item.at("score").get<double>()});
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace dpr
