#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpr/corpus.hpp"
#include "dpr/error.hpp"
#include "dpr/io.hpp"
#include "dpr/ranking.hpp"

namespace dpr {

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

struct Posting {
    std::uint64_t pid;
    std::uint32_t tf;
};

struct PostingList {
    std::vector<Posting> entries;  // sorted strictly by pid
};

// Term -> postings over title+body tokens of every passage, plus the
// document statistics BM25 needs. Immutable after build.
struct InvertedIndex {
    std::unordered_map<std::string, PostingList> postings;
    std::vector<std::uint32_t> doc_len;  // title + body token count, by pid
    double avgdl = 0.0;
    std::uint64_t passage_count = 0;
    Bm25Params params;
    // Kept alongside the postings so loaded indexes tokenize queries exactly
    // as the corpus was tokenized at build time.
    TokenizerConfig tokenizer;

    // Lucene-style idf; the +1 inside the log keeps it non-negative.
    double idf(const std::string& term) const {
        auto it = postings.find(term);
        if (it == postings.end()) return 0.0;
        const double df = static_cast<double>(it->second.entries.size());
        const double n = static_cast<double>(passage_count);
        return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    }
};

// Tokens a passage contributes to the index: title tokens then body tokens.
inline std::vector<std::string> indexed_tokens(const TokenizerConfig& config,
                                               const Passage& p) {
    std::vector<std::string> toks = tokenize(config, p.title);
    toks.insert(toks.end(), p.body_tokens.begin(), p.body_tokens.end());
    return toks;
}

inline InvertedIndex build_inverted_index(const PassageStore& store,
                                          Bm25Params params = {}) {
    if (store.passages.empty()) throw DataError("cannot index an empty store");
    if (params.k1 < 0.0 || params.b < 0.0 || params.b > 1.0)
        throw DataError("invalid BM25 parameters");
    InvertedIndex index;
    index.params = params;
    index.tokenizer = store.tokenizer;
    index.passage_count = store.passages.size();
    index.doc_len.resize(store.passages.size(), 0);
    std::uint64_t total_len = 0;
    std::unordered_map<std::string, std::uint32_t> tf;
    for (const Passage& p : store.passages) {
        const auto toks = indexed_tokens(store.tokenizer, p);
        index.doc_len[p.pid] = static_cast<std::uint32_t>(toks.size());
        total_len += toks.size();
        tf.clear();
        for (const std::string& t : toks) ++tf[t];
        for (const auto& [term, count] : tf)
            index.postings[term].entries.push_back({p.pid, count});
    }
    // Passages are visited in pid order, so entries are already sorted.
    index.avgdl = static_cast<double>(total_len) /
                  static_cast<double>(store.passages.size());
    return index;
}

// Unique query terms in first-occurrence order; no query-side tf weighting.
inline std::vector<std::string> unique_terms(const std::vector<std::string>& tokens) {
    std::vector<std::string> out;
    for (const std::string& t : tokens)
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    return out;
}

inline double bm25_term_score(const InvertedIndex& index, const std::string& term,
                              std::uint32_t tf, std::uint64_t pid) {
    const double k1 = index.params.k1;
    const double b = index.params.b;
    const double dl = static_cast<double>(index.doc_len[pid]);
    const double denom = tf + k1 * (1.0 - b + b * dl / index.avgdl);
    return index.idf(term) * (tf * (k1 + 1.0)) / denom;
}

inline double bm25_score(const InvertedIndex& index,
                         const std::vector<std::string>& question_tokens,
                         std::uint64_t pid) {
    if (pid >= index.doc_len.size())
        throw DataError("bm25_score: invalid pid " + std::to_string(pid));
    double score = 0.0;
    for (const std::string& term : unique_terms(question_tokens)) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        const auto& entries = it->second.entries;
        auto pit = std::lower_bound(entries.begin(), entries.end(), pid,
                                    [](const Posting& p, std::uint64_t id) {
                                        return p.pid < id;
                                    });
        if (pit == entries.end() || pit->pid != pid) continue;
        score += bm25_term_score(index, term, pit->tf, pid);
    }
    return score;
}

// Top-k by BM25 over the union of the query terms' posting lists. Passages
// sharing no term are never candidates.
inline RankedList bm25_search(const InvertedIndex& index,
                              const std::vector<std::string>& question_tokens,
                              std::size_t k) {
    if (k < 1) throw DataError("bm25_search: k must be >= 1");
    std::unordered_map<std::uint64_t, double> acc;
    for (const std::string& term : unique_terms(question_tokens)) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        for (const Posting& post : it->second.entries)
            acc[post.pid] += bm25_term_score(index, term, post.tf, post.pid);
    }
    RankedList ranked;
    ranked.reserve(acc.size());
    for (const auto& [pid, score] : acc) ranked.push_back({pid, score});
    std::sort(ranked.begin(), ranked.end(), ranked_before);
    if (ranked.size() > k) ranked.resize(k);
    return ranked;
}

// --- On-disk format -------------------------------------------------------
// magic "BM25", version u32, k1 f64, b f64, tokenizer (lowercase u8,
// split_rule str, stopword count u32 + strs), N u64, avgdl f64,
// doc_len u32[N], term_count u64, then per term (sorted lexicographically):
// length-prefixed term bytes, entry count u32, delta-encoded pids (u64 first,
// u32 deltas) each followed by tf u32. Little-endian throughout.

inline void save_index(const InvertedIndex& index, const std::filesystem::path& path) {
    BinaryWriter w(path);
    w.magic("BM25");
    w.u32(1);
    w.f64(index.params.k1);
    w.f64(index.params.b);
    w.u32(index.tokenizer.lowercase ? 1 : 0);
    w.str(index.tokenizer.split_rule);
    w.u32(static_cast<std::uint32_t>(index.tokenizer.stopwords.size()));
    for (const std::string& s : index.tokenizer.stopwords) w.str(s);
    w.u64(index.passage_count);
    w.f64(index.avgdl);
    for (std::uint32_t len : index.doc_len) w.u32(len);
    std::map<std::string, const PostingList*> sorted;
    for (const auto& [term, list] : index.postings) sorted.emplace(term, &list);
    w.u64(sorted.size());
    for (const auto& [term, list] : sorted) {
        w.str(term);
        w.u32(static_cast<std::uint32_t>(list->entries.size()));
        std::uint64_t prev = 0;
        bool first = true;
        for (const Posting& p : list->entries) {
            if (first) {
                w.u64(p.pid);
                first = false;
            } else {
                w.u32(static_cast<std::uint32_t>(p.pid - prev));
            }
            prev = p.pid;
            w.u32(p.tf);
        }
    }
    w.close();
}

inline InvertedIndex load_index(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("BM25");
    const std::uint32_t version = r.u32();
    if (version != 1) throw DataError("unsupported BM25 index version");
    InvertedIndex index;
    index.params.k1 = r.f64();
    index.params.b = r.f64();
    index.tokenizer.lowercase = r.u32() != 0;
    index.tokenizer.split_rule = r.str();
    const std::uint32_t n_stop = r.u32();
    for (std::uint32_t i = 0; i < n_stop; ++i) index.tokenizer.stopwords.insert(r.str());
    index.passage_count = r.u64();
    index.avgdl = r.f64();
    index.doc_len.resize(index.passage_count);
    for (auto& len : index.doc_len) len = r.u32();
    const std::uint64_t term_count = r.u64();
    for (std::uint64_t i = 0; i < term_count; ++i) {
        std::string term = r.str();
        const std::uint32_t n = r.u32();
        PostingList list;
        list.entries.reserve(n);
        std::uint64_t pid = 0;
        for (std::uint32_t e = 0; e < n; ++e) {
            pid = (e == 0) ? r.u64() : pid + r.u32();
            const std::uint32_t tf = r.u32();
            list.entries.push_back({pid, tf});
        }
        index.postings.emplace(std::move(term), std::move(list));
    }
    return index;
}

}  // namespace dpr
