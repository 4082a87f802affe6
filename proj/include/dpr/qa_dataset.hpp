#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dpr/corpus.hpp"
#include "dpr/error.hpp"
#include "dpr/rng.hpp"
#include "dpr/sparse_index.hpp"
#include "dpr/text_match.hpp"

namespace dpr {

struct QAPair {
    std::string question;
    std::vector<std::string> answers;
    std::optional<std::string> gold_context;  // the dataset's annotated passage
};

enum class NegativeKind { random, bm25, gold_other };

inline std::string to_string(NegativeKind kind) {
    switch (kind) {
        case NegativeKind::random: return "random";
        case NegativeKind::bm25: return "bm25";
        case NegativeKind::gold_other: return "gold_other";
    }
    return "";
}

inline NegativeKind negative_kind_from_string(const std::string& s) {
    if (s == "random") return NegativeKind::random;
    if (s == "bm25") return NegativeKind::bm25;
    if (s == "gold_other") return NegativeKind::gold_other;
    throw DataError("unknown negative kind '" + s + "'");
}

struct Negative {
    std::uint64_t pid;
    NegativeKind kind;
};

struct TrainExample {
    std::string question;
    std::uint64_t positive_pid;
    std::vector<Negative> negatives;
};

struct NegativeSpec {
    NegativeKind kind;
    std::uint32_t count = 0;
};

// --- QA pair I/O: JSONL {"question", "answers": [...], "gold_context"?} ----

inline std::vector<QAPair> load_qa_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open QA file " + path.string());
    std::vector<QAPair> pairs;
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
        QAPair qa;
        qa.question = j.at("question").get<std::string>();
        qa.answers = j.at("answers").get<std::vector<std::string>>();
        if (j.contains("gold_context") && !j["gold_context"].is_null())
            qa.gold_context = j["gold_context"].get<std::string>();
        if (qa.question.empty())
            throw DataError("empty question at " + path.string() + ":" +
                            std::to_string(lineno));
        if (qa.answers.empty() ||
            std::any_of(qa.answers.begin(), qa.answers.end(),
                        [](const std::string& a) { return a.empty(); }))
            throw DataError("empty answer list or answer at " + path.string() + ":" +
                            std::to_string(lineno));
        pairs.push_back(std::move(qa));
    }
    return pairs;
}

inline void save_qa_pairs(const std::vector<QAPair>& pairs,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write QA file " + path.string());
    for (const QAPair& qa : pairs) {
        nlohmann::ordered_json j;
        j["question"] = qa.question;
        j["answers"] = qa.answers;
        if (qa.gold_context) j["gold_context"] = *qa.gold_context;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

// --- Positive selection -----------------------------------------------------

// Token-overlap F1 between two token multisets (the overlap counts each token
// up to its lower frequency).
inline double token_f1(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0.0;
    std::unordered_map<std::string, int> counts;
    for (const auto& t : a) ++counts[t];
    int overlap = 0;
    for (const auto& t : b) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / b.size();
    const double recall = static_cast<double>(overlap) / a.size();
    return 2.0 * precision * recall / (precision + recall);
}

// The store passage most similar to the annotated context (token-overlap F1,
// ties to the lower pid). Returned only when that passage actually contains
// an answer; zero overlap everywhere counts as no match.
inline std::optional<std::uint64_t> match_gold_positive(const QAPair& pair,
                                                        const PassageStore& store) {
    if (!pair.gold_context) return std::nullopt;
    const auto gold_tokens = tokenize(store.tokenizer, *pair.gold_context);
    double best = 0.0;
    std::optional<std::uint64_t> best_pid;
    for (const Passage& p : store.passages) {
        const double f1 = token_f1(gold_tokens, p.body_tokens);
        if (f1 > best) {
            best = f1;
            best_pid = p.pid;
        }
    }
    if (!best_pid) return std::nullopt;
    if (!contains_answer(store.at(*best_pid).body_text, pair.answers))
        return std::nullopt;
    return best_pid;
}

// Distant supervision: query BM25 with question and answers together; the
// highest-ranked passage among the top 100 that contains an answer.
inline std::optional<std::uint64_t> select_distant_positive(
    const QAPair& pair, const InvertedIndex& index, const PassageStore& store) {
    std::vector<std::string> query = tokenize(index.tokenizer, pair.question);
    for (const std::string& ans : pair.answers) {
        const auto atoks = tokenize(index.tokenizer, ans);
        query.insert(query.end(), atoks.begin(), atoks.end());
    }
    for (const ScoredPassage& sp : bm25_search(index, query, 100)) {
        if (contains_answer(store.at(sp.pid).body_text, pair.answers))
            return sp.pid;
    }
    return std::nullopt;
}

// --- Negative mining ---------------------------------------------------------

// Top BM25 passages for the question that do not contain any answer. May
// return fewer than count; the caller reports the shortfall.
inline std::vector<std::uint64_t> mine_bm25_negatives(const QAPair& pair,
                                                      const InvertedIndex& index,
                                                      const PassageStore& store,
                                                      std::uint32_t count) {
    std::vector<std::uint64_t> out;
    if (count == 0) return out;
    // Rank the full candidate set; answer-bearing passages are filtered, so a
    // fixed shallow cutoff could starve the miner.
    const auto ranked =
        bm25_search(index, tokenize(index.tokenizer, pair.question),
                    index.passage_count);
    for (const ScoredPassage& sp : ranked) {
        if (contains_answer(store.at(sp.pid).body_text, pair.answers)) continue;
        out.push_back(sp.pid);
        if (out.size() == count) break;
    }
    return out;
}

// Uniform without replacement over the store, excluding the positive.
inline std::vector<std::uint64_t> sample_random_negatives(std::uint64_t positive_pid,
                                                          const PassageStore& store,
                                                          std::uint32_t count,
                                                          std::uint64_t seed) {
    const std::size_t n = store.passages.size();
    if (count > n - 1)
        throw DataError("cannot sample " + std::to_string(count) +
                        " negatives from " + std::to_string(n) + " passages");
    Rng rng(mix_seed(seed, 0x9a9dULL));
    std::unordered_set<std::uint64_t> used{positive_pid};
    std::vector<std::uint64_t> out;
    while (out.size() < count) {
        const auto pid = static_cast<std::uint64_t>(rng.uniform_index(n));
        if (used.insert(pid).second) out.push_back(pid);
    }
    return out;
}

// --- Training-set construction ----------------------------------------------

enum class PositiveMode { gold, distant };

struct DatasetReport {
    std::size_t kept = 0;
    std::size_t dropped = 0;
    std::size_t negative_shortfall = 0;  // requested minus delivered, summed
};

// One TrainExample per resolvable pair, input order preserved; negatives are
// deduplicated within an example and never equal its positive.
inline std::vector<TrainExample> build_training_set(
    const std::vector<QAPair>& pairs, const PassageStore& store,
    const InvertedIndex& index, const std::vector<NegativeSpec>& specs,
    PositiveMode mode, std::uint64_t seed, DatasetReport* report = nullptr) {
    std::vector<std::optional<std::uint64_t>> positives(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
        positives[i] = mode == PositiveMode::gold
                           ? match_gold_positive(pairs[i], store)
                           : select_distant_positive(pairs[i], index, store);

    // Pool of positives of other questions, for gold_other negatives.
    std::vector<std::uint64_t> gold_pool;
    for (const auto& p : positives)
        if (p) gold_pool.push_back(*p);
    std::sort(gold_pool.begin(), gold_pool.end());
    gold_pool.erase(std::unique(gold_pool.begin(), gold_pool.end()), gold_pool.end());

    DatasetReport rep;
    std::vector<TrainExample> out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!positives[i]) {
            ++rep.dropped;
            continue;
        }
        TrainExample ex;
        ex.question = pairs[i].question;
        ex.positive_pid = *positives[i];
        std::unordered_set<std::uint64_t> used{ex.positive_pid};
        for (const NegativeSpec& spec : specs) {
            std::uint32_t delivered = 0;
            switch (spec.kind) {
                case NegativeKind::bm25:
                    for (std::uint64_t pid :
                         mine_bm25_negatives(pairs[i], index, store, spec.count)) {
                        if (!used.insert(pid).second) continue;
                        ex.negatives.push_back({pid, NegativeKind::bm25});
                        ++delivered;
                    }
                    break;
                case NegativeKind::random:
                    for (std::uint64_t pid : sample_random_negatives(
                             ex.positive_pid, store, spec.count, mix_seed(seed, i))) {
                        if (!used.insert(pid).second) continue;
                        ex.negatives.push_back({pid, NegativeKind::random});
                        ++delivered;
                    }
                    break;
                case NegativeKind::gold_other: {
                    Rng rng(mix_seed(mix_seed(seed, 0x601dULL), i));
                    std::vector<std::uint64_t> pool;
                    for (std::uint64_t pid : gold_pool)
                        if (!used.contains(pid)) pool.push_back(pid);
                    rng.shuffle(pool);
                    for (std::uint64_t pid : pool) {
                        if (delivered == spec.count) break;
                        used.insert(pid);
                        ex.negatives.push_back({pid, NegativeKind::gold_other});
                        ++delivered;
                    }
                    break;
                }
            }
            rep.negative_shortfall += spec.count - std::min(spec.count, delivered);
        }
        out.push_back(std::move(ex));
        ++rep.kept;
    }
    if (out.empty()) throw DataError("no training examples could be built");
    if (report) *report = rep;
    return out;
}

// --- Training-set I/O: JSONL {"question", "positive", "negatives": [...]} ---

inline void save_training_set(const std::vector<TrainExample>& examples,
                              const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write training set " + path.string());
    for (const TrainExample& ex : examples) {
        nlohmann::ordered_json j;
        j["question"] = ex.question;
        j["positive"] = ex.positive_pid;
        nlohmann::ordered_json negs = nlohmann::ordered_json::array();
        for (const Negative& n : ex.negatives)
            negs.push_back({{"pid", n.pid}, {"kind", to_string(n.kind)}});
        j["negatives"] = std::move(negs);
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

inline std::vector<TrainExample> load_training_set(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open training set " + path.string());
    std::vector<TrainExample> out;
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
        TrainExample ex;
        ex.question = j.at("question").get<std::string>();
        ex.positive_pid = j.at("positive").get<std::uint64_t>();
        for (const auto& n : j.at("negatives")) {
            ex.negatives.push_back(
                {n.at("pid").get<std::uint64_t>(),
                 negative_kind_from_string(n.at("kind").get<std::string>())});
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace dpr
