#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dpr/corpus.hpp"
#include "dpr/dual_encoder.hpp"
#include "dpr/error.hpp"
#include "dpr/qa_dataset.hpp"
#include "dpr/rng.hpp"

#include <json.hpp>

namespace dpr {

// ---------------------------------------------------------------------------
// Token pool: random letter strings whose hashed ids collide neither with
// each other nor with the fixed title tokens, so every generated word gets a
// private embedding row.
// ---------------------------------------------------------------------------

namespace detail {

class TokenPool {
public:
    TokenPool(std::uint32_t hash_vocab, Rng& rng)
        : hash_vocab_(hash_vocab), rng_(rng) {}

    // Marks an existing token (e.g. a title word) as occupied.
    void reserve(const std::string& token) {
        used_ids_.insert(token_id(token, hash_vocab_));
        used_tokens_.insert(token);
    }

    std::string fresh() {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            std::string token(8, 'a');
            for (char& c : token)
                c = static_cast<char>('a' + rng_.uniform_index(26));
            const std::uint32_t id = token_id(token, hash_vocab_);
            if (used_ids_.count(id) || used_tokens_.count(token)) continue;
            used_ids_.insert(id);
            used_tokens_.insert(token);
            return token;
        }
        throw InternalError("token pool exhausted; hash vocab too small");
    }

    std::vector<std::string> fresh_batch(std::size_t n) {
        std::vector<std::string> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back(fresh());
        return out;
    }

private:
    std::uint32_t hash_vocab_;
    Rng& rng_;
    std::unordered_set<std::uint32_t> used_ids_;
    std::unordered_set<std::string> used_tokens_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Synonym-gap retrieval task. Each fact pairs a relevant passage written in
// "passage-side" words with a question written in their "question-side"
// synonyms, so the question shares zero terms with its relevant passage.
// A decoy passage per fact carries the literal question words plus a couple
// of the fact's own passage-side words — but never the answer — which makes
// it both the lexical-search result and a genuine dense-space confuser.
// ---------------------------------------------------------------------------

struct SynonymTaskConfig {
    std::uint32_t n_facts = 1000;
    std::uint32_t n_relations = 50;
    std::uint32_t relations_per_fact = 3;
    std::uint32_t n_fillers = 20;
    std::uint32_t fillers_per_passage = 5;
    std::uint32_t distractor_extra_q = 2;  // off-fact question-side words
    std::uint32_t distractor_w = 3;        // on-fact passage-side words
    std::uint32_t n_markers = 4;           // decoy-only vocabulary
    std::uint32_t markers_per_decoy = 2;
    std::uint32_t decoy_fillers = 0;
    double train_frac = 0.8;
    std::uint32_t hash_vocab = 8192;
    std::uint64_t seed = 7;
};

struct SynonymTask {
    std::vector<Document> documents;
    std::vector<QAPair> train_pairs;
    std::vector<QAPair> eval_pairs;
};

inline SynonymTask generate_synonym_task(const SynonymTaskConfig& cfg) {
    if (cfg.n_facts < 1 || cfg.n_relations < cfg.relations_per_fact ||
        cfg.relations_per_fact < 1)
        throw DataError("synonym task: bad fact/relation counts");
    if (cfg.train_frac <= 0.0 || cfg.train_frac >= 1.0)
        throw DataError("synonym task: train_frac must be in (0,1)");
    if (cfg.n_relations < cfg.relations_per_fact + cfg.distractor_extra_q)
        throw DataError("synonym task: not enough relations for distractors");
    if (cfg.distractor_w > cfg.relations_per_fact)
        throw DataError("synonym task: distractor_w exceeds fact size");
    if (cfg.markers_per_decoy > cfg.n_markers)
        throw DataError("synonym task: markers_per_decoy exceeds n_markers");

    Rng rng(mix_seed(cfg.seed, 0x5f17ULL));
    detail::TokenPool pool(cfg.hash_vocab, rng);
    pool.reserve("entry");
    pool.reserve("decoy");
    for (std::uint32_t k = 0; k < cfg.n_facts; ++k)
        pool.reserve(std::to_string(k));

    const auto q_words = pool.fresh_batch(cfg.n_relations);
    const auto w_words = pool.fresh_batch(cfg.n_relations);
    const auto fillers = pool.fresh_batch(cfg.n_fillers);
    const auto answers = pool.fresh_batch(cfg.n_facts);
    const auto markers = pool.fresh_batch(cfg.n_markers);

    // Unique sorted relation subsets, one per fact.
    std::set<std::vector<std::uint32_t>> seen;
    std::vector<std::vector<std::uint32_t>> facts;
    while (facts.size() < cfg.n_facts) {
        std::vector<std::uint32_t> all(cfg.n_relations);
        for (std::uint32_t i = 0; i < cfg.n_relations; ++i) all[i] = i;
        rng.shuffle(all);
        std::vector<std::uint32_t> subset(all.begin(),
                                          all.begin() + cfg.relations_per_fact);
        std::sort(subset.begin(), subset.end());
        if (seen.insert(subset).second) facts.push_back(std::move(subset));
    }

    const auto sample_fillers = [&](std::size_t n) {
        std::vector<std::uint32_t> idx(cfg.n_fillers);
        for (std::uint32_t i = 0; i < cfg.n_fillers; ++i) idx[i] = i;
        rng.shuffle(idx);
        std::vector<std::string> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(fillers[idx[i]]);
        return out;
    };

    SynonymTask task;
    std::vector<QAPair> pairs;
    for (std::uint32_t k = 0; k < cfg.n_facts; ++k) {
        const auto& subset = facts[k];

        std::vector<std::string> rel_body;
        for (std::uint32_t r : subset) rel_body.push_back(w_words[r]);
        rel_body.push_back(answers[k]);
        for (auto& f : sample_fillers(cfg.fillers_per_passage))
            rel_body.push_back(std::move(f));
        rng.shuffle(rel_body);

        Document relevant;
        relevant.doc_id = "fact-" + std::to_string(k);
        relevant.title = "entry " + std::to_string(k);
        relevant.body = join_tokens(rel_body);
        task.documents.push_back(relevant);

        // Off-fact relations for the decoy's extra words.
        std::vector<std::uint32_t> off;
        for (std::uint32_t r = 0; r < cfg.n_relations; ++r)
            if (std::find(subset.begin(), subset.end(), r) == subset.end())
                off.push_back(r);
        rng.shuffle(off);

        std::vector<std::string> decoy_body;
        for (std::uint32_t r : subset) decoy_body.push_back(q_words[r]);
        for (std::uint32_t i = 0; i < cfg.distractor_extra_q; ++i)
            decoy_body.push_back(q_words[off[i]]);
        for (std::uint32_t i = 0; i < cfg.distractor_w; ++i)
            decoy_body.push_back(w_words[subset[i]]);
        std::vector<std::uint32_t> marker_idx(cfg.n_markers);
        for (std::uint32_t i = 0; i < cfg.n_markers; ++i) marker_idx[i] = i;
        rng.shuffle(marker_idx);
        for (std::uint32_t i = 0; i < cfg.markers_per_decoy; ++i)
            decoy_body.push_back(markers[marker_idx[i]]);
        for (auto& f : sample_fillers(cfg.decoy_fillers))
            decoy_body.push_back(std::move(f));
        rng.shuffle(decoy_body);

        Document decoy;
        decoy.doc_id = "decoy-" + std::to_string(k);
        decoy.title = "decoy " + std::to_string(k);
        decoy.body = join_tokens(decoy_body);
        task.documents.push_back(decoy);

        QAPair pair;
        std::vector<std::string> question;
        for (std::uint32_t r : subset) question.push_back(q_words[r]);
        pair.question = join_tokens(question);
        pair.answers = {answers[k]};
        pair.gold_context = relevant.body;
        pairs.push_back(std::move(pair));
    }

    const auto n_train = static_cast<std::size_t>(
        std::llround(cfg.train_frac * static_cast<double>(cfg.n_facts)));
    task.train_pairs.assign(pairs.begin(),
                            pairs.begin() + static_cast<std::ptrdiff_t>(n_train));
    task.eval_pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(n_train),
                           pairs.end());
    return task;
}

// ---------------------------------------------------------------------------
// Planted-answer reading task. Each example plants one answer word inside a
// filler passage (plus a per-example tag word that also appears in the
// question, keeping the positive lexically findable); its negatives contain
// fillers only. Answer and filler vocabularies are disjoint, so a linear
// span scorer can isolate the planted word.
// ---------------------------------------------------------------------------

struct PlantedReaderConfig {
    std::uint32_t n_examples = 300;
    std::uint32_t n_answer_vocab = 40;
    std::uint32_t n_fillers = 30;
    std::uint32_t body_len = 9;  // 1 answer + 1 tag + fillers
    std::uint32_t negatives_per_example = 7;
    std::uint32_t question_overlap = 3;
    double train_frac = 0.8;
    std::uint32_t hash_vocab = 8192;
    std::uint64_t seed = 11;
};

struct PlantedReaderTask {
    std::vector<Document> documents;
    std::vector<QAPair> train_pairs;
    std::vector<QAPair> eval_pairs;
};

inline PlantedReaderTask generate_planted_reader_task(
    const PlantedReaderConfig& cfg) {
    if (cfg.n_examples < 1 || cfg.n_answer_vocab < 1 || cfg.n_fillers < 1)
        throw DataError("planted reader task: bad counts");
    if (cfg.body_len < cfg.question_overlap + 2)
        throw DataError("planted reader task: body too short for answer+tag");
    if (cfg.train_frac <= 0.0 || cfg.train_frac >= 1.0)
        throw DataError("planted reader task: train_frac must be in (0,1)");

    Rng rng(mix_seed(cfg.seed, 0x91a9ULL));
    detail::TokenPool pool(cfg.hash_vocab, rng);
    pool.reserve("case");
    for (std::uint32_t k = 0; k < cfg.n_examples; ++k) {
        pool.reserve(std::to_string(k));
        for (std::uint32_t j = 0; j < cfg.negatives_per_example; ++j)
            pool.reserve(std::to_string(k) + std::to_string(j));
    }

    const auto answers = pool.fresh_batch(cfg.n_answer_vocab);
    const auto fillers = pool.fresh_batch(cfg.n_fillers);
    const auto tags = pool.fresh_batch(cfg.n_examples);

    const auto sample_fillers = [&](std::size_t n) {
        std::vector<std::string> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            out.push_back(fillers[rng.uniform_index(cfg.n_fillers)]);
        return out;
    };

    PlantedReaderTask task;
    std::vector<QAPair> pairs;
    for (std::uint32_t k = 0; k < cfg.n_examples; ++k) {
        const std::string& answer = answers[rng.uniform_index(cfg.n_answer_vocab)];

        // Distinct fillers so the question can sample from them cleanly.
        std::vector<std::uint32_t> idx(cfg.n_fillers);
        for (std::uint32_t i = 0; i < cfg.n_fillers; ++i) idx[i] = i;
        rng.shuffle(idx);
        const std::uint32_t n_body_fillers = cfg.body_len - 2;
        std::vector<std::string> body;
        for (std::uint32_t i = 0; i < n_body_fillers; ++i)
            body.push_back(fillers[idx[i]]);
        body.push_back(answer);
        body.push_back(tags[k]);
        rng.shuffle(body);

        Document positive;
        positive.doc_id = "ex" + std::to_string(k) + "-p";
        positive.title = "case " + std::to_string(k);
        positive.body = join_tokens(body);
        task.documents.push_back(positive);

        for (std::uint32_t j = 0; j < cfg.negatives_per_example; ++j) {
            Document negative;
            negative.doc_id = "ex" + std::to_string(k) + "-n" + std::to_string(j);
            negative.title =
                "case " + std::to_string(k) + std::to_string(j);
            negative.body = join_tokens(sample_fillers(cfg.body_len));
            task.documents.push_back(negative);
        }

        QAPair pair;
        std::vector<std::string> question;
        for (std::uint32_t i = 0; i < cfg.question_overlap; ++i)
            question.push_back(fillers[idx[i]]);
        question.push_back(tags[k]);
        pair.question = join_tokens(question);
        pair.answers = {answer};
        pair.gold_context = positive.body;
        pairs.push_back(std::move(pair));
    }

    const auto n_train = static_cast<std::size_t>(
        std::llround(cfg.train_frac * static_cast<double>(cfg.n_examples)));
    task.train_pairs.assign(pairs.begin(),
                            pairs.begin() + static_cast<std::ptrdiff_t>(n_train));
    task.eval_pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(n_train),
                           pairs.end());
    return task;
}

// ---------------------------------------------------------------------------
// Bridging helpers
// ---------------------------------------------------------------------------

inline std::string documents_to_jsonl(const std::vector<Document>& docs) {
    std::ostringstream out;
    for (const Document& d : docs) {
        nlohmann::ordered_json j;
        j["id"] = d.doc_id;
        j["title"] = d.title;
        j["text"] = d.body;
        out << j.dump() << '\n';
    }
    return out.str();
}

inline PassageStore store_from_documents(const std::vector<Document>& docs,
                                         const TokenizerConfig& config = {},
                                         std::uint32_t chunk_size = 100) {
    std::istringstream in(documents_to_jsonl(docs));
    return ingest_corpus(in, config, chunk_size);
}

}  // namespace dpr
