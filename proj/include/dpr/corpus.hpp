#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dpr/error.hpp"
#include "dpr/io.hpp"

namespace dpr {

// Tokenization: lowercase (optional) + maximal alphanumeric runs. ASCII
// alphanumerics and any non-ASCII UTF-8 byte count as word characters;
// everything else splits. Lowercasing is ASCII-only.
struct TokenizerConfig {
    bool lowercase = true;
    std::string split_rule = "alnum";  // recorded in store metadata
    std::set<std::string> stopwords;   // dropped after splitting; default empty
};

inline bool is_word_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
           (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline std::vector<std::string> tokenize(const TokenizerConfig& config,
                                         std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            if (config.stopwords.empty() || !config.stopwords.count(cur))
                tokens.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char c : text) {
        if (is_word_byte(c)) {
            if (config.lowercase && c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
            cur.push_back(static_cast<char>(c));
        } else {
            flush();
        }
    }
    flush();
    return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

struct Document {
    std::string doc_id;
    std::string title;
    std::string body;
};

// Fixed-length retrieval unit. body_text is the space-joined token stream, so
// re-tokenizing body_text reproduces body_tokens exactly.
struct Passage {
    std::uint64_t pid = 0;
    std::string doc_id;
    std::string title;
    std::vector<std::string> body_tokens;
    std::string body_text;
    std::uint32_t ordinal = 0;
};

struct PassageStore {
    std::vector<Passage> passages;
    std::uint32_t chunk_size = 100;
    TokenizerConfig tokenizer;

    std::size_t size() const { return passages.size(); }
    const Passage& at(std::uint64_t pid) const {
        if (pid >= passages.size())
            throw DataError("passage id out of range: " + std::to_string(pid));
        return passages[pid];
    }
};

// Splits a document's token stream into chunks of at most chunk_size tokens.
// All chunks but the last are full; pids are assigned by the caller.
inline std::vector<Passage> chunk_document(const Document& doc,
                                           const TokenizerConfig& config,
                                           std::uint32_t chunk_size) {
    if (chunk_size < 1) throw DataError("chunk_size must be >= 1");
    const std::vector<std::string> tokens = tokenize(config, doc.body);
    std::vector<Passage> out;
    for (std::size_t start = 0; start < tokens.size(); start += chunk_size) {
        Passage p;
        p.doc_id = doc.doc_id;
        p.title = doc.title;
        p.ordinal = static_cast<std::uint32_t>(out.size());
        const std::size_t end = std::min(tokens.size(), start + chunk_size);
        p.body_tokens.assign(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                             tokens.begin() + static_cast<std::ptrdiff_t>(end));
        p.body_text = join_tokens(p.body_tokens);
        out.push_back(std::move(p));
    }
    return out;
}

// Reads UTF-8 JSONL documents {"id","title","text"} and builds the store.
// Passage ids are assigned in file order then chunk order, dense from 0.
inline PassageStore ingest_corpus(std::istream& in, const TokenizerConfig& config,
                                  std::uint32_t chunk_size = 100) {
    PassageStore store;
    store.chunk_size = chunk_size;
    store.tokenizer = config;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed JSON at line " + std::to_string(line_no) +
                            ": " + e.what());
        }
        Document doc;
        try {
            doc.doc_id = j.at("id").get<std::string>();
            doc.title = j.value("title", std::string{});
            doc.body = j.value("text", std::string{});
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad document at line " + std::to_string(line_no) +
                            ": " + e.what());
        }
        if (doc.doc_id.empty())
            throw DataError("empty doc id at line " + std::to_string(line_no));
        if (!seen_ids.insert(doc.doc_id).second)
            throw DataError("duplicate doc id '" + doc.doc_id + "' at line " +
                            std::to_string(line_no));
        for (Passage& p : chunk_document(doc, config, chunk_size)) {
            p.pid = store.passages.size();
            store.passages.push_back(std::move(p));
        }
    }
    return store;
}

inline PassageStore ingest_corpus(const std::filesystem::path& path,
                                  const TokenizerConfig& config,
                                  std::uint32_t chunk_size = 100) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus: " + path.string());
    return ingest_corpus(in, config, chunk_size);
}

// On-disk layout: <dir>/passages.jsonl + <dir>/store_meta.json. Byte-exact
// reproducible for identical input and config.
inline void save_store(const PassageStore& store, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "passages.jsonl", std::ios::binary);
    if (!out) throw DataError("cannot write store at " + dir.string());
    for (const Passage& p : store.passages) {
        nlohmann::ordered_json j;
        j["pid"] = p.pid;
        j["doc"] = p.doc_id;
        j["title"] = p.title;
        j["text"] = p.body_text;
        j["ord"] = p.ordinal;
        out << j.dump() << '\n';
    }
    out.close();
    if (!out) throw DataError("write failed for store at " + dir.string());

    nlohmann::ordered_json meta;
    meta["chunk_size"] = store.chunk_size;
    meta["tokenizer"]["lowercase"] = store.tokenizer.lowercase;
    meta["tokenizer"]["split_rule"] = store.tokenizer.split_rule;
    meta["tokenizer"]["stopwords"] = store.tokenizer.stopwords;
    write_text_file(dir / "store_meta.json", meta.dump(2) + "\n");
}

inline PassageStore load_store(const std::filesystem::path& dir) {
    PassageStore store;
    const auto meta_path = dir / "store_meta.json";
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad store metadata " + meta_path.string() + ": " + e.what());
    }
    store.chunk_size = meta.at("chunk_size").get<std::uint32_t>();
    store.tokenizer.lowercase = meta.at("tokenizer").at("lowercase").get<bool>();
    store.tokenizer.split_rule = meta.at("tokenizer").at("split_rule").get<std::string>();
    for (const auto& w : meta.at("tokenizer").at("stopwords"))
        store.tokenizer.stopwords.insert(w.get<std::string>());

    std::ifstream in(dir / "passages.jsonl", std::ios::binary);
    if (!in) throw DataError("cannot open store at " + dir.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed store line " + std::to_string(line_no) + ": " +
                            e.what());
        }
        Passage p;
        p.pid = j.at("pid").get<std::uint64_t>();
        p.doc_id = j.at("doc").get<std::string>();
        p.title = j.at("title").get<std::string>();
        p.body_text = j.at("text").get<std::string>();
        p.ordinal = j.at("ord").get<std::uint32_t>();
        p.body_tokens = tokenize(store.tokenizer, p.body_text);
        if (p.pid != store.passages.size())
            throw DataError("non-contiguous pid at store line " + std::to_string(line_no));
        store.passages.push_back(std::move(p));
    }
    return store;
}

}  // namespace dpr
