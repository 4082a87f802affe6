#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace dpr {

namespace detail {

inline bool is_ascii_punct(unsigned char c) {
    return std::ispunct(c) != 0;
}

inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace detail

// Answer-string normalization: lowercase, delete punctuation, drop the
// English articles {a, an, the}, collapse whitespace. Idempotent.
inline std::string normalize_answer(std::string_view s) {
    std::string lowered;
    lowered.reserve(s.size());
    for (char c : s) {
        const auto uc = static_cast<unsigned char>(c);
        if (detail::is_ascii_punct(uc)) continue;
        lowered.push_back(static_cast<char>(std::tolower(uc)));
    }
    std::string out;
    for (const std::string& tok : detail::split_ws(lowered)) {
        if (tok == "a" || tok == "an" || tok == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

// True iff some normalized answer occurs as a token-contiguous substring of
// the normalized passage body ("sea" does not match inside "seaside").
inline bool contains_answer(std::string_view body_text,
                            const std::vector<std::string>& answers) {
    const std::vector<std::string> body = detail::split_ws(normalize_answer(body_text));
    for (const std::string& answer : answers) {
        const std::vector<std::string> ans = detail::split_ws(normalize_answer(answer));
        if (ans.empty() || ans.size() > body.size()) continue;
        if (std::search(body.begin(), body.end(), ans.begin(), ans.end()) !=
            body.end())
            return true;
    }
    return false;
}

}  // namespace dpr
