#pragma once

#include <cstdint>
#include <vector>

namespace dpr {

struct ScoredPassage {
    std::uint64_t pid;
    double score;
};

// Descending score, ties broken by ascending pid. The total order every
// ranked list in the engine uses.
inline bool ranked_before(const ScoredPassage& a, const ScoredPassage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.pid < b.pid;
}

using RankedList = std::vector<ScoredPassage>;

}  // namespace dpr
