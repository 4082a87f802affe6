#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <queue>
#include <span>
#include <vector>

#include "dpr/dual_encoder.hpp"
#include "dpr/error.hpp"
#include "dpr/io.hpp"
#include "dpr/ranking.hpp"
#include "dpr/rng.hpp"

namespace dpr {

// ---------------------------------------------------------------------------
// Vector store: f32 rows, f64 score accumulation.
// ---------------------------------------------------------------------------

struct VectorStore {
    std::uint32_t dim = 0;
    std::vector<float> data;  // row-major, size() * dim
    std::vector<std::uint64_t> pids;

    std::size_t size() const { return pids.size(); }
    std::span<const float> row(std::size_t i) const {
        return {data.data() + i * dim, dim};
    }
};

inline double dot_f64(std::span<const double> q, std::span<const float> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * static_cast<double>(v[i]);
    return s;
}

inline double dot_f64(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

// Encode every passage with the passage tower, in store order.
inline VectorStore embed_store(const EncoderParams& params, const PassageStore& store) {
    VectorStore vs;
    vs.dim = params.out_dim;
    vs.data.reserve(store.passages.size() * params.out_dim);
    vs.pids.reserve(store.passages.size());
    for (const Passage& p : store.passages) {
        const auto vec = encode(
            params, passage_token_ids(store.tokenizer, p, params.vocab),
            Tower::passage);
        for (double x : vec) vs.data.push_back(static_cast<float>(x));
        vs.pids.push_back(p.pid);
    }
    return vs;
}

// Exhaustive inner-product top-k with the (score desc, pid asc) tie rule.
inline RankedList exact_search(const VectorStore& vs, std::span<const double> query,
                               std::size_t k) {
    if (k < 1) throw DataError("exact_search: k must be >= 1");
    if (query.size() != vs.dim) throw DataError("exact_search: dimension mismatch");
    auto keep_worst_on_top = [](const ScoredPassage& a, const ScoredPassage& b) {
        return ranked_before(a, b);
    };
    std::priority_queue<ScoredPassage, std::vector<ScoredPassage>,
                        decltype(keep_worst_on_top)>
        heap(keep_worst_on_top);
    for (std::size_t i = 0; i < vs.size(); ++i) {
        const ScoredPassage cand{vs.pids[i], dot_f64(query, vs.row(i))};
        if (heap.size() < k) {
            heap.push(cand);
        } else if (ranked_before(cand, heap.top())) {
            heap.pop();
            heap.push(cand);
        }
    }
    RankedList out(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
        out[i] = heap.top();
        heap.pop();
    }
    return out;
}

// ---------------------------------------------------------------------------
// HNSW graph over inner product
// ---------------------------------------------------------------------------

struct HnswParams {
    std::uint32_t M = 16;
    std::uint32_t ef_construction = 200;
    std::uint32_t ef_search = 128;
    std::uint64_t seed = 42;
};

struct HnswIndex {
    HnswParams params;
    std::uint32_t entry = 0;
    std::int32_t max_level = 0;
    std::vector<std::int32_t> levels;                        // per node
    std::vector<std::vector<std::vector<std::uint32_t>>> links;  // node, layer

    std::size_t size() const { return levels.size(); }
    std::uint32_t layer_cap(int layer) const {
        return layer == 0 ? 2 * params.M : params.M;
    }
};

namespace detail {

struct ScoredNode {
    double score;
    std::uint32_t node;
};

// Higher score first; ties to the smaller node index, making every search
// and build step a total order.
inline bool node_better(const ScoredNode& a, const ScoredNode& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.node < b.node;
}

// Beam search within one layer. Returns up to ef nodes, best first.
template <typename ScoreFn>
std::vector<ScoredNode> hnsw_search_layer(const HnswIndex& index, ScoreFn&& score,
                                          const std::vector<ScoredNode>& entries,
                                          std::size_t ef, int layer,
                                          std::vector<std::uint32_t>& visit_mark,
                                          std::uint32_t& epoch) {
    if (++epoch == 0) {
        std::fill(visit_mark.begin(), visit_mark.end(), 0);
        epoch = 1;
    }
    auto cand_less = [](const ScoredNode& a, const ScoredNode& b) {
        return node_better(b, a);  // top = best
    };
    auto result_less = [](const ScoredNode& a, const ScoredNode& b) {
        return node_better(a, b);  // top = worst
    };
    std::priority_queue<ScoredNode, std::vector<ScoredNode>, decltype(cand_less)>
        candidates(cand_less);
    std::priority_queue<ScoredNode, std::vector<ScoredNode>, decltype(result_less)>
        results(result_less);
    for (const ScoredNode& e : entries) {
        if (visit_mark[e.node] == epoch) continue;
        visit_mark[e.node] = epoch;
        candidates.push(e);
        results.push(e);
        if (results.size() > ef) results.pop();
    }
    while (!candidates.empty()) {
        const ScoredNode c = candidates.top();
        if (results.size() >= ef && !node_better(c, results.top())) break;
        candidates.pop();
        for (std::uint32_t nb : index.links[c.node][layer]) {
            if (visit_mark[nb] == epoch) continue;
            visit_mark[nb] = epoch;
            const ScoredNode sn{score(nb), nb};
            if (results.size() < ef || node_better(sn, results.top())) {
                candidates.push(sn);
                results.push(sn);
                if (results.size() > ef) results.pop();
            }
        }
    }
    std::vector<ScoredNode> out;
    out.reserve(results.size());
    while (!results.empty()) {
        out.push_back(results.top());
        results.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

template <typename ScoreFn>
ScoredNode hnsw_greedy(const HnswIndex& index, ScoreFn&& score, ScoredNode ep,
                       int layer) {
    bool moved = true;
    while (moved) {
        moved = false;
        for (std::uint32_t nb : index.links[ep.node][layer]) {
            const ScoredNode sn{score(nb), nb};
            if (node_better(sn, ep)) {
                ep = sn;
                moved = true;
            }
        }
    }
    return ep;
}

// Neighbor selection: walk candidates best-score-first and keep one only if
// it scores higher against the anchor than against every neighbor already
// kept, so links spread across directions instead of piling onto one hub.
// Rejected candidates back-fill any capacity left at the end.
inline std::vector<std::uint32_t> hnsw_select_neighbors(
    const VectorStore& vs, std::vector<ScoredNode> candidates, std::uint32_t cap) {
    std::sort(candidates.begin(), candidates.end(), node_better);
    std::vector<std::uint32_t> selected;
    if (candidates.size() <= cap) {
        for (const ScoredNode& c : candidates) selected.push_back(c.node);
        return selected;
    }
    for (const ScoredNode& c : candidates) {
        if (selected.size() >= cap) break;
        bool keep = true;
        for (std::uint32_t s : selected) {
            if (dot_f64(vs.row(c.node), vs.row(s)) > c.score) {
                keep = false;
                break;
            }
        }
        if (keep) selected.push_back(c.node);
    }
    return selected;
}

// Re-select an overflowing adjacency list down to `cap` with the same rule.
inline void hnsw_prune(const VectorStore& vs, HnswIndex& index, std::uint32_t node,
                       int layer, std::uint32_t cap) {
    auto& lst = index.links[node][layer];
    if (lst.size() <= cap) return;
    std::vector<ScoredNode> scored;
    scored.reserve(lst.size());
    for (std::uint32_t nb : lst)
        scored.push_back({dot_f64(vs.row(node), vs.row(nb)), nb});
    lst = hnsw_select_neighbors(vs, std::move(scored), cap);
}

// Inner-product HNSW can leave low-scoring nodes with no incoming layer-0
// edges. Add edges from reached nodes (spare capacity first) until the
// layer-0 graph is connected from the entry point.
inline void hnsw_repair_reachability(const VectorStore& vs, HnswIndex& index) {
    const std::size_t n = index.size();
    const std::uint32_t cap0 = index.layer_cap(0);
    std::vector<char> reached(n);
    std::vector<std::uint32_t> queue;
    for (int round = 0; round < 100; ++round) {
        std::fill(reached.begin(), reached.end(), 0);
        queue.clear();
        queue.push_back(index.entry);
        reached[index.entry] = 1;
        for (std::size_t head = 0; head < queue.size(); ++head)
            for (std::uint32_t nb : index.links[queue[head]][0])
                if (!reached[nb]) {
                    reached[nb] = 1;
                    queue.push_back(nb);
                }
        if (queue.size() == n) return;

        std::vector<std::uint32_t> indeg(n, 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::uint32_t nb : index.links[i][0]) ++indeg[nb];

        bool progressed = false;
        for (std::uint32_t x = 0; x < n; ++x) {
            if (reached[x]) continue;
            // Best reached node with spare capacity; fall back to evicting
            // the worst link of the best reached node that has one to spare.
            ScoredNode best_spare{0.0, 0};
            bool have_spare = false;
            std::vector<ScoredNode> full;
            for (std::uint32_t r : queue) {
                const ScoredNode sn{dot_f64(vs.row(x), vs.row(r)), r};
                if (index.links[r][0].size() < cap0) {
                    if (!have_spare || node_better(sn, best_spare)) {
                        best_spare = sn;
                        have_spare = true;
                    }
                } else {
                    full.push_back(sn);
                }
            }
            if (have_spare) {
                index.links[best_spare.node][0].push_back(x);
                ++indeg[x];
                progressed = true;
                continue;
            }
            std::sort(full.begin(), full.end(), node_better);
            for (const ScoredNode& sn : full) {
                auto& lst = index.links[sn.node][0];
                std::uint32_t worst_at = 0;
                bool found = false;
                ScoredNode worst{0.0, 0};
                for (std::uint32_t li = 0; li < lst.size(); ++li) {
                    if (indeg[lst[li]] < 2) continue;  // keep sole in-edges
                    const ScoredNode w{dot_f64(vs.row(sn.node), vs.row(lst[li])),
                                       lst[li]};
                    if (!found || node_better(worst, w)) {
                        worst = w;
                        worst_at = li;
                        found = true;
                    }
                }
                if (!found) continue;
                --indeg[lst[worst_at]];
                lst[worst_at] = x;
                ++indeg[x];
                progressed = true;
                break;
            }
        }
        if (!progressed) throw InternalError("hnsw reachability repair stalled");
    }
    throw InternalError("hnsw reachability repair did not converge");
}

}  // namespace detail

inline void validate_hnsw_params(const HnswParams& p) {
    if (p.M < 2) throw DataError("hnsw: M must be >= 2");
    if (p.ef_construction < p.M) throw DataError("hnsw: ef_construction must be >= M");
    if (p.ef_search < 1) throw DataError("hnsw: ef_search must be >= 1");
}

// Standard HNSW construction: exponentially distributed levels with factor
// 1/ln(M), greedy descent to the target layer, then an ef_construction beam
// and score-ordered diversity selection per layer. Deterministic given the
// seed.
inline HnswIndex build_hnsw(const VectorStore& vs, HnswParams params = {}) {
    validate_hnsw_params(params);
    const std::size_t n = vs.size();
    if (n < 1) throw DataError("hnsw: empty vector store");
    HnswIndex index;
    index.params = params;
    index.levels.resize(n);
    index.links.resize(n);

    Rng rng(mix_seed(params.seed, 0x688e57ULL));
    const double mult = 1.0 / std::log(static_cast<double>(params.M));
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        int lvl = static_cast<int>(-std::log(1.0 - u) * mult);
        if (lvl > 48) lvl = 48;
        index.levels[i] = lvl;
    }

    std::vector<std::uint32_t> visit_mark(n, 0);
    std::uint32_t epoch = 0;

    index.entry = 0;
    index.max_level = index.levels[0];
    index.links[0].resize(index.levels[0] + 1);

    for (std::uint32_t i = 1; i < n; ++i) {
        const int lvl = index.levels[i];
        index.links[i].resize(lvl + 1);
        auto score = [&](std::uint32_t nb) { return dot_f64(vs.row(i), vs.row(nb)); };

        detail::ScoredNode ep{score(index.entry), index.entry};
        for (int l = index.max_level; l > lvl; --l)
            ep = detail::hnsw_greedy(index, score, ep, l);

        std::vector<detail::ScoredNode> eps{ep};
        for (int l = std::min(lvl, index.max_level); l >= 0; --l) {
            auto found = detail::hnsw_search_layer(index, score, eps,
                                                   params.ef_construction, l,
                                                   visit_mark, epoch);
            const auto picked =
                detail::hnsw_select_neighbors(vs, found, index.layer_cap(l));
            for (std::uint32_t nb : picked) {
                index.links[i][l].push_back(nb);
                index.links[nb][l].push_back(i);
                if (index.links[nb][l].size() > index.layer_cap(l))
                    detail::hnsw_prune(vs, index, nb, l, index.layer_cap(l));
            }
            // Carry only the best node down: seeding the next beam with the
            // whole found set fills its result window upfront and blocks
            // exploration below the worst seed's score.
            eps = {found.front()};
        }
        if (lvl > index.max_level) {
            index.max_level = lvl;
            index.entry = i;
        }
    }

    // Refinement pass: nodes inserted early picked their links from a tiny
    // graph. Re-run each node's insert search against the finished graph and
    // re-select its lists, adding back-edges so in-degree follows.
    for (std::uint32_t i = 0; i < n; ++i) {
        auto score = [&](std::uint32_t nb) { return dot_f64(vs.row(i), vs.row(nb)); };
        detail::ScoredNode ep{score(index.entry), index.entry};
        for (int l = index.max_level; l > index.levels[i]; --l)
            ep = detail::hnsw_greedy(index, score, ep, l);
        std::vector<detail::ScoredNode> eps{ep};
        for (int l = std::min(index.levels[i], index.max_level); l >= 0; --l) {
            auto found = detail::hnsw_search_layer(index, score, eps,
                                                   params.ef_construction, l,
                                                   visit_mark, epoch);
            std::vector<detail::ScoredNode> cands;
            cands.reserve(found.size() + index.links[i][l].size());
            for (const auto& sn : found)
                if (sn.node != i) cands.push_back(sn);
            for (std::uint32_t nb : index.links[i][l])
                cands.push_back({score(nb), nb});
            std::sort(cands.begin(), cands.end(), detail::node_better);
            cands.erase(std::unique(cands.begin(), cands.end(),
                                    [](const detail::ScoredNode& a,
                                       const detail::ScoredNode& b) {
                                        return a.node == b.node;
                                    }),
                        cands.end());
            index.links[i][l] = detail::hnsw_select_neighbors(
                vs, std::move(cands), index.layer_cap(l));
            for (std::uint32_t nb : index.links[i][l]) {
                auto& back = index.links[nb][l];
                if (std::find(back.begin(), back.end(), i) == back.end()) {
                    back.push_back(i);
                    if (back.size() > index.layer_cap(l))
                        detail::hnsw_prune(vs, index, nb, l, index.layer_cap(l));
                }
            }
            eps = {found.front()};
        }
    }

    detail::hnsw_repair_reachability(vs, index);
    return index;
}

inline RankedList hnsw_search(const HnswIndex& index, const VectorStore& vs,
                              std::span<const double> query, std::size_t k) {
    if (k < 1) throw DataError("hnsw_search: k must be >= 1");
    if (query.size() != vs.dim) throw DataError("hnsw_search: dimension mismatch");
    const std::size_t ef = std::max<std::size_t>(index.params.ef_search, k);
    auto score = [&](std::uint32_t nb) { return dot_f64(query, vs.row(nb)); };

    detail::ScoredNode ep{score(index.entry), index.entry};
    for (int l = index.max_level; l > 0; --l)
        ep = detail::hnsw_greedy(index, score, ep, l);

    std::vector<std::uint32_t> visit_mark(index.size(), 0);
    std::uint32_t epoch = 0;
    auto found = detail::hnsw_search_layer(index, score, {ep}, ef, 0, visit_mark,
                                           epoch);
    RankedList out;
    out.reserve(std::min(k, found.size()));
    for (const auto& sn : found) out.push_back({vs.pids[sn.node], sn.score});
    std::sort(out.begin(), out.end(), ranked_before);
    if (out.size() > k) out.resize(k);
    return out;
}

// Mean over queries of |approx top-k ∩ exact top-k| / k.
inline double recall_at_k(const std::vector<RankedList>& approx,
                          const std::vector<RankedList>& exact, std::size_t k) {
    if (approx.size() != exact.size())
        throw DataError("recall_at_k: query count mismatch");
    if (approx.empty()) throw DataError("recall_at_k: no queries");
    double total = 0.0;
    for (std::size_t q = 0; q < approx.size(); ++q) {
        std::vector<std::uint64_t> a, e;
        for (std::size_t i = 0; i < std::min(k, approx[q].size()); ++i)
            a.push_back(approx[q][i].pid);
        for (std::size_t i = 0; i < std::min(k, exact[q].size()); ++i)
            e.push_back(exact[q][i].pid);
        std::sort(a.begin(), a.end());
        std::sort(e.begin(), e.end());
        std::vector<std::uint64_t> both;
        std::set_intersection(a.begin(), a.end(), e.begin(), e.end(),
                              std::back_inserter(both));
        total += static_cast<double>(both.size()) / static_cast<double>(k);
    }
    return total / static_cast<double>(approx.size());
}

// Structural contract: degree caps, layer nesting, no self-loops or duplicate
// edges, and layer-0 reachability from the entry point.
inline void check_hnsw_invariants(const HnswIndex& index, const VectorStore& vs) {
    const std::size_t n = index.size();
    if (n != vs.size()) throw InternalError("hnsw: node/vector count mismatch");
    if (index.entry >= n) throw InternalError("hnsw: entry point out of range");
    if (index.levels[index.entry] != index.max_level)
        throw InternalError("hnsw: entry point is not at the top level");
    for (std::size_t i = 0; i < n; ++i) {
        if (index.links[i].size() != static_cast<std::size_t>(index.levels[i]) + 1)
            throw InternalError("hnsw: node missing layer lists");
        for (int l = 0; l <= index.levels[i]; ++l) {
            const auto& lst = index.links[i][l];
            if (lst.size() > index.layer_cap(l))
                throw InternalError("hnsw: degree cap exceeded");
            std::vector<std::uint32_t> seen(lst);
            std::sort(seen.begin(), seen.end());
            if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
                throw InternalError("hnsw: duplicate edge");
            for (std::uint32_t nb : lst) {
                if (nb >= n) throw InternalError("hnsw: edge endpoint out of range");
                if (nb == i) throw InternalError("hnsw: self loop");
                if (index.levels[nb] < l)
                    throw InternalError("hnsw: edge to node below this layer");
            }
        }
    }
    std::vector<char> reached(n, 0);
    std::vector<std::uint32_t> queue{index.entry};
    reached[index.entry] = 1;
    for (std::size_t head = 0; head < queue.size(); ++head)
        for (std::uint32_t nb : index.links[queue[head]][0])
            if (!reached[nb]) {
                reached[nb] = 1;
                queue.push_back(nb);
            }
    if (queue.size() != n)
        throw InternalError("hnsw: node unreachable from entry at layer 0");
}

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------

// magic "DPRV", version u32, dim u32, count u64, f32 rows, u64 pid array.
inline void save_vectors(const VectorStore& vs, const std::filesystem::path& path) {
    BinaryWriter w(path);
    w.magic("DPRV");
    w.u32(1);
    w.u32(vs.dim);
    w.u64(vs.size());
    for (float x : vs.data) w.f32(x);
    for (std::uint64_t pid : vs.pids) w.u64(pid);
    w.close();
}

inline VectorStore load_vectors(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("DPRV");
    if (r.u32() != 1) throw DataError("unsupported vector file version");
    VectorStore vs;
    vs.dim = r.u32();
    const std::uint64_t n = r.u64();
    vs.data.resize(n * vs.dim);
    for (float& x : vs.data) x = r.f32();
    vs.pids.resize(n);
    for (auto& pid : vs.pids) pid = r.u64();
    return vs;
}

// magic "HNSW", version u32, M u32, efc u32, efs u32, seed u64, count u64,
// entry u32, max_level u32, levels u32[count], then per node per layer a
// length-prefixed u32 neighbor list.
inline void save_hnsw(const HnswIndex& index, const std::filesystem::path& path) {
    BinaryWriter w(path);
    w.magic("HNSW");
    w.u32(1);
    w.u32(index.params.M);
    w.u32(index.params.ef_construction);
    w.u32(index.params.ef_search);
    w.u64(index.params.seed);
    w.u64(index.size());
    w.u32(index.entry);
    w.u32(static_cast<std::uint32_t>(index.max_level));
    for (std::int32_t lvl : index.levels) w.u32(static_cast<std::uint32_t>(lvl));
    for (std::size_t i = 0; i < index.size(); ++i) {
        for (const auto& lst : index.links[i]) {
            w.u32(static_cast<std::uint32_t>(lst.size()));
            for (std::uint32_t nb : lst) w.u32(nb);
        }
    }
    w.close();
}

inline HnswIndex load_hnsw(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("HNSW");
    if (r.u32() != 1) throw DataError("unsupported graph file version");
    HnswIndex index;
    index.params.M = r.u32();
    index.params.ef_construction = r.u32();
    index.params.ef_search = r.u32();
    index.params.seed = r.u64();
    const std::uint64_t n = r.u64();
    index.entry = r.u32();
    index.max_level = static_cast<std::int32_t>(r.u32());
    index.levels.resize(n);
    for (auto& lvl : index.levels) lvl = static_cast<std::int32_t>(r.u32());
    index.links.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        index.links[i].resize(index.levels[i] + 1);
        for (auto& lst : index.links[i]) {
            lst.resize(r.u32());
            for (auto& nb : lst) nb = r.u32();
        }
    }
    return index;
}

}  // namespace dpr
