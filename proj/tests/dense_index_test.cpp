#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dpr/dense_index.hpp"
#include "dpr/rng.hpp"
#include "test_util.hpp"

using namespace dpr;
using Catch::Matchers::WithinAbs;

namespace {

VectorStore gaussian_store(std::size_t n, std::uint32_t dim, std::uint64_t seed,
                           bool unit_norm = false) {
    Rng rng(seed);
    VectorStore vs;
    vs.dim = dim;
    vs.data.resize(n * dim);
    for (float& x : vs.data) x = static_cast<float>(rng.normal());
    if (unit_norm) {
        for (std::size_t i = 0; i < n; ++i) {
            float* row = vs.data.data() + i * dim;
            double norm = 0.0;
            for (std::uint32_t c = 0; c < dim; ++c) norm += double(row[c]) * row[c];
            norm = std::sqrt(norm);
            for (std::uint32_t c = 0; c < dim; ++c)
                row[c] = static_cast<float>(row[c] / norm);
        }
    }
    vs.pids.resize(n);
    for (std::size_t i = 0; i < n; ++i) vs.pids[i] = i;
    return vs;
}

std::vector<double> row_as_query(const VectorStore& vs, std::size_t i) {
    const auto r = vs.row(i);
    return std::vector<double>(r.begin(), r.end());
}

std::vector<double> gaussian_query(Rng& rng, std::uint32_t dim) {
    std::vector<double> q(dim);
    for (double& x : q) x = rng.normal();
    return q;
}

// Full scan with an explicit sort; independent of the heap-based search.
RankedList naive_topk(const VectorStore& vs, std::span<const double> query,
                      std::size_t k) {
    RankedList all;
    for (std::size_t i = 0; i < vs.size(); ++i)
        all.push_back({vs.pids[i], dot_f64(query, vs.row(i))});
    std::sort(all.begin(), all.end(), ranked_before);
    if (all.size() > k) all.resize(k);
    return all;
}

}  // namespace

TEST_CASE("embed_store encodes every passage with the passage tower, in order") {
    const PassageStore store = dpr::test::make_store({
        {"alpha", "north river bend"},
        {"beta", "south lake shore"},
        {"gamma", "east hill crest line"},
    });
    const EncoderParams params = EncoderParams::init(512, 12, 8, 3);
    const VectorStore vs = embed_store(params, store);
    REQUIRE(vs.dim == 8);
    REQUIRE(vs.size() == 3);
    REQUIRE(vs.pids == std::vector<std::uint64_t>{0, 1, 2});
    for (std::size_t i = 0; i < 3; ++i) {
        const auto expected = encode(
            params,
            passage_token_ids(store.tokenizer, store.passages[i], params.vocab),
            Tower::passage);
        const auto got = vs.row(i);
        for (std::size_t c = 0; c < 8; ++c)
            REQUIRE_THAT(double(got[c]), WithinAbs(expected[c], 1e-6));
    }
    const VectorStore again = embed_store(params, store);
    REQUIRE(vs.data == again.data);  // deterministic to the bit
}

TEST_CASE("exact_search matches a full-scan oracle") {
    const VectorStore vs = gaussian_store(200, 16, 5);
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = gaussian_query(rng, 16);
        const RankedList got = exact_search(vs, q, 10);
        const RankedList want = naive_topk(vs, q, 10);
        REQUIRE(got.size() == 10);
        for (std::size_t i = 0; i < 10; ++i) {
            REQUIRE(got[i].pid == want[i].pid);
            REQUIRE_THAT(got[i].score, WithinAbs(want[i].score, 1e-9));
        }
    }
}

TEST_CASE("exact_search edge cases") {
    SECTION("k at least the store size ranks everything") {
        const VectorStore vs = gaussian_store(7, 4, 8);
        Rng rng(9);
        const auto q = gaussian_query(rng, 4);
        const RankedList got = exact_search(vs, q, 50);
        REQUIRE(got.size() == 7);
        REQUIRE(std::is_sorted(got.begin(), got.end(), ranked_before));
    }
    SECTION("duplicate vectors tie toward the lower pid") {
        VectorStore vs;
        vs.dim = 2;
        vs.data = {1.f, 0.f, 0.f, 1.f, 1.f, 0.f};  // rows 0 and 2 identical
        vs.pids = {0, 1, 2};
        const std::vector<double> q = {1.0, 0.0};
        const RankedList got = exact_search(vs, q, 3);
        REQUIRE(got[0].pid == 0);
        REQUIRE(got[1].pid == 2);
        REQUIRE(got[2].pid == 1);
    }
    SECTION("unit-normalized self query ranks itself first") {
        const VectorStore vs = gaussian_store(300, 16, 10, /*unit_norm=*/true);
        for (std::size_t i = 0; i < vs.size(); i += 37) {
            const RankedList got = exact_search(vs, row_as_query(vs, i), 1);
            REQUIRE(got.front().pid == vs.pids[i]);
        }
    }
    SECTION("validation") {
        const VectorStore vs = gaussian_store(5, 4, 11);
        const std::vector<double> q4(4, 0.0), q3(3, 0.0);
        REQUIRE_THROWS_AS(exact_search(vs, q4, 0), DataError);
        REQUIRE_THROWS_AS(exact_search(vs, q3, 1), DataError);
    }
}

TEST_CASE("graph construction rejects bad parameters and empty input") {
    const VectorStore vs = gaussian_store(10, 4, 12);
    REQUIRE_THROWS_AS(build_hnsw(vs, {1, 200, 128, 42}), DataError);
    REQUIRE_THROWS_AS(build_hnsw(vs, {16, 8, 128, 42}), DataError);
    REQUIRE_THROWS_AS(build_hnsw(vs, {16, 200, 0, 42}), DataError);
    REQUIRE_THROWS_AS(build_hnsw(VectorStore{}, HnswParams{}), DataError);
}

TEST_CASE("single-vector graph is just its entry point") {
    const VectorStore vs = gaussian_store(1, 8, 13);
    const HnswIndex index = build_hnsw(vs);
    REQUIRE(index.size() == 1);
    REQUIRE(index.entry == 0);
    check_hnsw_invariants(index, vs);
    const RankedList got = hnsw_search(index, vs, row_as_query(vs, 0), 5);
    REQUIRE(got.size() == 1);
    REQUIRE(got.front().pid == 0);
}

TEST_CASE("graph build satisfies the structural invariants and is deterministic") {
    const VectorStore vs = gaussian_store(2000, 16, 14);
    const HnswParams params{16, 64, 128, 42};
    const HnswIndex index = build_hnsw(vs, params);
    check_hnsw_invariants(index, vs);

    std::int32_t top = 0;
    for (std::int32_t lvl : index.levels) {
        REQUIRE(lvl >= 0);
        REQUIRE(lvl <= 48);
        top = std::max(top, lvl);
    }
    REQUIRE(index.max_level == top);

    const HnswIndex again = build_hnsw(vs, params);
    REQUIRE(again.entry == index.entry);
    REQUIRE(again.levels == index.levels);
    REQUIRE(again.links == index.links);
}

TEST_CASE("graph search finds indexed vectors and returns clean ranked lists") {
    const VectorStore vs = gaussian_store(1000, 16, 15, /*unit_norm=*/true);
    const HnswIndex index = build_hnsw(vs, {16, 100, 256, 42});
    check_hnsw_invariants(index, vs);

    SECTION("self queries come back first") {
        for (std::size_t i = 0; i < vs.size(); i += 50) {
            const RankedList got = hnsw_search(index, vs, row_as_query(vs, i), 1);
            REQUIRE(got.front().pid == vs.pids[i]);
        }
    }
    SECTION("results are sorted, unique, and capped at k") {
        Rng rng(16);
        const auto q = gaussian_query(rng, 16);
        const RankedList got = hnsw_search(index, vs, q, 10);
        REQUIRE(got.size() == 10);
        REQUIRE(std::is_sorted(got.begin(), got.end(), ranked_before));
        std::vector<std::uint64_t> pids;
        for (const auto& sp : got) pids.push_back(sp.pid);
        std::sort(pids.begin(), pids.end());
        REQUIRE(std::adjacent_find(pids.begin(), pids.end()) == pids.end());
    }
    SECTION("k beyond the store size returns what exists") {
        const VectorStore small = gaussian_store(5, 16, 17);
        const HnswIndex tiny = build_hnsw(small, {4, 8, 16, 1});
        Rng rng(18);
        const RankedList got = hnsw_search(tiny, small, gaussian_query(rng, 16), 9);
        REQUIRE(got.size() == 5);
    }
    SECTION("validation") {
        const std::vector<double> q16(16, 0.0), q8(8, 0.0);
        REQUIRE_THROWS_AS(hnsw_search(index, vs, q16, 0), DataError);
        REQUIRE_THROWS_AS(hnsw_search(index, vs, q8, 3), DataError);
    }
}

TEST_CASE("search beam width trades recall up monotonically") {
    const VectorStore vs = gaussian_store(5000, 32, 19);
    HnswIndex index = build_hnsw(vs, {16, 200, 128, 42});
    check_hnsw_invariants(index, vs);

    Rng rng(20);
    std::vector<std::vector<double>> queries;
    for (int i = 0; i < 100; ++i) queries.push_back(gaussian_query(rng, 32));
    std::vector<RankedList> exact;
    for (const auto& q : queries) exact.push_back(exact_search(vs, q, 10));

    std::vector<double> recalls;
    for (std::uint32_t efs : {16u, 64u, 128u, 256u}) {
        index.params.ef_search = efs;
        std::vector<RankedList> approx;
        for (const auto& q : queries) approx.push_back(hnsw_search(index, vs, q, 10));
        recalls.push_back(recall_at_k(approx, exact, 10));
    }
    // Wider beams may only help, up to a whisker of per-query noise.
    for (std::size_t i = 1; i < recalls.size(); ++i)
        REQUIRE(recalls[i] >= recalls[i - 1] - 0.005);
    REQUIRE(recalls.back() > recalls.front());
    REQUIRE(recalls.back() >= 0.9);
}

TEST_CASE("recall_at_k counts top-k overlap") {
    const RankedList a = {{0, 3.0}, {1, 2.0}};
    const RankedList b = {{0, 9.0}, {2, 8.0}};
    const RankedList c = {{4, 1.0}, {5, 0.5}};
    REQUIRE(recall_at_k({a}, {a}, 2) == 1.0);
    REQUIRE(recall_at_k({a}, {c}, 2) == 0.0);
    REQUIRE(recall_at_k({a}, {b}, 2) == 0.5);
    REQUIRE_THAT(recall_at_k({a, a}, {a, c}, 2), WithinAbs(0.5, 1e-15));
    REQUIRE_THROWS_AS(recall_at_k({a}, {a, b}, 2), DataError);
    REQUIRE_THROWS_AS(recall_at_k({}, {}, 2), DataError);
}

TEST_CASE("vector files round-trip bit-exactly") {
    const VectorStore vs = gaussian_store(50, 12, 21);
    const auto dir = dpr::test::temp_dir("dense_vectors");
    save_vectors(vs, dir / "a.dprv");
    save_vectors(vs, dir / "b.dprv");
    REQUIRE(dpr::test::read_bytes(dir / "a.dprv") ==
            dpr::test::read_bytes(dir / "b.dprv"));

    const VectorStore loaded = load_vectors(dir / "a.dprv");
    REQUIRE(loaded.dim == vs.dim);
    REQUIRE(loaded.data == vs.data);
    REQUIRE(loaded.pids == vs.pids);

    SECTION("wrong magic is rejected") {
        std::ofstream(dir / "bad.dprv", std::ios::binary) << "NOPE123456";
        REQUIRE_THROWS_AS(load_vectors(dir / "bad.dprv"), DataError);
    }
    SECTION("truncated file is rejected") {
        const std::string bytes = dpr::test::read_bytes(dir / "a.dprv");
        std::ofstream(dir / "cut.dprv", std::ios::binary)
            << bytes.substr(0, bytes.size() / 2);
        REQUIRE_THROWS_AS(load_vectors(dir / "cut.dprv"), DataError);
    }
}

TEST_CASE("graph files round-trip and search identically after reload") {
    const VectorStore vs = gaussian_store(400, 8, 22);
    const HnswIndex index = build_hnsw(vs, {8, 32, 64, 7});
    const auto dir = dpr::test::temp_dir("dense_graph");
    save_hnsw(index, dir / "a.hnsw");
    save_hnsw(index, dir / "b.hnsw");
    REQUIRE(dpr::test::read_bytes(dir / "a.hnsw") ==
            dpr::test::read_bytes(dir / "b.hnsw"));

    const HnswIndex loaded = load_hnsw(dir / "a.hnsw");
    REQUIRE(loaded.params.M == index.params.M);
    REQUIRE(loaded.params.ef_construction == index.params.ef_construction);
    REQUIRE(loaded.params.ef_search == index.params.ef_search);
    REQUIRE(loaded.params.seed == index.params.seed);
    REQUIRE(loaded.entry == index.entry);
    REQUIRE(loaded.max_level == index.max_level);
    REQUIRE(loaded.levels == index.levels);
    REQUIRE(loaded.links == index.links);
    check_hnsw_invariants(loaded, vs);

    Rng rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        const auto q = gaussian_query(rng, 8);
        const RankedList before = hnsw_search(index, vs, q, 7);
        const RankedList after = hnsw_search(loaded, vs, q, 7);
        REQUIRE(before.size() == after.size());
        for (std::size_t i = 0; i < before.size(); ++i) {
            REQUIRE(before[i].pid == after[i].pid);
            REQUIRE(before[i].score == after[i].score);
        }
    }
}
