#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dpr/evalbench.hpp"
#include "test_util.hpp"

using namespace dpr;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

TEST_CASE("answer normalization: case, punctuation, articles, whitespace") {
    REQUIRE(normalize_answer("The Irish Sea.") == "irish sea");
    REQUIRE(normalize_answer("") == "");
    REQUIRE(normalize_answer("A  B") == "b");
    REQUIRE(normalize_answer("  An   OLD, old Map!  ") == "old old map");
    REQUIRE(normalize_answer("sea-side") == "seaside");  // hyphen deleted, not split
    REQUIRE(normalize_answer("the") == "");

    SECTION("idempotence") {
        for (const char* s : {"The Irish Sea.", "A  B", "", "Mixed: CASE; here",
                              "an answer, with 42 numbers!"}) {
            const std::string once = normalize_answer(s);
            REQUIRE(normalize_answer(once) == once);
        }
    }
}

TEST_CASE("answer containment is token-contiguous on normalized text") {
    const std::string body =
        "The Irish Sea is connected to the Celtic Sea in the south.";
    REQUIRE(contains_answer(body, {"Irish Sea"}));
    REQUIRE(contains_answer(body, {"irish sea!!"}));  // case/punct invariant
    REQUIRE(contains_answer("THE IRISH SEA", {"the Irish Sea."}));
    REQUIRE_FALSE(contains_answer(body, {"Paul Kaye"}));
    REQUIRE_FALSE(contains_answer("the seaside town", {"sea"}));  // sub-token
    REQUIRE(contains_answer(body, {"Paul Kaye", "celtic sea"}));  // any answer
    REQUIRE_FALSE(contains_answer("", {"sea"}));
    REQUIRE_FALSE(contains_answer(body, {"the"}));  // normalizes to nothing
}

namespace {

struct EvalFixture {
    PassageStore store;
    std::vector<QAPair> pairs;

    static QAPair qa(std::string q, std::vector<std::string> answers) {
        QAPair p;
        p.question = std::move(q);
        p.answers = std::move(answers);
        return p;
    }
};

EvalFixture eval_fixture() {
    EvalFixture f;
    f.store = dpr::test::make_store({
        {"t0", "the blue whale swims far"},
        {"t1", "a red fox runs quick"},
        {"t2", "green turtle rests below"},
        {"t3", "plain filler text here"},
        {"t4", "more filler words again"},
    });
    f.pairs = {EvalFixture::qa("largest animal", {"blue whale"}),
               EvalFixture::qa("quick runner", {"red fox"}),
               EvalFixture::qa("slow rester", {"turtle"}),
               EvalFixture::qa("mythical", {"unicorn"})};
    return f;
}

RankedList ranks(std::initializer_list<std::uint64_t> pids) {
    RankedList out;
    double score = 10.0;
    for (std::uint64_t pid : pids) out.push_back({pid, score -= 1.0});
    return out;
}

}  // namespace

TEST_CASE("top-k accuracy counts the first answer-bearing rank") {
    const EvalFixture f = eval_fixture();

    SECTION("every question hit at rank one") {
        const std::vector<QAPair> three(f.pairs.begin(), f.pairs.begin() + 3);
        const std::vector<RankedList> results = {ranks({0}), ranks({1}), ranks({2})};
        const EvalReport report =
            top_k_accuracy(results, three, f.store, {1, 5, 20, 100});
        for (const auto& [k, acc] : report.accuracy_at) REQUIRE(acc == 1.0);
        REQUIRE(report.questions == 3);
    }
    SECTION("three of four hit within twenty") {
        const std::vector<RankedList> results = {
            ranks({0, 3}),          // hit at rank 1
            ranks({3, 1}),          // hit at rank 2
            ranks({4, 3, 2}),       // hit at rank 3
            ranks({0, 1, 2, 3, 4})  // no answer anywhere
        };
        const EvalReport report =
            top_k_accuracy(results, f.pairs, f.store, {1, 2, 3, 20, 100});
        REQUIRE_THAT(report.accuracy_at.at(1), WithinAbs(0.25, 1e-15));
        REQUIRE_THAT(report.accuracy_at.at(2), WithinAbs(0.5, 1e-15));
        REQUIRE_THAT(report.accuracy_at.at(3), WithinAbs(0.75, 1e-15));
        REQUIRE_THAT(report.accuracy_at.at(20), WithinAbs(0.75, 1e-15));
        double prev = 0.0;
        for (const auto& [k, acc] : report.accuracy_at) {  // map is k-ascending
            REQUIRE(acc >= prev);
            prev = acc;
        }
    }
    SECTION("misalignment and empty sets are errors") {
        REQUIRE_THROWS_AS(top_k_accuracy({ranks({0})}, f.pairs, f.store, {5}),
                          DataError);
        REQUIRE_THROWS_AS(top_k_accuracy({}, {}, f.store, {5}), DataError);
    }
}

TEST_CASE("exact match normalizes both sides and accepts any reference") {
    const EvalFixture f = eval_fixture();
    std::vector<QAPair> pairs = {
        EvalFixture::qa("q1", {"The Blue Whale"}),
        EvalFixture::qa("q2", {"red fox", "fox"}),
        EvalFixture::qa("q3", {"turtle"}),
    };
    SECTION("case and punctuation do not matter") {
        REQUIRE_THAT(exact_match({"blue whale!", "FOX", "tortoise"}, pairs),
                     WithinAbs(2.0 / 3.0, 1e-15));
    }
    SECTION("empty predictions never match") {
        REQUIRE(exact_match({"", "", ""}, pairs) == 0.0);
        // A prediction that normalizes to nothing cannot match either.
        REQUIRE(exact_match({"the", "a", "an"}, pairs) == 0.0);
    }
    SECTION("misalignment and empty sets are errors") {
        REQUIRE_THROWS_AS(exact_match({"one"}, pairs), DataError);
        REQUIRE_THROWS_AS(exact_match({}, {}), DataError);
    }
}

TEST_CASE("config fingerprint tracks file bytes and config text") {
    const auto dir = dpr::test::temp_dir("fingerprint");
    std::ofstream(dir / "a.txt") << "alpha";
    std::ofstream(dir / "b.txt") << "beta";

    const std::string fp1 = config_fingerprint({dir / "a.txt", dir / "b.txt"}, "cfg");
    const std::string fp2 = config_fingerprint({dir / "a.txt", dir / "b.txt"}, "cfg");
    REQUIRE(fp1 == fp2);
    REQUIRE_FALSE(fp1.empty());

    REQUIRE(config_fingerprint({dir / "a.txt", dir / "b.txt"}, "cfg2") != fp1);
    std::ofstream(dir / "a.txt") << "alphaX";
    REQUIRE(config_fingerprint({dir / "a.txt", dir / "b.txt"}, "cfg") != fp1);
    REQUIRE_FALSE(config_fingerprint({}, "only config").empty());
}

TEST_CASE("negative descriptions and spec expansion") {
    REQUIRE(describe_negatives({0, 0, 0}) == "none");
    REQUIRE(describe_negatives({2, 0, 0}) == "random=2");
    REQUIRE(describe_negatives({2, 1, 3}) == "bm25=1+gold_other=3+random=2");

    const auto specs = negative_specs_for({2, 1, 3});
    REQUIRE(specs.size() == 3);
    REQUIRE(specs[0].kind == NegativeKind::bm25);
    REQUIRE(specs[0].count == 1);
    REQUIRE(specs[1].kind == NegativeKind::gold_other);
    REQUIRE(specs[1].count == 3);
    REQUIRE(specs[2].kind == NegativeKind::random);
    REQUIRE(specs[2].count == 2);
    REQUIRE(negative_specs_for({0, 0, 0}).empty());
}

TEST_CASE("the default ablation grid covers batch, negative, and study cells") {
    TrainConfig base;
    base.epochs = 20;
    const auto grid = default_ablation_grid(base);
    REQUIRE(grid.size() == 10);

    const auto cell = [&](const std::string& name) -> const AblationCell& {
        for (const AblationCell& c : grid)
            if (c.name == name) return c;
        FAIL("missing cell " + name);
        return grid.front();
    };

    REQUIRE(cell("inbatch_gold_b8").config.batch_size == 8);
    REQUIRE(cell("inbatch_gold_b8").config.epochs == 5);  // matched step budget
    REQUIRE(cell("inbatch_gold_b32").config.batch_size == 32);
    REQUIRE(cell("inbatch_gold_b32").config.epochs == 20);
    REQUIRE(cell("inbatch_gold_b32").config.negatives.total() == 0);
    REQUIRE(cell("inbatch_gold_bm25_1_b32").config.negatives.bm25 == 1);
    REQUIRE(cell("explicit_rand7_b32").config.mode == TrainMode::explicit_negatives);
    REQUIRE(cell("explicit_rand7_b32").config.negatives.random == 7);
    REQUIRE(cell("explicit_bm25_7_b32").config.negatives.bm25 == 7);
    REQUIRE(cell("explicit_gold7_b32").config.negatives.gold_other == 7);
    REQUIRE(cell("study_dot_nll").config.loss == LossKind::nll);
    REQUIRE(cell("study_dot_triplet").config.loss == LossKind::triplet);
    REQUIRE(cell("study_l2_nll").config.similarity == SimilarityKind::neg_l2);
    REQUIRE(cell("study_l2_triplet").config.loss == LossKind::triplet);
    REQUIRE(cell("study_l2_triplet").config.similarity == SimilarityKind::neg_l2);
}

namespace {

// Small factoid corpus where each question's private terms land only in its
// own passage; enough signal for a two-epoch smoke train.
struct AblationFixture {
    PassageStore store;
    InvertedIndex index;
    std::vector<QAPair> pairs;
    TrainConfig base;
};

AblationFixture ablation_fixture() {
    AblationFixture f;
    std::vector<std::pair<std::string, std::string>> docs;
    for (int i = 0; i < 12; ++i) {
        const std::string s = std::to_string(i);
        docs.push_back({"title" + s, "fact" + s + " topic" + s + " answer" + s +
                                         " pad" + s + "a pad" + s + "b"});
    }
    f.store = dpr::test::make_store(docs);
    f.index = build_inverted_index(f.store);
    for (int i = 0; i < 8; ++i) {
        const std::string s = std::to_string(i);
        QAPair qa;
        qa.question = "fact" + s + " topic" + s;
        qa.answers = {"answer" + s};
        qa.gold_context = "fact" + s + " topic" + s + " answer" + s + " pad" + s +
                          "a pad" + s + "b";
        f.pairs.push_back(std::move(qa));
    }
    f.base.batch_size = 4;
    f.base.epochs = 2;
    f.base.vocab = 512;
    f.base.embed_dim = 8;
    f.base.out_dim = 8;
    f.base.dropout = 0.0;
    f.base.negatives = {0, 0, 0};
    return f;
}

}  // namespace

TEST_CASE("ablation sweep runs cells independently and records failures") {
    const AblationFixture f = ablation_fixture();

    SECTION("a one-cell grid yields one healthy row") {
        const auto rows = ablation_sweep({{"tiny", f.base}}, f.store, f.index,
                                         f.pairs, f.pairs);
        REQUIRE(rows.size() == 1);
        REQUIRE(rows[0].name == "tiny");
        REQUIRE(rows[0].status == "ok");
        REQUIRE(rows[0].top5 >= 0.0);
        REQUIRE(rows[0].top100 >= rows[0].top20);
        REQUIRE(rows[0].top20 >= rows[0].top5);

        const std::string csv = ablation_csv(rows);
        REQUIRE_THAT(csv, ContainsSubstring(
                              "name,mode,loss,similarity,batch_size,negatives,"
                              "top5,top20,top100,status\n"));
        REQUIRE_THAT(csv, ContainsSubstring("tiny,in_batch,nll,dot,4,none,"));
    }
    SECTION("a broken cell is recorded and the sweep continues") {
        TrainConfig broken = f.base;
        broken.warmup_frac = 1.0;  // rejected inside train
        const auto rows = ablation_sweep({{"bad", broken}, {"good", f.base}},
                                         f.store, f.index, f.pairs, f.pairs);
        REQUIRE(rows.size() == 2);
        REQUIRE_THAT(rows[0].status, ContainsSubstring("failed:"));
        REQUIRE(rows[1].status == "ok");
    }
    SECTION("an empty grid is an error") {
        REQUIRE_THROWS_AS(ablation_sweep({}, f.store, f.index, f.pairs, f.pairs),
                          DataError);
    }
}

TEST_CASE("ablation CSV escapes separators inside the status column") {
    AblationRow row;
    row.name = "cell";
    row.config = TrainConfig{};
    row.top5 = 0.5;
    row.top20 = 0.75;
    row.top100 = 1.0;
    row.status = "failed: bad, worse\nend";
    const std::string csv = ablation_csv({row});
    REQUIRE(csv ==
            "name,mode,loss,similarity,batch_size,negatives,top5,top20,top100,"
            "status\n"
            "cell,in_batch,nll,dot,32,bm25=1,0.5,0.75,1,failed: bad; worse;end\n");
}

TEST_CASE("sample-efficiency curve trains on prefixes and reports the crossover") {
    const AblationFixture f = ablation_fixture();
    const CurveReport report = sample_efficiency_curve(
        {4, 50}, f.store, f.index, f.pairs, f.pairs, f.base);

    REQUIRE(report.rows.size() == 2);
    REQUIRE(report.rows[0].requested == 4);
    REQUIRE(report.rows[0].used == 4);
    REQUIRE(report.rows[1].requested == 50);
    REQUIRE(report.rows[1].used == 8);  // capped to what exists
    REQUIRE_FALSE(report.notes.empty());
    REQUIRE_THAT(report.notes.front(), ContainsSubstring("capped"));
    REQUIRE(report.bm25_top20 >= 0.0);
    REQUIRE(report.bm25_top20 <= 1.0);

    // Crossover bookkeeping: first row at or above the lexical baseline.
    long long expected = -1;
    for (const CurveRow& row : report.rows)
        if (expected < 0 && row.top20 >= report.bm25_top20)
            expected = static_cast<long long>(row.used);
    REQUIRE(report.crossover_size == expected);

    const std::string csv = curve_csv(report);
    REQUIRE_THAT(csv,
                 ContainsSubstring("size,top5,top20,top100,bm25_top20,crossover_size\n"));
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows

    SECTION("sizes must be ascending and non-empty") {
        REQUIRE_THROWS_AS(sample_efficiency_curve({}, f.store, f.index, f.pairs,
                                                  f.pairs, f.base),
                          DataError);
        REQUIRE_THROWS_AS(sample_efficiency_curve({8, 4}, f.store, f.index,
                                                  f.pairs, f.pairs, f.base),
                          DataError);
        REQUIRE_THROWS_AS(sample_efficiency_curve({4, 4}, f.store, f.index,
                                                  f.pairs, f.pairs, f.base),
                          DataError);
    }
}

TEST_CASE("curve CSV repeats the baseline and crossover on every row") {
    CurveReport report;
    report.bm25_top20 = 0.5;
    report.crossover_size = 300;
    report.rows = {{100, 100, 0.1, 0.25, 0.5}, {300, 300, 0.5, 0.75, 1.0}};
    REQUIRE(curve_csv(report) ==
            "size,top5,top20,top100,bm25_top20,crossover_size\n"
            "100,0.1,0.25,0.5,0.5,300\n"
            "300,0.5,0.75,1,0.5,300\n");
}

TEST_CASE("throughput bench always measures at least one full pass") {
    std::size_t calls = 0;
    const BenchReport report = throughput_bench(
        "exact", 5,
        [&](std::size_t i) {
            REQUIRE(i < 5);
            ++calls;
        },
        3, 0.0, 1.5, 0.25, "test-rig");
    REQUIRE(calls >= 8);  // 3 warmup + >= one full measured pass
    REQUIRE(report.backend == "exact");
    REQUIRE(report.qps > 0.0);
    REQUIRE(report.build_s == 1.5);
    REQUIRE(report.embed_s == 0.25);
    REQUIRE(report.hardware_note == "test-rig");

    REQUIRE_THROWS_AS(
        throughput_bench("none", 0, [](std::size_t) {}, 0, 0.0, 0.0, 0.0),
        DataError);
}

TEST_CASE("bench CSV has exactly the contract columns") {
    BenchReport a;
    a.backend = "bm25";
    a.qps = 100.0;
    a.build_s = 1.5;
    a.embed_s = 0.0;
    BenchReport b;
    b.backend = "hnsw";
    b.qps = 2000.0;
    b.build_s = 12.5;
    b.embed_s = 3.25;
    REQUIRE(bench_csv({a, b}) ==
            "backend,qps,build_s,embed_s\n"
            "bm25,100,1.5,0\n"
            "hnsw,2000,12.5,3.25\n");
}
