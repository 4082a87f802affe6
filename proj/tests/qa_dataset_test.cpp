#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dpr/qa_dataset.hpp"
#include "dpr/sparse_index.hpp"
#include "dpr/text_match.hpp"
#include "test_util.hpp"

using namespace dpr;
using Catch::Matchers::ContainsSubstring;

namespace {

// Independent token-overlap F1: sorted-merge multiset intersection, a
// different code path from the counting-map implementation under test.
double oracle_f1(std::vector<std::string> a, std::vector<std::string> b) {
    if (a.empty() || b.empty()) return 0.0;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0, overlap = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++overlap, ++i, ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / b.size();
    const double r = static_cast<double>(overlap) / a.size();
    return 2.0 * p * r / (p + r);
}

QAPair make_pair(std::string question, std::vector<std::string> answers,
                 std::optional<std::string> gold = std::nullopt) {
    QAPair qa;
    qa.question = std::move(question);
    qa.answers = std::move(answers);
    qa.gold_context = std::move(gold);
    return qa;
}

}  // namespace

TEST_CASE("QA pair files round-trip and reject malformed rows") {
    const auto dir = dpr::test::temp_dir("qa_pairs");
    std::vector<QAPair> pairs;
    pairs.push_back(make_pair("who found it", {"marie curie", "curie"}, "the lab note"));
    pairs.push_back(make_pair("where is it", {"paris"}));
    save_qa_pairs(pairs, dir / "qa.jsonl");
    const auto loaded = load_qa_pairs(dir / "qa.jsonl");
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].question == "who found it");
    REQUIRE(loaded[0].answers == pairs[0].answers);
    REQUIRE(loaded[0].gold_context == pairs[0].gold_context);
    REQUIRE_FALSE(loaded[1].gold_context.has_value());

    SECTION("empty question is rejected") {
        std::ofstream(dir / "bad.jsonl")
            << R"({"question": "", "answers": ["x"]})" << "\n";
        REQUIRE_THROWS_AS(load_qa_pairs(dir / "bad.jsonl"), DataError);
    }
    SECTION("empty answer list is rejected") {
        std::ofstream(dir / "bad.jsonl")
            << R"({"question": "q", "answers": []})" << "\n";
        REQUIRE_THROWS_AS(load_qa_pairs(dir / "bad.jsonl"), DataError);
    }
    SECTION("blank answer string is rejected") {
        std::ofstream(dir / "bad.jsonl")
            << R"({"question": "q", "answers": ["ok", ""]})" << "\n";
        REQUIRE_THROWS_AS(load_qa_pairs(dir / "bad.jsonl"), DataError);
    }
    SECTION("malformed JSON reports the line number") {
        std::ofstream(dir / "bad.jsonl")
            << R"({"question": "q", "answers": ["x"]})" << "\n"
            << "{not json\n";
        REQUIRE_THROWS_WITH(load_qa_pairs(dir / "bad.jsonl"), ContainsSubstring(":2"));
    }
}

TEST_CASE("token_f1 basics") {
    REQUIRE(token_f1({"a", "b"}, {"a", "b"}) == 1.0);
    REQUIRE(token_f1({"a", "b"}, {"c", "d"}) == 0.0);
    REQUIRE(token_f1({}, {"a"}) == 0.0);
    // Multiset semantics: the repeated token counts once against a single copy.
    REQUIRE(token_f1({"a", "a"}, {"a"}) == oracle_f1({"a", "a"}, {"a"}));
}

TEST_CASE("gold matching picks the verbatim passage") {
    const PassageStore store = dpr::test::make_store({
        {"t0", "the red fox den sits north"},
        {"t1", "a blue bird nest hangs south"},
        {"t2", "green frog pond lies west"},
    });
    const QAPair qa =
        make_pair("where does the bird nest", {"south"}, "a blue bird nest hangs south");
    const auto pid = match_gold_positive(qa, store);
    REQUIRE(pid.has_value());
    REQUIRE(*pid == 1);
}

TEST_CASE("gold matching fails without an answer-bearing best match") {
    const PassageStore store = dpr::test::make_store({
        {"t0", "the red fox den sits north"},
        {"t1", "a blue bird nest hangs south"},
    });
    SECTION("no annotated context") {
        REQUIRE_FALSE(match_gold_positive(make_pair("q", {"south"}), store).has_value());
    }
    SECTION("best-overlap passage lacks every answer") {
        const QAPair qa = make_pair("where does the bird nest", {"mars"},
                                    "a blue bird nest hangs south");
        REQUIRE_FALSE(match_gold_positive(qa, store).has_value());
    }
    SECTION("context sharing no token with any passage") {
        const QAPair qa = make_pair("q", {"south"}, "zzz yyy xxx");
        REQUIRE_FALSE(match_gold_positive(qa, store).has_value());
    }
}

TEST_CASE("gold context straddling a chunk boundary resolves to the higher-overlap chunk") {
    // Doc a: 150 tokens -> pids 0 (a0..a99) and 1 (a100..a149); doc b likewise
    // pids 2,3; doc c single chunk pid 4. The context spans a70..a120, so 30
    // of its 51 tokens land in pid 0 and 21 in pid 1 -- but pid 1 is shorter,
    // so its precision wins the F1 comparison.
    std::string ctx;
    for (int i = 70; i <= 120; ++i) ctx += (i > 70 ? " a" : "a") + std::to_string(i);
    const PassageStore store = dpr::test::make_store(
        {{"ta", dpr::test::numbered_words(150, "a")},
         {"tb", dpr::test::numbered_words(150, "b")},
         {"tc", dpr::test::numbered_words(80, "c")}});
    REQUIRE(store.passages.size() == 5);

    const QAPair qa = make_pair("which token", {"a110"}, ctx);
    const auto pid = match_gold_positive(qa, store);
    REQUIRE(pid.has_value());
    REQUIRE(*pid == 1);

    // Brute-force oracle over all five passages with the independent F1.
    const auto ctx_tokens = tokenize(store.tokenizer, ctx);
    double best = 0.0;
    std::uint64_t best_pid = 0;
    for (const Passage& p : store.passages) {
        const double f1 = oracle_f1(ctx_tokens, p.body_tokens);
        if (f1 > best) best = f1, best_pid = p.pid;
    }
    REQUIRE(best_pid == *pid);
    REQUIRE(best > 0.0);
}

TEST_CASE("gold matching breaks overlap ties toward the lower pid") {
    const PassageStore store = dpr::test::make_store({
        {"t0", "alpha gamma"},
        {"t1", "beta delta"},
    });
    // F1 against both passages is exactly 0.5; pid 0 must win and it carries
    // one of the answers.
    const QAPair qa = make_pair("q", {"alpha", "beta"}, "alpha beta");
    const auto pid = match_gold_positive(qa, store);
    REQUIRE(pid.has_value());
    REQUIRE(*pid == 0);
}

TEST_CASE("distant positive takes the best-ranked answer-bearing passage") {
    // Equal-length passages with nested query-term sets: strictly ordered
    // BM25 scores by construction.
    const PassageStore store = dpr::test::make_store({
        {"t0", "coldwater silver mine f0a f0b"},
        {"t1", "coldwater mine f1a f1b f1c"},
        {"t2", "coldwater f2a f2b f2c f2d"},
        {"t3", "silver mine history f3a f3b"},
    });
    const InvertedIndex index = build_inverted_index(store);
    const QAPair qa = make_pair("where is the silver mine", {"coldwater"});

    std::vector<std::string> query = tokenize(index.tokenizer, qa.question);
    const auto ans_tokens = tokenize(index.tokenizer, qa.answers[0]);
    query.insert(query.end(), ans_tokens.begin(), ans_tokens.end());
    const double s0 = bm25_score(index, query, 0);
    const double s1 = bm25_score(index, query, 1);
    const double s2 = bm25_score(index, query, 2);
    REQUIRE(s0 > s1);
    REQUIRE(s1 > s2);
    REQUIRE(s2 > 0.0);

    const auto pid = select_distant_positive(qa, index, store);
    REQUIRE(pid.has_value());
    REQUIRE(*pid == 0);
}

TEST_CASE("distant positive degenerate cases") {
    const PassageStore store = dpr::test::make_store({
        {"t0", "harbor lighthouse keeper"},
        {"t1", "meadow orchard fence"},
    });
    const InvertedIndex index = build_inverted_index(store);
    SECTION("single candidate sharing question terms") {
        const QAPair qa = make_pair("who keeps the lighthouse", {"keeper"});
        const auto pid = select_distant_positive(qa, index, store);
        REQUIRE(pid.has_value());
        REQUIRE(*pid == 0);
    }
    SECTION("no passage contains any answer") {
        const QAPair qa = make_pair("who keeps the lighthouse", {"nobody"});
        REQUIRE_FALSE(select_distant_positive(qa, index, store).has_value());
    }
}

TEST_CASE("BM25 negative mining filters answer-bearing passages") {
    const PassageStore store = dpr::test::make_store({
        {"t0", "river crossing bridge stone arch"},
        {"t1", "river bridge timber deck x1"},
        {"t2", "river ferry dock x2 x3"},
        {"t3", "pontoon river crossing bridge x4"},
        {"t4", "pontoon anchor chain x5 x6"},
        {"t5", "desert dune cactus x7 x8"},
    });
    const InvertedIndex index = build_inverted_index(store);
    const QAPair qa = make_pair("river crossing bridge", {"pontoon"});

    SECTION("count zero yields nothing") {
        REQUIRE(mine_bm25_negatives(qa, index, store, 0).empty());
    }
    SECTION("top two non-answer passages, checked exhaustively") {
        const auto got = mine_bm25_negatives(qa, index, store, 2);
        REQUIRE(got.size() == 2);

        const auto q_tokens = tokenize(index.tokenizer, qa.question);
        RankedList oracle;
        for (const Passage& p : store.passages) {
            const double s = bm25_score(index, q_tokens, p.pid);
            if (s <= 0.0) continue;
            if (contains_answer(p.body_text, qa.answers)) continue;
            oracle.push_back({p.pid, s});
        }
        std::sort(oracle.begin(), oracle.end(), ranked_before);
        REQUIRE(oracle.size() >= 2);
        REQUIRE(got[0] == oracle[0].pid);
        REQUIRE(got[1] == oracle[1].pid);
    }
    SECTION("shortfall is returned, not padded") {
        const auto got = mine_bm25_negatives(qa, index, store, 10);
        REQUIRE(got.size() < 10);
        for (std::uint64_t pid : got)
            REQUIRE_FALSE(contains_answer(store.at(pid).body_text, qa.answers));
    }
    SECTION("every matching passage carries the answer") {
        const PassageStore all = dpr::test::make_store({
            {"t0", "pontoon river bridge"},
            {"t1", "pontoon river ferry"},
            {"t2", "pontoon bridge deck"},
        });
        const InvertedIndex idx = build_inverted_index(all);
        REQUIRE(mine_bm25_negatives(qa, idx, all, 3).empty());
    }
}

TEST_CASE("random negatives: uniform without replacement, positive excluded") {
    const PassageStore store = dpr::test::make_store({
        {"t0", "one"}, {"t1", "two"}, {"t2", "three"},
        {"t3", "four"}, {"t4", "five"}, {"t5", "six"},
    });
    SECTION("count zero") {
        REQUIRE(sample_random_negatives(3, store, 0, 1).empty());
    }
    SECTION("two-passage store forces the other passage") {
        const PassageStore two =
            dpr::test::make_store({{"t0", "one"}, {"t1", "two"}});
        const auto got = sample_random_negatives(0, two, 1, 7);
        REQUIRE(got == std::vector<std::uint64_t>{1});
    }
    SECTION("deterministic given the seed") {
        const auto a = sample_random_negatives(2, store, 4, 123);
        const auto b = sample_random_negatives(2, store, 4, 123);
        REQUIRE(a == b);
    }
    SECTION("requesting the whole remainder returns every other pid") {
        auto got = sample_random_negatives(3, store, 5, 9);
        std::sort(got.begin(), got.end());
        REQUIRE(got == std::vector<std::uint64_t>{0, 1, 2, 4, 5});
    }
    SECTION("count beyond the remainder is a hard error") {
        REQUIRE_THROWS_AS(sample_random_negatives(3, store, 6, 9), DataError);
    }
    SECTION("positive never appears, draws stay distinct") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto got = sample_random_negatives(1, store, 3, seed);
            REQUIRE(got.size() == 3);
            std::sort(got.begin(), got.end());
            REQUIRE(std::adjacent_find(got.begin(), got.end()) == got.end());
            REQUIRE(std::find(got.begin(), got.end(), 1) == got.end());
        }
    }
}

namespace {

// Twelve single-chunk passages with per-pair private vocabulary: question i
// hits only passage i's fact/topic words and only passage i carries answer i.
PassageStore factoid_store() {
    std::vector<std::pair<std::string, std::string>> docs;
    for (int i = 0; i < 12; ++i) {
        const std::string s = std::to_string(i);
        docs.push_back({"title" + s, "fact" + s + " topic" + s + " answer" + s +
                                         " pad" + s + "a pad" + s + "b"});
    }
    return dpr::test::make_store(docs);
}

QAPair factoid_pair(int i, bool with_gold) {
    const std::string s = std::to_string(i);
    return make_pair("fact" + s + " topic" + s, {"answer" + s},
                     with_gold ? std::optional<std::string>(
                                     "fact" + s + " topic" + s + " answer" + s +
                                     " pad" + s + "a pad" + s + "b")
                               : std::nullopt);
}

}  // namespace

TEST_CASE("training-set construction keeps resolvable pairs and reports drops") {
    const PassageStore store = factoid_store();
    const InvertedIndex index = build_inverted_index(store);

    std::vector<QAPair> pairs;
    for (int i = 0; i < 8; ++i) pairs.push_back(factoid_pair(i, true));
    pairs.push_back(factoid_pair(8, false));  // no annotated context
    // Context matches passage 9 but the answer lives elsewhere.
    pairs.push_back(make_pair("fact9 topic9", {"nowhere"},
                              "fact9 topic9 answer9 pad9a pad9b"));

    DatasetReport report;
    const auto examples =
        build_training_set(pairs, store, index, {{NegativeKind::bm25, 1}},
                           PositiveMode::gold, 42, &report);
    REQUIRE(examples.size() == 8);
    REQUIRE(report.kept == 8);
    REQUIRE(report.dropped == 2);
    for (std::size_t i = 0; i < examples.size(); ++i) {
        REQUIRE(examples[i].question == pairs[i].question);  // input order kept
        REQUIRE(examples[i].positive_pid == static_cast<std::uint64_t>(i));
        REQUIRE(examples[i].negatives.size() <= 1);
        for (const Negative& n : examples[i].negatives) {
            REQUIRE(n.kind == NegativeKind::bm25);
            REQUIRE(n.pid != examples[i].positive_pid);
        }
    }
}

TEST_CASE("training-set examples satisfy the dataset invariants") {
    const PassageStore store = factoid_store();
    const InvertedIndex index = build_inverted_index(store);
    std::vector<QAPair> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back(factoid_pair(i, true));

    const std::vector<NegativeSpec> specs = {{NegativeKind::bm25, 1},
                                             {NegativeKind::random, 2},
                                             {NegativeKind::gold_other, 1}};
    const auto examples =
        build_training_set(pairs, store, index, specs, PositiveMode::gold, 7);
    REQUIRE(examples.size() == 10);

    std::map<std::string, std::vector<std::string>> answers_by_question;
    for (const QAPair& qa : pairs) answers_by_question[qa.question] = qa.answers;

    for (const TrainExample& ex : examples) {
        REQUIRE(contains_answer(store.at(ex.positive_pid).body_text,
                                answers_by_question.at(ex.question)));
        std::vector<std::uint64_t> pids;
        for (const Negative& n : ex.negatives) {
            REQUIRE(n.pid != ex.positive_pid);
            pids.push_back(n.pid);
        }
        std::sort(pids.begin(), pids.end());
        REQUIRE(std::adjacent_find(pids.begin(), pids.end()) == pids.end());
    }

    SECTION("same seed reproduces the identical set") {
        const auto again =
            build_training_set(pairs, store, index, specs, PositiveMode::gold, 7);
        const auto dir = dpr::test::temp_dir("qa_determinism");
        save_training_set(examples, dir / "a.jsonl");
        save_training_set(again, dir / "b.jsonl");
        REQUIRE(dpr::test::read_bytes(dir / "a.jsonl") ==
                dpr::test::read_bytes(dir / "b.jsonl"));
    }
}

TEST_CASE("distant supervision agrees with gold matching when the context is indexed verbatim") {
    const PassageStore store = factoid_store();
    const InvertedIndex index = build_inverted_index(store);
    std::vector<QAPair> pairs;
    for (int i = 0; i < 5; ++i) pairs.push_back(factoid_pair(i, true));

    const std::vector<NegativeSpec> specs = {{NegativeKind::random, 2}};
    const auto gold =
        build_training_set(pairs, store, index, specs, PositiveMode::gold, 11);
    const auto distant =
        build_training_set(pairs, store, index, specs, PositiveMode::distant, 11);
    REQUIRE(gold.size() == distant.size());

    const auto dir = dpr::test::temp_dir("qa_gold_vs_distant");
    save_training_set(gold, dir / "gold.jsonl");
    save_training_set(distant, dir / "distant.jsonl");
    REQUIRE(dpr::test::read_bytes(dir / "gold.jsonl") ==
            dpr::test::read_bytes(dir / "distant.jsonl"));
}

TEST_CASE("training-set construction with nothing resolvable is a hard error") {
    const PassageStore store = factoid_store();
    const InvertedIndex index = build_inverted_index(store);
    const std::vector<QAPair> pairs = {make_pair("fact0 topic0", {"absent"})};
    REQUIRE_THROWS_AS(build_training_set(pairs, store, index, {},
                                         PositiveMode::gold, 1),
                      DataError);
}

TEST_CASE("training sets round-trip through JSONL") {
    std::vector<TrainExample> examples;
    TrainExample ex;
    ex.question = "who built the arch";
    ex.positive_pid = 5;
    ex.negatives = {{2, NegativeKind::bm25},
                    {9, NegativeKind::random},
                    {1, NegativeKind::gold_other}};
    examples.push_back(ex);
    ex.question = "second question";
    ex.positive_pid = 0;
    ex.negatives.clear();
    examples.push_back(ex);

    const auto dir = dpr::test::temp_dir("qa_trainset_io");
    save_training_set(examples, dir / "train.jsonl");
    const auto loaded = load_training_set(dir / "train.jsonl");
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].question == examples[0].question);
    REQUIRE(loaded[0].positive_pid == 5);
    REQUIRE(loaded[0].negatives.size() == 3);
    REQUIRE(loaded[0].negatives[0].pid == 2);
    REQUIRE(loaded[0].negatives[0].kind == NegativeKind::bm25);
    REQUIRE(loaded[0].negatives[1].kind == NegativeKind::random);
    REQUIRE(loaded[0].negatives[2].kind == NegativeKind::gold_other);
    REQUIRE(loaded[1].negatives.empty());

    SECTION("unknown negative kind is rejected on load") {
        std::ofstream(dir / "bad.jsonl")
            << R"({"question": "q", "positive": 0, "negatives": [{"pid": 1, "kind": "mystery"}]})"
            << "\n";
        REQUIRE_THROWS_AS(load_training_set(dir / "bad.jsonl"), DataError);
    }
}

TEST_CASE("negative kinds round-trip through their names") {
    for (NegativeKind k : {NegativeKind::random, NegativeKind::bm25,
                           NegativeKind::gold_other})
        REQUIRE(negative_kind_from_string(to_string(k)) == k);
    REQUIRE_THROWS_AS(negative_kind_from_string("adversarial"), DataError);
}
