#include "vqaens/core.hpp"

#include <random>
#include <set>

#include "doctest.h"
#include "test_util.hpp"

using namespace vqaens;

TEST_CASE("category table spans 1..11 with the benchmark labels") {
    CHECK(categories().size() == 11);
    CHECK(category_name(1) == "Multiple Actions in single video.");
    CHECK(category_name(3) == "Partial actions.");
    CHECK(category_name(8) == "Unusual and Physically Anomalous activities.");
    CHECK(category_name(11) == "Interpretation of visual context.");
    CHECK_THROWS_AS(category_name(0), DatasetError);
    CHECK_THROWS_AS(category_name(12), DatasetError);
}

TEST_CASE("category name <-> number is a bijection") {
    std::set<std::string_view> names;
    for (int n = 1; n <= kCategoryCount; ++n) {
        auto name = category_name(n);
        CHECK(names.insert(name).second);  // all labels distinct
        auto back = category_number(name);
        REQUIRE(back.has_value());
        CHECK(*back == n);
    }
    CHECK_FALSE(category_number("not a category").has_value());
}

TEST_CASE("normalize_answer examples") {
    CHECK(normalize_answer("  Yes. ") == "yes");
    CHECK(normalize_answer("") == "");
    CHECK(normalize_answer("The man   JUMPS") == "the man jumps");
    CHECK(normalize_answer("Sure!") == "sure");
    CHECK(normalize_answer("what?") == "what");
    CHECK(normalize_answer("a.b.") == "a.b");
    CHECK(normalize_answer("...") == "");
    CHECK(normalize_answer("yes .") == "yes");
}

TEST_CASE("normalize_answer is idempotent for arbitrary inputs") {
    std::mt19937 rng(7101);
    for (int i = 0; i < 3000; ++i) {
        std::string s = testutil::random_text(rng, 60);
        std::string once = normalize_answer(s);
        CHECK(normalize_answer(once) == once);
    }
}

TEST_CASE("AnswerRecord::make fills the normalized form") {
    auto rec = AnswerRecord::make("q1", "  The DOG. ");
    CHECK(rec.query_id == "q1");
    CHECK(rec.answer == "  The DOG. ");
    CHECK(rec.normalized == "the dog");
}

TEST_CASE("load_dataset reads one record per line in order") {
    testutil::TempDir tmp;
    auto path = tmp.file("data.jsonl");
    testutil::write_file(
        path,
        "{\"id\":\"q1\",\"video\":\"v.mp4\",\"question\":\"What happens?\",\"category\":3}\n"
        "{\"id\":\"q2\",\"video\":\"w.mp4\",\"question\":\"Then what?\",\"category\":7,"
        "\"answer\":\"nothing\"}\n");
    Dataset ds = load_dataset(path, Split::Custom);
    REQUIRE(ds.items.size() == 2);
    CHECK(ds.items[0].id == "q1");
    CHECK(ds.items[0].category == 3);
    CHECK(category_name(ds.items[0].category) == "Partial actions.");
    CHECK_FALSE(ds.items[0].ground_truth.has_value());
    CHECK(ds.items[1].ground_truth == "nothing");
    CHECK_FALSE(ds.labeled());  // q1 lacks ground truth
}

TEST_CASE("load_dataset: empty file yields an empty dataset") {
    testutil::TempDir tmp;
    auto path = tmp.file("empty.jsonl");
    testutil::write_file(path, "");
    Dataset ds = load_dataset(path, Split::Test);
    CHECK(ds.items.empty());
    CHECK(ds.split == Split::Test);
}

TEST_CASE("load_dataset: fixture covering each category once") {
    testutil::TempDir tmp;
    std::string text;
    for (int c = 1; c <= 11; ++c) {
        text += "{\"id\":\"q" + std::to_string(c) + "\",\"video\":\"v\",\"question\":\"Q" +
                std::to_string(c) + "?\",\"category\":" + std::to_string(c) + "}\n";
    }
    auto path = tmp.file("all.jsonl");
    testutil::write_file(path, text);
    Dataset ds = load_dataset(path, Split::Custom);
    // oracle: scan the parsed items and count distinct categories
    REQUIRE(ds.items.size() == 11);
    std::set<int> seen;
    for (const auto& q : ds.items) seen.insert(q.category);
    CHECK(seen.size() == 11);
}

TEST_CASE("load_dataset rejects malformed input, naming the line") {
    testutil::TempDir tmp;
    auto path = tmp.file("bad.jsonl");

    auto expect_error = [&](const std::string& content, const std::string& needle) {
        testutil::write_file(path, content);
        try {
            load_dataset(path, Split::Custom);
            FAIL_CHECK("expected DatasetError for: " << content);
        } catch (const DatasetError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    std::string good = "{\"id\":\"a\",\"video\":\"v\",\"question\":\"q?\",\"category\":1}\n";
    expect_error(good + "{not json}\n", "line 2");
    expect_error(good + "[1,2]\n", "line 2");
    expect_error(good + "{\"id\":\"b\",\"video\":\"v\",\"category\":1}\n", "question");
    expect_error(good + "{\"id\":\"b\",\"video\":\"v\",\"question\":\"q?\",\"category\":99}\n",
                 "out of range");
    expect_error(good + "{\"id\":\"b\",\"video\":\"v\",\"question\":\"q?\",\"category\":0}\n",
                 "out of range");
    expect_error(good + "{\"id\":\"a\",\"video\":\"v\",\"question\":\"q?\",\"category\":2}\n",
                 "duplicate id 'a'");
    expect_error(good + "{\"id\":\"b\",\"vid\":\"v\",\"question\":\"q?\",\"category\":2}\n",
                 "unexpected field 'vid'");
    expect_error("{\"id\":\"\",\"video\":\"v\",\"question\":\"q?\",\"category\":1}\n",
                 "'id' is empty");
    expect_error("{\"id\":\"a\",\"video\":\"v\",\"question\":\"\",\"category\":1}\n",
                 "'question' is empty");
    expect_error("{\"id\":\"a\",\"video\":\"v\",\"question\":\"q?\",\"category\":\"3\"}\n",
                 "integer");
}

TEST_CASE("dataset round-trips through serialize/load") {
    std::mt19937 rng(40907);
    for (int round = 0; round < 25; ++round) {
        Dataset ds;
        ds.split = Split::Validation;
        std::uniform_int_distribution<int> n_dist(0, 12);
        std::uniform_int_distribution<int> cat_dist(1, 11);
        int n = n_dist(rng);
        for (int i = 0; i < n; ++i) {
            QueryInstance q;
            q.id = "q" + std::to_string(i);
            q.video = "v" + std::to_string(i) + ".mp4";
            std::string question;
            do {
                question = testutil::random_text(rng, 30);
            } while (normalize_answer(question).empty());
            q.question = question;
            q.category = cat_dist(rng);
            if (rng() % 2) q.ground_truth = testutil::random_text(rng, 20);
            ds.items.push_back(std::move(q));
        }

        testutil::TempDir tmp;
        auto path = tmp.file("rt.jsonl");
        testutil::write_file(path, serialize_dataset(ds));
        Dataset back = load_dataset(path, Split::Validation);
        REQUIRE(back.items.size() == ds.items.size());
        for (size_t i = 0; i < ds.items.size(); ++i) {
            CHECK(back.items[i].id == ds.items[i].id);
            CHECK(back.items[i].video == ds.items[i].video);
            CHECK(back.items[i].question == ds.items[i].question);
            CHECK(back.items[i].category == ds.items[i].category);
            CHECK(back.items[i].ground_truth == ds.items[i].ground_truth);
        }
        // and the text form is stable too
        CHECK(serialize_dataset(back) == serialize_dataset(ds));
    }
}

TEST_CASE("split names round-trip") {
    for (Split s : {Split::Validation, Split::Test, Split::Custom}) {
        CHECK(split_from_name(split_name(s)) == s);
    }
    CHECK_FALSE(split_from_name("dev").has_value());
}
