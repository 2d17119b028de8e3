#include "vqaens/parser.hpp"

#include <random>

#include "doctest.h"
#include "test_util.hpp"

using namespace vqaens;

namespace {

std::vector<CotFieldSet> all_field_sets() {
    std::vector<CotFieldSet> sets;
    for (int bits = 0; bits < 16; ++bits) {
        CotFieldSet f;
        f.caption = bits & 1;
        f.summary = bits & 2;
        f.reason = bits & 4;
        f.confidence = bits & 8;
        sets.push_back(f);
    }
    return sets;
}

// Test-side serializer, independent of the parser: a record with exactly the
// field set's keys, canonical order.
std::string serialize_record(const CotFieldSet& fields, const std::string& tag) {
    nlohmann::ordered_json j;
    if (fields.caption) j["caption"] = "caption " + tag;
    if (fields.summary) j["summary"] = "summary " + tag;
    if (fields.reason) j["reason"] = "reason " + tag;
    j["answer"] = "answer " + tag;
    if (fields.confidence) j["confidence"] = 0.75;
    return j.dump();
}

}  // namespace

TEST_CASE("whole-text JSON parses Clean") {
    CotFieldSet expected = CotFieldSet::standard();
    auto r = parse_response(R"({"reason":"r","answer":"yes","confidence":0.8})", expected);
    CHECK(r.parse_status == ParseStatus::Clean);
    CHECK(r.answer == "yes");
    CHECK(r.reason == "r");
    CHECK(r.confidence == 0.8);
    CHECK_FALSE(r.caption.has_value());
    CHECK_FALSE(r.summary.has_value());
}

TEST_CASE("fenced code block repairs") {
    auto r = parse_response("Sure! ```json\n{\"answer\":\"no\"}\n```",
                            CotFieldSet::answer_only());
    CHECK(r.parse_status == ParseStatus::Repaired);
    CHECK(r.answer == "no");

    auto bare_fence = parse_response("```\n{\"answer\":\"maybe\"}\n```",
                                     CotFieldSet::answer_only());
    CHECK(bare_fence.parse_status == ParseStatus::Repaired);
    CHECK(bare_fence.answer == "maybe");
}

TEST_CASE("embedded balanced object repairs") {
    auto r = parse_response("The result is {\"answer\": \"two dogs\"} as requested.",
                            CotFieldSet::answer_only());
    CHECK(r.parse_status == ParseStatus::Repaired);
    CHECK(r.answer == "two dogs");

    // braces inside strings do not confuse the matcher
    auto tricky = parse_response(
        "noise {\"answer\": \"curly } brace\", \"reason\": \"x\"} trailing",
        CotFieldSet::standard());
    CHECK(tricky.parse_status == ParseStatus::Repaired);
    CHECK(tricky.answer == "curly } brace");
}

TEST_CASE("line scavenging repairs") {
    auto r = parse_response("caption: a street scene\nanswer: the bus stops\nconfidence: 70%\n",
                            CotFieldSet{true, false, false, true, true});
    CHECK(r.parse_status == ParseStatus::Repaired);
    CHECK(r.answer == "the bus stops");
    CHECK(r.caption == "a street scene");
    CHECK(r.confidence == doctest::Approx(0.7));

    auto quoted = parse_response("  \"answer\": \"yes\",\n", CotFieldSet::answer_only());
    CHECK(quoted.parse_status == ParseStatus::Repaired);
    CHECK(quoted.answer == "yes");
}

TEST_CASE("unparseable text fails with an empty answer") {
    auto r = parse_response("the answer is unclear…", CotFieldSet::standard());
    CHECK(r.parse_status == ParseStatus::Failed);
    CHECK(r.answer.empty());
    CHECK(r.raw_text == "the answer is unclear…");
}

TEST_CASE("repair never fabricates an answer") {
    // valid JSON without an answer key
    auto no_key = parse_response(R"({"reason":"thinking"})", CotFieldSet::standard());
    CHECK(no_key.parse_status == ParseStatus::Failed);
    CHECK(no_key.answer.empty());

    // empty answer value
    auto empty_value = parse_response(R"({"answer":""})", CotFieldSet::answer_only());
    CHECK(empty_value.parse_status == ParseStatus::Failed);

    auto whitespace = parse_response(R"({"answer":"   "})", CotFieldSet::answer_only());
    CHECK(whitespace.parse_status == ParseStatus::Failed);
}

TEST_CASE("unknown extra keys are ignored and disabled fields stay absent") {
    auto r = parse_response(
        R"({"caption":"c","answer":"yes","confidence":0.5,"banana":42})",
        CotFieldSet::answer_only());
    CHECK(r.parse_status == ParseStatus::Clean);
    CHECK(r.answer == "yes");
    CHECK_FALSE(r.caption.has_value());     // not in the expected set
    CHECK_FALSE(r.confidence.has_value());  // not in the expected set
}

TEST_CASE("scalar answers are stringified") {
    CHECK(parse_response(R"({"answer": true})", CotFieldSet::answer_only()).answer == "true");
    CHECK(parse_response(R"({"answer": 3})", CotFieldSet::answer_only()).answer == "3");
    // structured answers are unusable
    CHECK(parse_response(R"({"answer": ["a"]})", CotFieldSet::answer_only()).parse_status ==
          ParseStatus::Failed);
    CHECK(parse_response(R"({"answer": null})", CotFieldSet::answer_only()).parse_status ==
          ParseStatus::Failed);
}

TEST_CASE("clamp_confidence and parse_confidence") {
    CHECK(clamp_confidence(0.8) == 0.8);
    CHECK(clamp_confidence(1.7) == 1.0);
    CHECK(clamp_confidence(-0.3) == 0.0);

    CHECK(parse_confidence(nlohmann::json(0.8)) == 0.8);
    CHECK(parse_confidence(nlohmann::json(1.7)) == 1.0);
    CHECK(parse_confidence(nlohmann::json("85%")) == 0.85);
    CHECK(parse_confidence(nlohmann::json("150%")) == 1.0);
    CHECK(parse_confidence(nlohmann::json("0.6")) == 0.6);
    CHECK_FALSE(parse_confidence(nlohmann::json("sure")).has_value());
    CHECK_FALSE(parse_confidence(nlohmann::json(nullptr)).has_value());
    CHECK_FALSE(parse_confidence(nlohmann::json::array()).has_value());
}

TEST_CASE("confidence out of range is clamped inside parse_response") {
    auto r = parse_response(R"({"answer":"x","confidence":2.5})",
                            CotFieldSet{false, false, false, true, true});
    CHECK(r.confidence == 1.0);
    auto neg = parse_response(R"({"answer":"x","confidence":-1})",
                              CotFieldSet{false, false, false, true, true});
    CHECK(neg.confidence == 0.0);
}

TEST_CASE("round-trip: every field subset parses Clean to the same record") {
    for (const auto& fields : all_field_sets()) {
        std::string text = serialize_record(fields, "t");
        auto r = parse_response(text, fields);
        CHECK(r.parse_status == ParseStatus::Clean);
        CHECK(r.answer == "answer t");
        CHECK(r.caption.has_value() == fields.caption);
        CHECK(r.summary.has_value() == fields.summary);
        CHECK(r.reason.has_value() == fields.reason);
        CHECK(r.confidence.has_value() == fields.confidence);
        if (fields.caption) CHECK(*r.caption == "caption t");
        if (fields.summary) CHECK(*r.summary == "summary t");
        if (fields.reason) CHECK(*r.reason == "reason t");
        if (fields.confidence) CHECK(*r.confidence == 0.75);
    }
}

TEST_CASE("parse_response is total over random bytes") {
    std::mt19937 rng(90125);
    std::uniform_int_distribution<int> byte_dist(0, 255);
    std::uniform_int_distribution<int> len_dist(0, 200);
    auto field_sets = all_field_sets();
    for (int i = 0; i < 2000; ++i) {
        std::string raw;
        int len = len_dist(rng);
        raw.reserve(static_cast<size_t>(len));
        for (int b = 0; b < len; ++b) raw.push_back(static_cast<char>(byte_dist(rng)));
        const auto& fields = field_sets[static_cast<size_t>(i) % field_sets.size()];
        auto r = parse_response(raw, fields);  // must not throw
        if (r.parse_status != ParseStatus::Failed) CHECK_FALSE(r.answer.empty());
        if (r.confidence) {
            CHECK(*r.confidence >= 0.0);
            CHECK(*r.confidence <= 1.0);
        }
        CHECK(r.raw_text == raw);
    }
}

TEST_CASE("extract_field pulls pre-pass values with the same ladder") {
    CHECK(extract_field(R"({"caption":"a dog runs"})", "caption") == "a dog runs");
    CHECK(extract_field("```json\n{\"focus\":\"the door\"}\n```", "focus") == "the door");
    CHECK(extract_field("focus: the window\n", "focus") == "the window");
    CHECK_FALSE(extract_field("nothing here", "focus").has_value());
    CHECK_FALSE(extract_field(R"({"focus": ""})", "focus").has_value());
}

TEST_CASE("candidate JSON round-trip") {
    CandidateResponse c;
    c.mode_id = 4;
    c.query_id = "q9";
    c.reason = "because";
    c.answer = "yes";
    c.confidence = 0.5;
    c.raw_text = "{\"answer\":\"yes\"}";
    c.parse_status = ParseStatus::Repaired;

    auto j = candidate_to_json(c);
    auto back = candidate_from_json(j);
    CHECK(back.mode_id == c.mode_id);
    CHECK(back.query_id == c.query_id);
    CHECK(back.reason == c.reason);
    CHECK_FALSE(back.caption.has_value());
    CHECK(back.answer == c.answer);
    CHECK(back.confidence == c.confidence);
    CHECK(back.raw_text == c.raw_text);
    CHECK(back.parse_status == c.parse_status);
}
