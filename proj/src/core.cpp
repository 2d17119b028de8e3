#include "vqaens/core.hpp"

#include <array>
#include <cctype>
#include <fstream>
#include <unordered_set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace vqaens {

namespace {

// Category taxonomy. The numbering is part of every report, so the table is
// fixed here and guarded by tests.
constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {
    "Multiple Actions in single video.",
    "Fine-grained action understanding.",
    "Partial actions.",
    "Time order understanding.",
    "Non-existent actions with existent scene.",
    "Non-existent actions with non-existent scene.",
    "Continuity and Object instance Count.",
    "Unusual and Physically Anomalous activities.",
    "Interpretation of social context.",
    "Understanding of emotional context.",
    "Interpretation of visual context.",
};

}  // namespace

std::string_view category_name(int number) {
    if (number < 1 || number > kCategoryCount) {
        throw DatasetError("category " + std::to_string(number) +
                           " out of range 1.." + std::to_string(kCategoryCount));
    }
    return kCategoryNames[static_cast<size_t>(number - 1)];
}

std::optional<int> category_number(std::string_view name) {
    for (int n = 1; n <= kCategoryCount; ++n) {
        if (kCategoryNames[static_cast<size_t>(n - 1)] == name) return n;
    }
    return std::nullopt;
}

const std::vector<Category>& categories() {
    static const std::vector<Category> all = [] {
        std::vector<Category> v;
        for (int n = 1; n <= kCategoryCount; ++n) {
            v.push_back(Category{n, kCategoryNames[static_cast<size_t>(n - 1)]});
        }
        return v;
    }();
    return all;
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::Validation: return "validation";
        case Split::Test: return "test";
        case Split::Custom: return "custom";
    }
    return "custom";
}

std::optional<Split> split_from_name(std::string_view s) {
    if (s == "validation") return Split::Validation;
    if (s == "test") return Split::Test;
    if (s == "custom") return Split::Custom;
    return std::nullopt;
}

bool Dataset::labeled() const {
    if (items.empty()) return false;
    for (const auto& q : items) {
        if (!q.ground_truth || q.ground_truth->empty()) return false;
    }
    return true;
}

std::string normalize_answer(std::string_view answer) {
    std::string out;
    out.reserve(answer.size());
    bool pending_space = false;
    for (char ch : answer) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    // Trailing sentence punctuation carries no meaning for answer equality.
    // Strip to a fixpoint so the function is idempotent ("yes.." == "yes").
    while (!out.empty()) {
        char c = out.back();
        if (c == '.' || c == '!' || c == '?' || c == ' ') {
            out.pop_back();
        } else {
            break;
        }
    }
    return out;
}

AnswerRecord AnswerRecord::make(std::string query_id, std::string answer) {
    AnswerRecord rec;
    rec.query_id = std::move(query_id);
    rec.normalized = normalize_answer(answer);
    rec.answer = std::move(answer);
    return rec;
}

namespace {

[[noreturn]] void line_error(size_t line_no, const std::string& what) {
    throw DatasetError("line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, Split split) {
    std::ifstream in(path);
    if (!in) {
        throw DatasetError("cannot open dataset file: " + path.string());
    }

    Dataset ds;
    ds.split = split;
    std::string line;
    size_t line_no = 0;
    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        // Allow blank lines (trailing newline etc).
        bool blank = true;
        for (char c : line) {
            if (!std::isspace(static_cast<unsigned char>(c))) { blank = false; break; }
        }
        if (blank) continue;

        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            line_error(line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object()) line_error(line_no, "record is not a JSON object");

        for (const auto& [key, _] : obj.items()) {
            if (key != "id" && key != "video" && key != "question" &&
                key != "category" && key != "answer") {
                line_error(line_no, "unexpected field '" + key + "'");
            }
        }

        auto require_string = [&](const char* key) -> std::string {
            if (!obj.contains(key)) line_error(line_no, std::string("missing field '") + key + "'");
            if (!obj[key].is_string()) line_error(line_no, std::string("field '") + key + "' must be a string");
            return obj[key].get<std::string>();
        };

        QueryInstance q;
        q.id = require_string("id");
        if (q.id.empty()) line_error(line_no, "field 'id' is empty");
        q.video = require_string("video");
        q.question = require_string("question");
        if (q.question.empty()) line_error(line_no, "field 'question' is empty");

        if (!obj.contains("category")) line_error(line_no, "missing field 'category'");
        if (!obj["category"].is_number_integer()) {
            line_error(line_no, "field 'category' must be an integer");
        }
        q.category = obj["category"].get<int>();
        if (q.category < 1 || q.category > kCategoryCount) {
            line_error(line_no, "category " + std::to_string(q.category) + " out of range 1..11");
        }

        if (obj.contains("answer")) {
            if (!obj["answer"].is_string()) line_error(line_no, "field 'answer' must be a string");
            q.ground_truth = obj["answer"].get<std::string>();
        }

        if (!seen_ids.insert(q.id).second) {
            line_error(line_no, "duplicate id '" + q.id + "'");
        }
        ds.items.push_back(std::move(q));
    }
    return ds;
}

std::string serialize_dataset(const Dataset& dataset) {
    std::ostringstream out;
    for (const auto& q : dataset.items) {
        nlohmann::ordered_json obj;
        obj["id"] = q.id;
        obj["video"] = q.video;
        obj["question"] = q.question;
        obj["category"] = q.category;
        if (q.ground_truth) obj["answer"] = *q.ground_truth;
        out << obj.dump() << '\n';
    }
    return out.str();
}

}  // namespace vqaens
