#pragma once

// Core domain types shared by every other module: the benchmark category
// taxonomy, query instances, datasets, and answer normalization.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vqaens {

// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dataset file / record validation failures (message names line and field).
struct DatasetError : Error {
    using Error::Error;
};

inline constexpr int kCategoryCount = 11;

struct Category {
    int number = 0;  // 1..11
    std::string_view name;
};

/// Label for a benchmark category number. Throws DatasetError when the
/// number is outside 1..11.
std::string_view category_name(int number);

/// Inverse lookup: exact label -> category number, or nullopt.
std::optional<int> category_number(std::string_view name);

/// All 11 categories in numeric order.
const std::vector<Category>& categories();

struct QueryInstance {
    std::string id;
    std::string video;  // opaque media reference (path or URI), never decoded
    std::string question;
    int category = 0;
    std::optional<std::string> ground_truth;
};

enum class Split { Validation, Test, Custom };

std::string_view split_name(Split s);
std::optional<Split> split_from_name(std::string_view s);

struct Dataset {
    std::vector<QueryInstance> items;  // file order, iteration order is stable
    Split split = Split::Custom;

    // True when every item carries a ground-truth answer.
    bool labeled() const;
};

/// Canonical answer form used for vote tallies and similarity counts:
/// lowercased (ASCII), whitespace runs collapsed to single spaces, trimmed,
/// trailing '.', '!' and '?' removed. Idempotent.
std::string normalize_answer(std::string_view answer);

struct AnswerRecord {
    std::string query_id;
    std::string answer;
    std::string normalized;  // always normalize_answer(answer)

    static AnswerRecord make(std::string query_id, std::string answer);
};

/// Reads a line-delimited JSON dataset. Each line is an object with keys
/// exactly {id, video, question, category} plus optional "answer" (the
/// ground truth). Malformed lines, duplicate ids, unknown keys and
/// out-of-range categories raise DatasetError naming the line.
Dataset load_dataset(const std::filesystem::path& path, Split split);

/// Inverse of load_dataset for well-formed datasets (one JSON object per
/// line, key order id, video, question, category, answer).
std::string serialize_dataset(const Dataset& dataset);

}  // namespace vqaens
