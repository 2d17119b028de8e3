#pragma once

// Extraction of the structured chain-of-thought record from raw model text.
// Total: no input crashes; failure is encoded in the parse status.

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "vqaens/prompt.hpp"

namespace vqaens {

enum class ParseStatus { Clean, Repaired, Failed };

std::string_view parse_status_name(ParseStatus s);
std::optional<ParseStatus> parse_status_from_name(std::string_view s);

// One backend's parsed structured output for one query. Fields outside the
// pathway's CotFieldSet stay absent even when the model emits them.
struct CandidateResponse {
    int mode_id = 0;
    std::string query_id;
    std::optional<std::string> caption;
    std::optional<std::string> summary;
    std::optional<std::string> reason;
    std::string answer;  // non-empty unless parse_status == Failed
    std::optional<double> confidence;  // always within [0, 1]
    std::string raw_text;
    ParseStatus parse_status = ParseStatus::Failed;
};

nlohmann::ordered_json candidate_to_json(const CandidateResponse& c);
CandidateResponse candidate_from_json(const nlohmann::json& j);

/// Single-line dump that survives invalid UTF-8 in backend text (bad
/// sequences are replaced, never thrown on).
std::string dump_json_line(const nlohmann::ordered_json& j);

/// Parses raw backend text into the expected field set. Repair ladder, in
/// order: (a) whole-text JSON parse -> Clean; (b) first fenced code block;
/// (c) first balanced {...} substring; (d) line-based key scavenging for the
/// expected keys -> Repaired. A rung only counts when it yields a non-empty
/// answer; otherwise the next rung runs. No rung left -> Failed with an
/// empty answer. Never throws.
CandidateResponse parse_response(const std::string& raw, const CotFieldSet& expected);

/// Clamps a confidence value into [0, 1].
double clamp_confidence(double value);

/// Confidence from a raw JSON value: numbers are clamped; strings are parsed
/// (a trailing '%' divides by 100 first); anything non-numeric is absent.
std::optional<double> parse_confidence(const nlohmann::json& value);

/// First string value found for `key` using the same repair ladder (used to
/// pull "caption"/"focus" out of pre-pass replies). Empty optional when the
/// key cannot be recovered.
std::optional<std::string> extract_field(const std::string& raw, const std::string& key);

}  // namespace vqaens
