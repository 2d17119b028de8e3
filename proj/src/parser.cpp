#include "vqaens/parser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>

namespace vqaens {

using nlohmann::json;

std::string_view parse_status_name(ParseStatus s) {
    switch (s) {
        case ParseStatus::Clean: return "clean";
        case ParseStatus::Repaired: return "repaired";
        case ParseStatus::Failed: return "failed";
    }
    return "failed";
}

std::optional<ParseStatus> parse_status_from_name(std::string_view s) {
    if (s == "clean") return ParseStatus::Clean;
    if (s == "repaired") return ParseStatus::Repaired;
    if (s == "failed") return ParseStatus::Failed;
    return std::nullopt;
}

double clamp_confidence(double value) {
    if (std::isnan(value)) return 0.0;
    return std::clamp(value, 0.0, 1.0);
}

namespace {

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::optional<double> parse_number_token(std::string token) {
    token = trim(token);
    if (token.empty()) return std::nullopt;
    bool percent = token.back() == '%';
    if (percent) token = trim(token.substr(0, token.size() - 1));
    if (token.empty()) return std::nullopt;
    const char* begin = token.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end != begin + token.size()) return std::nullopt;
    if (percent) v /= 100.0;
    return clamp_confidence(v);
}

// A string usable as a field value. Scalars are stringified; structured
// values and null are treated as absent.
std::optional<std::string> value_as_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? std::string("true") : std::string("false");
    if (v.is_number()) return v.dump();
    return std::nullopt;
}

std::optional<json> try_parse_object(const std::string& text) {
    try {
        json v = json::parse(text);
        if (v.is_object()) return v;
    } catch (const json::exception&) {
    }
    return std::nullopt;
}

// (b) content of the first ``` fenced block, with an optional language tag.
std::optional<std::string> first_fenced_block(const std::string& raw) {
    size_t open = raw.find("```");
    if (open == std::string::npos) return std::nullopt;
    size_t body = open + 3;
    // skip a language tag up to end of line
    size_t eol = raw.find('\n', body);
    if (eol == std::string::npos) return std::nullopt;
    std::string tag = trim(raw.substr(body, eol - body));
    size_t start = tag.empty() ? body : eol + 1;
    size_t close = raw.find("```", start);
    if (close == std::string::npos) return std::nullopt;
    return raw.substr(start, close - start);
}

// (c) first balanced top-level {...} substring, string-aware.
std::optional<std::string> first_balanced_object(const std::string& raw) {
    size_t start = raw.find('{');
    if (start == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false, escaped = false;
    for (size_t i = start; i < raw.size(); ++i) {
        char c = raw[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return raw.substr(start, i - start + 1);
        }
    }
    return std::nullopt;
}

// (d) per-line "key: value" scavenging. Accepts optional quotes around the
// key, and strips quotes plus trailing commas from the value.
std::optional<std::string> scavenge_line_value(const std::string& raw, const std::string& key) {
    size_t line_start = 0;
    while (line_start <= raw.size()) {
        size_t line_end = raw.find('\n', line_start);
        if (line_end == std::string::npos) line_end = raw.size();
        std::string_view line(raw.data() + line_start, line_end - line_start);

        for (size_t pos = 0; (pos = line.find(key, pos)) != std::string_view::npos; ++pos) {
            // key must stand alone: not part of a longer identifier
            if (pos > 0) {
                char prev = line[pos - 1];
                if (std::isalnum(static_cast<unsigned char>(prev)) || prev == '_') continue;
            }
            size_t after = pos + key.size();
            if (after < line.size() &&
                (std::isalnum(static_cast<unsigned char>(line[after])) || line[after] == '_')) {
                continue;
            }
            // allow a closing quote then require a colon
            size_t p = after;
            if (p < line.size() && line[p] == '"') ++p;
            while (p < line.size() && std::isspace(static_cast<unsigned char>(line[p]))) ++p;
            if (p >= line.size() || line[p] != ':') continue;
            ++p;
            std::string value = trim(line.substr(p));
            // strip one matched pair of quotes, then trailing JSON debris
            while (!value.empty() && (value.back() == ',' || value.back() == '}')) {
                value = trim(value.substr(0, value.size() - 1));
            }
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
                value = value.substr(1, value.size() - 2);
            } else if (!value.empty() && value.front() == '"') {
                value = value.substr(1);
            }
            value = trim(value);
            if (!value.empty()) return value;
        }
        if (line_end == raw.size()) break;
        line_start = line_end + 1;
    }
    return std::nullopt;
}

// Fills a candidate from a parsed JSON object, honoring the expected field
// set. Returns true when a non-empty answer was recovered.
bool fill_from_object(const json& obj, const CotFieldSet& expected, CandidateResponse& out) {
    auto text_of = [&](const char* key) -> std::optional<std::string> {
        auto it = obj.find(key);
        if (it == obj.end()) return std::nullopt;
        return value_as_text(*it);
    };
    auto answer = text_of("answer");
    if (!answer || trim(*answer).empty()) return false;

    out.answer = trim(*answer);
    if (expected.caption) out.caption = text_of("caption");
    if (expected.summary) out.summary = text_of("summary");
    if (expected.reason) out.reason = text_of("reason");
    if (expected.confidence) {
        auto it = obj.find("confidence");
        if (it != obj.end()) out.confidence = parse_confidence(*it);
    }
    return true;
}

}  // namespace

std::optional<double> parse_confidence(const json& value) {
    if (value.is_number()) return clamp_confidence(value.get<double>());
    if (value.is_string()) return parse_number_token(value.get<std::string>());
    return std::nullopt;
}

CandidateResponse parse_response(const std::string& raw, const CotFieldSet& expected) {
    CandidateResponse out;
    out.raw_text = raw;
    out.parse_status = ParseStatus::Failed;

    // (a) the whole reply is the JSON object
    if (auto obj = try_parse_object(raw)) {
        if (fill_from_object(*obj, expected, out)) {
            out.parse_status = ParseStatus::Clean;
            return out;
        }
    }

    // (b) fenced code block
    if (auto block = first_fenced_block(raw)) {
        if (auto obj = try_parse_object(*block)) {
            if (fill_from_object(*obj, expected, out)) {
                out.parse_status = ParseStatus::Repaired;
                return out;
            }
        }
    }

    // (c) first balanced {...} substring
    if (auto block = first_balanced_object(raw)) {
        if (auto obj = try_parse_object(*block)) {
            if (fill_from_object(*obj, expected, out)) {
                out.parse_status = ParseStatus::Repaired;
                return out;
            }
        }
    }

    // (d) line-based key scavenging
    if (auto answer = scavenge_line_value(raw, "answer")) {
        out.answer = *answer;
        out.parse_status = ParseStatus::Repaired;
        if (expected.caption) {
            if (auto v = scavenge_line_value(raw, "caption")) out.caption = *v;
        }
        if (expected.summary) {
            if (auto v = scavenge_line_value(raw, "summary")) out.summary = *v;
        }
        if (expected.reason) {
            if (auto v = scavenge_line_value(raw, "reason")) out.reason = *v;
        }
        if (expected.confidence) {
            if (auto v = scavenge_line_value(raw, "confidence")) {
                out.confidence = parse_number_token(*v);
            }
        }
        return out;
    }

    out.answer.clear();
    return out;
}

std::optional<std::string> extract_field(const std::string& raw, const std::string& key) {
    auto from_obj = [&](const json& obj) -> std::optional<std::string> {
        auto it = obj.find(key);
        if (it == obj.end()) return std::nullopt;
        auto text = value_as_text(*it);
        if (!text || trim(*text).empty()) return std::nullopt;
        return trim(*text);
    };
    if (auto obj = try_parse_object(raw)) {
        if (auto v = from_obj(*obj)) return v;
    }
    if (auto block = first_fenced_block(raw)) {
        if (auto obj = try_parse_object(*block)) {
            if (auto v = from_obj(*obj)) return v;
        }
    }
    if (auto block = first_balanced_object(raw)) {
        if (auto obj = try_parse_object(*block)) {
            if (auto v = from_obj(*obj)) return v;
        }
    }
    return scavenge_line_value(raw, key);
}

std::string dump_json_line(const nlohmann::ordered_json& j) {
    return j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

nlohmann::ordered_json candidate_to_json(const CandidateResponse& c) {
    nlohmann::ordered_json j;
    j["mode_id"] = c.mode_id;
    j["query_id"] = c.query_id;
    if (c.caption) j["caption"] = *c.caption;
    if (c.summary) j["summary"] = *c.summary;
    if (c.reason) j["reason"] = *c.reason;
    j["answer"] = c.answer;
    if (c.confidence) j["confidence"] = *c.confidence;
    j["raw_text"] = c.raw_text;
    j["parse_status"] = std::string(parse_status_name(c.parse_status));
    return j;
}

CandidateResponse candidate_from_json(const nlohmann::json& j) {
    CandidateResponse c;
    c.mode_id = j.at("mode_id").get<int>();
    c.query_id = j.at("query_id").get<std::string>();
    if (j.contains("caption")) c.caption = j["caption"].get<std::string>();
    if (j.contains("summary")) c.summary = j["summary"].get<std::string>();
    if (j.contains("reason")) c.reason = j["reason"].get<std::string>();
    c.answer = j.at("answer").get<std::string>();
    if (j.contains("confidence")) c.confidence = j["confidence"].get<double>();
    c.raw_text = j.at("raw_text").get<std::string>();
    auto status = parse_status_from_name(j.at("parse_status").get<std::string>());
    c.parse_status = status.value_or(ParseStatus::Failed);
    return c;
}

}  // namespace vqaens
