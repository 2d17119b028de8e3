#include "vqaens/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace vqaens {

namespace toml_lite {

namespace {

struct Cursor {
    const std::string& line;
    size_t pos = 0;
    size_t line_no;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("config line " + std::to_string(line_no) + ": " + what);
    }
    bool done() const { return pos >= line.size(); }
    char peek() const { return line[pos]; }
    void skip_ws() {
        while (!done() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    }
};

std::string parse_basic_string(Cursor& c) {
    // opening quote already consumed
    std::string out;
    while (true) {
        if (c.done()) c.fail("unterminated string");
        char ch = c.line[c.pos++];
        if (ch == '"') return out;
        if (ch == '\\') {
            if (c.done()) c.fail("dangling escape");
            char esc = c.line[c.pos++];
            switch (esc) {
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case 'r': out.push_back('\r'); break;
                default: c.fail(std::string("unsupported escape '\\") + esc + "'");
            }
            continue;
        }
        out.push_back(ch);
    }
}

nlohmann::ordered_json parse_scalar(Cursor& c);

nlohmann::ordered_json parse_array(Cursor& c) {
    // opening bracket already consumed
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    c.skip_ws();
    if (!c.done() && c.peek() == ']') {
        ++c.pos;
        return arr;
    }
    while (true) {
        c.skip_ws();
        arr.push_back(parse_scalar(c));
        c.skip_ws();
        if (c.done()) c.fail("unterminated array");
        char ch = c.line[c.pos++];
        if (ch == ']') return arr;
        if (ch != ',') c.fail("expected ',' or ']' in array");
        c.skip_ws();
        if (!c.done() && c.peek() == ']') {  // trailing comma
            ++c.pos;
            return arr;
        }
    }
}

nlohmann::ordered_json parse_scalar(Cursor& c) {
    c.skip_ws();
    if (c.done()) c.fail("expected a value");
    char ch = c.peek();
    if (ch == '"') {
        ++c.pos;
        return parse_basic_string(c);
    }
    if (ch == '[') {
        ++c.pos;
        return parse_array(c);
    }
    // bare token: bool, integer, or float
    size_t start = c.pos;
    while (!c.done() && c.peek() != ',' && c.peek() != ']' && c.peek() != '#' &&
           c.peek() != ' ' && c.peek() != '\t') {
        ++c.pos;
    }
    std::string token = c.line.substr(start, c.pos - start);
    if (token == "true") return true;
    if (token == "false") return false;
    try {
        if (token.find_first_of(".eE") == std::string::npos) {
            size_t used = 0;
            long long v = std::stoll(token, &used);
            if (used == token.size()) return v;
        } else {
            size_t used = 0;
            double v = std::stod(token, &used);
            if (used == token.size()) return v;
        }
    } catch (const std::exception&) {
    }
    c.fail("cannot parse value '" + token + "'");
}

std::string parse_key(Cursor& c) {
    c.skip_ws();
    if (c.done()) c.fail("expected a key");
    if (c.peek() == '"') {
        ++c.pos;
        return parse_basic_string(c);
    }
    size_t start = c.pos;
    while (!c.done()) {
        char ch = c.peek();
        if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-') {
            ++c.pos;
        } else {
            break;
        }
    }
    if (c.pos == start) c.fail("expected a key");
    return c.line.substr(start, c.pos - start);
}

std::vector<std::string> parse_table_path(Cursor& c) {
    std::vector<std::string> path;
    while (true) {
        path.push_back(parse_key(c));
        c.skip_ws();
        if (c.done()) c.fail("unterminated table header");
        if (c.peek() == '.') {
            ++c.pos;
            continue;
        }
        return path;
    }
}

// strips a trailing comment that is not inside a string
void strip_comment(std::string& line) {
    bool in_string = false, escaped = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (ch == '\\') {
                escaped = true;
            } else if (ch == '"') {
                in_string = false;
            }
            continue;
        }
        if (ch == '"') in_string = true;
        if (ch == '#') {
            line.erase(i);
            return;
        }
    }
}

nlohmann::ordered_json* descend(nlohmann::ordered_json& root,
                                const std::vector<std::string>& path, size_t line_no) {
    nlohmann::ordered_json* node = &root;
    for (const auto& key : path) {
        if (node->is_array()) node = &node->back();
        auto it = node->find(key);
        if (it == node->end()) {
            (*node)[key] = nlohmann::ordered_json::object();
            node = &(*node)[key];
        } else {
            node = &*it;
        }
    }
    if (node->is_array()) node = &node->back();
    if (!node->is_object()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": table path collides with an existing value");
    }
    return node;
}

}  // namespace

nlohmann::ordered_json parse(const std::string& text) {
    nlohmann::ordered_json root = nlohmann::ordered_json::object();
    nlohmann::ordered_json* current = &root;

    std::istringstream stream(text);
    std::string raw_line;
    size_t line_no = 0;
    while (std::getline(stream, raw_line)) {
        ++line_no;
        std::string line = raw_line;
        strip_comment(line);
        Cursor c{line, 0, line_no};
        c.skip_ws();
        if (c.done()) continue;

        if (c.peek() == '[') {
            ++c.pos;
            bool array_table = !c.done() && c.peek() == '[';
            if (array_table) ++c.pos;
            auto path = parse_table_path(c);
            c.skip_ws();
            if (c.done() || c.peek() != ']') c.fail("expected ']'");
            ++c.pos;
            if (array_table) {
                if (c.done() || c.peek() != ']') c.fail("expected ']]'");
                ++c.pos;
            }
            c.skip_ws();
            if (!c.done()) c.fail("unexpected text after table header");

            if (array_table) {
                std::vector<std::string> parent(path.begin(), path.end() - 1);
                nlohmann::ordered_json* holder = descend(root, parent, line_no);
                auto& slot = (*holder)[path.back()];
                if (slot.is_null()) slot = nlohmann::ordered_json::array();
                if (!slot.is_array()) c.fail("'" + path.back() + "' is not an array of tables");
                slot.push_back(nlohmann::ordered_json::object());
                current = &slot.back();
            } else {
                current = descend(root, path, line_no);
            }
            continue;
        }

        std::string key = parse_key(c);
        c.skip_ws();
        if (c.done() || c.peek() != '=') c.fail("expected '=' after key '" + key + "'");
        ++c.pos;
        auto value = parse_scalar(c);
        c.skip_ws();
        if (!c.done()) c.fail("unexpected text after value for key '" + key + "'");
        if (current->contains(key)) c.fail("duplicate key '" + key + "'");
        (*current)[key] = std::move(value);
    }
    return root;
}

nlohmann::ordered_json parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str());
}

}  // namespace toml_lite

// ---------------------------------------------------------------------------
// RunConfig

namespace {

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
    throw ConfigError("config field '" + field + "': " + what);
}

template <typename T>
T get_or(const nlohmann::ordered_json& obj, const std::string& key, T fallback) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        field_error(key, "unexpected type");
    }
}

std::string require_string(const nlohmann::ordered_json& obj, const std::string& key,
                           const std::string& field) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string() || it->get<std::string>().empty()) {
        field_error(field, "required non-empty string");
    }
    return it->get<std::string>();
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::filesystem::path& p) {
    return p.is_absolute() ? p : base / p;
}

CotFieldSet fields_from_json(const nlohmann::ordered_json& arr, const std::string& field) {
    CotFieldSet fields;
    fields.caption = fields.summary = fields.reason = fields.confidence = false;
    if (!arr.is_array()) field_error(field, "must be an array of field names");
    for (const auto& item : arr) {
        std::string name = item.get<std::string>();
        if (name == "caption") fields.caption = true;
        else if (name == "summary") fields.summary = true;
        else if (name == "reason") fields.reason = true;
        else if (name == "answer") continue;  // always on
        else if (name == "confidence") fields.confidence = true;
        else field_error(field, "unknown CoT field '" + name + "'");
    }
    return fields;
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
    auto doc = toml_lite::parse_file(path);
    return from_json(doc, std::filesystem::absolute(path).parent_path());
}

RunConfig RunConfig::from_json(const nlohmann::ordered_json& doc,
                               const std::filesystem::path& base_dir) {
    RunConfig cfg;
    cfg.dataset = resolve(base_dir, require_string(doc, "dataset", "dataset"));
    std::string split = get_or<std::string>(doc, "split", "custom");
    auto parsed_split = split_from_name(split);
    if (!parsed_split) field_error("split", "must be validation, test or custom");
    cfg.split = *parsed_split;

    if (doc.contains("cache_dir")) {
        cfg.cache_dir = resolve(base_dir, doc["cache_dir"].get<std::string>());
    }
    cfg.output_dir = resolve(base_dir, require_string(doc, "output_dir", "output_dir"));
    cfg.max_parallel = static_cast<int>(get_or<long long>(doc, "max_parallel", 4));
    if (cfg.max_parallel < 1) field_error("max_parallel", "must be >= 1");
    cfg.seed = static_cast<std::uint64_t>(get_or<long long>(doc, "seed", 0));
    if (doc.contains("template_dir")) {
        cfg.template_dir = resolve(base_dir, doc["template_dir"].get<std::string>());
    }

    // backends
    if (!doc.contains("backends") || !doc["backends"].is_object() || doc["backends"].empty()) {
        field_error("backends", "at least one backend must be configured");
    }
    for (const auto& [id, spec] : doc["backends"].items()) {
        std::string field = "backends." + id;
        if (!spec.is_object()) field_error(field, "must be a table");
        BackendEntry entry;
        entry.kind = require_string(spec, "kind", field + ".kind");
        if (entry.kind == "mock") {
            entry.seed = static_cast<std::uint64_t>(get_or<long long>(spec, "seed", 0));
            if (spec.contains("behavior")) {
                entry.behavior_file = resolve(base_dir, spec["behavior"].get<std::string>());
            }
        } else if (entry.kind == "http") {
            entry.url = require_string(spec, "url", field + ".url");
            entry.auth_env = get_or<std::string>(spec, "auth_env", "");
            entry.response_path =
                get_or<std::string>(spec, "response_path", entry.response_path);
            entry.body_template = get_or<std::string>(spec, "body_template", "");
            entry.timeout_ms = static_cast<int>(get_or<long long>(spec, "timeout_ms", 30000));
        } else {
            field_error(field + ".kind", "must be 'mock' or 'http'");
        }
        entry.temperature = get_or<double>(spec, "temperature", 0.0);
        if (entry.temperature < 0) field_error(field + ".temperature", "must be >= 0");
        entry.max_output_tokens =
            static_cast<int>(get_or<long long>(spec, "max_output_tokens", 1024));
        if (entry.max_output_tokens <= 0) {
            field_error(field + ".max_output_tokens", "must be > 0");
        }
        if (spec.contains("requests_per_second")) {
            entry.requests_per_second = spec["requests_per_second"].get<double>();
            if (*entry.requests_per_second <= 0) {
                field_error(field + ".requests_per_second", "must be > 0");
            }
        }
        cfg.backends[id] = std::move(entry);
    }

    // pathways: "builtin", a list of preset names, or inline tables
    std::string default_backend = get_or<std::string>(doc, "default_backend", "");
    auto builtin = builtin_pathways(default_backend);
    if (doc.contains("pathways")) {
        const auto& sel = doc["pathways"];
        if (sel.is_string() && sel.get<std::string>() == "builtin") {
            cfg.pathways = builtin;
        } else if (sel.is_array()) {
            for (const auto& item : sel) {
                std::string name = item.get<std::string>();
                auto match = std::find_if(builtin.begin(), builtin.end(),
                                          [&](const auto& p) { return p.name == name; });
                if (match == builtin.end()) {
                    field_error("pathways", "unknown preset '" + name + "'");
                }
                cfg.pathways.push_back(*match);
            }
        } else {
            field_error("pathways", "must be \"builtin\" or an array of preset names");
        }
        if (default_backend.empty()) {
            field_error("default_backend", "required when using builtin pathways");
        }
    }
    if (doc.contains("pathway")) {
        if (!doc["pathway"].is_array()) field_error("pathway", "must be [[pathway]] tables");
        size_t index = 0;
        for (const auto& spec : doc["pathway"]) {
            std::string field = "pathway[" + std::to_string(index++) + "]";
            PathwayConfig p;
            if (!spec.contains("mode_id") || !spec["mode_id"].is_number_integer()) {
                field_error(field + ".mode_id", "required integer");
            }
            p.mode_id = spec["mode_id"].get<int>();
            p.name = require_string(spec, "name", field + ".name");
            p.template_id = require_string(spec, "template", field + ".template");
            if (spec.contains("fields")) {
                p.cot_fields = fields_from_json(spec["fields"], field + ".fields");
            } else {
                p.cot_fields = CotFieldSet::standard();
            }
            std::string shape = get_or<std::string>(spec, "shape", "direct");
            auto parsed_shape = shape_from_name(shape);
            if (!parsed_shape) field_error(field + ".shape", "unknown shape '" + shape + "'");
            p.shape = *parsed_shape;
            p.backend_id = get_or<std::string>(spec, "backend", default_backend);
            p.reasoning_characteristics =
                require_string(spec, "characteristics", field + ".characteristics");
            cfg.pathways.push_back(std::move(p));
        }
    }
    if (cfg.pathways.empty()) {
        field_error("pathways", "no pathways configured");
    }

    // per-mode backend overrides
    if (doc.contains("pathway_backends")) {
        for (const auto& [mode, backend] : doc["pathway_backends"].items()) {
            int mode_id = std::stoi(mode);
            bool found = false;
            for (auto& p : cfg.pathways) {
                if (p.mode_id == mode_id) {
                    p.backend_id = backend.get<std::string>();
                    found = true;
                }
            }
            if (!found) {
                field_error("pathway_backends." + mode, "no pathway with that mode_id");
            }
        }
    }

    // cross-checks
    std::map<int, bool> mode_ids;
    for (const auto& p : cfg.pathways) {
        if (mode_ids.count(p.mode_id)) {
            field_error("pathway", "duplicate mode_id " + std::to_string(p.mode_id));
        }
        mode_ids[p.mode_id] = true;
        if (!cfg.backends.count(p.backend_id)) {
            field_error("pathway (mode " + std::to_string(p.mode_id) + ").backend",
                        "unknown backend '" + p.backend_id + "'");
        }
        if (p.reasoning_characteristics.empty()) {
            field_error("pathway (mode " + std::to_string(p.mode_id) + ").characteristics",
                        "must be non-empty");
        }
    }

    // ensemble settings
    if (doc.contains("ensemble")) {
        const auto& ens = doc["ensemble"];
        cfg.ensemble.method = get_or<std::string>(ens, "method", "vote");
        if (cfg.ensemble.method != "vote" && cfg.ensemble.method != "judge") {
            field_error("ensemble.method", "must be 'vote' or 'judge'");
        }
        cfg.ensemble.judge_backend = get_or<std::string>(ens, "judge_backend", "");
        cfg.ensemble.uniform_weights = get_or<bool>(ens, "uniform_weights", false);
        if (ens.contains("mask")) {
            if (!ens["mask"].is_array()) field_error("ensemble.mask", "must be an array of 0/1");
            for (const auto& bit : ens["mask"]) {
                long long v = bit.get<long long>();
                if (v != 0 && v != 1) field_error("ensemble.mask", "entries must be 0 or 1");
                cfg.ensemble.mask.push_back(static_cast<int>(v));
            }
        }
    }
    if (cfg.ensemble.method == "judge") {
        if (cfg.ensemble.judge_backend.empty()) {
            field_error("ensemble.judge_backend", "required when method is 'judge'");
        }
        if (!cfg.backends.count(cfg.ensemble.judge_backend)) {
            field_error("ensemble.judge_backend",
                        "unknown backend '" + cfg.ensemble.judge_backend + "'");
        }
    }
    if (!cfg.ensemble.mask.empty() && cfg.ensemble.mask.size() != cfg.pathways.size()) {
        field_error("ensemble.mask", "length " + std::to_string(cfg.ensemble.mask.size()) +
                                         " does not match pathway count " +
                                         std::to_string(cfg.pathways.size()));
    }
    bool any_active = cfg.ensemble.mask.empty();
    for (int bit : cfg.ensemble.mask) any_active = any_active || bit == 1;
    if (!any_active) field_error("ensemble.mask", "at least one mode must be active");

    return cfg;
}

ActivationMask RunConfig::activation_mask() const {
    ActivationMask mask;
    if (ensemble.mask.empty()) return mask;
    for (size_t i = 0; i < pathways.size(); ++i) {
        mask.flags[pathways[i].mode_id] = ensemble.mask[i] == 1;
    }
    return mask;
}

const PathwayConfig* RunConfig::pathway_by_mode(int mode_id) const {
    for (const auto& p : pathways) {
        if (p.mode_id == mode_id) return &p;
    }
    return nullptr;
}

std::unique_ptr<BackendGateway> make_gateway(const RunConfig& config) {
    GatewayOptions options;
    options.cache_dir = config.cache_dir;
    options.seed = config.seed;
    auto gateway = std::make_unique<BackendGateway>(options);
    for (const auto& [id, entry] : config.backends) {
        std::unique_ptr<Backend> backend;
        if (entry.kind == "mock") {
            std::vector<MockRule> rules;
            if (entry.behavior_file) {
                std::ifstream in(*entry.behavior_file);
                if (!in) {
                    throw ConfigError("cannot open mock behavior file: " +
                                      entry.behavior_file->string());
                }
                try {
                    rules = MockBackend::rules_from_json(nlohmann::json::parse(in));
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError("invalid mock behavior file " +
                                      entry.behavior_file->string() + ": " + e.what());
                }
            }
            backend = std::make_unique<MockBackend>(entry.seed, std::move(rules));
        } else {
            HttpBackendConfig http;
            http.url = entry.url;
            http.auth_env = entry.auth_env;
            http.response_path = entry.response_path;
            http.timeout_ms = entry.timeout_ms;
            if (!entry.body_template.empty()) {
                try {
                    http.body_template =
                        nlohmann::ordered_json::parse(entry.body_template);
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError("backends." + id + ".body_template: invalid JSON: " +
                                      e.what());
                }
            }
            backend = std::make_unique<HttpBackend>(std::move(http));
        }
        gateway->register_backend(id, std::move(backend), entry.requests_per_second);
    }
    return gateway;
}

TemplateRegistry make_template_registry(const RunConfig& config) {
    TemplateRegistry registry = TemplateRegistry::builtin();
    if (config.template_dir) registry.load_directory(*config.template_dir);
    return registry;
}

}  // namespace vqaens
