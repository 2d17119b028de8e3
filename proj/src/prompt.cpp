#include "vqaens/prompt.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace vqaens {

std::vector<std::string> CotFieldSet::enabled_keys() const {
    std::vector<std::string> keys;
    if (caption) keys.push_back("caption");
    if (summary) keys.push_back("summary");
    if (reason) keys.push_back("reason");
    keys.push_back("answer");  // always enabled
    if (confidence) keys.push_back("confidence");
    return keys;
}

CotFieldSet CotFieldSet::answer_only() {
    return CotFieldSet{false, false, false, true, false};
}

CotFieldSet CotFieldSet::standard() {
    return CotFieldSet{false, false, true, true, true};
}

std::string_view shape_name(PipelineShape s) {
    switch (s) {
        case PipelineShape::Direct1Stage: return "direct";
        case PipelineShape::TwoStageCaptionThenReason: return "two_stage";
        case PipelineShape::QaFocalPrePass: return "qa_focal";
        case PipelineShape::QaFocusPrePass: return "qa_focus";
    }
    return "direct";
}

std::optional<PipelineShape> shape_from_name(std::string_view s) {
    if (s == "direct") return PipelineShape::Direct1Stage;
    if (s == "two_stage") return PipelineShape::TwoStageCaptionThenReason;
    if (s == "qa_focal") return PipelineShape::QaFocalPrePass;
    if (s == "qa_focus") return PipelineShape::QaFocusPrePass;
    return std::nullopt;
}

int calls_per_query(PipelineShape s) {
    return s == PipelineShape::Direct1Stage ? 1 : 2;
}

namespace {

// Builtin template bodies. {examples} is optional in all of them; templates
// that consume a pre-pass require {focus}.

constexpr const char* kDirectMultiPerspective =
    "You are a careful video analyst. Consider the question from several angles before\n"
    "answering: what is literally shown, what context surrounds it, and which readings the\n"
    "wording of the question allows. Do not commit to a single viewpoint too early.\n"
    "\n"
    "Question: {question}\n"
    "{examples}\n"
    "{format_block}";

constexpr const char* kDirectActionCheck =
    "You are a skeptical video analyst. Before answering, check whether the action or event\n"
    "mentioned in the question actually occurs in the video. Never assume an action happened\n"
    "just because the question implies it; report only what is visible.\n"
    "\n"
    "Question: {question}\n"
    "{examples}\n"
    "{format_block}";

constexpr const char* kDirectTemporal =
    "You are a video analyst focused on time. Reconstruct the order of events in the video,\n"
    "note what happens before and after each key moment, and use that ordering and any\n"
    "cause-effect links between events to answer.\n"
    "\n"
    "Question: {question}\n"
    "{examples}\n"
    "{format_block}";

constexpr const char* kDirectQuestionFirst =
    "Read the question first and decide exactly what evidence would settle it. Only then\n"
    "inspect the video, looking for that evidence, and answer based on what you find.\n"
    "\n"
    "Question: {question}\n"
    "{examples}\n"
    "{format_block}";

constexpr const char* kStyleConcise =
    "Watch the video and answer the question. Keep the answer short, direct, and grounded in\n"
    "what the video actually shows. If the video does not support the premise of the\n"
    "question, say so plainly.\n"
    "\n"
    "Question: {question}\n"
    "{examples}\n"
    "{format_block}";

constexpr const char* kFocalMain =
    "You previously noted what deserves attention when answering this question. Use those\n"
    "focus notes together with the video to answer.\n"
    "\n"
    "Focus notes:\n"
    "{focus}\n"
    "\n"
    "Question: {question}\n"
    "{examples}\n"
    "{format_block}";

constexpr const char* kFocusMain =
    "Important content was noted while watching the video without knowing the question. Use\n"
    "those notes together with the video to answer.\n"
    "\n"
    "Video notes:\n"
    "{focus}\n"
    "\n"
    "Question: {question}\n"
    "{examples}\n"
    "{format_block}";

constexpr const char* kTwoStageMain =
    "A description of the video is provided below. Answer the question using the description\n"
    "together with the video itself.\n"
    "\n"
    "Video description:\n"
    "{focus}\n"
    "\n"
    "Question: {question}\n"
    "{examples}\n"
    "{format_block}";

constexpr const char* kPrepassCaption =
    "Describe what happens in the video in detail: the setting, the people or objects\n"
    "involved, and each action in the order it occurs.\n"
    "\n"
    "{format_block}";

constexpr const char* kPrepassQaFocal =
    "Given the question below, list what in the video deserves close attention when\n"
    "answering it: objects, actions, moments, or details.\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "{format_block}";

constexpr const char* kPrepassQaFocus =
    "Watch the video and note the parts you consider most important: key objects, actions,\n"
    "transitions, and anything unusual or surprising.\n"
    "\n"
    "{format_block}";

std::set<std::string> scan_slots(const std::string& body);

PromptTemplate make_builtin(std::string id, const char* body) {
    PromptTemplate t;
    t.template_id = std::move(id);
    t.body = body;
    t.required_slots = scan_slots(t.body);
    t.required_slots.erase("examples");  // few-shot text is always optional
    return t;
}

// Finds {lowercase_identifier} markers.
std::set<std::string> scan_slots(const std::string& body) {
    std::set<std::string> slots;
    for (size_t i = 0; i < body.size(); ++i) {
        if (body[i] != '{') continue;
        size_t j = i + 1;
        while (j < body.size() && (body[j] == '_' || (body[j] >= 'a' && body[j] <= 'z'))) ++j;
        if (j > i + 1 && j < body.size() && body[j] == '}') {
            slots.insert(body.substr(i + 1, j - i - 1));
            i = j;
        }
    }
    return slots;
}

}  // namespace

TemplateRegistry TemplateRegistry::builtin() {
    TemplateRegistry reg;
    reg.add(make_builtin("direct_multi_perspective", kDirectMultiPerspective));
    reg.add(make_builtin("direct_action_check", kDirectActionCheck));
    reg.add(make_builtin("direct_temporal", kDirectTemporal));
    reg.add(make_builtin("direct_question_first", kDirectQuestionFirst));
    reg.add(make_builtin("style_concise", kStyleConcise));
    reg.add(make_builtin("focal_main", kFocalMain));
    reg.add(make_builtin("focus_main", kFocusMain));
    reg.add(make_builtin("two_stage_main", kTwoStageMain));
    reg.add(make_builtin("prepass_caption", kPrepassCaption));
    reg.add(make_builtin("prepass_qa_focal", kPrepassQaFocal));
    reg.add(make_builtin("prepass_qa_focus", kPrepassQaFocus));
    return reg;
}

void TemplateRegistry::add(PromptTemplate tmpl) {
    templates_[tmpl.template_id] = std::move(tmpl);
}

const PromptTemplate* TemplateRegistry::find(const std::string& template_id) const {
    auto it = templates_.find(template_id);
    return it == templates_.end() ? nullptr : &it->second;
}

std::vector<std::string> TemplateRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

void TemplateRegistry::load_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw RenderError("template directory not found: " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path());
        std::ostringstream body;
        body << in.rdbuf();
        PromptTemplate t;
        t.template_id = entry.path().stem().string();
        t.body = body.str();
        t.required_slots = scan_slots(t.body);
        t.required_slots.erase("examples");
        add(std::move(t));
    }
}

std::vector<PathwayConfig> builtin_pathways(const std::string& backend_id) {
    std::vector<PathwayConfig> out;
    auto make = [&](int id, std::string name, std::string tmpl, CotFieldSet fields,
                    PipelineShape shape, std::string traits) {
        PathwayConfig p;
        p.mode_id = id;
        p.name = std::move(name);
        p.template_id = std::move(tmpl);
        p.cot_fields = fields;
        p.shape = shape;
        p.backend_id = backend_id;
        p.reasoning_characteristics = std::move(traits);
        out.push_back(std::move(p));
    };

    // The four reasoning pathways.
    make(1, "multi_perspective", "direct_multi_perspective", CotFieldSet::standard(),
         PipelineShape::Direct1Stage,
         "Reads the question context from multiple perspectives to avoid single-view bias.");
    make(2, "action_verification", "direct_action_check", CotFieldSet::standard(),
         PipelineShape::Direct1Stage,
         "Checks whether the described action truly occurs in the video, guarding against "
         "hallucinated events.");
    make(3, "temporal_causal", "direct_temporal", CotFieldSet::standard(),
         PipelineShape::Direct1Stage,
         "Models the temporal order and cause-effect relations between events for "
         "fine-grained temporal reasoning.");
    make(4, "question_driven", "direct_question_first", CotFieldSet::standard(),
         PipelineShape::Direct1Stage,
         "Question-driven: interprets the query first, then inspects the video for exactly "
         "the evidence it asks about.");

    // The three supplementary prompt styles P1..P3.
    CotFieldSet summary_answer;
    summary_answer.summary = true;
    make(5, "style_concise", "style_concise", summary_answer, PipelineShape::Direct1Stage,
         "Concise rule-guided style that summarizes the scene before giving a short, direct "
         "answer.");
    make(6, "style_qa_focal", "focal_main", CotFieldSet::standard(),
         PipelineShape::QaFocalPrePass,
         "Two-pass, question-guided: first extracts what to focus on for this question, then "
         "answers using the video plus those focus notes.");
    make(7, "style_qa_focus", "focus_main", CotFieldSet::standard(),
         PipelineShape::QaFocusPrePass,
         "Two-pass, question-blind: first surveys the video without seeing the question, then "
         "answers using its own unbiased notes.");
    return out;
}

std::string render_format_block_keys(const std::vector<std::string>& keys) {
    std::ostringstream out;
    out << "Respond with exactly one JSON object and nothing else.\n";
    out << "Use exactly these keys, in this order: ";
    for (size_t i = 0; i < keys.size(); ++i) {
        if (i) out << ", ";
        out << keys[i];
    }
    out << ".\n";
    nlohmann::ordered_json schema;
    for (const auto& k : keys) {
        if (k == "confidence" || k == "chosen_index") {
            schema[k] = 0.0;
        } else {
            schema[k] = "...";
        }
    }
    out << "Schema: " << schema.dump() << "\n";
    for (const auto& k : keys) {
        if (k == "confidence") {
            out << "confidence is a number between 0 and 1.\n";
        }
    }
    return out.str();
}

std::string render_format_block(const CotFieldSet& fields) {
    return render_format_block_keys(fields.enabled_keys());
}

std::vector<std::string> parse_format_block_keys(const std::string& text) {
    static const std::string marker = "Schema: ";
    size_t pos = text.find(marker);
    if (pos == std::string::npos) return {};
    size_t start = pos + marker.size();
    size_t end = text.find('\n', start);
    std::string line = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    try {
        auto obj = nlohmann::ordered_json::parse(line);
        if (!obj.is_object()) return {};
        std::vector<std::string> keys;
        for (const auto& [k, _] : obj.items()) keys.push_back(k);
        return keys;
    } catch (const nlohmann::json::exception&) {
        return {};
    }
}

std::string render_template(const PromptTemplate& tmpl,
                            const std::map<std::string, std::string>& slots) {
    for (const auto& required : tmpl.required_slots) {
        if (slots.find(required) == slots.end()) {
            throw RenderError("template '" + tmpl.template_id + "': missing required slot '" +
                              required + "'");
        }
    }

    // Single left-to-right pass; substituted values are never re-scanned.
    std::string out;
    out.reserve(tmpl.body.size());
    const std::string& body = tmpl.body;
    for (size_t i = 0; i < body.size();) {
        if (body[i] == '{') {
            size_t j = i + 1;
            while (j < body.size() && (body[j] == '_' || (body[j] >= 'a' && body[j] <= 'z'))) ++j;
            if (j > i + 1 && j < body.size() && body[j] == '}') {
                std::string name = body.substr(i + 1, j - i - 1);
                auto it = slots.find(name);
                if (it == slots.end()) {
                    throw RenderError("template '" + tmpl.template_id +
                                      "': unresolved slot '" + name + "'");
                }
                out += it->second;
                i = j + 1;
                continue;
            }
        }
        out.push_back(body[i]);
        ++i;
    }
    return out;
}

std::string render_prompt(const PathwayConfig& pathway, const QueryInstance& query,
                          const TemplateRegistry& registry,
                          const std::optional<std::string>& focus,
                          const std::string& examples) {
    const PromptTemplate* tmpl = registry.find(pathway.template_id);
    if (!tmpl) {
        throw RenderError("unknown template '" + pathway.template_id + "'");
    }
    std::map<std::string, std::string> slots;
    slots["question"] = query.question;
    slots["examples"] = examples;
    slots["format_block"] = render_format_block(pathway.cot_fields);
    if (focus) slots["focus"] = *focus;
    return render_template(*tmpl, slots);
}

std::vector<CallPlan> plan_calls(const PathwayConfig& pathway, const QueryInstance& query,
                                 const TemplateRegistry& registry) {
    std::vector<CallPlan> plan;
    auto render_prepass = [&](const char* tmpl_id, const std::string& key,
                              bool with_question) {
        const PromptTemplate* tmpl = registry.find(tmpl_id);
        if (!tmpl) throw RenderError(std::string("unknown template '") + tmpl_id + "'");
        std::map<std::string, std::string> slots;
        slots["format_block"] = render_format_block_keys({key});
        if (with_question) slots["question"] = query.question;
        CallPlan pre;
        pre.role = CallRole::Prepass;
        pre.prompt = render_template(*tmpl, slots);
        pre.prepass_key = key;
        plan.push_back(std::move(pre));
    };

    switch (pathway.shape) {
        case PipelineShape::Direct1Stage: {
            CallPlan main;
            main.role = CallRole::Main;
            main.prompt = render_prompt(pathway, query, registry);
            plan.push_back(std::move(main));
            return plan;
        }
        case PipelineShape::TwoStageCaptionThenReason:
            render_prepass("prepass_caption", "caption", /*with_question=*/false);
            break;
        case PipelineShape::QaFocalPrePass:
            render_prepass("prepass_qa_focal", "focus", /*with_question=*/true);
            break;
        case PipelineShape::QaFocusPrePass:
            render_prepass("prepass_qa_focus", "focus", /*with_question=*/false);
            break;
    }
    CallPlan main;
    main.role = CallRole::Main;
    main.prompt = std::nullopt;  // rendered once the pre-pass reply is in
    plan.push_back(std::move(main));
    return plan;
}

}  // namespace vqaens
