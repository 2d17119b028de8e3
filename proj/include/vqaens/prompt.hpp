#pragma once

// Prompt construction for the ensemble pathways: slot-filled templates,
// structured-output format blocks, and per-shape call planning.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vqaens/core.hpp"

namespace vqaens {

struct RenderError : Error {
    using Error::Error;
};

// Which structured-output sections the model is asked to emit. "answer" is
// always on; the other four are the configurable reasoning scaffold.
struct CotFieldSet {
    bool caption = false;
    bool summary = false;
    bool reason = false;
    bool answer = true;
    bool confidence = false;

    // Enabled keys in canonical order: caption, summary, reason, answer,
    // confidence.
    std::vector<std::string> enabled_keys() const;

    static CotFieldSet answer_only();
    // Shipped default: reason + answer + confidence.
    static CotFieldSet standard();
};

// How many backend calls a pathway makes per query, and what the first call
// does. Direct is a single call; the other three run a pre-pass whose output
// feeds the main call.
enum class PipelineShape {
    Direct1Stage,
    TwoStageCaptionThenReason,
    QaFocalPrePass,  // pre-pass sees question + video
    QaFocusPrePass,  // pre-pass sees video only, never the question
};

std::string_view shape_name(PipelineShape s);
std::optional<PipelineShape> shape_from_name(std::string_view s);

/// Backend calls a shape needs per query (1 or 2).
int calls_per_query(PipelineShape s);

struct PathwayConfig {
    int mode_id = 0;            // unique within one ensemble configuration
    std::string name;
    std::string template_id;    // main-call template
    CotFieldSet cot_fields;
    PipelineShape shape = PipelineShape::Direct1Stage;
    std::string backend_id;
    // Shown to the judge so it knows what this pathway is good at. Non-empty.
    std::string reasoning_characteristics;
};

struct PromptTemplate {
    std::string template_id;
    std::string body;                     // text with {question}, {examples}, {format_block}, {focus}
    std::set<std::string> required_slots; // rendering fails when one is missing
};

class TemplateRegistry {
public:
    // Registry preloaded with the builtin pathway and pre-pass templates.
    static TemplateRegistry builtin();

    void add(PromptTemplate tmpl);
    const PromptTemplate* find(const std::string& template_id) const;
    std::vector<std::string> ids() const;

    // Loads every "<template_id>.txt" in the directory, overriding builtins
    // with the same id. Required slots are inferred from the body ("examples"
    // stays optional).
    void load_directory(const std::filesystem::path& dir);

private:
    std::map<std::string, PromptTemplate> templates_;
};

/// The seven shipped pathway presets: four reasoning pathways (multi
/// perspective, action verification, temporal ordering, question driven)
/// plus the three prompt styles P1..P3, mode_ids 1..7. All presets bind to
/// `backend_id`.
std::vector<PathwayConfig> builtin_pathways(const std::string& backend_id = "default");

/// Instruction block demanding a single JSON object whose keys are exactly
/// the enabled fields, in canonical order. Machine-recoverable: the key list
/// can be read back with parse_format_block_keys.
std::string render_format_block(const CotFieldSet& fields);

/// Format block for an arbitrary key list (used for pre-pass prompts that
/// request a single caption/focus key, and for the judge reply schema).
std::string render_format_block_keys(const std::vector<std::string>& keys);

/// Recovers the key list from text containing a rendered format block
/// (first "Schema:" line wins). Empty when no block is present.
std::vector<std::string> parse_format_block_keys(const std::string& text);

/// Renders the pathway's main prompt for a query. Deterministic; the output
/// contains the question verbatim and the format block, with no unresolved
/// {slot} markers. `focus` fills the {focus} slot of pre-pass-consuming
/// templates; `examples` is optional few-shot text (empty by default).
std::string render_prompt(const PathwayConfig& pathway, const QueryInstance& query,
                          const TemplateRegistry& registry,
                          const std::optional<std::string>& focus = std::nullopt,
                          const std::string& examples = "");

/// Low-level slot substitution: single pass, no nesting; throws RenderError
/// naming the first missing required slot, and rejects leftover markers.
std::string render_template(const PromptTemplate& tmpl,
                            const std::map<std::string, std::string>& slots);

enum class CallRole { Prepass, Main };

struct CallPlan {
    CallRole role = CallRole::Main;
    // Rendered prompt text; empty optional means deferred until the pre-pass
    // reply is available (main call of a two-call shape).
    std::optional<std::string> prompt;
    // Key the pre-pass output is extracted under ("caption" or "focus").
    std::string prepass_key;
};

/// Expands a pathway into its per-query call sequence. Direct shapes yield a
/// single main call; two-call shapes yield a pre-pass (question-blind for
/// QaFocusPrePass and the caption stage) followed by a deferred main call.
std::vector<CallPlan> plan_calls(const PathwayConfig& pathway, const QueryInstance& query,
                                 const TemplateRegistry& registry);

}  // namespace vqaens
