#pragma once

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "coma/motion.hpp"

namespace coma::agents {

struct ChatMessage {
    enum class Role { System, User, Assistant };
    Role role = Role::User;
    std::string content;
};

struct PromptTemplate {
    std::string id;
    std::string body;  // placeholders written as {name}
};

// Registry of the shipped prompt templates (see src/templates.cpp).
const PromptTemplate& get_template(const std::string& id);
std::vector<std::string> template_ids();

// Literal placeholder substitution; throws on placeholders left unbound.
std::string render_template(const PromptTemplate& tpl,
                            const std::map<std::string, std::string>& bindings);

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    // template_id identifies the request so scripted transcripts can be
    // validated against the call order.
    virtual std::string chat(const std::vector<ChatMessage>& messages,
                             const std::string& template_id) = 0;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<double> embed(const std::string& text) = 0;
    virtual int dim() const = 0;
};

// Plays back a JSON transcript: [{"template_id": ..., "reply": ...}, ...].
// Each call must match the next entry's template id.
class ScriptedProvider : public ChatProvider {
public:
    static ScriptedProvider from_file(const std::string& path);
    static ScriptedProvider from_entries(std::vector<std::pair<std::string, std::string>> entries);
    std::string chat(const std::vector<ChatMessage>& messages, const std::string& template_id) override;
    size_t consumed() const { return next_; }
    size_t size() const { return entries_.size(); }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    size_t next_ = 0;
    std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
};

struct ProviderConfig {
    // Exactly one of endpoint/transcript_path may be set.
    std::string endpoint;       // e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string api_key_env = "COMA_API_KEY";
    double timeout_s = 30.0;
    int max_retries = 3;
    std::string transcript_path;

    bool scripted() const { return !transcript_path.empty(); }
};

// Chat-completions style HTTP client with exponential backoff.
class HttpChatProvider : public ChatProvider {
public:
    explicit HttpChatProvider(ProviderConfig cfg);
    std::string chat(const std::vector<ChatMessage>& messages, const std::string& template_id) override;

private:
    ProviderConfig cfg_;
};

std::unique_ptr<ChatProvider> make_provider(const ProviderConfig& cfg);

// Deterministic offline stand-in for a text encoder: hashes the string into a
// seeded unit vector. The empty prompt maps to the zero (null) embedding.
class HashEmbedder : public EmbeddingProvider {
public:
    explicit HashEmbedder(int dim) : dim_(dim) {}
    std::vector<double> embed(const std::string& text) override;
    int dim() const override { return dim_; }

private:
    int dim_;
};

struct RewriteResult {
    std::string text;
    bool warning = false;  // set when the "A person" marker was missing
};

// Runs the recaption template and extracts the final "A person ..." line.
RewriteResult rewrite(const std::string& prompt, ChatProvider& llm, const std::string& words_list);
// Extraction rule alone, for parsing scripted replies.
RewriteResult extract_rewrite(const std::string& reply);

struct StepItem {
    std::string prompt;
    std::string original_prompt;
};

// Multiline "step<digits>:" labels; whitespace after the colon is consumed
// greedily (newlines included), the capture runs to the end of that line,
// empty captures are dropped.
std::vector<StepItem> parse_steps(const std::string& reply, const std::string& original_action);

struct LocalEdit {
    std::string body_part;  // "left arm", "right arm", "left leg", "right leg"
    std::optional<std::string> description;
};

// JSON array between <LOCAL_EDITS_JSON> tags; all four parts exactly once,
// case-insensitive "none" normalized to an absent description.
std::array<LocalEdit, 4> parse_local_edits(const std::string& reply);

struct BodyPartDesc {
    std::string right_arm, left_arm, right_leg, left_leg;
    std::vector<std::string> warnings;
};

BodyPartDesc parse_bodypart_lines(const std::string& reply);

struct CorrectionInstruction {
    std::optional<std::string> left_arm, right_arm, lower_body;
    bool empty() const { return !left_arm && !right_arm && !lower_body; }
};

CorrectionInstruction parse_correction(const std::string& reply);

// Joint-trace review artifact: JSON with fps, per-frame 22x3 joint positions
// and a part color id per joint.
void render_for_review(const motion::MotionSequence& m, const std::string& path);

struct ReviewArtifact {
    double fps = 0.0;
    std::vector<std::array<std::array<double, 3>, 22>> frames;
    std::array<int, 22> part_color{};
};

ReviewArtifact read_review_artifact(const std::string& path);

}  // namespace coma::agents
