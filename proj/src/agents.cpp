#include "coma/agents.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace coma::agents {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\n\r\f\v");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\n\r\f\v");
    return s.substr(a, b - a + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

}  // namespace

std::string render_template(const PromptTemplate& tpl,
                            const std::map<std::string, std::string>& bindings) {
    std::string out;
    out.reserve(tpl.body.size());
    const std::string& b = tpl.body;
    size_t i = 0;
    while (i < b.size()) {
        if (b[i] != '{') {
            out.push_back(b[i++]);
            continue;
        }
        size_t j = i + 1;
        while (j < b.size() && is_ident_char(b[j])) ++j;
        if (j > i + 1 && j < b.size() && b[j] == '}') {
            std::string name = b.substr(i + 1, j - i - 1);
            auto it = bindings.find(name);
            if (it == bindings.end())
                throw Error("render_template: unbound placeholder {" + name + "} in " + tpl.id);
            out += it->second;  // inserted verbatim, never rescanned
            i = j + 1;
        } else {
            out.push_back(b[i++]);
        }
    }
    return out;
}

ScriptedProvider ScriptedProvider::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open transcript: " + path);
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw FormatError("transcript " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw FormatError("transcript must be a JSON array");
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("template_id") || !item.contains("reply"))
            throw FormatError("transcript entries need template_id and reply");
        entries.emplace_back(item["template_id"].get<std::string>(), item["reply"].get<std::string>());
    }
    return from_entries(std::move(entries));
}

ScriptedProvider ScriptedProvider::from_entries(
    std::vector<std::pair<std::string, std::string>> entries) {
    ScriptedProvider p;
    p.entries_ = std::move(entries);
    return p;
}

std::string ScriptedProvider::chat(const std::vector<ChatMessage>&, const std::string& template_id) {
    std::lock_guard<std::mutex> lock(*mu_);
    if (next_ >= entries_.size())
        throw ProviderError("scripted transcript exhausted (call " + std::to_string(next_ + 1) +
                            " of " + std::to_string(entries_.size()) + ", template " + template_id + ")");
    const auto& e = entries_[next_];
    if (e.first != template_id)
        throw ProviderError("transcript mismatch at entry " + std::to_string(next_) + ": expected " +
                            e.first + ", request was " + template_id);
    ++next_;
    return e.second;
}

HttpChatProvider::HttpChatProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty()) throw Error("HttpChatProvider: endpoint required");
}

std::string HttpChatProvider::chat(const std::vector<ChatMessage>& messages,
                                   const std::string& template_id) {
    size_t scheme = cfg_.endpoint.find("://");
    if (scheme == std::string::npos) throw ProviderError("bad endpoint URL: " + cfg_.endpoint);
    size_t path_pos = cfg_.endpoint.find('/', scheme + 3);
    std::string base = path_pos == std::string::npos ? cfg_.endpoint : cfg_.endpoint.substr(0, path_pos);
    std::string path = path_pos == std::string::npos ? "/" : cfg_.endpoint.substr(path_pos);

    json body;
    body["model"] = cfg_.model;
    body["messages"] = json::array();
    for (const auto& m : messages) {
        const char* role = m.role == ChatMessage::Role::System ? "system"
                           : m.role == ChatMessage::Role::User ? "user"
                                                               : "assistant";
        body["messages"].push_back({{"role", role}, {"content", m.content}});
    }

    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(100 << (attempt - 1)));
        httplib::Client client(base);
        client.set_connection_timeout(std::chrono::duration<double>(cfg_.timeout_s));
        client.set_read_timeout(std::chrono::duration<double>(cfg_.timeout_s));
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "transport error (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        try {
            json reply = json::parse(res->body);
            const auto& choice = reply.at("choices").at(0);
            if (choice.contains("message")) return choice["message"].at("content").get<std::string>();
            return choice.at("text").get<std::string>();
        } catch (const json::exception& e) {
            last_error = std::string("bad response body: ") + e.what();
        }
    }
    throw ProviderError("chat request " + template_id + " failed after " +
                        std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
}

std::unique_ptr<ChatProvider> make_provider(const ProviderConfig& cfg) {
    if (cfg.scripted() == !cfg.endpoint.empty())
        throw Error("provider config: exactly one of endpoint or transcript_path must be set");
    if (cfg.scripted())
        return std::make_unique<ScriptedProvider>(ScriptedProvider::from_file(cfg.transcript_path));
    return std::make_unique<HttpChatProvider>(cfg);
}

std::vector<double> HashEmbedder::embed(const std::string& text) {
    std::vector<double> v(static_cast<size_t>(dim_), 0.0);
    if (text.empty()) return v;  // null embedding
    Rng rng(fnv1a64(text));
    double norm = 0.0;
    for (double& x : v) {
        x = rng.gauss();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : v) x /= norm;
    return v;
}

RewriteResult extract_rewrite(const std::string& reply) {
    if (trim(reply).empty()) throw ProviderError("rewrite: empty reply");
    // Last line containing the "A person" marker wins; the result starts at
    // the marker so prefixes like "Output:" are dropped.
    size_t line_start = 0;
    RewriteResult best;
    bool found = false;
    for (size_t i = 0; i <= reply.size(); ++i) {
        if (i == reply.size() || reply[i] == '\n') {
            std::string line = reply.substr(line_start, i - line_start);
            size_t pos = line.find("A person");
            if (pos != std::string::npos) {
                best.text = trim(line.substr(pos));
                found = true;
            }
            line_start = i + 1;
        }
    }
    if (found) return best;
    return {trim(reply), true};
}

RewriteResult rewrite(const std::string& prompt, ChatProvider& llm, const std::string& words_list) {
    std::string rendered = render_template(get_template("recaption"),
                                           {{"input_prompt", prompt}, {"words_list", words_list}});
    std::string reply = llm.chat({{ChatMessage::Role::User, rendered}}, "recaption");
    return extract_rewrite(reply);
}

std::vector<StepItem> parse_steps(const std::string& reply, const std::string& original_action) {
    // Mirrors the multiline step-label pattern: find "step<digits>:" at line
    // starts, consume whitespace greedily (newlines included), capture to the
    // end of that line, strip, drop empties, resume at the capture end.
    std::vector<StepItem> items;
    size_t i = 0;
    const std::string& s = reply;
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < s.size()) {
        size_t pos = std::string::npos;
        size_t after = 0;
        for (size_t p = i; p < s.size(); ++p) {
            if (p != 0 && s[p - 1] != '\n') continue;
            if (s.compare(p, 4, "step") != 0) continue;
            size_t q = p + 4;
            size_t digits = 0;
            while (q < s.size() && std::isdigit(static_cast<unsigned char>(s[q]))) {
                ++q;
                ++digits;
            }
            if (digits == 0 || q >= s.size() || s[q] != ':') continue;
            pos = p;
            after = q + 1;
            break;
        }
        if (pos == std::string::npos) break;
        size_t k = after;
        while (k < s.size() && is_space(s[k])) ++k;
        size_t e = k;
        while (e < s.size() && s[e] != '\n') ++e;
        std::string cap = trim(s.substr(k, e - k));
        if (!cap.empty()) items.push_back({cap, original_action});
        i = e;  // resumes at the capture end, matching findall
    }
    if (items.empty()) throw ParseError("no step labels parsed from reply");
    return items;
}

std::array<LocalEdit, 4> parse_local_edits(const std::string& reply) {
    const std::string open = "<LOCAL_EDITS_JSON>";
    const std::string close = "</LOCAL_EDITS_JSON>";
    size_t a = reply.find(open);
    if (a == std::string::npos) throw ParseError("missing <LOCAL_EDITS_JSON> tag");
    size_t b = reply.find(close, a + open.size());
    if (b == std::string::npos) throw ParseError("missing </LOCAL_EDITS_JSON> tag");
    std::string inner = reply.substr(a + open.size(), b - a - open.size());
    json doc;
    try {
        doc = json::parse(inner);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed local-edits JSON: ") + e.what());
    }
    if (!doc.is_array()) throw ParseError("local edits must be a JSON array");
    static const std::array<std::string, 4> expected = {"left arm", "right arm", "left leg",
                                                        "right leg"};
    std::array<LocalEdit, 4> out;
    std::array<bool, 4> seen{};
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("body part") || !item.contains("description"))
            throw ParseError("local edit entries need 'body part' and 'description'");
        std::string part = lower(trim(item["body part"].get<std::string>()));
        int slot = -1;
        for (int j = 0; j < 4; ++j)
            if (part == expected[static_cast<size_t>(j)]) slot = j;
        if (slot < 0) throw ParseError("unknown body part '" + part + "'");
        if (seen[static_cast<size_t>(slot)]) throw ParseError("duplicate body part '" + part + "'");
        seen[static_cast<size_t>(slot)] = true;
        std::string desc = trim(item["description"].get<std::string>());
        out[static_cast<size_t>(slot)].body_part = expected[static_cast<size_t>(slot)];
        if (!desc.empty() && lower(desc) != "none") out[static_cast<size_t>(slot)].description = desc;
    }
    for (int j = 0; j < 4; ++j)
        if (!seen[static_cast<size_t>(j)])
            throw ParseError("missing body part '" + expected[static_cast<size_t>(j)] + "'");
    return out;
}

namespace {

// Scans lines for "<label>:" prefixes (leading whitespace ignored); returns
// the trailing text. Later duplicates overwrite and are reported.
std::optional<std::string> find_labeled(const std::string& reply, const std::string& label,
                                        std::vector<std::string>* warnings) {
    std::optional<std::string> value;
    size_t start = 0;
    std::string want = lower(label);
    for (size_t i = 0; i <= reply.size(); ++i) {
        if (i != reply.size() && reply[i] != '\n') continue;
        std::string line = trim(reply.substr(start, i - start));
        start = i + 1;
        if (line.size() < want.size() + 1) continue;
        if (lower(line.substr(0, want.size())) != want || line[want.size()] != ':') continue;
        if (value && warnings)
            warnings->push_back("duplicate '" + label + ":' line, last one wins");
        value = trim(line.substr(want.size() + 1));
    }
    return value;
}

}  // namespace

BodyPartDesc parse_bodypart_lines(const std::string& reply) {
    BodyPartDesc d;
    struct Slot {
        const char* label;
        std::string* out;
    };
    Slot slots[] = {{"Right arm", &d.right_arm},
                    {"Left arm", &d.left_arm},
                    {"Right leg", &d.right_leg},
                    {"Left leg", &d.left_leg}};
    for (auto& s : slots) {
        auto v = find_labeled(reply, s.label, &d.warnings);
        if (!v) throw ParseError(std::string("missing '") + s.label + ":' line");
        *s.out = *v;
    }
    return d;
}

CorrectionInstruction parse_correction(const std::string& reply) {
    CorrectionInstruction c;
    auto norm = [](std::optional<std::string> v) -> std::optional<std::string> {
        if (!v) return std::nullopt;
        std::string t = trim(*v);
        if (t.empty() || lower(t) == "none" || lower(t) == "\"none\"") return std::nullopt;
        return t;
    };
    auto la = find_labeled(reply, "Left arm", nullptr);
    auto ra = find_labeled(reply, "Right arm", nullptr);
    auto lb = find_labeled(reply, "Lower body", nullptr);
    if (!la && !ra && !lb) throw ParseError("no correction labels found");
    c.left_arm = norm(la);
    c.right_arm = norm(ra);
    c.lower_body = norm(lb);
    return c;
}

void render_for_review(const motion::MotionSequence& m, const std::string& path) {
    motion::FeatureLayout layout;
    motion::PartitionScheme scheme = motion::four_part_partition(layout);
    json doc;
    doc["fps"] = m.fps;
    json colors = json::array();
    for (int j = 0; j < layout.joint_count; ++j) {
        int color = 0;
        for (int p = 0; p < motion::kNumParts; ++p) {
            const auto& names = scheme.joints_per_part[static_cast<size_t>(p)];
            if (std::find(names.begin(), names.end(), motion::joint_names()[static_cast<size_t>(j)]) !=
                names.end()) {
                color = p;
                break;
            }
        }
        colors.push_back(color);
    }
    doc["part_colors"] = colors;
    json frames = json::array();
    for (int t = 0; t < m.T(); ++t) {
        json frame = json::array();
        // Pelvis from the root height channel; the other joints from the
        // local position block.
        frame.push_back({0.0, m.frames.at(t, layout.root_height), 0.0});
        for (int j = 1; j < layout.joint_count; ++j)
            frame.push_back({m.frames.at(t, layout.pos_index(j, 0)),
                             m.frames.at(t, layout.pos_index(j, 1)),
                             m.frames.at(t, layout.pos_index(j, 2))});
        frames.push_back(frame);
    }
    doc["frames"] = frames;
    std::ofstream f(path);
    if (!f) throw IoError("cannot write review artifact: " + path);
    f << doc.dump(1);
    if (!f) throw IoError("write failed: " + path);
}

ReviewArtifact read_review_artifact(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open review artifact: " + path);
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw FormatError(std::string("review artifact: ") + e.what());
    }
    ReviewArtifact a;
    a.fps = doc.at("fps").get<double>();
    const auto& colors = doc.at("part_colors");
    for (size_t j = 0; j < 22; ++j) a.part_color[j] = colors.at(j).get<int>();
    for (const auto& frame : doc.at("frames")) {
        std::array<std::array<double, 3>, 22> joints{};
        for (size_t j = 0; j < 22; ++j)
            for (size_t c = 0; c < 3; ++c) joints[j][c] = frame.at(j).at(c).get<double>();
        a.frames.push_back(joints);
    }
    return a;
}

}  // namespace coma::agents
