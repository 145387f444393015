#include <fstream>
#include <atomic>
#include <thread>

#include "coma/agents.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "httplib.h"
#include "json.hpp"

using namespace coma;
using namespace coma::agents;

TEST_CASE("render_template substitutes placeholders literally") {
    PromptTemplate tpl{"t", "A {x}"};
    CHECK(render_template(tpl, {{"x", "dog"}}) == "A dog");

    PromptTemplate missing{"t2", "hello {input_prompt}"};
    CHECK_THROWS_AS(render_template(missing, {}), Error);

    PromptTemplate braces{"t3", "json: {payload} end"};
    CHECK(render_template(braces, {{"payload", "{\"a\": {1}}"}}) == "json: {\"a\": {1}} end");

    // Literal braces that do not form {identifier} pass through untouched.
    PromptTemplate lit{"t4", "schema { \"k\": 1 } and {x}"};
    CHECK(render_template(lit, {{"x", "v"}}) == "schema { \"k\": 1 } and v");

    // Repeated placeholders are each substituted.
    PromptTemplate twice{"t5", "{a}+{a}"};
    CHECK(render_template(twice, {{"a", "1"}}) == "1+1");
}

TEST_CASE("shipped templates render with their expected bindings") {
    CHECK(get_template("recaption").body.find("<words_list>") != std::string::npos);
    CHECK(get_template("local_edits").body.find("<LOCAL_EDITS_JSON>") != std::string::npos);
    CHECK(get_template("segment").body.find("step1:") != std::string::npos);
    CHECK_THROWS_AS(get_template("nope"), Error);

    std::map<std::string, std::string> bindings = {{"input_prompt", "A person waves"},
                                                   {"words_list", "'a', 'b'"},
                                                   {"original_action", "A person waves"}};
    for (const std::string& id : template_ids()) {
        std::string out = render_template(get_template(id), bindings);
        CHECK(out.find("{input_prompt}") == std::string::npos);
    }
}

TEST_CASE("rewrite extracts the final marker line") {
    auto provider = ScriptedProvider::from_entries(
        {{"recaption",
          "Reasoning 1: thinking.\nOutput: A person walks in a hurry, with arms swinging faster"}});
    RewriteResult r = rewrite("The worried contractor walks in a hurry.", provider, "'walks'");
    CHECK(r.text == "A person walks in a hurry, with arms swinging faster");
    CHECK(!r.warning);

    RewriteResult multi = extract_rewrite(
        "A person does a first thing.\nsome chatter\nfinal: A person does the last thing.");
    CHECK(multi.text == "A person does the last thing.");
    CHECK(!multi.warning);

    RewriteResult fallback = extract_rewrite("the model rambled without the marker");
    CHECK(fallback.warning);
    CHECK(fallback.text == "the model rambled without the marker");

    CHECK_THROWS_AS(extract_rewrite("   \n  "), Error);
}

TEST_CASE("parse_steps reproduces the reference pattern semantics") {
    // Expected outputs frozen from the reference multiline regex
    // (?m)^step\d+:\s*(.*?)(?=(\nstep\d+:)|$) with DOTALL + strip + drop-empty.
    struct Case {
        const char* input;
        std::vector<std::string> steps;
    };
    const std::vector<Case> corpus = {
        {"step1: The man runs.\nstep2: The man kneels.", {"The man runs.", "The man kneels."}},
        {"step1: A\nstepX: B", {"A"}},
        {"step1: A person walks forward\nstep2: A person jumps\nstep3: A person sits down",
         {"A person walks forward", "A person jumps", "A person sits down"}},
        {"intro text\nstep1: first move\noutro text", {"first move"}},
        {"step1:\nstep2: B", {"step2: B"}},
        {"step1:    \t  spaced\nstep2: tabbed", {"spaced", "tabbed"}},
        {"step1: a step2: b", {"a step2: b"}},
        {"step01: leading zero\nstep2: two", {"leading zero", "two"}},
        {"Step1: wrong case\nstep2: ok", {"ok"}},
        {" step1: indented\nstep2: ok", {"ok"}},
        {"step1: multi\nline tail\nstep2: ok", {"multi", "ok"}},
        {"step1: A\n\nstep2: B", {"A", "B"}},
        {"step12: big index", {"big index"}},
        {"step1: trailing spaces   \nstep2: ok", {"trailing spaces", "ok"}},
        {"step: no digits\nstep3: yes", {"yes"}},
        {"step1: first\nstep1: repeated label", {"first", "repeated label"}},
        {"step2: out of order\nstep1: then one", {"out of order", "then one"}},
        {"step1: emoji ✓ unicode\nstep2: düsseldorf",
         {"emoji ✓ unicode", "düsseldorf"}},
        {"step1: \n\n   \nstep2: real content", {"step2: real content"}},
        {"step1: ends with colon:\nstep2: ok", {"ends with colon:", "ok"}},
    };
    for (const auto& c : corpus) {
        CAPTURE(c.input);
        auto items = parse_steps(c.input, "orig");
        REQUIRE(items.size() == c.steps.size());
        for (size_t i = 0; i < items.size(); ++i) {
            CHECK(items[i].prompt == c.steps[i]);
            CHECK(items[i].original_prompt == "orig");
        }
    }
    CHECK_THROWS_AS(parse_steps("no labels at all", "orig"), ParseError);
    CHECK_THROWS_AS(parse_steps("text step1: inline only", "orig"), ParseError);
}

namespace {

const char* kGoodLocalEdits = R"(Here are the edits.
<LOCAL_EDITS_JSON>
[
  {"body part": "left arm", "description": "A person's left arm extends forward"},
  {"body part": "right arm", "description": "none"},
  {"body part": "left leg", "description": "None"},
  {"body part": "right leg", "description": "A person's right leg kicks"}
]
</LOCAL_EDITS_JSON>)";

}  // namespace

TEST_CASE("parse_local_edits accepts the tagged schema and rejects malformed variants") {
    auto edits = parse_local_edits(kGoodLocalEdits);
    CHECK(edits[0].body_part == "left arm");
    REQUIRE(edits[0].description.has_value());
    CHECK(*edits[0].description == "A person's left arm extends forward");
    CHECK(!edits[1].description.has_value());
    CHECK(!edits[2].description.has_value());  // "None" normalizes case-insensitively
    REQUIRE(edits[3].description.has_value());

    const std::vector<std::string> malformed = {
        // no tags at all
        "[{\"body part\": \"left arm\", \"description\": \"x\"}]",
        // missing closing tag
        "<LOCAL_EDITS_JSON>[{\"body part\": \"left arm\", \"description\": \"x\"}]",
        // broken JSON
        "<LOCAL_EDITS_JSON>[{\"body part\": \"left arm\",]</LOCAL_EDITS_JSON>",
        // not an array
        "<LOCAL_EDITS_JSON>{\"body part\": \"left arm\"}</LOCAL_EDITS_JSON>",
        // only three parts
        "<LOCAL_EDITS_JSON>[{\"body part\": \"left arm\", \"description\": \"x\"},"
        "{\"body part\": \"right arm\", \"description\": \"x\"},"
        "{\"body part\": \"left leg\", \"description\": \"x\"}]</LOCAL_EDITS_JSON>",
        // duplicate part
        "<LOCAL_EDITS_JSON>[{\"body part\": \"left arm\", \"description\": \"x\"},"
        "{\"body part\": \"left arm\", \"description\": \"x\"},"
        "{\"body part\": \"left leg\", \"description\": \"x\"},"
        "{\"body part\": \"right leg\", \"description\": \"x\"}]</LOCAL_EDITS_JSON>",
        // unknown part name
        "<LOCAL_EDITS_JSON>[{\"body part\": \"torso\", \"description\": \"x\"},"
        "{\"body part\": \"right arm\", \"description\": \"x\"},"
        "{\"body part\": \"left leg\", \"description\": \"x\"},"
        "{\"body part\": \"right leg\", \"description\": \"x\"}]</LOCAL_EDITS_JSON>",
        // entry without description
        "<LOCAL_EDITS_JSON>[{\"body part\": \"left arm\"},"
        "{\"body part\": \"right arm\", \"description\": \"x\"},"
        "{\"body part\": \"left leg\", \"description\": \"x\"},"
        "{\"body part\": \"right leg\", \"description\": \"x\"}]</LOCAL_EDITS_JSON>",
        // non-object element
        "<LOCAL_EDITS_JSON>[\"left arm\", \"right arm\", \"left leg\", \"right leg\"]"
        "</LOCAL_EDITS_JSON>",
        // empty array
        "<LOCAL_EDITS_JSON>[]</LOCAL_EDITS_JSON>",
    };
    for (const auto& bad : malformed) {
        CAPTURE(bad);
        CHECK_THROWS_AS(parse_local_edits(bad), ParseError);
    }
}

TEST_CASE("parse_bodypart_lines reads the four labeled lines") {
    std::string reply =
        "Sure, here is the breakdown:\n"
        "Right arm: The right arm swings forward.\n"
        "Left arm: The left arm stays at the side.\n"
        "Right leg: The right leg strides.\n"
        "Left leg: The left leg strides.\n"
        "Hope that helps!";
    BodyPartDesc d = parse_bodypart_lines(reply);
    CHECK(d.right_arm == "The right arm swings forward.");
    CHECK(d.left_arm == "The left arm stays at the side.");
    CHECK(d.right_leg == "The right leg strides.");
    CHECK(d.left_leg == "The left leg strides.");
    CHECK(d.warnings.empty());

    std::string dup =
        "Right arm: first\nLeft arm: a\nRight leg: b\nLeft leg: c\nRight arm: second";
    BodyPartDesc d2 = parse_bodypart_lines(dup);
    CHECK(d2.right_arm == "second");  // last wins
    CHECK(d2.warnings.size() == 1);

    CHECK_THROWS_AS(parse_bodypart_lines("Right arm: x\nLeft arm: y\nRight leg: z"), ParseError);
    CHECK_THROWS_AS(parse_bodypart_lines("nothing labeled here"), ParseError);
}

TEST_CASE("parse_correction maps None to the empty instruction") {
    CorrectionInstruction all_none =
        parse_correction("Left arm: None\nRight arm: None\nLower body: None");
    CHECK(all_none.empty());

    CorrectionInstruction lower = parse_correction(
        "Left arm: None\nRight arm: None\nLower body: a person kneels down");
    CHECK(!lower.empty());
    CHECK(!lower.left_arm);
    CHECK(!lower.right_arm);
    REQUIRE(lower.lower_body.has_value());
    CHECK(*lower.lower_body == "a person kneels down");

    // Missing labels default to None as long as one label is present.
    CorrectionInstruction partial = parse_correction("Lower body: \"None\"");
    CHECK(partial.empty());

    CHECK_THROWS_AS(parse_correction("no labels whatsoever"), ParseError);
}

TEST_CASE("scripted provider enforces order and bounded length") {
    auto p = ScriptedProvider::from_entries({{"a", "r1"}, {"b", "r2"}});
    CHECK(p.chat({}, "a") == "r1");
    CHECK_THROWS_AS(p.chat({}, "a"), ProviderError);  // expects template b next
    CHECK(p.chat({}, "b") == "r2");
    CHECK_THROWS_AS(p.chat({}, "b"), ProviderError);  // exhausted

    std::string dir = testutil::temp_dir("agents");
    {
        std::ofstream f(dir + "/t.json");
        f << R"([{"template_id": "x", "reply": "hello"}])";
    }
    auto q = ScriptedProvider::from_file(dir + "/t.json");
    CHECK(q.chat({}, "x") == "hello");
    {
        std::ofstream f(dir + "/bad.json");
        f << R"({"not": "an array"})";
    }
    CHECK_THROWS_AS(ScriptedProvider::from_file(dir + "/bad.json"), FormatError);
}

TEST_CASE("http provider retries transient failures with backoff") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        int n = ++hits;
        auto body = nlohmann::json::parse(req.body);
        CHECK(body["model"] == "test-model");
        CHECK(body["messages"][0]["role"] == "user");
        if (n <= 2) {
            res.status = 500;
            return;
        }
        nlohmann::json reply = {
            {"choices", {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread run([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ProviderConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.model = "test-model";
    cfg.max_retries = 3;
    cfg.timeout_s = 5.0;
    HttpChatProvider provider(cfg);
    std::string reply = provider.chat({{ChatMessage::Role::User, "ping"}}, "tid");
    CHECK(reply == "pong");
    CHECK(hits.load() == 3);  // two failures, then success

    // A provider capped below the failure count surfaces a ProviderError.
    hits = -10;  // next successes far away
    ProviderConfig strict = cfg;
    strict.max_retries = 1;
    HttpChatProvider sp(strict);
    CHECK_THROWS_AS(sp.chat({{ChatMessage::Role::User, "ping"}}, "tid"), ProviderError);

    server.stop();
    run.join();
}

TEST_CASE("review artifact carries joint traces and part colors") {
    motion::MotionSequence m = motion::synthetic_motion(123, 4);
    std::string dir = testutil::temp_dir("review");
    std::string path = dir + "/artifact.json";
    render_for_review(m, path);
    ReviewArtifact a = read_review_artifact(path);
    CHECK(a.fps == doctest::Approx(20.0));
    REQUIRE(a.frames.size() == 4);

    motion::FeatureLayout layout;
    int lw = motion::joint_id("left_wrist");
    CHECK(a.part_color[static_cast<size_t>(lw)] == static_cast<int>(motion::Part::LU));
    CHECK(a.part_color[static_cast<size_t>(motion::joint_id("right_knee"))] ==
          static_cast<int>(motion::Part::RL));

    // Joint positions come from the position block (pelvis from root height).
    for (int t = 0; t < 4; ++t) {
        CHECK(a.frames[static_cast<size_t>(t)][0][1] ==
              doctest::Approx(static_cast<double>(m.frames.at(t, layout.root_height))));
        for (int j = 1; j < 22; ++j)
            for (int c = 0; c < 3; ++c)
                CHECK(a.frames[static_cast<size_t>(t)][static_cast<size_t>(j)][static_cast<size_t>(c)] ==
                      doctest::Approx(static_cast<double>(m.frames.at(t, layout.pos_index(j, c)))));
    }
}
