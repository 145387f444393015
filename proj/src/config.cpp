#include "coma/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace coma {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_num(const std::string& v, const std::string& key) {
    try {
        return std::stod(v);
    } catch (...) {
        throw FormatError("config: bad numeric value for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw FormatError("config: bad boolean value for " + key + ": '" + v + "'");
}

// Visible portion of the recaption vocabulary plus common motion words; a
// stand-in list, not authoritative, and replaceable via [paths] words_file.
const char* kDefaultWords[] = {
    "the", "to", "a", "then", "their", "right", "his", "forward", "with", "walks", "left", "in",
    "is", "up", "arms", "back", "down", "on", "something", "steps", "walking", "side", "arm",
    "both", "around", "it", "of", "while", "marches", "pretends", "stirring", "mixing", "washes",
    "pulling", "also", "style", "shrugs", "wipe", "hed", "forearms", "limping", "person", "man",
    "woman", "runs", "running", "jumps", "jumping", "kneels", "kneeling", "slides", "sliding",
    "extends", "extended", "raises", "raised", "lowers", "swinging", "faster", "quickened",
    "slight", "lean", "leaning", "quickly", "slowly", "sits", "sitting", "stands", "standing",
    "turns", "turning", "spins", "spinning", "crawls", "crawling", "kicks", "kicking", "squats",
    "squatting", "hops", "hopping", "waves", "waving", "straight", "line", "circle", "knees",
    "hands", "legs", "leg", "body", "head", "chest", "floor", "ground", "over", "long", "distance",
};

}  // namespace

std::string default_words_list() {
    std::string out;
    for (size_t i = 0; i < sizeof(kDefaultWords) / sizeof(kDefaultWords[0]); ++i) {
        if (i) out += ", ";
        out += "'" + std::string(kDefaultWords[i]) + "'";
    }
    return out;
}

std::string load_words_list(const std::string& words_file) {
    if (words_file.empty()) return default_words_list();
    std::ifstream f(words_file);
    if (!f) throw IoError("cannot open words file: " + words_file);
    std::string out, word;
    while (std::getline(f, word)) {
        word = trim(word);
        if (word.empty()) continue;
        if (!out.empty()) out += ", ";
        out += "'" + word + "'";
    }
    if (out.empty()) throw FormatError("words file is empty: " + words_file);
    return out;
}

void AppConfig::set(const std::string& section, const std::string& key, const std::string& value) {
    auto is = [&](const char* s, const char* k) { return section == s && key == k; };
    if (is("paths", "out_dir")) out_dir = value;
    else if (is("paths", "rvq_checkpoint")) rvq_checkpoint = value;
    else if (is("paths", "base_checkpoint")) base_checkpoint = value;
    else if (is("paths", "res_checkpoint")) res_checkpoint = value;
    else if (is("paths", "words_file")) words_file = value;
    else if (is("paths", "data_dir")) data_dir = value;
    else if (is("rvq", "num_layers")) rvq.num_layers = static_cast<int>(to_num(value, key));
    else if (is("rvq", "codes")) rvq.codes = static_cast<int>(to_num(value, key));
    else if (is("rvq", "code_dim")) rvq.code_dim = static_cast<int>(to_num(value, key));
    else if (is("rvq", "channels")) rvq.channels = static_cast<int>(to_num(value, key));
    else if (is("rvq", "quant_dropout")) rvq.quant_dropout = to_num(value, key);
    else if (is("rvq", "beta")) rvq.beta = to_num(value, key);
    else if (is("rvq", "ema_decay")) rvq.ema_decay = to_num(value, key);
    else if (is("rvq", "reset_threshold")) rvq.reset_threshold = to_num(value, key);
    else if (is("gen", "layers")) gen.layers = static_cast<int>(to_num(value, key));
    else if (is("gen", "heads")) gen.heads = static_cast<int>(to_num(value, key));
    else if (is("gen", "model_dim")) gen.model_dim = static_cast<int>(to_num(value, key));
    else if (is("gen", "steps")) gen.steps = static_cast<int>(to_num(value, key));
    else if (is("gen", "cfg_base")) gen.cfg_base = to_num(value, key);
    else if (is("gen", "cfg_res")) gen.cfg_res = to_num(value, key);
    else if (is("gen", "text_dim")) gen.text_dim = static_cast<int>(to_num(value, key));
    else if (is("gen", "n_max")) gen.n_max = static_cast<int>(to_num(value, key));
    else if (is("gen", "uncond_prob")) gen.uncond_prob = to_num(value, key);
    else if (is("workflow", "max_rounds")) workflow.max_rounds = static_cast<int>(to_num(value, key));
    else if (is("workflow", "fps")) workflow.fps = to_num(value, key);
    else if (is("workflow", "enable_trajectory")) workflow.enable_trajectory = to_bool(value, key);
    else if (is("workflow", "blend_trans")) workflow.blend_trans = static_cast<int>(to_num(value, key));
    else if (is("workflow", "blend_ctx")) workflow.blend_ctx = static_cast<int>(to_num(value, key));
    else if (is("workflow", "rho")) workflow.rho = to_num(value, key);
    else if (is("workflow", "seed")) workflow.seed = static_cast<uint64_t>(to_num(value, key));
    else if (is("workflow", "frame_cap")) workflow.frame_cap = static_cast<int>(to_num(value, key));
    else if (is("provider", "endpoint")) provider.endpoint = value;
    else if (is("provider", "model")) provider.model = value;
    else if (is("provider", "api_key_env")) provider.api_key_env = value;
    else if (is("provider", "timeout_s")) provider.timeout_s = to_num(value, key);
    else if (is("provider", "max_retries")) provider.max_retries = static_cast<int>(to_num(value, key));
    else if (is("provider", "transcript")) provider.transcript_path = value;
    else if (is("metrics", "rprec_pool")) rprec_pool = static_cast<int>(to_num(value, key));
    else if (is("metrics", "mm_repeats")) mm_repeats = static_cast<int>(to_num(value, key));
    else throw FormatError("config: unknown key [" + section + "] " + key);
}

AppConfig AppConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    AppConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw FormatError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(s.substr(1, s.size() - 2));
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
        cfg.set(section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    cfg.workflow.words_list = load_words_list(cfg.words_file);
    return cfg;
}

void AppConfig::validate_paths() const {
    for (const std::string* p : {&rvq_checkpoint, &base_checkpoint, &res_checkpoint, &words_file}) {
        if (!p->empty() && !std::filesystem::exists(*p))
            throw IoError("configured file does not exist: " + *p);
    }
    if (!provider.transcript_path.empty() && !std::filesystem::exists(provider.transcript_path))
        throw IoError("configured transcript does not exist: " + provider.transcript_path);
    rvq.validate();
    gen.validate();
}

}  // namespace coma
