#pragma once

#include <string>

#include "coma/agents.hpp"
#include "coma/gen.hpp"
#include "coma/orchestrator.hpp"
#include "coma/rvq.hpp"

namespace coma {

// Flat application configuration mirrored by an INI-style file with
// [paths]/[rvq]/[gen]/[workflow]/[provider]/[metrics] sections. Command-line
// flags override file values.
struct AppConfig {
    std::string out_dir = "out";
    std::string rvq_checkpoint;
    std::string base_checkpoint;
    std::string res_checkpoint;
    std::string words_file;
    std::string data_dir;

    vq::RvqConfig rvq;
    gen::GenConfig gen;
    flow::WorkflowConfig workflow;
    agents::ProviderConfig provider;

    int rprec_pool = 32;
    int mm_repeats = 10;

    static AppConfig from_file(const std::string& path);
    void set(const std::string& section, const std::string& key, const std::string& value);

    // Referenced files must exist; numeric fields must satisfy the module
    // invariants.
    void validate_paths() const;
};

// Vocabulary for the recaption prompt: the configured file when set, else the
// built-in placeholder list. Rendered as a quoted, comma-separated list.
std::string load_words_list(const std::string& words_file);
std::string default_words_list();

}  // namespace coma
