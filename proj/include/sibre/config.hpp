#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sibre/data.hpp"
#include "sibre/objectives.hpp"

namespace sibre::config {

// Everything a run needs, parsed from a flat key=value file plus command-line
// overrides (flags win). Unknown keys are rejected.
struct RunConfig {
    data::SynthSpec synth;

    int embed_dim = 64;
    int hidden_dim = 64;
    data::Granularity granularity = data::Granularity::sentence;
    bool has_query = false;

    objectives::ObjectiveConfig objective;
    objectives::TrainConfig train;

    std::vector<std::uint64_t> seeds{1};
    std::string out_dir = "out";
    std::string data_dir;
    std::string checkpoint;
    std::vector<double> pi_list{0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50};
    int jobs = 1;
    int sparsity_runs = 100;
    int tfidf_window = 0; // 0 disables TF-IDF span preselection

    void set(const std::string& key, const std::string& value);
    void validate() const;
    std::string snapshot() const; // re-serializes every key

    static RunConfig from_file(const std::string& path);
};

} // namespace sibre::config
