#include "sibre/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "sibre/errors.hpp"

namespace sibre::config {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        fail(ErrorCode::config, "key '" + key + "': expected integer, got '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        fail(ErrorCode::config, "key '" + key + "': expected number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    fail(ErrorCode::config, "key '" + key + "': expected boolean, got '" + value + "'");
}

} // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "task") synth.task = data::synth_task_from_name(value);
    else if (key == "n_sentences") synth.n_sentences = parse_int(key, value);
    else if (key == "sentence_len") synth.sentence_len = parse_int(key, value);
    else if (key == "signal_fraction") synth.signal_fraction = parse_double(key, value);
    else if (key == "vocab_size") synth.vocab_size = parse_int(key, value);
    else if (key == "num_classes") synth.num_classes = parse_int(key, value);
    else if (key == "distractor_rate") synth.distractor_rate = parse_double(key, value);
    else if (key == "num_train") synth.num_train = parse_int(key, value);
    else if (key == "num_val") synth.num_val = parse_int(key, value);
    else if (key == "num_test") synth.num_test = parse_int(key, value);
    else if (key == "data_seed") synth.seed = static_cast<std::uint64_t>(parse_int(key, value));

    else if (key == "embed_dim") embed_dim = parse_int(key, value);
    else if (key == "hidden_dim") hidden_dim = parse_int(key, value);
    else if (key == "granularity") granularity = data::granularity_from_name(value);
    else if (key == "has_query") has_query = parse_bool(key, value);

    else if (key == "objective") objective.kind = objectives::kind_from_name(value);
    else if (key == "pi") objective.pi = parse_double(key, value);
    else if (key == "beta") objective.beta = parse_double(key, value);
    else if (key == "lambda") objective.lambda = parse_double(key, value);
    else if (key == "gamma") objective.gamma = parse_double(key, value);
    else if (key == "tau") objective.tau = parse_double(key, value);
    else if (key == "entropy_lambda") objective.entropy_lambda = parse_double(key, value);
    else if (key == "learnable_pi") objective.learnable_pi = parse_bool(key, value);
    else if (key == "semi_loss") {
        if (value == "full_bce") objective.semi_loss = objectives::SemiLossMode::full_bce;
        else if (value == "paper_positive_only")
            objective.semi_loss = objectives::SemiLossMode::paper_positive_only;
        else fail(ErrorCode::config, "key 'semi_loss': unknown mode '" + value + "'");
    }
    else if (key == "supervision_fraction") objective.supervision_fraction = parse_double(key, value);
    else if (key == "distribution") objective.distribution = model::mask_distribution_from_name(value);
    else if (key == "noise") {
        if (value == "logistic") objective.noise = dist::NoiseMode::logistic;
        else if (value == "paper_gumbel") objective.noise = dist::NoiseMode::paper_gumbel;
        else fail(ErrorCode::config, "key 'noise': unknown mode '" + value + "'");
    }
    else if (key == "stretch_l0") objective.stretch.l0 = parse_double(key, value);
    else if (key == "stretch_l1") objective.stretch.l1 = parse_double(key, value);
    else if (key == "kl_series_terms") objective.kl_series_terms = parse_int(key, value);

    else if (key == "lr") train.lr = parse_double(key, value);
    else if (key == "batch_size") train.batch_size = parse_int(key, value);
    else if (key == "epochs") train.epochs = parse_int(key, value);
    else if (key == "patience") train.patience = parse_int(key, value);

    else if (key == "seeds") {
        seeds.clear();
        for (const auto& s : split_commas(value))
            seeds.push_back(static_cast<std::uint64_t>(parse_int(key, s)));
        if (seeds.empty()) fail(ErrorCode::config, "key 'seeds': need at least one seed");
    }
    else if (key == "out_dir") out_dir = value;
    else if (key == "data") data_dir = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "pi_list") {
        pi_list.clear();
        for (const auto& s : split_commas(value)) pi_list.push_back(parse_double(key, s));
        if (pi_list.empty()) fail(ErrorCode::config, "key 'pi_list': need at least one value");
    }
    else if (key == "jobs") jobs = parse_int(key, value);
    else if (key == "sparsity_runs") sparsity_runs = parse_int(key, value);
    else if (key == "tfidf_window") tfidf_window = parse_int(key, value);

    else fail(ErrorCode::config, "unknown config key '" + key + "'");
}

void RunConfig::validate() const {
    synth.validate();
    objective.validate();
    if (embed_dim < 1 || hidden_dim < 1) fail(ErrorCode::config, "model dims must be positive");
    if (train.batch_size < 1) fail(ErrorCode::config, "batch_size must be >= 1");
    if (train.epochs < 1) fail(ErrorCode::config, "epochs must be >= 1");
    if (train.patience < 1) fail(ErrorCode::config, "patience must be >= 1");
    if (!(train.lr > 0.0)) fail(ErrorCode::config, "lr must be positive");
    if (seeds.empty()) fail(ErrorCode::config, "need at least one seed");
    for (double p : pi_list)
        if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::config, "pi_list entries must lie in (0,1)");
    if (jobs < 1) fail(ErrorCode::config, "jobs must be >= 1");
    if (sparsity_runs < 1) fail(ErrorCode::config, "sparsity_runs must be >= 1");
    if (tfidf_window < 0) fail(ErrorCode::config, "tfidf_window must be >= 0");
}

std::string RunConfig::snapshot() const {
    std::ostringstream os;
    auto num = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    os << "task = " << data::synth_task_name(synth.task) << "\n";
    os << "n_sentences = " << synth.n_sentences << "\n";
    os << "sentence_len = " << synth.sentence_len << "\n";
    os << "signal_fraction = " << num(synth.signal_fraction) << "\n";
    os << "vocab_size = " << synth.vocab_size << "\n";
    os << "num_classes = " << synth.num_classes << "\n";
    os << "distractor_rate = " << num(synth.distractor_rate) << "\n";
    os << "num_train = " << synth.num_train << "\n";
    os << "num_val = " << synth.num_val << "\n";
    os << "num_test = " << synth.num_test << "\n";
    os << "data_seed = " << synth.seed << "\n";
    os << "embed_dim = " << embed_dim << "\n";
    os << "hidden_dim = " << hidden_dim << "\n";
    os << "granularity = " << data::granularity_name(granularity) << "\n";
    os << "has_query = " << (has_query ? "true" : "false") << "\n";
    os << "objective = " << objectives::kind_name(objective.kind) << "\n";
    os << "pi = " << num(objective.pi) << "\n";
    os << "beta = " << num(objective.beta) << "\n";
    os << "lambda = " << num(objective.lambda) << "\n";
    os << "gamma = " << num(objective.gamma) << "\n";
    os << "tau = " << num(objective.tau) << "\n";
    os << "entropy_lambda = " << num(objective.entropy_lambda) << "\n";
    os << "learnable_pi = " << (objective.learnable_pi ? "true" : "false") << "\n";
    os << "semi_loss = "
       << (objective.semi_loss == objectives::SemiLossMode::full_bce ? "full_bce"
                                                                     : "paper_positive_only")
       << "\n";
    os << "supervision_fraction = " << num(objective.supervision_fraction) << "\n";
    os << "distribution = " << model::mask_distribution_name(objective.distribution) << "\n";
    os << "noise = "
       << (objective.noise == dist::NoiseMode::logistic ? "logistic" : "paper_gumbel") << "\n";
    os << "stretch_l0 = " << num(objective.stretch.l0) << "\n";
    os << "stretch_l1 = " << num(objective.stretch.l1) << "\n";
    os << "kl_series_terms = " << objective.kl_series_terms << "\n";
    os << "lr = " << num(train.lr) << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "epochs = " << train.epochs << "\n";
    os << "patience = " << train.patience << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
    os << "\n";
    os << "out_dir = " << out_dir << "\n";
    os << "data = " << data_dir << "\n";
    os << "checkpoint = " << checkpoint << "\n";
    os << "pi_list = ";
    for (std::size_t i = 0; i < pi_list.size(); ++i) os << (i ? "," : "") << num(pi_list[i]);
    os << "\n";
    os << "jobs = " << jobs << "\n";
    os << "sparsity_runs = " << sparsity_runs << "\n";
    os << "tfidf_window = " << tfidf_window << "\n";
    return os.str();
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read config file " + path);
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            fail(ErrorCode::config, path + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        try {
            cfg.set(key, value);
        } catch (const Error& e) {
            fail(e.code(), path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

} // namespace sibre::config
