#include "sibre/cli.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "sibre/errors.hpp"
#include "sibre/gradcheck.hpp"
#include "sibre/metrics.hpp"
#include "sibre/objectives.hpp"

namespace sibre::cli {

namespace fs = std::filesystem;

namespace {

void write_snapshot(const config::RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(cfg.out_dir + "/config_snapshot.txt");
    if (!out) fail(ErrorCode::io, "cannot write config snapshot under " + cfg.out_dir);
    out << cfg.snapshot();
}

struct Dataset {
    std::vector<data::Document> train, val, test;
    data::Vocab vocab;
    data::LabelMap labels;
    bool regression = false;
};

void apply_tfidf(std::vector<data::Document>& docs, int window) {
    for (auto& doc : docs) {
        if (!doc.query || doc.query->empty()) continue;
        const auto [start, len] = data::tfidf_span_select(doc, *doc.query, window);
        doc = data::crop_to_span(doc, start, len);
    }
}

Dataset load_dataset(const config::RunConfig& cfg) {
    if (cfg.data_dir.empty()) fail(ErrorCode::config, "missing dataset: pass --data DIR");
    const std::string dir = cfg.data_dir;
    for (const char* name : {"train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt"})
        if (!fs::exists(dir + "/" + name))
            fail(ErrorCode::io, "missing dataset file " + dir + "/" + name);
    Dataset ds;
    ds.train = data::load_jsonl(dir + "/train.jsonl");
    ds.val = data::load_jsonl(dir + "/val.jsonl");
    ds.test = data::load_jsonl(dir + "/test.jsonl");
    if (ds.train.empty()) fail(ErrorCode::data, "empty training split in " + dir);
    if (cfg.tfidf_window > 0) {
        apply_tfidf(ds.train, cfg.tfidf_window);
        apply_tfidf(ds.val, cfg.tfidf_window);
        apply_tfidf(ds.test, cfg.tfidf_window);
    }
    ds.vocab = data::Vocab::load(dir + "/vocab.txt");
    ds.regression = ds.train[0].regression;
    if (!ds.regression) {
        const std::string labels_path = dir + "/labels.txt";
        ds.labels = fs::exists(labels_path) ? data::LabelMap::load(labels_path)
                                            : data::LabelMap::build(ds.train);
    }
    return ds;
}

Dataset synthesize_dataset(const config::RunConfig& cfg) {
    Dataset ds;
    data::Splits splits = data::generate(cfg.synth);
    ds.train = std::move(splits.train);
    ds.val = std::move(splits.val);
    ds.test = std::move(splits.test);
    ds.vocab = data::Vocab::build(ds.train);
    ds.regression = cfg.synth.task == data::SynthTask::regression;
    if (!ds.regression) ds.labels = data::LabelMap::build(ds.train);
    return ds;
}

model::ModelConfig model_config_for(const config::RunConfig& cfg, const Dataset& ds) {
    model::ModelConfig mcfg;
    mcfg.vocab_size = static_cast<int>(ds.vocab.size());
    mcfg.embed_dim = cfg.embed_dim;
    mcfg.hidden_dim = cfg.hidden_dim;
    mcfg.granularity = cfg.granularity;
    mcfg.regression = ds.regression;
    mcfg.num_classes = ds.regression ? 2 : ds.labels.size();
    mcfg.has_query = cfg.has_query;
    return mcfg;
}

std::string checkpoint_path_for(const config::RunConfig& cfg, std::uint64_t seed) {
    std::string path = cfg.checkpoint;
    if (path.empty()) fail(ErrorCode::config, "missing checkpoint: pass --checkpoint PATH");
    const auto marker = path.find("{seed}");
    if (marker != std::string::npos)
        return path.substr(0, marker) + std::to_string(seed) + path.substr(marker + 6);
    if (fs::is_directory(path)) return path + "/ckpt_seed" + std::to_string(seed) + ".txt";
    return path;
}

metrics::MetricsReport eval_checkpoint(const config::RunConfig& cfg, const Dataset& ds,
                                       const std::string& ckpt_path, std::uint64_t seed) {
    if (!fs::exists(ckpt_path)) fail(ErrorCode::io, "missing checkpoint " + ckpt_path);
    model::Checkpoint ckpt = model::load_checkpoint(ckpt_path);
    const auto eval = metrics::evaluate_model(ckpt.model, ds.test, ds.vocab, ds.labels,
                                              cfg.objective.pi, cfg.train.eval_batch_size);
    Rng rng(seed, "eval-sparsity");
    const auto stats = metrics::sparsity_stats(ckpt.model, ds.test, ds.vocab, ds.labels,
                                               cfg.objective.mask_settings(), cfg.sparsity_runs,
                                               rng, cfg.train.eval_batch_size);
    metrics::MetricsReport rep;
    rep.task_metric = eval.task_metric;
    rep.iou_f1 = eval.iou_f1;
    rep.token_precision = eval.token_precision;
    rep.token_recall = eval.token_recall;
    rep.token_f1 = eval.token_f1;
    rep.sparsity_mean = stats.mean;
    rep.sparsity_var = stats.var;
    return rep;
}

// Fixed-order parallel map over cells; each cell is internally
// single-threaded and fully determined by its inputs.
template <typename Work>
void parallel_cells(int n_cells, int jobs, Work work) {
    if (jobs <= 1 || n_cells <= 1) {
        for (int i = 0; i < n_cells; ++i) work(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int n_threads = std::min(jobs, n_cells);
    std::exception_ptr first_error = nullptr;
    std::mutex error_mu;
    for (int t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n_cells; i = next.fetch_add(1)) {
                try {
                    work(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string format_csv_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.8g", v);
    return buf;
}

} // namespace

void cmd_generate(const config::RunConfig& cfg) {
    cfg.validate();
    write_snapshot(cfg);
    data::Splits splits = data::generate(cfg.synth);
    data::save_jsonl(cfg.out_dir + "/train.jsonl", splits.train);
    data::save_jsonl(cfg.out_dir + "/val.jsonl", splits.val);
    data::save_jsonl(cfg.out_dir + "/test.jsonl", splits.test);
    data::Vocab::build(splits.train).save(cfg.out_dir + "/vocab.txt");
    if (cfg.synth.task != data::SynthTask::regression)
        data::LabelMap::build(splits.train).save(cfg.out_dir + "/labels.txt");
    std::cout << "generated " << splits.train.size() << "/" << splits.val.size() << "/"
              << splits.test.size() << " documents under " << cfg.out_dir << "\n";
}

void cmd_train(const config::RunConfig& cfg) {
    cfg.validate();
    write_snapshot(cfg);
    const Dataset ds = load_dataset(cfg);
    const model::ModelConfig mcfg = model_config_for(cfg, ds);
    for (const std::uint64_t seed : cfg.seeds) {
        model::Model net(mcfg, seed);
        const auto result = objectives::train(net, ds.train, ds.val, ds.vocab, ds.labels,
                                              cfg.objective, cfg.train, seed);
        const std::string ckpt = cfg.out_dir + "/ckpt_seed" + std::to_string(seed) + ".txt";
        model::save_checkpoint(ckpt, net, result.extras);
        objectives::write_epoch_log(cfg.out_dir + "/epochs_seed" + std::to_string(seed) + ".log",
                                    result.log);
        std::cout << "seed " << seed << ": best epoch " << result.best_epoch << ", val IOU F1 "
                  << result.best_val_iou;
        if (result.learned_pi) std::cout << ", learned pi " << *result.learned_pi;
        std::cout << ", checkpoint " << ckpt << "\n";
    }
}

void cmd_eval(const config::RunConfig& cfg) {
    cfg.validate();
    write_snapshot(cfg);
    const Dataset ds = load_dataset(cfg);

    std::vector<metrics::MetricsReport> reports;
    for (const std::uint64_t seed : cfg.seeds)
        reports.push_back(eval_checkpoint(cfg, ds, checkpoint_path_for(cfg, seed), seed));

    auto fields = [](const metrics::MetricsReport& r) {
        return std::vector<double>{r.task_metric, r.iou_f1,        r.token_precision,
                                   r.token_recall, r.token_f1,     r.sparsity_mean,
                                   r.sparsity_var};
    };
    std::vector<double> mean(7, 0.0), stdev(7, 0.0);
    for (const auto& r : reports) {
        const auto f = fields(r);
        for (int i = 0; i < 7; ++i) mean[static_cast<std::size_t>(i)] += f[static_cast<std::size_t>(i)];
    }
    for (auto& v : mean) v /= reports.size();
    for (const auto& r : reports) {
        const auto f = fields(r);
        for (int i = 0; i < 7; ++i) {
            const double d = f[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)];
            stdev[static_cast<std::size_t>(i)] += d * d;
        }
    }
    for (auto& v : stdev) v = std::sqrt(v / reports.size());

    auto as_report = [](const std::vector<double>& f) {
        metrics::MetricsReport r;
        r.task_metric = f[0];
        r.iou_f1 = f[1];
        r.token_precision = f[2];
        r.token_recall = f[3];
        r.token_f1 = f[4];
        r.sparsity_mean = f[5];
        r.sparsity_var = f[6];
        return r;
    };

    nlohmann::ordered_json out;
    out["seeds"] = cfg.seeds;
    out["per_seed"] = nlohmann::json::array();
    for (const auto& r : reports)
        out["per_seed"].push_back(nlohmann::ordered_json::parse(r.to_json()));
    out["mean"] = nlohmann::ordered_json::parse(as_report(mean).to_json());
    out["std"] = nlohmann::ordered_json::parse(as_report(stdev).to_json());

    const std::string path = cfg.out_dir + "/metrics.json";
    std::ofstream f(path);
    if (!f) fail(ErrorCode::io, "cannot write " + path);
    f << out.dump(2) << "\n";
    std::cout << "mean: " << as_report(mean).to_json() << "\n";
    std::cout << "std:  " << as_report(stdev).to_json() << "\n";
    std::cout << "wrote " << path << "\n";
}

void cmd_sweep(const config::RunConfig& cfg) {
    cfg.validate();
    write_snapshot(cfg);
    const Dataset ds = cfg.data_dir.empty() ? synthesize_dataset(cfg) : load_dataset(cfg);
    const model::ModelConfig mcfg = model_config_for(cfg, ds);

    struct Cell {
        double pi;
        std::uint64_t seed;
        metrics::MetricsReport report;
    };
    std::vector<Cell> cells;
    for (const double pi : cfg.pi_list)
        for (const std::uint64_t seed : cfg.seeds) cells.push_back({pi, seed, {}});

    parallel_cells(static_cast<int>(cells.size()), cfg.jobs, [&](int i) {
        Cell& cell = cells[static_cast<std::size_t>(i)];
        config::RunConfig cell_cfg = cfg;
        cell_cfg.objective.pi = cell.pi;
        model::Model net(mcfg, cell.seed);
        objectives::train(net, ds.train, ds.val, ds.vocab, ds.labels, cell_cfg.objective,
                          cell_cfg.train, cell.seed);
        const auto eval = metrics::evaluate_model(net, ds.test, ds.vocab, ds.labels, cell.pi,
                                                  cfg.train.eval_batch_size);
        Rng rng(cell.seed, "eval-sparsity");
        const auto stats = metrics::sparsity_stats(net, ds.test, ds.vocab, ds.labels,
                                                   cell_cfg.objective.mask_settings(),
                                                   cfg.sparsity_runs, rng,
                                                   cfg.train.eval_batch_size);
        cell.report.task_metric = eval.task_metric;
        cell.report.iou_f1 = eval.iou_f1;
        cell.report.token_f1 = eval.token_f1;
        cell.report.sparsity_mean = stats.mean;
        cell.report.sparsity_var = stats.var;
    });

    const std::string path = cfg.out_dir + "/sweep.csv";
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write " + path);
    out << "pi,seed,task_metric,iou_f1,token_f1,sparsity_mean,sparsity_var\n";
    for (const auto& cell : cells)
        out << format_csv_number(cell.pi) << "," << cell.seed << ","
            << format_csv_number(cell.report.task_metric) << ","
            << format_csv_number(cell.report.iou_f1) << ","
            << format_csv_number(cell.report.token_f1) << ","
            << format_csv_number(cell.report.sparsity_mean) << ","
            << format_csv_number(cell.report.sparsity_var) << "\n";
    std::cout << "wrote " << cells.size() << " rows to " << path << "\n";
}

void cmd_verify_ib(const config::RunConfig& cfg) {
    cfg.validate();
    write_snapshot(cfg);

    metrics::ToyJoint base;
    base.px = {0.5, 0.5};
    base.theta = {0.3, 0.3};
    base.prior_pi = 0.3;
    const auto base_report = metrics::ib_verify(base);
    std::cout << "default toy: mi=" << base_report.mi << " bound=" << base_report.bound
              << " residual=" << base_report.residual << "\n";

    Rng rng(cfg.seeds[0], "ib-verify");
    double min_margin = 1e300, max_residual = 0.0, max_tight_gap = 0.0;
    const int n_random = 1000;
    for (int i = 0; i < n_random; ++i) {
        metrics::ToyJoint joint;
        const int k = 2 + static_cast<int>(rng.next_below(7));
        double total = 0.0;
        for (int s = 0; s < k; ++s) {
            joint.px.push_back(0.05 + rng.uniform());
            total += joint.px.back();
        }
        for (auto& p : joint.px) p /= total;
        for (int s = 0; s < k; ++s) joint.theta.push_back(0.05 + 0.9 * rng.uniform());
        joint.prior_pi = 0.05 + 0.9 * rng.uniform();
        const auto rep = metrics::ib_verify(joint);
        min_margin = std::min(min_margin, rep.bound - rep.mi);
        max_residual = std::max(max_residual, rep.residual);

        // Tightness: x-independent theta with the prior set to it.
        metrics::ToyJoint tight = joint;
        const double shared = 0.05 + 0.9 * rng.uniform();
        for (auto& t : tight.theta) t = shared;
        tight.prior_pi = shared;
        const auto trep = metrics::ib_verify(tight);
        max_tight_gap = std::max(max_tight_gap, std::abs(trep.bound - trep.mi));
    }
    std::cout << "random joints: count=" << n_random << " min_margin=" << min_margin
              << " max_residual=" << max_residual << " max_tight_gap=" << max_tight_gap << "\n";

    nlohmann::ordered_json j;
    j["default"]["mi"] = base_report.mi;
    j["default"]["bound"] = base_report.bound;
    j["default"]["residual"] = base_report.residual;
    j["random"]["count"] = n_random;
    j["random"]["min_margin"] = min_margin;
    j["random"]["max_residual"] = max_residual;
    j["random"]["max_tight_gap"] = max_tight_gap;
    const std::string path = cfg.out_dir + "/ib_report.json";
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write " + path);
    out << j.dump(2) << "\n";

    if (base_report.bound < base_report.mi - 1e-12 || min_margin < -1e-12)
        fail(ErrorCode::state, "IB bound fell below the mutual information");
    if (max_residual > 1e-12 || base_report.residual > 1e-12)
        fail(ErrorCode::state, "KL decomposition residual exceeded 1e-12");
    if (max_tight_gap > 1e-9)
        fail(ErrorCode::state, "bound not tight for x-independent theta equal to the prior");
}

void cmd_gradcheck(const config::RunConfig& cfg) {
    write_snapshot(cfg);
    const auto report = gradcheck::run_all(cfg.seeds[0]);
    for (const auto& row : report.rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-42s %11.3e  (tol %.0e)  %s", row.name.c_str(),
                      row.error, row.threshold, row.pass ? "PASS" : "FAIL");
        std::cout << line << "\n";
    }
    std::cout << (report.all_pass ? "all gradient checks passed" : "gradient checks FAILED")
              << "\n";
    if (!report.all_pass) fail(ErrorCode::numeric, "gradient checks failed");
}

} // namespace sibre::cli
