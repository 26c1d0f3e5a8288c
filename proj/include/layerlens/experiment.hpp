#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/data.hpp"
#include "layerlens/diagnostics.hpp"
#include "layerlens/nn.hpp"
#include "layerlens/rng.hpp"

namespace layerlens {

inline constexpr int kRecordSchemaVersion = 1;

// Full configuration of one training job. A record can be re-derived from
// this echo alone.
struct RunConfig {
    ArchSpec arch;
    TrainConfig train;
    double noise_ratio = 0.0;
    std::uint64_t corruption_seed = 0;
    int seed_index = 0;
    std::uint64_t master_seed = 0;
    std::string dataset_name;
};

// Sub-seeds are mixed from (master_seed, width, ratio, seed_index) with a
// per-role tag, so adding grid points never perturbs existing runs.
inline void derive_run_seeds(RunConfig& config) {
    const std::uint64_t ratio_bits = static_cast<std::uint64_t>(config.noise_ratio * 1e9);
    const std::uint64_t key =
        mix64(mix64(mix64(config.master_seed, static_cast<std::uint64_t>(config.arch.hidden_width)),
                    ratio_bits),
              static_cast<std::uint64_t>(config.seed_index));
    config.train.init_seed = mix64(key, 1);
    config.train.shuffle_seed = mix64(key, 2);
    config.corruption_seed = mix64(key, 3);
}

struct RunRecord {
    RunConfig config;
    std::string status = "ok";  // "ok" or "diverged"
    int diverged_epoch = -1;
    double final_train_loss = 0.0;
    double final_train_accuracy = 0.0;
    double final_test_loss = 0.0;
    double final_test_accuracy = 0.0;
    double generalization_gap = 0.0;
    double resilience = 0.0;
    double effective_noise = 0.0;
    std::vector<double> utilization;  // per layer
    std::map<std::string, std::vector<double>> contribution;  // metric name -> per layer
    double wall_time_seconds = 0.0;
    std::string toolkit_version = kVersion;
};

// ---------------------------------------------------------------------------
// JSON (de)serialization; snake_case keys, schema versioned by "v".

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"input_dim", c.arch.input_dim},
            {"output_dim", c.arch.output_dim},
            {"hidden_width", c.arch.hidden_width},
            {"depth", c.arch.depth},
            {"learning_rate", c.train.learning_rate},
            {"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"init_seed", c.train.init_seed},
            {"shuffle_seed", c.train.shuffle_seed},
            {"noise_ratio", c.noise_ratio},
            {"corruption_seed", c.corruption_seed},
            {"seed_index", c.seed_index},
            {"master_seed", c.master_seed},
            {"dataset_name", c.dataset_name}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    c.arch.input_dim = j.at("input_dim").get<int>();
    c.arch.output_dim = j.at("output_dim").get<int>();
    c.arch.hidden_width = j.at("hidden_width").get<int>();
    c.arch.depth = j.at("depth").get<int>();
    c.train.learning_rate = j.at("learning_rate").get<double>();
    c.train.epochs = j.at("epochs").get<int>();
    c.train.batch_size = j.at("batch_size").get<int>();
    c.train.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.train.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
    c.noise_ratio = j.at("noise_ratio").get<double>();
    c.corruption_seed = j.at("corruption_seed").get<std::uint64_t>();
    c.seed_index = j.at("seed_index").get<int>();
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
    c.dataset_name = j.at("dataset_name").get<std::string>();
    return c;
}

inline nlohmann::json to_json(const RunRecord& r) {
    return {{"v", kRecordSchemaVersion},
            {"config", to_json(r.config)},
            {"status", r.status},
            {"diverged_epoch", r.diverged_epoch},
            {"final_train_loss", r.final_train_loss},
            {"final_train_accuracy", r.final_train_accuracy},
            {"final_test_loss", r.final_test_loss},
            {"final_test_accuracy", r.final_test_accuracy},
            {"generalization_gap", r.generalization_gap},
            {"resilience", r.resilience},
            {"effective_noise", r.effective_noise},
            {"utilization", r.utilization},
            {"contribution", r.contribution},
            {"wall_time_seconds", r.wall_time_seconds},
            {"toolkit_version", r.toolkit_version}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
    if (j.at("v").get<int>() != kRecordSchemaVersion)
        throw ParseError("run record: unsupported schema version");
    RunRecord r;
    r.config = run_config_from_json(j.at("config"));
    r.status = j.at("status").get<std::string>();
    r.diverged_epoch = j.at("diverged_epoch").get<int>();
    r.final_train_loss = j.at("final_train_loss").get<double>();
    r.final_train_accuracy = j.at("final_train_accuracy").get<double>();
    r.final_test_loss = j.at("final_test_loss").get<double>();
    r.final_test_accuracy = j.at("final_test_accuracy").get<double>();
    r.generalization_gap = j.at("generalization_gap").get<double>();
    r.resilience = j.at("resilience").get<double>();
    r.effective_noise = j.at("effective_noise").get<double>();
    r.utilization = j.at("utilization").get<std::vector<double>>();
    r.contribution = j.at("contribution").get<std::map<std::string, std::vector<double>>>();
    r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
    r.toolkit_version = j.at("toolkit_version").get<std::string>();
    return r;
}

inline void save_records(const std::vector<RunRecord>& records,
                         const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("records: cannot open for writing: " + path.string());
    for (const RunRecord& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<RunRecord> load_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("records: cannot open: " + path.string());
    std::vector<RunRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(run_record_from_json(nlohmann::json::parse(line)));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Single run

struct RunResult {
    RunRecord record;
    ModelState model;
    InitSnapshot snapshot;
    LabeledDataset corrupted_train;
};

// Corrupt, train to the fixed epoch budget, and measure every diagnostic.
// Divergence yields a "diverged" record rather than an exception.
inline RunResult run_single(const RunConfig& config, const LabeledDataset& train_data,
                            const LabeledDataset& test_data) {
    const auto start = std::chrono::steady_clock::now();
    RunResult result;
    result.record.config = config;

    auto [corrupted, plan] = corrupt_labels(train_data, config.noise_ratio, config.corruption_seed);
    result.corrupted_train = std::move(corrupted);
    result.record.effective_noise = plan.effective_noise;

    ArchSpec arch = config.arch;
    arch.input_dim = static_cast<int>(train_data.dim());
    arch.output_dim = train_data.class_count;
    result.record.config.arch = arch;
    auto [model, snapshot] = init_model(arch, config.train.init_seed);
    result.snapshot = std::move(snapshot);

    try {
        train(model, result.corrupted_train.features, result.corrupted_train.labels, config.train);
    } catch (const DivergedError& e) {
        result.record.status = "diverged";
        result.record.diverged_epoch = e.epoch;
        result.model = std::move(model);
        result.record.wall_time_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return result;
    }
    result.model = std::move(model);

    const EvalData eval{&result.corrupted_train, &test_data};
    auto [train_loss, train_acc] =
        average_loss(result.model, result.corrupted_train.features, result.corrupted_train.labels);
    auto [test_loss, test_acc] = average_loss(result.model, test_data.features, test_data.labels);
    result.record.final_train_loss = train_loss;
    result.record.final_train_accuracy = train_acc;
    result.record.final_test_loss = test_loss;
    result.record.final_test_accuracy = test_acc;
    result.record.generalization_gap = std::abs(train_loss - test_loss);
    result.record.resilience = resilience(result.model, result.corrupted_train);

    const int depth = arch.depth;
    for (int l = 0; l < depth; ++l)
        result.record.utilization.push_back(layer_utilization(result.model, result.snapshot, l));
    for (MetricKind kind : kAllMetrics) {
        std::vector<double> per_layer;
        per_layer.reserve(depth);
        for (int l = 0; l < depth; ++l)
            per_layer.push_back(
                layer_contribution(result.model, result.snapshot, l, kind, eval));
        result.record.contribution[metric_name(kind)] = std::move(per_layer);
    }

    result.record.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepGrid {
    std::vector<int> widths;           // ascending
    std::vector<double> noise_ratios;  // ascending
    int seed_count = 3;
    std::uint64_t master_seed = 0;
    TrainConfig train_template;
    int depth = 5;

    void validate() const {
        if (widths.empty() || noise_ratios.empty() || seed_count < 1)
            throw DomainError("SweepGrid: all axes must be nonempty");
        if (!std::is_sorted(widths.begin(), widths.end()))
            throw DomainError("SweepGrid: widths must be sorted ascending");
        if (!std::is_sorted(noise_ratios.begin(), noise_ratios.end()))
            throw DomainError("SweepGrid: noise ratios must be sorted ascending");
        for (double r : noise_ratios)
            if (r < 0.0 || r > 1.0) throw DomainError("SweepGrid: ratios must be in [0,1]");
    }
};

using SweepTriple = std::tuple<int, double, int>;  // (width, ratio, seed_index)

inline bool record_less(const RunRecord& a, const RunRecord& b) {
    return std::tie(a.config.noise_ratio, a.config.arch.hidden_width, a.config.seed_index) <
           std::tie(b.config.noise_ratio, b.config.arch.hidden_width, b.config.seed_index);
}

struct SweepOptions {
    int parallelism = 1;
    std::filesystem::path records_path;  // empty: in-memory only
    std::filesystem::path journal_path;  // empty: no journal
    bool resume = false;
};

inline std::set<SweepTriple> load_journal(const std::filesystem::path& path) {
    std::set<SweepTriple> done;
    std::ifstream in(path);
    if (!in) return done;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        done.emplace(j.at("width").get<int>(), j.at("ratio").get<double>(),
                     j.at("seed").get<int>());
    }
    return done;
}

// Execute one record per (width, ratio, seed) triple with a bounded worker
// pool. Output is sorted canonically and invariant to parallelism degree.
inline std::vector<RunRecord> run_sweep(const SweepGrid& grid, const LabeledDataset& train_data,
                                        const LabeledDataset& test_data,
                                        const SweepOptions& options = {}) {
    grid.validate();

    std::vector<RunConfig> jobs;
    for (double ratio : grid.noise_ratios)
        for (int width : grid.widths)
            for (int seed = 0; seed < grid.seed_count; ++seed) {
                RunConfig config;
                config.arch.hidden_width = width;
                config.arch.depth = grid.depth;
                config.arch.input_dim = static_cast<int>(train_data.dim());
                config.arch.output_dim = train_data.class_count;
                config.train = grid.train_template;
                config.noise_ratio = ratio;
                config.seed_index = seed;
                config.master_seed = grid.master_seed;
                config.dataset_name = train_data.name;
                derive_run_seeds(config);
                jobs.push_back(config);
            }

    std::vector<RunRecord> records;
    std::set<SweepTriple> done;
    if (options.resume && !options.journal_path.empty()) {
        done = load_journal(options.journal_path);
        if (!options.records_path.empty() && std::filesystem::exists(options.records_path))
            records = load_records(options.records_path);
    }

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const SweepTriple triple{jobs[i].arch.hidden_width, jobs[i].noise_ratio,
                                 jobs[i].seed_index};
        if (!done.count(triple)) pending.push_back(i);
    }

    std::mutex write_mutex;
    std::ofstream record_stream, journal_stream;
    if (!options.records_path.empty())
        record_stream.open(options.records_path, std::ios::app);
    if (!options.journal_path.empty())
        journal_stream.open(options.journal_path, std::ios::app);

    std::atomic<std::size_t> next{0};
    const int workers = std::max(1, options.parallelism);
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t slot = next.fetch_add(1);
            if (slot >= pending.size()) return;
            const RunConfig& config = jobs[pending[slot]];
            try {
                RunResult result = run_single(config, train_data, test_data);
                std::lock_guard<std::mutex> lock(write_mutex);
                if (record_stream.is_open())
                    record_stream << to_json(result.record).dump() << '\n' << std::flush;
                if (journal_stream.is_open())
                    journal_stream << nlohmann::json{{"width", config.arch.hidden_width},
                                                     {"ratio", config.noise_ratio},
                                                     {"seed", config.seed_index}}
                                          .dump()
                                   << '\n'
                                   << std::flush;
                records.push_back(std::move(result.record));
            } catch (...) {
                std::lock_guard<std::mutex> lock(write_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::sort(records.begin(), records.end(), record_less);
    if (record_stream.is_open()) {
        record_stream.close();
        save_records(records, options.records_path);  // canonical order on completion
    }
    return records;
}

// ---------------------------------------------------------------------------
// Aggregation over seeds

struct CellKey {
    double noise_ratio;
    int width;
    auto operator<=>(const CellKey&) const = default;
};

struct CellStats {
    int seed_count = 0;
    std::map<std::string, double> mean;    // scalar metric name -> mean
    std::map<std::string, double> stddev;  // scalar metric name -> stddev (population)
    std::vector<double> mean_utilization;  // per layer
    std::map<std::string, std::vector<double>> mean_contribution;  // metric -> per layer
};

// Per-(width, ratio) means and stddevs over seeds. Requires complete seed
// coverage; missing triples are reported explicitly.
inline std::map<CellKey, CellStats> aggregate(const std::vector<RunRecord>& records) {
    if (records.empty()) throw DomainError("aggregate: no records");
    std::map<CellKey, std::vector<const RunRecord*>> cells;
    std::set<int> seed_indices;
    for (const RunRecord& r : records) {
        cells[{r.config.noise_ratio, r.config.arch.hidden_width}].push_back(&r);
        seed_indices.insert(r.config.seed_index);
    }
    const std::size_t expected = seed_indices.size();
    std::string missing;
    for (const auto& [key, cell] : cells) {
        std::set<int> present;
        for (const RunRecord* r : cell) present.insert(r->config.seed_index);
        for (int seed : seed_indices)
            if (!present.count(seed))
                missing += " (width=" + std::to_string(key.width) +
                           ", ratio=" + std::to_string(key.noise_ratio) +
                           ", seed=" + std::to_string(seed) + ")";
        (void)expected;
    }
    if (!missing.empty())
        throw IncompleteGridError("aggregate: incomplete cells, missing:" + missing);

    auto scalar_metrics = [](const RunRecord& r) {
        return std::map<std::string, double>{
            {"train_loss", r.final_train_loss},
            {"train_accuracy", r.final_train_accuracy},
            {"test_loss", r.final_test_loss},
            {"test_accuracy", r.final_test_accuracy},
            {"generalization_gap", r.generalization_gap},
            {"resilience", r.resilience},
            {"effective_noise", r.effective_noise}};
    };

    std::map<CellKey, CellStats> out;
    for (const auto& [key, cell] : cells) {
        CellStats stats;
        stats.seed_count = static_cast<int>(cell.size());
        const double inv = 1.0 / static_cast<double>(cell.size());
        for (const RunRecord* r : cell)
            for (const auto& [name, value] : scalar_metrics(*r)) stats.mean[name] += value * inv;
        for (const RunRecord* r : cell)
            for (const auto& [name, value] : scalar_metrics(*r)) {
                const double d = value - stats.mean[name];
                stats.stddev[name] += d * d * inv;
            }
        for (auto& [name, v] : stats.stddev) v = std::sqrt(v);

        const std::size_t depth = cell.front()->utilization.size();
        stats.mean_utilization.assign(depth, 0.0);
        for (const RunRecord* r : cell)
            for (std::size_t l = 0; l < depth; ++l)
                stats.mean_utilization[l] += r->utilization[l] * inv;
        for (const auto& [cname, _] : cell.front()->contribution) {
            std::vector<double> acc(depth, 0.0);
            for (const RunRecord* r : cell)
                for (std::size_t l = 0; l < depth; ++l)
                    acc[l] += r->contribution.at(cname)[l] * inv;
            stats.mean_contribution[cname] = std::move(acc);
        }
        out[key] = std::move(stats);
    }
    return out;
}

}  // namespace layerlens
