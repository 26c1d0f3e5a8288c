// layerlens: train fully connected classifiers under label noise and compute
// layer-wise generalization diagnostics.
//
// Subcommands: prepare, sweep, diagnose, rollback, report.
// Exit codes: 0 success, 1 internal failure, 2 input/parse error,
// 3 incomplete-grid error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "layerlens/checkpoint.hpp"
#include "layerlens/data.hpp"
#include "layerlens/diagnostics.hpp"
#include "layerlens/experiment.hpp"
#include "layerlens/report.hpp"
#include "layerlens/rollback.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t default_master_seed() {
    if (const char* env = std::getenv("LAYERLENS_SEED")) return std::strtoull(env, nullptr, 10);
    return 0;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

// JSON config file values fill in any flag the user did not pass explicitly.
void merge_config_file(CLI::App* cmd, const std::string& config_path) {
    if (config_path.empty()) return;
    std::ifstream in(config_path);
    if (!in) throw layerlens::ParseError("config: cannot open " + config_path);
    json config = json::parse(in, nullptr, false);
    if (config.is_discarded() || !config.is_object())
        throw layerlens::ParseError("config: malformed JSON in " + config_path);
    for (const auto& [key, value] : config.items()) {
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (!opt || opt->count() > 0) continue;  // flags win on conflict
        std::string text = value.is_string() ? value.get<std::string>() : value.dump();
        opt->add_result(text);
        opt->run_callback();
    }
}

struct PrepareArgs {
    bool synth = false;
    int n = 2000, d = 20, k = 4;
    double separation = 4.0;
    std::uint64_t seed = 0;
    std::string mnist_images, mnist_labels;
    std::vector<std::string> cifar_batches;
    double noise_ratio = 0.0;
    std::uint64_t noise_seed = 0;
    std::string out;
};

int cmd_prepare(const PrepareArgs& args) {
    layerlens::LabeledDataset ds;
    if (args.synth) {
        ds = layerlens::synth_blobs(args.n, args.d, args.k, args.separation, args.seed);
    } else if (!args.mnist_images.empty()) {
        ds = layerlens::load_mnist(args.mnist_images, args.mnist_labels);
    } else if (!args.cifar_batches.empty()) {
        std::vector<fs::path> paths(args.cifar_batches.begin(), args.cifar_batches.end());
        ds = layerlens::load_cifar10(paths);
    } else {
        throw layerlens::ParseError("prepare: pass --synth, --mnist, or --cifar");
    }
    if (args.noise_ratio > 0.0)
        ds = layerlens::corrupt_labels(ds, args.noise_ratio, args.noise_seed).first;
    layerlens::save_dataset(ds, args.out);
    std::cout << "wrote " << args.out << " (n=" << ds.size() << ", d=" << ds.dim()
              << ", k=" << ds.class_count << ")\n";
    return 0;
}

struct SweepArgs {
    std::string train_path, test_path;
    std::string widths = "8,16,32,64,128,256";
    std::string ratios = "0,0.1,0.2,0.3,0.4,0.5";
    int seeds = 3;
    int depth = 5;
    int epochs = 200;
    double learning_rate = 0.01;
    int batch_size = 64;
    std::uint64_t master_seed = default_master_seed();
    int jobs = 1;
    std::string out;
    std::string journal;
    bool resume = false;
};

int cmd_sweep(const SweepArgs& args) {
    const layerlens::LabeledDataset train_data = layerlens::load_dataset(args.train_path);
    const layerlens::LabeledDataset test_data = layerlens::load_dataset(args.test_path);

    layerlens::SweepGrid grid;
    grid.widths = parse_int_list(args.widths);
    grid.noise_ratios = parse_double_list(args.ratios);
    grid.seed_count = args.seeds;
    grid.depth = args.depth;
    grid.master_seed = args.master_seed;
    grid.train_template.epochs = args.epochs;
    grid.train_template.learning_rate = args.learning_rate;
    grid.train_template.batch_size = args.batch_size;

    layerlens::SweepOptions options;
    options.parallelism = args.jobs;
    options.records_path = args.out;
    options.journal_path = args.journal.empty() ? args.out + ".journal" : args.journal;
    options.resume = args.resume;
    if (!options.resume) {
        std::error_code ec;
        fs::remove(options.records_path, ec);
        fs::remove(options.journal_path, ec);
    }

    const auto records = layerlens::run_sweep(grid, train_data, test_data, options);
    std::cout << "wrote " << records.size() << " records to " << args.out << "\n";
    return 0;
}

struct DiagnoseArgs {
    std::string checkpoint;
    std::string train_path, test_path;
    std::string out;
};

int cmd_diagnose(const DiagnoseArgs& args) {
    auto [model, snapshot] = layerlens::load_checkpoint(args.checkpoint);
    const layerlens::LabeledDataset train_data = layerlens::load_dataset(args.train_path);
    std::optional<layerlens::LabeledDataset> test_data;
    if (!args.test_path.empty()) test_data = layerlens::load_dataset(args.test_path);

    layerlens::EvalData eval{&train_data, test_data ? &*test_data : nullptr};
    json out;
    out["toolkit_version"] = layerlens::kVersion;
    const auto [train_loss, train_acc] =
        layerlens::average_loss(model, train_data.features, train_data.labels);
    out["train_loss"] = train_loss;
    out["train_accuracy"] = train_acc;

    std::vector<double> utilization;
    for (int l = 0; l < model.arch.depth; ++l)
        utilization.push_back(layerlens::layer_utilization(model, snapshot, l));
    out["utilization"] = utilization;

    std::vector<double> contrib_train;
    for (int l = 0; l < model.arch.depth; ++l)
        contrib_train.push_back(layerlens::layer_contribution(
            model, snapshot, l, layerlens::MetricKind::train_loss, eval));
    out["contribution"]["train_loss"] = contrib_train;

    if (train_data.noise_ratio > 0.0) {
        out["resilience"] = layerlens::resilience(model, train_data);
        std::vector<double> contrib_res;
        for (int l = 0; l < model.arch.depth; ++l)
            contrib_res.push_back(layerlens::layer_contribution(
                model, snapshot, l, layerlens::MetricKind::resilience, eval));
        out["contribution"]["resilience"] = contrib_res;
    } else {
        std::cerr << "warning: dataset carries no corruption; resilience omitted\n";
    }

    if (test_data) {
        const auto [test_loss, test_acc] =
            layerlens::average_loss(model, test_data->features, test_data->labels);
        out["test_loss"] = test_loss;
        out["test_accuracy"] = test_acc;
        out["generalization_gap"] = std::abs(train_loss - test_loss);
        std::vector<double> contrib_test;
        for (int l = 0; l < model.arch.depth; ++l)
            contrib_test.push_back(layerlens::layer_contribution(
                model, snapshot, l, layerlens::MetricKind::test_loss, eval));
        out["contribution"]["test_loss"] = contrib_test;
    }

    const std::string text = out.dump(2) + "\n";
    if (args.out.empty()) std::cout << text;
    else layerlens::write_text_file(text, args.out);
    return 0;
}

struct RollbackArgs {
    std::string checkpoint;
    std::string k = "auto";
    std::string holdout_path;
    double holdout_fraction = 0.1;
    std::string out;
    std::string report_path;
};

int cmd_rollback(const RollbackArgs& args) {
    auto [model, snapshot] = layerlens::load_checkpoint(args.checkpoint);
    json report;
    report["toolkit_version"] = layerlens::kVersion;

    int k = 0;
    if (args.k == "auto") {
        if (args.holdout_path.empty())
            throw layerlens::ParseError("rollback: --k auto requires --holdout");
        layerlens::LabeledDataset holdout = layerlens::load_dataset(args.holdout_path);
        if (args.holdout_fraction < 1.0) {
            const auto count = std::max<Eigen::Index>(
                1, static_cast<Eigen::Index>(holdout.size() * args.holdout_fraction));
            holdout = layerlens::slice_dataset(holdout, holdout.size() - count, count);
        }
        const auto selection = layerlens::select_rollback(model, snapshot, holdout);
        k = selection.best_k;
        report["holdout_losses"] = selection.holdout_losses;
    } else {
        k = std::stoi(args.k);
    }
    report["k"] = k;

    const layerlens::ModelState rolled = layerlens::rollback_last_k(model, snapshot, k);
    layerlens::save_checkpoint(rolled, snapshot, args.out);

    const std::string text = report.dump(2) + "\n";
    if (args.report_path.empty()) std::cout << text;
    else layerlens::write_text_file(text, args.report_path);
    return 0;
}

struct ReportArgs {
    std::string records_path;
    std::vector<std::string> figures{"fig1", "fig2", "fig3", "fig4", "fig5"};
    std::string out_dir;
};

void write_figure(const std::string& figure, const std::vector<layerlens::RunRecord>& records,
                  const fs::path& dir) {
    using namespace layerlens;
    if (figure == "fig1") {
        const auto grid = build_heatmap(records, "contribution:train_loss", true,
                                        HeatmapScale::symlog);
        write_heatmap_csv(grid, dir / "fig1_contribution_train_loss.csv");
        write_text_file(render_svg(grid), dir / "fig1_contribution_train_loss.svg");
    } else if (figure == "fig2") {
        const auto grid = build_heatmap(records, "utilization", true);
        write_heatmap_csv(grid, dir / "fig2_utilization.csv");
        write_text_file(render_svg(grid), dir / "fig2_utilization.svg");
    } else if (figure == "fig3") {
        const auto gap = build_heatmap(records, "generalization_gap", false);
        write_heatmap_csv(gap, dir / "fig3_generalization_gap.csv");
        write_text_file(render_svg(gap), dir / "fig3_generalization_gap.svg");
        const auto res = build_heatmap(records, "resilience", false);
        write_heatmap_csv(res, dir / "fig3_resilience.csv");
        write_text_file(render_svg(res), dir / "fig3_resilience.svg");
    } else if (figure == "fig4") {
        const auto gap = build_heatmap(records, "generalization_gap", false);
        const auto trace = heatmap_trace(gap);
        std::vector<int> widths = gap.col_widths;
        for (const std::string& metric : {std::string("generalization_gap"),
                                          std::string("resilience")}) {
            const auto points = build_scatter(records, metric, gap.row_labels, widths, trace);
            write_scatter_csv(points, metric, dir / ("fig4_utilization_vs_" + metric + ".csv"));
            write_text_file(render_svg(points, metric),
                            dir / ("fig4_utilization_vs_" + metric + ".svg"));
        }
    } else if (figure == "fig5") {
        for (const std::string& metric : {std::string("test_loss"), std::string("resilience")}) {
            const auto grid = build_heatmap(records, "contribution:" + metric, true,
                                            HeatmapScale::symlog);
            write_heatmap_csv(grid, dir / ("fig5_contribution_" + metric + ".csv"));
            write_text_file(render_svg(grid), dir / ("fig5_contribution_" + metric + ".svg"));
        }
    } else {
        throw layerlens::ParseError("report: unknown figure " + figure);
    }
}

int cmd_report(const ReportArgs& args) {
    const auto records = layerlens::load_records(args.records_path);
    fs::create_directories(args.out_dir);
    for (const std::string& figure : args.figures)
        write_figure(figure, records, args.out_dir);
    std::cout << "wrote " << args.figures.size() << " figure(s) to " << args.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layerlens: layer-wise generalization diagnostics under label noise"};
    app.require_subcommand(1);

    PrepareArgs prepare_args;
    auto* prepare = app.add_subcommand("prepare", "build a dataset cache file");
    prepare->add_flag("--synth", prepare_args.synth, "generate synthetic Gaussian blobs");
    prepare->add_option("--n", prepare_args.n);
    prepare->add_option("--d", prepare_args.d);
    prepare->add_option("--k", prepare_args.k);
    prepare->add_option("--sep", prepare_args.separation);
    prepare->add_option("--seed", prepare_args.seed);
    prepare->add_option("--mnist-images", prepare_args.mnist_images);
    prepare->add_option("--mnist-labels", prepare_args.mnist_labels);
    prepare->add_option("--cifar", prepare_args.cifar_batches);
    prepare->add_option("--noise", prepare_args.noise_ratio);
    prepare->add_option("--noise-seed", prepare_args.noise_seed);
    prepare->add_option("--out", prepare_args.out)->required();

    SweepArgs sweep_args;
    std::string sweep_config;
    auto* sweep = app.add_subcommand("sweep", "run a width x noise-ratio x seed grid");
    sweep->add_option("--train", sweep_args.train_path)->required();
    sweep->add_option("--test", sweep_args.test_path)->required();
    sweep->add_option("--widths", sweep_args.widths);
    sweep->add_option("--ratios", sweep_args.ratios);
    sweep->add_option("--seeds", sweep_args.seeds);
    sweep->add_option("--depth", sweep_args.depth);
    sweep->add_option("--epochs", sweep_args.epochs);
    sweep->add_option("--lr", sweep_args.learning_rate);
    sweep->add_option("--batch-size", sweep_args.batch_size);
    sweep->add_option("--master-seed", sweep_args.master_seed);
    sweep->add_option("--jobs", sweep_args.jobs);
    sweep->add_option("--out", sweep_args.out)->required();
    sweep->add_option("--journal", sweep_args.journal);
    sweep->add_flag("--resume", sweep_args.resume);
    sweep->add_option("--config", sweep_config, "JSON config file; flags win on conflict");

    DiagnoseArgs diagnose_args;
    auto* diagnose = app.add_subcommand("diagnose", "diagnostics of a saved checkpoint");
    diagnose->add_option("--checkpoint", diagnose_args.checkpoint)->required();
    diagnose->add_option("--train", diagnose_args.train_path)->required();
    diagnose->add_option("--test", diagnose_args.test_path);
    diagnose->add_option("--out", diagnose_args.out);

    RollbackArgs rollback_args;
    auto* rollback = app.add_subcommand("rollback", "re-initialize trailing layers");
    rollback->add_option("--checkpoint", rollback_args.checkpoint)->required();
    rollback->add_option("--k", rollback_args.k, "layer count or 'auto'");
    rollback->add_option("--holdout", rollback_args.holdout_path);
    rollback->add_option("--holdout-fraction", rollback_args.holdout_fraction);
    rollback->add_option("--out", rollback_args.out)->required();
    rollback->add_option("--report", rollback_args.report_path);

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "figures from a records file");
    report->add_option("--records", report_args.records_path)->required();
    report->add_option("--figure", report_args.figures, "fig1..fig5 (default: all)");
    report->add_option("--out", report_args.out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*sweep) merge_config_file(sweep, sweep_config);
        if (*prepare) return cmd_prepare(prepare_args);
        if (*sweep) return cmd_sweep(sweep_args);
        if (*diagnose) return cmd_diagnose(diagnose_args);
        if (*rollback) return cmd_rollback(rollback_args);
        if (*report) return cmd_report(report_args);
    } catch (const layerlens::IncompleteGridError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const layerlens::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const layerlens::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
