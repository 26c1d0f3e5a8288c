#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "layerlens/checkpoint.hpp"
#include "layerlens/data.hpp"

using namespace layerlens;
namespace fs = std::filesystem;

#ifndef CLI_PATH
#error "CLI_PATH must point at the layerlens binary"
#endif

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("llns_cli_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
    const std::string command = std::string(CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(command.c_str());
    return WEXITSTATUS(status);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// records text with wall-time fields blanked, for determinism comparisons
std::string canonical_records(const fs::path& p) {
    std::ifstream in(p);
    std::string line, out;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        j["wall_time_seconds"] = 0.0;
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace

TEST_CASE("prepare --synth writes a deterministic cache") {
    TempDir dir;
    const std::string a = (dir.path / "a.bin").string();
    const std::string b = (dir.path / "b.bin").string();
    REQUIRE(run_cli("prepare --synth --n 200 --d 6 --k 4 --seed 1 --out " + a) == 0);
    REQUIRE(run_cli("prepare --synth --n 200 --d 6 --k 4 --seed 1 --out " + b) == 0);
    REQUIRE(read_file(a) == read_file(b));
    const LabeledDataset ds = load_dataset(a);
    REQUIRE(ds.size() == 200);
    REQUIRE(ds.class_count == 4);
}

TEST_CASE("prepare with a missing input file exits 2") {
    TempDir dir;
    REQUIRE(run_cli("prepare --mnist-images /nonexistent/images --mnist-labels /nonexistent/labels --out " +
                    (dir.path / "x.bin").string()) == 2);
}

TEST_CASE("sweep produces the expected record count and is reproducible") {
    TempDir dir;
    const std::string train = (dir.path / "train.bin").string();
    const std::string test = (dir.path / "test.bin").string();
    REQUIRE(run_cli("prepare --synth --n 150 --d 5 --k 3 --seed 1 --out " + train) == 0);
    REQUIRE(run_cli("prepare --synth --n 60 --d 5 --k 3 --seed 2 --out " + test) == 0);

    const std::string flags = "sweep --train " + train + " --test " + test +
                              " --widths 4,8 --ratios 0,0.5 --seeds 3 --depth 3 --epochs 10 "
                              "--lr 0.1 --batch-size 32 --master-seed 7 --out ";
    const std::string rec1 = (dir.path / "r1.jsonl").string();
    const std::string rec2 = (dir.path / "r2.jsonl").string();
    REQUIRE(run_cli(flags + rec1) == 0);
    REQUIRE(run_cli(flags + rec2 + " --jobs 4") == 0);

    std::ifstream in(rec1);
    std::size_t lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    REQUIRE(lines == 12);  // 2 widths x 2 ratios x 3 seeds
    REQUIRE(canonical_records(rec1) == canonical_records(rec2));
}

TEST_CASE("config file fills defaults but flags win") {
    TempDir dir;
    const std::string train = (dir.path / "train.bin").string();
    const std::string test = (dir.path / "test.bin").string();
    REQUIRE(run_cli("prepare --synth --n 100 --d 4 --k 2 --seed 1 --out " + train) == 0);
    REQUIRE(run_cli("prepare --synth --n 50 --d 4 --k 2 --seed 2 --out " + test) == 0);
    const fs::path config = dir.path / "config.json";
    std::ofstream(config) << R"({"widths":"4","ratios":"0","seeds":2,"epochs":5,"depth":2})";

    const std::string rec = (dir.path / "rec.jsonl").string();
    // --seeds 1 on the command line overrides the config's 2
    REQUIRE(run_cli("sweep --train " + train + " --test " + test + " --config " +
                    config.string() + " --seeds 1 --lr 0.1 --batch-size 32 --out " + rec) == 0);
    std::ifstream in(rec);
    std::size_t lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    REQUIRE(lines == 1);
    const auto j = nlohmann::json::parse(line.empty() ? read_file(rec) : line);
}

TEST_CASE("diagnose reports zero utilization for an untrained checkpoint") {
    TempDir dir;
    const std::string train = (dir.path / "train.bin").string();
    REQUIRE(run_cli("prepare --synth --n 100 --d 4 --k 3 --seed 1 --out " + train) == 0);

    const ArchSpec arch{.input_dim = 4, .output_dim = 3, .hidden_width = 6, .depth = 3};
    auto [model, snapshot] = init_model(arch, 5);
    const std::string ckpt = (dir.path / "model.ckpt").string();
    save_checkpoint(model, snapshot, ckpt);

    const std::string out = (dir.path / "diag.json").string();
    REQUIRE(run_cli("diagnose --checkpoint " + ckpt + " --train " + train + " --out " + out) == 0);
    const auto diag = nlohmann::json::parse(read_file(out));
    for (double u : diag.at("utilization").get<std::vector<double>>()) REQUIRE(u == 0.0);
    // dataset carries no corruption: resilience omitted
    REQUIRE(!diag.contains("resilience"));
}

TEST_CASE("rollback --k 0 and --k depth hit the identities") {
    TempDir dir;
    const ArchSpec arch{.input_dim = 4, .output_dim = 3, .hidden_width = 6, .depth = 3};
    auto [model, snapshot] = init_model(arch, 5);
    model.layers[2].weights.array() += 1.0;  // pretend training moved layer 3
    const std::string ckpt = (dir.path / "model.ckpt").string();
    save_checkpoint(model, snapshot, ckpt);

    const std::string zero = (dir.path / "k0.ckpt").string();
    REQUIRE(run_cli("rollback --checkpoint " + ckpt + " --k 0 --out " + zero) == 0);
    REQUIRE(read_file(zero) == read_file(ckpt));

    const std::string full = (dir.path / "kd.ckpt").string();
    REQUIRE(run_cli("rollback --checkpoint " + ckpt + " --k 3 --out " + full) == 0);
    auto [rolled, rolled_snapshot] = load_checkpoint(full);
    for (int l = 0; l < 3; ++l) REQUIRE(rolled.layers[l] == snapshot.layers[l]);
}

TEST_CASE("report emits figure pairs, is deterministic, and flags incomplete grids") {
    TempDir dir;
    const std::string train = (dir.path / "train.bin").string();
    const std::string test = (dir.path / "test.bin").string();
    REQUIRE(run_cli("prepare --synth --n 150 --d 5 --k 3 --seed 1 --out " + train) == 0);
    REQUIRE(run_cli("prepare --synth --n 60 --d 5 --k 3 --seed 2 --out " + test) == 0);
    const std::string rec = (dir.path / "rec.jsonl").string();
    REQUIRE(run_cli("sweep --train " + train + " --test " + test +
                    " --widths 4,8 --ratios 0,0.4 --seeds 2 --depth 3 --epochs 10 --lr 0.1 "
                    "--batch-size 32 --out " + rec) == 0);

    const fs::path out1 = dir.path / "figs1";
    const fs::path out2 = dir.path / "figs2";
    REQUIRE(run_cli("report --records " + rec + " --out " + out1.string()) == 0);
    REQUIRE(run_cli("report --records " + rec + " --out " + out2.string()) == 0);

    std::size_t svg_count = 0;
    for (const auto& entry : fs::directory_iterator(out1)) {
        if (entry.path().extension() == ".svg") {
            ++svg_count;
            REQUIRE(read_file(entry.path()) == read_file(out2 / entry.path().filename()));
            // well-formedness via python's XML parser
            const std::string check = "python3 -c \"import xml.dom.minidom,sys;"
                                      "xml.dom.minidom.parse('" + entry.path().string() +
                                      "')\" >/dev/null 2>&1";
            REQUIRE(WEXITSTATUS(std::system(check.c_str())) == 0);
        }
    }
    REQUIRE(svg_count >= 5);

    // drop a record: incomplete grid exits 3
    std::string all = read_file(rec);
    all.erase(0, all.find('\n') + 1);
    std::ofstream(dir.path / "short.jsonl") << all;
    REQUIRE(run_cli("report --records " + (dir.path / "short.jsonl").string() + " --out " +
                    (dir.path / "figs3").string()) == 3);
}

TEST_CASE("sweep --resume completes only the missing triples") {
    TempDir dir;
    const std::string train = (dir.path / "train.bin").string();
    const std::string test = (dir.path / "test.bin").string();
    REQUIRE(run_cli("prepare --synth --n 100 --d 4 --k 2 --seed 1 --out " + train) == 0);
    REQUIRE(run_cli("prepare --synth --n 50 --d 4 --k 2 --seed 2 --out " + test) == 0);

    const std::string base_flags = "sweep --train " + train + " --test " + test +
                                   " --widths 4,8 --ratios 0,0.5 --seeds 2 --depth 2 --epochs 8 "
                                   "--lr 0.1 --batch-size 32 --master-seed 3 ";
    const std::string full = (dir.path / "full.jsonl").string();
    REQUIRE(run_cli(base_flags + "--out " + full) == 0);

    // truncate records+journal to simulate a kill after 3 runs
    const std::string part = (dir.path / "part.jsonl").string();
    const std::string journal = part + ".journal";
    {
        std::ifstream rec_in(full);
        std::ifstream jrn_in(full + ".journal");
        std::ofstream rec_out(part);
        std::ofstream jrn_out(journal);
        std::string line;
        for (int i = 0; i < 3 && std::getline(rec_in, line); ++i) rec_out << line << '\n';
        for (int i = 0; i < 3 && std::getline(jrn_in, line); ++i) jrn_out << line << '\n';
    }
    REQUIRE(run_cli(base_flags + "--out " + part + " --resume") == 0);
    REQUIRE(canonical_records(part) == canonical_records(full));
}
