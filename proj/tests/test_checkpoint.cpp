#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "layerlens/checkpoint.hpp"

using namespace layerlens;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("llns_ckpt_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("checkpoint round-trip is byte-identical") {
    TempDir dir;
    const ArchSpec arch{.input_dim = 5, .output_dim = 3, .hidden_width = 7, .depth = 4};
    auto [model, snapshot] = init_model(arch, 31);
    model.layers[1].weights(0, 0) = 1.25;  // diverge from the snapshot

    const fs::path first = dir.path / "a.ckpt";
    const fs::path second = dir.path / "b.ckpt";
    save_checkpoint(model, snapshot, first);
    auto [loaded_model, loaded_snapshot] = load_checkpoint(first);
    REQUIRE(loaded_model == model);
    for (int l = 0; l < arch.depth; ++l)
        REQUIRE(loaded_snapshot.layers[l] == snapshot.layers[l]);
    save_checkpoint(loaded_model, loaded_snapshot, second);
    REQUIRE(read_bytes(first) == read_bytes(second));
}

TEST_CASE("truncated checkpoint raises a truncation error") {
    TempDir dir;
    const ArchSpec arch{.input_dim = 3, .output_dim = 2, .hidden_width = 4, .depth = 2};
    auto [model, snapshot] = init_model(arch, 1);
    const fs::path full = dir.path / "full.ckpt";
    save_checkpoint(model, snapshot, full);

    const std::string bytes = read_bytes(full);
    const fs::path cut = dir.path / "cut.ckpt";
    std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    REQUIRE_THROWS_WITH(load_checkpoint(cut), Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("wrong magic names the found bytes") {
    TempDir dir;
    const fs::path bad = dir.path / "bad.ckpt";
    std::ofstream(bad, std::ios::binary) << "XYZW" << std::string(64, '\0');
    REQUIRE_THROWS_WITH(load_checkpoint(bad), Catch::Matchers::ContainsSubstring("XYZW"));
}

TEST_CASE("unsupported version is rejected") {
    TempDir dir;
    const fs::path bad = dir.path / "v9.ckpt";
    std::ofstream out(bad, std::ios::binary);
    out << "LLNS";
    const char version = 9;
    out.write(&version, 1);
    out << std::string(64, '\0');
    out.close();
    REQUIRE_THROWS_WITH(load_checkpoint(bad), Catch::Matchers::ContainsSubstring("version"));
}
