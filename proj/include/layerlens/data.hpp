#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/nn.hpp"
#include "layerlens/rng.hpp"

namespace layerlens {

struct LabeledDataset {
    Matrix features;  // n x d, entries in [0,1]
    std::vector<std::uint16_t> labels;
    std::vector<std::uint16_t> recovered_labels;  // pre-corruption labels
    std::vector<std::uint8_t> corrupted_mask;
    int class_count = 0;
    std::string name;
    // Echoed corruption parameters; 0/0 when uncorrupted.
    double noise_ratio = 0.0;
    std::uint64_t corruption_seed = 0;

    Eigen::Index size() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }

    bool is_corrupted() const {
        return std::any_of(corrupted_mask.begin(), corrupted_mask.end(),
                           [](std::uint8_t m) { return m != 0; });
    }
};

struct CorruptionPlan {
    double noise_ratio = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> corrupted_indices;     // strictly increasing
    std::vector<std::uint16_t> applied_labels;        // aligned to corrupted_indices
    double effective_noise = 0.0;                     // fraction of labels actually changed
};

// ---------------------------------------------------------------------------
// MNIST IDX (big-endian)

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw ParseError(std::string("idx: truncated while reading ") + what);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace detail

inline LabeledDataset load_mnist(const std::filesystem::path& images_path,
                                 const std::filesystem::path& labels_path) {
    std::ifstream images(images_path, std::ios::binary);
    if (!images) throw ParseError("mnist: cannot open " + images_path.string());
    std::ifstream labels(labels_path, std::ios::binary);
    if (!labels) throw ParseError("mnist: cannot open " + labels_path.string());

    const std::uint32_t image_magic = detail::read_be32(images, "image magic");
    if (image_magic != 2051)
        throw ParseError("mnist: image magic " + std::to_string(image_magic) + ", expected 2051");
    const std::uint32_t label_magic = detail::read_be32(labels, "label magic");
    if (label_magic != 2049)
        throw ParseError("mnist: label magic " + std::to_string(label_magic) + ", expected 2049");

    const std::uint32_t n_images = detail::read_be32(images, "image count");
    const std::uint32_t rows = detail::read_be32(images, "row count");
    const std::uint32_t cols = detail::read_be32(images, "column count");
    const std::uint32_t n_labels = detail::read_be32(labels, "label count");
    if (n_images != n_labels)
        throw ParseError("mnist: image count " + std::to_string(n_images) +
                         " != label count " + std::to_string(n_labels));

    const std::size_t d = std::size_t(rows) * cols;
    LabeledDataset ds;
    ds.name = "mnist";
    ds.class_count = 10;
    ds.features.resize(n_images, d);
    ds.labels.resize(n_images);
    std::vector<unsigned char> pixel_row(d);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        images.read(reinterpret_cast<char*>(pixel_row.data()), pixel_row.size());
        if (!images) throw ParseError("mnist: truncated image data at record " + std::to_string(i));
        for (std::size_t j = 0; j < d; ++j)
            ds.features(i, j) = pixel_row[j] / 255.0;
        unsigned char label;
        labels.read(reinterpret_cast<char*>(&label), 1);
        if (!labels) throw ParseError("mnist: truncated label data at record " + std::to_string(i));
        if (label >= 10)
            throw ParseError("mnist: label " + std::to_string(int(label)) + " out of range");
        ds.labels[i] = label;
    }
    ds.recovered_labels = ds.labels;
    ds.corrupted_mask.assign(n_images, 0);
    return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches (3073-byte records: label byte + 3*1024 pixels)

inline LabeledDataset load_cifar10(const std::vector<std::filesystem::path>& batch_paths) {
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPixels = 3072;

    LabeledDataset ds;
    ds.name = "cifar10";
    ds.class_count = 10;

    std::vector<std::vector<unsigned char>> raw_batches;
    std::size_t total = 0;
    for (const auto& path : batch_paths) {
        std::ifstream in(path, std::ios::binary | std::ios::ate);
        if (!in) throw ParseError("cifar10: cannot open " + path.string());
        const std::size_t length = static_cast<std::size_t>(in.tellg());
        if (length % kRecord != 0)
            throw ParseError("cifar10: " + path.string() + " length " + std::to_string(length) +
                             " is not a multiple of 3073");
        in.seekg(0);
        std::vector<unsigned char> bytes(length);
        in.read(reinterpret_cast<char*>(bytes.data()), length);
        if (!in) throw ParseError("cifar10: read failed on " + path.string());
        total += length / kRecord;
        raw_batches.push_back(std::move(bytes));
    }

    ds.features.resize(total, kPixels);
    ds.labels.resize(total);
    std::size_t row = 0;
    for (const auto& bytes : raw_batches) {
        for (std::size_t offset = 0; offset < bytes.size(); offset += kRecord, ++row) {
            const unsigned char label = bytes[offset];
            if (label >= 10)
                throw ParseError("cifar10: record " + std::to_string(row) + " label byte " +
                                 std::to_string(int(label)) + " out of range");
            ds.labels[row] = label;
            for (std::size_t j = 0; j < kPixels; ++j)
                ds.features(row, j) = bytes[offset + 1 + j] / 255.0;
        }
    }
    ds.recovered_labels = ds.labels;
    ds.corrupted_mask.assign(total, 0);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs; a fast stand-in for image data in tests.

inline LabeledDataset synth_blobs(int n, int d, int class_count, double separation,
                                  std::uint64_t seed) {
    if (class_count < 1 || n < class_count || d < 1)
        throw DomainError("synth_blobs: need n >= K >= 1 and d >= 1");
    if (separation < 0.0) throw DomainError("synth_blobs: separation must be >= 0");

    std::mt19937_64 gen(seed);

    // Cluster means: random directions scaled so means sit `separation` from
    // the shared center.
    Matrix means(class_count, d);
    for (int k = 0; k < class_count; ++k) {
        Vector dir(d);
        for (int j = 0; j < d; ++j) dir(j) = gaussian(gen);
        const double norm = dir.norm();
        if (norm > 0.0) dir /= norm;
        means.row(k) = (separation / 2.0) * dir.transpose();
    }

    LabeledDataset ds;
    ds.name = "synth";
    ds.class_count = class_count;
    ds.features.resize(n, d);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const int k = i % class_count;  // balanced up to remainder
        ds.labels[i] = static_cast<std::uint16_t>(k);
        for (int j = 0; j < d; ++j)
            ds.features(i, j) = means(k, j) + gaussian(gen);
    }

    // Rescale all features into [0,1] by the global min/max.
    const double lo = ds.features.minCoeff();
    const double hi = ds.features.maxCoeff();
    const double span = hi > lo ? hi - lo : 1.0;
    ds.features = (ds.features.array() - lo) / span;

    ds.recovered_labels = ds.labels;
    ds.corrupted_mask.assign(n, 0);
    return ds;
}

// ---------------------------------------------------------------------------
// Label corruption

namespace detail {

// round-half-up count of corrupted samples
inline std::size_t corruption_count(double noise_ratio, std::size_t n) {
    return static_cast<std::size_t>(std::floor(noise_ratio * static_cast<double>(n) + 0.5));
}

// The seeded index selection, factored out so cache loading can rebuild the
// mask from (n, noise_ratio, seed) alone.
inline std::vector<std::uint32_t> select_corrupted_indices(std::size_t n, double noise_ratio,
                                                           std::uint64_t seed) {
    const std::size_t m = corruption_count(noise_ratio, n);
    std::mt19937_64 gen(seed);
    std::vector<std::uint32_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<std::uint32_t>(i);
    // partial Fisher-Yates: the first m entries are a uniform sample
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_below(gen, n - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<std::uint32_t> chosen(pool.begin(), pool.begin() + m);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

}  // namespace detail

// Shuffle the labels of a seeded uniform sample of round(noise_ratio * n)
// indices among themselves. Fixed points are allowed, so the achieved noise
// (plan.effective_noise) can fall below the nominal ratio.
inline std::pair<LabeledDataset, CorruptionPlan> corrupt_labels(const LabeledDataset& dataset,
                                                                double noise_ratio,
                                                                std::uint64_t seed) {
    if (noise_ratio < 0.0 || noise_ratio > 1.0)
        throw DomainError("corrupt_labels: noise_ratio must be in [0,1]");
    if (dataset.is_corrupted())
        throw StateError("corrupt_labels: dataset is already corrupted");

    const std::size_t n = static_cast<std::size_t>(dataset.size());
    CorruptionPlan plan;
    plan.noise_ratio = noise_ratio;
    plan.seed = seed;
    plan.corrupted_indices = detail::select_corrupted_indices(n, noise_ratio, seed);

    LabeledDataset out = dataset;
    out.noise_ratio = noise_ratio;
    out.corruption_seed = seed;

    const std::size_t m = plan.corrupted_indices.size();
    if (m > 0) {
        // The permutation draws from the same engine state the selection
        // left off at; replaying the selection reproduces it exactly.
        std::mt19937_64 gen(seed);
        for (std::size_t i = 0; i < m; ++i) (void)uniform_below(gen, n - i);

        plan.applied_labels.resize(m);
        for (std::size_t i = 0; i < m; ++i)
            plan.applied_labels[i] = dataset.labels[plan.corrupted_indices[i]];
        shuffle_in_place(gen, plan.applied_labels);

        std::size_t changed = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const std::uint32_t idx = plan.corrupted_indices[i];
            out.labels[idx] = plan.applied_labels[i];
            out.corrupted_mask[idx] = 1;
            if (out.labels[idx] != out.recovered_labels[idx]) ++changed;
        }
        plan.effective_noise = static_cast<double>(changed) / static_cast<double>(n);
    }
    return {std::move(out), std::move(plan)};
}

// Features paired with the pre-corruption labels.
inline std::pair<const Matrix&, const std::vector<std::uint16_t>&> recovered_view(
    const LabeledDataset& dataset) {
    return {dataset.features, dataset.recovered_labels};
}

// Contiguous row range [begin, begin + count) as a standalone dataset.
inline LabeledDataset slice_dataset(const LabeledDataset& ds, Eigen::Index begin,
                                    Eigen::Index count) {
    if (begin < 0 || count < 1 || begin + count > ds.size())
        throw DomainError("slice_dataset: range out of bounds");
    LabeledDataset out;
    out.name = ds.name;
    out.class_count = ds.class_count;
    out.noise_ratio = ds.noise_ratio;
    out.corruption_seed = ds.corruption_seed;
    out.features = ds.features.middleRows(begin, count);
    out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + begin + count);
    out.recovered_labels.assign(ds.recovered_labels.begin() + begin,
                                ds.recovered_labels.begin() + begin + count);
    out.corrupted_mask.assign(ds.corrupted_mask.begin() + begin,
                              ds.corrupted_mask.begin() + begin + count);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset cache file: one JSON header line, then raw little-endian blocks
// (features f64, current labels u16, recovered labels u16).

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("dataset cache: cannot open for writing: " + path.string());
    nlohmann::json header{{"name", ds.name},
                          {"n", ds.size()},
                          {"d", ds.dim()},
                          {"k", ds.class_count},
                          {"noise_ratio", ds.noise_ratio},
                          {"seed", ds.corruption_seed}};
    out << header.dump() << '\n';
    for (Eigen::Index i = 0; i < ds.size(); ++i)
        for (Eigen::Index j = 0; j < ds.dim(); ++j) {
            const double v = ds.features(i, j);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
    out.write(reinterpret_cast<const char*>(ds.labels.data()), 2 * ds.labels.size());
    out.write(reinterpret_cast<const char*>(ds.recovered_labels.data()),
              2 * ds.recovered_labels.size());
    if (!out) throw Error("dataset cache: write failed: " + path.string());
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("dataset cache: cannot open " + path.string());
    std::string header_line;
    if (!std::getline(in, header_line))
        throw ParseError("dataset cache: missing header line");
    nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
    if (header.is_discarded() || !header.is_object())
        throw ParseError("dataset cache: malformed JSON header");

    LabeledDataset ds;
    try {
        ds.name = header.at("name").get<std::string>();
        const auto n = header.at("n").get<Eigen::Index>();
        const auto d = header.at("d").get<Eigen::Index>();
        ds.class_count = header.at("k").get<int>();
        ds.noise_ratio = header.at("noise_ratio").get<double>();
        ds.corruption_seed = header.at("seed").get<std::uint64_t>();
        if (n < 1 || d < 1 || ds.class_count < 1)
            throw ParseError("dataset cache: non-positive dimensions in header");
        ds.features.resize(n, d);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("dataset cache: bad header: ") + e.what());
    }

    for (Eigen::Index i = 0; i < ds.size(); ++i)
        for (Eigen::Index j = 0; j < ds.dim(); ++j)
            in.read(reinterpret_cast<char*>(&ds.features(i, j)), 8);
    const std::size_t n = static_cast<std::size_t>(ds.size());
    ds.labels.resize(n);
    in.read(reinterpret_cast<char*>(ds.labels.data()), 2 * n);
    ds.recovered_labels.resize(n);
    in.read(reinterpret_cast<char*>(ds.recovered_labels.data()), 2 * n);
    if (!in) throw ParseError("dataset cache: truncated data block in " + path.string());

    ds.corrupted_mask.assign(n, 0);
    if (ds.noise_ratio > 0.0)
        for (std::uint32_t idx :
             detail::select_corrupted_indices(n, ds.noise_ratio, ds.corruption_seed))
            ds.corrupted_mask[idx] = 1;
    return ds;
}

}  // namespace layerlens
