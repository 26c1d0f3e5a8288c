#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/diagnostics.hpp"
#include "layerlens/experiment.hpp"

namespace layerlens {

enum class HeatmapScale { linear, symlog };

inline constexpr double kSymlogThreshold = 1e-4;

// symlog display transform; exact fixed point at 0.
inline double symlog(double v) {
    return (v < 0 ? -1.0 : 1.0) * std::log10(1.0 + std::abs(v) / kSymlogThreshold);
}

// noise-ratio rows x width (or width-per-layer-block) columns of one metric.
// Cell values stay raw; the scale only affects rendering.
struct HeatmapGrid {
    std::string metric;
    std::vector<double> row_labels;        // noise ratios, ascending
    std::vector<std::string> col_labels;   // "width" or "width_layer"
    std::vector<int> col_widths;           // width per column
    std::vector<int> col_layers;           // layer per column, -1 if not blocked
    std::vector<std::vector<double>> values;             // raw
    std::vector<std::pair<int, int>> blocks;             // [begin, end) column ranges
    std::vector<std::vector<std::size_t>> row_max;       // per row: argmax col per block
    HeatmapScale scale = HeatmapScale::linear;
};

namespace detail {

inline double cell_metric(const CellStats& stats, const std::string& metric, int layer) {
    if (metric == "utilization") return stats.mean_utilization.at(layer);
    if (metric.rfind("contribution:", 0) == 0)
        return stats.mean_contribution.at(metric.substr(13)).at(layer);
    return stats.mean.at(metric);
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace detail

// Build a heatmap from run records. `metric` is a scalar metric name
// ("generalization_gap", "resilience", ...) or a per-layer one
// ("utilization", "contribution:test_loss", ...). Per-layer metrics require
// layer_blocked; columns are then grouped into one block per layer depth,
// matching the width-underscore-layer tick convention.
inline HeatmapGrid build_heatmap(const std::vector<RunRecord>& records, const std::string& metric,
                                 bool layer_blocked, HeatmapScale scale = HeatmapScale::linear) {
    const auto cells = aggregate(records);  // throws on incomplete grids

    std::set<double> ratios;
    std::set<int> widths;
    for (const auto& [key, _] : cells) {
        ratios.insert(key.noise_ratio);
        widths.insert(key.width);
    }
    int depth = 0;
    for (const auto& [_, stats] : cells)
        depth = std::max(depth, static_cast<int>(stats.mean_utilization.size()));
    const bool per_layer = metric == "utilization" || metric.rfind("contribution:", 0) == 0;
    if (per_layer && !layer_blocked)
        throw DomainError("build_heatmap: per-layer metric requires layer_blocked");

    HeatmapGrid grid;
    grid.metric = metric;
    grid.scale = scale;
    grid.row_labels.assign(ratios.begin(), ratios.end());

    if (layer_blocked) {
        for (int layer = 0; layer < depth; ++layer) {
            const int begin = static_cast<int>(grid.col_labels.size());
            for (int width : widths) {
                grid.col_labels.push_back(std::to_string(width) + "_" +
                                          std::to_string(layer + 1));
                grid.col_widths.push_back(width);
                grid.col_layers.push_back(layer);
            }
            grid.blocks.emplace_back(begin, static_cast<int>(grid.col_labels.size()));
        }
    } else {
        for (int width : widths) {
            grid.col_labels.push_back(std::to_string(width));
            grid.col_widths.push_back(width);
            grid.col_layers.push_back(-1);
        }
        grid.blocks.emplace_back(0, static_cast<int>(grid.col_labels.size()));
    }

    for (double ratio : grid.row_labels) {
        std::vector<double> row;
        for (std::size_t c = 0; c < grid.col_labels.size(); ++c) {
            const CellStats& stats = cells.at({ratio, grid.col_widths[c]});
            row.push_back(detail::cell_metric(stats, metric, grid.col_layers[c]));
        }
        grid.values.push_back(std::move(row));
    }

    for (const auto& row : grid.values) {
        std::vector<std::size_t> maxima;
        for (const auto& [begin, end] : grid.blocks) {
            std::vector<double> slice(row.begin() + begin, row.begin() + end);
            maxima.push_back(static_cast<std::size_t>(begin) + row_argmax(slice));
        }
        grid.row_max.push_back(std::move(maxima));
    }
    return grid;
}

// Interpolation-threshold trace of a non-blocked gap heatmap: per-ratio
// argmax width index.
inline std::vector<std::size_t> heatmap_trace(const HeatmapGrid& grid) {
    return threshold_trace(grid.values);
}

// ---------------------------------------------------------------------------
// Regime-split scatter (utilization vs a generalization metric)

struct ScatterPoint {
    double x = 0.0;        // chosen metric
    double y = 0.0;        // layer utilization
    int layer = 0;
    int width = 0;
    double noise_ratio = 0.0;
    bool over_parameterized = false;
};

// One point per (record, layer). A record is over-parameterized when its
// width index is at or past the threshold trace at its noise ratio.
inline std::vector<ScatterPoint> build_scatter(const std::vector<RunRecord>& records,
                                               const std::string& x_metric,
                                               const std::vector<double>& ratios,
                                               const std::vector<int>& widths,
                                               const std::vector<std::size_t>& trace) {
    if (trace.size() != ratios.size())
        throw DomainError("build_scatter: trace length != ratio count");
    std::vector<ScatterPoint> points;
    for (const RunRecord& r : records) {
        const auto ratio_it = std::find(ratios.begin(), ratios.end(), r.config.noise_ratio);
        const auto width_it = std::find(widths.begin(), widths.end(), r.config.arch.hidden_width);
        if (ratio_it == ratios.end() || width_it == widths.end())
            throw DomainError("build_scatter: record off-grid (width " +
                              std::to_string(r.config.arch.hidden_width) + ", ratio " +
                              detail::format_short(r.config.noise_ratio) + ")");
        const std::size_t ratio_idx = ratio_it - ratios.begin();
        const std::size_t width_idx = width_it - widths.begin();
        double x;
        if (x_metric == "generalization_gap") x = r.generalization_gap;
        else if (x_metric == "resilience") x = r.resilience;
        else throw DomainError("build_scatter: unsupported x metric " + x_metric);
        for (std::size_t l = 0; l < r.utilization.size(); ++l) {
            ScatterPoint p;
            p.x = x;
            p.y = r.utilization[l];
            p.layer = static_cast<int>(l);
            p.width = r.config.arch.hidden_width;
            p.noise_ratio = r.config.noise_ratio;
            p.over_parameterized = width_idx >= trace[ratio_idx];
            points.push_back(p);
        }
    }
    return points;
}

// ---------------------------------------------------------------------------
// CSV (raw values only; any display transform stays in the SVG)

inline std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string quoted = "\"";
    for (char c : field) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    return quoted + "\"";
}

inline void write_heatmap_csv(const HeatmapGrid& grid, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("csv: cannot open for writing: " + path.string());
    out << "noise_ratio,width,layer,metric,value\n";
    for (std::size_t r = 0; r < grid.row_labels.size(); ++r)
        for (std::size_t c = 0; c < grid.col_labels.size(); ++c) {
            out << detail::format_short(grid.row_labels[r]) << ',' << grid.col_widths[c] << ',';
            if (grid.col_layers[c] >= 0) out << grid.col_layers[c] + 1;
            out << ',' << csv_quote(grid.metric) << ','
                << detail::format_double(grid.values[r][c]) << '\n';
        }
}

inline void write_scatter_csv(const std::vector<ScatterPoint>& points, const std::string& x_metric,
                              const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("csv: cannot open for writing: " + path.string());
    out << "noise_ratio,width,layer,metric,value\n";
    for (const ScatterPoint& p : points) {
        out << detail::format_short(p.noise_ratio) << ',' << p.width << ',' << p.layer + 1 << ','
            << csv_quote(x_metric) << ',' << detail::format_double(p.x) << '\n';
        out << detail::format_short(p.noise_ratio) << ',' << p.width << ',' << p.layer + 1 << ','
            << "utilization," << detail::format_double(p.y) << '\n';
    }
}

// ---------------------------------------------------------------------------
// SVG rendering: deterministic, self-contained, no external assets.

namespace detail {

// Fixed 256-step monotone ramp, dark blue to warm yellow.
inline std::string ramp_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const int step = static_cast<int>(t * 255.0);
    const double u = step / 255.0;
    const int red = static_cast<int>(20 + 235 * u);
    const int green = static_cast<int>(20 + 200 * u);
    const int blue = static_cast<int>(90 + 60 * (1.0 - u));
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", red, green, blue);
    return buf;
}

inline std::string xml_escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace detail

inline std::string render_svg(const HeatmapGrid& grid) {
    constexpr int kCell = 18;
    constexpr int kLeft = 60;
    constexpr int kTop = 40;
    constexpr int kBlockGap = 8;
    constexpr int kBottom = 60;

    const std::size_t n_rows = grid.row_labels.size();
    const std::size_t n_cols = grid.col_labels.size();
    const int gaps = static_cast<int>(grid.blocks.size()) - 1;
    const int plot_w = static_cast<int>(n_cols) * kCell + gaps * kBlockGap;
    const int plot_h = static_cast<int>(n_rows) * kCell;
    const int width = kLeft + plot_w + 20;
    const int height = kTop + plot_h + kBottom;

    auto col_x = [&](std::size_t c) {
        int block_index = 0;
        for (std::size_t b = 0; b < grid.blocks.size(); ++b)
            if (static_cast<int>(c) >= grid.blocks[b].first) block_index = static_cast<int>(b);
        return kLeft + static_cast<int>(c) * kCell + block_index * kBlockGap;
    };

    // per-block normalization of the display values
    std::vector<std::pair<double, double>> block_range(grid.blocks.size(), {0.0, 0.0});
    for (std::size_t b = 0; b < grid.blocks.size(); ++b) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t r = 0; r < n_rows; ++r)
            for (int c = grid.blocks[b].first; c < grid.blocks[b].second; ++c) {
                const double v = grid.scale == HeatmapScale::symlog ? symlog(grid.values[r][c])
                                                                    : grid.values[r][c];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        block_range[b] = {lo, hi};
    }

    std::string svg;
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
           std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<metadata>toolkit_version=" + std::string(kVersion) +
           " scale=" + (grid.scale == HeatmapScale::symlog ? std::string("symlog") : std::string("linear")) +
           " symlog_threshold=" + detail::format_short(kSymlogThreshold) + "</metadata>\n";
    svg += "<text x=\"" + std::to_string(kLeft) + "\" y=\"20\" font-size=\"13\">" +
           detail::xml_escape(grid.metric) + "</text>\n";

    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < n_cols; ++c) {
            std::size_t b = 0;
            for (std::size_t bb = 0; bb < grid.blocks.size(); ++bb)
                if (static_cast<int>(c) >= grid.blocks[bb].first) b = bb;
            const auto [lo, hi] = block_range[b];
            const double v = grid.scale == HeatmapScale::symlog ? symlog(grid.values[r][c])
                                                                : grid.values[r][c];
            const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
            svg += "<rect x=\"" + std::to_string(col_x(c)) + "\" y=\"" +
                   std::to_string(kTop + static_cast<int>(r) * kCell) + "\" width=\"" +
                   std::to_string(kCell) + "\" height=\"" + std::to_string(kCell) + "\" fill=\"" +
                   detail::ramp_color(t) + "\"/>\n";
        }
        // row-max markers, one per block
        for (std::size_t max_col : grid.row_max[r]) {
            svg += "<rect x=\"" + std::to_string(col_x(max_col) + 3) + "\" y=\"" +
                   std::to_string(kTop + static_cast<int>(r) * kCell + 3) + "\" width=\"" +
                   std::to_string(kCell - 6) + "\" height=\"" + std::to_string(kCell - 6) +
                   "\" fill=\"none\" stroke=\"#00c000\" stroke-width=\"2\"/>\n";
        }
        svg += "<text x=\"4\" y=\"" +
               std::to_string(kTop + static_cast<int>(r) * kCell + kCell - 5) +
               "\" font-size=\"10\">" + detail::format_short(grid.row_labels[r]) + "</text>\n";
    }
    for (std::size_t c = 0; c < n_cols; ++c) {
        svg += "<text x=\"" + std::to_string(col_x(c) + 2) + "\" y=\"" +
               std::to_string(kTop + plot_h + 12) + "\" font-size=\"8\" transform=\"rotate(45 " +
               std::to_string(col_x(c) + 2) + " " + std::to_string(kTop + plot_h + 12) + ")\">" +
               detail::xml_escape(grid.col_labels[c]) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline std::string render_svg(const std::vector<ScatterPoint>& points,
                              const std::string& x_metric) {
    constexpr int kSize = 420;
    constexpr int kMargin = 50;
    double x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
    if (!points.empty()) {
        x_lo = x_hi = points.front().x;
        y_lo = y_hi = points.front().y;
        for (const ScatterPoint& p : points) {
            x_lo = std::min(x_lo, p.x);
            x_hi = std::max(x_hi, p.x);
            y_lo = std::min(y_lo, p.y);
            y_hi = std::max(y_hi, p.y);
        }
    }
    if (x_hi == x_lo) x_hi = x_lo + 1.0;
    if (y_hi == y_lo) y_hi = y_lo + 1.0;

    std::string svg;
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
           std::to_string(kSize) + "\" height=\"" + std::to_string(kSize) + "\">\n";
    svg += "<metadata>toolkit_version=" + std::string(kVersion) +
           " scale=linear symlog_threshold=" + detail::format_short(kSymlogThreshold) +
           "</metadata>\n";
    svg += "<text x=\"" + std::to_string(kMargin) + "\" y=\"20\" font-size=\"13\">utilization vs " +
           detail::xml_escape(x_metric) + "</text>\n";
    svg += "<line x1=\"" + std::to_string(kMargin) + "\" y1=\"" + std::to_string(kSize - kMargin) +
           "\" x2=\"" + std::to_string(kSize - kMargin) + "\" y2=\"" +
           std::to_string(kSize - kMargin) + "\" stroke=\"#000000\"/>\n";
    svg += "<line x1=\"" + std::to_string(kMargin) + "\" y1=\"" + std::to_string(kMargin) +
           "\" x2=\"" + std::to_string(kMargin) + "\" y2=\"" + std::to_string(kSize - kMargin) +
           "\" stroke=\"#000000\"/>\n";
    const double span = kSize - 2.0 * kMargin;
    for (const ScatterPoint& p : points) {
        const double px = kMargin + span * (p.x - x_lo) / (x_hi - x_lo);
        const double py = kSize - kMargin - span * (p.y - y_lo) / (y_hi - y_lo);
        svg += "<circle cx=\"" + detail::format_short(px) + "\" cy=\"" + detail::format_short(py) +
               "\" r=\"3\" fill=\"" + (p.over_parameterized ? "#d62728" : "#1f77b4") + "\"/>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline void write_text_file(const std::string& text, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << text;
}

}  // namespace layerlens
