#pragma once

// Temporal pattern mining: each intervention collapses to a 4-window sign
// vector, rows are ordered by average-linkage agglomerative clustering under
// a per-window disagreement distance, and heatmaps are emitted as CSV plus an
// SVG with the red/blue/gray color key (lighter gray = missing).

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vitalcast/evaluation.hpp"

namespace vitalcast {

inline constexpr int kSignMissing = -9;

struct SignVector {
    std::string example_id;
    std::string user_id;
    std::string category;
    std::int64_t end_minute = 0;
    Metric metric = Metric::Rmssd;
    std::array<int, 4> cell{};  // -1/0/+1 or kSignMissing

    bool missing(int w) const { return cell[static_cast<std::size_t>(w)] == kSignMissing; }
};

// Majority vote among non-neutral minutes; 0 when every valid minute
// abstains or the vote ties; missing without any valid minutes.
inline int window_sign(const std::vector<int>& signs, const std::vector<std::uint8_t>& valid,
                       const Window& w) {
    int pos = 0, neg = 0, seen = 0;
    for (int k = w.lo; k < w.hi && k < static_cast<int>(signs.size()); ++k) {
        if (!valid[static_cast<std::size_t>(k)]) continue;
        ++seen;
        if (signs[static_cast<std::size_t>(k)] > 0) ++pos;
        if (signs[static_cast<std::size_t>(k)] < 0) ++neg;
    }
    if (seen == 0) return kSignMissing;
    if (pos > neg) return 1;
    if (neg > pos) return -1;
    return 0;
}

// Mean per-window disagreement: 0 for equal entries (including both missing),
// 1 for differing signs, 0.5 when exactly one side is missing.
inline double sign_vector_distance(const SignVector& a, const SignVector& b) {
    double acc = 0.0;
    for (int w = 0; w < 4; ++w) {
        bool ma = a.missing(w), mb = b.missing(w);
        if (ma && mb) continue;
        if (ma != mb) {
            acc += 0.5;
        } else if (a.cell[static_cast<std::size_t>(w)] != b.cell[static_cast<std::size_t>(w)]) {
            acc += 1.0;
        }
    }
    return acc / 4.0;
}

// Average-linkage agglomerative clustering with a deterministic leaf order:
// merge ties and child ordering resolve by (earliest end time, example id),
// so the output is invariant to input permutation.
inline std::vector<std::size_t> cluster_rows(const std::vector<SignVector>& vecs) {
    std::size_t n = vecs.size();
    if (n == 0) return {};

    struct Cluster {
        std::vector<std::size_t> leaves;  // ordered
        std::int64_t min_end;
        std::string min_id;
        double size;
        bool alive = true;
    };
    std::vector<Cluster> cl;
    cl.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        cl.push_back({{i}, vecs[i].end_minute, vecs[i].example_id, 1.0, true});
    }
    // pairwise distance matrix over live clusters (indexed by cluster id)
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            dist[i][j] = dist[j][i] = sign_vector_distance(vecs[i], vecs[j]);
        }
    }

    auto key_less = [&](const Cluster& a, const Cluster& b) {
        if (a.min_end != b.min_end) return a.min_end < b.min_end;
        return a.min_id < b.min_id;
    };

    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < n; ++i) live.push_back(i);

    while (live.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t a = 0; a < live.size(); ++a) {
            for (std::size_t b = a + 1; b < live.size(); ++b) {
                std::size_t i = live[a], j = live[b];
                double d = dist[i][j];
                const Cluster* lo = key_less(cl[i], cl[j]) ? &cl[i] : &cl[j];
                const Cluster* hi = key_less(cl[i], cl[j]) ? &cl[j] : &cl[i];
                bool better = d < best - 1e-12;
                if (!better && std::abs(d - best) <= 1e-12) {
                    const Cluster* cur_lo = key_less(cl[bi], cl[bj]) ? &cl[bi] : &cl[bj];
                    const Cluster* cur_hi = key_less(cl[bi], cl[bj]) ? &cl[bj] : &cl[bi];
                    if (key_less(*lo, *cur_lo) ||
                        (!key_less(*cur_lo, *lo) && key_less(*hi, *cur_hi))) {
                        better = true;
                    }
                }
                if (better) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        // merge bj into a new cluster; children ordered by key
        Cluster merged;
        const Cluster& first = key_less(cl[bi], cl[bj]) ? cl[bi] : cl[bj];
        const Cluster& second = key_less(cl[bi], cl[bj]) ? cl[bj] : cl[bi];
        merged.leaves = first.leaves;
        merged.leaves.insert(merged.leaves.end(), second.leaves.begin(), second.leaves.end());
        merged.min_end = std::min(first.min_end, second.min_end);
        merged.min_id = key_less(first, second) ? first.min_id : second.min_id;
        merged.size = first.size + second.size;

        std::size_t id = cl.size();
        // Lance-Williams update for unweighted average linkage
        dist.push_back(std::vector<double>(cl.size() + 1, 0.0));
        for (auto& row : dist) row.resize(cl.size() + 1, 0.0);
        for (std::size_t k : live) {
            if (k == bi || k == bj) continue;
            double d = (cl[bi].size * dist[bi][k] + cl[bj].size * dist[bj][k]) /
                       (cl[bi].size + cl[bj].size);
            dist[id][k] = dist[k][id] = d;
        }
        cl[bi].alive = false;
        cl[bj].alive = false;
        cl.push_back(std::move(merged));
        std::vector<std::size_t> next;
        for (std::size_t k : live) {
            if (k != bi && k != bj) next.push_back(k);
        }
        next.push_back(id);
        live = std::move(next);
    }
    return cl[live[0]].leaves;
}

// Builds per-(metric, variant) sign vectors from evaluated examples.
// `predicted` selects the model's calls; otherwise the actual signs.
inline std::vector<SignVector> make_sign_vectors(const std::vector<EvaluatedExample>& evaluated,
                                                 Metric metric, bool predicted,
                                                 const WindowSet& ws = {}) {
    std::vector<SignVector> out;
    int m = static_cast<int>(metric);
    for (const auto& ee : evaluated) {
        SignVector v;
        v.example_id = ee.example->id();
        v.user_id = ee.example->user_id;
        v.category = category_name(ee.example->category);
        v.end_minute = ee.example->t1;
        v.metric = metric;
        std::vector<int> signs(static_cast<std::size_t>(ee.example->horizon), 0);
        std::vector<std::uint8_t> valid(static_cast<std::size_t>(ee.example->horizon), 0);
        for (int k = 0; k < ee.example->horizon; ++k) {
            bool mv = ee.minute_valid(m, k);
            valid[static_cast<std::size_t>(k)] = mv ? 1 : 0;
            signs[static_cast<std::size_t>(k)] = predicted ? ee.s_p(m, k) : ee.s_a(m, k);
        }
        for (int w = 0; w < 4; ++w) {
            v.cell[static_cast<std::size_t>(w)] =
                window_sign(signs, valid, ws.windows[static_cast<std::size_t>(w)]);
        }
        out.push_back(std::move(v));
    }
    return out;
}

inline std::string heatmap_to_csv(const std::vector<SignVector>& vecs,
                                  const std::vector<std::size_t>& order, const WindowSet& ws = {}) {
    std::string out = "example_id,user_id,category";
    for (int w = 0; w < 4; ++w) out += "," + ws.windows[static_cast<std::size_t>(w)].label();
    out += "\n";
    for (std::size_t idx : order) {
        const SignVector& v = vecs[idx];
        out += csv_escape(v.example_id) + "," + csv_escape(v.user_id) + "," +
               csv_escape(v.category);
        for (int w = 0; w < 4; ++w) {
            out += ",";
            out += v.missing(w) ? "NA" : std::to_string(v.cell[static_cast<std::size_t>(w)]);
        }
        out += "\n";
    }
    return out;
}

// Fig-style color key: red positive, blue negative, gray neutral, lighter
// gray missing. Cells carry data-sign attributes so tests can parse them.
inline const char* heatmap_cell_color(int cell) {
    if (cell == kSignMissing) return "#d9d9d9";
    if (cell > 0) return "#d62728";
    if (cell < 0) return "#1f77b4";
    return "#7f7f7f";
}

inline std::string heatmap_to_svg(const std::vector<SignVector>& vecs,
                                  const std::vector<std::size_t>& order, const std::string& title,
                                  const WindowSet& ws = {}) {
    const int cell_w = 56, cell_h = 14, left = 160, top = 40;
    int height = top + cell_h * static_cast<int>(order.size()) + 20;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(left + 4 * cell_w + 30) + "\" height=\"" +
                      std::to_string(height) + "\">\n";
    svg += "<text x=\"8\" y=\"16\" font-size=\"13\">" + title + "</text>\n";
    for (int w = 0; w < 4; ++w) {
        svg += "<text x=\"" + std::to_string(left + w * cell_w + 6) + "\" y=\"" +
               std::to_string(top - 6) + "\" font-size=\"10\">" +
               ws.windows[static_cast<std::size_t>(w)].label() + "</text>\n";
    }
    int row = 0;
    for (std::size_t idx : order) {
        const SignVector& v = vecs[idx];
        svg += "<text x=\"4\" y=\"" + std::to_string(top + row * cell_h + 11) +
               "\" font-size=\"8\">" + v.example_id + "</text>\n";
        for (int w = 0; w < 4; ++w) {
            int cell = v.cell[static_cast<std::size_t>(w)];
            std::string sign_attr = v.missing(w) ? "NA" : std::to_string(cell);
            svg += "<rect x=\"" + std::to_string(left + w * cell_w) + "\" y=\"" +
                   std::to_string(top + row * cell_h) + "\" width=\"" +
                   std::to_string(cell_w - 2) + "\" height=\"" + std::to_string(cell_h - 2) +
                   "\" fill=\"" + heatmap_cell_color(cell) + "\" data-sign=\"" + sign_attr +
                   "\"/>\n";
        }
        ++row;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace vitalcast
