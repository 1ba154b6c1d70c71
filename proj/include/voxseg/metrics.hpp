#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxseg/morphology.hpp"

namespace voxseg {

// Dice similarity: 2|A n B| / (|A| + |B|); two empty masks count as a
// perfect match.
inline double dice(const mask3& a, const mask3& b) {
    if (!(a.dim() == b.dim())) fail_data("dice: mask dims differ");
    size_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool va = a.raw()[i] != 0, vb = b.raw()[i] != 0;
        na += va;
        nb += vb;
        inter += va && vb;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

inline mask3 class_mask(const label_map& m, int k) {
    mask3 out(m.dim(), m.spacing());
    for (size_t i = 0; i < m.size(); ++i) out.raw()[i] = m.raw()[i] == k;
    return out;
}

inline std::vector<double> dice_per_class(const label_map& pred, const label_map& truth) {
    if (!(pred.dim() == truth.dim())) fail_data("dice: label map dims differ");
    const int k = std::max(pred.num_classes, truth.num_classes);
    std::vector<size_t> np(size_t(k), 0), nt(size_t(k), 0), ni(size_t(k), 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        ++np[pred.raw()[i]];
        ++nt[truth.raw()[i]];
        if (pred.raw()[i] == truth.raw()[i]) ++ni[pred.raw()[i]];
    }
    std::vector<double> out(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c)
        out[size_t(c)] =
            (np[size_t(c)] + nt[size_t(c)]) == 0
                ? 1.0
                : 2.0 * double(ni[size_t(c)]) / double(np[size_t(c)] + nt[size_t(c)]);
    return out;
}

struct recall_fpr_result {
    double recall = 0.0;
    double fpr = 0.0;
};

// recall = |pred n truth| / |truth|; fpr over the universe complement of the
// truth (an empty complement defines fpr = 0). Asserts truth within universe.
inline recall_fpr_result recall_fpr(const mask3& pred, const mask3& truth_fg, const mask3& universe) {
    if (!(pred.dim() == truth_fg.dim()) || !(pred.dim() == universe.dim()))
        fail_data("recall_fpr: mask dims differ");
    size_t nt = 0, hit = 0, neg = 0, fp = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool t = truth_fg.raw()[i] != 0, p = pred.raw()[i] != 0, u = universe.raw()[i] != 0;
        if (t && !u) fail_data("recall_fpr: truth reaches outside the universe");
        if (t) {
            ++nt;
            hit += p;
        } else if (u) {
            ++neg;
            fp += p;
        }
    }
    if (nt == 0) fail_data("recall_fpr: empty truth mask");
    recall_fpr_result r;
    r.recall = double(hit) / double(nt);
    r.fpr = neg == 0 ? 0.0 : double(fp) / double(neg);
    return r;
}

struct sweep_row {
    int r = 0;
    double recall = 0.0;
    double fpr = 0.0;
};

struct sweep_result {
    std::vector<sweep_row> rows;
    int r_star = -1; // smallest r with recall >= threshold, -1 if never reached
};

// Recall/FPR of the dilated stage-1 foreground prediction as a function of
// the dilation radius; r* is the smallest radius reaching the recall target.
inline sweep_result dilation_sweep(const label_map& stage1_pred, const mask3& truth_fg,
                                   const mask3& universe, const std::vector<int>& r_range,
                                   double recall_threshold = 0.99) {
    if (r_range.empty()) fail_config("dilation_sweep: empty radius range");
    mask3 fg(stage1_pred.dim(), stage1_pred.spacing());
    for (size_t i = 0; i < stage1_pred.size(); ++i) fg.raw()[i] = stage1_pred.raw()[i] >= 1;
    sweep_result res;
    for (int r : r_range) {
        auto m = recall_fpr(dilate(fg, r), truth_fg, universe);
        res.rows.push_back({r, m.recall, m.fpr});
        if (res.r_star < 0 && m.recall >= recall_threshold) res.r_star = r;
    }
    return res;
}

// Percentages round half-up to one decimal, the format of the result tables.
inline double percent_1dp(double fraction) {
    return std::floor(fraction * 1000.0 + 0.5) / 10.0;
}

struct case_metrics {
    std::string case_id;
    int class_index = 0;
    double dice = 0.0;
    double recall = 0.0;
    double fpr = 0.0;
};

struct class_summary {
    int class_index = 0;
    double mean = 0.0, stddev = 0.0, median = 0.0, min = 0.0, max = 0.0;
};

inline class_summary summarize(int class_index, std::vector<double> values) {
    if (values.empty()) fail_data("summarize: no values");
    class_summary s;
    s.class_index = class_index;
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / double(values.size());
    double var = 0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.stddev = values.size() > 1 ? std::sqrt(var / double(values.size() - 1)) : 0.0;
    std::sort(values.begin(), values.end());
    s.min = values.front();
    s.max = values.back();
    const size_t n = values.size();
    s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    return s;
}

// Per-case metrics with stage/tiling provenance and stored aggregates; the
// aggregates must always be recomputable from the per-case rows.
struct segmentation_report {
    int stage = 1;
    tile_mode mode = tile_mode::nonoverlap;
    std::vector<case_metrics> per_case;
    std::vector<class_summary> summaries;

    void finalize() {
        summaries.clear();
        std::vector<int> classes;
        for (const auto& r : per_case)
            if (std::find(classes.begin(), classes.end(), r.class_index) == classes.end())
                classes.push_back(r.class_index);
        std::sort(classes.begin(), classes.end());
        for (int c : classes) {
            std::vector<double> values;
            for (const auto& r : per_case)
                if (r.class_index == c) values.push_back(r.dice);
            summaries.push_back(summarize(c, values));
        }
    }

    bool aggregates_consistent(double tol = 1e-12) const {
        segmentation_report copy = *this;
        copy.finalize();
        if (copy.summaries.size() != summaries.size()) return false;
        for (size_t i = 0; i < summaries.size(); ++i) {
            const auto& a = summaries[i];
            const auto& b = copy.summaries[i];
            if (a.class_index != b.class_index || std::fabs(a.mean - b.mean) > tol ||
                std::fabs(a.stddev - b.stddev) > tol || std::fabs(a.median - b.median) > tol ||
                std::fabs(a.min - b.min) > tol || std::fabs(a.max - b.max) > tol)
                return false;
        }
        return true;
    }

    double mean_dice(int class_index) const {
        for (const auto& s : summaries)
            if (s.class_index == class_index) return s.mean;
        fail_data("report has no summary for class " + std::to_string(class_index));
    }

    double mean_foreground_dice() const {
        double sum = 0;
        int n = 0;
        for (const auto& s : summaries)
            if (s.class_index >= 1) {
                sum += s.mean;
                ++n;
            }
        if (n == 0) fail_data("report has no foreground classes");
        return sum / n;
    }
};

namespace detail {

inline std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline void open_csv(std::ofstream& out, const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    out.open(path, std::ios::trunc);
    if (!out) fail_data("cannot write " + path);
}

} // namespace detail

// per_case.csv: case_id,class,dice,recall,fpr (sorted by case then class)
inline void write_per_case_csv(const std::vector<case_metrics>& rows, const std::string& path) {
    std::vector<case_metrics> sorted = rows;
    std::sort(sorted.begin(), sorted.end(), [](const case_metrics& a, const case_metrics& b) {
        return a.case_id != b.case_id ? a.case_id < b.case_id : a.class_index < b.class_index;
    });
    std::ofstream out;
    detail::open_csv(out, path);
    out << "case_id,class,dice,recall,fpr\n";
    for (const auto& r : sorted)
        out << r.case_id << "," << r.class_index << "," << detail::fmt6(r.dice) << ","
            << detail::fmt6(r.recall) << "," << detail::fmt6(r.fpr) << "\n";
}

// summary.csv: class,mean,std,median,min,max (fractional); the percentage
// forms, rounded half-up to one decimal, go to a sibling _pct file.
inline void write_summary_csv(const std::vector<class_summary>& rows, const std::string& path) {
    std::ofstream out;
    detail::open_csv(out, path);
    out << "class,mean,std,median,min,max\n";
    for (const auto& s : rows)
        out << s.class_index << "," << detail::fmt6(s.mean) << "," << detail::fmt6(s.stddev) << ","
            << detail::fmt6(s.median) << "," << detail::fmt6(s.min) << "," << detail::fmt6(s.max)
            << "\n";

    std::filesystem::path pct_path(path);
    pct_path.replace_filename(pct_path.stem().string() + "_pct.csv");
    std::ofstream pct;
    detail::open_csv(pct, pct_path.string());
    pct << "class,mean,std,median,min,max\n";
    for (const auto& s : rows) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%.1f,%.1f,%.1f,%.1f,%.1f\n", s.class_index,
                      percent_1dp(s.mean), percent_1dp(s.stddev), percent_1dp(s.median),
                      percent_1dp(s.min), percent_1dp(s.max));
        pct << buf;
    }
}

// sweep.csv: r,recall,fpr
inline void write_sweep_csv(const sweep_result& sweep, const std::string& path) {
    std::ofstream out;
    detail::open_csv(out, path);
    out << "r,recall,fpr\n";
    for (const auto& row : sweep.rows)
        out << row.r << "," << detail::fmt6(row.recall) << "," << detail::fmt6(row.fpr) << "\n";
}

} // namespace voxseg
