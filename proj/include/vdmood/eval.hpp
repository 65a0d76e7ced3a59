#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vdmood/data.hpp"
#include "vdmood/errors.hpp"
#include "vdmood/matrix.hpp"

namespace vdmood {

// Detection metrics over "higher = more OOD" score vectors, fractional method
// ranking, and a JSON report with per-method score histograms.

namespace detail {

inline void require_scores(const std::vector<double>& v, const char* who) {
    if (v.empty()) throw UsageError(std::string(who) + ": empty score vector");
    for (double x : v)
        if (!std::isfinite(x)) throw DataError(std::string(who) + ": non-finite score");
}

// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> midranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        double shared = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) r[idx[k]] = shared;
        i = j + 1;
    }
    return r;
}

}  // namespace detail

// Mann-Whitney form: P(ood > ind) with half credit for ties; OOD positive.
inline double auroc(const std::vector<double>& ind, const std::vector<double>& ood) {
    detail::require_scores(ind, "auroc");
    detail::require_scores(ood, "auroc");
    std::vector<double> pooled(ind);
    pooled.insert(pooled.end(), ood.begin(), ood.end());
    std::vector<double> r = detail::midranks(pooled);
    double rank_sum = 0.0;
    for (size_t i = ind.size(); i < pooled.size(); ++i) rank_sum += r[i];
    double no = static_cast<double>(ood.size()), ni = static_cast<double>(ind.size());
    double u = rank_sum - no * (no + 1.0) / 2.0;
    return u / (no * ni);
}

// Threshold at the ceil(0.95 n)-th smallest InD score (no interpolation), then
// the fraction of OOD at or below it. InD sits below the threshold: scores
// read "higher = more OOD".
inline double fpr_at_95_tpr(const std::vector<double>& ind, const std::vector<double>& ood) {
    detail::require_scores(ind, "fpr95");
    detail::require_scores(ood, "fpr95");
    std::vector<double> s(ind);
    std::sort(s.begin(), s.end());
    size_t k = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(s.size())));
    double tau = s[k - 1];
    size_t fp = 0;
    for (double o : ood)
        if (o <= tau) ++fp;
    return static_cast<double>(fp) / static_cast<double>(ood.size());
}

// Per dataset (column) rank the methods (rows), 1 = best under the given
// direction, ties averaged; return each method's mean rank across datasets.
inline std::vector<double> average_rank(const Matrix& table, bool higher_is_better) {
    if (table.rows < 1 || table.cols < 1) throw UsageError("rank: empty table");
    for (double v : table.data)
        if (!std::isfinite(v)) throw UsageError("rank: missing table cell");
    std::vector<double> mean(table.rows, 0.0);
    for (int j = 0; j < table.cols; ++j) {
        std::vector<double> col(table.rows);
        for (int i = 0; i < table.rows; ++i)
            col[i] = higher_is_better ? -table.at(i, j) : table.at(i, j);
        std::vector<double> r = detail::midranks(col);
        for (int i = 0; i < table.rows; ++i) mean[i] += r[i] / table.cols;
    }
    return mean;
}

// ---- histogram + report emission ----

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::string> series;
    std::vector<std::vector<int>> counts;  // series x bins
};

// Equal-width bins spanning the pooled range of every series; a degenerate
// range widens to a unit interval so single-valued scores still land in-bin.
inline Histogram pooled_histogram(
    const std::vector<std::pair<std::string, const std::vector<double>*>>& series, int bins = 64) {
    if (bins < 1) throw UsageError("histogram: bins must be positive");
    Histogram h;
    h.lo = std::numeric_limits<double>::infinity();
    h.hi = -h.lo;
    for (const auto& [name, v] : series) {
        h.series.push_back(name);
        for (double x : *v) {
            h.lo = std::min(h.lo, x);
            h.hi = std::max(h.hi, x);
        }
    }
    if (!(h.lo <= h.hi)) {  // every series empty
        h.lo = 0.0;
        h.hi = 1.0;
    } else if (h.lo == h.hi) {
        h.lo -= 0.5;
        h.hi += 0.5;
    }
    double width = (h.hi - h.lo) / bins;
    for (const auto& [name, v] : series) {
        std::vector<int> row(bins, 0);
        for (double x : *v) {
            int b = static_cast<int>((x - h.lo) / width);
            ++row[std::clamp(b, 0, bins - 1)];
        }
        h.counts.push_back(std::move(row));
    }
    return h;
}

struct MethodScores {
    std::string method;
    std::vector<double> train;             // InD training-split scores (histogram only)
    std::vector<double> test;              // InD test-split scores (metric reference)
    std::vector<std::vector<double>> ood;  // parallel to ReportInput::ood_names
};

struct ReportInput {
    std::vector<std::string> ood_names;
    std::vector<std::string> ood_groups;   // "near" | "far" | "" per dataset; may be empty
    std::vector<MethodScores> methods;
};

namespace detail {

inline void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
    std::ofstream out(path);
    if (!out) throw DataError("eval: cannot write " + path.string());
    double width = (h.hi - h.lo) / static_cast<double>(h.counts.empty() ? 1 : h.counts[0].size());
    out << "bin_lo,bin_hi";
    for (const std::string& s : h.series) out << "," << s;
    out << "\n";
    size_t bins = h.counts.empty() ? 0 : h.counts[0].size();
    for (size_t b = 0; b < bins; ++b) {
        out << format_double(h.lo + width * static_cast<double>(b)) << ","
            << format_double(h.lo + width * static_cast<double>(b + 1));
        for (const auto& row : h.counts) out << "," << row[b];
        out << "\n";
    }
    if (!out) throw DataError("eval: cannot write " + path.string());
}

}  // namespace detail

// Computes every metric cell, group means, and average ranks; writes the JSON
// report plus one histogram CSV per method next to it, and returns the JSON.
inline nlohmann::ordered_json write_report(const ReportInput& in,
                                           const std::filesystem::path& report_path) {
    if (in.methods.empty()) throw UsageError("eval: no methods to report");
    if (!in.ood_groups.empty() && in.ood_groups.size() != in.ood_names.size())
        throw UsageError("eval: group list does not match the dataset list");
    size_t n_ood = in.ood_names.size();
    for (const MethodScores& m : in.methods) {
        detail::require_scores(m.test, "eval");
        if (m.ood.size() != n_ood)
            throw UsageError("eval: method " + m.method + " scores do not match the dataset list");
        for (const auto& v : m.ood) detail::require_scores(v, "eval");
        for (double x : m.train)
            if (!std::isfinite(x)) throw DataError("eval: non-finite score");
    }

    size_t n_methods = in.methods.size();
    Matrix auroc_table(static_cast<int>(n_methods), static_cast<int>(n_ood));
    Matrix fpr_table(static_cast<int>(n_methods), static_cast<int>(n_ood));
    for (size_t mi = 0; mi < n_methods; ++mi)
        for (size_t di = 0; di < n_ood; ++di) {
            auroc_table.at(mi, di) = auroc(in.methods[mi].test, in.methods[mi].ood[di]);
            fpr_table.at(mi, di) = fpr_at_95_tpr(in.methods[mi].test, in.methods[mi].ood[di]);
        }

    nlohmann::ordered_json report;
    report["schema"] = 1;
    report["counts"]["train"] = in.methods[0].train.size();
    report["counts"]["test"] = in.methods[0].test.size();

    report["datasets"] = nlohmann::ordered_json::array();
    for (size_t di = 0; di < n_ood; ++di) {
        nlohmann::ordered_json d;
        d["name"] = in.ood_names[di];
        d["group"] = in.ood_groups.empty() ? "" : in.ood_groups[di];
        d["count"] = in.methods[0].ood[di].size();
        report["datasets"].push_back(d);
    }

    std::filesystem::path dir = report_path.parent_path();
    std::string stem = report_path.stem().string();

    report["methods"] = nlohmann::ordered_json::array();
    for (size_t mi = 0; mi < n_methods; ++mi) {
        const MethodScores& m = in.methods[mi];
        nlohmann::ordered_json mj;
        mj["name"] = m.method;
        mj["per_dataset"] = nlohmann::ordered_json::array();
        for (size_t di = 0; di < n_ood; ++di) {
            nlohmann::ordered_json cell;
            cell["dataset"] = in.ood_names[di];
            cell["auroc"] = auroc_table.at(mi, di);
            cell["fpr95"] = fpr_table.at(mi, di);
            mj["per_dataset"].push_back(cell);
        }

        // arithmetic means over the member datasets of each named group
        mj["group_means"] = nlohmann::ordered_json::object();
        for (const char* g : {"near", "far"}) {
            double a = 0.0, f = 0.0;
            int members = 0;
            for (size_t di = 0; di < in.ood_groups.size(); ++di)
                if (in.ood_groups[di] == g) {
                    a += auroc_table.at(mi, di);
                    f += fpr_table.at(mi, di);
                    ++members;
                }
            if (members > 0) {
                mj["group_means"][g]["auroc"] = a / members;
                mj["group_means"][g]["fpr95"] = f / members;
            }
        }

        std::vector<std::pair<std::string, const std::vector<double>*>> series;
        series.emplace_back("train", &m.train);
        series.emplace_back("test", &m.test);
        for (size_t di = 0; di < n_ood; ++di)
            series.emplace_back(in.ood_names[di], &m.ood[di]);
        Histogram h = pooled_histogram(series);
        std::string hist_name = stem + "_hist_" + m.method + ".csv";
        detail::write_histogram_csv(dir / hist_name, h);
        mj["histogram"] = hist_name;
        report["methods"].push_back(mj);
    }

    // mean ordinal position over datasets per metric; overall averages both
    if (n_ood > 0) {
        std::vector<double> ra = average_rank(auroc_table, true);
        std::vector<double> rf = average_rank(fpr_table, false);
        report["average_rank"] = nlohmann::ordered_json::array();
        for (size_t mi = 0; mi < n_methods; ++mi) {
            nlohmann::ordered_json r;
            r["name"] = in.methods[mi].method;
            r["auroc"] = ra[mi];
            r["fpr95"] = rf[mi];
            r["overall"] = 0.5 * (ra[mi] + rf[mi]);
            report["average_rank"].push_back(r);
        }
    }

    std::ofstream out(report_path);
    if (!out) throw DataError("eval: cannot write " + report_path.string());
    out << report.dump(2) << "\n";
    if (!out) throw DataError("eval: cannot write " + report_path.string());
    return report;
}

}  // namespace vdmood
