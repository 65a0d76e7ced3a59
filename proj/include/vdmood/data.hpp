#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vdmood/errors.hpp"
#include "vdmood/matrix.hpp"
#include "vdmood/rng.hpp"

namespace vdmood {

// Shortest round-trip decimal form; the same double always prints the same
// bytes, which keeps every emitted file reproducible.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

struct NormStats {
    std::vector<double> mean;
    std::vector<double> std_dev;          // population convention (divide by n)
    std::vector<int> clamped_dims;        // zero-variance dims forced to std 1
};

struct FeatureDataset {
    Matrix features;                      // n x d
    std::vector<int> labels;              // empty when unlabeled
    std::optional<NormStats> norm;        // stats this data was normalized with
    std::string provenance;

    int n() const { return features.rows; }
    int dim() const { return features.cols; }
    bool labeled() const { return !labels.empty(); }

    int num_classes() const {
        int k = 0;
        for (int l : labels) k = std::max(k, l + 1);
        return k;
    }
};

// ---- normalization ----

inline NormStats compute_norm_stats(const FeatureDataset& ds) {
    if (ds.n() == 0) throw DataError("normalize: empty dataset");
    NormStats s;
    s.mean.assign(ds.dim(), 0.0);
    s.std_dev.assign(ds.dim(), 0.0);
    for (int i = 0; i < ds.n(); ++i)
        for (int j = 0; j < ds.dim(); ++j) s.mean[j] += ds.features.at(i, j);
    for (double& m : s.mean) m /= ds.n();
    for (int i = 0; i < ds.n(); ++i)
        for (int j = 0; j < ds.dim(); ++j) {
            double d = ds.features.at(i, j) - s.mean[j];
            s.std_dev[j] += d * d;
        }
    for (int j = 0; j < ds.dim(); ++j) {
        s.std_dev[j] = std::sqrt(s.std_dev[j] / ds.n());
        if (s.std_dev[j] < 1e-12) {
            s.std_dev[j] = 1.0;
            s.clamped_dims.push_back(j);
        }
    }
    return s;
}

inline void apply_normalization(FeatureDataset& ds, const NormStats& s) {
    if (static_cast<int>(s.mean.size()) != ds.dim())
        throw DataError("normalize: stats dimension mismatch");
    for (int i = 0; i < ds.n(); ++i)
        for (int j = 0; j < ds.dim(); ++j)
            ds.features.at(i, j) = (ds.features.at(i, j) - s.mean[j]) / s.std_dev[j];
    ds.norm = s;
}

inline void undo_normalization(FeatureDataset& ds) {
    if (!ds.norm) throw DataError("denormalize: dataset carries no stats");
    const NormStats& s = *ds.norm;
    for (int i = 0; i < ds.n(); ++i)
        for (int j = 0; j < ds.dim(); ++j)
            ds.features.at(i, j) = ds.features.at(i, j) * s.std_dev[j] + s.mean[j];
    ds.norm.reset();
}

// ---- feature files ----
//
// Two interchangeable containers:
//   * CSV with header "label,f0,...,f{d-1}" (the label column is optional);
//   * binary "FVEC": magic, version u32, n u32, d u32, flags u32 (bit 0 =
//     labels present), features as little-endian f64 row-major, labels as u32.
// Files ending in .csv are treated as CSV, everything else as binary.

constexpr uint32_t kFvecVersion = 1;

inline bool path_is_csv(const std::string& path) {
    return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
}

namespace detail {

inline double parse_double_field(const std::string& field, const std::string& where) {
    double v = 0.0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw DataError("feature csv: bad number '" + field + "' at " + where);
    if (std::isnan(v)) throw DataError("feature csv: NaN at " + where);
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_raw(std::istream& is, const std::string& what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw DataError("feature file: truncated while reading " + what);
    return v;
}

}  // namespace detail

inline FeatureDataset read_features_csv(std::istream& is, const std::string& name) {
    std::string line;
    if (!std::getline(is, line)) throw DataError(name + ": empty file");
    auto header = detail::split_csv_line(line);
    bool labeled = !header.empty() && header[0] == "label";
    int first_feat = labeled ? 1 : 0;
    int d = static_cast<int>(header.size()) - first_feat;
    if (d <= 0) throw DataError(name + ": header has no feature columns");
    for (int j = 0; j < d; ++j)
        if (header[first_feat + j] != "f" + std::to_string(j))
            throw DataError(name + ": expected header column f" + std::to_string(j) + ", got '" +
                            header[first_feat + j] + "'");
    std::vector<double> values;
    std::vector<int> labels;
    int row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ++row;
        auto fields = detail::split_csv_line(line);
        std::string where = name + ":row " + std::to_string(row);
        if (static_cast<int>(fields.size()) != d + first_feat)
            throw DataError(where + ": expected " + std::to_string(d + first_feat) +
                            " fields, got " + std::to_string(fields.size()));
        if (labeled) {
            double l = detail::parse_double_field(fields[0], where);
            if (l < 0 || l != std::floor(l))
                throw DataError(where + ": label must be a nonnegative integer");
            labels.push_back(static_cast<int>(l));
        }
        for (int j = 0; j < d; ++j)
            values.push_back(detail::parse_double_field(fields[first_feat + j], where));
    }
    if (row == 0) throw DataError(name + ": no data rows");
    FeatureDataset ds;
    ds.features = Matrix(row, d);
    ds.features.data = std::move(values);
    ds.labels = std::move(labels);
    ds.provenance = name;
    return ds;
}

inline FeatureDataset read_features_fvec(std::istream& is, const std::string& name) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FVEC", 4) != 0)
        throw DataError(name + ": bad magic, not a feature file");
    uint32_t version = detail::read_raw<uint32_t>(is, "version");
    if (version != kFvecVersion)
        throw DataError(name + ": unsupported version " + std::to_string(version));
    uint32_t n = detail::read_raw<uint32_t>(is, "row count");
    uint32_t d = detail::read_raw<uint32_t>(is, "column count");
    uint32_t flags = detail::read_raw<uint32_t>(is, "flags");
    if (n == 0 || d == 0) throw DataError(name + ": empty shape");
    FeatureDataset ds;
    ds.features = Matrix(static_cast<int>(n), static_cast<int>(d));
    is.read(reinterpret_cast<char*>(ds.features.data.data()),
            static_cast<std::streamsize>(ds.features.size() * sizeof(double)));
    if (!is) throw DataError(name + ": truncated feature payload");
    if (flags & 1u) {
        ds.labels.resize(n);
        for (uint32_t i = 0; i < n; ++i)
            ds.labels[i] = static_cast<int>(detail::read_raw<uint32_t>(is, "label"));
    }
    if (!ds.features.all_finite()) throw DataError(name + ": non-finite feature value");
    ds.provenance = name;
    return ds;
}

inline FeatureDataset read_features(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open");
    if (path_is_csv(path)) return read_features_csv(f, path);
    return read_features_fvec(f, path);
}

inline void write_features_csv(std::ostream& os, const FeatureDataset& ds) {
    if (ds.labeled()) os << "label,";
    for (int j = 0; j < ds.dim(); ++j) os << "f" << j << (j + 1 < ds.dim() ? "," : "\n");
    for (int i = 0; i < ds.n(); ++i) {
        if (ds.labeled()) os << ds.labels[i] << ",";
        for (int j = 0; j < ds.dim(); ++j)
            os << format_double(ds.features.at(i, j)) << (j + 1 < ds.dim() ? "," : "\n");
    }
}

inline void write_features_fvec(std::ostream& os, const FeatureDataset& ds) {
    os.write("FVEC", 4);
    detail::write_raw(os, kFvecVersion);
    detail::write_raw(os, static_cast<uint32_t>(ds.n()));
    detail::write_raw(os, static_cast<uint32_t>(ds.dim()));
    detail::write_raw(os, static_cast<uint32_t>(ds.labeled() ? 1 : 0));
    os.write(reinterpret_cast<const char*>(ds.features.data.data()),
             static_cast<std::streamsize>(ds.features.size() * sizeof(double)));
    for (int l : ds.labels) detail::write_raw(os, static_cast<uint32_t>(l));
}

inline void write_features(const std::string& path, const FeatureDataset& ds) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open for writing");
    if (path_is_csv(path)) write_features_csv(f, ds);
    else write_features_fvec(f, ds);
    if (!f) throw DataError(path + ": write failed");
}

// Classifier logits ride in the same containers: a file with d = num_classes
// columns and no labels, row-aligned with its feature file.
inline Matrix read_logits(const std::string& path, int expected_rows) {
    FeatureDataset ds = read_features(path);
    if (ds.n() != expected_rows)
        throw DataError(path + ": logit rows (" + std::to_string(ds.n()) +
                        ") do not match data rows (" + std::to_string(expected_rows) + ")");
    return ds.features;
}

// ---- score files: CSV of (sample_id, score) ----

struct ScoreVector {
    std::string method;                   // el, pl, tkdl, baseline-*
    std::vector<double> scores;           // orientation: higher = more OOD
};

inline void write_scores(const std::string& path, const ScoreVector& sv) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "sample_id,score\n";
    for (size_t i = 0; i < sv.scores.size(); ++i)
        f << i << "," << format_double(sv.scores[i]) << "\n";
}

inline std::vector<double> read_scores(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(path + ": cannot open");
    std::string line;
    if (!std::getline(f, line) || detail::split_csv_line(line) != std::vector<std::string>{"sample_id", "score"})
        throw DataError(path + ": expected header sample_id,score");
    std::vector<double> out;
    int row = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        ++row;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 2) throw DataError(path + ": malformed row " + std::to_string(row));
        out.push_back(detail::parse_double_field(fields[1], path + ":row " + std::to_string(row)));
    }
    if (out.empty()) throw DataError(path + ": no scores");
    return out;
}

// ---- synthetic generators ----

struct SynthConfig {
    std::string kind = "gaussian";        // gaussian | gmm2 | two-moons | uniform-box
    int n = 1000;
    int d = 2;
    uint64_t seed = 0;
    double separation = 8.0;              // gmm2: distance between cluster means
    double cluster_std = 1.0;             // gmm2: within-cluster standard deviation
    double moon_noise = 0.1;
    std::vector<double> box_lo;           // uniform-box bounds, broadcast if size 1
    std::vector<double> box_hi;
};

namespace detail {
inline std::vector<double> broadcast_bound(const std::vector<double>& v, int d, double fallback) {
    if (v.empty()) return std::vector<double>(d, fallback);
    if (v.size() == 1) return std::vector<double>(d, v[0]);
    if (static_cast<int>(v.size()) != d)
        throw UsageError("uniform-box: bound length does not match dimension");
    return v;
}
}  // namespace detail

inline FeatureDataset synthesize(const SynthConfig& cfg) {
    if (cfg.n <= 0 || cfg.d <= 0) throw UsageError("synth: n and d must be positive");
    Rng rng(cfg.seed, 0x53594e54);  // "SYNT"
    FeatureDataset ds;
    ds.features = Matrix(cfg.n, cfg.d);
    ds.provenance = "synth:" + cfg.kind;
    if (cfg.kind == "gaussian") {
        for (auto& v : ds.features.data) v = rng.normal();
        ds.labels.assign(cfg.n, 0);
    } else if (cfg.kind == "gmm2") {
        ds.labels.resize(cfg.n);
        double half = cfg.separation / 2.0;
        for (int i = 0; i < cfg.n; ++i) {
            int cls = rng.uniform() < 0.5 ? 0 : 1;
            ds.labels[i] = cls;
            ds.features.at(i, 0) = (cls == 0 ? -half : half) + cfg.cluster_std * rng.normal();
            for (int j = 1; j < cfg.d; ++j)
                ds.features.at(i, j) = cfg.cluster_std * rng.normal();
        }
    } else if (cfg.kind == "two-moons") {
        if (cfg.d != 2) throw UsageError("two-moons: only defined for d = 2");
        ds.labels.resize(cfg.n);
        for (int i = 0; i < cfg.n; ++i) {
            int cls = rng.uniform() < 0.5 ? 0 : 1;
            double t = rng.uniform() * 3.14159265358979323846;
            double x = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
            double y = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
            ds.labels[i] = cls;
            ds.features.at(i, 0) = x + cfg.moon_noise * rng.normal();
            ds.features.at(i, 1) = y + cfg.moon_noise * rng.normal();
        }
    } else if (cfg.kind == "uniform-box") {
        auto lo = detail::broadcast_bound(cfg.box_lo, cfg.d, -1.0);
        auto hi = detail::broadcast_bound(cfg.box_hi, cfg.d, 1.0);
        for (int j = 0; j < cfg.d; ++j)
            if (!(hi[j] > lo[j])) throw UsageError("uniform-box: hi must exceed lo");
        for (int i = 0; i < cfg.n; ++i)
            for (int j = 0; j < cfg.d; ++j)
                ds.features.at(i, j) = lo[j] + (hi[j] - lo[j]) * rng.uniform();
        // OOD stand-in: deliberately unlabeled.
    } else {
        throw UsageError("synth: unknown kind '" + cfg.kind + "'");
    }
    return ds;
}

// Analytic log-density of the gmm2 generator, for oracle-style checks.
inline double gmm2_logpdf(const double* x, int d, double separation, double cluster_std) {
    double half = separation / 2.0, s2 = cluster_std * cluster_std;
    auto comp = [&](double cx) {
        double q = (x[0] - cx) * (x[0] - cx);
        for (int j = 1; j < d; ++j) q += x[j] * x[j];
        return -0.5 * q / s2 - 0.5 * d * std::log(2.0 * 3.14159265358979323846 * s2);
    };
    double a = comp(-half), b = comp(half);
    double m = std::max(a, b);
    return m + std::log(0.5 * (std::exp(a - m) + std::exp(b - m)));
}

// Class-posterior logits under the gmm2 generator; a stand-in for an encoder's
// classification head on desk-scale runs.
inline Matrix gmm2_class_logits(const Matrix& features, double separation, double cluster_std) {
    Matrix out(features.rows, 2);
    double half = separation / 2.0, s2 = cluster_std * cluster_std;
    for (int i = 0; i < features.rows; ++i) {
        double q0 = (features.at(i, 0) + half) * (features.at(i, 0) + half);
        double q1 = (features.at(i, 0) - half) * (features.at(i, 0) - half);
        out.at(i, 0) = -0.5 * q0 / s2;
        out.at(i, 1) = -0.5 * q1 / s2;
    }
    return out;
}

}  // namespace vdmood
