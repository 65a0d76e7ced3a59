#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "vdmood/data.hpp"

using namespace vdmood;

namespace {

FeatureDataset small_labeled() {
    FeatureDataset ds;
    ds.features = Matrix(2, 3, {0.25, -1.5, 3.0, 1.0, 2.0, -0.125});
    ds.labels = {1, 0};
    return ds;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("csv parses the documented two-row example") {
    std::istringstream in("label,f0,f1,f2\n1,0.25,-1.5,3\n0,1,2,-0.125\n");
    FeatureDataset ds = read_features_csv(in, "inline");
    REQUIRE(ds.n() == 2);
    REQUIRE(ds.dim() == 3);
    REQUIRE(ds.labels == std::vector<int>{1, 0});
    REQUIRE(ds.features.at(0, 1) == -1.5);
    REQUIRE(ds.features.at(1, 2) == -0.125);
}

TEST_CASE("csv without label column parses as unlabeled") {
    std::istringstream in("f0,f1\n1.5,2.5\n-3,0\n");
    FeatureDataset ds = read_features_csv(in, "inline");
    REQUIRE_FALSE(ds.labeled());
    REQUIRE(ds.dim() == 2);
}

TEST_CASE("csv rejects malformed input") {
    auto parse = [](const std::string& s) {
        std::istringstream in(s);
        return read_features_csv(in, "inline");
    };
    REQUIRE_THROWS_AS(parse("label,f0\n1,2,3\n"), DataError);        // row length
    REQUIRE_THROWS_AS(parse("label,f0\n1,nan\n"), DataError);        // NaN
    REQUIRE_THROWS_AS(parse("label,f0\n1,abc\n"), DataError);        // non-numeric
    REQUIRE_THROWS_AS(parse("label,f1\n1,2\n"), DataError);          // wrong column name
    REQUIRE_THROWS_AS(parse("label,f0\n"), DataError);               // no rows
    REQUIRE_THROWS_AS(parse(""), DataError);                         // empty
    REQUIRE_THROWS_AS(parse("label,f0\n-1,2\n"), DataError);         // negative label
}

TEST_CASE("binary format round trips bit-exactly") {
    auto dir = testsupport::make_temp_dir("fvec");
    FeatureDataset ds = small_labeled();
    ds.features.at(0, 0) = 0.1;  // not exactly representable; still must round trip
    auto path = (dir / "x.fvec").string();
    write_features(path, ds);
    FeatureDataset back = read_features(path);
    REQUIRE(back.features.same_shape(ds.features));
    for (size_t i = 0; i < ds.features.size(); ++i)
        REQUIRE(back.features.data[i] == ds.features.data[i]);
    REQUIRE(back.labels == ds.labels);

    auto path2 = (dir / "y.fvec").string();
    write_features(path2, back);
    REQUIRE(slurp(path) == slurp(path2));
    std::filesystem::remove_all(dir);
}

TEST_CASE("csv and binary forms agree bit-exactly") {
    auto dir = testsupport::make_temp_dir("csvbin");
    FeatureDataset ds = small_labeled();
    ds.features.at(1, 1) = 1.0 / 3.0;
    write_features((dir / "x.csv").string(), ds);
    write_features((dir / "x.fvec").string(), ds);
    FeatureDataset a = read_features((dir / "x.csv").string());
    FeatureDataset b = read_features((dir / "x.fvec").string());
    for (size_t i = 0; i < a.features.size(); ++i)
        REQUIRE(a.features.data[i] == b.features.data[i]);
    REQUIRE(a.labels == b.labels);
    std::filesystem::remove_all(dir);
}

TEST_CASE("binary loader rejects corrupted input") {
    auto dir = testsupport::make_temp_dir("badbin");
    auto write_bytes = [&](const std::string& name, const std::string& bytes) {
        std::ofstream f(dir / name, std::ios::binary);
        f << bytes;
        return (dir / name).string();
    };
    REQUIRE_THROWS_AS(read_features(write_bytes("a.bin", "NOPE")), DataError);
    std::string truncated = "FVEC";
    truncated += std::string(4, '\0');
    REQUIRE_THROWS_AS(read_features(write_bytes("b.bin", truncated)), DataError);
    std::string bad_version = "FVEC";
    uint32_t v = 99;
    bad_version.append(reinterpret_cast<char*>(&v), 4);
    bad_version += std::string(12, '\0');
    REQUIRE_THROWS_AS(read_features(write_bytes("c.bin", bad_version)), DataError);
    REQUIRE_THROWS_AS(read_features((dir / "missing.bin").string()), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("normalization with own stats centers and scales") {
    SynthConfig cfg;
    cfg.kind = "gaussian";
    cfg.n = 500;
    cfg.d = 3;
    cfg.seed = 4;
    FeatureDataset ds = synthesize(cfg);
    for (int i = 0; i < ds.n(); ++i) ds.features.at(i, 1) = 3.0 * ds.features.at(i, 1) + 7.0;
    NormStats st = compute_norm_stats(ds);
    apply_normalization(ds, st);
    NormStats post = compute_norm_stats(ds);
    for (int j = 0; j < 3; ++j) {
        REQUIRE(std::fabs(post.mean[j]) < 1e-10);
        REQUIRE(std::fabs(post.std_dev[j] - 1.0) < 1e-10);
    }
}

TEST_CASE("constant dimensions are clamped and map to zero") {
    FeatureDataset ds;
    ds.features = Matrix(4, 2, {1, 5, 2, 5, 3, 5, 4, 5});
    NormStats st = compute_norm_stats(ds);
    REQUIRE(st.clamped_dims == std::vector<int>{1});
    REQUIRE(st.std_dev[1] == 1.0);
    apply_normalization(ds, st);
    for (int i = 0; i < 4; ++i) REQUIRE(ds.features.at(i, 1) == 0.0);
}

TEST_CASE("denormalization inverts normalization") {
    SynthConfig cfg;
    cfg.kind = "gmm2";
    cfg.n = 200;
    cfg.d = 2;
    cfg.seed = 9;
    FeatureDataset ds = synthesize(cfg);
    Matrix orig = ds.features;
    NormStats st = compute_norm_stats(ds);
    apply_normalization(ds, st);
    undo_normalization(ds);
    for (size_t i = 0; i < orig.size(); ++i)
        REQUIRE(std::fabs(ds.features.data[i] - orig.data[i]) < 1e-12);
    REQUIRE_THROWS_AS(undo_normalization(ds), DataError);
}

TEST_CASE("gaussian synth moments") {
    SynthConfig cfg;
    cfg.kind = "gaussian";
    cfg.n = 4000;
    cfg.d = 3;
    cfg.seed = 21;
    FeatureDataset ds = synthesize(cfg);
    NormStats st = compute_norm_stats(ds);
    for (int j = 0; j < 3; ++j) {
        REQUIRE(std::fabs(st.mean[j]) < 3.0 / std::sqrt(4000.0));
        REQUIRE(std::fabs(st.std_dev[j] - 1.0) < 0.06);
    }
    REQUIRE(ds.labels == std::vector<int>(4000, 0));
}

TEST_CASE("gmm2 synth cluster structure and k-means style recovery") {
    SynthConfig cfg;
    cfg.kind = "gmm2";
    cfg.n = 3000;
    cfg.d = 2;
    cfg.seed = 33;
    cfg.separation = 8.0;
    FeatureDataset ds = synthesize(cfg);

    // naive 2-means on the first coordinate
    double c0 = -1.0, c1 = 1.0;
    for (int iter = 0; iter < 50; ++iter) {
        double s0 = 0, s1 = 0;
        int n0 = 0, n1 = 0;
        for (int i = 0; i < ds.n(); ++i) {
            double x = ds.features.at(i, 0);
            if (std::fabs(x - c0) <= std::fabs(x - c1)) {
                s0 += x;
                ++n0;
            } else {
                s1 += x;
                ++n1;
            }
        }
        c0 = s0 / n0;
        c1 = s1 / n1;
    }
    if (c0 > c1) std::swap(c0, c1);
    REQUIRE(std::fabs(c0 + 4.0) < 0.15);
    REQUIRE(std::fabs(c1 - 4.0) < 0.15);

    int n0 = 0;
    for (int i = 0; i < ds.n(); ++i)
        if (ds.features.at(i, 0) < 0) ++n0;
    REQUIRE(std::fabs(n0 - 1500.0) < 3.0 * std::sqrt(3000.0 * 0.25));
    int l0 = 0;
    for (int l : ds.labels)
        if (l == 0) ++l0;
    REQUIRE(l0 == n0);  // well separated: sign of x0 recovers the label
    REQUIRE(ds.num_classes() == 2);
}

TEST_CASE("two moons requires d=2 and stays in range") {
    SynthConfig cfg;
    cfg.kind = "two-moons";
    cfg.n = 500;
    cfg.d = 3;
    REQUIRE_THROWS_AS(synthesize(cfg), UsageError);
    cfg.d = 2;
    FeatureDataset ds = synthesize(cfg);
    for (int i = 0; i < ds.n(); ++i) {
        REQUIRE(std::fabs(ds.features.at(i, 0)) < 3.0);
        REQUIRE(std::fabs(ds.features.at(i, 1)) < 3.0);
    }
    REQUIRE(ds.num_classes() == 2);
}

TEST_CASE("uniform box respects its bounds and is unlabeled") {
    SynthConfig cfg;
    cfg.kind = "uniform-box";
    cfg.n = 2000;
    cfg.d = 2;
    cfg.seed = 5;
    cfg.box_lo = {-2.0, 4.0};
    cfg.box_hi = {2.0, 12.0};
    FeatureDataset ds = synthesize(cfg);
    REQUIRE_FALSE(ds.labeled());
    double min0 = 1e9, max0 = -1e9;
    for (int i = 0; i < ds.n(); ++i) {
        REQUIRE(ds.features.at(i, 0) >= -2.0);
        REQUIRE(ds.features.at(i, 0) < 2.0);
        REQUIRE(ds.features.at(i, 1) >= 4.0);
        REQUIRE(ds.features.at(i, 1) < 12.0);
        min0 = std::min(min0, ds.features.at(i, 0));
        max0 = std::max(max0, ds.features.at(i, 0));
    }
    REQUIRE(min0 < -1.9);
    REQUIRE(max0 > 1.9);
    cfg.box_hi = {2.0, 3.0};
    cfg.box_lo = {2.0, 4.0};
    REQUIRE_THROWS_AS(synthesize(cfg), UsageError);
}

TEST_CASE("synthesis is deterministic in the seed") {
    SynthConfig cfg;
    cfg.kind = "gmm2";
    cfg.n = 100;
    cfg.d = 4;
    cfg.seed = 77;
    FeatureDataset a = synthesize(cfg);
    FeatureDataset b = synthesize(cfg);
    for (size_t i = 0; i < a.features.size(); ++i)
        REQUIRE(a.features.data[i] == b.features.data[i]);
    cfg.seed = 78;
    FeatureDataset c = synthesize(cfg);
    bool differ = false;
    for (size_t i = 0; i < a.features.size(); ++i)
        differ = differ || (a.features.data[i] != c.features.data[i]);
    REQUIRE(differ);
}

TEST_CASE("score files round trip") {
    auto dir = testsupport::make_temp_dir("scores");
    ScoreVector sv;
    sv.method = "el";
    sv.scores = {1.5, -2.25, 1.0 / 3.0};
    auto path = (dir / "s.csv").string();
    write_scores(path, sv);
    std::vector<double> back = read_scores(path);
    REQUIRE(back.size() == 3);
    for (size_t i = 0; i < back.size(); ++i) REQUIRE(back[i] == sv.scores[i]);
    std::filesystem::remove_all(dir);
}

TEST_CASE("logit sidecar must align with its data") {
    auto dir = testsupport::make_temp_dir("logits");
    FeatureDataset lg;
    lg.features = Matrix(3, 2, {1, 0, 0, 1, 2, 2});
    auto path = (dir / "l.fvec").string();
    write_features(path, lg);
    REQUIRE(read_logits(path, 3).rows == 3);
    REQUIRE_THROWS_AS(read_logits(path, 4), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("gmm2 analytic density integrates to one") {
    // 1-d Riemann over a wide interval
    double sep = 4.0, sd = 1.0;
    double sum = 0.0, dx = 0.01;
    for (double x = -12.0; x <= 12.0; x += dx) {
        double p[1] = {x};
        sum += std::exp(gmm2_logpdf(p, 1, sep, sd)) * dx;
    }
    REQUIRE(std::fabs(sum - 1.0) < 0.01);
}

TEST_CASE("gmm2 posterior logits recover the generating label") {
    SynthConfig cfg;
    cfg.kind = "gmm2";
    cfg.n = 500;
    cfg.d = 2;
    cfg.seed = 13;
    FeatureDataset ds = synthesize(cfg);
    Matrix lg = gmm2_class_logits(ds.features, cfg.separation, cfg.cluster_std);
    int hits = 0;
    for (int i = 0; i < ds.n(); ++i) {
        int pred = lg.at(i, 0) >= lg.at(i, 1) ? 0 : 1;
        if (pred == ds.labels[i]) ++hits;
    }
    REQUIRE(hits > 495);  // 8 sigma separation: essentially no confusions
}
