#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "support.hpp"
#include "vdmood/checkpoint.hpp"
#include "vdmood/denoiser.hpp"
#include "vdmood/rng.hpp"
#include "vdmood/tape.hpp"

using namespace vdmood;

namespace {

// Reference forward pass written straight from the architecture description,
// sharing no code with DenoiserModel::build. Plain loops throughout.
Matrix shadow_forward(const DenoiserModel& model, const Matrix& z, const std::vector<double>& ts,
                      const std::vector<int>& ids, bool use_residual = true) {
    const DenoiserConfig& cfg = model.config();
    auto ps = model.parameters();
    size_t p = 0;
    const Matrix& time_w = *ps[p++];
    const Matrix& time_b = *ps[p++];
    const Matrix* class_table = cfg.num_classes > 0 ? ps[p++] : nullptr;
    struct B {
        const Matrix *w, *b, *cond, *gain, *bias;
    };
    std::vector<B> blocks;
    for (size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
        B b{ps[p], ps[p + 1], ps[p + 2], ps[p + 3], ps[p + 4]};
        blocks.push_back(b);
        p += 5;
    }
    const Matrix& out_w = *ps[p++];
    const Matrix& out_b = *ps[p++];

    auto matvec = [](const std::vector<double>& x, const Matrix& w) {
        std::vector<double> y(w.cols, 0.0);
        for (int j = 0; j < w.cols; ++j)
            for (int k = 0; k < w.rows; ++k) y[j] += x[k] * w.at(k, j);
        return y;
    };

    int d = cfg.input_dim;
    Matrix out(z.rows, d);
    for (int r = 0; r < z.rows; ++r) {
        // fourier-augmented input
        double w0 = std::pow(2.0, cfg.fourier_n) * 3.14159265358979323846;
        std::vector<double> cur;
        for (int j = 0; j < d; ++j) cur.push_back(z.at(r, j));
        for (int j = 0; j < d; ++j) cur.push_back(std::sin(w0 * z.at(r, j)));
        for (int j = 0; j < d; ++j) cur.push_back(std::cos(w0 * z.at(r, j)));

        // conditioning: sinusoidal time code through a learned map, plus class row
        int te = cfg.time_embed_dim, half = te / 2;
        std::vector<double> raw(te);
        for (int k = 0; k < half; ++k) {
            double frac = half > 1 ? static_cast<double>(k) / (half - 1) : 0.0;
            double freq = 2.0 * 3.14159265358979323846 * std::exp(frac * std::log(30.0));
            raw[k] = std::sin(freq * ts[r]);
            raw[half + k] = std::cos(freq * ts[r]);
        }
        std::vector<double> e = matvec(raw, time_w);
        for (int j = 0; j < te; ++j) e[j] += time_b.at(0, j);
        if (class_table && !ids.empty() && ids[r] >= 0)
            for (int j = 0; j < te; ++j) e[j] += class_table->at(ids[r], j);

        std::vector<std::vector<double>> saved;
        int nblocks = static_cast<int>(blocks.size());
        for (int i = 0; i < nblocks; ++i) {
            std::vector<double> pre = matvec(cur, *blocks[i].w);
            std::vector<double> ce = matvec(e, *blocks[i].cond);
            for (size_t j = 0; j < pre.size(); ++j) pre[j] += blocks[i].b->at(0, j) + ce[j];
            double mean = 0.0, var = 0.0;
            for (double v : pre) mean += v;
            mean /= pre.size();
            for (double v : pre) var += (v - mean) * (v - mean);
            var /= pre.size();
            double inv = 1.0 / std::sqrt(var + 1e-5);
            std::vector<double> act(pre.size());
            for (size_t j = 0; j < pre.size(); ++j) {
                double y = (pre[j] - mean) * inv * blocks[i].gain->at(0, j) +
                           blocks[i].bias->at(0, j);
                act[j] = y * 0.5 * std::erfc(-y / std::sqrt(2.0));
            }
            int mirror = nblocks - 1 - i;
            if (use_residual && mirror < i && cfg.hidden_dims[mirror] == cfg.hidden_dims[i])
                for (size_t j = 0; j < act.size(); ++j) act[j] += saved[mirror][j];
            saved.push_back(act);
            cur = act;
        }
        std::vector<double> y = matvec(cur, out_w);
        for (int j = 0; j < d; ++j) out.at(r, j) = y[j] + out_b.at(0, j);
    }
    return out;
}

Matrix run_model(const DenoiserModel& model, const Matrix& z, const std::vector<double>& ts,
                 const std::vector<int>& ids) {
    Tape tape;
    DenoiserTapeIds tids = model.register_params(tape, false);
    Matrix t_col(z.rows, 1);
    for (int r = 0; r < z.rows; ++r) t_col.at(r, 0) = ts[r];
    return tape.value(model.build(tape, tape.constant(z), t_col, ids, tids));
}

void randomize(DenoiserModel& model, uint64_t seed, bool include_class_table) {
    Rng rng(seed, 7);
    auto ps = model.parameters();
    size_t class_idx = model.config().num_classes > 0 ? 2 : SIZE_MAX;
    for (size_t i = 0; i < ps.size(); ++i) {
        if (i == class_idx && !include_class_table) continue;
        for (double& v : ps[i]->data) v = 0.4 * rng.normal();
    }
}

}  // namespace

TEST_CASE("time embedding hand values at t = 0") {
    Matrix e = time_embedding(0.0, 8);
    for (int k = 0; k < 4; ++k) REQUIRE(e.at(0, k) == 0.0);
    for (int k = 4; k < 8; ++k) REQUIRE(e.at(0, k) == 1.0);
}

TEST_CASE("time embedding frequencies span 1x to 30x") {
    // dim 4: channels are sin(2*pi*t), sin(60*pi*t), cos(2*pi*t), cos(60*pi*t)
    Matrix e = time_embedding(0.25, 4);
    REQUIRE(e.at(0, 0) == Catch::Approx(1.0).margin(1e-12));           // sin(pi/2)
    REQUIRE(std::fabs(e.at(0, 1)) < 1e-12);                            // sin(15 pi)
    REQUIRE(std::fabs(e.at(0, 2)) < 1e-12);                            // cos(pi/2)
    REQUIRE(e.at(0, 3) == Catch::Approx(-1.0).margin(1e-12));          // cos(15 pi)
}

TEST_CASE("time embedding is Lipschitz in t") {
    // highest angular frequency is 60*pi ~ 188.5, so a 1e-6 step moves the
    // 128-dim embedding by at most ~ 1e-6 * 188.5 * sqrt(128) < 1e-3
    for (double t : {0.0, 0.3, 0.7, 0.999}) {
        Matrix a = time_embedding(t, 128);
        Matrix b = time_embedding(t + 1e-6, 128);
        double dist = 0.0;
        for (size_t i = 0; i < a.size(); ++i)
            dist += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
        REQUIRE(std::sqrt(dist) < 1e-3);
    }
    Matrix x = time_embedding(0.37, 64), y = time_embedding(0.37, 64);
    REQUIRE(x.data == y.data);
}

TEST_CASE("fresh model predicts exactly zero noise") {
    DenoiserConfig cfg;
    cfg.input_dim = 3;
    cfg.num_classes = 2;
    cfg.time_embed_dim = cfg.class_embed_dim = 8;
    cfg.hidden_dims = {16, 8, 16};
    DenoiserModel model(cfg, 123);
    Rng rng(9, 0);
    Matrix z(1, 3);
    for (double t : {0.0, 0.25, 1.0}) {
        for (double& v : z.data) v = 2.0 * rng.normal();
        Matrix eps = model.predict_noise(z, t, 1);
        for (double v : eps.data) REQUIRE(v == 0.0);
    }
}

TEST_CASE("forward pass matches a reference implementation") {
    SECTION("unconditional with mirrored residuals") {
        DenoiserConfig cfg;
        cfg.input_dim = 2;
        cfg.time_embed_dim = cfg.class_embed_dim = 4;
        cfg.hidden_dims = {8, 4, 8};
        DenoiserModel model(cfg, 5);
        randomize(model, 42, true);
        Matrix z(3, 2, {0.3, -1.1, 0.0, 2.4, -0.7, 0.05});
        std::vector<double> ts{0.1, 0.5, 0.9};
        Matrix got = run_model(model, z, ts, {});
        Matrix want = shadow_forward(model, z, ts, {});
        for (size_t i = 0; i < got.size(); ++i)
            REQUIRE(got.data[i] == Catch::Approx(want.data[i]).margin(1e-12).epsilon(1e-12));
    }
    SECTION("conditional with a null row in the batch") {
        DenoiserConfig cfg;
        cfg.input_dim = 3;
        cfg.num_classes = 4;
        cfg.time_embed_dim = cfg.class_embed_dim = 6;
        cfg.hidden_dims = {6, 5};
        DenoiserModel model(cfg, 5);
        randomize(model, 77, true);
        Matrix z(3, 3, {0.2, 0.4, -0.6, 1.5, -0.3, 0.0, -2.0, 0.8, 0.33});
        std::vector<double> ts{0.0, 0.42, 1.0};
        std::vector<int> ids{-1, 0, 3};
        Matrix got = run_model(model, z, ts, ids);
        Matrix want = shadow_forward(model, z, ts, ids);
        for (size_t i = 0; i < got.size(); ++i)
            REQUIRE(got.data[i] == Catch::Approx(want.data[i]).margin(1e-12).epsilon(1e-12));
    }
}

TEST_CASE("mirrored residual connections are live") {
    DenoiserConfig cfg;
    cfg.input_dim = 2;
    cfg.time_embed_dim = cfg.class_embed_dim = 4;
    cfg.hidden_dims = {6, 6};
    DenoiserModel model(cfg, 5);
    randomize(model, 8, true);
    Matrix z(1, 2, {0.5, -0.25});
    Matrix got = run_model(model, z, {0.3}, {});
    Matrix with = shadow_forward(model, z, {0.3}, {}, true);
    Matrix without = shadow_forward(model, z, {0.3}, {}, false);
    double gap = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        REQUIRE(got.data[i] == Catch::Approx(with.data[i]).margin(1e-12).epsilon(1e-12));
        gap = std::max(gap, std::fabs(with.data[i] - without.data[i]));
    }
    REQUIRE(gap > 1e-6);  // skipping the residual visibly changes the output
}

TEST_CASE("null class id behaves as an all-zero class row") {
    DenoiserConfig cfg;
    cfg.input_dim = 2;
    cfg.num_classes = 3;
    cfg.time_embed_dim = cfg.class_embed_dim = 6;
    cfg.hidden_dims = {8, 8};
    DenoiserModel model(cfg, 11);
    randomize(model, 21, false);  // class table stays all-zero
    Matrix z(1, 2, {1.2, -0.4});
    Matrix cond = model.predict_noise(z, 0.6, 2);
    Matrix null_ctx = model.predict_noise(z, 0.6, -1);
    REQUIRE(cond.data == null_ctx.data);  // bit-identical

    randomize(model, 21, true);  // now give class 2 a real row
    Matrix cond2 = model.predict_noise(z, 0.6, 2);
    Matrix null2 = model.predict_noise(z, 0.6, -1);
    REQUIRE(cond2.data != null2.data);
}

TEST_CASE("config and input validation") {
    DenoiserConfig cfg;
    cfg.time_embed_dim = 7;  // odd
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.time_embed_dim = 8;
    cfg.class_embed_dim = 16;  // must match
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.class_embed_dim = 8;
    cfg.hidden_dims = {};
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.hidden_dims = {4};
    cfg.validate();

    cfg.num_classes = 3;
    DenoiserModel model(cfg, 1);
    Matrix z(2, 2);
    REQUIRE_THROWS_AS(model.predict_noise(Matrix(1, 2), 0.5, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(model.predict_noise(Matrix(1, 3), 0.5, 0), std::invalid_argument);
    Tape tape;
    auto ids = model.register_params(tape, false);
    REQUIRE_THROWS_AS(model.build(tape, tape.constant(z), Matrix(3, 1), {}, ids),
                      std::invalid_argument);
}

TEST_CASE("gradients through the full network match finite differences") {
    DenoiserConfig cfg;
    cfg.input_dim = 2;
    cfg.num_classes = 2;
    cfg.time_embed_dim = cfg.class_embed_dim = 4;
    cfg.hidden_dims = {6, 4};
    DenoiserModel model(cfg, 3);
    randomize(model, 100, true);
    Matrix z(3, 2, {0.4, -0.2, 1.1, 0.6, -0.9, 0.1});
    Matrix t_col(3, 1, {0.2, 0.6, 0.9});
    std::vector<int> ids{0, -1, 1};
    Matrix target(3, 2, {0.1, 0.0, -0.3, 0.2, 0.5, -0.1});

    auto pointers = model.parameters();
    std::vector<Matrix> base;
    for (Matrix* p : pointers) base.push_back(*p);

    auto loss_of = [&](const std::vector<Matrix>& vals) {
        for (size_t i = 0; i < pointers.size(); ++i) *pointers[i] = vals[i];
        Tape tape;
        DenoiserTapeIds tids = model.register_params(tape, false);
        Tape::Id out = model.build(tape, tape.constant(z), t_col, ids, tids);
        Tape::Id diff = tape.sub(out, tape.constant(target));
        double v = tape.value(tape.sum(tape.mul(diff, diff))).at(0, 0);
        for (size_t i = 0; i < pointers.size(); ++i) *pointers[i] = base[i];
        return v;
    };

    std::vector<Matrix> fd = testsupport::fd_gradients(loss_of, base, 1e-5);

    Tape tape;
    DenoiserTapeIds tids = model.register_params(tape, true);
    Tape::Id out = model.build(tape, tape.constant(z), t_col, ids, tids);
    Tape::Id diff = tape.sub(out, tape.constant(target));
    tape.backward(tape.sum(tape.mul(diff, diff)));

    std::vector<Tape::Id> order{tids.time_w, tids.time_b, tids.class_table};
    for (const auto& b : tids.blocks)
        for (Tape::Id id : {b.w, b.b, b.cond, b.ln_gain, b.ln_bias}) order.push_back(id);
    order.push_back(tids.out_w);
    order.push_back(tids.out_b);
    std::vector<Matrix> analytic;
    for (Tape::Id id : order) analytic.push_back(tape.gradient(id));

    REQUIRE(testsupport::max_rel_gap(analytic, fd) < 1e-4);
}

TEST_CASE("gradient with respect to the input flows through the fourier features") {
    DenoiserConfig cfg;
    cfg.input_dim = 2;
    cfg.time_embed_dim = cfg.class_embed_dim = 4;
    cfg.hidden_dims = {6, 6};
    DenoiserModel model(cfg, 17);
    randomize(model, 55, true);
    Matrix z0(2, 2, {0.31, -0.12, 0.77, 0.05});

    auto f = [&](const std::vector<Matrix>& vals) {
        Tape tape;
        DenoiserTapeIds tids = model.register_params(tape, false);
        Tape::Id out = model.build(tape, tape.constant(vals[0]), Matrix::full(2, 1, 0.4), {}, tids);
        return tape.value(tape.sum(tape.mul(out, out))).at(0, 0);
    };
    // fourier features oscillate with period 2^-6, so the finite-difference
    // step must sit well inside one period
    std::vector<Matrix> fd = testsupport::fd_gradients(f, {z0}, 1e-7);

    Tape tape;
    DenoiserTapeIds tids = model.register_params(tape, false);
    Tape::Id zn = tape.variable(z0);
    Tape::Id out = model.build(tape, zn, Matrix::full(2, 1, 0.4), {}, tids);
    tape.backward(tape.sum(tape.mul(out, out)));
    std::vector<Matrix> analytic{tape.gradient(zn)};

    REQUIRE(testsupport::max_rel_gap(analytic, fd) < 1e-4);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    DenoiserConfig cfg;
    cfg.input_dim = 2;
    cfg.num_classes = 2;
    cfg.time_embed_dim = cfg.class_embed_dim = 6;
    cfg.hidden_dims = {6, 4};
    ModelBundle b{DenoiserModel(cfg, 9), NoiseSchedule::learned_monotone(-7.0, 4.0, 8), {}};
    randomize(b.model, 31, true);
    Rng rng(2, 2);
    for (double& v : b.schedule.rho_u().data) v = rng.normal();
    b.norm.mean = {0.5, -1.25};
    b.norm.std_dev = {2.0, 0.125};
    b.norm.clamped_dims = {1};

    auto dir = testsupport::make_temp_dir("ckpt");
    std::string path = (dir / "model.vdmc").string();
    save_checkpoint(path, b);
    ModelBundle c = load_checkpoint(path);

    REQUIRE(c.model.config().hidden_dims == cfg.hidden_dims);
    REQUIRE(c.model.config().num_classes == 2);
    auto pa = b.model.parameters(), pb = c.model.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i]->data == pb[i]->data);
    REQUIRE(c.schedule.kind() == ScheduleKind::kLearnedMonotone);
    REQUIRE(c.schedule.gamma_min() == -7.0);
    REQUIRE(c.schedule.gamma_max() == 4.0);
    REQUIRE(c.schedule.rho_u().data == b.schedule.rho_u().data);
    REQUIRE(c.schedule.rho_w().data == b.schedule.rho_w().data);
    REQUIRE(c.norm.mean == b.norm.mean);
    REQUIRE(c.norm.std_dev == b.norm.std_dev);
    REQUIRE(c.norm.clamped_dims == b.norm.clamped_dims);

    // saving the loaded bundle reproduces the file byte for byte
    std::string path2 = (dir / "model2.vdmc").string();
    save_checkpoint(path2, c);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);
    REQUIRE(!s1.empty());

    // a linear-schedule bundle carries no schedule parameters
    ModelBundle lin{DenoiserModel(cfg, 9), NoiseSchedule::linear(-13.3, 5.0), b.norm};
    std::string path3 = (dir / "lin.vdmc").string();
    save_checkpoint(path3, lin);
    ModelBundle lin2 = load_checkpoint(path3);
    REQUIRE(lin2.schedule.kind() == ScheduleKind::kLinear);
    REQUIRE(lin2.schedule.gamma_min() == -13.3);
    std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects corrupted files") {
    DenoiserConfig cfg;
    cfg.input_dim = 1;
    cfg.time_embed_dim = cfg.class_embed_dim = 4;
    cfg.hidden_dims = {4};
    ModelBundle b{DenoiserModel(cfg, 1), NoiseSchedule::linear(), {}};
    b.norm.mean = {0.0};
    b.norm.std_dev = {1.0};

    auto dir = testsupport::make_temp_dir("ckpt_bad");
    std::string good = (dir / "good.vdmc").string();
    save_checkpoint(good, b);
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    auto write_variant = [&](const std::string& name, const std::string& content) {
        std::string p = (dir / name).string();
        std::ofstream out(p, std::ios::binary);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        return p;
    };

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    REQUIRE_THROWS_AS(load_checkpoint(write_variant("magic.vdmc", bad_magic)), DataError);

    std::string bad_version = bytes;
    bad_version[4] = 99;
    REQUIRE_THROWS_AS(load_checkpoint(write_variant("ver.vdmc", bad_version)), DataError);

    std::string truncated = bytes.substr(0, bytes.size() - 8);
    REQUIRE_THROWS_AS(load_checkpoint(write_variant("trunc.vdmc", truncated)), DataError);

    REQUIRE_THROWS_AS(load_checkpoint((dir / "missing.vdmc").string()), DataError);
    std::filesystem::remove_all(dir);
}
