#pragma once

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vdmood/baselines.hpp"
#include "vdmood/checkpoint.hpp"
#include "vdmood/data.hpp"
#include "vdmood/denoiser.hpp"
#include "vdmood/diagnostics.hpp"
#include "vdmood/errors.hpp"
#include "vdmood/eval.hpp"
#include "vdmood/flow.hpp"
#include "vdmood/ood_scores.hpp"
#include "vdmood/schedule.hpp"
#include "vdmood/theory.hpp"
#include "vdmood/train.hpp"

namespace vdmood {
namespace cli {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//
// Every subcommand accepts `--config <file>`: a JSON object whose keys are the
// long option names without dashes. Explicit flags beat config entries, which
// beat the VDMOOD_SEED environment variable (seed only), which beats built-in
// defaults.

constexpr const char* kConfigHelp =
    "JSON object of long-option values; explicit flags win";
constexpr const char* kSeedEnvVar = "VDMOOD_SEED";

// ---- config-file and environment merging ----

inline nlohmann::json load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError("config: " + path + " must hold a JSON object");
    return j;
}

inline void append_config_value(std::vector<std::string>& tokens, const std::string& flag,
                                const nlohmann::json& v) {
    if (v.is_boolean()) {
        if (v.get<bool>()) tokens.push_back(flag);
    } else if (v.is_array()) {
        for (const auto& e : v) {
            if (!e.is_number() && !e.is_string())
                throw UsageError("config: " + flag + " array entries must be numbers or strings");
            tokens.push_back(flag);
            tokens.push_back(e.is_string() ? e.get<std::string>() : e.dump());
        }
    } else if (v.is_string()) {
        tokens.push_back(flag);
        tokens.push_back(v.get<std::string>());
    } else if (v.is_number()) {
        tokens.push_back(flag);
        tokens.push_back(v.dump());
    } else {
        throw UsageError("config: " + flag + " must be a scalar or an array");
    }
}

// Expands --config and the seed environment variable into extra tokens for
// `sub`. Original tokens stay first, so CLI11's last-wins handling never
// overrides an explicit flag with a merged value (merged keys are only added
// when the flag is absent anyway).
inline std::vector<std::string> expand_tokens(const CLI::App& sub,
                                              std::vector<std::string> tokens) {
    std::set<std::string> given;
    std::string config_path;
    int config_hits = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const std::string& t = tokens[i];
        if (t.rfind("--", 0) != 0) continue;
        std::string name = t.substr(0, t.find('='));
        given.insert(name);
        if (name == "--config") {
            ++config_hits;
            size_t eq = t.find('=');
            if (eq != std::string::npos)
                config_path = t.substr(eq + 1);
            else if (i + 1 < tokens.size())
                config_path = tokens[i + 1];
            else
                throw UsageError("config: --config needs a file path");
        }
    }
    if (config_hits > 1) throw UsageError("config: --config given more than once");

    bool config_has_seed = false;
    if (config_hits == 1) {
        nlohmann::json cfg = load_config_file(config_path);
        for (const auto& [key, value] : cfg.items()) {
            std::string flag = "--" + key;
            if (flag == "--config")
                throw UsageError("config: a config file cannot name --config");
            if (sub.get_option_no_throw(flag) == nullptr)
                throw UsageError("config: unknown key '" + key + "' for subcommand " +
                                 sub.get_name());
            if (key == "seed") config_has_seed = true;
            if (given.count(flag)) continue;
            append_config_value(tokens, flag, value);
        }
    }
    if (sub.get_option_no_throw("--seed") != nullptr && !given.count("--seed") &&
        !config_has_seed) {
        const char* env = std::getenv(kSeedEnvVar);
        if (env != nullptr && *env != '\0') {
            tokens.push_back("--seed");
            tokens.push_back(env);
        }
    }
    return tokens;
}

// ---- small parsers shared by the subcommands ----

// First '=' splits NAME=PATH; both sides must be nonempty.
inline std::pair<std::string, std::string> split_spec(const std::string& spec,
                                                      const std::string& flag) {
    size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
        throw UsageError(flag + " expects NAME=PATH, got '" + spec + "'");
    return {spec.substr(0, eq), spec.substr(eq + 1)};
}

inline std::tuple<std::string, std::string, std::string> split_ood_spec(const std::string& spec) {
    auto [left, path] = split_spec(spec, "--ood-scores");
    size_t colon = left.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == left.size())
        throw UsageError("--ood-scores expects METHOD:DATASET=PATH, got '" + spec + "'");
    return {left.substr(0, colon), left.substr(colon + 1), path};
}

inline int parse_class_id(const std::string& s) {
    size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size())
        throw UsageError("score: --cond expects a class index or 'none', got '" + s + "'");
    return v;
}

// ---- option state and runners, one pair per subcommand ----

struct SynthOpts {
    SynthConfig cfg;
    std::string out;
};

inline void run_synth(const SynthOpts& o) {
    FeatureDataset ds = synthesize(o.cfg);
    write_features(o.out, ds);
    std::cout << "wrote " << ds.n() << "x" << ds.dim() << " " << o.cfg.kind << " features -> "
              << o.out << "\n";
}

struct IngestOpts {
    std::string in, out;
};

inline void run_ingest(const IngestOpts& o) {
    FeatureDataset ds = read_features(o.in);
    write_features(o.out, ds);
    std::cout << "converted " << ds.n() << "x" << ds.dim() << " features -> " << o.out << "\n";
}

struct TrainOpts {
    std::string data, out, history;
    std::string schedule = "linear";
    double gamma_min = kDefaultGammaMin;
    double gamma_max = kDefaultGammaMax;
    int schedule_hidden = 64;
    DenoiserConfig net;         // input_dim and num_classes come from the data
    bool unconditional = false;
    TrainConfig train;
};

inline void run_train(TrainOpts o) {
    if (!(o.train.lr > 0.0)) throw UsageError("train: learning rate must be positive");
    if (!(o.train.weight_decay >= 0.0))
        throw UsageError("train: weight decay must be nonnegative");
    if (o.train.plateau_patience < 1) throw UsageError("train: patience must be positive");
    if (!(o.train.plateau_factor > 0.0) || !(o.train.plateau_factor < 1.0))
        throw UsageError("train: plateau factor must lie in (0, 1)");

    FeatureDataset ds = read_features(o.data);
    if (o.unconditional) ds.labels.clear();
    NormStats stats = compute_norm_stats(ds);
    apply_normalization(ds, stats);

    o.net.input_dim = ds.dim();
    o.net.num_classes = ds.labeled() ? ds.num_classes() : 0;
    o.net.class_embed_dim = o.net.time_embed_dim;
    DenoiserModel model(o.net, o.train.seed);
    NoiseSchedule sched =
        o.schedule == "linear"
            ? NoiseSchedule::linear(o.gamma_min, o.gamma_max)
            : NoiseSchedule::learned_monotone(o.gamma_min, o.gamma_max, o.schedule_hidden);

    TrainResult r = train(model, sched, ds, o.train);
    save_checkpoint(o.out, ModelBundle{std::move(model), std::move(sched), std::move(stats)});
    if (!o.history.empty()) write_loss_history(o.history, r.history);
    const TrainEpoch& last = r.history.back();
    std::cout << "trained " << r.history.size() << " epochs (diffusion loss "
              << format_double(last.diffusion_loss) << ", prior kl "
              << format_double(last.prior_kl) << ") -> " << o.out << "\n";
}

struct ScoreOpts {
    std::string model, data, method, out, logits;
    std::string cond = "none";
    FlowConfig flow;
    TkdlConfig tkdl;
    uint64_t seed = 0;
};

inline void run_score(ScoreOpts o) {
    ModelBundle b = load_checkpoint(o.model);
    FeatureDataset ds = read_features(o.data);
    if (ds.dim() != b.model.config().input_dim)
        throw DataError(o.data + ": feature dimension " + std::to_string(ds.dim()) +
                        " does not match the model (" +
                        std::to_string(b.model.config().input_dim) + ")");
    apply_normalization(ds, b.norm);

    o.flow.seed = o.seed;
    o.tkdl.seed = o.seed;
    ScoreVector sv;
    if (o.method == "el" || o.method == "pl") {
        if (o.cond != "none") {
            int cls = parse_class_id(o.cond);
            if (b.model.config().num_classes < 1)
                throw UsageError("score: --cond needs a class-conditional model");
            if (cls < 0 || cls >= b.model.config().num_classes)
                throw UsageError("score: class " + std::to_string(cls) + " outside the model's " +
                                 std::to_string(b.model.config().num_classes) + " classes");
            o.flow.class_ids.assign(ds.n(), cls);
        }
        sv = o.method == "el" ? score_el(b.model, b.schedule, ds.features, o.flow)
                              : score_pl(b.model, b.schedule, ds.features, o.flow);
    } else {
        if (o.logits.empty()) throw UsageError("score: --method tkdl needs --logits");
        if (b.model.config().num_classes < 1)
            throw UsageError("score: tkdl needs a class-conditional model");
        Matrix logits = read_logits(o.logits, ds.n());
        if (logits.cols > b.model.config().num_classes)
            throw DataError(o.logits + ": " + std::to_string(logits.cols) +
                            " logit columns exceed the model's " +
                            std::to_string(b.model.config().num_classes) + " classes");
        sv = score_tkdl(b.model, b.schedule, ds.features, logits, o.tkdl);
    }
    write_scores(o.out, sv);
    std::cout << "wrote " << sv.scores.size() << " " << sv.method << " scores -> " << o.out
              << "\n";
}

struct BaselineOpts {
    std::string train_data, data, method, out;
    int components = 0;      // 0 = not given
    double bandwidth = 0.0;  // 0 = not given
    bool tune = false;
    std::vector<double> grid;
    int fit_split = 10000;
    uint64_t seed = 0;
};

inline void run_baseline(const BaselineOpts& o) {
    if (o.components != 0 && o.method != "gmm")
        throw UsageError("baseline: --components only applies to gmm");
    if (o.bandwidth != 0.0 && o.method != "kde")
        throw UsageError("baseline: --bandwidth only applies to kde");
    if (!o.grid.empty() && !o.tune) throw UsageError("baseline: --grid needs --tune");
    if (o.tune && o.method == "gaussian")
        throw UsageError("baseline: gaussian has no hyperparameter to tune");

    FeatureDataset train_ds = read_features(o.train_data);
    FeatureDataset ds = read_features(o.data);
    if (ds.dim() != train_ds.dim())
        throw DataError(o.data + ": feature dimension does not match the training data");
    NormStats stats = compute_norm_stats(train_ds);
    apply_normalization(train_ds, stats);
    apply_normalization(ds, stats);

    std::vector<double> logpdf;
    if (o.method == "gaussian") {
        logpdf = gaussian_logpdf(fit_gaussian(train_ds.features), ds.features);
    } else if (o.method == "gmm") {
        int k = o.components;
        if (o.tune) {
            std::vector<int> grid;
            for (double v : o.grid.empty() ? std::vector<double>{1, 2, 4, 8, 16} : o.grid) {
                if (v != static_cast<int>(v) || v < 1.0)
                    throw UsageError("baseline: gmm grid entries must be whole component counts");
                grid.push_back(static_cast<int>(v));
            }
            TuneOutcome t = tune_gmm_components(train_ds.features, grid, o.seed, o.fit_split);
            k = static_cast<int>(t.chosen);
            std::cout << "chose " << k << " components\n";
        } else if (k < 1) {
            throw UsageError("baseline: gmm needs --components or --tune");
        }
        logpdf = gmm_logpdf(fit_gmm_em(train_ds.features, k, o.seed), ds.features);
    } else {
        double h = o.bandwidth;
        if (o.tune) {
            std::vector<double> grid =
                o.grid.empty() ? std::vector<double>{0.05, 0.1, 0.2, 0.4, 0.8, 1.6} : o.grid;
            TuneOutcome t = tune_kde_bandwidth(train_ds.features, grid, o.fit_split);
            h = t.chosen;
            std::cout << "chose bandwidth " << format_double(h) << "\n";
        } else if (!(h > 0.0)) {
            throw UsageError("baseline: kde needs --bandwidth or --tune");
        }
        logpdf = kde_logpdf(fit_kde(train_ds.features, h), ds.features);
    }

    ScoreVector sv;
    sv.method = "baseline-" + o.method;
    sv.scores.reserve(logpdf.size());
    for (double v : logpdf) sv.scores.push_back(-v);
    write_scores(o.out, sv);
    std::cout << "wrote " << sv.scores.size() << " " << sv.method << " scores -> " << o.out
              << "\n";
}

struct EvalOpts {
    std::vector<std::string> ind, train, ood, group;
    std::string out;
};

inline void run_eval(const EvalOpts& o) {
    ReportInput in;
    std::vector<std::string> method_order;
    std::map<std::string, MethodScores> by_method;
    for (const std::string& spec : o.ind) {
        auto [method, path] = split_spec(spec, "--ind-scores");
        if (by_method.count(method))
            throw UsageError("eval: duplicate --ind-scores for method " + method);
        method_order.push_back(method);
        by_method[method].method = method;
        by_method[method].test = read_scores(path);
    }
    for (const std::string& spec : o.train) {
        auto [method, path] = split_spec(spec, "--train-scores");
        auto it = by_method.find(method);
        if (it == by_method.end())
            throw UsageError("eval: --train-scores for unknown method " + method);
        if (!it->second.train.empty())
            throw UsageError("eval: duplicate --train-scores for method " + method);
        it->second.train = read_scores(path);
    }

    std::map<std::pair<std::string, std::string>, std::string> ood_paths;
    for (const std::string& spec : o.ood) {
        auto [method, dataset, path] = split_ood_spec(spec);
        if (!by_method.count(method))
            throw UsageError("eval: --ood-scores for unknown method " + method);
        if (!ood_paths.emplace(std::make_pair(method, dataset), path).second)
            throw UsageError("eval: duplicate --ood-scores for " + method + ":" + dataset);
        if (std::find(in.ood_names.begin(), in.ood_names.end(), dataset) == in.ood_names.end())
            in.ood_names.push_back(dataset);
    }

    std::map<std::string, std::string> groups;
    for (const std::string& spec : o.group) {
        auto [dataset, g] = split_spec(spec, "--group");
        if (g != "near" && g != "far")
            throw UsageError("eval: group must be 'near' or 'far', got '" + g + "'");
        if (std::find(in.ood_names.begin(), in.ood_names.end(), dataset) == in.ood_names.end())
            throw UsageError("eval: --group for unknown dataset " + dataset);
        if (!groups.emplace(dataset, g).second)
            throw UsageError("eval: duplicate --group for dataset " + dataset);
    }
    if (!groups.empty())
        for (const std::string& name : in.ood_names)
            in.ood_groups.push_back(groups.count(name) ? groups[name] : "");

    for (const std::string& method : method_order) {
        MethodScores ms = std::move(by_method[method]);
        for (const std::string& dataset : in.ood_names) {
            auto it = ood_paths.find({method, dataset});
            if (it == ood_paths.end())
                throw UsageError("eval: method " + method + " has no scores for dataset " +
                                 dataset);
            ms.ood.push_back(read_scores(it->second));
        }
        in.methods.push_back(std::move(ms));
    }

    nlohmann::ordered_json report = write_report(in, o.out);
    for (const auto& m : report["methods"])
        for (const auto& cell : m["per_dataset"])
            std::cout << m["name"].get<std::string>() << "/" << cell["dataset"].get<std::string>()
                      << " auroc " << format_double(cell["auroc"].get<double>()) << " fpr95 "
                      << format_double(cell["fpr95"].get<double>()) << "\n";
    std::cout << "report -> " << o.out << "\n";
}

struct CurveOpts {
    std::string model, out;
    std::vector<std::string> data;  // NAME=PATH per dataset
    NoiseCurveConfig cfg;
};

inline void run_curve(const CurveOpts& o) {
    ModelBundle b = load_checkpoint(o.model);
    std::vector<std::string> names;
    std::vector<FeatureDataset> held;
    for (const std::string& spec : o.data) {
        auto [name, path] = split_spec(spec, "--data");
        if (std::find(names.begin(), names.end(), name) != names.end())
            throw UsageError("curve: duplicate dataset name " + name);
        names.push_back(name);
        FeatureDataset ds = read_features(path);
        if (ds.dim() != b.model.config().input_dim)
            throw DataError(path + ": feature dimension does not match the model");
        apply_normalization(ds, b.norm);
        held.push_back(std::move(ds));
    }
    std::vector<std::pair<std::string, const Matrix*>> sets;
    for (size_t i = 0; i < held.size(); ++i) sets.emplace_back(names[i], &held[i].features);

    NoiseCurve curve = loss_vs_noise(b.model, b.schedule, sets, o.cfg);
    write_noise_curve_csv(o.out, curve);
    std::cout << "wrote " << curve.t_grid.size() << "-point curve over " << sets.size()
              << " datasets -> " << o.out << "\n";
}

struct TransformOpts {
    double lo = -4.0, hi = 4.0, step = 0.01;
    std::string out;
};

// The density-inversion instance: a standard normal pushed through a map that
// is steep on [0, 1] and nearly flat on [1, 3], which flips the density
// ordering of x = 0.5 and x = 2.
inline MonotoneTransform figure_transform() {
    return MonotoneTransform{{-8.0, 0.0, 1.0, 3.0, 8.0}, {1.0, 100.0, 0.01, 1.0}, -8.0};
}

inline void run_demo_transform(const TransformOpts& o) {
    if (!(o.step > 0.0)) throw UsageError("demo-transform: step must be positive");
    if (!(o.hi > o.lo)) throw UsageError("demo-transform: hi must exceed lo");
    MonotoneTransform t = figure_transform();
    AnalyticDensity p = normal_density(0.0, 1.0);
    auto pdf = [&p](double v) { return p.pdf(&v); };

    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw DataError(o.out + ": cannot open for writing");
    f << "x,p_X,p_Y\n";
    int count = static_cast<int>((o.hi - o.lo) / o.step + 1e-9);
    for (int i = 0; i <= count; ++i) {
        double x = o.lo + o.step * i;
        f << format_double(x) << "," << format_double(pdf(x)) << ","
          << format_double(transformed_density(pdf, t, x)) << "\n";
    }
    if (!f) throw DataError(o.out + ": write failed");
    std::cout << "wrote " << count + 1 << " grid rows -> " << o.out << "\n";
}

struct OptimalityOpts {
    int n = 10000;
    uint64_t seed = 0;
    bool counterexample = false;
    double box_lo = -4.0, box_hi = 4.0;
    std::string out;
};

inline void run_demo_optimality(const OptimalityOpts& o) {
    MixtureSetup setup;
    setup.ind = mixture1d_density({0.5, 0.5}, {-2.0, 2.0}, {0.3, 0.3});
    setup.ood = o.counterexample ? normal_density(2.0, 0.3)
                                 : uniform_box_density({o.box_lo}, {o.box_hi});
    setup.alpha = 0.5;
    OptimalityResult r = optimality_experiment(setup, o.n, o.seed);

    nlohmann::ordered_json j;
    j["auc_density"] = r.auc_density;
    j["auc_ratio"] = r.auc_ratio;
    j["n"] = r.n;
    j["seed"] = r.seed;
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw DataError(o.out + ": cannot open for writing");
    f << j.dump(2) << "\n";
    if (!f) throw DataError(o.out + ": write failed");
    std::cout << "auc_density " << format_double(r.auc_density) << " auc_ratio "
              << format_double(r.auc_ratio) << " -> " << o.out << "\n";
}

// ---- subcommand wiring ----

inline CLI::App* attach_synth(CLI::App& app, SynthOpts& o, std::string& config_sink) {
    CLI::App* s = app.add_subcommand("synth", "Generate a synthetic feature file");
    s->add_option("--kind", o.cfg.kind, "gaussian, gmm2, two-moons or uniform-box")
        ->capture_default_str();
    s->add_option("--n", o.cfg.n, "sample count")->capture_default_str();
    s->add_option("--d", o.cfg.d, "feature dimension")->capture_default_str();
    s->add_option("--seed", o.cfg.seed, "generator seed")->capture_default_str();
    s->add_option("--separation", o.cfg.separation, "gmm2 distance between cluster means")
        ->capture_default_str();
    s->add_option("--cluster-std", o.cfg.cluster_std, "gmm2 within-cluster deviation")
        ->capture_default_str();
    s->add_option("--moon-noise", o.cfg.moon_noise, "two-moons jitter")->capture_default_str();
    s->add_option("--box-lo", o.cfg.box_lo, "uniform-box lower bounds (one per dim or broadcast)")
        ->delimiter(',');
    s->add_option("--box-hi", o.cfg.box_hi, "uniform-box upper bounds")->delimiter(',');
    s->add_option("--out", o.out, "output feature file (.csv or binary)")->required();
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_synth(o); });
    return s;
}

inline CLI::App* attach_ingest(CLI::App& app, IngestOpts& o, std::string& config_sink) {
    CLI::App* s = app.add_subcommand("ingest", "Validate and convert a feature file");
    s->add_option("--in", o.in, "input feature file")->required();
    s->add_option("--out", o.out, "output feature file (format by extension)")->required();
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_ingest(o); });
    return s;
}

inline CLI::App* attach_train(CLI::App& app, TrainOpts& o, std::string& config_sink) {
    CLI::App* s = app.add_subcommand(
        "train", "Train a denoiser on a feature file and save a checkpoint");
    s->add_option("--data", o.data, "training feature file")->required();
    s->add_option("--out", o.out, "checkpoint path")->required();
    s->add_option("--history", o.history, "loss history CSV path");
    s->add_option("--epochs", o.train.epochs, "training epochs")->capture_default_str();
    s->add_option("--batch-size", o.train.batch_size, "examples per step")->capture_default_str();
    s->add_option("--lr", o.train.lr, "initial learning rate")->capture_default_str();
    s->add_option("--weight-decay", o.train.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    s->add_option("--patience", o.train.plateau_patience, "epochs without improvement before decay")
        ->capture_default_str();
    s->add_option("--factor", o.train.plateau_factor, "learning-rate decay factor")
        ->capture_default_str();
    s->add_option("--cfg-drop", o.train.cfg_drop_prob, "label dropout probability")
        ->capture_default_str();
    s->add_option("--seed", o.train.seed, "init and shuffle seed")->capture_default_str();
    s->add_option("--schedule", o.schedule, "noise schedule kind")
        ->check(CLI::IsMember({"linear", "learned"}))
        ->capture_default_str();
    s->add_option("--gamma-min", o.gamma_min, "log-SNR at t=0")->capture_default_str();
    s->add_option("--gamma-max", o.gamma_max, "log-SNR at t=1")->capture_default_str();
    s->add_option("--schedule-hidden", o.schedule_hidden, "learned-schedule hidden width")
        ->capture_default_str();
    s->add_option("--hidden", o.net.hidden_dims, "hidden layer widths (repeatable)")
        ->delimiter(',')
        ->capture_default_str();
    s->add_option("--time-embed", o.net.time_embed_dim, "time embedding width (even)")
        ->capture_default_str();
    s->add_option("--fourier-n", o.net.fourier_n, "sin/cos(2^n pi z) input features")
        ->capture_default_str();
    s->add_flag("--unconditional", o.unconditional, "ignore labels in the training file");
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_train(o); });
    return s;
}

inline CLI::App* attach_score(CLI::App& app, ScoreOpts& o, std::string& config_sink) {
    CLI::App* s = app.add_subcommand("score", "Score a feature file against a checkpoint");
    s->add_option("--model", o.model, "checkpoint path")->required();
    s->add_option("--data", o.data, "feature file to score")->required();
    s->add_option("--method", o.method, "el (exact likelihood), pl (prior likelihood) or tkdl")
        ->check(CLI::IsMember({"el", "pl", "tkdl"}))
        ->required();
    s->add_option("--out", o.out, "score CSV path")->required();
    s->add_option("--steps", o.flow.steps, "RK4 steps over [0,1]")->capture_default_str();
    s->add_option("--probes", o.flow.probe_count, "divergence probes per sample")
        ->capture_default_str();
    s->add_option("--probe-kind", o.flow.probe_kind, "rademacher, gaussian or exact")
        ->capture_default_str();
    s->add_option("--cond", o.cond, "condition every row on a class index, or 'none'")
        ->capture_default_str();
    s->add_option("--logits", o.logits, "per-sample class logits (tkdl)");
    s->add_option("--k", o.tkdl.k, "classes ranked per sample (tkdl)")->capture_default_str();
    s->add_option("--repeats", o.tkdl.repeats, "noise draws per class (tkdl)")
        ->capture_default_str();
    s->add_option("--seed", o.seed, "probe and noise seed")->capture_default_str();
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_score(o); });
    return s;
}

inline CLI::App* attach_baseline(CLI::App& app, BaselineOpts& o, std::string& config_sink) {
    CLI::App* s = app.add_subcommand(
        "baseline", "Fit a classical density on training features and score a file");
    s->add_option("--train-data", o.train_data, "training feature file")->required();
    s->add_option("--data", o.data, "feature file to score")->required();
    s->add_option("--method", o.method, "gaussian, gmm or kde")
        ->check(CLI::IsMember({"gaussian", "gmm", "kde"}))
        ->required();
    s->add_option("--out", o.out, "score CSV path")->required();
    s->add_option("--components", o.components, "gmm component count");
    s->add_option("--bandwidth", o.bandwidth, "kde kernel bandwidth");
    s->add_flag("--tune", o.tune,
                "pick the hyperparameter from --grid by held-out likelihood, then refit on the "
                "full split");
    s->add_option("--grid", o.grid, "hyperparameter candidates for --tune")->delimiter(',');
    s->add_option("--fit-split", o.fit_split, "rows fitted during tuning; the rest validate")
        ->capture_default_str();
    s->add_option("--seed", o.seed, "gmm initialization seed")->capture_default_str();
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_baseline(o); });
    return s;
}

inline CLI::App* attach_eval(CLI::App& app, EvalOpts& o, std::string& config_sink) {
    CLI::App* s = app.add_subcommand(
        "eval", "Compute AUROC/FPR95 tables, ranks and histograms from score files");
    s->add_option("--ind-scores", o.ind, "test-split scores, METHOD=PATH (repeatable)")
        ->required();
    s->add_option("--train-scores", o.train, "train-split scores, METHOD=PATH");
    s->add_option("--ood-scores", o.ood, "OOD scores, METHOD:DATASET=PATH (repeatable)");
    s->add_option("--group", o.group, "dataset grouping, DATASET=near|far");
    s->add_option("--out", o.out, "report JSON path; histogram CSVs land beside it")->required();
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_eval(o); });
    return s;
}

inline CLI::App* attach_curve(CLI::App& app, CurveOpts& o, std::string& config_sink) {
    CLI::App* s = app.add_subcommand(
        "curve", "Diffusion loss versus noise level over named datasets");
    s->add_option("--model", o.model, "checkpoint path")->required();
    s->add_option("--data", o.data, "dataset as NAME=PATH (repeatable)")->required();
    s->add_option("--grid", o.cfg.t_grid, "noise levels in [0,1]")->delimiter(',');
    s->add_option("--repeats", o.cfg.repeats, "noise draws per sample and level")
        ->capture_default_str();
    s->add_option("--seed", o.cfg.seed, "noise seed")->capture_default_str();
    s->add_option("--out", o.out, "curve CSV path")->required();
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_curve(o); });
    return s;
}

inline CLI::App* attach_demo_transform(CLI::App& app, TransformOpts& o,
                                       std::string& config_sink) {
    CLI::App* s = app.add_subcommand(
        "demo-transform",
        "Tabulate how a monotone change of variables reorders a normal density");
    s->add_option("--lo", o.lo, "grid start")->capture_default_str();
    s->add_option("--hi", o.hi, "grid end")->capture_default_str();
    s->add_option("--step", o.step, "grid spacing")->capture_default_str();
    s->add_option("--out", o.out, "CSV path (x, p_X, p_Y)")->required();
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_demo_transform(o); });
    return s;
}

inline CLI::App* attach_demo_optimality(CLI::App& app, OptimalityOpts& o,
                                        std::string& config_sink) {
    CLI::App* s = app.add_subcommand(
        "demo-optimality",
        "Compare density and likelihood-ratio AUCs on a bimodal-vs-outlier instance");
    s->add_option("--n", o.n, "samples per side")->capture_default_str();
    s->add_option("--seed", o.seed, "sampling seed")->capture_default_str();
    s->add_flag("--counterexample", o.counterexample,
                "concentrated Gaussian outliers instead of uniform ones");
    s->add_option("--box-lo", o.box_lo, "uniform outlier lower bound")->capture_default_str();
    s->add_option("--box-hi", o.box_hi, "uniform outlier upper bound")->capture_default_str();
    s->add_option("--out", o.out, "result JSON path")->required();
    s->add_option("--config", config_sink, kConfigHelp);
    s->callback([&o] { run_demo_optimality(o); });
    return s;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Diffusion-model density estimation and OOD scoring for feature vectors"};
    app.require_subcommand(1);
    app.footer("Any subcommand takes --config <file> (JSON keyed by long option names; explicit\n"
               "flags win). VDMOOD_SEED supplies a default --seed where one applies.");

    cli::SynthOpts synth_o;
    cli::IngestOpts ingest_o;
    cli::TrainOpts train_o;
    cli::ScoreOpts score_o;
    cli::BaselineOpts baseline_o;
    cli::EvalOpts eval_o;
    cli::CurveOpts curve_o;
    cli::TransformOpts transform_o;
    cli::OptimalityOpts optimality_o;
    std::string config_sink;

    std::map<std::string, CLI::App*> subs;
    subs["synth"] = cli::attach_synth(app, synth_o, config_sink);
    subs["ingest"] = cli::attach_ingest(app, ingest_o, config_sink);
    subs["train"] = cli::attach_train(app, train_o, config_sink);
    subs["score"] = cli::attach_score(app, score_o, config_sink);
    subs["baseline"] = cli::attach_baseline(app, baseline_o, config_sink);
    subs["eval"] = cli::attach_eval(app, eval_o, config_sink);
    subs["curve"] = cli::attach_curve(app, curve_o, config_sink);
    subs["demo-transform"] = cli::attach_demo_transform(app, transform_o, config_sink);
    subs["demo-optimality"] = cli::attach_demo_optimality(app, optimality_o, config_sink);

    if (argc < 2) {
        std::cout << app.help();
        return 1;
    }

    try {
        std::vector<std::string> tokens(argv + 1, argv + argc);
        auto it = subs.find(tokens.front());
        if (it != subs.end()) {
            std::vector<std::string> rest(tokens.begin() + 1, tokens.end());
            rest = cli::expand_tokens(*it->second, std::move(rest));
            tokens.assign(1, it->first);
            tokens.insert(tokens.end(), rest.begin(), rest.end());
        }
        std::vector<const char*> cargv;
        cargv.push_back(argv[0]);
        for (const std::string& t : tokens) cargv.push_back(t.c_str());
        app.parse(static_cast<int>(cargv.size()), cargv.data());
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace vdmood
