// csra: data generation, training, evaluation, sweeps, ablations and plots.

#include <spawn.h>
#include <sys/wait.h>
#include <fcntl.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "csra/checkpoint.hpp"
#include "csra/config.hpp"
#include "csra/dataset.hpp"
#include "csra/error.hpp"
#include "csra/plot.hpp"
#include "csra/report.hpp"
#include "csra/trainer.hpp"

#ifndef CSRA_VERSION
#define CSRA_VERSION "unknown"
#endif

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csra;

namespace {

// ---- helpers ------------------------------------------------------------------------------------

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

fs::path runs_root() {
    const char* env = std::getenv("CSRA_RUNS_DIR");
    return env && *env ? fs::path(env) : fs::path("runs");
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void prepare_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw UsageError("output directory " + dir.string() + " is not empty (use --force)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

std::string csv_cell(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return "";
    return json(*v).dump();
}

// ---- config flags shared by train / sweep / ablate ---------------------------------------------

struct ConfigFlags {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::string> task, backbone, method, ablate, inter_norm;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, patience, batch_size, window, h_reg, h_cls, hidden, max_steps_per_epoch;
    std::optional<double> lr, lambda_cons, lambda_ctrl, data_ratio, dropout, aug_task_loss_weight;
    bool clamp_beta_zero = false;

    void attach(CLI::App* cmd, bool with_seed = true) {
        cmd->add_option("--config", config_file, "Flat JSON config file; flags override it");
        cmd->add_option("--set", sets, "Override any config key: KEY=VALUE (repeatable)");
        cmd->add_option("--task", task, "regression | classification");
        cmd->add_option("--backbone", backbone, "linear | lstm | transformer");
        cmd->add_option("--ablate", ablate, "no_multisystem | no_spectral | no_composite_loss");
        cmd->add_option("--inter-norm", inter_norm, "mean | raw");
        if (with_seed) {
            cmd->add_option("--method", method, "csra | noaug");
            cmd->add_option("--seed", seed, "Random seed");
        }
        cmd->add_option("--epochs", epochs, "Maximum epochs");
        cmd->add_option("--patience", patience, "Early-stopping patience");
        cmd->add_option("--batch-size", batch_size, "Mini-batch size");
        cmd->add_option("--window", window, "Observation window W");
        cmd->add_option("--h-reg", h_reg, "Regression horizon");
        cmd->add_option("--h-cls", h_cls, "Classification horizon");
        cmd->add_option("--hidden", hidden, "Predictor hidden width");
        cmd->add_option("--max-steps-per-epoch", max_steps_per_epoch, "Cap on optimiser steps per epoch (0 = all)");
        cmd->add_option("--lr", lr, "Learning rate");
        cmd->add_option("--lambda-cons", lambda_cons, "Consistency weight");
        cmd->add_option("--lambda-ctrl", lambda_ctrl, "Controller regulariser weight");
        cmd->add_option("--data-ratio", data_ratio, "Fraction of training trajectories kept");
        cmd->add_option("--dropout", dropout, "Dropout rate");
        cmd->add_option("--aug-task-loss-weight", aug_task_loss_weight, "Task loss weight on the augmented branch");
        cmd->add_flag("--clamp-beta-zero", clamp_beta_zero, "Force the augmentation scale to zero");
    }

    bool any() const {
        return !config_file.empty() || !sets.empty() || task || backbone || method || ablate || inter_norm || seed ||
               epochs || patience || batch_size || window || h_reg || h_cls || hidden || max_steps_per_epoch || lr ||
               lambda_cons || lambda_ctrl || data_ratio || dropout || aug_task_loss_weight || clamp_beta_zero;
    }

    TrainConfig resolve() const {
        TrainConfig c;
        if (!config_file.empty()) c = TrainConfig::from_json(read_json(config_file));
        if (task) c.task = task_from_string(*task);
        if (backbone) c.backbone = backbone_from_string(*backbone);
        if (method) c.method = method_from_string(*method);
        if (ablate) c.ablation = ablation_from_string(*ablate);
        if (inter_norm) c.inter_norm = inter_norm_from_string(*inter_norm);
        if (seed) c.seed = *seed;
        if (epochs) c.max_epochs = *epochs;
        if (patience) c.patience = *patience;
        if (batch_size) c.batch_size = *batch_size;
        if (window) c.window = *window;
        if (h_reg) c.h_reg = *h_reg;
        if (h_cls) c.h_cls = *h_cls;
        if (hidden) c.hidden = *hidden;
        if (max_steps_per_epoch) c.max_steps_per_epoch = *max_steps_per_epoch;
        if (lr) c.lr = *lr;
        if (lambda_cons) c.lambda_cons = *lambda_cons;
        if (lambda_ctrl) c.lambda_ctrl = *lambda_ctrl;
        if (data_ratio) c.data_ratio = *data_ratio;
        if (dropout) c.dropout = *dropout;
        if (aug_task_loss_weight) c.aug_task_loss_weight = *aug_task_loss_weight;
        if (clamp_beta_zero) c.clamp_beta_zero = true;
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
            apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
        }
        c.validate();
        return c;
    }

    /// Command-line form, for forwarding to a child process.
    std::vector<std::string> forward() const {
        std::vector<std::string> a;
        auto opt = [&](const char* flag, const auto& v) {
            if (v) {
                a.emplace_back(flag);
                std::ostringstream s;
                s << *v;
                a.push_back(s.str());
            }
        };
        if (!config_file.empty()) a.insert(a.end(), {"--config", fs::absolute(config_file).string()});
        for (const auto& s : sets) a.insert(a.end(), {"--set", s});
        opt("--task", task);
        opt("--backbone", backbone);
        opt("--ablate", ablate);
        opt("--inter-norm", inter_norm);
        opt("--epochs", epochs);
        opt("--patience", patience);
        opt("--batch-size", batch_size);
        opt("--window", window);
        opt("--h-reg", h_reg);
        opt("--h-cls", h_cls);
        opt("--hidden", hidden);
        opt("--max-steps-per-epoch", max_steps_per_epoch);
        for (auto [flag, v] : {std::pair{"--lr", lr}, {"--lambda-cons", lambda_cons}, {"--lambda-ctrl", lambda_ctrl},
                               {"--data-ratio", data_ratio}, {"--dropout", dropout},
                               {"--aug-task-loss-weight", aug_task_loss_weight}})
            if (v) a.insert(a.end(), {flag, json(*v).dump()});
        if (clamp_beta_zero) a.emplace_back("--clamp-beta-zero");
        return a;
    }
};

std::string default_run_id(const TrainConfig& c) {
    std::string id = to_string(c.method) + "-" + to_string(c.backbone) + "-" + to_string(c.task);
    if (c.ablation != Ablation::None) id += "-" + to_string(c.ablation);
    return id + "-s" + std::to_string(c.seed);
}

json result_record(Trainer& t, const std::string& run_id) {
    const auto& c = t.config();
    return {{"run_id", run_id},
            {"method", to_string(c.method)},
            {"backbone", to_string(c.backbone)},
            {"task", to_string(c.task)},
            {"ablation", to_string(c.ablation)},
            {"seed", c.seed},
            {"n_train_windows", t.windows("train").size()},
            {"n_val_windows", t.windows("val").size()},
            {"n_test_windows", t.windows("test").size()},
            {"epochs", t.epochs_completed()},
            {"best_epoch", t.history().best_epoch},
            {"val", t.evaluate_split("val").to_json()},
            {"test", t.evaluate_split("test").to_json()}};
}

// ---- gen-data -----------------------------------------------------------------------------------

struct GenDataArgs {
    std::uint64_t seed = 0;
    int n = 2000;
    int t = 40;
    int per_system = 2;
    double coupling_scale = 1.0;
    std::string out;
    bool force = false;
};

int cmd_gen_data(const GenDataArgs& a) {
    if (a.n < 1) throw UsageError("--n must be at least 1");
    if (a.t < 2) throw UsageError("--t must be at least 2");
    if (a.per_system < 1) throw UsageError("--per-system must be at least 1");
    GeneratorOptions opt;
    opt.coupling_scale = a.coupling_scale;
    const auto ds = generate_synthetic_cohort(a.seed, a.n, a.t, SystemSchema::default_nine(a.per_system), opt);
    save_dataset(ds, a.out, a.force);
    double pos = 0.0;
    for (auto l : ds.labels) pos += l;
    std::cout << json{{"out", a.out},
                      {"fingerprint", dataset_fingerprint(a.out)},
                      {"n_trajectories", ds.n_trajectories},
                      {"n_timesteps", ds.n_timesteps},
                      {"n_variables", ds.n_variables},
                      {"positive_rate", pos / ds.n_trajectories}}
                     .dump()
              << "\n";
    return 0;
}

// ---- train --------------------------------------------------------------------------------------

struct TrainArgs {
    ConfigFlags flags;
    std::string data;
    std::string out;
    std::string run_id;
    std::string resume;
    std::optional<int> stop_after;
    bool force = false;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    const auto ds = load_dataset(a.data);
    std::unique_ptr<Trainer> trainer;
    if (!a.resume.empty()) {
        if (a.flags.any()) throw UsageError("--resume takes its configuration from the checkpoint; drop config flags");
        trainer = Trainer::resume(Checkpoint::load(a.resume), ds);
    } else {
        trainer = std::make_unique<Trainer>(a.flags.resolve(), ds);
    }
    const auto& config = trainer->config();
    const std::string run_id = a.run_id.empty() ? default_run_id(config) : a.run_id;
    const fs::path dir = a.out.empty() ? runs_root() / run_id : fs::path(a.out);
    if (a.resume.empty())
        prepare_dir(dir, a.force);
    else
        fs::create_directories(dir);

    json manifest = {{"run_id", run_id},
                     {"config", config.to_json()},
                     {"dataset", {{"path", fs::absolute(a.data).string()}, {"fingerprint", dataset_fingerprint(a.data)}}},
                     {"version", CSRA_VERSION},
                     {"started", utc_now()},
                     {"resumed_from", a.resume.empty() ? json() : json(a.resume)},
                     {"outputs",
                      {{"config", "config.json"},
                       {"metrics", "metrics.jsonl"},
                       {"history", "history.json"},
                       {"last_checkpoint", "last.ckpt"},
                       {"best_checkpoint", "best.ckpt"},
                       {"result", "result.json"}}}};
    write_json(dir / "config.json", config.to_json());
    write_json(dir / "manifest.json", manifest);

    std::ofstream log(dir / "metrics.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
    const auto weights = trainer->loss_weights();
    trainer->on_step([&](const StepRecord& r) {
        auto j = step_json(r, weights);
        j["type"] = "step";
        log << j.dump() << "\n";
    });

    int ran = 0;
    try {
        while (!trainer->done() && (!a.stop_after || ran < *a.stop_after)) {
            const auto rec = trainer->run_epoch();
            ++ran;
            auto j = rec.to_json();
            j["type"] = "epoch";
            log << j.dump() << "\n";
            log.flush();
            trainer->checkpoint().save(dir / "last.ckpt");
            if (!a.quiet)
                std::cerr << "epoch " << rec.epoch << " train " << rec.train.l_total << " val " << rec.val.loss
                          << (rec.improved ? " *" : "") << "\n";
        }
    } catch (const DivergenceError& e) {
        trainer->checkpoint().save(dir / "last.ckpt");
        write_json(dir / "divergence.json",
                   {{"error", e.what()}, {"epoch", trainer->epochs_completed()}, {"step", trainer->global_step()},
                    {"checkpoint", "last.ckpt"}});
        throw;
    }

    write_json(dir / "history.json", trainer->history().to_json());
    if (trainer->done()) {
        trainer->restore_best();
        trainer->checkpoint().save(dir / "best.ckpt");
        const auto result = result_record(*trainer, run_id);
        write_json(dir / "result.json", result);
        if (!a.quiet) std::cout << result.dump() << "\n";
    }
    manifest["finished"] = utc_now();
    manifest["completed"] = trainer->done();
    write_json(dir / "manifest.json", manifest);
    return 0;
}

// ---- eval ---------------------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string out;
};

int cmd_eval(const EvalArgs& a) {
    const auto ds = load_dataset(a.data);
    auto trainer = Trainer::resume(Checkpoint::load(a.checkpoint), ds);
    json j = trainer->evaluate_split(a.split).to_json();
    j["split"] = a.split;
    j["checkpoint"] = a.checkpoint;
    if (!a.out.empty()) write_json(a.out, j);
    std::cout << j.dump() << "\n";
    return 0;
}

// ---- sweep --------------------------------------------------------------------------------------

struct SweepArgs {
    ConfigFlags flags;
    std::string data;
    std::string axis;
    std::vector<std::string> values;
    std::vector<std::string> methods = {"noaug", "csra"};
    std::vector<std::uint64_t> seeds = {0};
    int jobs = 1;
    std::string out;
    bool force = false;
};

std::string self_exe() { return fs::read_symlink("/proc/self/exe").string(); }

pid_t spawn(const std::vector<std::string>& args, const fs::path& log_path) {
    std::vector<char*> argv;
    for (const auto& s : args) argv.push_back(const_cast<char*>(s.c_str()));
    argv.push_back(nullptr);
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0) throw DataError("cannot start " + args[0]);
    return pid;
}

int cmd_sweep(const SweepArgs& a) {
    static const std::map<std::string, std::string> axis_key = {
        {"window", "window"}, {"h_cls", "h_cls"}, {"h_reg", "h_reg"}, {"data_ratio", "data_ratio"}};
    if (!axis_key.count(a.axis)) throw UsageError("--axis must be window, h_cls, h_reg or data_ratio");
    if (a.values.empty()) throw UsageError("--values is empty");
    if (a.methods.empty()) throw UsageError("--methods is empty");
    if (a.seeds.empty()) throw UsageError("--seeds is empty");
    if (a.jobs < 1) throw UsageError("--jobs must be at least 1");
    std::vector<double> values;
    for (const auto& v : a.values) {
        try {
            values.push_back(std::stod(v));
        } catch (const std::exception&) {
            throw UsageError("--values: '" + v + "' is not a number");
        }
    }
    for (const auto& m : a.methods) method_from_string(m);
    // Resolve once so bad flags fail before any child starts.
    const TrainConfig base = a.flags.resolve();
    (void)base;

    const fs::path dir = a.out.empty() ? runs_root() / ("sweep-" + a.axis) : fs::path(a.out);
    prepare_dir(dir, a.force);

    struct Cell {
        std::string value;
        std::string method;
        std::uint64_t seed;
        fs::path dir;
    };
    std::vector<Cell> cells;
    for (const auto& v : a.values)
        for (const auto& m : a.methods)
            for (auto s : a.seeds)
                cells.push_back({v, m, s, dir / "cells" / (a.axis + "=" + v + "-" + m + "-s" + std::to_string(s))});

    const std::string exe = self_exe();
    const auto forwarded = a.flags.forward();
    std::vector<std::pair<pid_t, std::size_t>> running;
    std::vector<int> status(cells.size(), -1);
    std::size_t next = 0;
    auto reap_one = [&]() {
        int st = 0;
        const pid_t pid = waitpid(-1, &st, 0);
        for (auto it = running.begin(); it != running.end(); ++it)
            if (it->first == pid) {
                status[it->second] = WIFEXITED(st) ? WEXITSTATUS(st) : 128;
                running.erase(it);
                break;
            }
    };
    while (next < cells.size() || !running.empty()) {
        while (next < cells.size() && running.size() < static_cast<std::size_t>(a.jobs)) {
            const auto& c = cells[next];
            fs::create_directories(c.dir);
            std::vector<std::string> args = {exe, "train", "--data", fs::absolute(a.data).string(), "--out",
                                             c.dir.string(), "--force", "--quiet", "--method", c.method, "--seed",
                                             std::to_string(c.seed)};
            args.insert(args.end(), forwarded.begin(), forwarded.end());
            args.insert(args.end(), {"--set", axis_key.at(a.axis) + "=" + c.value});
            running.emplace_back(spawn(args, c.dir / "train.log"), next);
            ++next;
        }
        reap_one();
    }
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (status[i] != 0)
            throw DataError("sweep cell " + cells[i].dir.filename().string() + " failed with exit code " +
                            std::to_string(status[i]) + " (see " + (cells[i].dir / "train.log").string() + ")");

    // ---- aggregate
    std::ofstream csv(dir / "results.csv");
    csv << "axis,value,method,seed,n_train_windows,n_val_windows,val_loss,mse,mae,auroc,auprc\n";
    struct Agg {
        std::vector<std::optional<double>> mse, mae, auroc, auprc, loss;
        long n_train = -1;
    };
    std::map<std::pair<std::string, std::size_t>, Agg> agg;  // (method, value index)
    std::map<std::pair<std::string, std::uint64_t>, std::vector<std::pair<double, long>>> counts;
    for (const auto& c : cells) {
        const auto r = read_json(c.dir / "result.json");
        const auto m = EvalMetrics::from_json(r.at("val"));
        const long n_train = r.at("n_train_windows").get<long>();
        const long n_val = r.at("n_val_windows").get<long>();
        csv << a.axis << ',' << c.value << ',' << c.method << ',' << c.seed << ',' << n_train << ',' << n_val << ','
            << csv_cell(m.loss) << ',' << csv_cell(m.mse) << ',' << csv_cell(m.mae) << ',' << csv_cell(m.auroc) << ','
            << csv_cell(m.auprc) << "\n";
        const auto vi = static_cast<std::size_t>(std::find(a.values.begin(), a.values.end(), c.value) - a.values.begin());
        auto& g = agg[{c.method, vi}];
        g.mse.push_back(m.mse);
        g.mae.push_back(m.mae);
        g.auroc.push_back(m.auroc);
        g.auprc.push_back(m.auprc);
        g.loss.push_back(m.loss);
        g.n_train = n_train;
        counts[{c.method, c.seed}].emplace_back(std::stod(c.value), n_train + n_val);
    }

    std::ofstream summary(dir / "summary.csv");
    summary << "axis,value,method,n_seeds,n_train_windows";
    const std::vector<std::string> metric_names = {"val_loss", "mse", "mae", "auroc", "auprc"};
    for (const auto& m : metric_names) summary << ',' << m << "_mean," << m << "_std";
    summary << "\n";
    std::map<std::string, std::map<std::string, plot::Series>> curves;  // metric -> method -> series
    for (const auto& method : a.methods)
        for (std::size_t vi = 0; vi < a.values.size(); ++vi) {
            const auto& g = agg.at({method, vi});
            summary << a.axis << ',' << a.values[vi] << ',' << method << ',' << a.seeds.size() << ',' << g.n_train;
            const std::vector<const std::vector<std::optional<double>>*> cols = {&g.loss, &g.mse, &g.mae, &g.auroc,
                                                                                  &g.auprc};
            for (std::size_t k = 0; k < cols.size(); ++k) {
                const auto ms = report::mean_std(*cols[k]);
                summary << ',' << (ms.n ? json(ms.mean).dump() : "") << ',' << (ms.n ? json(ms.stddev).dump() : "");
                if (ms.n) {
                    auto& s = curves[metric_names[k]][method];
                    s.name = method;
                    s.x.push_back(values[vi]);
                    s.y.push_back(ms.mean);
                    s.err.push_back(ms.stddev);
                }
            }
            summary << "\n";
        }

    // Sample counts must not grow with the required window + horizon coverage,
    // and must not shrink as more training data is kept.
    bool monotone = true;
    for (auto& [key, pts] : counts) {
        std::sort(pts.begin(), pts.end());
        for (std::size_t i = 1; i < pts.size(); ++i) {
            const bool ok = a.axis == "data_ratio" ? pts[i].second >= pts[i - 1].second
                                                   : pts[i].second <= pts[i - 1].second;
            if (!ok) monotone = false;
        }
    }

    json plots = json::array();
    for (const auto& [metric, by_method] : curves) {
        std::vector<plot::Series> series;
        for (const auto& [_, s] : by_method) series.push_back(s);
        const auto file = "degradation_" + metric + ".svg";
        plot::line_chart(dir / file, series, metric + " vs " + a.axis + " (mean ± std over seeds)", a.axis, metric);
        plots.push_back(file);
    }
    write_json(dir / "sweep.json", {{"axis", a.axis},
                                    {"values", a.values},
                                    {"methods", a.methods},
                                    {"seeds", a.seeds},
                                    {"cells", cells.size()},
                                    {"sample_counts_monotone", monotone},
                                    {"plots", plots},
                                    {"version", CSRA_VERSION}});
    std::cout << json{{"out", dir.string()}, {"cells", cells.size()}, {"sample_counts_monotone", monotone}}.dump()
              << "\n";
    if (!monotone) throw DataError("sample counts are not monotone along the sweep axis");
    return 0;
}

// ---- ablate -------------------------------------------------------------------------------------

struct AblateArgs {
    ConfigFlags flags;
    std::string data;
    std::vector<std::string> variants = {"no_multisystem", "no_spectral", "no_composite_loss"};
    std::vector<std::uint64_t> seeds = {0};
    std::string out;
    bool force = false;
};

int cmd_ablate(const AblateArgs& a) {
    if (a.variants.empty()) throw UsageError("--variants is empty");
    if (a.seeds.empty()) throw UsageError("--seeds is empty");
    std::vector<Ablation> variants = {Ablation::None};
    for (const auto& v : a.variants) {
        const auto parsed = ablation_from_string(v);
        if (parsed == Ablation::None) throw UsageError("--variants: 'none' is always included as the full model");
        variants.push_back(parsed);
    }
    TrainConfig base = a.flags.resolve();
    base.method = Method::Csra;
    const auto ds = load_dataset(a.data);
    const fs::path dir = a.out.empty() ? runs_root() / "ablation" : fs::path(a.out);
    prepare_dir(dir, a.force);

    std::ofstream csv(dir / "ablation.csv");
    csv << "variant,seed,val_loss,mse,mae,auroc,auprc\n";
    std::map<Ablation, std::vector<EvalMetrics>> results;
    for (auto seed : a.seeds)
        for (auto v : variants) {
            TrainConfig c = base;
            c.seed = seed;
            c.ablation = v;
            const std::string name = (v == Ablation::None ? std::string("full") : to_string(v)) + "-s" + std::to_string(seed);
            fs::create_directories(dir / name);
            std::ofstream log(dir / name / "metrics.jsonl");
            Trainer t(c, ds);
            const auto w = t.loss_weights();
            t.on_step([&](const StepRecord& r) {
                auto j = step_json(r, w);
                j["type"] = "step";
                log << j.dump() << "\n";
            });
            t.fit();
            const auto m = t.evaluate_split("val");
            write_json(dir / name / "result.json", result_record(t, name));
            results[v].push_back(m);
            csv << (v == Ablation::None ? "full" : to_string(v)) << ',' << seed << ',' << csv_cell(m.loss) << ','
                << csv_cell(m.mse) << ',' << csv_cell(m.mae) << ',' << csv_cell(m.auroc) << ',' << csv_cell(m.auprc)
                << "\n";
            std::cerr << name << " val " << m.loss << "\n";
        }
    std::ofstream summary(dir / "summary.csv");
    summary << "variant,n_seeds,val_loss_mean,val_loss_std\n";
    for (auto v : variants) {
        std::vector<double> losses;
        for (const auto& m : results[v]) losses.push_back(m.loss);
        const auto ms = report::mean_std(losses);
        summary << (v == Ablation::None ? "full" : to_string(v)) << ',' << ms.n << ',' << json(ms.mean).dump() << ','
                << json(ms.stddev).dump() << "\n";
    }
    std::cout << json{{"out", dir.string()}, {"runs", a.seeds.size() * variants.size()}}.dump() << "\n";
    return 0;
}

// ---- plots --------------------------------------------------------------------------------------

struct PlotControllerArgs {
    std::string checkpoint;
    std::string data;
    std::string split = "val";
    std::string out;
};

int cmd_plot_controller(const PlotControllerArgs& a) {
    const auto ckpt = Checkpoint::load(a.checkpoint);
    if (!ckpt.has_prefix("aug."))
        throw DataError("checkpoint has no augmentor parameters (was it trained with --method noaug?)");
    const auto ds = load_dataset(a.data);
    auto trainer = Trainer::resume(ckpt, ds);
    const auto& windows = trainer->windows(a.split);
    const auto summary = report::summarize_controller(*trainer->augmentor(), windows);

    fs::create_directories(a.out);
    std::ofstream log(fs::path(a.out) / "u_log.jsonl");
    for (std::size_t i = 0; i < summary.u.size(); ++i) {
        const Mat& u = summary.u[i];
        json rows = json::array();
        for (Eigen::Index s = 0; s < u.rows(); ++s) rows.push_back(std::vector<double>(u.row(s).begin(), u.row(s).end()));
        log << json{{"sample", i},
                    {"trajectory_id", windows.trajectory_id[i]},
                    {"window_start", windows.window_start[i]},
                    {"u", rows}}
                   .dump(-1, ' ', false, json::error_handler_t::strict)
            << "\n";
    }
    json cells = json::array();
    for (Eigen::Index s = 0; s < summary.mean_u.rows(); ++s)
        cells.push_back(std::vector<double>(summary.mean_u.row(s).begin(), summary.mean_u.row(s).end()));
    write_json(fs::path(a.out) / "controller.json", {{"systems", summary.system_ids},
                                                      {"bands", summary.band_labels},
                                                      {"mean_u", cells},
                                                      {"system_mean", summary.system_mean},
                                                      {"samples", summary.u.size()},
                                                      {"split", a.split}});
    plot::heatmap(fs::path(a.out) / "controller_heatmap.svg", summary.mean_u, summary.system_ids, summary.band_labels,
                  "Mean modulation strength u by system and band");
    plot::bar_chart(fs::path(a.out) / "controller_bars.svg", summary.system_mean, summary.system_ids,
                    "Mean modulation strength per system", "mean u");
    std::cout << json{{"out", a.out}, {"samples", summary.u.size()}}.dump() << "\n";
    return 0;
}

struct PlotCaseArgs {
    std::string checkpoint;
    std::string data;
    int trajectory = 0;
    int window_start = 0;
    std::vector<std::string> variables;
    std::string out;
};

int cmd_plot_case(const PlotCaseArgs& a) {
    const auto ckpt = Checkpoint::load(a.checkpoint);
    if (!ckpt.has_prefix("aug."))
        throw DataError("checkpoint has no augmentor parameters (was it trained with --method noaug?)");
    const auto ds = load_dataset(a.data);
    if (a.trajectory < 0 || a.trajectory >= ds.n_trajectories)
        throw UsageError("--trajectory-id out of range [0, " + std::to_string(ds.n_trajectories) + ")");
    if (a.variables.empty()) throw UsageError("--variables is empty");
    std::vector<int> cols;
    for (const auto& name : a.variables) cols.push_back(ds.variable_index(name));

    auto trainer = Trainer::resume(ckpt, ds);
    const int w = trainer->config().window;
    if (a.window_start < 0 || a.window_start + w > ds.n_timesteps)
        throw UsageError("--window-start leaves the trajectory");
    const auto& z = trainer->zscore();
    Mat x(w, ds.n_variables);
    for (int t = 0; t < w; ++t)
        for (int v = 0; v < ds.n_variables; ++v) x(t, v) = (ds.value(a.trajectory, a.window_start + t, v) - z.mean(v)) / z.stddev(v);

    auto* aug = trainer->augmentor();
    const auto [augmented, diags] = aug->augment(x);
    const auto& schema = aug->schema();

    json vars = json::array();
    std::vector<plot::Series> series;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        const int v = cols[i];
        const int s = schema.system_of(v);
        const auto& idx = schema[s].variable_indices;
        const auto local = std::find(idx.begin(), idx.end(), v) - idx.begin();
        const auto& d = diags[static_cast<std::size_t>(s)];
        std::vector<double> orig, out, resid, logged, steps;
        for (int t = 0; t < w; ++t) {
            steps.push_back(t);
            orig.push_back(x(t, v));
            out.push_back(augmented(t, v));
            resid.push_back(augmented(t, v) - x(t, v));
            logged.push_back(d.signals.beta * d.signals.gate(t) * d.residual(t, local));
        }
        vars.push_back({{"name", a.variables[i]},
                        {"system", schema[s].id},
                        {"original", orig},
                        {"augmented", out},
                        {"residual", resid},
                        {"logged_residual", logged}});
        series.push_back({a.variables[i] + " original", steps, orig, {}});
        series.push_back({a.variables[i] + " augmented", steps, out, {}});
    }
    fs::create_directories(a.out);
    write_json(fs::path(a.out) / "case.json",
               {{"trajectory_id", a.trajectory}, {"window_start", a.window_start}, {"variables", vars}});
    plot::line_chart(fs::path(a.out) / "case.svg", series,
                     "Trajectory " + std::to_string(a.trajectory) + ": original vs augmented", "step in window",
                     "z-scored value");
    std::cout << json{{"out", a.out}, {"variables", a.variables}}.dump() << "\n";
    return 0;
}

int exit_code(const Error& e) {
    if (e.code() == "E_USAGE" || e.code() == "E_VALIDATION") return 2;
    if (e.code() == "E_DIVERGENCE") return 4;
    return 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Controlled spectral residual augmentation: experiment runner"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CSRA_VERSION);

    GenDataArgs gen;
    auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic cohort");
    c_gen->add_option("--seed", gen.seed, "Generator seed");
    c_gen->add_option("--n", gen.n, "Number of trajectories");
    c_gen->add_option("--t", gen.t, "Timesteps per trajectory");
    c_gen->add_option("--per-system", gen.per_system, "Variables per clinical system");
    c_gen->add_option("--coupling-scale", gen.coupling_scale, "Severity coupling multiplier (0 = pure noise)");
    c_gen->add_option("--out", gen.out, "Output directory")->required();
    c_gen->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train one model");
    train.flags.attach(c_train);
    c_train->add_option("--data", train.data, "Dataset directory")->required();
    c_train->add_option("--out", train.out, "Run directory (default $CSRA_RUNS_DIR/<run-id>)");
    c_train->add_option("--run-id", train.run_id, "Run identifier");
    c_train->add_option("--resume", train.resume, "Continue from a last.ckpt");
    c_train->add_option("--stop-after", train.stop_after, "Stop after this many epochs in this invocation");
    c_train->add_flag("--force", train.force, "Overwrite a non-empty run directory");
    c_train->add_flag("--quiet", train.quiet, "No progress output");

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    c_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    c_eval->add_option("--data", eval.data, "Dataset directory")->required();
    c_eval->add_option("--split", eval.split, "train | val | test");
    c_eval->add_option("--out", eval.out, "Write metrics JSON here");

    SweepArgs sweep;
    auto* c_sweep = app.add_subcommand("sweep", "Train over a grid of one axis x methods x seeds");
    sweep.flags.attach(c_sweep, false);
    c_sweep->add_option("--data", sweep.data, "Dataset directory")->required();
    c_sweep->add_option("--axis", sweep.axis, "window | h_cls | h_reg | data_ratio")->required();
    c_sweep->add_option("--values", sweep.values, "Axis values")->required()->delimiter(',');
    c_sweep->add_option("--methods", sweep.methods, "Methods")->delimiter(',');
    c_sweep->add_option("--seeds", sweep.seeds, "Seeds")->delimiter(',');
    c_sweep->add_option("--jobs", sweep.jobs, "Concurrent training processes");
    c_sweep->add_option("--out", sweep.out, "Output directory");
    c_sweep->add_flag("--force", sweep.force, "Overwrite a non-empty output directory");

    AblateArgs ablate;
    auto* c_ablate = app.add_subcommand("ablate", "Train the full model and its ablations");
    ablate.flags.attach(c_ablate, false);
    c_ablate->add_option("--data", ablate.data, "Dataset directory")->required();
    c_ablate->add_option("--variants", ablate.variants, "Ablation variants")->delimiter(',');
    c_ablate->add_option("--seeds", ablate.seeds, "Seeds")->delimiter(',');
    c_ablate->add_option("--out", ablate.out, "Output directory");
    c_ablate->add_flag("--force", ablate.force, "Overwrite a non-empty output directory");

    PlotControllerArgs pc;
    auto* c_pc = app.add_subcommand("plot-controller", "Heatmap of modulation strength by system and band");
    c_pc->add_option("--checkpoint", pc.checkpoint, "Checkpoint file")->required();
    c_pc->add_option("--data", pc.data, "Dataset directory")->required();
    c_pc->add_option("--split", pc.split, "train | val | test");
    c_pc->add_option("--out", pc.out, "Output directory")->required();

    PlotCaseArgs case_args;
    auto* c_case = app.add_subcommand("plot-case", "Original vs augmented trajectory overlay");
    c_case->add_option("--checkpoint", case_args.checkpoint, "Checkpoint file")->required();
    c_case->add_option("--data", case_args.data, "Dataset directory")->required();
    c_case->add_option("--trajectory-id", case_args.trajectory, "Trajectory index")->required();
    c_case->add_option("--window-start", case_args.window_start, "First timestep of the window");
    c_case->add_option("--variables", case_args.variables, "Variable names")->required()->delimiter(',');
    c_case->add_option("--out", case_args.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "E_USAGE: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*c_gen) return cmd_gen_data(gen);
        if (*c_train) return cmd_train(train);
        if (*c_eval) return cmd_eval(eval);
        if (*c_sweep) return cmd_sweep(sweep);
        if (*c_ablate) return cmd_ablate(ablate);
        if (*c_pc) return cmd_plot_controller(pc);
        if (*c_case) return cmd_plot_case(case_args);
    } catch (const Error& e) {
        std::cerr << e.code() << ": " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "E_INTERNAL: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
