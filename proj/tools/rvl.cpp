// rvl: command-line driver for dataset synthesis, training stages, evaluation and sweeps.
//
//   rvl synth|train-backbone|self-label|train-localiser|eval|sweep|baseline
//       --config <path> --out <dir> [--seed <u64>]
//
// Exit codes: 0 success, 2 config error, 3 runtime failure.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>

#include "CLI11.hpp"

#include "rvl/experiment.hpp"

using namespace rvl;

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

void info(const std::string& msg) { std::cerr << "[rvl] " << msg << "\n"; }

/// Overwrite-with-warning policy for stage outputs.
void claim(const fs::path& p) {
    if (fs::exists(p)) {
        info("warning: overwriting " + p.string());
        fs::remove_all(p);
    }
}

struct Run {
    ExperimentConfig cfg;
    fs::path out;

    fs::path dataset() const { return out / "dataset"; }
    fs::path backbone(const std::string& flavour) const { return out / ("backbone_" + flavour); }
    fs::path labels(const std::string& source) const { return out / ("labels_" + source + ".csv"); }
    fs::path localiser(const std::string& name) const { return out / ("localiser_" + name); }

    Split split() const { return read_split(dataset()); }

    void snapshot() const {
        fs::create_directories(out);
        const fs::path p = out / "config.json";
        if (fs::exists(p) && detail::read_json(p, "config snapshot") != cfgio::to_json(cfg))
            info("warning: config differs from the existing snapshot; overwriting " + p.string());
        save_config(cfg, p);
    }
};

void save_backbone(ssl::SslModel& m, const fs::path& dir) {
    claim(dir);
    ad::save_params(m.trainable(), dir);
}

ssl::SslModel load_backbone(const ExperimentConfig& c, const fs::path& dir) {
    if (!fs::exists(dir / "params.json"))
        throw NotFoundError("no backbone at " + dir.string() + " (run `rvl train-backbone` first)");
    ssl::SslModel m = ssl::make_model(c.ssl, c.height(), c.width());
    ad::ParamSet ps = m.trainable();
    ad::load_params(ps, dir);
    return m;
}

Localiser load_localiser(const ExperimentConfig& c, const fs::path& dir) {
    Localiser net(c.loc_arch, c.synth.radio, c.loc.seed);
    ad::load_params(net.params(), dir);
    return net;
}

int cmd_synth(const Run& r) {
    const auto t0 = std::chrono::steady_clock::now();
    Split s = synthesize_split(r.cfg, [](int done, int n) {
        if (done % 100 == 0 || done == n) info("synth " + std::to_string(done) + "/" + std::to_string(n));
    });
    claim(r.dataset());
    write_split(s, r.dataset(), r.cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    info("wrote " + std::to_string(s.train.size() + s.val.size()) + " pairs to " + r.dataset().string() + " in " +
         std::to_string(secs) + " s");
    return 0;
}

int cmd_train_backbone(const Run& r) {
    Split s = r.split();
    const std::string fl = ssl::to_string(r.cfg.ssl.flavour);
    info("train " + fl + " backbone, " + std::to_string(r.cfg.ssl.steps) + " steps on " + std::to_string(s.train.size()) +
         " pairs");
    auto res = run_backbone(r.cfg, s.train, [&](int step, double loss) {
        if (step % 50 == 0 || step + 1 == r.cfg.ssl.steps)
            info("step " + std::to_string(step) + " loss " + std::to_string(loss));
    });
    save_backbone(res.model, r.backbone(fl));
    write_losses_csv((r.out / ("ssl_losses_" + fl + ".csv")).string(), res.losses);
    return 0;
}

int cmd_self_label(const Run& r) {
    Split s = r.split();
    const std::string fl = ssl::to_string(r.cfg.ssl.flavour);
    ssl::SslModel m = load_backbone(r.cfg, r.backbone(fl));
    SelfLabelRun sl = run_self_label(r.cfg, m, s.train);
    write_labels_csv(r.labels(fl).string(), sl.labels);
    write_labels_csv((r.out / ("labels_" + fl + "_raw.csv")).string(), sl.raw);
    std::ofstream out(r.out / ("selflabel_" + fl + ".json"));
    out << json{{"range_offset", sl.cal.range_offset},
                {"azimuth_offset", sl.cal.azimuth_offset},
                {"n_cal", sl.cal.n_cal},
                {"median_bin_error", sl.bin_errors.empty() ? json(nullptr) : json(median_of(sl.bin_errors))}}
                .dump(2)
        << "\n";
    if (!sl.bin_errors.empty()) info("self-label median bin error " + std::to_string(median_of(sl.bin_errors)));
    return 0;
}

std::vector<SelfLabel> labels_for(const Run& r, const Split& s, const std::string& source) {
    if (source == "supervised") return groundtruth_labels(s.train);
    const fs::path p = r.labels(source);
    if (!fs::exists(p)) {
        const char* hint = source == "fusion" ? "rvl baseline" : "rvl self-label";
        throw NotFoundError("no labels at " + p.string() + " (run `" + hint + "` first)");
    }
    return read_labels_csv(p.string());
}

int cmd_train_localiser(const Run& r) {
    Split s = r.split();
    const std::string& src = r.cfg.loc_labels;
    auto labels = labels_for(r, s, src);
    info("train localiser on " + src + " labels");
    auto res = run_localiser(r.cfg, s.train, labels, [](int e, double l) {
        info("epoch " + std::to_string(e) + " loss " + std::to_string(l));
    });
    claim(r.localiser(src));
    ad::save_params(res.net.params(), r.localiser(src));
    return 0;
}

int cmd_eval(const Run& r) {
    Split s = r.split();
    std::vector<MetricsRow> rows;
    for (const char* name : {"supervised", "MCL", "SCL", "CL", "fusion"}) {
        const fs::path dir = r.localiser(name);
        if (!fs::exists(dir / "params.json")) continue;
        auto m = evaluate_localiser(name, r.cfg, load_localiser(r.cfg, dir), s.val);
        write_predictions_csv((r.out / ("predictions_" + std::string(name) + ".csv")).string(), m.ids, m.preds);
        rows.push_back(m.row);
    }
    if (fs::exists(r.out / "detections.csv")) rows.push_back(evaluate_cfar_genie(r.cfg, s.val).row);
    if (rows.empty()) throw NotFoundError("nothing to evaluate in " + r.out.string() +
                                          " (run `rvl train-localiser` or `rvl baseline` first)");
    write_metrics_csv((r.out / "metrics.csv").string(), rows);
    for (const auto& m : rows) info(m.method + " p50 " + std::to_string(m.p50) + " m, p90 " + std::to_string(m.p90) + " m");
    return 0;
}

int cmd_baseline(const Run& r) {
    Split s = r.split();
    std::vector<std::pair<int, std::vector<Detection>>> dets;
    auto genie = evaluate_cfar_genie(r.cfg, s.val, &dets);
    info("CFAR-genie misses " + std::to_string(genie.misses) + "/" + std::to_string(s.val.size()));
    write_detections_csv((r.out / "detections.csv").string(), dets);
    write_predictions_csv((r.out / "predictions_CFAR-genie.csv").string(), genie.ids, genie.preds);
    auto teacher = run_fusion_labels(r.cfg, s.train);
    write_labels_csv(r.labels("fusion").string(), teacher);
    info("train fusion-teacher student localiser");
    auto student = run_localiser(r.cfg, s.train, teacher);
    claim(r.localiser("fusion"));
    ad::save_params(student.net.params(), r.localiser("fusion"));
    return 0;
}

int cmd_sweep(const Run& r) {
    Split s = r.split();
    auto rows = run_sweep(r.cfg, s, info);
    write_sweep_csv((r.out / ("sweep_" + r.cfg.sweep.kind + ".csv")).string(), r.cfg.sweep.kind, rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"radio-visual self-supervised localisation experiments"};
    app.require_subcommand(1, 1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;

    const std::map<std::string, int (*)(const Run&)> commands{
        {"synth", cmd_synth},         {"train-backbone", cmd_train_backbone}, {"self-label", cmd_self_label},
        {"train-localiser", cmd_train_localiser}, {"eval", cmd_eval},     {"sweep", cmd_sweep},
        {"baseline", cmd_baseline}};
    for (const auto& [name, _] : commands) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "run directory")->required();
        sub->add_option("--seed", seed, "global seed (overrides the config)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigExit;
    }

    Run run;
    run.out = out_dir;
    try {
        run.cfg = load_config(config_path);
        if (seed) run.cfg.apply_seed(*seed);
        run.cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigExit;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        run.snapshot();
        return commands.at(name)(run);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const std::exception& e) {
        std::cerr << name << " failed: " << e.what() << "\n";
        return kRuntimeExit;
    }
}
