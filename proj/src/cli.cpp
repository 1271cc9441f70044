#include "naturalfinger/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "naturalfinger/metrics.hpp"
#include "naturalfinger/plot.hpp"
#include "naturalfinger/run_config.hpp"
#include "naturalfinger/util.hpp"

namespace nf::cli {

namespace fs = std::filesystem;

namespace {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string zoo, gan, queries, out, model;
    std::string gan_kind = "reference";
    std::optional<double> threshold;
    bool keep_going = false;
    int jobs = 1;
};

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void write_run_record(const fs::path& dir, const std::string& command, const RunConfig& cfg, const Options& o) {
    nlohmann::json opts{{"zoo", o.zoo},         {"gan", o.gan},     {"queries", o.queries},
                        {"out", o.out},         {"model", o.model}, {"gan_kind", o.gan_kind},
                        {"keep_going", o.keep_going}, {"jobs", o.jobs}};
    if (o.threshold) opts["threshold"] = *o.threshold;
    atomic_write(dir / ("run_" + command + ".json"),
                 pretty({{"command", command}, {"config", cfg.to_json()}, {"options", opts}}));
}

ZooConfig zoo_config_of(const ZooManifest& manifest) {
    if (manifest.config.is_null() || manifest.config.empty()) {
        throw std::runtime_error("manifest carries no zoo config");
    }
    return ZooConfig::from_json(manifest.config);
}

int cmd_build_zoo(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream& err) {
    BuildOptions bo;
    bo.jobs = o.jobs;
    bo.log = [&](const std::string& s) { out << s << std::endl; };
    BuildResult r;
    try {
        r = build_zoo(cfg.zoo, o.zoo, bo);
    } catch (const ZooConfigMismatch& e) {
        throw ConfigError(e.what());
    }
    write_run_record(o.zoo, "build-zoo", cfg, o);
    out << "built " << r.built << ", already present " << r.skipped << ", failed " << r.failures.size() << "\n";
    for (const auto& [role, n] : r.manifest.counts_by_role) {
        out << "  " << role << ": " << n << " (planned " << r.manifest.planned_counts.at(role) << ")\n";
    }
    for (const auto& p : r.manifest.problems()) err << "manifest: " << p << "\n";
    for (const auto& [id, msg] : r.failures) err << "failed: " << id << ": " << msg << "\n";
    if (!r.failures.empty() && !o.keep_going) return kFailure;
    return kSuccess;
}

int cmd_train_gan(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream&) {
    const ZooManifest manifest = load_manifest(o.zoo);
    const ZooConfig zc = zoo_config_of(manifest);
    const ZooData data = make_zoo_data(zc);
    GanTrainStats stats;
    GanHandle gan = train_reference_gan(data.split.pos_train, cfg.gan, derive_seed(cfg.seed, "gan"), &stats);
    gan.save(o.gan);

    // How often the source model recognises the conditioning class.
    const ModelRecord* src = manifest.find(manifest.source_id);
    double agreement_rate = -1.0;
    if (src) {
        Classifier source = load_zoo_model(o.zoo, *src);
        const LatentBatch probe = sample_latents(500, gan.latent_dim(), gan.num_classes(), derive_seed(cfg.seed, "gan-probe"));
        const auto pred = source.predict(to_unit_range(gan.generate(probe.z, probe.class_labels), gan.meta()));
        int hits = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == probe.class_labels[i];
        agreement_rate = hits / 500.0;
    }
    atomic_write(fs::path(o.gan) / "training.json",
                 pretty({{"config", gan_config_to_json(cfg.gan)},
                         {"mean_real_score", stats.mean_real_score},
                         {"mean_fake_score", stats.mean_fake_score},
                         {"source_class_agreement", agreement_rate},
                         {"train_split", "pos_train"}}));
    write_run_record(o.gan, "train-gan", cfg, o);
    out << "mean D(real) " << fmt(stats.mean_real_score) << ", mean D(fake) " << fmt(stats.mean_fake_score)
        << ", source agrees with condition " << fmt(agreement_rate) << "\n";
    return kSuccess;
}

int cmd_fingerprint(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream&) {
    const ZooManifest manifest = load_manifest(o.zoo);
    LoadedModels models = load_trained_models(o.zoo, manifest);
    GanHandle gan = load_backend(o.gan, o.gan_kind);
    const auto t0 = std::chrono::steady_clock::now();
    QuerySet q = generate_fingerprint(models.view(), gan, cfg.fingerprint);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    q.provenance["zoo_manifest_hash"] = manifest.config_hash;
    save_query_set(q, o.queries);
    write_run_record(o.queries, "fingerprint", cfg, o);
    out << "query set: " << q.size() << " samples (" << q.stats.candidates << " candidates, "
        << q.stats.initial_survivors << " initial, " << q.stats.labeled << " labeled, " << q.stats.optimized
        << " optimized) in " << fmt(secs, "%.1f") << " s\n";
    return kSuccess;
}

int cmd_verify(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream& err) {
    const QuerySet q = load_query_set(o.queries);
    const double threshold = o.threshold.value_or(cfg.threshold);
    const fs::path model_dir = o.model;
    Predictor suspect = [&](const Tensor& x) {
        if (!fs::exists(model_dir / "model.json")) {
            throw TransportError("no model checkpoint at " + model_dir.string());
        }
        Classifier m = load_classifier(model_dir);
        return m.predict(x);
    };
    try {
        const VerifyResult r = verify(suspect, q, threshold, model_dir.filename().string());
        out << "verdict: " << to_string(r.verdict) << "\nmatching_rate: " << fmt(r.match.matching_rate)
            << "\nthreshold: " << fmt(threshold) << "\n";
    } catch (const TransportError& e) {
        err << "transport error: " << e.what() << "\n";
        return kFailure;
    }
    return kSuccess;
}

EvalReport evaluate_to(const RunConfig& cfg, const Options& o) {
    const ZooManifest manifest = load_manifest(o.zoo);
    const QuerySet q = load_query_set(o.queries);
    EvalReport report = evaluate_zoo(manifest, o.zoo, q, cfg.grid_step);
    atomic_write(fs::path(o.out) / "report.json", pretty(report.to_json()));
    return report;
}

void print_summary(const EvalReport& r, std::ostream& out) {
    out << "ARUC (held-out): " << fmt(r.held_out.aruc) << "\n"
        << "ARUC (held-out positives vs all negatives): " << fmt(r.held_out_vs_all_negatives.aruc) << "\n"
        << "ARUC (all models): " << fmt(r.all_models.aruc) << "\n"
        << "ARUC (trained models): " << fmt(r.trained_only.aruc) << "\n"
        << "median mirror margin (held-out): " << fmt(r.median_margin_held_out) << "\n";
}

int cmd_evaluate(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream& err) {
    const EvalReport r = evaluate_to(cfg, o);
    write_run_record(o.out, "evaluate", cfg, o);
    print_summary(r, out);
    for (const auto& e : r.errors) err << "error: " << e << "\n";
    return kSuccess;
}

int cmd_stealth(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream&) {
    const ZooManifest manifest = load_manifest(o.zoo);
    const ZooData data = make_zoo_data(zoo_config_of(manifest));
    const ModelRecord* src = manifest.find(manifest.source_id);
    if (!src) throw std::runtime_error("zoo has no source model");
    Classifier source = load_zoo_model(o.zoo, *src);
    const QuerySet q = load_query_set(o.queries);
    const StealthReport r = run_stealth(data.split.finetune, data.split.test, source, q.images(), cfg.stealth);
    atomic_write(fs::path(o.out) / "stealth_report.json", pretty(r.to_json()));
    plot::write_svg(fs::path(o.out) / "detection.svg",
                    plot::bar_chart("Detection rate (mean over detector seeds)",
                                    {"fingerprint", "gaussian noise", "natural", "fgsm"},
                                    {r.mean.query_rate, r.mean.noise_rate, r.mean.natural_rate,
                                     r.mean.adversarial_rate}));
    write_run_record(o.out, "stealth", cfg, o);
    out << "detection rate: fingerprint " << fmt(r.mean.query_rate) << ", gaussian noise " << fmt(r.mean.noise_rate)
        << ", natural " << fmt(r.mean.natural_rate) << ", fgsm " << fmt(r.mean.adversarial_rate) << "\n";
    return kSuccess;
}

int cmd_report(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream& err) {
    const EvalReport r = evaluate_to(cfg, o);
    const auto plots = write_report_plots(r, o.out);
    write_run_record(o.out, "report", cfg, o);
    print_summary(r, out);
    for (const auto& p : plots) out << "wrote " << p.string() << "\n";
    for (const auto& e : r.errors) err << "error: " << e << "\n";
    return kSuccess;
}

int dispatch(const std::string& command, const RunConfig& cfg, const Options& o, std::ostream& out,
             std::ostream& err) {
    if (command == "build-zoo") return cmd_build_zoo(cfg, o, out, err);
    if (command == "train-gan") return cmd_train_gan(cfg, o, out, err);
    if (command == "fingerprint") return cmd_fingerprint(cfg, o, out, err);
    if (command == "verify") return cmd_verify(cfg, o, out, err);
    if (command == "evaluate") return cmd_evaluate(cfg, o, out, err);
    if (command == "stealth") return cmd_stealth(cfg, o, out, err);
    if (command == "report") return cmd_report(cfg, o, out, err);
    throw ConfigError("unknown command '" + command + "'");
}

bool parse_switch(const std::string& v, const char* name) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError(std::string("--") + name + " expects on or off, got '" + v + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Natural fingerprints for DNN ownership verification"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, profile_flag;
    std::optional<std::uint64_t> seed;
    Options o;
    app.add_option("--config", config_path, "JSON run config overriding the profile defaults");
    app.add_option("--profile", profile_flag, "desk or full");
    app.add_option("--seed", seed, "global seed");
    app.add_option("--jobs", o.jobs, "parallel zoo jobs")->check(CLI::PositiveNumber);
    app.add_option("--out", o.out, "output directory");

    auto* build = app.add_subcommand("build-zoo", "train the model zoo");
    build->add_flag("--keep-going", o.keep_going, "exit 0 even if some records failed");
    auto* train_gan = app.add_subcommand("train-gan", "train the reference conditional GAN");
    auto* fingerprint = app.add_subcommand("fingerprint", "generate a query set");
    auto* verify_cmd = app.add_subcommand("verify", "verify one suspect model");
    auto* evaluate = app.add_subcommand("evaluate", "evaluate the query set on the whole zoo");
    auto* stealth = app.add_subcommand("stealth", "train abnormal-query detectors and score the query set");
    auto* report = app.add_subcommand("report", "evaluation report with plots");
    auto* replay = app.add_subcommand("replay", "re-run a command from its run_<command>.json record");

    for (auto* sub : {train_gan, fingerprint, evaluate, stealth, report}) sub->add_option("--zoo", o.zoo, "zoo directory");
    for (auto* sub : {train_gan, fingerprint}) sub->add_option("--gan", o.gan, "GAN checkpoint directory");
    fingerprint->add_option("--gan-kind", o.gan_kind, "GAN backend kind");
    for (auto* sub : {verify_cmd, evaluate, stealth, report}) sub->add_option("--queries", o.queries, "query set directory");
    verify_cmd->add_option("--model", o.model, "suspect classifier checkpoint directory")->required();
    verify_cmd->add_option("--threshold", o.threshold, "matching-rate threshold");

    std::string adv_label, input_transform, disc_loss, disc_mode;
    std::optional<int> iterations, query_size, screen_draws, model_batch;
    std::optional<double> lambda, lr, margin, epsilon;
    fingerprint->add_option("--trick-adv-label", adv_label, "on|off");
    fingerprint->add_option("--trick-transform", input_transform, "on|off");
    fingerprint->add_option("--trick-disc-loss", disc_loss, "on|off");
    fingerprint->add_option("--disc-mode", disc_mode, "naturalness|paper_literal");
    fingerprint->add_option("--iterations", iterations);
    fingerprint->add_option("--query-size", query_size);
    fingerprint->add_option("--screen-draws", screen_draws);
    fingerprint->add_option("--model-batch", model_batch);
    fingerprint->add_option("--lambda", lambda);
    fingerprint->add_option("--lr", lr);
    fingerprint->add_option("--cw-margin", margin);
    fingerprint->add_option("--fgsm-epsilon", epsilon);

    std::string replay_path;
    replay->add_option("record", replay_path, "run record")->required();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << app.help();
        return kConfigError;
    }

    try {
        std::string command;
        RunConfig cfg;
        if (replay->parsed()) {
            const auto record = read_json(replay_path);
            command = record.at("command").get<std::string>();
            cfg = RunConfig::from_json(record.at("config"));
            const auto& opts = record.at("options");
            o.zoo = opts.value("zoo", std::string());
            o.gan = opts.value("gan", std::string());
            o.queries = opts.value("queries", std::string());
            o.out = opts.value("out", std::string());
            o.model = opts.value("model", std::string());
            o.gan_kind = opts.value("gan_kind", o.gan_kind);
            o.keep_going = opts.value("keep_going", false);
            o.jobs = opts.value("jobs", 1);
            if (opts.contains("threshold")) o.threshold = opts.at("threshold").get<double>();
        } else {
            command = app.get_subcommands().front()->get_name();
            nlohmann::json file = nlohmann::json::object();
            if (!config_path.empty()) {
                try {
                    file = read_json(config_path);
                } catch (const std::exception& e) {
                    throw ConfigError("cannot read config " + config_path + ": " + e.what());
                }
            }
            if (!profile_flag.empty()) file["profile"] = profile_flag;
            cfg = RunConfig::from_json(file);
            if (seed) cfg.apply_seed(*seed);
            if (!adv_label.empty()) cfg.fingerprint.trick_adversarial_label = parse_switch(adv_label, "trick-adv-label");
            if (!input_transform.empty()) cfg.fingerprint.trick_input_transform = parse_switch(input_transform, "trick-transform");
            if (!disc_loss.empty()) cfg.fingerprint.trick_discriminator_loss = parse_switch(disc_loss, "trick-disc-loss");
            if (!disc_mode.empty()) {
                cfg.fingerprint = FingerprintConfig::from_json(
                    [&] { auto j = cfg.fingerprint.to_json(); j["discriminator_mode"] = disc_mode; return j; }());
            }
            if (iterations) cfg.fingerprint.iterations = *iterations;
            if (query_size) cfg.fingerprint.query_size = *query_size;
            if (screen_draws) cfg.fingerprint.screen_transform_draws = *screen_draws;
            if (model_batch) cfg.fingerprint.model_batch_size = *model_batch;
            if (lambda) cfg.fingerprint.lambda = *lambda;
            if (lr) cfg.fingerprint.lr = *lr;
            if (margin) cfg.fingerprint.cw_margin = *margin;
            if (epsilon) cfg.fingerprint.fgsm_epsilon = *epsilon;

            // --out names the primary artifact directory of each command.
            if (command == "build-zoo" && o.zoo.empty()) o.zoo = o.out;
            if (command == "train-gan" && o.gan.empty()) o.gan = o.out;
            if (command == "fingerprint" && o.queries.empty()) o.queries = o.out;
            if (o.zoo.empty()) o.zoo = cfg.paths.zoo;
            if (o.gan.empty()) o.gan = cfg.paths.gan;
            if (o.queries.empty()) o.queries = cfg.paths.queries;
            if (o.out.empty()) o.out = cfg.paths.out;
            cfg.paths = {o.zoo, o.gan, o.queries, o.out};
        }
        cfg.validate();
        return dispatch(command, cfg, o, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const nlohmann::json::exception& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

}  // namespace nf::cli
