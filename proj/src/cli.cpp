#include "fpad/cli.hpp"

#include "fpad/annotations.hpp"
#include "fpad/checkpoint.hpp"
#include "fpad/dataset.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/log.hpp"
#include "fpad/parallel.hpp"
#include "fpad/patch.hpp"
#include "fpad/pipeline.hpp"
#include "fpad/protocol.hpp"
#include "fpad/server.hpp"
#include "fpad/train.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace fpad::cli {

namespace {

// Training settings exposed as `--<key> VALUE` on train and report; the same
// keys are accepted in --config files.
constexpr const char* kTrainKeys[] = {
    "preset",       "growth-rate", "blocks",   "stem-filters", "stem-kernel",  "bottleneck",
    "compression",  "input-size",  "color-mode", "resize-to",  "epochs",       "batch-size",
    "lr",           "lr-milestones", "lr-gamma", "momentum",   "weight-decay", "augment",
    "rotation",     "flip-prob",   "zoom",     "unknown-species",
};

struct Globals {
    std::string manifest = "manifest.jsonl";
    std::string data_root;
    std::uint64_t seed = 0;
    unsigned threads = default_thread_count();
    int verbose = 0;
    bool quiet = false;
    bool no_timestamps = false;

    CLI::Option* seed_opt = nullptr;
    CLI::Option* threads_opt = nullptr;

    fs::path root() const { return data_root.empty() ? fs::path(".") : fs::path(data_root); }
    fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : root() / path;
    }
    fs::path manifest_path() const { return resolve(manifest); }
};

struct TrainFlags {
    std::string config;
    std::map<std::string, std::string> overrides;
};

void add_train_flags(CLI::App* sub, TrainFlags& flags) {
    sub->add_option("--config", flags.config, "key = value settings file (flags override it)");
    for (const char* key : kTrainKeys) {
        const std::string k = key;
        sub->add_option_function<std::string>(
               "--" + k, [&flags, k](const std::string& v) { flags.overrides[k] = v; },
               "training setting '" + k + "'")
            ->type_name("VALUE");
    }
}

TrainConfig resolve_train_config(const Globals& g, const TrainFlags& flags) {
    std::map<std::string, std::string> settings;
    if (!flags.config.empty()) settings = load_key_value_file(g.resolve(flags.config));
    for (const auto& [k, v] : flags.overrides) settings[k] = v;
    if (g.seed_opt->count() > 0) settings["seed"] = std::to_string(g.seed);
    settings["threads"] = std::to_string(g.threads);
    TrainConfig config;
    apply_settings(config, settings);
    validate_train_config(config);
    return config;
}

void log_config(const std::string& command, const Globals& g, const std::map<std::string, std::string>& extra) {
    std::vector<std::string> storage;
    std::vector<log::Field> fields;
    std::map<std::string, std::string> all = extra;
    all["command"] = command;
    all["manifest"] = g.manifest_path().generic_string();
    all["data_root"] = g.root().generic_string();
    all["seed"] = std::to_string(g.seed);
    all["threads"] = std::to_string(g.threads);
    storage.reserve(all.size());
    for (const auto& [k, v] : all) {
        storage.push_back(k);
        fields.emplace_back(storage.back(), v);
    }
    log::event(log::Level::Info, "config", std::span<const log::Field>(fields));
}

std::map<std::string, std::string> with_prefix(const std::map<std::string, std::string>& m) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : m) out["train." + k] = v;
    return out;
}

std::string join_species(const std::vector<Species>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::string(species_code(v[i]));
    return s;
}

Species require_species(const std::string& s) {
    const auto sp = parse_species_lenient(s);
    if (!sp) throw ConfigError("unknown species '" + s + "'");
    return *sp;
}

std::vector<Species> parse_species_list(const std::string& s) {
    std::vector<Species> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(require_species(item));
    return out;
}

Split require_split(const std::string& s) {
    const auto sp = parse_split(s);
    if (!sp) throw ConfigError("unknown split '" + s + "' (train, validation, test)");
    return *sp;
}

AnnotationServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    if (args.empty() || args.front().empty() || args.front()[0] == '-') argv.push_back("fpad");
    for (const auto& a : args) argv.push_back(a.c_str());
    return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"fpad: fingerprint presentation attack detection pipeline", "fpad"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    if (const char* env = std::getenv("FPAD_DATA_ROOT")) g.data_root = env;
    app.add_option("--manifest", g.manifest, "manifest file (JSON lines), relative to the data root")
        ->capture_default_str();
    app.add_option("--data-root", g.data_root, "root for every relative path (default: $FPAD_DATA_ROOT or .)");
    g.seed_opt = app.add_option("--seed", g.seed, "global seed")->capture_default_str();
    g.threads_opt = app.add_option("--threads", g.threads, "worker threads; 1 gives the determinism contract")
                        ->check(CLI::PositiveNumber)
                        ->capture_default_str();
    app.add_flag("-v,--verbose", g.verbose, "debug logging");
    app.add_flag("-q,--quiet", g.quiet, "warnings and errors only");
    app.add_flag("--no-timestamps", g.no_timestamps, "omit ts= from log lines");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "register PNG files under DIR as manifest records");
    std::string ingest_species, ingest_sensor, ingest_kind = "single_fingertip", ingest_dir;
    ingest->add_option("--species", ingest_species, "PAI species (name or code, e.g. live, PL)")->required();
    ingest->add_option("--sensor", ingest_sensor, "capture device label")->required();
    ingest->add_option("--kind", ingest_kind, "four_finger, single_fingertip or patch")->capture_default_str();
    ingest->add_option("DIR", ingest_dir, "directory to scan")->required();

    // split
    auto* split = app.add_subcommand("split", "assign train/validation/test splits");
    SplitPlan plan;
    bool no_subject_disjoint = false;
    split->add_option("--train-fraction", plan.train_fraction)->capture_default_str();
    split->add_option("--validation-fraction", plan.validation_fraction)->capture_default_str();
    split->add_flag("--no-subject-disjoint", no_subject_disjoint, "split records instead of subjects");

    // blur-scan
    auto* blur = app.add_subcommand("blur-scan", "score fingertip sharpness and flag blurred records");
    double removal_fraction = 0.0, blur_threshold = 0.0;
    std::string blur_report = "blur_report";
    auto* rf_opt = blur->add_option("--removal-fraction", removal_fraction, "fraction of images to flag");
    auto* th_opt = blur->add_option("--threshold", blur_threshold, "explicit variance threshold");
    rf_opt->excludes(th_opt);
    blur->add_option("--report", blur_report, "report path prefix (.csv and .json are appended)")
        ->capture_default_str();

    // patchify
    auto* patchify_cmd = app.add_subcommand("patchify", "cut centre patches from single-fingertip images");
    std::size_t patch_size = 256;
    std::size_t downsample = 0;
    patchify_cmd->add_option("--patch-size", patch_size)->capture_default_str();
    patchify_cmd->add_option("--downsample-threshold", downsample,
                             "downsample fingertips whose min side exceeds this (0 = off)");

    // synth-gen
    auto* synth = app.add_subcommand("synth-gen", "generate the procedural desk-scale dataset");
    ProceduralSpec pspec;
    std::string spoof_list = "PL";
    bool synth_no_split = false;
    synth->add_option("--n", pspec.n_per_class, "images per class")->capture_default_str();
    synth->add_option("--size", pspec.size, "image edge in pixels")->capture_default_str();
    synth->add_option("--channels", pspec.channels, "1 or 3")->capture_default_str();
    synth->add_option("--spoof-species", spoof_list, "comma-separated spoof classes")->capture_default_str();
    synth->add_option("--subdir", pspec.subdir)->capture_default_str();
    synth->add_flag("--no-split", synth_no_split, "leave the generated records unassigned");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a DenseNet on the manifest's Train split");
    TrainFlags train_flags;
    std::string train_out = "model.ckpt", history_out;
    add_train_flags(train_cmd, train_flags);
    train_cmd->add_option("--out", train_out, "checkpoint path")->capture_default_str();
    train_cmd->add_option("--history", history_out, "per-epoch CSV (default: <out>.history.csv)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score a split with a checkpoint and write the report");
    std::string eval_ckpt, eval_split = "test", eval_out = "eval", eval_unknown;
    double eval_threshold = 0.5;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint from `fpad train`");
    eval_cmd->add_option("--threshold", eval_threshold, "decision threshold on the spoof probability")
        ->capture_default_str();
    eval_cmd->add_option("--split", eval_split)->capture_default_str();
    eval_cmd->add_option("--out-dir", eval_out)->capture_default_str();
    eval_cmd->add_option("--unknown-species", eval_unknown, "comma-separated unknown PAI species (default LL,PP)");

    // report
    auto* report_cmd = app.add_subcommand("report", "run the known/unknown PAI protocol and write report files");
    TrainFlags report_flags;
    std::string report_ckpt, report_out = "report", report_label = "DenseNet";
    double report_threshold = 0.5;
    bool grayscale_ablation = false;
    add_train_flags(report_cmd, report_flags);
    report_cmd->add_option("--checkpoint", report_ckpt, "score this checkpoint instead of training");
    report_cmd->add_option("--threshold", report_threshold)->capture_default_str();
    report_cmd->add_option("--out-dir", report_out)->capture_default_str();
    report_cmd->add_option("--label", report_label, "model name in the table")->capture_default_str();
    report_cmd->add_flag("--grayscale-ablation", grayscale_ablation, "add a grayscale-trained row");

    // serve
    auto* serve = app.add_subcommand("serve", "run the annotation HTTP service");
    ServerOptions sopts;
    std::string ui_dir, annotations_file = "annotations.jsonl";
    serve->add_option("--port", sopts.port)->capture_default_str();
    serve->add_option("--host", sopts.host)->capture_default_str();
    serve->add_option("--ui", ui_dir, "annotator UI bundle served at /");
    serve->add_option("--annotations", annotations_file)->capture_default_str();

    auto* summarize_cmd = app.add_subcommand("summarize", "print per-species record counts");
    auto* validate_cmd = app.add_subcommand("validate", "check manifest invariants");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    log::set_sink(&err);
    log::set_level(g.quiet ? log::Level::Warn : g.verbose > 0 ? log::Level::Debug : log::Level::Info);
    log::set_timestamps(!g.no_timestamps);

    try {
        const fs::path root = g.root();
        const fs::path manifest_path = g.manifest_path();

        if (ingest->parsed()) {
            IngestOptions opts;
            opts.species = require_species(ingest_species);
            opts.sensor = ingest_sensor;
            const auto kind = parse_kind(ingest_kind);
            if (!kind) throw ConfigError("unknown kind '" + ingest_kind + "'");
            opts.kind = *kind;
            log_config("ingest", g, {{"species", std::string(species_code(opts.species))},
                                     {"sensor", opts.sensor},
                                     {"kind", ingest_kind},
                                     {"dir", g.resolve(ingest_dir).generic_string()}});
            Manifest m = load_manifest_or_empty(manifest_path);
            const IngestResult r = ingest_directory(m, g.resolve(ingest_dir), root, opts);
            save_manifest(m, manifest_path);
            for (const auto& [path, reason] : r.skipped) log::warn("ingest.skipped", {{"path", path}, {"reason", reason}});
            out << "ingested " << r.added.size() << " record(s), skipped " << r.skipped.size() << "\n";
        } else if (split->parsed()) {
            plan.seed = g.seed;
            plan.subject_disjoint = !no_subject_disjoint;
            log_config("split", g, {{"train_fraction", log::fmt_double(plan.train_fraction)},
                                    {"validation_fraction", log::fmt_double(plan.validation_fraction)},
                                    {"subject_disjoint", plan.subject_disjoint ? "true" : "false"}});
            Manifest m = assign_splits(load_manifest(manifest_path), plan);
            save_manifest(m, manifest_path);
            out << render_summary(summarize(m));
        } else if (blur->parsed()) {
            BlurScanOptions opts;
            opts.threads = g.threads;
            if (rf_opt->count()) opts.removal_fraction = removal_fraction;
            if (th_opt->count()) opts.threshold = blur_threshold;
            if (!opts.removal_fraction && !opts.threshold) {
                err << "error: blur-scan needs --removal-fraction F or --threshold T\n\n" << blur->help();
                return kExitUsage;
            }
            log_config("blur-scan", g,
                       {{"removal_fraction", opts.removal_fraction ? log::fmt_double(*opts.removal_fraction) : "none"},
                        {"threshold", opts.threshold ? log::fmt_double(*opts.threshold) : "none"},
                        {"report", g.resolve(blur_report).generic_string()}});
            Manifest m = load_manifest(manifest_path);
            const BlurReport r = blur_scan(m, root, opts);
            const fs::path prefix = g.resolve(blur_report);
            write_blur_report(r, fs::path(prefix.string() + ".csv"), fs::path(prefix.string() + ".json"));
            save_manifest(m, manifest_path);
            std::size_t rejected = 0;
            for (const auto& rec : m.records) rejected += rec.quality == Quality::Rejected ? 1 : 0;
            out << "scanned " << r.scores.size() << " fingertip(s); threshold " << log::fmt_double(r.threshold, 10)
                << "; flagged " << rejected << " (" << log::fmt_double(100.0 * r.removed_fraction, 4) << "%)\n";
        } else if (patchify_cmd->parsed()) {
            PatchifyOptions opts;
            opts.spec.patch_size = patch_size;
            opts.spec.seed = g.seed;
            opts.threads = g.threads;
            if (downsample > 0) opts.downsample_threshold = downsample;
            log_config("patchify", g, {{"patch_size", std::to_string(patch_size)},
                                       {"downsample_threshold", downsample ? std::to_string(downsample) : "off"}});
            Manifest m = load_manifest(manifest_path);
            const PatchifyResult r = patchify(m, root, opts);
            save_manifest(m, manifest_path);
            for (const auto& [id, reason] : r.skipped) log::warn("patchify.skipped", {{"record", id}, {"reason", reason}});
            out << "cut " << r.patches << " patch(es) from " << r.sources << " fingertip(s), skipped "
                << r.skipped.size() << "\n";
        } else if (synth->parsed()) {
            pspec.seed = g.seed;
            pspec.spoof_species = parse_species_list(spoof_list);
            log_config("synth-gen", g, {{"n", std::to_string(pspec.n_per_class)},
                                        {"size", std::to_string(pspec.size)},
                                        {"channels", std::to_string(pspec.channels)},
                                        {"spoof_species", join_species(pspec.spoof_species)},
                                        {"subdir", pspec.subdir},
                                        {"split", synth_no_split ? "false" : "true"}});
            const auto records = generate_procedural_dataset(root, pspec);
            Manifest m = load_manifest_or_empty(manifest_path);
            const std::size_t added = upsert_records(m, records);
            if (!synth_no_split) {
                SplitPlan sp;
                sp.seed = g.seed;
                m = assign_splits(std::move(m), sp);
            }
            save_manifest(m, manifest_path);
            out << "generated " << records.size() << " image(s) (" << added << " new record(s))\n";
        } else if (train_cmd->parsed()) {
            const TrainConfig config = resolve_train_config(g, train_flags);
            log_config("train", g, with_prefix(describe(config)));
            const Manifest m = load_manifest(manifest_path);
            TrainResult r = train(config, m, root);
            const fs::path ckpt = g.resolve(train_out);
            std::map<std::string, std::string> meta = describe(config);
            meta["best-epoch"] = std::to_string(r.best_epoch);
            save_checkpoint(r.model, ckpt, meta);
            std::ostringstream hist;
            hist << "epoch,lr,train_loss,validation_accuracy\n";
            hist.precision(17);
            for (const auto& e : r.history)
                hist << e.epoch << "," << e.lr << "," << e.train_loss << "," << e.validation_accuracy << "\n";
            const fs::path hist_path = history_out.empty() ? fs::path(ckpt.string() + ".history.csv") : g.resolve(history_out);
            write_file_atomic(hist_path, hist.str());
            out << "trained " << r.history.size() << " epoch(s); best epoch " << r.best_epoch << "; "
                << r.model.param_count() << " trainable parameters; checkpoint " << ckpt.generic_string() << "\n";
        } else if (eval_cmd->parsed()) {
            if (eval_ckpt.empty())
                throw ConfigError("eval needs a model: pass --checkpoint FILE (create one with `fpad train`)");
            const fs::path ckpt_path = g.resolve(eval_ckpt);
            if (!fs::exists(ckpt_path))
                throw IoError("checkpoint " + ckpt_path.generic_string() + " does not exist (create one with `fpad train`)");
            EvaluateOptions eo;
            eo.split = require_split(eval_split);
            eo.threshold = eval_threshold;
            eo.threads = g.threads;
            if (!eval_unknown.empty()) {
                eo.unknown_species.clear();
                for (Species s : parse_species_list(eval_unknown)) eo.unknown_species.insert(s);
            }
            log_config("eval", g, {{"checkpoint", ckpt_path.generic_string()},
                                   {"threshold", log::fmt_double(eval_threshold)},
                                   {"split", eval_split},
                                   {"out_dir", g.resolve(eval_out).generic_string()}});
            Checkpoint ck = load_checkpoint(ckpt_path);
            const Preprocess pre = preprocess_from_metadata(ck.model.config(), ck.metadata);
            const Manifest m = load_manifest(manifest_path);
            const ProtocolResult row = evaluate_model(ck.model, pre, m, root, eo);
            write_report_files({row}, g.resolve(eval_out));
            out << render_report_text({row});
        } else if (report_cmd->parsed()) {
            ProtocolConfig pc;
            pc.train = resolve_train_config(g, report_flags);
            pc.threshold = report_threshold;
            pc.label = report_label;
            if (!report_ckpt.empty()) pc.checkpoint = g.resolve(report_ckpt);
            log_config("report", g, with_prefix(describe(pc.train)));
            const Manifest m = load_manifest(manifest_path);
            std::vector<ProtocolResult> rows{run_protocol(m, root, pc)};
            if (grayscale_ablation) {
                if (pc.checkpoint) throw ConfigError("--grayscale-ablation trains a second model; drop --checkpoint");
                ProtocolConfig gray = pc;
                apply_setting(gray.train, "color-mode", "grayscale");
                gray.label = pc.label + " (grayscale)";
                rows.push_back(run_protocol(m, root, gray));
            }
            write_report_files(rows, g.resolve(report_out));
            out << render_report_text(rows);
        } else if (serve->parsed()) {
            sopts.manifest_path = manifest_path;
            sopts.data_root = root;
            sopts.annotations_path = g.resolve(annotations_file);
            if (!ui_dir.empty()) sopts.ui_dir = g.resolve(ui_dir);
            log_config("serve", g, {{"host", sopts.host},
                                    {"port", std::to_string(sopts.port)},
                                    {"annotations", sopts.annotations_path.generic_string()},
                                    {"ui", ui_dir.empty() ? "placeholder" : sopts.ui_dir->generic_string()}});
            AnnotationServer server(sopts);
            const int port = server.bind();
            out << "listening on http://" << sopts.host << ":" << port << "/\n" << std::flush;
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            server.serve();
            g_server = nullptr;
        } else if (summarize_cmd->parsed()) {
            out << render_summary(summarize(load_manifest(manifest_path)));
        } else if (validate_cmd->parsed()) {
            const auto violations = validate_manifest(load_manifest(manifest_path));
            for (const auto& v : violations) out << to_string(v.kind) << " " << v.record_id << ": " << v.message << "\n";
            if (!violations.empty()) {
                err << "error: " << violations.size() << " manifest violation(s)\n";
                return kExitDomain;
            }
            out << "manifest ok\n";
        }
    } catch (const ValidationError& e) {
        err << "error [" << e.code() << "]: " << e.what() << "\n";
        for (const auto& d : e.details()) err << "  " << d << "\n";
        return kExitDomain;
    } catch (const Error& e) {
        err << "error [" << e.code() << "]: " << e.what() << "\n";
        return kExitDomain;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomain;
    }
    return kExitOk;
}

}  // namespace fpad::cli
