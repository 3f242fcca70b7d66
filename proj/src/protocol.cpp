#include "fpad/protocol.hpp"

#include "fpad/checkpoint.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/log.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <sstream>

namespace fpad {

std::size_t count_patches(const Manifest& manifest, Split split) {
    std::size_t n = 0;
    for (const auto& r : manifest.records)
        if (r.kind == SampleKind::Patch && r.split == split && r.quality != Quality::Rejected) ++n;
    return n;
}

Preprocess preprocess_from_metadata(const DenseNetConfig& model, const std::map<std::string, std::string>& metadata) {
    Preprocess pre;
    pre.input_size = model.input_size;
    pre.color_mode = model.input_channels == 1 ? ColorMode::Grayscale : ColorMode::RGB;
    if (auto it = metadata.find("color-mode"); it != metadata.end()) {
        if (auto m = parse_color_mode(it->second)) pre.color_mode = *m;
    }
    if (auto it = metadata.find("resize-to"); it != metadata.end() && it->second != "none")
        pre.resize_to = model.input_size;
    return pre;
}

ProtocolResult evaluate_model(DenseNet<float>& model, const Preprocess& pre, const Manifest& manifest,
                              const std::filesystem::path& data_root, const EvaluateOptions& options) {
    ProtocolResult out;
    out.label = options.label;
    out.color_mode = pre.color_mode;
    out.unknown_species = options.unknown_species;
    out.n_train = count_patches(manifest, Split::Train);
    out.n_validation = count_patches(manifest, Split::Validation);
    out.n_test = count_patches(manifest, Split::Test);
    model.set_mode(Mode::Eval);
    out.param_count = model.param_count();
    out.image_dim = model.config().input_size;
    out.scores = score(model, manifest, options.split, data_root, pre, 64, options.threads);
    if (out.scores.empty())
        throw ConfigError(std::string(to_string(options.split)) + " split has no patches to score");
    out.report = compute_report(out.scores, options.threshold, options.unknown_species);

    bool has_attack = false, has_live = false;
    for (const auto& s : out.scores) (is_attack(s.species) ? has_attack : has_live) = true;
    if (has_attack && has_live) out.report.deer = compute_deer(out.scores);
    return out;
}

ProtocolResult run_protocol(const Manifest& manifest, const std::filesystem::path& data_root,
                            const ProtocolConfig& config, DenseNet<float>* trained_out) {
    std::optional<DenseNet<float>> model;
    Preprocess pre = preprocess_for(config.train);
    std::vector<EpochStats> history;
    if (config.checkpoint) {
        Checkpoint ck = load_checkpoint(*config.checkpoint);
        pre = preprocess_from_metadata(ck.model.config(), ck.metadata);
        model.emplace(std::move(ck.model));
    } else {
        TrainResult trained = train(config.train, manifest, data_root);
        history = std::move(trained.history);
        model.emplace(std::move(trained.model));
    }
    EvaluateOptions eo;
    eo.split = Split::Test;
    eo.threshold = config.threshold;
    eo.unknown_species = config.train.unknown_species;
    eo.threads = config.train.threads;
    eo.label = config.label;
    ProtocolResult out = evaluate_model(*model, pre, manifest, data_root, eo);
    out.history = std::move(history);
    log::info("protocol.done", {{"label", out.label},
                                {"params", std::to_string(out.param_count)},
                                {"n_test", std::to_string(out.scores.size())}});
    if (trained_out) *trained_out = *model;
    return out;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

std::vector<Species> columns(const std::set<Species>& unknown, bool want_unknown) {
    std::vector<Species> out;
    for (Species s : kAllSpecies)
        if (is_attack(s) && (unknown.count(s) > 0) == want_unknown) out.push_back(s);
    return out;
}

std::string cell(const EvalReport& r, Species s) {
    const SpeciesErrors* e = r.find(s);
    return e ? format_percent(e->apcer_percent()) : "n/a";
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

std::string full_precision(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string render_report_csv(const std::vector<ProtocolResult>& rows) {
    std::ostringstream os;
    os << "model,color_mode,metric,species,partition,count,errors,percent\n";
    for (const auto& row : rows) {
        const std::string prefix = csv_field(row.label) + "," + std::string(to_string(row.color_mode)) + ",";
        const EvalReport& r = row.report;
        for (const auto& e : r.species)
            os << prefix << "apcer," << species_code(e.species) << "," << (e.unknown ? "unknown" : "known") << ","
               << e.n_attacks << "," << e.n_misclassified << "," << format_percent(e.apcer_percent()) << "\n";
        for (Species s : r.omitted)
            os << prefix << "apcer," << species_code(s) << "," << (row.unknown_species.count(s) ? "unknown" : "known")
               << ",0,0,\n";
        if (r.bonafide)
            os << prefix << "bpcer,Live,bonafide," << r.bonafide->n_live << "," << r.bonafide->n_misclassified << ","
               << format_percent(r.bonafide->bpcer_percent()) << "\n";
        if (r.deer) os << prefix << "d_eer,,,,," << format_percent(r.deer->eer_percent) << "\n";
        os << prefix << "threshold,,,,," << full_precision(r.threshold) << "\n";
        os << prefix << "trainable_params,,," << row.param_count << ",,\n";
        os << prefix << "image_dim,,," << row.image_dim << ",,\n";
        os << prefix << "train_count,,," << row.n_train << ",,\n";
        os << prefix << "validation_count,,," << row.n_validation << ",,\n";
        os << prefix << "test_count,,," << row.n_test << ",,\n";
    }
    return os.str();
}

std::string render_report_text(const std::vector<ProtocolResult>& rows) {
    if (rows.empty()) return "";
    const auto known = columns(rows.front().unknown_species, false);
    const auto unknown = columns(rows.front().unknown_species, true);
    std::ostringstream os;
    os << "PAD result summary, decision threshold " << full_precision(rows.front().report.threshold)
       << " on the spoof probability\n";
    os << "APCER % per PAI species (known | unknown), BPCER %, D-EER %\n\n";

    auto line = [&](const std::vector<std::string>& cells, const std::vector<int>& widths) {
        for (std::size_t i = 0; i < cells.size(); ++i) os << std::left << std::setw(widths[i]) << cells[i];
        os << "\n";
    };
    std::vector<std::string> head{"Model", "Color", "Params", "Dim", "Train", "Val", "Test"};
    std::size_t label_width = 15;
    for (const auto& row : rows) label_width = std::max(label_width, row.label.size());
    std::vector<int> widths{static_cast<int>(label_width) + 1, 11, 10, 9, 8, 7, 7};
    for (Species s : known) {
        head.push_back(std::string(species_code(s)));
        widths.push_back(7);
    }
    head.push_back("|");
    widths.push_back(2);
    for (Species s : unknown) {
        head.push_back(std::string(species_code(s)) + "*");
        widths.push_back(7);
    }
    head.push_back("BPCER");
    widths.push_back(7);
    head.push_back("D-EER");
    widths.push_back(7);
    line(head, widths);

    for (const auto& row : rows) {
        std::vector<std::string> cells{row.label,
                                       std::string(to_string(row.color_mode)),
                                       std::to_string(row.param_count),
                                       std::to_string(row.image_dim) + "*" + std::to_string(row.image_dim),
                                       std::to_string(row.n_train),
                                       std::to_string(row.n_validation),
                                       std::to_string(row.n_test)};
        for (Species s : known) cells.push_back(cell(row.report, s));
        cells.push_back("|");
        for (Species s : unknown) cells.push_back(cell(row.report, s));
        cells.push_back(row.report.bonafide ? format_percent(row.report.bonafide->bpcer_percent()) : "n/a");
        cells.push_back(row.report.deer ? format_percent(row.report.deer->eer_percent) : "n/a");
        line(cells, widths);
    }
    os << "\n* unknown PAI species: never seen in training or validation\n";

    os << "\nRaw counts (misclassified / presented)\n";
    for (const auto& row : rows) {
        os << "  " << row.label << " [" << to_string(row.color_mode) << "]:";
        for (const auto& e : row.report.species)
            os << " " << species_code(e.species) << " " << e.n_misclassified << "/" << e.n_attacks;
        if (row.report.bonafide) os << " Live " << row.report.bonafide->n_misclassified << "/" << row.report.bonafide->n_live;
        os << "\n";
        if (!row.report.omitted.empty()) {
            os << "  omitted (no test samples):";
            for (Species s : row.report.omitted) os << " " << species_code(s);
            os << "\n";
        }
    }
    return os.str();
}

std::string render_scores_csv(const std::vector<ScoredSample>& scores) {
    std::ostringstream os;
    os << "record_id,species,split,score\n";
    for (const auto& s : scores)
        os << s.record_id << "," << to_string(s.species) << "," << to_string(s.split) << "," << full_precision(s.score)
           << "\n";
    return os.str();
}

void write_report_files(const std::vector<ProtocolResult>& rows, const std::filesystem::path& out_dir) {
    write_file_atomic(out_dir / "report.csv", render_report_csv(rows));
    write_file_atomic(out_dir / "report.txt", render_report_text(rows));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string name = i == 0 ? "scores.csv" : "scores_row" + std::to_string(i + 1) + ".csv";
        write_file_atomic(out_dir / name, render_scores_csv(rows[i].scores));
    }
}

}  // namespace fpad
