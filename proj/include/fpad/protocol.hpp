#pragma once

#include "fpad/metrics.hpp"
#include "fpad/train.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <vector>

namespace fpad {

struct ProtocolConfig {
    TrainConfig train;
    double threshold = 0.5;
    // Score this checkpoint instead of training.
    std::optional<std::filesystem::path> checkpoint;
    // Row label in the rendered table.
    std::string label = "DenseNet";
};

// One row of the summary table.
struct ProtocolResult {
    std::string label;
    ColorMode color_mode = ColorMode::RGB;
    EvalReport report;
    std::size_t param_count = 0;
    std::size_t image_dim = 0;
    std::size_t n_train = 0;
    std::size_t n_validation = 0;
    std::size_t n_test = 0;
    std::set<Species> unknown_species;
    std::vector<ScoredSample> scores;
    std::vector<EpochStats> history;
};

struct EvaluateOptions {
    Split split = Split::Test;
    double threshold = 0.5;
    std::set<Species> unknown_species = default_unknown_species();
    unsigned threads = 1;
    std::string label = "DenseNet";
};

// Preprocessing a checkpoint was trained with: channels and size from its
// config, colour mode and resize flag from its metadata.
Preprocess preprocess_from_metadata(const DenseNetConfig& model, const std::map<std::string, std::string>& metadata);

// Scores one split and builds the report row (D-EER when both classes are
// present). ConfigError when the split is empty.
ProtocolResult evaluate_model(DenseNet<float>& model, const Preprocess& pre, const Manifest& manifest,
                              const std::filesystem::path& data_root, const EvaluateOptions& options);

// Trains (or loads), scores the Test split and builds the report. Unknown
// species never enter training: train() rejects them in Train/Validation.
ProtocolResult run_protocol(const Manifest& manifest, const std::filesystem::path& data_root,
                            const ProtocolConfig& config, DenseNet<float>* trained_out = nullptr);

// Counts per split over Patch records (rejected ones excluded).
std::size_t count_patches(const Manifest& manifest, Split split);

// Long-format CSV: metric,species,partition,count,errors,percent.
std::string render_report_csv(const std::vector<ProtocolResult>& rows);
// Fixed-width table: known-PAI APCER columns, unknown-PAI APCER columns,
// BPCER, parameters, image dimension and split counts; one line per row.
std::string render_report_text(const std::vector<ProtocolResult>& rows);
// record_id,species,split,score (17 significant digits).
std::string render_scores_csv(const std::vector<ScoredSample>& scores);

// Writes report.csv, report.txt and scores.csv (scores of the first row)
// into `out_dir`.
void write_report_files(const std::vector<ProtocolResult>& rows, const std::filesystem::path& out_dir);

}  // namespace fpad
