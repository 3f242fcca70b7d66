#pragma once

#include "fpad/dataset.hpp"
#include "fpad/densenet.hpp"
#include "fpad/metrics.hpp"
#include "fpad/patch.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fpad {

enum class ColorMode { RGB, Grayscale };

std::string_view to_string(ColorMode m);
std::optional<ColorMode> parse_color_mode(std::string_view s);

// Step decay: lr * gamma^(number of milestones passed), milestones given as
// fractions of the epoch budget.
struct LrSchedule {
    double base_lr = 0.1;
    std::vector<double> milestones{0.5, 0.75};
    double gamma = 0.1;

    double lr_at(std::size_t epoch, std::size_t total_epochs) const;
};

struct TrainConfig {
    DenseNetConfig model = tiny_config();
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    LrSchedule schedule;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool augment_enabled = true;
    AugmentSpec augment;
    std::uint64_t seed = 0;
    ColorMode color_mode = ColorMode::RGB;
    std::optional<std::size_t> resize_to;
    std::set<Species> unknown_species = default_unknown_species();
    unsigned threads = 1;
};

// Throws ConfigError. Also checks that the model's channel count matches the
// colour mode and that resize_to (when set) equals the model input size.
void validate_train_config(const TrainConfig& config);

// Applies `key = value` settings named like the CLI flags (epochs,
// batch-size, lr, ...). Unknown keys and bad values throw ConfigError.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);
void apply_settings(TrainConfig& config, const std::map<std::string, std::string>& settings);
// `key = value` per line; '#' starts a comment. ConfigError names the line.
std::map<std::string, std::string> parse_key_value(std::string_view text);
std::map<std::string, std::string> load_key_value_file(const std::filesystem::path& path);
// Resolved config as sorted `key=value` lines (logged at the start of runs).
std::map<std::string, std::string> describe(const TrainConfig& config);

// Image -> model input: colour conversion, optional resize, pixel
// normalization. Shared by training and scoring.
struct Preprocess {
    ColorMode color_mode = ColorMode::RGB;
    std::optional<std::size_t> resize_to;
    std::size_t input_size = 32;
};

Preprocess preprocess_for(const TrainConfig& config);
// Model channels must agree with the colour mode; ConfigError otherwise.
void check_preprocess(const Preprocess& pre, const DenseNetConfig& model);
ImageBuffer prepare_image(const ImageBuffer& img, const Preprocess& pre);
// Writes one [C, S, S] sample into `dst`.
void image_to_tensor(const ImageBuffer& img, float* dst);
Tensor make_batch(const std::vector<ImageBuffer>& images);

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    double validation_accuracy = 0.0;
};

struct TrainResult {
    DenseNet<float> model;  // best validation accuracy; earliest epoch on ties
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;  // 0 when no epoch ran
    std::size_t n_train = 0;
    std::size_t n_validation = 0;
};

// Trains on the manifest's Train patches and selects on Validation patches.
// Throws ConfigError on an empty training split or when an unknown-PAI
// species appears in Train or Validation; warns when a class is under 5%.
TrainResult train(const TrainConfig& config, const Manifest& manifest, const std::filesystem::path& data_root);

// Eval-mode scores for every Patch record in `split`, ordered by record id.
// Batching does not change the values.
std::vector<ScoredSample> score(DenseNet<float>& model, const Manifest& manifest, Split split,
                                const std::filesystem::path& data_root, const Preprocess& pre,
                                std::size_t batch_size = 64, unsigned threads = 1);

// Same, over already-loaded images.
std::vector<double> score_images(DenseNet<float>& model, const std::vector<ImageBuffer>& images,
                                 const Preprocess& pre, std::size_t batch_size = 64, unsigned threads = 1);

}  // namespace fpad
