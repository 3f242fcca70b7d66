#include "fpad/train.hpp"

#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/log.hpp"
#include "fpad/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace fpad {

std::string_view to_string(ColorMode m) { return m == ColorMode::RGB ? "rgb" : "grayscale"; }

std::optional<ColorMode> parse_color_mode(std::string_view s) {
    if (s == "rgb" || s == "RGB") return ColorMode::RGB;
    if (s == "grayscale" || s == "gray" || s == "Grayscale") return ColorMode::Grayscale;
    return std::nullopt;
}

double LrSchedule::lr_at(std::size_t epoch, std::size_t total_epochs) const {
    double lr = base_lr;
    for (double m : milestones)
        if (static_cast<double>(epoch) >= m * static_cast<double>(total_epochs)) lr *= gamma;
    return lr;
}

void validate_train_config(const TrainConfig& c) {
    validate_config(c.model);
    if (c.batch_size == 0) throw ConfigError("batch-size must be >= 1");
    if (!(c.schedule.base_lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(c.schedule.gamma > 0.0)) throw ConfigError("lr-gamma must be > 0");
    for (double m : c.schedule.milestones)
        if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("lr-milestones must be fractions in [0, 1]");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(c.weight_decay >= 0.0)) throw ConfigError("weight-decay must be >= 0");
    validate_augment_spec(c.augment);
    check_preprocess(preprocess_for(c), c.model);
    if (c.resize_to && *c.resize_to != c.model.input_size)
        throw ConfigError("resize-to " + std::to_string(*c.resize_to) + " differs from the model input-size " +
                          std::to_string(c.model.input_size));
}

// ---------------------------------------------------------------------------
// key = value settings

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
    std::ostringstream os;
    for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
    return os.str();
}

}  // namespace

void apply_setting(TrainConfig& c, const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "preset") {
        if (v == "tiny")
            c.model = tiny_config();
        else if (v == "default")
            c.model = DenseNetConfig{};
        else
            throw ConfigError("preset: expected tiny or default, got '" + v + "'");
    } else if (key == "growth-rate") {
        c.model.growth_rate = to_size(key, v);
    } else if (key == "blocks") {
        c.model.block_layers.clear();
        for (const auto& item : split_list(v)) c.model.block_layers.push_back(to_size(key, item));
    } else if (key == "stem-filters") {
        c.model.stem_filters = to_size(key, v);
    } else if (key == "stem-kernel") {
        c.model.stem_kernel = to_size(key, v);
    } else if (key == "bottleneck") {
        c.model.bottleneck = to_bool(key, v);
    } else if (key == "compression") {
        c.model.compression = to_double(key, v);
    } else if (key == "input-size") {
        c.model.input_size = to_size(key, v);
    } else if (key == "input-channels") {
        c.model.input_channels = to_size(key, v);
    } else if (key == "color-mode") {
        const auto m = parse_color_mode(v);
        if (!m) throw ConfigError("color-mode: expected rgb or grayscale, got '" + v + "'");
        c.color_mode = *m;
        c.model.input_channels = *m == ColorMode::RGB ? 3 : 1;
    } else if (key == "resize-to") {
        if (v.empty() || v == "none") {
            c.resize_to.reset();
        } else {
            c.resize_to = to_size(key, v);
            c.model.input_size = *c.resize_to;
        }
    } else if (key == "epochs") {
        c.epochs = to_size(key, v);
    } else if (key == "batch-size") {
        c.batch_size = to_size(key, v);
    } else if (key == "lr") {
        c.schedule.base_lr = to_double(key, v);
    } else if (key == "lr-milestones") {
        c.schedule.milestones.clear();
        for (const auto& item : split_list(v)) c.schedule.milestones.push_back(to_double(key, item));
    } else if (key == "lr-gamma") {
        c.schedule.gamma = to_double(key, v);
    } else if (key == "momentum") {
        c.momentum = to_double(key, v);
    } else if (key == "weight-decay") {
        c.weight_decay = to_double(key, v);
    } else if (key == "augment") {
        c.augment_enabled = to_bool(key, v);
    } else if (key == "rotation") {
        c.augment.max_rotation_degrees = to_double(key, v);
    } else if (key == "flip-prob") {
        c.augment.horizontal_flip_probability = to_double(key, v);
    } else if (key == "zoom") {
        c.augment.zoom_range = to_double(key, v);
    } else if (key == "seed") {
        c.seed = to_u64(key, v);
    } else if (key == "threads") {
        c.threads = static_cast<unsigned>(std::max<std::size_t>(1, to_size(key, v)));
    } else if (key == "unknown-species") {
        c.unknown_species.clear();
        for (const auto& item : split_list(v)) {
            const auto s = parse_species_lenient(item);
            if (!s) throw ConfigError("unknown-species: unrecognized species '" + item + "'");
            if (!is_attack(*s)) throw ConfigError("unknown-species: live is not a PAI species");
            c.unknown_species.insert(*s);
        }
    } else {
        throw ConfigError("unknown setting '" + key + "'");
    }
}

void apply_settings(TrainConfig& c, const std::map<std::string, std::string>& settings) {
    // Presets replace the whole model, so they go before everything else.
    if (auto it = settings.find("preset"); it != settings.end()) apply_setting(c, it->first, it->second);
    if (auto it = settings.find("color-mode"); it != settings.end()) apply_setting(c, it->first, it->second);
    for (const auto& [k, v] : settings)
        if (k != "preset" && k != "color-mode") apply_setting(c, k, v);
}

std::map<std::string, std::string> parse_key_value(std::string_view text) {
    std::map<std::string, std::string> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        out[key] = trim(std::string_view(body).substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> load_key_value_file(const std::filesystem::path& path) {
    return parse_key_value(read_file(path));
}

std::map<std::string, std::string> describe(const TrainConfig& c) {
    std::vector<std::string> unknown;
    for (Species s : c.unknown_species) unknown.emplace_back(species_code(s));
    return {
        {"growth-rate", std::to_string(c.model.growth_rate)},
        {"blocks", join(c.model.block_layers)},
        {"stem-filters", std::to_string(c.model.stem_filters)},
        {"stem-kernel", std::to_string(c.model.stem_kernel)},
        {"bottleneck", c.model.bottleneck ? "true" : "false"},
        {"compression", log::fmt_double(c.model.compression)},
        {"input-size", std::to_string(c.model.input_size)},
        {"input-channels", std::to_string(c.model.input_channels)},
        {"color-mode", std::string(to_string(c.color_mode))},
        {"resize-to", c.resize_to ? std::to_string(*c.resize_to) : "none"},
        {"epochs", std::to_string(c.epochs)},
        {"batch-size", std::to_string(c.batch_size)},
        {"lr", log::fmt_double(c.schedule.base_lr)},
        {"lr-milestones", join(c.schedule.milestones)},
        {"lr-gamma", log::fmt_double(c.schedule.gamma)},
        {"momentum", log::fmt_double(c.momentum)},
        {"weight-decay", log::fmt_double(c.weight_decay)},
        {"augment", c.augment_enabled ? "true" : "false"},
        {"rotation", log::fmt_double(c.augment.max_rotation_degrees)},
        {"flip-prob", log::fmt_double(c.augment.horizontal_flip_probability)},
        {"zoom", log::fmt_double(c.augment.zoom_range)},
        {"seed", std::to_string(c.seed)},
        {"threads", std::to_string(c.threads)},
        {"unknown-species", join(unknown)},
    };
}

// ---------------------------------------------------------------------------
// preprocessing

Preprocess preprocess_for(const TrainConfig& c) { return {c.color_mode, c.resize_to, c.model.input_size}; }

void check_preprocess(const Preprocess& pre, const DenseNetConfig& model) {
    const std::size_t want = pre.color_mode == ColorMode::RGB ? 3 : 1;
    if (model.input_channels != want)
        throw ConfigError("color mode " + std::string(to_string(pre.color_mode)) + " feeds " + std::to_string(want) +
                          " channel(s) but the model expects " + std::to_string(model.input_channels));
    if (pre.input_size != model.input_size)
        throw ConfigError("preprocessing targets " + std::to_string(pre.input_size) + " px but the model expects " +
                          std::to_string(model.input_size));
}

ImageBuffer prepare_image(const ImageBuffer& img, const Preprocess& pre) {
    ImageBuffer out = pre.color_mode == ColorMode::RGB ? to_rgb(img) : to_grayscale(img);
    if (pre.resize_to) {
        const std::size_t r = *pre.resize_to;
        if (r > out.width() || r > out.height())
            throw ConfigError("resize-to " + std::to_string(r) + " exceeds the " + std::to_string(out.width()) + "x" +
                              std::to_string(out.height()) + " patch");
        if (out.width() != r || out.height() != r) out = resize(out, r, r);
    }
    if (out.width() != pre.input_size || out.height() != pre.input_size)
        throw ConfigError("image is " + std::to_string(out.width()) + "x" + std::to_string(out.height()) +
                          " but the model expects " + std::to_string(pre.input_size) + "x" +
                          std::to_string(pre.input_size) + "; set resize-to");
    return out;
}

void image_to_tensor(const ImageBuffer& img, float* dst) {
    const std::size_t w = img.width(), h = img.height(), ch = img.channels();
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) *dst++ = normalize_pixel(img.at(x, y, c));
}

Tensor make_batch(const std::vector<ImageBuffer>& images) {
    if (images.empty()) throw ShapeError("batch", "no images");
    const ImageBuffer& first = images.front();
    const std::size_t per = first.width() * first.height() * first.channels();
    Tensor batch({images.size(), first.channels(), first.height(), first.width()});
    for (std::size_t i = 0; i < images.size(); ++i) {
        const ImageBuffer& img = images[i];
        if (img.width() != first.width() || img.height() != first.height() || img.channels() != first.channels())
            throw ShapeError("batch", "image " + std::to_string(i) + " differs in size from image 0");
        image_to_tensor(img, batch.data().data() + i * per);
    }
    return batch;
}

// ---------------------------------------------------------------------------
// training

namespace {

struct Example {
    const SampleRecord* record;
    ImageBuffer image;
    float label;
};

std::vector<Example> load_split(const Manifest& manifest, Split split, const std::filesystem::path& data_root,
                                unsigned threads) {
    std::vector<const SampleRecord*> recs;
    for (const auto& r : manifest.records)
        if (r.kind == SampleKind::Patch && r.split == split && r.quality != Quality::Rejected) recs.push_back(&r);
    std::sort(recs.begin(), recs.end(), [](auto* a, auto* b) { return a->id < b->id; });
    std::vector<Example> out(recs.size());
    parallel_for(recs.size(), threads, [&](std::size_t i) {
        out[i] = Example{recs[i], read_png(data_root / recs[i]->path), is_attack(recs[i]->species) ? 1.0f : 0.0f};
    });
    return out;
}

double accuracy(const std::vector<double>& scores, const std::vector<Example>& examples) {
    if (examples.empty()) return 0.0;
    std::size_t right = 0;
    for (std::size_t i = 0; i < examples.size(); ++i)
        if ((scores[i] >= 0.5) == (examples[i].label > 0.5f)) ++right;
    return static_cast<double>(right) / static_cast<double>(examples.size());
}

}  // namespace

TrainResult train(const TrainConfig& config, const Manifest& manifest, const std::filesystem::path& data_root) {
    validate_train_config(config);
    for (const auto& r : manifest.records) {
        if (r.kind != SampleKind::Patch) continue;
        if ((r.split == Split::Train || r.split == Split::Validation) && config.unknown_species.count(r.species))
            throw ConfigError("record " + r.id + " of unknown PAI species " + std::string(species_code(r.species)) +
                              " is in the " + std::string(to_string(r.split)) + " split");
    }
    const std::vector<Example> train_set = load_split(manifest, Split::Train, data_root, config.threads);
    const std::vector<Example> val_set = load_split(manifest, Split::Validation, data_root, config.threads);
    if (train_set.empty()) throw ConfigError("training split has no patches; run `fpad split` first");

    std::size_t attacks = 0;
    for (const auto& e : train_set) attacks += e.label > 0.5f ? 1 : 0;
    const double attack_share = static_cast<double>(attacks) / static_cast<double>(train_set.size());
    if (attack_share < 0.05 || attack_share > 0.95)
        log::warn("train.class_imbalance", {{"attack_share", log::fmt_double(attack_share, 4)},
                                            {"n_train", std::to_string(train_set.size())}});

    const Preprocess pre = preprocess_for(config);
    std::vector<ImageBuffer> val_images;
    val_images.reserve(val_set.size());
    for (const auto& e : val_set) val_images.push_back(e.image);

    TrainResult result{DenseNet<float>(config.model, derive_seed(config.seed, "init")), {}, 0, train_set.size(),
                       val_set.size()};
    DenseNet<float> model = result.model;
    SgdOptimizer<float> opt(config.schedule.base_lr, config.momentum, config.weight_decay);
    AugmentSpec aug = config.augment;
    aug.seed = derive_seed(config.seed, "augment");
    const std::uint64_t shuffle_seed = derive_seed(config.seed, "shuffle");
    double best_accuracy = -1.0;

    log::info("train.start", {{"n_train", std::to_string(train_set.size())},
                              {"n_validation", std::to_string(val_set.size())},
                              {"params", std::to_string(model.param_count())},
                              {"model", config_to_string(config.model)}});

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.schedule.lr_at(epoch, config.epochs);
        opt.set_lr(lr);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(shuffle_seed, epoch));
        rng.shuffle(order);

        model.set_mode(Mode::Train);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<ImageBuffer> images;
            std::vector<float> labels;
            images.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const Example& e = train_set[order[k]];
                const ImageBuffer src =
                    config.augment_enabled ? augment(e.image, aug, derive_seed(epoch, fnv1a64(e.record->id))) : e.image;
                images.push_back(prepare_image(src, pre));
                labels.push_back(e.label);
            }
            const Tensor batch = make_batch(images);
            const Tensor logits = model.forward_logits(batch);
            const LossResult<float> loss = bce_with_logits<float>(logits, labels);
            model.zero_grad();
            model.backward_logits(loss.grad);
            opt.step(model.params());
            loss_sum += loss.loss * static_cast<double>(end - start);
        }
        model.clear_cache();

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.lr = lr;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        if (!val_set.empty()) {
            stats.validation_accuracy = accuracy(score_images(model, val_images, pre, 64, config.threads), val_set);
        }
        result.history.push_back(stats);
        log::info("train.epoch", {{"epoch", std::to_string(stats.epoch)},
                                  {"lr", log::fmt_double(lr)},
                                  {"train_loss", log::fmt_double(stats.train_loss)},
                                  {"val_accuracy", log::fmt_double(stats.validation_accuracy)}});
        if (stats.validation_accuracy > best_accuracy) {
            best_accuracy = stats.validation_accuracy;
            result.best_epoch = stats.epoch;
            result.model = model;
        }
    }
    result.model.set_mode(Mode::Eval);
    result.model.clear_cache();
    return result;
}

// ---------------------------------------------------------------------------
// scoring

std::vector<double> score_images(DenseNet<float>& model, const std::vector<ImageBuffer>& images, const Preprocess& pre,
                                 std::size_t batch_size, unsigned threads) {
    check_preprocess(pre, model.config());
    if (batch_size == 0) batch_size = 1;
    std::vector<double> scores(images.size());
    if (images.empty()) return scores;
    const Mode previous = model.mode();
    model.set_mode(Mode::Eval);
    model.clear_cache();
    const std::size_t n_batches = (images.size() + batch_size - 1) / batch_size;
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_batches)));

    // Each worker owns a copy: forward passes write layer caches.
    std::vector<DenseNet<float>> replicas;
    for (unsigned t = 1; t < threads; ++t) replicas.push_back(model);
    std::vector<DenseNet<float>*> workers{&model};
    for (auto& r : replicas) workers.push_back(&r);
    const std::size_t per_worker = (n_batches + threads - 1) / threads;

    parallel_for(threads, threads, [&](std::size_t t) {
        DenseNet<float>& m = *workers[t];
        for (std::size_t b = t * per_worker; b < std::min(n_batches, (t + 1) * per_worker); ++b) {
            const std::size_t start = b * batch_size, end = std::min(images.size(), start + batch_size);
            std::vector<ImageBuffer> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(prepare_image(images[i], pre));
            const Tensor p = m.forward(make_batch(batch));
            for (std::size_t i = start; i < end; ++i) scores[i] = p[i - start];
        }
        m.clear_cache();
    });
    model.set_mode(previous);
    return scores;
}

std::vector<ScoredSample> score(DenseNet<float>& model, const Manifest& manifest, Split split,
                                const std::filesystem::path& data_root, const Preprocess& pre, std::size_t batch_size,
                                unsigned threads) {
    check_preprocess(pre, model.config());
    const std::vector<Example> examples = load_split(manifest, split, data_root, threads);
    std::vector<ImageBuffer> images;
    images.reserve(examples.size());
    for (const auto& e : examples) images.push_back(e.image);
    const std::vector<double> scores = score_images(model, images, pre, batch_size, threads);
    std::vector<ScoredSample> out;
    out.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i)
        out.push_back({examples[i].record->id, examples[i].record->species, scores[i], split});
    return out;
}

}  // namespace fpad
