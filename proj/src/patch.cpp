#include "fpad/patch.hpp"

#include "fpad/error.hpp"
#include "fpad/parallel.hpp"
#include "fpad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <unordered_set>

namespace fs = std::filesystem;

namespace fpad {

std::map<Species, std::size_t> default_patch_counts() {
    return {
        {Species::Live, 4},           {Species::EcoflexLayover, 4}, {Species::PlaydohLayover, 4},
        {Species::WoodGlueLayover, 7}, {Species::SyntheticFingertip, 1}, {Species::PrintedPhoto, 2},
        {Species::LatexLayover, 5},
    };
}

void validate_patch_spec(const PatchSpec& spec) {
    if (spec.patch_size < 1) throw ConfigError("patch_size must be >= 1");
    for (const auto& [species, n] : spec.per_species_count) {
        if (n < 1) throw ConfigError("patch count for " + std::string(to_string(species)) + " must be >= 1");
    }
}

PatchWindow middle_window(std::size_t dim, std::size_t patch_size) {
    const std::size_t slack = dim - patch_size;
    // A slack of 1 leaves no integer inside the middle half; use the floor centre.
    if (slack == 1) return {0, 0};
    return {(slack + 3) / 4, (3 * slack) / 4};
}

std::vector<Patch> extract_center_patches(const ImageBuffer& img, const PatchSpec& spec, Species species) {
    validate_patch_spec(spec);
    if (img.width() < spec.patch_size || img.height() < spec.patch_size)
        throw DimensionError("image smaller than patch size " + std::to_string(spec.patch_size), img.width(),
                             img.height());
    const auto it = spec.per_species_count.find(species);
    if (it == spec.per_species_count.end())
        throw ConfigError("no patch count configured for " + std::string(to_string(species)));

    const PatchWindow wx = middle_window(img.width(), spec.patch_size);
    const PatchWindow wy = middle_window(img.height(), spec.patch_size);
    Rng rng(spec.seed);
    std::vector<Patch> patches;
    patches.reserve(it->second);
    for (std::size_t k = 0; k < it->second; ++k) {
        const auto x = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(wx.lo), static_cast<std::int64_t>(wx.hi)));
        const auto y = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(wy.lo), static_cast<std::int64_t>(wy.hi)));
        patches.push_back({crop(img, x, y, spec.patch_size, spec.patch_size), x, y});
    }
    return patches;
}

// ---------------------------------------------------------------------------
// augmentation

void validate_augment_spec(const AugmentSpec& spec) {
    if (!(spec.max_rotation_degrees >= 0.0 && spec.max_rotation_degrees <= 180.0))
        throw ConfigError("max_rotation_degrees must lie in [0, 180]");
    if (!(spec.horizontal_flip_probability >= 0.0 && spec.horizontal_flip_probability <= 1.0))
        throw ConfigError("horizontal_flip_probability must lie in [0, 1]");
    if (!(spec.zoom_range >= 0.0 && spec.zoom_range < 1.0)) throw ConfigError("zoom_range must lie in [0, 1)");
}

AugmentDraw sample_augment(const AugmentSpec& spec, std::uint64_t draw_seed) {
    Rng rng(derive_seed(spec.seed, draw_seed));
    AugmentDraw d;
    d.angle_degrees = rng.uniform(-spec.max_rotation_degrees, spec.max_rotation_degrees);
    d.flip = rng.bernoulli(spec.horizontal_flip_probability);
    d.zoom = rng.uniform(1.0 - spec.zoom_range, 1.0 + spec.zoom_range);
    return d;
}

namespace {

// Mirror about the outer pixel edges (-0.5 and n-0.5) in pixel-centre space.
double reflect_coord(double v, std::size_t n) {
    const double period = 2.0 * static_cast<double>(n);
    double t = std::fmod(v + 0.5, period);
    if (t < 0.0) t += period;
    if (t >= static_cast<double>(n)) t = period - t;
    return std::clamp(t - 0.5, 0.0, static_cast<double>(n - 1));
}

double sample_reflect(const ImageBuffer& img, double fx, double fy, std::size_t c) {
    const double x = reflect_coord(fx, img.width());
    const double y = reflect_coord(fy, img.height());
    const auto x0 = static_cast<std::size_t>(x);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
    const double ax = x - static_cast<double>(x0);
    const double ay = y - static_cast<double>(y0);
    const double top = img.at(x0, y0, c) + ax * (img.at(x1, y0, c) - img.at(x0, y0, c));
    const double bot = img.at(x0, y1, c) + ax * (img.at(x1, y1, c) - img.at(x0, y1, c));
    return top + ay * (bot - top);
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// out(p) = in(centre + M (p - centre)) for a 2x2 matrix M (row-major).
ImageBuffer warp(const ImageBuffer& img, const double m[4]) {
    const double cx = (static_cast<double>(img.width()) - 1.0) / 2.0;
    const double cy = (static_cast<double>(img.height()) - 1.0) / 2.0;
    ImageBuffer out(img.width(), img.height(), img.channels());
    for (std::size_t y = 0; y < img.height(); ++y) {
        const double dy = static_cast<double>(y) - cy;
        for (std::size_t x = 0; x < img.width(); ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double sx = cx + m[0] * dx + m[1] * dy;
            const double sy = cy + m[2] * dx + m[3] * dy;
            for (std::size_t c = 0; c < img.channels(); ++c) out.at(x, y, c) = to_u8(sample_reflect(img, sx, sy, c));
        }
    }
    return out;
}

}  // namespace

ImageBuffer flip_horizontal(const ImageBuffer& img) {
    ImageBuffer out(img.width(), img.height(), img.channels());
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(img.width() - 1 - x, y, c);
    return out;
}

ImageBuffer apply_augment(const ImageBuffer& patch, const AugmentDraw& draw) {
    if (patch.width() != patch.height())
        throw DimensionError("augment expects a square patch", patch.width(), patch.height());
    ImageBuffer out = patch;
    if (draw.zoom != 1.0) {
        const double inv = 1.0 / draw.zoom;
        const double m[4] = {inv, 0.0, 0.0, inv};
        out = warp(out, m);
    }
    if (draw.angle_degrees != 0.0) {
        const double theta = draw.angle_degrees * std::numbers::pi / 180.0;
        const double c = std::cos(theta), s = std::sin(theta);
        // Inverse rotation: destination pixel pulls from R(-theta) (p - centre).
        const double m[4] = {c, s, -s, c};
        out = warp(out, m);
    }
    if (draw.flip) out = flip_horizontal(out);
    return out;
}

// ---------------------------------------------------------------------------
// patchify

namespace {

struct SourceOutcome {
    std::vector<std::pair<SampleRecord, ImageBuffer>> patches;
    std::optional<std::string> skip_reason;
};

}  // namespace

PatchifyResult patchify(Manifest& manifest, const fs::path& data_root, const PatchifyOptions& options) {
    validate_patch_spec(options.spec);
    std::vector<std::size_t> sources;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        if (r.kind != SampleKind::SingleFingertip) continue;
        if (r.quality == Quality::Rejected) continue;
        if (!options.spec.per_species_count.contains(r.species))
            throw ConfigError("no patch count configured for " + std::string(to_string(r.species)));
        sources.push_back(i);
    }

    std::vector<SourceOutcome> outcomes(sources.size());
    parallel_for(sources.size(), options.threads, [&](std::size_t k) {
        const SampleRecord& parent = manifest.records[sources[k]];
        SourceOutcome& outcome = outcomes[k];
        ImageBuffer img;
        try {
            img = read_png(data_root / parent.path);
        } catch (const IoError& e) {
            outcome.skip_reason = e.what();
            return;
        }
        if (options.downsample_threshold) img = conditional_downsample(img, *options.downsample_threshold);
        if (img.width() < options.spec.patch_size || img.height() < options.spec.patch_size) {
            outcome.skip_reason = "image " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                                  " smaller than patch size " + std::to_string(options.spec.patch_size);
            return;
        }
        PatchSpec spec = options.spec;
        spec.seed = derive_seed(options.spec.seed, parent.id);
        auto patches = extract_center_patches(img, spec, parent.species);
        for (std::size_t j = 0; j < patches.size(); ++j) {
            SampleRecord r;
            r.path = "patches/" + std::string(to_string(parent.species)) + "/" + parent.id + "_" + std::to_string(j) +
                     ".png";
            r.id = make_record_id(r.path, parent.species);
            r.subject_id = parent.subject_id;
            r.session = parent.session;
            r.hand = parent.hand;
            r.finger = parent.finger;
            r.species = parent.species;
            r.sensor = parent.sensor;
            r.kind = SampleKind::Patch;
            r.split = parent.split;
            r.parent_id = parent.id;
            outcome.patches.emplace_back(std::move(r), std::move(patches[j].image));
        }
        for (const auto& [record, image] : outcome.patches) write_png(image, data_root / record.path);
    });

    PatchifyResult result;
    std::unordered_set<std::string> processed;
    for (std::size_t k = 0; k < sources.size(); ++k) {
        const auto& parent = manifest.records[sources[k]];
        if (outcomes[k].skip_reason) {
            result.skipped.emplace_back(parent.id, *outcomes[k].skip_reason);
        } else {
            processed.insert(parent.id);
            ++result.sources;
        }
    }
    std::erase_if(manifest.records, [&](const SampleRecord& r) {
        return r.kind == SampleKind::Patch && r.parent_id && processed.contains(*r.parent_id);
    });
    for (auto& outcome : outcomes) {
        for (auto& [record, image] : outcome.patches) {
            if (manifest.contains(record.id)) throw DuplicateIdError(record.id);
            manifest.records.push_back(std::move(record));
            ++result.patches;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// procedural data

void validate_procedural_spec(const ProceduralSpec& spec) {
    if (spec.n_per_class < 1) throw ConfigError("procedural dataset needs n >= 1 per class");
    if (spec.size < 32) throw ConfigError("procedural image size must be >= 32");
    if (spec.channels != 1 && spec.channels != 3) throw ConfigError("procedural channels must be 1 or 3");
    if (spec.spoof_species.empty()) throw ConfigError("procedural dataset needs at least one spoof species");
    for (Species s : spec.spoof_species) {
        if (!is_attack(s)) throw ConfigError("spoof species must be an attack species");
    }
}

ImageBuffer procedural_image(Species species, std::size_t index, const ProceduralSpec& spec) {
    const std::string key = std::string(to_string(species)) + "/" + std::to_string(index);
    Rng rng(derive_seed(spec.seed, key));
    const bool spoof = is_attack(species);
    const std::size_t n = spec.size;

    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double freq = rng.uniform(0.12, 0.22);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amplitude = spoof ? rng.uniform(20.0, 35.0) : rng.uniform(75.0, 105.0);
    const double noise_sd = 6.0;

    struct Blob {
        double x, y, sigma, amp;
    };
    std::vector<Blob> blobs;
    if (spoof) {
        const auto count = rng.uniform_int(1, 2);
        for (std::int64_t b = 0; b < count; ++b) {
            blobs.push_back({rng.uniform(0.0, static_cast<double>(n)), rng.uniform(0.0, static_cast<double>(n)),
                             rng.uniform(static_cast<double>(n) / 12.0, static_cast<double>(n) / 6.0),
                             rng.uniform(50.0, 90.0)});
        }
    }
    const double quant_step = 255.0 / 5.0;
    const double ct = std::cos(theta), st = std::sin(theta);

    std::vector<double> grey(n * n);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double u = static_cast<double>(x) * ct + static_cast<double>(y) * st;
            double v = 128.0 + amplitude * std::sin(2.0 * std::numbers::pi * freq * u + phase);
            for (const Blob& b : blobs) {
                const double dx = static_cast<double>(x) - b.x, dy = static_cast<double>(y) - b.y;
                v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            }
            v += rng.normal(0.0, noise_sd);
            if (spoof) v = std::round(v / quant_step) * quant_step;
            grey[y * n + x] = v;
        }
    }

    ImageBuffer img(n, n, spec.channels);
    static constexpr double kTint[3] = {1.0, 0.86, 0.74};
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double v = grey[y * n + x];
            if (spec.channels == 1) {
                img.at(x, y) = to_u8(v);
            } else {
                for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = to_u8(v * kTint[c]);
            }
        }
    }
    return img;
}

double contrast_statistic(const ImageBuffer& img) {
    const ImageBuffer g = to_grayscale(img);
    const auto d = g.data();
    double sum = 0.0, sum_sq = 0.0;
    for (std::uint8_t v : d) {
        sum += v;
        sum_sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(d.size());
    const double mean = sum / n;
    return std::sqrt(std::max(0.0, sum_sq / n - mean * mean));
}

std::vector<SampleRecord> generate_procedural_dataset(const fs::path& data_root, const ProceduralSpec& spec) {
    validate_procedural_spec(spec);
    std::vector<Species> classes{Species::Live};
    for (Species s : spec.spoof_species)
        if (std::find(classes.begin(), classes.end(), s) == classes.end()) classes.push_back(s);

    std::vector<SampleRecord> records;
    for (Species species : classes) {
        for (std::size_t i = 0; i < spec.n_per_class; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "%05zu.png", i);
            SampleRecord r;
            r.path = spec.subdir + "/" + std::string(to_string(species)) + "/" + name;
            r.id = make_record_id(r.path, species);
            r.subject_id = std::string(species_code(species)) + "-" + std::to_string(i);
            r.species = species;
            r.sensor = "procedural";
            r.kind = SampleKind::Patch;
            write_png(procedural_image(species, i, spec), data_root / r.path);
            records.push_back(std::move(r));
        }
    }
    return records;
}

}  // namespace fpad
