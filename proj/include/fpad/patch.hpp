#pragma once

#include "fpad/dataset.hpp"
#include "fpad/image.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

namespace fpad {

// Patches per fingertip for each species, from the dataset's collection
// protocol: Live 4, EL 4, PL 4, WL 7, SF 1, PP 2, LL 5.
std::map<Species, std::size_t> default_patch_counts();

struct PatchSpec {
    std::size_t patch_size = 256;
    std::map<Species, std::size_t> per_species_count = default_patch_counts();
    std::uint64_t seed = 0;
};

void validate_patch_spec(const PatchSpec& spec);

struct PatchWindow {
    std::size_t lo;
    std::size_t hi;
};

// With slack M = dim - patch, the top-left coordinate stays in
// [ceil(M/4), floor(3M/4)].
PatchWindow middle_window(std::size_t dim, std::size_t patch_size);

struct Patch {
    ImageBuffer image;
    std::size_t x = 0;
    std::size_t y = 0;
};

// `spec.seed` seeds this image's draws; see derive_seed() for per-record
// seeds. Throws DimensionError when the image is smaller than the patch.
std::vector<Patch> extract_center_patches(const ImageBuffer& img, const PatchSpec& spec, Species species);

// ---------------------------------------------------------------------------
// augmentation

struct AugmentSpec {
    double max_rotation_degrees = 45.0;
    double horizontal_flip_probability = 0.5;
    double zoom_range = 0.1;
    std::uint64_t seed = 0;
};

void validate_augment_spec(const AugmentSpec& spec);

struct AugmentDraw {
    double angle_degrees = 0.0;
    bool flip = false;
    double zoom = 1.0;
};

AugmentDraw sample_augment(const AugmentSpec& spec, std::uint64_t draw_seed);

// Zoom (centre anchored, reflect padded) -> rotate about centre (reflect
// fill) -> horizontal flip, each bilinear. Identity draws return the input.
ImageBuffer apply_augment(const ImageBuffer& patch, const AugmentDraw& draw);

inline ImageBuffer augment(const ImageBuffer& patch, const AugmentSpec& spec, std::uint64_t draw_seed) {
    return apply_augment(patch, sample_augment(spec, draw_seed));
}

ImageBuffer flip_horizontal(const ImageBuffer& img);

// ---------------------------------------------------------------------------
// patchify over a manifest

struct PatchifyOptions {
    PatchSpec spec;
    // Downsample fingertips whose min dimension exceeds this before cropping.
    std::optional<std::size_t> downsample_threshold;
    unsigned threads = 1;
};

struct PatchifyResult {
    std::size_t sources = 0;
    std::size_t patches = 0;
    std::vector<std::pair<std::string, std::string>> skipped;  // (record id, reason)
};

// For every SingleFingertip record not flagged quality=rejected, writes
// `patches/<species>/<parent_id>_<k>.png` under `data_root` and appends a
// Patch record inheriting the parent's metadata. Existing patches of a
// processed parent are replaced, so reruns are idempotent.
PatchifyResult patchify(Manifest& manifest, const std::filesystem::path& data_root, const PatchifyOptions& options);

// ---------------------------------------------------------------------------
// procedural desk-scale data

struct ProceduralSpec {
    std::size_t n_per_class = 100;
    std::size_t size = 32;
    std::uint64_t seed = 0;
    std::size_t channels = 3;
    // One spoof-like class is generated per entry.
    std::vector<Species> spoof_species{Species::PlaydohLayover};
    std::string subdir = "synth";
};

void validate_procedural_spec(const ProceduralSpec& spec);

// Live-like: oriented sinusoidal ridges (random orientation, frequency,
// phase, contrast) plus mild Gaussian noise. Spoof-like: the same ridge model
// at reduced contrast, with specular blobs and quantized grey levels. Each
// image depends only on (seed, species, index).
ImageBuffer procedural_image(Species species, std::size_t index, const ProceduralSpec& spec);

// Grey-level standard deviation; the statistic the classes differ in.
double contrast_statistic(const ImageBuffer& img);

// Writes `<subdir>/<species>/<index>.png` under data_root and returns the
// Patch records (one subject per image, Unassigned). Records are not added
// to any manifest.
std::vector<SampleRecord> generate_procedural_dataset(const std::filesystem::path& data_root,
                                                      const ProceduralSpec& spec);

}  // namespace fpad
