#pragma once

#include "fpad/dataset.hpp"

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace fpad {

// Score = probability of spoof.
struct ScoredSample {
    std::string record_id;
    Species species = Species::Live;
    double score = 0.0;
    Split split = Split::Test;
};

struct SpeciesErrors {
    Species species;
    std::size_t n_attacks = 0;
    std::size_t n_misclassified = 0;  // scored below threshold
    bool unknown = false;
    double apcer_percent() const { return 100.0 * static_cast<double>(n_misclassified) / static_cast<double>(n_attacks); }
};

struct BonafideErrors {
    std::size_t n_live = 0;
    std::size_t n_misclassified = 0;  // scored at or above threshold
    double bpcer_percent() const { return 100.0 * static_cast<double>(n_misclassified) / static_cast<double>(n_live); }
};

struct DeerResult {
    double eer_percent = 0.0;
    double threshold = 0.0;
};

struct EvalReport {
    double threshold = 0.5;
    // Attack species present in the input, in declaration order.
    std::vector<SpeciesErrors> species;
    // Attack species with no samples; listed instead of dividing by zero.
    std::vector<Species> omitted;
    std::optional<BonafideErrors> bonafide;
    std::optional<DeerResult> deer;

    const SpeciesErrors* find(Species s) const;
};

std::set<Species> default_unknown_species();

// Throws ConfigError on an empty input, a threshold outside [0, 1] or a
// non-finite score.
EvalReport compute_report(std::span<const ScoredSample> scored, double threshold,
                          const std::set<Species>& unknown_species = default_unknown_species());

// Pooled attack error rate and bonafide error rate at `threshold`, as
// fractions.
struct ErrorRates {
    double apcer = 0.0;
    double bpcer = 0.0;
};
ErrorRates error_rates(std::span<const ScoredSample> scored, double threshold);

// Sweeps every distinct score plus one point above the maximum and linearly
// interpolates where pooled APCER - BPCER changes sign. Throws ConfigError
// unless both classes are present.
DeerResult compute_deer(std::span<const ScoredSample> scored);

// Two decimals, the display precision of the reports.
std::string format_percent(double percent);

}  // namespace fpad
