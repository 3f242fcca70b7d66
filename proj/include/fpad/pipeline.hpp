#pragma once

#include "fpad/dataset.hpp"
#include "fpad/image.hpp"

#include <filesystem>
#include <optional>

namespace fpad {

// Exactly one of removal_fraction / threshold must be set.
struct BlurScanOptions {
    std::optional<double> removal_fraction;
    std::optional<double> threshold;
    unsigned threads = 1;
};

// Scores every SingleFingertip record (variance of Laplacian on its grey
// version), stores blur_score and flags quality=rejected below the threshold
// (accepted otherwise). Nothing is deleted. Report rows are in id order.
BlurReport blur_scan(Manifest& manifest, const std::filesystem::path& data_root, const BlurScanOptions& options);

// Replaces records with a matching id in place and appends the rest.
// Returns how many were appended.
std::size_t upsert_records(Manifest& manifest, const std::vector<SampleRecord>& records);

}  // namespace fpad
