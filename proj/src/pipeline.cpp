#include "fpad/pipeline.hpp"

#include "fpad/error.hpp"
#include "fpad/log.hpp"
#include "fpad/parallel.hpp"

#include <algorithm>
#include <unordered_map>

namespace fpad {

BlurReport blur_scan(Manifest& manifest, const std::filesystem::path& data_root, const BlurScanOptions& options) {
    if (options.removal_fraction.has_value() == options.threshold.has_value())
        throw ConfigError("blur-scan needs exactly one of removal fraction or threshold");
    if (options.removal_fraction && !(*options.removal_fraction >= 0.0 && *options.removal_fraction <= 1.0))
        throw ConfigError("removal fraction must lie in [0, 1]");

    std::vector<SampleRecord*> targets;
    for (auto& r : manifest.records)
        if (r.kind == SampleKind::SingleFingertip) targets.push_back(&r);
    std::sort(targets.begin(), targets.end(), [](auto* a, auto* b) { return a->id < b->id; });

    std::vector<double> values(targets.size());
    parallel_for(targets.size(), options.threads, [&](std::size_t i) {
        values[i] = laplacian_variance(to_grayscale(read_png(data_root / targets[i]->path)));
    });

    double threshold = 0.0;
    if (options.threshold) {
        threshold = *options.threshold;
    } else {
        if (values.empty()) throw ConfigError("no single-fingertip records to scan");
        threshold = select_blur_threshold(values, *options.removal_fraction);
    }
    std::vector<std::pair<std::string, double>> rows;
    rows.reserve(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        targets[i]->blur_score = values[i];
        targets[i]->quality = values[i] < threshold ? Quality::Rejected : Quality::Accepted;
        rows.emplace_back(targets[i]->id, values[i]);
    }
    BlurReport report = make_blur_report(std::move(rows), threshold);
    log::info("blur_scan.done", {{"n", std::to_string(report.scores.size())},
                                 {"threshold", log::fmt_double(report.threshold, 10)},
                                 {"removed_fraction", log::fmt_double(report.removed_fraction, 6)}});
    return report;
}

std::size_t upsert_records(Manifest& manifest, const std::vector<SampleRecord>& records) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) index.emplace(manifest.records[i].id, i);
    std::size_t appended = 0;
    for (const auto& r : records) {
        if (auto it = index.find(r.id); it != index.end()) {
            manifest.records[it->second] = r;
        } else {
            index.emplace(r.id, manifest.records.size());
            manifest.records.push_back(r);
            ++appended;
        }
    }
    return appended;
}

}  // namespace fpad
