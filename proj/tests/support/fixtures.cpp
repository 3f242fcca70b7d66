#include "fixtures.hpp"
#include "oracles.hpp"

#include "fpad/image.hpp"
#include "fpad/patch.hpp"
#include "fpad/rng.hpp"

#include <atomic>
#include <unistd.h>

namespace fpad::test {

namespace {
std::atomic<int> g_counter{0};
}

TempDir::TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("fpad-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(g_counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

Manifest four_finger_manifest(const std::filesystem::path& root, std::size_t n, std::size_t w, std::size_t h,
                              std::uint64_t seed) {
    Rng rng(seed);
    Manifest m;
    for (std::size_t i = 0; i < n; ++i) {
        ImageBuffer img(w, h, 3);
        for (auto& p : img.data()) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        SampleRecord r;
        r.id = "ff" + std::to_string(i);
        r.subject_id = "subject" + std::to_string(i);
        r.hand = Hand::Right;
        r.species = i % 2 ? Species::EcoflexLayover : Species::Live;
        r.sensor = "sensor";
        r.kind = SampleKind::FourFinger;
        r.path = "ff/" + r.id + ".png";
        write_png(img, root / r.path);
        m.records.push_back(std::move(r));
    }
    return m;
}

}  // namespace fpad::test

namespace fpad::oracle {

Manifest procedural_manifest(const std::filesystem::path& root, std::size_t n_per_class, std::uint64_t seed,
                             std::vector<Species> spoof, std::size_t channels) {
    ProceduralSpec spec;
    spec.n_per_class = n_per_class;
    spec.seed = seed;
    spec.channels = channels;
    spec.spoof_species = std::move(spoof);
    Manifest m;
    m.records = generate_procedural_dataset(root, spec);
    SplitPlan plan;
    plan.seed = seed;
    return assign_splits(std::move(m), plan);
}

}  // namespace fpad::oracle
