#include "fixtures.hpp"
#include "oracles.hpp"

#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/patch.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace fpad;

namespace {

ImageBuffer noise(Rng& rng, std::size_t w, std::size_t h, std::size_t ch) {
    ImageBuffer img(w, h, ch);
    for (auto& p : img.data()) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return img;
}

}  // namespace

TEST(PatchCounts, DefaultsPerSpecies) {
    const auto c = default_patch_counts();
    EXPECT_EQ(c.at(Species::Live), 4u);
    EXPECT_EQ(c.at(Species::EcoflexLayover), 4u);
    EXPECT_EQ(c.at(Species::PlaydohLayover), 4u);
    EXPECT_EQ(c.at(Species::WoodGlueLayover), 7u);
    EXPECT_EQ(c.at(Species::SyntheticFingertip), 1u);
    EXPECT_EQ(c.at(Species::PrintedPhoto), 2u);
    EXPECT_EQ(c.at(Species::LatexLayover), 5u);
    EXPECT_EQ(1126u * c.at(Species::WoodGlueLayover), 7882u);
}

TEST(MiddleWindow, Arithmetic) {
    EXPECT_EQ(middle_window(256, 256).lo, 0u);
    EXPECT_EQ(middle_window(256, 256).hi, 0u);
    EXPECT_EQ(middle_window(512, 256).lo, 64u);
    EXPECT_EQ(middle_window(512, 256).hi, 192u);
    // M = 5: [ceil(5/4), floor(15/4)] = [2, 3].
    EXPECT_EQ(middle_window(13, 8).lo, 2u);
    EXPECT_EQ(middle_window(13, 8).hi, 3u);
    for (std::size_t m = 0; m < 200; ++m) {
        const PatchWindow w = middle_window(10 + m, 10);
        EXPECT_EQ(w.lo, m == 1 ? 0 : (m + 3) / 4);
        EXPECT_EQ(w.hi, m == 1 ? 0 : 3 * m / 4);
        EXPECT_LE(w.lo, w.hi);
    }
}

TEST(Extract, ForcedAndWindowedPlacement) {
    Rng rng(1);
    const ImageBuffer full = noise(rng, 256, 256, 1);
    PatchSpec spec;
    const auto one = extract_center_patches(full, spec, Species::SyntheticFingertip);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].image, full);

    const ImageBuffer big = noise(rng, 512, 512, 3);
    const auto four = extract_center_patches(big, spec, Species::Live);
    ASSERT_EQ(four.size(), 4u);
    for (const auto& p : four) {
        EXPECT_GE(p.x, 64u);
        EXPECT_LE(p.x, 192u);
        EXPECT_GE(p.y, 64u);
        EXPECT_LE(p.y, 192u);
        EXPECT_EQ(p.image, crop(big, p.x, p.y, 256, 256));
    }
    EXPECT_EQ(extract_center_patches(noise(rng, 300, 300, 1), spec, Species::WoodGlueLayover).size(), 7u);
    EXPECT_THROW(extract_center_patches(noise(rng, 200, 300, 1), spec, Species::Live), DimensionError);
}

TEST(Extract, RandomGeometryStaysInTheMiddle) {
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
        PatchSpec spec;
        spec.patch_size = static_cast<std::size_t>(rng.uniform_int(1, 24));
        spec.seed = rng.next_u64();
        const auto w = spec.patch_size + static_cast<std::size_t>(rng.uniform_int(0, 40));
        const auto h = spec.patch_size + static_cast<std::size_t>(rng.uniform_int(0, 40));
        const ImageBuffer img(w, h, 1);
        const Species sp = kAllSpecies[rng.uniform_int(0, std::size(kAllSpecies) - 1)];
        const std::size_t mx = w - spec.patch_size, my = h - spec.patch_size;
        for (const auto& p : extract_center_patches(img, spec, sp)) {
            EXPECT_LE(p.x + spec.patch_size, w);
            EXPECT_LE(p.y + spec.patch_size, h);
            // Inside [M/4, 3M/4], or the floor centre when that holds no integer.
            EXPECT_TRUE((4 * p.x >= mx && 4 * p.x <= 3 * mx) || (mx == 1 && p.x == 0)) << p.x << " of " << mx;
            EXPECT_TRUE((4 * p.y >= my && 4 * p.y <= 3 * my) || (my == 1 && p.y == 0)) << p.y << " of " << my;
        }
    }
}

TEST(Extract, SeedDeterminesPlacement) {
    Rng rng(3);
    const ImageBuffer img = noise(rng, 400, 400, 1);
    PatchSpec spec;
    spec.seed = 42;
    const auto a = extract_center_patches(img, spec, Species::WoodGlueLayover);
    const auto b = extract_center_patches(img, spec, Species::WoodGlueLayover);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].x, b[i].x);
}

TEST(Augment, IdentityAndFlip) {
    Rng rng(4);
    const ImageBuffer p = noise(rng, 16, 16, 3);
    EXPECT_EQ(apply_augment(p, AugmentDraw{}), p);
    const ImageBuffer f = apply_augment(p, AugmentDraw{0.0, true, 1.0});
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) EXPECT_EQ(f.at(x, y, 1), p.at(15 - x, y, 1));
    EXPECT_EQ(flip_horizontal(flip_horizontal(p)), p);
}

TEST(Augment, RotationMovesABrightPixelLikeTheRotationMatrix) {
    const std::size_t n = 33;
    const double c = (n - 1) / 2.0;
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const auto px = static_cast<std::size_t>(rng.uniform_int(8, 24));
        const auto py = static_cast<std::size_t>(rng.uniform_int(8, 24));
        ImageBuffer img(n, n, 1);
        img.at(px, py) = 255;
        const ImageBuffer out = apply_augment(img, AugmentDraw{45.0, false, 1.0});
        std::size_t bx = 0, by = 0;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                if (out.at(x, y) > out.at(bx, by)) {
                    bx = x;
                    by = y;
                }
        const double t = std::numbers::pi / 4.0;
        const double dx = px - c, dy = py - c;
        const double ex = c + std::cos(t) * dx - std::sin(t) * dy;
        const double ey = c + std::sin(t) * dx + std::cos(t) * dy;
        EXPECT_LE(std::abs(bx - ex), 1.0) << px << "," << py;
        EXPECT_LE(std::abs(by - ey), 1.0) << px << "," << py;
    }
}

TEST(Augment, DrawsRespectTheSpec) {
    AugmentSpec spec;
    spec.max_rotation_degrees = 30.0;
    spec.zoom_range = 0.1;
    int flips = 0;
    for (std::uint64_t s = 0; s < 500; ++s) {
        const AugmentDraw d = sample_augment(spec, s);
        EXPECT_LE(std::abs(d.angle_degrees), 30.0);
        EXPECT_GE(d.zoom, 0.9);
        EXPECT_LE(d.zoom, 1.1);
        flips += d.flip;
        const AugmentDraw again = sample_augment(spec, s);
        EXPECT_EQ(d.angle_degrees, again.angle_degrees);
    }
    EXPECT_GT(flips, 150);
    EXPECT_LT(flips, 350);
    spec.horizontal_flip_probability = 1.5;
    EXPECT_THROW(validate_augment_spec(spec), ConfigError);
}

TEST(Augment, ZoomKeepsSizeAndCentre) {
    ImageBuffer img(15, 15, 1, 0);
    img.at(7, 7) = 200;
    const ImageBuffer z = apply_augment(img, AugmentDraw{0.0, false, 1.1});
    EXPECT_EQ(z.width(), 15u);
    EXPECT_EQ(z.at(7, 7), 200);
}

TEST(Procedural, CountsAndDeterminism) {
    test::TempDir a("proc-a"), b("proc-b");
    ProceduralSpec spec;
    spec.n_per_class = 1;
    spec.seed = 3;
    const auto ra = generate_procedural_dataset(a.path(), spec);
    const auto rb = generate_procedural_dataset(b.path(), spec);
    ASSERT_EQ(ra.size(), 2u);
    EXPECT_EQ(ra, rb);
    for (const auto& r : ra) {
        EXPECT_EQ(read_file(a / r.path), read_file(b / r.path));
        EXPECT_EQ(r.split, Split::Unassigned);
        EXPECT_EQ(r.kind, SampleKind::Patch);
    }
    spec.n_per_class = 0;
    EXPECT_THROW(generate_procedural_dataset(a.path(), spec), ConfigError);
}

TEST(Procedural, ClassesDifferInContrast) {
    ProceduralSpec spec;
    spec.spoof_species = {Species::PlaydohLayover, Species::PrintedPhoto};
    double live = 0.0, spoof = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        live += contrast_statistic(procedural_image(Species::Live, i, spec));
        spoof += contrast_statistic(procedural_image(Species::PlaydohLayover, i, spec));
    }
    EXPECT_GT(live, spoof);
    spec.channels = 1;
    EXPECT_EQ(procedural_image(Species::Live, 0, spec).channels(), 1u);
}

TEST(Patchify, WritesPatchesAndIsIdempotent) {
    test::TempDir dir("patchify");
    Rng rng(6);
    Manifest m;
    for (int i = 0; i < 3; ++i) {
        SampleRecord r;
        r.path = "tips/t" + std::to_string(i) + ".png";
        r.species = i == 2 ? Species::WoodGlueLayover : Species::Live;
        r.id = make_record_id(r.path, r.species);
        r.subject_id = "s" + std::to_string(i);
        r.sensor = "x";
        r.kind = SampleKind::SingleFingertip;
        write_png(noise(rng, 40, 48, 3), dir / r.path);
        m.records.push_back(r);
    }
    m.records[1].quality = Quality::Rejected;
    PatchifyOptions opts;
    opts.spec.patch_size = 32;
    const PatchifyResult r1 = patchify(m, dir.path(), opts);
    EXPECT_EQ(r1.sources, 2u);
    EXPECT_EQ(r1.patches, 4u + 7u);
    const Manifest after1 = m;
    for (const auto& rec : m.records) {
        if (rec.kind != SampleKind::Patch) continue;
        EXPECT_TRUE(rec.parent_id);
        EXPECT_EQ(png_dimensions(dir / rec.path), (std::pair<std::size_t, std::size_t>{32, 32}));
        EXPECT_EQ(rec.subject_id, m.find(*rec.parent_id)->subject_id);
    }
    EXPECT_TRUE(validate_manifest(m).empty());
    patchify(m, dir.path(), opts);
    EXPECT_EQ(m, after1);

    opts.spec.patch_size = 64;
    const PatchifyResult small = patchify(m, dir.path(), opts);
    EXPECT_EQ(small.skipped.size(), 2u);
}
