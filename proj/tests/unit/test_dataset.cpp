#include "fixtures.hpp"
#include "oracles.hpp"

#include "fpad/dataset.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/image.hpp"

#include <gtest/gtest.h>

#include <map>
#include <sstream>

using namespace fpad;

namespace {

SampleRecord make(const std::string& id, Species sp, SampleKind kind, const std::string& subject = "s1") {
    SampleRecord r;
    r.id = id;
    r.subject_id = subject;
    r.species = sp;
    r.sensor = "sensor";
    r.kind = kind;
    r.path = id + ".png";
    return r;
}

}  // namespace

TEST(Species, FixedMappings) {
    EXPECT_EQ(difficulty_of(Species::PlaydohLayover), Difficulty::B);
    EXPECT_EQ(difficulty_of(Species::Live), Difficulty::NotApplicable);
    EXPECT_FALSE(is_attack(Species::Live));
    EXPECT_TRUE(is_attack(Species::PrintedPhoto));
    EXPECT_TRUE(is_unknown_pai(Species::LatexLayover));
    EXPECT_TRUE(is_unknown_pai(Species::PrintedPhoto));
    EXPECT_FALSE(is_unknown_pai(Species::WoodGlueLayover));
    for (Species s : kAllSpecies) {
        EXPECT_EQ(parse_species(to_string(s)), s);
        EXPECT_EQ(parse_species_lenient(species_code(s)), s);
    }
    EXPECT_EQ(parse_species_lenient("wl"), Species::WoodGlueLayover);
    EXPECT_FALSE(parse_species("WL"));
}

TEST(Manifest, JsonLineRoundTrip) {
    SampleRecord r = make("abc", Species::WoodGlueLayover, SampleKind::SingleFingertip);
    r.hand = Hand::Left;
    r.finger = Finger::Ring;
    r.blur_score = 12.5;
    r.split = Split::Validation;
    r.parent_id = "parent";
    r.quality = Quality::Rejected;
    EXPECT_EQ(record_from_json_line(record_to_json_line(r), 1), r);
    const SampleRecord plain = make("p", Species::Live, SampleKind::Patch);
    EXPECT_EQ(record_from_json_line(record_to_json_line(plain), 1), plain);
}

TEST(Manifest, ParseErrorsNameTheLine) {
    const std::string good = record_to_json_line(make("a", Species::Live, SampleKind::Patch));
    std::string unknown_key = good;
    unknown_key.insert(1, "\"colour\":1,");
    std::string bad_enum = good;
    bad_enum.replace(bad_enum.find("\"live\""), 6, "\"alive\"");
    for (const std::string& bad : {std::string("{not json"), unknown_key, bad_enum, std::string("{\"id\":\"x\"}")}) {
        std::istringstream in(good + "\n\n" + bad + "\n");
        try {
            parse_manifest(in);
            ADD_FAILURE() << "accepted: " << bad;
        } catch (const ParseError& e) {
            EXPECT_EQ(e.line(), 3u) << e.what();
        }
    }
}

TEST(Manifest, SaveLoadKeepsBackup) {
    test::TempDir dir("manifest");
    Manifest m;
    m.records = {make("a", Species::Live, SampleKind::Patch), make("b", Species::EcoflexLayover, SampleKind::Patch)};
    const auto path = dir / "manifest.jsonl";
    save_manifest(m, path);
    EXPECT_EQ(load_manifest(path), m);
    Manifest m2 = m;
    m2.records.pop_back();
    save_manifest(m2, path);
    EXPECT_EQ(load_manifest(path), m2);
    EXPECT_EQ(load_manifest(dir / "manifest.jsonl.bak"), m);
    EXPECT_TRUE(load_manifest_or_empty(dir / "none.jsonl").empty());
    EXPECT_THROW(load_manifest(dir / "none.jsonl"), IoError);
}

TEST(Ingest, CountsIdsAndDuplicates) {
    test::TempDir dir("ingest");
    std::filesystem::create_directories(dir / "pl/subjA");
    std::filesystem::create_directories(dir / "empty");
    for (int i = 0; i < 3; ++i) write_png(ImageBuffer(8, 8, 1, 10), dir / ("pl/subjA/img" + std::to_string(i) + ".png"));
    write_file_atomic(dir / "pl/readme.txt", "x");

    Manifest m;
    IngestOptions opts;
    opts.species = Species::PlaydohLayover;
    opts.sensor = "s";
    EXPECT_TRUE(ingest_directory(m, dir / "empty", dir.path(), opts).added.empty());
    EXPECT_TRUE(m.empty());

    const IngestResult r = ingest_directory(m, dir / "pl", dir.path(), opts);
    ASSERT_EQ(r.added.size(), 3u);
    EXPECT_EQ(r.skipped.size(), 1u);
    for (const auto& rec : m.records) {
        EXPECT_EQ(rec.split, Split::Unassigned);
        EXPECT_EQ(difficulty_of(rec.species), Difficulty::B);
        EXPECT_EQ(rec.subject_id, "subjA");
        EXPECT_EQ(rec.id, make_record_id(rec.path, Species::PlaydohLayover));
        EXPECT_EQ(rec.id.size(), 16u);
    }
    EXPECT_EQ(m.records[0].path, "pl/subjA/img0.png");
    const Manifest before = m;
    EXPECT_THROW(ingest_directory(m, dir / "pl", dir.path(), opts), DuplicateIdError);
    EXPECT_EQ(m, before);
}

TEST(Splits, UnknownPaiAlwaysTest) {
    Manifest m;
    for (int i = 0; i < 6; ++i)
        m.records.push_back(make("u" + std::to_string(i), i % 2 ? Species::LatexLayover : Species::PrintedPhoto,
                                 SampleKind::Patch, "s" + std::to_string(i)));
    SplitPlan plan;
    plan.train_fraction = 0.9;
    for (const auto& r : assign_splits(m, plan).records) EXPECT_EQ(r.split, Split::Test);
}

TEST(Splits, SubjectDisjointCountsByRecount) {
    Manifest m;
    for (int s = 0; s < 10; ++s)
        for (int k = 0; k < 1 + s % 3; ++k)
            m.records.push_back(make("r" + std::to_string(s) + "_" + std::to_string(k), Species::Live, SampleKind::Patch,
                                     "subj" + std::to_string(s)));
    SplitPlan plan;
    plan.train_fraction = 0.8;
    plan.validation_fraction = 0.1;
    plan.seed = 5;
    const Manifest out = assign_splits(m, plan);
    std::map<std::string, std::set<Split>> per_subject;
    for (const auto& r : out.records) per_subject[r.subject_id].insert(r.split);
    std::map<Split, int> subjects;
    for (const auto& [subj, splits] : per_subject) {
        ASSERT_EQ(splits.size(), 1u) << subj << " straddles splits";
        ++subjects[*splits.begin()];
    }
    EXPECT_EQ(subjects[Split::Train], 8);
    EXPECT_EQ(subjects[Split::Validation], 1);
    EXPECT_EQ(subjects[Split::Test], 1);
    EXPECT_EQ(assign_splits(m, plan), out);
    plan.seed = 6;
    Manifest other = assign_splits(m, plan);
    EXPECT_EQ(other.size(), out.size());
}

TEST(Splits, RecordLevelIgnoresInputOrder) {
    Manifest m;
    for (int i = 0; i < 20; ++i)
        m.records.push_back(make("r" + std::to_string(i), Species::EcoflexLayover, SampleKind::Patch, "same"));
    SplitPlan plan;
    plan.subject_disjoint = false;
    const Manifest a = assign_splits(m, plan);
    std::reverse(m.records.begin(), m.records.end());
    const Manifest b = assign_splits(m, plan);
    for (const auto& r : a.records) EXPECT_EQ(b.find(r.id)->split, r.split);
}

TEST(Splits, RejectsBadPlans) {
    SplitPlan plan;
    plan.train_fraction = 0.9;
    plan.validation_fraction = 0.2;
    EXPECT_THROW(validate_plan(plan), ConfigError);
    Manifest m;
    m.records = {make("a", Species::Live, SampleKind::Patch, "one"), make("b", Species::Live, SampleKind::Patch, "one")};
    EXPECT_THROW(assign_splits(m, SplitPlan{}), ConfigError);
}

TEST(Validate, RuleInstances) {
    Manifest m;
    m.records = {make("ff", Species::Live, SampleKind::FourFinger), make("tip", Species::Live, SampleKind::SingleFingertip)};
    m.records[1].parent_id = "ff";
    EXPECT_TRUE(validate_manifest(m).empty());

    Manifest latex = m;
    latex.records.push_back(make("ll", Species::LatexLayover, SampleKind::Patch));
    latex.records.back().split = Split::Train;
    auto v = validate_manifest(latex);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].kind, ViolationKind::UnknownPaiInTraining);
    EXPECT_EQ(v[0].record_id, "ll");

    Manifest dangling = m;
    dangling.records.push_back(make("patch", Species::Live, SampleKind::Patch));
    dangling.records.back().parent_id = "missing";
    v = validate_manifest(dangling);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].kind, ViolationKind::DanglingParent);

    Manifest blur = m;
    blur.records[0].blur_score = 3.0;
    v = validate_manifest(blur);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].kind, ViolationKind::BlurScoreOnWrongKind);

    Manifest dup = m;
    dup.records.push_back(dup.records[0]);
    EXPECT_EQ(validate_manifest(dup).at(0).kind, ViolationKind::DuplicateId);
}

TEST(Summary, LiveRowSurfacesTheRemainder) {
    Manifest m;
    auto add = [&](std::size_t n, Split split) {
        for (std::size_t i = 0; i < n; ++i) {
            SampleRecord r = make(std::to_string(m.size()), Species::Live, SampleKind::Patch);
            r.split = split;
            m.records.push_back(std::move(r));
        }
    };
    add(27556, Split::Train);
    add(1648, Split::Test);
    add(2498, Split::Unassigned);
    const Summary s = summarize(m);
    EXPECT_EQ(s.count(Species::Live, SampleKind::Patch), 31702u);
    EXPECT_EQ(s.count(Species::Live, SampleKind::Patch, Split::Unassigned), 2498u);
    const std::string table = render_summary(s);
    EXPECT_NE(table.find("31702"), std::string::npos);
    EXPECT_NE(table.find("2498"), std::string::npos);
    EXPECT_EQ(summarize(Manifest{}).total, 0u);
}

TEST(Summary, WoodGluePatchesPerFingertip) {
    Manifest m;
    m.records.push_back(make("tip", Species::WoodGlueLayover, SampleKind::SingleFingertip));
    for (int k = 0; k < 7; ++k) {
        SampleRecord p = make("tip_" + std::to_string(k), Species::WoodGlueLayover, SampleKind::Patch);
        p.parent_id = "tip";
        m.records.push_back(p);
    }
    EXPECT_EQ(summarize(m).count(Species::WoodGlueLayover, SampleKind::Patch), 7u);
}
