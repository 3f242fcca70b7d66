#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace fpad {

inline constexpr int kManifestSchemaVersion = 1;

enum class Species {
    Live,
    EcoflexLayover,
    PlaydohLayover,
    WoodGlueLayover,
    SyntheticFingertip,
    LatexLayover,
    PrintedPhoto,
};

inline constexpr Species kAllSpecies[] = {
    Species::Live,           Species::EcoflexLayover,     Species::PlaydohLayover, Species::WoodGlueLayover,
    Species::SyntheticFingertip, Species::LatexLayover, Species::PrintedPhoto,
};

// PAI production difficulty, A easiest.
enum class Difficulty { A, B, C, NotApplicable };

enum class Hand { Left, Right, NotApplicable };
enum class Finger { Index, Middle, Ring, Little, NotApplicable };
enum class SampleKind { FourFinger, SingleFingertip, Patch };
enum class Split { Train, Validation, Test, Unassigned };
enum class Quality { Accepted, Rejected };

Difficulty difficulty_of(Species species);
bool is_attack(Species species);
// Latex layovers and printed photos are held out of training entirely.
bool is_unknown_pai(Species species);

// Manifest spelling: snake_case ("wood_glue_layover").
std::string_view to_string(Species v);
std::string_view to_string(Difficulty v);
std::string_view to_string(Hand v);
std::string_view to_string(Finger v);
std::string_view to_string(SampleKind v);
std::string_view to_string(Split v);
std::string_view to_string(Quality v);
// Two-letter acronym used in report columns ("WL"); "Live" for bonafide.
std::string_view species_code(Species v);

// Accept exactly the manifest spelling; nullopt otherwise.
std::optional<Species> parse_species(std::string_view s);
std::optional<Hand> parse_hand(std::string_view s);
std::optional<Finger> parse_finger(std::string_view s);
std::optional<SampleKind> parse_kind(std::string_view s);
std::optional<Split> parse_split(std::string_view s);
std::optional<Quality> parse_quality(std::string_view s);
// Also accepts the acronym and is case-insensitive; used by the CLI.
std::optional<Species> parse_species_lenient(std::string_view s);

struct SampleRecord {
    std::string id;
    std::string subject_id;
    int session = 1;
    Hand hand = Hand::NotApplicable;
    Finger finger = Finger::NotApplicable;
    Species species = Species::Live;
    std::string sensor;
    SampleKind kind = SampleKind::SingleFingertip;
    std::string path;  // relative to the manifest directory, '/' separated
    std::optional<double> blur_score;
    Split split = Split::Unassigned;
    std::optional<std::string> parent_id;
    std::optional<Quality> quality;

    bool operator==(const SampleRecord&) const = default;
};

// Hex digest of (relative path, species), truncated to 16 characters.
std::string make_record_id(std::string_view relative_path, Species species);

struct Manifest {
    std::vector<SampleRecord> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    const SampleRecord* find(std::string_view id) const;
    SampleRecord* find(std::string_view id);
    bool contains(std::string_view id) const { return find(id) != nullptr; }

    bool operator==(const Manifest&) const = default;
};

std::string record_to_json_line(const SampleRecord& record);
// Throws ParseError naming `line_number` on malformed JSON, unknown keys,
// missing keys or an unknown enum value.
SampleRecord record_from_json_line(std::string_view line, std::size_t line_number);

Manifest parse_manifest(std::istream& in);
Manifest load_manifest(const std::filesystem::path& path);
// Missing file reads as an empty manifest.
Manifest load_manifest_or_empty(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const Manifest& manifest);
// Atomic replace via a sibling temp file. When `backup` is set and the target
// exists, the previous version is kept as `<path>.bak`.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path, bool backup = true);

// ---------------------------------------------------------------------------
// ingest

struct IngestOptions {
    Species species = Species::Live;
    std::string sensor;
    SampleKind kind = SampleKind::SingleFingertip;
};

struct IngestResult {
    std::vector<SampleRecord> added;
    std::vector<std::pair<std::string, std::string>> skipped;  // (path, reason)
};

// Scans `dir` recursively for PNG files (sorted, so ids and order are stable)
// and appends one Unassigned record per decodable image. Paths are stored
// relative to `data_root`. Subject id is the first directory under `dir`, or
// the file stem up to the first underscore for files directly in `dir`.
// All-or-nothing: a duplicate id throws DuplicateIdError and leaves the
// manifest untouched.
IngestResult ingest_directory(Manifest& manifest, const std::filesystem::path& dir,
                              const std::filesystem::path& data_root, const IngestOptions& options);

// ---------------------------------------------------------------------------
// splits

struct SplitPlan {
    double train_fraction = 0.85;
    double validation_fraction = 0.08;
    bool subject_disjoint = true;
    std::uint64_t seed = 0;
};

void validate_plan(const SplitPlan& plan);

// Unknown-PAI records always go to Test. The remaining records are shuffled
// (by subject when subject_disjoint) in id order with the plan seed and cut
// into train/validation/test. Throws ConfigError on a bad plan or when there
// are fewer eligible subjects than splits.
Manifest assign_splits(Manifest manifest, const SplitPlan& plan);

// ---------------------------------------------------------------------------
// validation

enum class ViolationKind {
    DuplicateId,
    DanglingParent,
    ParentKindMismatch,
    UnknownPaiInTraining,
    BlurScoreOnWrongKind,
    InvalidBlurScore,
    EmptyField,
};

std::string_view to_string(ViolationKind v);

struct Violation {
    ViolationKind kind;
    std::string record_id;
    std::string message;
};

std::vector<Violation> validate_manifest(const Manifest& manifest);

// ---------------------------------------------------------------------------
// summary

struct SummaryKey {
    Species species;
    SampleKind kind;
    Split split;
    auto operator<=>(const SummaryKey&) const = default;
};

struct Summary {
    std::map<SummaryKey, std::size_t> counts;
    std::size_t total = 0;

    std::size_t count(Species species, SampleKind kind, Split split) const;
    std::size_t count(Species species, SampleKind kind) const;
    std::size_t count(Species species) const;

    bool operator==(const Summary&) const = default;
};

Summary summarize(const Manifest& manifest);

// Per-species table: rows species, columns four-finger / fingertip / patch
// totals and patches per split. Unassigned patches get their own column.
std::string render_summary(const Summary& summary);

}  // namespace fpad
