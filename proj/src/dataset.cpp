#include "fpad/dataset.hpp"

#include "fpad/digest.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/image.hpp"
#include "fpad/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace fpad {

Difficulty difficulty_of(Species species) {
    switch (species) {
        case Species::PrintedPhoto: return Difficulty::A;
        case Species::EcoflexLayover:
        case Species::PlaydohLayover:
        case Species::WoodGlueLayover:
        case Species::LatexLayover: return Difficulty::B;
        case Species::SyntheticFingertip: return Difficulty::C;
        case Species::Live: return Difficulty::NotApplicable;
    }
    return Difficulty::NotApplicable;
}

bool is_attack(Species species) { return species != Species::Live; }

bool is_unknown_pai(Species species) {
    return species == Species::LatexLayover || species == Species::PrintedPhoto;
}

namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

constexpr NameTable<Species, 7> kSpeciesNames{{
    {Species::Live, "live"},
    {Species::EcoflexLayover, "ecoflex_layover"},
    {Species::PlaydohLayover, "playdoh_layover"},
    {Species::WoodGlueLayover, "wood_glue_layover"},
    {Species::SyntheticFingertip, "synthetic_fingertip"},
    {Species::LatexLayover, "latex_layover"},
    {Species::PrintedPhoto, "printed_photo"},
}};
constexpr NameTable<Species, 7> kSpeciesCodes{{
    {Species::Live, "Live"},
    {Species::EcoflexLayover, "EL"},
    {Species::PlaydohLayover, "PL"},
    {Species::WoodGlueLayover, "WL"},
    {Species::SyntheticFingertip, "SF"},
    {Species::LatexLayover, "LL"},
    {Species::PrintedPhoto, "PP"},
}};
constexpr NameTable<Difficulty, 4> kDifficultyNames{{
    {Difficulty::A, "A"}, {Difficulty::B, "B"}, {Difficulty::C, "C"}, {Difficulty::NotApplicable, "not_applicable"},
}};
constexpr NameTable<Hand, 3> kHandNames{{
    {Hand::Left, "left"}, {Hand::Right, "right"}, {Hand::NotApplicable, "not_applicable"},
}};
constexpr NameTable<Finger, 5> kFingerNames{{
    {Finger::Index, "index"},
    {Finger::Middle, "middle"},
    {Finger::Ring, "ring"},
    {Finger::Little, "little"},
    {Finger::NotApplicable, "not_applicable"},
}};
constexpr NameTable<SampleKind, 3> kKindNames{{
    {SampleKind::FourFinger, "four_finger"},
    {SampleKind::SingleFingertip, "single_fingertip"},
    {SampleKind::Patch, "patch"},
}};
constexpr NameTable<Split, 4> kSplitNames{{
    {Split::Train, "train"}, {Split::Validation, "validation"}, {Split::Test, "test"}, {Split::Unassigned, "unassigned"},
}};
constexpr NameTable<Quality, 2> kQualityNames{{
    {Quality::Accepted, "accepted"}, {Quality::Rejected, "rejected"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const NameTable<E, N>& table, E value) {
    for (const auto& [v, name] : table)
        if (v == value) return name;
    return "?";
}

template <typename E, std::size_t N>
std::optional<E> value_of(const NameTable<E, N>& table, std::string_view name) {
    for (const auto& [v, n] : table)
        if (n == name) return v;
    return std::nullopt;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

std::string_view to_string(Species v) { return name_of(kSpeciesNames, v); }
std::string_view to_string(Difficulty v) { return name_of(kDifficultyNames, v); }
std::string_view to_string(Hand v) { return name_of(kHandNames, v); }
std::string_view to_string(Finger v) { return name_of(kFingerNames, v); }
std::string_view to_string(SampleKind v) { return name_of(kKindNames, v); }
std::string_view to_string(Split v) { return name_of(kSplitNames, v); }
std::string_view to_string(Quality v) { return name_of(kQualityNames, v); }
std::string_view species_code(Species v) { return name_of(kSpeciesCodes, v); }

std::optional<Species> parse_species(std::string_view s) { return value_of(kSpeciesNames, s); }
std::optional<Hand> parse_hand(std::string_view s) { return value_of(kHandNames, s); }
std::optional<Finger> parse_finger(std::string_view s) { return value_of(kFingerNames, s); }
std::optional<SampleKind> parse_kind(std::string_view s) { return value_of(kKindNames, s); }
std::optional<Split> parse_split(std::string_view s) { return value_of(kSplitNames, s); }
std::optional<Quality> parse_quality(std::string_view s) { return value_of(kQualityNames, s); }

std::optional<Species> parse_species_lenient(std::string_view s) {
    const std::string l = lower(s);
    if (auto v = parse_species(l)) return v;
    for (const auto& [v, code] : kSpeciesCodes)
        if (lower(code) == l) return v;
    return std::nullopt;
}

std::string make_record_id(std::string_view relative_path, Species species) {
    std::string key(relative_path);
    key.push_back('\0');
    key.append(to_string(species));
    return sha256_hex(key).substr(0, 16);
}

const SampleRecord* Manifest::find(std::string_view id) const {
    for (const auto& r : records)
        if (r.id == id) return &r;
    return nullptr;
}

SampleRecord* Manifest::find(std::string_view id) {
    for (auto& r : records)
        if (r.id == id) return &r;
    return nullptr;
}

// ---------------------------------------------------------------------------
// JSON lines

std::string record_to_json_line(const SampleRecord& r) {
    ordered_json j;
    j["schema_version"] = kManifestSchemaVersion;
    j["id"] = r.id;
    j["subject_id"] = r.subject_id;
    j["session"] = r.session;
    j["hand"] = to_string(r.hand);
    j["finger"] = to_string(r.finger);
    j["species"] = to_string(r.species);
    j["sensor"] = r.sensor;
    j["kind"] = to_string(r.kind);
    j["path"] = r.path;
    j["blur_score"] = r.blur_score ? ordered_json(*r.blur_score) : ordered_json(nullptr);
    j["split"] = to_string(r.split);
    j["parent_id"] = r.parent_id ? ordered_json(*r.parent_id) : ordered_json(nullptr);
    j["quality"] = r.quality ? ordered_json(to_string(*r.quality)) : ordered_json(nullptr);
    return j.dump();
}

namespace {

const std::set<std::string, std::less<>> kRequiredKeys{"schema_version", "id",      "subject_id", "session",
                                                        "hand",           "finger",  "species",    "sensor",
                                                        "kind",           "path",    "split"};
const std::set<std::string, std::less<>> kOptionalKeys{"blur_score", "parent_id", "quality"};

template <typename E>
E parse_enum(const ordered_json& j, const char* key, std::optional<E> (*parser)(std::string_view),
             std::size_t line) {
    const auto& v = j.at(key);
    if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must be a string", line);
    const auto s = v.get<std::string>();
    auto parsed = parser(s);
    if (!parsed) throw ParseError(std::string("unknown ") + key + " '" + s + "'", line);
    return *parsed;
}

std::string parse_string(const ordered_json& j, const char* key, std::size_t line) {
    const auto& v = j.at(key);
    if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must be a string", line);
    return v.get<std::string>();
}

}  // namespace

SampleRecord record_from_json_line(std::string_view text, std::size_t line) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), line);
    }
    if (!j.is_object()) throw ParseError("record must be a JSON object", line);
    for (const auto& [key, _] : j.items()) {
        if (!kRequiredKeys.contains(key) && !kOptionalKeys.contains(key))
            throw ParseError("unknown key '" + key + "'", line);
    }
    for (const auto& key : kRequiredKeys) {
        if (!j.contains(key)) throw ParseError("missing key '" + key + "'", line);
    }
    const auto& version = j.at("schema_version");
    if (!version.is_number_integer() || version.get<int>() != kManifestSchemaVersion)
        throw ParseError("unsupported schema_version " + version.dump(), line);

    SampleRecord r;
    r.id = parse_string(j, "id", line);
    r.subject_id = parse_string(j, "subject_id", line);
    if (!j.at("session").is_number_integer()) throw ParseError("field 'session' must be an integer", line);
    r.session = j.at("session").get<int>();
    r.hand = parse_enum<Hand>(j, "hand", parse_hand, line);
    r.finger = parse_enum<Finger>(j, "finger", parse_finger, line);
    r.species = parse_enum<Species>(j, "species", parse_species, line);
    r.sensor = parse_string(j, "sensor", line);
    r.kind = parse_enum<SampleKind>(j, "kind", parse_kind, line);
    r.path = parse_string(j, "path", line);
    r.split = parse_enum<Split>(j, "split", parse_split, line);
    if (j.contains("blur_score") && !j.at("blur_score").is_null()) {
        if (!j.at("blur_score").is_number()) throw ParseError("field 'blur_score' must be a number", line);
        r.blur_score = j.at("blur_score").get<double>();
    }
    if (j.contains("parent_id") && !j.at("parent_id").is_null()) r.parent_id = parse_string(j, "parent_id", line);
    if (j.contains("quality") && !j.at("quality").is_null())
        r.quality = parse_enum<Quality>(j, "quality", parse_quality, line);
    return r;
}

Manifest parse_manifest(std::istream& in) {
    Manifest m;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        m.records.push_back(record_from_json_line(text, line));
    }
    return m;
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    return parse_manifest(in);
}

Manifest load_manifest_or_empty(const fs::path& path) {
    if (!fs::exists(path)) return {};
    return load_manifest(path);
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
    for (const auto& r : manifest.records) out << record_to_json_line(r) << '\n';
}

void save_manifest(const Manifest& manifest, const fs::path& path, bool backup) {
    std::ostringstream ss;
    write_manifest(ss, manifest);
    if (backup && fs::exists(path)) {
        fs::path bak = path;
        bak += ".bak";
        write_file_atomic(bak, read_file(path));
    }
    write_file_atomic(path, ss.str());
}

// ---------------------------------------------------------------------------
// ingest

namespace {

bool has_png_extension(const fs::path& p) { return lower(p.extension().string()) == ".png"; }

std::string subject_for(const fs::path& rel_to_dir) {
    auto it = rel_to_dir.begin();
    if (std::distance(rel_to_dir.begin(), rel_to_dir.end()) > 1) return it->string();
    const std::string stem = rel_to_dir.stem().string();
    return stem.substr(0, stem.find('_'));
}

}  // namespace

IngestResult ingest_directory(Manifest& manifest, const fs::path& dir, const fs::path& data_root,
                              const IngestOptions& options) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    IngestResult result;
    std::unordered_set<std::string> seen;
    for (const auto& r : manifest.records) seen.insert(r.id);

    for (const auto& file : files) {
        const std::string rel = relative_generic(file, data_root);
        if (!has_png_extension(file)) {
            result.skipped.emplace_back(rel, "not a PNG file");
            continue;
        }
        try {
            (void)read_png(file);
        } catch (const IoError& e) {
            result.skipped.emplace_back(rel, e.what());
            continue;
        }
        SampleRecord r;
        r.path = rel;
        r.species = options.species;
        r.sensor = options.sensor;
        r.kind = options.kind;
        r.subject_id = subject_for(file.lexically_relative(dir));
        r.id = make_record_id(rel, options.species);
        if (!seen.insert(r.id).second) throw DuplicateIdError(r.id + " (" + rel + ")");
        result.added.push_back(std::move(r));
    }
    manifest.records.insert(manifest.records.end(), result.added.begin(), result.added.end());
    return result;
}

// ---------------------------------------------------------------------------
// splits

void validate_plan(const SplitPlan& plan) {
    const auto in_open_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_open_unit(plan.train_fraction)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (!in_open_unit(plan.validation_fraction)) throw ConfigError("validation_fraction must lie in (0, 1)");
    if (!(plan.train_fraction + plan.validation_fraction < 1.0))
        throw ConfigError("train_fraction + validation_fraction must be < 1");
}

namespace {

struct Cut {
    std::size_t train;
    std::size_t validation;
};

// Every split gets at least one unit when n >= 3.
Cut cut_counts(std::size_t n, const SplitPlan& plan) {
    auto train = static_cast<std::size_t>(std::llround(plan.train_fraction * static_cast<double>(n)));
    auto val = static_cast<std::size_t>(std::llround(plan.validation_fraction * static_cast<double>(n)));
    if (n >= 3) {
        train = std::clamp<std::size_t>(train, 1, n - 2);
        val = std::clamp<std::size_t>(val, 1, n - 1 - train);
    } else {
        train = std::min(train, n);
        val = std::min(val, n - train);
    }
    return {train, val};
}

Split split_for_rank(std::size_t rank, const Cut& cut) {
    if (rank < cut.train) return Split::Train;
    if (rank < cut.train + cut.validation) return Split::Validation;
    return Split::Test;
}

}  // namespace

Manifest assign_splits(Manifest manifest, const SplitPlan& plan) {
    validate_plan(plan);
    Rng rng(plan.seed);
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        auto& r = manifest.records[i];
        if (is_unknown_pai(r.species))
            r.split = Split::Test;
        else
            eligible.push_back(i);
    }
    if (eligible.empty()) return manifest;

    if (plan.subject_disjoint) {
        std::vector<std::string> subjects;
        for (std::size_t i : eligible) subjects.push_back(manifest.records[i].subject_id);
        std::sort(subjects.begin(), subjects.end());
        subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
        if (subjects.size() < 3)
            throw ConfigError("subject-disjoint split needs at least 3 subjects, found " +
                              std::to_string(subjects.size()));
        rng.shuffle(subjects);
        const Cut cut = cut_counts(subjects.size(), plan);
        std::unordered_map<std::string, Split> by_subject;
        for (std::size_t rank = 0; rank < subjects.size(); ++rank)
            by_subject.emplace(subjects[rank], split_for_rank(rank, cut));
        for (std::size_t i : eligible) manifest.records[i].split = by_subject.at(manifest.records[i].subject_id);
    } else {
        std::sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
            return manifest.records[a].id < manifest.records[b].id;
        });
        rng.shuffle(eligible);
        const Cut cut = cut_counts(eligible.size(), plan);
        for (std::size_t rank = 0; rank < eligible.size(); ++rank)
            manifest.records[eligible[rank]].split = split_for_rank(rank, cut);
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// validation

std::string_view to_string(ViolationKind v) {
    switch (v) {
        case ViolationKind::DuplicateId: return "duplicate_id";
        case ViolationKind::DanglingParent: return "dangling_parent";
        case ViolationKind::ParentKindMismatch: return "parent_kind_mismatch";
        case ViolationKind::UnknownPaiInTraining: return "unknown_pai_in_training";
        case ViolationKind::BlurScoreOnWrongKind: return "blur_score_on_wrong_kind";
        case ViolationKind::InvalidBlurScore: return "invalid_blur_score";
        case ViolationKind::EmptyField: return "empty_field";
    }
    return "?";
}

namespace {

std::optional<SampleKind> expected_parent_kind(SampleKind kind) {
    switch (kind) {
        case SampleKind::Patch: return SampleKind::SingleFingertip;
        case SampleKind::SingleFingertip: return SampleKind::FourFinger;
        case SampleKind::FourFinger: return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace

std::vector<Violation> validate_manifest(const Manifest& manifest) {
    std::vector<Violation> out;
    std::unordered_map<std::string, const SampleRecord*> by_id;
    for (const auto& r : manifest.records) {
        if (r.id.empty()) out.push_back({ViolationKind::EmptyField, r.id, "record with empty id (path " + r.path + ")"});
        if (r.path.empty()) out.push_back({ViolationKind::EmptyField, r.id, "record has an empty path"});
        if (!by_id.emplace(r.id, &r).second)
            out.push_back({ViolationKind::DuplicateId, r.id, "id appears more than once"});
    }
    for (const auto& r : manifest.records) {
        if (r.parent_id) {
            const auto it = by_id.find(*r.parent_id);
            if (it == by_id.end()) {
                out.push_back({ViolationKind::DanglingParent, r.id, "parent " + *r.parent_id + " not in manifest"});
            } else {
                const auto expected = expected_parent_kind(r.kind);
                if (!expected || it->second->kind != *expected) {
                    out.push_back({ViolationKind::ParentKindMismatch, r.id,
                                   std::string(to_string(r.kind)) + " record has " +
                                       std::string(to_string(it->second->kind)) + " parent " + *r.parent_id});
                }
            }
        }
        if (is_unknown_pai(r.species) && (r.split == Split::Train || r.split == Split::Validation)) {
            out.push_back({ViolationKind::UnknownPaiInTraining, r.id,
                           std::string(to_string(r.species)) + " record assigned to " +
                               std::string(to_string(r.split))});
        }
        if (r.blur_score) {
            if (r.kind != SampleKind::SingleFingertip)
                out.push_back({ViolationKind::BlurScoreOnWrongKind, r.id,
                               "blur_score on " + std::string(to_string(r.kind)) + " record"});
            if (!std::isfinite(*r.blur_score) || *r.blur_score < 0.0)
                out.push_back({ViolationKind::InvalidBlurScore, r.id, "blur_score must be finite and >= 0"});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// summary

std::size_t Summary::count(Species species, SampleKind kind, Split split) const {
    const auto it = counts.find({species, kind, split});
    return it == counts.end() ? 0 : it->second;
}

std::size_t Summary::count(Species species, SampleKind kind) const {
    std::size_t n = 0;
    for (const auto& [key, c] : counts)
        if (key.species == species && key.kind == kind) n += c;
    return n;
}

std::size_t Summary::count(Species species) const {
    std::size_t n = 0;
    for (const auto& [key, c] : counts)
        if (key.species == species) n += c;
    return n;
}

Summary summarize(const Manifest& manifest) {
    Summary s;
    for (const auto& r : manifest.records) ++s.counts[{r.species, r.kind, r.split}];
    s.total = manifest.records.size();
    return s;
}

std::string render_summary(const Summary& s) {
    std::ostringstream os;
    os << std::left << std::setw(22) << "species" << std::right << std::setw(12) << "four_finger" << std::setw(12)
       << "fingertips" << std::setw(10) << "patches" << std::setw(10) << "train" << std::setw(12) << "validation"
       << std::setw(8) << "test" << std::setw(12) << "unassigned" << '\n';
    for (Species sp : kAllSpecies) {
        if (s.count(sp) == 0) continue;
        os << std::left << std::setw(22) << to_string(sp) << std::right << std::setw(12)
           << s.count(sp, SampleKind::FourFinger) << std::setw(12) << s.count(sp, SampleKind::SingleFingertip)
           << std::setw(10) << s.count(sp, SampleKind::Patch) << std::setw(10)
           << s.count(sp, SampleKind::Patch, Split::Train) << std::setw(12)
           << s.count(sp, SampleKind::Patch, Split::Validation) << std::setw(8)
           << s.count(sp, SampleKind::Patch, Split::Test) << std::setw(12)
           << s.count(sp, SampleKind::Patch, Split::Unassigned) << '\n';
    }
    os << "total records: " << s.total << '\n';
    return os.str();
}

}  // namespace fpad
