#include "fpad/annotations.hpp"

#include "fpad/digest.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/image.hpp"
#include "fpad/log.hpp"

#include <json.hpp>

#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace fpad {

namespace {

using nlohmann::json;

constexpr std::pair<TaskStatus, std::string_view> kStatusNames[] = {
    {TaskStatus::Pending, "pending"},
    {TaskStatus::InProgress, "in_progress"},
    {TaskStatus::Done, "done"},
    {TaskStatus::Skipped, "skipped"},
};

bool is_box_label(Finger f) { return f != Finger::NotApplicable; }

json box_json(const BoundingBox& b) {
    return json{{"x", b.x},
                {"y", b.y},
                {"w", b.w},
                {"h", b.h},
                {"label", std::string(to_string(b.label))},
                {"annotator", b.annotator},
                {"created_at", b.created_at}};
}

json task_json(const AnnotationTask& t) {
    json boxes = json::array();
    for (const auto& b : t.boxes) boxes.push_back(box_json(b));
    return json{{"record_id", t.record_id},
                {"status", std::string(to_string(t.status))},
                {"revision", t.revision},
                {"boxes", std::move(boxes)}};
}

AnnotationTask task_from_json(const json& j, std::size_t line) {
    try {
        AnnotationTask t;
        t.record_id = j.at("record_id").get<std::string>();
        const auto status = parse_task_status(j.at("status").get<std::string>());
        if (!status) throw ParseError("unknown task status", line);
        t.status = *status;
        t.revision = j.at("revision").get<std::uint64_t>();
        for (const auto& bj : j.at("boxes")) {
            BoundingBox b;
            b.x = bj.at("x").get<std::int64_t>();
            b.y = bj.at("y").get<std::int64_t>();
            b.w = bj.at("w").get<std::int64_t>();
            b.h = bj.at("h").get<std::int64_t>();
            const auto label = parse_finger(bj.at("label").get<std::string>());
            if (!label || !is_box_label(*label)) throw ParseError("unknown box label", line);
            b.label = *label;
            b.annotator = bj.value("annotator", std::string());
            b.created_at = bj.value("created_at", std::string());
            t.boxes.push_back(std::move(b));
        }
        return t;
    } catch (const json::exception& e) {
        throw ParseError(std::string("annotation log: ") + e.what(), line);
    }
}

class InvalidCursor : public Error {
public:
    explicit InvalidCursor(const std::string& message) : Error("invalid_cursor", message) {}
};

}  // namespace

std::string_view to_string(TaskStatus s) {
    for (const auto& [v, name] : kStatusNames)
        if (v == s) return name;
    return "?";
}

std::optional<TaskStatus> parse_task_status(std::string_view s) {
    for (const auto& [v, name] : kStatusNames)
        if (name == s) return v;
    return std::nullopt;
}

std::string task_to_json(const AnnotationTask& task) { return task_json(task).dump(); }

std::vector<std::string> box_violations(const std::vector<BoundingBox>& boxes, std::size_t image_width,
                                        std::size_t image_height) {
    std::vector<std::string> out;
    if (boxes.empty()) out.push_back("at least one box is required");
    std::set<Finger> seen;
    const auto W = static_cast<std::int64_t>(image_width), H = static_cast<std::int64_t>(image_height);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const BoundingBox& b = boxes[i];
        const std::string tag = "box " + std::to_string(i) + " (" + std::string(to_string(b.label)) + ")";
        if (!is_box_label(b.label)) out.push_back(tag + ": label must be index, middle, ring or little");
        if (b.x < 0 || b.y < 0) out.push_back(tag + ": origin must be non-negative");
        if (b.w < kMinBoxSide || b.h < kMinBoxSide)
            out.push_back(tag + ": w and h must be >= " + std::to_string(kMinBoxSide) + " px, got " +
                          std::to_string(b.w) + "x" + std::to_string(b.h));
        if (b.w > 0 && b.x + b.w > W)
            out.push_back(tag + ": x + w = " + std::to_string(b.x + b.w) + " exceeds image width " + std::to_string(W));
        if (b.h > 0 && b.y + b.h > H)
            out.push_back(tag + ": y + h = " + std::to_string(b.y + b.h) + " exceeds image height " +
                          std::to_string(H));
        if (!seen.insert(b.label).second) out.push_back(tag + ": label already used by another box");
    }
    return out;
}

bool transition_allowed(TaskStatus from, TaskStatus to) {
    switch (from) {
        case TaskStatus::Pending: return to == TaskStatus::InProgress || to == TaskStatus::Skipped;
        case TaskStatus::InProgress: return to == TaskStatus::Done || to == TaskStatus::Skipped;
        case TaskStatus::Skipped: return to == TaskStatus::InProgress || to == TaskStatus::Pending;
        case TaskStatus::Done: return false;
    }
    return false;
}

// ---------------------------------------------------------------------------

AnnotationStore::AnnotationStore(std::filesystem::path log_path, const Manifest& manifest,
                                 std::filesystem::path data_root)
    : log_path_(std::move(log_path)), data_root_(std::move(data_root)), clock_(log::now_iso8601) {
    for (const auto& r : manifest.records) {
        if (r.kind != SampleKind::FourFinger) continue;
        records_.emplace(r.id, r);
        tasks_.emplace(r.id, AnnotationTask{r.id, TaskStatus::Pending, {}, 0});
    }
    std::size_t lines = 0;
    if (std::filesystem::exists(log_path_)) {
        std::ifstream in(log_path_);
        if (!in) throw IoError("cannot read " + log_path_.string());
        std::string line;
        while (std::getline(in, line)) {
            ++lines;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ParseError(std::string("annotation log: ") + e.what(), lines);
            }
            AnnotationTask t = task_from_json(j, lines);
            auto it = tasks_.find(t.record_id);
            // Snapshots for records no longer in the manifest are dropped.
            if (it != tasks_.end()) it->second = std::move(t);
        }
    }
    if (lines > 2 * tasks_.size() + 16) compact();
}

void AnnotationStore::set_clock(std::function<std::string()> clock) {
    std::lock_guard lock(mutex_);
    clock_ = std::move(clock);
}

std::size_t AnnotationStore::size() const {
    std::lock_guard lock(mutex_);
    return tasks_.size();
}

TaskPage AnnotationStore::list_tasks(std::optional<TaskStatus> filter, const std::optional<std::string>& cursor,
                                     std::size_t page_size) const {
    if (page_size == 0) throw ValidationError("page size must be >= 1", {});
    std::lock_guard lock(mutex_);
    auto it = tasks_.begin();
    if (cursor && !cursor->empty()) {
        std::string after;
        if (!hex_decode(*cursor, after) || !tasks_.count(after)) throw InvalidCursor("invalid cursor '" + *cursor + "'");
        it = tasks_.upper_bound(after);
    }
    TaskPage page;
    for (; it != tasks_.end(); ++it) {
        if (filter && it->second.status != *filter) continue;
        if (page.tasks.size() == page_size) {
            page.next_cursor = hex_encode(page.tasks.back().record_id);
            break;
        }
        page.tasks.push_back(it->second);
    }
    return page;
}

AnnotationTask AnnotationStore::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = tasks_.find(id);
    if (it == tasks_.end()) throw NotFoundError("no annotation task for record " + id);
    return it->second;
}

std::pair<std::size_t, std::size_t> AnnotationStore::image_size(const std::string& id) const {
    const SampleRecord& r = records_.at(id);
    return png_dimensions(data_root_ / r.path);
}

void AnnotationStore::append(const AnnotationTask& task) {
    if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
    FILE* f = std::fopen(log_path_.c_str(), "ab");
    if (!f) throw IoError("cannot open " + log_path_.string() + " for append");
    const std::string line = task_to_json(task) + "\n";
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) throw IoError("write failed: " + log_path_.string());
}

AnnotationTask AnnotationStore::submit_boxes(const std::string& id, std::vector<BoundingBox> boxes,
                                             std::uint64_t expected_revision, const std::string& annotator) {
    std::lock_guard lock(mutex_);
    auto it = tasks_.find(id);
    if (it == tasks_.end()) throw NotFoundError("no annotation task for record " + id);
    if (it->second.revision != expected_revision)
        throw ConflictError("task " + id + " is at revision " + std::to_string(it->second.revision) +
                            ", submission expected " + std::to_string(expected_revision));
    const auto [w, h] = image_size(id);
    const auto problems = box_violations(boxes, w, h);
    if (!problems.empty()) throw ValidationError("rejected " + std::to_string(problems.size()) + " box problem(s)", problems);

    const std::string now = clock_();
    for (auto& b : boxes) {
        if (b.annotator.empty()) b.annotator = annotator;
        if (b.created_at.empty()) b.created_at = now;
    }
    std::sort(boxes.begin(), boxes.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
    AnnotationTask next = it->second;
    next.boxes = std::move(boxes);
    next.status = TaskStatus::Done;
    next.revision += 1;
    append(next);
    it->second = next;
    return next;
}

AnnotationTask AnnotationStore::set_status(const std::string& id, TaskStatus status, std::uint64_t expected_revision) {
    std::lock_guard lock(mutex_);
    auto it = tasks_.find(id);
    if (it == tasks_.end()) throw NotFoundError("no annotation task for record " + id);
    if (it->second.revision != expected_revision)
        throw ConflictError("task " + id + " is at revision " + std::to_string(it->second.revision) +
                            ", request expected " + std::to_string(expected_revision));
    if (!transition_allowed(it->second.status, status))
        throw ConflictError("task " + id + " cannot move from " + std::string(to_string(it->second.status)) + " to " +
                            std::string(to_string(status)));
    if (status == TaskStatus::Done && it->second.boxes.empty())
        throw ValidationError("Done requires at least one box", {"task " + id + " has no boxes"});
    AnnotationTask next = it->second;
    next.status = status;
    next.revision += 1;
    append(next);
    it->second = next;
    return next;
}

void AnnotationStore::compact() {
    std::lock_guard lock(mutex_);
    std::string body;
    for (const auto& [id, t] : tasks_)
        if (t.revision > 0) body += task_to_json(t) + "\n";
    write_file_atomic(log_path_, body);
}

ExportResult AnnotationStore::export_crops(Manifest& manifest) const {
    std::vector<AnnotationTask> done;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [id, t] : tasks_)
            if (t.status == TaskStatus::Done) done.push_back(t);
    }
    ExportResult result;
    for (const AnnotationTask& task : done) {
        const SampleRecord* parent_ptr = manifest.find(task.record_id);
        if (!parent_ptr) throw NotFoundError("four-finger record " + task.record_id + " is not in the manifest");
        const SampleRecord parent = *parent_ptr;
        const std::filesystem::path src = data_root_ / parent.path;
        if (!std::filesystem::exists(src))
            throw IoError("source image for " + parent.id + " is missing: " + src.string());
        const ImageBuffer image = read_png(src);
        ++result.tasks;
        for (const BoundingBox& b : task.boxes) {
            const ImageBuffer tip = crop(image, static_cast<std::size_t>(b.x), static_cast<std::size_t>(b.y),
                                         static_cast<std::size_t>(b.w), static_cast<std::size_t>(b.h));
            const std::string rel = "fingertips/" + parent.id + "_" + std::string(to_string(b.label)) + ".png";
            const auto bytes = encode_png(tip);
            write_file_atomic(data_root_ / rel, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));

            const std::string id = make_record_id(rel, parent.species);
            if (SampleRecord* existing = manifest.find(id)) {
                existing->subject_id = parent.subject_id;
                existing->session = parent.session;
                existing->hand = parent.hand;
                existing->finger = b.label;
                existing->sensor = parent.sensor;
                existing->parent_id = parent.id;
                ++result.updated;
            } else {
                SampleRecord r;
                r.id = id;
                r.subject_id = parent.subject_id;
                r.session = parent.session;
                r.hand = parent.hand;
                r.finger = b.label;
                r.species = parent.species;
                r.sensor = parent.sensor;
                r.kind = SampleKind::SingleFingertip;
                r.path = rel;
                r.split = parent.split;
                r.parent_id = parent.id;
                manifest.records.push_back(std::move(r));
                ++result.created;
            }
            result.crop_ids.push_back(id);
        }
    }
    log::info("annotations.export", {{"tasks", std::to_string(result.tasks)},
                                     {"created", std::to_string(result.created)},
                                     {"updated", std::to_string(result.updated)}});
    return result;
}

}  // namespace fpad
