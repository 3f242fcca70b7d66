#pragma once

#include "fpad/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace fpad {

enum class TaskStatus { Pending, InProgress, Done, Skipped };

std::string_view to_string(TaskStatus s);
std::optional<TaskStatus> parse_task_status(std::string_view s);

// Top-left origin, pixel units; the right and bottom edges are exclusive, so
// a box covers columns [x, x + w) and rows [y, y + h).
struct BoundingBox {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t w = 0;
    std::int64_t h = 0;
    Finger label = Finger::Index;
    std::string annotator;
    std::string created_at;

    bool operator==(const BoundingBox&) const = default;
};

inline constexpr std::int64_t kMinBoxSide = 16;

struct AnnotationTask {
    std::string record_id;
    TaskStatus status = TaskStatus::Pending;
    std::vector<BoundingBox> boxes;
    std::uint64_t revision = 0;

    bool operator==(const AnnotationTask&) const = default;
};

// One message per offending box; empty when the set is acceptable.
std::vector<std::string> box_violations(const std::vector<BoundingBox>& boxes, std::size_t image_width,
                                        std::size_t image_height);

bool transition_allowed(TaskStatus from, TaskStatus to);

struct TaskPage {
    std::vector<AnnotationTask> tasks;
    std::optional<std::string> next_cursor;
};

struct ExportResult {
    std::size_t tasks = 0;
    std::size_t created = 0;
    std::size_t updated = 0;
    std::vector<std::string> crop_ids;
};

// Tasks are the manifest's FourFinger records. Task state lives in an
// append-only JSON-lines log (one snapshot per change, last one wins); the
// manifest is only touched by export_crops(). All methods are thread-safe;
// a single mutex serializes the revision check with the append.
class AnnotationStore {
public:
    AnnotationStore(std::filesystem::path log_path, const Manifest& manifest, std::filesystem::path data_root);

    // Ordered by record id. `cursor` is the opaque value from a previous page.
    TaskPage list_tasks(std::optional<TaskStatus> filter, const std::optional<std::string>& cursor,
                        std::size_t page_size = 50) const;
    AnnotationTask get(const std::string& id) const;

    // Replaces the box set and marks the task Done. Throws NotFoundError,
    // ConflictError on a stale revision, ValidationError listing bad boxes.
    AnnotationTask submit_boxes(const std::string& id, std::vector<BoundingBox> boxes,
                                std::uint64_t expected_revision, const std::string& annotator = "");
    AnnotationTask set_status(const std::string& id, TaskStatus status, std::uint64_t expected_revision);

    // For each Done task writes `fingertips/<parent>_<label>.png` and upserts
    // a SingleFingertip record. Re-export rewrites identical bytes and leaves
    // existing records' split, blur score and quality alone.
    ExportResult export_crops(Manifest& manifest) const;

    // Rewrites the log with one line per task (atomic replace).
    void compact();

    std::size_t size() const;
    const std::filesystem::path& log_path() const noexcept { return log_path_; }

    // Timestamp source for created_at; replaceable for tests.
    void set_clock(std::function<std::string()> clock);

private:
    void append(const AnnotationTask& task);
    std::pair<std::size_t, std::size_t> image_size(const std::string& id) const;

    std::filesystem::path log_path_;
    std::filesystem::path data_root_;
    std::map<std::string, SampleRecord> records_;
    std::map<std::string, AnnotationTask> tasks_;
    std::function<std::string()> clock_;
    mutable std::mutex mutex_;
};

std::string task_to_json(const AnnotationTask& task);

}  // namespace fpad
