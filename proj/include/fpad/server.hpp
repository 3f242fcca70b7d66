#pragma once

#include "fpad/annotations.hpp"
#include "fpad/dataset.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace fpad {

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::filesystem::path manifest_path;
    std::filesystem::path data_root;
    std::filesystem::path annotations_path;  // default: <data_root>/annotations.jsonl
    std::optional<std::filesystem::path> ui_dir;
};

// HTTP + JSON front of AnnotationStore:
//   GET  /api/health
//   GET  /api/tasks?status=&cursor=&limit=
//   GET  /api/tasks/{id}
//   PUT  /api/tasks/{id}/boxes   {boxes:[{x,y,w,h,label}], expected_revision, annotator?}
//   PUT  /api/tasks/{id}/status  {status, expected_revision}
//   GET  /api/images/{id}        PNG bytes
//   GET  /api/images/{id}/meta   {id, width, height, channels, species, sensor, kind, subject_id}
//   POST /api/export             crops Done tasks into the manifest (backup kept)
// Errors are {code, message, details}: 400 bad request or cursor, 404
// unknown id, 409 stale revision or bad transition, 422 invalid boxes.
// The UI bundle (ui_dir) is served at "/"; a placeholder page otherwise.
class AnnotationServer {
public:
    explicit AnnotationServer(ServerOptions options);
    ~AnnotationServer();

    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    // Binds; returns the bound port. Throws IoError when binding fails.
    int bind();
    // Blocks until stop().
    void serve();
    void stop();

    AnnotationStore& store();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace fpad
