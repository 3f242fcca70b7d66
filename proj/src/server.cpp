#include "fpad/server.hpp"

#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/image.hpp"
#include "fpad/log.hpp"

#include <httplib.h>
#include <json.hpp>

#include <mutex>

namespace fpad {

namespace {

using nlohmann::json;

constexpr std::string_view kPlaceholder = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>fpad annotator</title></head>
<body>
<h1>fpad annotation service</h1>
<p>No UI bundle is mounted. Start the server with <code>--ui DIR</code> to serve it here.</p>
<p>API: <code>/api/tasks</code>, <code>/api/images/{id}</code>, <code>/api/images/{id}/meta</code>,
<code>/api/tasks/{id}/boxes</code>, <code>/api/export</code>.</p>
</body></html>
)";

class BadRequest : public Error {
public:
    explicit BadRequest(const std::string& message) : Error("bad_request", message) {}
};

int status_for(const std::string& code) {
    if (code == "not_found") return 404;
    if (code == "conflict") return 409;
    if (code == "validation_error") return 422;
    if (code == "bad_request" || code == "invalid_cursor" || code == "parse_error") return 400;
    return 500;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& code, const std::string& message,
                const std::vector<std::string>& details = {}) {
    send_json(res, status_for(code), json{{"code", code}, {"message", message}, {"details", details}});
}

json parse_body(const httplib::Request& req) {
    try {
        json j = json::parse(req.body);
        if (!j.is_object()) throw BadRequest("request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw BadRequest(std::string("malformed JSON body: ") + e.what());
    }
}

std::uint64_t expected_revision(const json& body) {
    if (!body.contains("expected_revision") || !body["expected_revision"].is_number_unsigned())
        throw BadRequest("expected_revision (non-negative integer) is required");
    return body["expected_revision"].get<std::uint64_t>();
}

std::vector<BoundingBox> parse_boxes(const json& body) {
    if (!body.contains("boxes") || !body["boxes"].is_array()) throw BadRequest("boxes (array) is required");
    std::vector<BoundingBox> out;
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < body["boxes"].size(); ++i) {
        const json& b = body["boxes"][i];
        BoundingBox box;
        bool ok = b.is_object();
        for (const char* k : {"x", "y", "w", "h"})
            ok = ok && b.contains(k) && b[k].is_number_integer();
        if (!ok) {
            problems.push_back("box " + std::to_string(i) + ": x, y, w, h must be integers");
            continue;
        }
        box.x = b["x"].get<std::int64_t>();
        box.y = b["y"].get<std::int64_t>();
        box.w = b["w"].get<std::int64_t>();
        box.h = b["h"].get<std::int64_t>();
        const auto label = b.contains("label") && b["label"].is_string()
                               ? parse_finger(b["label"].get<std::string>())
                               : std::optional<Finger>{};
        if (!label || *label == Finger::NotApplicable) {
            problems.push_back("box " + std::to_string(i) + ": label must be index, middle, ring or little");
            continue;
        }
        box.label = *label;
        if (b.contains("annotator") && b["annotator"].is_string()) box.annotator = b["annotator"].get<std::string>();
        out.push_back(std::move(box));
    }
    if (!problems.empty()) throw ValidationError("malformed boxes", problems);
    return out;
}

}  // namespace

struct AnnotationServer::Impl {
    ServerOptions options;
    Manifest manifest;
    std::mutex manifest_mutex;
    std::unique_ptr<AnnotationStore> store;
    httplib::Server http;
    bool bound = false;

    // Runs `fn`, mapping domain errors to the JSON error shape.
    template <typename Fn>
    void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const ValidationError& e) {
            send_error(res, e.code(), e.what(), e.details());
        } catch (const Error& e) {
            send_error(res, e.code(), e.what());
        } catch (const std::exception& e) {
            send_error(res, "internal", e.what());
        }
    }

    const SampleRecord& record(const std::string& id) {
        const SampleRecord* r = manifest.find(id);
        if (!r) throw NotFoundError("no record " + id);
        return *r;
    }

    void routes() {
        http.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, json{{"status", "ok"}});
        });

        http.Get("/api/tasks", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                std::optional<TaskStatus> filter;
                if (req.has_param("status") && !req.get_param_value("status").empty()) {
                    filter = parse_task_status(req.get_param_value("status"));
                    if (!filter) throw BadRequest("unknown status '" + req.get_param_value("status") + "'");
                }
                std::optional<std::string> cursor;
                if (req.has_param("cursor")) cursor = req.get_param_value("cursor");
                std::size_t limit = 50;
                if (req.has_param("limit")) {
                    try {
                        limit = std::stoul(req.get_param_value("limit"));
                    } catch (const std::exception&) {
                        throw BadRequest("limit must be a positive integer");
                    }
                    if (limit == 0 || limit > 1000) throw BadRequest("limit must lie in [1, 1000]");
                }
                const TaskPage page = store->list_tasks(filter, cursor, limit);
                json tasks = json::array();
                for (const auto& t : page.tasks) tasks.push_back(json::parse(task_to_json(t)));
                send_json(res, 200,
                          json{{"tasks", tasks}, {"next_cursor", page.next_cursor ? json(*page.next_cursor) : json()}});
            });
        });

        http.Get(R"(/api/tasks/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 200, json::parse(task_to_json(store->get(req.matches[1])))); });
        });

        http.Put(R"(/api/tasks/([^/]+)/boxes)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req);
                const std::uint64_t rev = expected_revision(body);
                std::vector<BoundingBox> boxes = parse_boxes(body);
                const std::string annotator = body.value("annotator", std::string());
                const AnnotationTask t = store->submit_boxes(req.matches[1], std::move(boxes), rev, annotator);
                send_json(res, 200, json::parse(task_to_json(t)));
            });
        });

        http.Put(R"(/api/tasks/([^/]+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req);
                const std::uint64_t rev = expected_revision(body);
                if (!body.contains("status") || !body["status"].is_string()) throw BadRequest("status is required");
                const auto status = parse_task_status(body["status"].get<std::string>());
                if (!status) throw BadRequest("unknown status '" + body["status"].get<std::string>() + "'");
                send_json(res, 200, json::parse(task_to_json(store->set_status(req.matches[1], *status, rev))));
            });
        });

        http.Get(R"(/api/images/([^/]+)/meta)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                std::lock_guard lock(manifest_mutex);
                const SampleRecord& r = record(req.matches[1]);
                const ImageBuffer img = read_png(options.data_root / r.path);
                send_json(res, 200,
                          json{{"id", r.id},
                               {"width", img.width()},
                               {"height", img.height()},
                               {"channels", img.channels()},
                               {"species", std::string(to_string(r.species))},
                               {"sensor", r.sensor},
                               {"kind", std::string(to_string(r.kind))},
                               {"subject_id", r.subject_id}});
            });
        });

        http.Get(R"(/api/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                std::filesystem::path path;
                {
                    std::lock_guard lock(manifest_mutex);
                    path = options.data_root / record(req.matches[1]).path;
                }
                if (!std::filesystem::exists(path)) throw NotFoundError("image file missing for " + std::string(req.matches[1]));
                res.status = 200;
                res.set_content(read_file(path), "image/png");
            });
        });

        http.Post("/api/export", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                std::lock_guard lock(manifest_mutex);
                Manifest next = manifest;
                const ExportResult r = store->export_crops(next);
                save_manifest(next, options.manifest_path);
                manifest = std::move(next);
                send_json(res, 200,
                          json{{"tasks", r.tasks}, {"created", r.created}, {"updated", r.updated}, {"crops", r.crop_ids}});
            });
        });

        if (options.ui_dir) {
            if (!http.set_mount_point("/", options.ui_dir->string()))
                throw IoError("UI directory " + options.ui_dir->string() + " does not exist");
        } else {
            http.Get("/", [](const httplib::Request&, httplib::Response& res) {
                res.set_content(std::string(kPlaceholder), "text/html");
            });
        }
        http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (res.status == 404 && res.body.empty())
                send_error(res, "not_found", "no route for " + req.method + " " + req.path);
        });
    }
};

AnnotationServer::AnnotationServer(ServerOptions options) : impl_(std::make_unique<Impl>()) {
    impl_->options = std::move(options);
    if (impl_->options.annotations_path.empty())
        impl_->options.annotations_path = impl_->options.data_root / "annotations.jsonl";
    impl_->manifest = load_manifest(impl_->options.manifest_path);
    impl_->store = std::make_unique<AnnotationStore>(impl_->options.annotations_path, impl_->manifest,
                                                     impl_->options.data_root);
    impl_->routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind() {
    int port = impl_->options.port;
    if (port == 0) {
        port = impl_->http.bind_to_any_port(impl_->options.host);
        if (port < 0) throw IoError("cannot bind " + impl_->options.host);
    } else if (!impl_->http.bind_to_port(impl_->options.host, port)) {
        throw IoError("cannot bind " + impl_->options.host + ":" + std::to_string(port));
    }
    impl_->options.port = port;
    impl_->bound = true;
    log::info("serve.bound", {{"host", impl_->options.host}, {"port", std::to_string(port)},
                              {"tasks", std::to_string(impl_->store->size())}});
    return port;
}

void AnnotationServer::serve() {
    if (!impl_->bound) bind();
    impl_->http.listen_after_bind();
}

void AnnotationServer::stop() {
    if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

AnnotationStore& AnnotationServer::store() { return *impl_->store; }

}  // namespace fpad
