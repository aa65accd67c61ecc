#include "posecal/service.hpp"
#include "posecal/errors.hpp"

#include <httplib.h>

#include <stdexcept>

namespace posecal {

namespace {

ServiceResponse error(int status, const std::string& message) { return {status, Json{{"error", message}}}; }

double number_field(const Json& body, const char* key, double fallback) {
    if (!body.contains(key)) {
        return fallback;
    }
    const Json& v = body.at(key);
    if (!v.is_number()) {
        throw std::invalid_argument(std::string(key) + " must be a number");
    }
    return v.get<double>();
}

Json parse_body(const std::string& body) {
    if (body.empty()) {
        return Json::object();
    }
    Json j = Json::parse(body, nullptr, false);
    if (j.is_discarded()) {
        throw std::invalid_argument("body is not valid JSON");
    }
    return j;
}

}  // namespace

SessionRequest parse_session_request(const Json& body) {
    if (!body.is_object()) {
        throw std::invalid_argument("session config must be a JSON object");
    }
    SessionRequest r;
    if (body.contains("seed")) {
        const Json& seed = body.at("seed");
        if (!seed.is_number_unsigned()) {
            throw std::invalid_argument("seed must be a non-negative integer");
        }
        r.seed = seed.get<std::uint64_t>();
    }
    r.noise_sigma = number_field(body, "noise", r.noise_sigma);
    r.convergence_threshold = number_field(body, "threshold", r.convergence_threshold);
    r.deviation = number_field(body, "deviation", r.deviation);
    if (!(r.noise_sigma >= 0.0)) {
        throw std::invalid_argument("noise must be non-negative");
    }
    if (!(r.convergence_threshold > 0.0 && r.convergence_threshold <= 1.0)) {
        throw std::invalid_argument("threshold must lie in (0, 1]");
    }
    if (!(r.deviation >= 0.0 && r.deviation <= 1.0)) {
        throw std::invalid_argument("deviation must lie in [0, 1]");
    }
    return r;
}

GroundTruthCamera rig_camera(const SessionRequest& request) {
    return sample_camera(default_camera(), request.deviation, request.seed);
}

SessionConfig rig_session_config(const SessionRequest& request) {
    SessionConfig cfg;
    cfg.image_size = default_camera().image_size;
    cfg.convergence_threshold = request.convergence_threshold;
    return cfg;
}

FrameObservation rig_observation(const GroundTruthCamera& cam, const BoardPose& pose, const SessionRequest& request,
                                 std::uint64_t index) {
    try {
        return render_observation(pose, cam, request.noise_sigma, request.seed + index);
    } catch (const NoVisiblePlacement&) {
        return {};
    }
}

bool pose_in_front(const BoardPose& pose, const BoardGeometry& board) {
    for (const auto& corner : board.outline()) {
        if (!(pose.transform(corner).z() > 0.0)) {
            return false;
        }
    }
    return true;
}

std::shared_ptr<GuidanceService::Session> GuidanceService::find(const std::string& id) {
    std::lock_guard lock(registry_mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

Json GuidanceService::client_view(const std::string& id, const Session& s) {
    Json j = session_snapshot(s.state);
    j["id"] = id;
    j["image_size"] = {s.state.config.image_size.width, s.state.config.image_size.height};
    j["submissions"] = s.submissions;
    j["verdict"] = s.verdict ? verdict_to_json(*s.verdict) : Json();
    j["jaccard"] = s.verdict && s.verdict->jaccard ? Json(*s.verdict->jaccard) : Json();
    j["board_polygon"] = Json();
    if (s.board_pose) {
        try {
            j["board_polygon"] = polygon_to_json(project_outline(s.state.config.board, *s.board_pose,
                                                                 s.camera.intrinsics));
        } catch (const BehindCamera&) {
        }
    }
    // the hidden camera is revealed for scoring once the session is over
    j["ground_truth"] = s.state.phase == Phase::Converged
                            ? camera_to_json(s.camera.intrinsics, s.camera.image_size)
                            : Json();
    return j;
}

ServiceResponse GuidanceService::create_session(const std::string& body) {
    SessionRequest request;
    try {
        request = parse_session_request(parse_body(body));
    } catch (const std::invalid_argument& e) {
        return error(400, e.what());
    }
    auto session = std::make_shared<Session>();
    session->request = request;
    try {
        session->camera = rig_camera(request);
    } catch (const std::runtime_error& e) {
        return error(400, e.what());
    }
    session->state = start_session(rig_session_config(request));

    std::string id;
    {
        std::lock_guard lock(registry_mutex_);
        id = std::to_string(next_id_++);
        sessions_[id] = session;
    }
    std::lock_guard lock(session->mutex);
    Json view = client_view(id, *session);
    session->events.push_back({{"seq", 0}, {"snapshot", view}});
    return {201, view};
}

ServiceResponse GuidanceService::submit_pose(const std::string& id, const std::string& body) {
    const auto session = find(id);
    if (!session) {
        return error(404, "unknown session");
    }
    BoardPose pose;
    try {
        const Json j = parse_body(body);
        if (!j.is_object() || !j.contains("pose")) {
            throw std::invalid_argument("missing field 'pose'");
        }
        pose = pose_from_json(j.at("pose"));
    } catch (const std::invalid_argument& e) {
        return error(400, e.what());
    }
    if (!pose_in_front(pose)) {
        return error(422, "board pose is behind the camera");
    }

    std::lock_guard lock(session->mutex);
    Session& s = *session;
    const FrameObservation frame = rig_observation(s.camera, pose, s.request, s.submissions);
    // the virtual board is held still, so the previous detections equal the current ones
    auto [next, verdict] = submit_frame(s.state, frame, frame);
    s.state = std::move(next);
    s.verdict = verdict;
    s.board_pose = pose;
    ++s.submissions;
    Json view = client_view(id, s);
    s.events.push_back({{"seq", s.events.size()}, {"snapshot", view}});
    s.changed.notify_all();
    return {200, view};
}

ServiceResponse GuidanceService::snapshot(const std::string& id) {
    const auto session = find(id);
    if (!session) {
        return error(404, "unknown session");
    }
    std::lock_guard lock(session->mutex);
    return {200, client_view(id, *session)};
}

std::optional<std::vector<Json>> GuidanceService::events(const std::string& id, std::size_t from,
                                                         std::chrono::milliseconds wait) {
    const auto session = find(id);
    if (!session) {
        return std::nullopt;
    }
    std::unique_lock lock(session->mutex);
    session->changed.wait_for(lock, wait, [&] { return session->events.size() > from || stopped(); });
    std::vector<Json> out;
    for (std::size_t i = from; i < session->events.size(); ++i) {
        out.push_back(session->events[i]);
    }
    return out;
}

void GuidanceService::stop() {
    std::vector<std::shared_ptr<Session>> all;
    {
        std::lock_guard lock(registry_mutex_);
        stopped_ = true;
        for (const auto& [id, s] : sessions_) {
            all.push_back(s);
        }
    }
    for (const auto& s : all) {
        std::lock_guard lock(s->mutex);
        s->changed.notify_all();
    }
}

bool GuidanceService::stopped() const {
    std::lock_guard lock(registry_mutex_);
    return stopped_;
}

namespace {

void reply(httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
}

}  // namespace

void mount_routes(httplib::Server& server, GuidanceService& service) {
    server.Post("/v1/session", [&service](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.create_session(req.body));
    });
    server.Post(R"(/v1/session/([0-9]+)/board-pose)", [&service](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.submit_pose(req.matches[1], req.body));
    });
    server.Get(R"(/v1/session/([0-9]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.snapshot(req.matches[1]));
    });
    server.Get(R"(/v1/session/([0-9]+)/events)", [&service](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        std::size_t from = 0;
        try {
            from = req.has_param("from") ? std::stoul(req.get_param_value("from")) : 0;
        } catch (const std::exception&) {
            reply(res, error(400, "from must be a non-negative integer"));
            return;
        }
        const bool follow = !req.has_param("follow") || req.get_param_value("follow") != "0";
        if (!service.events(id, from, std::chrono::milliseconds(0))) {
            reply(res, error(404, "unknown session"));
            return;
        }
        auto next = std::make_shared<std::size_t>(from);
        res.set_chunked_content_provider(
            "text/event-stream", [&service, id, next, follow](std::size_t, httplib::DataSink& sink) {
                if (!sink.is_writable()) {
                    return false;
                }
                const auto batch = service.events(id, *next, std::chrono::milliseconds(follow ? 500 : 0));
                if (!batch || service.stopped()) {
                    return false;
                }
                for (const auto& e : *batch) {
                    const std::string msg = "id: " + std::to_string(e.at("seq").get<std::size_t>()) +
                                            "\nevent: snapshot\ndata: " + e.at("snapshot").dump() + "\n\n";
                    if (!sink.write(msg.data(), msg.size())) {
                        return false;
                    }
                    ++*next;
                }
                if (!follow) {
                    sink.done();
                }
                return true;
            });
    });
}

}  // namespace posecal
