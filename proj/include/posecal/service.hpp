#pragma once

#include "posecal/serialize.hpp"
#include "posecal/synth.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace posecal {

/// Body of POST /v1/session. Every field is optional.
struct SessionRequest {
    std::uint64_t seed = 0;
    double noise_sigma = 1.0;
    double convergence_threshold = 0.1;
    /// Spread of the hidden camera around the default camera.
    double deviation = 0.1;
};

/// Throws std::invalid_argument for unknown types or out-of-range values.
[[nodiscard]] SessionRequest parse_session_request(const Json& body);

/// Hidden camera of a session.
[[nodiscard]] GroundTruthCamera rig_camera(const SessionRequest& request);

[[nodiscard]] SessionConfig rig_session_config(const SessionRequest& request);

/// Observation of the virtual board for submission `index`. A board entirely
/// out of view yields an empty frame.
[[nodiscard]] FrameObservation rig_observation(const GroundTruthCamera& cam, const BoardPose& pose,
                                               const SessionRequest& request, std::uint64_t index);

/// True if every board corner lies in front of the camera.
[[nodiscard]] bool pose_in_front(const BoardPose& pose, const BoardGeometry& board = BoardGeometry());

struct ServiceResponse {
    int status = 200;
    Json body;
};

/// Session registry and virtual rigs behind the HTTP routes. Thread-safe;
/// requests on one session are serialized.
class GuidanceService {
  public:
    GuidanceService() = default;
    GuidanceService(const GuidanceService&) = delete;
    GuidanceService& operator=(const GuidanceService&) = delete;

    ServiceResponse create_session(const std::string& body);
    ServiceResponse submit_pose(const std::string& id, const std::string& body);
    ServiceResponse snapshot(const std::string& id);

    /// Events with sequence number >= `from`, waiting up to `wait` for the
    /// first one. nullopt for an unknown session.
    std::optional<std::vector<Json>> events(const std::string& id, std::size_t from,
                                            std::chrono::milliseconds wait);

    /// Wake and release every waiting event reader.
    void stop();
    [[nodiscard]] bool stopped() const;

  private:
    struct Session {
        std::mutex mutex;
        std::condition_variable changed;
        SessionRequest request;
        GroundTruthCamera camera;
        SessionState state;
        std::optional<BoardPose> board_pose;
        std::optional<FrameVerdict> verdict;
        std::uint64_t submissions = 0;
        std::vector<Json> events;
    };

    std::shared_ptr<Session> find(const std::string& id);
    static Json client_view(const std::string& id, const Session& s);

    mutable std::mutex registry_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_id_ = 1;
    bool stopped_ = false;
};

/// Register the /v1 routes, including the server-sent event stream
/// GET /v1/session/{id}/events?from=N[&follow=0].
void mount_routes(httplib::Server& server, GuidanceService& service);

}  // namespace posecal
