#pragma once

#include "posecal/calibrate.hpp"
#include "posecal/poses.hpp"

#include <array>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace posecal {

enum class Phase { AwaitingBootstrap, AwaitingInit1, AwaitingInit2, Refining, Converged };

enum class VerdictReason {
    Accepted,
    PoseNotReached,
    NotStill,
    TooFewPoints,
    /// The session has already converged; frames are ignored.
    SessionComplete,
};

[[nodiscard]] std::string_view to_string(Phase phase);
[[nodiscard]] std::string_view to_string(VerdictReason reason);
[[nodiscard]] std::string_view to_string(PoseGroup group);

struct FrameVerdict {
    bool accepted = false;
    VerdictReason reason = VerdictReason::PoseNotReached;
    /// Overlap of the target overlay and the observed board; nullopt when it
    /// could not be evaluated (no target, or the pose fit failed).
    std::optional<double> jaccard;
};

struct SessionConfig {
    ImageSize image_size{1280, 720};
    BoardGeometry board;
    double convergence_threshold = 0.1;
    double jaccard_min = 0.8;
    double stillness_px = 1.5;
    int init_min_points = 27;
    int min_points = 15;
    int map_stride = 4;
    PoseConfig poses;
};

/// Throws std::invalid_argument for out-of-range settings.
void validate(const SessionConfig& config);

/// Estimate and uncertainty after one keyframe.
struct KeyframeRecord {
    int keyframe = 0;
    PoseGroup group = PoseGroup::Init;
    std::optional<int> parameter;
    IntrinsicParams intrinsics;
    Vector9d variances = Vector9d::Zero();
    Vector9d iod = Vector9d::Zero();
};

struct SessionState {
    SessionConfig config;
    Phase phase = Phase::AwaitingBootstrap;
    std::vector<FrameObservation> keyframes;
    std::vector<PoseGroup> keyframe_groups;
    std::optional<TargetPose> current_target;
    /// Intrinsics used for overlays before an estimate exists.
    IntrinsicParams guess;
    std::optional<BootstrapResult> bootstrap;
    std::optional<CalibrationResult> estimate;
    std::array<bool, kNumIntrinsics> converged{};
    Vector9d previous_variance = Vector9d::Zero();
    VisitedMask visited;
    std::array<int, 4> pinhole_steps{};
    /// Accepted frames, including the bootstrap frame.
    int frames_captured = 0;
    FrameObservation last_frame;
    std::vector<KeyframeRecord> history;

    /// Intrinsics the overlays are rendered with.
    [[nodiscard]] const IntrinsicParams& current_intrinsics() const {
        return estimate ? estimate->intrinsics : guess;
    }
};

[[nodiscard]] SessionState start_session(const SessionConfig& config = {});

/// Points a frame needs: init_min_points while initializing, min_points afterwards.
[[nodiscard]] int min_points_required(int frames_so_far, bool is_init, const SessionConfig& config = {});

/// Every point of `current` re-detected in `previous` and mean motion below the limit.
[[nodiscard]] bool is_still(const FrameObservation& current, const FrameObservation& previous,
                            double max_mean_motion_px = 1.5);

/// Intersection over union of the target overlay and the projected board at `estimated_pose`.
[[nodiscard]] double jaccard_overlap(const TargetPose& target, const BoardPose& estimated_pose,
                                     const IntrinsicParams& c, const BoardGeometry& board = BoardGeometry());

/// True when the relative variance reduction 1 - new/old is below the threshold.
[[nodiscard]] bool convergence_step(int parameter, double variance_new, double variance_old, double threshold);

/// Apply the frame gates and, on acceptance, update the estimate and the next target.
[[nodiscard]] std::pair<SessionState, FrameVerdict> submit_frame(const SessionState& state,
                                                                 const FrameObservation& frame,
                                                                 const FrameObservation& frame_prev);

}  // namespace posecal
