#pragma once

#include "posecal/calibrate.hpp"
#include "posecal/session.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace posecal {

struct GroundTruthCamera {
    IntrinsicParams intrinsics;
    ImageSize image_size{1280, 720};
};

/// Experiment default: a webcam-like 1280x720 camera.
[[nodiscard]] GroundTruthCamera default_camera();

/// C ~ N(C_real, diag(deviation * |C_real|)); redrawn (at most 100 times) while a
/// focal length is non-positive or the principal point leaves the image.
[[nodiscard]] GroundTruthCamera sample_camera(const GroundTruthCamera& real, double deviation, std::uint64_t seed);

/// Project every corner, keep those inside the image, add N(0, noise_sigma^2)
/// per coordinate. Throws NoVisiblePlacement when no corner is visible.
[[nodiscard]] FrameObservation render_observation(const BoardPose& pose, const GroundTruthCamera& cam,
                                                  double noise_sigma, std::uint64_t seed,
                                                  const BoardGeometry& board = BoardGeometry());

struct TestSet {
    std::vector<BoardPose> poses;
    std::vector<FrameObservation> frames;
};

struct TestSetConfig {
    int count = 50;
    double min_tilt_deg = -60.0;
    double max_tilt_deg = 60.0;
    /// Board distance range in board widths.
    double min_distance = 1.5;
    double max_distance = 4.0;
    int min_visible = 20;
};

/// Stratified held-out views: tilt and distance strata are permuted across
/// frames and board centers cycle through the four image quadrants.
[[nodiscard]] TestSet make_test_set(const GroundTruthCamera& cam, double noise_sigma, std::uint64_t seed,
                                    const TestSetConfig& config = {}, const BoardGeometry& board = BoardGeometry());

struct EstimationError {
    double rms = 0.0;
    int failures = 0;
};

/// RMS reprojection error per coordinate over the test set, each frame's pose
/// re-fit with the intrinsics held at `c`. Frames whose pose fit fails are
/// skipped and counted. Throws InsufficientData if no frame can be used.
[[nodiscard]] EstimationError estimation_error(const IntrinsicParams& c, const TestSet& test,
                                               const BoardGeometry& board = BoardGeometry());

/// Board pose at which the true camera reproduces the target overlay as drawn
/// under the session's current intrinsics: what a user matching the overlay
/// on screen ends up holding.
[[nodiscard]] BoardPose overlay_matching_pose(const TargetPose& target, const IntrinsicParams& shown_with,
                                             const GroundTruthCamera& cam,
                                             const BoardGeometry& board = BoardGeometry());

enum class Actor {
    /// Matches the on-screen overlay.
    MatchOverlay,
    /// Places the board at the target's pose in the world.
    ExactPose,
};

struct GuidedRunOptions {
    Actor actor = Actor::MatchOverlay;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
    /// Keyframe budget after which the run stops unconverged.
    int max_keyframes = 60;
    /// Rejected renders of the same target tolerated before giving up.
    int max_retries = 20;
};

struct GuidedRun {
    SessionState state;
    /// Frames in submission order with their verdicts.
    std::vector<FrameObservation> submitted;
    std::vector<FrameVerdict> verdicts;
    bool converged = false;
};

/// Drive a session with an actor that holds the board exactly at each target.
[[nodiscard]] GuidedRun run_guided_session(const GroundTruthCamera& cam, const SessionConfig& config,
                                           const GuidedRunOptions& options);

enum class Layout { KFirst, DistFirst };

struct CorrelationConfig {
    int cameras = 20;
    Layout layout = Layout::KFirst;
    double deviation = 0.1;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
    int first_block = 8;
    int second_block = 10;
};

struct CorrelationRow {
    int camera = 0;
    /// 1-based frame index; rows start at 2 (the first frame with an estimate).
    int frame = 0;
    IntrinsicParams intrinsics;
    Vector9d sigma = Vector9d::Zero();
    Vector9d iod = Vector9d::Zero();
};

struct CorrelationTable {
    std::vector<CorrelationRow> rows;
    /// mean[k] and spread[k] over cameras for frame index k + 2.
    std::vector<Vector9d> mean_sigma;
    std::vector<Vector9d> spread_sigma;
    int failed_cameras = 0;
};

[[nodiscard]] CorrelationTable run_correlation_experiment(const GroundTruthCamera& real, const CorrelationConfig& config);

struct CompactResult {
    /// Indices into the input sequence, in selection order.
    std::vector<int> selected;
    /// Test-set error after each selection step; the first entry is the init pair.
    std::vector<double> trace;
    CalibrationResult calibration;
};

/// Greedy key-frame selection against a test set. The first two frames are the
/// initialization pair and are always kept.
[[nodiscard]] CompactResult greedy_compact(const std::vector<FrameObservation>& sequence, const TestSet& test,
                                           ImageSize image_size, const BoardGeometry& board = BoardGeometry());

}  // namespace posecal
