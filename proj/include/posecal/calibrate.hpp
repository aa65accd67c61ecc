#pragma once

#include "posecal/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace posecal {

/// One detected board corner.
struct FramePoint {
    int corner_id = 0;
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

/// Identified 2D detections of the board corners in one image.
struct FrameObservation {
    std::vector<FramePoint> points;

    [[nodiscard]] int size() const { return static_cast<int>(points.size()); }
    [[nodiscard]] bool empty() const { return points.empty(); }
    [[nodiscard]] const FramePoint* find(int corner_id) const;
};

/// Throws std::invalid_argument on out-of-range or duplicated corner ids.
void validate_frame(const FrameObservation& frame, const BoardGeometry& board);

/// true = parameter held at its initial value.
using FixedMask = std::array<bool, kNumIntrinsics>;

struct CalibrationResult {
    IntrinsicParams intrinsics;
    ImageSize image_size;
    std::vector<BoardPose> poses;
    double residual_rms = 0.0;
    Vector9d variances = Vector9d::Zero();
    Vector9d iod = Vector9d::Zero();
    bool rank_deficient = false;
    bool converged = false;
    int iterations = 0;
};

/// Levenberg-Marquardt settings. Damping is Marquardt-style (scaled by the
/// normal-matrix diagonal).
struct LmOptions {
    int max_iterations = 100;
    double initial_lambda = 1e-3;
    double lambda_factor = 10.0;
    double min_relative_decrease = 1e-12;
    double min_step_norm = 1e-12;
    /// Estimate a single focal length shared by fx and fy.
    bool tie_focal = false;
};

// --- Linear initialization ----------------------------------------------------

/// Normalized DLT homography mapping board-plane points to image points,
/// scaled so H(2,2) = 1 when it is nonzero. Throws DegenerateConfiguration for
/// fewer than 4 points or collinear configurations.
[[nodiscard]] Eigen::Matrix3d estimate_homography(std::span<const Eigen::Vector2d> board_points,
                                                  std::span<const Eigen::Vector2d> image_points);

/// Homography from the board plane to pixels for one frame.
[[nodiscard]] Eigen::Matrix3d frame_homography(const FrameObservation& frame, const BoardGeometry& board);

/// Closed-form focal lengths and principal point from image-of-absolute-conic
/// constraints (zero skew). When the views cannot fix the principal point it is
/// held at the image center. Distortion is zero in the result.
[[nodiscard]] IntrinsicParams init_intrinsics(std::span<const Eigen::Matrix3d> homographies,
                                              ImageSize image_size);

/// Board pose from a board-to-pixel homography under intrinsics `c` (distortion
/// ignored). The rotation is projected onto SO(3); the sign is chosen so the
/// board lies in front of the camera.
[[nodiscard]] BoardPose pose_from_homography(const Eigen::Matrix3d& homography, const IntrinsicParams& c);

/// Pose of the board in one frame with the intrinsics held fixed: undistorted
/// homography followed by an extrinsics-only refinement.
[[nodiscard]] BoardPose estimate_pose(const FrameObservation& frame, const BoardGeometry& board,
                                      const IntrinsicParams& c);

// --- Nonlinear refinement -----------------------------------------------------

/// Minimize the summed squared reprojection error over the free intrinsics and
/// all poses. `fixed` parameters come back bit-identical. Throws
/// InsufficientData when there are fewer residuals than free unknowns. A run
/// that hits the iteration limit returns its best estimate with converged = false.
[[nodiscard]] CalibrationResult refine(std::span<const FrameObservation> frames, const BoardGeometry& board,
                                       ImageSize image_size, const IntrinsicParams& initial,
                                       std::span<const BoardPose> initial_poses, const FixedMask& fixed = {},
                                       const LmOptions& options = {});

struct CovarianceResult {
    Vector9d variances = Vector9d::Zero();
    bool rank_deficient = false;
};

/// Diagonal of the intrinsic block of (J^T J)^+ at the given estimate, with
/// unit image-point covariance. Fixed parameters report zero variance.
[[nodiscard]] CovarianceResult covariance(std::span<const FrameObservation> frames, const BoardGeometry& board,
                                          const IntrinsicParams& c, std::span<const BoardPose> poses,
                                          const FixedMask& fixed = {}, bool tie_focal = false);

/// sigma^2_i / |C_i|, or sigma^2_i where C_i == 0.
[[nodiscard]] Vector9d index_of_dispersion(const IntrinsicParams& c, const Vector9d& variances);

/// RMS over residual coordinates: sqrt(sum |r|^2 / (2 N)).
[[nodiscard]] double reprojection_rms(std::span<const FrameObservation> frames, const BoardGeometry& board,
                                      const IntrinsicParams& c, std::span<const BoardPose> poses);

// --- Pipelines ------------------------------------------------------------------

struct BootstrapResult {
    IntrinsicParams intrinsics;
    BoardPose pose;
    double focal_sigma = 0.0;
    /// Focal length poorly constrained (e.g. fronto-parallel board).
    bool low_confidence = false;
};

/// Single-frame focal-length estimate: principal point at the image center,
/// fx = fy, no distortion. Throws InsufficientData for fewer than 4 points.
[[nodiscard]] BootstrapResult bootstrap_single_frame(const FrameObservation& frame, const BoardGeometry& board,
                                                     ImageSize image_size);

/// Full calibration from scratch: homographies, closed-form init, refinement.
[[nodiscard]] CalibrationResult calibrate(std::span<const FrameObservation> frames, const BoardGeometry& board,
                                          ImageSize image_size);

/// Warm-started calibration. Frames beyond `known_poses.size()` get their
/// initial pose from estimate_pose() under `initial`.
[[nodiscard]] CalibrationResult calibrate_from(std::span<const FrameObservation> frames,
                                               const BoardGeometry& board, ImageSize image_size,
                                               const IntrinsicParams& initial,
                                               std::span<const BoardPose> known_poses);

}  // namespace posecal
