#pragma once

#include "posecal/geometry.hpp"
#include "posecal/polygon.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace posecal {

enum class PoseGroup { Pinhole, Distortion, Init };

/// Group a parameter belongs to.
[[nodiscard]] inline PoseGroup group_of(int parameter) {
    return is_pinhole_param(parameter) ? PoseGroup::Pinhole : PoseGroup::Distortion;
}

struct TargetPose {
    BoardPose pose;
    PoseGroup group = PoseGroup::Init;
    std::optional<int> parameter;
    /// Projected outer board corners (pixels), in outline() order.
    Polygon overlay;
    /// Subdivision step actually used (pinhole targets only).
    int step = -1;
};

/// Cells of a DistortionMap grid excluded from further region searches.
struct VisitedMask {
    int cols = 0;
    int rows = 0;
    std::vector<bool> bits;

    VisitedMask() = default;
    VisitedMask(int cols_, int rows_)
        : cols(cols_), rows(rows_), bits(static_cast<std::size_t>(cols_) * rows_, false) {}

    [[nodiscard]] bool at(int col, int row) const { return bits[static_cast<std::size_t>(row) * cols + col]; }
    void set(int col, int row) { bits[static_cast<std::size_t>(row) * cols + col] = true; }
    [[nodiscard]] int count() const;
    [[nodiscard]] bool full() const { return count() == static_cast<int>(bits.size()); }
};

struct PoseConfig {
    double min_tilt_deg = -70.0;
    double max_tilt_deg = 70.0;
    double in_plane_rotation_deg = 22.5;
    /// Principal point targets move the board center by this fraction of the image size.
    double principal_shift_fraction = 0.05;
    /// Pinhole and init targets must fit inside the image shrunk by this fraction per side.
    double inside_margin_fraction = 0.05;
    double distortion_threshold = 0.8;
    double distortion_width_fraction = 0.33;
    double init_tilt_deg = 45.0;
    double parallel_tolerance_deg = 5.0;
    double axis_tolerance_deg = 2.0;
    double reflection_tolerance = 0.05;
    /// Steps tried before pinhole_target gives up on finding a non-singular pose.
    int max_step_skips = 64;
};

/// Binary subdivision of (0, 1): 1/4, 3/4, 1/8, 3/8, 5/8, 7/8, 1/16, ...
[[nodiscard]] double subdivision_fraction(int step);

/// Projection of the outer board corners.
[[nodiscard]] Polygon project_outline(const BoardGeometry& board, const BoardPose& pose, const IntrinsicParams& c);

struct SingularityReport {
    bool parallel_to_image_plane = false;
    bool axis_aligned = false;
    bool reflection_violation = false;
    /// Index into the prior poses of each reflection violation.
    std::vector<int> reflected_with;

    [[nodiscard]] bool any() const { return parallel_to_image_plane || axis_aligned || reflection_violation; }
};

/// Residual of the reflection relation between two board planes: the sine of
/// the angle between one vanishing-line direction and the mirror image of the
/// other. Returns nullopt when either plane is tilted less than `min_tilt_deg`
/// from fronto-parallel.
[[nodiscard]] std::optional<double> reflection_residual(const BoardPose& a, const BoardPose& b,
                                                        double min_tilt_deg = 0.0);

[[nodiscard]] SingularityReport check_singularities(const BoardPose& pose, std::span<const BoardPose> prior_poses,
                                                    const BoardGeometry& board = BoardGeometry(),
                                                    const PoseConfig& config = {});

/// Target for one of fx, fy, cx, cy. Steps whose pose is singular against
/// `prior_poses` are skipped; the step used is returned in TargetPose::step.
/// Throws NoVisiblePlacement if the board cannot be placed in view.
[[nodiscard]] TargetPose pinhole_target(int parameter, int step, const BoardGeometry& board,
                                        const IntrinsicParams& c, ImageSize image_size,
                                        std::span<const BoardPose> prior_poses = {},
                                        const PoseConfig& config = {});

struct DistortionTargetResult {
    TargetPose target;
    VisitedMask visited;
    /// Selected region bounding box in pixels: x0, y0, x1, y1 (exclusive).
    Eigen::Vector4i aabb = Eigen::Vector4i::Zero();
    /// Cells newly marked visited by this call.
    std::vector<std::array<int, 2>> marked;
};

/// Next distortion-measuring target. Throws MapExhausted when every cell is visited.
[[nodiscard]] DistortionTargetResult distortion_target(const DistortionMap& map, const VisitedMask& visited,
                                                       const BoardGeometry& board, const IntrinsicParams& c,
                                                       ImageSize image_size, const PoseConfig& config = {});

/// The initialization pair: a rolled 45 degree x-tilt and a fronto-parallel
/// view spanning the image width.
[[nodiscard]] std::array<TargetPose, 2> init_targets(const BoardGeometry& board, ImageSize image_size,
                                                     const IntrinsicParams& c, const PoseConfig& config = {});

/// Fraction of the image covered by a polygon.
[[nodiscard]] double image_coverage(const Polygon& poly, ImageSize image_size);

/// True if the sampled board outline projects inside the image.
[[nodiscard]] bool outline_inside_image(const BoardGeometry& board, const BoardPose& pose, const IntrinsicParams& c,
                                        ImageSize image_size, double margin_px = 0.0);

}  // namespace posecal
