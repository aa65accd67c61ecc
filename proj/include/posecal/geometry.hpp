#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <optional>
#include <string_view>
#include <vector>

namespace posecal {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Vector9d = Eigen::Matrix<double, 9, 1>;

inline constexpr int kNumIntrinsics = 9;
inline constexpr int kNumPoseParams = 6;

/// Index of each intrinsic in the canonical order [fx, fy, cx, cy, k1, k2, k3, p1, p2].
enum ParamIndex : int { kFx = 0, kFy, kCx, kCy, kK1, kK2, kK3, kP1, kP2 };

inline constexpr std::array<std::string_view, kNumIntrinsics> kParamNames = {
    "fx", "fy", "cx", "cy", "k1", "k2", "k3", "p1", "p2"};

/// Pinhole parameters occupy indices [0, 4); distortion [4, 9).
inline constexpr bool is_pinhole_param(int index) { return index >= kFx && index <= kCy; }

struct ImageSize {
    int width = 0;
    int height = 0;

    friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Camera intrinsics with zero skew, Brown-Conrady radial (k1..k3) and
/// tangential (p1, p2) distortion.
struct IntrinsicParams {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    double k1 = 0.0;
    double k2 = 0.0;
    double k3 = 0.0;
    double p1 = 0.0;
    double p2 = 0.0;

    [[nodiscard]] Vector9d to_vector() const;
    [[nodiscard]] static IntrinsicParams from_vector(const Vector9d& v);

    [[nodiscard]] double operator[](int index) const;
    double& operator[](int index);

    [[nodiscard]] Eigen::Matrix3d camera_matrix() const;
    [[nodiscard]] bool has_distortion() const;
    /// Same focal lengths and principal point, all distortion coefficients zeroed.
    [[nodiscard]] IntrinsicParams pinhole_only() const;

    friend bool operator==(const IntrinsicParams&, const IntrinsicParams&) = default;
};

/// Board-to-camera transform. The rotation is stored as an axis-angle vector
/// (direction = axis, norm = angle in radians).
struct BoardPose {
    Eigen::Vector3d rotation = Eigen::Vector3d::Zero();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    [[nodiscard]] Eigen::Matrix3d rotation_matrix() const;
    [[nodiscard]] Eigen::Vector3d transform(const Eigen::Vector3d& point) const;
    [[nodiscard]] Vector6d to_vector() const;
    [[nodiscard]] static BoardPose from_vector(const Vector6d& v);
    [[nodiscard]] static BoardPose from_rotation_matrix(const Eigen::Matrix3d& rotation,
                                                        const Eigen::Vector3d& translation);
};

/// Chessboard-style planar target. Interior corners are the object points;
/// the board frame origin is the outer top-left corner, x to the right, y down,
/// all points at Z = 0.
class BoardGeometry {
  public:
    BoardGeometry() : BoardGeometry(9, 6, 1.0) {}
    BoardGeometry(int squares_x, int squares_y, double square_length);

    [[nodiscard]] int squares_x() const { return squares_x_; }
    [[nodiscard]] int squares_y() const { return squares_y_; }
    [[nodiscard]] double square_length() const { return square_length_; }
    [[nodiscard]] double width() const { return squares_x_ * square_length_; }
    [[nodiscard]] double height() const { return squares_y_ * square_length_; }
    [[nodiscard]] Eigen::Vector3d center() const { return {0.5 * width(), 0.5 * height(), 0.0}; }

    [[nodiscard]] int num_corners() const { return static_cast<int>(object_points_.size()); }
    [[nodiscard]] const std::vector<Eigen::Vector3d>& object_points() const { return object_points_; }
    [[nodiscard]] const Eigen::Vector3d& object_point(int corner_id) const;

    /// Outer board corners, clockwise in the image starting top-left.
    [[nodiscard]] std::array<Eigen::Vector3d, 4> outline() const;

  private:
    int squares_x_;
    int squares_y_;
    double square_length_;
    std::vector<Eigen::Vector3d> object_points_;
};

/// Apply radial + tangential distortion to a normalized image point.
[[nodiscard]] Eigen::Vector2d distort(const Eigen::Vector2d& p, const IntrinsicParams& c);

/// Jacobian of distort() w.r.t. the normalized point (2x2).
[[nodiscard]] Eigen::Matrix2d distort_point_jacobian(const Eigen::Vector2d& p, const IntrinsicParams& c);

/// Invert distort() by Newton iteration. Returns the input unchanged when
/// distortion is zero.
[[nodiscard]] Eigen::Vector2d undistort(const Eigen::Vector2d& distorted, const IntrinsicParams& c);

/// Pixel -> normalized, undistorted ray coordinates.
[[nodiscard]] Eigen::Vector2d pixel_to_normalized(const Eigen::Vector2d& pixel, const IntrinsicParams& c);

/// pixel_to_normalized() restricted to pixels the model maps one-to-one:
/// nullopt when the inverse fails or lies past a fold of the radial profile.
[[nodiscard]] std::optional<Eigen::Vector2d> try_pixel_to_normalized(const Eigen::Vector2d& pixel,
                                                                     const IntrinsicParams& c);

/// Normalized (undistorted) coordinates -> pixel.
[[nodiscard]] Eigen::Vector2d normalized_to_pixel(const Eigen::Vector2d& p, const IntrinsicParams& c);

/// Project a board point into the image. Throws BehindCamera for Z_c <= 0.
[[nodiscard]] Eigen::Vector2d project(const Eigen::Vector3d& point, const BoardPose& pose,
                                      const IntrinsicParams& c);

/// Columns: the 9 intrinsics in canonical order, then the 3 axis-angle and 3
/// translation components of the pose.
using ProjectionJacobian = Eigen::Matrix<double, 2, kNumIntrinsics + kNumPoseParams>;

[[nodiscard]] ProjectionJacobian projection_jacobian(const Eigen::Vector3d& point,
                                                     const BoardPose& pose,
                                                     const IntrinsicParams& c);

/// project() and projection_jacobian() in one pass.
Eigen::Vector2d project_with_jacobian(const Eigen::Vector3d& point, const BoardPose& pose,
                                      const IntrinsicParams& c, ProjectionJacobian* jacobian);

/// d(R(v) * p) / dv for the axis-angle vector v.
[[nodiscard]] Eigen::Matrix3d rotate_point_jacobian(const Eigen::Vector3d& rotation,
                                                    const Eigen::Vector3d& point);

/// Per-pixel magnitude (in pixels) of the displacement the distortion model
/// applies relative to the ideal pinhole projection of the same ray. Sampled on
/// a grid of `stride`-sized cells; each cell holds the value at its center pixel.
struct DistortionMap {
    int width = 0;
    int height = 0;
    int stride = 1;
    int cols = 0;
    int rows = 0;
    std::vector<double> values;

    [[nodiscard]] double at(int col, int row) const { return values[static_cast<std::size_t>(row) * cols + col]; }
    [[nodiscard]] double max_value() const;
    /// Pixel rectangle [x0, x1) x [y0, y1) covered by a cell, clipped to the image.
    [[nodiscard]] Eigen::Vector4i cell_rect(int col, int row) const;
};

[[nodiscard]] DistortionMap distortion_magnitude_map(const IntrinsicParams& c, int width, int height,
                                                     int stride = 4);

}  // namespace posecal
