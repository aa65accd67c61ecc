#pragma once

#include "posecal/calibrate.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <random>
#include <vector>

namespace posecal::testing {

inline constexpr double kDeg = 3.14159265358979323846 / 180.0;

inline IntrinsicParams webcam() {
    IntrinsicParams c;
    c.fx = 1000.0;
    c.fy = 1000.0;
    c.cx = 640.0;
    c.cy = 360.0;
    c.k1 = -0.1;
    c.k2 = 0.03;
    c.p1 = 0.001;
    c.p2 = 0.001;
    return c;
}

inline ImageSize hd() { return {1280, 720}; }

/// Board rotated by `rot` about its center, center placed at `center` in the camera frame.
inline BoardPose pose_at(const Eigen::Matrix3d& rot, const Eigen::Vector3d& center,
                         const BoardGeometry& board = BoardGeometry()) {
    return BoardPose::from_rotation_matrix(rot, center - rot * board.center());
}

inline Eigen::Matrix3d rot_xyz(double ax_deg, double ay_deg, double az_deg) {
    return (Eigen::AngleAxisd(az_deg * kDeg, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(ay_deg * kDeg, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(ax_deg * kDeg, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

inline FrameObservation render(const BoardPose& pose, const IntrinsicParams& c, ImageSize size, double noise,
                               std::mt19937_64& rng, const BoardGeometry& board = BoardGeometry()) {
    std::normal_distribution<double> n(0.0, 1.0);
    FrameObservation f;
    for (int id = 0; id < board.num_corners(); ++id) {
        const Eigen::Vector2d p = project(board.object_point(id), pose, c);
        if (p.x() < 0 || p.y() < 0 || p.x() >= size.width || p.y() >= size.height) {
            continue;
        }
        f.points.push_back({id, p + noise * Eigen::Vector2d(n(rng), n(rng))});
    }
    return f;
}

/// Ten well-spread views of a 9x6 board for the default webcam.
inline std::vector<BoardPose> spread_poses() {
    const double tilts[][3] = {{30, 0, 22.5}, {-30, 0, 22.5}, {0, 30, 22.5},  {0, -30, 22.5}, {20, 20, 10},
                               {-20, 20, -10}, {20, -20, 5}, {-20, -20, 15}, {45, 10, 22.5}, {0, 0, 0}};
    const double offsets[][2] = {{-2, -1}, {2, 1}, {-2, 1}, {2, -1}, {0, 0}, {-3, -1.5}, {3, 1.5}, {3, -1.5}, {-3, 1.5}, {0, 0}};
    std::vector<BoardPose> poses;
    for (int i = 0; i < 10; ++i) {
        poses.push_back(pose_at(rot_xyz(tilts[i][0], tilts[i][1], tilts[i][2]),
                                {offsets[i][0], offsets[i][1], 14.0 + (i % 3)}));
    }
    return poses;
}

}  // namespace posecal::testing
