#include "posecal/geometry.hpp"

#include "posecal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace posecal {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return m;
}

}  // namespace

// --- IntrinsicParams ---------------------------------------------------------

Vector9d IntrinsicParams::to_vector() const {
    Vector9d v;
    v << fx, fy, cx, cy, k1, k2, k3, p1, p2;
    return v;
}

IntrinsicParams IntrinsicParams::from_vector(const Vector9d& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
}

double IntrinsicParams::operator[](int index) const {
    return const_cast<IntrinsicParams&>(*this)[index];
}

double& IntrinsicParams::operator[](int index) {
    switch (index) {
        case kFx: return fx;
        case kFy: return fy;
        case kCx: return cx;
        case kCy: return cy;
        case kK1: return k1;
        case kK2: return k2;
        case kK3: return k3;
        case kP1: return p1;
        case kP2: return p2;
        default: throw std::out_of_range("intrinsic index out of range");
    }
}

Eigen::Matrix3d IntrinsicParams::camera_matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx,
         0.0, fy, cy,
         0.0, 0.0, 1.0;
    return k;
}

bool IntrinsicParams::has_distortion() const {
    return k1 != 0.0 || k2 != 0.0 || k3 != 0.0 || p1 != 0.0 || p2 != 0.0;
}

IntrinsicParams IntrinsicParams::pinhole_only() const {
    return {fx, fy, cx, cy, 0.0, 0.0, 0.0, 0.0, 0.0};
}

// --- BoardPose ---------------------------------------------------------------

Eigen::Matrix3d BoardPose::rotation_matrix() const {
    const double angle = rotation.norm();
    if (angle == 0.0) {
        return Eigen::Matrix3d::Identity();
    }
    return Eigen::AngleAxisd(angle, rotation / angle).toRotationMatrix();
}

Eigen::Vector3d BoardPose::transform(const Eigen::Vector3d& point) const {
    return rotation_matrix() * point + translation;
}

Vector6d BoardPose::to_vector() const {
    Vector6d v;
    v << rotation, translation;
    return v;
}

BoardPose BoardPose::from_vector(const Vector6d& v) {
    return {v.head<3>(), v.tail<3>()};
}

BoardPose BoardPose::from_rotation_matrix(const Eigen::Matrix3d& rotation,
                                          const Eigen::Vector3d& translation) {
    const Eigen::AngleAxisd aa(rotation);
    return {aa.axis() * aa.angle(), translation};
}

// --- BoardGeometry -----------------------------------------------------------

BoardGeometry::BoardGeometry(int squares_x, int squares_y, double square_length)
    : squares_x_(squares_x), squares_y_(squares_y), square_length_(square_length) {
    if (squares_x < 2 || squares_y < 2 || !(square_length > 0.0)) {
        throw std::invalid_argument("board needs at least 2x2 squares and a positive square length");
    }
    object_points_.reserve(static_cast<std::size_t>((squares_x - 1) * (squares_y - 1)));
    for (int row = 1; row < squares_y; ++row) {
        for (int col = 1; col < squares_x; ++col) {
            object_points_.emplace_back(col * square_length, row * square_length, 0.0);
        }
    }
}

const Eigen::Vector3d& BoardGeometry::object_point(int corner_id) const {
    if (corner_id < 0 || corner_id >= num_corners()) {
        throw std::out_of_range("corner id out of range");
    }
    return object_points_[static_cast<std::size_t>(corner_id)];
}

std::array<Eigen::Vector3d, 4> BoardGeometry::outline() const {
    return {Eigen::Vector3d(0.0, 0.0, 0.0), Eigen::Vector3d(width(), 0.0, 0.0),
            Eigen::Vector3d(width(), height(), 0.0), Eigen::Vector3d(0.0, height(), 0.0)};
}

// --- Distortion --------------------------------------------------------------

Eigen::Vector2d distort(const Eigen::Vector2d& p, const IntrinsicParams& c) {
    const double x = p.x();
    const double y = p.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
    return {x * radial + 2.0 * c.p1 * x * y + c.p2 * (r2 + 2.0 * x * x),
            y * radial + c.p1 * (r2 + 2.0 * y * y) + 2.0 * c.p2 * x * y};
}

Eigen::Matrix2d distort_point_jacobian(const Eigen::Vector2d& p, const IntrinsicParams& c) {
    const double x = p.x();
    const double y = p.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
    // d(radial)/d(r2)
    const double dradial = c.k1 + r2 * (2.0 * c.k2 + 3.0 * r2 * c.k3);
    Eigen::Matrix2d j;
    j(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * c.p1 * y + 6.0 * c.p2 * x;
    j(0, 1) = 2.0 * x * y * dradial + 2.0 * c.p1 * x + 2.0 * c.p2 * y;
    j(1, 0) = 2.0 * x * y * dradial + 2.0 * c.p1 * x + 2.0 * c.p2 * y;
    j(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * c.p1 * y + 2.0 * c.p2 * x;
    return j;
}

Eigen::Vector2d undistort(const Eigen::Vector2d& distorted, const IntrinsicParams& c) {
    if (!c.has_distortion()) {
        return distorted;
    }
    Eigen::Vector2d p = distorted;
    for (int iter = 0; iter < 50; ++iter) {
        const Eigen::Vector2d residual = distort(p, c) - distorted;
        if (residual.squaredNorm() < 1e-30) {
            break;
        }
        const Eigen::Matrix2d j = distort_point_jacobian(p, c);
        const Eigen::Vector2d step = j.partialPivLu().solve(residual);
        if (!step.allFinite()) {
            break;
        }
        p -= step;
    }
    return p;
}

Eigen::Vector2d pixel_to_normalized(const Eigen::Vector2d& pixel, const IntrinsicParams& c) {
    const Eigen::Vector2d distorted((pixel.x() - c.cx) / c.fx, (pixel.y() - c.cy) / c.fy);
    return undistort(distorted, c);
}

std::optional<Eigen::Vector2d> try_pixel_to_normalized(const Eigen::Vector2d& pixel, const IntrinsicParams& c) {
    const Eigen::Vector2d d((pixel.x() - c.cx) / c.fx, (pixel.y() - c.cy) / c.fy);
    const Eigen::Vector2d p = undistort(d, c);
    if (!p.allFinite() || (distort(p, c) - d).norm() > 1e-9) {
        return std::nullopt;
    }
    const double r2 = p.squaredNorm();
    const double slope = 1.0 + r2 * (3.0 * c.k1 + r2 * (5.0 * c.k2 + r2 * 7.0 * c.k3));
    if (!(slope > 0.0)) {
        return std::nullopt;
    }
    return p;
}

Eigen::Vector2d normalized_to_pixel(const Eigen::Vector2d& p, const IntrinsicParams& c) {
    const Eigen::Vector2d d = distort(p, c);
    return {c.fx * d.x() + c.cx, c.fy * d.y() + c.cy};
}

// --- Projection --------------------------------------------------------------

Eigen::Matrix3d rotate_point_jacobian(const Eigen::Vector3d& rotation, const Eigen::Vector3d& point) {
    const double theta2 = rotation.squaredNorm();
    if (theta2 < 1e-20) {
        return -skew(point);
    }
    // d(R p)/dv = -R [p]x (v v^T + (R^T - I) [v]x) / |v|^2
    const BoardPose pose{rotation, Eigen::Vector3d::Zero()};
    const Eigen::Matrix3d r = pose.rotation_matrix();
    return -r * skew(point) *
           (rotation * rotation.transpose() + (r.transpose() - Eigen::Matrix3d::Identity()) * skew(rotation)) /
           theta2;
}

Eigen::Vector2d project(const Eigen::Vector3d& point, const BoardPose& pose, const IntrinsicParams& c) {
    const Eigen::Vector3d pc = pose.transform(point);
    if (!(pc.z() > 0.0)) {
        throw BehindCamera("point projects with non-positive depth");
    }
    return normalized_to_pixel(pc.head<2>() / pc.z(), c);
}

Eigen::Vector2d project_with_jacobian(const Eigen::Vector3d& point, const BoardPose& pose,
                                      const IntrinsicParams& c, ProjectionJacobian* jacobian) {
    const Eigen::Vector3d pc = pose.transform(point);
    if (!(pc.z() > 0.0)) {
        throw BehindCamera("point projects with non-positive depth");
    }
    const double inv_z = 1.0 / pc.z();
    const double x = pc.x() * inv_z;
    const double y = pc.y() * inv_z;
    const Eigen::Vector2d d = distort({x, y}, c);
    const Eigen::Vector2d pixel(c.fx * d.x() + c.cx, c.fy * d.y() + c.cy);
    if (jacobian == nullptr) {
        return pixel;
    }

    auto& j = *jacobian;
    j.setZero();
    const double r2 = x * x + y * y;
    const double r4 = r2 * r2;
    const double r6 = r4 * r2;

    j(0, kFx) = d.x();
    j(1, kFy) = d.y();
    j(0, kCx) = 1.0;
    j(1, kCy) = 1.0;

    j(0, kK1) = c.fx * x * r2;
    j(0, kK2) = c.fx * x * r4;
    j(0, kK3) = c.fx * x * r6;
    j(0, kP1) = c.fx * 2.0 * x * y;
    j(0, kP2) = c.fx * (r2 + 2.0 * x * x);

    j(1, kK1) = c.fy * y * r2;
    j(1, kK2) = c.fy * y * r4;
    j(1, kK3) = c.fy * y * r6;
    j(1, kP1) = c.fy * (r2 + 2.0 * y * y);
    j(1, kP2) = c.fy * 2.0 * x * y;

    const Eigen::Matrix2d focal = Eigen::Vector2d(c.fx, c.fy).asDiagonal();
    Eigen::Matrix<double, 2, 3> dnorm_dpc;
    dnorm_dpc << inv_z, 0.0, -x * inv_z,
                 0.0, inv_z, -y * inv_z;
    const Eigen::Matrix<double, 2, 3> dpix_dpc = focal * distort_point_jacobian({x, y}, c) * dnorm_dpc;

    j.block<2, 3>(0, kNumIntrinsics) = dpix_dpc * rotate_point_jacobian(pose.rotation, point);
    j.block<2, 3>(0, kNumIntrinsics + 3) = dpix_dpc;
    return pixel;
}

ProjectionJacobian projection_jacobian(const Eigen::Vector3d& point, const BoardPose& pose,
                                       const IntrinsicParams& c) {
    ProjectionJacobian j;
    project_with_jacobian(point, pose, c, &j);
    return j;
}

// --- Distortion map ----------------------------------------------------------

double DistortionMap::max_value() const {
    return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

Eigen::Vector4i DistortionMap::cell_rect(int col, int row) const {
    return {col * stride, row * stride, std::min((col + 1) * stride, width),
            std::min((row + 1) * stride, height)};
}

DistortionMap distortion_magnitude_map(const IntrinsicParams& c, int width, int height, int stride) {
    if (!(c.fx > 0.0) || !(c.fy > 0.0)) {
        throw std::invalid_argument("distortion map needs positive focal lengths");
    }
    if (width <= 0 || height <= 0 || stride <= 0) {
        throw std::invalid_argument("distortion map needs a positive size and stride");
    }
    DistortionMap map;
    map.width = width;
    map.height = height;
    map.stride = stride;
    map.cols = (width + stride - 1) / stride;
    map.rows = (height + stride - 1) / stride;
    map.values.resize(static_cast<std::size_t>(map.cols) * map.rows);
    for (int row = 0; row < map.rows; ++row) {
        for (int col = 0; col < map.cols; ++col) {
            const Eigen::Vector4i rect = map.cell_rect(col, row);
            // center pixel of the cell, pixel centers at integer coordinates
            const double u = 0.5 * (rect[0] + rect[2] - 1);
            const double v = 0.5 * (rect[1] + rect[3] - 1);
            const Eigen::Vector2d ray((u - c.cx) / c.fx, (v - c.cy) / c.fy);
            const Eigen::Vector2d shift = distort(ray, c) - ray;
            map.values[static_cast<std::size_t>(row) * map.cols + col] =
                std::hypot(c.fx * shift.x(), c.fy * shift.y());
        }
    }
    return map;
}

}  // namespace posecal
