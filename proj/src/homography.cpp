#include "posecal/calibrate.hpp"
#include "posecal/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>

namespace posecal {

namespace {

// Isotropic (Hartley) normalization: centroid to origin, mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(std::span<const Eigen::Vector2d> points) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : points) {
        mean += p;
    }
    mean /= static_cast<double>(points.size());
    double dist = 0.0;
    for (const auto& p : points) {
        dist += (p - mean).norm();
    }
    dist /= static_cast<double>(points.size());
    const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
    Eigen::Matrix3d t;
    t << s, 0.0, -s * mean.x(),
         0.0, s, -s * mean.y(),
         0.0, 0.0, 1.0;
    return t;
}

bool collinear(std::span<const Eigen::Vector2d> points) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : points) {
        mean += p;
    }
    mean /= static_cast<double>(points.size());
    Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
    for (const auto& p : points) {
        scatter += (p - mean) * (p - mean).transpose();
    }
    const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(scatter).eigenvalues();
    return !(ev[1] > 0.0) || ev[0] <= 1e-12 * ev[1];
}

// Row v_ij of the IAC constraint system for zero skew; unknowns
// b = [B11, B22, B13, B23, B33].
Eigen::Matrix<double, 1, 5> iac_row(const Eigen::Matrix3d& h, int i, int j) {
    const Eigen::Vector3d a = h.col(i);
    const Eigen::Vector3d b = h.col(j);
    Eigen::Matrix<double, 1, 5> v;
    v << a[0] * b[0], a[1] * b[1], a[2] * b[0] + a[0] * b[2], a[2] * b[1] + a[1] * b[2], a[2] * b[2];
    return v;
}

constexpr double kRankTolerance = 1e-9;

}  // namespace

Eigen::Matrix3d estimate_homography(std::span<const Eigen::Vector2d> board_points,
                                    std::span<const Eigen::Vector2d> image_points) {
    if (board_points.size() != image_points.size()) {
        throw std::invalid_argument("homography: point lists differ in length");
    }
    const auto n = static_cast<int>(board_points.size());
    if (n < 4) {
        throw DegenerateConfiguration("homography needs at least 4 correspondences");
    }
    if (collinear(board_points) || collinear(image_points)) {
        throw DegenerateConfiguration("homography correspondences are collinear");
    }

    const Eigen::Matrix3d tb = normalizing_transform(board_points);
    const Eigen::Matrix3d ti = normalizing_transform(image_points);

    Eigen::MatrixXd a(2 * n, 9);
    for (int k = 0; k < n; ++k) {
        const Eigen::Vector3d p = tb * board_points[static_cast<std::size_t>(k)].homogeneous();
        const Eigen::Vector3d q = ti * image_points[static_cast<std::size_t>(k)].homogeneous();
        const double x = p.x() / p.z();
        const double y = p.y() / p.z();
        const double u = q.x() / q.z();
        const double v = q.y() / q.z();
        a.row(2 * k) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
        a.row(2 * k + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    // the solution is unique only if the null space is one-dimensional
    if (sv.size() >= 8 && sv[7] <= kRankTolerance * sv[0]) {
        throw DegenerateConfiguration("homography system is rank deficient");
    }
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];

    Eigen::Matrix3d result = ti.inverse() * hn * tb;
    if (std::abs(result(2, 2)) > 1e-300) {
        result /= result(2, 2);
    }
    return result;
}

Eigen::Matrix3d frame_homography(const FrameObservation& frame, const BoardGeometry& board) {
    std::vector<Eigen::Vector2d> src;
    std::vector<Eigen::Vector2d> dst;
    src.reserve(frame.points.size());
    dst.reserve(frame.points.size());
    for (const auto& pt : frame.points) {
        src.push_back(board.object_point(pt.corner_id).head<2>());
        dst.push_back(pt.pixel);
    }
    return estimate_homography(src, dst);
}

IntrinsicParams init_intrinsics(std::span<const Eigen::Matrix3d> homographies, ImageSize image_size) {
    if (homographies.size() < 2) {
        throw InsufficientData("intrinsic initialization needs at least two views");
    }
    if (image_size.width <= 0 || image_size.height <= 0) {
        throw std::invalid_argument("intrinsic initialization needs the image size");
    }

    // Work in a frame centered on the image with unit-order pixel scale.
    const double scale = 1.0 / std::max(image_size.width, image_size.height);
    const Eigen::Vector2d center(0.5 * image_size.width, 0.5 * image_size.height);
    Eigen::Matrix3d norm;
    norm << scale, 0.0, -scale * center.x(),
            0.0, scale, -scale * center.y(),
            0.0, 0.0, 1.0;

    std::vector<Eigen::Matrix3d> hs;
    hs.reserve(homographies.size());
    for (const auto& h : homographies) {
        Eigen::Matrix3d hn = norm * h;
        const double f = hn.norm();
        if (!(f > 0.0) || !hn.allFinite()) {
            throw DegenerateConfiguration("invalid homography");
        }
        hn /= f;
        // sign convention: the board origin maps in front of the camera
        if (hn(2, 2) < 0.0) {
            hn = -hn;
        }
        hs.push_back(hn);
    }

    bool distinct = false;
    for (std::size_t i = 0; i < hs.size() && !distinct; ++i) {
        for (std::size_t j = i + 1; j < hs.size() && !distinct; ++j) {
            distinct = (hs[i] - hs[j]).norm() > 1e-9;
        }
    }
    if (!distinct) {
        throw DegenerateConfiguration("views are coplanar (identical homographies)");
    }

    const auto to_pixels = [&](double fx, double fy, double cx, double cy) {
        IntrinsicParams c;
        c.fx = fx / scale;
        c.fy = fy / scale;
        c.cx = cx / scale + center.x();
        c.cy = cy / scale + center.y();
        if (!std::isfinite(c.fx) || !std::isfinite(c.fy) || !(c.fx > 0.0) || !(c.fy > 0.0)) {
            throw DegenerateConfiguration("intrinsic initialization is ill-conditioned");
        }
        return c;
    };

    // Full zero-skew solve; needs a one-dimensional null space.
    if (hs.size() >= 3) {
        Eigen::MatrixXd v(2 * hs.size(), 5);
        for (std::size_t k = 0; k < hs.size(); ++k) {
            v.row(static_cast<Eigen::Index>(2 * k)) = iac_row(hs[k], 0, 1);
            v.row(static_cast<Eigen::Index>(2 * k + 1)) = iac_row(hs[k], 0, 0) - iac_row(hs[k], 1, 1);
        }
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeFullV);
        const Eigen::VectorXd sv = svd.singularValues();
        if (sv[3] > 1e-6 * sv[0]) {
            Eigen::Matrix<double, 5, 1> b = svd.matrixV().col(4);
            if (b[0] < 0.0) {
                b = -b;
            }
            const double b11 = b[0];
            const double b22 = b[1];
            const double b13 = b[2];
            const double b23 = b[3];
            const double b33 = b[4];
            if (b11 > 0.0 && b22 > 0.0) {
                const double cx = -b13 / b11;
                const double cy = -b23 / b22;
                const double lambda = b33 - b13 * b13 / b11 - b23 * b23 / b22;
                if (lambda > 0.0) {
                    return to_pixels(std::sqrt(lambda / b11), std::sqrt(lambda / b22), cx, cy);
                }
            }
        }
    }

    // Principal point at the image center: B = diag(b1, b2, b3).
    Eigen::MatrixXd v(2 * hs.size(), 3);
    for (std::size_t k = 0; k < hs.size(); ++k) {
        const Eigen::Matrix3d& h = hs[k];
        const auto r = static_cast<Eigen::Index>(2 * k);
        for (int i = 0; i < 3; ++i) {
            v(r, i) = h(i, 0) * h(i, 1);
            v(r + 1, i) = h(i, 0) * h(i, 0) - h(i, 1) * h(i, 1);
        }
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    if (!(sv[1] > kRankTolerance * sv[0])) {
        throw DegenerateConfiguration("views do not constrain the focal length");
    }
    const Eigen::Vector3d b = svd.matrixV().col(2);
    const double fx2 = b[2] / b[0];
    const double fy2 = b[2] / b[1];
    if (!(fx2 > 0.0) || !(fy2 > 0.0)) {
        throw DegenerateConfiguration("intrinsic initialization is ill-conditioned");
    }
    return to_pixels(std::sqrt(fx2), std::sqrt(fy2), 0.0, 0.0);
}

BoardPose pose_from_homography(const Eigen::Matrix3d& homography, const IntrinsicParams& c) {
    if (!(c.fx > 0.0) || !(c.fy > 0.0)) {
        throw std::invalid_argument("pose from homography needs positive focal lengths");
    }
    const Eigen::Matrix3d a = c.camera_matrix().inverse() * homography;
    const double n1 = a.col(0).norm();
    const double n2 = a.col(1).norm();
    if (!(n1 > 0.0) || !(n2 > 0.0)) {
        throw DegenerateConfiguration("homography has a degenerate rotation part");
    }
    double lambda = 2.0 / (n1 + n2);
    if (a(2, 2) * lambda < 0.0) {
        lambda = -lambda;
    }
    const Eigen::Vector3d t = lambda * a.col(2);
    if (!(t.z() > 0.0) || !t.allFinite()) {
        throw DegenerateConfiguration("homography places the board at non-positive depth");
    }
    Eigen::Matrix3d r;
    r.col(0) = lambda * a.col(0);
    r.col(1) = lambda * a.col(1);
    r.col(2) = r.col(0).cross(r.col(1));
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d rot = svd.matrixU() * svd.matrixV().transpose();
    if (rot.determinant() < 0.0) {
        Eigen::Matrix3d u = svd.matrixU();
        u.col(2) = -u.col(2);
        rot = u * svd.matrixV().transpose();
    }
    return BoardPose::from_rotation_matrix(rot, t);
}

}  // namespace posecal
