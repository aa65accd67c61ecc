#include "posecal/calibrate.hpp"
#include "posecal/errors.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace posecal;
using namespace posecal::testing;

namespace {

IntrinsicParams pinhole_webcam() { return webcam().pinhole_only(); }

std::vector<FrameObservation> render_all(const std::vector<BoardPose>& poses, const IntrinsicParams& c, double noise,
                                         std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<FrameObservation> frames;
    for (const auto& p : poses) {
        frames.push_back(render(p, c, hd(), noise, rng));
    }
    return frames;
}

Eigen::Matrix3d homography_of(const BoardPose& pose, const IntrinsicParams& c) {
    const Eigen::Matrix3d r = pose.rotation_matrix();
    Eigen::Matrix3d m;
    m.col(0) = r.col(0);
    m.col(1) = r.col(1);
    m.col(2) = pose.translation;
    return c.camera_matrix() * m;
}

// 45 degree x-tilt with the 22.5 degree roll, and a fronto-parallel full-width view.
std::vector<BoardPose> init_pair(const IntrinsicParams& c) {
    const BoardGeometry board;
    const double depth = c.fx * board.width() / hd().width;
    return {pose_at(rot_xyz(0, 0, 22.5) * rot_xyz(45, 0, 0), {0, 0, 14.0}),
            pose_at(Eigen::Matrix3d::Identity(), {0, 0, depth})};
}

}  // namespace

TEST_CASE("homography from identity correspondences") {
    std::vector<Eigen::Vector2d> pts = {{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.3}};
    const Eigen::Matrix3d h = estimate_homography(pts, pts);
    CHECK((h - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("homography recovers a known projective map") {
    Eigen::Matrix3d h;
    h << 800, 120, 300, -40, 900, 200, 0.02, -0.01, 1.0;
    const BoardGeometry board;
    std::vector<Eigen::Vector2d> src;
    std::vector<Eigen::Vector2d> dst;
    for (const auto& p : board.object_points()) {
        src.push_back(p.head<2>());
        dst.push_back((h * p.head<2>().homogeneous()).hnormalized());
    }
    const Eigen::Matrix3d est = estimate_homography(src, dst);
    CHECK((est - h).norm() / h.norm() < 1e-6);
}

TEST_CASE("homography rejects collinear points") {
    std::vector<Eigen::Vector2d> pts = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    CHECK_THROWS_AS((void)estimate_homography(pts, pts), DegenerateConfiguration);
    std::vector<Eigen::Vector2d> three = {{0, 0}, {1, 0}, {0, 1}};
    CHECK_THROWS_AS((void)estimate_homography(three, three), DegenerateConfiguration);
}

TEST_CASE("init_intrinsics recovers focal lengths from the init pair") {
    IntrinsicParams c = pinhole_webcam();
    c.fy = 1030.0;
    std::vector<Eigen::Matrix3d> hs;
    for (const auto& p : init_pair(c)) {
        hs.push_back(homography_of(p, c));
    }
    const IntrinsicParams est = init_intrinsics(hs, hd());
    CHECK(std::abs(est.fx - c.fx) / c.fx < 0.02);
    CHECK(std::abs(est.fy - c.fy) / c.fy < 0.02);
    CHECK(est.k1 == 0.0);
}

TEST_CASE("init_intrinsics with well-spread views solves the principal point") {
    IntrinsicParams c = pinhole_webcam();
    c.cx = 655.0;
    c.cy = 350.0;
    std::vector<Eigen::Matrix3d> hs;
    for (const auto& p : spread_poses()) {
        hs.push_back(homography_of(p, c));
    }
    const IntrinsicParams est = init_intrinsics(hs, hd());
    CHECK(est.cx == doctest::Approx(655.0).epsilon(1e-6));
    CHECK(est.cy == doctest::Approx(350.0).epsilon(1e-6));
    CHECK(est.fx == doctest::Approx(1000.0).epsilon(1e-6));
}

TEST_CASE("init_intrinsics degenerate inputs") {
    const IntrinsicParams c = pinhole_webcam();
    const Eigen::Matrix3d h = homography_of(init_pair(c)[0], c);
    const std::vector<Eigen::Matrix3d> same = {h, h};
    CHECK_THROWS_AS((void)init_intrinsics(same, hd()), DegenerateConfiguration);

    const std::vector<Eigen::Matrix3d> fronto = {
        homography_of(pose_at(Eigen::Matrix3d::Identity(), {0, 0, 10}), c),
        homography_of(pose_at(Eigen::Matrix3d::Identity(), {1, 0.5, 16}), c)};
    CHECK_THROWS_AS((void)init_intrinsics(fronto, hd()), DegenerateConfiguration);

    const std::vector<Eigen::Matrix3d> one = {h};
    CHECK_THROWS_AS((void)init_intrinsics(one, hd()), InsufficientData);
}

TEST_CASE("pose_from_homography recovers the pose") {
    const IntrinsicParams c = pinhole_webcam();
    const BoardPose truth = pose_at(rot_xyz(25, -15, 30), {0.5, -0.3, 12});
    const Eigen::Matrix3d h = homography_of(truth, c);
    const BoardPose est = pose_from_homography(h / h(2, 2), c);
    CHECK((est.rotation_matrix() - truth.rotation_matrix()).norm() < 1e-6);
    CHECK((est.translation - truth.translation).norm() < 1e-6);

    const BoardPose neg = pose_from_homography(-h, c);
    CHECK(neg.translation.z() > 0.0);
    CHECK((neg.translation - truth.translation).norm() < 1e-6);

    BoardPose fronto;
    fronto.translation = {0, 0, 7.5};
    const BoardPose f = pose_from_homography(homography_of(fronto, c), c);
    CHECK(f.translation.z() == doctest::Approx(7.5).epsilon(1e-9));
}

TEST_CASE("refine converges on noise-free data from a perturbed start") {
    const IntrinsicParams c = webcam();
    const auto poses = spread_poses();
    const auto frames = render_all(poses, c, 0.0, 1);
    IntrinsicParams start = c;
    start.fx *= 1.04;
    start.fy *= 0.96;
    start.cx *= 1.03;
    start.cy *= 0.97;
    start.k1 *= 1.05;
    start.k2 *= 0.95;
    std::vector<BoardPose> start_poses;
    for (const auto& f : frames) {
        start_poses.push_back(estimate_pose(f, BoardGeometry(), start));
    }
    const CalibrationResult r = refine(frames, BoardGeometry(), hd(), start, start_poses);
    CHECK(r.converged);
    CHECK(r.residual_rms < 1e-8);
    for (int i = 0; i < kNumIntrinsics; ++i) {
        CHECK(std::abs(r.intrinsics[i] - c[i]) <= 1e-6 * std::max(1e-3, std::abs(c[i])));
    }
    CHECK_FALSE(r.rank_deficient);
}

TEST_CASE("refine residual matches the noise level") {
    const IntrinsicParams c = webcam();
    double sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto frames = render_all(spread_poses(), c, 1.0, seed);
        const CalibrationResult r = calibrate_from(frames, BoardGeometry(), hd(), c, {});
        CHECK(r.residual_rms >= 0.7);
        CHECK(r.residual_rms <= 1.1);
        sum += r.residual_rms;
    }
    CHECK(sum / 20 < 1.0);
}

TEST_CASE("refine honors the fixed mask bit for bit") {
    const IntrinsicParams c = webcam();
    const auto frames = render_all(spread_poses(), c, 0.5, 4);
    IntrinsicParams start = c;
    start.fx = 1050;
    start.fy = 980;
    start.k1 = -0.09;
    std::vector<BoardPose> poses;
    for (const auto& f : frames) {
        poses.push_back(estimate_pose(f, BoardGeometry(), start));
    }
    FixedMask fixed;
    fixed.fill(true);
    fixed[kFx] = fixed[kFy] = false;
    const CalibrationResult r = refine(frames, BoardGeometry(), hd(), start, poses, fixed);
    for (int i = 2; i < kNumIntrinsics; ++i) {
        CHECK(r.intrinsics[i] == start[i]);
        CHECK(r.variances[i] == 0.0);
    }
    CHECK(r.intrinsics.fx != start.fx);
    CHECK(r.intrinsics.fy != start.fy);
}

TEST_CASE("refine rejects underdetermined problems") {
    const IntrinsicParams c = webcam();
    std::mt19937_64 rng(2);
    FrameObservation f = render(spread_poses()[0], c, hd(), 0.0, rng);
    f.points.resize(7);
    const std::vector<FrameObservation> frames = {f};
    const std::vector<BoardPose> poses = {spread_poses()[0]};
    CHECK_THROWS_AS((void)refine(frames, BoardGeometry(), hd(), c, poses), InsufficientData);
}

TEST_CASE("refine never increases the cost") {
    const IntrinsicParams c = webcam();
    const auto frames = render_all(spread_poses(), c, 1.0, 9);
    IntrinsicParams start = c.pinhole_only();
    start.fx = 950;
    std::vector<BoardPose> poses;
    for (const auto& f : frames) {
        poses.push_back(estimate_pose(f, BoardGeometry(), start));
    }
    const double before = reprojection_rms(frames, BoardGeometry(), start, poses);
    const CalibrationResult r = refine(frames, BoardGeometry(), hd(), start, poses);
    CHECK(r.residual_rms <= before);
}

TEST_CASE("covariance of all fronto-parallel frames is degenerate") {
    const IntrinsicParams c = webcam();
    const auto good = spread_poses();
    std::vector<BoardPose> flat;
    for (const auto& p : good) {
        flat.push_back(pose_at(Eigen::Matrix3d::Identity(), p.transform(BoardGeometry().center())));
    }
    const auto gf = render_all(good, c, 0.0, 1);
    const auto ff = render_all(flat, c, 0.0, 1);
    const CovarianceResult a = covariance(gf, BoardGeometry(), c, good);
    const CovarianceResult b = covariance(ff, BoardGeometry(), c, flat);
    CHECK((b.rank_deficient || b.variances[kFx] >= 10 * a.variances[kFx]));
}

TEST_CASE("covariance halves when every frame is duplicated") {
    const IntrinsicParams c = webcam();
    auto poses = spread_poses();
    auto frames = render_all(poses, c, 0.0, 1);
    const CovarianceResult a = covariance(frames, BoardGeometry(), c, poses);
    const auto n = poses.size();
    for (std::size_t i = 0; i < n; ++i) {
        poses.push_back(poses[i]);
        frames.push_back(frames[i]);
    }
    const CovarianceResult b = covariance(frames, BoardGeometry(), c, poses);
    for (int i = 0; i < kNumIntrinsics; ++i) {
        CHECK(b.variances[i] / a.variances[i] == doctest::Approx(0.5).epsilon(0.1));
    }
}

TEST_CASE("covariance does not depend on frame order") {
    const IntrinsicParams c = webcam();
    auto poses = spread_poses();
    auto frames = render_all(poses, c, 0.0, 1);
    const CovarianceResult a = covariance(frames, BoardGeometry(), c, poses);
    std::reverse(poses.begin(), poses.end());
    std::reverse(frames.begin(), frames.end());
    const CovarianceResult b = covariance(frames, BoardGeometry(), c, poses);
    for (int i = 0; i < kNumIntrinsics; ++i) {
        CHECK(b.variances[i] == doctest::Approx(a.variances[i]).epsilon(1e-6));
    }
}

TEST_CASE("index of dispersion") {
    IntrinsicParams c;
    c.fx = 1000.0;
    Vector9d v = Vector9d::Zero();
    v[kFx] = 4.0;
    v[kK1] = 4.0;
    const Vector9d iod = index_of_dispersion(c, v);
    CHECK(iod[kFx] == doctest::Approx(0.004));
    CHECK(iod[kK1] == doctest::Approx(4.0));
    CHECK(index_of_dispersion(c, Vector9d::Zero()).isZero());
    c.cx = -50.0;
    v[kCx] = 5.0;
    CHECK(index_of_dispersion(c, v)[kCx] == doctest::Approx(0.1));
}

TEST_CASE("bootstrap estimates the focal length from one tilted frame") {
    IntrinsicParams c = pinhole_webcam();
    c.fx = c.fy = 1150.0;
    std::mt19937_64 rng(5);
    const FrameObservation f = render(init_pair(c)[0], c, hd(), 0.3, rng);
    const BootstrapResult b = bootstrap_single_frame(f, BoardGeometry(), hd());
    CHECK(std::abs(b.intrinsics.fx - 1150.0) / 1150.0 < 0.05);
    CHECK(b.intrinsics.fx == b.intrinsics.fy);
    CHECK(b.intrinsics.cx == 640.0);
    CHECK(b.intrinsics.cy == 360.0);
    CHECK_FALSE(b.intrinsics.has_distortion());
    CHECK_FALSE(b.low_confidence);
}

TEST_CASE("bootstrap flags a fronto-parallel frame") {
    const IntrinsicParams c = pinhole_webcam();
    std::mt19937_64 rng(5);
    const FrameObservation f = render(pose_at(Eigen::Matrix3d::Identity(), {0, 0, 12}), c, hd(), 0.3, rng);
    const BootstrapResult b = bootstrap_single_frame(f, BoardGeometry(), hd());
    CHECK(b.intrinsics.fx > 0.0);
    CHECK(b.low_confidence);
}

TEST_CASE("bootstrap needs four points") {
    std::mt19937_64 rng(5);
    FrameObservation f = render(init_pair(webcam())[0], webcam(), hd(), 0.0, rng);
    f.points.resize(3);
    CHECK_THROWS_AS((void)bootstrap_single_frame(f, BoardGeometry(), hd()), InsufficientData);
}

TEST_CASE("calibrate from scratch on noise-free data") {
    const IntrinsicParams c = webcam();
    const auto frames = render_all(spread_poses(), c, 0.0, 1);
    const CalibrationResult r = calibrate(frames, BoardGeometry(), hd());
    CHECK(r.residual_rms < 1e-8);
    CHECK(r.intrinsics.fx == doctest::Approx(c.fx).epsilon(1e-6));
    CHECK(r.intrinsics.k1 == doctest::Approx(c.k1).epsilon(1e-6));
    CHECK(r.poses.size() == frames.size());
}

TEST_CASE("frames with bad ids are rejected") {
    FrameObservation f;
    f.points = {{0, {1, 1}}, {0, {2, 2}}};
    CHECK_THROWS_AS(validate_frame(f, BoardGeometry()), std::invalid_argument);
    f.points = {{40, {1, 1}}};
    CHECK_THROWS_AS(validate_frame(f, BoardGeometry()), std::invalid_argument);
    f.points = {{3, {1, 1}}, {7, {2, 2}}};
    CHECK_NOTHROW(validate_frame(f, BoardGeometry()));
    CHECK(f.find(7) != nullptr);
    CHECK(f.find(8) == nullptr);
}
