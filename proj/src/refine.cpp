#include "posecal/calibrate.hpp"
#include "posecal/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace posecal {

const FramePoint* FrameObservation::find(int corner_id) const {
    const auto it = std::find_if(points.begin(), points.end(),
                                 [corner_id](const FramePoint& p) { return p.corner_id == corner_id; });
    return it == points.end() ? nullptr : &*it;
}

void validate_frame(const FrameObservation& frame, const BoardGeometry& board) {
    std::vector<bool> seen(static_cast<std::size_t>(board.num_corners()), false);
    for (const auto& p : frame.points) {
        if (p.corner_id < 0 || p.corner_id >= board.num_corners()) {
            throw std::invalid_argument("corner id " + std::to_string(p.corner_id) + " out of range");
        }
        if (seen[static_cast<std::size_t>(p.corner_id)]) {
            throw std::invalid_argument("corner id " + std::to_string(p.corner_id) + " appears twice");
        }
        seen[static_cast<std::size_t>(p.corner_id)] = true;
    }
}

namespace {

using Matrix6d = Eigen::Matrix<double, 6, 6>;

// Linear map from the free (reduced) intrinsic increments to the 9 intrinsics.
Eigen::MatrixXd intrinsic_basis(const FixedMask& fixed, bool tie_focal) {
    std::vector<Vector9d> cols;
    if (tie_focal && !fixed[kFx] && !fixed[kFy]) {
        Vector9d v = Vector9d::Zero();
        v[kFx] = 1.0;
        v[kFy] = 1.0;
        cols.push_back(v);
    }
    for (int i = 0; i < kNumIntrinsics; ++i) {
        if (fixed[static_cast<std::size_t>(i)]) {
            continue;
        }
        if (tie_focal && !fixed[kFx] && !fixed[kFy] && (i == kFx || i == kFy)) {
            continue;
        }
        Vector9d v = Vector9d::Zero();
        v[i] = 1.0;
        cols.push_back(v);
    }
    Eigen::MatrixXd basis(kNumIntrinsics, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        basis.col(static_cast<Eigen::Index>(k)) = cols[k];
    }
    return basis;
}

// Block normal equations: [U W; W^T V] with V block-diagonal per frame.
struct NormalEquations {
    Eigen::MatrixXd u;
    Eigen::VectorXd gc;
    std::vector<Matrix6d> v;
    std::vector<Eigen::MatrixXd> w;
    std::vector<Vector6d> gp;
    double cost = 0.0;
};

NormalEquations build_normal_equations(std::span<const FrameObservation> frames, const BoardGeometry& board,
                                       const IntrinsicParams& c, std::span<const BoardPose> poses,
                                       const Eigen::MatrixXd& basis) {
    const Eigen::Index k = basis.cols();
    NormalEquations ne;
    ne.u = Eigen::MatrixXd::Zero(k, k);
    ne.gc = Eigen::VectorXd::Zero(k);
    ne.v.assign(frames.size(), Matrix6d::Zero());
    ne.w.assign(frames.size(), Eigen::MatrixXd::Zero(k, 6));
    ne.gp.assign(frames.size(), Vector6d::Zero());

    ProjectionJacobian jac;
    Eigen::MatrixXd jc(2, k);
    for (std::size_t f = 0; f < frames.size(); ++f) {
        for (const auto& pt : frames[f].points) {
            const Eigen::Vector2d pixel = project_with_jacobian(board.object_point(pt.corner_id), poses[f], c, &jac);
            const Eigen::Vector2d r = pixel - pt.pixel;
            const Eigen::Matrix<double, 2, 6> jp = jac.rightCols<6>();
            jc.noalias() = jac.leftCols<kNumIntrinsics>() * basis;
            ne.u.noalias() += jc.transpose() * jc;
            ne.w[f].noalias() += jc.transpose() * jp;
            ne.v[f].noalias() += jp.transpose() * jp;
            ne.gc.noalias() += jc.transpose() * r;
            ne.gp[f].noalias() += jp.transpose() * r;
            ne.cost += r.squaredNorm();
        }
    }
    return ne;
}

double total_cost(std::span<const FrameObservation> frames, const BoardGeometry& board, const IntrinsicParams& c,
                  std::span<const BoardPose> poses) {
    double cost = 0.0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        for (const auto& pt : frames[f].points) {
            cost += (project(board.object_point(pt.corner_id), poses[f], c) - pt.pixel).squaredNorm();
        }
    }
    return cost;
}

struct Step {
    Eigen::VectorXd dc;
    std::vector<Vector6d> dp;
};

// Solve the Marquardt-damped system by eliminating the per-frame pose blocks.
bool solve_damped(const NormalEquations& ne, double lambda, Step* step) {
    const Eigen::Index k = ne.u.rows();
    const auto damp = [lambda](auto m) {
        const double floor = 1e-12 * (1.0 + m.diagonal().cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, i) += lambda * std::max(m(i, i), floor);
        }
        return m;
    };

    Eigen::MatrixXd s = k > 0 ? damp(ne.u) : ne.u;
    Eigen::VectorXd rhs = -ne.gc;
    std::vector<Eigen::LLT<Matrix6d>> vinv;
    vinv.reserve(ne.v.size());
    for (std::size_t f = 0; f < ne.v.size(); ++f) {
        vinv.emplace_back(damp(ne.v[f]));
        if (vinv.back().info() != Eigen::Success) {
            return false;
        }
        if (k > 0) {
            const Eigen::MatrixXd vinv_wt = vinv.back().solve(ne.w[f].transpose());
            s.noalias() -= ne.w[f] * vinv_wt;
            rhs.noalias() += ne.w[f] * vinv.back().solve(ne.gp[f]);
        }
    }

    step->dc = Eigen::VectorXd::Zero(k);
    if (k > 0) {
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
        if (ldlt.info() != Eigen::Success) {
            return false;
        }
        step->dc = ldlt.solve(rhs);
        if (!step->dc.allFinite()) {
            return false;
        }
    }
    step->dp.resize(ne.v.size());
    for (std::size_t f = 0; f < ne.v.size(); ++f) {
        Vector6d rhs_p = -ne.gp[f];
        if (k > 0) {
            rhs_p.noalias() -= ne.w[f].transpose() * step->dc;
        }
        step->dp[f] = vinv[f].solve(rhs_p);
        if (!step->dp[f].allFinite()) {
            return false;
        }
    }
    return true;
}

IntrinsicParams apply_intrinsic_step(const IntrinsicParams& c, const Eigen::MatrixXd& basis,
                                     const Eigen::VectorXd& dc) {
    IntrinsicParams out = c;
    for (Eigen::Index col = 0; col < basis.cols(); ++col) {
        for (int i = 0; i < kNumIntrinsics; ++i) {
            if (basis(i, col) != 0.0) {
                out[i] += basis(i, col) * dc[col];
            }
        }
    }
    return out;
}

struct CoreResult {
    IntrinsicParams intrinsics;
    std::vector<BoardPose> poses;
    double cost = 0.0;
    bool converged = false;
    int iterations = 0;
};

CoreResult levenberg_marquardt(std::span<const FrameObservation> frames, const BoardGeometry& board,
                               const IntrinsicParams& initial, std::span<const BoardPose> initial_poses,
                               const Eigen::MatrixXd& basis, const LmOptions& options) {
    CoreResult state{initial, {initial_poses.begin(), initial_poses.end()}, 0.0, false, 0};
    NormalEquations ne = build_normal_equations(frames, board, state.intrinsics, state.poses, basis);
    state.cost = ne.cost;
    double lambda = options.initial_lambda;

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        state.iterations = iter + 1;
        if (state.cost == 0.0) {
            state.converged = true;
            break;
        }
        Step step;
        if (!solve_damped(ne, lambda, &step)) {
            lambda *= options.lambda_factor;
            continue;
        }

        const IntrinsicParams c_new = apply_intrinsic_step(state.intrinsics, basis, step.dc);
        std::vector<BoardPose> poses_new = state.poses;
        double step_sq = (c_new.to_vector() - state.intrinsics.to_vector()).squaredNorm();
        double x_sq = state.intrinsics.to_vector().squaredNorm();
        for (std::size_t f = 0; f < poses_new.size(); ++f) {
            poses_new[f] = BoardPose::from_vector(state.poses[f].to_vector() + step.dp[f]);
            step_sq += step.dp[f].squaredNorm();
            x_sq += state.poses[f].to_vector().squaredNorm();
        }
        if (std::sqrt(step_sq) < options.min_step_norm * (std::sqrt(x_sq) + options.min_step_norm)) {
            state.converged = true;
            break;
        }

        double cost_new = std::numeric_limits<double>::infinity();
        try {
            cost_new = total_cost(frames, board, c_new, poses_new);
        } catch (const BehindCamera&) {
        }
        if (std::isfinite(cost_new) && cost_new < state.cost) {
            const double decrease = (state.cost - cost_new) / state.cost;
            state.intrinsics = c_new;
            state.poses = std::move(poses_new);
            state.cost = cost_new;
            lambda = std::max(lambda / options.lambda_factor, 1e-15);
            ne = build_normal_equations(frames, board, state.intrinsics, state.poses, basis);
            if (decrease < options.min_relative_decrease) {
                state.converged = true;
                break;
            }
        } else {
            lambda *= options.lambda_factor;
        }
    }
    return state;
}

void check_inputs(std::span<const FrameObservation> frames, const BoardGeometry& board,
                  std::span<const BoardPose> poses) {
    if (frames.size() != poses.size()) {
        throw std::invalid_argument("one pose per frame is required");
    }
    for (const auto& f : frames) {
        validate_frame(f, board);
    }
}

}  // namespace

// --- Public API ----------------------------------------------------------------

double reprojection_rms(std::span<const FrameObservation> frames, const BoardGeometry& board,
                        const IntrinsicParams& c, std::span<const BoardPose> poses) {
    check_inputs(frames, board, poses);
    std::size_t n = 0;
    for (const auto& f : frames) {
        n += f.points.size();
    }
    if (n == 0) {
        return 0.0;
    }
    return std::sqrt(total_cost(frames, board, c, poses) / (2.0 * static_cast<double>(n)));
}

CovarianceResult covariance(std::span<const FrameObservation> frames, const BoardGeometry& board,
                            const IntrinsicParams& c, std::span<const BoardPose> poses, const FixedMask& fixed,
                            bool tie_focal) {
    check_inputs(frames, board, poses);
    const Eigen::MatrixXd basis = intrinsic_basis(fixed, tie_focal);
    const NormalEquations ne = build_normal_equations(frames, board, c, poses, basis);

    const Eigen::Index k = basis.cols();
    const Eigen::Index n = k + 6 * static_cast<Eigen::Index>(frames.size());
    Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(n, n);
    normal.topLeftCorner(k, k) = ne.u;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const Eigen::Index off = k + 6 * static_cast<Eigen::Index>(f);
        normal.block(off, off, 6, 6) = ne.v[f];
        normal.block(0, off, k, 6) = ne.w[f];
        normal.block(off, 0, 6, k) = ne.w[f].transpose();
    }

    // Equilibrate so the truncation tolerance does not depend on parameter units.
    Eigen::VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d[i] = normal(i, i) > 0.0 ? 1.0 / std::sqrt(normal(i, i)) : 1.0;
    }
    const Eigen::MatrixXd scaled = d.asDiagonal() * normal * d.asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    const Eigen::VectorXd ev = eig.eigenvalues();
    const double max_ev = ev.cwiseAbs().maxCoeff();
    const double tol = 1e-10 * max_ev;

    CovarianceResult out;
    Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (ev[i] > tol) {
            inv_ev[i] = 1.0 / ev[i];
        } else {
            out.rank_deficient = true;
        }
    }
    if (k == 0) {
        return out;
    }
    const Eigen::MatrixXd vk = eig.eigenvectors().topRows(k);
    const Eigen::MatrixXd cov_scaled = vk * inv_ev.asDiagonal() * vk.transpose();
    const Eigen::MatrixXd cov_reduced = d.head(k).asDiagonal() * cov_scaled * d.head(k).asDiagonal();
    const Eigen::MatrixXd cov_full = basis * cov_reduced * basis.transpose();
    out.variances = cov_full.diagonal().cwiseMax(0.0);
    return out;
}

Vector9d index_of_dispersion(const IntrinsicParams& c, const Vector9d& variances) {
    Vector9d iod;
    for (int i = 0; i < kNumIntrinsics; ++i) {
        if (variances[i] < 0.0) {
            throw std::invalid_argument("variances must be non-negative");
        }
        const double value = std::abs(c[i]);
        iod[i] = value == 0.0 ? variances[i] : variances[i] / value;
    }
    return iod;
}

CalibrationResult refine(std::span<const FrameObservation> frames, const BoardGeometry& board, ImageSize image_size,
                         const IntrinsicParams& initial, std::span<const BoardPose> initial_poses,
                         const FixedMask& fixed, const LmOptions& options) {
    check_inputs(frames, board, initial_poses);
    const Eigen::MatrixXd basis = intrinsic_basis(fixed, options.tie_focal);
    std::size_t residuals = 0;
    for (const auto& f : frames) {
        residuals += 2 * f.points.size();
    }
    const auto unknowns = static_cast<std::size_t>(basis.cols()) + 6 * frames.size();
    if (residuals < unknowns) {
        throw InsufficientData("refine: " + std::to_string(residuals) + " residuals for " +
                               std::to_string(unknowns) + " unknowns");
    }

    const CoreResult core = levenberg_marquardt(frames, board, initial, initial_poses, basis, options);

    CalibrationResult result;
    result.intrinsics = core.intrinsics;
    result.image_size = image_size;
    result.poses = core.poses;
    result.residual_rms = std::sqrt(core.cost / static_cast<double>(residuals));
    result.converged = core.converged;
    result.iterations = core.iterations;
    const CovarianceResult cov = covariance(frames, board, core.intrinsics, core.poses, fixed, options.tie_focal);
    result.variances = cov.variances;
    result.rank_deficient = cov.rank_deficient;
    result.iod = index_of_dispersion(core.intrinsics, cov.variances);
    return result;
}

BoardPose estimate_pose(const FrameObservation& frame, const BoardGeometry& board, const IntrinsicParams& c) {
    validate_frame(frame, board);
    if (frame.size() < 4) {
        throw InsufficientData("pose estimation needs at least 4 points");
    }
    std::vector<Eigen::Vector2d> src;
    std::vector<Eigen::Vector2d> dst;
    std::vector<Eigen::Vector2d> src_pinhole;
    std::vector<Eigen::Vector2d> dst_pinhole;
    for (const auto& pt : frame.points) {
        const Eigen::Vector2d obj = board.object_point(pt.corner_id).head<2>();
        if (const auto ray = try_pixel_to_normalized(pt.pixel, c)) {
            src.push_back(obj);
            dst.push_back(*ray);
        }
        src_pinhole.push_back(obj);
        dst_pinhole.push_back({(pt.pixel.x() - c.cx) / c.fx, (pt.pixel.y() - c.cy) / c.fy});
    }
    // Points the estimate cannot invert are left out of the initial guess.
    if (src.size() < 4) {
        src = std::move(src_pinhole);
        dst = std::move(dst_pinhole);
    }
    const Eigen::Matrix3d h = estimate_homography(src, dst);
    const BoardPose initial = pose_from_homography(h, IntrinsicParams{});

    FixedMask all_fixed;
    all_fixed.fill(true);
    const std::array<FrameObservation, 1> frames{frame};
    const std::array<BoardPose, 1> poses{initial};
    LmOptions options;
    options.max_iterations = 50;
    const CoreResult core =
        levenberg_marquardt(frames, board, c, poses, intrinsic_basis(all_fixed, false), options);
    return core.poses.front();
}

BootstrapResult bootstrap_single_frame(const FrameObservation& frame, const BoardGeometry& board,
                                       ImageSize image_size) {
    validate_frame(frame, board);
    if (frame.size() < 4) {
        throw InsufficientData("bootstrap needs at least 4 points");
    }
    IntrinsicParams c;
    c.cx = 0.5 * image_size.width;
    c.cy = 0.5 * image_size.height;
    c.fx = c.fy = image_size.width;

    // Closed-form single focal length with the principal point known:
    // B = diag(b, b, b3) in center-shifted pixels.
    try {
        Eigen::Matrix3d h = frame_homography(frame, board);
        Eigen::Matrix3d shift;
        shift << 1.0, 0.0, -c.cx, 0.0, 1.0, -c.cy, 0.0, 0.0, 1.0;
        h = shift * h;
        h /= h.norm();
        Eigen::Matrix2d v;
        v << h(0, 0) * h(0, 1) + h(1, 0) * h(1, 1), h(2, 0) * h(2, 1),
             h(0, 0) * h(0, 0) - h(0, 1) * h(0, 1) + h(1, 0) * h(1, 0) - h(1, 1) * h(1, 1),
             h(2, 0) * h(2, 0) - h(2, 1) * h(2, 1);
        const Eigen::JacobiSVD<Eigen::Matrix2d> svd(v, Eigen::ComputeFullV);
        const Eigen::Vector2d b = svd.matrixV().col(1);
        const double f2 = b[1] / b[0];
        if (f2 > 0.0 && std::isfinite(f2)) {
            c.fx = c.fy = std::sqrt(f2);
        }
    } catch (const DegenerateConfiguration&) {
    }

    BootstrapResult out;
    const std::array<FrameObservation, 1> frames{frame};
    std::array<BoardPose, 1> poses{};
    try {
        poses[0] = estimate_pose(frame, board, c);
    } catch (const DegenerateConfiguration&) {
        out.intrinsics = c;
        out.low_confidence = true;
        return out;
    }

    FixedMask fixed;
    fixed.fill(true);
    fixed[kFx] = false;
    fixed[kFy] = false;
    LmOptions options;
    options.tie_focal = true;
    const CoreResult core = levenberg_marquardt(frames, board, c, poses, intrinsic_basis(fixed, true), options);

    out.intrinsics = core.intrinsics;
    out.pose = core.poses.front();
    if (!(out.intrinsics.fx > 0.0) || !std::isfinite(out.intrinsics.fx)) {
        out.intrinsics = c;
        out.low_confidence = true;
        return out;
    }
    const CovarianceResult cov = covariance(frames, board, core.intrinsics, core.poses, fixed, true);
    out.focal_sigma = std::sqrt(cov.variances[kFx]);
    out.low_confidence = cov.rank_deficient || out.focal_sigma > 0.05 * out.intrinsics.fx;
    return out;
}

CalibrationResult calibrate_from(std::span<const FrameObservation> frames, const BoardGeometry& board,
                                 ImageSize image_size, const IntrinsicParams& initial,
                                 std::span<const BoardPose> known_poses) {
    if (known_poses.size() > frames.size()) {
        throw std::invalid_argument("more poses than frames");
    }
    std::vector<BoardPose> poses(known_poses.begin(), known_poses.end());
    for (std::size_t f = known_poses.size(); f < frames.size(); ++f) {
        poses.push_back(estimate_pose(frames[f], board, initial));
    }
    return refine(frames, board, image_size, initial, poses);
}

CalibrationResult calibrate(std::span<const FrameObservation> frames, const BoardGeometry& board,
                            ImageSize image_size) {
    if (frames.size() < 2) {
        throw InsufficientData("calibration needs at least two frames");
    }
    std::vector<Eigen::Matrix3d> homographies;
    homographies.reserve(frames.size());
    for (const auto& f : frames) {
        validate_frame(f, board);
        homographies.push_back(frame_homography(f, board));
    }
    const IntrinsicParams initial = init_intrinsics(homographies, image_size);
    std::vector<BoardPose> poses;
    poses.reserve(frames.size());
    for (const auto& f : frames) {
        poses.push_back(estimate_pose(f, board, initial));
    }
    return refine(frames, board, image_size, initial, poses);
}

}  // namespace posecal
