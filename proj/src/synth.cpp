#include "posecal/synth.hpp"
#include "posecal/errors.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace posecal {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

bool physical(const GroundTruthCamera& cam) {
    const IntrinsicParams& c = cam.intrinsics;
    return c.fx > 0.0 && c.fy > 0.0 && c.cx > 0.0 && c.cy > 0.0 && c.cx < cam.image_size.width &&
           c.cy < cam.image_size.height;
}

}  // namespace

GroundTruthCamera default_camera() {
    GroundTruthCamera cam;
    IntrinsicParams& c = cam.intrinsics;
    c.fx = c.fy = 1000.0;
    c.cx = 640.0;
    c.cy = 360.0;
    c.k1 = -0.1;
    c.k2 = 0.03;
    c.k3 = 0.0;
    c.p1 = c.p2 = 0.001;
    cam.image_size = {1280, 720};
    return cam;
}

GroundTruthCamera sample_camera(const GroundTruthCamera& real, double deviation, std::uint64_t seed) {
    if (!(deviation >= 0.0)) {
        throw std::invalid_argument("deviation must be non-negative");
    }
    if (deviation == 0.0) {
        return real;
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
        GroundTruthCamera cam = real;
        for (int i = 0; i < kNumIntrinsics; ++i) {
            cam.intrinsics[i] = real.intrinsics[i] + std::sqrt(deviation * std::abs(real.intrinsics[i])) * n(rng);
        }
        if (physical(cam)) {
            return cam;
        }
    }
    throw std::runtime_error("camera sampling kept producing non-physical intrinsics");
}

FrameObservation render_observation(const BoardPose& pose, const GroundTruthCamera& cam, double noise_sigma,
                                    std::uint64_t seed, const BoardGeometry& board) {
    if (!(noise_sigma >= 0.0)) {
        throw std::invalid_argument("noise must be non-negative");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    FrameObservation frame;
    for (int id = 0; id < board.num_corners(); ++id) {
        const Eigen::Vector2d p = project(board.object_point(id), pose, cam.intrinsics);
        if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= cam.image_size.width - 1.0 &&
              p.y() <= cam.image_size.height - 1.0)) {
            continue;
        }
        const double dx = n(rng);
        const double dy = n(rng);
        frame.points.push_back({id, p + noise_sigma * Eigen::Vector2d(dx, dy)});
    }
    if (frame.empty()) {
        throw NoVisiblePlacement("no board corner is visible");
    }
    return frame;
}

TestSet make_test_set(const GroundTruthCamera& cam, double noise_sigma, std::uint64_t seed,
                      const TestSetConfig& config, const BoardGeometry& board) {
    if (config.count <= 0) {
        throw std::invalid_argument("test set needs at least one frame");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> tilt_order(static_cast<std::size_t>(config.count));
    std::vector<int> dist_order(static_cast<std::size_t>(config.count));
    std::iota(tilt_order.begin(), tilt_order.end(), 0);
    std::iota(dist_order.begin(), dist_order.end(), 0);
    std::shuffle(tilt_order.begin(), tilt_order.end(), rng);
    std::shuffle(dist_order.begin(), dist_order.end(), rng);

    const double w = cam.image_size.width;
    const double h = cam.image_size.height;
    TestSet set;
    for (int i = 0; i < config.count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const double ft = (tilt_order[static_cast<std::size_t>(i)] + u(rng)) / config.count;
            const double fd = (dist_order[static_cast<std::size_t>(i)] + u(rng)) / config.count;
            // shrink toward the middle of the ranges if the view keeps failing
            const double shrink = 1.0 - std::min(0.5, attempt / 100.0);
            const double tilt = shrink * (config.min_tilt_deg + (config.max_tilt_deg - config.min_tilt_deg) * ft);
            const double dist = board.width() * (config.min_distance + (config.max_distance - config.min_distance) * fd);
            const double axis_angle = std::acos(-1.0) * u(rng);
            const double roll = 360.0 * u(rng);
            const int quadrant = i % 4;
            const double px = w * ((quadrant % 2 == 0) ? 0.15 + 0.3 * u(rng) : 0.55 + 0.3 * u(rng));
            const double py = h * ((quadrant / 2 == 0) ? 0.15 + 0.3 * u(rng) : 0.55 + 0.3 * u(rng));

            const Eigen::Vector3d axis(std::cos(axis_angle), std::sin(axis_angle), 0.0);
            const Eigen::Matrix3d r = (Eigen::AngleAxisd(tilt * kDeg, axis) *
                                       Eigen::AngleAxisd(roll * kDeg, Eigen::Vector3d::UnitZ()))
                                          .toRotationMatrix();
            const auto ray = try_pixel_to_normalized({px, py}, cam.intrinsics);
            if (!ray) {
                continue;
            }
            const Eigen::Vector3d center = dist * ray->homogeneous();
            const BoardPose pose = BoardPose::from_rotation_matrix(r, center - r * board.center());
            try {
                FrameObservation f = render_observation(pose, cam, noise_sigma, rng(), board);
                if (f.size() < config.min_visible) {
                    continue;
                }
                set.poses.push_back(pose);
                set.frames.push_back(std::move(f));
                placed = true;
            } catch (const std::runtime_error&) {
            } catch (const std::domain_error&) {
            }
        }
        if (!placed) {
            throw NoVisiblePlacement("could not place a test view");
        }
    }
    return set;
}

EstimationError estimation_error(const IntrinsicParams& c, const TestSet& test, const BoardGeometry& board) {
    if (test.frames.empty()) {
        throw std::invalid_argument("test set is empty");
    }
    EstimationError out;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& f : test.frames) {
        try {
            const BoardPose pose = estimate_pose(f, board, c);
            double frame_sum = 0.0;
            for (const auto& pt : f.points) {
                frame_sum += (project(board.object_point(pt.corner_id), pose, c) - pt.pixel).squaredNorm();
            }
            if (!std::isfinite(frame_sum)) {
                ++out.failures;
                continue;
            }
            sum += frame_sum;
            n += f.points.size();
        } catch (const std::runtime_error&) {
            ++out.failures;
        } catch (const std::domain_error&) {
            ++out.failures;
        }
    }
    if (n == 0) {
        throw InsufficientData("no test frame could be evaluated");
    }
    out.rms = std::sqrt(sum / (2.0 * static_cast<double>(n)));
    return out;
}

BoardPose overlay_matching_pose(const TargetPose& target, const IntrinsicParams& shown_with,
                                const GroundTruthCamera& cam, const BoardGeometry& board) {
    FrameObservation drawn;
    for (int id = 0; id < board.num_corners(); ++id) {
        drawn.points.push_back({id, project(board.object_point(id), target.pose, shown_with)});
    }
    return estimate_pose(drawn, board, cam.intrinsics);
}

GuidedRun run_guided_session(const GroundTruthCamera& cam, const SessionConfig& config,
                             const GuidedRunOptions& options) {
    GuidedRun run;
    run.state = start_session(config);
    std::uint64_t render_seed = options.seed;
    int retries = 0;
    while (run.state.phase != Phase::Converged) {
        if (static_cast<int>(run.state.keyframes.size()) >= options.max_keyframes ||
            retries > options.max_retries || !run.state.current_target) {
            break;
        }
        FrameObservation frame;
        try {
            const BoardPose pose = options.actor == Actor::ExactPose
                                       ? run.state.current_target->pose
                                       : overlay_matching_pose(*run.state.current_target,
                                                               run.state.current_intrinsics(), cam, config.board);
            frame = render_observation(pose, cam, options.noise_sigma, render_seed++, config.board);
        } catch (const std::exception&) {
            break;
        }
        // the board is held still: the previous frame carries the same detections
        auto [next, verdict] = submit_frame(run.state, frame, frame);
        run.submitted.push_back(frame);
        run.verdicts.push_back(verdict);
        run.state = std::move(next);
        retries = verdict.accepted ? 0 : retries + 1;
    }
    run.converged = run.state.phase == Phase::Converged;
    return run;
}

namespace {

// One camera of the correlation experiment: 2 init views, then two blocks of
// group-specific targets, recording the uncertainty after every frame.
std::vector<CorrelationRow> correlation_camera(const GroundTruthCamera& cam, const CorrelationConfig& config,
                                               int camera_index, std::uint64_t seed) {
    const BoardGeometry board;
    const PoseConfig pose_config;
    std::uint64_t render_seed = seed;
    std::vector<FrameObservation> frames;
    std::vector<BoardPose> known;
    std::vector<CorrelationRow> rows;

    IntrinsicParams guess = cam.intrinsics.pinhole_only();
    guess.cx = 0.5 * cam.image_size.width;
    guess.cy = 0.5 * cam.image_size.height;
    for (const auto& t : init_targets(board, cam.image_size, guess, pose_config)) {
        frames.push_back(render_observation(t.pose, cam, config.noise_sigma, render_seed++, board));
    }
    std::vector<Eigen::Matrix3d> hs;
    for (const auto& f : frames) {
        hs.push_back(frame_homography(f, board));
    }
    IntrinsicParams initial = guess;
    try {
        initial = init_intrinsics(hs, cam.image_size);
    } catch (const DegenerateConfiguration&) {
    }
    CalibrationResult est = calibrate_from(frames, board, cam.image_size, initial, {});
    const auto push_row = [&](int frame_index) {
        CorrelationRow row;
        row.camera = camera_index;
        row.frame = frame_index;
        row.intrinsics = est.intrinsics;
        row.sigma = est.variances.cwiseSqrt();
        row.iod = est.iod;
        rows.push_back(row);
    };
    push_row(2);

    const PoseGroup first = config.layout == Layout::KFirst ? PoseGroup::Pinhole : PoseGroup::Distortion;
    const PoseGroup second = first == PoseGroup::Pinhole ? PoseGroup::Distortion : PoseGroup::Pinhole;
    std::array<int, 4> steps{};
    const DistortionMap probe = distortion_magnitude_map(est.intrinsics, cam.image_size.width,
                                                         cam.image_size.height);
    VisitedMask visited(probe.cols, probe.rows);

    const int total = 2 + config.first_block + config.second_block;
    for (int k = 3; k <= total; ++k) {
        const PoseGroup group = k <= 2 + config.first_block ? first : second;
        TargetPose target;
        if (group == PoseGroup::Pinhole) {
            int best = kFx;
            for (int i = kFx; i <= kCy; ++i) {
                if (est.iod[i] > est.iod[best]) {
                    best = i;
                }
            }
            auto& step = steps[static_cast<std::size_t>(best)];
            target = pinhole_target(best, step, board, est.intrinsics, cam.image_size, est.poses, pose_config);
            step = target.step + 1;
        } else {
            const DistortionMap map =
                distortion_magnitude_map(est.intrinsics, cam.image_size.width, cam.image_size.height);
            if (visited.full()) {
                visited = VisitedMask(map.cols, map.rows);
            }
            DistortionTargetResult r = distortion_target(map, visited, board, est.intrinsics, cam.image_size,
                                                         pose_config);
            visited = std::move(r.visited);
            target = std::move(r.target);
        }
        // the board is held where the overlay is drawn under the current estimate
        const BoardPose held = overlay_matching_pose(target, est.intrinsics, cam, board);
        frames.push_back(render_observation(held, cam, config.noise_sigma, render_seed++, board));
        est = calibrate_from(frames, board, cam.image_size, est.intrinsics, est.poses);
        push_row(k);
    }
    return rows;
}

}  // namespace

CorrelationTable run_correlation_experiment(const GroundTruthCamera& real, const CorrelationConfig& config) {
    if (config.cameras <= 0 || config.first_block < 0 || config.second_block < 0) {
        throw std::invalid_argument("invalid correlation experiment configuration");
    }
    CorrelationTable table;
    const int frames = 1 + config.first_block + config.second_block;
    std::vector<std::vector<Vector9d>> per_frame(static_cast<std::size_t>(frames));
    for (int cam_index = 0; cam_index < config.cameras; ++cam_index) {
        const std::uint64_t cam_seed = config.seed * 1000003ULL + static_cast<std::uint64_t>(cam_index);
        try {
            const GroundTruthCamera cam = sample_camera(real, config.deviation, cam_seed);
            const auto rows = correlation_camera(cam, config, cam_index, cam_seed ^ 0x9e3779b97f4a7c15ULL);
            for (const auto& r : rows) {
                per_frame[static_cast<std::size_t>(r.frame - 2)].push_back(r.sigma);
            }
            table.rows.insert(table.rows.end(), rows.begin(), rows.end());
        } catch (const std::exception&) {
            ++table.failed_cameras;
        }
    }
    for (const auto& samples : per_frame) {
        Vector9d mean = Vector9d::Zero();
        Vector9d spread = Vector9d::Zero();
        if (!samples.empty()) {
            for (const auto& s : samples) {
                mean += s;
            }
            mean /= static_cast<double>(samples.size());
            for (const auto& s : samples) {
                spread += (s - mean).cwiseAbs2();
            }
            spread = (spread / static_cast<double>(samples.size())).cwiseSqrt();
        }
        table.mean_sigma.push_back(mean);
        table.spread_sigma.push_back(spread);
    }
    return table;
}

CompactResult greedy_compact(const std::vector<FrameObservation>& sequence, const TestSet& test,
                             ImageSize image_size, const BoardGeometry& board) {
    if (sequence.size() < 2) {
        throw InsufficientData("compaction needs the two initialization frames");
    }
    CompactResult out;
    out.selected = {0, 1};
    std::vector<FrameObservation> chosen = {sequence[0], sequence[1]};
    out.calibration = calibrate(chosen, board, image_size);
    double best = estimation_error(out.calibration.intrinsics, test, board).rms;
    out.trace.push_back(best);

    std::vector<bool> used(sequence.size(), false);
    used[0] = used[1] = true;
    while (true) {
        int best_index = -1;
        double best_error = best;
        CalibrationResult best_calibration;
        for (std::size_t j = 0; j < sequence.size(); ++j) {
            if (used[j]) {
                continue;
            }
            std::vector<FrameObservation> candidate = chosen;
            candidate.push_back(sequence[j]);
            try {
                CalibrationResult r = calibrate_from(candidate, board, image_size, out.calibration.intrinsics,
                                                     out.calibration.poses);
                const double e = estimation_error(r.intrinsics, test, board).rms;
                if (e < best_error) {
                    best_error = e;
                    best_index = static_cast<int>(j);
                    best_calibration = std::move(r);
                }
            } catch (const std::runtime_error&) {
            }
        }
        if (best_index < 0) {
            break;
        }
        used[static_cast<std::size_t>(best_index)] = true;
        chosen.push_back(sequence[static_cast<std::size_t>(best_index)]);
        out.selected.push_back(best_index);
        out.calibration = std::move(best_calibration);
        best = best_error;
        out.trace.push_back(best);
    }
    return out;
}

}  // namespace posecal
