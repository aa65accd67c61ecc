#include "posecal/session.hpp"
#include "posecal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace posecal {

std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::AwaitingBootstrap: return "AwaitingBootstrap";
        case Phase::AwaitingInit1: return "AwaitingInit1";
        case Phase::AwaitingInit2: return "AwaitingInit2";
        case Phase::Refining: return "Refining";
        case Phase::Converged: return "Converged";
    }
    return "Unknown";
}

std::string_view to_string(VerdictReason reason) {
    switch (reason) {
        case VerdictReason::Accepted: return "Accepted";
        case VerdictReason::PoseNotReached: return "PoseNotReached";
        case VerdictReason::NotStill: return "NotStill";
        case VerdictReason::TooFewPoints: return "TooFewPoints";
        case VerdictReason::SessionComplete: return "SessionComplete";
    }
    return "Unknown";
}

std::string_view to_string(PoseGroup group) {
    switch (group) {
        case PoseGroup::Pinhole: return "Pinhole";
        case PoseGroup::Distortion: return "Distortion";
        case PoseGroup::Init: return "Init";
    }
    return "Unknown";
}

void validate(const SessionConfig& config) {
    if (config.image_size.width <= 0 || config.image_size.height <= 0) {
        throw std::invalid_argument("image size must be positive");
    }
    if (!(config.convergence_threshold > 0.0 && config.convergence_threshold <= 1.0)) {
        throw std::invalid_argument("convergence threshold must lie in (0, 1]");
    }
    if (!(config.jaccard_min >= 0.0 && config.jaccard_min < 1.0)) {
        throw std::invalid_argument("jaccard minimum must lie in [0, 1)");
    }
    if (!(config.stillness_px > 0.0)) {
        throw std::invalid_argument("stillness limit must be positive");
    }
    if (config.init_min_points < 4 || config.min_points < 4) {
        throw std::invalid_argument("point minimums must be at least 4");
    }
    if (config.map_stride <= 0) {
        throw std::invalid_argument("map stride must be positive");
    }
}

int min_points_required(int frames_so_far, bool is_init, const SessionConfig& config) {
    if (frames_so_far < 0) {
        throw std::invalid_argument("frame count must be non-negative");
    }
    return is_init ? config.init_min_points : config.min_points;
}

bool is_still(const FrameObservation& current, const FrameObservation& previous, double max_mean_motion_px) {
    double total = 0.0;
    for (const auto& p : current.points) {
        const FramePoint* q = previous.find(p.corner_id);
        if (q == nullptr) {
            return false;
        }
        total += (p.pixel - q->pixel).norm();
    }
    if (current.points.empty()) {
        return true;
    }
    return total / static_cast<double>(current.points.size()) < max_mean_motion_px;
}

double jaccard_overlap(const TargetPose& target, const BoardPose& estimated_pose, const IntrinsicParams& c,
                       const BoardGeometry& board) {
    try {
        return convex_jaccard(target.overlay, project_outline(board, estimated_pose, c));
    } catch (const BehindCamera&) {
        return 0.0;
    }
}

bool convergence_step(int parameter, double variance_new, double variance_old, double threshold) {
    if (parameter < 0 || parameter >= kNumIntrinsics) {
        throw std::invalid_argument("parameter index out of range");
    }
    if (!(variance_old > 0.0)) {
        throw std::invalid_argument("previous variance must be positive");
    }
    return 1.0 - variance_new / variance_old < threshold;
}

SessionState start_session(const SessionConfig& config) {
    validate(config);
    SessionState s;
    s.config = config;
    s.guess.fx = s.guess.fy = config.image_size.width;
    s.guess.cx = 0.5 * config.image_size.width;
    s.guess.cy = 0.5 * config.image_size.height;
    s.current_target = init_targets(config.board, config.image_size, s.guess, config.poses)[0];
    const DistortionMap probe =
        distortion_magnitude_map(s.guess, config.image_size.width, config.image_size.height, config.map_stride);
    s.visited = VisitedMask(probe.cols, probe.rows);
    return s;
}

namespace {

bool initializing(Phase phase) {
    return phase == Phase::AwaitingBootstrap || phase == Phase::AwaitingInit1 || phase == Phase::AwaitingInit2;
}

std::vector<BoardPose> estimated_poses(const SessionState& s) {
    return s.estimate ? s.estimate->poses : std::vector<BoardPose>{};
}

// MaxIOD over unconverged parameters; ties resolve to the lowest index.
int select_parameter(const SessionState& s) {
    int best = -1;
    for (int i = 0; i < kNumIntrinsics; ++i) {
        if (s.converged[static_cast<std::size_t>(i)]) {
            continue;
        }
        if (best < 0 || s.estimate->iod[i] > s.estimate->iod[best]) {
            best = i;
        }
    }
    return best;
}

void select_target(SessionState& s) {
    const int parameter = select_parameter(s);
    const IntrinsicParams& c = s.estimate->intrinsics;
    const SessionConfig& cfg = s.config;
    if (is_pinhole_param(parameter)) {
        const std::vector<BoardPose> prior = estimated_poses(s);
        auto& step = s.pinhole_steps[static_cast<std::size_t>(parameter)];
        s.current_target = pinhole_target(parameter, step, cfg.board, c, cfg.image_size, prior, cfg.poses);
        step = s.current_target->step + 1;
        return;
    }
    const DistortionMap map =
        distortion_magnitude_map(c, cfg.image_size.width, cfg.image_size.height, cfg.map_stride);
    if (s.visited.full()) {
        s.visited = VisitedMask(map.cols, map.rows);
    }
    DistortionTargetResult r = distortion_target(map, s.visited, cfg.board, c, cfg.image_size, cfg.poses);
    s.visited = std::move(r.visited);
    r.target.parameter = parameter;
    s.current_target = std::move(r.target);
}

void record(SessionState& s, PoseGroup group, std::optional<int> parameter) {
    KeyframeRecord rec;
    rec.keyframe = static_cast<int>(s.keyframes.size());
    rec.group = group;
    rec.parameter = parameter;
    rec.intrinsics = s.estimate->intrinsics;
    rec.variances = s.estimate->variances;
    rec.iod = s.estimate->iod;
    s.history.push_back(rec);
}

void initialize_estimate(SessionState& s) {
    const SessionConfig& cfg = s.config;
    IntrinsicParams initial = s.guess;
    try {
        std::vector<Eigen::Matrix3d> hs;
        for (const auto& f : s.keyframes) {
            hs.push_back(frame_homography(f, cfg.board));
        }
        initial = init_intrinsics(hs, cfg.image_size);
    } catch (const DegenerateConfiguration&) {
        initial = s.guess.pinhole_only();
    }
    s.estimate = calibrate_from(s.keyframes, cfg.board, cfg.image_size, initial, {});
    s.previous_variance = s.estimate->variances;
}

void add_keyframe(SessionState& s, const FrameObservation& frame) {
    const SessionConfig& cfg = s.config;
    const TargetPose& target = *s.current_target;
    const PoseGroup group = target.group;
    s.keyframes.push_back(frame);
    s.keyframe_groups.push_back(group);
    s.estimate = calibrate_from(s.keyframes, cfg.board, cfg.image_size, s.estimate->intrinsics, s.estimate->poses);

    // Ratio against the previous keyframe; only parameters of the captured group are tested.
    for (int i = 0; i < kNumIntrinsics; ++i) {
        auto& done = s.converged[static_cast<std::size_t>(i)];
        const double old = s.previous_variance[i];
        if (!done && group_of(i) == group) {
            done = old > 0.0 ? convergence_step(i, s.estimate->variances[i], old, cfg.convergence_threshold) : true;
        }
    }
    s.previous_variance = s.estimate->variances;
    record(s, group, target.parameter);
}

}  // namespace

std::pair<SessionState, FrameVerdict> submit_frame(const SessionState& state, const FrameObservation& frame,
                                                   const FrameObservation& frame_prev) {
    validate_frame(frame, state.config.board);
    SessionState s = state;
    s.last_frame = frame;
    FrameVerdict verdict;
    const SessionConfig& cfg = s.config;

    if (s.phase == Phase::Converged) {
        verdict.reason = VerdictReason::SessionComplete;
        return {std::move(s), verdict};
    }

    const bool init = initializing(s.phase);
    const int frames_so_far = static_cast<int>(s.keyframes.size());
    const IntrinsicParams& c = s.current_intrinsics();

    // Observed board outline, for the overlap with the target overlay.
    if (s.current_target && frame.size() >= 4) {
        try {
            verdict.jaccard = jaccard_overlap(*s.current_target, estimate_pose(frame, cfg.board, c), c, cfg.board);
        } catch (const std::runtime_error&) {
            verdict.jaccard.reset();
        }
    }

    if (frame.size() < min_points_required(frames_so_far, init, cfg)) {
        verdict.reason = VerdictReason::TooFewPoints;
        return {std::move(s), verdict};
    }
    if (!is_still(frame, frame_prev, cfg.stillness_px)) {
        verdict.reason = VerdictReason::NotStill;
        return {std::move(s), verdict};
    }
    if (s.phase != Phase::AwaitingBootstrap && !(verdict.jaccard.value_or(0.0) > cfg.jaccard_min)) {
        verdict.reason = VerdictReason::PoseNotReached;
        return {std::move(s), verdict};
    }

    verdict.accepted = true;
    verdict.reason = VerdictReason::Accepted;
    ++s.frames_captured;

    switch (s.phase) {
        case Phase::AwaitingBootstrap: {
            const BootstrapResult b = bootstrap_single_frame(frame, cfg.board, cfg.image_size);
            if (!b.low_confidence) {
                s.guess = b.intrinsics;
            }
            s.bootstrap = b;
            s.phase = Phase::AwaitingInit1;
            s.current_target = init_targets(cfg.board, cfg.image_size, s.guess, cfg.poses)[0];
            break;
        }
        case Phase::AwaitingInit1:
            s.keyframes.push_back(frame);
            s.keyframe_groups.push_back(PoseGroup::Init);
            s.phase = Phase::AwaitingInit2;
            s.current_target = init_targets(cfg.board, cfg.image_size, s.guess, cfg.poses)[1];
            break;
        case Phase::AwaitingInit2:
            s.keyframes.push_back(frame);
            s.keyframe_groups.push_back(PoseGroup::Init);
            initialize_estimate(s);
            record(s, PoseGroup::Init, std::nullopt);
            s.phase = Phase::Refining;
            select_target(s);
            break;
        case Phase::Refining:
            add_keyframe(s, frame);
            if (std::all_of(s.converged.begin(), s.converged.end(), [](bool b) { return b; })) {
                s.phase = Phase::Converged;
                s.current_target.reset();
            } else {
                select_target(s);
            }
            break;
        case Phase::Converged:
            break;
    }
    return {std::move(s), verdict};
}

}  // namespace posecal
