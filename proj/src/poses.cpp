#include "posecal/poses.hpp"
#include "posecal/errors.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace posecal {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;
constexpr int kEdgeSamples = 16;

Eigen::Matrix3d roll(double deg) { return Eigen::AngleAxisd(deg * kDeg, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

BoardPose centered_pose(const BoardGeometry& board, const Eigen::Matrix3d& r, const Eigen::Vector3d& center) {
    return BoardPose::from_rotation_matrix(r, center - r * board.center());
}

// Board-plane points along the outer edges.
std::vector<Eigen::Vector3d> outline_samples(const BoardGeometry& board) {
    const auto corners = board.outline();
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(4 * kEdgeSamples);
    for (std::size_t i = 0; i < 4; ++i) {
        const Eigen::Vector3d& a = corners[i];
        const Eigen::Vector3d& b = corners[(i + 1) % 4];
        for (int k = 0; k < kEdgeSamples; ++k) {
            pts.push_back(a + (b - a) * (static_cast<double>(k) / kEdgeSamples));
        }
    }
    return pts;
}

// Bounding box of the projected outline; nullopt if any sample is behind the camera.
std::optional<Eigen::Vector4d> projected_bounds(const std::vector<Eigen::Vector3d>& samples, const BoardPose& pose,
                                                const IntrinsicParams& c) {
    Eigen::Vector4d box(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity());
    for (const auto& s : samples) {
        if (pose.transform(s).z() <= 0.0) {
            return std::nullopt;
        }
        const Eigen::Vector2d p = project(s, pose, c);
        if (!p.allFinite()) {
            return std::nullopt;
        }
        box[0] = std::min(box[0], p.x());
        box[1] = std::min(box[1], p.y());
        box[2] = std::max(box[2], p.x());
        box[3] = std::max(box[3], p.y());
    }
    return box;
}

bool inside_rect(const std::vector<Eigen::Vector3d>& samples, const BoardPose& pose, const IntrinsicParams& c,
                 const Eigen::Vector4d& rect) {
    const auto box = projected_bounds(samples, pose, c);
    return box && (*box)[0] >= rect[0] && (*box)[1] >= rect[1] && (*box)[2] <= rect[2] && (*box)[3] <= rect[3];
}

// Squared normalized radius of the first fold of the radial profile, or infinity.
double fold_radius2(const IntrinsicParams& c) {
    const auto slope = [&](double u) { return 1.0 + u * (3.0 * c.k1 + u * (5.0 * c.k2 + u * 7.0 * c.k3)); };
    const double du = 1e-3;
    for (double u = du; u <= 16.0; u += du) {
        if (slope(u) <= 0.0) {
            double lo = u - du, hi = u;
            for (int i = 0; i < 50; ++i) {
                const double mid = 0.5 * (lo + hi);
                (slope(mid) > 0.0 ? lo : hi) = mid;
            }
            return lo;
        }
    }
    return std::numeric_limits<double>::infinity();
}

// Closest placement along the viewing direction `dir` whose outline fits the inset
// image under both the estimate and its pinhole part (the latter guards against
// distortion folding the outline back into view).
BoardPose place_in_view(const BoardGeometry& board, const Eigen::Matrix3d& r, const Eigen::Vector3d& dir,
                        const IntrinsicParams& c, ImageSize size, double margin_fraction) {
    const std::vector<Eigen::Vector3d> samples = outline_samples(board);
    const Eigen::Vector4d rect(margin_fraction * size.width, margin_fraction * size.height,
                               (1.0 - margin_fraction) * size.width, (1.0 - margin_fraction) * size.height);
    const IntrinsicParams pin = c.pinhole_only();
    const auto fits = [&](double d) {
        const BoardPose pose = centered_pose(board, r, d * dir);
        return inside_rect(samples, pose, pin, rect) && inside_rect(samples, pose, c, rect);
    };

    double hi = std::max(board.width(), board.height());
    int guard = 0;
    while (!fits(hi)) {
        hi *= 2.0;
        if (++guard > 40) {
            throw NoVisiblePlacement("board cannot be placed inside the image");
        }
    }
    double lo = hi;
    guard = 0;
    while (fits(lo) && guard++ < 60) {
        lo *= 0.5;
    }
    if (fits(lo)) {
        return centered_pose(board, r, lo * dir);
    }
    for (int i = 0; i < 60; ++i) {
        const double mid = 0.5 * (lo + hi);
        (fits(mid) ? hi : lo) = mid;
    }
    return centered_pose(board, r, hi * dir);
}

double angle_to_image_axes_deg(const Eigen::Vector2d& dir) {
    const double a = std::atan2(std::abs(dir.y()), std::abs(dir.x())) / kDeg;  // [0, 90]
    return std::min(a, 90.0 - a);
}

}  // namespace

int VisitedMask::count() const { return static_cast<int>(std::count(bits.begin(), bits.end(), true)); }

double subdivision_fraction(int step) {
    if (step < 0) {
        throw std::invalid_argument("subdivision step must be non-negative");
    }
    // depth d >= 2 contributes 2^(d-1) odd numerators; steps before depth d: 2^(d-1) - 2
    int depth = 2;
    long long offset = 0;
    while (step - offset >= (1LL << (depth - 1))) {
        offset += 1LL << (depth - 1);
        ++depth;
    }
    const long long index = step - offset;
    return std::ldexp(static_cast<double>(2 * index + 1), -depth);
}

Polygon project_outline(const BoardGeometry& board, const BoardPose& pose, const IntrinsicParams& c) {
    Polygon out;
    for (const auto& corner : board.outline()) {
        out.push_back(project(corner, pose, c));
    }
    return out;
}

double image_coverage(const Polygon& poly, ImageSize size) {
    const Polygon rect = {{0.0, 0.0},
                          {static_cast<double>(size.width), 0.0},
                          {static_cast<double>(size.width), static_cast<double>(size.height)},
                          {0.0, static_cast<double>(size.height)}};
    return polygon_area(clip_convex(poly, rect)) / (static_cast<double>(size.width) * size.height);
}

bool outline_inside_image(const BoardGeometry& board, const BoardPose& pose, const IntrinsicParams& c,
                          ImageSize size, double margin_px) {
    const Eigen::Vector4d rect(margin_px, margin_px, size.width - margin_px, size.height - margin_px);
    return inside_rect(outline_samples(board), pose, c, rect);
}

std::optional<double> reflection_residual(const BoardPose& a, const BoardPose& b, double min_tilt_deg) {
    // The vanishing line of a plane with camera-frame normal n is n . (x, y, 1) = 0
    // in normalized coordinates; its direction is perpendicular to (n_x, n_y).
    const Eigen::Vector3d na = a.rotation_matrix().col(2);
    const Eigen::Vector3d nb = b.rotation_matrix().col(2);
    const Eigen::Vector2d ga(na.x(), na.y());
    const Eigen::Vector2d gb(nb.x(), nb.y());
    // |(n_x, n_y)| is the sine of the tilt; near-parallel planes have no usable vanishing line
    const double min_sine = std::max(1e-9, std::sin(min_tilt_deg * kDeg));
    if (ga.norm() < min_sine || gb.norm() < min_sine) {
        return std::nullopt;
    }
    const Eigen::Vector2d ua = Eigen::Vector2d(-ga.y(), ga.x()).normalized();
    const Eigen::Vector2d ub = Eigen::Vector2d(-gb.y(), gb.x()).normalized();
    // Mirroring about a vertical and about a horizontal line maps a direction to
    // the same line direction (-u_x, u_y) ~ (u_x, -u_y).
    const Eigen::Vector2d mirrored(-ua.x(), ua.y());
    return std::abs(mirrored.x() * ub.y() - mirrored.y() * ub.x());
}

SingularityReport check_singularities(const BoardPose& pose, std::span<const BoardPose> prior_poses,
                                      const BoardGeometry& board, const PoseConfig& config) {
    SingularityReport report;
    const Eigen::Matrix3d r = pose.rotation_matrix();
    const double cos_normal = std::clamp(std::abs(r(2, 2)), 0.0, 1.0);
    report.parallel_to_image_plane = std::acos(cos_normal) / kDeg < config.parallel_tolerance_deg;

    const Eigen::Vector3d xc = pose.transform(board.center());
    if (xc.z() > 0.0) {
        for (int axis = 0; axis < 2; ++axis) {
            const Eigen::Vector3d d = r.col(axis);
            const Eigen::Vector2d img(d.x() * xc.z() - xc.x() * d.z(), d.y() * xc.z() - xc.y() * d.z());
            if (img.norm() > 0.0 && angle_to_image_axes_deg(img) < config.axis_tolerance_deg) {
                report.axis_aligned = true;
            }
        }
    }

    for (std::size_t i = 0; i < prior_poses.size(); ++i) {
        const auto res = reflection_residual(pose, prior_poses[i], config.parallel_tolerance_deg);
        if (res && *res < config.reflection_tolerance) {
            report.reflection_violation = true;
            report.reflected_with.push_back(static_cast<int>(i));
        }
    }
    return report;
}

TargetPose pinhole_target(int parameter, int step, const BoardGeometry& board, const IntrinsicParams& c,
                          ImageSize size, std::span<const BoardPose> prior_poses, const PoseConfig& config) {
    if (!is_pinhole_param(parameter)) {
        throw std::invalid_argument("pinhole_target needs one of fx, fy, cx, cy");
    }
    if (step < 0) {
        throw std::invalid_argument("subdivision step must be non-negative");
    }
    // fx and cx tilt about the camera y axis, fy and cy about the x axis
    const Eigen::Vector3d axis =
        (parameter == kFx || parameter == kCx) ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitX();
    Eigen::Vector3d dir(0.0, 0.0, 1.0);
    if (parameter == kCx) {
        dir.x() = config.principal_shift_fraction * size.width / c.fx;
    } else if (parameter == kCy) {
        dir.y() = config.principal_shift_fraction * size.height / c.fy;
    }

    for (int s = step; s <= step + config.max_step_skips; ++s) {
        const double t = subdivision_fraction(s);
        const double tilt = config.min_tilt_deg + (config.max_tilt_deg - config.min_tilt_deg) * t;
        const Eigen::Matrix3d r =
            roll(config.in_plane_rotation_deg) * Eigen::AngleAxisd(tilt * kDeg, axis).toRotationMatrix();
        const BoardPose pose = place_in_view(board, r, dir, c, size, config.inside_margin_fraction);
        if (check_singularities(pose, prior_poses, board, config).any()) {
            continue;
        }
        TargetPose target;
        target.pose = pose;
        target.group = PoseGroup::Pinhole;
        target.parameter = parameter;
        target.overlay = project_outline(board, pose, c);
        target.step = s;
        return target;
    }
    throw NoVisiblePlacement("no non-singular pinhole pose found");
}

DistortionTargetResult distortion_target(const DistortionMap& map, const VisitedMask& visited,
                                         const BoardGeometry& board, const IntrinsicParams& c, ImageSize size,
                                         const PoseConfig& config) {
    if (visited.cols != map.cols || visited.rows != map.rows) {
        throw std::invalid_argument("visited mask does not match the distortion map");
    }
    if (visited.full()) {
        throw MapExhausted("every distortion map region has been visited");
    }

    double max_value = 0.0;
    for (int row = 0; row < map.rows; ++row) {
        for (int col = 0; col < map.cols; ++col) {
            if (!visited.at(col, row)) {
                max_value = std::max(max_value, map.at(col, row));
            }
        }
    }
    const double threshold = config.distortion_threshold * max_value;
    const auto candidate = [&](int col, int row) { return !visited.at(col, row) && map.at(col, row) >= threshold; };

    // Largest 4-connected component; ties go to the topmost, then leftmost box.
    std::vector<int> label(static_cast<std::size_t>(map.cols) * map.rows, -1);
    int best_size = 0;
    Eigen::Vector4i best_box(0, 0, 0, 0);  // col0, row0, col1, row1 (inclusive)
    int next_label = 0;
    for (int row = 0; row < map.rows; ++row) {
        for (int col = 0; col < map.cols; ++col) {
            const std::size_t idx = static_cast<std::size_t>(row) * map.cols + col;
            if (label[idx] >= 0 || !candidate(col, row)) {
                continue;
            }
            Eigen::Vector4i box(col, row, col, row);
            int count = 0;
            std::deque<std::array<int, 2>> queue{{col, row}};
            label[idx] = next_label;
            while (!queue.empty()) {
                const auto [cc, rr] = queue.front();
                queue.pop_front();
                ++count;
                box = Eigen::Vector4i(std::min(box[0], cc), std::min(box[1], rr), std::max(box[2], cc),
                                      std::max(box[3], rr));
                const int nbrs[4][2] = {{cc - 1, rr}, {cc + 1, rr}, {cc, rr - 1}, {cc, rr + 1}};
                for (const auto& n : nbrs) {
                    if (n[0] < 0 || n[1] < 0 || n[0] >= map.cols || n[1] >= map.rows) {
                        continue;
                    }
                    const std::size_t nidx = static_cast<std::size_t>(n[1]) * map.cols + n[0];
                    if (label[nidx] < 0 && candidate(n[0], n[1])) {
                        label[nidx] = next_label;
                        queue.push_back({n[0], n[1]});
                    }
                }
            }
            ++next_label;
            const bool better = count > best_size ||
                                (count == best_size && (box[1] < best_box[1] ||
                                                        (box[1] == best_box[1] && box[0] < best_box[0])));
            if (better) {
                best_size = count;
                best_box = box;
            }
        }
    }

    DistortionTargetResult out;
    out.visited = visited;
    for (int row = best_box[1]; row <= best_box[3]; ++row) {
        for (int col = best_box[0]; col <= best_box[2]; ++col) {
            if (!out.visited.at(col, row)) {
                out.visited.set(col, row);
                out.marked.push_back({col, row});
            }
        }
    }
    const Eigen::Vector4i first = map.cell_rect(best_box[0], best_box[1]);
    const Eigen::Vector4i last = map.cell_rect(best_box[2], best_box[3]);
    out.aabb = Eigen::Vector4i(first[0], first[1], last[2], last[3]);

    // Fronto-parallel board, top-left on the box, projected width a fixed fraction
    // of the image under the estimate; shifted back inside if it would leave it.
    const double target_width = config.distortion_width_fraction * size.width;
    // past a fold of the estimated radial profile the pinhole ray stands in
    const Eigen::Vector2d corner(out.aabb[0], out.aabb[1]);
    const Eigen::Vector2d anchor = try_pixel_to_normalized(corner, c).value_or(
        Eigen::Vector2d((corner.x() - c.cx) / c.fx, (corner.y() - c.cy) / c.fy));
    const std::vector<Eigen::Vector3d> samples = outline_samples(board);
    double depth = c.fx * board.width() / target_width;
    Eigen::Vector2d ray = anchor;
    const auto make_pose = [&](const Eigen::Vector2d& r) {
        return BoardPose::from_rotation_matrix(Eigen::Matrix3d::Identity(), depth * r.homogeneous());
    };
    // keep the whole fronto-parallel board inside the fold radius, where the estimate is monotone
    const double limit = 0.95 * std::sqrt(fold_radius2(c));
    const auto within_fold = [&](const Eigen::Vector2d& r) {
        const auto reach = [&](double t) {
            double m = 0.0;
            for (const auto& s : samples) {
                m = std::max(m, (t * r + s.head<2>() / depth).norm());
            }
            return m;
        };
        if (reach(1.0) <= limit) {
            return r;
        }
        double lo = 0.0, hi = 1.0;
        for (int i = 0; i < 40; ++i) {
            const double mid = 0.5 * (lo + hi);
            (reach(mid) <= limit ? lo : hi) = mid;
        }
        return Eigen::Vector2d(lo * r);
    };
    const double margin = 1.0;
    for (int outer = 0; outer < 20; ++outer) {
        ray = within_fold(anchor);
        for (int iter = 0; iter < 50; ++iter) {
            const auto box = projected_bounds(samples, make_pose(ray), c);
            if (!box) {
                break;
            }
            Eigen::Vector2d shift = Eigen::Vector2d::Zero();
            if ((*box)[0] < margin) {
                shift.x() = margin - (*box)[0];
            } else if ((*box)[2] > size.width - margin) {
                shift.x() = size.width - margin - (*box)[2];
            }
            if ((*box)[1] < margin) {
                shift.y() = margin - (*box)[1];
            } else if ((*box)[3] > size.height - margin) {
                shift.y() = size.height - margin - (*box)[3];
            }
            if (shift.isZero()) {
                break;
            }
            // overshoot slightly so the iteration settles strictly inside
            const Eigen::Vector2d next = within_fold(ray + Eigen::Vector2d(1.02 * shift.x() / c.fx, 1.02 * shift.y() / c.fy));
            if ((next - ray).norm() < 1e-12) {
                break;
            }
            ray = next;
        }
        const auto box = projected_bounds(samples, make_pose(ray), c);
        if (!box) {
            break;
        }
        const double width = (*box)[2] - (*box)[0];
        if (std::abs(width - target_width) < 0.5) {
            break;
        }
        depth *= width / target_width;
    }

    out.target.pose = make_pose(ray);
    out.target.group = PoseGroup::Distortion;
    out.target.overlay = project_outline(board, out.target.pose, c);
    return out;
}

std::array<TargetPose, 2> init_targets(const BoardGeometry& board, ImageSize size, const IntrinsicParams& c,
                                       const PoseConfig& config) {
    if (!(c.fx > 0.0) || !(c.fy > 0.0)) {
        throw std::invalid_argument("init targets need positive focal lengths");
    }
    std::array<TargetPose, 2> out;
    const Eigen::Matrix3d r1 = roll(config.in_plane_rotation_deg) *
                               Eigen::AngleAxisd(config.init_tilt_deg * kDeg, Eigen::Vector3d::UnitX()).toRotationMatrix();
    out[0].pose = place_in_view(board, r1, Eigen::Vector3d::UnitZ(), c, size, config.inside_margin_fraction);
    out[0].group = PoseGroup::Init;
    out[0].overlay = project_outline(board, out[0].pose, c);

    const double depth = c.fx * board.width() / size.width;
    out[1].pose = centered_pose(board, Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.0, 0.0, depth));
    out[1].group = PoseGroup::Init;
    out[1].overlay = project_outline(board, out[1].pose, c);
    return out;
}

}  // namespace posecal
