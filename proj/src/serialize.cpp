#include "posecal/serialize.hpp"

#include <stdexcept>
#include <string>
#include <tuple>

namespace posecal {

namespace {

Json vec_to_json(const Eigen::VectorXd& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(v[i]);
    }
    return out;
}

Eigen::VectorXd vec_from_json(const Json& j, Eigen::Index n, const char* what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) {
        throw std::invalid_argument(std::string(what) + ": expected an array of " + std::to_string(n) + " numbers");
    }
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Json& x = j[static_cast<std::size_t>(i)];
        if (!x.is_number()) {
            throw std::invalid_argument(std::string(what) + ": expected numbers");
        }
        v[i] = x.get<double>();
    }
    return v;
}

const Json& field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        throw std::invalid_argument(std::string("missing field '") + key + "'");
    }
    return j.at(key);
}

ImageSize size_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
        throw std::invalid_argument("image_size: expected [width, height]");
    }
    return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

Json intrinsics_to_json(const IntrinsicParams& c) { return vec_to_json(c.to_vector()); }

IntrinsicParams intrinsics_from_json(const Json& j) {
    return IntrinsicParams::from_vector(vec_from_json(j, kNumIntrinsics, "intrinsics"));
}

Json camera_to_json(const IntrinsicParams& c, ImageSize size) {
    return {{"intrinsics", intrinsics_to_json(c)}, {"image_size", {size.width, size.height}}};
}

std::pair<IntrinsicParams, ImageSize> camera_from_json(const Json& j) {
    return {intrinsics_from_json(field(j, "intrinsics")), size_from_json(field(j, "image_size"))};
}

Json pose_to_json(const BoardPose& pose) { return vec_to_json(pose.to_vector()); }

BoardPose pose_from_json(const Json& j) { return BoardPose::from_vector(vec_from_json(j, 6, "pose")); }

Json polygon_to_json(const Polygon& poly) {
    Json out = Json::array();
    for (const auto& p : poly) {
        out.push_back({p.x(), p.y()});
    }
    return out;
}

Json frame_to_json(const FrameObservation& frame) {
    Json points = Json::array();
    for (const auto& p : frame.points) {
        points.push_back({p.corner_id, p.pixel.x(), p.pixel.y()});
    }
    return {{"points", points}};
}

FrameObservation frame_from_json(const Json& j) {
    const Json& points = field(j, "points");
    if (!points.is_array()) {
        throw std::invalid_argument("points: expected an array");
    }
    FrameObservation frame;
    for (const auto& p : points) {
        if (!p.is_array() || p.size() != 3 || !p[0].is_number_integer()) {
            throw std::invalid_argument("points: expected [corner_id, x, y] entries");
        }
        const Eigen::VectorXd xy = vec_from_json(Json{p[1], p[2]}, 2, "point");
        frame.points.push_back({p[0].get<int>(), xy});
    }
    return frame;
}

Json calibration_to_json(const CalibrationResult& r) {
    Json j = camera_to_json(r.intrinsics, r.image_size);
    Json poses = Json::array();
    for (const auto& p : r.poses) {
        poses.push_back(pose_to_json(p));
    }
    j["poses"] = poses;
    j["residual_rms"] = r.residual_rms;
    j["variances"] = vec_to_json(r.variances);
    j["iod"] = vec_to_json(r.iod);
    j["rank_deficient"] = r.rank_deficient;
    return j;
}

CalibrationResult calibration_from_json(const Json& j) {
    CalibrationResult r;
    std::tie(r.intrinsics, r.image_size) = camera_from_json(j);
    const Json& poses = field(j, "poses");
    if (!poses.is_array()) {
        throw std::invalid_argument("poses: expected an array");
    }
    for (const auto& p : poses) {
        r.poses.push_back(pose_from_json(p));
    }
    const Json& rms = field(j, "residual_rms");
    const Json& deficient = field(j, "rank_deficient");
    if (!rms.is_number() || !deficient.is_boolean()) {
        throw std::invalid_argument("residual_rms must be a number and rank_deficient a boolean");
    }
    r.residual_rms = rms.get<double>();
    r.variances = vec_from_json(field(j, "variances"), kNumIntrinsics, "variances");
    r.iod = vec_from_json(field(j, "iod"), kNumIntrinsics, "iod");
    r.rank_deficient = deficient.get<bool>();
    return r;
}

Json target_to_json(const TargetPose& t) {
    Json j;
    j["pose"] = pose_to_json(t.pose);
    j["group"] = std::string(to_string(t.group));
    j["parameter"] = t.parameter ? Json(std::string(kParamNames[static_cast<std::size_t>(*t.parameter)])) : Json();
    j["overlay"] = polygon_to_json(t.overlay);
    return j;
}

Json verdict_to_json(const FrameVerdict& v) {
    return {{"accepted", v.accepted},
            {"reason", std::string(to_string(v.reason))},
            {"jaccard", v.jaccard ? Json(*v.jaccard) : Json()}};
}

Json session_snapshot(const SessionState& s) {
    Json j;
    j["phase"] = std::string(to_string(s.phase));
    j["keyframes"] = s.keyframes.size();
    j["frames_captured"] = s.frames_captured;
    j["current_target"] = s.current_target ? target_to_json(*s.current_target) : Json();
    j["iod"] = s.estimate ? vec_to_json(s.estimate->iod) : Json();
    j["converged_mask"] = s.converged;
    j["estimate"] = s.estimate ? calibration_to_json(*s.estimate) : Json();
    return j;
}

}  // namespace posecal
