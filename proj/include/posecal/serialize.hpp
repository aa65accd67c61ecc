#pragma once

#include "posecal/calibrate.hpp"
#include "posecal/poses.hpp"
#include "posecal/session.hpp"

#include <json.hpp>

#include <utility>

namespace posecal {

using Json = nlohmann::json;

// Parsers throw std::invalid_argument on malformed input.

[[nodiscard]] Json intrinsics_to_json(const IntrinsicParams& c);
[[nodiscard]] IntrinsicParams intrinsics_from_json(const Json& j);

/// {"intrinsics": [9], "image_size": [w, h]}
[[nodiscard]] Json camera_to_json(const IntrinsicParams& c, ImageSize size);
[[nodiscard]] std::pair<IntrinsicParams, ImageSize> camera_from_json(const Json& j);

/// [rx, ry, rz, tx, ty, tz]
[[nodiscard]] Json pose_to_json(const BoardPose& pose);
[[nodiscard]] BoardPose pose_from_json(const Json& j);

/// [[x, y], ...]
[[nodiscard]] Json polygon_to_json(const Polygon& poly);

[[nodiscard]] Json frame_to_json(const FrameObservation& frame);
[[nodiscard]] FrameObservation frame_from_json(const Json& j);

[[nodiscard]] Json calibration_to_json(const CalibrationResult& r);
[[nodiscard]] CalibrationResult calibration_from_json(const Json& j);

[[nodiscard]] Json target_to_json(const TargetPose& t);
[[nodiscard]] Json verdict_to_json(const FrameVerdict& v);

/// Phase, keyframe count, frames captured, current target, IOD, converged
/// mask and estimate. Absent values are null.
[[nodiscard]] Json session_snapshot(const SessionState& s);

}  // namespace posecal
