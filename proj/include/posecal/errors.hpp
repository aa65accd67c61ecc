#pragma once

#include <stdexcept>
#include <string>

namespace posecal {

/// A board point ended up at or behind the camera center.
class BehindCamera : public std::domain_error {
  public:
    explicit BehindCamera(const std::string& what) : std::domain_error(what) {}
};

/// Input geometry does not constrain the requested quantities (collinear
/// points, coplanar views, fronto-parallel boards, ...).
class DegenerateConfiguration : public std::runtime_error {
  public:
    explicit DegenerateConfiguration(const std::string& what) : std::runtime_error(what) {}
};

/// Fewer measurements than the estimation needs.
class InsufficientData : public std::runtime_error {
  public:
    explicit InsufficientData(const std::string& what) : std::runtime_error(what) {}
};

/// Every cell of the distortion map has already been visited.
class MapExhausted : public std::runtime_error {
  public:
    explicit MapExhausted(const std::string& what) : std::runtime_error(what) {}
};

/// No distance places the whole board inside the image.
class NoVisiblePlacement : public std::runtime_error {
  public:
    explicit NoVisiblePlacement(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace posecal
