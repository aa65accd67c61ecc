#include "posecal/polygon.hpp"

#include <algorithm>
#include <cmath>

namespace posecal {

namespace {

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

Polygon oriented_ccw(const Polygon& poly) {
    if (signed_area(poly) >= 0.0) {
        return poly;
    }
    return Polygon(poly.rbegin(), poly.rend());
}

}  // namespace

double signed_area(const Polygon& poly) {
    double area = 0.0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        area += cross(poly[i], poly[(i + 1) % n]);
    }
    return 0.5 * area;
}

double polygon_area(const Polygon& poly) { return std::abs(signed_area(poly)); }

Eigen::Vector2d polygon_centroid(const Polygon& poly) {
    const double a = signed_area(poly);
    if (a == 0.0) {
        Eigen::Vector2d mean = Eigen::Vector2d::Zero();
        for (const auto& p : poly) {
            mean += p;
        }
        return poly.empty() ? mean : Eigen::Vector2d(mean / static_cast<double>(poly.size()));
    }
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % n];
        c += (p + q) * cross(p, q);
    }
    return c / (6.0 * a);
}

bool is_convex(const Polygon& poly) {
    const std::size_t n = poly.size();
    if (n < 3) {
        return false;
    }
    int sign = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d e1 = poly[(i + 1) % n] - poly[i];
        const Eigen::Vector2d e2 = poly[(i + 2) % n] - poly[(i + 1) % n];
        const double z = cross(e1, e2);
        if (z == 0.0) {
            continue;
        }
        const int s = z > 0.0 ? 1 : -1;
        if (sign != 0 && s != sign) {
            return false;
        }
        sign = s;
    }
    return sign != 0;
}

Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
    const Polygon edges = oriented_ccw(clip);
    Polygon output = subject;
    const std::size_t n = edges.size();
    for (std::size_t i = 0; i < n && !output.empty(); ++i) {
        const Eigen::Vector2d a = edges[i];
        const Eigen::Vector2d b = edges[(i + 1) % n];
        const Eigen::Vector2d dir = b - a;
        const auto inside = [&](const Eigen::Vector2d& p) { return cross(dir, p - a) >= 0.0; };
        const auto intersect = [&](const Eigen::Vector2d& p, const Eigen::Vector2d& q) {
            const double dp = cross(dir, p - a);
            const double dq = cross(dir, q - a);
            return Eigen::Vector2d(p + (q - p) * (dp / (dp - dq)));
        };

        Polygon input;
        input.swap(output);
        for (std::size_t j = 0; j < input.size(); ++j) {
            const auto& cur = input[j];
            const auto& prev = input[(j + input.size() - 1) % input.size()];
            const bool cur_in = inside(cur);
            const bool prev_in = inside(prev);
            if (cur_in) {
                if (!prev_in) {
                    output.push_back(intersect(prev, cur));
                }
                output.push_back(cur);
            } else if (prev_in) {
                output.push_back(intersect(prev, cur));
            }
        }
    }
    return output;
}

double convex_jaccard(const Polygon& a, const Polygon& b) {
    const double area_a = polygon_area(a);
    const double area_b = polygon_area(b);
    if (!(area_a > 0.0) || !(area_b > 0.0)) {
        return 0.0;
    }
    const double inter = polygon_area(clip_convex(a, b));
    const double uni = area_a + area_b - inter;
    if (!(uni > 0.0)) {
        return 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace posecal
