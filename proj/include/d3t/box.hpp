#pragma once

namespace d3t {

/// Axis-aligned box in pixel units, center/size convention.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    [[nodiscard]] double x0() const { return cx - 0.5 * w; }
    [[nodiscard]] double x1() const { return cx + 0.5 * w; }
    [[nodiscard]] double y0() const { return cy - 0.5 * h; }
    [[nodiscard]] double y1() const { return cy + 0.5 * h; }
    [[nodiscard]] double area() const { return w * h; }

    static Box from_corners(double x0, double y0, double x1, double y1) {
        return Box{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
    }

    friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union. Throws ConfigError if either box has non-positive area.
double iou(const Box& a, const Box& b);

}  // namespace d3t
