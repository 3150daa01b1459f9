#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "grace/graph.hpp"

namespace grace {

using PointList = std::vector<std::pair<double, double>>;

enum class Marker { Circle, Star, Diamond, Square };

// Small SVG canvas with a fixed data-space viewport, axis ticks and a
// legend. Enough for line charts, scatter plots and contour overlays;
// keeps the build free of plotting backends.
class SvgPlot {
public:
    SvgPlot(double xmin, double xmax, double ymin, double ymax, int width = 720,
            int height = 540);

    void set_title(const std::string& title);
    void set_axis_labels(const std::string& xlabel, const std::string& ylabel);

    void polyline(const PointList& pts, const std::string& color, double stroke_width = 1.5);
    void scatter(const PointList& pts, const std::string& color, Marker marker,
                 double size = 4.0, const std::string& legend = "");
    void segment(double x0, double y0, double x1, double y1, const std::string& color,
                 double stroke_width = 1.0);

    // Throws std::runtime_error if the path cannot be opened.
    void save(const std::string& path) const;

private:
    std::pair<double, double> to_pixel(double x, double y) const;

    double xmin_, xmax_, ymin_, ymax_;
    int width_, height_;
    std::string title_, xlabel_, ylabel_;
    std::vector<std::string> body_;
    std::vector<std::pair<std::string, std::string>> legend_;  // color, text
};

// Iso-contour of a grid sampled on [xmin,xmax] x [ymin,ymax] (grid(i,j) is
// the value at x index i, y index j). Returns line segments in data space.
std::vector<std::array<double, 4>> contour_segments(const Mat& grid, double xmin, double xmax,
                                                    double ymin, double ymax, double level);

}  // namespace grace
