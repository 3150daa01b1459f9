#include "grace/plot.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace grace {

namespace {

constexpr int kMarginLeft = 60;
constexpr int kMarginRight = 20;
constexpr int kMarginTop = 36;
constexpr int kMarginBottom = 48;

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

SvgPlot::SvgPlot(double xmin, double xmax, double ymin, double ymax, int width, int height)
    : xmin_(xmin), xmax_(xmax), ymin_(ymin), ymax_(ymax), width_(width), height_(height) {
    if (!(xmax_ > xmin_)) xmax_ = xmin_ + 1.0;
    if (!(ymax_ > ymin_)) ymax_ = ymin_ + 1.0;
}

void SvgPlot::set_title(const std::string& title) { title_ = title; }

void SvgPlot::set_axis_labels(const std::string& xlabel, const std::string& ylabel) {
    xlabel_ = xlabel;
    ylabel_ = ylabel;
}

std::pair<double, double> SvgPlot::to_pixel(double x, double y) const {
    const double pw = width_ - kMarginLeft - kMarginRight;
    const double ph = height_ - kMarginTop - kMarginBottom;
    const double px = kMarginLeft + (x - xmin_) / (xmax_ - xmin_) * pw;
    const double py = kMarginTop + (1.0 - (y - ymin_) / (ymax_ - ymin_)) * ph;
    return {px, py};
}

void SvgPlot::polyline(const PointList& pts, const std::string& color, double stroke_width) {
    if (pts.empty()) return;
    std::ostringstream os;
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << stroke_width
       << "\" points=\"";
    for (const auto& [x, y] : pts) {
        auto [px, py] = to_pixel(x, y);
        os << fmt(px) << ',' << fmt(py) << ' ';
    }
    os << "\"/>";
    body_.push_back(os.str());
}

void SvgPlot::segment(double x0, double y0, double x1, double y1, const std::string& color,
                      double stroke_width) {
    auto [px0, py0] = to_pixel(x0, y0);
    auto [px1, py1] = to_pixel(x1, y1);
    std::ostringstream os;
    os << "<line x1=\"" << fmt(px0) << "\" y1=\"" << fmt(py0) << "\" x2=\"" << fmt(px1)
       << "\" y2=\"" << fmt(py1) << "\" stroke=\"" << color << "\" stroke-width=\""
       << stroke_width << "\"/>";
    body_.push_back(os.str());
}

void SvgPlot::scatter(const PointList& pts, const std::string& color, Marker marker, double size,
                      const std::string& legend) {
    std::ostringstream os;
    for (const auto& [x, y] : pts) {
        auto [px, py] = to_pixel(x, y);
        switch (marker) {
            case Marker::Circle:
                os << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\""
                   << fmt(size) << "\" fill=\"" << color << "\" fill-opacity=\"0.8\"/>";
                break;
            case Marker::Square:
                os << "<rect x=\"" << fmt(px - size) << "\" y=\"" << fmt(py - size)
                   << "\" width=\"" << fmt(2 * size) << "\" height=\"" << fmt(2 * size)
                   << "\" fill=\"" << color << "\"/>";
                break;
            case Marker::Diamond:
                os << "<polygon fill=\"" << color << "\" points=\"" << fmt(px) << ','
                   << fmt(py - 1.4 * size) << ' ' << fmt(px + 1.4 * size) << ',' << fmt(py) << ' '
                   << fmt(px) << ',' << fmt(py + 1.4 * size) << ' ' << fmt(px - 1.4 * size) << ','
                   << fmt(py) << "\"/>";
                break;
            case Marker::Star: {
                os << "<polygon fill=\"" << color << "\" points=\"";
                for (int k = 0; k < 10; ++k) {
                    const double r = (k % 2 == 0) ? 1.8 * size : 0.75 * size;
                    const double a = -M_PI / 2.0 + k * M_PI / 5.0;
                    os << fmt(px + r * std::cos(a)) << ',' << fmt(py + r * std::sin(a)) << ' ';
                }
                os << "\"/>";
                break;
            }
        }
    }
    body_.push_back(os.str());
    if (!legend.empty()) legend_.emplace_back(color, legend);
}

void SvgPlot::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write plot file: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
        << height_ << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // frame and ticks
    const auto [x0, y1] = to_pixel(xmin_, ymin_);
    const auto [x1, y0] = to_pixel(xmax_, ymax_);
    out << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(x1 - x0)
        << "\" height=\"" << fmt(y1 - y0) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xmin_ + (xmax_ - xmin_) * t / 4.0;
        const double fy = ymin_ + (ymax_ - ymin_) * t / 4.0;
        const auto [pxt, pyb] = to_pixel(fx, ymin_);
        const auto [pxl, pyt] = to_pixel(xmin_, fy);
        out << "<line x1=\"" << fmt(pxt) << "\" y1=\"" << fmt(pyb) << "\" x2=\"" << fmt(pxt)
            << "\" y2=\"" << fmt(pyb + 5) << "\" stroke=\"black\"/>";
        out << "<text x=\"" << fmt(pxt) << "\" y=\"" << fmt(pyb + 18)
            << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
        out << "<line x1=\"" << fmt(pxl - 5) << "\" y1=\"" << fmt(pyt) << "\" x2=\"" << fmt(pxl)
            << "\" y2=\"" << fmt(pyt) << "\" stroke=\"black\"/>";
        out << "<text x=\"" << fmt(pxl - 8) << "\" y=\"" << fmt(pyt + 4)
            << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
    }
    if (!title_.empty())
        out << "<text x=\"" << width_ / 2 << "\" y=\"20\" text-anchor=\"middle\" "
            << "font-size=\"14\">" << escape_xml(title_) << "</text>\n";
    if (!xlabel_.empty())
        out << "<text x=\"" << width_ / 2 << "\" y=\"" << height_ - 10
            << "\" text-anchor=\"middle\">" << escape_xml(xlabel_) << "</text>\n";
    if (!ylabel_.empty())
        out << "<text x=\"14\" y=\"" << height_ / 2 << "\" text-anchor=\"middle\" "
            << "transform=\"rotate(-90 14 " << height_ / 2 << ")\">" << escape_xml(ylabel_)
            << "</text>\n";

    for (const auto& b : body_) out << b << "\n";

    int ly = kMarginTop + 12;
    for (const auto& [color, text] : legend_) {
        out << "<rect x=\"" << width_ - kMarginRight - 140 << "\" y=\"" << ly - 9
            << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>";
        out << "<text x=\"" << width_ - kMarginRight - 125 << "\" y=\"" << ly << "\">"
            << escape_xml(text) << "</text>\n";
        ly += 16;
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error("failed while writing plot file: " + path);
}

std::vector<std::array<double, 4>> contour_segments(const Mat& grid, double xmin, double xmax,
                                                    double ymin, double ymax, double level) {
    std::vector<std::array<double, 4>> segments;
    const auto nx = grid.rows();
    const auto ny = grid.cols();
    if (nx < 2 || ny < 2) return segments;
    const double dx = (xmax - xmin) / static_cast<double>(nx - 1);
    const double dy = (ymax - ymin) / static_cast<double>(ny - 1);

    // marching squares: interpolate the level crossing on each cell edge
    auto lerp = [level](double a, double b, double pa, double pb) {
        const double t = (level - a) / (b - a);
        return pa + t * (pb - pa);
    };
    for (Eigen::Index i = 0; i + 1 < nx; ++i) {
        for (Eigen::Index j = 0; j + 1 < ny; ++j) {
            const double v00 = grid(i, j), v10 = grid(i + 1, j);
            const double v01 = grid(i, j + 1), v11 = grid(i + 1, j + 1);
            const double x0 = xmin + i * dx, x1 = x0 + dx;
            const double y0 = ymin + j * dy, y1 = y0 + dy;

            std::vector<std::pair<double, double>> pts;
            if ((v00 < level) != (v10 < level))
                pts.emplace_back(lerp(v00, v10, x0, x1), y0);
            if ((v10 < level) != (v11 < level))
                pts.emplace_back(x1, lerp(v10, v11, y0, y1));
            if ((v01 < level) != (v11 < level))
                pts.emplace_back(lerp(v01, v11, x0, x1), y1);
            if ((v00 < level) != (v01 < level))
                pts.emplace_back(x0, lerp(v00, v01, y0, y1));

            if (pts.size() == 2) {
                segments.push_back({pts[0].first, pts[0].second, pts[1].first, pts[1].second});
            } else if (pts.size() == 4) {
                // saddle cell: pair crossings by edge order
                segments.push_back({pts[0].first, pts[0].second, pts[1].first, pts[1].second});
                segments.push_back({pts[2].first, pts[2].second, pts[3].first, pts[3].second});
            }
        }
    }
    return segments;
}

}  // namespace grace
