#include "csra/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csra/error.hpp"

namespace csra::plot {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 80, kRight = 150, kTop = 50, kBottom = 60;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

class Svg {
public:
    Svg(double w, double h) {
        out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
             << "\" viewBox=\"0 0 " << w << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
             << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    }
    void text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12,
              double rotate = 0.0) {
        out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\" font-size=\""
             << size << '"';
        if (rotate != 0.0) out_ << " transform=\"rotate(" << num(rotate) << ' ' << num(x) << ' ' << num(y) << ")\"";
        out_ << '>' << escape(s) << "</text>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill, const char* stroke = "none") {
        out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
             << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
        out_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
             << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
        out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : pts) out_ << num(x) << ',' << num(y) << ' ';
        out_ << "\"/>\n";
    }
    void circle(double x, double y, double r, const std::string& fill) {
        out_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\" fill=\"" << fill
             << "\"/>\n";
    }
    void write(const std::filesystem::path& path) {
        out_ << "</svg>\n";
        std::ofstream f(path);
        if (!f) throw DataError("cannot write " + path.string());
        f << out_.str();
    }

private:
    std::ostringstream out_;
};

// Sequential white-to-blue ramp over [0, 1].
std::string ramp(double t) {
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    const int r = static_cast<int>(std::lround(255 - t * (255 - 8)));
    const int g = static_cast<int>(std::lround(255 - t * (255 - 69)));
    const int b = static_cast<int>(std::lround(255 - t * (255 - 148)));
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

struct Range {
    double lo, hi;
    double map(double v, double a, double b) const { return hi > lo ? a + (v - lo) / (hi - lo) * (b - a) : 0.5 * (a + b); }
};

Range padded(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
    if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

void axes(Svg& svg, const Range& x, const Range& y, const std::string& x_label, const std::string& y_label) {
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    svg.line(x0, y0, x1, y0, "black");
    svg.line(x0, y0, x0, y1, "black");
    for (int i = 0; i <= 4; ++i) {
        const double vy = y.lo + (y.hi - y.lo) * i / 4.0;
        const double py = y.map(vy, y0, y1);
        svg.line(x0 - 4, py, x0, py, "black");
        svg.text(x0 - 6, py + 4, num(vy), "end", 10);
        const double vx = x.lo + (x.hi - x.lo) * i / 4.0;
        const double px = x.map(vx, x0, x1);
        svg.line(px, y0, px, y0 + 4, "black");
        svg.text(px, y0 + 16, num(vx), "middle", 10);
    }
    svg.text(0.5 * (x0 + x1), kHeight - 15, x_label);
    svg.text(20, 0.5 * (y0 + y1), y_label, "middle", 12, -90);
}

}  // namespace

void heatmap(const std::filesystem::path& path, const Mat& values, const std::vector<std::string>& row_labels,
             const std::vector<std::string>& col_labels, const std::string& title) {
    if (static_cast<std::size_t>(values.rows()) != row_labels.size() ||
        static_cast<std::size_t>(values.cols()) != col_labels.size())
        throw SchemaError("heatmap: label counts differ from the value shape");
    const double cell_w = 90, cell_h = 28, left = 90, top = 60;
    Svg svg(left + cell_w * static_cast<double>(values.cols()) + 40, top + cell_h * static_cast<double>(values.rows()) + 40);
    svg.text(left + 0.5 * cell_w * static_cast<double>(values.cols()), 25, title, "middle", 14);
    const double hi = values.size() > 0 ? values.maxCoeff() : 0.0;
    for (Eigen::Index c = 0; c < values.cols(); ++c)
        svg.text(left + cell_w * (static_cast<double>(c) + 0.5), top - 8, col_labels[static_cast<std::size_t>(c)]);
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        const double y = top + cell_h * static_cast<double>(r);
        svg.text(left - 8, y + cell_h * 0.5 + 4, row_labels[static_cast<std::size_t>(r)], "end");
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            const double v = values(r, c);
            const double t = hi > 0.0 ? v / hi : 0.0;
            svg.rect(left + cell_w * static_cast<double>(c), y, cell_w, cell_h, ramp(t), "#cccccc");
            svg.text(left + cell_w * (static_cast<double>(c) + 0.5), y + cell_h * 0.5 + 4, num(v), "middle", 11);
        }
    }
    svg.write(path);
}

void bar_chart(const std::filesystem::path& path, const std::vector<double>& values,
               const std::vector<std::string>& labels, const std::string& title, const std::string& y_label) {
    if (values.size() != labels.size()) throw SchemaError("bar chart: label count differs from value count");
    Svg svg(kWidth, kHeight);
    svg.text(kWidth / 2, 25, title, "middle", 14);
    double hi = 0.0;
    for (double v : values) hi = std::max(hi, v);
    const Range y{0.0, hi > 0.0 ? hi * 1.1 : 1.0};
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    svg.line(x0, y0, x1, y0, "black");
    svg.line(x0, y0, x0, y1, "black");
    for (int i = 0; i <= 4; ++i) {
        const double v = y.hi * i / 4.0;
        svg.text(x0 - 6, y.map(v, y0, y1) + 4, num(v), "end", 10);
    }
    svg.text(20, 0.5 * (y0 + y1), y_label, "middle", 12, -90);
    const double slot = values.empty() ? 0.0 : (x1 - x0) / static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double top = y.map(values[i], y0, y1);
        svg.rect(x0 + slot * static_cast<double>(i) + 0.15 * slot, top, 0.7 * slot, y0 - top, kPalette[0]);
        svg.text(x0 + slot * (static_cast<double>(i) + 0.5), y0 + 16, labels[i], "middle", 11);
        svg.text(x0 + slot * (static_cast<double>(i) + 0.5), top - 4, num(values[i]), "middle", 9);
    }
    svg.write(path);
}

void line_chart(const std::filesystem::path& path, const std::vector<Series>& series, const std::string& title,
                const std::string& x_label, const std::string& y_label) {
    double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size() || (!s.err.empty() && s.err.size() != s.y.size()))
            throw SchemaError("line chart: series '" + s.name + "' has mismatched lengths");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double e = s.err.empty() || !std::isfinite(s.err[i]) ? 0.0 : s.err[i];
            xlo = std::min(xlo, s.x[i]);
            xhi = std::max(xhi, s.x[i]);
            ylo = std::min(ylo, s.y[i] - e);
            yhi = std::max(yhi, s.y[i] + e);
        }
    }
    const Range x = padded(xlo, xhi), y = padded(ylo, yhi);
    Svg svg(kWidth, kHeight);
    svg.text(kWidth / 2, 25, title, "middle", 14);
    axes(svg, x, y, x_label, y_label);
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const std::string colour = kPalette[k % std::size(kPalette)];
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double px = x.map(s.x[i], x0, x1), py = y.map(s.y[i], y0, y1);
            pts.emplace_back(px, py);
            svg.circle(px, py, 3, colour);
            if (!s.err.empty() && std::isfinite(s.err[i]) && s.err[i] > 0.0)
                svg.line(px, y.map(s.y[i] - s.err[i], y0, y1), px, y.map(s.y[i] + s.err[i], y0, y1), colour);
        }
        svg.polyline(pts, colour);
        const double ly = kTop + 18.0 * static_cast<double>(k);
        svg.line(x1 + 12, ly, x1 + 32, ly, colour, 2);
        svg.text(x1 + 38, ly + 4, s.name, "start", 11);
    }
    svg.write(path);
}

}  // namespace csra::plot
