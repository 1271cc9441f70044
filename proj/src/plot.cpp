#include "naturalfinger/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "naturalfinger/util.hpp"

namespace nf::plot {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 20, kTop = 40, kBottom = 70;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

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

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

struct Frame {
    double y_lo, y_hi;
    double px(double fx) const { return kLeft + fx * (kWidth - kLeft - kRight); }
    double py(double y) const {
        return kHeight - kBottom - (y - y_lo) / (y_hi - y_lo) * (kHeight - kTop - kBottom);
    }
};

void header(std::ostringstream& os, const std::string& title, const Frame& f) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
       << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double y = f.y_lo + (f.y_hi - f.y_lo) * k / 4.0;
        os << "<line x1=\"" << kLeft << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << num(f.py(y)) << "\" y2=\""
           << num(f.py(y)) << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(f.py(y) + 4) << "\" text-anchor=\"end\">" << num(y)
           << "</text>\n";
    }
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft << "\" y1=\"" << kTop << "\" y2=\"" << kHeight - kBottom
       << "\" stroke=\"black\"/>\n";
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                       const std::vector<Series>& series) {
    const Frame f{0.0, 1.0};
    std::ostringstream os;
    header(os, title, f);
    const double x_lo = x.empty() ? 0.0 : x.front(), x_hi = x.empty() ? 1.0 : x.back();
    const double span = x_hi > x_lo ? x_hi - x_lo : 1.0;
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << f.py(0) << "\" y2=\""
       << f.py(0) << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = x_lo + span * k / 4.0;
        os << "<text x=\"" << num(f.px(k / 4.0)) << "\" y=\"" << f.py(0) + 16 << "\" text-anchor=\"middle\">"
           << num(v) << "</text>\n";
    }
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 30 << "\" text-anchor=\"middle\">"
       << escape(x_label) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % std::size(kColors)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        const std::size_t n = std::min(x.size(), series[s].y.size());
        for (std::size_t i = 0; i < n; ++i) {
            os << num(f.px((x[i] - x_lo) / span)) << "," << num(f.py(series[s].y[i])) << " ";
        }
        os << "\"/>\n";
        os << "<text x=\"" << kLeft + 10 + 150 * static_cast<double>(s) << "\" y=\"" << kHeight - 10
           << "\" fill=\"" << color << "\">" << escape(series[s].name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<double>& values) {
    double lo = 0.0, hi = 1.0;
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const Frame f{lo, hi};
    std::ostringstream os;
    header(os, title, f);
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << num(f.py(0)) << "\" y2=\""
       << num(f.py(0)) << "\" stroke=\"black\"/>\n";
    const std::size_t n = std::min(labels.size(), values.size());
    const double slot = n ? 1.0 / static_cast<double>(n) : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x0 = f.px(slot * (static_cast<double>(i) + 0.15));
        const double x1 = f.px(slot * (static_cast<double>(i) + 0.85));
        const double y0 = f.py(std::max(0.0, values[i])), y1 = f.py(std::min(0.0, values[i]));
        os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(x1 - x0) << "\" height=\""
           << num(y1 - y0) << "\" fill=\"" << kColors[0] << "\"/>\n";
        const double cx = (x0 + x1) / 2, ly = kHeight - kBottom + 14;
        os << "<text x=\"" << num(cx) << "\" y=\"" << num(ly) << "\" text-anchor=\"end\" transform=\"rotate(-35 "
           << num(cx) << " " << num(ly) << ")\">" << escape(labels[i]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_svg(const std::filesystem::path& path, const std::string& svg) { atomic_write(path, svg); }

}  // namespace nf::plot
