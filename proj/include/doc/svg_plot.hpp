#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doc/errors.hpp"

namespace doc {

// Minimal line-plot writer: one SVG per figure, one polyline per series.
struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

class SvgPlot {
  public:
    SvgPlot(std::string title, std::string xlabel, std::string ylabel)
        : title_(std::move(title)), xlabel_(std::move(xlabel)),
          ylabel_(std::move(ylabel)) {}

    void add_series(PlotSeries s) {
        if (s.x.size() != s.y.size())
            throw ShapeError("SvgPlot: x/y size mismatch in " + s.label);
        series_.push_back(std::move(s));
    }

    std::string render() const {
        const double W = 640, H = 420;
        const double L = 70, R = 20, T = 40, B = 50;
        double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
        bool first = true;
        for (const auto& s : series_)
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (first) {
                    xmin = xmax = s.x[i];
                    ymin = ymax = s.y[i];
                    first = false;
                }
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
        const double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
        xmin -= xpad, xmax += xpad, ymin -= ypad, ymax += ypad;
        auto px = [&](double x) {
            return L + (x - xmin) / (xmax - xmin) * (W - L - R);
        };
        auto py = [&](double y) {
            return H - B - (y - ymin) / (ymax - ymin) * (H - T - B);
        };

        static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                       "#9467bd", "#ff7f0e", "#8c564b"};
        std::ostringstream os;
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
           << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
           << "\">\n";
        os << "<rect width=\"" << W << "\" height=\"" << H
           << "\" fill=\"white\"/>\n";
        os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" "
              "font-size=\"16\" font-family=\"sans-serif\">"
           << title_ << "</text>\n";
        // Axes.
        os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R
           << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
        os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L
           << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
        for (int k = 0; k <= 4; ++k) {
            double xv = xmin + (xmax - xmin) * k / 4.0;
            double yv = ymin + (ymax - ymin) * k / 4.0;
            os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18
               << "\" text-anchor=\"middle\" font-size=\"11\" "
                  "font-family=\"sans-serif\">"
               << fmt(xv) << "</text>\n";
            os << "<text x=\"" << L - 8 << "\" y=\"" << py(yv) + 4
               << "\" text-anchor=\"end\" font-size=\"11\" "
                  "font-family=\"sans-serif\">"
               << fmt(yv) << "</text>\n";
        }
        os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
           << "\" text-anchor=\"middle\" font-size=\"13\" "
              "font-family=\"sans-serif\">"
           << xlabel_ << "</text>\n";
        os << "<text x=\"16\" y=\"" << (T + H - B) / 2
           << "\" text-anchor=\"middle\" font-size=\"13\" "
              "font-family=\"sans-serif\" transform=\"rotate(-90 16 "
           << (T + H - B) / 2 << ")\">" << ylabel_ << "</text>\n";

        for (std::size_t si = 0; si < series_.size(); ++si) {
            const auto& s = series_[si];
            const char* color = colors[si % 6];
            os << "<polyline fill=\"none\" stroke=\"" << color
               << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                os << px(s.x[i]) << "," << py(s.y[i]) << " ";
            os << "\"/>\n";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i])
                   << "\" r=\"3\" fill=\"" << color << "\"/>\n";
            double ly = T + 16.0 * double(si);
            os << "<line x1=\"" << W - R - 130 << "\" y1=\"" << ly << "\" x2=\""
               << W - R - 110 << "\" y2=\"" << ly << "\" stroke=\"" << color
               << "\" stroke-width=\"2\"/>\n";
            os << "<text x=\"" << W - R - 104 << "\" y=\"" << ly + 4
               << "\" font-size=\"12\" font-family=\"sans-serif\">" << s.label
               << "</text>\n";
        }
        os << "</svg>\n";
        return os.str();
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("SvgPlot: cannot open " + path);
        out << render();
    }

  private:
    static std::string fmt(double v) {
        std::ostringstream os;
        os.precision(3);
        os << v;
        return os.str();
    }

    std::string title_, xlabel_, ylabel_;
    std::vector<PlotSeries> series_;
};

}  // namespace doc
