#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace tinytrain {

struct SvgPlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  double marker_x = std::numeric_limits<double>::quiet_NaN();  // vertical marker, if finite
  std::size_t width = 720;
  std::size_t height = 440;
};

// Minimal line plot: axes, polyline, optional vertical marker. Non-finite
// samples are dropped.
inline std::string svg_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                                 const SvgPlotOptions& opt) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < std::min(xs.size(), ys.size()); ++i) {
    if (std::isfinite(xs[i]) && std::isfinite(ys[i])) keep.push_back(i);
  }
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!keep.empty()) {
    xmin = xmax = xs[keep[0]];
    ymin = ymax = ys[keep[0]];
    for (std::size_t i : keep) {
      xmin = std::min(xmin, xs[i]);
      xmax = std::max(xmax, xs[i]);
      ymin = std::min(ymin, ys[i]);
      ymax = std::max(ymax, ys[i]);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;

  double ml = 64, mr = 16, mt = 32, mb = 48;
  double pw = static_cast<double>(opt.width) - ml - mr;
  double ph = static_cast<double>(opt.height) - mt - mb;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%zu\" height=\"%zu\" "
                "viewBox=\"0 0 %zu %zu\">\n",
                opt.width, opt.height, opt.width, opt.height);
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                ml, mt + ph, ml + pw, mt + ph);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                ml, mt, ml, mt + ph);
  out += buf;

  if (!keep.empty()) {
    out += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i : keep) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(xs[i]), py(ys[i]));
      out += buf;
    }
    out += "\"/>\n";
  }
  if (std::isfinite(opt.marker_x) && opt.marker_x >= xmin && opt.marker_x <= xmax) {
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#d62728\" "
                  "stroke-dasharray=\"4 3\"/>\n",
                  px(opt.marker_x), mt, px(opt.marker_x), mt + ph);
    out += buf;
  }

  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">%s</text>\n",
                ml, opt.title.c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\">%s</text>\n",
                ml + pw / 2, mt + ph + 36, opt.x_label.c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"14\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" "
                "transform=\"rotate(-90 14 %.1f)\">%s</text>\n",
                mt + ph / 2, mt + ph / 2, opt.y_label.c_str());
  out += buf;

  // Extremes as tick labels.
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"10\">%.4g</text>\n",
                ml, mt + ph + 14, xmin);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"10\">%.4g</text>\n",
                ml + pw - 24, mt + ph + 14, xmax);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"10\">%.4g</text>\n",
                4.0, mt + ph, ymin);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"10\">%.4g</text>\n",
                4.0, mt + 10, ymax);
  out += buf;
  out += "</svg>\n";
  return out;
}

}  // namespace tinytrain
