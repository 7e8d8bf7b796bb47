#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "ktl/eval.hpp"

namespace ktl::eval {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};
constexpr double kWidth = 520, kHeight = 380, kLeft = 64, kRight = 150, kTop = 36, kBottom = 52;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
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

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

std::string render(const std::vector<LinePlotSeries>& series, const Frame& f, const std::string& title,
                   const std::string& x_label, const std::string& y_label) {
  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) +
       "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
       "</text>\n";
  const double ax0 = f.px(f.x0), ax1 = f.px(f.x1), ay0 = f.py(f.y0), ay1 = f.py(f.y1);
  s += "<g stroke=\"black\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + fmt(ax0) + "\" y1=\"" + fmt(ay0) + "\" x2=\"" + fmt(ax1) + "\" y2=\"" + fmt(ay0) + "\"/>\n";
  s += "<line x1=\"" + fmt(ax0) + "\" y1=\"" + fmt(ay0) + "\" x2=\"" + fmt(ax0) + "\" y2=\"" + fmt(ay1) + "\"/>\n";
  s += "</g>\n<g fill=\"black\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 5.0, yv = f.y0 + (f.y1 - f.y0) * i / 5.0;
    s += "<text x=\"" + fmt(f.px(xv)) + "\" y=\"" + fmt(ay0 + 16) + "\" text-anchor=\"middle\">" + fmt_tick(xv) +
         "</text>\n";
    s += "<text x=\"" + fmt(ax0 - 6) + "\" y=\"" + fmt(f.py(yv) + 4) + "\" text-anchor=\"end\">" + fmt_tick(yv) +
         "</text>\n";
  }
  s += "<text x=\"" + fmt((ax0 + ax1) / 2) + "\" y=\"" + fmt(kHeight - 12) + "\" text-anchor=\"middle\">" +
       escape(x_label) + "</text>\n";
  s += "<text x=\"16\" y=\"" + fmt((ay0 + ay1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt((ay0 + ay1) / 2) + ")\">" + escape(y_label) + "</text>\n</g>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < series[i].points.size(); ++k) {
      if (k) s += ' ';
      s += fmt(f.px(series[i].points[k].first)) + "," + fmt(f.py(series[i].points[k].second));
    }
    s += "\"/>\n";
    const double ly = kTop + 14 + 18 * static_cast<double>(i);
    const double lx = kWidth - kRight + 12;
    s += "<rect x=\"" + fmt(lx) + "\" y=\"" + fmt(ly - 8) + "\" width=\"14\" height=\"3\" fill=\"" + color + "\"/>\n";
    s += "<text x=\"" + fmt(lx + 20) + "\" y=\"" + fmt(ly - 3) + "\">" + escape(series[i].name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

Frame frame_of(const std::vector<LinePlotSeries>& series, bool unit_y) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& sr : series)
    for (const auto& [x, y] : sr.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (unit_y) y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  return {x0, x1, y0, y1};
}

}  // namespace

std::string plot_ced(std::span<const CedSeries> series, const std::string& title) {
  if (series.empty()) throw UserError("plot_ced: no curves");
  std::vector<LinePlotSeries> lines;
  for (const CedSeries& c : series) {
    if (c.points.empty()) throw UserError("plot_ced: empty curve '" + c.name + "'");
    LinePlotSeries l{c.name, {}};
    double prev = 0.0;
    for (const CedPoint& p : c.points) {
      if (!(p.fraction >= 0.0 && p.fraction <= 1.0) || p.fraction < prev || !std::isfinite(p.threshold))
        throw UserError("plot_ced: curve '" + c.name + "' is not a valid CED");
      prev = p.fraction;
      l.points.emplace_back(p.threshold, p.fraction);
    }
    lines.push_back(std::move(l));
  }
  Frame f = frame_of(lines, true);
  f.x0 = 0.0;
  if (f.x1 <= f.x0) f.x1 = 1.0;
  return render(lines, f, title, "normalised error (%)", "fraction of landmarks");
}

std::string plot_lines(std::span<const LinePlotSeries> series, const std::string& title,
                       const std::string& x_label, const std::string& y_label) {
  std::vector<LinePlotSeries> lines(series.begin(), series.end());
  Frame f = frame_of(lines, false);
  f.y0 = std::min(f.y0, 0.0);
  return render(lines, f, title, x_label, y_label);
}

}  // namespace ktl::eval
