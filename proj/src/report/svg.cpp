#include "nres/report/svg.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace nres::report {

namespace {

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

std::string tick_label(double v) {
  if (v == 0) return "0";
  const double a = std::abs(v);
  if (a >= 1e5 || a < 1e-3) return fmt::format("{:.2g}", v);
  return fmt::format("{:g}", v);
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(lo <= hi)) lo = 0, hi = 1;
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
      const double pad = std::max(1e-12, std::abs(hi) * 0.05 + (hi == 0 ? 1 : 0));
      lo -= pad;
      hi += pad;
    }
  }
};

}  // namespace

std::vector<double> nice_ticks(double lo, double hi, std::size_t target) {
  if (!(hi > lo) || target == 0) return {lo};
  const double raw = (hi - lo) / static_cast<double>(target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  const double first = std::ceil(lo / step - 1e-9);
  for (double k = first; k * step <= hi + 1e-9 * step; k += 1) out.push_back(k == 0 ? 0.0 : k * step);
  return out;
}

std::string render_svg(const std::vector<Panel>& panels, std::size_t columns, double width, double height) {
  columns = std::max<std::size_t>(1, std::min(columns, std::max<std::size_t>(1, panels.size())));
  const std::size_t rows = (panels.size() + columns - 1) / columns;
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      width * static_cast<double>(columns), height * static_cast<double>(std::max<std::size_t>(rows, 1)));
  const double ml = 62, mr = 12, mt = 26, mb = 40;
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double ox = width * static_cast<double>(p % columns), oy = height * static_cast<double>(p / columns);
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto ty = [&](double v) { return panel.log_y ? std::log10(v) : v; };
    Range xr, yr;
    for (const auto& s : panel.series)
      for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
        if (panel.log_y && !(s.y[i] > 0)) continue;
        xr.add(s.x[i]);
        yr.add(ty(s.y[i]));
      }
    for (double v : panel.vertical_lines) xr.add(v);
    if (panel.diagonal) {
      const double lo = std::min(xr.lo, yr.lo), hi = std::max(xr.hi, yr.hi);
      xr.lo = yr.lo = lo;
      xr.hi = yr.hi = hi;
    }
    xr.finish();
    yr.finish();
    auto sx = [&](double v) { return ox + ml + (v - xr.lo) / (xr.hi - xr.lo) * pw; };
    auto sy = [&](double v) { return oy + mt + ph - (v - yr.lo) / (yr.hi - yr.lo) * ph; };

    out += fmt::format("<g>\n<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
                       ox + ml + pw / 2, oy + 17, escape(panel.title));
    out += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"#333\"/>\n",
                       ox + ml, oy + mt, pw, ph);
    for (double t : nice_ticks(xr.lo, xr.hi))
      out += fmt::format(
          "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"#333\"/>"
          "<text x=\"{0:.1f}\" y=\"{3:.1f}\" text-anchor=\"middle\">{4}</text>\n",
          sx(t), oy + mt + ph, oy + mt + ph + 4, oy + mt + ph + 16, tick_label(t));
    for (double t : nice_ticks(yr.lo, yr.hi))
      out += fmt::format(
          "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"#333\"/>"
          "<text x=\"{3:.1f}\" y=\"{4:.1f}\" text-anchor=\"end\">{5}</text>\n",
          ox + ml - 4, sy(t), ox + ml, ox + ml - 6, sy(t) + 4, panel.log_y ? tick_label(std::pow(10.0, t)) : tick_label(t));
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", ox + ml + pw / 2,
                       oy + height - 6, escape(panel.x_label));
    out += fmt::format("<text transform=\"translate({:.1f},{:.1f}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
                       ox + 12, oy + mt + ph / 2, escape(panel.y_label));
    if (panel.diagonal)
      out += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#999\"/>\n", sx(xr.lo),
                         sy(yr.lo), sx(xr.hi), sy(yr.hi));
    for (double v : panel.vertical_lines)
      out += fmt::format(
          "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"#777\" stroke-dasharray=\"5,4\"/>\n",
          sx(v), oy + mt, oy + mt + ph);
    double legend_y = oy + mt + 14;
    for (const auto& s : panel.series) {
      const std::size_t n = std::min(s.x.size(), s.y.size());
      if (s.markers) {
        for (std::size_t i = 0; i < n; ++i) {
          if (panel.log_y && !(s.y[i] > 0)) continue;
          out += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", sx(s.x[i]), sy(ty(s.y[i])),
                             s.color);
        }
      } else {
        std::string pts;
        for (std::size_t i = 0; i < n; ++i) {
          if (panel.log_y && !(s.y[i] > 0)) continue;
          pts += fmt::format("{:.1f},{:.1f} ", sx(s.x[i]), sy(ty(s.y[i])));
        }
        out += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{}/>\n", pts, s.color,
                           s.dashed ? " stroke-dasharray=\"6,3\"" : "");
      }
      if (!s.label.empty()) {
        out += fmt::format(
            "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"{3}\" stroke-width=\"2\"{4}/>"
            "<text x=\"{5:.1f}\" y=\"{6:.1f}\">{7}</text>\n",
            ox + ml + 8, legend_y, ox + ml + 26, s.color, s.dashed ? " stroke-dasharray=\"6,3\"" : "", ox + ml + 30,
            legend_y + 4, escape(s.label));
        legend_y += 14;
      }
    }
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace nres::report
