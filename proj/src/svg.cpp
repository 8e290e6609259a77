#include "conformal_triage/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "conformal_triage/io.hpp"

namespace conformal_triage {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 64, kRight = 150, kTop = 40, kBottom = 56;
constexpr std::array<const char*, 8> kColors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                             "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape_xml(const std::string& s) {
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
  return io::format_double(std::round(v * 100.0) / 100.0);
}

struct Frame {
  const ChartSpec& spec;
  double px(double x) const {
    const double span = spec.x_max - spec.x_min;
    const double t = span > 0 ? (x - spec.x_min) / span : 0.0;
    return kLeft + std::clamp(t, 0.0, 1.0) * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    const double span = spec.y_max - spec.y_min;
    const double t = span > 0 ? (y - spec.y_min) / span : 0.0;
    return kHeight - kBottom - std::clamp(t, 0.0, 1.0) * (kHeight - kTop - kBottom);
  }
};

}  // namespace

std::string render_chart(const ChartSpec& spec) {
  const Frame f{spec};
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
                  "\" height=\"" + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       escape_xml(spec.title) + "</text>\n";

  // Axes and ticks.
  const double x0 = f.px(spec.x_min), x1 = f.px(spec.x_max);
  const double y0 = f.py(spec.y_min), y1 = f.py(spec.y_max);
  s += "<path d=\"M" + num(x0) + ' ' + num(y1) + " V" + num(y0) + " H" + num(x1) +
       "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = spec.x_min + (spec.x_max - spec.x_min) * i / 5.0;
    const double yv = spec.y_min + (spec.y_max - spec.y_min) * i / 5.0;
    s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\">" +
         io::format_double(std::round(xv * 1000.0) / 1000.0) + "</text>\n";
    s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" +
         io::format_double(std::round(yv * 1000.0) / 1000.0) + "</text>\n";
  }
  s += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kHeight - 14) +
       "\" text-anchor=\"middle\">" + escape_xml(spec.x_label) + "</text>\n";
  s += "<text transform=\"translate(16 " + num((y0 + y1) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape_xml(spec.y_label) + "</text>\n";

  if (spec.diagonal) {
    const double lo = std::max(spec.x_min, spec.y_min), hi = std::min(spec.x_max, spec.y_max);
    s += "<line x1=\"" + num(f.px(lo)) + "\" y1=\"" + num(f.py(lo)) + "\" x2=\"" + num(f.px(hi)) +
         "\" y2=\"" + num(f.py(hi)) + "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  }
  if (spec.vertical_marker) {
    const double xm = f.px(*spec.vertical_marker);
    s += "<line x1=\"" + num(xm) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(xm) + "\" y2=\"" +
         num(y1) + "\" stroke=\"#d62728\" stroke-dasharray=\"6 3\"/>\n";
  }

  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const auto& ser = spec.series[k];
    const char* color = kColors[k % kColors.size()];
    const std::size_t n = std::min(ser.x.size(), ser.y.size());
    if (n > 0) {
      std::string d = "M" + num(f.px(ser.x[0])) + ' ' + num(f.py(ser.y[0]));
      for (std::size_t i = 1; i < n; ++i) {
        if (ser.step) d += " H" + num(f.px(ser.x[i]));
        d += " L" + num(f.px(ser.x[i])) + ' ' + num(f.py(ser.y[i]));
      }
      s += "<path d=\"" + d + "\" stroke=\"" + color + "\" stroke-width=\"1.6\" fill=\"none\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    s += "<line x1=\"" + num(kWidth - kRight + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" +
         num(kWidth - kRight + 32) + "\" y2=\"" + num(ly) + "\" stroke=\"" + color +
         "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(kWidth - kRight + 38) + "\" y=\"" + num(ly + 4) + "\">" +
         escape_xml(ser.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace conformal_triage
