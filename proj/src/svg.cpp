#include "feddet/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace feddet {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 30, kTop = 50, kBottom = 60;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
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

}  // namespace

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<ChartSeries>& series) {
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool any = false;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (!any) {
        x_min = x_max = x;
        y_min = y_max = y;
        any = true;
      } else {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
      }
    }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;
  y_max += (y_max - y_min) * 0.05;  // headroom so the top of a curve is visible

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](double y) {
    return kTop + plot_h - (y - y_min) / (y_max - y_min) * plot_h;
  };

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");

  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
    << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  f << "  <rect width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" fill=\"white\"/>\n";
  f << "  <text x=\"" << kWidth / 2 << "\" y=\"26\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"16\">" << escape(title) << "</text>\n";

  // Axes.
  f << "  <line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\""
    << kLeft + plot_w << "\" y2=\"" << kTop + plot_h
    << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  f << "  <line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft
    << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\" stroke-width=\"1\"/>\n";

  for (int i = 0; i <= 5; ++i) {
    const double fx = x_min + (x_max - x_min) * i / 5.0;
    const double fy = y_min + (y_max - y_min) * i / 5.0;
    f << "  <line x1=\"" << num(px(fx)) << "\" y1=\"" << kTop + plot_h << "\" x2=\""
      << num(px(fx)) << "\" y2=\"" << kTop + plot_h + 5
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    f << "  <text x=\"" << num(px(fx)) << "\" y=\"" << kTop + plot_h + 20
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
      << num(fx) << "</text>\n";
    f << "  <line x1=\"" << kLeft - 5 << "\" y1=\"" << num(py(fy)) << "\" x2=\"" << kLeft
      << "\" y2=\"" << num(py(fy)) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    f << "  <text x=\"" << kLeft - 9 << "\" y=\"" << num(py(fy) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(fy)
      << "</text>\n";
  }

  f << "  <text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 14
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
    << escape(x_label) << "</text>\n";
  f << "  <text x=\"20\" y=\"" << kTop + plot_h / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
    << "transform=\"rotate(-90 20 " << kTop + plot_h / 2 << ")\">" << escape(y_label)
    << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const ChartSeries& s = series[i];
    f << "  <polyline fill=\"none\" stroke=\"" << escape(s.color)
      << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (!first) f << ' ';
      f << num(px(x)) << ',' << num(py(y));
      first = false;
    }
    f << "\"/>\n";

    const double ly = kTop + 8 + 18 * static_cast<double>(i);
    f << "  <line x1=\"" << kLeft + plot_w - 110 << "\" y1=\"" << num(ly) << "\" x2=\""
      << kLeft + plot_w - 86 << "\" y2=\"" << num(ly) << "\" stroke=\""
      << escape(s.color) << "\" stroke-width=\"2\"/>\n";
    f << "  <text x=\"" << kLeft + plot_w - 80 << "\" y=\"" << num(ly + 4)
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(s.name)
      << "</text>\n";
  }

  f << "</svg>\n";
}

}  // namespace feddet
