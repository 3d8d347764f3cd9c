#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "zebravit/decision.hpp"

namespace zebravit::plot {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  double opacity = 1.0;
  double width = 1.5;
  std::string label;
  bool markers = false;
  bool dashed = false;
};

struct Bar {
  double x0 = 0, x1 = 0, height = 0;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  std::vector<Series> series;
  std::vector<Bar> bars;
  std::string bar_color = "#9ecae1";
};

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string render_svg(const Chart& chart) {
  const double width = 640, height = 420, left = 64, right = 20, top = 40, bottom = 56;
  const double pw = width - left - right, ph = height - top - bottom;
  const double xr = chart.x_max > chart.x_min ? chart.x_max - chart.x_min : 1.0;
  const double yr = chart.y_max > chart.y_min ? chart.y_max - chart.y_min : 1.0;
  auto px = [&](double x) { return left + (x - chart.x_min) / xr * pw; };
  auto py = [&](double y) { return top + ph - (y - chart.y_min) / yr * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(chart.title)
      << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = chart.x_min + xr * i / 5.0, fy = chart.y_min + yr * i / 5.0;
    svg << "<line x1=\"" << fmt(px(fx)) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(px(fx)) << "\" y2=\""
        << fmt(top + ph) << "\" stroke=\"#eee\"/>\n";
    svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(py(fy)) << "\" x2=\"" << fmt(left + pw) << "\" y2=\""
        << fmt(py(fy)) << "\" stroke=\"#eee\"/>\n";
    svg << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(top + ph + 16) << "\" text-anchor=\"middle\">" << fmt(fx)
        << "</text>\n";
    svg << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(py(fy) + 4) << "\" text-anchor=\"end\">" << fmt(fy)
        << "</text>\n";
  }
  for (const auto& b : chart.bars) {
    const double h = std::clamp(b.height, chart.y_min, chart.y_max);
    svg << "<rect x=\"" << fmt(px(b.x0)) << "\" y=\"" << fmt(py(h)) << "\" width=\"" << fmt(px(b.x1) - px(b.x0))
        << "\" height=\"" << fmt(py(chart.y_min) - py(h)) << "\" fill=\"" << chart.bar_color
        << "\" stroke=\"#3182bd\"/>\n";
  }
  for (const auto& s : chart.series) {
    if (s.x.empty()) continue;
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << s.width << "\" stroke-opacity=\""
        << s.opacity << "\"" << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) svg << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i])) << ' ';
    svg << "\"/>\n";
    if (s.markers)
      for (std::size_t i = 0; i < s.x.size(); ++i)
        svg << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i])) << "\" r=\"3\" fill=\"" << s.color
            << "\"/>\n";
  }
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 14 << "\" text-anchor=\"middle\">"
      << escape(chart.x_label) << "</text>\n";
  svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(chart.y_label) << "</text>\n";
  double ly = top + 14;
  for (const auto& s : chart.series) {
    if (s.label.empty()) continue;
    svg << "<line x1=\"" << left + pw - 150 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw - 130 << "\" y2=\""
        << ly - 4 << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + pw - 124 << "\" y=\"" << ly << "\">" << escape(s.label) << "</text>\n";
    ly += 16;
  }
  svg << "</svg>\n";
  return svg.str();
}

inline void write_svg(const std::filesystem::path& path, const Chart& chart) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << render_svg(chart);
}

inline std::vector<double> time_axis(std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i);
  return t;
}

inline const char* class_color(std::optional<int> label, bool positive_is_normal) {
  if (!label) return "#888888";
  const bool normal = (*label == 1) == positive_is_normal;
  return normal ? "#2ca02c" : "#d62728";
}

/// Probability of the normal class over time for up to `max_traces` sequences.
inline Chart probability_traces(const std::vector<PredictionTrace>& traces, bool positive_is_normal,
                                std::size_t max_traces = 20) {
  Chart c{"Predicted probability of normal development", "time step", "p(normal)", 0, 1, 0, 1, {}, {}, {}};
  for (std::size_t i = 0; i < traces.size() && i < max_traces; ++i) {
    const auto& tr = traces[i];
    Series s;
    s.x = time_axis(tr.smoothed.size());
    for (const auto& y : tr.smoothed) {
      const double p1 = positive_probability(y);
      s.y.push_back(positive_is_normal ? p1 : 1.0 - p1);
    }
    s.color = class_color(tr.label, positive_is_normal);
    s.opacity = 0.7;
    c.x_max = std::max(c.x_max, static_cast<double>(tr.smoothed.size()) - 1);
    c.series.push_back(std::move(s));
  }
  return c;
}

inline Chart accuracy_over_time(const std::vector<double>& accuracy) {
  Chart c{"Sequence accuracy vs time", "time step", "accuracy", 0, std::max(1.0, accuracy.size() - 1.0), 0, 1, {}, {}, {}};
  Series s;
  s.x = time_axis(accuracy.size());
  s.y = accuracy;
  s.label = "model";
  c.series.push_back(std::move(s));
  return c;
}

inline Chart reliability_diagram(const Calibration& cal) {
  Chart c{"Reliability (ECE " + fmt(cal.ece) + ")", "mean predicted probability", "empirical frequency",
          0, 1, 0, 1, {}, {}, {}};
  Series diag{{0.0, 1.0}, {0.0, 1.0}, "#555555", 1.0, 1.0, "perfect calibration", false, true};
  Series points;
  points.color = "#ff7f0e";
  points.markers = true;
  points.label = "model";
  for (const auto& b : cal.bins) {
    if (b.count == 0) continue;
    c.bars.push_back({b.lower, b.upper, b.positive_rate});
    points.x.push_back(b.mean_predicted);
    points.y.push_back(b.positive_rate);
  }
  c.series.push_back(std::move(diag));
  c.series.push_back(std::move(points));
  return c;
}

/// Mean smoothed confidence per class over time, with faint individual traces.
inline Chart confidence_over_time(const std::vector<PredictionTrace>& traces, bool positive_is_normal) {
  Chart c{"Confidence vs time", "time step", "confidence", 0, 1, 0, 1, {}, {}, {}};
  std::size_t n = traces.empty() ? 0 : traces.front().confidence.size();
  c.x_max = std::max(1.0, static_cast<double>(n) - 1);
  std::vector<double> sum[2], count(2, 0.0);
  sum[0].assign(n, 0.0);
  sum[1].assign(n, 0.0);
  for (const auto& tr : traces) {
    if (!tr.label || tr.confidence.size() != n) continue;
    Series s;
    s.x = time_axis(n);
    s.y = tr.confidence;
    s.color = class_color(tr.label, positive_is_normal);
    s.opacity = 0.15;
    s.width = 1.0;
    c.series.push_back(std::move(s));
    const auto k = static_cast<std::size_t>(*tr.label);
    for (std::size_t t = 0; t < n; ++t) sum[k][t] += tr.confidence[t];
    count[k] += 1;
  }
  for (int k = 0; k < 2; ++k) {
    if (count[k] == 0) continue;
    Series s;
    s.x = time_axis(n);
    for (double v : sum[k]) s.y.push_back(v / count[k]);
    s.color = class_color(k, positive_is_normal);
    s.width = 2.5;
    s.label = ((k == 1) == positive_is_normal) ? "normal (mean)" : "anomalous (mean)";
    c.series.push_back(std::move(s));
  }
  return c;
}

}  // namespace zebravit::plot
