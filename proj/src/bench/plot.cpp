// SPDX-License-Identifier: Apache-2.0
#include "latentkf/bench/plot.hpp"

#include "latentkf/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace latentkf::bench {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
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
      default: out.push_back(c);
    }
  }
  return out;
}

/// Round step (1, 2 or 5 times a power of ten) giving about `target` intervals.
double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double f : {1.0, 2.0, 5.0, 10.0})
    if (raw <= f * mag) return f * mag;
  return 10.0 * mag;
}

}  // namespace

std::vector<PlotSeries> collect_series(const std::vector<MetricRecord>& records, std::vector<std::string>* warnings) {
  // Variant order follows first appearance; levels ascend.
  std::vector<std::string> order;
  std::map<std::string, std::map<double, std::pair<std::vector<double>, std::vector<double>>>> groups;
  for (const auto& r : records) {
    if (!groups.count(r.variant)) order.push_back(r.variant);
    auto& g = groups[r.variant];
    if (std::isfinite(r.mse_db) && std::isfinite(r.noise_level)) {
      g[r.noise_level].first.push_back(r.mse_db);
      g[r.noise_level].second.push_back(std::isfinite(r.std_db) ? r.std_db : 0.0);
    }
  }
  std::vector<PlotSeries> out;
  for (const auto& v : order) {
    const auto& g = groups.at(v);
    if (g.empty()) {
      if (warnings) warnings->push_back("variant '" + v + "' has no finite points; omitted from the plot");
      continue;
    }
    PlotSeries s;
    s.variant = v;
    for (const auto& [level, vals] : g) {
      s.levels.push_back(level);
      s.mse_db.push_back(median(vals.first));
      s.std_db.push_back(median(vals.second));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string render_svg(const std::vector<PlotSeries>& series, const PlotOptions& o) {
  if (series.empty()) throw InvalidArgument("render_svg: nothing to plot");
  std::vector<double> levels;
  double ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.levels.size(); ++i) {
      levels.push_back(s.levels[i]);
      ymin = std::min(ymin, s.mse_db[i] - s.std_db[i]);
      ymax = std::max(ymax, s.mse_db[i] + s.std_db[i]);
    }
  }
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double xmin = levels.front(), xmax = levels.back();
  if (xmax - xmin < 1e-12) {
    xmin -= 1.0;
    xmax += 1.0;
  } else {
    const double pad = 0.05 * (xmax - xmin);
    xmin -= pad;
    xmax += pad;
  }
  if (ymax - ymin < 1e-9) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double ystep = nice_step(ymax - ymin, 6);
  ymin = std::floor(ymin / ystep) * ystep;
  ymax = std::ceil(ymax / ystep) * ystep;

  const double left = 70, right = 180, top = 40, bottom = 55;
  const double pw = o.width - left - right, ph = o.height - top - bottom;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << o.width << "\" height=\"" << o.height
      << "\" viewBox=\"0 0 " << o.width << ' ' << o.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << num(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(o.title) << "</text>\n";
  svg << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double y = ymin; y <= ymax + 1e-9 * ystep; y += ystep) {
    svg << "<g class=\"ytick\"><line x1=\"" << num(left) << "\" x2=\"" << num(left + pw) << "\" y1=\"" << num(sy(y))
        << "\" y2=\"" << num(sy(y)) << "\" stroke=\"#dddddd\"/><text x=\"" << num(left - 6) << "\" y=\"" << num(sy(y) + 4)
        << "\" text-anchor=\"end\">" << label(std::abs(y) < 1e-12 ? 0.0 : y) << "</text></g>\n";
  }
  for (double x : levels) {
    svg << "<g class=\"xtick\"><line x1=\"" << num(sx(x)) << "\" x2=\"" << num(sx(x)) << "\" y1=\"" << num(top + ph)
        << "\" y2=\"" << num(top + ph + 5) << "\" stroke=\"black\"/><text x=\"" << num(sx(x)) << "\" y=\""
        << num(top + ph + 19) << "\" text-anchor=\"middle\">" << label(x) << "</text></g>\n";
  }
  svg << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(o.height - 12.0) << "\" text-anchor=\"middle\">"
      << escape(o.x_label) << "</text>\n";
  svg << "<text transform=\"translate(18," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(o.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % (sizeof kPalette / sizeof kPalette[0])];
    svg << "<g class=\"series\" data-variant=\"" << escape(s.variant) << "\">\n";
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.levels.size(); ++i) pts << (i ? " " : "") << num(sx(s.levels[i])) << ',' << num(sy(s.mse_db[i]));
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    for (std::size_t i = 0; i < s.levels.size(); ++i) {
      const double x = sx(s.levels[i]);
      if (s.std_db[i] > 0.0) {
        svg << "<line x1=\"" << num(x) << "\" x2=\"" << num(x) << "\" y1=\"" << num(sy(s.mse_db[i] - s.std_db[i]))
            << "\" y2=\"" << num(sy(s.mse_db[i] + s.std_db[i])) << "\" stroke=\"" << color << "\"/>\n";
      }
      svg << "<circle cx=\"" << num(x) << "\" cy=\"" << num(sy(s.mse_db[i])) << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 14 + 18 * static_cast<double>(k);
    svg << "<line x1=\"" << num(left + pw + 12) << "\" x2=\"" << num(left + pw + 36) << "\" y1=\"" << num(ly) << "\" y2=\""
        << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << num(left + pw + 42) << "\" y=\""
        << num(ly + 4) << "\">" << escape(s.variant) << "</text>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> plot_metrics_file(const std::filesystem::path& csv, const std::filesystem::path& out_dir,
                                                     std::vector<std::string>* warnings, const PlotOptions& options) {
  const auto records = read_metrics_csv(csv);
  const auto series = collect_series(records, warnings);
  if (series.empty()) {
    if (warnings) warnings->push_back(csv.string() + ": no plottable rows; no image written");
    return {};
  }
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / (csv.stem().string() + ".svg");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << render_svg(series, options);
  if (!out) throw IoError("failed writing " + path.string());
  return {path};
}

}  // namespace latentkf::bench
