#include "abstain/plots.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "abstain/error.h"

namespace abstain {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 30.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

std::string Fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

struct Axes {
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;

  double Px(double x) const {
    return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight);
  }
  double Py(double y) const {
    return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

std::string Header(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
       "viewBox=\"0 0 640 480\">\n"
    << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n"
    << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">"
    << Escape(title) << "</text>\n";
  return s.str();
}

std::string Frame(const Axes& a, const std::string& xlabel,
                  const std::string& ylabel) {
  std::ostringstream s;
  s << "<g stroke=\"black\" stroke-width=\"1\">\n"
    << "<line x1=\"" << Fixed(a.Px(a.x0)) << "\" y1=\"" << Fixed(a.Py(a.y0))
    << "\" x2=\"" << Fixed(a.Px(a.x1)) << "\" y2=\"" << Fixed(a.Py(a.y0))
    << "\"/>\n"
    << "<line x1=\"" << Fixed(a.Px(a.x0)) << "\" y1=\"" << Fixed(a.Py(a.y0))
    << "\" x2=\"" << Fixed(a.Px(a.x0)) << "\" y2=\"" << Fixed(a.Py(a.y1))
    << "\"/>\n</g>\n";
  s << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = a.x0 + (a.x1 - a.x0) * i / 5.0;
    const double yv = a.y0 + (a.y1 - a.y0) * i / 5.0;
    s << "<text x=\"" << Fixed(a.Px(xv)) << "\" y=\""
      << Fixed(a.Py(a.y0) + 16.0) << "\" text-anchor=\"middle\">"
      << Fixed(xv).substr(0, Fixed(xv).size() - 1) << "</text>\n";
    s << "<text x=\"" << Fixed(a.Px(a.x0) - 6.0) << "\" y=\""
      << Fixed(a.Py(yv) + 4.0) << "\" text-anchor=\"end\">"
      << Fixed(yv).substr(0, Fixed(yv).size() - 1) << "</text>\n";
  }
  s << "<text x=\"" << Fixed((kLeft + kWidth - kRight) / 2.0) << "\" y=\""
    << Fixed(kHeight - 20.0) << "\" text-anchor=\"middle\">" << Escape(xlabel)
    << "</text>\n";
  s << "<text x=\"18\" y=\"" << Fixed((kTop + kHeight - kBottom) / 2.0)
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << Fixed((kTop + kHeight - kBottom) / 2.0) << ")\">" << Escape(ylabel)
    << "</text>\n</g>\n";
  return s.str();
}

std::string Polyline(const Axes& a, std::span<const double> xs,
                     std::span<const double> ys, const std::string& cls,
                     const std::string& color, const char* dash) {
  std::ostringstream s;
  s << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color
    << "\" stroke-width=\"2\"";
  if (dash != nullptr) s << " stroke-dasharray=\"" << dash << "\"";
  s << " points=\"";
  bool first = true;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (std::isnan(ys[i])) continue;
    if (!first) s << ' ';
    s << Fixed(a.Px(xs[i])) << ',' << Fixed(a.Py(ys[i]));
    first = false;
  }
  s << "\"/>\n";
  return s.str();
}

}  // namespace

std::string CurveSvg(const SelectiveCurve& curve, const std::string& title) {
  if (curve.size() == 0) throw Error("cannot plot an empty curve");
  Axes a;
  double lo = 0.0, hi = 1.0;
  for (double u : curve.utility) {
    if (std::isnan(u)) continue;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  if (lo < 0.0 || hi > 1.0) {
    a.y0 = std::floor(lo);
    a.y1 = std::ceil(hi);
  }
  std::string svg = Header(title);
  svg += Frame(a, "coverage", std::string(UtilityKindName(curve.kind)));
  if (curve.kind == UtilityKind::kAccuracy) {
    const GapMetrics gm = ComputeGapMetrics(curve);
    svg += Polyline(a, curve.coverage, gm.bound, "bound", "#7f7f7f", "6 4");
  }
  svg += Polyline(a, curve.coverage, curve.utility, "curve", kPalette[0],
                  nullptr);
  svg += "</svg>\n";
  return svg;
}

std::string ReliabilitySvg(const CalibrationTable& table,
                           const std::string& title) {
  if (table.total == 0) throw Error("cannot plot an empty calibration table");
  Axes a;
  std::string svg = Header(title);
  svg += Frame(a, "confidence", "accuracy");
  const double diag[] = {0.0, 1.0};
  svg += Polyline(a, diag, diag, "diagonal", "#7f7f7f", "6 4");
  std::ostringstream s;
  for (int b = 0; b < table.bins; ++b) {
    if (table.count[b] == 0) continue;
    const double acc = table.correct_sum[b] / static_cast<double>(table.count[b]);
    const double x0 = static_cast<double>(b) / table.bins;
    const double x1 = static_cast<double>(b + 1) / table.bins;
    s << "<rect class=\"bin\" x=\"" << Fixed(a.Px(x0)) << "\" y=\""
      << Fixed(a.Py(acc)) << "\" width=\"" << Fixed(a.Px(x1) - a.Px(x0))
      << "\" height=\"" << Fixed(a.Py(0.0) - a.Py(acc))
      << "\" fill=\"" << kPalette[0] << "\" fill-opacity=\"0.6\" stroke=\"black\"/>\n";
  }
  svg += s.str();
  std::vector<double> xs, ys;
  const EceMetrics m = ComputeEce(table);
  for (const auto& p : m.points) {
    xs.push_back(p.confidence);
    ys.push_back(p.accuracy);
  }
  svg += Polyline(a, xs, ys, "reliability", kPalette[1], nullptr);
  svg += "</svg>\n";
  return svg;
}

std::string HistogramSvg(const std::vector<std::vector<double>>& samples,
                         const std::vector<std::string>& names, int bins,
                         const std::string& title) {
  if (samples.empty() || bins < 1) throw Error("nothing to plot");
  std::vector<std::vector<double>> freq;
  double top = 0.0;
  for (const auto& v : samples) {
    if (v.empty()) throw Error("cannot plot an empty sample");
    std::vector<double> h(bins, 0.0);
    for (double p : v) {
      const double c = std::clamp(p, 0.0, 1.0);
      h[std::min(static_cast<int>(std::floor(c * bins)), bins - 1)] += 1.0;
    }
    for (double& x : h) {
      x /= static_cast<double>(v.size());
      top = std::max(top, x);
    }
    freq.push_back(std::move(h));
  }
  Axes a;
  a.y1 = std::max(0.1, std::ceil(top * 10.0) / 10.0);
  std::string svg = Header(title);
  svg += Frame(a, "confidence", "fraction");
  std::ostringstream s;
  for (size_t g = 0; g < freq.size(); ++g) {
    const char* color = kPalette[g % std::size(kPalette)];
    for (int b = 0; b < bins; ++b) {
      if (freq[g][b] == 0.0) continue;
      const double x0 = static_cast<double>(b) / bins;
      const double x1 = static_cast<double>(b + 1) / bins;
      s << "<rect x=\"" << Fixed(a.Px(x0)) << "\" y=\""
        << Fixed(a.Py(freq[g][b])) << "\" width=\""
        << Fixed(a.Px(x1) - a.Px(x0)) << "\" height=\""
        << Fixed(a.Py(0.0) - a.Py(freq[g][b])) << "\" fill=\"" << color
        << "\" fill-opacity=\"0.45\"/>\n";
    }
    const std::string name = g < names.size() ? names[g] : "sample";
    s << "<text x=\"" << Fixed(kWidth - kRight - 140.0) << "\" y=\""
      << Fixed(kTop + 16.0 * static_cast<double>(g + 1))
      << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color
      << "\">" << Escape(name) << "</text>\n";
  }
  svg += s.str();
  svg += "</svg>\n";
  return svg;
}

std::vector<std::pair<double, double>> ParsePolyline(const std::string& svg,
                                                     const std::string& cls) {
  std::vector<std::pair<double, double>> pts;
  const std::string key = "<polyline class=\"" + cls + "\"";
  const size_t at = svg.find(key);
  if (at == std::string::npos) return pts;
  const size_t p = svg.find("points=\"", at);
  const size_t end = svg.find('"', p + 8);
  std::istringstream in(svg.substr(p + 8, end - p - 8));
  std::string tok;
  while (in >> tok) {
    const size_t comma = tok.find(',');
    pts.emplace_back(std::stod(tok.substr(0, comma)),
                     std::stod(tok.substr(comma + 1)));
  }
  return pts;
}

void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace abstain
