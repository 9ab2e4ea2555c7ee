#ifndef ABSTAIN_PLOTS_H_
#define ABSTAIN_PLOTS_H_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "abstain/calibration.h"
#include "abstain/seleval.h"

namespace abstain {

// Static 640x480 SVG charts. Coordinates are printed with three decimals so
// identical inputs give identical bytes.

// Utility-coverage polyline (class "curve") plus, for accuracy curves, the
// perfect-ordering bound (class "bound"). Throws Error on an empty curve.
std::string CurveSvg(const SelectiveCurve& curve, const std::string& title);

// Reliability diagram: per-bin accuracy bars against the diagonal.
std::string ReliabilitySvg(const CalibrationTable& table,
                           const std::string& title);

// Overlaid histograms of confidence samples on [0, 1].
std::string HistogramSvg(const std::vector<std::vector<double>>& samples,
                         const std::vector<std::string>& names, int bins,
                         const std::string& title);

// Pixel coordinates of a polyline with the given class, parsed back from an
// emitted SVG. Empty if absent.
std::vector<std::pair<double, double>> ParsePolyline(const std::string& svg,
                                                     const std::string& cls);

void WriteText(const std::filesystem::path& path, const std::string& text);

}  // namespace abstain

#endif  // ABSTAIN_PLOTS_H_
