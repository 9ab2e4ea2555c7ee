#include "abstain/surgery.h"

#include <algorithm>
#include <cmath>

#include "abstain/error.h"
#include "json.hpp"

namespace abstain {
namespace {

double Relu(double v) { return v > 0.0 ? v : 0.0; }

// One widget neuron: sparse inputs from the previous widget layer (or the
// network input in the first hidden layer).
struct WidgetNeuron {
  std::vector<std::pair<size_t, double>> inputs;
  double bias = 0.0;
};
using WidgetLayer = std::vector<WidgetNeuron>;

std::vector<WidgetLayer> BuildWidgetPath(const SurgeryPlan& plan,
                                         size_t hidden) {
  const auto& p = plan.params;
  const double eps = p.eps_clip;
  const double and_bias = -(2.0 * eps - p.eps_and);
  const double rho = eps / p.eps_and;
  const size_t n = plan.region.dims.size();
  std::vector<WidgetLayer> layers(hidden);

  // Layer 1: N1, N3, N6, N8 per dimension, with the input shift folded into
  // the biases.
  for (const auto& d : plan.region.dims) {
    const double sh = std::max(0.0, -(d.lower - p.eps_lb));
    const size_t i = static_cast<size_t>(d.index);
    layers[0].push_back({{{i, 1.0}}, sh});
    layers[0].push_back({{{i, 1.0}}, sh - eps});
    layers[0].push_back({{{i, 1.0}}, sh});
    layers[0].push_back({{{i, 1.0}}, sh + eps});
  }
  // Layer 2: N2, N4, N7, N9.
  for (size_t k = 0; k < n; ++k) {
    const auto& d = plan.region.dims[k];
    const double sh = std::max(0.0, -(d.lower - p.eps_lb));
    const double lower = d.lower - p.eps_lb + sh;
    const double upper = d.upper + p.eps_ub + sh;
    layers[1].push_back({{{4 * k + 0, 1.0}}, -lower});
    layers[1].push_back({{{4 * k + 1, 1.0}}, -lower});
    layers[1].push_back({{{4 * k + 2, -1.0}}, upper});
    layers[1].push_back({{{4 * k + 3, -1.0}}, upper});
  }
  // Layer 3: N5 = relu(N2 - N4), N10 = relu(N7 - N9).
  for (size_t k = 0; k < n; ++k) {
    layers[2].push_back({{{4 * k + 0, 1.0}, {4 * k + 1, -1.0}}, 0.0});
    layers[2].push_back({{{4 * k + 2, 1.0}, {4 * k + 3, -1.0}}, 0.0});
  }
  // Layer 4: N11 per dimension.
  for (size_t k = 0; k < n; ++k) {
    layers[3].push_back({{{2 * k, 1.0}, {2 * k + 1, 1.0}}, and_bias});
  }
  // Chained soft-ANDs: layer 4 + j joins the running AND with dimension j + 1
  // and carries the remaining dimensions forward.
  size_t l = 4;
  for (size_t j = 1; j < n; ++j, ++l) {
    const size_t pending = n - j;  // entries: running AND, then dims j..n-1
    layers[l].push_back({{{0, rho}, {1, rho}}, and_bias});
    for (size_t q = 2; q <= pending; ++q) layers[l].push_back({{{q, 1.0}}, 0.0});
  }
  // Propagate the region indicator up to the final hidden layer.
  for (; l + 1 < hidden; ++l) layers[l].push_back({{{0, 1.0}}, 0.0});
  // Final hidden layer: c_j / eps_and per class.
  for (double c : plan.shift) {
    layers[hidden - 1].push_back({{{0, c / p.eps_and}}, 0.0});
  }
  return layers;
}

}  // namespace

double ClbwValue(double x, double t, const WidgetParams& p) {
  const double lo = t - p.eps_lb;
  return Relu(Relu(Relu(x) - lo) - Relu(Relu(x - p.eps_clip) - lo));
}

double CubwValue(double x, double t, const WidgetParams& p) {
  const double hi = t + p.eps_ub;
  return Relu(Relu(-Relu(x) + hi) - Relu(-Relu(x + p.eps_clip) + hi));
}

double SoftAndValue(double o1, double o2, const WidgetParams& p) {
  return Relu(o1 + o2 - (2.0 * p.eps_clip - p.eps_and));
}

std::vector<std::pair<double, double>> SurgeryPlan::Core() const {
  std::vector<std::pair<double, double>> core;
  for (const auto& d : region.dims) {
    core.emplace_back(d.lower + params.eps_clip, d.upper - params.eps_clip);
  }
  return core;
}

SurgeryPlan MakeSurgeryPlan(BoxRegion region, std::vector<double> shift,
                            std::optional<WidgetParams> params) {
  region.Validate();
  if (region.empty()) throw Error("surgery region has no dimensions");
  if (shift.empty()) throw Error("surgery shift is empty");
  for (double c : shift) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw Error("surgery shift entries must be finite and nonnegative");
    }
  }
  double min_width = region.dims.front().upper - region.dims.front().lower;
  for (const auto& d : region.dims) {
    min_width = std::min(min_width, d.upper - d.lower);
  }
  WidgetParams p;
  if (params) {
    p = *params;
  } else {
    p.eps_clip = min_width / 8.0;
    p.eps_and = p.eps_clip;
  }
  if (!(p.eps_clip > 0.0) || !(p.eps_and > 0.0) || p.eps_lb < 0.0 ||
      p.eps_ub < 0.0) {
    throw Error("widget parameters must be positive");
  }
  if (p.eps_and > p.eps_clip) {
    throw Error("eps_and must not exceed eps_clip");
  }
  for (const auto& d : region.dims) {
    if (d.lower + 2.0 * p.eps_clip > d.upper) {
      throw Error("region coordinate " + std::to_string(d.index) +
                  " is narrower than 2 eps_clip");
    }
  }
  return {std::move(region), std::move(shift), p};
}

size_t RequiredHiddenLayers(const SurgeryPlan& plan) {
  return plan.region.dims.size() + 4;
}

MlpNetwork AugmentNetwork(const MlpNetwork& net, const SurgeryPlan& plan) {
  net.Validate();
  if (net.head != HeadKind::kLogits) {
    throw Error("surgery needs a classification network");
  }
  if (plan.shift.size() != net.output_dim()) {
    throw Error("shift has " + std::to_string(plan.shift.size()) +
                " entries for " + std::to_string(net.output_dim()) + " logits");
  }
  for (const auto& d : plan.region.dims) {
    if (static_cast<size_t>(d.index) >= net.input_dim()) {
      throw Error("region coordinate " + std::to_string(d.index) +
                  " exceeds the network input dimension");
    }
  }

  // Original hidden layers, padded before the output layer if too shallow.
  const size_t orig_hidden = net.layers.size() - 1;
  const size_t hidden = std::max(orig_hidden, RequiredHiddenLayers(plan));
  std::vector<DenseLayer> base(net.layers.begin(), net.layers.end() - 1);
  DenseLayer out = net.layers.back();
  if (hidden > orig_hidden) {
    const size_t w = out.in;
    DenseLayer split;
    split.in = w;
    split.out = 2 * w;
    split.activation = Activation::kRelu;
    split.weight.assign(split.in * split.out, 0.0);
    split.bias.assign(split.out, 0.0);
    for (size_t k = 0; k < w; ++k) {
      split.W(k, k) = 1.0;
      split.W(w + k, k) = -1.0;
    }
    base.push_back(split);
    for (size_t extra = orig_hidden + 1; extra < hidden; ++extra) {
      DenseLayer id;
      id.in = id.out = 2 * w;
      id.activation = Activation::kRelu;
      id.weight.assign(id.in * id.out, 0.0);
      id.bias.assign(id.out, 0.0);
      for (size_t k = 0; k < 2 * w; ++k) id.W(k, k) = 1.0;
      base.push_back(id);
    }
    DenseLayer merged;
    merged.in = 2 * w;
    merged.out = out.out;
    merged.activation = Activation::kIdentity;
    merged.bias = out.bias;
    merged.weight.assign(merged.in * merged.out, 0.0);
    for (size_t r = 0; r < out.out; ++r) {
      for (size_t k = 0; k < w; ++k) {
        merged.W(r, k) = out.W(r, k);
        merged.W(r, w + k) = -out.W(r, k);
      }
    }
    out = std::move(merged);
  }

  const auto widgets = BuildWidgetPath(plan, hidden);
  MlpNetwork result;
  result.head = net.head;
  size_t prev_widget = 0;
  for (size_t l = 0; l < hidden; ++l) {
    const DenseLayer& b = base[l];
    const size_t nw = widgets[l].size();
    DenseLayer layer;
    layer.activation = Activation::kRelu;
    layer.in = l == 0 ? b.in : b.in + prev_widget;
    layer.out = b.out + nw;
    layer.weight.assign(layer.in * layer.out, 0.0);
    layer.bias.assign(layer.out, 0.0);
    // Original block first so original sums keep their term order.
    for (size_t r = 0; r < b.out; ++r) {
      for (size_t c = 0; c < b.in; ++c) layer.W(r, c) = b.W(r, c);
      layer.bias[r] = b.bias[r];
    }
    const size_t offset = l == 0 ? 0 : b.in;
    for (size_t k = 0; k < nw; ++k) {
      const auto& neuron = widgets[l][k];
      for (const auto& [src, w] : neuron.inputs) {
        layer.W(b.out + k, offset + src) = w;
      }
      layer.bias[b.out + k] = neuron.bias;
    }
    result.layers.push_back(std::move(layer));
    prev_widget = nw;
  }
  DenseLayer final_layer;
  final_layer.activation = Activation::kIdentity;
  final_layer.in = out.in + prev_widget;
  final_layer.out = out.out;
  final_layer.bias = out.bias;
  final_layer.weight.assign(final_layer.in * final_layer.out, 0.0);
  for (size_t r = 0; r < out.out; ++r) {
    for (size_t c = 0; c < out.in; ++c) final_layer.W(r, c) = out.W(r, c);
    final_layer.W(r, out.in + r) = 1.0;
  }
  result.layers.push_back(std::move(final_layer));
  result.Validate();
  return result;
}

double Halton(size_t i, int base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

SurgeryReport VerifySurgery(const MlpNetwork& original,
                            const MlpNetwork& augmented,
                            const SurgeryPlan& plan, size_t grid_n) {
  if (grid_n < 100) throw Error("verification grid needs at least 100 points");
  const size_t D = original.input_dim();
  static const int kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                                31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
  if (D > std::size(kPrimes)) throw Error("verification supports D <= 20");
  std::vector<double> lo(D, -1.0), hi(D, 1.0);
  for (const auto& d : plan.region.dims) {
    const double center = (d.lower + d.upper) / 2.0;
    const double width = d.upper - d.lower;
    lo[d.index] = center - width;
    hi[d.index] = center + width;
  }
  const auto core = plan.Core();
  SurgeryReport rep;
  size_t preserved = 0;
  std::vector<double> x(D);
  for (size_t n = 1; n <= grid_n; ++n) {
    for (size_t j = 0; j < D; ++j) {
      x[j] = lo[j] + (hi[j] - lo[j]) * Halton(n, kPrimes[j]);
    }
    const auto f = Forward(original, x);
    const auto g = Forward(augmented, x);
    bool inside = true, in_core = true;
    for (size_t k = 0; k < plan.region.dims.size(); ++k) {
      const auto& d = plan.region.dims[k];
      const double v = x[d.index];
      if (!(v > d.lower && v < d.upper)) inside = false;
      if (!(v >= core[k].first && v <= core[k].second)) in_core = false;
    }
    double delta = 0.0, shift_err = 0.0;
    for (size_t j = 0; j < f.size(); ++j) {
      delta = std::max(delta, std::abs(g[j] - f[j]));
      shift_err = std::max(shift_err, std::abs(g[j] - (f[j] + plan.shift[j])));
    }
    ++rep.points;
    if (!inside) {
      ++rep.outside_points;
      rep.outside_max = std::max(rep.outside_max, delta);
      if (Argmax(f) == Argmax(g)) ++preserved;
    } else if (in_core) {
      ++rep.core_points;
      rep.core_max = std::max(rep.core_max, shift_err);
    } else {
      ++rep.transition_points;
      rep.transition_max_delta = std::max(rep.transition_max_delta, delta);
      rep.transition_max_shift_error =
          std::max(rep.transition_max_shift_error, shift_err);
    }
  }
  rep.outside_argmax_preserved =
      rep.outside_points == 0
          ? 1.0
          : static_cast<double>(preserved) /
                static_cast<double>(rep.outside_points);
  return rep;
}

BoxRegion RegionFromJson(const std::string& text) {
  BoxRegion r;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& dims = j.is_object() ? j.at("dims") : j;
    for (const auto& d : dims) {
      r.dims.push_back({d.at("index").get<int>(), d.at("lower").get<double>(),
                        d.at("upper").get<double>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("region json: ") + ex.what());
  }
  r.Validate();
  return r;
}

std::string RegionToJson(const BoxRegion& region) {
  nlohmann::json j;
  j["dims"] = nlohmann::json::array();
  for (const auto& d : region.dims) {
    j["dims"].push_back(
        {{"index", d.index}, {"lower", d.lower}, {"upper", d.upper}});
  }
  return j.dump();
}

std::string SurgeryReportJson(const SurgeryReport& r) {
  nlohmann::json j = {
      {"points", r.points},
      {"outside_points", r.outside_points},
      {"core_points", r.core_points},
      {"transition_points", r.transition_points},
      {"outside_max", r.outside_max},
      {"core_max", r.core_max},
      {"transition_max_delta", r.transition_max_delta},
      {"transition_max_shift_error", r.transition_max_shift_error},
      {"outside_argmax_preserved", r.outside_argmax_preserved},
  };
  return j.dump(2) + "\n";
}

}  // namespace abstain
