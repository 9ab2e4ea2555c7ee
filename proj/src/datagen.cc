#include "abstain/datagen.h"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "abstain/error.h"
#include "abstain/rng.h"

namespace abstain {

void BoxRegion::Validate() const {
  std::set<int> seen;
  for (const auto& d : dims) {
    if (d.index < 0) throw Error("region coordinate index must be >= 0");
    if (!seen.insert(d.index).second) {
      throw Error("region coordinate " + std::to_string(d.index) +
                  " listed twice");
    }
    if (!(d.lower < d.upper) || !std::isfinite(d.lower) ||
        !std::isfinite(d.upper)) {
      throw Error("region bounds for coordinate " + std::to_string(d.index) +
                  " must satisfy lower < upper");
    }
  }
}

bool BoxRegion::Contains(std::span<const double> x) const {
  for (const auto& d : dims) {
    if (static_cast<size_t>(d.index) >= x.size()) return false;
    const double v = x[d.index];
    if (v < d.lower || v > d.upper) return false;
  }
  return !dims.empty();
}

std::string ExampleId(size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "e%06zu", i);
  return buf;
}

double GaussianDensity(const GaussianComponentSpec& c,
                       std::span<const double> x) {
  const double s00 = c.covariance[0], s01 = c.covariance[1],
               s11 = c.covariance[3];
  const double det = s00 * s11 - s01 * s01;
  const double dx = x[0] - c.mean[0], dy = x[1] - c.mean[1];
  const double q = (s11 * dx * dx - 2.0 * s01 * dx * dy + s00 * dy * dy) / det;
  return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(det));
}

std::vector<double> MixturePosterior(
    std::span<const GaussianComponentSpec> components, int num_classes,
    std::span<const double> x) {
  // Log-domain weights keep far-tail points finite.
  std::vector<double> logw;
  double total = 0.0;
  for (const auto& c : components) total += c.count;
  for (const auto& c : components) {
    const double s00 = c.covariance[0], s01 = c.covariance[1],
                 s11 = c.covariance[3];
    const double det = s00 * s11 - s01 * s01;
    const double dx = x[0] - c.mean[0], dy = x[1] - c.mean[1];
    const double q =
        (s11 * dx * dx - 2.0 * s01 * dx * dy + s00 * dy * dy) / det;
    logw.push_back(std::log(c.count / total) - 0.5 * q - 0.5 * std::log(det));
  }
  double max = logw.front();
  for (double v : logw) max = std::max(max, v);
  std::vector<double> post(num_classes, 0.0);
  double sum = 0.0;
  for (size_t i = 0; i < components.size(); ++i) {
    const double w = std::exp(logw[i] - max);
    post[components[i].label] += w;
    sum += w;
  }
  for (double& p : post) p /= sum;
  return post;
}

Dataset SampleMixture(std::span<const GaussianComponentSpec> components,
                      int num_classes, uint64_t seed) {
  Dataset ds;
  ds.task = TaskKind::kClassification;
  ds.num_classes = num_classes;
  CounterRng rng(seed, 1);
  for (const auto& c : components) {
    const double s00 = c.covariance[0], s01 = c.covariance[1],
                 s11 = c.covariance[3];
    if (s00 * s11 - s01 * s01 <= 0.0 || s00 <= 0.0) {
      throw Error("component covariance must be positive definite");
    }
    if (c.label < 0 || c.label >= num_classes || c.count < 0) {
      throw Error("invalid mixture component");
    }
    // Cholesky factor of the 2x2 covariance.
    const double l00 = std::sqrt(s00);
    const double l10 = s01 / l00;
    const double l11 = std::sqrt(s11 - l10 * l10);
    for (int i = 0; i < c.count; ++i) {
      const double z0 = rng.Normal(), z1 = rng.Normal();
      LabeledExample e;
      e.id = ExampleId(ds.examples.size());
      e.features = {c.mean[0] + l00 * z0, c.mean[1] + l10 * z0 + l11 * z1};
      e.label = c.label;
      e.true_posterior = MixturePosterior(components, num_classes, e.features);
      ds.examples.push_back(std::move(e));
    }
  }
  return ds;
}

double TwoGaussiansPosterior1(double a, double x0) {
  return 1.0 / (1.0 + std::exp(-2.0 * a * x0));
}

Dataset GenTwoGaussians(double a, int n_per_class, uint64_t seed) {
  if (n_per_class < 1) throw Error("n_per_class must be >= 1");
  const GaussianComponentSpec comps[] = {
      {{-a, 0.0}, {1.0, 0.0, 0.0, 1.0}, n_per_class, 0},
      {{a, 0.0}, {1.0, 0.0, 0.0, 1.0}, n_per_class, 1},
  };
  Dataset ds = SampleMixture(comps, 2, seed);
  for (auto& e : ds.examples) {
    const double p1 = TwoGaussiansPosterior1(a, e.features[0]);
    e.true_posterior = std::vector<double>{1.0 - p1, p1};
  }
  return ds;
}

Dataset GenOutlierImbalance(int n_major, uint64_t seed) {
  if (n_major < 1) throw Error("n_major must be >= 1");
  const GaussianComponentSpec comps[] = {
      {{0.0, 0.0}, {1.0, 0.0, 0.0, 1.0}, n_major, 1},
      {{10.0, 0.0}, {1.0, 0.0, 0.0, 1.0}, 1, 0},
  };
  return SampleMixture(comps, 2, seed);
}

std::vector<GaussianComponentSpec> GuardianComponents() {
  return {
      {{3.0, 2.0}, {1.0, 0.8, 0.8, 1.0}, 1000, 0},
      {{5.0, 5.0}, {1.0, -0.8, -0.8, 1.0}, 1000, 1},
      {{3.0, 4.0}, {0.1, 0.0, 0.0, 0.1}, 100, 2},
  };
}

BoxRegion GuardianRegion() {
  BoxRegion r;
  r.dims = {{0, 2.0, 2.75}, {1, 0.0, 1.5}};
  return r;
}

GuardianMixture GenGuardianMixture(uint64_t seed) {
  const auto comps = GuardianComponents();
  GuardianMixture out{SampleMixture(comps, 3, seed), GuardianRegion()};
  for (auto& e : out.dataset.examples) {
    e.region_flag = out.region.Contains(e.features);
  }
  return out;
}

MoonShift ParseMoonShift(std::string_view name) {
  if (name == "none") return MoonShift::kNone;
  if (name == "shear") return MoonShift::kShear;
  if (name == "rotate") return MoonShift::kRotate;
  if (name == "translate") return MoonShift::kTranslate;
  throw Error("unknown shift '" + std::string(name) + "'");
}

std::array<double, 2> ApplyMoonShift(MoonShift shift, std::array<double, 2> p) {
  switch (shift) {
    case MoonShift::kNone:
      return p;
    case MoonShift::kShear:
      return {p[0] + 1.25 * p[1], p[1]};
    case MoonShift::kRotate: {
      const double c = std::cos(std::numbers::pi / 6.0);
      const double s = std::sin(std::numbers::pi / 6.0);
      return {c * p[0] - s * p[1], s * p[0] + c * p[1]};
    }
    case MoonShift::kTranslate:
      return {p[0] + 1.0, p[1] - 0.5};
  }
  return p;
}

Dataset GenTwoMoons(int n, double noise_sigma, MoonShift shift,
                    uint64_t seed) {
  if (n < 2) throw Error("two-moons needs n >= 2");
  if (!(noise_sigma >= 0.0)) throw Error("noise_sigma must be >= 0");
  Dataset ds;
  ds.task = TaskKind::kClassification;
  ds.num_classes = 2;
  CounterRng rng(seed, 2);
  for (int i = 0; i < n; ++i) {
    const int label = i < (n + 1) / 2 ? 0 : 1;
    const double theta = rng.Uniform(0.0, std::numbers::pi);
    std::array<double, 2> p =
        label == 0 ? std::array<double, 2>{std::cos(theta), std::sin(theta)}
                   : std::array<double, 2>{1.0 - std::cos(theta),
                                           0.5 - std::sin(theta)};
    p[0] += noise_sigma * rng.Normal();
    p[1] += noise_sigma * rng.Normal();
    p = ApplyMoonShift(shift, p);
    LabeledExample e;
    e.id = ExampleId(ds.examples.size());
    e.features = {p[0], p[1]};
    e.label = label;
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

OracleScores GenOracleScores(double a_full, int n, uint64_t seed) {
  if (!(a_full >= 0.0 && a_full <= 1.0)) {
    throw Error("a_full must lie in [0, 1]");
  }
  if (n < 1) throw Error("n must be >= 1");
  OracleScores out;
  out.dataset.task = TaskKind::kClassification;
  out.dataset.num_classes = 2;
  out.scores.orientation = Orientation::kLowerMoreConfident;
  CounterRng rng(seed, 3);
  const int n_correct = static_cast<int>(std::floor(a_full * n + 1e-9));
  for (int i = 0; i < n; ++i) {
    const bool correct = i < n_correct;
    const int label = i % 2;
    LabeledExample e;
    e.id = ExampleId(i);
    e.label = label;
    out.dataset.examples.push_back(e);
    const double score =
        correct ? rng.Uniform(0.0, 0.5) : rng.Uniform(0.5, 1.0);
    out.scores.entries.push_back(
        {e.id, Label{correct ? label : 1 - label}, score});
    out.correct.push_back(correct);
  }
  return out;
}

double SineMean(double x) {
  return std::sin(2.0 * x) + 0.3 * x * x - 0.4 * x + 1.0;
}

double SineNoiseScale(double x) {
  return 0.2 + 0.8 * std::exp(-(x / 1.5) * (x / 1.5));
}

Dataset GenRegressionSine(int n, uint64_t seed) {
  if (n < 1) throw Error("n must be >= 1");
  Dataset ds;
  ds.task = TaskKind::kRegression;
  CounterRng rng(seed, 4);
  for (int i = 0; i < n; ++i) {
    const double x = rng.Uniform(-4.0, 4.0);
    const double sigma = SineNoiseScale(x);
    LabeledExample e;
    e.id = ExampleId(i);
    e.features = {x};
    e.label = SineMean(x) + sigma * rng.Normal();
    e.noise_scale = sigma;
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

}  // namespace abstain
