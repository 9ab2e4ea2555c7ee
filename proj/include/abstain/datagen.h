#ifndef ABSTAIN_DATAGEN_H_
#define ABSTAIN_DATAGEN_H_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abstain/trace_model.h"

namespace abstain {

struct GaussianComponentSpec {
  std::array<double, 2> mean{};
  // Row-major symmetric positive-definite covariance.
  std::array<double, 4> covariance{1.0, 0.0, 0.0, 1.0};
  int count = 0;
  int label = 0;
};

// Axis-aligned box over a subset of input coordinates.
struct BoxRegion {
  struct Dim {
    int index = 0;
    double lower = 0.0;
    double upper = 0.0;
  };
  std::vector<Dim> dims;

  // Throws Error if a bound pair is not increasing or an index repeats.
  void Validate() const;
  // Closed-box membership.
  bool Contains(std::span<const double> x) const;
  bool empty() const { return dims.empty(); }
};

// Example id for position i in generation order. Zero padded so the bundle's
// sort-by-id order equals generation order.
std::string ExampleId(size_t i);

// Density of a 2-D Gaussian component at x.
double GaussianDensity(const GaussianComponentSpec& c,
                       std::span<const double> x);

// Exact Bayes posterior of a Gaussian mixture at x, with priors equal to the
// component count proportions. Components sharing a label are summed.
std::vector<double> MixturePosterior(
    std::span<const GaussianComponentSpec> components, int num_classes,
    std::span<const double> x);

// Draws every component in order and fills analytic posteriors.
Dataset SampleMixture(std::span<const GaussianComponentSpec> components,
                      int num_classes, uint64_t seed);

// Classes 0 at (-a, 0) and 1 at (+a, 0), identity covariance.
Dataset GenTwoGaussians(double a, int n_per_class, uint64_t seed);
// Closed-form posterior of class 1 for the two-Gaussians task.
double TwoGaussiansPosterior1(double a, double x0);

// n_major points of class 1 from N(0, I) and one point of class 0 from
// N((10, 0), I).
Dataset GenOutlierImbalance(int n_major, uint64_t seed);

struct GuardianMixture {
  Dataset dataset;
  BoxRegion region;
};
// Classes 0, 1, 2 correspond to the three mixture components.
std::vector<GaussianComponentSpec> GuardianComponents();
BoxRegion GuardianRegion();
GuardianMixture GenGuardianMixture(uint64_t seed);

enum class MoonShift { kNone, kShear, kRotate, kTranslate };
MoonShift ParseMoonShift(std::string_view name);
std::array<double, 2> ApplyMoonShift(MoonShift shift, std::array<double, 2> p);
Dataset GenTwoMoons(int n, double noise_sigma, MoonShift shift, uint64_t seed);

struct OracleScores {
  Dataset dataset;
  ScoreTable scores;
  std::vector<bool> correct;
};
// floor(a_full * n) correct predictions scored U[0, 0.5), the rest incorrect
// and scored U[0.5, 1). Lower scores are more confident.
OracleScores GenOracleScores(double a_full, int n, uint64_t seed);

double SineMean(double x);
double SineNoiseScale(double x);
// x ~ U[-4, 4], y = SineMean(x) + N(0, SineNoiseScale(x)^2).
Dataset GenRegressionSine(int n, uint64_t seed);

}  // namespace abstain

#endif  // ABSTAIN_DATAGEN_H_
