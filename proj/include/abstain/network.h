#ifndef ABSTAIN_NETWORK_H_
#define ABSTAIN_NETWORK_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace abstain {

enum class Activation { kRelu, kIdentity };

// Row-major out x in weight matrix plus bias.
struct DenseLayer {
  size_t in = 0;
  size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;
  Activation activation = Activation::kRelu;

  double& W(size_t r, size_t c) { return weight[r * in + c]; }
  double W(size_t r, size_t c) const { return weight[r * in + c]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Logits over C classes, or a (mean, log-variance) regression pair.
enum class HeadKind { kLogits, kMeanLogVar };

struct MlpNetwork {
  std::vector<DenseLayer> layers;
  HeadKind head = HeadKind::kLogits;

  size_t input_dim() const { return layers.front().in; }
  size_t output_dim() const { return layers.back().out; }
  size_t num_parameters() const;
  // Throws Error unless dimensions chain, the last layer is identity and all
  // parameters are finite.
  void Validate() const;

  friend bool operator==(const MlpNetwork&, const MlpNetwork&) = default;
};

// widths = [D, h_1, ..., h_k]; zero hidden widths are skipped, so [D, 0] is a
// linear model. ReLU layers use He initialisation, biases start at zero.
MlpNetwork InitNetwork(const std::vector<int>& widths, HeadKind head,
                       int num_classes, uint64_t seed);

struct ForwardPass {
  // activations[0] is the input, activations[l + 1] the output of layer l.
  std::vector<std::vector<double>> activations;
  std::span<const double> output() const { return activations.back(); }
};

ForwardPass ForwardTrace(const MlpNetwork& net, std::span<const double> x);
std::vector<double> Forward(const MlpNetwork& net, std::span<const double> x);

// Parameter-shaped gradient buffers.
struct Gradients {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  static Gradients ZerosLike(const MlpNetwork& net);
  void Scale(double s);
};

// Adds d(loss)/d(params) to `grads` given d(loss)/d(output).
void Backward(const MlpNetwork& net, const ForwardPass& pass,
              std::span<const double> grad_output, Gradients& grads);

// Divides the final layer by T, so logits become z / T exactly up to
// rounding. Argmax predictions are unchanged.
MlpNetwork ScaleLogits(MlpNetwork net, double temperature);

std::string NetworkToJson(const MlpNetwork& net);
MlpNetwork NetworkFromJson(const std::string& text);
void SaveNetwork(const MlpNetwork& net, const std::filesystem::path& path);
MlpNetwork LoadNetwork(const std::filesystem::path& path);

}  // namespace abstain

#endif  // ABSTAIN_NETWORK_H_
