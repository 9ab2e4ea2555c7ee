#include "abstain/network.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "abstain/error.h"
#include "abstain/rng.h"
#include "json.hpp"

namespace abstain {

using nlohmann::json;

size_t MlpNetwork::num_parameters() const {
  size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void MlpNetwork::Validate() const {
  if (layers.empty()) throw Error("network has no layers");
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in == 0 || l.out == 0) {
      throw Error("layer " + std::to_string(i) + " has a zero dimension");
    }
    if (l.weight.size() != l.in * l.out || l.bias.size() != l.out) {
      throw Error("layer " + std::to_string(i) + " has malformed parameters");
    }
    if (i > 0 && layers[i - 1].out != l.in) {
      throw Error("layer " + std::to_string(i) +
                  " input does not chain with the previous layer");
    }
    for (double v : l.weight) {
      if (!std::isfinite(v)) throw Error("non-finite network weight");
    }
    for (double v : l.bias) {
      if (!std::isfinite(v)) throw Error("non-finite network bias");
    }
  }
  if (layers.back().activation != Activation::kIdentity) {
    throw Error("final layer must be identity");
  }
  if (head == HeadKind::kMeanLogVar && output_dim() != 2) {
    throw Error("mean/log-variance head needs two outputs");
  }
}

MlpNetwork InitNetwork(const std::vector<int>& widths, HeadKind head,
                       int num_classes, uint64_t seed) {
  if (widths.empty() || widths.front() <= 0) {
    throw Error("input width must be positive");
  }
  std::vector<size_t> dims;
  dims.push_back(static_cast<size_t>(widths.front()));
  for (size_t i = 1; i < widths.size(); ++i) {
    if (widths[i] < 0) throw Error("layer widths must be nonnegative");
    if (widths[i] > 0) dims.push_back(static_cast<size_t>(widths[i]));
  }
  const size_t out = head == HeadKind::kLogits ? num_classes : 2;
  if (head == HeadKind::kLogits && num_classes < 2) {
    throw Error("classification head needs at least two classes");
  }
  dims.push_back(out);

  MlpNetwork net;
  net.head = head;
  CounterRng rng(seed, 5);
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.in = dims[i];
    l.out = dims[i + 1];
    l.activation =
        i + 2 == dims.size() ? Activation::kIdentity : Activation::kRelu;
    const double scale = std::sqrt(2.0 / static_cast<double>(l.in));
    l.weight.resize(l.in * l.out);
    for (double& w : l.weight) w = scale * rng.Normal();
    l.bias.assign(l.out, 0.0);
    net.layers.push_back(std::move(l));
  }
  return net;
}

ForwardPass ForwardTrace(const MlpNetwork& net, std::span<const double> x) {
  if (x.size() != net.input_dim()) {
    throw Error("feature dimension " + std::to_string(x.size()) +
                " does not match network input " +
                std::to_string(net.input_dim()));
  }
  ForwardPass pass;
  pass.activations.reserve(net.layers.size() + 1);
  pass.activations.emplace_back(x.begin(), x.end());
  for (const auto& l : net.layers) {
    const auto& in = pass.activations.back();
    std::vector<double> out(l.out);
    for (size_t r = 0; r < l.out; ++r) {
      double s = l.bias[r];
      const double* w = &l.weight[r * l.in];
      for (size_t c = 0; c < l.in; ++c) s += w[c] * in[c];
      out[r] = l.activation == Activation::kRelu ? (s > 0.0 ? s : 0.0) : s;
    }
    pass.activations.push_back(std::move(out));
  }
  return pass;
}

std::vector<double> Forward(const MlpNetwork& net, std::span<const double> x) {
  return std::move(ForwardTrace(net, x).activations.back());
}

Gradients Gradients::ZerosLike(const MlpNetwork& net) {
  Gradients g;
  for (const auto& l : net.layers) {
    g.weight.emplace_back(l.weight.size(), 0.0);
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

void Gradients::Scale(double s) {
  for (auto& w : weight) {
    for (double& v : w) v *= s;
  }
  for (auto& b : bias) {
    for (double& v : b) v *= s;
  }
}

void Backward(const MlpNetwork& net, const ForwardPass& pass,
              std::span<const double> grad_output, Gradients& grads) {
  std::vector<double> delta(grad_output.begin(), grad_output.end());
  for (size_t li = net.layers.size(); li-- > 0;) {
    const auto& l = net.layers[li];
    const auto& in = pass.activations[li];
    const auto& out = pass.activations[li + 1];
    if (l.activation == Activation::kRelu) {
      for (size_t r = 0; r < l.out; ++r) {
        if (!(out[r] > 0.0)) delta[r] = 0.0;
      }
    }
    auto& gw = grads.weight[li];
    auto& gb = grads.bias[li];
    std::vector<double> prev(l.in, 0.0);
    for (size_t r = 0; r < l.out; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      gb[r] += d;
      const double* w = &l.weight[r * l.in];
      double* g = &gw[r * l.in];
      for (size_t c = 0; c < l.in; ++c) {
        g[c] += d * in[c];
        prev[c] += d * w[c];
      }
    }
    delta = std::move(prev);
  }
}

MlpNetwork ScaleLogits(MlpNetwork net, double temperature) {
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  auto& l = net.layers.back();
  for (double& w : l.weight) w /= temperature;
  for (double& b : l.bias) b /= temperature;
  return net;
}

std::string NetworkToJson(const MlpNetwork& net) {
  json j;
  j["head"] = net.head == HeadKind::kLogits ? "logits" : "mean_logvar";
  j["layers"] = json::array();
  for (const auto& l : net.layers) {
    j["layers"].push_back({
        {"in", l.in},
        {"out", l.out},
        {"activation", l.activation == Activation::kRelu ? "relu" : "identity"},
        {"weight", l.weight},
        {"bias", l.bias},
    });
  }
  return j.dump(1) + "\n";
}

MlpNetwork NetworkFromJson(const std::string& text) {
  MlpNetwork net;
  try {
    const json j = json::parse(text);
    const std::string head = j.at("head").get<std::string>();
    if (head == "logits") {
      net.head = HeadKind::kLogits;
    } else if (head == "mean_logvar") {
      net.head = HeadKind::kMeanLogVar;
    } else {
      throw Error("unknown head '" + head + "'");
    }
    for (const auto& jl : j.at("layers")) {
      DenseLayer l;
      l.in = jl.at("in").get<size_t>();
      l.out = jl.at("out").get<size_t>();
      const std::string act = jl.at("activation").get<std::string>();
      if (act == "relu") {
        l.activation = Activation::kRelu;
      } else if (act == "identity") {
        l.activation = Activation::kIdentity;
      } else {
        throw Error("unknown activation '" + act + "'");
      }
      l.weight = jl.at("weight").get<std::vector<double>>();
      l.bias = jl.at("bias").get<std::vector<double>>();
      net.layers.push_back(std::move(l));
    }
  } catch (const json::exception& ex) {
    throw Error(std::string("model json: ") + ex.what());
  }
  net.Validate();
  return net;
}

void SaveNetwork(const MlpNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << NetworkToJson(net);
  if (!out) throw Error("cannot write " + path.string());
}

MlpNetwork LoadNetwork(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read model " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return NetworkFromJson(ss.str());
}

}  // namespace abstain
