#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lmbreak/nn/kernels.hpp"
#include "lmbreak/nn/tensor.hpp"

namespace lmb::nn {

enum class OpKind { Input, Conv, Silu, Upsample, Add };

struct Node {
  OpKind kind = OpKind::Input;
  std::vector<int> inputs;
  ConvShape conv;          // Conv only
  int factor = 1;          // Upsample only
  std::size_t weight_offset = 0;  // Conv only, into the flat parameter vector
  std::size_t bias_offset = 0;
  double init_gain = 1.0;  // Conv only, multiplies the He scale at initialisation
};

/// Static DAG of layers; node 0 is the input, nodes are topologically ordered.
class Graph {
 public:
  explicit Graph(int input_channels);

  int input_channels() const { return input_channels_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  int output() const { return static_cast<int>(nodes_.size()) - 1; }
  std::size_t parameter_count() const { return parameter_count_; }

  int conv(int input, int out_channels, int kernel = 3, int stride = 1, double init_gain = 1.0);
  int silu(int input);
  int upsample(int input, int factor);
  int add(int a, int b);

  /// conv followed by SiLU.
  int conv_act(int input, int out_channels, int kernel = 3, int stride = 1) {
    return silu(conv(input, out_channels, kernel, stride));
  }

  /// Topology fingerprint: stable text describing every node.
  std::string fingerprint() const;

  /// Output channel count of a node.
  int channels_of(int node) const { return channels_[static_cast<std::size_t>(node)]; }

  /// Deterministic He-style initialisation (biases zero).
  std::vector<float> initial_parameters(std::uint64_t seed) const;

 private:
  int push(Node node, int channels);

  int input_channels_;
  std::vector<Node> nodes_;
  std::vector<int> channels_;
  std::size_t parameter_count_ = 0;
};

/// Per-call activation storage for backpropagation.
template <typename T>
struct Workspace {
  std::vector<Tensor<T>> activations;
  std::vector<Tensor<T>> grads;
};

template <typename T>
class Network {
 public:
  Network(std::shared_ptr<const Graph> graph, std::vector<T> parameters);

  const Graph& graph() const { return *graph_; }
  std::span<const T> parameters() const { return params_; }
  std::span<T> parameters() { return params_; }

  const Tensor<T>& forward(const Tensor<T>& input, Workspace<T>& ws) const;

  /// Backpropagates d_output through the activations stored in ws. Adds weight
  /// gradients into param_grad when non-empty; returns the input gradient when
  /// want_input_grad is set (otherwise an empty tensor).
  Tensor<T> backward(Workspace<T>& ws, const Tensor<T>& d_output, std::span<T> param_grad,
                     bool want_input_grad) const;

 private:
  std::shared_ptr<const Graph> graph_;
  std::vector<T> params_;
};

}  // namespace lmb::nn
