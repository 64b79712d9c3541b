#include "lmbreak/nn/network.hpp"

#include <cmath>
#include <sstream>

#include "lmbreak/error.hpp"
#include "lmbreak/rng.hpp"

namespace lmb::nn {

Graph::Graph(int input_channels) : input_channels_(input_channels) {
  push(Node{}, input_channels);
}

int Graph::push(Node node, int channels) {
  for (int in : node.inputs)
    if (in < 0 || in >= static_cast<int>(nodes_.size())) throw Error("graph input refers to a later node");
  nodes_.push_back(std::move(node));
  channels_.push_back(channels);
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::conv(int input, int out_channels, int kernel, int stride, double init_gain) {
  Node n;
  n.kind = OpKind::Conv;
  n.inputs = {input};
  n.conv = ConvShape{channels_of(input), out_channels, kernel, stride, kernel / 2};
  n.init_gain = init_gain;
  n.weight_offset = parameter_count_;
  parameter_count_ += static_cast<std::size_t>(n.conv.weight_count());
  n.bias_offset = parameter_count_;
  parameter_count_ += static_cast<std::size_t>(out_channels);
  return push(std::move(n), out_channels);
}

int Graph::silu(int input) {
  Node n;
  n.kind = OpKind::Silu;
  n.inputs = {input};
  return push(std::move(n), channels_of(input));
}

int Graph::upsample(int input, int factor) {
  Node n;
  n.kind = OpKind::Upsample;
  n.inputs = {input};
  n.factor = factor;
  return push(std::move(n), channels_of(input));
}

int Graph::add(int a, int b) {
  if (channels_of(a) != channels_of(b)) throw Error("add: channel mismatch");
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a, b};
  return push(std::move(n), channels_of(a));
}

std::string Graph::fingerprint() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    os << i << ':';
    switch (n.kind) {
      case OpKind::Input: os << "input(" << input_channels_ << ')'; break;
      case OpKind::Conv:
        os << "conv(" << n.conv.in_channels << "->" << n.conv.out_channels << ",k" << n.conv.kernel << ",s"
           << n.conv.stride << ')';
        break;
      case OpKind::Silu: os << "silu"; break;
      case OpKind::Upsample: os << "up" << n.factor; break;
      case OpKind::Add: os << "add"; break;
    }
    for (int in : n.inputs) os << '<' << in;
    os << ';';
  }
  return os.str();
}

std::vector<float> Graph::initial_parameters(std::uint64_t seed) const {
  std::vector<float> params(parameter_count_, 0.0f);
  Rng rng(seed);
  for (const Node& n : nodes_) {
    if (n.kind != OpKind::Conv) continue;
    const int fan_in = n.conv.in_channels * n.conv.kernel * n.conv.kernel;
    const double scale = n.init_gain * std::sqrt(2.0 / fan_in);
    for (int i = 0; i < n.conv.weight_count(); ++i)
      params[n.weight_offset + static_cast<std::size_t>(i)] = static_cast<float>(scale * rng.normal());
  }
  return params;
}

template <typename T>
Network<T>::Network(std::shared_ptr<const Graph> graph, std::vector<T> parameters)
    : graph_(std::move(graph)), params_(std::move(parameters)) {
  if (params_.size() != graph_->parameter_count()) throw Error("parameter vector does not match graph");
}

template <typename T>
const Tensor<T>& Network<T>::forward(const Tensor<T>& input, Workspace<T>& ws) const {
  const auto& nodes = graph_->nodes();
  if (input.channels != graph_->input_channels()) throw ShapeError("network input channel mismatch");
  ws.activations.resize(nodes.size());
  ws.activations[0] = input;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    Tensor<T>& out = ws.activations[i];
    const Tensor<T>& a = ws.activations[static_cast<std::size_t>(n.inputs[0])];
    switch (n.kind) {
      case OpKind::Conv:
        conv2d_forward<T>(a, std::span<const T>(params_).subspan(n.weight_offset, n.conv.weight_count()),
                          std::span<const T>(params_).subspan(n.bias_offset, n.conv.out_channels), n.conv, out);
        break;
      case OpKind::Silu: silu_forward(a, out); break;
      case OpKind::Upsample: upsample_nearest_forward(a, n.factor, out); break;
      case OpKind::Add: {
        const Tensor<T>& b = ws.activations[static_cast<std::size_t>(n.inputs[1])];
        if (!a.same_shape(b)) throw ShapeError("add: spatial mismatch");
        out = a;
        for (std::size_t j = 0; j < out.size(); ++j) out.data[j] += b.data[j];
        break;
      }
      case OpKind::Input: break;
    }
  }
  return ws.activations.back();
}

template <typename T>
Tensor<T> Network<T>::backward(Workspace<T>& ws, const Tensor<T>& d_output, std::span<T> param_grad,
                               bool want_input_grad) const {
  const auto& nodes = graph_->nodes();
  if (ws.activations.size() != nodes.size()) throw Error("backward called without forward");
  if (!d_output.same_shape(ws.activations.back())) throw ShapeError("output gradient shape mismatch");
  ws.grads.resize(nodes.size());
  std::vector<bool> has_grad(nodes.size(), false);
  ws.grads.back() = d_output;
  has_grad.back() = true;

  auto accumulate = [&](int idx, Tensor<T>&& g) {
    auto u = static_cast<std::size_t>(idx);
    if (!has_grad[u]) {
      ws.grads[u] = std::move(g);
      has_grad[u] = true;
    } else {
      for (std::size_t j = 0; j < g.size(); ++j) ws.grads[u].data[j] += g.data[j];
    }
  };

  for (std::size_t i = nodes.size() - 1; i >= 1; --i) {
    if (!has_grad[i]) continue;
    const Node& n = nodes[i];
    const Tensor<T>& dy = ws.grads[i];
    const int in0 = n.inputs[0];
    const bool need_input = in0 != 0 || want_input_grad;
    switch (n.kind) {
      case OpKind::Conv: {
        Tensor<T> dx;
        std::span<T> dw, db;
        if (!param_grad.empty()) {
          dw = param_grad.subspan(n.weight_offset, static_cast<std::size_t>(n.conv.weight_count()));
          db = param_grad.subspan(n.bias_offset, static_cast<std::size_t>(n.conv.out_channels));
        }
        conv2d_backward<T>(ws.activations[static_cast<std::size_t>(in0)],
                           std::span<const T>(params_).subspan(n.weight_offset, n.conv.weight_count()), n.conv, dy,
                           need_input ? &dx : nullptr, dw, db);
        if (need_input) accumulate(in0, std::move(dx));
        break;
      }
      case OpKind::Silu: {
        Tensor<T> dx;
        silu_backward(ws.activations[static_cast<std::size_t>(in0)], dy, dx);
        accumulate(in0, std::move(dx));
        break;
      }
      case OpKind::Upsample: {
        Tensor<T> dx;
        upsample_nearest_backward(dy, n.factor, dx);
        accumulate(in0, std::move(dx));
        break;
      }
      case OpKind::Add: {
        Tensor<T> copy = dy;
        accumulate(n.inputs[1], std::move(copy));
        Tensor<T> copy2 = dy;
        accumulate(in0, std::move(copy2));
        break;
      }
      case OpKind::Input: break;
    }
  }
  if (want_input_grad && has_grad[0]) return ws.grads[0];
  if (want_input_grad) return Tensor<T>(ws.activations[0].channels, ws.activations[0].height, ws.activations[0].width);
  return {};
}

template class Network<float>;
template class Network<double>;

}  // namespace lmb::nn
