/* Copyright 2026 The CSIP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CSIP_GRAPH_HPP_
#define CSIP_GRAPH_HPP_

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "csip/tensor.hpp"

namespace csip::nn {

// Handle to a value recorded on a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph;
using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// creation order is a valid topological order for the backward sweep.
//
// A graph built with `record = false` never stores backward closures or
// saved activations; it is the inference path.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var Constant(Tensor value);
  // Borrowed tensor that receives a gradient. `value` must outlive the graph.
  Var Parameter(const Tensor* value);
  // Borrowed tensor without gradient.
  Var Borrow(const Tensor* value);

  Var Push(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  // Zero-initialized on first access.
  Tensor& mutable_grad(Var v);
  void AccumulateGrad(Var v, const Tensor& g);

  // Seeds `root` with `seed` (same shape) and runs the backward sweep.
  void Backward(Var root, const Tensor& seed);
  // Seeds a scalar root with 1.
  void Backward(Var root);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
};

// ---- Operations -----------------------------------------------------------
// All activations are NCHW; matrices are {rows, cols}.

Var Conv2d(Graph& g, Var x, Var weight, int stride, int pad);
// Adds a per-channel bias of shape {C}.
Var AddChannelBias(Graph& g, Var x, Var bias);

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

// Training mode normalizes with batch statistics and updates the running
// statistics in place; evaluation mode uses the running statistics only.
Var BatchNorm2d(Graph& g, Var x, Var gamma, Var beta, const BatchNormState& state,
                bool training);

Var Relu(Graph& g, Var x);
Var Add(Graph& g, Var a, Var b);
Var Sub(Graph& g, Var a, Var b);
Var AbsDiff(Graph& g, Var a, Var b);
Var MaxPool2d(Graph& g, Var x, int kernel, int stride, int pad);
// {N,C,H,W} -> {N,C}
Var GlobalAvgPool(Graph& g, Var x);
// x {N,in}, weight {out,in}, bias {out} -> {N,out}
Var Linear(Graph& g, Var x, Var weight, Var bias);
// Row-wise L2 normalization of a {N,D} matrix.
Var L2NormalizeRows(Graph& g, Var x);
Var UpsampleNearest(Graph& g, Var x, int factor);
Var ConcatChannels(Graph& g, Var a, Var b);
// Mean pixelwise softmax cross-entropy of logits {N,K,H,W} against labels
// (N*H*W entries, row-major). Returns a {1} scalar.
Var SoftmaxCrossEntropy(Graph& g, Var logits, std::span<const int> labels);

}  // namespace csip::nn

#endif  // CSIP_GRAPH_HPP_
