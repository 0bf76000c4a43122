#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2n/tensor.hpp"

namespace s2n {

/// A trainable array together with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Handle to a node recorded on a Graph.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Explicit operation tape. Every operation appends one node holding its output
/// value and an adjoint closure; backward() replays the closures in reverse.
///
/// A Graph constructed with record == false keeps values only, which is what
/// evaluation passes use.
template <class T>
class Graph {
 public:
  using Adjoint = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr, "constant"); }

  Var input(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad && record_, nullptr, "input");
  }

  /// Gradients reaching this node are added into p.grad by backward().
  Var parameter(Parameter<T>& p) {
    const Var v = push(p.value, record_, nullptr, "parameter");
    if (record_) nodes_[v.id].sink = &p;
    return v;
  }

  /// Records the result of an operation. The adjoint runs only when the node
  /// requires a gradient, i.e. when any of its inputs does.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Adjoint adjoint,
             const char* op) {
    bool needs = false;
    if (record_) {
      for (const Var& in : inputs) {
        if (in.valid() && nodes_.at(in.id).requires_grad) needs = true;
      }
    }
    return push(std::move(value), needs, needs ? std::move(adjoint) : Adjoint{}, op);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const char* op_name(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty() && n.value.size() != 0) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Reverse-mode sweep from a scalar loss. Returns the node ids whose adjoints
  /// ran, in the order they ran.
  std::vector<std::size_t> backward(Var loss) {
    if (!record_) throw std::logic_error("backward on a non-recording graph");
    const Node& l = nodes_.at(loss.id);
    if (l.value.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + l.value.shape().str());
    }
    if (!l.requires_grad) return {};
    grad(loss)[0] += T{1};

    std::vector<std::size_t> visited;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.adjoint) {
        n.adjoint(*this, i);
        visited.push_back(i);
      }
      if (n.sink != nullptr) {
        Parameter<T>& p = *n.sink;
        if (p.grad.shape() != p.value.shape()) p.zero_grad();
        for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
      }
    }
    return visited;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Adjoint adjoint;
    Parameter<T>* sink = nullptr;
    const char* op = "";
  };

  Var push(Tensor<T> value, bool requires_grad, Adjoint adjoint, const char* op) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.adjoint = std::move(adjoint);
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool record_;
  std::deque<Node> nodes_;  // stable references across push_back
};

}  // namespace s2n
