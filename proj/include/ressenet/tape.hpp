#pragma once

#include <cstring>
#include <functional>
#include <string_view>
#include <vector>

#include "ressenet/common.hpp"
#include "ressenet/tensor.hpp"

namespace ressenet {

// Records primitive applications in execution order; the backward sweep
// replays them once, in reverse. Operands always precede their consumers
// because recording happens as the forward pass runs, so reverse order is a
// valid topological order. Gradients accumulate additively, which is what
// makes fan-out (a tensor feeding both the residual branch and the skip)
// come out right.
template <typename T>
class Tape {
public:
  void record(const char* op, std::function<void()> fn) {
    nodes_.push_back(Node{op, std::move(fn)});
  }

  void backward(const TensorPtr<T>& loss) {
    if (consumed_) {
      throw NumericError("backward called twice on a consumed tape");
    }
    if (loss->size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " +
                       shape_str(loss->shape));
    }
    consumed_ = true;
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->fn();
    }
  }

  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

  std::size_t count_op(std::string_view name) const {
    std::size_t n = 0;
    for (const auto& node : nodes_) {
      if (name == node.op) ++n;
    }
    return n;
  }

private:
  struct Node {
    const char* op;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace ressenet
