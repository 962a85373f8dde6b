#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pointkit/geom.hpp"
#include "pointkit/tensor.hpp"

namespace pointkit {

/// A learnable tensor. Gradients are zero-initialized and accumulate across
/// backward passes until zero_grad() is called.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  static std::shared_ptr<Param> make(std::string name, Tensor init) {
    auto p = std::make_shared<Param>();
    p->name = std::move(name);
    p->grad = Tensor::zeros(init.shape());
    p->value = std::move(init);
    return p;
  }
  void zero_grad() { grad.fill(0.0); }
  std::size_t numel() const { return value.numel(); }
};
using ParamPtr = std::shared_ptr<Param>;

void zero_grads(const std::vector<ParamPtr>& params);
std::size_t total_numel(const std::vector<ParamPtr>& params);

/// Handle to a value produced on a Tape.
struct Var {
  Index slot = -1;
  bool valid() const { return slot >= 0; }
};

/// Reverse-mode tape. Ops record a backward closure at execution time;
/// backward() replays them in exact reverse order. Single-threaded per tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t);
  Var use(const ParamPtr& p);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_bias(Var x, Var bias);  // x[n×m] + bias[1×m] broadcast over rows
  Var relu(Var x);
  Var matmul(Var a, Var b);
  Var slice_cols(Var x, std::size_t from, std::size_t width);
  Var concat_cols(Var a, Var b);
  Var gather_rows(Var x, std::vector<Index> rows);
  Var row_dot(Var a, Var b);  // [n×c],[n×c] -> [n×1]
  Var mean_rows(Var x);       // [n×c] -> [1×c]
  Var sum(Var x);             // -> [1×1]
  Var max_rows(Var x);        // [n×c] -> [1×c], subgradient to the first argmax row

  /// Per-feature normalization over the rows present in the call:
  /// y = gamma * (x - mean) / sqrt(var + eps) + beta, biased variance.
  Var batch_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

  /// out[i][l] = dot(r[i][l*c/g .. (l+1)*c/g), p[l*c/g .. (l+1)*c/g)).
  /// p packs the g per-group parameter vectors into one [1×c] row.
  Var grouped_linear(Var r, Var p, std::size_t groups);

  /// Fixed (non-learned) encoding: out[i][l] = sum of group l of r / sqrt(c/g).
  Var group_sum_encoding(Var r, std::size_t groups);

  /// Softmax per (query row, column) over the ragged rows of `nt`; inputs and
  /// outputs are edge-major [E×g]. Max-subtracted for stability. Errors on an
  /// empty reference set.
  Var segment_softmax(Var w, const NeighborTable& nt);

  /// out[i][l*c/g + m] = sum over edges e of row i of w[e][l] * v[e][l*c/g + m].
  Var group_weighted_sum(Var weights, Var values, const NeighborTable& nt, std::size_t groups);

  /// out[i][j] = sum over edges e of row i of x[e][j].
  Var segment_sum(Var x, const NeighborTable& nt);

  /// out[i][j] = max over edges e of row i of x[e][j]; gradient routes to the
  /// first maximal edge in row order.
  Var segment_max(Var x, const NeighborTable& nt);

  void backward(Var scalar_loss);

  const Tensor& value(Var v) const { return slots_[check(v)].value; }
  /// Gradient of the last backward() loss w.r.t. this value (zeros if the
  /// loss does not depend on it).
  Tensor grad(Var v) const;

  std::size_t size() const { return slots_.size(); }

 private:
  struct Slot {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool has_grad = false;
  };

  std::size_t check(Var v) const;
  Var emplace(Tensor value);
  Tensor& grad_of(Index slot);
  bool grad_ready(Index slot) const { return slots_[static_cast<std::size_t>(slot)].has_grad; }

  std::vector<Slot> slots_;
  std::vector<std::function<void()>> backward_steps_;
  bool backward_done_ = false;
};

}  // namespace pointkit
