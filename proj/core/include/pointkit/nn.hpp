#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pointkit/autodiff.hpp"
#include "pointkit/rng.hpp"

namespace pointkit {

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from the given stream.
Tensor init_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng);

struct LinearLayer {
  ParamPtr weight;                // in×out
  ParamPtr bias;                  // 1×out, may be null

  static LinearLayer create(const std::string& name, std::size_t in, std::size_t out,
                            bool with_bias, Rng& rng);
  Var apply(Tape& tape, Var x) const;
  std::size_t param_count() const;
  void collect(std::vector<ParamPtr>& out) const;
};

struct NormLayer {
  ParamPtr gamma;  // 1×width, init 1
  ParamPtr beta;   // 1×width, init 0
  double eps = 1e-5;

  static NormLayer create(const std::string& name, std::size_t width);
  Var apply(Tape& tape, Var x) const;
  std::size_t param_count() const;
  void collect(std::vector<ParamPtr>& out) const;
};

/// Two-layer MLP: linear -> (norm) -> ReLU -> linear. Normalization is
/// per-feature over the rows of the call, so the module is training-free
/// deterministic.
struct Mlp2 {
  LinearLayer first;
  NormLayer norm;
  LinearLayer second;
  bool use_norm = true;

  static Mlp2 create(const std::string& name, std::size_t in, std::size_t hidden,
                     std::size_t out, Rng& rng, bool use_norm = true);
  Var apply(Tape& tape, Var x) const;
  std::size_t param_count() const;
  void collect(std::vector<ParamPtr>& out) const;
};

struct GradCheckReport {
  bool ok = false;
  double max_rel_err = 0.0;
  std::string worst_coord;  // "param[i]" of the worst coordinate
  std::size_t coords_checked = 0;

  bool pass(double tol) const { return max_rel_err <= tol; }
};

/// Compares analytic gradients against central differences
/// (f(θ+h) - f(θ-h)) / 2h for every coordinate of every param. Relative error
/// uses a 1e-3 denominator floor so near-zero gradients are judged by
/// absolute error. Throws if f evaluates non-finite.
GradCheckReport grad_check(const std::function<Var(Tape&)>& f,
                           const std::vector<ParamPtr>& params, double h = 1e-5,
                           double tol = 1e-4);

}  // namespace pointkit
