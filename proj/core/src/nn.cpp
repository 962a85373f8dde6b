#include "pointkit/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pointkit {

Tensor init_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 1.0;
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

LinearLayer LinearLayer::create(const std::string& name, std::size_t in, std::size_t out,
                                bool with_bias, Rng& rng) {
  LinearLayer l;
  l.weight = Param::make(name + ".weight", init_uniform({in, out}, in, rng));
  if (with_bias) l.bias = Param::make(name + ".bias", init_uniform({1, out}, in, rng));
  return l;
}

Var LinearLayer::apply(Tape& tape, Var x) const {
  Var out = tape.matmul(x, tape.use(weight));
  if (bias) out = tape.add_bias(out, tape.use(bias));
  return out;
}

std::size_t LinearLayer::param_count() const {
  return weight->numel() + (bias ? bias->numel() : 0);
}

void LinearLayer::collect(std::vector<ParamPtr>& out) const {
  out.push_back(weight);
  if (bias) out.push_back(bias);
}

NormLayer NormLayer::create(const std::string& name, std::size_t width) {
  NormLayer n;
  n.gamma = Param::make(name + ".gamma", Tensor::full({1, width}, 1.0));
  n.beta = Param::make(name + ".beta", Tensor::zeros({1, width}));
  return n;
}

Var NormLayer::apply(Tape& tape, Var x) const {
  return tape.batch_norm(x, tape.use(gamma), tape.use(beta), eps);
}

std::size_t NormLayer::param_count() const { return gamma->numel() + beta->numel(); }

void NormLayer::collect(std::vector<ParamPtr>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

Mlp2 Mlp2::create(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                  Rng& rng, bool use_norm) {
  Mlp2 m;
  Rng r1 = rng.split(name + ".first");
  Rng r2 = rng.split(name + ".second");
  m.first = LinearLayer::create(name + ".first", in, hidden, true, r1);
  m.norm = NormLayer::create(name + ".norm", hidden);
  m.second = LinearLayer::create(name + ".second", hidden, out, true, r2);
  m.use_norm = use_norm;
  return m;
}

Var Mlp2::apply(Tape& tape, Var x) const {
  Var h = first.apply(tape, x);
  if (use_norm) h = norm.apply(tape, h);
  h = tape.relu(h);
  return second.apply(tape, h);
}

std::size_t Mlp2::param_count() const {
  return first.param_count() + (use_norm ? norm.param_count() : 0) + second.param_count();
}

void Mlp2::collect(std::vector<ParamPtr>& out) const {
  first.collect(out);
  if (use_norm) norm.collect(out);
  second.collect(out);
}

GradCheckReport grad_check(const std::function<Var(Tape&)>& f,
                           const std::vector<ParamPtr>& params, double h, double tol) {
  const auto eval = [&f]() {
    Tape tape;
    Var loss = f(tape);
    const Tensor& v = tape.value(loss);
    if (v.numel() != 1) {
      throw std::invalid_argument("grad_check: f must be scalar-valued, got " + v.shape_str());
    }
    if (!std::isfinite(v[0])) throw std::runtime_error("grad_check: f evaluated non-finite");
    return v[0];
  };

  zero_grads(params);
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var loss = f(tape);
    if (tape.value(loss).numel() != 1) {
      throw std::invalid_argument("grad_check: f must be scalar-valued");
    }
    if (!std::isfinite(tape.value(loss)[0])) {
      throw std::runtime_error("grad_check: f evaluated non-finite");
    }
    tape.backward(loss);
    for (const auto& p : params) analytic.push_back(p->grad);
  }

  GradCheckReport report;
  report.ok = true;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double f_plus = eval();
      p.value[i] = saved - h;
      const double f_minus = eval();
      p.value[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_coord = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.ok = report.max_rel_err <= tol;
  return report;
}

}  // namespace pointkit
