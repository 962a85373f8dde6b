#include "pointkit/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace pointkit {

void zero_grads(const std::vector<ParamPtr>& params) {
  for (const auto& p : params) p->zero_grad();
}

std::size_t total_numel(const std::vector<ParamPtr>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p->numel();
  return n;
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch, " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

#ifndef NDEBUG
void debug_check_finite(const Tensor& t) {
  if (!all_finite(t)) throw std::runtime_error("tape op produced a non-finite value");
}
#endif

}  // namespace

std::size_t Tape::check(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.slot) >= slots_.size()) {
    throw std::logic_error("Tape: invalid Var handle");
  }
  return static_cast<std::size_t>(v.slot);
}

Var Tape::emplace(Tensor value) {
#ifndef NDEBUG
  debug_check_finite(value);
#endif
  slots_.push_back(Slot{std::move(value), Tensor{}, false});
  return Var{static_cast<Index>(slots_.size() - 1)};
}

Tensor& Tape::grad_of(Index slot) {
  Slot& s = slots_[static_cast<std::size_t>(slot)];
  if (!s.has_grad) {
    s.grad = Tensor::zeros(s.value.shape());
    s.has_grad = true;
  }
  return s.grad;
}

Tensor Tape::grad(Var v) const {
  const Slot& s = slots_[check(v)];
  return s.has_grad ? s.grad : Tensor::zeros(s.value.shape());
}

Var Tape::constant(Tensor t) { return emplace(std::move(t)); }

Var Tape::use(const ParamPtr& p) {
  require(p != nullptr, "Tape::use: null param");
  Var out = emplace(p->value);
  ParamPtr held = p;
  backward_steps_.push_back([this, out, held] {
    if (!grad_ready(out.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(out.slot)].grad;
    require_same_shape(held->grad, go, "param grad");
    for (std::size_t i = 0; i < go.numel(); ++i) held->grad[i] += go[i];
  });
  return out;
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape(ta, tb, "add");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, a, b, o] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& ga = grad_of(a.slot);
    Tensor& gb = grad_of(b.slot);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  });
  return o;
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape(ta, tb, "sub");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, a, b, o] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& ga = grad_of(a.slot);
    Tensor& gb = grad_of(b.slot);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      ga[i] += go[i];
      gb[i] -= go[i];
    }
  });
  return o;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape(ta, tb, "mul");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, a, b, o] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    const Tensor& ta = slots_[static_cast<std::size_t>(a.slot)].value;
    const Tensor& tb = slots_[static_cast<std::size_t>(b.slot)].value;
    Tensor& ga = grad_of(a.slot);
    Tensor& gb = grad_of(b.slot);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      ga[i] += go[i] * tb[i];
      gb[i] += go[i] * ta[i];
    }
  });
  return o;
}

Var Tape::scale(Var a, double s) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, a, o, s] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& ga = grad_of(a.slot);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += s * go[i];
  });
  return o;
}

Var Tape::add_bias(Var x, Var bias) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  require(tb.rows() == 1 && tb.cols() == tx.cols(),
          "add_bias: bias " + tb.shape_str() + " must be [1×" + std::to_string(tx.cols()) +
              "] for input " + tx.shape_str());
  Tensor out = tx;
  const std::size_t n = tx.rows(), m = tx.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) += tb[j];
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, x, bias, o] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& gx = grad_of(x.slot);
    Tensor& gb = grad_of(bias.slot);
    const std::size_t n = go.rows(), m = go.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        gx.at(i, j) += go.at(i, j);
        gb[j] += go.at(i, j);
      }
  });
  return o;
}

Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, x, o] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    const Tensor& tx = slots_[static_cast<std::size_t>(x.slot)].value;
    Tensor& gx = grad_of(x.slot);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      if (tx[i] > 0.0) gx[i] += go[i];
    }
  });
  return o;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  Var o = emplace(pointkit::matmul(ta, tb));
  backward_steps_.push_back([this, a, b, o] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    const Tensor& ta = slots_[static_cast<std::size_t>(a.slot)].value;
    const Tensor& tb = slots_[static_cast<std::size_t>(b.slot)].value;
    Tensor& ga = grad_of(a.slot);
    Tensor& gb = grad_of(b.slot);
    const std::size_t n = ta.rows(), k = ta.cols(), m = tb.cols();
    // ga += go · tbᵀ
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += go.at(i, j) * tb.at(kk, j);
        ga.at(i, kk) += acc;
      }
    // gb += taᵀ · go
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t i = 0; i < n; ++i) {
        const double aik = ta.at(i, kk);
        for (std::size_t j = 0; j < m; ++j) gb.at(kk, j) += aik * go.at(i, j);
      }
  });
  return o;
}

Var Tape::slice_cols(Var x, std::size_t from, std::size_t width) {
  const Tensor& tx = value(x);
  require(from + width <= tx.cols(), "slice_cols: range [" + std::to_string(from) + ", " +
                                         std::to_string(from + width) + ") exceeds " +
                                         tx.shape_str());
  const std::size_t n = tx.rows();
  Tensor out({n, width});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < width; ++j) out.at(i, j) = tx.at(i, from + j);
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, x, o, from, width] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& gx = grad_of(x.slot);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < width; ++j) gx.at(i, from + j) += go.at(i, j);
  });
  return o;
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rows() == tb.rows(), "concat_cols: row mismatch, " + ta.shape_str() + " vs " +
                                      tb.shape_str());
  const std::size_t n = ta.rows(), p = ta.cols(), q = tb.cols();
  Tensor out({n, p + q});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) out.at(i, j) = ta.at(i, j);
    for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = tb.at(i, j);
  }
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, a, b, o, p, q] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& ga = grad_of(a.slot);
    Tensor& gb = grad_of(b.slot);
    for (std::size_t i = 0; i < go.rows(); ++i) {
      for (std::size_t j = 0; j < p; ++j) ga.at(i, j) += go.at(i, j);
      for (std::size_t j = 0; j < q; ++j) gb.at(i, j) += go.at(i, p + j);
    }
  });
  return o;
}

Var Tape::gather_rows(Var x, std::vector<Index> rows) {
  const Tensor& tx = value(x);
  const std::size_t c = tx.cols();
  for (Index r : rows) {
    require(r >= 0 && r < static_cast<Index>(tx.rows()),
            "gather_rows: row " + std::to_string(r) + " outside " + tx.shape_str());
  }
  Tensor out({rows.size(), c});
  for (std::size_t e = 0; e < rows.size(); ++e)
    for (std::size_t j = 0; j < c; ++j) out.at(e, j) = tx.at(static_cast<std::size_t>(rows[e]), j);
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, x, o, rows = std::move(rows), c] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& gx = grad_of(x.slot);
    for (std::size_t e = 0; e < rows.size(); ++e)
      for (std::size_t j = 0; j < c; ++j)
        gx.at(static_cast<std::size_t>(rows[e]), j) += go.at(e, j);
  });
  return o;
}

Var Tape::row_dot(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape(ta, tb, "row_dot");
  const std::size_t n = ta.rows(), c = ta.cols();
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += ta.at(i, j) * tb.at(i, j);
    out.at(i, 0) = acc;
  }
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, a, b, o, c] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    const Tensor& ta = slots_[static_cast<std::size_t>(a.slot)].value;
    const Tensor& tb = slots_[static_cast<std::size_t>(b.slot)].value;
    Tensor& ga = grad_of(a.slot);
    Tensor& gb = grad_of(b.slot);
    for (std::size_t i = 0; i < go.rows(); ++i) {
      const double g = go.at(i, 0);
      for (std::size_t j = 0; j < c; ++j) {
        ga.at(i, j) += g * tb.at(i, j);
        gb.at(i, j) += g * ta.at(i, j);
      }
    }
  });
  return o;
}

Var Tape::mean_rows(Var x) {
  const Tensor& tx = value(x);
  const std::size_t n = tx.rows(), c = tx.cols();
  require(n > 0, "mean_rows: empty input");
  Tensor out({1, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(0, j) += tx.at(i, j);
  for (std::size_t j = 0; j < c; ++j) out.at(0, j) /= static_cast<double>(n);
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, x, o, n, c] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& gx = grad_of(x.slot);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += go.at(0, j) * inv;
  });
  return o;
}

Var Tape::sum(Var x) {
  const Tensor& tx = value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < tx.numel(); ++i) acc += tx[i];
  Var o = emplace(Tensor({1, 1}, {acc}));
  backward_steps_.push_back([this, x, o] {
    if (!grad_ready(o.slot)) return;
    const double g = slots_[static_cast<std::size_t>(o.slot)].grad[0];
    Tensor& gx = grad_of(x.slot);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
  return o;
}

Var Tape::max_rows(Var x) {
  const Tensor& tx = value(x);
  const std::size_t n = tx.rows(), c = tx.cols();
  require(n > 0, "max_rows: empty input");
  Tensor out({1, c});
  std::vector<std::size_t> argmax(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    double best = tx.at(0, j);
    for (std::size_t i = 1; i < n; ++i) {
      if (tx.at(i, j) > best) {  // strict: first maximal row wins ties
        best = tx.at(i, j);
        argmax[j] = i;
      }
    }
    out.at(0, j) = best;
  }
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, x, o, argmax = std::move(argmax), c] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& gx = grad_of(x.slot);
    for (std::size_t j = 0; j < c; ++j) gx.at(argmax[j], j) += go.at(0, j);
  });
  return o;
}

Var Tape::batch_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& tx = value(x);
  const Tensor& tg = value(gamma);
  const Tensor& tb = value(beta);
  const std::size_t n = tx.rows(), m = tx.cols();
  require(n > 0, "batch_norm: empty input");
  require(tg.rows() == 1 && tg.cols() == m && tb.rows() == 1 && tb.cols() == m,
          "batch_norm: scale/shift must be [1×" + std::to_string(m) + "], got " +
              tg.shape_str() + " and " + tb.shape_str());

  Tensor xhat({n, m});
  std::vector<double> inv_std(m);
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += tx.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = tx.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[j] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) xhat.at(i, j) = (tx.at(i, j) - mean) * inv_std[j];
  }
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = tg[j] * xhat.at(i, j) + tb[j];
  Var o = emplace(std::move(out));
  backward_steps_.push_back(
      [this, x, gamma, beta, o, xhat = std::move(xhat), inv_std = std::move(inv_std), n, m] {
        if (!grad_ready(o.slot)) return;
        const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
        const Tensor& tg = slots_[static_cast<std::size_t>(gamma.slot)].value;
        Tensor& gx = grad_of(x.slot);
        Tensor& gg = grad_of(gamma.slot);
        Tensor& gb = grad_of(beta.slot);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t j = 0; j < m; ++j) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sum_dy += go.at(i, j);
            sum_dy_xhat += go.at(i, j) * xhat.at(i, j);
          }
          gg[j] += sum_dy_xhat;
          gb[j] += sum_dy;
          const double k = tg[j] * inv_std[j];
          for (std::size_t i = 0; i < n; ++i) {
            gx.at(i, j) += k * (go.at(i, j) - sum_dy * inv_n - xhat.at(i, j) * sum_dy_xhat * inv_n);
          }
        }
      });
  return o;
}

namespace {
std::size_t check_grouping(std::size_t c, std::size_t groups, const char* op) {
  if (groups == 0 || c % groups != 0) {
    throw std::invalid_argument(std::string(op) + ": channel count " + std::to_string(c) +
                                " not divisible by groups " + std::to_string(groups));
  }
  return c / groups;
}
}  // namespace

Var Tape::grouped_linear(Var r, Var p, std::size_t groups) {
  const Tensor& tr = value(r);
  const Tensor& tp = value(p);
  const std::size_t c = tr.cols();
  const std::size_t cg = check_grouping(c, groups, "grouped_linear");
  require(tp.rows() == 1 && tp.cols() == c,
          "grouped_linear: params must be [1×" + std::to_string(c) + "], got " + tp.shape_str());
  const std::size_t n = tr.rows();
  Tensor out({n, groups});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < groups; ++l) {
      double acc = 0.0;
      for (std::size_t m = 0; m < cg; ++m) acc += tr.at(i, l * cg + m) * tp[l * cg + m];
      out.at(i, l) = acc;
    }
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, r, p, o, groups, cg] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    const Tensor& tr = slots_[static_cast<std::size_t>(r.slot)].value;
    const Tensor& tp = slots_[static_cast<std::size_t>(p.slot)].value;
    Tensor& gr = grad_of(r.slot);
    Tensor& gp = grad_of(p.slot);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t l = 0; l < groups; ++l) {
        const double g = go.at(i, l);
        for (std::size_t m = 0; m < cg; ++m) {
          gr.at(i, l * cg + m) += g * tp[l * cg + m];
          gp[l * cg + m] += g * tr.at(i, l * cg + m);
        }
      }
  });
  return o;
}

Var Tape::group_sum_encoding(Var r, std::size_t groups) {
  const Tensor& tr = value(r);
  const std::size_t c = tr.cols();
  const std::size_t cg = check_grouping(c, groups, "group_sum_encoding");
  const double scale = 1.0 / std::sqrt(static_cast<double>(cg));
  const std::size_t n = tr.rows();
  Tensor out({n, groups});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < groups; ++l) {
      double acc = 0.0;
      for (std::size_t m = 0; m < cg; ++m) acc += tr.at(i, l * cg + m);
      out.at(i, l) = acc * scale;
    }
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, r, o, groups, cg, scale] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& gr = grad_of(r.slot);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t l = 0; l < groups; ++l) {
        const double g = go.at(i, l) * scale;
        for (std::size_t m = 0; m < cg; ++m) gr.at(i, l * cg + m) += g;
      }
  });
  return o;
}

namespace {
void check_edge_rows(const Tensor& t, const NeighborTable& nt, const char* op) {
  if (t.rows() != nt.total_edges()) {
    throw std::invalid_argument(std::string(op) + ": input rows " + std::to_string(t.rows()) +
                                " must equal edge count " + std::to_string(nt.total_edges()));
  }
  for (std::size_t i = 0; i < nt.query_size(); ++i) {
    if (nt.row_size(static_cast<Index>(i)) == 0) {
      throw std::invalid_argument(std::string(op) + ": empty reference set at row " +
                                  std::to_string(i));
    }
  }
}
}  // namespace

Var Tape::segment_softmax(Var w, const NeighborTable& nt) {
  const Tensor& tw = value(w);
  check_edge_rows(tw, nt, "segment_softmax");
  const std::size_t g = tw.cols();
  const std::size_t n = nt.query_size();
  Tensor out({tw.rows(), g});
  for (std::size_t i = 0; i < n; ++i) {
    const Index b = nt.row_begin(static_cast<Index>(i));
    const Index e = nt.row_end(static_cast<Index>(i));
    for (std::size_t l = 0; l < g; ++l) {
      double mx = tw.at(static_cast<std::size_t>(b), l);
      for (Index t = b + 1; t < e; ++t) mx = std::max(mx, tw.at(static_cast<std::size_t>(t), l));
      double denom = 0.0;
      for (Index t = b; t < e; ++t) {
        const double v = std::exp(tw.at(static_cast<std::size_t>(t), l) - mx);
        out.at(static_cast<std::size_t>(t), l) = v;
        denom += v;
      }
      for (Index t = b; t < e; ++t) out.at(static_cast<std::size_t>(t), l) /= denom;
    }
  }
  Var o = emplace(std::move(out));
  std::vector<Index> offsets = nt.offsets;
  backward_steps_.push_back([this, w, o, offsets = std::move(offsets), g] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    const Tensor& sm = slots_[static_cast<std::size_t>(o.slot)].value;
    Tensor& gw = grad_of(w.slot);
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
      const Index b = offsets[i], e = offsets[i + 1];
      for (std::size_t l = 0; l < g; ++l) {
        double dot = 0.0;
        for (Index t = b; t < e; ++t)
          dot += go.at(static_cast<std::size_t>(t), l) * sm.at(static_cast<std::size_t>(t), l);
        for (Index t = b; t < e; ++t)
          gw.at(static_cast<std::size_t>(t), l) +=
              sm.at(static_cast<std::size_t>(t), l) * (go.at(static_cast<std::size_t>(t), l) - dot);
      }
    }
  });
  return o;
}

Var Tape::group_weighted_sum(Var weights, Var values, const NeighborTable& nt,
                             std::size_t groups) {
  const Tensor& tw = value(weights);
  const Tensor& tv = value(values);
  check_edge_rows(tw, nt, "group_weighted_sum");
  check_edge_rows(tv, nt, "group_weighted_sum");
  const std::size_t c = tv.cols();
  const std::size_t cg = check_grouping(c, groups, "group_weighted_sum");
  require(tw.cols() == groups, "group_weighted_sum: weights " + tw.shape_str() + " must have " +
                                   std::to_string(groups) + " columns");
  const std::size_t n = nt.query_size();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const Index b = nt.row_begin(static_cast<Index>(i));
    const Index e = nt.row_end(static_cast<Index>(i));
    for (Index t = b; t < e; ++t)
      for (std::size_t l = 0; l < groups; ++l) {
        const double wv = tw.at(static_cast<std::size_t>(t), l);
        for (std::size_t m = 0; m < cg; ++m)
          out.at(i, l * cg + m) += wv * tv.at(static_cast<std::size_t>(t), l * cg + m);
      }
  }
  Var o = emplace(std::move(out));
  std::vector<Index> offsets = nt.offsets;
  backward_steps_.push_back(
      [this, weights, values, o, offsets = std::move(offsets), groups, cg] {
        if (!grad_ready(o.slot)) return;
        const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
        const Tensor& tw = slots_[static_cast<std::size_t>(weights.slot)].value;
        const Tensor& tv = slots_[static_cast<std::size_t>(values.slot)].value;
        Tensor& gw = grad_of(weights.slot);
        Tensor& gv = grad_of(values.slot);
        for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
          const Index b = offsets[i], e = offsets[i + 1];
          for (Index t = b; t < e; ++t)
            for (std::size_t l = 0; l < groups; ++l) {
              double acc = 0.0;
              for (std::size_t m = 0; m < cg; ++m) {
                const double g = go.at(i, l * cg + m);
                acc += g * tv.at(static_cast<std::size_t>(t), l * cg + m);
                gv.at(static_cast<std::size_t>(t), l * cg + m) +=
                    g * tw.at(static_cast<std::size_t>(t), l);
              }
              gw.at(static_cast<std::size_t>(t), l) += acc;
            }
        }
      });
  return o;
}

Var Tape::segment_sum(Var x, const NeighborTable& nt) {
  const Tensor& tx = value(x);
  check_edge_rows(tx, nt, "segment_sum");
  const std::size_t c = tx.cols();
  const std::size_t n = nt.query_size();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const Index b = nt.row_begin(static_cast<Index>(i));
    const Index e = nt.row_end(static_cast<Index>(i));
    for (Index t = b; t < e; ++t)
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) += tx.at(static_cast<std::size_t>(t), j);
  }
  Var o = emplace(std::move(out));
  std::vector<Index> offsets = nt.offsets;
  backward_steps_.push_back([this, x, o, offsets = std::move(offsets), c] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& gx = grad_of(x.slot);
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
      for (Index t = offsets[i]; t < offsets[i + 1]; ++t)
        for (std::size_t j = 0; j < c; ++j) gx.at(static_cast<std::size_t>(t), j) += go.at(i, j);
    }
  });
  return o;
}

Var Tape::segment_max(Var x, const NeighborTable& nt) {
  const Tensor& tx = value(x);
  check_edge_rows(tx, nt, "segment_max");
  const std::size_t c = tx.cols();
  const std::size_t n = nt.query_size();
  Tensor out({n, c});
  std::vector<Index> argmax(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const Index b = nt.row_begin(static_cast<Index>(i));
    const Index e = nt.row_end(static_cast<Index>(i));
    for (std::size_t j = 0; j < c; ++j) {
      double best = tx.at(static_cast<std::size_t>(b), j);
      Index best_t = b;
      for (Index t = b + 1; t < e; ++t) {
        if (tx.at(static_cast<std::size_t>(t), j) > best) {  // first maximal edge wins ties
          best = tx.at(static_cast<std::size_t>(t), j);
          best_t = t;
        }
      }
      out.at(i, j) = best;
      argmax[i * c + j] = best_t;
    }
  }
  Var o = emplace(std::move(out));
  backward_steps_.push_back([this, x, o, argmax = std::move(argmax), c] {
    if (!grad_ready(o.slot)) return;
    const Tensor& go = slots_[static_cast<std::size_t>(o.slot)].grad;
    Tensor& gx = grad_of(x.slot);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j)
        gx.at(static_cast<std::size_t>(argmax[i * c + j]), j) += go.at(i, j);
  });
  return o;
}

void Tape::backward(Var scalar_loss) {
  const std::size_t s = check(scalar_loss);
  if (slots_[s].value.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                slots_[s].value.shape_str());
  }
  if (backward_done_) throw std::logic_error("backward: tape already differentiated");
  backward_done_ = true;
  grad_of(scalar_loss.slot)[0] = 1.0;
  for (auto it = backward_steps_.rbegin(); it != backward_steps_.rend(); ++it) (*it)();
}

}  // namespace pointkit
