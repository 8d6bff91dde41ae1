#include "finr/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace finr::ad {

Var Tape::push(DenseTensor value, bool needs_grad,
               std::function<void(Tape&, const DenseTensor&)> back, Param* param) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  n.param = param;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ShapeError("stale or foreign tape handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ShapeError("stale or foreign tape handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const DenseTensor& Tape::value(Var v) const { return node(v).value; }

void Tape::add_grad(Var v, const DenseTensor& g) { add_grad_scaled(v, g, 1); }

void Tape::add_grad_scaled(Var v, const DenseTensor& g, real s) {
  Node& n = node(v);
  if (!n.needs_grad) return;
  if (!n.value.same_shape(g)) throw ShapeError("gradient shape mismatch");
  if (!n.grad_live) {
    // First contribution: assign instead of zero-then-accumulate. Most nodes
    // have one consumer, and the saved pass matters on grid-sized tensors.
    n.grad = g;
    if (s != 1) {
      real* dst = n.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] *= s;
    }
    n.grad_live = true;
    return;
  }
  real* dst = n.grad.data();
  const real* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * src[i];
}

Var Tape::constant(DenseTensor v) { return push(std::move(v), false, nullptr); }

Var Tape::leaf(Param& p) {
  if (p.value.empty()) throw ShapeError("parameter '" + p.name + "' has no value");
  return push(p.value, true, nullptr, &p);
}

Var Tape::add(Var a, Var b) {
  const DenseTensor& va = value(a);
  const DenseTensor& vb = value(b);
  if (!va.same_shape(vb)) throw ShapeError("add: shape mismatch");
  DenseTensor out(va.extents());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(out), ng, ng ? [a, b](Tape& t, const DenseTensor& g) {
    t.add_grad(a, g);
    t.add_grad(b, g);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::sub(Var a, Var b) {
  const DenseTensor& va = value(a);
  const DenseTensor& vb = value(b);
  if (!va.same_shape(vb)) throw ShapeError("sub: shape mismatch");
  DenseTensor out(va.extents());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(out), ng, ng ? [a, b](Tape& t, const DenseTensor& g) {
    t.add_grad(a, g);
    t.add_grad_scaled(b, g, -1);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::mul(Var a, Var b) {
  const DenseTensor& va = value(a);
  const DenseTensor& vb = value(b);
  if (!va.same_shape(vb)) throw ShapeError("mul: shape mismatch");
  DenseTensor out(va.extents());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(out), ng, ng ? [a, b](Tape& t, const DenseTensor& g) {
    const DenseTensor& xa = t.value(a);
    const DenseTensor& xb = t.value(b);
    DenseTensor tmp(g.extents());
    for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * xb[i];
    t.add_grad(a, tmp);
    for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * xa[i];
    t.add_grad(b, tmp);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::scale(Var a, real s) {
  const DenseTensor& va = value(a);
  DenseTensor out(va.extents());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * va[i];
  const bool ng = node(a).needs_grad;
  return push(std::move(out), ng, ng ? [a, s](Tape& t, const DenseTensor& g) {
    t.add_grad_scaled(a, g, s);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::add_scalar(Var a, real s) {
  const DenseTensor& va = value(a);
  DenseTensor out(va.extents());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + s;
  const bool ng = node(a).needs_grad;
  return push(std::move(out), ng, ng ? [a](Tape& t, const DenseTensor& g) {
    t.add_grad(a, g);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::abs(Var a) {
  const DenseTensor& va = value(a);
  DenseTensor out(va.extents());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(va[i]);
  const bool ng = node(a).needs_grad;
  // Subgradient 0 at the kink.
  return push(std::move(out), ng, ng ? [a](Tape& t, const DenseTensor& g) {
    const DenseTensor& xa = t.value(a);
    DenseTensor tmp(g.extents());
    for (std::size_t i = 0; i < g.size(); ++i)
      tmp[i] = xa[i] > 0 ? g[i] : (xa[i] < 0 ? -g[i] : real(0));
    t.add_grad(a, tmp);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::sqrt(Var a) {
  const DenseTensor& va = value(a);
  DenseTensor out(va.extents());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(va[i]);
  const bool ng = node(a).needs_grad;
  Var self{static_cast<std::int32_t>(nodes_.size())};
  return push(std::move(out), ng, ng ? [a, self](Tape& t, const DenseTensor& g) {
    const DenseTensor& y = t.value(self);
    DenseTensor tmp(g.extents());
    for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = real(0.5) * g[i] / y[i];
    t.add_grad(a, tmp);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::matmul(Var a, Var b) {
  DenseTensor out = finr::matmul(value(a), value(b));
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(out), ng, ng ? [a, b](Tape& t, const DenseTensor& g) {
    if (t.node(a).needs_grad) t.add_grad(a, matmul_nt(g, t.value(b)));
    if (t.node(b).needs_grad) t.add_grad(b, matmul_tn(t.value(a), g));
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::add_rowvec(Var m, Var row) {
  const DenseTensor& vm = value(m);
  const DenseTensor& vr = value(row);
  if (vm.order() != 2 || vr.order() != 1 || vm.extent(1) != vr.extent(0))
    throw ShapeError("add_rowvec: need (p, n) and (n,)");
  DenseTensor out(vm.extents());
  const std::size_t p = vm.extent(0), n = vm.extent(1);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vm[i * n + j] + vr[j];
  const bool ng = node(m).needs_grad || node(row).needs_grad;
  return push(std::move(out), ng, ng ? [m, row, p, n](Tape& t, const DenseTensor& g) {
    t.add_grad(m, g);
    if (t.node(row).needs_grad) {
      DenseTensor rg({n});
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < n; ++j) rg[j] += g[i * n + j];
      t.add_grad(row, rg);
    }
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::sigma(Var z, const Activation& act, int order) {
  if (order < 0 || order > 2)
    throw CapabilityError("sigma nodes support derivative orders 0..2");
  const DenseTensor& vz = value(z);
  DenseTensor out(vz.extents());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = act_eval(act, vz[i], order);
  const bool ng = node(z).needs_grad;
  return push(std::move(out), ng, ng ? [z, act, order](Tape& t, const DenseTensor& g) {
    const DenseTensor& xz = t.value(z);
    DenseTensor tmp(g.extents());
    for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * act_eval(act, xz[i], order + 1);
    t.add_grad(z, tmp);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::sum(Var a) {
  const DenseTensor& va = value(a);
  real s = 0;
  for (std::size_t i = 0; i < va.size(); ++i) s += va[i];
  const bool ng = node(a).needs_grad;
  return push(DenseTensor::from_data({1}, {s}), ng, ng ? [a](Tape& t, const DenseTensor& g) {
    t.add_grad(a, DenseTensor::full(t.value(a).extents(), g[0]));
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::mean(Var a) {
  const std::size_t n = value(a).size();
  return scale(sum(a), real(1) / static_cast<real>(n));
}

Var Tape::mean_sq(Var a) {
  const DenseTensor& va = value(a);
  const real inv = real(1) / static_cast<real>(va.size());
  real s = 0;
  for (std::size_t i = 0; i < va.size(); ++i) s += va[i] * va[i];
  const bool ng = node(a).needs_grad;
  return push(DenseTensor::from_data({1}, {s * inv}), ng,
              ng ? [a, inv](Tape& t, const DenseTensor& g) {
    t.add_grad_scaled(a, t.value(a), 2 * inv * g[0]);
  } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::gather_rows(Var m, std::vector<std::size_t> rows) {
  const DenseTensor& vm = value(m);
  if (vm.order() != 2) throw ShapeError("gather_rows: need a matrix");
  const std::size_t n = vm.extent(0), w = vm.extent(1);
  DenseTensor out({rows.size(), w});
  for (std::size_t p = 0; p < rows.size(); ++p) {
    if (rows[p] >= n) throw ShapeError("gather_rows: row index out of range");
    std::copy(vm.data() + rows[p] * w, vm.data() + (rows[p] + 1) * w, out.data() + p * w);
  }
  const bool ng = node(m).needs_grad;
  return push(std::move(out), ng,
              ng ? [m, rows = std::move(rows), w](Tape& t, const DenseTensor& g) {
                DenseTensor mg(t.value(m).extents());
                for (std::size_t p = 0; p < rows.size(); ++p)
                  for (std::size_t j = 0; j < w; ++j) mg[rows[p] * w + j] += g[p * w + j];
                t.add_grad(m, mg);
              } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::blend_rows(Var table, std::vector<std::size_t> i0, std::vector<real> w0,
                     std::vector<std::size_t> i1, std::vector<real> w1) {
  const DenseTensor& vt = value(table);
  if (vt.order() != 2) throw ShapeError("blend_rows: need a table matrix");
  const std::size_t p = i0.size();
  if (w0.size() != p || i1.size() != p || w1.size() != p)
    throw ShapeError("blend_rows: index and weight lists must have equal length");
  const std::size_t n = vt.extent(0), f = vt.extent(1);
  DenseTensor out({p, f});
  for (std::size_t q = 0; q < p; ++q) {
    if (i0[q] >= n || i1[q] >= n) throw ShapeError("blend_rows: knot index out of range");
    const real* r0 = vt.data() + i0[q] * f;
    const real* r1 = vt.data() + i1[q] * f;
    real* o = out.data() + q * f;
    for (std::size_t j = 0; j < f; ++j) o[j] = w0[q] * r0[j] + w1[q] * r1[j];
  }
  const bool ng = node(table).needs_grad;
  return push(std::move(out), ng,
              ng ? [table, i0 = std::move(i0), w0 = std::move(w0), i1 = std::move(i1),
                    w1 = std::move(w1), f](Tape& t, const DenseTensor& g) {
                DenseTensor tg(t.value(table).extents());
                for (std::size_t q = 0; q < i0.size(); ++q) {
                  real* g0 = tg.data() + i0[q] * f;
                  real* g1 = tg.data() + i1[q] * f;
                  const real* gr = g.data() + q * f;
                  for (std::size_t j = 0; j < f; ++j) {
                    g0[j] += w0[q] * gr[j];
                    g1[j] += w1[q] * gr[j];
                  }
                }
                t.add_grad(table, tg);
              } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  if (parts.size() == 1) return parts[0];
  const std::size_t p = value(parts[0]).extent(0);
  std::size_t total = 0;
  bool ng = false;
  std::vector<std::size_t> widths;
  for (Var v : parts) {
    const DenseTensor& t = value(v);
    if (t.order() != 2 || t.extent(0) != p) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(t.extent(1));
    total += t.extent(1);
    ng = ng || node(v).needs_grad;
  }
  DenseTensor out({p, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const DenseTensor& t = value(parts[k]);
    for (std::size_t i = 0; i < p; ++i)
      std::copy(t.data() + i * widths[k], t.data() + (i + 1) * widths[k],
                out.data() + i * total + off);
    off += widths[k];
  }
  return push(std::move(out), ng,
              ng ? [parts, widths, p, total](Tape& t, const DenseTensor& g) {
                std::size_t off = 0;
                for (std::size_t k = 0; k < parts.size(); ++k) {
                  if (t.node(parts[k]).needs_grad) {
                    DenseTensor pg({p, widths[k]});
                    for (std::size_t i = 0; i < p; ++i)
                      std::copy(g.data() + i * total + off, g.data() + i * total + off + widths[k],
                                pg.data() + i * widths[k]);
                    t.add_grad(parts[k], pg);
                  }
                  off += widths[k];
                }
              } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::reshape(Var a, std::vector<std::size_t> extents) {
  const DenseTensor& av = value(a);
  DenseTensor out = av;
  out.relabel(extents);  // validates the element count
  const bool ng = node(a).needs_grad;
  std::vector<std::size_t> back(av.extents().begin(), av.extents().end());
  return push(std::move(out), ng,
              ng ? [a, back](Tape& t, const DenseTensor& g) {
                DenseTensor gg = g;
                gg.relabel(back);
                t.add_grad(a, gg);
              } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::compose_grid(Mode mode, std::size_t channels, std::vector<std::size_t> ranks,
                       const std::vector<Var>& mats, Var mix) {
  std::vector<DenseTensor> mvals;
  bool ng = node(mix).needs_grad;
  for (Var m : mats) {
    mvals.push_back(value(m));
    ng = ng || node(m).needs_grad;
  }
  DenseTensor out = finr::compose_grid(mode, channels, ranks, mvals, value(mix));
  return push(std::move(out), ng,
              ng ? [mode, channels, ranks = std::move(ranks), mats, mix](Tape& t,
                                                                         const DenseTensor& g) {
                std::vector<DenseTensor> mv;
                for (Var m : mats) mv.push_back(t.value(m));
                ComposeGrads cg = compose_grid_backward(mode, channels, ranks, mv, t.value(mix), g);
                for (std::size_t k = 0; k < mats.size(); ++k) t.add_grad(mats[k], cg.mats[k]);
                t.add_grad(mix, cg.mix);
              } : std::function<void(Tape&, const DenseTensor&)>());
}

Var Tape::compose_rows(Mode mode, std::size_t channels, std::vector<std::size_t> ranks,
                       const std::vector<Var>& rows, Var mix) {
  std::vector<DenseTensor> rvals;
  bool ng = node(mix).needs_grad;
  for (Var r : rows) {
    rvals.push_back(value(r));
    ng = ng || node(r).needs_grad;
  }
  DenseTensor out = finr::compose_rows(mode, channels, ranks, rvals, value(mix));
  return push(std::move(out), ng,
              ng ? [mode, channels, ranks = std::move(ranks), rows, mix](Tape& t,
                                                                         const DenseTensor& g) {
                std::vector<DenseTensor> rv;
                for (Var r : rows) rv.push_back(t.value(r));
                ComposeGrads cg = compose_rows_backward(mode, channels, ranks, rv, t.value(mix), g);
                for (std::size_t k = 0; k < rows.size(); ++k) t.add_grad(rows[k], cg.mats[k]);
                t.add_grad(mix, cg.mix);
              } : std::function<void(Tape&, const DenseTensor&)>());
}

void Tape::backward(Var loss) {
  Node& ln = node(loss);
  if (ln.value.size() != 1) throw ShapeError("backward needs a scalar loss node");
  for (Node& n : nodes_) n.grad_live = false;
  if (!ln.needs_grad) return;  // loss does not depend on any parameter
  ln.grad = DenseTensor::full(ln.value.extents(), 1);
  ln.grad_live = true;
  for (std::int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.grad_live) continue;
    if (n.back) n.back(*this, n.grad);
    if (n.param) {
      if (!n.param->grad.same_shape(n.grad)) throw ShapeError("parameter gradient shape drifted");
      real* dst = n.param->grad.data();
      const real* src = n.grad.data();
      for (std::size_t j = 0; j < n.grad.size(); ++j) dst[j] += src[j];
    }
  }
}

void Tape::reset() { nodes_.clear(); }

GradCheckReport grad_check(const std::function<Var(Tape&)>& build, std::span<Param* const> params,
                           real h, int probes_per_param) {
  for (Param* p : params) p->zero_grad();
  std::vector<DenseTensor> analytic;
  {
    Tape t;
    t.backward(build(t));
    for (Param* p : params) analytic.push_back(p->grad);
    for (Param* p : params) p->zero_grad();
  }
  auto eval = [&]() {
    Tape t;
    return t.value(build(t))[0];
  };
  GradCheckReport rep;
  for (std::size_t ip = 0; ip < params.size(); ++ip) {
    Param& p = *params[ip];
    const std::size_t n = p.value.size();
    std::size_t count = n;
    if (probes_per_param >= 0) count = std::min<std::size_t>(n, static_cast<std::size_t>(probes_per_param));
    for (std::size_t q = 0; q < count; ++q) {
      // Deterministic spread over the parameter entries.
      const std::size_t idx = (count == n) ? q : (q * n) / count;
      const real saved = p.value[idx];
      const real step = h * std::max(real(1), std::abs(saved));
      p.value[idx] = saved + step;
      const real fp = eval();
      p.value[idx] = saved - step;
      const real fm = eval();
      p.value[idx] = saved;
      const real fd = (fp - fm) / (2 * step);
      const real an = analytic[ip][idx];
      const real rel = std::abs(fd - an) / std::max({real(1), std::abs(fd), std::abs(an)});
      ++rep.probes;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = p.name;
      }
    }
  }
  return rep;
}

}  // namespace finr::ad
