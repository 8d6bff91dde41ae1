#include "finr/compose.hpp"

#include <algorithm>
#include <cstring>

namespace finr {

namespace {

std::string shape_str(const DenseTensor& t) {
  std::string s = "(";
  for (int k = 0; k < t.order(); ++k) {
    if (k) s += ", ";
    s += std::to_string(t.extent(k));
  }
  return s + ")";
}

// Odometer over a multi-index; returns false after the last combination.
bool advance(std::vector<std::size_t>& ix, const std::vector<std::size_t>& ext) {
  for (int k = static_cast<int>(ext.size()) - 1; k >= 0; --k) {
    if (++ix[static_cast<std::size_t>(k)] < ext[static_cast<std::size_t>(k)]) return true;
    ix[static_cast<std::size_t>(k)] = 0;
  }
  return false;
}

// Split extents at mode position pos into (P, M, S).
struct ModeView {
  std::size_t P = 1, M = 1, S = 1;
};

ModeView view_at(const std::vector<std::size_t>& ext, int pos) {
  ModeView v;
  for (int k = 0; k < static_cast<int>(ext.size()); ++k) {
    const std::size_t e = ext[static_cast<std::size_t>(k)];
    if (k < pos)
      v.P *= e;
    else if (k == pos)
      v.M = e;
    else
      v.S *= e;
  }
  return v;
}

// out[p, j, s] = sum_i cur[p, i, s] * (transpose_w ? W[j, i] : W[i, j]).
// The contracted mode stays at position pos with the new extent.
DenseTensor contract_mode(const DenseTensor& cur, int pos, const DenseTensor& w, bool transpose_w) {
  const ModeView v = view_at(cur.extents(), pos);
  const std::size_t wi = transpose_w ? w.extent(1) : w.extent(0);
  const std::size_t wj = transpose_w ? w.extent(0) : w.extent(1);
  if (wi != v.M) throw ShapeError("contract_mode: extent mismatch");
  std::vector<std::size_t> next_ext = cur.extents();
  next_ext[static_cast<std::size_t>(pos)] = wj;
  DenseTensor out(next_ext);
  const real* pc = cur.data();
  real* po = out.data();
#pragma omp parallel for schedule(static) if (v.P > 8)
  for (std::size_t p = 0; p < v.P; ++p) {
    const real* cslab = pc + p * v.M * v.S;
    real* oslab = po + p * wj * v.S;
    for (std::size_t i = 0; i < v.M; ++i) {
      const real* crow = cslab + i * v.S;
      for (std::size_t j = 0; j < wj; ++j) {
        const real wv = transpose_w ? w[j * v.M + i] : w[i * wj + j];
        if (wv == 0) continue;
        real* orow = oslab + j * v.S;
        for (std::size_t s = 0; s < v.S; ++s) orow[s] += wv * crow[s];
      }
    }
  }
  return out;
}

// out[a, b] = sum_{p, s} A[p, a, s] * B[p, b, s], both split at mode pos.
DenseTensor pair_contract(const DenseTensor& a, const DenseTensor& b, int pos) {
  const ModeView va = view_at(a.extents(), pos);
  const ModeView vb = view_at(b.extents(), pos);
  if (va.P != vb.P || va.S != vb.S) throw ShapeError("pair_contract: surrounding extents differ");
  DenseTensor out({va.M, vb.M});
  const real* pa = a.data();
  const real* pb = b.data();
  for (std::size_t p = 0; p < va.P; ++p) {
    const real* aslab = pa + p * va.M * va.S;
    const real* bslab = pb + p * vb.M * vb.S;
    for (std::size_t i = 0; i < va.M; ++i)
      for (std::size_t j = 0; j < vb.M; ++j) {
        real acc = 0;
        const real* ar = aslab + i * va.S;
        const real* br = bslab + j * vb.S;
        for (std::size_t s = 0; s < va.S; ++s) acc += ar[s] * br[s];
        out[i * vb.M + j] += acc;
      }
  }
  return out;
}

std::size_t spatial_size(const FactorSet& fs) {
  std::size_t n = 1;
  for (int k = 0; k < fs.d(); ++k) n *= fs.axis_extent(k);
  return n;
}

std::vector<std::size_t> out_extents(const FactorSet& fs) {
  std::vector<std::size_t> e;
  for (int k = 0; k < fs.d(); ++k) e.push_back(fs.axis_extent(k));
  e.push_back(fs.channels);
  return e;
}

// Progressive Khatri-Rao product over the CP factors: rows indexed by the
// flattened spatial grid, columns by the shared rank.
DenseTensor cp_row_products(const FactorSet& fs) {
  const std::size_t r = fs.ranks[0];
  DenseTensor t = fs.factors[0];
  for (int k = 1; k < fs.d(); ++k) {
    const DenseTensor& f = fs.factors[static_cast<std::size_t>(k)];
    const std::size_t p = t.extent(0), n = f.extent(0);
    DenseTensor nt({p * n, r});
    for (std::size_t pi = 0; pi < p; ++pi)
      for (std::size_t i = 0; i < n; ++i) {
        const real* trow = t.data() + pi * r;
        const real* frow = f.data() + i * r;
        real* orow = nt.data() + (pi * n + i) * r;
        for (std::size_t rr = 0; rr < r; ++rr) orow[rr] = trow[rr] * frow[rr];
      }
    t = std::move(nt);
  }
  return t;
}

// TT chain states V_k for k = 1..d-1; V_k has shape (N_1*...*N_k, R_k).
std::vector<DenseTensor> tt_chains(const FactorSet& fs) {
  std::vector<DenseTensor> chains;
  chains.push_back(fs.factors[0]);
  for (int k = 1; k + 1 < fs.d(); ++k) {
    const DenseTensor& prev = chains.back();
    const DenseTensor& g = fs.factors[static_cast<std::size_t>(k)];
    const std::size_t p = prev.extent(0), ra = g.extent(0), n = g.extent(1), rb = g.extent(2);
    DenseTensor next({p * n, rb});
    const real* pv = prev.data();
    const real* pg = g.data();
    real* pn = next.data();
#pragma omp parallel for schedule(static) if (p > 16)
    for (std::size_t pi = 0; pi < p; ++pi) {
      for (std::size_t a = 0; a < ra; ++a) {
        const real va = pv[pi * ra + a];
        if (va == 0) continue;
        const real* gslab = pg + a * n * rb;
        for (std::size_t i = 0; i < n; ++i) {
          real* orow = pn + (pi * n + i) * rb;
          const real* grow = gslab + i * rb;
          for (std::size_t b = 0; b < rb; ++b) orow[b] += va * grow[b];
        }
      }
    }
    chains.push_back(std::move(next));
  }
  return chains;
}

}  // namespace

Mode mode_from_string(const std::string& s) {
  if (s == "cp") return Mode::CP;
  if (s == "tt") return Mode::TT;
  if (s == "tu" || s == "tucker") return Mode::TU;
  throw ConfigError("unknown composition mode '" + s + "' (expected cp, tt, or tu)");
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::CP: return "cp";
    case Mode::TT: return "tt";
    case Mode::TU: return "tu";
  }
  return "?";
}

std::size_t FactorSet::axis_extent(int k) const {
  const DenseTensor& f = factors.at(static_cast<std::size_t>(k));
  if (mode == Mode::TT && k > 0 && k + 1 < d()) return f.extent(1);
  return f.extent(0);
}

void FactorSet::validate() const {
  const int dd = d();
  if (dd < 1) throw ShapeError("factor set has no factors");
  if (dd + 1 > kMaxModes)
    throw ShapeError("composition of " + std::to_string(dd) +
                     " axes plus a channel mode exceeds the supported tensor order");
  if (channels < 1) throw ShapeError("factor set needs at least one channel");
  switch (mode) {
    case Mode::CP: {
      if (ranks.size() != 1) throw ShapeError("cp expects a single shared rank");
      const std::size_t r = ranks[0];
      if (r < 1) throw ShapeError("cp rank must be positive");
      for (int k = 0; k < dd; ++k) {
        const DenseTensor& f = factors[static_cast<std::size_t>(k)];
        if (f.order() != 2 || f.extent(1) != r)
          throw ShapeError("cp factor " + std::to_string(k) + " must be (N_" + std::to_string(k) +
                           ", " + std::to_string(r) + "), got " + shape_str(f));
      }
      if (mix.order() != 2 || mix.extent(0) != r || mix.extent(1) != channels)
        throw ShapeError("cp channel mixer must be (" + std::to_string(r) + ", " +
                         std::to_string(channels) + "), got " + shape_str(mix));
      break;
    }
    case Mode::TT: {
      if (dd < 2) throw ShapeError("tt needs at least two axes");
      if (ranks.size() + 1 != static_cast<std::size_t>(dd))
        throw ShapeError("tt expects " + std::to_string(dd - 1) + " bond ranks, got " +
                         std::to_string(ranks.size()));
      for (std::size_t r : ranks)
        if (r < 1) throw ShapeError("tt bond ranks must be positive");
      const DenseTensor& head = factors[0];
      if (head.order() != 2 || head.extent(1) != ranks[0])
        throw ShapeError("tt head factor must be (N_0, " + std::to_string(ranks[0]) + "), got " +
                         shape_str(head));
      for (int k = 1; k + 1 < dd; ++k) {
        const DenseTensor& g = factors[static_cast<std::size_t>(k)];
        const std::size_t ra = ranks[static_cast<std::size_t>(k - 1)];
        const std::size_t rb = ranks[static_cast<std::size_t>(k)];
        if (g.order() != 3 || g.extent(0) != ra || g.extent(2) != rb)
          throw ShapeError("tt interior core " + std::to_string(k) + " must be (" +
                           std::to_string(ra) + ", N_" + std::to_string(k) + ", " +
                           std::to_string(rb) + ") so adjacent bond ranks agree, got " +
                           shape_str(g));
      }
      const DenseTensor& tail = factors[static_cast<std::size_t>(dd - 1)];
      if (tail.order() != 2 || tail.extent(1) != ranks.back())
        throw ShapeError("tt tail factor must be (N_" + std::to_string(dd - 1) + ", " +
                         std::to_string(ranks.back()) + ") on the last bond rank, got " +
                         shape_str(tail));
      if (mix.order() != 2 || mix.extent(0) != ranks.back() || mix.extent(1) != channels)
        throw ShapeError("tt channel mixer must be (" + std::to_string(ranks.back()) + ", " +
                         std::to_string(channels) + "), got " + shape_str(mix));
      break;
    }
    case Mode::TU: {
      if (ranks.size() != static_cast<std::size_t>(dd))
        throw ShapeError("tucker expects one rank per axis, got " + std::to_string(ranks.size()) +
                         " for " + std::to_string(dd) + " axes");
      for (int k = 0; k < dd; ++k) {
        const DenseTensor& f = factors[static_cast<std::size_t>(k)];
        if (f.order() != 2 || f.extent(1) != ranks[static_cast<std::size_t>(k)])
          throw ShapeError("tucker factor " + std::to_string(k) + " must be (N_" +
                           std::to_string(k) + ", " + std::to_string(ranks[static_cast<std::size_t>(k)]) +
                           "), got " + shape_str(f));
      }
      if (mix.order() != dd + 1)
        throw ShapeError("tucker core must have one mode per axis plus a channel mode");
      for (int k = 0; k < dd; ++k)
        if (mix.extent(k) != ranks[static_cast<std::size_t>(k)])
          throw ShapeError("tucker core mode " + std::to_string(k) + " extent " +
                           std::to_string(mix.extent(k)) + " does not match rank " +
                           std::to_string(ranks[static_cast<std::size_t>(k)]));
      if (mix.extent(dd) != channels)
        throw ShapeError("tucker core channel extent does not match channel count");
      break;
    }
  }
}

DenseTensor compose(const FactorSet& fs) {
  fs.validate();
  switch (fs.mode) {
    case Mode::CP: return cp_compose(fs);
    case Mode::TT: return tt_compose(fs);
    case Mode::TU: return tucker_compose(fs);
  }
  throw ShapeError("unreachable");
}

DenseTensor cp_compose(const FactorSet& fs) {
  if (fs.d() == 2) {
    // Per channel G_c = (A diag(mix[:,c])) B^T: plain GEMMs instead of the
    // Khatri-Rao table, which would materialize (N1*N2, R).
    const DenseTensor& a = fs.factors[0];
    const DenseTensor& b = fs.factors[1];
    const std::size_t n1 = a.extent(0), n2 = b.extent(0), r = fs.ranks[0], c = fs.channels;
    DenseTensor as({n1, r});
    if (c == 1) {
      for (std::size_t i = 0; i < n1; ++i)
        for (std::size_t rr = 0; rr < r; ++rr) as[i * r + rr] = a[i * r + rr] * fs.mix[rr];
      DenseTensor g = matmul_nt(as, b);
      return DenseTensor::from_data(out_extents(fs), std::move(g.vec()));
    }
    DenseTensor out(out_extents(fs));
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < n1; ++i)
        for (std::size_t rr = 0; rr < r; ++rr) as[i * r + rr] = a[i * r + rr] * fs.mix[rr * c + ch];
      const DenseTensor g = matmul_nt(as, b);
      real* po = out.data();
      for (std::size_t p = 0; p < n1 * n2; ++p) po[p * c + ch] = g[p];
    }
    return out;
  }
  const DenseTensor t = cp_row_products(fs);
  DenseTensor flat = matmul(t, fs.mix);
  return DenseTensor::from_data(out_extents(fs), std::move(flat.vec()));
}

DenseTensor tt_compose(const FactorSet& fs) {
  const std::vector<DenseTensor> chains = tt_chains(fs);
  const DenseTensor& v = chains.back();
  const DenseTensor& tail = fs.factors[static_cast<std::size_t>(fs.d() - 1)];
  const std::size_t p = v.extent(0), r = v.extent(1);
  const std::size_t nd = tail.extent(0), c = fs.channels;
  DenseTensor out(out_extents(fs));
  real* po = out.data();
  const real* pv = v.data();
  const real* pt = tail.data();
  const real* pm = fs.mix.data();
#pragma omp parallel for schedule(static) if (p > 16)
  for (std::size_t pi = 0; pi < p; ++pi) {
    const real* vrow = pv + pi * r;
    for (std::size_t i = 0; i < nd; ++i) {
      real* orow = po + (pi * nd + i) * c;
      const real* trow = pt + i * r;
      for (std::size_t rr = 0; rr < r; ++rr) {
        const real w = vrow[rr] * trow[rr];
        if (w == 0) continue;
        const real* mrow = pm + rr * c;
        for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += w * mrow[ch];
      }
    }
  }
  return out;
}

DenseTensor tucker_compose(const FactorSet& fs) {
  DenseTensor cur = fs.mix;
  for (int k = 0; k < fs.d(); ++k)
    cur = contract_mode(cur, k, fs.factors[static_cast<std::size_t>(k)], /*transpose_w=*/true);
  return cur;
}

DenseTensor reference_compose(const FactorSet& fs) {
  fs.validate();
  const int dd = fs.d();
  const std::size_t c = fs.channels;
  DenseTensor out(out_extents(fs));
  std::vector<std::size_t> sp_ext;
  for (int k = 0; k < dd; ++k) sp_ext.push_back(fs.axis_extent(k));
  std::vector<std::size_t> ix(static_cast<std::size_t>(dd), 0);
  std::size_t flat = 0;
  do {
    real* orow = out.data() + flat * c;
    switch (fs.mode) {
      case Mode::CP: {
        for (std::size_t r = 0; r < fs.ranks[0]; ++r) {
          real prod = 1;
          for (int k = 0; k < dd; ++k) prod *= fs.factors[static_cast<std::size_t>(k)].at(ix[static_cast<std::size_t>(k)], r);
          for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += prod * fs.mix.at(r, ch);
        }
        break;
      }
      case Mode::TT: {
        std::vector<std::size_t> rix(fs.ranks.size(), 0);
        do {
          real term = fs.factors[0].at(ix[0], rix[0]);
          for (int k = 1; k + 1 < dd; ++k)
            term *= fs.factors[static_cast<std::size_t>(k)].at(rix[static_cast<std::size_t>(k - 1)],
                                                               ix[static_cast<std::size_t>(k)],
                                                               rix[static_cast<std::size_t>(k)]);
          term *= fs.factors[static_cast<std::size_t>(dd - 1)].at(ix[static_cast<std::size_t>(dd - 1)],
                                                                  rix.back());
          for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += term * fs.mix.at(rix.back(), ch);
        } while (advance(rix, fs.ranks));
        break;
      }
      case Mode::TU: {
        std::vector<std::size_t> rix(fs.ranks.size(), 0);
        do {
          real prod = 1;
          for (int k = 0; k < dd; ++k)
            prod *= fs.factors[static_cast<std::size_t>(k)].at(ix[static_cast<std::size_t>(k)],
                                                               rix[static_cast<std::size_t>(k)]);
          std::size_t core_off = 0;
          for (int k = 0; k < dd; ++k) core_off = core_off * fs.ranks[static_cast<std::size_t>(k)] + rix[static_cast<std::size_t>(k)];
          for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += prod * fs.mix[core_off * c + ch];
        } while (advance(rix, fs.ranks));
        break;
      }
    }
    ++flat;
  } while (advance(ix, sp_ext));
  return out;
}

DenseTensor contract_point(const FactorSet& fs, const std::vector<DenseTensor>& rows) {
  fs.validate();
  const int dd = fs.d();
  if (rows.size() != static_cast<std::size_t>(dd))
    throw ShapeError("contract_point expects one row per axis");
  DenseTensor out({fs.channels});
  switch (fs.mode) {
    case Mode::CP: {
      const std::size_t r = fs.ranks[0];
      std::vector<real> w(r, 1);
      for (int k = 0; k < dd; ++k) {
        const DenseTensor& row = rows[static_cast<std::size_t>(k)];
        if (row.size() != r) throw ShapeError("cp point row " + std::to_string(k) + " must have the shared rank length");
        for (std::size_t rr = 0; rr < r; ++rr) w[rr] *= row[rr];
      }
      for (std::size_t rr = 0; rr < r; ++rr)
        for (std::size_t ch = 0; ch < fs.channels; ++ch) out[ch] += w[rr] * fs.mix.at(rr, ch);
      break;
    }
    case Mode::TT: {
      if (rows[0].size() != fs.ranks[0]) throw ShapeError("tt head row has wrong length");
      std::vector<real> v(rows[0].vec());
      for (int k = 1; k + 1 < dd; ++k) {
        const DenseTensor& m = rows[static_cast<std::size_t>(k)];
        const std::size_t ra = fs.ranks[static_cast<std::size_t>(k - 1)];
        const std::size_t rb = fs.ranks[static_cast<std::size_t>(k)];
        if (m.order() != 2 || m.extent(0) != ra || m.extent(1) != rb)
          throw ShapeError("tt point slice " + std::to_string(k) + " must be (" + std::to_string(ra) +
                           ", " + std::to_string(rb) + ")");
        std::vector<real> nv(rb, 0);
        for (std::size_t a = 0; a < ra; ++a)
          for (std::size_t b = 0; b < rb; ++b) nv[b] += v[a] * m.at(a, b);
        v = std::move(nv);
      }
      const DenseTensor& tail = rows[static_cast<std::size_t>(dd - 1)];
      if (tail.size() != fs.ranks.back()) throw ShapeError("tt tail row has wrong length");
      for (std::size_t rr = 0; rr < fs.ranks.back(); ++rr) {
        const real w = v[rr] * tail[rr];
        for (std::size_t ch = 0; ch < fs.channels; ++ch) out[ch] += w * fs.mix.at(rr, ch);
      }
      break;
    }
    case Mode::TU: {
      std::vector<real> cur(fs.mix.vec());
      std::size_t rest = fs.mix.size();
      for (int k = 0; k < dd; ++k) {
        const DenseTensor& row = rows[static_cast<std::size_t>(k)];
        const std::size_t r = fs.ranks[static_cast<std::size_t>(k)];
        if (row.size() != r) throw ShapeError("tucker point row " + std::to_string(k) + " has wrong length");
        rest /= r;
        std::vector<real> next(rest, 0);
        for (std::size_t rr = 0; rr < r; ++rr) {
          const real w = row[rr];
          if (w == 0) continue;
          const real* slab = cur.data() + rr * rest;
          for (std::size_t s = 0; s < rest; ++s) next[s] += w * slab[s];
        }
        cur = std::move(next);
      }
      for (std::size_t ch = 0; ch < fs.channels; ++ch) out[ch] = cur[ch];
      break;
    }
  }
  return out;
}

std::vector<std::size_t> factor_widths(Mode mode, int d, const std::vector<std::size_t>& ranks) {
  std::vector<std::size_t> w;
  switch (mode) {
    case Mode::CP:
      if (ranks.size() != 1) throw ShapeError("cp expects a single shared rank");
      w.assign(static_cast<std::size_t>(d), ranks[0]);
      break;
    case Mode::TT: {
      if (d < 2 || ranks.size() + 1 != static_cast<std::size_t>(d))
        throw ShapeError("tt expects d-1 bond ranks for d >= 2 axes");
      w.push_back(ranks[0]);
      for (int k = 1; k + 1 < d; ++k)
        w.push_back(ranks[static_cast<std::size_t>(k - 1)] * ranks[static_cast<std::size_t>(k)]);
      w.push_back(ranks.back());
      break;
    }
    case Mode::TU:
      if (ranks.size() != static_cast<std::size_t>(d)) throw ShapeError("tucker expects one rank per axis");
      w = ranks;
      break;
  }
  return w;
}

FactorSet factors_from_mats(Mode mode, std::size_t channels, const std::vector<std::size_t>& ranks,
                            const std::vector<DenseTensor>& mats, const DenseTensor& mix) {
  FactorSet fs;
  fs.mode = mode;
  fs.channels = channels;
  fs.ranks = ranks;
  fs.mix = mix;
  const int d = static_cast<int>(mats.size());
  const std::vector<std::size_t> widths = factor_widths(mode, d, ranks);
  fs.factors.reserve(mats.size());
  for (int k = 0; k < d; ++k) {
    const DenseTensor& m = mats[static_cast<std::size_t>(k)];
    if (m.order() != 2 || m.extent(1) != widths[static_cast<std::size_t>(k)])
      throw ShapeError("factor matrix " + std::to_string(k) + " must have width " +
                       std::to_string(widths[static_cast<std::size_t>(k)]) + ", got " + shape_str(m));
    if (mode == Mode::TT && k > 0 && k + 1 < d) {
      const std::size_t ra = ranks[static_cast<std::size_t>(k - 1)];
      const std::size_t rb = ranks[static_cast<std::size_t>(k)];
      const std::size_t n = m.extent(0);
      DenseTensor core({ra, n, rb});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < ra; ++a)
          for (std::size_t b = 0; b < rb; ++b) core.at(a, i, b) = m.at(i, a * rb + b);
      fs.factors.push_back(std::move(core));
    } else {
      fs.factors.push_back(m);
    }
  }
  fs.validate();
  return fs;
}

DenseTensor compose_grid(Mode mode, std::size_t channels, const std::vector<std::size_t>& ranks,
                         const std::vector<DenseTensor>& mats, const DenseTensor& mix) {
  return compose(factors_from_mats(mode, channels, ranks, mats, mix));
}

namespace {

ComposeGrads cp_grid_backward(const FactorSet& fs, const DenseTensor& gbar) {
  const int dd = fs.d();
  const std::size_t r = fs.ranks[0], c = fs.channels;
  const std::size_t npts = spatial_size(fs);
  ComposeGrads g;
  g.mix = DenseTensor({r, c});
  for (int k = 0; k < dd; ++k)
    g.mats.emplace_back(DenseTensor(fs.factors[static_cast<std::size_t>(k)].extents()));

  if (dd == 2) {
    // GEMM route, mirroring the d = 2 forward: per channel
    //   dA += (dG_c B) diag(m_c),  dB += (dG_c^T A) diag(m_c),
    //   dmix[:,c] = colsum(A o (dG_c B)).
    const DenseTensor& a = fs.factors[0];
    const DenseTensor& b = fs.factors[1];
    const std::size_t n1 = a.extent(0), n2 = b.extent(0);
    DenseTensor dg({n1, n2});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const real* pg = gbar.data();
      for (std::size_t p = 0; p < npts; ++p) dg[p] = pg[p * c + ch];
      const DenseTensor ka = matmul(dg, b);     // (n1, r)
      const DenseTensor kb = matmul_tn(dg, a);  // (n2, r)
      for (std::size_t i = 0; i < n1; ++i)
        for (std::size_t rr = 0; rr < r; ++rr) {
          g.mix[rr * c + ch] += a[i * r + rr] * ka[i * r + rr];
          g.mats[0][i * r + rr] += ka[i * r + rr] * fs.mix[rr * c + ch];
        }
      for (std::size_t j = 0; j < n2; ++j)
        for (std::size_t rr = 0; rr < r; ++rr)
          g.mats[1][j * r + rr] += kb[j * r + rr] * fs.mix[rr * c + ch];
    }
    return g;
  }

  const DenseTensor t = cp_row_products(fs);  // (npts, r)
  // mix gradient: t^T * gbar.
  const real* pt = t.data();
  const real* pg = gbar.data();
  for (std::size_t p = 0; p < npts; ++p)
    for (std::size_t rr = 0; rr < r; ++rr) {
      const real tv = pt[p * r + rr];
      if (tv == 0) continue;
      for (std::size_t ch = 0; ch < c; ++ch) g.mix[rr * c + ch] += tv * pg[p * c + ch];
    }
  // h[p, rr] = sum_c gbar[p, c] * mix[rr, c].
  DenseTensor h({npts, r});
  for (std::size_t p = 0; p < npts; ++p)
    for (std::size_t rr = 0; rr < r; ++rr) {
      real acc = 0;
      for (std::size_t ch = 0; ch < c; ++ch) acc += pg[p * c + ch] * fs.mix[rr * c + ch];
      h[p * r + rr] = acc;
    }
  // Factor gradients via per-point prefix/suffix products over the axes.
  std::vector<std::size_t> sp_ext;
  for (int k = 0; k < dd; ++k) sp_ext.push_back(fs.axis_extent(k));
  std::vector<std::size_t> ix(static_cast<std::size_t>(dd), 0);
  std::vector<real> pre(static_cast<std::size_t>(dd) + 1), suf(static_cast<std::size_t>(dd) + 1);
  std::size_t p = 0;
  do {
    for (std::size_t rr = 0; rr < r; ++rr) {
      const real hv = h[p * r + rr];
      if (hv == 0) continue;
      pre[0] = 1;
      for (int k = 0; k < dd; ++k)
        pre[static_cast<std::size_t>(k + 1)] =
            pre[static_cast<std::size_t>(k)] *
            fs.factors[static_cast<std::size_t>(k)].at(ix[static_cast<std::size_t>(k)], rr);
      suf[static_cast<std::size_t>(dd)] = 1;
      for (int k = dd - 1; k >= 0; --k)
        suf[static_cast<std::size_t>(k)] =
            suf[static_cast<std::size_t>(k + 1)] *
            fs.factors[static_cast<std::size_t>(k)].at(ix[static_cast<std::size_t>(k)], rr);
      for (int k = 0; k < dd; ++k)
        g.mats[static_cast<std::size_t>(k)].at(ix[static_cast<std::size_t>(k)], rr) +=
            hv * pre[static_cast<std::size_t>(k)] * suf[static_cast<std::size_t>(k + 1)];
    }
    ++p;
  } while (advance(ix, sp_ext));
  return g;
}

ComposeGrads tt_grid_backward(const FactorSet& fs, const DenseTensor& gbar) {
  const int dd = fs.d();
  const std::size_t c = fs.channels;
  ComposeGrads g;
  g.mix = DenseTensor(fs.mix.extents());
  for (int k = 0; k < dd; ++k)
    g.mats.emplace_back(DenseTensor(fs.factors[static_cast<std::size_t>(k)].extents()));

  const std::vector<DenseTensor> chains = tt_chains(fs);
  const DenseTensor& tail = fs.factors[static_cast<std::size_t>(dd - 1)];
  const std::size_t nd = tail.extent(0);
  const DenseTensor& vlast = chains.back();
  const std::size_t p = vlast.extent(0), r = vlast.extent(1);

  // Terminal stage: adjoint of the last chain state, plus tail and mixer grads.
  DenseTensor w({p, r});
  DenseTensor& tail_g = g.mats[static_cast<std::size_t>(dd - 1)];
  const real* pg = gbar.data();
  for (std::size_t pi = 0; pi < p; ++pi)
    for (std::size_t i = 0; i < nd; ++i) {
      const real* grow = pg + (pi * nd + i) * c;
      for (std::size_t rr = 0; rr < r; ++rr) {
        real q = 0;
        const real* mrow = fs.mix.data() + rr * c;
        for (std::size_t ch = 0; ch < c; ++ch) q += mrow[ch] * grow[ch];
        const real v = vlast[pi * r + rr];
        const real t = tail[i * r + rr];
        tail_g[i * r + rr] += v * q;
        w[pi * r + rr] += t * q;
        const real vt = v * t;
        if (vt != 0) {
          real* mg = g.mix.data() + rr * c;
          for (std::size_t ch = 0; ch < c; ++ch) mg[ch] += vt * grow[ch];
        }
      }
    }

  // Walk the chain backwards through the interior cores.
  for (int k = dd - 2; k >= 1; --k) {
    const DenseTensor& gk = fs.factors[static_cast<std::size_t>(k)];
    const std::size_t ra = gk.extent(0), n = gk.extent(1), rb = gk.extent(2);
    const DenseTensor& vprev = chains[static_cast<std::size_t>(k - 1)];
    const std::size_t pp = vprev.extent(0);
    DenseTensor wprev({pp, ra});
    DenseTensor& gk_g = g.mats[static_cast<std::size_t>(k)];
    for (std::size_t pi = 0; pi < pp; ++pi)
      for (std::size_t i = 0; i < n; ++i) {
        const real* wrow = w.data() + (pi * n + i) * rb;
        for (std::size_t a = 0; a < ra; ++a) {
          const real va = vprev[pi * ra + a];
          const real* grow = gk.data() + (a * n + i) * rb;
          real* ggrow = gk_g.data() + (a * n + i) * rb;
          real acc = 0;
          for (std::size_t b = 0; b < rb; ++b) {
            ggrow[b] += va * wrow[b];
            acc += grow[b] * wrow[b];
          }
          wprev[pi * ra + a] += acc;
        }
      }
    w = std::move(wprev);
  }
  g.mats[0] = std::move(w);
  return g;
}

ComposeGrads tucker_grid_backward(const FactorSet& fs, const DenseTensor& gbar) {
  const int dd = fs.d();
  ComposeGrads g;
  g.mats.resize(static_cast<std::size_t>(dd));
  // Core gradient: contract gbar with every factor transposed.
  DenseTensor cur = gbar;
  for (int k = 0; k < dd; ++k)
    cur = contract_mode(cur, k, fs.factors[static_cast<std::size_t>(k)], /*transpose_w=*/false);
  g.mix = std::move(cur);
  // Factor gradients: pair the output adjoint with the core expanded along
  // every other axis.
  for (int k = 0; k < dd; ++k) {
    DenseTensor z = fs.mix;
    for (int j = 0; j < dd; ++j) {
      if (j == k) continue;
      z = contract_mode(z, j, fs.factors[static_cast<std::size_t>(j)], /*transpose_w=*/true);
    }
    g.mats[static_cast<std::size_t>(k)] = pair_contract(gbar, z, k);
  }
  return g;
}

}  // namespace

ComposeGrads compose_grid_backward(Mode mode, std::size_t channels,
                                   const std::vector<std::size_t>& ranks,
                                   const std::vector<DenseTensor>& mats, const DenseTensor& mix,
                                   const DenseTensor& gbar) {
  const FactorSet fs = factors_from_mats(mode, channels, ranks, mats, mix);
  {
    std::vector<std::size_t> expect;
    for (int k = 0; k < fs.d(); ++k) expect.push_back(fs.axis_extent(k));
    expect.push_back(channels);
    if (gbar.extents() != expect) throw ShapeError("compose_grid_backward: adjoint shape mismatch");
  }
  ComposeGrads g;
  switch (mode) {
    case Mode::CP: g = cp_grid_backward(fs, gbar); break;
    case Mode::TT: g = tt_grid_backward(fs, gbar); break;
    case Mode::TU: g = tucker_grid_backward(fs, gbar); break;
  }
  // Convert interior core gradients back to the flat network layout.
  if (mode == Mode::TT) {
    for (int k = 1; k + 1 < fs.d(); ++k) {
      const DenseTensor& core_g = g.mats[static_cast<std::size_t>(k)];
      const std::size_t ra = core_g.extent(0), n = core_g.extent(1), rb = core_g.extent(2);
      DenseTensor flat({n, ra * rb});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < ra; ++a)
          for (std::size_t b = 0; b < rb; ++b) flat.at(i, a * rb + b) = core_g.at(a, i, b);
      g.mats[static_cast<std::size_t>(k)] = std::move(flat);
    }
  }
  return g;
}

namespace {

void check_rows(Mode mode, int d, const std::vector<std::size_t>& ranks,
                const std::vector<DenseTensor>& rows, std::size_t& npts) {
  if (rows.empty()) throw ShapeError("compose_rows expects one row block per axis");
  const std::vector<std::size_t> widths = factor_widths(mode, d, ranks);
  npts = rows[0].extent(0);
  for (int k = 0; k < d; ++k) {
    const DenseTensor& m = rows[static_cast<std::size_t>(k)];
    if (m.order() != 2 || m.extent(0) != npts || m.extent(1) != widths[static_cast<std::size_t>(k)])
      throw ShapeError("compose_rows block " + std::to_string(k) + " must be (points, " +
                       std::to_string(widths[static_cast<std::size_t>(k)]) + "), got " + shape_str(m));
  }
}

}  // namespace

DenseTensor compose_rows(Mode mode, std::size_t channels, const std::vector<std::size_t>& ranks,
                         const std::vector<DenseTensor>& rows, const DenseTensor& mix) {
  const int d = static_cast<int>(rows.size());
  std::size_t npts = 0;
  check_rows(mode, d, ranks, rows, npts);
  DenseTensor out({npts, channels});
  switch (mode) {
    case Mode::CP: {
      const std::size_t r = ranks[0];
      DenseTensor w({npts, r});
      for (std::size_t p = 0; p < npts; ++p) {
        real* wrow = w.data() + p * r;
        for (std::size_t rr = 0; rr < r; ++rr) wrow[rr] = rows[0][p * r + rr];
        for (int k = 1; k < d; ++k) {
          const real* frow = rows[static_cast<std::size_t>(k)].data() + p * r;
          for (std::size_t rr = 0; rr < r; ++rr) wrow[rr] *= frow[rr];
        }
      }
      out = matmul(w, mix);
      break;
    }
    case Mode::TT: {
#pragma omp parallel for schedule(static) if (npts > 64)
      for (std::size_t p = 0; p < npts; ++p) {
        std::vector<real> v(ranks[0]);
        const real* hrow = rows[0].data() + p * ranks[0];
        std::copy(hrow, hrow + ranks[0], v.begin());
        for (int k = 1; k + 1 < d; ++k) {
          const std::size_t ra = ranks[static_cast<std::size_t>(k - 1)];
          const std::size_t rb = ranks[static_cast<std::size_t>(k)];
          const real* m = rows[static_cast<std::size_t>(k)].data() + p * ra * rb;
          std::vector<real> nv(rb, 0);
          for (std::size_t a = 0; a < ra; ++a) {
            const real va = v[a];
            if (va == 0) continue;
            for (std::size_t b = 0; b < rb; ++b) nv[b] += va * m[a * rb + b];
          }
          v = std::move(nv);
        }
        const std::size_t r = ranks.back();
        const real* trow = rows[static_cast<std::size_t>(d - 1)].data() + p * r;
        real* orow = out.data() + p * channels;
        for (std::size_t rr = 0; rr < r; ++rr) {
          const real wv = v[rr] * trow[rr];
          if (wv == 0) continue;
          const real* mrow = mix.data() + rr * channels;
          for (std::size_t ch = 0; ch < channels; ++ch) orow[ch] += wv * mrow[ch];
        }
      }
      break;
    }
    case Mode::TU: {
#pragma omp parallel for schedule(static) if (npts > 64)
      for (std::size_t p = 0; p < npts; ++p) {
        std::vector<real> cur(mix.vec());
        std::size_t rest = mix.size();
        for (int k = 0; k < d; ++k) {
          const std::size_t r = ranks[static_cast<std::size_t>(k)];
          const real* row = rows[static_cast<std::size_t>(k)].data() + p * r;
          rest /= r;
          std::vector<real> next(rest, 0);
          for (std::size_t rr = 0; rr < r; ++rr) {
            const real wv = row[rr];
            if (wv == 0) continue;
            const real* slab = cur.data() + rr * rest;
            for (std::size_t s = 0; s < rest; ++s) next[s] += wv * slab[s];
          }
          cur = std::move(next);
        }
        real* orow = out.data() + p * channels;
        for (std::size_t ch = 0; ch < channels; ++ch) orow[ch] = cur[ch];
      }
      break;
    }
  }
  return out;
}

ComposeGrads compose_rows_backward(Mode mode, std::size_t channels,
                                   const std::vector<std::size_t>& ranks,
                                   const std::vector<DenseTensor>& rows, const DenseTensor& mix,
                                   const DenseTensor& gbar) {
  const int d = static_cast<int>(rows.size());
  std::size_t npts = 0;
  check_rows(mode, d, ranks, rows, npts);
  if (gbar.order() != 2 || gbar.extent(0) != npts || gbar.extent(1) != channels)
    throw ShapeError("compose_rows_backward: adjoint shape mismatch");
  ComposeGrads g;
  g.mix = DenseTensor(mix.extents());
  for (int k = 0; k < d; ++k) g.mats.emplace_back(DenseTensor(rows[static_cast<std::size_t>(k)].extents()));

  switch (mode) {
    case Mode::CP: {
      const std::size_t r = ranks[0];
      std::vector<real> w(r), h(r), pre(static_cast<std::size_t>(d) + 1), suf(static_cast<std::size_t>(d) + 1);
      for (std::size_t p = 0; p < npts; ++p) {
        const real* grow = gbar.data() + p * channels;
        for (std::size_t rr = 0; rr < r; ++rr) {
          w[rr] = 1;
          real acc = 0;
          for (std::size_t ch = 0; ch < channels; ++ch) acc += mix[rr * channels + ch] * grow[ch];
          h[rr] = acc;
        }
        for (int k = 0; k < d; ++k) {
          const real* frow = rows[static_cast<std::size_t>(k)].data() + p * r;
          for (std::size_t rr = 0; rr < r; ++rr) w[rr] *= frow[rr];
        }
        for (std::size_t rr = 0; rr < r; ++rr) {
          if (w[rr] != 0) {
            real* mg = g.mix.data() + rr * channels;
            for (std::size_t ch = 0; ch < channels; ++ch) mg[ch] += w[rr] * grow[ch];
          }
          pre[0] = 1;
          for (int k = 0; k < d; ++k)
            pre[static_cast<std::size_t>(k + 1)] =
                pre[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(k)][p * r + rr];
          suf[static_cast<std::size_t>(d)] = 1;
          for (int k = d - 1; k >= 0; --k)
            suf[static_cast<std::size_t>(k)] =
                suf[static_cast<std::size_t>(k + 1)] * rows[static_cast<std::size_t>(k)][p * r + rr];
          for (int k = 0; k < d; ++k)
            g.mats[static_cast<std::size_t>(k)][p * r + rr] +=
                h[rr] * pre[static_cast<std::size_t>(k)] * suf[static_cast<std::size_t>(k + 1)];
        }
      }
      break;
    }
    case Mode::TT: {
      const std::size_t rlast = ranks.back();
      for (std::size_t p = 0; p < npts; ++p) {
        // Recompute the per-point chain states.
        std::vector<std::vector<real>> vs;
        vs.emplace_back(rows[0].data() + p * ranks[0], rows[0].data() + (p + 1) * ranks[0]);
        for (int k = 1; k + 1 < d; ++k) {
          const std::size_t ra = ranks[static_cast<std::size_t>(k - 1)];
          const std::size_t rb = ranks[static_cast<std::size_t>(k)];
          const real* m = rows[static_cast<std::size_t>(k)].data() + p * ra * rb;
          std::vector<real> nv(rb, 0);
          for (std::size_t a = 0; a < ra; ++a)
            for (std::size_t b = 0; b < rb; ++b) nv[b] += vs.back()[a] * m[a * rb + b];
          vs.push_back(std::move(nv));
        }
        const real* grow = gbar.data() + p * channels;
        const real* trow = rows[static_cast<std::size_t>(d - 1)].data() + p * rlast;
        std::vector<real> q(rlast), vbar(rlast);
        const std::vector<real>& vl = vs.back();
        real* tg = g.mats[static_cast<std::size_t>(d - 1)].data() + p * rlast;
        for (std::size_t rr = 0; rr < rlast; ++rr) {
          real acc = 0;
          for (std::size_t ch = 0; ch < channels; ++ch) acc += mix[rr * channels + ch] * grow[ch];
          q[rr] = acc;
          tg[rr] = vl[rr] * acc;
          vbar[rr] = trow[rr] * acc;
          const real vt = vl[rr] * trow[rr];
          if (vt != 0) {
            real* mg = g.mix.data() + rr * channels;
            for (std::size_t ch = 0; ch < channels; ++ch) mg[ch] += vt * grow[ch];
          }
        }
        for (int k = d - 2; k >= 1; --k) {
          const std::size_t ra = ranks[static_cast<std::size_t>(k - 1)];
          const std::size_t rb = ranks[static_cast<std::size_t>(k)];
          const real* m = rows[static_cast<std::size_t>(k)].data() + p * ra * rb;
          real* mg = g.mats[static_cast<std::size_t>(k)].data() + p * ra * rb;
          const std::vector<real>& vprev = vs[static_cast<std::size_t>(k - 1)];
          std::vector<real> nvbar(ra, 0);
          for (std::size_t a = 0; a < ra; ++a) {
            real acc = 0;
            for (std::size_t b = 0; b < rb; ++b) {
              mg[a * rb + b] += vprev[a] * vbar[b];
              acc += m[a * rb + b] * vbar[b];
            }
            nvbar[a] = acc;
          }
          vbar = std::move(nvbar);
        }
        real* hg = g.mats[0].data() + p * ranks[0];
        for (std::size_t rr = 0; rr < ranks[0]; ++rr) hg[rr] += vbar[rr];
      }
      break;
    }
    case Mode::TU: {
      for (std::size_t p = 0; p < npts; ++p) {
        // Prefix contractions L_k; L_0 is the core itself.
        std::vector<std::vector<real>> ls;
        ls.push_back(mix.vec());
        std::size_t rest = mix.size();
        for (int k = 0; k < d; ++k) {
          const std::size_t r = ranks[static_cast<std::size_t>(k)];
          const real* row = rows[static_cast<std::size_t>(k)].data() + p * r;
          rest /= r;
          std::vector<real> next(rest, 0);
          for (std::size_t rr = 0; rr < r; ++rr) {
            const real wv = row[rr];
            if (wv == 0) continue;
            const real* slab = ls.back().data() + rr * rest;
            for (std::size_t s = 0; s < rest; ++s) next[s] += wv * slab[s];
          }
          ls.push_back(std::move(next));
        }
        const real* grow = gbar.data() + p * channels;
        std::vector<real> a(grow, grow + channels);
        for (int k = d - 1; k >= 0; --k) {
          const std::size_t r = ranks[static_cast<std::size_t>(k)];
          const real* row = rows[static_cast<std::size_t>(k)].data() + p * r;
          const std::vector<real>& lprev = ls[static_cast<std::size_t>(k)];
          const std::size_t s = a.size();
          real* rg = g.mats[static_cast<std::size_t>(k)].data() + p * r;
          std::vector<real> na(r * s);
          for (std::size_t rr = 0; rr < r; ++rr) {
            real acc = 0;
            const real* slab = lprev.data() + rr * s;
            for (std::size_t si = 0; si < s; ++si) {
              acc += slab[si] * a[si];
              na[rr * s + si] = row[rr] * a[si];
            }
            rg[rr] += acc;
          }
          a = std::move(na);
        }
        for (std::size_t i = 0; i < g.mix.size(); ++i) g.mix[i] += a[i];
      }
      break;
    }
  }
  return g;
}

}  // namespace finr
