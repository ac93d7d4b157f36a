#include "cory/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cory/errors.hpp"
#include "cory/numeric.hpp"

namespace cory {

namespace {

// y += W x, W is rows x cols row-major.
void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

// dx += W^T dy
void gemv_t(const double* w, std::size_t rows, std::size_t cols, const double* dy, double* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += row[c] * g;
  }
}

// dW += dy x^T
void ger(double* dw, std::size_t rows, std::size_t cols, const double* dy, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    double* row = dw + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string layer_name(std::string_view prefix, std::size_t l, std::string_view field) {
  return std::string(prefix) + std::to_string(l) + "." + std::string(field);
}

// Raw pointers into a ParamStore (params or grads) for one GRU layer.
struct GruWeights {
  double *w_z, *u_z, *b_z, *w_r, *u_r, *b_r, *w_n, *u_n, *b_n;
};

template <typename Store, typename Get>
GruWeights gru_weights(Store& store, std::size_t l, Get get) {
  auto p = [&](std::string_view f) { return const_cast<double*>(get(store, layer_name("gru", l, f)).data()); };
  return {p("w_z"), p("u_z"), p("b_z"), p("w_r"), p("u_r"), p("b_r"), p("w_n"), p("u_n"), p("b_n")};
}

struct AttentionWeights {
  double *w_q, *w_k, *w_v, *w_o, *w1, *b1, *w2, *b2;
};

template <typename Store, typename Get>
AttentionWeights attention_weights(Store& store, std::size_t l, Get get) {
  auto a = [&](std::string_view f) { return const_cast<double*>(get(store, layer_name("attn", l, f)).data()); };
  auto m = [&](std::string_view f) { return const_cast<double*>(get(store, layer_name("mlp", l, f)).data()); };
  return {a("w_q"), a("w_k"), a("w_v"), a("w_o"), m("w1"), m("b1"), m("w2"), m("b2")};
}

const auto kParams = [](const ParamStore& s, const std::string& n) { return s.view(n); };
const auto kGrads = [](ParamStore& s, const std::string& n) { return std::span<const double>(s.grad_view(n)); };

void gru_forward(const GruWeights& w, std::size_t in, std::size_t hid, std::size_t T, GruLayerCache& c) {
  c.in_dim = in;
  c.h_prev.assign(T * hid, 0.0);
  c.z.assign(T * hid, 0.0);
  c.r.assign(T * hid, 0.0);
  c.n.assign(T * hid, 0.0);
  c.rh.assign(T * hid, 0.0);
  c.h.assign(T * hid, 0.0);
  std::vector<double> h(hid, 0.0), az(hid), ar(hid), an(hid);
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = c.x.data() + t * in;
    std::copy(w.b_z, w.b_z + hid, az.begin());
    std::copy(w.b_r, w.b_r + hid, ar.begin());
    std::copy(w.b_n, w.b_n + hid, an.begin());
    gemv(w.w_z, hid, in, x, az.data());
    gemv(w.u_z, hid, hid, h.data(), az.data());
    gemv(w.w_r, hid, in, x, ar.data());
    gemv(w.u_r, hid, hid, h.data(), ar.data());
    double* z = c.z.data() + t * hid;
    double* r = c.r.data() + t * hid;
    double* rh = c.rh.data() + t * hid;
    for (std::size_t i = 0; i < hid; ++i) {
      z[i] = sigmoid(az[i]);
      r[i] = sigmoid(ar[i]);
      rh[i] = r[i] * h[i];
    }
    gemv(w.w_n, hid, in, x, an.data());
    gemv(w.u_n, hid, hid, rh, an.data());
    double* n = c.n.data() + t * hid;
    double* out = c.h.data() + t * hid;
    std::copy(h.begin(), h.end(), c.h_prev.begin() + static_cast<std::ptrdiff_t>(t * hid));
    for (std::size_t i = 0; i < hid; ++i) {
      n[i] = std::tanh(an[i]);
      out[i] = (1.0 - z[i]) * h[i] + z[i] * n[i];
    }
    std::copy(out, out + hid, h.begin());
  }
}

// Backpropagates d_out (T x hid) through one GRU layer; returns d_in (T x in).
std::vector<double> gru_backward(const GruWeights& w, const GruWeights& g, std::size_t hid, std::size_t T,
                                 const GruLayerCache& c, const std::vector<double>& d_out) {
  const std::size_t in = c.in_dim;
  std::vector<double> d_in(T * in, 0.0);
  std::vector<double> dh_next(hid, 0.0), dh(hid), dhp(hid), dz(hid), dan(hid), daz(hid), dar(hid), drh(hid);
  for (std::size_t t = T; t-- > 0;) {
    const double* x = c.x.data() + t * in;
    const double* hp = c.h_prev.data() + t * hid;
    const double* z = c.z.data() + t * hid;
    const double* r = c.r.data() + t * hid;
    const double* n = c.n.data() + t * hid;
    const double* rh = c.rh.data() + t * hid;
    double* dx = d_in.data() + t * in;
    for (std::size_t i = 0; i < hid; ++i) {
      dh[i] = d_out[t * hid + i] + dh_next[i];
      dz[i] = dh[i] * (n[i] - hp[i]);
      dan[i] = dh[i] * z[i] * (1.0 - n[i] * n[i]);
      dhp[i] = dh[i] * (1.0 - z[i]);
    }
    ger(g.w_n, hid, in, dan.data(), x);
    ger(g.u_n, hid, hid, dan.data(), rh);
    for (std::size_t i = 0; i < hid; ++i) g.b_n[i] += dan[i];
    gemv_t(w.w_n, hid, in, dan.data(), dx);
    std::fill(drh.begin(), drh.end(), 0.0);
    gemv_t(w.u_n, hid, hid, dan.data(), drh.data());
    for (std::size_t i = 0; i < hid; ++i) {
      const double dr = drh[i] * hp[i];
      dhp[i] += drh[i] * r[i];
      dar[i] = dr * r[i] * (1.0 - r[i]);
      daz[i] = dz[i] * z[i] * (1.0 - z[i]);
      g.b_z[i] += daz[i];
      g.b_r[i] += dar[i];
    }
    ger(g.w_z, hid, in, daz.data(), x);
    ger(g.u_z, hid, hid, daz.data(), hp);
    ger(g.w_r, hid, in, dar.data(), x);
    ger(g.u_r, hid, hid, dar.data(), hp);
    gemv_t(w.w_z, hid, in, daz.data(), dx);
    gemv_t(w.w_r, hid, in, dar.data(), dx);
    gemv_t(w.u_z, hid, hid, daz.data(), dhp.data());
    gemv_t(w.u_r, hid, hid, dar.data(), dhp.data());
    dh_next = dhp;
  }
  return d_in;
}

void attention_forward(const AttentionWeights& w, std::size_t d, std::size_t hid, std::size_t T,
                       AttentionLayerCache& c) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.q.assign(T * d, 0.0);
  c.k.assign(T * d, 0.0);
  c.v.assign(T * d, 0.0);
  c.attn.assign(T * T, 0.0);
  c.ctx.assign(T * d, 0.0);
  c.h1.assign(T * d, 0.0);
  c.m.assign(T * hid, 0.0);
  c.y.assign(T * d, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = c.x.data() + t * d;
    gemv(w.w_q, d, d, x, c.q.data() + t * d);
    gemv(w.w_k, d, d, x, c.k.data() + t * d);
    gemv(w.w_v, d, d, x, c.v.data() + t * d);
  }
  std::vector<double> o(d);
  for (std::size_t t = 0; t < T; ++t) {
    double* a = c.attn.data() + t * T;
    const double* q = c.q.data() + t * d;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= t; ++j) {
      double s = 0.0;
      const double* k = c.k.data() + j * d;
      for (std::size_t i = 0; i < d; ++i) s += q[i] * k[i];
      a[j] = s * scale;
      mx = std::max(mx, a[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j <= t; ++j) {
      a[j] = std::exp(a[j] - mx);
      sum += a[j];
    }
    double* ctx = c.ctx.data() + t * d;
    for (std::size_t j = 0; j <= t; ++j) {
      a[j] /= sum;
      const double* v = c.v.data() + j * d;
      for (std::size_t i = 0; i < d; ++i) ctx[i] += a[j] * v[i];
    }
    const double* x = c.x.data() + t * d;
    double* h1 = c.h1.data() + t * d;
    std::copy(x, x + d, h1);
    gemv(w.w_o, d, d, ctx, h1);
    double* m = c.m.data() + t * hid;
    std::copy(w.b1, w.b1 + hid, m);
    gemv(w.w1, hid, d, h1, m);
    for (std::size_t i = 0; i < hid; ++i) m[i] = std::tanh(m[i]);
    double* y = c.y.data() + t * d;
    for (std::size_t i = 0; i < d; ++i) y[i] = h1[i] + w.b2[i];
    gemv(w.w2, d, hid, m, y);
  }
}

std::vector<double> attention_backward(const AttentionWeights& w, const AttentionWeights& g, std::size_t d,
                                       std::size_t hid, std::size_t T, const AttentionLayerCache& c,
                                       const std::vector<double>& d_out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> dx(T * d, 0.0), dctx(T * d, 0.0), dq(T * d, 0.0), dk(T * d, 0.0), dv(T * d, 0.0);
  std::vector<double> dh1(d), dm(hid);
  for (std::size_t t = 0; t < T; ++t) {
    const double* dy = d_out.data() + t * d;
    const double* m = c.m.data() + t * hid;
    const double* h1 = c.h1.data() + t * d;
    std::copy(dy, dy + d, dh1.begin());
    ger(g.w2, d, hid, dy, m);
    for (std::size_t i = 0; i < d; ++i) g.b2[i] += dy[i];
    std::fill(dm.begin(), dm.end(), 0.0);
    gemv_t(w.w2, d, hid, dy, dm.data());
    for (std::size_t i = 0; i < hid; ++i) dm[i] *= 1.0 - m[i] * m[i];
    ger(g.w1, hid, d, dm.data(), h1);
    for (std::size_t i = 0; i < hid; ++i) g.b1[i] += dm[i];
    gemv_t(w.w1, hid, d, dm.data(), dh1.data());
    for (std::size_t i = 0; i < d; ++i) dx[t * d + i] += dh1[i];
    ger(g.w_o, d, d, dh1.data(), c.ctx.data() + t * d);
    gemv_t(w.w_o, d, d, dh1.data(), dctx.data() + t * d);
  }
  std::vector<double> da(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* a = c.attn.data() + t * T;
    const double* dc = dctx.data() + t * d;
    double dot = 0.0;
    for (std::size_t j = 0; j <= t; ++j) {
      const double* v = c.v.data() + j * d;
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        s += dc[i] * v[i];
        dv[j * d + i] += a[j] * dc[i];
      }
      da[j] = s;
      dot += a[j] * s;
    }
    const double* q = c.q.data() + t * d;
    for (std::size_t j = 0; j <= t; ++j) {
      const double ds = a[j] * (da[j] - dot) * scale;
      if (ds == 0.0) continue;
      const double* k = c.k.data() + j * d;
      for (std::size_t i = 0; i < d; ++i) {
        dq[t * d + i] += ds * k[i];
        dk[j * d + i] += ds * q[i];
      }
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = c.x.data() + t * d;
    ger(g.w_q, d, d, dq.data() + t * d, x);
    ger(g.w_k, d, d, dk.data() + t * d, x);
    ger(g.w_v, d, d, dv.data() + t * d, x);
    gemv_t(w.w_q, d, d, dq.data() + t * d, dx.data() + t * d);
    gemv_t(w.w_k, d, d, dk.data() + t * d, dx.data() + t * d);
    gemv_t(w.w_v, d, d, dv.data() + t * d, dx.data() + t * d);
  }
  return dx;
}

}  // namespace

std::string to_string(TrunkKind kind) { return kind == TrunkKind::gru ? "gru" : "attention"; }

TrunkKind parse_trunk(std::string_view name) {
  if (name == "gru") return TrunkKind::gru;
  if (name == "attention") return TrunkKind::attention;
  throw ConfigError("unknown trunk '" + std::string(name) + "' (expected gru|attention)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd|adam)");
}

ParamStore::ParamStore(const ModelDims& dims) : dims_(dims) {
  if (dims.vocab < 4 || dims.embed == 0 || dims.hidden == 0 || dims.layers < 1 || dims.layers > 2)
    throw ConfigError("invalid model dimensions");
  std::size_t offset = 0;
  auto add = [&](std::string name, ParamGroup group, std::size_t rows, std::size_t cols) {
    layout_.push_back(ParamSlice{std::move(name), group, offset, rows, cols});
    offset += rows * cols;
  };
  const std::size_t V = dims.vocab, D = dims.embed, H = dims.hidden;
  add("embedding", ParamGroup::embedding, V, D);
  if (dims.trunk == TrunkKind::gru) {
    for (std::size_t l = 0; l < dims.layers; ++l) {
      const std::size_t in = l == 0 ? D : H;
      for (const char* gate : {"z", "r", "n"}) {
        add(layer_name("gru", l, std::string("w_") + gate), ParamGroup::trunk, H, in);
        add(layer_name("gru", l, std::string("u_") + gate), ParamGroup::trunk, H, H);
        add(layer_name("gru", l, std::string("b_") + gate), ParamGroup::trunk, H, 1);
      }
    }
  } else {
    add("position", ParamGroup::embedding, dims.max_positions, D);
    for (std::size_t l = 0; l < dims.layers; ++l) {
      for (const char* m : {"w_q", "w_k", "w_v", "w_o"}) add(layer_name("attn", l, m), ParamGroup::trunk, D, D);
      add(layer_name("mlp", l, "w1"), ParamGroup::trunk, H, D);
      add(layer_name("mlp", l, "b1"), ParamGroup::trunk, H, 1);
      add(layer_name("mlp", l, "w2"), ParamGroup::trunk, D, H);
      add(layer_name("mlp", l, "b2"), ParamGroup::trunk, D, 1);
    }
  }
  const std::size_t hd = dims.head_dim();
  add("logits.w", ParamGroup::logits_head, V, hd);
  add("logits.b", ParamGroup::logits_head, V, 1);
  add("value.w", ParamGroup::value_head, 1, hd);
  add("value.b", ParamGroup::value_head, 1, 1);
  params_.assign(offset, 0.0);
  grad_.assign(offset, 0.0);
}

const ParamSlice& ParamStore::slice(std::string_view name) const {
  for (const auto& s : layout_)
    if (s.name == name) return s;
  throw std::out_of_range("no parameter slice named '" + std::string(name) + "'");
}

std::span<double> ParamStore::view(std::string_view name) {
  const auto& s = slice(name);
  return {params_.data() + s.offset, s.size()};
}

std::span<const double> ParamStore::view(std::string_view name) const {
  const auto& s = slice(name);
  return {params_.data() + s.offset, s.size()};
}

std::span<double> ParamStore::grad_view(std::string_view name) {
  const auto& s = slice(name);
  return {grad_.data() + s.offset, s.size()};
}

void ParamStore::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void ParamStore::init(Rng& rng, double scale) {
  for (const auto& s : layout_) {
    const bool head = s.group == ParamGroup::logits_head || s.group == ParamGroup::value_head;
    for (std::size_t i = 0; i < s.size(); ++i)
      params_[s.offset + i] = head ? 0.0 : (2.0 * uniform01(rng) - 1.0) * scale;
  }
}

ForwardTrace forward(const ParamStore& model, std::span<const TokenId> tokens) {
  const ModelDims& dims = model.dims();
  const std::size_t T = tokens.size(), V = dims.vocab, D = dims.embed, H = dims.hidden;
  if (T == 0) throw std::invalid_argument("forward: empty context");
  ForwardTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  tr.vocab = V;
  const double* emb = model.view("embedding").data();
  std::vector<double> x(T * D);
  for (std::size_t t = 0; t < T; ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= V)
      throw std::out_of_range("forward: token id out of range");
    std::copy(emb + tokens[t] * D, emb + (tokens[t] + 1) * D, x.begin() + static_cast<std::ptrdiff_t>(t * D));
  }
  if (dims.trunk == TrunkKind::gru) {
    tr.gru.resize(dims.layers);
    std::vector<double>* input = &x;
    for (std::size_t l = 0; l < dims.layers; ++l) {
      auto& c = tr.gru[l];
      c.x = *input;
      gru_forward(gru_weights(model, l, kParams), l == 0 ? D : H, H, T, c);
      input = &c.h;
    }
    tr.top = tr.gru.back().h;
  } else {
    if (T > dims.max_positions)
      throw CapacityExceeded("context of " + std::to_string(T) + " tokens exceeds position table");
    const double* pos = model.view("position").data();
    for (std::size_t i = 0; i < T * D; ++i) x[i] += pos[i];
    tr.attention.resize(dims.layers);
    std::vector<double>* input = &x;
    for (std::size_t l = 0; l < dims.layers; ++l) {
      auto& c = tr.attention[l];
      c.x = *input;
      attention_forward(attention_weights(model, l, kParams), D, H, T, c);
      input = &c.y;
    }
    tr.top = tr.attention.back().y;
  }
  const std::size_t hd = dims.head_dim();
  const double* lw = model.view("logits.w").data();
  const double* lb = model.view("logits.b").data();
  const double* vw = model.view("value.w").data();
  const double vb = model.view("value.b")[0];
  tr.logits.assign(T * V, 0.0);
  tr.values.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* h = tr.top.data() + t * hd;
    double* row = tr.logits.data() + t * V;
    std::copy(lb, lb + V, row);
    gemv(lw, V, hd, h, row);
    double v = vb;
    for (std::size_t i = 0; i < hd; ++i) v += vw[i] * h[i];
    tr.values[t] = v;
  }
  return tr;
}

void backward(ParamStore& model, const ForwardTrace& trace, const Cotangents& upstream) {
  const ModelDims& dims = model.dims();
  const std::size_t T = trace.positions(), V = dims.vocab, D = dims.embed, H = dims.hidden;
  if (upstream.d_logits.size() != T * V || upstream.d_values.size() != T)
    throw ShapeMismatch("backward: cotangent count does not match forward outputs");
  const std::size_t hd = dims.head_dim();
  const double* lw = model.view("logits.w").data();
  const double* vw = model.view("value.w").data();
  double* g_lw = model.grad_view("logits.w").data();
  double* g_lb = model.grad_view("logits.b").data();
  double* g_vw = model.grad_view("value.w").data();
  double* g_vb = model.grad_view("value.b").data();
  std::vector<double> d_top(T * hd, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* dl = upstream.d_logits.data() + t * V;
    const double dv = upstream.d_values[t];
    const double* h = trace.top.data() + t * hd;
    double* dh = d_top.data() + t * hd;
    ger(g_lw, V, hd, dl, h);
    for (std::size_t i = 0; i < V; ++i) g_lb[i] += dl[i];
    gemv_t(lw, V, hd, dl, dh);
    if (dv != 0.0) {
      for (std::size_t i = 0; i < hd; ++i) {
        g_vw[i] += dv * h[i];
        dh[i] += dv * vw[i];
      }
      g_vb[0] += dv;
    }
  }
  std::vector<double> dx = std::move(d_top);
  if (dims.trunk == TrunkKind::gru) {
    for (std::size_t l = dims.layers; l-- > 0;) {
      dx = gru_backward(gru_weights(model, l, kParams), gru_weights(model, l, kGrads), H, T, trace.gru[l], dx);
    }
  } else {
    for (std::size_t l = dims.layers; l-- > 0;) {
      dx = attention_backward(attention_weights(model, l, kParams), attention_weights(model, l, kGrads), D, H,
                              T, trace.attention[l], dx);
    }
    double* g_pos = model.grad_view("position").data();
    for (std::size_t i = 0; i < T * D; ++i) g_pos[i] += dx[i];
  }
  double* g_emb = model.grad_view("embedding").data();
  for (std::size_t t = 0; t < T; ++t) {
    double* row = g_emb + trace.tokens[t] * D;
    for (std::size_t i = 0; i < D; ++i) row[i] += dx[t * D + i];
  }
}

void sgd_step(ParamStore& model, double lr) {
  if (!all_finite(model.grad())) throw NonFiniteGradient("non-finite gradient entry");
  auto p = model.params();
  auto g = model.grad();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += lr * g[i];
  model.zero_grad();
}

Optimizer::Optimizer(OptimizerKind kind, std::size_t size, double beta1, double beta2, double eps)
    : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (kind_ == OptimizerKind::adam) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
  }
}

void Optimizer::step(ParamStore& model, double lr) {
  if (kind_ == OptimizerKind::sgd) {
    sgd_step(model, lr);
    ++t_;
    return;
  }
  if (!all_finite(model.grad())) throw NonFiniteGradient("non-finite gradient entry");
  if (m_.size() != model.size()) throw ShapeMismatch("optimizer state does not match model size");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = model.params();
  auto g = model.grad();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
    p[i] += lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
  model.zero_grad();
}

double grad_norm(const ParamStore& model) {
  double s = 0.0;
  for (double g : model.grad()) s += g * g;
  return std::sqrt(s);
}

namespace {

constexpr char kMagic[8] = {'C', 'O', 'R', 'Y', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

std::uint64_t get_u(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), bytes);
  if (!in) throw IoError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& model, const std::filesystem::path& path) {
  const auto& d = model.dims();
  nlohmann::json header;
  header["vocab"] = d.vocab;
  header["embed"] = d.embed;
  header["hidden"] = d.hidden;
  header["layers"] = d.layers;
  header["trunk"] = to_string(d.trunk);
  header["max_positions"] = d.max_positions;
  header["pad_id"] = d.pad_id;
  auto& layout = header["layout"] = nlohmann::json::array();
  for (const auto& s : model.layout())
    layout.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows}, {"cols", s.cols}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u64(out, model.size());
  for (double p : model.params()) put_u64(out, std::bit_cast<std::uint64_t>(p));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw IoError("not a checkpoint file: " + path.string());
  const auto version = get_u(in, 4);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_u(in, 4);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(text);
  ModelDims d;
  d.vocab = header.at("vocab");
  d.embed = header.at("embed");
  d.hidden = header.at("hidden");
  d.layers = header.at("layers");
  d.trunk = parse_trunk(header.at("trunk").get<std::string>());
  d.max_positions = header.at("max_positions");
  d.pad_id = header.at("pad_id");
  ParamStore model(d);
  const auto& layout = header.at("layout");
  if (layout.size() != model.layout().size()) throw IoError("checkpoint layout does not match dimensions");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& s = model.layout()[i];
    if (layout[i].at("name") != s.name || layout[i].at("offset") != s.offset)
      throw IoError("checkpoint layout mismatch at slice " + s.name);
  }
  const auto count = get_u(in, 8);
  if (count != model.size()) throw IoError("checkpoint parameter count mismatch");
  for (double& p : model.params()) p = std::bit_cast<double>(get_u(in, 8));
  return model;
}

}  // namespace cory
