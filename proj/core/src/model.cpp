#include "romelab/model.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "model_internal.hpp"
#include "romelab/container.hpp"
#include "romelab/errors.hpp"
#include "romelab/rng.hpp"

namespace romelab {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

// y = W x, contiguous rows
inline void matvec_into(const Matrix& w, const double* x, double* y) {
  const std::size_t r = w.rows(), c = w.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = w.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += row[j] * x[j];
    y[i] = s;
  }
}

// dx += W^T dy
inline void matvec_t_acc(const Matrix& w, const double* dy, double* dx) {
  const std::size_t r = w.rows(), c = w.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    const double* row = w.row(i);
    for (std::size_t j = 0; j < c; ++j) dx[j] += g * row[j];
  }
}

// dW += dy (x) x
inline void outer_acc(Matrix& dw, const double* dy, const double* x) {
  const std::size_t r = dw.rows(), c = dw.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    double* row = dw.row(i);
    for (std::size_t j = 0; j < c; ++j) row[j] += g * x[j];
  }
}

inline void layernorm_fwd(const double* x, const Vector& gain, const Vector& bias,
                          double eps, std::size_t d, double* y, double* mean_out,
                          double* rstd_out) {
  double mu = 0.0;
  for (std::size_t i = 0; i < d; ++i) mu += x[i];
  mu /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double c = x[i] - mu;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double rstd = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) {
    y[i] = gain[i] * ((x[i] - mu) * rstd) + bias[i];
  }
  *mean_out = mu;
  *rstd_out = rstd;
}

// dx += backward(dy); dgain/dbias accumulated when non-null
inline void layernorm_bwd(const double* x, const Vector& gain, double mu, double rstd,
                          const double* dy, std::size_t d, double* dx,
                          Vector* dgain, Vector* dbias) {
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mu) * rstd;
    const double dxhat = dy[i] * gain[i];
    mean_dxhat += dxhat;
    mean_dxhat_xhat += dxhat * xhat;
    if (dgain) (*dgain)[i] += dy[i] * xhat;
    if (dbias) (*dbias)[i] += dy[i];
  }
  mean_dxhat /= static_cast<double>(d);
  mean_dxhat_xhat /= static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mu) * rstd;
    const double dxhat = dy[i] * gain[i];
    dx[i] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
  }
}

void allocate_weights(TinyLM& m) {
  const auto& c = m.config;
  const std::size_t d = c.d_model, mm = c.mlp_dim();
  m.wte = Matrix(c.vocab_size, d);
  m.wpe = Matrix(c.max_seq, d);
  m.layers.assign(c.n_layers, LayerWeights{});
  for (auto& l : m.layers) {
    l.ln1_gain.assign(d, 0.0);
    l.ln1_bias.assign(d, 0.0);
    l.w_q = Matrix(d, d);
    l.w_k = Matrix(d, d);
    l.w_v = Matrix(d, d);
    l.w_o = Matrix(d, d);
    l.ln2_gain.assign(d, 0.0);
    l.ln2_bias.assign(d, 0.0);
    l.w_up = Matrix(mm, d);
    l.w_down = Matrix(d, mm);
  }
  m.lnf_gain.assign(d, 0.0);
  m.lnf_bias.assign(d, 0.0);
}

template <class Self>
std::vector<TensorRef> collect_tensors(Self& m, const ModelConfig& cfg) {
  std::vector<TensorRef> out;
  auto push_mat = [&out](const std::string& name, Matrix& mat) {
    out.push_back({name,
                   {static_cast<std::uint64_t>(mat.rows()),
                    static_cast<std::uint64_t>(mat.cols())},
                   mat.data().data(), mat.data().size()});
  };
  auto push_vec = [&out](const std::string& name, Vector& v) {
    out.push_back({name, {static_cast<std::uint64_t>(v.size())}, v.data(), v.size()});
  };
  push_mat("wte", m.wte);
  push_mat("wpe", m.wpe);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto& lw = m.layers[l];
    push_vec(p + "ln1_gain", lw.ln1_gain);
    push_vec(p + "ln1_bias", lw.ln1_bias);
    push_mat(p + "w_q", lw.w_q);
    push_mat(p + "w_k", lw.w_k);
    push_mat(p + "w_v", lw.w_v);
    push_mat(p + "w_o", lw.w_o);
    push_vec(p + "ln2_gain", lw.ln2_gain);
    push_vec(p + "ln2_bias", lw.ln2_bias);
    push_mat(p + "w_up", lw.w_up);
    push_mat(p + "w_down", lw.w_down);
  }
  push_vec("lnf_gain", m.lnf_gain);
  push_vec("lnf_bias", m.lnf_bias);
  return out;
}

}  // namespace

std::string to_string(BosMode m) { return m == BosMode::none ? "none" : "prepend"; }

std::string to_string(PosSwap m) {
  switch (m) {
    case PosSwap::off: return "off";
    case PosSwap::second_to_first: return "second_to_first";
    default: return "first_to_second";
  }
}

BosMode bos_mode_from_string(const std::string& s) {
  if (s == "none") return BosMode::none;
  if (s == "prepend") return BosMode::prepend;
  throw ConfigInvalid("unknown bos_mode: " + s);
}

PosSwap pos_swap_from_string(const std::string& s) {
  if (s == "off") return PosSwap::off;
  if (s == "second_to_first") return PosSwap::second_to_first;
  if (s == "first_to_second") return PosSwap::first_to_second;
  throw ConfigInvalid("unknown pos_swap: " + s);
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigInvalid("n_layers must be >= 1");
  if (d_model < 1 || vocab_size < 2) throw ConfigInvalid("degenerate model dims");
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigInvalid("d_model must be divisible by n_heads");
  }
  if (edited_layer >= n_layers) {
    throw ConfigInvalid("edited_layer out of range");
  }
  if (max_seq < 2) throw ConfigInvalid("max_seq must be >= 2");
  if (bos_mode == BosMode::prepend &&
      vocab_size <= static_cast<std::size_t>(kBosToken)) {
    throw ConfigInvalid("bos_mode=prepend requires vocab_size > 256");
  }
  if (!(ln_epsilon > 0.0)) throw ConfigInvalid("ln_epsilon must be positive");
}

TinyLM TinyLM::random_init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  TinyLM m;
  m.config = config;
  allocate_weights(m);

  Rng rng(seed);
  const double d_in = static_cast<double>(config.d_model);
  const double proj_std = 1.0 / std::sqrt(d_in);
  // residual-branch outputs scaled down with depth, GPT-2 style
  const double resid_std = proj_std / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  const double down_std =
      1.0 / std::sqrt(static_cast<double>(config.mlp_dim())) /
      std::sqrt(2.0 * static_cast<double>(config.n_layers));

  auto fill_gauss = [&rng](Matrix& mat, double sigma) {
    for (double& x : mat.data()) x = sigma * rng.next_gaussian();
  };
  fill_gauss(m.wte, 0.08);
  fill_gauss(m.wpe, 0.04);
  for (auto& l : m.layers) {
    l.ln1_gain.assign(config.d_model, 1.0);
    l.ln2_gain.assign(config.d_model, 1.0);
    fill_gauss(l.w_q, proj_std);
    fill_gauss(l.w_k, proj_std);
    fill_gauss(l.w_v, proj_std);
    fill_gauss(l.w_o, resid_std);
    fill_gauss(l.w_up, proj_std);
    fill_gauss(l.w_down, down_std);
  }
  m.lnf_gain.assign(config.d_model, 1.0);
  return m;
}

std::vector<TensorRef> named_tensors(TinyLM& model) {
  return collect_tensors(model, model.config);
}

namespace detail {

ParamGrads::ParamGrads(const ModelConfig& cfg) : config(cfg) {
  const std::size_t d = cfg.d_model, mm = cfg.mlp_dim();
  wte = Matrix(cfg.vocab_size, d);
  wpe = Matrix(cfg.max_seq, d);
  layers.assign(cfg.n_layers, LayerWeights{});
  for (auto& l : layers) {
    l.ln1_gain.assign(d, 0.0);
    l.ln1_bias.assign(d, 0.0);
    l.w_q = Matrix(d, d);
    l.w_k = Matrix(d, d);
    l.w_v = Matrix(d, d);
    l.w_o = Matrix(d, d);
    l.ln2_gain.assign(d, 0.0);
    l.ln2_bias.assign(d, 0.0);
    l.w_up = Matrix(mm, d);
    l.w_down = Matrix(d, mm);
  }
  lnf_gain.assign(d, 0.0);
  lnf_bias.assign(d, 0.0);
}

void ParamGrads::zero() {
  for (auto& t : named_tensors(*this)) std::memset(t.data, 0, t.size * sizeof(double));
}

void ParamGrads::add_scaled(const ParamGrads& other, double s) {
  auto mine = named_tensors(*this);
  auto theirs = named_tensors(const_cast<ParamGrads&>(other));
  for (std::size_t i = 0; i < mine.size(); ++i) {
    for (std::size_t j = 0; j < mine[i].size; ++j) {
      mine[i].data[j] += s * theirs[i].data[j];
    }
  }
}

std::vector<TensorRef> named_tensors(ParamGrads& g) {
  return collect_tensors(g, g.config);
}

TokenSeq preprocess(const TinyLM& model, const TokenSeq& tokens) {
  const auto& cfg = model.config;
  if (tokens.empty()) throw EmptyInput("forward: empty token sequence");
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw TokenOutOfRange("forward: token " + std::to_string(t) +
                            " outside vocab of " + std::to_string(cfg.vocab_size));
    }
  }
  TokenSeq proc;
  if (cfg.bos_mode == BosMode::prepend) {
    proc.reserve(tokens.size() + 1);
    proc.push_back(kBosToken);
    proc.insert(proc.end(), tokens.begin(), tokens.end());
  } else {
    proc = tokens;
  }
  if (proc.size() > cfg.max_seq) {
    throw SequenceTooLong("forward: sequence of " + std::to_string(proc.size()) +
                          " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  return proc;
}

namespace {

void allocate_acts(Acts& acts, const ModelConfig& cfg, std::size_t T) {
  const std::size_t d = cfg.d_model, mm = cfg.mlp_dim(), V = cfg.vocab_size,
                    H = cfg.n_heads;
  acts.T = T;
  acts.x0.assign(T * d, 0.0);
  acts.layers.resize(cfg.n_layers);
  for (auto& a : acts.layers) {
    a.ln1_out.assign(T * d, 0.0);
    a.ln1_mean.assign(T, 0.0);
    a.ln1_rstd.assign(T, 0.0);
    a.q.assign(T * d, 0.0);
    a.k.assign(T * d, 0.0);
    a.v.assign(T * d, 0.0);
    a.att.assign(H * T * T, 0.0);
    a.att_mix.assign(T * d, 0.0);
    a.att_out.assign(T * d, 0.0);
    a.x_mid.assign(T * d, 0.0);
    a.ln2_out.assign(T * d, 0.0);
    a.ln2_mean.assign(T, 0.0);
    a.ln2_rstd.assign(T, 0.0);
    a.mlp_pre.assign(T * mm, 0.0);
    a.mlp_act.assign(T * mm, 0.0);
    a.mlp_out.assign(T * d, 0.0);
    a.x_out.assign(T * d, 0.0);
  }
  acts.lnf_out.assign(T * d, 0.0);
  acts.lnf_mean.assign(T, 0.0);
  acts.lnf_rstd.assign(T, 0.0);
  acts.logits.assign(T * V, 0.0);
}

}  // namespace

void run_forward(const TinyLM& model, const TokenSeq& proc, Acts& acts,
                 const Injection* inj) {
  const auto& cfg = model.config;
  const std::size_t T = proc.size(), d = cfg.d_model, mm = cfg.mlp_dim(),
                    V = cfg.vocab_size, H = cfg.n_heads, hd = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  allocate_acts(acts, cfg, T);

  for (std::size_t t = 0; t < T; ++t) {
    const double* te = model.wte.row(proc[t]);
    const double* pe = model.wpe.row(t);
    double* x = &acts.x0[t * d];
    for (std::size_t i = 0; i < d; ++i) x[i] = te[i] + pe[i];
  }

  const Buf* x_in = &acts.x0;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& w = model.layers[l];
    auto& a = acts.layers[l];

    for (std::size_t t = 0; t < T; ++t) {
      layernorm_fwd(&(*x_in)[t * d], w.ln1_gain, w.ln1_bias, cfg.ln_epsilon, d,
                    &a.ln1_out[t * d], &a.ln1_mean[t], &a.ln1_rstd[t]);
      matvec_into(w.w_q, &a.ln1_out[t * d], &a.q[t * d]);
      matvec_into(w.w_k, &a.ln1_out[t * d], &a.k[t * d]);
      matvec_into(w.w_v, &a.ln1_out[t * d], &a.v[t * d]);
    }

    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t o = h * hd;
      for (std::size_t t = 0; t < T; ++t) {
        double* p = &a.att[(h * T + t) * T];
        const double* qt = &a.q[t * d + o];
        double mx = -1e300;
        for (std::size_t j = 0; j <= t; ++j) {
          const double* kj = &a.k[j * d + o];
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qt[c] * kj[c];
          p[j] = s * att_scale;
          if (p[j] > mx) mx = p[j];
        }
        double se = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          p[j] = std::exp(p[j] - mx);
          se += p[j];
        }
        const double inv = 1.0 / se;
        for (std::size_t j = 0; j <= t; ++j) p[j] *= inv;
        double* mix = &a.att_mix[t * d + o];
        for (std::size_t c = 0; c < hd; ++c) mix[c] = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          const double pj = p[j];
          const double* vj = &a.v[j * d + o];
          for (std::size_t c = 0; c < hd; ++c) mix[c] += pj * vj[c];
        }
      }
    }

    for (std::size_t t = 0; t < T; ++t) {
      matvec_into(w.w_o, &a.att_mix[t * d], &a.att_out[t * d]);
      const double* xi = &(*x_in)[t * d];
      double* xm = &a.x_mid[t * d];
      for (std::size_t i = 0; i < d; ++i) xm[i] = xi[i] + a.att_out[t * d + i];
    }

    for (std::size_t t = 0; t < T; ++t) {
      layernorm_fwd(&a.x_mid[t * d], w.ln2_gain, w.ln2_bias, cfg.ln_epsilon, d,
                    &a.ln2_out[t * d], &a.ln2_mean[t], &a.ln2_rstd[t]);
      matvec_into(w.w_up, &a.ln2_out[t * d], &a.mlp_pre[t * mm]);
      for (std::size_t j = 0; j < mm; ++j) {
        a.mlp_act[t * mm + j] = gelu(a.mlp_pre[t * mm + j]);
      }
      matvec_into(w.w_down, &a.mlp_act[t * mm], &a.mlp_out[t * d]);
    }

    if (inj != nullptr && l == cfg.edited_layer) {
      double* row = &a.mlp_out[inj->pos * d];
      for (std::size_t i = 0; i < d; ++i) row[i] = (*inj->v)[i];
    }

    for (std::size_t t = 0; t < T; ++t) {
      const double* xm = &a.x_mid[t * d];
      const double* mo = &a.mlp_out[t * d];
      double* xo = &a.x_out[t * d];
      for (std::size_t i = 0; i < d; ++i) xo[i] = xm[i] + mo[i];
    }
    x_in = &a.x_out;
  }

  for (std::size_t t = 0; t < T; ++t) {
    layernorm_fwd(&(*x_in)[t * d], model.lnf_gain, model.lnf_bias, cfg.ln_epsilon, d,
                  &acts.lnf_out[t * d], &acts.lnf_mean[t], &acts.lnf_rstd[t]);
    matvec_into(model.wte, &acts.lnf_out[t * d], &acts.logits[t * V]);
  }
}

void run_backward(const TinyLM& model, const TokenSeq& proc, const Acts& acts,
                  const Buf& dlogits, ParamGrads* grads, const Injection* inj,
                  Vector* d_inj) {
  const auto& cfg = model.config;
  const std::size_t T = proc.size(), d = cfg.d_model, mm = cfg.mlp_dim(),
                    V = cfg.vocab_size, H = cfg.n_heads, hd = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // head: logits[t] = wte * lnf_out[t]
  Buf d_lnf(T * d, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* dl = &dlogits[t * V];
    double* dln = &d_lnf[t * d];
    for (std::size_t vtok = 0; vtok < V; ++vtok) {
      const double g = dl[vtok];
      if (g == 0.0) continue;
      const double* row = model.wte.row(vtok);
      for (std::size_t i = 0; i < d; ++i) dln[i] += g * row[i];
      if (grads) {
        double* gw = grads->wte.row(vtok);
        const double* lo = &acts.lnf_out[t * d];
        for (std::size_t i = 0; i < d; ++i) gw[i] += g * lo[i];
      }
    }
  }

  // final layernorm
  Buf d_x(T * d, 0.0);
  const Buf& x_last = cfg.n_layers > 0 ? acts.layers.back().x_out : acts.x0;
  for (std::size_t t = 0; t < T; ++t) {
    layernorm_bwd(&x_last[t * d], model.lnf_gain, acts.lnf_mean[t], acts.lnf_rstd[t],
                  &d_lnf[t * d], d, &d_x[t * d],
                  grads ? &grads->lnf_gain : nullptr,
                  grads ? &grads->lnf_bias : nullptr);
  }

  Buf d_ln2(T * d), d_xmid(T * d), d_mix(T * d), d_q(T * d), d_k(T * d), d_v(T * d),
      d_ln1(T * d), d_xin(T * d);
  Buf d_act(mm), d_pre(mm);

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& w = model.layers[li];
    const auto& a = acts.layers[li];
    auto* gw = grads ? &grads->layers[li] : nullptr;
    const Buf& x_in = li == 0 ? acts.x0 : acts.layers[li - 1].x_out;
    const bool inj_here = inj != nullptr && li == cfg.edited_layer;

    // x_out = x_mid + mlp_out; d_x holds d(x_out)
    std::fill(d_ln2.begin(), d_ln2.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const double* d_mlp_out = &d_x[t * d];
      if (inj_here && t == inj->pos) {
        // the injected vector replaced this position's MLP output; the
        // gradient stops here instead of flowing into the MLP weights
        if (d_inj) d_inj->assign(d_mlp_out, d_mlp_out + d);
        continue;
      }
      std::fill(d_act.begin(), d_act.end(), 0.0);
      matvec_t_acc(w.w_down, d_mlp_out, d_act.data());
      if (gw) outer_acc(gw->w_down, d_mlp_out, &a.mlp_act[t * mm]);
      for (std::size_t j = 0; j < mm; ++j) {
        d_pre[j] = gelu_grad(a.mlp_pre[t * mm + j]) * d_act[j];
      }
      if (gw) outer_acc(gw->w_up, d_pre.data(), &a.ln2_out[t * d]);
      std::fill(&d_ln2[t * d], &d_ln2[t * d] + d, 0.0);
      matvec_t_acc(w.w_up, d_pre.data(), &d_ln2[t * d]);
    }

    // d(x_mid) = d(x_out) + LN2-backward(d_ln2)
    std::copy(d_x.begin(), d_x.end(), d_xmid.begin());
    for (std::size_t t = 0; t < T; ++t) {
      if (inj_here && t == inj->pos) continue;  // no MLP branch at this position
      layernorm_bwd(&a.x_mid[t * d], w.ln2_gain, a.ln2_mean[t], a.ln2_rstd[t],
                    &d_ln2[t * d], d, &d_xmid[t * d],
                    gw ? &gw->ln2_gain : nullptr, gw ? &gw->ln2_bias : nullptr);
    }

    // attention: x_mid = x_in + att_out, att_out = w_o * att_mix
    std::fill(d_mix.begin(), d_mix.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      matvec_t_acc(w.w_o, &d_xmid[t * d], &d_mix[t * d]);
      if (gw) outer_acc(gw->w_o, &d_xmid[t * d], &a.att_mix[t * d]);
    }

    std::fill(d_q.begin(), d_q.end(), 0.0);
    std::fill(d_k.begin(), d_k.end(), 0.0);
    std::fill(d_v.begin(), d_v.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t o = h * hd;
      for (std::size_t t = 0; t < T; ++t) {
        const double* p = &a.att[(h * T + t) * T];
        const double* dm = &d_mix[t * d + o];
        // dp_j = dm . v_j is recomputed in the second pass instead of stashed
        double sum_p_dp = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          const double* vj = &a.v[j * d + o];
          double dpj = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dpj += dm[c] * vj[c];
          double* dvj = &d_v[j * d + o];
          const double pj = p[j];
          for (std::size_t c = 0; c < hd; ++c) dvj[c] += pj * dm[c];
          sum_p_dp += pj * dpj;
        }
        const double* qt = &a.q[t * d + o];
        double* dqt = &d_q[t * d + o];
        for (std::size_t j = 0; j <= t; ++j) {
          const double* vj = &a.v[j * d + o];
          double dpj = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dpj += dm[c] * vj[c];
          const double dsj = p[j] * (dpj - sum_p_dp) * att_scale;
          const double* kj = &a.k[j * d + o];
          double* dkj = &d_k[j * d + o];
          for (std::size_t c = 0; c < hd; ++c) {
            dqt[c] += dsj * kj[c];
            dkj[c] += dsj * qt[c];
          }
        }
      }
    }

    std::fill(d_ln1.begin(), d_ln1.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      matvec_t_acc(w.w_q, &d_q[t * d], &d_ln1[t * d]);
      matvec_t_acc(w.w_k, &d_k[t * d], &d_ln1[t * d]);
      matvec_t_acc(w.w_v, &d_v[t * d], &d_ln1[t * d]);
      if (gw) {
        outer_acc(gw->w_q, &d_q[t * d], &a.ln1_out[t * d]);
        outer_acc(gw->w_k, &d_k[t * d], &a.ln1_out[t * d]);
        outer_acc(gw->w_v, &d_v[t * d], &a.ln1_out[t * d]);
      }
    }

    // d(x_in) = d(x_mid) + LN1-backward(d_ln1)
    std::copy(d_xmid.begin(), d_xmid.end(), d_xin.begin());
    for (std::size_t t = 0; t < T; ++t) {
      layernorm_bwd(&x_in[t * d], w.ln1_gain, a.ln1_mean[t], a.ln1_rstd[t],
                    &d_ln1[t * d], d, &d_xin[t * d],
                    gw ? &gw->ln1_gain : nullptr, gw ? &gw->ln1_bias : nullptr);
    }
    std::swap(d_x, d_xin);
  }

  if (grads) {
    for (std::size_t t = 0; t < T; ++t) {
      double* gte = grads->wte.row(proc[t]);
      double* gpe = grads->wpe.row(t);
      const double* dx = &d_x[t * d];
      for (std::size_t i = 0; i < d; ++i) {
        gte[i] += dx[i];
        gpe[i] += dx[i];
      }
    }
  }
}

double nll_at(const Acts& acts, std::size_t vocab, std::size_t pos, int target,
              Buf& dlogits, double scale) {
  const double* z = &acts.logits[pos * vocab];
  double mx = z[0];
  for (std::size_t i = 1; i < vocab; ++i) mx = std::max(mx, z[i]);
  double se = 0.0;
  for (std::size_t i = 0; i < vocab; ++i) se += std::exp(z[i] - mx);
  const double nll = std::log(se) + mx - z[target];
  double* dl = &dlogits[pos * vocab];
  const double inv = 1.0 / se;
  for (std::size_t i = 0; i < vocab; ++i) {
    double p = std::exp(z[i] - mx) * inv;
    if (static_cast<int>(i) == target) p -= 1.0;
    dl[i] += p * scale;
  }
  return nll;
}

}  // namespace detail

namespace {

ForwardTrace make_trace(const TinyLM& model, const TokenSeq& proc,
                        const detail::Acts& acts, bool capture_all_layers) {
  const auto& cfg = model.config;
  const std::size_t T = proc.size(), d = cfg.d_model, mm = cfg.mlp_dim(),
                    V = cfg.vocab_size;
  ForwardTrace tr;
  tr.processed_tokens = proc;
  tr.bos_offset = cfg.bos_mode == BosMode::prepend ? 1 : 0;
  tr.logits.resize(T);
  tr.tapped_keys.resize(T);
  tr.tapped_values.resize(T);
  const auto& edited = acts.layers[cfg.edited_layer];
  for (std::size_t t = 0; t < T; ++t) {
    tr.logits[t].assign(&acts.logits[t * V], &acts.logits[t * V] + V);
    tr.tapped_keys[t].assign(&edited.mlp_act[t * mm], &edited.mlp_act[t * mm] + mm);
    tr.tapped_values[t].assign(&edited.mlp_out[t * d], &edited.mlp_out[t * d] + d);
  }
  if (capture_all_layers) {
    tr.per_layer_keys.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      tr.per_layer_keys[l].resize(T);
      for (std::size_t t = 0; t < T; ++t) {
        tr.per_layer_keys[l][t].assign(&acts.layers[l].mlp_act[t * mm],
                                       &acts.layers[l].mlp_act[t * mm] + mm);
      }
    }
  }
  return tr;
}

}  // namespace

ForwardTrace forward(const TinyLM& model, const TokenSeq& tokens,
                     bool capture_all_layers) {
  const TokenSeq proc = detail::preprocess(model, tokens);
  detail::Acts acts;
  detail::run_forward(model, proc, acts);
  return make_trace(model, proc, acts, capture_all_layers);
}

ForwardTrace forward_with_injection(const TinyLM& model, const TokenSeq& tokens,
                                    std::size_t pos, const Vector& v) {
  const TokenSeq proc = detail::preprocess(model, tokens);
  if (pos >= tokens.size()) {
    throw DimensionMismatch("forward_with_injection: position out of range");
  }
  if (v.size() != model.config.d_model) {
    throw DimensionMismatch("forward_with_injection: vector dim != d_model");
  }
  ensure_finite(v, "forward_with_injection: v");
  const std::size_t off = model.config.bos_mode == BosMode::prepend ? 1 : 0;
  detail::Injection inj{pos + off, &v};
  detail::Acts acts;
  detail::run_forward(model, proc, acts, &inj);
  return make_trace(model, proc, acts, false);
}

Vector grad_wrt_injection(const TinyLM& model, const TokenSeq& tokens,
                          std::size_t pos, const Vector& v, int target,
                          std::size_t target_pos) {
  const auto& cfg = model.config;
  if (pos >= tokens.size() || target_pos >= tokens.size()) {
    throw DimensionMismatch("grad_wrt_injection: position out of range");
  }
  if (target < 0 || static_cast<std::size_t>(target) >= cfg.vocab_size) {
    throw TokenOutOfRange("grad_wrt_injection: target token out of vocab");
  }
  if (v.size() != cfg.d_model) {
    throw DimensionMismatch("grad_wrt_injection: vector dim != d_model");
  }
  if (target_pos < pos) {
    return Vector(cfg.d_model, 0.0);  // causality: loss cannot see the injection
  }
  const TokenSeq proc = detail::preprocess(model, tokens);
  const std::size_t off = cfg.bos_mode == BosMode::prepend ? 1 : 0;
  detail::Injection inj{pos + off, &v};
  detail::Acts acts;
  detail::run_forward(model, proc, acts, &inj);
  detail::Buf dlogits(proc.size() * cfg.vocab_size, 0.0);
  detail::nll_at(acts, cfg.vocab_size, target_pos + off, target, dlogits, 1.0);
  Vector d_inj(cfg.d_model, 0.0);
  detail::run_backward(model, proc, acts, dlogits, nullptr, &inj, &d_inj);
  return d_inj;
}

TinyLM apply_pos_swap(const TinyLM& model, PosSwap mode) {
  TinyLM out = model;
  out.config.pos_swap = mode;
  if (mode == PosSwap::second_to_first) {
    for (std::size_t i = 0; i < out.config.d_model; ++i) out.wpe(0, i) = out.wpe(1, i);
  } else if (mode == PosSwap::first_to_second) {
    for (std::size_t i = 0; i < out.config.d_model; ++i) out.wpe(1, i) = out.wpe(0, i);
  }
  return out;
}

TinyLM with_bos_mode(const TinyLM& model, BosMode mode) {
  TinyLM out = model;
  out.config.bos_mode = mode;
  out.config.validate();
  return out;
}

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_mlp"] = c.d_mlp;
  j["vocab_size"] = c.vocab_size;
  j["max_seq"] = c.max_seq;
  j["edited_layer"] = c.edited_layer;
  j["bos_mode"] = to_string(c.bos_mode);
  j["pos_swap"] = to_string(c.pos_swap);
  j["ln_epsilon"] = c.ln_epsilon;
  return j;
}

ModelConfig config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_mlp = j.at("d_mlp").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.edited_layer = j.at("edited_layer").get<std::size_t>();
  c.bos_mode = bos_mode_from_string(j.at("bos_mode").get<std::string>());
  c.pos_swap = pos_swap_from_string(j.at("pos_swap").get<std::string>());
  c.ln_epsilon = j.at("ln_epsilon").get<double>();
  return c;
}

}  // namespace

void save_model(const std::filesystem::path& path, const TinyLM& model) {
  Container c;
  c.metadata["kind"] = "model";
  c.metadata["config"] = config_to_json(model.config);
  auto refs = named_tensors(const_cast<TinyLM&>(model));
  for (const auto& r : refs) {
    NamedTensor t;
    t.name = r.name;
    t.shape = r.shape;
    t.data.assign(r.data, r.data + r.size);
    c.tensors.push_back(std::move(t));
  }
  save_container(path, c);
}

TinyLM load_model(const std::filesystem::path& path) {
  Container c = load_container(path);
  if (c.metadata.value("kind", "") != "model") {
    throw IoError("not a model container: " + path.string());
  }
  TinyLM m;
  m.config = config_from_json(c.metadata.at("config"));
  m.config.validate();
  allocate_weights(m);
  for (auto& r : named_tensors(m)) {
    const NamedTensor* t = c.find(r.name);
    if (t == nullptr) throw IoError("model container missing tensor " + r.name);
    if (t->shape != r.shape || t->data.size() != r.size) {
      throw IoError("model tensor shape mismatch for " + r.name);
    }
    std::copy(t->data.begin(), t->data.end(), r.data);
  }
  return m;
}

}  // namespace romelab
