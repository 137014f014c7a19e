#include "transformer.hpp"

#include <algorithm>
#include <cmath>

#include "sdft/errors.hpp"

namespace sdft::detail {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// out[n×m] += a[n×k] · w[k×m]
void matmul_acc(double* out, const double* a, const double* w, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    double* o = out + static_cast<std::size_t>(i) * m;
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double s = ai[kk];
      if (s == 0.0) continue;
      const double* wr = w + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) o[j] += s * wr[j];
    }
  }
}

// dw[k×m] += a[n×k]^T · dy[n×m]
void matmul_tn_acc(double* dw, const double* a, const double* dy, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    const double* di = dy + static_cast<std::size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      const double s = ai[kk];
      if (s == 0.0) continue;
      double* row = dw + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) row[j] += s * di[j];
    }
  }
}

// dx[n×k] += dy[n×m] · w[k×m]^T
void matmul_nt_acc(double* dx, const double* dy, const double* w, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* di = dy + static_cast<std::size_t>(i) * m;
    double* xi = dx + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double* wr = w + static_cast<std::size_t>(kk) * m;
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += di[j] * wr[j];
      xi[kk] += s;
    }
  }
}

void add_bias(double* out, const double* b, int n, int m) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(i) * m + j] += b[j];
}

void bias_grad(double* db, const double* dy, int n, int m) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) db[j] += dy[static_cast<std::size_t>(i) * m + j];
}

void layernorm(const double* x, const double* g, const double* b, int n, int d, double* xhat,
               double* rstd, double* y) {
  for (int i = 0; i < n; ++i) {
    const double* xi = x + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xi[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= d;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[i] = r;
    for (int j = 0; j < d; ++j) {
      const double h = (xi[j] - mean) * r;
      xhat[static_cast<std::size_t>(i) * d + j] = h;
      y[static_cast<std::size_t>(i) * d + j] = g[j] * h + b[j];
    }
  }
}

// dx += LayerNorm backward of dy.
void layernorm_backward(const double* dy, const double* xhat, const double* rstd, const double* g,
                        int n, int d, double* dx, double* dg, double* db) {
  std::vector<double> dxhat(d);
  for (int i = 0; i < n; ++i) {
    const double* dyi = dy + static_cast<std::size_t>(i) * d;
    const double* hi = xhat + static_cast<std::size_t>(i) * d;
    double mean_dh = 0.0, mean_dh_h = 0.0;
    for (int j = 0; j < d; ++j) {
      dg[j] += dyi[j] * hi[j];
      db[j] += dyi[j];
      dxhat[j] = dyi[j] * g[j];
      mean_dh += dxhat[j];
      mean_dh_h += dxhat[j] * hi[j];
    }
    mean_dh /= d;
    mean_dh_h /= d;
    double* dxi = dx + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) dxi[j] += rstd[i] * (dxhat[j] - mean_dh - hi[j] * mean_dh_h);
  }
}

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

}  // namespace

TransformerLayout TransformerLayout::make(int vocab_size, const TransformerShape& shape) {
  if (shape.dim < 1 || shape.layers < 1 || shape.heads < 1 || shape.context < 2 || shape.mlp_ratio < 1)
    throw ConfigError("transformer shape: dim, layers, heads, mlp_ratio must be >= 1 and context >= 2");
  if (shape.dim % shape.heads != 0)
    throw ConfigError("transformer shape: dim must be divisible by heads");
  TransformerLayout l;
  l.vocab = vocab_size;
  l.dim = shape.dim;
  l.layers = shape.layers;
  l.heads = shape.heads;
  l.context = shape.context;
  l.hidden = shape.dim * shape.mlp_ratio;
  l.smeared_keys = shape.smeared_keys;
  const std::size_t d = static_cast<std::size_t>(l.dim);
  const std::size_t h = static_cast<std::size_t>(l.hidden);
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  l.tok_emb = take(static_cast<std::size_t>(vocab_size) * d);
  l.pos_emb = take(static_cast<std::size_t>(l.context) * d);
  for (int i = 0; i < l.layers; ++i) {
    Block b{};
    b.ln1_g = take(d);
    b.ln1_b = take(d);
    b.wq = take(d * d);
    b.wk = take(d * d);
    b.wv = take(d * d);
    b.wo = take(d * d);
    b.smear = l.smeared_keys ? take(static_cast<std::size_t>(l.heads)) : 0;
    b.ln2_g = take(d);
    b.ln2_b = take(d);
    b.w1 = take(d * h);
    b.b1 = take(h);
    b.w2 = take(h * d);
    b.b2 = take(d);
    l.blocks.push_back(b);
  }
  l.lnf_g = take(d);
  l.lnf_b = take(d);
  l.w_out = take(d * static_cast<std::size_t>(vocab_size));
  l.b_out = take(static_cast<std::size_t>(vocab_size));
  l.total = off;
  return l;
}

TransformerForward::TransformerForward(const PolicyParams& params, std::span<const TokenId> tokens)
    : params_(params),
      layout_(TransformerLayout::make(params.vocab.size, std::get<TransformerShape>(params.shape))),
      tokens_(tokens.begin(), tokens.end()),
      n_(static_cast<int>(tokens.size())) {
  if (n_ == 0) throw InputError("transformer forward: empty token sequence");
  if (n_ > layout_.context)
    throw InputError("sequence length " + std::to_string(n_) + " exceeds model context " +
                     std::to_string(layout_.context));
  const int n = n_, d = layout_.dim, hd = layout_.hidden, H = layout_.heads, dh = d / H;
  const int V = layout_.vocab;
  const double* th = params.theta.data();
  const std::size_t nd = static_cast<std::size_t>(n) * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> x(nd);
  for (int i = 0; i < n; ++i) {
    const double* te = th + layout_.tok_emb + static_cast<std::size_t>(tokens_[i]) * d;
    const double* pe = th + layout_.pos_emb + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(i) * d + j] = te[j] + pe[j];
  }

  cache_.resize(layout_.layers);
  for (int l = 0; l < layout_.layers; ++l) {
    const auto& b = layout_.blocks[l];
    LayerCache& c = cache_[l];
    c.x_in = x;
    c.xhat1.assign(nd, 0.0);
    c.rstd1.assign(n, 0.0);
    c.h1.assign(nd, 0.0);
    layernorm(x.data(), th + b.ln1_g, th + b.ln1_b, n, d, c.xhat1.data(), c.rstd1.data(), c.h1.data());
    c.q.assign(nd, 0.0);
    c.k.assign(nd, 0.0);
    c.v.assign(nd, 0.0);
    matmul_acc(c.q.data(), c.h1.data(), th + b.wq, n, d, d);
    matmul_acc(c.k.data(), c.h1.data(), th + b.wk, n, d, d);
    matmul_acc(c.v.data(), c.h1.data(), th + b.wv, n, d, d);
    c.ks = c.k;
    if (layout_.smeared_keys) {
      for (int hh = 0; hh < H; ++hh) {
        const double s = sigmoid(th[b.smear + hh]);
        for (int j = 1; j < n; ++j)
          for (int e = hh * dh; e < (hh + 1) * dh; ++e)
            c.ks[static_cast<std::size_t>(j) * d + e] =
                s * c.k[static_cast<std::size_t>(j) * d + e] + (1.0 - s) * c.k[static_cast<std::size_t>(j - 1) * d + e];
      }
    }

    c.att.assign(static_cast<std::size_t>(H) * n * n, 0.0);
    c.o.assign(nd, 0.0);
    for (int hh = 0; hh < H; ++hh) {
      const int off = hh * dh;
      for (int i = 0; i < n; ++i) {
        double* a = c.att.data() + (static_cast<std::size_t>(hh) * n + i) * n;
        const double* qi = c.q.data() + static_cast<std::size_t>(i) * d + off;
        double mx = -1e300;
        for (int j = 0; j <= i; ++j) {
          const double* kj = c.ks.data() + static_cast<std::size_t>(j) * d + off;
          double s = 0.0;
          for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
          a[j] = s * scale;
          mx = std::max(mx, a[j]);
        }
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
          a[j] = std::exp(a[j] - mx);
          z += a[j];
        }
        double* oi = c.o.data() + static_cast<std::size_t>(i) * d + off;
        for (int j = 0; j <= i; ++j) {
          a[j] /= z;
          const double* vj = c.v.data() + static_cast<std::size_t>(j) * d + off;
          for (int e = 0; e < dh; ++e) oi[e] += a[j] * vj[e];
        }
      }
    }
    matmul_acc(x.data(), c.o.data(), th + b.wo, n, d, d);
    c.x_mid = x;

    c.xhat2.assign(nd, 0.0);
    c.rstd2.assign(n, 0.0);
    c.h2.assign(nd, 0.0);
    layernorm(x.data(), th + b.ln2_g, th + b.ln2_b, n, d, c.xhat2.data(), c.rstd2.data(), c.h2.data());
    const std::size_t nh = static_cast<std::size_t>(n) * hd;
    c.u.assign(nh, 0.0);
    matmul_acc(c.u.data(), c.h2.data(), th + b.w1, n, d, hd);
    add_bias(c.u.data(), th + b.b1, n, hd);
    c.g.resize(nh);
    for (std::size_t i = 0; i < nh; ++i) c.g[i] = gelu(c.u[i]);
    matmul_acc(x.data(), c.g.data(), th + b.w2, n, hd, d);
    add_bias(x.data(), th + b.b2, n, d);
  }

  x_final_ = x;
  xhatf_.assign(nd, 0.0);
  rstdf_.assign(n, 0.0);
  hf_.assign(nd, 0.0);
  layernorm(x.data(), th + layout_.lnf_g, th + layout_.lnf_b, n, d, xhatf_.data(), rstdf_.data(), hf_.data());
  logits_ = RowMatrix(n, V);
  matmul_acc(logits_.data.data(), hf_.data(), th + layout_.w_out, n, d, V);
  add_bias(logits_.data.data(), th + layout_.b_out, n, V);
}

void TransformerForward::backward(const RowMatrix& dlogits, std::span<double> grad) const {
  const int n = n_, d = layout_.dim, hd = layout_.hidden, H = layout_.heads, dh = d / H;
  const int V = layout_.vocab;
  if (dlogits.rows != n || dlogits.cols != V) throw InputError("transformer backward: cotangent shape mismatch");
  if (grad.size() != layout_.total) throw InputError("transformer backward: gradient length mismatch");
  const double* th = params_.theta.data();
  double* gr = grad.data();
  const std::size_t nd = static_cast<std::size_t>(n) * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  matmul_tn_acc(gr + layout_.w_out, hf_.data(), dlogits.data.data(), n, d, V);
  bias_grad(gr + layout_.b_out, dlogits.data.data(), n, V);
  std::vector<double> dhf(nd, 0.0);
  matmul_nt_acc(dhf.data(), dlogits.data.data(), th + layout_.w_out, n, d, V);
  std::vector<double> dx(nd, 0.0);
  layernorm_backward(dhf.data(), xhatf_.data(), rstdf_.data(), th + layout_.lnf_g, n, d, dx.data(),
                     gr + layout_.lnf_g, gr + layout_.lnf_b);

  for (int l = layout_.layers - 1; l >= 0; --l) {
    const auto& b = layout_.blocks[l];
    const LayerCache& c = cache_[l];
    const std::size_t nh = static_cast<std::size_t>(n) * hd;

    // MLP branch.
    matmul_tn_acc(gr + b.w2, c.g.data(), dx.data(), n, hd, d);
    bias_grad(gr + b.b2, dx.data(), n, d);
    std::vector<double> du(nh, 0.0);
    matmul_nt_acc(du.data(), dx.data(), th + b.w2, n, hd, d);
    for (std::size_t i = 0; i < nh; ++i) du[i] *= gelu_grad(c.u[i]);
    matmul_tn_acc(gr + b.w1, c.h2.data(), du.data(), n, d, hd);
    bias_grad(gr + b.b1, du.data(), n, hd);
    std::vector<double> dh2(nd, 0.0);
    matmul_nt_acc(dh2.data(), du.data(), th + b.w1, n, d, hd);
    layernorm_backward(dh2.data(), c.xhat2.data(), c.rstd2.data(), th + b.ln2_g, n, d, dx.data(),
                       gr + b.ln2_g, gr + b.ln2_b);

    // Attention branch.
    matmul_tn_acc(gr + b.wo, c.o.data(), dx.data(), n, d, d);
    std::vector<double> d_o(nd, 0.0);
    matmul_nt_acc(d_o.data(), dx.data(), th + b.wo, n, d, d);
    std::vector<double> dq(nd, 0.0), dks(nd, 0.0), dv(nd, 0.0);
    std::vector<double> da(n);
    for (int hh = 0; hh < H; ++hh) {
      const int off = hh * dh;
      for (int i = 0; i < n; ++i) {
        const double* a = c.att.data() + (static_cast<std::size_t>(hh) * n + i) * n;
        const double* doi = d_o.data() + static_cast<std::size_t>(i) * d + off;
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) {
          const double* vj = c.v.data() + static_cast<std::size_t>(j) * d + off;
          double* dvj = dv.data() + static_cast<std::size_t>(j) * d + off;
          double s = 0.0;
          for (int e = 0; e < dh; ++e) {
            s += doi[e] * vj[e];
            dvj[e] += a[j] * doi[e];
          }
          da[j] = s;
          dot += a[j] * s;
        }
        const double* qi = c.q.data() + static_cast<std::size_t>(i) * d + off;
        double* dqi = dq.data() + static_cast<std::size_t>(i) * d + off;
        for (int j = 0; j <= i; ++j) {
          const double ds = a[j] * (da[j] - dot) * scale;
          if (ds == 0.0) continue;
          const double* kj = c.ks.data() + static_cast<std::size_t>(j) * d + off;
          double* dkj = dks.data() + static_cast<std::size_t>(j) * d + off;
          for (int e = 0; e < dh; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
          }
        }
      }
    }
    // Undo the key smearing: ks_j = s·k_j + (1−s)·k_{j−1}.
    std::vector<double> dk = dks;
    if (layout_.smeared_keys) {
      for (int hh = 0; hh < H; ++hh) {
        const double s = sigmoid(th[b.smear + hh]);
        double dgate = 0.0;
        for (int j = 1; j < n; ++j)
          for (int e = hh * dh; e < (hh + 1) * dh; ++e) {
            const std::size_t at = static_cast<std::size_t>(j) * d + e, prev = at - static_cast<std::size_t>(d);
            dk[at] += (s - 1.0) * dks[at];
            dk[prev] += (1.0 - s) * dks[at];
            dgate += dks[at] * (c.k[at] - c.k[prev]);
          }
        gr[b.smear + hh] += dgate * s * (1.0 - s);
      }
    }
    matmul_tn_acc(gr + b.wq, c.h1.data(), dq.data(), n, d, d);
    matmul_tn_acc(gr + b.wk, c.h1.data(), dk.data(), n, d, d);
    matmul_tn_acc(gr + b.wv, c.h1.data(), dv.data(), n, d, d);
    std::vector<double> dh1(nd, 0.0);
    matmul_nt_acc(dh1.data(), dq.data(), th + b.wq, n, d, d);
    matmul_nt_acc(dh1.data(), dk.data(), th + b.wk, n, d, d);
    matmul_nt_acc(dh1.data(), dv.data(), th + b.wv, n, d, d);
    layernorm_backward(dh1.data(), c.xhat1.data(), c.rstd1.data(), th + b.ln1_g, n, d, dx.data(),
                       gr + b.ln1_g, gr + b.ln1_b);
  }

  for (int i = 0; i < n; ++i) {
    double* te = gr + layout_.tok_emb + static_cast<std::size_t>(tokens_[i]) * d;
    double* pe = gr + layout_.pos_emb + static_cast<std::size_t>(i) * d;
    const double* dxi = dx.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      te[j] += dxi[j];
      pe[j] += dxi[j];
    }
  }
}

}  // namespace sdft::detail
