#include "layers.h"

#include <cmath>
#include <limits>

namespace speechee::layers {

Matrix Linear(const Matrix &x, const Matrix &w, const Matrix &b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

Matrix LinearBackward(const Matrix &x, const Matrix &w, const Matrix &dy, Matrix *dw, Matrix *db) {
  if (dw) dw->noalias() += x.transpose() * dy;
  if (db) *db += dy.colwise().sum();
  return dy * w.transpose();
}

double Gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double GeluGrad(double x) {
  static const double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Matrix Gelu(const Matrix &x) { return x.unaryExpr([](double v) { return Gelu(v); }); }

Matrix LayerNorm(const Matrix &x, const Matrix &gain, const Matrix &bias, double eps,
                 LayerNormCache *cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * rstd(i);
  }
  Matrix y = xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix LayerNormBackward(const LayerNormCache &cache, const Matrix &gain, const Matrix &dy,
                         Matrix *dgain, Matrix *dbias) {
  if (dgain) *dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    double m1 = dxhat.row(i).mean();
    double m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

Matrix Im2Col(const Matrix &x, int stride) {
  const int t = static_cast<int>(x.rows()), c = static_cast<int>(x.cols());
  const int out = (t + stride - 1) / stride;
  Matrix cols = Matrix::Zero(out, 3 * c);
  for (int o = 0; o < out; ++o) {
    for (int k = 0; k < 3; ++k) {
      int src = o * stride - 1 + k;
      if (src >= 0 && src < t) cols.block(o, k * c, 1, c) = x.row(src);
    }
  }
  return cols;
}

Matrix Col2Im(const Matrix &dcols, int rows, int channels, int stride) {
  Matrix dx = Matrix::Zero(rows, channels);
  for (int o = 0; o < dcols.rows(); ++o) {
    for (int k = 0; k < 3; ++k) {
      int src = o * stride - 1 + k;
      if (src >= 0 && src < rows) dx.row(src) += dcols.block(o, k * channels, 1, channels);
    }
  }
  return dx;
}

Matrix SoftmaxRows(const Matrix &logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix LogSoftmaxRows(const Matrix &logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Matrix Attention(const Matrix &xq, const Matrix &xkv, const AttentionWeights &w, int heads,
                 bool causal, AttentionCache *cache) {
  const Eigen::Index tq = xq.rows(), tk = xkv.rows(), d = w.wq->cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix q = Linear(xq, *w.wq, *w.bq);
  Matrix k = Linear(xkv, *w.wk, *w.bk);
  Matrix v = Linear(xkv, *w.wv, *w.bv);
  Matrix context(tq, d);
  std::vector<Matrix> probs;
  if (cache) probs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Matrix s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    if (causal) {
      for (Eigen::Index i = 0; i < tq; ++i) {
        for (Eigen::Index j = i + 1; j < tk; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
      }
    }
    Matrix a = SoftmaxRows(s);
    context.middleCols(h * dh, dh).noalias() = a * v.middleCols(h * dh, dh);
    if (cache) probs.push_back(std::move(a));
  }
  Matrix y = Linear(context, *w.wo, *w.bo);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
  }
  return y;
}

Matrix AttentionBackward(const AttentionCache &c, const AttentionWeights &w,
                         const AttentionGrads &g, int heads, bool /*causal*/, const Matrix &dy,
                         Matrix *dxkv) {
  const Eigen::Index d = w.wq->cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dcontext = LinearBackward(c.context, *w.wo, dy, g.wo, g.bo);
  Matrix dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Matrix &a = c.probs[h];
    auto dctx = dcontext.middleCols(h * dh, dh);
    Matrix da = dctx * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * dctx;
    // Masked entries have a == 0, so their score gradient vanishes here.
    Eigen::VectorXd rowdot = (da.array() * a.array()).rowwise().sum();
    Matrix ds = a.array() * (da.colwise() - rowdot).array();
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  Matrix dxq = LinearBackward(c.xq, *w.wq, dq, g.wq, g.bq);
  Matrix dkv = LinearBackward(c.xkv, *w.wk, dk, g.wk, g.bk);
  dkv += LinearBackward(c.xkv, *w.wv, dv, g.wv, g.bv);
  if (dxkv) {
    if (dxkv->size() == 0) {
      *dxkv = std::move(dkv);
    } else {
      *dxkv += dkv;
    }
  }
  return dxq;
}

Matrix SinusoidalPositions(int length, int dim, int offset) {
  Matrix pe(length, dim);
  for (int p = 0; p < length; ++p) {
    for (int i = 0; i < dim; i += 2) {
      double angle = (p + offset) / std::pow(10000.0, static_cast<double>(i) / dim);
      pe(p, i) = std::sin(angle);
      if (i + 1 < dim) pe(p, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace speechee::layers
