// Forward/backward kernels for the toy encoder-decoder.  Every *Forward
// fills a cache that the matching *Backward consumes; backward passes
// accumulate (+=) into parameter gradients and return the input gradient.

#ifndef SPEECHEE_SRC_LAYERS_H_
#define SPEECHEE_SRC_LAYERS_H_

#include <vector>

#include "speechee/features.h"

namespace speechee::layers {

Matrix Linear(const Matrix &x, const Matrix &w, const Matrix &b);
// dw, db may be null when the parameter is frozen.
Matrix LinearBackward(const Matrix &x, const Matrix &w, const Matrix &dy, Matrix *dw, Matrix *db);

double Gelu(double x);
double GeluGrad(double x);
Matrix Gelu(const Matrix &x);

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

Matrix LayerNorm(const Matrix &x, const Matrix &gain, const Matrix &bias, double eps,
                 LayerNormCache *cache);
Matrix LayerNormBackward(const LayerNormCache &cache, const Matrix &gain, const Matrix &dy,
                         Matrix *dgain, Matrix *dbias);

// Width-3 convolution over time with one frame of zero padding on each side.
// Output length is ceil(T / stride).
Matrix Im2Col(const Matrix &x, int stride);
Matrix Col2Im(const Matrix &dcols, int rows, int channels, int stride);

struct AttentionWeights {
  const Matrix *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

struct AttentionGrads {
  Matrix *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

struct AttentionCache {
  Matrix xq, xkv;     // inputs
  Matrix q, k, v;     // projections
  std::vector<Matrix> probs;  // per head [Tq x Tk]
  Matrix context;     // concatenated head outputs
};

// Multi-head scaled dot-product attention.  With `causal`, query i sees keys
// 0..i (requires Tq == Tk).
Matrix Attention(const Matrix &xq, const Matrix &xkv, const AttentionWeights &w, int heads,
                 bool causal, AttentionCache *cache);
// Returns dxq; dxkv receives the key/value-side input gradient (added).  For
// self-attention callers pass the same matrix and sum the two.
Matrix AttentionBackward(const AttentionCache &cache, const AttentionWeights &w,
                         const AttentionGrads &g, int heads, bool causal, const Matrix &dy,
                         Matrix *dxkv);

Matrix SoftmaxRows(const Matrix &logits);
Matrix LogSoftmaxRows(const Matrix &logits);

Matrix SinusoidalPositions(int length, int dim, int offset = 0);

}  // namespace speechee::layers

#endif  // SPEECHEE_SRC_LAYERS_H_
