#include "speechee/model.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "layers.h"
#include "speechee/errors.h"
#include "speechee/random.h"

namespace speechee {

using layers::AttentionCache;
using layers::AttentionGrads;
using layers::AttentionWeights;
using layers::LayerNormCache;

// ---------------------------------------------------------------------------
// Configuration and parameters

void ModelConfig::Check() const {
  if (d_model <= 0 || d_model % 2 != 0) throw Error("d_model must be positive and even");
  if (heads <= 0 || d_model % heads != 0) throw Error("d_model must be divisible by heads");
  if (ff_dim <= 0) throw Error("ff_dim must be positive");
  if (encoder_layers < 0 || decoder_layers < 1) throw Error("bad layer counts");
  if (vocab_size <= Vocabulary::kNumSpecial - 1) throw Error("vocab_size too small");
}

Json ModelConfig::ToJson() const {
  return {{"d_model", d_model},
          {"heads", heads},
          {"ff_dim", ff_dim},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"vocab_size", vocab_size},
          {"input", input == InputKind::kFrames ? "frames" : "tokens"},
          {"layer_norm_eps", layer_norm_eps}};
}

ModelConfig ModelConfig::FromJson(const Json &j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.input = j.value("input", std::string("frames")) == "tokens" ? InputKind::kTokens
                                                                 : InputKind::kFrames;
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  return c;
}

const char *ToString(ParamGroup g) {
  switch (g) {
    case ParamGroup::kFrontEnd: return "frontend";
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kDecoder: return "decoder";
    case ParamGroup::kOutput: return "output";
  }
  return "?";
}

int ModelParameters::Add(const std::string &name, int rows, int cols, ParamGroup group) {
  names_.push_back(name);
  groups_.push_back(group);
  values_.push_back(Matrix::Zero(rows, cols));
  frozen_.push_back(false);
  return static_cast<int>(values_.size()) - 1;
}

void ModelParameters::BuildLayout() {
  const ModelConfig &c = config_;
  const int d = c.d_model;
  auto ln = [&](const std::string &prefix, ParamGroup g) {
    return LayerNormIdx{Add(prefix + ".gain", 1, d, g), Add(prefix + ".bias", 1, d, g)};
  };
  auto attn = [&](const std::string &prefix, ParamGroup g) {
    AttentionIdx a;
    a.wq = Add(prefix + ".q.w", d, d, g);
    a.bq = Add(prefix + ".q.b", 1, d, g);
    a.wk = Add(prefix + ".k.w", d, d, g);
    a.bk = Add(prefix + ".k.b", 1, d, g);
    a.wv = Add(prefix + ".v.w", d, d, g);
    a.bv = Add(prefix + ".v.b", 1, d, g);
    a.wo = Add(prefix + ".o.w", d, d, g);
    a.bo = Add(prefix + ".o.b", 1, d, g);
    return a;
  };
  auto ffn = [&](const std::string &prefix, ParamGroup g) {
    return FeedForwardIdx{Add(prefix + ".w1", d, c.ff_dim, g), Add(prefix + ".b1", 1, c.ff_dim, g),
                          Add(prefix + ".w2", c.ff_dim, d, g), Add(prefix + ".b2", 1, d, g)};
  };

  ParamLayout &l = layout_;
  if (c.input == InputKind::kFrames) {
    l.conv1_w = Add("frontend.conv1.w", 3 * kMelChannels, d, ParamGroup::kFrontEnd);
    l.conv1_b = Add("frontend.conv1.b", 1, d, ParamGroup::kFrontEnd);
    l.conv2_w = Add("frontend.conv2.w", 3 * d, d, ParamGroup::kFrontEnd);
    l.conv2_b = Add("frontend.conv2.b", 1, d, ParamGroup::kFrontEnd);
  } else {
    l.input_embed = Add("frontend.embed", c.vocab_size, d, ParamGroup::kFrontEnd);
  }
  for (int i = 0; i < c.encoder_layers; ++i) {
    std::string p = "encoder." + std::to_string(i);
    EncoderLayerIdx e;
    e.ln1 = ln(p + ".ln1", ParamGroup::kEncoder);
    e.attn = attn(p + ".attn", ParamGroup::kEncoder);
    e.ln2 = ln(p + ".ln2", ParamGroup::kEncoder);
    e.ffn = ffn(p + ".ffn", ParamGroup::kEncoder);
    l.encoder.push_back(e);
  }
  l.encoder_ln = ln("encoder.ln", ParamGroup::kEncoder);
  l.token_embed = Add("decoder.embed", c.vocab_size, d, ParamGroup::kDecoder);
  for (int i = 0; i < c.decoder_layers; ++i) {
    std::string p = "decoder." + std::to_string(i);
    DecoderLayerIdx e;
    e.ln1 = ln(p + ".ln1", ParamGroup::kDecoder);
    e.self_attn = attn(p + ".self", ParamGroup::kDecoder);
    e.ln2 = ln(p + ".ln2", ParamGroup::kDecoder);
    e.cross_attn = attn(p + ".cross", ParamGroup::kDecoder);
    e.ln3 = ln(p + ".ln3", ParamGroup::kDecoder);
    e.ffn = ffn(p + ".ffn", ParamGroup::kDecoder);
    l.decoder.push_back(e);
  }
  l.decoder_ln = ln("decoder.ln", ParamGroup::kDecoder);
  l.out_w = Add("output.w", d, c.vocab_size, ParamGroup::kOutput);
  l.out_b = Add("output.b", 1, c.vocab_size, ParamGroup::kOutput);
}

ModelParameters ModelParameters::Zeros(const ModelConfig &config) {
  config.Check();
  ModelParameters p;
  p.config_ = config;
  p.BuildLayout();
  return p;
}

ModelParameters ModelParameters::Initialize(const ModelConfig &config, std::uint64_t seed) {
  ModelParameters p = Zeros(config);
  Rng rng(seed);
  for (int i = 0; i < p.size(); ++i) {
    const std::string &n = p.names_[i];
    Matrix &v = p.values_[i];
    auto ends_with = [&](std::string_view suffix) {
      return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".gain")) {
      v.setOnes();
    } else if (ends_with(".b") || ends_with(".b1") || ends_with(".b2") || ends_with(".bias")) {
      v.setZero();
    } else {
      // Embeddings are looked up, not multiplied: unit scale.  Weight
      // matrices use 1/sqrt(fan_in).
      double std = ends_with("embed") ? 1.0 : 1.0 / std::sqrt(static_cast<double>(v.rows()));
      for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = std * rng.Normal();
    }
  }
  return p;
}

void ModelParameters::SetFrozen(ParamGroup g, bool frozen) {
  for (int i = 0; i < size(); ++i) {
    if (groups_[i] == g) frozen_[i] = frozen;
  }
}

void ModelParameters::FreezeEncoder(bool frozen) {
  SetFrozen(ParamGroup::kFrontEnd, frozen);
  SetFrozen(ParamGroup::kEncoder, frozen);
}

int ModelParameters::Find(const std::string &name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

long ModelParameters::NumScalars() const {
  long n = 0;
  for (const auto &v : values_) n += v.size();
  return n;
}

Gradients::Gradients(const ModelParameters &params) {
  tensors.reserve(params.size());
  for (int i = 0; i < params.size(); ++i) {
    tensors.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

void Gradients::Zero() {
  for (auto &t : tensors) t.setZero();
}

Gradients &Gradients::operator+=(const Gradients &o) {
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += o.tensors[i];
  return *this;
}

Gradients &Gradients::operator*=(double s) {
  for (auto &t : tensors) t *= s;
  return *this;
}

double Gradients::SquaredNorm() const {
  double s = 0;
  for (const auto &t : tensors) s += t.squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------
// Forward / backward building blocks

namespace {

AttentionWeights Weights(const ModelParameters &p, const AttentionIdx &a) {
  return {&p.value(a.wq), &p.value(a.bq), &p.value(a.wk), &p.value(a.bk),
          &p.value(a.wv), &p.value(a.bv), &p.value(a.wo), &p.value(a.bo)};
}

Matrix *Grad(const ModelParameters &p, Gradients *g, int i) {
  return (g && !p.frozen(i)) ? &g->tensors[i] : nullptr;
}

AttentionGrads GradPtrs(const ModelParameters &p, Gradients *g, const AttentionIdx &a) {
  return {Grad(p, g, a.wq), Grad(p, g, a.bq), Grad(p, g, a.wk), Grad(p, g, a.bk),
          Grad(p, g, a.wv), Grad(p, g, a.bv), Grad(p, g, a.wo), Grad(p, g, a.bo)};
}

Matrix Norm(const ModelParameters &p, const LayerNormIdx &ln, const Matrix &x, LayerNormCache *c) {
  return layers::LayerNorm(x, p.value(ln.gain), p.value(ln.bias), p.config().layer_norm_eps, c);
}

Matrix NormBackward(const ModelParameters &p, Gradients *g, const LayerNormIdx &ln,
                    const LayerNormCache &c, const Matrix &dy) {
  return layers::LayerNormBackward(c, p.value(ln.gain), dy, Grad(p, g, ln.gain), Grad(p, g, ln.bias));
}

struct FfnCache {
  Matrix in, pre, act;
};

Matrix FeedForward(const ModelParameters &p, const FeedForwardIdx &f, const Matrix &x, FfnCache *c) {
  Matrix pre = layers::Linear(x, p.value(f.w1), p.value(f.b1));
  Matrix act = layers::Gelu(pre);
  Matrix y = layers::Linear(act, p.value(f.w2), p.value(f.b2));
  if (c) {
    c->in = x;
    c->pre = std::move(pre);
    c->act = std::move(act);
  }
  return y;
}

Matrix FeedForwardBackward(const ModelParameters &p, Gradients *g, const FeedForwardIdx &f,
                           const FfnCache &c, const Matrix &dy) {
  Matrix dact = layers::LinearBackward(c.act, p.value(f.w2), dy, Grad(p, g, f.w2), Grad(p, g, f.b2));
  Matrix dpre = dact.array() * c.pre.unaryExpr([](double v) { return layers::GeluGrad(v); }).array();
  return layers::LinearBackward(c.in, p.value(f.w1), dpre, Grad(p, g, f.w1), Grad(p, g, f.b1));
}

struct EncoderLayerCache {
  LayerNormCache ln1, ln2;
  AttentionCache attn;
  FfnCache ffn;
};

Matrix EncoderLayer(const ModelParameters &p, const EncoderLayerIdx &e, const Matrix &x,
                    EncoderLayerCache *c) {
  const int heads = p.config().heads;
  Matrix a = Norm(p, e.ln1, x, c ? &c->ln1 : nullptr);
  Matrix x1 = x + layers::Attention(a, a, Weights(p, e.attn), heads, false, c ? &c->attn : nullptr);
  Matrix b = Norm(p, e.ln2, x1, c ? &c->ln2 : nullptr);
  return x1 + FeedForward(p, e.ffn, b, c ? &c->ffn : nullptr);
}

Matrix EncoderLayerBackward(const ModelParameters &p, Gradients *g, const EncoderLayerIdx &e,
                            const EncoderLayerCache &c, const Matrix &dy) {
  const int heads = p.config().heads;
  Matrix dx1 = dy + NormBackward(p, g, e.ln2, c.ln2, FeedForwardBackward(p, g, e.ffn, c.ffn, dy));
  Matrix dkv;
  Matrix da = layers::AttentionBackward(c.attn, Weights(p, e.attn), GradPtrs(p, g, e.attn), heads,
                                        false, dx1, &dkv);
  da += dkv;
  return dx1 + NormBackward(p, g, e.ln1, c.ln1, da);
}

struct DecoderLayerCache {
  LayerNormCache ln1, ln2, ln3;
  AttentionCache self_attn, cross_attn;
  FfnCache ffn;
};

Matrix DecoderLayer(const ModelParameters &p, const DecoderLayerIdx &e, const Matrix &x,
                    const Matrix &enc, DecoderLayerCache *c) {
  const int heads = p.config().heads;
  Matrix a = Norm(p, e.ln1, x, c ? &c->ln1 : nullptr);
  Matrix x1 =
      x + layers::Attention(a, a, Weights(p, e.self_attn), heads, true, c ? &c->self_attn : nullptr);
  Matrix b = Norm(p, e.ln2, x1, c ? &c->ln2 : nullptr);
  Matrix x2 = x1 + layers::Attention(b, enc, Weights(p, e.cross_attn), heads, false,
                                     c ? &c->cross_attn : nullptr);
  Matrix f = Norm(p, e.ln3, x2, c ? &c->ln3 : nullptr);
  return x2 + FeedForward(p, e.ffn, f, c ? &c->ffn : nullptr);
}

// Adds the encoder-state gradient into *denc when non-null.
Matrix DecoderLayerBackward(const ModelParameters &p, Gradients *g, const DecoderLayerIdx &e,
                            const DecoderLayerCache &c, const Matrix &dy, Matrix *denc) {
  const int heads = p.config().heads;
  Matrix dx2 = dy + NormBackward(p, g, e.ln3, c.ln3, FeedForwardBackward(p, g, e.ffn, c.ffn, dy));
  Matrix dh;
  Matrix db = layers::AttentionBackward(c.cross_attn, Weights(p, e.cross_attn),
                                        GradPtrs(p, g, e.cross_attn), heads, false, dx2, &dh);
  if (denc) {
    if (denc->size() == 0) {
      *denc = std::move(dh);
    } else {
      *denc += dh;
    }
  }
  Matrix dx1 = dx2 + NormBackward(p, g, e.ln2, c.ln2, db);
  Matrix dkv;
  Matrix da = layers::AttentionBackward(c.self_attn, Weights(p, e.self_attn),
                                        GradPtrs(p, g, e.self_attn), heads, true, dx1, &dkv);
  da += dkv;
  return dx1 + NormBackward(p, g, e.ln1, c.ln1, da);
}

struct FrontEndCache {
  int frames = 0;
  Matrix cols1, pre1, cols2, pre2;
  std::vector<int> ids;
};

Matrix FrontEndForward(const ModelParameters &p, const ModelInput &input, FrontEndCache *c) {
  const ParamLayout &l = p.layout();
  const int d = p.config().d_model;
  if (const auto *feats = std::get_if<FrameFeatures>(&input)) {
    if (p.config().input != InputKind::kFrames) throw Error("model expects token input");
    CheckFrameFeatures(*feats);
    Matrix cols1 = layers::Im2Col(feats->frames, 1);
    Matrix pre1 = layers::Linear(cols1, p.value(l.conv1_w), p.value(l.conv1_b));
    Matrix h1 = layers::Gelu(pre1);
    Matrix cols2 = layers::Im2Col(h1, 2);
    Matrix pre2 = layers::Linear(cols2, p.value(l.conv2_w), p.value(l.conv2_b));
    Matrix out = layers::Gelu(pre2) + layers::SinusoidalPositions(static_cast<int>(pre2.rows()), d);
    if (c) {
      c->frames = feats->num_frames();
      c->cols1 = std::move(cols1);
      c->pre1 = std::move(pre1);
      c->cols2 = std::move(cols2);
      c->pre2 = std::move(pre2);
    }
    return out;
  }
  const auto &ids = std::get<std::vector<int>>(input);
  if (p.config().input != InputKind::kTokens) throw Error("model expects frame input");
  if (ids.empty()) throw ShapeError("token input must not be empty");
  const Matrix &emb = p.value(l.input_embed);
  Matrix out(static_cast<Eigen::Index>(ids.size()), d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= emb.rows()) throw Error("input token id out of range");
    out.row(t) = emb.row(ids[t]);
  }
  out += layers::SinusoidalPositions(static_cast<int>(ids.size()), d);
  if (c) c->ids = ids;
  return out;
}

void FrontEndBackward(const ModelParameters &p, Gradients *g, const FrontEndCache &c,
                      const Matrix &dout) {
  const ParamLayout &l = p.layout();
  if (p.config().input == InputKind::kTokens) {
    Matrix *de = Grad(p, g, l.input_embed);
    if (!de) return;
    for (std::size_t t = 0; t < c.ids.size(); ++t) de->row(c.ids[t]) += dout.row(t);
    return;
  }
  auto gelu_grad = [](double v) { return layers::GeluGrad(v); };
  Matrix dpre2 = dout.array() * c.pre2.unaryExpr(gelu_grad).array();
  Matrix dcols2 = layers::LinearBackward(c.cols2, p.value(l.conv2_w), dpre2, Grad(p, g, l.conv2_w),
                                         Grad(p, g, l.conv2_b));
  Matrix dh1 = layers::Col2Im(dcols2, c.frames, p.config().d_model, 2);
  Matrix dpre1 = dh1.array() * c.pre1.unaryExpr(gelu_grad).array();
  layers::LinearBackward(c.cols1, p.value(l.conv1_w), dpre1, Grad(p, g, l.conv1_w),
                         Grad(p, g, l.conv1_b));
}

void CheckFinite(const Matrix &m, const char *what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

Matrix EmbedDecoderInputs(const ModelParameters &p, const std::vector<int> &ids) {
  const Matrix &emb = p.value(p.layout().token_embed);
  Matrix x(static_cast<Eigen::Index>(ids.size()), p.config().d_model);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= emb.rows()) {
      throw Error("token id " + std::to_string(ids[t]) + " outside the vocabulary");
    }
    x.row(t) = emb.row(ids[t]);
  }
  x += layers::SinusoidalPositions(static_cast<int>(ids.size()), p.config().d_model);
  return x;
}

bool EncoderSideTrainable(const ModelParameters &p) {
  for (int i = 0; i < p.size(); ++i) {
    if ((p.group(i) == ParamGroup::kFrontEnd || p.group(i) == ParamGroup::kEncoder) && !p.frozen(i)) {
      return true;
    }
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public forward operations

Matrix ExtractFeatures(const ModelParameters &params, const FrameFeatures &features) {
  return FrontEndForward(params, ModelInput(features), nullptr);
}

Matrix EmbedInputTokens(const ModelParameters &params, const std::vector<int> &ids) {
  return FrontEndForward(params, ModelInput(ids), nullptr);
}

Matrix FrontEnd(const ModelParameters &params, const ModelInput &input) {
  return FrontEndForward(params, input, nullptr);
}

Matrix EncoderLayerForward(const ModelParameters &params, int layer, const Matrix &x,
                           std::vector<Matrix> *ln_out) {
  EncoderLayerCache c;
  Matrix y = EncoderLayer(params, params.layout().encoder.at(layer), x, &c);
  if (ln_out) {
    ln_out->clear();
    ln_out->push_back(c.ln1.xhat);
    ln_out->push_back(c.ln2.xhat);
  }
  return y;
}

EncoderStates Encode(const ModelParameters &params, const Matrix &features) {
  CheckFinite(features, "encoder input");
  Matrix x = features;
  for (const auto &e : params.layout().encoder) x = EncoderLayer(params, e, x, nullptr);
  EncoderStates out{Norm(params, params.layout().encoder_ln, x, nullptr)};
  CheckFinite(out.states, "encoder states");
  return out;
}

EncoderStates EncodeInput(const ModelParameters &params, const ModelInput &input) {
  return Encode(params, FrontEnd(params, input));
}

Matrix TeacherForcedLogits(const ModelParameters &params, const EncoderStates &enc,
                           const std::vector<int> &decoder_inputs) {
  const ParamLayout &l = params.layout();
  Matrix x = EmbedDecoderInputs(params, decoder_inputs);
  for (const auto &e : l.decoder) x = DecoderLayer(params, e, x, enc.states, nullptr);
  Matrix h = Norm(params, l.decoder_ln, x, nullptr);
  return layers::Linear(h, params.value(l.out_w), params.value(l.out_b));
}

DecoderState StartDecoding(const ModelParameters &params, const EncoderStates &enc) {
  DecoderState s;
  auto kv = std::make_shared<std::vector<std::pair<Matrix, Matrix>>>();
  for (const auto &e : params.layout().decoder) {
    const auto &a = e.cross_attn;
    kv->emplace_back(layers::Linear(enc.states, params.value(a.wk), params.value(a.bk)),
                     layers::Linear(enc.states, params.value(a.wv), params.value(a.bv)));
  }
  s.cross_kv = std::move(kv);
  s.self_k.assign(params.layout().decoder.size(), Matrix(0, params.config().d_model));
  s.self_v = s.self_k;
  return s;
}

namespace {

// Single-query attention over cached keys/values.
Matrix AttendCached(const Matrix &q, const Matrix &k, const Matrix &v, int heads) {
  const Eigen::Index d = q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix ctx(1, d);
  for (int h = 0; h < heads; ++h) {
    Matrix s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    Matrix a = layers::SoftmaxRows(s);
    ctx.middleCols(h * dh, dh).noalias() = a * v.middleCols(h * dh, dh);
  }
  return ctx;
}

Matrix AppendRow(const Matrix &m, const Matrix &row) {
  Matrix out(m.rows() + 1, m.cols());
  if (m.rows() > 0) out.topRows(m.rows()) = m;
  out.row(m.rows()) = row.row(0);
  return out;
}

}  // namespace

StepResult DecodeStep(const ModelParameters &params, const DecoderState &state, int prev_token) {
  const ParamLayout &l = params.layout();
  const int heads = params.config().heads;
  const int d = params.config().d_model;
  const Matrix &emb = params.value(l.token_embed);
  if (prev_token < 0 || prev_token >= emb.rows()) {
    throw Error("token id " + std::to_string(prev_token) + " outside the vocabulary");
  }
  StepResult r;
  r.state.position = state.position + 1;
  r.state.cross_kv = state.cross_kv;
  r.state.hidden = state.hidden;
  Matrix x = emb.row(prev_token) + layers::SinusoidalPositions(1, d, state.position);
  for (std::size_t i = 0; i < l.decoder.size(); ++i) {
    const DecoderLayerIdx &e = l.decoder[i];
    Matrix a = Norm(params, e.ln1, x, nullptr);
    const auto &sa = e.self_attn;
    Matrix k = AppendRow(state.self_k[i], layers::Linear(a, params.value(sa.wk), params.value(sa.bk)));
    Matrix v = AppendRow(state.self_v[i], layers::Linear(a, params.value(sa.wv), params.value(sa.bv)));
    Matrix q = layers::Linear(a, params.value(sa.wq), params.value(sa.bq));
    x += layers::Linear(AttendCached(q, k, v, heads), params.value(sa.wo), params.value(sa.bo));
    r.state.self_k.push_back(std::move(k));
    r.state.self_v.push_back(std::move(v));

    const auto &ca = e.cross_attn;
    Matrix b = Norm(params, e.ln2, x, nullptr);
    Matrix cq = layers::Linear(b, params.value(ca.wq), params.value(ca.bq));
    const auto &[ck, cv] = (*state.cross_kv)[i];
    x += layers::Linear(AttendCached(cq, ck, cv, heads), params.value(ca.wo), params.value(ca.bo));

    Matrix f = Norm(params, e.ln3, x, nullptr);
    x += FeedForward(params, e.ffn, f, nullptr);
  }
  Matrix h = Norm(params, l.decoder_ln, x, nullptr);
  r.state.hidden.push_back(h.row(0));
  Matrix logits = layers::Linear(h, params.value(l.out_w), params.value(l.out_b));
  r.probs = layers::SoftmaxRows(logits).row(0).transpose();
  return r;
}

// ---------------------------------------------------------------------------
// Targets and loss

TargetSequence BuildTarget(const Vocabulary &vocab, const std::string &transcript,
                           const std::vector<EventRecord> &records, Format format, bool with_clue) {
  TargetSequence t;
  if (with_clue) {
    t.tokens = vocab.EncodeContent(transcript);
    t.clue_boundary = t.tokens.size();
    t.tokens.push_back(Vocabulary::kSep);
  }
  std::vector<int> ev = vocab.EncodeStructured(Serialize(records, format).text);
  t.tokens.insert(t.tokens.end(), ev.begin(), ev.end());
  t.tokens.push_back(Vocabulary::kEos);
  return t;
}

std::vector<int> DecoderInputs(const TargetSequence &target) {
  std::vector<int> in;
  in.reserve(target.tokens.size());
  in.push_back(Vocabulary::kBos);
  for (std::size_t i = 0; i + 1 < target.tokens.size(); ++i) in.push_back(target.tokens[i]);
  return in;
}

LossResult TrainingLoss(const ModelParameters &params, const std::vector<const Example *> &batch,
                        Gradients *grads, const LossOptions &opts) {
  if (batch.empty()) throw Error("empty batch");
  const ParamLayout &l = params.layout();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const bool encoder_grads = grads && EncoderSideTrainable(params);
  LossResult result;
  double nll_sum = 0;

  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const Example &ex = *batch[bi];
    const std::vector<int> &target = ex.target.tokens;
    if (target.empty()) throw Error("empty target sequence");

    // Forward with caches.
    FrontEndCache fc;
    Matrix x = FrontEndForward(params, ex.input, grads ? &fc : nullptr);
    std::vector<EncoderLayerCache> ec(l.encoder.size());
    for (std::size_t i = 0; i < l.encoder.size(); ++i) {
      x = EncoderLayer(params, l.encoder[i], x, grads ? &ec[i] : nullptr);
    }
    LayerNormCache enc_ln;
    Matrix enc = Norm(params, l.encoder_ln, x, &enc_ln);

    std::vector<int> dec_in = DecoderInputs(ex.target);
    Matrix y = EmbedDecoderInputs(params, dec_in);
    std::vector<DecoderLayerCache> dc(l.decoder.size());
    for (std::size_t i = 0; i < l.decoder.size(); ++i) {
      y = DecoderLayer(params, l.decoder[i], y, enc, grads ? &dc[i] : nullptr);
    }
    LayerNormCache dec_ln;
    Matrix h = Norm(params, l.decoder_ln, y, &dec_ln);
    Matrix logits = layers::Linear(h, params.value(l.out_w), params.value(l.out_b));
    Matrix logp = layers::LogSoftmaxRows(logits);

    double seq_loss = 0;
    Eigen::VectorXd weights(static_cast<Eigen::Index>(target.size()));
    for (std::size_t t = 0; t < target.size(); ++t) {
      double w = (ex.target.clue_boundary && t < *ex.target.clue_boundary) ? opts.transcript_weight
                                                                             : 1.0;
      weights(t) = w;
      double nll = -logp(t, target[t]);
      seq_loss += w * nll;
      nll_sum += nll;
    }
    if (!std::isfinite(seq_loss)) {
      throw NumericError("non-finite loss on batch item " + std::to_string(bi) +
                         " (target length " + std::to_string(target.size()) + ")");
    }
    result.loss += seq_loss * inv_batch;
    result.tokens += static_cast<long>(target.size());
    if (!grads) continue;

    // Backward.
    Matrix dlogits = logp.array().exp();
    for (std::size_t t = 0; t < target.size(); ++t) {
      dlogits(t, target[t]) -= 1.0;
      dlogits.row(t) *= weights(t) * inv_batch;
    }
    Matrix dh = layers::LinearBackward(h, params.value(l.out_w), dlogits, Grad(params, grads, l.out_w),
                                       Grad(params, grads, l.out_b));
    Matrix dy = NormBackward(params, grads, l.decoder_ln, dec_ln, dh);
    Matrix denc;
    for (std::size_t i = l.decoder.size(); i-- > 0;) {
      dy = DecoderLayerBackward(params, grads, l.decoder[i], dc[i], dy,
                                encoder_grads ? &denc : nullptr);
    }
    if (Matrix *de = Grad(params, grads, l.token_embed)) {
      for (std::size_t t = 0; t < dec_in.size(); ++t) de->row(dec_in[t]) += dy.row(t);
    }
    if (!encoder_grads) continue;
    Matrix dx = NormBackward(params, grads, l.encoder_ln, enc_ln, denc);
    for (std::size_t i = l.encoder.size(); i-- > 0;) {
      dx = EncoderLayerBackward(params, grads, l.encoder[i], ec[i], dx);
    }
    FrontEndBackward(params, grads, fc, dx);
  }
  result.token_nll = result.tokens > 0 ? nll_sum / static_cast<double>(result.tokens) : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

int Argmax(const Eigen::VectorXd &p) {
  int best = 0;
  for (int i = 1; i < p.size(); ++i) {
    if (p(i) > p(best)) best = i;
  }
  return best;
}

struct Hypothesis {
  std::vector<int> tokens;
  double logp = 0;
  DecoderState state;
  bool finished = false;
};

}  // namespace

TargetSequence Generate(const ModelParameters &params, const ModelInput &input,
                        const DecodeOptions &opts) {
  if (opts.max_len < 1) throw Error("max_len must be at least 1");
  EncoderStates enc = EncodeInput(params, input);
  TargetSequence out;
  if (opts.beam <= 1) {
    DecoderState state = StartDecoding(params, enc);
    int prev = Vocabulary::kBos;
    for (int step = 0; step < opts.max_len; ++step) {
      StepResult r = DecodeStep(params, state, prev);
      int tok = Argmax(r.probs);
      out.tokens.push_back(tok);
      if (tok == Vocabulary::kEos) break;
      state = std::move(r.state);
      prev = tok;
    }
  } else {
    const int k = opts.beam;
    std::vector<Hypothesis> live = {{{}, 0.0, StartDecoding(params, enc), false}};
    std::vector<Hypothesis> done;
    for (int step = 0; step < opts.max_len && !live.empty(); ++step) {
      std::vector<Hypothesis> cand;
      for (const auto &h : live) {
        int prev = h.tokens.empty() ? Vocabulary::kBos : h.tokens.back();
        StepResult r = DecodeStep(params, h.state, prev);
        std::vector<int> order(r.probs.size());
        for (int i = 0; i < r.probs.size(); ++i) order[i] = i;
        std::partial_sort(order.begin(), order.begin() + std::min<int>(k, order.size()), order.end(),
                          [&](int a, int b) { return r.probs(a) > r.probs(b) || (r.probs(a) == r.probs(b) && a < b); });
        for (int j = 0; j < std::min<int>(k, order.size()); ++j) {
          Hypothesis nh;
          nh.tokens = h.tokens;
          nh.tokens.push_back(order[j]);
          nh.logp = h.logp + std::log(std::max(r.probs(order[j]), 1e-300));
          nh.finished = order[j] == Vocabulary::kEos;
          nh.state = r.state;
          cand.push_back(std::move(nh));
        }
      }
      std::stable_sort(cand.begin(), cand.end(),
                       [](const Hypothesis &a, const Hypothesis &b) { return a.logp > b.logp; });
      live.clear();
      for (auto &c : cand) {
        if (static_cast<int>(live.size() + done.size()) >= k) break;
        (c.finished ? done : live).push_back(std::move(c));
      }
      if (static_cast<int>(done.size()) >= k) break;
    }
    for (auto &h : live) done.push_back(std::move(h));
    auto best = std::max_element(done.begin(), done.end(), [](const Hypothesis &a, const Hypothesis &b) {
      return a.logp < b.logp;
    });
    out.tokens = best->tokens;
  }
  out.clue_boundary = FindClueBoundary(out.tokens);
  return out;
}

std::optional<std::size_t> FindClueBoundary(const std::vector<int> &tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocabulary::kSep) return i;
  }
  return std::nullopt;
}

SplitResult SplitOutput(const Vocabulary &vocab, const TargetSequence &seq, Format format) {
  SplitResult r;
  std::vector<int> toks = seq.tokens;
  auto eos = std::find(toks.begin(), toks.end(), Vocabulary::kEos);
  toks.erase(eos, toks.end());
  std::optional<std::size_t> sep = FindClueBoundary(toks);
  std::vector<int> event_toks;
  if (sep) {
    r.separator_found = true;
    r.transcript = vocab.Decode({toks.begin(), toks.begin() + *sep});
    event_toks.assign(toks.begin() + *sep + 1, toks.end());
  } else {
    event_toks = toks;
  }
  r.events.text = vocab.Decode(event_toks);
  r.events.format = format;
  r.events.well_formed = false;  // unknown until parsed
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[] = "SPEECHEE-CKPT-1\n";
}

void SaveCheckpoint(const std::string &path, const Checkpoint &ckpt) {
  const ModelParameters &p = ckpt.params;
  Json header;
  header["config"] = p.config().ToJson();
  header["vocabulary"] = ckpt.vocab.SurfaceTokens();
  header["meta"] = ckpt.meta;
  Json tensors = Json::array();
  for (int i = 0; i < p.size(); ++i) {
    tensors.push_back({{"name", p.name(i)},
                       {"rows", p.value(i).rows()},
                       {"cols", p.value(i).cols()},
                       {"group", ToString(p.group(i))},
                       {"frozen", p.frozen(i)}});
  }
  header["tensors"] = tensors;
  std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic) - 1);
  std::uint64_t len = h.size();
  out.write(reinterpret_cast<const char *>(&len), sizeof(len));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (int i = 0; i < p.size(); ++i) {
    const Matrix &m = p.value(i);
    out.write(reinterpret_cast<const char *>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path);
}

Checkpoint LoadCheckpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IoError(path + " is not a checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char *>(&len), sizeof(len));
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  Json header = Json::parse(h);
  Checkpoint ckpt;
  ckpt.params = ModelParameters::Zeros(ModelConfig::FromJson(header.at("config")));
  ckpt.vocab = Vocabulary(header.at("vocabulary").get<std::vector<std::string>>());
  ckpt.meta = header.value("meta", Json::object());
  const auto &tensors = header.at("tensors");
  if (static_cast<int>(tensors.size()) != ckpt.params.size()) {
    throw IoError("checkpoint tensor count does not match its config");
  }
  for (int i = 0; i < ckpt.params.size(); ++i) {
    const auto &t = tensors[i];
    Matrix &m = ckpt.params.value(i);
    if (t.at("name").get<std::string>() != ckpt.params.name(i) || t.at("rows").get<long>() != m.rows() ||
        t.at("cols").get<long>() != m.cols()) {
      throw IoError("checkpoint tensor " + t.at("name").get<std::string>() + " does not match layout");
    }
    in.read(reinterpret_cast<char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!in) throw IoError("truncated checkpoint " + path);
  for (int i = 0; i < ckpt.params.size(); ++i) {
    if (tensors[i].value("frozen", false)) {
      // Group-level flags are all this format records.
      ckpt.params.SetFrozen(ckpt.params.group(i), true);
    }
  }
  return ckpt;
}

}  // namespace speechee
