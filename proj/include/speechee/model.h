// Toy end-to-end sequence-to-structure network.
//
//   frames [T x 80] -> conv(3, GELU) -> conv(3, stride 2, GELU) -> + sinusoid
//                   -> pre-norm transformer encoder -> H
//   H, y_<t -> pre-norm transformer decoder (causal self-attn, cross-attn)
//            -> softmax over the vocabulary
//
// A token-embedding front end replaces the convolutions for text input, which
// gives the pipeline baseline a text extractor of matched capacity.

#ifndef SPEECHEE_MODEL_H_
#define SPEECHEE_MODEL_H_

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "speechee/codec.h"
#include "speechee/features.h"
#include "speechee/vocab.h"

namespace speechee {

enum class InputKind { kFrames, kTokens };

struct ModelConfig {
  int d_model = 64;
  int heads = 4;
  int ff_dim = 256;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int vocab_size = 0;
  InputKind input = InputKind::kFrames;
  double layer_norm_eps = 1e-6;

  void Check() const;
  Json ToJson() const;
  static ModelConfig FromJson(const Json &j);
};

enum class ParamGroup { kFrontEnd, kEncoder, kDecoder, kOutput };

const char *ToString(ParamGroup g);

struct LayerNormIdx {
  int gain, bias;
};
struct AttentionIdx {
  int wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FeedForwardIdx {
  int w1, b1, w2, b2;
};
struct EncoderLayerIdx {
  LayerNormIdx ln1;
  AttentionIdx attn;
  LayerNormIdx ln2;
  FeedForwardIdx ffn;
};
struct DecoderLayerIdx {
  LayerNormIdx ln1;
  AttentionIdx self_attn;
  LayerNormIdx ln2;
  AttentionIdx cross_attn;
  LayerNormIdx ln3;
  FeedForwardIdx ffn;
};

// Tensor indices into ModelParameters, derived from the config alone.
struct ParamLayout {
  int conv1_w = -1, conv1_b = -1, conv2_w = -1, conv2_b = -1;  // frame input
  int input_embed = -1;                                          // token input
  std::vector<EncoderLayerIdx> encoder;
  LayerNormIdx encoder_ln;
  int token_embed = -1;
  std::vector<DecoderLayerIdx> decoder;
  LayerNormIdx decoder_ln;
  int out_w = -1, out_b = -1;
};

// All learnable tensors (theta) plus a frozen flag per tensor.
class ModelParameters {
 public:
  ModelParameters() = default;
  static ModelParameters Initialize(const ModelConfig &config, std::uint64_t seed);
  // Zero-valued tensors with the right shapes.
  static ModelParameters Zeros(const ModelConfig &config);

  const ModelConfig &config() const { return config_; }
  const ParamLayout &layout() const { return layout_; }
  int size() const { return static_cast<int>(values_.size()); }
  const std::string &name(int i) const { return names_[i]; }
  ParamGroup group(int i) const { return groups_[i]; }
  const Matrix &value(int i) const { return values_[i]; }
  Matrix &value(int i) { return values_[i]; }
  bool frozen(int i) const { return frozen_[i]; }
  void SetFrozen(ParamGroup g, bool frozen);
  // Freezes front end and encoder.
  void FreezeEncoder(bool frozen);
  int Find(const std::string &name) const;  // -1 when absent
  long NumScalars() const;

 private:
  int Add(const std::string &name, int rows, int cols, ParamGroup group);
  void BuildLayout();

  ModelConfig config_;
  ParamLayout layout_;
  std::vector<std::string> names_;
  std::vector<ParamGroup> groups_;
  std::vector<Matrix> values_;
  std::vector<bool> frozen_;
};

struct Gradients {
  std::vector<Matrix> tensors;

  explicit Gradients(const ModelParameters &params);
  void Zero();
  Gradients &operator+=(const Gradients &o);
  Gradients &operator*=(double s);
  double SquaredNorm() const;
};

struct EncoderStates {
  Matrix states;  // [reduced time x d_model]
};

// Encoder input: mel frames or (for the text front end) token ids.
using ModelInput = std::variant<FrameFeatures, std::vector<int>>;

// Post-convolution representations with positions added.  Throws ShapeError
// on a wrong channel count.
Matrix ExtractFeatures(const ModelParameters &params, const FrameFeatures &features);
Matrix EmbedInputTokens(const ModelParameters &params, const std::vector<int> &ids);
Matrix FrontEnd(const ModelParameters &params, const ModelInput &input);

// Throws NumericError when the states are not finite.
EncoderStates Encode(const ModelParameters &params, const Matrix &features);
EncoderStates EncodeInput(const ModelParameters &params, const ModelInput &input);

// One encoder block.  When `ln_out` is given it receives the normalized input
// of each sublayer (before gain/bias) for inspection.
Matrix EncoderLayerForward(const ModelParameters &params, int layer, const Matrix &x,
                           std::vector<Matrix> *ln_out = nullptr);

// Incremental decoding state.  Stepping returns a new state; earlier states
// are never modified.
struct DecoderState {
  int position = 0;
  std::vector<Matrix> self_k, self_v;  // per layer [position x d]
  // Cross-attention keys/values, computed once from H and shared.
  std::shared_ptr<const std::vector<std::pair<Matrix, Matrix>>> cross_kv;
  std::vector<Vector> hidden;  // final hidden state of every step so far
};

DecoderState StartDecoding(const ModelParameters &params, const EncoderStates &enc);

struct StepResult {
  Eigen::VectorXd probs;  // sums to one
  DecoderState state;
};

// Throws Error for token ids outside the vocabulary.
StepResult DecodeStep(const ModelParameters &params, const DecoderState &state, int prev_token);

// Logits [T x V] for decoder inputs fed all at once under the causal mask.
Matrix TeacherForcedLogits(const ModelParameters &params, const EncoderStates &enc,
                           const std::vector<int> &decoder_inputs);

// Output tokens; with the clue the transcript precedes a separator.
struct TargetSequence {
  std::vector<int> tokens;
  std::optional<std::size_t> clue_boundary;  // index of the separator token
};

TargetSequence BuildTarget(const Vocabulary &vocab, const std::string &transcript,
                           const std::vector<EventRecord> &records, Format format, bool with_clue);

// [BOS] + tokens[0..n-1)
std::vector<int> DecoderInputs(const TargetSequence &target);

struct Example {
  ModelInput input;
  TargetSequence target;
};

struct LossOptions {
  // Weight of the transcript tokens (before the separator) relative to the
  // event tokens.
  double transcript_weight = 1.0;
};

struct LossResult {
  double loss = 0;        // mean over the batch of per-sequence NLL sums
  double token_nll = 0;   // summed NLL / number of target tokens
  long tokens = 0;
};

// Teacher-forced negative log-likelihood.  Gradients (scaled to the batch
// mean) are accumulated into `grads` when non-null; frozen tensors receive
// none.  Throws NumericError on a non-finite loss.
LossResult TrainingLoss(const ModelParameters &params, const std::vector<const Example *> &batch,
                        Gradients *grads, const LossOptions &opts = {});

struct DecodeOptions {
  int max_len = 128;
  int beam = 1;  // 1 = greedy
};

TargetSequence Generate(const ModelParameters &params, const ModelInput &input,
                        const DecodeOptions &opts);

// Separator position scan used after generation.
std::optional<std::size_t> FindClueBoundary(const std::vector<int> &tokens);

struct SplitResult {
  std::string transcript;
  LinearizedSequence events;
  bool separator_found = false;
};

SplitResult SplitOutput(const Vocabulary &vocab, const TargetSequence &seq, Format format);

// Self-describing checkpoint: a JSON header (model config, vocabulary and
// free-form metadata) followed by named little-endian float64 tensors.
struct Checkpoint {
  ModelParameters params;
  Vocabulary vocab;
  Json meta = Json::object();
};

void SaveCheckpoint(const std::string &path, const Checkpoint &ckpt);
Checkpoint LoadCheckpoint(const std::string &path);

}  // namespace speechee

#endif  // SPEECHEE_MODEL_H_
