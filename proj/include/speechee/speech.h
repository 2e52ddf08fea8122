// Speech synthesis adapters and feature loading.
//
// The bundled pseudo-speech generator turns text into 80-channel frames
// without any TTS: each character owns a fixed random "spectrum", each voice
// shifts it, and seeded noise is added.  External synthesizers are
// subprocesses that write a waveform, which is converted to log-mel frames.

#ifndef SPEECHEE_SPEECH_H_
#define SPEECHEE_SPEECH_H_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "speechee/event_model.h"
#include "speechee/features.h"

namespace speechee {

struct VoiceConfig {
  std::string name = "voice0";
  std::uint64_t seed = 0;
};

// Voices "voice0".."voice{n-1}" with distinct seeds.
std::vector<VoiceConfig> DefaultVoices(int n);

class SynthesizerAdapter {
 public:
  virtual ~SynthesizerAdapter() = default;
  virtual std::string name() const = 0;
  virtual bool deterministic() const = 0;
  // Whether Synthesize may run on several threads at once.
  virtual bool concurrent_safe() const = 0;
  // Speech reference for `text` in `voice`.  `key` names the utterance (used
  // for cache files).  Throws on failure.
  virtual SpeechRef Synthesize(const std::string &text, const VoiceConfig &voice,
                               const std::string &key) const = 0;
};

struct PseudoSpeechOptions {
  int frames_per_char = 1;
  double noise = 0.1;         // std of per-frame noise
  double voice_shift = 0.3;   // std of the per-voice offset
};

// Deterministic features for a transcript.  Whitespace is a character like
// any other; the empty string yields one silent frame.
FrameFeatures PseudoSpeechFeatures(const std::string &text, const std::string &voice,
                                   std::uint64_t seed, const PseudoSpeechOptions &opts = {});

// Duration in seconds: frames_per_char * max(1, characters) / 100.
double PseudoSpeechSeconds(const std::string &text, int frames_per_char);

class PseudoSpeechAdapter : public SynthesizerAdapter {
 public:
  explicit PseudoSpeechAdapter(PseudoSpeechOptions opts = {}) : opts_(opts) {}
  std::string name() const override { return "pseudo"; }
  bool deterministic() const override { return true; }
  bool concurrent_safe() const override { return true; }
  SpeechRef Synthesize(const std::string &text, const VoiceConfig &voice,
                       const std::string &key) const override;

 private:
  PseudoSpeechOptions opts_;
};

// Runs `command <text-file> <voice> <out-file>` through the shell and expects
// a .wav (16-bit PCM or 32-bit float) or .feats file at <out-file>.  Results
// are cached under `cache_dir` by a hash of (command, voice, text).
class ExternalSynthesizer : public SynthesizerAdapter {
 public:
  ExternalSynthesizer(std::string command, std::string cache_dir, std::string extension = ".wav");
  std::string name() const override { return "external"; }
  bool deterministic() const override { return false; }
  bool concurrent_safe() const override { return false; }
  SpeechRef Synthesize(const std::string &text, const VoiceConfig &voice,
                       const std::string &key) const override;

 private:
  std::string command_, cache_dir_, extension_;
};

std::unique_ptr<SynthesizerAdapter> MakeSynthesizer(const std::string &spec,
                                                    const std::string &cache_dir,
                                                    const PseudoSpeechOptions &pseudo = {});

// --- waveform front end -----------------------------------------------------

struct Waveform {
  std::vector<double> samples;  // mono, [-1, 1]
  int sample_rate = 16000;
};

Waveform ReadWav(const std::string &path);
void WriteWav(const std::string &path, const Waveform &wav);

struct MelOptions {
  double window_seconds = 0.025;
  double hop_seconds = 0.01;
  int channels = kMelChannels;
  double floor = 1e-10;
};

// Hann-windowed power spectrum -> triangular mel filterbank -> natural log.
FrameFeatures LogMelSpectrogram(const Waveform &wav, const MelOptions &opts = {});

// Text matrix: one frame per line, whitespace-separated values.
FrameFeatures ReadFeats(const std::string &path);
void WriteFeats(const std::string &path, const FrameFeatures &f);

// Materializes features for an instance: in-memory features, regenerated
// pseudo-speech, or an audio/feats file relative to `base_dir`.
FrameFeatures LoadFeatures(const Instance &inst, const std::string &base_dir,
                           const PseudoSpeechOptions &pseudo = {});

}  // namespace speechee

#endif  // SPEECHEE_SPEECH_H_
