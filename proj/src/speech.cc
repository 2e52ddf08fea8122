#include "speechee/speech.h"

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "speechee/errors.h"
#include "speechee/random.h"
#include "speechee/text.h"

namespace fs = std::filesystem;

namespace speechee {

std::vector<VoiceConfig> DefaultVoices(int n) {
  std::vector<VoiceConfig> voices;
  for (int i = 0; i < n; ++i) {
    voices.push_back({"voice" + std::to_string(i), MixSeed(0x766f696365ULL, i)});
  }
  return voices;
}

// ---------------------------------------------------------------------------
// Pseudo-speech

namespace {

// Fixed across utterances and voices so that the same character always
// sounds alike.
constexpr std::uint64_t kCharacterSeed = 0x636861727370ULL;

void AddNormals(Eigen::Ref<Eigen::RowVectorXd> row, Rng &rng, double scale) {
  for (Eigen::Index j = 0; j < row.size(); ++j) row(j) += scale * rng.Normal();
}

}  // namespace

FrameFeatures PseudoSpeechFeatures(const std::string &text, const std::string &voice,
                                   std::uint64_t seed, const PseudoSpeechOptions &opts) {
  if (opts.frames_per_char < 1) throw Error("frames_per_char must be at least 1");
  std::u32string cps = DecodeUtf8(text);
  FrameFeatures f;
  f.frame_rate = kDefaultFrameRate;
  if (cps.empty()) {
    f.frames = Matrix::Zero(1, kMelChannels);
    return f;
  }
  Eigen::RowVectorXd shift = Eigen::RowVectorXd::Zero(kMelChannels);
  Rng voice_rng(Fnv1a64(voice));
  AddNormals(shift, voice_rng, opts.voice_shift);

  f.frames.resize(static_cast<Eigen::Index>(cps.size()) * opts.frames_per_char, kMelChannels);
  Rng noise(MixSeed(seed, Fnv1a64(text)));
  for (std::size_t i = 0; i < cps.size(); ++i) {
    Eigen::RowVectorXd base = shift;
    Rng char_rng(MixSeed(kCharacterSeed, cps[i]));
    AddNormals(base, char_rng, 1.0);
    for (int k = 0; k < opts.frames_per_char; ++k) {
      auto row = f.frames.row(static_cast<Eigen::Index>(i) * opts.frames_per_char + k);
      row = base;
      AddNormals(row, noise, opts.noise);
    }
  }
  return f;
}

double PseudoSpeechSeconds(const std::string &text, int frames_per_char) {
  std::size_t n = std::max<std::size_t>(1, DecodeUtf8(text).size());
  return static_cast<double>(n * frames_per_char) / kDefaultFrameRate;
}

SpeechRef PseudoSpeechAdapter::Synthesize(const std::string &text, const VoiceConfig &voice,
                                          const std::string &) const {
  SpeechRef ref;
  ref.pseudo_voice = voice.name;
  ref.pseudo_seed = voice.seed;
  ref.pseudo_frames_per_char = opts_.frames_per_char;
  ref.seconds = PseudoSpeechSeconds(text, opts_.frames_per_char);
  return ref;
}

// ---------------------------------------------------------------------------
// External synthesizer

ExternalSynthesizer::ExternalSynthesizer(std::string command, std::string cache_dir,
                                         std::string extension)
    : command_(std::move(command)), cache_dir_(std::move(cache_dir)), extension_(std::move(extension)) {
  if (command_.empty()) throw Error("external synthesizer needs a command");
}

namespace {

std::string ShellQuote(const std::string &s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

SpeechRef ExternalSynthesizer::Synthesize(const std::string &text, const VoiceConfig &voice,
                                          const std::string &key) const {
  fs::create_directories(cache_dir_);
  std::string digest = HexDigest(Fnv1a64(command_ + '\0' + voice.name + '\0' + text));
  fs::path out = fs::path(cache_dir_) / (digest + extension_);
  if (!fs::exists(out)) {
    fs::path text_file = fs::path(cache_dir_) / (digest + ".txt");
    {
      std::ofstream t(text_file);
      t << text;
    }
    fs::path partial = fs::path(cache_dir_) / (digest + ".partial" + extension_);
    std::string cmd = command_ + " " + ShellQuote(text_file.string()) + " " + ShellQuote(voice.name) +
                      " " + ShellQuote(partial.string());
    int rc = std::system(cmd.c_str());
    fs::remove(text_file);
    if (rc != 0 || !fs::exists(partial)) {
      fs::remove(partial);
      throw IoError("synthesizer failed for " + key + " (exit " + std::to_string(rc) + ")");
    }
    fs::rename(partial, out);
  }
  SpeechRef ref;
  ref.audio = fs::absolute(out).string();
  if (extension_ == ".wav") {
    Waveform w = ReadWav(out.string());
    ref.seconds = static_cast<double>(w.samples.size()) / w.sample_rate;
  } else {
    ref.seconds = ReadFeats(out.string()).seconds();
  }
  return ref;
}

std::unique_ptr<SynthesizerAdapter> MakeSynthesizer(const std::string &spec,
                                                    const std::string &cache_dir,
                                                    const PseudoSpeechOptions &pseudo) {
  if (spec == "pseudo") return std::make_unique<PseudoSpeechAdapter>(pseudo);
  const std::string prefix = "external:";
  if (spec.rfind(prefix, 0) == 0) {
    return std::make_unique<ExternalSynthesizer>(spec.substr(prefix.size()), cache_dir);
  }
  throw Error("unknown synthesizer '" + spec + "' (expected pseudo or external:<cmd>)");
}

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t ReadU32(const char *p) {
  return static_cast<std::uint8_t>(p[0]) | (static_cast<std::uint8_t>(p[1]) << 8) |
         (static_cast<std::uint8_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[3])) << 24);
}

std::uint16_t ReadU16(const char *p) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) |
                                    (static_cast<std::uint8_t>(p[1]) << 8));
}

void PutU32(std::string &s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutU16(std::string &s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

Waveform ReadWav(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || data.compare(0, 4, "RIFF") != 0 || data.compare(8, 4, "WAVE") != 0) {
    throw IoError(path + " is not a RIFF/WAVE file");
  }
  int format = 0, channels = 0, bits = 0;
  Waveform w;
  const char *samples = nullptr;
  std::size_t nbytes = 0;
  for (std::size_t pos = 12; pos + 8 <= data.size();) {
    std::string id = data.substr(pos, 4);
    std::size_t size = ReadU32(data.data() + pos + 4);
    const char *body = data.data() + pos + 8;
    if (pos + 8 + size > data.size()) size = data.size() - pos - 8;
    if (id == "fmt " && size >= 16) {
      format = ReadU16(body);
      channels = ReadU16(body + 2);
      w.sample_rate = static_cast<int>(ReadU32(body + 4));
      bits = ReadU16(body + 14);
    } else if (id == "data") {
      samples = body;
      nbytes = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!samples || channels < 1) throw IoError(path + ": missing fmt or data chunk");
  bool pcm16 = format == 1 && bits == 16;
  bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) throw IoError(path + ": only 16-bit PCM and 32-bit float are supported");
  std::size_t width = bits / 8;
  std::size_t frames = nbytes / (width * channels);
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0;
    for (int c = 0; c < channels; ++c) {
      const char *p = samples + (i * channels + c) * width;
      if (pcm16) {
        acc += static_cast<std::int16_t>(ReadU16(p)) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += v;
      }
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

void WriteWav(const std::string &path, const Waveform &wav) {
  std::string s = "RIFF";
  std::uint32_t data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
  PutU32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  PutU32(s, 16);
  PutU16(s, 1);
  PutU16(s, 1);
  PutU32(s, static_cast<std::uint32_t>(wav.sample_rate));
  PutU32(s, static_cast<std::uint32_t>(wav.sample_rate * 2));
  PutU16(s, 2);
  PutU16(s, 16);
  s += "data";
  PutU32(s, data_bytes);
  for (double x : wav.samples) {
    double c = std::clamp(x, -1.0, 1.0);
    PutU16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << s;
}

// ---------------------------------------------------------------------------
// Log-mel

namespace {

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// [channels x bins] triangular filters spaced evenly on the mel scale.
Matrix MelFilterbank(int channels, int n_fft, int sample_rate) {
  const int bins = n_fft / 2 + 1;
  Matrix fb = Matrix::Zero(channels, bins);
  const double top = HzToMel(sample_rate / 2.0);
  std::vector<double> edges(channels + 2);
  for (int i = 0; i < channels + 2; ++i) edges[i] = MelToHz(top * i / (channels + 1));
  for (int m = 0; m < channels; ++m) {
    for (int k = 0; k < bins; ++k) {
      double hz = static_cast<double>(k) * sample_rate / n_fft;
      double up = (hz - edges[m]) / (edges[m + 1] - edges[m]);
      double down = (edges[m + 2] - hz) / (edges[m + 2] - edges[m + 1]);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

}  // namespace

FrameFeatures LogMelSpectrogram(const Waveform &wav, const MelOptions &opts) {
  if (wav.sample_rate <= 0) throw Error("invalid sample rate");
  const int win = std::max(1, static_cast<int>(std::lround(opts.window_seconds * wav.sample_rate)));
  const int hop = std::max(1, static_cast<int>(std::lround(opts.hop_seconds * wav.sample_rate)));
  int n_fft = 1;
  while (n_fft < win) n_fft *= 2;
  const int bins = n_fft / 2 + 1;
  const long n = static_cast<long>(wav.samples.size());
  const long frames = n <= win ? 1 : 1 + (n - win) / hop;

  std::vector<double> window(win);
  for (int i = 0; i < win; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);

  double *buf = fftw_alloc_real(n_fft);
  fftw_complex *spec = fftw_alloc_complex(bins);
  fftw_plan plan = fftw_plan_dft_r2c_1d(n_fft, buf, spec, FFTW_ESTIMATE);
  Matrix power(frames, bins);
  for (long f = 0; f < frames; ++f) {
    std::fill(buf, buf + n_fft, 0.0);
    for (int i = 0; i < win; ++i) {
      long idx = f * hop + i;
      if (idx < n) buf[i] = wav.samples[idx] * window[i];
    }
    fftw_execute(plan);
    for (int k = 0; k < bins; ++k) power(f, k) = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
  }
  fftw_destroy_plan(plan);
  fftw_free(spec);
  fftw_free(buf);

  FrameFeatures out;
  out.frame_rate = 1.0 / opts.hop_seconds;
  out.frames = (power * MelFilterbank(opts.channels, n_fft, wav.sample_rate).transpose())
                   .unaryExpr([&](double e) { return std::log(std::max(e, opts.floor)); });
  return out;
}

// ---------------------------------------------------------------------------
// Feature files

FrameFeatures ReadFeats(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows[0].size()) {
      throw ShapeError(path + ": ragged feature rows at line " + std::to_string(rows.size() + 1));
    }
    rows.push_back(std::move(row));
  }
  FrameFeatures f;
  f.frames.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? kMelChannels : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) f.frames(i, j) = rows[i][j];
  }
  CheckFrameFeatures(f);
  return f;
}

void WriteFeats(const std::string &path, const FrameFeatures &f) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < f.frames.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.frames.cols(); ++j) out << (j ? " " : "") << f.frames(i, j);
    out << '\n';
  }
}

FrameFeatures LoadFeatures(const Instance &inst, const std::string &base_dir,
                           const PseudoSpeechOptions &pseudo) {
  const SpeechRef &s = inst.speech;
  if (s.features) return *s.features;
  if (s.pseudo_voice) {
    PseudoSpeechOptions o = pseudo;
    if (s.pseudo_frames_per_char > 0) o.frames_per_char = s.pseudo_frames_per_char;
    return PseudoSpeechFeatures(inst.transcript, *s.pseudo_voice, s.pseudo_seed, o);
  }
  if (s.audio) {
    fs::path p(*s.audio);
    if (p.is_relative()) p = fs::path(base_dir) / p;
    if (p.extension() == ".feats") return ReadFeats(p.string());
    return LogMelSpectrogram(ReadWav(p.string()));
  }
  throw Error("instance " + inst.id + " has no speech");
}

}  // namespace speechee
