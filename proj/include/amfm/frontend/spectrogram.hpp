#pragma once

// STFT magnitude and mel filterbank features. No centring, no log
// compression, no deltas.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "amfm/core/tensor.hpp"
#include "amfm/frontend/wav.hpp"

namespace amfm::frontend {

struct MelConfig {
  unsigned sample_rate = kExpectedSampleRate;
  std::size_t n_fft = 2048;
  std::size_t win_length = 1764;  // 40 ms
  std::size_t hop_length = 882;   // 20 ms
  std::size_t n_mels = 256;
  double fmin = 0.0;
  double fmax = 22050.0;
  double power = 2.0;

  std::size_t n_bins() const { return n_fft / 2 + 1; }

  void validate() const {
    if (n_fft == 0 || win_length == 0 || hop_length == 0 || n_mels == 0) {
      throw ValidationError("mel config: sizes must be positive");
    }
    if (win_length > n_fft) {
      throw ValidationError("mel config: win_length exceeds n_fft");
    }
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
      throw ValidationError("mel config: need 0 <= fmin < fmax <= sample_rate/2");
    }
    if (!(power > 0.0)) throw ValidationError("mel config: power must be positive");
  }
};

inline std::size_t frame_count(std::size_t length, const MelConfig& cfg) {
  if (length < cfg.win_length) {
    throw ShapeError("stft: clip of " + std::to_string(length) +
                     " samples is shorter than one window (" +
                     std::to_string(cfg.win_length) + ")");
  }
  return (length - cfg.win_length) / cfg.hop_length + 1;
}

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  }
  return w;
}

/// Owns an FFTW real-to-complex plan and its buffers.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    if (!in_ || !out_) throw std::bad_alloc();
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t size() const { return n_; }
  double* input() { return in_; }

  void execute() { fftw_execute(plan_); }

  std::complex<double> bin(std::size_t k) const { return {out_[k][0], out_[k][1]}; }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

/// One-sided |STFT|^power as [n_fft/2+1, frames].
inline Tensor stft_magnitude(const AudioClip& clip, const MelConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    throw ValidationError("stft: clip sample rate " + std::to_string(clip.sample_rate) +
                          " Hz does not match config " + std::to_string(cfg.sample_rate) + " Hz");
  }
  const std::size_t frames = frame_count(clip.samples.size(), cfg);
  const std::size_t bins = cfg.n_bins();
  const auto window = hann_window(cfg.win_length);
  RealFft fft(cfg.n_fft);
  Tensor spec({bins, frames});
  for (std::size_t t = 0; t < frames; ++t) {
    double* in = fft.input();
    const double* src = clip.samples.data() + t * cfg.hop_length;
    for (std::size_t i = 0; i < cfg.win_length; ++i) in[i] = src[i] * window[i];
    std::fill(in + cfg.win_length, in + cfg.n_fft, 0.0);
    fft.execute();
    for (std::size_t k = 0; k < bins; ++k) {
      const double mag = std::abs(fft.bin(k));
      spec.at(k, t) = cfg.power == 1.0 ? mag : cfg.power == 2.0 ? mag * mag
                                                                : std::pow(mag, cfg.power);
    }
  }
  return spec;
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

/// Edge frequencies (n_mels + 2 points) of the triangular filters.
inline std::vector<double> mel_edges_hz(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                  static_cast<double>(cfg.n_mels + 1));
  }
  return edges;
}

/// Peak-normalised triangular filters as [n_mels, n_fft/2+1].
inline Tensor mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.n_bins();
  const auto edges = mel_edges_hz(cfg);
  Tensor fb({cfg.n_mels, bins});
  const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.n_fft);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      const double w = std::max(0.0, std::min((f - f0) / (f1 - f0), (f2 - f) / (f2 - f1)));
      fb.at(m, k) = w;
      any = any || w > 0.0;
    }
    if (!any) {
      throw ValidationError("mel filterbank: filter " + std::to_string(m) +
                            " covers no FFT bin; reduce n_mels or widen fmin/fmax");
    }
  }
  return fb;
}

/// Mel features laid out time-major as [1, 1, frames, n_mels].
inline FeatureMap mel_from_spectrogram(const Tensor& spec, const Tensor& fb) {
  const std::size_t bins = spec.dim(0), frames = spec.dim(1), mels = fb.dim(0);
  if (fb.dim(1) != bins) throw ShapeError("mel: filterbank/spectrogram bin mismatch");
  FeatureMap out({1, 1, frames, mels});
  for (std::size_t m = 0; m < mels; ++m) {
    const double* w = &fb[m * bins];
    for (std::size_t k = 0; k < bins; ++k) {
      if (w[k] == 0.0) continue;
      const double* row = &spec[k * frames];
      for (std::size_t t = 0; t < frames; ++t) out.at(0, 0, t, m) += w[k] * row[t];
    }
  }
  return out;
}

inline FeatureMap melspectrogram(const AudioClip& clip, const MelConfig& cfg) {
  return mel_from_spectrogram(stft_magnitude(clip, cfg), mel_filterbank(cfg));
}

}  // namespace amfm::frontend
