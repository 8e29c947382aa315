#include <gtest/gtest.h>

#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <unistd.h>

#include "amfm/frontend/augment.hpp"
#include "amfm/frontend/dataset.hpp"
#include "amfm/frontend/spectrogram.hpp"
#include "amfm/frontend/synth.hpp"
#include "amfm/frontend/wav.hpp"
#include "support.hpp"

using namespace amfm;
using namespace amfm::frontend;
using amfm::gen::Rng;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

AudioClip sine(double hz, double seconds, double amplitude = 1.0) {
  AudioClip c;
  c.samples.resize(std::size_t(std::llround(44100.0 * seconds)));
  for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * double(i) / 44100.0);
  return c;
}

AudioClip white_noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  AudioClip c;
  c.samples.resize(n);
  for (double& v : c.samples) v = gen::uniform(rng, -0.5, 0.5);
  return c;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("amfm_frontend_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

}  // namespace

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

TEST(Wav, SilenceDecodesToZeros) {
  AudioClip c;
  c.samples.assign(44100, 0.0);
  const AudioClip back = parse_wav(bytes_of(encode_wav(c, SampleFormat::pcm16)));
  ASSERT_EQ(back.samples.size(), 44100u);
  for (double v : back.samples) EXPECT_EQ(v, 0.0);
  EXPECT_DOUBLE_EQ(back.duration(), 1.0);
}

TEST(Wav, FullScale24BitWithinOneLsb) {
  AudioClip c;
  c.samples.assign(100, 1.0);
  const AudioClip back = parse_wav(bytes_of(encode_wav(c, SampleFormat::pcm24)));
  for (double v : back.samples) EXPECT_NEAR(v, 1.0, std::ldexp(1.0, -23));
}

TEST(Wav, RoundTripWithinQuantization) {
  const AudioClip c = white_noise(2000, 1);
  const std::pair<SampleFormat, double> formats[] = {{SampleFormat::pcm16, std::ldexp(1.0, -15)},
                                                     {SampleFormat::pcm24, std::ldexp(1.0, -23)},
                                                     {SampleFormat::pcm32, std::ldexp(1.0, -31)},
                                                     {SampleFormat::float32, 1e-7}};
  for (const auto& [fmt, lsb] : formats) {
    const AudioClip back = parse_wav(bytes_of(encode_wav(c, fmt)));
    ASSERT_EQ(back.samples.size(), c.samples.size());
    for (std::size_t i = 0; i < c.samples.size(); ++i) ASSERT_LE(std::abs(back.samples[i] - c.samples[i]), lsb);
  }
}

TEST(Wav, StereoAveragedToMono) {
  // Hand-built 16-bit stereo with one frame: left 16384, right -8192.
  std::string s = "RIFF";
  detail::put32(s, 36 + 4);
  s += "WAVEfmt ";
  detail::put32(s, 16);
  detail::put16(s, 1);
  detail::put16(s, 2);
  detail::put32(s, 44100);
  detail::put32(s, 44100 * 4);
  detail::put16(s, 4);
  detail::put16(s, 16);
  s += "data";
  detail::put32(s, 4);
  detail::put16(s, 16384);
  detail::put16(s, static_cast<std::uint16_t>(-8192));
  const AudioClip c = parse_wav(bytes_of(s));
  ASSERT_EQ(c.samples.size(), 1u);
  EXPECT_DOUBLE_EQ(c.samples[0], 0.125);
}

TEST(Wav, WrongSampleRateRejected) {
  AudioClip c;
  c.sample_rate = 48000;
  c.samples.assign(10, 0.0);
  EXPECT_THROW(parse_wav(bytes_of(encode_wav(c, SampleFormat::pcm16))), ValidationError);
}

TEST(Wav, MalformedHeaderIsParseError) {
  EXPECT_THROW(parse_wav(bytes_of("RIFX0000WAVE")), ParseError);
  EXPECT_THROW(parse_wav(bytes_of("RI")), ParseError);
  AudioClip c;
  c.samples.assign(10, 0.1);
  std::string b = encode_wav(c, SampleFormat::pcm16);
  b.resize(b.size() - 7);  // data chunk shorter than declared
  EXPECT_THROW(parse_wav(bytes_of(b)), ParseError);
}

TEST(Wav, FileRoundTrip) {
  TempDir dir;
  const AudioClip c = white_noise(500, 2);
  write_wav(dir.path() / "x.wav", c, SampleFormat::pcm24);
  const AudioClip back = load_wav(dir.path() / "x.wav");
  EXPECT_EQ(back.source_id, "x.wav");
  EXPECT_EQ(back.samples.size(), 500u);
  EXPECT_THROW(load_wav(dir.path() / "missing.wav"), IoError);
}

// ---------------------------------------------------------------------------
// STFT and mel
// ---------------------------------------------------------------------------

TEST(Stft, TenSecondClipHas499Frames) {
  EXPECT_EQ(frame_count(441000, MelConfig{}), 499u);
  const Tensor s = stft_magnitude(sine(441, 10.0), MelConfig{});
  EXPECT_EQ(s.shape(), (Shape{1025, 499}));
}

TEST(StftProperty, FrameCountFormula) {
  Rng rng(3);
  const MelConfig cfg;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t len = gen::uniform_size(rng, cfg.win_length, 500000);
    ASSERT_EQ(frame_count(len, cfg), (len - 1764) / 882 + 1);
  }
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t len = gen::uniform_size(rng, cfg.win_length, 20000);
    AudioClip c;
    c.samples.assign(len, 0.0);
    EXPECT_EQ(stft_magnitude(c, cfg).dim(1), (len - 1764) / 882 + 1);
  }
}

TEST(Stft, ShortClipIsShapeError) {
  AudioClip c;
  c.samples.assign(1000, 0.0);
  EXPECT_THROW(stft_magnitude(c, MelConfig{}), ShapeError);
}

TEST(Stft, ZeroClipGivesZeroSpectrogram) {
  AudioClip c;
  c.samples.assign(5000, 0.0);
  const Tensor spec = stft_magnitude(c, MelConfig{});
  for (double v : spec.data()) EXPECT_EQ(v, 0.0);
}

TEST(Stft, SinePeakBinAndDirectDft) {
  MelConfig cfg;
  cfg.power = 1.0;
  const AudioClip c = sine(441, 0.2);
  const Tensor s = stft_magnitude(c, cfg);
  const auto w = hann_window(cfg.win_length);
  for (std::size_t t = 0; t < s.dim(1); ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.dim(0); ++k)
      if (s.at(k, t) > s.at(best, t)) best = k;
    EXPECT_EQ(best, 20u) << "frame " << t;
  }
  // Direct DFT of the first frame.
  for (std::size_t k = 0; k < 1025; k += 7) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < cfg.win_length; ++n)
      acc += c.samples[n] * w[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * n) / 2048.0);
    ASSERT_NEAR(s.at(k, 0), std::abs(acc), 1e-9) << "bin " << k;
  }
}

TEST(Stft, RandomSinePeaksWithinOneBin) {
  Rng rng(4);
  MelConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const double hz = gen::uniform(rng, 100.0, 20000.0);
    const Tensor s = stft_magnitude(sine(hz, 0.1), cfg);
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.dim(0); ++k)
      if (s.at(k, 0) > s.at(best, 0)) best = k;
    const double analytic = hz * 2048.0 / 44100.0;
    EXPECT_LE(std::abs(double(best) - analytic), 1.0) << hz << " Hz";
  }
}

TEST(MelFilterbank, ShapeCoverageAndUnimodality) {
  const MelConfig cfg;
  const Tensor fb = mel_filterbank(cfg);
  ASSERT_EQ(fb.shape(), (Shape{256, 1025}));
  const auto edges = mel_edges_hz(cfg);
  const double bin_hz = 44100.0 / 2048.0;
  for (std::size_t k = 0; k < 1025; ++k) {
    const double f = bin_hz * double(k);
    if (f <= edges.front() || f >= edges.back()) continue;
    double column = 0.0;
    for (std::size_t m = 0; m < 256; ++m) column += fb.at(m, k);
    EXPECT_GT(column, 0.0) << "bin " << k;
  }
  for (std::size_t m = 0; m < 256; ++m) {
    std::size_t peak = 0;
    for (std::size_t k = 0; k < 1025; ++k) {
      ASSERT_GE(fb.at(m, k), 0.0);
      if (fb.at(m, k) > fb.at(m, peak)) peak = k;
    }
    ASSERT_GT(fb.at(m, peak), 0.0);
    for (std::size_t k = 1; k <= peak; ++k) ASSERT_GE(fb.at(m, k), fb.at(m, k - 1));
    for (std::size_t k = peak + 1; k < 1025; ++k) ASSERT_LE(fb.at(m, k), fb.at(m, k - 1));
  }
}

TEST(MelFilterbank, TooManyFiltersRejected) {
  MelConfig cfg;
  cfg.n_mels = 2000;
  EXPECT_THROW(mel_filterbank(cfg), ValidationError);
  cfg = {};
  cfg.fmax = 30000.0;
  EXPECT_THROW(mel_filterbank(cfg), ValidationError);
}

TEST(Mel, TenSecondFeatureShapeAndSilence) {
  AudioClip silence;
  silence.samples.assign(441000, 0.0);
  const FeatureMap m = melspectrogram(silence, MelConfig{});
  EXPECT_EQ(m.shape(), (Shape{1, 1, 499, 256}));
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mel, WhiteNoiseEnergyInEveryBand) {
  const MelConfig cfg;
  const Tensor fb = mel_filterbank(cfg);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FeatureMap m = mel_from_spectrogram(stft_magnitude(white_noise(8000, seed), cfg), fb);
    for (std::size_t t = 0; t < m.dim(2); ++t)
      for (std::size_t f = 0; f < m.dim(3); ++f) ASSERT_GT(m.at(0, 0, t, f), 0.0) << "seed " << seed;
  }
}

TEST(MelProperty, DoublingAmplitudeQuadruplesPower) {
  const MelConfig cfg;
  const Tensor fb = mel_filterbank(cfg);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    AudioClip a = white_noise(6000, 100 + seed), b = a;
    for (double& v : b.samples) v *= 2.0;
    const FeatureMap ma = mel_from_spectrogram(stft_magnitude(a, cfg), fb), mb = mel_from_spectrogram(stft_magnitude(b, cfg), fb);
    for (std::size_t i = 0; i < ma.size(); ++i) ASSERT_NEAR(mb[i], 4.0 * ma[i], 1e-9 * 4.0 * ma[i]);
  }
}

// ---------------------------------------------------------------------------
// Mixup and SpecAugment
// ---------------------------------------------------------------------------

TEST(Mixup, EndpointReturnsFirst) {
  Rng rng(5);
  const Tensor xi = gen::random({1, 1, 3, 4}, rng), xj = gen::random({1, 1, 3, 4}, rng);
  const auto yi = mtl::LabelPair::one_hot(mtl::Scene::bus), yj = mtl::LabelPair::one_hot(mtl::Scene::park);
  const auto m = mixup(xi, xj, yi, yj, 1.0);
  EXPECT_EQ(m.features, xi);
  EXPECT_EQ(m.label.scene, yi.scene);
  EXPECT_EQ(m.label.abstract, yi.abstract);
}

TEST(Mixup, MidpointAverages) {
  Rng rng(6);
  const Tensor xi = gen::random({1, 1, 3, 4}, rng), xj = gen::random({1, 1, 3, 4}, rng);
  const auto m = mixup(xi, xj, mtl::LabelPair::one_hot(mtl::Scene::airport), mtl::LabelPair::one_hot(mtl::Scene::tram), 0.5);
  for (std::size_t i = 0; i < xi.size(); ++i) EXPECT_DOUBLE_EQ(m.features[i], 0.5 * (xi[i] + xj[i]));
  EXPECT_EQ(m.label.scene[0], 0.5);
  EXPECT_EQ(m.label.scene[6], 0.5);
  EXPECT_EQ(m.label.abstract[0], 0.5);
  EXPECT_EQ(m.label.abstract[2], 0.5);
}

TEST(Mixup, LambdaOutsideUnitIntervalRejected) {
  const Tensor x({1, 1, 2, 2});
  const auto y = mtl::LabelPair::one_hot(mtl::Scene::bus);
  EXPECT_THROW(mixup(x, x, y, y, 1.5), ValidationError);
  EXPECT_THROW(mixup(x, x, y, y, -0.1), ValidationError);
}

TEST(MixupProperty, StochasticAndTaxonomyConsistent) {
  Rng rng(7);
  const Tensor x({1, 1, 2, 2});
  for (int trial = 0; trial < 1000; ++trial) {
    const auto yi = mtl::LabelPair::one_hot(mtl::scene_from_index(gen::uniform_size(rng, 0, 9)));
    const auto yj = mtl::LabelPair::one_hot(mtl::scene_from_index(gen::uniform_size(rng, 0, 9)));
    const double lambda = trial == 0 ? 0.0 : sample_beta(1.0, rng);
    const auto m = mixup(x, x, yi, yj, lambda);
    double s10 = 0.0, s3 = 0.0;
    for (double v : m.label.scene) s10 += v;
    for (double v : m.label.abstract) s3 += v;
    ASSERT_NEAR(s10, 1.0, 1e-12);
    ASSERT_NEAR(s3, 1.0, 1e-12);
    const auto marg = m.label.marginal_abstract();
    for (std::size_t k = 0; k < 3; ++k) ASSERT_NEAR(marg[k], m.label.abstract[k], 1e-12);
  }
}

TEST(SpecAugment, ZeroMaskCountsIsIdentity) {
  Rng rng(8);
  const Tensor x = gen::random({1, 1, 20, 30}, rng);
  AugmentPolicy p;
  p.n_freq_masks = p.n_time_masks = 0;
  EXPECT_EQ(spec_augment(x, p, rng), x);
}

TEST(SpecAugment, PinnedFrequencyMask) {
  Rng rng(9);
  const Tensor x = gen::random({1, 1, 8, 40}, rng, 1.0, 2.0);
  const Tensor y = apply_masks(x, {{Mask::Axis::freq, 10, 10}});
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t f = 0; f < 40; ++f) {
      if (f >= 10 && f < 20) EXPECT_EQ(y.at(0, 0, t, f), 0.0);
      else EXPECT_EQ(y.at(0, 0, t, f), x.at(0, 0, t, f));
    }
}

TEST(SpecAugment, OutOfRangeMaskIsShapeError) {
  EXPECT_THROW(apply_masks(Tensor({1, 1, 4, 4}), {{Mask::Axis::time, 3, 2}}), ShapeError);
}

TEST(SpecAugmentProperty, ZeroedFractionBoundAndUntouchedCells) {
  Rng rng(10);
  AugmentPolicy p;
  const std::size_t T = 60, F = 64;
  const double bound = double(p.n_freq_masks * p.freq_mask_max * T + p.n_time_masks * p.time_mask_max * F) / double(T * F);
  const Tensor x = gen::random({1, 1, T, F}, rng, 1.0, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto masks = sample_masks(p, T, F, rng);
    const Tensor y = apply_masks(x, masks);
    std::size_t zeroed = 0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) {
        bool inside = false;
        for (const auto& m : masks) {
          const std::size_t pos = m.axis == Mask::Axis::freq ? f : t;
          inside = inside || (pos >= m.start && pos < m.start + m.width);
        }
        if (inside) {
          ASSERT_EQ(y.at(0, 0, t, f), 0.0);
          ++zeroed;
        } else {
          ASSERT_EQ(y.at(0, 0, t, f), x.at(0, 0, t, f));
        }
      }
    ASSERT_LE(double(zeroed) / double(T * F), bound);
  }
}

TEST(SpecAugment, SeededReproducibility) {
  Rng a(11), b(11), data(12);
  const Tensor x = gen::random({1, 1, 30, 30}, data);
  EXPECT_EQ(spec_augment(x, AugmentPolicy{}, a), spec_augment(x, AugmentPolicy{}, b));
}

// ---------------------------------------------------------------------------
// Synthetic data and manifests
// ---------------------------------------------------------------------------

TEST(Synth, SameSeedBitIdentical) {
  const Dataset a = synth_dataset(3, 0.1, 42), b = synth_dataset(3, 0.1, 42), c = synth_dataset(3, 0.1, 43);
  ASSERT_EQ(a.size(), 30u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].features, b[i].features);
    EXPECT_EQ(a[i].scene, b[i].scene);
  }
  EXPECT_NE(a[0].features, c[0].features);
}

TEST(Synth, LabelsClassMajorWithConsistentParents) {
  const Dataset ds = synth_dataset(2, 0.1, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(mtl::index_of(ds[i].scene), i / 2);
    const auto y = mtl::LabelPair::one_hot(ds[i].scene);
    EXPECT_EQ(y.abstract[mtl::index_of(mtl::parent_of(ds[i].scene))], 1.0);
  }
  EXPECT_THROW(synth_dataset(0, 0.1, 1), ValidationError);
}

TEST(Synth, NoiselessNearestTemplateIsPerfect) {
  const SynthConfig cfg;
  const Tensor templates = synth_templates(cfg);
  const Dataset ds = synth_dataset(5, 0.0, 7, cfg);
  std::size_t right10 = 0, right3 = 0;
  for (const auto& ex : ds) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < mtl::kNumScenes; ++c) {
      double d = 0.0;
      for (std::size_t t = 0; t < cfg.time; ++t)
        for (std::size_t f = 0; f < cfg.mel; ++f) d += std::pow(ex.features.at(0, 0, t, f) - templates.at(c, f), 2);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    right10 += best == mtl::index_of(ex.scene);
    right3 += mtl::kParent[best] == mtl::parent_of(ex.scene);
  }
  EXPECT_EQ(right10, ds.size());
  EXPECT_EQ(right3, ds.size());
}

TEST(Dataset, GridCsvRoundTripIsExact) {
  TempDir dir;
  Rng rng(13);
  const Tensor g = gen::random({7, 5}, rng, -1e3, 1e3);
  std::ofstream(dir.path() / "g.csv") << grid_csv(g);
  EXPECT_EQ(read_grid_csv(dir.path() / "g.csv"), g);
}

TEST(Dataset, ManifestLoadsCsvAndWav) {
  TempDir dir;
  Rng rng(14);
  const Tensor g = gen::random({4, 6}, rng);
  std::ofstream(dir.path() / "a.csv") << grid_csv(g);
  write_wav(dir.path() / "b.wav", white_noise(4000, 3));
  std::ofstream(dir.path() / "manifest.csv") << manifest_csv({{"a.csv", mtl::Scene::metro}, {"b.wav", mtl::Scene::park}});
  MelConfig mel;
  mel.n_mels = 16;
  const Dataset ds = load_dataset(dir.path() / "manifest.csv", mel);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].scene, mtl::Scene::metro);
  EXPECT_EQ(ds[0].features.reshaped({4, 6}), g);
  EXPECT_EQ(ds[1].features.shape(), (Shape{1, 1, frame_count(4000, mel), 16}));
}

TEST(Dataset, BadManifestRowsRejected) {
  TempDir dir;
  std::ofstream(dir.path() / "m1.csv") << "path,scene_label\nx.csv,beach\n";
  EXPECT_THROW(read_manifest(dir.path() / "m1.csv"), ValidationError);
  std::ofstream(dir.path() / "m2.csv") << "path,scene_label\nx.csv,bus,extra\n";
  EXPECT_THROW(read_manifest(dir.path() / "m2.csv"), ParseError);
  EXPECT_THROW(read_manifest(dir.path() / "missing.csv"), IoError);
}

TEST(Dataset, FormatDoubleRoundTrips) {
  Rng rng(15);
  for (int i = 0; i < 1000; ++i) {
    const double v = gen::uniform(rng, -1e6, 1e6) * std::pow(10.0, gen::uniform(rng, -300, 0));
    ASSERT_EQ(parse_double(format_double(v)), v);
  }
}
