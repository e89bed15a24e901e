#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpmface/image.hpp"
#include "dpmface/manifest.hpp"

/// Procedural paired-modality data: smooth per-identity blob patterns rendered
/// with per-image nuisance, and a fixed nonlinear transform that turns a
/// rendering into its target-modality counterpart.
namespace dpmface::synth {

/// Ground-truth source -> target pixel transform, applied in this order:
/// geometric warp, emission field, fold, tone curve, polarity field, blur,
/// downsample/upsample, noise.
struct TransformParams {
  /// Peak displacement (pixels) of a smooth fixed warp: the target pixel at p
  /// samples the rendering at p + warp * D(p).
  double warp = 0.0;
  std::uint64_t warp_seed = 41;
  /// Additive position-dependent field shared by every subject.
  double emission = 0.0;
  std::uint64_t emission_seed = 17;
  /// v -> (1 - f) v + f (c + |v - c|): with f = 1 dark and bright
  /// structure around the level c render alike.
  double fold = 0.0;
  double fold_center = 0.58;
  /// v -> v^gamma.
  double gamma = 1.0;
  /// v -> 1 - v after the tone curve.
  bool invert = false;
  /// Contrast around mid-gray is multiplied by (1 - p) + p * Q(x, y), where
  /// Q is a smooth field saturating at +-1, so regions with Q < 0 reverse
  /// their local contrast.
  double polarity = 0.0;
  std::uint64_t polarity_seed = 29;
  double blur_sigma = 0.0;
  /// Box-average by this factor then bilinear upsample back (1 = off).
  int downsample = 1;
  double noise_sigma = 0.0;

  bool is_identity() const {
    return warp == 0.0 && emission == 0.0 && fold == 0.0 && gamma == 1.0 && !invert && polarity == 0.0 && blur_sigma == 0.0 &&
           downsample == 1 && noise_sigma == 0.0;
  }
};

/// Rendering jitter. Capture-level terms are drawn once per capture and
/// shared by its source and target renderings; rendering-level terms are
/// drawn independently for each modality.
struct NuisanceParams {
  double max_shift = 0.0;    ///< capture translation uniform in [-s, s] pixels
  double expression = 0.0;   ///< capture jitter of blob amplitude and placement
  double brightness = 0.0;   ///< rendering offset uniform in [-b, b]
  double contrast = 0.0;     ///< rendering gain uniform in [1 - c, 1 + c]
  double render_shift = 0.0;
  double render_expression = 0.0;

  bool is_none() const {
    return brightness == 0.0 && contrast == 0.0 && max_shift == 0.0 && expression == 0.0 && render_shift == 0.0 &&
           render_expression == 0.0;
  }
};

struct SynthConfig {
  int n_subjects = 40;
  /// Subjects [0, n_train) are tagged "train", the rest "test".
  int n_train = 20;
  int images_per_subject = 6;
  /// Images of a subject are split evenly across sessions.
  int sessions = 2;
  int width = 110;
  int height = 150;
  int blobs_per_identity = 28;
  /// Blob standard deviations as a fraction of min(width, height).
  double blob_sigma_min = 0.03;
  double blob_sigma_max = 0.10;
  std::uint64_t identity_seed = 20140301;
  std::uint64_t nuisance_seed = 7001;
  std::uint64_t noise_seed = 9001;
  int source_bits = 8;
  int target_bits = 16;
  TransformParams transform;
  NuisanceParams nuisance;

  /// Throws InvalidParameter for invalid dims, counts, downsample < 1 or
  /// negative noise.
  void validate() const;
};

/// The frozen benchmark configuration used by eval-suite and the tests.
SynthConfig default_benchmark();

struct Blob {
  double x = 0.0;
  double y = 0.0;
  double sx = 1.0;
  double sy = 1.0;
  double angle = 0.0;
  double amplitude = 0.0;
};

/// Stable per-identity structure.
struct Identity {
  std::vector<Blob> blobs;
};

Identity make_identity(const SynthConfig& config, std::int64_t subject);

struct RenderJitter {
  double brightness = 0.0;
  double gain = 1.0;
  double dx = 0.0;
  double dy = 0.0;
  std::vector<double> amplitude_scale;
  std::vector<double> offset_x;
  std::vector<double> offset_y;
};

/// Noiseless intensity image in roughly [0, 1] (not clipped).
GrayImage render(const SynthConfig& config, const Identity& identity, const RenderJitter& jitter);

/// Shared emission field, max |value| = 1.
GrayImage emission_field(int width, int height, std::uint64_t seed);

/// Shared polarity field in [-1, 1].
GrayImage polarity_field(int width, int height, std::uint64_t seed);

/// Applies the target transform; `noise_stream` seeds the additive noise.
GrayImage apply_transform(const GrayImage& rendering, const TransformParams& params, std::uint64_t noise_stream);

struct SynthImage {
  ImageRecord record;
  GrayImage image;  ///< already quantized to the record's bit depth
};

struct SynthDataset {
  std::vector<SynthImage> images;
};

/// Both modalities of every subject, subject-major, then source before
/// target, then capture index.
SynthDataset generate(const SynthConfig& config);

/// Writes PGM images plus manifest.csv into `dir` and returns the manifest.
Manifest write_dataset(const SynthConfig& config, const std::filesystem::path& dir);

/// key=value lines describing the configuration (recorded in the manifest).
std::vector<std::string> describe(const SynthConfig& config);

}  // namespace dpmface::synth
