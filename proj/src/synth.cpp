#include "dpmface/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "dpmface/error.hpp"
#include "dpmface/imgproc.hpp"
#include "dpmface/rng.hpp"

namespace dpmface::synth {

namespace {

constexpr double kBackground = 0.42;
constexpr double kFaceLevel = 0.16;
const char* const kConditions[] = {"neutral", "expression", "lighting"};

GrayImage box_downsample(const GrayImage& img, int f) {
  const int w = (img.width() + f - 1) / f;
  const int h = (img.height() + f - 1) / f;
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int yy = y * f; yy < std::min(img.height(), (y + 1) * f); ++yy) {
        for (int xx = x * f; xx < std::min(img.width(), (x + 1) * f); ++xx) {
          sum += img.at(xx, yy);
          ++n;
        }
      }
      out.at(x, y) = sum / n;
    }
  }
  return out;
}

GrayImage bilinear_upsample(const GrayImage& small, int f, int width, int height) {
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const double sy = (y + 0.5) / f - 0.5;
    const int y0 = static_cast<int>(std::floor(sy));
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = (x + 0.5) / f - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const double fx = sx - x0;
      out.at(x, y) = (1 - fy) * ((1 - fx) * small.clamped(x0, y0) + fx * small.clamped(x0 + 1, y0)) +
                     fy * ((1 - fx) * small.clamped(x0, y0 + 1) + fx * small.clamped(x0 + 1, y0 + 1));
    }
  }
  return out;
}

double sample_bilinear(const GrayImage& img, double sx, double sy) {
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0;
  const double fy = sy - y0;
  return (1 - fy) * ((1 - fx) * img.clamped(x0, y0) + fx * img.clamped(x0 + 1, y0)) +
         fy * ((1 - fx) * img.clamped(x0, y0 + 1) + fx * img.clamped(x0 + 1, y0 + 1));
}

RenderJitter draw_capture(const NuisanceParams& n, std::size_t blob_count, double expr_gain, Rng& rng) {
  RenderJitter j;
  j.dx = uniform(rng, -n.max_shift, n.max_shift);
  j.dy = uniform(rng, -n.max_shift, n.max_shift);
  const double e = n.expression * expr_gain;
  j.amplitude_scale.resize(blob_count);
  j.offset_x.resize(blob_count);
  j.offset_y.resize(blob_count);
  for (std::size_t i = 0; i < blob_count; ++i) {
    j.amplitude_scale[i] = 1.0 + e * normal(rng);
    j.offset_x[i] = e * normal(rng);
    j.offset_y[i] = e * normal(rng);
  }
  return j;
}

// Adds independent rendering-level jitter on top of a capture.
RenderJitter draw_rendering(const NuisanceParams& n, const RenderJitter& capture, double light_gain, Rng& rng) {
  RenderJitter j = capture;
  const double b = n.brightness * light_gain;
  const double c = n.contrast * light_gain;
  j.brightness = uniform(rng, -b, b);
  j.gain = uniform(rng, 1.0 - c, 1.0 + c);
  j.dx += uniform(rng, -n.render_shift, n.render_shift);
  j.dy += uniform(rng, -n.render_shift, n.render_shift);
  for (std::size_t i = 0; i < j.amplitude_scale.size(); ++i) {
    j.amplitude_scale[i] += n.render_expression * normal(rng);
    j.offset_x[i] += n.render_expression * normal(rng);
    j.offset_y[i] += n.render_expression * normal(rng);
  }
  return j;
}

GrayImage quantized(const GrayImage& img, int bits) {
  GrayImage out = to_gray(quantize(img, bits));
  out.set_bit_depth_origin(bits);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (width < 20 || height < 20) throw InvalidParameter("synthetic images must be at least 20x20");
  if (n_subjects < 1) throw InvalidParameter("n_subjects must be positive");
  if (n_train < 0 || n_train > n_subjects) throw InvalidParameter("n_train must be in [0, n_subjects]");
  if (images_per_subject < 1) throw InvalidParameter("images_per_subject must be positive");
  if (sessions < 1 || images_per_subject % sessions != 0) {
    throw InvalidParameter("images_per_subject must be a positive multiple of sessions");
  }
  if (!(blob_sigma_min > 0.0) || blob_sigma_max < blob_sigma_min) {
    throw InvalidParameter("blob sigma range must satisfy 0 < min <= max");
  }
  if (blobs_per_identity < 1) throw InvalidParameter("blobs_per_identity must be positive");
  if ((source_bits != 8 && source_bits != 16) || (target_bits != 8 && target_bits != 16)) {
    throw InvalidParameter("bit depths must be 8 or 16");
  }
  if (transform.downsample < 1) throw InvalidParameter("downsample factor must be >= 1");
  if (transform.noise_sigma < 0.0) throw InvalidParameter("noise sigma must be >= 0");
  if (transform.blur_sigma < 0.0) throw InvalidParameter("blur sigma must be >= 0");
  if (transform.gamma <= 0.0) throw InvalidParameter("gamma must be positive");
  if (transform.fold < 0.0 || transform.fold > 1.0) throw InvalidParameter("fold must be in [0, 1]");
  if (transform.polarity < 0.0 || transform.polarity > 1.0) throw InvalidParameter("polarity must be in [0, 1]");
  if (nuisance.brightness < 0.0 || nuisance.contrast < 0.0 || nuisance.contrast >= 1.0 || nuisance.max_shift < 0.0 ||
      nuisance.expression < 0.0 || nuisance.render_shift < 0.0 || nuisance.render_expression < 0.0) {
    throw InvalidParameter("nuisance ranges must be non-negative (contrast < 1)");
  }
}

SynthConfig default_benchmark() {
  SynthConfig c;
  c.transform.emission = 0.5;
  c.transform.fold = 1.0;
  c.transform.gamma = 0.5;
  c.transform.invert = true;
  c.transform.polarity = 1.0;
  c.transform.blur_sigma = 1.2;
  c.transform.downsample = 3;
  c.transform.noise_sigma = 0.01;
  c.nuisance.brightness = 0.05;
  c.nuisance.contrast = 0.1;
  c.nuisance.render_shift = 1.5;
  c.nuisance.render_expression = 0.2;
  return c;
}

Identity make_identity(const SynthConfig& config, std::int64_t subject) {
  Rng rng(mix_seed(config.identity_seed, static_cast<std::uint64_t>(subject)));
  const double w = config.width;
  const double h = config.height;
  const double scale = std::min(w, h);
  Identity id;
  id.blobs.reserve(static_cast<std::size_t>(config.blobs_per_identity));
  for (int i = 0; i < config.blobs_per_identity; ++i) {
    Blob b;
    b.x = uniform(rng, 0.18 * w, 0.82 * w);
    b.y = uniform(rng, 0.12 * h, 0.88 * h);
    b.sx = uniform(rng, config.blob_sigma_min, config.blob_sigma_max) * scale;
    b.sy = uniform(rng, config.blob_sigma_min, config.blob_sigma_max) * scale;
    b.angle = uniform(rng, 0.0, std::numbers::pi);
    const double mag = uniform(rng, 0.08, 0.25);
    b.amplitude = uniform01(rng) < 0.5 ? -mag : mag;
    id.blobs.push_back(b);
  }
  return id;
}

GrayImage render(const SynthConfig& config, const Identity& identity, const RenderJitter& jitter) {
  const int w = config.width;
  const int h = config.height;
  GrayImage img(w, h);
  const double cx = (w - 1) / 2.0 + jitter.dx;
  const double cy = (h - 1) / 2.0 + jitter.dy;
  const double ax = 0.42 * w;
  const double ay = 0.45 * h;
  const bool jittered = !jitter.amplitude_scale.empty();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Soft-edged oval shared by every identity.
      const double r = std::hypot((x - cx) / ax, (y - cy) / ay);
      double v = kBackground + kFaceLevel / (1.0 + std::exp((r - 1.0) * 12.0));
      for (std::size_t i = 0; i < identity.blobs.size(); ++i) {
        const Blob& b = identity.blobs[i];
        const double bx = b.x + jitter.dx + (jittered ? jitter.offset_x[i] * b.sx : 0.0);
        const double by = b.y + jitter.dy + (jittered ? jitter.offset_y[i] * b.sy : 0.0);
        const double amp = b.amplitude * (jittered ? jitter.amplitude_scale[i] : 1.0);
        const double c = std::cos(b.angle);
        const double sn = std::sin(b.angle);
        const double ux = (c * (x - bx) + sn * (y - by)) / b.sx;
        const double uy = (-sn * (x - bx) + c * (y - by)) / b.sy;
        v += amp * std::exp(-0.5 * (ux * ux + uy * uy));
      }
      img.at(x, y) = 0.5 + jitter.gain * (v - 0.5) + jitter.brightness;
    }
  }
  return img;
}

GrayImage emission_field(int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  const double scale = std::min(width, height);
  struct Lobe {
    double x, y, s, a;
  };
  std::vector<Lobe> lobes;
  for (int i = 0; i < 6; ++i) {
    const double x = uniform(rng, 0.1, 0.9) * width;
    const double y = uniform(rng, 0.1, 0.9) * height;
    const double s = uniform(rng, 0.12, 0.3) * scale;
    const double a = uniform(rng, 0.5, 1.0) * (i % 2 == 0 ? 1.0 : -1.0);
    lobes.push_back({x, y, s, a});
  }
  GrayImage field(width, height);
  double peak = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double v = 0.0;
      for (const auto& l : lobes) {
        const double dx = (x - l.x) / l.s;
        const double dy = (y - l.y) / l.s;
        v += l.a * std::exp(-0.5 * (dx * dx + dy * dy));
      }
      field.at(x, y) = v;
      peak = std::max(peak, std::abs(v));
    }
  }
  if (peak > 0.0) {
    for (double& v : field.data()) v /= peak;
  }
  return field;
}

GrayImage polarity_field(int width, int height, std::uint64_t seed) {
  constexpr double kSharpness = 3.0;
  GrayImage q = emission_field(width, height, seed);
  for (double& v : q.data()) v = std::tanh(kSharpness * v) / std::tanh(kSharpness);
  return q;
}

GrayImage apply_transform(const GrayImage& rendering, const TransformParams& params, std::uint64_t noise_stream) {
  if (params.downsample < 1) throw InvalidParameter("downsample factor must be >= 1");
  if (params.noise_sigma < 0.0) throw InvalidParameter("noise sigma must be >= 0");
  GrayImage out = rendering;
  if (params.warp != 0.0) {
    const GrayImage fx = emission_field(out.width(), out.height(), params.warp_seed);
    const GrayImage fy = emission_field(out.width(), out.height(), mix_seed(params.warp_seed, 1));
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        out.at(x, y) = sample_bilinear(rendering, x + params.warp * fx.at(x, y), y + params.warp * fy.at(x, y));
      }
    }
  }
  if (params.emission != 0.0) {
    const GrayImage field = emission_field(out.width(), out.height(), params.emission_seed);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += params.emission * field.data()[i];
  }
  if (params.fold != 0.0) {
    for (double& v : out.data()) {
      v = (1.0 - params.fold) * v + params.fold * (params.fold_center + std::abs(v - params.fold_center));
    }
  }
  if (params.gamma != 1.0 || params.invert) {
    for (double& v : out.data()) {
      v = std::pow(std::clamp(v, 0.0, 1.0), params.gamma);
      if (params.invert) v = 1.0 - v;
    }
  }
  if (params.polarity != 0.0) {
    const GrayImage q = polarity_field(out.width(), out.height(), params.polarity_seed);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double gain = (1.0 - params.polarity) + params.polarity * q.data()[i];
      out.data()[i] = 0.5 + gain * (out.data()[i] - 0.5);
    }
  }
  if (params.blur_sigma > 0.0) out = imgproc::gaussian_smooth(out, params.blur_sigma);
  if (params.downsample > 1) {
    out = bilinear_upsample(box_downsample(out, params.downsample), params.downsample, out.width(), out.height());
  }
  if (params.noise_sigma > 0.0) {
    Rng rng(noise_stream);
    for (double& v : out.data()) v += params.noise_sigma * normal(rng);
  }
  return out;
}

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(config.n_subjects);
  const auto per = static_cast<std::size_t>(config.images_per_subject);
  const int per_session = config.images_per_subject / config.sessions;
  SynthDataset ds;
  ds.images.resize(n * per * 2);

#pragma omp parallel for schedule(dynamic)
  for (std::int64_t s = 0; s < static_cast<std::int64_t>(n); ++s) {
    const Identity identity = make_identity(config, s);
    Rng rng(mix_seed(config.nuisance_seed, static_cast<std::uint64_t>(s)));
    for (std::size_t k = 0; k < per; ++k) {
      const int session = static_cast<int>(k) / per_session;
      const int slot = static_cast<int>(k) % per_session;
      const char* condition = kConditions[slot % 3];
      const double light = slot % 3 == 2 ? 2.0 : 1.0;
      const double expr = slot % 3 == 1 ? 2.0 : 1.0;
      const RenderJitter capture = draw_capture(config.nuisance, identity.blobs.size(), expr, rng);
      const RenderJitter js = draw_rendering(config.nuisance, capture, light, rng);
      const RenderJitter jt = draw_rendering(config.nuisance, capture, light, rng);

      for (int m = 0; m < 2; ++m) {
        const bool target = m == 1;
        SynthImage& out = ds.images[static_cast<std::size_t>(s) * per * 2 + static_cast<std::size_t>(m) * per + k];
        char name[64];
        std::snprintf(name, sizeof name, "images/s%03lld_%s_%02zu.pgm", static_cast<long long>(s),
                      target ? "target" : "source", k);
        out.record.path = name;
        out.record.subject_id = s;
        out.record.modality = target ? Modality::target : Modality::source;
        out.record.session = session;
        out.record.condition = condition;
        out.record.enrollment_order = static_cast<int>(k);
        out.record.split = s < config.n_train ? "train" : "test";
        if (!target) {
          out.image = quantized(render(config, identity, js), config.source_bits);
        } else {
          const std::uint64_t stream = mix_seed(config.noise_seed, static_cast<std::uint64_t>(s) * 4096 + k);
          out.image =
              quantized(apply_transform(render(config, identity, jt), config.transform, stream), config.target_bits);
        }
      }
    }
  }
  return ds;
}

std::vector<std::string> describe(const SynthConfig& c) {
  std::vector<std::string> lines;
  auto add = [&](const std::string& k, const std::string& v) { lines.push_back(k + "=" + v); };
  add("synth.n_subjects", std::to_string(c.n_subjects));
  add("synth.n_train", std::to_string(c.n_train));
  add("synth.images_per_subject", std::to_string(c.images_per_subject));
  add("synth.sessions", std::to_string(c.sessions));
  add("synth.width", std::to_string(c.width));
  add("synth.height", std::to_string(c.height));
  add("synth.blobs_per_identity", std::to_string(c.blobs_per_identity));
  add("synth.blob_sigma_min", fmt(c.blob_sigma_min));
  add("synth.blob_sigma_max", fmt(c.blob_sigma_max));
  add("synth.identity_seed", std::to_string(c.identity_seed));
  add("synth.nuisance_seed", std::to_string(c.nuisance_seed));
  add("synth.noise_seed", std::to_string(c.noise_seed));
  add("synth.source_bits", std::to_string(c.source_bits));
  add("synth.target_bits", std::to_string(c.target_bits));
  add("transform.warp", fmt(c.transform.warp));
  add("transform.warp_seed", std::to_string(c.transform.warp_seed));
  add("transform.emission", fmt(c.transform.emission));
  add("transform.emission_seed", std::to_string(c.transform.emission_seed));
  add("transform.fold", fmt(c.transform.fold));
  add("transform.fold_center", fmt(c.transform.fold_center));
  add("transform.gamma", fmt(c.transform.gamma));
  add("transform.invert", c.transform.invert ? "true" : "false");
  add("transform.polarity", fmt(c.transform.polarity));
  add("transform.polarity_seed", std::to_string(c.transform.polarity_seed));
  add("transform.blur_sigma", fmt(c.transform.blur_sigma));
  add("transform.downsample", std::to_string(c.transform.downsample));
  add("transform.noise_sigma", fmt(c.transform.noise_sigma));
  add("nuisance.brightness", fmt(c.nuisance.brightness));
  add("nuisance.contrast", fmt(c.nuisance.contrast));
  add("nuisance.max_shift", fmt(c.nuisance.max_shift));
  add("nuisance.expression", fmt(c.nuisance.expression));
  add("nuisance.render_shift", fmt(c.nuisance.render_shift));
  add("nuisance.render_expression", fmt(c.nuisance.render_expression));
  return lines;
}

Manifest write_dataset(const SynthConfig& config, const std::filesystem::path& dir) {
  const SynthDataset ds = generate(config);
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  Manifest manifest;
  manifest.root = dir;
  manifest.comments = describe(config);
  for (const auto& img : ds.images) {
    write_pgm(dir / img.record.path, quantize(img.image, img.image.bit_depth_origin()));
    manifest.records.push_back(img.record);
  }
  manifest.write(dir / "manifest.csv");
  return manifest;
}

}  // namespace dpmface::synth
