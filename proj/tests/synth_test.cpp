#include <cmath>
#include <set>

#include <gtest/gtest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dpmface/error.hpp"
#include "dpmface/synth.hpp"
#include "test_support.hpp"

using namespace dpmface;
using namespace dpmface::synth;

namespace {

SynthConfig small_config() {
  SynthConfig c = default_benchmark();
  c.n_subjects = 6;
  c.n_train = 3;
  c.images_per_subject = 4;
  c.sessions = 2;
  c.width = 48;
  c.height = 64;
  return c;
}

double correlation(const GrayImage& a, const GrayImage& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.data()[i];
    mb += b.data()[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.data()[i] - ma, db = b.data()[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Synth, DeterministicForSeeds) {
  const SynthConfig c = small_config();
  const SynthDataset a = generate(c);
  const SynthDataset b = generate(c);
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].image, b.images[i].image);
    EXPECT_EQ(a.images[i].record.path, b.images[i].record.path);
  }
  SynthConfig other = c;
  other.identity_seed += 1;
  EXPECT_FALSE(generate(other).images[0].image == a.images[0].image);
}

TEST(Synth, IndependentOfThreadCount) {
#ifdef _OPENMP
  const SynthConfig c = small_config();
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const SynthDataset a = generate(c);
  omp_set_num_threads(4);
  const SynthDataset b = generate(c);
  omp_set_num_threads(saved);
  for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(a.images[i].image, b.images[i].image);
#else
  GTEST_SKIP() << "built without OpenMP";
#endif
}

TEST(Synth, RecordLayout) {
  const SynthConfig c = small_config();
  const SynthDataset ds = generate(c);
  ASSERT_EQ(ds.images.size(), 6u * 4 * 2);
  std::set<std::string> paths;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const ImageRecord& r = ds.images[i].record;
    const auto subject = static_cast<std::int64_t>(i / 8);
    const std::size_t k = i % 4;
    EXPECT_EQ(r.subject_id, subject);
    EXPECT_EQ(r.modality, (i % 8) < 4 ? Modality::source : Modality::target);
    EXPECT_EQ(r.enrollment_order, static_cast<int>(k));
    EXPECT_EQ(r.session, static_cast<int>(k / 2));
    EXPECT_EQ(r.split, subject < 3 ? "train" : "test");
    EXPECT_EQ(ds.images[i].image.bit_depth_origin(), r.modality == Modality::source ? 8 : 16);
    EXPECT_EQ(ds.images[i].image.width(), 48);
    paths.insert(r.path);
  }
  EXPECT_EQ(paths.size(), ds.images.size());
}

TEST(Synth, IdentityTransformReproducesTheRendering) {
  SynthConfig c = small_config();
  c.transform = TransformParams{};
  c.nuisance = NuisanceParams{};
  ASSERT_TRUE(c.transform.is_identity());
  const SynthDataset ds = generate(c);
  for (std::size_t s = 0; s < 6; ++s) {
    for (std::size_t k = 0; k < 4; ++k) {
      const GrayImage& src = ds.images[s * 8 + k].image;
      const GrayImage& tgt = ds.images[s * 8 + 4 + k].image;
      // Same rendering, quantized at 8 and 16 bits.
      for (std::size_t i = 0; i < src.size(); ++i) {
        EXPECT_NEAR(src.data()[i], tgt.data()[i], 0.5 / 255 + 0.5 / 65535 + 1e-12);
      }
    }
  }
  const GrayImage r = support::random_image(20, 20, 1);
  EXPECT_EQ(apply_transform(r, TransformParams{}, 0), r);
}

TEST(Synth, SameIdentityCorrelatesMoreThanDifferent) {
  SynthConfig c = small_config();
  c.n_subjects = 10;
  c.n_train = 5;
  const SynthDataset ds = generate(c);
  double within = 0.0, between = 0.0;
  int nw = 0, nb = 0;
  for (std::size_t s = 0; s < 10; ++s) {
    for (std::size_t t = 0; t < 10; ++t) {
      // Source image 0 of s against source image 1 of t.
      const double r = correlation(ds.images[s * 8].image, ds.images[t * 8 + 1].image);
      if (s == t) {
        within += r;
        ++nw;
      } else {
        between += r;
        ++nb;
      }
    }
  }
  EXPECT_GT(within / nw, between / nb + 0.1);
}

TEST(Synth, TransformStages) {
  const GrayImage r = support::random_image(24, 24, 2);
  TransformParams g;
  g.gamma = 0.5;
  g.invert = true;
  const GrayImage out = apply_transform(r, g, 0);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(out.data()[i], 1.0 - std::sqrt(r.data()[i]), 1e-15);

  TransformParams f;
  f.fold = 1.0;
  f.fold_center = 0.5;
  const GrayImage folded = apply_transform(r, f, 0);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(folded.data()[i], 0.5 + std::abs(r.data()[i] - 0.5), 1e-15);

  TransformParams n;
  n.noise_sigma = 0.1;
  const GrayImage a = apply_transform(r, n, 7);
  EXPECT_EQ(a, apply_transform(r, n, 7));
  EXPECT_FALSE(a == apply_transform(r, n, 8));

  TransformParams d;
  d.downsample = 3;
  const GrayImage flat(24, 24, 0.3);
  for (double v : apply_transform(flat, d, 0).data()) EXPECT_NEAR(v, 0.3, 1e-14);
}

TEST(Synth, FieldsAreBounded) {
  const GrayImage e = emission_field(50, 60, 17);
  double peak = 0.0;
  for (double v : e.data()) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 1.0, 1e-12);
  for (double v : polarity_field(50, 60, 29).data()) EXPECT_LE(std::abs(v), 1.0 + 1e-12);
}

TEST(Synth, ValidateRejectsBadConfigs) {
  auto bad = [](auto mutate) {
    SynthConfig c = small_config();
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](SynthConfig& c) { c.width = 10; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](SynthConfig& c) { c.n_train = 7; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](SynthConfig& c) { c.images_per_subject = 5; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](SynthConfig& c) { c.target_bits = 12; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](SynthConfig& c) { c.transform.downsample = 0; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](SynthConfig& c) { c.transform.noise_sigma = -1; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](SynthConfig& c) { c.transform.gamma = 0; }).validate(), InvalidParameter);
  EXPECT_THROW(bad([](SynthConfig& c) { c.transform.fold = 2; }).validate(), InvalidParameter);
  EXPECT_NO_THROW(small_config().validate());
}

TEST(Synth, WrittenDatasetRecordsItsParameters) {
  const SynthConfig c = small_config();
  const auto dir = support::scratch_dir("synth");
  const Manifest m = write_dataset(c, dir);
  const Manifest back = Manifest::read(dir / "manifest.csv");
  EXPECT_EQ(back.records.size(), 48u);
  EXPECT_EQ(back.comments, describe(c));
  const SynthDataset ds = generate(c);
  for (std::size_t i = 0; i < ds.images.size(); i += 7) {
    EXPECT_EQ(load_gray(back.resolve(back.records[i])), ds.images[i].image);
  }
  bool has_gamma = false;
  for (const auto& line : back.comments) has_gamma |= line.rfind("transform.gamma=", 0) == 0;
  EXPECT_TRUE(has_gamma);
}
