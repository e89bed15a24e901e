#include <algorithm>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "dpmface/error.hpp"
#include "dpmface/matching.hpp"
#include "dpmface/pls.hpp"
#include "dpmface/rng.hpp"
#include "test_support.hpp"

using namespace dpmface;
using namespace dpmface::matching;

namespace {

features::DescriptorSet random_set(std::int64_t subject, Modality modality, std::uint64_t seed) {
  features::DescriptorSet d;
  d.image_id = "img" + std::to_string(seed);
  d.subject_id = subject;
  d.modality = modality;
  d.values = support::random_matrix(5, 6, seed);
  d.centers.resize(5);
  return d;
}

Template random_template(const std::string& id, std::int64_t subject, int dims, std::uint64_t seed) {
  return {id, subject, l2_normalized(support::random_matrix(dims, 1, seed).col(0)), Pipeline::raw};
}

double loop_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Template, RawIsRowMajorConcatenationWithUnitNorm) {
  const auto d = random_set(3, Modality::source, 1);
  const Template t = build_template(d, Pipeline::raw, {});
  ASSERT_EQ(t.vector.size(), 30);
  EXPECT_NEAR(t.vector.norm(), 1.0, 1e-9);
  const double n = d.values.norm();
  for (Eigen::Index r = 0; r < 5; ++r) {
    for (Eigen::Index c = 0; c < 6; ++c) EXPECT_NEAR(t.vector[r * 6 + c], d.values(r, c) / n, 1e-15);
  }
  EXPECT_EQ(t.subject_id, 3);
  EXPECT_EQ(t.image_id, d.image_id);
}

TEST(Template, PlsProjectsEachSideWithItsOwnRotation) {
  const Eigen::MatrixXd x = support::random_matrix(80, 6, 2);
  const Eigen::MatrixXd y = x * 0.5 + support::random_matrix(80, 6, 3);
  const pls::PlsModel model = pls::pls_fit(x, y, 3).model;
  for (Modality m : {Modality::source, Modality::target}) {
    const auto d = random_set(0, m, 4);
    const Template t = build_template(d, Pipeline::pls, {nullptr, &model});
    ASSERT_EQ(t.vector.size(), 15);
    const Eigen::MatrixXd proj =
        pls::pls_project_rows(model, d.values, m == Modality::source ? pls::Side::source : pls::Side::target);
    const Eigen::MatrixXd rows = proj / proj.norm();
    for (Eigen::Index r = 0; r < 5; ++r) {
      for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(t.vector[r * 3 + c], rows(r, c), 1e-12);
    }
  }
}

TEST(Template, MissingModelIsAConfigurationError) {
  const auto d = random_set(0, Modality::source, 5);
  EXPECT_THROW(build_template(d, Pipeline::dpm, {}), InvalidConfiguration);
  EXPECT_THROW(build_template(d, Pipeline::pls, {}), InvalidConfiguration);
}

TEST(Template, ZeroVectorRejected) {
  auto d = random_set(0, Modality::source, 6);
  d.values.setZero();
  EXPECT_THROW(build_template(d, Pipeline::raw, {}), InvalidInput);
  EXPECT_THROW(l2_normalized(Eigen::VectorXd::Zero(3)), InvalidInput);
}

TEST(Template, PositiveRescalingLeavesRankingUnchanged) {
  std::vector<Template> gallery_t;
  for (int s = 0; s < 10; ++s) gallery_t.push_back(random_template("g" + std::to_string(s), s, 40, 100 + s));
  const GalleryIndex gallery(gallery_t);
  features::DescriptorSet probe = random_set(4, Modality::target, 7);
  probe.values = support::random_matrix(4, 10, 8);
  const auto a = identify(build_template(probe, Pipeline::raw, {}), gallery);
  for (double scale : {1e-6, 0.3, 17.0, 1e6}) {
    features::DescriptorSet scaled = probe;
    scaled.values *= scale;
    const auto b = identify(build_template(scaled, Pipeline::raw, {}), gallery);
    ASSERT_EQ(a.ranking.size(), b.ranking.size());
    for (std::size_t k = 0; k < a.ranking.size(); ++k) EXPECT_EQ(a.ranking[k].subject_id, b.ranking[k].subject_id);
  }
}

TEST(Scoring, MatrixVectorEqualsLoopedDotProducts) {
  std::vector<Template> ts;
  for (int i = 0; i < 25; ++i) ts.push_back(random_template("g" + std::to_string(i), i % 7, 300, 200 + i));
  const GalleryIndex gallery(ts);
  const Template probe = random_template("p", 0, 300, 999);
  const Eigen::VectorXd sims = gallery.similarities(probe);
  for (int i = 0; i < 25; ++i) EXPECT_NEAR(sims[i], loop_dot(probe.vector, ts[static_cast<std::size_t>(i)].vector), 1e-12);
  const auto listed = score(probe, gallery);
  ASSERT_EQ(listed.size(), 25u);
  EXPECT_EQ(listed[3].first, "g3");
  EXPECT_EQ(listed[3].second, sims[3]);
}

TEST(Scoring, BatchedEqualsOneProbeAtATime) {
  std::vector<Template> ts;
  for (int i = 0; i < 30; ++i) ts.push_back(random_template("g" + std::to_string(i), i / 3, 120, 500 + i));
  const GalleryIndex gallery(ts);
  std::vector<Template> probes;
  for (int p = 0; p < 300; ++p) probes.push_back(random_template("p", 0, 120, 900 + p));
  const Eigen::MatrixXd all = gallery.similarities(probes);
  ASSERT_EQ(all.rows(), 30);
  ASSERT_EQ(all.cols(), 300);
  const auto ids = identify(probes, gallery);
  for (std::size_t p = 0; p < probes.size(); ++p) {
    for (int i = 0; i < 30; ++i) {
      EXPECT_NEAR(all(i, static_cast<Eigen::Index>(p)), loop_dot(probes[p].vector, ts[static_cast<std::size_t>(i)].vector),
                  1e-12);
    }
    EXPECT_EQ(ids[p].predicted_subject, identify(probes[p], gallery).predicted_subject);
  }
  EXPECT_EQ(gallery.similarities(std::vector<Template>{}).cols(), 0);
  probes[7].pipeline = Pipeline::dpm;
  EXPECT_THROW(gallery.similarities(probes), InvalidInput);
}

TEST(Scoring, RankingMatchesBruteForce) {
  // 10 subjects with 2 templates each.
  std::vector<Template> ts;
  for (int i = 0; i < 20; ++i) ts.push_back(random_template("g" + std::to_string(i), i / 2, 50, 300 + i));
  const GalleryIndex gallery(ts);
  for (int p = 0; p < 5; ++p) {
    const Template probe = random_template("p", 0, 50, 400 + p);
    std::map<std::int64_t, double> best, mean;
    for (const auto& t : ts) {
      const double s = loop_dot(probe.vector, t.vector);
      best[t.subject_id] = best.count(t.subject_id) ? std::max(best[t.subject_id], s) : s;
      mean[t.subject_id] += s / 2.0;
    }
    for (auto [fusion, table] : {std::pair{Fusion::max, &best}, std::pair{Fusion::mean, &mean}}) {
      std::vector<std::pair<double, std::int64_t>> expect;
      for (auto [s, v] : *table) expect.emplace_back(-v, s);
      std::sort(expect.begin(), expect.end());
      const auto id = identify(probe, gallery, fusion);
      ASSERT_EQ(id.ranking.size(), 10u);
      for (std::size_t k = 0; k < 10; ++k) {
        EXPECT_EQ(id.ranking[k].subject_id, expect[k].second);
        EXPECT_NEAR(id.ranking[k].score, -expect[k].first, 1e-12);
      }
      EXPECT_EQ(id.predicted_subject, expect[0].second);
    }
  }
}

TEST(Scoring, TiesGoToLowerSubjectId) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(2);
  v[0] = 1.0;
  const std::vector<Template> ts{{"a", 9, v, Pipeline::raw}, {"b", 4, v, Pipeline::raw}, {"c", 6, v, Pipeline::raw}};
  const GalleryIndex gallery(ts);
  const auto id = identify({"p", 0, v, Pipeline::raw}, gallery);
  EXPECT_EQ(id.ranking[0].subject_id, 4);
  EXPECT_EQ(id.ranking[1].subject_id, 6);
  EXPECT_EQ(id.ranking[2].subject_id, 9);
}

TEST(Gallery, SubjectsSortedAndSlotsConsistent) {
  std::vector<Template> ts;
  for (std::int64_t s : {5, 2, 5, 8, 2}) ts.push_back(random_template("g" + std::to_string(ts.size()), s, 8, 500 + s));
  const GalleryIndex gallery(ts);
  EXPECT_EQ(gallery.subjects(), (std::vector<std::int64_t>{2, 5, 8}));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    EXPECT_EQ(gallery.subjects()[static_cast<std::size_t>(gallery.subject_slots()[i])], ts[i].subject_id);
  }
}

TEST(Gallery, RejectsMixedInput) {
  std::vector<Template> ts{random_template("a", 0, 8, 1), random_template("b", 1, 9, 2)};
  EXPECT_THROW(GalleryIndex{ts}, InvalidInput);
  ts[1] = random_template("b", 1, 8, 2);
  ts[1].pipeline = Pipeline::dpm;
  EXPECT_THROW(GalleryIndex{ts}, InvalidInput);
  EXPECT_THROW(GalleryIndex{std::vector<Template>{}}, InvalidInput);
  const GalleryIndex g(std::vector<Template>{random_template("a", 0, 8, 1)});
  EXPECT_THROW(g.similarities(random_template("p", 0, 7, 3)), InvalidInput);
}

TEST(Gallery, FileRoundTrip) {
  std::vector<Template> ts;
  for (int i = 0; i < 6; ++i) ts.push_back(random_template("g" + std::to_string(i), i / 3, 12, 600 + i));
  const GalleryIndex g(ts);
  const auto path = support::scratch_dir("gallery") / "g.gal";
  g.save(path);
  const GalleryIndex back = GalleryIndex::load(path);
  EXPECT_EQ(back.vectors(), g.vectors());
  EXPECT_EQ(back.image_ids(), g.image_ids());
  EXPECT_EQ(back.subject_ids(), g.subject_ids());
  EXPECT_EQ(back.pipeline(), g.pipeline());
}

TEST(Pipeline, NamesRoundTrip) {
  for (Pipeline p : {Pipeline::raw, Pipeline::pls, Pipeline::dpm}) EXPECT_EQ(pipeline_from_string(to_string(p)), p);
  EXPECT_THROW(pipeline_from_string("hog"), InvalidParameter);
}
