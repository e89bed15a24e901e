#include "dpmface/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpmface/container.hpp"
#include "dpmface/error.hpp"

namespace dpmface::matching {

const char* to_string(Pipeline p) {
  switch (p) {
    case Pipeline::raw:
      return "raw";
    case Pipeline::pls:
      return "pls";
    case Pipeline::dpm:
      return "dpm";
  }
  return "?";
}

Pipeline pipeline_from_string(const std::string& s) {
  if (s == "raw") return Pipeline::raw;
  if (s == "pls") return Pipeline::pls;
  if (s == "dpm") return Pipeline::dpm;
  throw InvalidParameter("unknown pipeline '" + s + "' (expected raw, pls or dpm)");
}

Eigen::VectorXd l2_normalized(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 1e-300) || !std::isfinite(norm)) throw InvalidInput("degenerate (zero) template vector");
  return v / norm;
}

namespace {

// Row i of the descriptor matrix occupies entries [i*dims, (i+1)*dims).
Eigen::VectorXd concat_rows(const Eigen::MatrixXd& rows) {
  const RowMatrix row_major = rows;
  return Eigen::Map<const Eigen::VectorXd>(row_major.data(), row_major.size());
}

}  // namespace

Template build_template(const features::DescriptorSet& dset, Pipeline pipeline, const PipelineModels& models) {
  if (dset.count() == 0) throw InvalidInput("descriptor set is empty");
  Template t;
  t.image_id = dset.image_id;
  t.subject_id = dset.subject_id;
  t.pipeline = pipeline;

  Eigen::MatrixXd blocks;
  switch (pipeline) {
    case Pipeline::raw:
      if (dset.modality == Modality::mapped_source) {
        throw InvalidConfiguration("raw pipeline received mapped descriptors");
      }
      blocks = dset.values;
      break;
    case Pipeline::dpm:
      if (models.dpm == nullptr) throw InvalidConfiguration("dpm pipeline requires a trained DPM model");
      if (dset.dims() != models.dpm->net.input_dims()) {
        throw InvalidConfiguration("descriptor dimension does not match the DPM model");
      }
      if (dset.modality == Modality::source) {
        blocks = dpm::map_descriptor_set(*models.dpm, dset).values;
      } else {
        blocks = dset.values;
      }
      break;
    case Pipeline::pls:
      if (models.pls == nullptr) throw InvalidConfiguration("pls pipeline requires a trained PLS model");
      if (dset.dims() != models.pls->x_mean.size()) {
        throw InvalidConfiguration("descriptor dimension does not match the PLS model");
      }
      if (dset.modality == Modality::mapped_source) {
        throw InvalidConfiguration("pls pipeline received mapped descriptors");
      }
      blocks = pls::pls_project_rows(*models.pls, dset.values,
                                     dset.modality == Modality::source ? pls::Side::source : pls::Side::target);
      break;
  }
  t.vector = l2_normalized(concat_rows(blocks));
  return t;
}

GalleryIndex::GalleryIndex(const std::vector<Template>& templates) {
  if (templates.empty()) throw InvalidInput("gallery needs at least one template");
  pipeline_ = templates.front().pipeline;
  const Eigen::Index dims = templates.front().vector.size();
  vectors_.resize(static_cast<Eigen::Index>(templates.size()), dims);
  for (std::size_t i = 0; i < templates.size(); ++i) {
    const Template& t = templates[i];
    if (t.pipeline != pipeline_) throw InvalidInput("gallery templates come from different pipelines");
    if (t.vector.size() != dims) throw InvalidInput("gallery templates differ in length");
    vectors_.row(static_cast<Eigen::Index>(i)) = t.vector.transpose();
    image_ids_.push_back(t.image_id);
    subject_ids_.push_back(t.subject_id);
  }
  index_subjects();
}

GalleryIndex::GalleryIndex(RowMatrix vectors, std::vector<std::string> image_ids,
                           std::vector<std::int64_t> subject_ids, Pipeline pipeline)
    : vectors_(std::move(vectors)),
      image_ids_(std::move(image_ids)),
      subject_ids_(std::move(subject_ids)),
      pipeline_(pipeline) {
  if (image_ids_.empty()) throw InvalidInput("gallery needs at least one template");
  if (static_cast<std::size_t>(vectors_.rows()) != image_ids_.size() || subject_ids_.size() != image_ids_.size()) {
    throw InvalidInput("gallery matrix and labels disagree in size");
  }
  index_subjects();
}

void GalleryIndex::index_subjects() {
  subjects_ = subject_ids_;
  std::sort(subjects_.begin(), subjects_.end());
  subjects_.erase(std::unique(subjects_.begin(), subjects_.end()), subjects_.end());
  subject_slot_.clear();
  for (std::int64_t s : subject_ids_) {
    subject_slot_.push_back(static_cast<int>(std::lower_bound(subjects_.begin(), subjects_.end(), s) - subjects_.begin()));
  }
}

Eigen::VectorXd GalleryIndex::similarities(const Template& probe) const {
  if (probe.pipeline != pipeline_) throw InvalidInput("probe and gallery use different pipelines");
  if (probe.vector.size() != vectors_.cols()) throw InvalidInput("probe length does not match gallery");
  Eigen::VectorXd s(vectors_.rows());
  s.noalias() = vectors_ * probe.vector;
  return s;
}

Eigen::MatrixXd GalleryIndex::similarities(const std::vector<Template>& probes) const {
  constexpr Eigen::Index kBlock = 256;
  const auto n = static_cast<Eigen::Index>(probes.size());
  for (const auto& probe : probes) {
    if (probe.pipeline != pipeline_) throw InvalidInput("probe and gallery use different pipelines");
    if (probe.vector.size() != vectors_.cols()) throw InvalidInput("probe length does not match gallery");
  }
  Eigen::MatrixXd out(vectors_.rows(), n);
  Eigen::MatrixXd block;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - start);
    block.resize(vectors_.cols(), len);
    for (Eigen::Index k = 0; k < len; ++k) block.col(k) = probes[static_cast<std::size_t>(start + k)].vector;
    out.middleCols(start, len).noalias() = vectors_ * block;
  }
  return out;
}

namespace {
constexpr std::uint32_t kGalleryVersion = 1;
}

void GalleryIndex::save(const std::filesystem::path& path) const {
  BinaryWriter w(kGalleryMagic, kGalleryVersion);
  w.str(to_string(pipeline_));
  w.u64(size());
  for (std::size_t i = 0; i < size(); ++i) {
    w.str(image_ids_[i]);
    w.i64(subject_ids_[i]);
  }
  w.mat(vectors_);
  w.save(path);
}

GalleryIndex GalleryIndex::load(const std::filesystem::path& path) {
  BinaryReader r(path, kGalleryMagic, kGalleryVersion);
  const Pipeline pipeline = pipeline_from_string(r.str());
  const std::uint64_t n = r.u64();
  std::vector<std::string> ids;
  std::vector<std::int64_t> subjects;
  for (std::uint64_t i = 0; i < n; ++i) {
    ids.push_back(r.str());
    subjects.push_back(r.i64());
  }
  RowMatrix vectors = r.mat();
  r.expect_end();
  return GalleryIndex(std::move(vectors), std::move(ids), std::move(subjects), pipeline);
}

std::vector<std::pair<std::string, double>> score(const Template& probe, const GalleryIndex& gallery) {
  const Eigen::VectorXd s = gallery.similarities(probe);
  std::vector<std::pair<std::string, double>> out;
  out.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) out.emplace_back(gallery.image_ids()[i], s[static_cast<Eigen::Index>(i)]);
  return out;
}

Eigen::VectorXd fuse_by_subject(const Eigen::VectorXd& similarities, const GalleryIndex& gallery, Fusion fusion) {
  if (static_cast<std::size_t>(similarities.size()) != gallery.size()) {
    throw InvalidInput("score vector does not match gallery size");
  }
  const auto n_subjects = static_cast<Eigen::Index>(gallery.subjects().size());
  Eigen::VectorXd fused = Eigen::VectorXd::Constant(
      n_subjects, fusion == Fusion::max ? -std::numeric_limits<double>::infinity() : 0.0);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_subjects);
  const auto& slots = gallery.subject_slots();
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const int slot = slots[i];
    const double s = similarities[static_cast<Eigen::Index>(i)];
    if (fusion == Fusion::max) {
      fused[slot] = std::max(fused[slot], s);
    } else {
      fused[slot] += s;
      counts[slot] += 1.0;
    }
  }
  if (fusion == Fusion::mean) fused = fused.cwiseQuotient(counts);
  return fused;
}

std::vector<SubjectScore> rank_subjects(const Eigen::VectorXd& similarities, const GalleryIndex& gallery,
                                        Fusion fusion) {
  const Eigen::VectorXd fused = fuse_by_subject(similarities, gallery, fusion);
  std::vector<SubjectScore> ranking;
  ranking.reserve(gallery.subjects().size());
  for (std::size_t k = 0; k < gallery.subjects().size(); ++k) {
    ranking.push_back({gallery.subjects()[k], fused[static_cast<Eigen::Index>(k)]});
  }
  std::stable_sort(ranking.begin(), ranking.end(), [](const SubjectScore& a, const SubjectScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.subject_id < b.subject_id;
  });
  return ranking;
}

Identification identify(const Template& probe, const GalleryIndex& gallery, Fusion fusion) {
  Identification id;
  id.ranking = rank_subjects(gallery.similarities(probe), gallery, fusion);
  id.predicted_subject = id.ranking.front().subject_id;
  return id;
}

std::vector<Identification> identify(const std::vector<Template>& probes, const GalleryIndex& gallery, Fusion fusion) {
  const Eigen::MatrixXd sims = gallery.similarities(probes);
  std::vector<Identification> out(probes.size());
  for (std::size_t k = 0; k < probes.size(); ++k) {
    out[k].ranking = rank_subjects(sims.col(static_cast<Eigen::Index>(k)), gallery, fusion);
    out[k].predicted_subject = out[k].ranking.front().subject_id;
  }
  return out;
}

}  // namespace dpmface::matching
