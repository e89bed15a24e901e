#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dpmface/dpm.hpp"
#include "dpmface/features.hpp"
#include "dpmface/pls.hpp"

namespace dpmface::matching {

enum class Pipeline { raw, pls, dpm };

const char* to_string(Pipeline p);
Pipeline pipeline_from_string(const std::string& s);

/// Models a pipeline needs: dpm needs `dpm`, pls needs `pls`, raw neither.
struct PipelineModels {
  const dpm::DpmModel* dpm = nullptr;
  const pls::PlsModel* pls = nullptr;
};

struct Template {
  std::string image_id;
  std::int64_t subject_id = 0;
  Eigen::VectorXd vector;
  Pipeline pipeline = Pipeline::raw;
};

/// Per-block vectors for the pipeline, concatenated in canonical descriptor
/// order and L2-normalized.
///   raw: descriptors as extracted, both modalities
///   dpm: source descriptors mapped through the network, target ones raw
///   pls: both modalities projected onto their latent scores
/// Throws InvalidConfiguration when a required model is missing or does not
/// fit the descriptors, InvalidInput for an all-zero template.
Template build_template(const features::DescriptorSet& dset, Pipeline pipeline, const PipelineModels& models);

/// Unit-norm copy; throws InvalidInput if the vector is (numerically) zero.
Eigen::VectorXd l2_normalized(const Eigen::VectorXd& v);

enum class Fusion { max, mean };

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Enrolled templates stored as rows of one matrix so that scoring a probe
/// is a single matrix-vector product.
class GalleryIndex {
 public:
  explicit GalleryIndex(const std::vector<Template>& templates);
  GalleryIndex(RowMatrix vectors, std::vector<std::string> image_ids, std::vector<std::int64_t> subject_ids,
               Pipeline pipeline);

  std::size_t size() const { return image_ids_.size(); }
  Eigen::Index dims() const { return vectors_.cols(); }
  Pipeline pipeline() const { return pipeline_; }
  const RowMatrix& vectors() const { return vectors_; }
  const std::vector<std::string>& image_ids() const { return image_ids_; }
  const std::vector<std::int64_t>& subject_ids() const { return subject_ids_; }
  /// Distinct enrolled subjects, ascending.
  const std::vector<std::int64_t>& subjects() const { return subjects_; }
  /// Position in subjects() of each template's subject.
  const std::vector<int>& subject_slots() const { return subject_slot_; }

  /// Cosine similarity of the probe against every template.
  Eigen::VectorXd similarities(const Template& probe) const;
  /// Column k holds the similarities of probes[k]. One matrix product per
  /// block of probes, so the gallery is streamed once per block.
  Eigen::MatrixXd similarities(const std::vector<Template>& probes) const;

  void save(const std::filesystem::path& path) const;
  static GalleryIndex load(const std::filesystem::path& path);

 private:
  void index_subjects();

  RowMatrix vectors_;
  std::vector<std::string> image_ids_;
  std::vector<std::int64_t> subject_ids_;
  std::vector<std::int64_t> subjects_;
  std::vector<int> subject_slot_;
  Pipeline pipeline_ = Pipeline::raw;
};

/// (template image id, similarity) for every gallery entry, in enrollment order.
std::vector<std::pair<std::string, double>> score(const Template& probe, const GalleryIndex& gallery);

struct SubjectScore {
  std::int64_t subject_id = 0;
  double score = 0.0;
};

/// Subjects ranked by fused score, descending; ties go to the lower subject id.
std::vector<SubjectScore> rank_subjects(const Eigen::VectorXd& similarities, const GalleryIndex& gallery,
                                        Fusion fusion = Fusion::max);

/// Fused score per enrolled subject, in subjects() order.
Eigen::VectorXd fuse_by_subject(const Eigen::VectorXd& similarities, const GalleryIndex& gallery,
                                Fusion fusion = Fusion::max);

struct Identification {
  std::int64_t predicted_subject = 0;
  std::vector<SubjectScore> ranking;
};

Identification identify(const Template& probe, const GalleryIndex& gallery, Fusion fusion = Fusion::max);
std::vector<Identification> identify(const std::vector<Template>& probes, const GalleryIndex& gallery,
                                     Fusion fusion = Fusion::max);

}  // namespace dpmface::matching
