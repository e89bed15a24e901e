#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpmface/dpm.hpp"
#include "dpmface/eval.hpp"
#include "dpmface/features.hpp"
#include "dpmface/manifest.hpp"
#include "dpmface/matching.hpp"
#include "dpmface/pls.hpp"

/// Orchestration shared by the command-line tool and the tests: descriptor
/// extraction over a manifest, training-pair assembly, and the full
/// evaluation suite.
namespace dpmface::pipeline {

struct SubjectSplit {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> test;
};

/// Subjects grouped by the manifest's split column. Throws ProtocolError if a
/// subject carries both tags or either group is empty.
SubjectSplit split_from_manifest(const Manifest& manifest);

/// PCA models plus one embedded descriptor set per manifest record.
struct FeatureStore {
  features::PcaModel source_pca;
  features::PcaModel target_pca;
  std::vector<features::DescriptorSet> sets;  ///< aligned with manifest.records

  const features::DescriptorSet& find(const std::string& image_id) const;

  /// Directory layout: pca_source.bin, pca_target.bin, index.csv and
  /// descriptors/<n>.dsc.
  void save(const std::filesystem::path& dir) const;
  /// Throws IoError naming `extract` when the store is missing.
  static FeatureStore load(const std::filesystem::path& dir);
};

struct RawImage {
  int width = 0;
  int height = 0;
  std::vector<features::RawDescriptor> descriptors;
};

/// Raw descriptors of every record, extracted in parallel.
std::vector<RawImage> extract_raw(const Manifest& manifest, const features::FeatureConfig& config);

/// Fits one PCA per modality on the raw descriptors of `pca_subjects` and
/// embeds every record.
FeatureStore build_store(const Manifest& manifest, const features::FeatureConfig& config,
                         const std::vector<std::int64_t>& pca_subjects);

/// Corresponding-block pairs between source and target images of the same
/// subject, session and enrollment order, pooled over `subjects` and
/// uniformly subsampled to at most `pool_size` pairs.
dpm::PairSet build_pairs(const Manifest& manifest, const FeatureStore& store,
                         const std::vector<std::int64_t>& subjects, std::size_t pool_size, std::uint64_t seed);

/// Row-wise copy of the pairs, as PLS expects.
void pairs_to_rows(const dpm::PairSet& pairs, Eigen::MatrixXd& x, Eigen::MatrixXd& y);

/// Templates for the given records.
std::vector<matching::Template> build_templates(const FeatureStore& store, const std::vector<std::size_t>& records,
                                                matching::Pipeline pipeline,
                                                const matching::PipelineModels& models);

struct PlsSelection {
  int components = 0;
  std::vector<double> rank1;  ///< per candidate
};

/// Chooses the PLS dimension by cross-modal latent-matching rank-1: fits on
/// every other training subject and identifies the remaining ones. Ties go
/// to the smaller dimension.
PlsSelection select_pls_components(const Manifest& manifest, const FeatureStore& store,
                                   const std::vector<std::int64_t>& train_subjects,
                                   const std::vector<int>& candidates, std::size_t pool_size, std::uint64_t seed);

struct SuiteConfig {
  features::FeatureConfig features;
  dpm::TrainConfig train;
  std::vector<int> deep_hidden{200, 200};
  std::vector<int> shallow_hidden{1000};
  bool run_shallow = true;
  bool run_pls = true;
  bool run_verification = true;
  /// Non-empty: select lambda on held-out pairs from these candidates.
  std::vector<double> lambda_grid;
  int pls_components = 20;
  /// Non-empty: choose pls_components from these with select_pls_components.
  std::vector<int> pls_candidates;
  std::size_t pair_pool = 1000000;
  std::uint64_t pair_seed = 11;
  eval::GallerySpec gallery_spec = eval::GallerySpec::one_per_subject;
  matching::Fusion fusion = matching::Fusion::max;
  eval::AttemptFusion attempt_fusion = eval::AttemptFusion::max;

  nlohmann::ordered_json to_json() const;
};

nlohmann::ordered_json train_config_json(const dpm::TrainConfig& config);

struct SuiteModels {
  dpm::DpmModel deep;
  std::optional<dpm::DpmModel> shallow;
  std::optional<pls::PlsModel> pls;
  dpm::TrainLog deep_log;
  std::optional<dpm::TrainLog> shallow_log;
};

struct SuiteResult {
  eval::Report report;
  SuiteModels models;
  /// Wall-clock seconds per stage (not part of the report).
  std::map<std::string, double> timings;
};

/// Extract, fit PCA, train PLS and DPM on the training subjects, then
/// evaluate raw / pls / dpm (and the shallow variant) cross-modally plus the
/// within-target reference on the test subjects. `manifest_comments` from a
/// generated dataset are echoed into the report.
SuiteResult run_suite(const Manifest& manifest, const SuiteConfig& config);

/// Cross-modal evaluation of one pipeline over prepared features and models.
eval::RunRecord evaluate(const std::string& name, const Manifest& manifest, const FeatureStore& store,
                         const eval::Protocol& protocol, matching::Pipeline pipeline,
                         const matching::PipelineModels& models, const SuiteConfig& config);

/// Plain-text rank-1 table of a report's runs.
std::string summary_table(const eval::Report& report);

}  // namespace dpmface::pipeline
