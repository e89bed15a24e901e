#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "dpmface/manifest.hpp"
#include "dpmface/matching.hpp"

namespace dpmface::eval {

enum class GallerySpec { one_per_subject, two_per_subject, all_per_subject };

const char* to_string(GallerySpec g);
GallerySpec gallery_spec_from_string(const std::string& s);

/// Gallery/probe construction over a manifest.
struct Protocol {
  GallerySpec gallery_spec = GallerySpec::one_per_subject;
  Modality gallery_modality = Modality::source;
  Modality probe_modality = Modality::target;
  /// Subjects enrolled in the gallery and used as probes.
  std::vector<std::int64_t> test_subjects;
  /// Subjects the models were trained on; must not meet test_subjects.
  std::vector<std::int64_t> train_subjects;
  /// Empty means no restriction.
  std::vector<std::string> probe_conditions;
  std::vector<int> probe_sessions;

  /// Throws ProtocolError if the subject sets overlap.
  void validate() const;
};

struct Selection {
  std::vector<std::size_t> gallery;  ///< manifest record indices
  std::vector<std::size_t> probes;
};

/// Gallery images are the first 1, 2 or all images of each test subject in
/// (enrollment_order, session, path) order. Images placed in the gallery are
/// never reused as probes. An empty gallery is a ProtocolError, and so are
/// empty probes unless `require_probes` is false (enrollment only).
Selection select(const Protocol& protocol, const Manifest& manifest, bool require_probes = true);

struct CmcCurve {
  /// rates[k - 1] = fraction of probes whose true subject ranks <= k.
  std::vector<double> rates;

  double at(int rank) const;
};

struct IdentificationResult {
  double rank1 = 0.0;
  CmcCurve cmc;
  std::vector<int> true_rank;  ///< per probe, 1-based
  std::vector<std::int64_t> predicted;
};

/// Closed-set identification of every probe. Throws ProtocolError when a
/// probe subject is not enrolled.
IdentificationResult run_identification(const std::vector<matching::Template>& probes,
                                        const matching::GalleryIndex& gallery,
                                        matching::Fusion fusion = matching::Fusion::max);

struct RocPoint {
  double far = 0.0;
  double tar = 0.0;
  double threshold = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  std::size_t genuine_count = 0;
  std::size_t imposter_count = 0;

  /// Linear interpolation of TAR at the given FAR.
  double tar_at(double far) const;
};

/// Threshold sweep over every distinct observed score, from above the
/// maximum (0, 0) down to the minimum (1, 1). Throws ProtocolError when
/// either list is empty.
RocCurve roc_from_scores(const std::vector<double>& genuine, const std::vector<double>& imposter);

/// How gallery templates of one subject turn into verification attempts.
enum class AttemptFusion {
  max,   ///< one attempt per (probe, subject) with the best template score
  none,  ///< one attempt per (probe, template)
};

struct Attempts {
  std::vector<double> genuine;
  std::vector<double> imposter;
};

Attempts collect_attempts(const std::vector<matching::Template>& probes, const matching::GalleryIndex& gallery,
                          AttemptFusion fusion = AttemptFusion::max);

RocCurve run_verification(const std::vector<matching::Template>& probes, const matching::GalleryIndex& gallery,
                          AttemptFusion fusion = AttemptFusion::max);

/// (dpm - raw) / (within - raw). Throws ProtocolError when within == raw.
double gap_bridged(double within, double raw_cross, double dpm_cross);

struct GapReport {
  double within = 0.0;
  double raw_cross = 0.0;
  double dpm_cross = 0.0;
  double bridged = 0.0;
};

GapReport modality_gap(double within, double raw_cross, double dpm_cross);

/// One evaluated (pipeline, protocol) combination.
struct RunRecord {
  std::string name;
  std::string pipeline;
  std::string protocol;
  std::size_t gallery_templates = 0;
  std::size_t gallery_subjects = 0;
  std::size_t probes = 0;
  IdentificationResult identification;
  std::optional<RocCurve> roc;
};

struct Report {
  nlohmann::ordered_json config;
  std::vector<RunRecord> runs;
  std::optional<GapReport> gap;
  nlohmann::ordered_json extra;
};

/// Writes report.json plus cmc_<run>.csv and roc_<run>.csv. Output depends
/// only on the report contents.
void emit_report(const std::filesystem::path& dir, const Report& report);

/// Renders the report document without touching the filesystem.
std::string render_report(const Report& report);

}  // namespace dpmface::eval
