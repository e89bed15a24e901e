#include "dpmface/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "dpmface/error.hpp"

namespace dpmface::eval {

const char* to_string(GallerySpec g) {
  switch (g) {
    case GallerySpec::one_per_subject:
      return "one_per_subject";
    case GallerySpec::two_per_subject:
      return "two_per_subject";
    case GallerySpec::all_per_subject:
      return "all_per_subject";
  }
  return "?";
}

GallerySpec gallery_spec_from_string(const std::string& s) {
  if (s == "one_per_subject" || s == "1") return GallerySpec::one_per_subject;
  if (s == "two_per_subject" || s == "2") return GallerySpec::two_per_subject;
  if (s == "all_per_subject" || s == "all") return GallerySpec::all_per_subject;
  throw InvalidParameter("unknown gallery spec '" + s + "'");
}

void Protocol::validate() const {
  std::vector<std::int64_t> a = test_subjects;
  std::vector<std::int64_t> b = train_subjects;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::int64_t> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  if (!both.empty()) {
    throw ProtocolError("training and test subjects overlap (e.g. subject " + std::to_string(both.front()) + ")");
  }
  if (test_subjects.empty()) throw ProtocolError("protocol has no test subjects");
}

Selection select(const Protocol& protocol, const Manifest& manifest, bool require_probes) {
  protocol.validate();
  const auto is_test = [&](std::int64_t s) {
    return std::find(protocol.test_subjects.begin(), protocol.test_subjects.end(), s) != protocol.test_subjects.end();
  };

  std::map<std::int64_t, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ImageRecord& r = manifest.records[i];
    if (r.modality == protocol.gallery_modality && is_test(r.subject_id)) by_subject[r.subject_id].push_back(i);
  }
  const std::size_t per_subject = protocol.gallery_spec == GallerySpec::one_per_subject   ? 1
                                  : protocol.gallery_spec == GallerySpec::two_per_subject ? 2
                                                                                          : SIZE_MAX;
  Selection sel;
  std::vector<bool> in_gallery(manifest.records.size(), false);
  for (auto& [subject, idx] : by_subject) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const ImageRecord& ra = manifest.records[a];
      const ImageRecord& rb = manifest.records[b];
      return std::tie(ra.enrollment_order, ra.session, ra.path) < std::tie(rb.enrollment_order, rb.session, rb.path);
    });
    for (std::size_t k = 0; k < std::min(per_subject, idx.size()); ++k) {
      sel.gallery.push_back(idx[k]);
      in_gallery[idx[k]] = true;
    }
  }

  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ImageRecord& r = manifest.records[i];
    if (in_gallery[i] || r.modality != protocol.probe_modality || !is_test(r.subject_id)) continue;
    if (!protocol.probe_conditions.empty() &&
        std::find(protocol.probe_conditions.begin(), protocol.probe_conditions.end(), r.condition) ==
            protocol.probe_conditions.end()) {
      continue;
    }
    if (!protocol.probe_sessions.empty() &&
        std::find(protocol.probe_sessions.begin(), protocol.probe_sessions.end(), r.session) ==
            protocol.probe_sessions.end()) {
      continue;
    }
    sel.probes.push_back(i);
  }
  std::sort(sel.gallery.begin(), sel.gallery.end());
  if (sel.gallery.empty()) throw ProtocolError("protocol selects an empty gallery");
  if (require_probes && sel.probes.empty()) throw ProtocolError("protocol selects no probes");
  return sel;
}

double CmcCurve::at(int rank) const {
  if (rates.empty()) return 0.0;
  if (rank < 1) return 0.0;
  return rates[static_cast<std::size_t>(std::min<int>(rank, static_cast<int>(rates.size()))) - 1];
}

IdentificationResult run_identification(const std::vector<matching::Template>& probes,
                                        const matching::GalleryIndex& gallery, matching::Fusion fusion) {
  if (probes.empty()) throw ProtocolError("no probes to identify");
  const auto& subjects = gallery.subjects();
  IdentificationResult result;
  std::vector<std::size_t> rank_hist(subjects.size() + 1, 0);
  for (const auto& probe : probes) {
    if (!std::binary_search(subjects.begin(), subjects.end(), probe.subject_id)) {
      throw ProtocolError("probe " + probe.image_id + " belongs to subject " + std::to_string(probe.subject_id) +
                          ", which is not enrolled");
    }
  }
  const Eigen::MatrixXd sims = gallery.similarities(probes);
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const auto& probe = probes[p];
    const auto ranking = matching::rank_subjects(sims.col(static_cast<Eigen::Index>(p)), gallery, fusion);
    const auto it = std::find_if(ranking.begin(), ranking.end(),
                                 [&](const matching::SubjectScore& s) { return s.subject_id == probe.subject_id; });
    const int rank = static_cast<int>(it - ranking.begin()) + 1;
    result.true_rank.push_back(rank);
    result.predicted.push_back(ranking.front().subject_id);
    ++rank_hist[static_cast<std::size_t>(rank)];
  }
  const auto n = static_cast<double>(probes.size());
  std::size_t cumulative = 0;
  for (std::size_t k = 1; k <= subjects.size(); ++k) {
    cumulative += rank_hist[k];
    result.cmc.rates.push_back(static_cast<double>(cumulative) / n);
  }
  result.rank1 = result.cmc.rates.front();
  return result;
}

double RocCurve::tar_at(double far) const {
  if (points.empty()) return 0.0;
  // The last point at or below `far` has the highest TAR among them.
  const auto hi = std::upper_bound(points.begin(), points.end(), far,
                                   [](double f, const RocPoint& p) { return f < p.far; });
  if (hi == points.end()) return points.back().tar;
  if (hi == points.begin()) return 0.0;
  const RocPoint& a = *(hi - 1);
  const RocPoint& b = *hi;
  return a.tar + (b.tar - a.tar) * (far - a.far) / (b.far - a.far);
}

RocCurve roc_from_scores(const std::vector<double>& genuine, const std::vector<double>& imposter) {
  if (genuine.empty() || imposter.empty()) {
    throw ProtocolError("verification needs both genuine and imposter attempts");
  }
  struct Attempt {
    double score;
    bool genuine;
  };
  std::vector<Attempt> all;
  all.reserve(genuine.size() + imposter.size());
  for (double s : genuine) all.push_back({s, true});
  for (double s : imposter) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Attempt& a, const Attempt& b) { return a.score > b.score; });

  RocCurve roc;
  roc.genuine_count = genuine.size();
  roc.imposter_count = imposter.size();
  const auto n_gen = static_cast<double>(genuine.size());
  const auto n_imp = static_cast<double>(imposter.size());
  roc.points.push_back({0.0, 0.0, all.front().score + 1.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double threshold = all[i].score;
    // Accept every attempt with score >= threshold.
    while (i < all.size() && all[i].score == threshold) {
      (all[i].genuine ? tp : fp) += 1;
      ++i;
    }
    roc.points.push_back({static_cast<double>(fp) / n_imp, static_cast<double>(tp) / n_gen, threshold});
  }
  return roc;
}

Attempts collect_attempts(const std::vector<matching::Template>& probes, const matching::GalleryIndex& gallery,
                          AttemptFusion fusion) {
  Attempts attempts;
  const Eigen::MatrixXd all = gallery.similarities(probes);
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const auto& probe = probes[p];
    const Eigen::VectorXd sims = all.col(static_cast<Eigen::Index>(p));
    if (fusion == AttemptFusion::max) {
      const Eigen::VectorXd fused = matching::fuse_by_subject(sims, gallery, matching::Fusion::max);
      for (std::size_t k = 0; k < gallery.subjects().size(); ++k) {
        (gallery.subjects()[k] == probe.subject_id ? attempts.genuine : attempts.imposter)
            .push_back(fused[static_cast<Eigen::Index>(k)]);
      }
    } else {
      for (std::size_t i = 0; i < gallery.size(); ++i) {
        (gallery.subject_ids()[i] == probe.subject_id ? attempts.genuine : attempts.imposter)
            .push_back(sims[static_cast<Eigen::Index>(i)]);
      }
    }
  }
  return attempts;
}

RocCurve run_verification(const std::vector<matching::Template>& probes, const matching::GalleryIndex& gallery,
                          AttemptFusion fusion) {
  const Attempts a = collect_attempts(probes, gallery, fusion);
  return roc_from_scores(a.genuine, a.imposter);
}

double gap_bridged(double within, double raw_cross, double dpm_cross) {
  if (within == raw_cross) throw ProtocolError("no modality gap to bridge (within == raw)");
  return (dpm_cross - raw_cross) / (within - raw_cross);
}

GapReport modality_gap(double within, double raw_cross, double dpm_cross) {
  return {within, raw_cross, dpm_cross, gap_bridged(within, raw_cross, dpm_cross)};
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::string render_report(const Report& report) {
  nlohmann::ordered_json doc;
  doc["format"] = "dpmface-report";
  doc["version"] = 1;
  doc["config"] = report.config;
  auto& runs = doc["runs"] = nlohmann::ordered_json::array();
  for (const auto& run : report.runs) {
    nlohmann::ordered_json r;
    r["name"] = run.name;
    r["pipeline"] = run.pipeline;
    r["protocol"] = run.protocol;
    r["gallery_templates"] = run.gallery_templates;
    r["gallery_subjects"] = run.gallery_subjects;
    r["probes"] = run.probes;
    r["rank1"] = run.identification.rank1;
    r["rank5"] = run.identification.cmc.at(5);
    r["cmc_file"] = "cmc_" + run.name + ".csv";
    if (run.roc) {
      r["genuine_attempts"] = run.roc->genuine_count;
      r["imposter_attempts"] = run.roc->imposter_count;
      r["tar_at_far_0.01"] = run.roc->tar_at(0.01);
      r["tar_at_far_0.1"] = run.roc->tar_at(0.1);
      r["roc_file"] = "roc_" + run.name + ".csv";
    }
    runs.push_back(std::move(r));
  }
  if (report.gap) {
    doc["modality_gap"] = {{"within_target_rank1", report.gap->within},
                           {"raw_cross_rank1", report.gap->raw_cross},
                           {"dpm_cross_rank1", report.gap->dpm_cross},
                           {"gap_bridged", report.gap->bridged}};
  }
  if (!report.extra.is_null()) doc["extra"] = report.extra;
  return doc.dump(2) + "\n";
}

void emit_report(const std::filesystem::path& dir, const Report& report) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  write_text(dir / "report.json", render_report(report));
  for (const auto& run : report.runs) {
    std::string cmc = "rank,rate\n";
    for (std::size_t k = 0; k < run.identification.cmc.rates.size(); ++k) {
      cmc += std::to_string(k + 1) + "," + fmt(run.identification.cmc.rates[k]) + "\n";
    }
    write_text(dir / ("cmc_" + run.name + ".csv"), cmc);
    if (run.roc) {
      std::string roc = "far,tar,threshold\n";
      for (const auto& p : run.roc->points) roc += fmt(p.far) + "," + fmt(p.tar) + "," + fmt(p.threshold) + "\n";
      write_text(dir / ("roc_" + run.name + ".csv"), roc);
    }
  }
}

}  // namespace dpmface::eval
