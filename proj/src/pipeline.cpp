#include "dpmface/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dpmface/error.hpp"
#include "dpmface/rng.hpp"

namespace dpmface::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<int> layer_dims(int width, const std::vector<int>& hidden) {
  std::vector<int> dims{width};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(width);
  return dims;
}

template <typename T>
nlohmann::ordered_json list_json(const std::vector<T>& v) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (const auto& x : v) a.push_back(x);
  return a;
}

}  // namespace

SubjectSplit split_from_manifest(const Manifest& manifest) {
  std::set<std::int64_t> train;
  std::set<std::int64_t> test;
  for (const auto& r : manifest.records) {
    if (r.split == "train") train.insert(r.subject_id);
    else if (r.split == "test") test.insert(r.subject_id);
  }
  for (auto s : train) {
    if (test.count(s)) throw ProtocolError("subject " + std::to_string(s) + " is tagged both train and test");
  }
  if (train.empty() || test.empty()) throw ProtocolError("manifest needs both train and test subjects");
  return {{train.begin(), train.end()}, {test.begin(), test.end()}};
}

const features::DescriptorSet& FeatureStore::find(const std::string& image_id) const {
  for (const auto& s : sets) {
    if (s.image_id == image_id) return s;
  }
  throw InvalidInput("image '" + image_id + "' is not in the feature store");
}

void FeatureStore::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir / "descriptors", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  source_pca.save(dir / "pca_source.bin");
  target_pca.save(dir / "pca_target.bin");
  std::ofstream index(dir / "index.csv");
  if (!index) throw IoError("cannot write " + (dir / "index.csv").string());
  index << "file,image_id\n";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "descriptors/%06zu.dsc", i);
    sets[i].save(dir / name);
    index << name << ',' << sets[i].image_id << '\n';
  }
  if (!index) throw IoError("write failed for " + (dir / "index.csv").string());
}

FeatureStore FeatureStore::load(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "index.csv")) {
    throw IoError("no feature store at " + dir.string() + " (produce it with `dpmface extract`)");
  }
  FeatureStore store;
  store.source_pca = features::PcaModel::load(dir / "pca_source.bin");
  store.target_pca = features::PcaModel::load(dir / "pca_target.bin");
  std::ifstream index(dir / "index.csv");
  std::string line;
  std::getline(index, line);
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError("malformed feature store index line '" + line + "'");
    store.sets.push_back(features::DescriptorSet::load(dir / line.substr(0, comma)));
  }
  return store;
}

std::vector<RawImage> extract_raw(const Manifest& manifest, const features::FeatureConfig& config) {
  const auto n = static_cast<std::int64_t>(manifest.records.size());
  std::vector<RawImage> out(manifest.records.size());
  std::vector<std::exception_ptr> errors(manifest.records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      const GrayImage img = load_gray(manifest.resolve(manifest.records[k]));
      out[k].width = img.width();
      out[k].height = img.height();
      out[k].descriptors = features::raw_descriptors(img, config);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

FeatureStore build_store(const Manifest& manifest, const features::FeatureConfig& config,
                         const std::vector<std::int64_t>& pca_subjects) {
  const auto raw = extract_raw(manifest, config);
  const std::set<std::int64_t> fit_on(pca_subjects.begin(), pca_subjects.end());

  auto fit = [&](Modality modality) {
    std::size_t rows = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto& r = manifest.records[i];
      if (r.modality == modality && fit_on.count(r.subject_id)) rows += raw[i].descriptors.size();
    }
    if (rows == 0) {
      throw ProtocolError(std::string("no ") + to_string(modality) + " images from the PCA subjects");
    }
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(rows), features::kDescriptorDims);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto& r = manifest.records[i];
      if (r.modality != modality || !fit_on.count(r.subject_id)) continue;
      for (const auto& d : raw[i].descriptors) samples.row(row++) = d.values.transpose();
    }
    return features::pca_fit(samples, config.pca_dims);
  };

  FeatureStore store;
  store.source_pca = fit(Modality::source);
  store.target_pca = fit(Modality::target);
  store.sets.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = manifest.records[i];
    const auto& pca = r.modality == Modality::source ? store.source_pca : store.target_pca;
    store.sets[i] = features::embed_all(raw[i].descriptors, pca, raw[i].width, raw[i].height, r.path,
                                        r.subject_id, r.modality);
  }
  return store;
}

dpm::PairSet build_pairs(const Manifest& manifest, const FeatureStore& store,
                         const std::vector<std::int64_t>& subjects, std::size_t pool_size, std::uint64_t seed) {
  if (store.sets.size() != manifest.records.size()) {
    throw InvalidInput("feature store does not match the manifest (re-run `dpmface extract`)");
  }
  const std::set<std::int64_t> wanted(subjects.begin(), subjects.end());
  using Key = std::tuple<std::int64_t, int, int>;
  std::map<Key, std::size_t> targets;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.modality == Modality::target && wanted.count(r.subject_id)) {
      targets[{r.subject_id, r.session, r.enrollment_order}] = i;
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> image_pairs;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.modality != Modality::source || !wanted.count(r.subject_id)) continue;
    const auto it = targets.find({r.subject_id, r.session, r.enrollment_order});
    if (it != targets.end()) image_pairs.emplace_back(i, it->second);
  }
  if (image_pairs.empty()) throw ProtocolError("no corresponding source/target images among the training subjects");

  // (image pair, block) references into the pooled set.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> refs;
  for (std::size_t p = 0; p < image_pairs.size(); ++p) {
    const auto& xs = store.sets[image_pairs[p].first];
    const auto& ts = store.sets[image_pairs[p].second];
    if (xs.count() != ts.count()) {
      throw InvalidInput("block grids differ between " + xs.image_id + " and " + ts.image_id);
    }
    for (Eigen::Index b = 0; b < xs.count(); ++b) {
      refs.emplace_back(static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(b));
    }
  }
  if (pool_size > 0 && refs.size() > pool_size) {
    Rng rng(seed);
    // Partial Fisher-Yates: the first pool_size entries are a uniform sample.
    for (std::size_t i = 0; i < pool_size; ++i) {
      const std::size_t j = i + uniform_index(rng, refs.size() - i);
      std::swap(refs[i], refs[j]);
    }
    refs.resize(pool_size);
    std::sort(refs.begin(), refs.end());
  }

  const Eigen::Index dims = store.sets[image_pairs.front().first].dims();
  dpm::PairSet pairs;
  pairs.sources.resize(dims, static_cast<Eigen::Index>(refs.size()));
  pairs.targets.resize(dims, static_cast<Eigen::Index>(refs.size()));
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto& [p, b] = refs[k];
    pairs.sources.col(static_cast<Eigen::Index>(k)) = store.sets[image_pairs[p].first].values.row(b).transpose();
    pairs.targets.col(static_cast<Eigen::Index>(k)) = store.sets[image_pairs[p].second].values.row(b).transpose();
  }
  return pairs;
}

void pairs_to_rows(const dpm::PairSet& pairs, Eigen::MatrixXd& x, Eigen::MatrixXd& y) {
  x = pairs.sources.transpose();
  y = pairs.targets.transpose();
}

std::vector<matching::Template> build_templates(const FeatureStore& store, const std::vector<std::size_t>& records,
                                                matching::Pipeline pipeline,
                                                const matching::PipelineModels& models) {
  std::vector<matching::Template> out(records.size());
  std::vector<std::exception_ptr> errors(records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(records.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      out[k] = matching::build_template(store.sets.at(records[k]), pipeline, models);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

PlsSelection select_pls_components(const Manifest& manifest, const FeatureStore& store,
                                   const std::vector<std::int64_t>& train_subjects,
                                   const std::vector<int>& candidates, std::size_t pool_size, std::uint64_t seed) {
  if (candidates.empty()) throw InvalidParameter("no PLS dimensions to choose from");
  if (train_subjects.size() < 4) throw ProtocolError("PLS selection needs at least 4 training subjects");
  std::vector<std::int64_t> fit_subjects, held_out;
  for (std::size_t i = 0; i < train_subjects.size(); ++i) {
    (i % 2 == 0 ? fit_subjects : held_out).push_back(train_subjects[i]);
  }
  const dpm::PairSet pairs = build_pairs(manifest, store, fit_subjects, pool_size, seed);
  Eigen::MatrixXd x, y;
  pairs_to_rows(pairs, x, y);
  const int widest = *std::max_element(candidates.begin(), candidates.end());
  const pls::PlsModel full = pls::pls_fit(x, y, widest).model;

  eval::Protocol protocol;
  protocol.train_subjects = fit_subjects;
  protocol.test_subjects = held_out;
  const eval::Selection sel = eval::select(protocol, manifest);
  PlsSelection out;
  double best = -1.0;
  for (int p : candidates) {
    const pls::PlsModel model = full.truncated(p);
    const matching::PipelineModels models{nullptr, &model};
    const matching::GalleryIndex gallery(build_templates(store, sel.gallery, matching::Pipeline::pls, models));
    const auto probes = build_templates(store, sel.probes, matching::Pipeline::pls, models);
    const double rate = eval::run_identification(probes, gallery).rank1;
    out.rank1.push_back(rate);
    if (rate > best || (rate == best && p < out.components)) {
      best = rate;
      out.components = p;
    }
  }
  return out;
}

nlohmann::ordered_json train_config_json(const dpm::TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lambda"] = c.lambda;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["shuffle"] = c.shuffle;
  j["regularize_output"] = c.regularize_output;
  j["standardize_inputs"] = c.standardize_inputs;
  j["plateau_tolerance"] = c.plateau_tolerance;
  j["holdout_fraction"] = c.holdout_fraction;
  j["patience"] = c.patience;
  return j;
}

nlohmann::ordered_json SuiteConfig::to_json() const {
  nlohmann::ordered_json j;
  j["features"] = {{"median_radius", features.preprocess.median_radius},
                   {"dog_inner", features.preprocess.dog_inner},
                   {"dog_outer", features.preprocess.dog_outer},
                   {"block", features.block},
                   {"stride", features.stride},
                   {"scales", list_json(features.scales)},
                   {"pca_dims", features.pca_dims}};
  j["train"] = train_config_json(train);
  j["deep_hidden"] = list_json(deep_hidden);
  j["shallow_hidden"] = list_json(shallow_hidden);
  j["run_shallow"] = run_shallow;
  j["run_pls"] = run_pls;
  j["run_verification"] = run_verification;
  j["lambda_grid"] = list_json(lambda_grid);
  j["pls_components"] = pls_components;
  j["pls_candidates"] = list_json(pls_candidates);
  j["pair_pool"] = pair_pool;
  j["pair_seed"] = pair_seed;
  j["gallery_spec"] = eval::to_string(gallery_spec);
  j["fusion"] = fusion == matching::Fusion::max ? "max" : "mean";
  j["attempt_fusion"] = attempt_fusion == eval::AttemptFusion::max ? "max" : "none";
  return j;
}

eval::RunRecord evaluate(const std::string& name, const Manifest& manifest, const FeatureStore& store,
                         const eval::Protocol& protocol, matching::Pipeline pipeline,
                         const matching::PipelineModels& models, const SuiteConfig& config) {
  const eval::Selection sel = eval::select(protocol, manifest);
  const auto gallery_templates = build_templates(store, sel.gallery, pipeline, models);
  const auto probes = build_templates(store, sel.probes, pipeline, models);
  const matching::GalleryIndex gallery(gallery_templates);

  eval::RunRecord run;
  run.name = name;
  run.pipeline = matching::to_string(pipeline);
  run.protocol = std::string(eval::to_string(protocol.gallery_spec)) + ":" + to_string(protocol.gallery_modality) +
                 "->" + to_string(protocol.probe_modality);
  run.gallery_templates = gallery.size();
  run.gallery_subjects = gallery.subjects().size();
  run.probes = probes.size();
  run.identification = eval::run_identification(probes, gallery, config.fusion);
  if (config.run_verification) run.roc = eval::run_verification(probes, gallery, config.attempt_fusion);
  return run;
}

SuiteResult run_suite(const Manifest& manifest, const SuiteConfig& config) {
  config.train.validate();
  SuiteResult result;
  const SubjectSplit split = split_from_manifest(manifest);

  auto t0 = Clock::now();
  const FeatureStore store = build_store(manifest, config.features, split.train);
  result.timings["extract"] = seconds_since(t0);

  const dpm::PairSet pairs = build_pairs(manifest, store, split.train, config.pair_pool, config.pair_seed);
  const int width = static_cast<int>(pairs.sources.rows());

  auto train_one = [&](const std::vector<int>& hidden) {
    const auto dims = layer_dims(width, hidden);
    dpm::TrainResult r = config.lambda_grid.empty()
                             ? dpm::train(pairs, config.train, dims)
                             : dpm::train_with_lambda_search(pairs, config.train, dims, config.lambda_grid);
    r.model.source_pca_id = store.source_pca.id();
    r.model.target_pca_id = store.target_pca.id();
    return r;
  };

  t0 = Clock::now();
  {
    dpm::TrainResult deep = train_one(config.deep_hidden);
    result.models.deep = std::move(deep.model);
    result.models.deep_log = std::move(deep.log);
  }
  result.timings["train_deep"] = seconds_since(t0);
  if (config.run_shallow) {
    t0 = Clock::now();
    dpm::TrainResult shallow = train_one(config.shallow_hidden);
    result.models.shallow = std::move(shallow.model);
    result.models.shallow_log = std::move(shallow.log);
    result.timings["train_shallow"] = seconds_since(t0);
  }
  if (config.run_pls) {
    t0 = Clock::now();
    Eigen::MatrixXd x, y;
    int components = config.pls_components;
    if (!config.pls_candidates.empty()) {
      const PlsSelection choice =
          select_pls_components(manifest, store, split.train, config.pls_candidates, config.pair_pool, config.pair_seed);
      components = choice.components;
      result.report.extra["pls_selection"] = {{"candidates", list_json(config.pls_candidates)},
                                              {"held_out_rank1", list_json(choice.rank1)},
                                              {"components", components}};
    }
    pairs_to_rows(pairs, x, y);
    result.models.pls = pls::pls_fit(x, y, components).model;
    result.timings["train_pls"] = seconds_since(t0);
  }

  eval::Protocol cross;
  cross.gallery_spec = config.gallery_spec;
  cross.gallery_modality = Modality::source;
  cross.probe_modality = Modality::target;
  cross.train_subjects = split.train;
  cross.test_subjects = split.test;
  eval::Protocol within = cross;
  within.gallery_modality = Modality::target;

  t0 = Clock::now();
  eval::Report& report = result.report;
  report.config = config.to_json();
  report.config["train_subjects"] = list_json(split.train);
  report.config["test_subjects"] = list_json(split.test);
  if (!manifest.comments.empty()) report.config["dataset"] = list_json(manifest.comments);

  report.runs.push_back(evaluate("raw", manifest, store, cross, matching::Pipeline::raw, {}, config));
  if (result.models.pls) {
    report.runs.push_back(
        evaluate("pls", manifest, store, cross, matching::Pipeline::pls, {nullptr, &*result.models.pls}, config));
  }
  report.runs.push_back(
      evaluate("dpm", manifest, store, cross, matching::Pipeline::dpm, {&result.models.deep, nullptr}, config));
  if (result.models.shallow) {
    report.runs.push_back(evaluate("dpm_shallow", manifest, store, cross, matching::Pipeline::dpm,
                                   {&*result.models.shallow, nullptr}, config));
  }
  report.runs.push_back(evaluate("within_target", manifest, store, within, matching::Pipeline::raw, {}, config));
  result.timings["evaluate"] = seconds_since(t0);

  const double within_rate = report.runs.back().identification.rank1;
  const double raw_rate = report.runs.front().identification.rank1;
  double dpm_rate = 0.0;
  for (const auto& r : report.runs) {
    if (r.name == "dpm") dpm_rate = r.identification.rank1;
  }
  if (within_rate != raw_rate) report.gap = eval::modality_gap(within_rate, raw_rate, dpm_rate);

  nlohmann::ordered_json training;
  training["pairs"] = pairs.size();
  auto log_json = [](const dpm::TrainLog& log) {
    nlohmann::ordered_json j;
    j["epochs_run"] = log.epoch_loss.size();
    j["best_epoch"] = log.best_epoch;
    j["final_loss"] = log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back();
    j["epoch_loss"] = list_json(log.epoch_loss);
    j["holdout_loss"] = list_json(log.holdout_loss);
    return j;
  };
  training["deep"] = log_json(result.models.deep_log);
  training["deep"]["lambda"] = result.models.deep.config.lambda;
  if (result.models.shallow_log) {
    training["shallow"] = log_json(*result.models.shallow_log);
    training["shallow"]["lambda"] = result.models.shallow->config.lambda;
  }
  report.extra["training"] = training;
  return result;
}

std::string summary_table(const eval::Report& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %-8s %8s %8s %10s\n", "run", "pipeline", "rank1", "rank5", "TAR@1%FAR");
  out << line;
  for (const auto& r : report.runs) {
    const double tar = r.roc ? r.roc->tar_at(0.01) : 0.0;
    std::snprintf(line, sizeof line, "%-16s %-8s %7.2f%% %7.2f%% %9.2f%%\n", r.name.c_str(), r.pipeline.c_str(),
                  100.0 * r.identification.rank1, 100.0 * r.identification.cmc.at(5), 100.0 * tar);
    out << line;
  }
  if (report.gap) {
    std::snprintf(line, sizeof line, "gap bridged: %.1f%%\n", 100.0 * report.gap->bridged);
    out << line;
  }
  return out.str();
}

}  // namespace dpmface::pipeline
