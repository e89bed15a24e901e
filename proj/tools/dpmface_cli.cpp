// dpmface: cross-modal face matching pipeline driver.
//
// Exit codes: 0 success, 1 usage error, 2 data/protocol error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpmface/error.hpp"
#include "dpmface/eval.hpp"
#include "dpmface/pipeline.hpp"
#include "dpmface/rng.hpp"
#include "dpmface/synth.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace dpmface;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

void require_artifact(const fs::path& path, const std::string& what, const std::string& producer) {
  if (!fs::exists(path)) {
    throw IoError(what + " '" + path.string() + "' not found (produce it with `dpmface " + producer + "`)");
  }
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw InvalidParameter("bad integer list '" + s + "'");
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw InvalidParameter("bad number list '" + s + "'");
    }
  }
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Option groups shared between commands. Each binds CLI options to a struct
// that already holds the defaults.

struct FeatureOpts {
  features::FeatureConfig cfg;
  std::string scales = "0.6,1.0";

  void add(CLI::App* app) {
    app->add_option("--median-radius", cfg.preprocess.median_radius, "Median filter radius")->capture_default_str();
    app->add_option("--dog-inner", cfg.preprocess.dog_inner, "DoG inner sigma")->capture_default_str();
    app->add_option("--dog-outer", cfg.preprocess.dog_outer, "DoG outer sigma")->capture_default_str();
    app->add_option("--block", cfg.block, "Block size in pixels")->capture_default_str();
    app->add_option("--stride", cfg.stride, "Block stride in pixels")->capture_default_str();
    app->add_option("--scales", scales, "Comma-separated smoothing sigmas")->capture_default_str();
    app->add_option("--pca-dims", cfg.pca_dims, "PCA output dimensions")->capture_default_str();
  }
  features::FeatureConfig resolve() {
    cfg.scales = parse_double_list(scales);
    return cfg;
  }
};

struct TrainOpts {
  dpm::TrainConfig cfg;
  std::string lambda_grid;
  bool no_shuffle = false;
  bool no_standardize = false;

  void add(CLI::App* app) {
    app->add_option("--lambda", cfg.lambda, "Regularization weight")->capture_default_str();
    app->add_option("--lambda-grid", lambda_grid, "Select lambda on held-out pairs from this list");
    app->add_option("--learning-rate", cfg.learning_rate, "SGD learning rate")->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size, "Minibatch size")->capture_default_str();
    app->add_option("--epochs", cfg.epochs, "Maximum epochs")->capture_default_str();
    app->add_option("--seed", cfg.seed, "Initialization and shuffling seed")->capture_default_str();
    app->add_flag("--no-shuffle", no_shuffle, "Keep pair order fixed");
    app->add_flag("--regularize-output", cfg.regularize_output, "Also penalize output-layer weights");
    app->add_flag("--no-standardize", no_standardize, "Feed descriptor values unscaled");
    app->add_option("--plateau-tolerance", cfg.plateau_tolerance, "Relative improvement below which the rate halves")
        ->capture_default_str();
    app->add_option("--holdout-fraction", cfg.holdout_fraction, "Pairs held out for early stopping")
        ->capture_default_str();
    app->add_option("--patience", cfg.patience, "Epochs without held-out improvement before stopping")
        ->capture_default_str();
  }
  dpm::TrainConfig resolve() {
    cfg.shuffle = !no_shuffle;
    cfg.standardize_inputs = !no_standardize;
    cfg.validate();
    return cfg;
  }
  std::vector<double> grid() const { return parse_double_list(lambda_grid); }
};

struct PairOpts {
  std::size_t pool = 1000000;
  std::uint64_t seed = 11;
  std::string subjects;

  void add(CLI::App* app) {
    app->add_option("--pair-pool", pool, "Maximum number of training pairs")->capture_default_str();
    app->add_option("--pair-seed", seed, "Seed for pair subsampling")->capture_default_str();
    app->add_option("--train-subjects", subjects, "Training subject ids, e.g. 0-19 (default: split column)");
  }
  std::vector<std::int64_t> resolve(const Manifest& m) const {
    return subjects.empty() ? pipeline::split_from_manifest(m).train : parse_id_list(subjects);
  }
};

struct ProtocolOpts {
  std::string gallery_spec = "one_per_subject";
  std::string gallery_modality = "source";
  std::string probe_modality = "target";
  std::string subjects;
  std::vector<std::string> conditions;
  std::string sessions;

  void add(CLI::App* app) {
    app->add_option("--gallery-spec", gallery_spec, "one_per_subject, two_per_subject or all_per_subject")
        ->capture_default_str();
    app->add_option("--gallery-modality", gallery_modality, "source or target")->capture_default_str();
    app->add_option("--probe-modality", probe_modality, "source or target")->capture_default_str();
    app->add_option("--test-subjects", subjects, "Test subject ids (default: split column)");
    app->add_option("--probe-condition", conditions, "Restrict probes to these condition tags");
    app->add_option("--probe-sessions", sessions, "Restrict probes to these sessions, e.g. 0,1");
  }
  eval::Protocol resolve(const Manifest& m) const {
    eval::Protocol p;
    p.gallery_spec = eval::gallery_spec_from_string(gallery_spec);
    p.gallery_modality = modality_from_string(gallery_modality);
    p.probe_modality = modality_from_string(probe_modality);
    std::vector<std::int64_t> train;
    for (const auto& r : m.records) {
      if (r.split == "train") train.push_back(r.subject_id);
    }
    std::sort(train.begin(), train.end());
    train.erase(std::unique(train.begin(), train.end()), train.end());
    p.train_subjects = train;
    p.test_subjects = subjects.empty() ? pipeline::split_from_manifest(m).test : parse_id_list(subjects);
    p.probe_conditions = conditions;
    p.probe_sessions = parse_int_list(sessions);
    p.validate();
    return p;
  }
};

struct SynthOpts {
  synth::SynthConfig cfg = synth::default_benchmark();

  void add(CLI::App* app) {
    auto& t = cfg.transform;
    auto& n = cfg.nuisance;
    app->add_option("--subjects", cfg.n_subjects, "Number of subjects")->capture_default_str();
    app->add_option("--train-count", cfg.n_train, "Subjects tagged as training")->capture_default_str();
    app->add_option("--images", cfg.images_per_subject, "Images per subject per modality")->capture_default_str();
    app->add_option("--sessions", cfg.sessions, "Sessions per subject")->capture_default_str();
    app->add_option("--width", cfg.width, "Image width")->capture_default_str();
    app->add_option("--height", cfg.height, "Image height")->capture_default_str();
    app->add_option("--blobs", cfg.blobs_per_identity, "Blobs per identity")->capture_default_str();
    app->add_option("--blob-sigma-min", cfg.blob_sigma_min, "Smallest blob sigma (fraction of size)")
        ->capture_default_str();
    app->add_option("--blob-sigma-max", cfg.blob_sigma_max, "Largest blob sigma (fraction of size)")
        ->capture_default_str();
    app->add_option("--identity-seed", cfg.identity_seed, "Identity seed")->capture_default_str();
    app->add_option("--nuisance-seed", cfg.nuisance_seed, "Nuisance seed")->capture_default_str();
    app->add_option("--noise-seed", cfg.noise_seed, "Sensor noise seed")->capture_default_str();
    app->add_option("--source-bits", cfg.source_bits, "Source PGM bit depth")->capture_default_str();
    app->add_option("--target-bits", cfg.target_bits, "Target PGM bit depth")->capture_default_str();
    app->add_option("--warp", t.warp, "Warp displacement in pixels")->capture_default_str();
    app->add_option("--emission", t.emission, "Emission field strength")->capture_default_str();
    app->add_option("--fold", t.fold, "Tone fold strength in [0,1]")->capture_default_str();
    app->add_option("--fold-center", t.fold_center, "Tone fold level")->capture_default_str();
    app->add_option("--gamma", t.gamma, "Tone curve exponent")->capture_default_str();
    app->add_option("--invert", t.invert, "Invert tones")->capture_default_str();
    app->add_option("--polarity", t.polarity, "Polarity field strength in [0,1]")->capture_default_str();
    app->add_option("--blur", t.blur_sigma, "Target blur sigma")->capture_default_str();
    app->add_option("--downsample", t.downsample, "Target downsample factor")->capture_default_str();
    app->add_option("--noise", t.noise_sigma, "Target noise sigma")->capture_default_str();
    app->add_option("--shift", n.max_shift, "Capture translation range")->capture_default_str();
    app->add_option("--expression", n.expression, "Capture expression jitter")->capture_default_str();
    app->add_option("--brightness", n.brightness, "Rendering brightness jitter")->capture_default_str();
    app->add_option("--contrast", n.contrast, "Rendering contrast jitter")->capture_default_str();
    app->add_option("--render-shift", n.render_shift, "Rendering translation jitter")->capture_default_str();
    app->add_option("--render-expression", n.render_expression, "Rendering expression jitter")
        ->capture_default_str();
  }
};

struct SuiteOpts {
  FeatureOpts features;
  TrainOpts train;
  PairOpts pairs;
  std::string deep_hidden = "200,200";
  std::string shallow_hidden = "1000";
  bool no_shallow = false;
  bool no_pls = false;
  bool no_verification = false;
  int pls_components = 20;
  std::string pls_select;
  std::string gallery_spec = "one_per_subject";
  std::string fusion = "max";
  std::string attempt_fusion = "max";

  void add(CLI::App* app) {
    features.add(app);
    train.add(app);
    app->add_option("--pair-pool", pairs.pool, "Maximum number of training pairs")->capture_default_str();
    app->add_option("--pair-seed", pairs.seed, "Seed for pair subsampling")->capture_default_str();
    app->add_option("--deep-hidden", deep_hidden, "Hidden widths of the deep model")->capture_default_str();
    app->add_option("--shallow-hidden", shallow_hidden, "Hidden widths of the shallow model")
        ->capture_default_str();
    app->add_flag("--no-shallow", no_shallow, "Skip the one-hidden-layer model");
    app->add_flag("--no-pls", no_pls, "Skip the PLS baseline");
    app->add_flag("--no-verification", no_verification, "Skip ROC computation");
    app->add_option("--pls-components", pls_components, "PLS latent dimensions")->capture_default_str();
    app->add_option("--pls-select", pls_select, "Choose PLS dimensions from this list on held-out subjects");
    app->add_option("--gallery-spec", gallery_spec, "Gallery images per subject")->capture_default_str();
    app->add_option("--fusion", fusion, "Identification fusion: max or mean")->capture_default_str();
    app->add_option("--attempt-fusion", attempt_fusion, "Verification attempts: max or none")
        ->capture_default_str();
  }
  pipeline::SuiteConfig resolve() {
    pipeline::SuiteConfig c;
    c.features = features.resolve();
    c.train = train.resolve();
    c.lambda_grid = train.grid();
    c.deep_hidden = parse_int_list(deep_hidden);
    c.shallow_hidden = parse_int_list(shallow_hidden);
    c.run_shallow = !no_shallow;
    c.run_pls = !no_pls;
    c.run_verification = !no_verification;
    c.pls_components = pls_components;
    c.pls_candidates = parse_int_list(pls_select);
    c.pair_pool = pairs.pool;
    c.pair_seed = pairs.seed;
    c.gallery_spec = eval::gallery_spec_from_string(gallery_spec);
    if (fusion != "max" && fusion != "mean") throw InvalidParameter("fusion must be max or mean");
    c.fusion = fusion == "max" ? matching::Fusion::max : matching::Fusion::mean;
    if (attempt_fusion != "max" && attempt_fusion != "none") {
      throw InvalidParameter("attempt fusion must be max or none");
    }
    c.attempt_fusion = attempt_fusion == "max" ? eval::AttemptFusion::max : eval::AttemptFusion::none;
    return c;
  }
};

Manifest load_manifest(const fs::path& path) {
  require_artifact(path, "manifest", "synth-gen");
  return Manifest::read(path);
}

// Models named on the command line, loaded on demand.
struct ModelOpts {
  std::string path;

  void add(CLI::App* app) { app->add_option("--model", path, "Trained DPM (.dpm) or PLS (.pls) model"); }

  struct Loaded {
    std::optional<dpm::DpmModel> dpm;
    std::optional<pls::PlsModel> pls;
    matching::PipelineModels view() const { return {dpm ? &*dpm : nullptr, pls ? &*pls : nullptr}; }
  };

  Loaded load(matching::Pipeline pipeline, const pipeline::FeatureStore& store) const {
    Loaded out;
    if (pipeline == matching::Pipeline::raw) return out;
    if (path.empty()) {
      throw InvalidConfiguration(std::string("the ") + matching::to_string(pipeline) + " pipeline needs --model");
    }
    if (pipeline == matching::Pipeline::dpm) {
      require_artifact(path, "DPM model", "train-dpm");
      out.dpm = dpm::DpmModel::load(path);
      if (!out.dpm->source_pca_id.empty() &&
          (out.dpm->source_pca_id != store.source_pca.id() || out.dpm->target_pca_id != store.target_pca.id())) {
        throw InvalidConfiguration("DPM model was trained on a different feature store");
      }
    } else {
      require_artifact(path, "PLS model", "train-pls");
      out.pls = pls::PlsModel::load(path);
    }
    return out;
  }
};

pipeline::FeatureStore load_store(const fs::path& dir) {
  require_artifact(dir / "index.csv", "feature store", "extract");
  return pipeline::FeatureStore::load(dir);
}

matching::GalleryIndex load_gallery(const fs::path& path) {
  require_artifact(path, "gallery", "enroll");
  return matching::GalleryIndex::load(path);
}

// ---------------------------------------------------------------------------

int cmd_synth_gen(const SynthOpts& opts, const std::string& out) {
  const Manifest m = synth::write_dataset(opts.cfg, out);
  std::cout << "wrote " << m.records.size() << " images and " << (fs::path(out) / "manifest.csv").string()
            << '\n';
  return 0;
}

int cmd_extract(FeatureOpts& opts, const std::string& manifest_path, const std::string& pca_subjects,
                const std::string& out) {
  const Manifest m = load_manifest(manifest_path);
  const auto subjects =
      pca_subjects.empty() ? pipeline::split_from_manifest(m).train : parse_id_list(pca_subjects);
  const pipeline::FeatureStore store = pipeline::build_store(m, opts.resolve(), subjects);
  store.save(out);
  std::cout << "extracted " << store.sets.size() << " descriptor sets into " << out << '\n';
  return 0;
}

int cmd_train_dpm(TrainOpts& opts, const PairOpts& pairs_opts, const std::string& manifest_path,
                  const std::string& store_dir, const std::string& hidden, const std::string& out,
                  const std::string& log_path) {
  const Manifest m = load_manifest(manifest_path);
  const pipeline::FeatureStore store = load_store(store_dir);
  const dpm::PairSet pairs =
      pipeline::build_pairs(m, store, pairs_opts.resolve(m), pairs_opts.pool, pairs_opts.seed);
  std::vector<int> dims{static_cast<int>(pairs.sources.rows())};
  for (int h : parse_int_list(hidden)) dims.push_back(h);
  dims.push_back(static_cast<int>(pairs.sources.rows()));
  const dpm::TrainConfig cfg = opts.resolve();
  const auto grid = opts.grid();
  dpm::TrainResult r = grid.empty() ? dpm::train(pairs, cfg, dims) : dpm::train_with_lambda_search(pairs, cfg, dims, grid);
  r.model.source_pca_id = store.source_pca.id();
  r.model.target_pca_id = store.target_pca.id();
  r.model.save(out);
  std::cout << "trained on " << pairs.size() << " pairs, " << r.log.epoch_loss.size() << " epochs, final loss "
            << r.log.epoch_loss.back() << '\n';
  if (!log_path.empty()) {
    json log;
    log["config"] = pipeline::train_config_json(r.model.config);
    log["layer_dims"] = dims;
    log["pairs"] = pairs.size();
    log["best_epoch"] = r.log.best_epoch;
    log["epoch_loss"] = r.log.epoch_loss;
    log["holdout_loss"] = r.log.holdout_loss;
    log["learning_rate"] = r.log.learning_rate;
    write_json(log_path, log);
  }
  return 0;
}

int cmd_train_pls(const PairOpts& pairs_opts, const std::string& manifest_path, const std::string& store_dir,
                  int components, const std::string& select, const std::string& out) {
  const Manifest m = load_manifest(manifest_path);
  const pipeline::FeatureStore store = load_store(store_dir);
  const auto train_subjects = pairs_opts.resolve(m);
  const auto candidates = parse_int_list(select);
  if (!candidates.empty()) {
    const auto choice = pipeline::select_pls_components(m, store, train_subjects, candidates, pairs_opts.pool,
                                                        pairs_opts.seed);
    components = choice.components;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      std::printf("p=%d held-out rank-1 %.2f%%\n", candidates[i], 100.0 * choice.rank1[i]);
    }
  }
  const dpm::PairSet pairs = pipeline::build_pairs(m, store, train_subjects, pairs_opts.pool, pairs_opts.seed);
  Eigen::MatrixXd x, y;
  pipeline::pairs_to_rows(pairs, x, y);
  const pls::PlsFit fit = pls::pls_fit(x, y, components);
  fit.model.save(out);
  std::cout << "fitted " << components << " components on " << pairs.size() << " pairs\n";
  return 0;
}

int cmd_enroll(const ProtocolOpts& proto_opts, const ModelOpts& model_opts, const std::string& manifest_path,
               const std::string& store_dir, const std::string& pipeline_name, const std::string& out) {
  const Manifest m = load_manifest(manifest_path);
  const pipeline::FeatureStore store = load_store(store_dir);
  const matching::Pipeline pipe = matching::pipeline_from_string(pipeline_name);
  const auto models = model_opts.load(pipe, store);
  const eval::Selection sel = eval::select(proto_opts.resolve(m), m, false);
  const auto templates = pipeline::build_templates(store, sel.gallery, pipe, models.view());
  const matching::GalleryIndex gallery(templates);
  gallery.save(out);
  std::cout << "enrolled " << gallery.size() << " templates of " << gallery.subjects().size() << " subjects ("
            << gallery.dims() << " dims)\n";
  return 0;
}

int cmd_identify(const ModelOpts& model_opts, const std::string& store_dir, const std::string& gallery_path,
                 const std::vector<std::string>& images, const std::vector<std::string>& pgms,
                 const std::string& modality_name, int top, const std::string& fusion_name) {
  const pipeline::FeatureStore store = load_store(store_dir);
  const matching::GalleryIndex gallery = load_gallery(gallery_path);
  const auto models = model_opts.load(gallery.pipeline(), store);
  if (images.empty() && pgms.empty()) throw InvalidParameter("give at least one --image or --pgm probe");
  if (fusion_name != "max" && fusion_name != "mean") throw InvalidParameter("fusion must be max or mean");
  const auto fusion = fusion_name == "max" ? matching::Fusion::max : matching::Fusion::mean;

  std::vector<features::DescriptorSet> probes;
  for (const auto& id : images) probes.push_back(store.find(id));
  if (!pgms.empty()) {
    const Modality modality = modality_from_string(modality_name);
    const auto& pca = modality == Modality::source ? store.source_pca : store.target_pca;
    features::FeatureConfig fc;
    fc.pca_dims = pca.output_dims();
    for (const auto& path : pgms) {
      require_artifact(path, "probe image", "synth-gen");
      const GrayImage img = load_gray(path);
      probes.push_back(features::embed_all(features::raw_descriptors(img, fc), pca, img.width(), img.height(), path,
                                           -1, modality));
    }
  }
  json out = json::array();
  for (const auto& dset : probes) {
    const matching::Template t = matching::build_template(dset, gallery.pipeline(), models.view());
    const matching::Identification id = matching::identify(t, gallery, fusion);
    json entry;
    entry["probe"] = dset.image_id;
    entry["predicted_subject"] = id.predicted_subject;
    json ranking = json::array();
    for (std::size_t k = 0; k < id.ranking.size() && static_cast<int>(k) < top; ++k) {
      ranking.push_back({{"subject_id", id.ranking[k].subject_id}, {"score", id.ranking[k].score}});
    }
    entry["ranking"] = ranking;
    // Best single template, so that a probe enrolled in the gallery finds itself.
    const auto scores = matching::score(t, gallery);
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
      if (scores[i].second > scores[best].second) best = i;
    }
    entry["top_template"] = {{"image_id", scores[best].first}, {"score", scores[best].second}};
    out.push_back(entry);
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_verify(const ProtocolOpts& proto_opts, const ModelOpts& model_opts, const std::string& manifest_path,
               const std::string& store_dir, const std::string& gallery_path, const std::string& attempt_fusion,
               const std::string& out_dir) {
  const Manifest m = load_manifest(manifest_path);
  const pipeline::FeatureStore store = load_store(store_dir);
  const matching::GalleryIndex gallery = load_gallery(gallery_path);
  const auto models = model_opts.load(gallery.pipeline(), store);
  const eval::Selection sel = eval::select(proto_opts.resolve(m), m);
  const auto probes = pipeline::build_templates(store, sel.probes, gallery.pipeline(), models.view());
  if (attempt_fusion != "max" && attempt_fusion != "none") throw InvalidParameter("attempt fusion must be max or none");
  const auto fusion = attempt_fusion == "max" ? eval::AttemptFusion::max : eval::AttemptFusion::none;
  const eval::RocCurve roc = eval::run_verification(probes, gallery, fusion);

  eval::Report report;
  eval::RunRecord run;
  run.name = std::string("verify_") + matching::to_string(gallery.pipeline());
  run.pipeline = matching::to_string(gallery.pipeline());
  run.protocol = proto_opts.gallery_spec + ":" + proto_opts.gallery_modality + "->" + proto_opts.probe_modality;
  run.gallery_templates = gallery.size();
  run.gallery_subjects = gallery.subjects().size();
  run.probes = probes.size();
  run.identification = eval::run_identification(probes, gallery);
  run.roc = roc;
  report.config = {{"attempt_fusion", attempt_fusion}, {"gallery", gallery_path}};
  report.runs.push_back(run);
  eval::emit_report(out_dir, report);
  std::printf("genuine %zu, imposter %zu, TAR@FAR=1%% %.4f, TAR@FAR=10%% %.4f\n", roc.genuine_count,
              roc.imposter_count, roc.tar_at(0.01), roc.tar_at(0.1));
  return 0;
}

int cmd_eval_suite(SuiteOpts& opts, const std::string& manifest_path, const std::string& out_dir, bool gap_only) {
  pipeline::SuiteConfig cfg = opts.resolve();
  if (gap_only) {
    cfg.run_pls = false;
    cfg.run_shallow = false;
  }
  const Manifest m = load_manifest(manifest_path);
  const pipeline::SuiteResult r = pipeline::run_suite(m, cfg);
  eval::emit_report(out_dir, r.report);
  std::cout << pipeline::summary_table(r.report);
  for (const auto& [stage, secs] : r.timings) std::fprintf(stderr, "%s: %.1f s\n", stage.c_str(), secs);
  if (gap_only && !r.report.gap) throw ProtocolError("within-target and raw cross-modal rank-1 are equal");
  return 0;
}

int cmd_bench(int gallery_size, int dims, int probes, std::uint64_t seed, const std::string& out) {
  if (gallery_size < 1 || dims < 1 || probes < 1) throw InvalidParameter("bench sizes must be positive");
  using Clock = std::chrono::steady_clock;
  Rng rng(seed);

  // Random unit-norm gallery of the requested shape.
  std::vector<matching::Template> templates(static_cast<std::size_t>(gallery_size));
  for (int i = 0; i < gallery_size; ++i) {
    Eigen::VectorXd v(dims);
    for (int k = 0; k < dims; ++k) v[k] = normal(rng);
    templates[static_cast<std::size_t>(i)] = {"g" + std::to_string(i), i / 2, matching::l2_normalized(v),
                                              matching::Pipeline::raw};
  }
  const matching::GalleryIndex gallery(templates);

  std::vector<matching::Template> probe_set;
  for (int i = 0; i < probes; ++i) {
    Eigen::VectorXd v(dims);
    for (int k = 0; k < dims; ++k) v[k] = normal(rng);
    probe_set.push_back({"p" + std::to_string(i), 0, matching::l2_normalized(v), matching::Pipeline::raw});
  }
  double sink = 0.0;
  for (int i = 0; i < std::min(probes, 3); ++i) sink += gallery.similarities(probe_set[i])[0];  // warm-up
  auto t0 = Clock::now();
  for (const auto& id : matching::identify(probe_set, gallery)) sink += id.ranking.front().score;
  const double scoring_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / probes;

  // One probe at a time: bounded by streaming the whole gallery per probe.
  const int single_runs = std::min(probes, 10);
  t0 = Clock::now();
  for (int i = 0; i < single_runs; ++i) sink += matching::identify(probe_set[i], gallery).ranking.front().score;
  const double single_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / single_runs;

  // End to end: preprocess, describe, embed and score one synthetic target image.
  synth::SynthConfig sc = synth::default_benchmark();
  sc.n_subjects = 2;
  sc.n_train = 1;
  sc.images_per_subject = 2;
  sc.sessions = 1;
  const synth::SynthDataset ds = synth::generate(sc);
  const features::FeatureConfig fc;
  Eigen::MatrixXd fit_rows;
  {
    std::vector<Eigen::MatrixXd> blocks;
    Eigen::Index rows = 0;
    for (const auto& img : ds.images) {
      blocks.push_back(features::stack_values(features::raw_descriptors(img.image, fc)));
      rows += blocks.back().rows();
    }
    fit_rows.resize(rows, features::kDescriptorDims);
    Eigen::Index r = 0;
    for (const auto& b : blocks) {
      fit_rows.middleRows(r, b.rows()) = b;
      r += b.rows();
    }
  }
  const features::PcaModel pca = features::pca_fit(fit_rows, fc.pca_dims);
  const GrayImage& probe_image = ds.images.back().image;
  const features::DescriptorSet warm =
      features::embed_all(features::raw_descriptors(probe_image, fc), pca, probe_image.width(), probe_image.height(),
                          "probe", 0, Modality::target);
  const auto e2e_dims = warm.count() * warm.dims();
  std::vector<matching::Template> e2e_templates;
  for (int i = 0; i < gallery_size; ++i) {
    Eigen::VectorXd v(e2e_dims);
    for (Eigen::Index k = 0; k < e2e_dims; ++k) v[k] = normal(rng);
    e2e_templates.push_back({"g" + std::to_string(i), i / 2, matching::l2_normalized(v), matching::Pipeline::raw});
  }
  const matching::GalleryIndex e2e_gallery(e2e_templates);
  const int e2e_runs = std::max(1, std::min(probes, 20));
  t0 = Clock::now();
  for (int i = 0; i < e2e_runs; ++i) {
    const features::DescriptorSet d =
        features::embed_all(features::raw_descriptors(probe_image, fc), pca, probe_image.width(),
                            probe_image.height(), "probe", 0, Modality::target);
    const matching::Template t = matching::build_template(d, matching::Pipeline::raw, {});
    sink += matching::identify(t, e2e_gallery).ranking.front().score;
  }
  const double e2e_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / e2e_runs;

  json report;
  report["gallery_templates"] = gallery_size;
  report["template_dims"] = dims;
  report["probes"] = probes;
#ifdef _OPENMP
  report["threads"] = omp_get_max_threads();
#else
  report["threads"] = 1;
#endif
  report["scoring_ms_per_probe"] = scoring_ms;
  report["single_probe_ms"] = single_ms;
  report["end_to_end_template_dims"] = e2e_dims;
  report["end_to_end_ms_per_probe"] = e2e_ms;
  report["checksum"] = sink;
  std::printf("probe scoring: %.3f ms/probe batched, %.3f ms single probe (%d templates x %d dims)\n", scoring_ms,
              single_ms, gallery_size, dims);
  std::printf("end-to-end probe: %.3f ms/probe (%lld-dim templates)\n", e2e_ms, static_cast<long long>(e2e_dims));
  if (!out.empty()) write_json(out, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Cross-modal face matching with a learned perceptual mapping");
  app.set_config("--config", "", "INI file; [command] sections hold option values, flags override");
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = runtime default); results do not depend on it");

  // synth-gen
  SynthOpts synth_opts;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth-gen", "Generate the synthetic paired-modality dataset");
  synth_opts.add(synth_cmd);
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  // extract
  FeatureOpts extract_opts;
  std::string extract_manifest, extract_out, extract_pca_subjects;
  auto* extract_cmd = app.add_subcommand("extract", "Dense descriptors, per-modality PCA and embedding");
  extract_cmd->add_option("--manifest", extract_manifest, "Dataset manifest")->required();
  extract_cmd->add_option("--out", extract_out, "Feature store directory")->required();
  extract_cmd->add_option("--pca-subjects", extract_pca_subjects, "Subjects used to fit PCA (default: train split)");
  extract_opts.add(extract_cmd);

  // train-dpm
  TrainOpts train_opts;
  PairOpts dpm_pairs;
  std::string dpm_manifest, dpm_store, dpm_out, dpm_hidden = "200,200", dpm_log;
  auto* dpm_cmd = app.add_subcommand("train-dpm", "Train the perceptual mapping network");
  dpm_cmd->add_option("--manifest", dpm_manifest, "Dataset manifest")->required();
  dpm_cmd->add_option("--store", dpm_store, "Feature store from `extract`")->required();
  dpm_cmd->add_option("--out", dpm_out, "Output model file")->required();
  dpm_cmd->add_option("--hidden", dpm_hidden, "Hidden layer widths")->capture_default_str();
  dpm_cmd->add_option("--log", dpm_log, "Write the training log as JSON");
  train_opts.add(dpm_cmd);
  dpm_pairs.add(dpm_cmd);

  // train-pls
  PairOpts pls_pairs;
  std::string pls_manifest, pls_store, pls_out, pls_select;
  int pls_components = 20;
  auto* pls_cmd = app.add_subcommand("train-pls", "Fit the PLS baseline");
  pls_cmd->add_option("--manifest", pls_manifest, "Dataset manifest")->required();
  pls_cmd->add_option("--store", pls_store, "Feature store from `extract`")->required();
  pls_cmd->add_option("--out", pls_out, "Output model file")->required();
  pls_cmd->add_option("--components", pls_components, "Latent dimensions")->capture_default_str();
  pls_cmd->add_option("--select", pls_select, "Choose the dimension from this list on held-out training subjects");
  pls_pairs.add(pls_cmd);

  // enroll
  ProtocolOpts enroll_proto;
  ModelOpts enroll_model;
  std::string enroll_manifest, enroll_store, enroll_pipeline = "dpm", enroll_out;
  auto* enroll_cmd = app.add_subcommand("enroll", "Build a gallery index");
  enroll_cmd->add_option("--manifest", enroll_manifest, "Dataset manifest")->required();
  enroll_cmd->add_option("--store", enroll_store, "Feature store from `extract`")->required();
  enroll_cmd->add_option("--pipeline", enroll_pipeline, "raw, pls or dpm")->capture_default_str();
  enroll_cmd->add_option("--out", enroll_out, "Output gallery file")->required();
  enroll_proto.add(enroll_cmd);
  enroll_model.add(enroll_cmd);

  // identify
  ModelOpts identify_model;
  std::string identify_store, identify_gallery, identify_modality = "target", identify_fusion = "max";
  std::vector<std::string> identify_images, identify_pgms;
  int identify_top = 5;
  auto* identify_cmd = app.add_subcommand("identify", "Rank enrolled subjects for probe images");
  identify_cmd->add_option("--store", identify_store, "Feature store from `extract`")->required();
  identify_cmd->add_option("--gallery", identify_gallery, "Gallery from `enroll`")->required();
  identify_cmd->add_option("--image", identify_images, "Probe image id from the store");
  identify_cmd->add_option("--pgm", identify_pgms, "Probe PGM file");
  identify_cmd->add_option("--modality", identify_modality, "Modality of --pgm probes")->capture_default_str();
  identify_cmd->add_option("--top", identify_top, "Ranks to print")->capture_default_str();
  identify_cmd->add_option("--fusion", identify_fusion, "max or mean")->capture_default_str();
  identify_model.add(identify_cmd);

  // verify
  ProtocolOpts verify_proto;
  ModelOpts verify_model;
  std::string verify_manifest, verify_store, verify_gallery, verify_out, verify_fusion = "max";
  auto* verify_cmd = app.add_subcommand("verify", "ROC over genuine and imposter attempts");
  verify_cmd->add_option("--manifest", verify_manifest, "Dataset manifest")->required();
  verify_cmd->add_option("--store", verify_store, "Feature store from `extract`")->required();
  verify_cmd->add_option("--gallery", verify_gallery, "Gallery from `enroll`")->required();
  verify_cmd->add_option("--out", verify_out, "Report directory")->required();
  verify_cmd->add_option("--attempt-fusion", verify_fusion, "max or none")->capture_default_str();
  verify_proto.add(verify_cmd);
  verify_model.add(verify_cmd);

  // eval-suite / modality-gap
  SuiteOpts suite_opts;
  std::string suite_manifest, suite_out;
  auto* suite_cmd = app.add_subcommand("eval-suite", "Train everything and compare raw, PLS and DPM");
  suite_cmd->add_option("--manifest", suite_manifest, "Dataset manifest")->required();
  suite_cmd->add_option("--out", suite_out, "Report directory")->required();
  suite_opts.add(suite_cmd);

  SuiteOpts gap_opts;
  std::string gap_manifest, gap_out;
  auto* gap_cmd = app.add_subcommand("modality-gap", "Within-target vs raw vs DPM cross-modal rank-1");
  gap_cmd->add_option("--manifest", gap_manifest, "Dataset manifest")->required();
  gap_cmd->add_option("--out", gap_out, "Report directory")->required();
  gap_opts.add(gap_cmd);

  // bench
  int bench_gallery = 2460, bench_dims = 26928, bench_probes = 100;
  std::uint64_t bench_seed = 5;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "Probe scoring and end-to-end latency");
  bench_cmd->add_option("--gallery-size", bench_gallery, "Gallery templates")->capture_default_str();
  bench_cmd->add_option("--dims", bench_dims, "Template dimensions")->capture_default_str();
  bench_cmd->add_option("--probes", bench_probes, "Timed probes")->capture_default_str();
  bench_cmd->add_option("--seed", bench_seed, "Seed for random templates")->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "Write measurements as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif

  try {
    if (synth_cmd->parsed()) return cmd_synth_gen(synth_opts, synth_out);
    if (extract_cmd->parsed()) return cmd_extract(extract_opts, extract_manifest, extract_pca_subjects, extract_out);
    if (dpm_cmd->parsed()) {
      return cmd_train_dpm(train_opts, dpm_pairs, dpm_manifest, dpm_store, dpm_hidden, dpm_out, dpm_log);
    }
    if (pls_cmd->parsed()) {
      return cmd_train_pls(pls_pairs, pls_manifest, pls_store, pls_components, pls_select, pls_out);
    }
    if (enroll_cmd->parsed()) {
      return cmd_enroll(enroll_proto, enroll_model, enroll_manifest, enroll_store, enroll_pipeline, enroll_out);
    }
    if (identify_cmd->parsed()) {
      return cmd_identify(identify_model, identify_store, identify_gallery, identify_images, identify_pgms,
                          identify_modality, identify_top, identify_fusion);
    }
    if (verify_cmd->parsed()) {
      return cmd_verify(verify_proto, verify_model, verify_manifest, verify_store, verify_gallery, verify_fusion,
                        verify_out);
    }
    if (suite_cmd->parsed()) return cmd_eval_suite(suite_opts, suite_manifest, suite_out, false);
    if (gap_cmd->parsed()) return cmd_eval_suite(gap_opts, gap_manifest, gap_out, true);
    if (bench_cmd->parsed()) return cmd_bench(bench_gallery, bench_dims, bench_probes, bench_seed, bench_out);
  } catch (const InvalidParameter& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidConfiguration& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
