// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Criteria 6, 8 and 9 drive the command-line tool.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpmface/dpm.hpp"
#include "dpmface/error.hpp"
#include "dpmface/matching.hpp"
#include "dpmface/pls.hpp"
#include "dpmface/rng.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace dpmface;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- independent scalar model used by criteria 1 and 3 ----

std::vector<double> scalar_forward(const dpm::Mlp& net, std::vector<double> h) {
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    const auto& w = net.weights[k];
    std::vector<double> next(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double acc = 0.0;
      for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * h[static_cast<std::size_t>(c)];
      if (k + 1 < net.weights.size()) acc = std::tanh(acc + net.biases[k][r]);
      next[static_cast<std::size_t>(r)] = acc;
    }
    h = std::move(next);
  }
  return h;
}

double scalar_loss(const dpm::Mlp& net, const dpm::PairSet& batch, double lambda) {
  const auto m = batch.sources.cols();
  double data = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    std::vector<double> x(static_cast<std::size_t>(batch.sources.rows()));
    for (Eigen::Index r = 0; r < batch.sources.rows(); ++r) x[static_cast<std::size_t>(r)] = batch.sources(r, i);
    const auto y = scalar_forward(net, x);
    for (std::size_t r = 0; r < y.size(); ++r) {
      const double e = y[r] - batch.targets(static_cast<Eigen::Index>(r), i);
      data += e * e;
    }
  }
  const std::size_t hidden = net.weights.size() - 1;
  double reg = 0.0;
  for (std::size_t k = 0; k < hidden; ++k) {
    for (Eigen::Index r = 0; r < net.weights[k].rows(); ++r) {
      for (Eigen::Index c = 0; c < net.weights[k].cols(); ++c) reg += net.weights[k](r, c) * net.weights[k](r, c);
      reg += net.biases[k][r] * net.biases[k][r];
    }
  }
  return data / static_cast<double>(m) + lambda / static_cast<double>(hidden) * reg;
}

dpm::Mlp random_net(const std::vector<int>& dims, Rng& rng) {
  dpm::Mlp net = dpm::glorot_init(dims, rng());
  for (auto& b : net.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = uniform(rng, -0.5, 0.5);
  }
  return net;
}

dpm::PairSet random_batch(int in, int out, int count, Rng& rng) {
  dpm::PairSet p{Eigen::MatrixXd(in, count), Eigen::MatrixXd(out, count)};
  for (Eigen::Index i = 0; i < p.sources.size(); ++i) p.sources.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < p.targets.size(); ++i) p.targets.data()[i] = normal(rng);
  return p;
}

// ---- criteria ----

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (int inst = 0; inst < 24; ++inst) {
    // Smallest and largest shapes first, then random ones in between.
    const int d = inst == 0 ? 3 : inst == 1 ? 10 : 3 + static_cast<int>(uniform_index(rng, 8));
    const int hid = inst == 0 ? 4 : inst == 1 ? 8 : 4 + static_cast<int>(uniform_index(rng, 5));
    const std::vector<int> dims = inst < 2 || inst % 2 ? std::vector<int>{d, hid, d} : std::vector<int>{d, hid, hid, d};
    dpm::Mlp net = random_net(dims, rng);
    const dpm::PairSet batch = random_batch(d, d, 5, rng);
    const dpm::Regularization reg{uniform(rng, 0.0, 0.5), false};
    const dpm::Gradient g = dpm::gradient(net, batch, reg);

    auto probe = [&](double& param, double analytic) {
      const double saved = param;
      param = saved + h;
      const double up = dpm::loss(net, batch, reg);
      param = saved - h;
      const double down = dpm::loss(net, batch, reg);
      param = saved;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / scale);
      ++checked;
    };
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
      for (Eigen::Index i = 0; i < net.weights[k].size(); ++i) probe(net.weights[k].data()[i], g.weights[k].data()[i]);
    }
    for (std::size_t k = 0; k < net.biases.size(); ++k) {
      for (Eigen::Index i = 0; i < net.biases[k].size(); ++i) probe(net.biases[k][i], g.biases[k][i]);
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 10.0,
          "24 nets, " + std::to_string(checked) + " components, max rel err " + fmt("%.2e", worst) + ", " +
              fmt("%.2f s", secs)};
}

Outcome glorot_bounds() {
  const double bound = std::sqrt(6.0) / std::sqrt(66.0 + 200.0);
  std::vector<double> w;
  for (std::uint64_t seed = 1; w.size() < 100000; ++seed) {
    const dpm::Mlp net = dpm::glorot_init({66, 200, 66}, seed);
    const auto& first = net.weights[0];
    for (Eigen::Index i = 0; i < first.size() && w.size() < 100000; ++i) w.push_back(first.data()[i]);
  }
  double peak = 0.0, mean = 0.0;
  for (double v : w) {
    peak = std::max(peak, std::abs(v));
    mean += v;
  }
  mean /= static_cast<double>(w.size());
  return {peak <= bound && std::abs(mean) <= 0.002,
          "bound " + fmt("%.5f", bound) + ", max |w| " + fmt("%.5f", peak) + ", mean " + fmt("%.2e", mean)};
}

Outcome loss_literalism() {
  Rng rng(77);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const int d = 3 + static_cast<int>(uniform_index(rng, 8));
    std::vector<int> dims{d};
    const int layers = 1 + static_cast<int>(uniform_index(rng, 3));
    for (int l = 0; l < layers; ++l) dims.push_back(2 + static_cast<int>(uniform_index(rng, 10)));
    dims.push_back(d);
    const dpm::Mlp net = random_net(dims, rng);
    const dpm::PairSet batch = random_batch(d, d, 1 + static_cast<int>(uniform_index(rng, 16)), rng);
    const double lambda = uniform(rng, 0.0, 1.0);
    worst = std::max(worst, std::abs(dpm::loss(net, batch, {lambda, false}) - scalar_loss(net, batch, lambda)));
  }
  return {worst <= 1e-12, "100 instances, max |diff| " + fmt("%.2e", worst)};
}

Outcome pls_oracle() {
  const Eigen::MatrixXd x = support::random_matrix(500, 20, 5);
  const Eigen::MatrixXd y = x * support::random_matrix(20, 20, 6);
  const pls::PlsFit fit = pls::pls_fit(x, y, 20);
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd ols = xc.colPivHouseholderQr().solve(yc);
  const double rel = (fit.model.b_v() - ols).norm() / ols.norm();
  double ortho = 0.0;
  const Eigen::MatrixXd& t = fit.x_scores;
  for (Eigen::Index i = 0; i < t.cols(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      ortho = std::max(ortho, std::abs(t.col(i).dot(t.col(j))) / (t.col(i).norm() * t.col(j).norm()));
    }
  }
  return {rel <= 1e-6 && ortho <= 1e-8,
          "rel Frobenius err " + fmt("%.2e", rel) + ", max score cosine " + fmt("%.2e", ortho)};
}

Outcome matching_invariants(const fs::path& report_dir) {
  std::string why;
  // CMC curves of every closed-set run in the benchmark report.
  const json doc = json::parse(read_file(report_dir / "report.json"));
  int curves = 0;
  for (const auto& run : doc["runs"]) {
    std::istringstream csv(read_file(report_dir / run["cmc_file"].get<std::string>()));
    std::string line;
    std::getline(csv, line);
    double prev = 0.0, last = 0.0;
    while (std::getline(csv, line)) {
      const double rate = std::stod(line.substr(line.find(',') + 1));
      if (rate < prev) why += " non-monotone CMC in " + run["name"].get<std::string>();
      prev = last = rate;
    }
    if (last != 1.0) why += " CMC of " + run["name"].get<std::string>() + " ends at " + fmt("%.4f", last);
    ++curves;
  }

  Rng rng(31);
  const int dims = 4000;
  auto random_vec = [&] {
    Eigen::VectorXd v(dims);
    for (int k = 0; k < dims; ++k) v[k] = normal(rng) * uniform(rng, 0.1, 10.0);
    return v;
  };
  double norm_err = 0.0, dot_err = 0.0;
  std::vector<matching::Template> gallery_t;
  for (int i = 0; i < 120; ++i) {
    const Eigen::VectorXd v = matching::l2_normalized(random_vec());
    norm_err = std::max(norm_err, std::abs(v.norm() - 1.0));
    gallery_t.push_back({"g" + std::to_string(i), i / 3, v, matching::Pipeline::raw});
  }
  const matching::GalleryIndex gallery(gallery_t);
  bool rescale_ok = true;
  for (int p = 0; p < 10; ++p) {
    const Eigen::VectorXd raw = random_vec();
    const matching::Template probe{"p", 0, matching::l2_normalized(raw), matching::Pipeline::raw};
    const Eigen::VectorXd sims = gallery.similarities(probe);
    for (std::size_t i = 0; i < gallery_t.size(); ++i) {
      double s = 0.0;
      for (int k = 0; k < dims; ++k) s += probe.vector[k] * gallery_t[i].vector[k];
      dot_err = std::max(dot_err, std::abs(s - sims[static_cast<Eigen::Index>(i)]));
    }
    const auto base = matching::identify(probe, gallery).ranking;
    for (double c : {1e-8, 0.01, 3.7, 1e8}) {
      const matching::Template scaled{"p", 0, matching::l2_normalized(raw * c), matching::Pipeline::raw};
      const auto ranking = matching::identify(scaled, gallery).ranking;
      for (std::size_t k = 0; k < ranking.size(); ++k) rescale_ok &= ranking[k].subject_id == base[k].subject_id;
    }
  }
  if (norm_err > 1e-9) why += " norm err " + fmt("%.2e", norm_err);
  if (dot_err > 1e-12) why += " dot err " + fmt("%.2e", dot_err);
  if (!rescale_ok) why += " ranking changed under rescaling";
  return {why.empty() && curves > 0,
          std::to_string(curves) + " CMC curves, norm err " + fmt("%.1e", norm_err) + ", dot err " +
              fmt("%.1e", dot_err) + (why.empty() ? "" : ";" + why)};
}

double run_rank1(const json& doc, const std::string& name) {
  for (const auto& run : doc["runs"]) {
    if (run["name"] == name) return run["rank1"].get<double>();
  }
  throw InvalidInput("report has no run '" + name + "'");
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work = (fs::temp_directory_path() / "dpmface_acceptance").string();
  std::string cli;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--cli", cli, "Path to the dpmface command-line tool")->required();
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(work);
  fs::remove_all(dir);
  fs::create_directories(dir);

  int failures = 0;
  auto report = [&](int n, const std::string& title, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << title << "  (" << o.detail
              << ")" << std::endl;
  };

  report(1, "gradient vs central differences", gradient_oracle);
  report(2, "initializer bounds", glorot_bounds);
  report(3, "scalar loss re-implementation", loss_literalism);
  report(4, "PLS vs least squares", pls_oracle);

  // One synthetic benchmark run, timed end to end, then a second for determinism.
  double bench_secs = 0.0;
  std::string suite_error;
  auto suite = [&](const std::string& tag) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path data = dir / ("data_" + tag);
    const fs::path out = dir / ("report_" + tag);
    if (run_cli(cli, "synth-gen --out \"" + data.string() + "\"", dir / ("synth_" + tag + ".log")) != 0) {
      suite_error = "synth-gen failed, see " + (dir / ("synth_" + tag + ".log")).string();
    } else if (run_cli(cli, "eval-suite --manifest \"" + (data / "manifest.csv").string() + "\" --out \"" +
                                out.string() + "\"",
                       dir / ("suite_" + tag + ".log")) != 0) {
      suite_error = "eval-suite failed, see " + (dir / ("suite_" + tag + ".log")).string();
    }
    return seconds_since(t0);
  };
  bench_secs = suite("a");
  const fs::path report_a = dir / "report_a";

  report(5, "matching invariants", [&] {
    if (!suite_error.empty()) return Outcome{false, suite_error};
    return matching_invariants(report_a);
  });

  json doc;
  if (suite_error.empty()) doc = json::parse(read_file(report_a / "report.json"));

  report(6, "synthetic comparative claim", [&] {
    if (!suite_error.empty()) return Outcome{false, suite_error};
    const double raw = run_rank1(doc, "raw"), pls = run_rank1(doc, "pls"), dpm = run_rank1(doc, "dpm");
    const double bridged = doc["modality_gap"]["gap_bridged"].get<double>();
    const bool ok = dpm - raw >= 0.15 && dpm > pls && bridged >= 0.40 && bench_secs <= 900.0;
    return Outcome{ok, "raw " + fmt("%.2f%%", 100 * raw) + ", pls " + fmt("%.2f%%", 100 * pls) + ", dpm " +
                           fmt("%.2f%%", 100 * dpm) + ", gap bridged " + fmt("%.1f%%", 100 * bridged) + ", " +
                           fmt("%.0f s", bench_secs)};
  });

  report(7, "two hidden layers vs one", [&] {
    if (!suite_error.empty()) return Outcome{false, suite_error};
    const double deep = run_rank1(doc, "dpm"), shallow = run_rank1(doc, "dpm_shallow");
    return Outcome{deep >= shallow - 0.02,
                   "deep " + fmt("%.2f%%", 100 * deep) + ", shallow " + fmt("%.2f%%", 100 * shallow)};
  });

  report(8, "probe scoring throughput", [&] {
    const fs::path out = dir / "bench.json";
    if (run_cli(cli, "--threads 1 bench --out \"" + out.string() + "\"", dir / "bench.log") != 0) {
      return Outcome{false, "bench failed, see " + (dir / "bench.log").string()};
    }
    const json b = json::parse(read_file(out));
    const double ms = b["scoring_ms_per_probe"].get<double>();
    return Outcome{ms < 35.0 && b["gallery_templates"] == 2460 && b["template_dims"] == 26928,
                   fmt("%.2f ms/probe batched", ms) + fmt(", %.2f ms single probe", b["single_probe_ms"].get<double>()) +
                       " over " + std::to_string(b["gallery_templates"].get<int>()) + " x " +
                       std::to_string(b["template_dims"].get<int>())};
  });

  report(9, "byte-identical reports", [&] {
    if (!suite_error.empty()) return Outcome{false, suite_error};
    suite("b");
    if (!suite_error.empty()) return Outcome{false, suite_error};
    int files = 0;
    for (const auto& entry : fs::directory_iterator(report_a)) {
      const fs::path other = dir / "report_b" / entry.path().filename();
      if (!fs::exists(other) || read_file(entry.path()) != read_file(other)) {
        return Outcome{false, entry.path().filename().string() + " differs"};
      }
      ++files;
    }
    int other_files = 0;
    for ([[maybe_unused]] const auto& entry : fs::directory_iterator(dir / "report_b")) ++other_files;
    return Outcome{files == other_files, std::to_string(files) + " files compared"};
  });

  return failures == 0 ? 0 : 1;
}
