// stormbg command line: synthetic data, SLNet training, decomposition,
// baselines, localization, rendering, metrics, sweeps and benchmarks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stormbg/baselines.hpp"
#include "stormbg/io.hpp"
#include "stormbg/localize.hpp"
#include "stormbg/metrics.hpp"
#include "stormbg/parallel.hpp"
#include "stormbg/rpca.hpp"
#include "stormbg/slnet.hpp"
#include "stormbg/synth.hpp"

#ifndef STORMBG_VERSION
#define STORMBG_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace stormbg;

namespace {

std::string str(const std::string& v) { return v; }
std::string str(double v) { return format_number(v); }
std::string str(bool v) { return v ? "true" : "false"; }
template <class T>
  requires std::is_integral_v<T>
std::string str(T v) {
  return std::to_string(v);
}
template <class T>
std::string str(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + str(v[i]);
  return out;
}

// Bound parameters of one subcommand, its timings and its manifest.
struct Run {
  std::string name;
  CLI::App* app = nullptr;
  std::vector<std::pair<std::string, std::function<std::string()>>> params;
  std::vector<std::pair<std::string, double>> timings;
  std::string manifest;
  std::string config;
  unsigned threads = default_threads();
  std::function<fs::path()> primary;
  std::function<void(Run&)> body;

  template <class T>
  CLI::Option* opt(const std::string& key, T& var, const std::string& desc) {
    params.emplace_back(key, [&var] { return str(var); });
    CLI::Option* o = app->add_option("--" + key, var, desc);
    if constexpr (!std::is_same_v<T, std::vector<double>> && !std::is_same_v<T, std::vector<std::uint64_t>>)
      o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    else
      o->delimiter(',');
    return o;
  }

  CLI::Option* flag(const std::string& key, bool& var, const std::string& desc) {
    params.emplace_back(key, [&var] { return str(var); });
    return app->add_flag("--" + key, var, desc)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  template <class F>
  auto timed(const std::string& stage, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    struct Record {
      Run* run;
      std::string stage;
      std::chrono::steady_clock::time_point start;
      ~Record() {
        run->timings.emplace_back(stage,
                                  std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      }
    } record{this, stage, start};
    return f();
  }

  void write_manifest() const {
    fs::path path = manifest.empty() ? fs::path(primary().string() + ".manifest") : fs::path(manifest);
    std::ostringstream out;
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    out << "# stormbg " << STORMBG_VERSION << " run manifest\n";
    out << "# reproduce with: stormbg " << name << " --config " << path.filename().string() << "\n";
    out << "# subcommand: " << name << "\n";
    out << "# finished: " << stamp << "\n";
    for (const auto& [stage, seconds] : timings) out << "# seconds " << stage << ": " << format_number(seconds) << "\n";
    out << "threads = " << threads << "\n";
    for (const auto& [key, get] : params) out << key << " = " << get() << "\n";
    write_file_atomic(path, out.str());
  }
};

Run& add_run(CLI::App& parent, std::vector<std::unique_ptr<Run>>& runs, const std::string& name,
             const std::string& desc, const std::string& full_name) {
  auto run = std::make_unique<Run>();
  run->name = full_name;
  run->app = parent.add_subcommand(name, desc);
  run->app->add_option("--config", run->config, "key = value file; explicit flags override it");
  run->app->add_option("--manifest", run->manifest, "manifest path (default: <primary output>.manifest)");
  run->app->add_option("--threads", run->threads, "worker threads for frame-parallel stages")
      ->check(CLI::PositiveNumber)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  runs.push_back(std::move(run));
  return *runs.back();
}

ImageStack load_stack(Run& run, const std::string& path) {
  return run.timed("read " + fs::path(path).filename().string(), [&] { return read_tiff(path); });
}

int output_depth(int requested, const ImageStack& like) {
  if (requested != 0) return requested;
  return like.bit_depth == 8 ? 8 : 16;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  std::string out, truth, widefield, background;
  std::uint64_t seed = 0;
  std::size_t frames = 300, height = 64, width = 64, emitters = 120;
  double psf_sigma = 1.3, blink = 0.03, photons = 1500, offset = 20, blob_scale = 1.0;
  std::string modulation = "sinusoid";
  double depth = 0.3, period = 200, read_noise = 2.0;
  int rank = 1;
  bool no_poisson = false;
  int bit_depth = 16;
};

void setup_synth(Run& r, SynthArgs& a) {
  r.opt("out", a.out, "output TIFF stack")->required();
  r.opt("truth", a.truth, "ground-truth CSV (active emitter-frames)");
  r.opt("widefield", a.widefield, "noiseless time-averaged signal + background TIFF");
  r.opt("background", a.background, "noiseless background TIFF stack");
  r.opt("seed", a.seed, "random seed");
  r.opt("frames", a.frames, "number of frames")->check(CLI::PositiveNumber);
  r.opt("height", a.height, "frame height")->check(CLI::PositiveNumber);
  r.opt("width", a.width, "frame width")->check(CLI::PositiveNumber);
  r.opt("emitters", a.emitters, "number of emitters");
  r.opt("psf-sigma", a.psf_sigma, "PSF sigma in pixels");
  r.opt("blink", a.blink, "per-frame on probability");
  r.opt("photons", a.photons, "mean photons per emitter per frame");
  r.opt("offset", a.offset, "constant background level");
  r.opt("blob-scale", a.blob_scale, "multiplier for the structured background blobs");
  r.opt("modulation", a.modulation, "temporal background factor")->check(CLI::IsMember({"sinusoid", "drift"}));
  r.opt("depth", a.depth, "modulation depth");
  r.opt("period", a.period, "sinusoid period in frames");
  r.opt("rank", a.rank, "background rank (1 or 2)")->check(CLI::Range(1, 2));
  r.opt("read-noise", a.read_noise, "Gaussian read noise sigma");
  r.flag("no-poisson", a.no_poisson, "skip shot noise");
  r.opt("bit-depth", a.bit_depth, "8 or 16")->check(CLI::IsMember({8, 16}));
  r.primary = [&a] { return fs::path(a.out); };
  r.body = [&a](Run& run) {
    SynthConfig cfg = SynthConfig::storm_default(a.seed);
    cfg.n_frames = a.frames;
    cfg.height = a.height;
    cfg.width = a.width;
    cfg.n_emitters = a.emitters;
    cfg.psf_sigma = a.psf_sigma;
    cfg.blink_on_prob = a.blink;
    cfg.photons_per_emitter = a.photons;
    cfg.background_offset = a.offset;
    // blob layout is defined on the 64 x 64 default; rescale to the frame
    const double sx = static_cast<double>(a.width) / 64.0, sy = static_cast<double>(a.height) / 64.0;
    for (auto& b : cfg.blobs) {
      b.x *= sx;
      b.y *= sy;
      b.sigma *= std::sqrt(sx * sy);
      b.peak *= a.blob_scale;
    }
    if (a.rank == 2) {
      cfg.blobs2 = {{0.3 * a.width, 0.7 * a.height, 9.0 * std::sqrt(sx * sy), 70.0 * a.blob_scale},
                    {0.75 * a.width, 0.25 * a.height, 7.0 * std::sqrt(sx * sy), 50.0 * a.blob_scale}};
    }
    cfg.modulation = a.modulation == "drift" ? Modulation::LinearDrift : Modulation::Sinusoid;
    cfg.modulation_depth = a.depth;
    cfg.modulation_period = a.period;
    cfg.read_noise_sigma = a.read_noise;
    cfg.poisson_noise = !a.no_poisson;
    cfg.validate();
    auto [stack, truth] = run.timed("generate", [&] { return generate(cfg, run.threads); });
    run.timed("write", [&] {
      write_tiff(stack, a.out, a.bit_depth);
      if (!a.truth.empty()) write_ground_truth_csv(truth, a.truth);
      if (!a.background.empty()) write_tiff(truth.background, a.background, 16);
      if (!a.widefield.empty()) {
        ImageStack wf(1, cfg.height, cfg.width);
        auto dst = wf.frame(0);
        for (std::size_t f = 0; f < cfg.n_frames; ++f) {
          const auto b = truth.background.frame(f), s = truth.signal.frame(f);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (b[i] + s[i]) / static_cast<float>(cfg.n_frames);
        }
        write_tiff(wf, a.widefield, 16);
      }
    });
  };
}

// ---- train / decompose ---------------------------------------------------

struct HpArgs {
  double mu = 0.01, alpha = 12, lr = 1e-3;
  int epochs = 100;
  std::size_t delta = 50, hidden = 1, kernel = 3;
  std::uint64_t seed = 0;
  std::string normalization = "max-scale";
  std::string shrink_gradient = "subspace";

  void bind(Run& r) {
    r.opt("mu", mu, "singular value shrinkage threshold");
    r.opt("alpha", alpha, "sparse term weight");
    r.opt("epochs", epochs, "training epochs")->check(CLI::NonNegativeNumber);
    r.opt("lr", lr, "Adam learning rate");
    r.opt("delta", delta, "triplet offset")->check(CLI::PositiveNumber);
    r.opt("hidden", hidden, "hidden channels")->check(CLI::PositiveNumber);
    r.opt("kernel", kernel, "odd kernel size")->check(CLI::PositiveNumber);
    r.opt("seed", seed, "initialisation and shuffling seed");
    r.opt("normalization", normalization, "input scaling")->check(CLI::IsMember({"max-scale", "none"}));
    r.opt("shrink-gradient", shrink_gradient, "gradient through the shrinkage")
        ->check(CLI::IsMember({"subspace", "straight-through"}));
  }

  Hyperparams get() const {
    Hyperparams hp;
    hp.mu = mu;
    hp.alpha = alpha;
    hp.learning_rate = lr;
    hp.epochs = epochs;
    hp.triplet_offset = delta;
    hp.hidden_channels = hidden;
    hp.kernel_size = kernel;
    hp.seed = seed;
    hp.normalization = parse_normalization(normalization);
    hp.shrink_gradient = shrink_gradient == "subspace" ? ShrinkGradient::Subspace : ShrinkGradient::StraightThrough;
    hp.validate();
    return hp;
  }
};

struct TrainArgs {
  std::string input, out_model, report;
  std::size_t frames = 0;
  HpArgs hp;
};

void setup_train(Run& r, TrainArgs& a) {
  r.opt("input", a.input, "input TIFF stack")->required();
  r.opt("out-model", a.out_model, "weights file")->required();
  r.opt("report", a.report, "training report CSV (default: <out-model>.report.csv)");
  r.opt("frames", a.frames, "train on the first N frames only (0: all)");
  a.hp.bind(r);
  r.primary = [&a] { return fs::path(a.out_model); };
  r.body = [&a](Run& run) {
    ImageStack stack = load_stack(run, a.input);
    if (a.frames > 0 && a.frames < stack.frames()) stack = stack.slice(0, a.frames);
    const Hyperparams hp = a.hp.get();
    auto [model, report] = run.timed("train", [&] { return train(stack, hp); });
    if (report.dead_channels > 0)
      std::cerr << "warning: " << report.dead_channels << " of " << model.hidden()
                << " hidden channels are inactive on every training window; try another --seed\n";
    CsvTable csv{{"epoch", "total", "data", "sparse", "residual"}, {}};
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
      const auto& rec = report.epochs[e];
      csv.add_row({std::to_string(e + 1), format_number(rec.total), format_number(rec.data),
                   format_number(rec.sparse), format_number(rec.residual)});
    }
    run.timed("write", [&] {
      save_model(model, a.out_model);
      write_csv(csv, a.report.empty() ? a.out_model + ".report.csv" : a.report);
    });
    std::cout << "trained " << report.epochs_completed << " epochs in " << format_number(report.seconds) << " s";
    if (!report.epochs.empty()) std::cout << ", final loss " << format_number(report.epochs.back().total);
    std::cout << "\n";
  };
}

struct DecomposeArgs {
  std::string input, model, out_sparse, out_lowrank, backend = "slnet";
  double mu = 0.01;
  std::size_t delta = 50;
  bool shrink_at_inference = false;
  double lambda = 0.0, tol = 1e-7;
  int max_iter = 500;
  int bit_depth = 0;
};

void setup_decompose(Run& r, DecomposeArgs& a) {
  r.opt("input", a.input, "input TIFF stack")->required();
  r.opt("model", a.model, "weights file (slnet backend)");
  r.opt("out-sparse", a.out_sparse, "sparse output TIFF")->required();
  r.opt("out-lowrank", a.out_lowrank, "low-rank output TIFF");
  r.opt("backend", a.backend, "slnet or rpca")->check(CLI::IsMember({"slnet", "rpca"}));
  r.opt("delta", a.delta, "triplet offset")->check(CLI::PositiveNumber);
  r.opt("mu", a.mu, "shrinkage threshold applied with --shrink-at-inference");
  r.flag("shrink-at-inference", a.shrink_at_inference, "apply the singular value shrinkage to the network output");
  r.opt("lambda", a.lambda, "rpca sparse weight (0: 1/sqrt(max dim))");
  r.opt("tol", a.tol, "rpca relative residual tolerance");
  r.opt("max-iter", a.max_iter, "rpca iteration cap");
  r.opt("bit-depth", a.bit_depth, "output depth 8 or 16 (0: as input)")->check(CLI::IsMember({0, 8, 16}));
  r.primary = [&a] { return fs::path(a.out_sparse); };
  r.body = [&a](Run& run) {
    const ImageStack stack = load_stack(run, a.input);
    DecompositionResult res;
    if (a.backend == "slnet") {
      if (a.model.empty()) throw CLI::RequiredError("--model (slnet backend)");
      const SLNetModel model = load_model(a.model);
      Hyperparams hp;
      hp.triplet_offset = a.delta;
      hp.mu = a.mu;
      hp.shrink_at_inference = a.shrink_at_inference;
      res = run.timed("decompose", [&] { return decompose(model, stack, hp, run.threads); });
    } else {
      RpcaConfig cfg;
      cfg.lambda = a.lambda;
      cfg.tol = a.tol;
      cfg.max_iter = a.max_iter;
      std::size_t failed = 0;
      res = run.timed("decompose", [&] { return rpca_decompose(stack, a.delta, cfg, run.threads, &failed); });
      if (failed) std::cerr << "warning: " << failed << " windows did not converge within " << a.max_iter << " iterations\n";
    }
    const int depth = output_depth(a.bit_depth, stack);
    run.timed("write", [&] {
      write_tiff(res.sparse, a.out_sparse, depth);
      if (!a.out_lowrank.empty()) write_tiff(res.low_rank, a.out_lowrank, depth);
    });
    std::cout << "sparsity " << format_number(sparsity(res.sparse)) << " %\n";
  };
}

// ---- baseline / localize / render ----------------------------------------

struct BaselineArgs {
  std::string input, out, method = "median";
  int radius = 3;
  int bit_depth = 0;
};

void setup_baseline(Run& r, BaselineArgs& a) {
  r.opt("input", a.input, "input TIFF stack")->required();
  r.opt("out", a.out, "output TIFF stack")->required();
  r.opt("method", a.method, "median or rollingball")->check(CLI::IsMember({"median", "rollingball"}));
  r.opt("radius", a.radius, "rolling ball radius in pixels")->check(CLI::PositiveNumber);
  r.opt("bit-depth", a.bit_depth, "output depth 8 or 16 (0: as input)")->check(CLI::IsMember({0, 8, 16}));
  r.primary = [&a] { return fs::path(a.out); };
  r.body = [&a](Run& run) {
    const ImageStack stack = load_stack(run, a.input);
    ImageStack out = run.timed("baseline", [&] {
      if (a.method == "median") return median_subtract(stack);
      RollingBallConfig cfg;
      cfg.radius = a.radius;
      return rolling_ball(stack, cfg, run.threads);
    });
    run.timed("write", [&] { write_tiff(out, a.out, output_depth(a.bit_depth, stack)); });
    std::cout << "sparsity " << format_number(sparsity(out)) << " %\n";
  };
}

struct LocalizeArgs {
  std::string input, out;
  double threshold = 50, min_separation = 3, pixel_size = 100;
  int roi_radius = 3;
};

void setup_localize(Run& r, LocalizeArgs& a) {
  r.opt("input", a.input, "input TIFF stack")->required();
  r.opt("out", a.out, "localization CSV")->required();
  r.opt("threshold", a.threshold, "detection threshold (intensity units)");
  r.opt("min-separation", a.min_separation, "non-maximum suppression distance in pixels");
  r.opt("roi-radius", a.roi_radius, "fit window half-width in pixels");
  r.opt("pixel-size", a.pixel_size, "pixel size in nm")->check(CLI::PositiveNumber);
  r.primary = [&a] { return fs::path(a.out); };
  r.body = [&a](Run& run) {
    ImageStack stack = load_stack(run, a.input);
    stack.pixel_size_nm = a.pixel_size;
    LocalizeConfig cfg;
    cfg.threshold = a.threshold;
    cfg.min_separation = a.min_separation;
    cfg.roi_radius = a.roi_radius;
    const LocalizationTable table = run.timed("localize", [&] { return localize(stack, cfg, run.threads); });
    run.timed("write", [&] { write_locs_csv(table, a.out); });
    std::cout << table.rows.size() << " localizations\n";
  };
}

struct RenderArgs {
  std::string input, out, like;
  double pixel_size = 100;
  int magnification = 10;
  std::size_t height = 0, width = 0;
};

void setup_render(Run& r, RenderArgs& a) {
  r.opt("input", a.input, "localization CSV")->required();
  r.opt("out", a.out, "rendered 16-bit TIFF")->required();
  r.opt("pixel-size", a.pixel_size, "pixel size in nm used by the CSV")->check(CLI::PositiveNumber);
  r.opt("magnification", a.magnification, "output pixels per input pixel")->check(CLI::PositiveNumber);
  r.opt("like", a.like, "take height and width from this TIFF stack");
  r.opt("height", a.height, "source frame height");
  r.opt("width", a.width, "source frame width");
  r.primary = [&a] { return fs::path(a.out); };
  r.body = [&a](Run& run) {
    std::size_t h = a.height, w = a.width;
    if (!a.like.empty()) {
      const ImageStack like = read_tiff(a.like);
      h = like.height();
      w = like.width();
    }
    if (h == 0 || w == 0) throw CLI::ValidationError("render", "give --like or both --height and --width");
    const LocalizationTable table = read_locs_csv(a.input, a.pixel_size);
    const Frame img = run.timed("render", [&] { return render(table, a.magnification, h, w); });
    ImageStack out(1, img.height, img.width);
    out.set_frame(0, img);
    run.timed("write", [&] { write_tiff(out, a.out, 16); });
  };
}

// ---- metrics ---------------------------------------------------------------

struct MetricsArgs {
  std::vector<std::string> inputs;
  std::string out, locs, truth, recon, widefield;
  double epsilon = 0, radius = 1.5, blur = 13, pixel_size = 100;
  int magnification = 10;
};

void setup_metrics(CLI::App& app, std::vector<std::unique_ptr<Run>>& runs, MetricsArgs& a) {
  CLI::App* metrics = app.add_subcommand("metrics", "evaluation metrics written as CSV");
  metrics->require_subcommand(1);

  Run& sp = add_run(*metrics, runs, "sparsity", "percentage of exactly-zero pixels", "metrics sparsity");
  sp.params.emplace_back("input", [&a] { return str(a.inputs); });
  sp.app->add_option("--input", a.inputs, "one or more TIFF stacks")->required()->delimiter(',');
  sp.opt("out", a.out, "CSV output")->required();
  sp.opt("epsilon", a.epsilon, "count |v| <= epsilon as zero");
  sp.primary = [&a] { return fs::path(a.out); };
  sp.body = [&a](Run& run) {
    CsvTable csv{{"input", "frames", "sparsity"}, {}};
    for (const auto& in : a.inputs) {
      const ImageStack s = load_stack(run, in);
      csv.add_row({in, std::to_string(s.frames()), format_number(sparsity(s, a.epsilon))});
    }
    write_csv(csv, a.out);
    std::cout << csv.str();
  };

  Run& lo = add_run(*metrics, runs, "localization", "RMSE, recall and precision against ground truth",
                    "metrics localization");
  lo.opt("locs", a.locs, "localization CSV")->required();
  lo.opt("truth", a.truth, "ground-truth CSV")->required();
  lo.opt("radius", a.radius, "match radius in pixels");
  lo.opt("pixel-size", a.pixel_size, "pixel size in nm used by the CSV")->check(CLI::PositiveNumber);
  lo.opt("magnification", a.magnification, "bins per pixel for the emitter profile");
  lo.opt("out", a.out, "CSV output")->required();
  lo.primary = [&a] { return fs::path(a.out); };
  lo.body = [&a](Run&) {
    const LocalizationTable table = read_locs_csv(a.locs, a.pixel_size);
    const GroundTruth truth = read_ground_truth_csv(a.truth);
    const LocalizationError e = localization_error(table, truth, a.radius);
    std::string fwhm = "nan";
    try {
      const auto matches = match_localizations(table, truth, a.radius);
      fwhm = format_number(emitter_profile_fwhm(table, truth, matches, a.magnification, a.radius).fwhm);
    } catch (const std::exception&) {
      // too few matches for a profile fit
    }
    CsvTable csv{{"rmse [px]", "recall", "precision", "precision_defined", "matched", "truth", "detected",
                  "profile_fwhm [px]"},
                 {}};
    csv.add_row({format_number(e.rmse), format_number(e.recall), format_number(e.precision),
                 str(e.precision_defined), std::to_string(e.matched), std::to_string(e.truth_count),
                 std::to_string(e.detected), fwhm});
    write_csv(csv, a.out);
    std::cout << csv.str();
  };

  Run& sq = add_run(*metrics, runs, "squirrel", "resolution-scaled Pearson coefficient and error", "metrics squirrel");
  sq.opt("recon", a.recon, "super-resolution TIFF (first page)")->required();
  sq.opt("widefield", a.widefield, "widefield TIFF (first page)")->required();
  sq.opt("blur", a.blur, "Gaussian blur sigma in reconstruction pixels")->check(CLI::PositiveNumber);
  sq.opt("out", a.out, "CSV output")->required();
  sq.primary = [&a] { return fs::path(a.out); };
  sq.body = [&a](Run&) {
    const SquirrelScores s =
        squirrel_scores(read_tiff(a.recon).frame_copy(0), read_tiff(a.widefield).frame_copy(0), a.blur);
    CsvTable csv{{"rsp", "rse", "scale", "offset"}, {}};
    csv.add_row({format_number(s.rsp), format_number(s.rse), format_number(s.scale), format_number(s.offset)});
    write_csv(csv, a.out);
    std::cout << csv.str();
  };
}

// ---- sweep / bench -------------------------------------------------------

struct SweepArgs {
  std::string input, out;
  std::vector<double> alphas{12}, mus{0.01};
  std::vector<std::uint64_t> seeds{0};
  HpArgs hp;
};

void setup_sweep(Run& r, SweepArgs& a) {
  r.opt("input", a.input, "input TIFF stack")->required();
  r.opt("out", a.out, "CSV output")->required();
  r.opt("alphas", a.alphas, "comma-separated alpha values");
  r.opt("mus", a.mus, "comma-separated mu values");
  r.opt("seeds", a.seeds, "comma-separated seeds");
  a.hp.bind(r);
  r.primary = [&a] { return fs::path(a.out); };
  r.body = [&a](Run& run) {
    const ImageStack stack = load_stack(run, a.input);
    CsvTable csv{{"alpha", "mu", "seed", "sparsity", "final_loss", "seconds", "dead_channels"}, {}};
    for (double alpha : a.alphas)
      for (double mu : a.mus)
        for (std::uint64_t seed : a.seeds) {
          Hyperparams hp = a.hp.get();
          hp.alpha = alpha;
          hp.mu = mu;
          hp.seed = seed;
          hp.validate();
          const auto start = std::chrono::steady_clock::now();
          auto [model, report] = train(stack, hp);
          const DecompositionResult res = decompose(model, stack, hp, run.threads);
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          csv.add_row({format_number(alpha), format_number(mu), std::to_string(seed),
                       format_number(sparsity(res.sparse)),
                       report.epochs.empty() ? "nan" : format_number(report.epochs.back().total),
                       format_number(secs), std::to_string(report.dead_channels)});
          std::cout << csv.rows.back()[0] << " " << csv.rows.back()[1] << " " << csv.rows.back()[2] << " sparsity "
                    << csv.rows.back()[3] << "\n";
        }
    write_csv(csv, a.out);
  };
}

struct BenchArgs {
  std::string input, out, model;
  int repeats = 1;
  int rpca_max_iter = 500;
};

void setup_bench(Run& r, BenchArgs& a) {
  r.opt("input", a.input, "input TIFF stack")->required();
  r.opt("out", a.out, "timing CSV")->required();
  r.opt("model", a.model, "weights file (default: untrained network of the default shape)");
  r.opt("repeats", a.repeats, "timed repetitions per method")->check(CLI::PositiveNumber);
  r.opt("rpca-max-iter", a.rpca_max_iter, "rpca iteration cap")->check(CLI::PositiveNumber);
  r.primary = [&a] { return fs::path(a.out); };
  r.body = [&a](Run& run) {
    const ImageStack stack = load_stack(run, a.input);
    Hyperparams hp;
    const SLNetModel model =
        a.model.empty() ? init_model(3, hp.hidden_channels, hp.kernel_size, hp.seed) : load_model(a.model);
    RpcaConfig rpca;
    rpca.max_iter = a.rpca_max_iter;
    const std::vector<std::pair<std::string, std::function<void()>>> methods = {
        {"median", [&] { median_subtract(stack); }},
        {"rollingball-3", [&] { rolling_ball(stack, RollingBallConfig{3, false}, run.threads); }},
        {"rollingball-10", [&] { rolling_ball(stack, RollingBallConfig{10, false}, run.threads); }},
        {"slnet", [&] { decompose(model, stack, hp, run.threads); }},
        {"rpca", [&] { rpca_decompose(stack, hp.triplet_offset, rpca, run.threads); }},
    };
    CsvTable csv{{"method", "threads", "frames", "repeat", "seconds", "frames_per_second"}, {}};
    for (const auto& [name, fn] : methods)
      for (int rep = 0; rep < a.repeats; ++rep) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        csv.add_row({name, std::to_string(run.threads), std::to_string(stack.frames()), std::to_string(rep + 1),
                     format_number(secs), format_number(static_cast<double>(stack.frames()) / secs)});
      }
    write_csv(csv, a.out);
    std::cout << csv.str();
  };
}

// Inserts `--key=value` for every config entry not given explicitly, right
// after the subcommand path, so explicit flags always win.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::size_t cmd_end = 0;
  while (cmd_end < args.size() && !args[cmd_end].empty() && args[cmd_end][0] != '-') ++cmd_end;
  std::string path;
  for (std::size_t i = cmd_end; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  const auto given = [&](const std::string& key) {
    for (std::size_t i = cmd_end; i < args.size(); ++i)
      if (args[i] == "--" + key || args[i].rfind("--" + key + "=", 0) == 0) return true;
    return false;
  };
  std::vector<std::string> extra;
  for (const auto& [key, value] : read_config(path))
    if (key != "config" && key != "manifest" && !given(key)) extra.push_back("--" + key + "=" + value);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(cmd_end), extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Background removal for single-molecule localization microscopy stacks"};
  app.set_version_flag("--version", STORMBG_VERSION);
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Run>> runs;

  SynthArgs synth_args;
  TrainArgs train_args;
  DecomposeArgs decompose_args;
  BaselineArgs baseline_args;
  LocalizeArgs localize_args;
  RenderArgs render_args;
  MetricsArgs metrics_args;
  SweepArgs sweep_args;
  BenchArgs bench_args;
  setup_synth(add_run(app, runs, "synth", "generate a synthetic stack with ground truth", "synth"), synth_args);
  setup_train(add_run(app, runs, "train", "train SLNet on a stack", "train"), train_args);
  setup_decompose(add_run(app, runs, "decompose", "split a stack into low-rank and sparse parts", "decompose"),
                  decompose_args);
  setup_baseline(add_run(app, runs, "baseline", "median or rolling-ball background subtraction", "baseline"),
                 baseline_args);
  setup_localize(add_run(app, runs, "localize", "detect and fit emitters", "localize"), localize_args);
  setup_render(add_run(app, runs, "render", "histogram rendering of a localization table", "render"), render_args);
  setup_metrics(app, runs, metrics_args);
  setup_sweep(add_run(app, runs, "sweep", "train and decompose over alpha/mu/seed grids", "sweep"), sweep_args);
  setup_bench(add_run(app, runs, "bench", "per-method decomposition throughput", "bench"), bench_args);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    for (auto& run : runs) {
      if (!run->app->parsed()) continue;
      run->body(*run);
      run->write_manifest();
    }
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
