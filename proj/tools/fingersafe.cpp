#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fingersafe/attack.hpp"
#include "fingersafe/config.hpp"
#include "fingersafe/errors.hpp"
#include "fingersafe/evalharness.hpp"
#include "fingersafe/imgcore.hpp"
#include "fingersafe/orientation.hpp"
#include "fingersafe/parallel.hpp"
#include "fingersafe/perception.hpp"

namespace fs = std::filesystem;
using namespace fingersafe;
using imgcore::Image;

namespace {

// Flags that map onto configuration keys. Only flags given on the command
// line become overrides, so file values survive unless a flag names them.
class KeyFlags {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key) {
    const config::Settings defaults = default_settings();
    std::string help;
    for (const auto& k : config::known_keys())
      if (key == k.key) help = k.help;
    auto* opt = app->add_option(flag, values_[key], help + " [" + key + "]");
    opt->default_str(config::value_of(defaults, key));
    bound_.push_back({opt, key});
  }

  config::KeyValues overrides() const {
    config::KeyValues out;
    for (const auto& [opt, key] : bound_)
      if (opt->count() > 0) out.emplace_back(key, values_.at(key));
    return out;
  }

 private:
  static config::Settings default_settings() {
    config::Settings s;
    s.bench.workers = default_workers();
    return s;
  }

  std::map<std::string, std::string> values_;
  std::vector<std::pair<CLI::Option*, std::string>> bound_;
};

struct Common {
  std::string config_file;
  KeyFlags flags;

  config::Settings settings() const {
    return config::load(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), flags.overrides());
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "plain-text config file ([attack], [scatnet], [evalharness], [cli] sections)");
  c.flags.add(app, "--seed", "cli.seed");
  c.flags.add(app, "--workers", "cli.workers");
}

void add_protection(CLI::App* app, Common& c) {
  c.flags.add(app, "--epsilon", "attack.epsilon");
  c.flags.add(app, "--alpha", "attack.alpha");
  c.flags.add(app, "--steps", "attack.steps");
  c.flags.add(app, "--lambda", "attack.lambda");
  c.flags.add(app, "--gamma", "attack.gamma");
}

void add_synth(CLI::App* app, Common& c) {
  c.flags.add(app, "--identities", "evalharness.identities");
  c.flags.add(app, "--impressions", "evalharness.impressions");
  c.flags.add(app, "--height", "evalharness.height");
  c.flags.add(app, "--width", "evalharness.width");
  c.flags.add(app, "--period", "evalharness.period");
  c.flags.add(app, "--ridge-contrast", "evalharness.ridge_contrast");
  c.flags.add(app, "--noise", "evalharness.noise");
  c.flags.add(app, "--rotation-jitter", "evalharness.rotation_jitter");
  c.flags.add(app, "--translation-jitter", "evalharness.translation_jitter");
}

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<fs::path> image_files(const fs::path& root) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(root)) {
    out.push_back(root);
    return out;
  }
  if (!fs::is_directory(root)) throw IoError("input is neither a file nor a directory: " + root.string());
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- protect

struct ProtectArgs {
  std::string in, out;
  bool segment = false;
};

int cmd_protect(const ProtectArgs& a, const Common& c) {
  const config::Settings s = c.settings();
  const auto files = image_files(a.in);
  if (files.empty()) throw IoError("no images under " + a.in);
  const fs::path in_root = fs::is_directory(a.in) ? fs::path(a.in) : fs::path(a.in).parent_path();

  struct Outcome {
    bool ok = false;
    double seconds = 0.0;
    std::string message;
  };
  std::vector<Outcome> outcomes(files.size());
  parallel_for(files.size(), s.bench.workers, [&](std::size_t i) {
    const fs::path rel = fs::relative(files[i], in_root);
    Image x;
    try {
      x = imgcore::read_image(files[i]);
    } catch (const std::exception& e) {
      outcomes[i].message = e.what();
      return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const attack::ProtectionResult r =
        a.segment ? attack::protect_photo(x, s.bench.protection) : attack::fingersafe_protect(x, s.bench.protection);
    outcomes[i].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path base = fs::path(a.out) / rel.parent_path() / rel.stem();
    fs::create_directories(base.parent_path());
    imgcore::write_png(r.protected_image, base.string() + ".png");
    imgcore::write_png(imgcore::noise_to_display(r.noise), base.string() + "_noise.png");
    std::ofstream trace(base.string() + "_trace.csv");
    attack::write_trace_csv(trace, r.trace);
    if (!trace) throw IoError("cannot write trace for " + rel.string());
    outcomes[i].ok = true;
  });

  int done = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!outcomes[i].ok) {
      std::cerr << "warning: skipped " << files[i].string() << ": " << outcomes[i].message << '\n';
      continue;
    }
    ++done;
    total += outcomes[i].seconds;
    std::printf("%s %.3f s\n", fs::relative(files[i], in_root).string().c_str(), outcomes[i].seconds);
  }
  if (done == 0) throw IoError("no image could be read under " + a.in);
  std::printf("protected %d of %zu images, mean %.3f s per image\n", done, files.size(), total / done);
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string task = "identify";
  std::string dataset, gallery, probes, calibration, csv;
  std::string extractor = "scattering";
  bool half = false;
};

// Relabels `data` so identity names share labels with `reference`; unknown
// identities get fresh labels past the reference range.
void align_labels(eval::Dataset& data, const std::vector<std::string>& reference) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < reference.size(); ++i) index[reference[i]] = static_cast<int>(i);
  int next = static_cast<int>(reference.size());
  std::vector<int> remap;
  for (const auto& name : data.identities) {
    auto it = index.find(name);
    remap.push_back(it != index.end() ? it->second : next++);
  }
  for (auto& e : data.entries) e.label = remap[e.label];
  std::vector<std::string> names(next);
  for (std::size_t i = 0; i < reference.size(); ++i) names[i] = reference[i];
  for (std::size_t i = 0; i < data.identities.size(); ++i) names[remap[i]] = data.identities[i];
  data.identities = names;
}

std::vector<eval::Enrolled> enrol(const eval::Dataset& d, eval::Extractor x, int workers) {
  std::vector<eval::Enrolled> out(d.entries.size());
  parallel_for(d.entries.size(), workers, [&](std::size_t i) {
    out[i] = {d.entries[i].label, eval::make_template(d.entries[i].image, x)};
  });
  return out;
}

std::pair<std::vector<double>, std::vector<double>> pair_scores(const std::vector<eval::Enrolled>& gallery,
                                                                const std::vector<eval::Enrolled>& probes) {
  std::vector<double> genuine, impostor;
  for (const auto& p : probes)
    for (const auto& g : gallery) (p.label == g.label ? genuine : impostor).push_back(eval::dissimilarity(g.tmpl, p.tmpl));
  return {genuine, impostor};
}

int cmd_eval(const EvalArgs& a, const Common& c) {
  const config::Settings s = c.settings();
  const eval::Extractor extractor = eval::parse_extractor(a.extractor);
  eval::Dataset gallery, probes;
  if (!a.dataset.empty()) {
    if (!a.gallery.empty() || !a.probes.empty()) throw ConfigError("use either --dataset or --gallery/--probes");
    eval::Split split = eval::split_half(eval::load_dataset(a.dataset));
    gallery = std::move(split.gallery);
    probes = std::move(split.probes);
  } else {
    if (a.gallery.empty() || a.probes.empty()) throw ConfigError("eval needs --dataset or both --gallery and --probes");
    gallery = eval::load_dataset(a.gallery);
    probes = eval::load_dataset(a.probes);
    align_labels(probes, gallery.identities);
    if (a.half) {
      gallery = eval::split_half(gallery).gallery;
      probes = eval::split_half(probes).probes;
    }
  }
  eval::check_disjoint(gallery, probes);

  const auto g = enrol(gallery, extractor, s.bench.workers);
  const auto p = enrol(probes, extractor, s.bench.workers);
  eval::EvalReport report;
  report.header = {"task=" + a.task, "extractor=" + std::string(eval::extractor_name(extractor)),
                   "surrogate: order-2 scattering network stands in for the attacker's DNN feature extractor"};
  if (a.task == "identify") {
    const double acc = eval::identification_accuracy(g, p);
    std::printf("acc %.6f (%zu probes, %zu gallery templates)\n", acc, p.size(), g.size());
    report.rows.push_back({"identify", eval::extractor_name(extractor), "none", 0, 0, 0, 0, "acc", acc});
  } else if (a.task == "verify") {
    const auto [genuine, impostor] = pair_scores(g, p);
    if (genuine.empty()) throw ContractError("no genuine pairs between gallery and probes");
    std::vector<double> cal_genuine = genuine, cal_impostor = impostor;
    if (!a.calibration.empty()) {
      eval::Dataset clean = eval::load_dataset(a.calibration);
      align_labels(clean, gallery.identities);
      if (a.half) clean = eval::split_half(clean).probes;
      std::tie(cal_genuine, cal_impostor) = pair_scores(g, enrol(clean, extractor, s.bench.workers));
    }
    if (cal_genuine.empty() || cal_impostor.empty())
      throw ContractError("calibration needs both genuine and impostor pairs");
    const eval::Calibration cal = eval::calibrate_threshold(cal_genuine, cal_impostor);
    const double tpr = eval::verify_tpr(genuine, cal.tau);
    std::printf("tpr %.6f at tau %.6f (calibration eer %.6f, %zu genuine pairs)\n", tpr, cal.tau, cal.eer, genuine.size());
    const std::string ex = eval::extractor_name(extractor);
    report.rows.push_back({"verify", ex, "none", 0, 0, 0, 0, "tau", cal.tau});
    report.rows.push_back({"verify", ex, "none", 0, 0, 0, 0, "eer", cal.eer});
    report.rows.push_back({"verify", ex, "none", 0, 0, 0, 0, "tpr", tpr});
  } else {
    throw ConfigError("unknown eval task '" + a.task + "' (expected identify or verify)");
  }
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw IoError("cannot write " + a.csv);
    eval::write_report(out, report);
  }
  return 0;
}

// ---------------------------------------------------------------- synth

int cmd_synth(const std::string& out, const Common& c) {
  const config::Settings s = c.settings();
  const eval::Dataset d = eval::write_synthetic_dataset(s.bench.synth, out, s.bench.workers);
  std::printf("wrote %zu images and %zu orientation files under %s\n", d.entries.size(), d.entries.size(), out.c_str());
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string csv = "report.csv";
  std::string plots;
  bool quiet = false;
};

int cmd_bench(const BenchArgs& a, const Common& c) {
  config::Settings s = c.settings();
  s.bench.csv = a.csv;
  s.bench.plot_dir = a.plots;
  if (!a.quiet) s.bench.progress = [](const std::string& msg) { std::cerr << "bench: " << msg << '\n'; };
  const auto t0 = std::chrono::steady_clock::now();
  const eval::EvalReport r = eval::run_benchmark(s.bench);
  std::printf("wrote %zu rows to %s in %.1f s\n", r.rows.size(), a.csv.c_str(),
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

// ---------------------------------------------------------------- visualize

struct VisualizeArgs {
  std::string what, in, out, reference;
};

Image hue_map(const orientation::OrientationField& phi) {
  Image out(phi.height(), phi.width(), 3);
  for (int i = 0; i < phi.height(); ++i)
    for (int j = 0; j < phi.width(); ++j) {
      // Hue 2*phi with full saturation and value.
      const double h = std::fmod(2.0 * phi.at(i, j) / (2.0 * std::numbers::pi), 1.0) * 6.0;
      const int sector = static_cast<int>(h) % 6;
      const double f = h - std::floor(h);
      const double rgb[6][3] = {{1, f, 0}, {1 - f, 1, 0}, {0, 1, f}, {0, 1 - f, 1}, {f, 0, 1}, {1, 0, 1 - f}};
      for (int ch = 0; ch < 3; ++ch) out.at(i, j, ch) = rgb[sector][ch];
    }
  return out;
}

Image min_max(const Image& x) {
  double lo = x.data()[0], hi = lo;
  for (double v : x.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Image out = x;
  for (double& v : out.data()) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  return out;
}

int cmd_visualize(const VisualizeArgs& a) {
  const Image x = imgcore::read_image(a.in);
  const Image gray = imgcore::to_luminance(x);
  Image out;
  if (a.what == "orientation") {
    out = hue_map(orientation::estimate_orientation(gray));
  } else if (a.what == "contrast") {
    out = perception::local_contrast(gray);
    for (double& v : out.data()) v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
  } else if (a.what == "saliency") {
    out = min_max(perception::spectral_saliency(gray));
  } else if (a.what == "noise") {
    if (a.reference.empty()) throw ConfigError("visualize --what noise needs --reference <clean image>");
    const Image clean = imgcore::read_image(a.reference);
    if (!clean.same_shape(x)) throw ShapeError("protected and reference images differ in shape");
    Image noise = x;
    for (std::size_t i = 0; i < noise.size(); ++i) noise.data()[i] -= clean.data()[i];
    out = imgcore::noise_to_display(noise);
  } else {
    throw ConfigError("unknown map '" + a.what + "' (expected orientation, contrast, saliency or noise)");
  }
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  imgcore::write_png(out, a.out);
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

int fail(const char* category, const std::string& what, int code) {
  std::cerr << "error[" << category << "]: " << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fingerprint privacy protection toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Common protect_c, eval_c, synth_c, bench_c;

  ProtectArgs pa;
  auto* protect = app.add_subcommand("protect", "protect every image under a directory tree");
  protect->add_option("--in", pa.in, "input image or directory")->required();
  protect->add_option("--out", pa.out, "output directory (mirrors the input tree)")->required();
  protect->add_flag("--segment", pa.segment, "segment the fingertip and protect only the tip region");
  add_common(protect, protect_c);
  add_protection(protect, protect_c);

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "identification or verification metrics");
  evalc->add_option("task", ea.task, "identify or verify")->capture_default_str()->check(CLI::IsMember({"identify", "verify"}));
  evalc->add_option("--dataset", ea.dataset, "dataset root split half gallery / half probes");
  evalc->add_option("--gallery", ea.gallery, "gallery dataset root");
  evalc->add_option("--probes", ea.probes, "probe dataset root (identities matched by directory name)");
  evalc->add_option("--calibration", ea.calibration, "clean probe root used to calibrate the verification threshold");
  evalc->add_flag("--half", ea.half, "take the first impression half of --gallery and the second half of --probes");
  evalc->add_option("--extractor", ea.extractor, "scattering or minutiae")->capture_default_str();
  evalc->add_option("--csv", ea.csv, "write the metric rows as a report CSV");
  add_common(evalc, eval_c);

  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic fingerprint dataset");
  synth->add_option("--out", synth_out, "dataset root")->required();
  add_common(synth, synth_c);
  add_synth(synth, synth_c);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "run the benchmark grid and write the report");
  bench->add_option("--csv", ba.csv, "report CSV path")->capture_default_str();
  bench->add_option("--plots", ba.plots, "directory for summary PNG plots");
  bench->add_flag("--quiet", ba.quiet, "suppress progress on stderr");
  add_common(bench, bench_c);
  bench_c.flags.add(bench, "--suite", "evalharness.suite");
  bench_c.flags.add(bench, "--dataset", "evalharness.dataset");
  add_protection(bench, bench_c);
  add_synth(bench, bench_c);
  bench_c.flags.add(bench, "--lambda-sweep", "evalharness.lambda_sweep");
  bench_c.flags.add(bench, "--gamma-sweep", "evalharness.gamma_sweep");
  bench_c.flags.add(bench, "--jpeg-qualities", "evalharness.jpeg_qualities");
  bench_c.flags.add(bench, "--blur-sigmas", "evalharness.blur_sigmas");
  bench_c.flags.add(bench, "--pixelize-fractions", "evalharness.pixelize_fractions");

  VisualizeArgs va;
  auto* visualize = app.add_subcommand("visualize", "export orientation, contrast, saliency or noise maps as PNG");
  visualize->add_option("--what", va.what, "orientation, contrast, saliency or noise")
      ->required()
      ->check(CLI::IsMember({"orientation", "contrast", "saliency", "noise"}));
  visualize->add_option("--in", va.in, "input image")->required();
  visualize->add_option("--out", va.out, "output PNG")->required();
  visualize->add_option("--reference", va.reference, "clean image for --what noise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", std::string(e.what()) + " (run with --help for usage)", 2);
  }

  try {
    if (*protect) return cmd_protect(pa, protect_c);
    if (*evalc) return cmd_eval(ea, eval_c);
    if (*synth) return cmd_synth(synth_out, synth_c);
    if (*bench) return cmd_bench(ba, bench_c);
    if (*visualize) return cmd_visualize(va);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const ShapeError& e) {
    return fail("shape", e.what(), 2);
  } catch (const ContractError& e) {
    return fail("contract", e.what(), 2);
  } catch (const IoError& e) {
    return fail("io", e.what(), 1);
  } catch (const SegmentationError& e) {
    return fail("segmentation", e.what(), 1);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 2;
}
