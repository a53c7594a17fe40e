#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fingersafe/attack.hpp"
#include "fingersafe/classical.hpp"
#include "fingersafe/evalharness.hpp"
#include "fingersafe/orientation.hpp"
#include "fingersafe/parallel.hpp"
#include "fingersafe/perception.hpp"

using namespace fingersafe;
using imgcore::Image;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Image random_image(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image x(h, w, c);
  for (double& v : x.data()) v = u(rng);
  return x;
}

// ------------------------------------------------------------ 1 gradients

// One tape evaluation yields all four objective terms, so each probe point is
// shared by the four central-difference checks.
struct TermsAt {
  double value[4];
  std::vector<std::int64_t> signature;
};

TermsAt terms_at(const attack::CleanReference& ref, const attack::ProtectionConfig& cfg, const Image& psi,
                 const ad::Tensor& x) {
  ad::Tape tape;
  const attack::ObjectiveTerms o = attack::record_objective(tape, tape.leaf(x), ref, cfg, &psi);
  return {{tape.scalar_value(o.adversarial), tape.scalar_value(o.orientation), tape.scalar_value(o.contrast),
           tape.scalar_value(o.total)},
          tape.kink_signature()};
}

struct ImageCheck {
  double worst[4] = {0, 0, 0, 0};
  int checked = 0, excluded = 0;
};

ImageCheck check_image(std::uint64_t k, const attack::ProtectionConfig& cfg) {
  constexpr double h = 1e-4, kink_radius = 10.0;
  const Image clean = random_image(32, 32, 3, 100 + k);
  const Image start = attack::project_linf(random_image(32, 32, 3, 200 + k), clean, cfg.epsilon);
  const Image psi = perception::spectral_saliency(imgcore::to_luminance(start));
  const attack::CleanReference ref = attack::make_clean_reference(clean, cfg);
  const ad::Tensor x = ad::Tensor::from_image(start);

  ad::Tensor grad[4];
  double floor[4];
  std::vector<std::int64_t> signature;
  {
    ad::Tape tape;
    const ad::Var in = tape.leaf(x);
    const attack::ObjectiveTerms o = attack::record_objective(tape, in, ref, cfg, &psi);
    const ad::Var outs[4] = {o.adversarial, o.orientation, o.contrast, o.total};
    for (int t = 0; t < 4; ++t) {
      grad[t] = tape.backward(outs[t], in);
      double gmax = 0.0;
      for (double v : grad[t].data) gmax = std::max(gmax, std::abs(v));
      floor[t] = std::max(1e-4 * gmax, 1e-300);
    }
    signature = tape.kink_signature();
  }

  ImageCheck out;
  std::mt19937_64 rng(300 + k);
  std::set<std::size_t> seen;
  ad::Tensor probe = x;
  while (out.checked < 50 && seen.size() < x.data.size()) {
    const std::size_t c = rng() % x.data.size();
    if (!seen.insert(c).second) continue;
    const double orig = x.data[c];
    probe.data[c] = orig + kink_radius * h;
    bool kinked = terms_at(ref, cfg, psi, probe).signature != signature;
    if (!kinked) {
      probe.data[c] = orig - kink_radius * h;
      kinked = terms_at(ref, cfg, psi, probe).signature != signature;
    }
    if (kinked) {
      probe.data[c] = orig;
      ++out.excluded;
      continue;
    }
    probe.data[c] = orig + h;
    const TermsAt plus = terms_at(ref, cfg, psi, probe);
    probe.data[c] = orig - h;
    const TermsAt minus = terms_at(ref, cfg, psi, probe);
    probe.data[c] = orig;
    for (int t = 0; t < 4; ++t) {
      const double fd = (plus.value[t] - minus.value[t]) / (2.0 * h);
      const double ad = grad[t].data[c];
      out.worst[t] = std::max(out.worst[t], std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor[t]}));
    }
    ++out.checked;
  }
  return out;
}

Verdict gradient_oracle(int workers) {
  const auto t0 = std::chrono::steady_clock::now();
  const attack::ProtectionConfig cfg;
  std::vector<ImageCheck> checks(20);
  parallel_for(checks.size(), workers, [&](std::size_t k) { checks[k] = check_image(k, cfg); });
  const char* names[] = {"adversarial", "orientation", "contrast", "total"};
  double worst[4] = {0, 0, 0, 0};
  int checked = 0, excluded = 0;
  for (const auto& c : checks) {
    for (int t = 0; t < 4; ++t) worst[t] = std::max(worst[t], c.worst[t]);
    checked += c.checked;
    excluded += c.excluded;
  }
  const double seconds = elapsed(t0);
  const double max_err = *std::max_element(worst, worst + 4);
  std::string detail = "max relative error ";
  for (int t = 0; t < 4; ++t) detail += fmt("%s %.2e, ", names[t], worst[t]);
  detail += fmt("%d points checked, %d near kinks skipped, %.1f s (<= 120 s) on %d workers", checked, excluded, seconds,
                workers);
  return {max_err <= 1e-3 && checked == 20 * 50 && seconds <= 120.0, detail};
}

// ------------------------------------------------------------ 2 orientation

Image gabor_ridges(int size, double normal, double period = 8.0) {
  Image x(size, size, 1);
  const double c = std::cos(normal), s = std::sin(normal);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) x.at(i, j) = 0.5 + 0.5 * std::cos(2.0 * kPi * (j * c + i * s) / period);
  return x;
}

Verdict orientation_correctness() {
  double worst_abs = 0.0, worst_rot = 0.0;
  for (int deg = 0; deg < 180; deg += 30) {
    const double theta = deg * kDeg;
    const Image phi = orientation::estimate_orientation(gabor_ridges(96, theta));
    const Image expected(96, 96, 1, std::fmod(kPi / 2 + theta, kPi));
    worst_abs = std::max(worst_abs, orientation::mean_angular_error(phi, expected, 20));
  }
  const Image base = gabor_ridges(128, 0.0);
  const Image phi = orientation::estimate_orientation(base);
  for (double deg : {30.0, 60.0, 90.0, 120.0, 150.0, -45.0}) {
    const Image rotated = imgcore::warp_rigid(base, deg * kDeg, 0.0, 0.0, 0.5);
    Image shifted = phi;
    for (double& v : shifted.data()) v += deg * kDeg;
    worst_rot = std::max(worst_rot, orientation::mean_angular_error(orientation::estimate_orientation(rotated), shifted, 40));
  }
  return {worst_abs <= 3.0 * kDeg && worst_rot <= 3.0 * kDeg,
          fmt("max interior error %.3f deg, max rotation-equivariance error %.3f deg", worst_abs / kDeg, worst_rot / kDeg)};
}

// ------------------------------------------------------------ benchmark readout

struct Bench {
  eval::EvalReport report;
  double seconds = 0.0;
  std::string csv;
};

std::optional<double> lookup(const eval::EvalReport& r, const std::string& scenario, const std::string& extractor,
                             const std::string& attack, const std::string& metric, int quality = 0) {
  for (const auto& row : r.rows)
    if (row.scenario == scenario && row.extractor == extractor && row.attack == attack && row.metric == metric &&
        row.jpeg_quality == quality)
      return row.value;
  return std::nullopt;
}

double need(const eval::EvalReport& r, const std::string& scenario, const std::string& extractor, const std::string& attack,
            const std::string& metric, int quality = 0) {
  const auto v = lookup(r, scenario, extractor, attack, metric, quality);
  if (!v) throw std::runtime_error("report lacks row " + scenario + "," + extractor + "," + attack + "," + metric);
  return *v;
}

Verdict constraint_invariants(const Bench& b, double epsilon) {
  int sets = 0, bad_sets = 0;
  double linf = 0.0;
  for (const auto& row : b.report.rows) {
    if (row.metric == "violation_rate") {
      ++sets;
      bad_sets += row.value != 0.0;
    }
    if (row.metric == "linf") linf = std::max(linf, row.value);
  }
  return {sets > 0 && bad_sets == 0 && linf <= epsilon + 1e-9,
          fmt("%d protected probe sets, %d with violations, max linf %.9f (budget %.9f)", sets, bad_sets, linf, epsilon)};
}

Verdict protection_efficacy(const Bench& b) {
  const auto& r = b.report;
  const double clean_acc = need(r, "clean", "scattering", "none", "acc");
  const double fs_acc = need(r, "attack", "scattering", "fingersafe", "acc");
  const double clean_tpr = need(r, "clean", "minutiae", "none", "tpr");
  const double fs_tpr = need(r, "attack", "minutiae", "fingersafe", "tpr");
  const double drop = clean_tpr > 0.0 ? 1.0 - fs_tpr / clean_tpr : 0.0;
  const bool pass = clean_acc >= 0.90 && fs_acc <= 0.20 && drop >= 0.50 && b.seconds <= 900.0;
  return {pass, fmt("clean acc %.3f (>= 0.90), protected acc %.3f (<= 0.20), minutiae tpr %.3f -> %.3f, "
                    "relative drop %.3f (>= 0.50), benchmark %.0f s",
                    clean_acc, fs_acc, clean_tpr, fs_tpr, drop, b.seconds)};
}

Verdict ablation_ordering(const Bench& b) {
  const auto& r = b.report;
  const double acc_o = need(r, "ablation", "scattering", "orientation_only", "acc");
  const double acc_c = need(r, "ablation", "scattering", "contrast_only", "acc");
  const double acc_oc = need(r, "ablation", "scattering", "orientation_contrast", "acc");
  const double nat_o = need(r, "ablation", "none", "orientation_only", "naturalness");
  const double nat_oc = need(r, "ablation", "none", "orientation_contrast", "naturalness");
  const double reduction = nat_o > 0.0 ? 1.0 - nat_oc / nat_o : 0.0;
  const bool pass = acc_o < acc_c && reduction >= 0.30 && std::abs(acc_oc - acc_o) <= 0.10;
  return {pass, fmt("acc adv+O %.3f vs adv+C %.3f, naturalness adv+O %.3e -> adv+O+C %.3e (reduction %.3f, >= 0.30), "
                    "acc change %.3f (<= 0.10)",
                    acc_o, acc_c, nat_o, nat_oc, reduction, std::abs(acc_oc - acc_o))};
}

Verdict naturalness_vs_pgd(const Bench& b) {
  const double fs = need(b.report, "attack", "none", "fingersafe", "naturalness");
  const double pgd = need(b.report, "attack", "none", "pgd", "naturalness");
  return {fs <= 0.5 * pgd, fmt("N(fingersafe) %.3e, N(pgd) %.3e, ratio %.3f (<= 0.5)", fs, pgd, pgd > 0 ? fs / pgd : 0.0)};
}

Verdict jpeg_robustness(const Bench& b) {
  const double clean = need(b.report, "jpeg", "scattering", "none", "acc", 75);
  const double prot = need(b.report, "jpeg", "scattering", "fingersafe", "acc", 75);
  return {prot <= 0.40, fmt("quality 75: protected acc %.3f (<= 0.40), clean acc %.3f", prot, clean)};
}

// ------------------------------------------------------------ 8 runtime

Verdict runtime_budget() {
  eval::SynthConfig sc;
  sc.height = sc.width = 300;
  const Image x = eval::synth_fingerprint(sc, 0, 0).image;
  const auto t0 = std::chrono::steady_clock::now();
  const attack::ProtectionResult r = attack::fingersafe_protect(x, attack::ProtectionConfig{});
  const double s = elapsed(t0);
  return {s <= 5.0 && r.protected_image.same_shape(x),
          fmt("300x300 RGB, 20 steps: %.2f s (<= 5 s) on %u hardware threads", s, std::thread::hardware_concurrency())};
}

// ------------------------------------------------------------ 9 classical

classical::MinutiaeSet scattered_minutiae(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(20.0, 220.0), ang(0.0, 2.0 * kPi);
  classical::MinutiaeSet s{{}, 240, 240};
  while (static_cast<int>(s.size()) < count) {
    classical::Minutia m{pos(rng), pos(rng), ang(rng),
                         rng() % 2 ? classical::MinutiaKind::Ending : classical::MinutiaKind::Bifurcation};
    bool spaced = true;
    for (const auto& o : s.minutiae) spaced = spaced && std::hypot(o.x - m.x, o.y - m.y) >= 25.0;
    if (spaced) s.minutiae.push_back(m);
  }
  return s;
}

Verdict classical_oracles() {
  int cn_wrong = 0;
  for (int p = 0; p < 256; ++p) {
    int transitions = 0;
    for (int k = 0; k < 8; ++k) transitions += std::abs(((p >> k) & 1) - ((p >> ((k + 1) % 8)) & 1));
    cn_wrong += classical::crossing_number(static_cast<std::uint8_t>(p)) != transitions / 2;
  }

  const classical::MinutiaeSet a = scattered_minutiae(3, 30);
  const double self = classical::match_minutiae(a, a);
  double rigid = 1.0;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ang(-kPi, kPi), shift(-15.0, 15.0);
  for (int t = 0; t < 10; ++t) {
    const double th = ang(rng), dx = shift(rng), dy = shift(rng);
    classical::MinutiaeSet moved = a;
    for (auto& m : moved.minutiae) {
      const double x = m.x - 120.0, y = m.y - 120.0;
      m.x = 120.0 + std::cos(th) * x - std::sin(th) * y + dx;
      m.y = 120.0 + std::sin(th) * x + std::cos(th) * y + dy;
      m.angle = std::fmod(m.angle + th + 4.0 * kPi, 2.0 * kPi);
    }
    rigid = std::min(rigid, classical::match_minutiae(a, moved));
  }

  Image line(41, 41, 1, 0.9);
  for (int r = 0; r < 41; ++r)
    for (int c = 19; c <= 21; ++c) line.at(r, c) = 0.2;
  const Image resp = classical::frangi_enhance(line);
  double on = 0.0;
  std::vector<double> off;
  for (int r = 0; r < 41; ++r)
    for (int c = 0; c < 41; ++c) {
      if (c == 20) on += resp.at(r, c) / 41.0;
      else if (std::abs(c - 20) >= 6) off.push_back(resp.at(r, c));
    }
  std::nth_element(off.begin(), off.begin() + off.size() / 2, off.end());
  const double background = off[off.size() / 2];
  const bool ratio_ok = on > 0.0 && on >= 5.0 * background;

  return {cn_wrong == 0 && self == 1.0 && rigid >= 0.9 && ratio_ok,
          fmt("crossing-number mismatches %d/256, self-match %.3f, worst rigid-motion match %.3f (>= 0.9), "
              "Frangi line %.3e vs background median %.3e",
              cn_wrong, self, rigid, on, background)};
}

// ------------------------------------------------------------ 10 determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Bench run_bench(const eval::BenchConfig& base, const fs::path& csv, bool progress) {
  eval::BenchConfig cfg = base;
  cfg.csv = csv;
  if (progress) cfg.progress = [](const std::string& m) { std::cerr << "bench: " << m << '\n'; };
  Bench b;
  const auto t0 = std::chrono::steady_clock::now();
  b.report = eval::run_benchmark(cfg);
  b.seconds = elapsed(t0);
  b.csv = slurp(csv);
  return b;
}

Verdict determinism(const Bench& a, const Bench& b) {
  const bool same = !a.csv.empty() && a.csv == b.csv;
  std::size_t first = 0;
  while (first < std::min(a.csv.size(), b.csv.size()) && a.csv[first] == b.csv[first]) ++first;
  return {same, same ? fmt("two runs, %zu rows, %zu bytes identical", a.report.rows.size(), a.csv.size())
                     : fmt("reports differ from byte %zu", first)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string suite = "default";
  bool progress = false;
  int workers = default_workers();
  app.add_option("--only", only, "run only these criteria (1-10)");
  app.add_option("--suite", suite, "benchmark suite for criteria 3-7 and 10")->capture_default_str();
  app.add_option("--workers", workers, "benchmark worker threads")->capture_default_str();
  app.add_flag("--progress", progress, "print benchmark progress on stderr");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10} : std::set<int>(only.begin(), only.end());
  const char* titles[] = {"", "gradient oracle", "orientation correctness", "constraint invariants",
                          "protection efficacy", "ablation ordering", "naturalness vs PGD", "JPEG robustness",
                          "runtime budget", "classical oracles", "determinism"};

  int failed = 0;
  auto report = [&](int id, const std::function<Verdict()>& check) {
    if (!selected.count(id)) return;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("[%s] %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, titles[id], v.detail.c_str());
    std::fflush(stdout);
  };

  report(1, [&] { return gradient_oracle(workers); });
  report(2, orientation_correctness);
  report(8, runtime_budget);
  report(9, classical_oracles);

  const bool needs_bench = std::any_of(selected.begin(), selected.end(), [](int c) { return (c >= 3 && c <= 7) || c == 10; });
  if (needs_bench) {
    eval::BenchConfig cfg;
    cfg.suite = suite;
    std::optional<Bench> first, second;
    std::string bench_error;
    const fs::path dir = fs::temp_directory_path() / ("fingersafe_acceptance_" + std::to_string(std::random_device{}()));
    try {
      cfg = eval::apply_suite(cfg);
      cfg.workers = workers;
      fs::create_directories(dir);
      first = run_bench(cfg, dir / "first.csv", progress);
      if (selected.count(10)) second = run_bench(cfg, dir / "second.csv", progress);
    } catch (const std::exception& e) {
      bench_error = e.what();
    }
    fs::remove_all(dir);
    auto with_bench = [&](int id, auto fn) {
      report(id, [&]() -> Verdict {
        if (!first) throw std::runtime_error("benchmark failed: " + bench_error);
        return fn(*first);
      });
    };
    with_bench(3, [&](const Bench& b) { return constraint_invariants(b, cfg.protection.epsilon); });
    with_bench(4, protection_efficacy);
    with_bench(5, ablation_ordering);
    with_bench(6, naturalness_vs_pgd);
    with_bench(7, jpeg_robustness);
    report(10, [&]() -> Verdict {
      if (!first || !second) throw std::runtime_error("benchmark failed: " + bench_error);
      return determinism(*first, *second);
    });
  }

  std::printf("%d of %zu criteria failed\n", failed, selected.size());
  return failed == 0 ? 0 : 1;
}
