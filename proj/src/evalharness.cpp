#include "fingersafe/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>
#include <set>
#include <sstream>

#include "fingersafe/errors.hpp"
#include "fingersafe/parallel.hpp"

namespace fingersafe::eval {

using imgcore::Image;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

// Portable draws: the standard distributions are implementation-defined, so
// uniform and normal variates are built from raw 64-bit words.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Valley, ridge and background colours in linear RGB.
constexpr double kValley[3] = {0.93, 0.76, 0.66};
constexpr double kRidge[3] = {0.62, 0.42, 0.35};
constexpr double kBackground[3] = {0.20, 0.32, 0.28};
constexpr double kFingerSemiX = 0.40;
constexpr double kFingerSemiY = 0.47;
constexpr int kOrientationLevels = 36;
constexpr int kGaborIterations = 6;

struct Singularity {
  double x, y;
  double sign;  // +1 core, -1 delta
};

struct TrigTerm {
  double amplitude, frequency, direction, phase;
};

// Per-identity ridge master on an enlarged canvas.
struct Master {
  int size = 0;
  double theta0 = 0.0;
  std::vector<Singularity> singular;
  std::vector<TrigTerm> terms;
  std::vector<double> ridge;  // in [-1, 1], +1 on ridges

  double orientation(double x, double y) const {
    double t = theta0;
    for (const auto& k : terms)
      t += k.amplitude * std::sin(2.0 * kPi * k.frequency * (x * std::cos(k.direction) + y * std::sin(k.direction)) / size +
                                  k.phase);
    for (const auto& s : singular) t -= 0.5 * s.sign * std::atan2(y - s.y, x - s.x);
    return t;
  }

  double sample(double x, double y) const {
    x = std::clamp(x, 0.0, size - 1.0);
    y = std::clamp(y, 0.0, size - 1.0);
    const int x0 = std::min(static_cast<int>(x), size - 2), y0 = std::min(static_cast<int>(y), size - 2);
    const double fx = x - x0, fy = y - y0;
    auto at = [&](int r, int c) { return ridge[static_cast<std::size_t>(r) * size + c]; };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
  }
};

double wrap_pi(double a) {
  a = std::fmod(a, kPi);
  if (a < 0) a += kPi;
  return a >= kPi ? 0.0 : a;
}

Master build_master(const SynthConfig& cfg, int identity) {
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(identity), 0x6d61737465720000ULL));
  Master m;
  m.size = static_cast<int>(std::lround(1.3 * std::max(cfg.height, cfg.width)));
  const double n = m.size, c = 0.5 * (n - 1);
  m.theta0 = rng.uniform(0.0, kPi);
  const Singularity core{c + rng.uniform(-0.15, 0.15) * n, c + rng.uniform(-0.15, 0.10) * n, 1.0};
  m.singular.push_back(core);
  if (rng.uniform() < 0.5)
    m.singular.push_back({core.x + rng.uniform(-0.25, 0.25) * n, core.y + rng.uniform(0.2, 0.3) * n, -1.0});
  for (int k = 0; k < 2; ++k)
    m.terms.push_back({rng.uniform(0.1, 0.3), rng.uniform(0.5, 1.5), rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.0, 2.0 * kPi)});

  const int size = m.size;
  const std::size_t count = static_cast<std::size_t>(size) * size;
  std::vector<int> level(count);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double t = wrap_pi(m.orientation(x, y));
      level[static_cast<std::size_t>(y) * size + x] =
          static_cast<int>(std::lround(t / (kPi / kOrientationLevels))) % kOrientationLevels;
    }

  // Oriented Gabor kernels: cosine across the ridge, Gaussian envelope.
  const double sigma = 0.45 * cfg.period;
  const int radius = static_cast<int>(std::ceil(2.0 * sigma));
  const int ks = 2 * radius + 1;
  std::vector<std::vector<double>> bank(kOrientationLevels, std::vector<double>(static_cast<std::size_t>(ks) * ks));
  for (int q = 0; q < kOrientationLevels; ++q) {
    const double t = q * kPi / kOrientationLevels;
    const double nx = -std::sin(t), ny = std::cos(t);
    double mean = 0.0, env_sum = 0.0;
    for (int a = -radius; a <= radius; ++a)
      for (int b = -radius; b <= radius; ++b) {
        const double env = std::exp(-(a * a + b * b) / (2.0 * sigma * sigma));
        bank[q][static_cast<std::size_t>(a + radius) * ks + b + radius] =
            env * std::cos(2.0 * kPi * (b * nx + a * ny) / cfg.period);
        mean += bank[q][static_cast<std::size_t>(a + radius) * ks + b + radius];
        env_sum += env;
      }
    for (int a = -radius; a <= radius; ++a)
      for (int b = -radius; b <= radius; ++b)
        bank[q][static_cast<std::size_t>(a + radius) * ks + b + radius] -=
            mean / env_sum * std::exp(-(a * a + b * b) / (2.0 * sigma * sigma));
  }

  std::vector<double> field(count), next(count);
  for (auto& v : field) v = rng.uniform(-1.0, 1.0);
  for (int it = 0; it < kGaborIterations; ++it) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const auto& k = bank[level[static_cast<std::size_t>(y) * size + x]];
        double acc = 0.0;
        for (int a = -radius; a <= radius; ++a) {
          const int yy = std::clamp(y + a, 0, size - 1);
          const double* row = &field[static_cast<std::size_t>(yy) * size];
          const double* kr = &k[static_cast<std::size_t>(a + radius) * ks];
          for (int b = -radius; b <= radius; ++b) acc += kr[b + radius] * row[std::clamp(x + b, 0, size - 1)];
        }
        next[static_cast<std::size_t>(y) * size + x] = acc;
      }
    double ss = 0.0;
    for (double v : next) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(count));
    for (std::size_t i = 0; i < count; ++i) field[i] = std::tanh(2.0 * next[i] / (rms > 0 ? rms : 1.0));
  }
  m.ridge = std::move(field);
  return m;
}

const Master& master_for(const SynthConfig& cfg, int identity) {
  using Key = std::tuple<std::uint64_t, int, int, int, double>;
  static std::mutex guard;
  static std::map<Key, std::shared_ptr<const Master>> cache;
  const Key key{cfg.seed, identity, cfg.height, cfg.width, cfg.period};
  {
    std::lock_guard lock(guard);
    if (auto it = cache.find(key); it != cache.end()) return *it->second;
  }
  auto built = std::make_shared<const Master>(build_master(cfg, identity));
  std::lock_guard lock(guard);
  if (cache.size() > 512) cache.clear();
  auto [it, inserted] = cache.emplace(key, std::move(built));
  return *it->second;
}

}  // namespace

void SynthConfig::validate() const {
  if (identities < 1 || impressions < 1) throw ConfigError("identity and impression counts must be >= 1");
  if (height < 32 || width < 32) throw ConfigError("synthetic images must be at least 32x32");
  if (period < 4.0) throw ConfigError("ridge period must be >= 4");
  if (!(ridge_contrast > 0.0 && ridge_contrast <= 1.0)) throw ConfigError("ridge contrast must lie in (0, 1]");
  if (noise < 0.0 || rotation_jitter < 0.0 || translation_jitter < 0.0) throw ConfigError("jitter amplitudes must be >= 0");
}

SynthSample synth_fingerprint(const SynthConfig& cfg, int identity, int impression) {
  cfg.validate();
  if (identity < 0 || identity >= cfg.identities || impression < 0 || impression >= cfg.impressions)
    throw ContractError("identity or impression index out of range");
  const Master& m = master_for(cfg, identity);
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(identity), 0x1000 + static_cast<std::uint64_t>(impression)));
  const double rho = rng.uniform(-1.0, 1.0) * cfg.rotation_jitter * kPi / 180.0;
  const double dx = rng.uniform(-1.0, 1.0) * cfg.translation_jitter;
  const double dy = rng.uniform(-1.0, 1.0) * cfg.translation_jitter;

  const int h = cfg.height, w = cfg.width;
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  const double mc = 0.5 * (m.size - 1);
  const double cr = std::cos(rho), sr = std::sin(rho);
  const double ax = kFingerSemiX * w, ay = kFingerSemiY * h;
  const double ramp = 1.5 / std::min(ax, ay);

  SynthSample out{Image(h, w, 3), Image(h, w, 1),
                  classical::SegmentationMask{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0), {}}};
  int top = h, left = w, bottom = -1, right = -1;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      // Impression pixel -> master point: undo translation, then rotation.
      const double px = j - cx - dx, py = i - cy - dy;
      const double mx = cr * px + sr * py + mc;
      const double my = -sr * px + cr * py + mc;
      const double ex = (mx - mc) / ax, ey = (my - mc) / ay;
      const double e = std::sqrt(ex * ex + ey * ey);
      const double alpha = std::clamp((1.0 - e) / ramp, 0.0, 1.0);
      const double t = 0.5 * (1.0 + m.sample(mx, my));
      for (int ch = 0; ch < 3; ++ch) {
        const double skin = kValley[ch] + cfg.ridge_contrast * (kRidge[ch] - kValley[ch]) * t;
        const double v = alpha * skin + (1.0 - alpha) * kBackground[ch] + cfg.noise * rng.normal();
        out.image.at(i, j, ch) = std::clamp(v, 0.0, 1.0);
      }
      out.truth.at(i, j) = wrap_pi(m.orientation(mx, my) + rho);
      if (e <= 1.0) {
        out.finger.pixels[static_cast<std::size_t>(i) * w + j] = 1;
        top = std::min(top, i);
        bottom = std::max(bottom, i);
        left = std::min(left, j);
        right = std::max(right, j);
      }
    }
  if (bottom >= 0) out.finger.box = imgcore::CropBox{top, left, bottom - top + 1, right - left + 1};
  return out;
}

// ---------------------------------------------------------------- datasets

void write_orientation_csv(const orientation::OrientationField& phi, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[32];
  for (int i = 0; i < phi.height(); ++i) {
    for (int j = 0; j < phi.width(); ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", phi.at(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

std::string identity_name(int identity) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "id%03d", identity);
  return buf;
}

}  // namespace

Dataset synthetic_dataset(const SynthConfig& cfg, int workers) {
  cfg.validate();
  Dataset data;
  for (int id = 0; id < cfg.identities; ++id) data.identities.push_back(identity_name(id));
  data.entries.resize(static_cast<std::size_t>(cfg.identities) * cfg.impressions);
  parallel_for(data.entries.size(), workers, [&](std::size_t k) {
    const int id = static_cast<int>(k) / cfg.impressions, imp = static_cast<int>(k) % cfg.impressions;
    data.entries[k] = Entry{id, imp, {}, synth_fingerprint(cfg, id, imp).image};
  });
  return data;
}

Dataset write_synthetic_dataset(const SynthConfig& cfg, const fs::path& root, int workers) {
  cfg.validate();
  Dataset data;
  data.root = root;
  for (int id = 0; id < cfg.identities; ++id) {
    data.identities.push_back(identity_name(id));
    fs::create_directories(root / data.identities.back());
  }
  data.entries.resize(static_cast<std::size_t>(cfg.identities) * cfg.impressions);
  parallel_for(data.entries.size(), workers, [&](std::size_t k) {
    const int id = static_cast<int>(k) / cfg.impressions, imp = static_cast<int>(k) % cfg.impressions;
    SynthSample s = synth_fingerprint(cfg, id, imp);
    const fs::path dir = root / data.identities[id];
    const fs::path png = dir / (std::to_string(imp) + ".png");
    imgcore::write_png(s.image, png);
    write_orientation_csv(s.truth, dir / (std::to_string(imp) + "_orientation.csv"));
    data.entries[k] = Entry{id, imp, png, {}};
  });
  return data;
}

Dataset load_dataset(const fs::path& root, bool load_images) {
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  Dataset data;
  data.root = root;
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(root))
    if (d.is_directory()) dirs.push_back(d.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir)) {
      auto ext = f.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      const auto stem = f.path().stem().string();
      const bool noise_map = stem.size() > 6 && stem.compare(stem.size() - 6, 6, "_noise") == 0;
      if (f.is_regular_file() && !noise_map && (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp"))
        files.push_back(f.path());
    }
    if (files.empty()) continue;
    // Numeric stems sort numerically, everything else lexicographically.
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
      const auto sa = a.stem().string(), sb = b.stem().string();
      const bool na = !sa.empty() && std::all_of(sa.begin(), sa.end(), ::isdigit);
      const bool nb = !sb.empty() && std::all_of(sb.begin(), sb.end(), ::isdigit);
      if (na && nb && sa.size() != sb.size()) return sa.size() < sb.size();
      return sa < sb;
    });
    const int label = static_cast<int>(data.identities.size());
    data.identities.push_back(dir.filename().string());
    int imp = 0;
    for (const auto& f : files) {
      Entry e{label, imp++, f, {}};
      if (load_images) e.image = imgcore::read_image(f);
      data.entries.push_back(std::move(e));
    }
  }
  if (data.entries.empty()) throw IoError("no images under " + root.string());
  return data;
}

Split split_half(const Dataset& data) {
  Split s;
  s.gallery.root = s.probes.root = data.root;
  s.gallery.identities = s.probes.identities = data.identities;
  std::map<int, int> counts;
  for (const auto& e : data.entries) ++counts[e.label];
  for (const auto& e : data.entries) {
    const int n = counts[e.label];
    if (n < 2) throw ContractError("identity " + data.identities[e.label] + " has fewer than 2 impressions");
    (e.impression < n / 2 ? s.gallery : s.probes).entries.push_back(e);
  }
  return s;
}

void check_disjoint(const Dataset& gallery, const Dataset& probes) {
  std::set<std::pair<std::string, int>> seen;
  std::set<fs::path> paths;
  for (const auto& e : gallery.entries) {
    seen.emplace(gallery.identities.at(e.label), e.impression);
    if (!e.path.empty()) paths.insert(fs::weakly_canonical(e.path));
  }
  for (const auto& e : probes.entries) {
    if (seen.count({probes.identities.at(e.label), e.impression}) ||
        (!e.path.empty() && paths.count(fs::weakly_canonical(e.path))))
      throw ContractError("gallery and probes share identity " + probes.identities.at(e.label) + " impression " +
                          std::to_string(e.impression));
  }
}

// ---------------------------------------------------------------- recognition

const char* extractor_name(Extractor e) { return e == Extractor::Scattering ? "scattering" : "minutiae"; }

Extractor parse_extractor(const std::string& name) {
  if (name == "scattering" || name == "scatnet") return Extractor::Scattering;
  if (name == "minutiae") return Extractor::Minutiae;
  throw ConfigError("unknown extractor '" + name + "'");
}

Template make_template(const Image& x, Extractor extractor) {
  Template t;
  t.extractor = extractor;
  if (extractor == Extractor::Scattering) t.features = scatnet::default_network().features(x);
  else t.minutiae = classical::minutiae_from_image(x);
  return t;
}

double dissimilarity(const Template& a, const Template& b) {
  if (a.extractor != b.extractor) throw ContractError("templates come from different extractors");
  if (a.extractor == Extractor::Scattering) return scatnet::feature_distance(a.features, b.features);
  return 1.0 - classical::match_minutiae(a.minutiae, b.minutiae);
}

int identify_from_distances(std::span<const int> labels, std::span<const double> distances) {
  if (labels.empty()) throw ContractError("empty gallery");
  if (labels.size() != distances.size()) throw ContractError("labels and distances differ in length");
  std::size_t best = 0;
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (distances[i] < distances[best] || (distances[i] == distances[best] && labels[i] < labels[best])) best = i;
  return labels[best];
}

int identify(std::span<const Enrolled> gallery, const Template& probe) {
  if (gallery.empty()) throw ContractError("empty gallery");
  std::vector<int> labels;
  std::vector<double> d;
  for (const auto& g : gallery) {
    labels.push_back(g.label);
    d.push_back(dissimilarity(g.tmpl, probe));
  }
  return identify_from_distances(labels, d);
}

double identification_accuracy(std::span<const Enrolled> gallery, std::span<const Enrolled> probes) {
  if (probes.empty()) throw ContractError("no probes");
  int hits = 0;
  for (const auto& p : probes) hits += identify(gallery, p.tmpl) == p.label;
  return static_cast<double>(hits) / static_cast<double>(probes.size());
}

double false_accept_rate(std::span<const double> impostor, double tau) {
  if (impostor.empty()) return 0.0;
  return static_cast<double>(std::count_if(impostor.begin(), impostor.end(), [&](double d) { return d <= tau; })) /
         static_cast<double>(impostor.size());
}

double false_reject_rate(std::span<const double> genuine, double tau) {
  if (genuine.empty()) return 0.0;
  return static_cast<double>(std::count_if(genuine.begin(), genuine.end(), [&](double d) { return d > tau; })) /
         static_cast<double>(genuine.size());
}

Calibration calibrate_threshold(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) throw ContractError("calibration needs genuine and impostor scores");
  std::vector<double> pts(genuine.begin(), genuine.end());
  pts.insert(pts.end(), impostor.begin(), impostor.end());
  for (double v : pts)
    if (!std::isfinite(v)) throw ContractError("non-finite score in calibration");
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  // Interval k spans (bounds[k], bounds[k+1]); FAR - FRR is constant inside it.
  const double pad = 1.0 + (pts.back() - pts.front());
  std::vector<double> bounds;
  bounds.push_back(pts.front() - pad);
  bounds.insert(bounds.end(), pts.begin(), pts.end());
  bounds.push_back(pts.back() + pad);
  std::vector<double> gap(bounds.size() - 1);
  double best = 2.0;
  for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
    const double probe = 0.5 * (bounds[k] + bounds[k + 1]);
    gap[k] = std::abs(false_accept_rate(impostor, probe) - false_reject_rate(genuine, probe));
    best = std::min(best, gap[k]);
  }
  std::size_t first = 0;
  while (gap[first] != best) ++first;
  std::size_t last = first;
  while (last + 1 < gap.size() && gap[last + 1] == best) ++last;
  double lo = bounds[first], hi = bounds[last + 1];
  if (first == 0) lo = std::min(lo + pad - 1.0, hi);
  if (last + 1 == bounds.size() - 1) hi = std::max(hi - pad + 1.0, lo);
  Calibration c;
  c.tau = 0.5 * (lo + hi);
  c.far = false_accept_rate(impostor, c.tau);
  c.frr = false_reject_rate(genuine, c.tau);
  c.eer = 0.5 * (c.far + c.frr);
  return c;
}

double verify_tpr(std::span<const double> genuine, double tau) {
  if (genuine.empty()) throw ContractError("no genuine pairs");
  return 1.0 - false_reject_rate(genuine, tau);
}

double verify_tpr(std::span<const VerificationPair> pairs, Extractor extractor, double tau) {
  std::vector<double> genuine;
  for (const auto& p : pairs)
    if (p.genuine) {
      if (!p.reference || !p.probe) throw ContractError("verification pair without images");
      genuine.push_back(dissimilarity(make_template(*p.reference, extractor), make_template(*p.probe, extractor)));
    }
  return verify_tpr(genuine, tau);
}

Image jpeg_roundtrip(const Image& x, int quality) {
  return imgcore::clamp01(imgcore::decode_jpeg(imgcore::encode_jpeg(x, quality)));
}

// ---------------------------------------------------------------- benchmark

std::string format_row(const ReportRow& row) {
  char nums[160];
  std::snprintf(nums, sizeof nums, "%.6f,%.6f,%.6f,%d", row.epsilon, row.lambda, row.gamma, row.jpeg_quality);
  char value[48];
  std::snprintf(value, sizeof value, "%.9g", row.value);
  return row.scenario + "," + row.extractor + "," + row.attack + "," + nums + "," + row.metric + "," + value;
}

void write_report(std::ostream& out, const EvalReport& report) {
  for (const auto& h : report.header) out << "# " << h << '\n';
  out << kReportColumns << '\n';
  for (const auto& r : report.rows) out << format_row(r) << '\n';
  out.flush();
}

BenchConfig apply_suite(BenchConfig cfg) {
  if (cfg.suite == "default") return cfg;
  if (cfg.suite != "quick") throw ConfigError("unknown suite '" + cfg.suite + "' (expected default or quick)");
  cfg.synth.identities = 4;
  cfg.synth.impressions = 2;
  cfg.protection.steps = 5;
  cfg.lambda_sweep = {1.0, 1000.0};
  cfg.gamma_sweep = {5.0, 5e6};
  cfg.jpeg_qualities = {75};
  cfg.blur_sigmas = {2.0};
  cfg.pixelize_fractions = {0.4};
  return cfg;
}

std::uint64_t config_hash(const BenchConfig& cfg) {
  std::ostringstream s;
  s.precision(17);
  const auto& y = cfg.synth;
  const auto& p = cfg.protection;
  s << cfg.suite << '|' << y.identities << ',' << y.impressions << ',' << y.height << ',' << y.width << ',' << y.period << ','
    << y.ridge_contrast << ',' << y.noise << ',' << y.rotation_jitter << ',' << y.translation_jitter << ',' << y.seed << '|'
    << cfg.dataset.string() << '|' << p.epsilon << ',' << p.steps << ',' << p.alpha << ',' << p.lambda << ',' << p.gamma << ','
    << p.seed << ',' << p.surrogate.J << ',' << p.surrogate.L << ',' << p.surrogate.input_size << '|';
  for (double v : cfg.lambda_sweep) s << v << ',';
  s << '|';
  for (double v : cfg.gamma_sweep) s << v << ',';
  s << '|';
  for (int v : cfg.jpeg_qualities) s << v << ',';
  s << '|';
  for (double v : cfg.blur_sigmas) s << v << ',';
  s << '|';
  for (double v : cfg.pixelize_fractions) s << v << ',';
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

InvariantCheck check_invariants(const Image& clean, const attack::ProtectionResult& result, double epsilon) {
  InvariantCheck c;
  const Image& adv = result.protected_image;
  if (!clean.same_shape(adv)) {
    c.violations = 1;
    return c;
  }
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double a = adv.data()[i], d = std::abs(a - clean.data()[i]);
    c.max_linf = std::max(c.max_linf, d);
    if (!(d <= epsilon + 1e-9) || !(a >= 0.0 && a <= 1.0)) ++c.violations;
  }
  for (const auto& row : result.trace) {
    const auto& l = row.losses;
    if (!(l.orientation >= -1.0 && l.orientation <= 0.0)) ++c.violations;
    if (!(l.contrast >= 0.0)) ++c.violations;
    if (!(l.adversarial <= 0.0)) ++c.violations;
  }
  return c;
}

namespace {

constexpr const char* kExtractors[] = {"scattering", "minutiae"};

// Per-probe outcome of one attack configuration.
struct ProbeOutcome {
  Template tmpl[2];
  double naturalness = 0.0;
  InvariantCheck check;
};

struct AttackCell {
  std::vector<ProbeOutcome> probes;
  std::vector<Image> images;  // kept only when later cells need them
};

std::string format_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

class Bench {
 public:
  explicit Bench(const BenchConfig& cfg) : cfg_(cfg) {}

  EvalReport run() {
    cfg_.synth.validate();
    cfg_.protection.validate();
    report_.header = {"seed=" + std::to_string(cfg_.synth.seed) + " protection_seed=" + std::to_string(cfg_.protection.seed),
                      "config_hash=" + hex(config_hash(cfg_)),
                      "suite=" + cfg_.suite,
                      "surrogate: order-2 scattering network (J=" + std::to_string(cfg_.protection.surrogate.J) +
                          ", L=" + std::to_string(cfg_.protection.surrogate.L) + ", " +
                          std::to_string(cfg_.protection.surrogate.input_size) + "x" +
                          std::to_string(cfg_.protection.surrogate.input_size) +
                          " luminance) stands in for the attacker's DNN feature extractor",
                      "dataset=" + (cfg_.dataset.empty() ? std::string("synthetic") : cfg_.dataset.string())};
    if (!cfg_.csv.empty()) {
      if (cfg_.csv.has_parent_path()) fs::create_directories(cfg_.csv.parent_path());
      csv_.open(cfg_.csv);
      if (!csv_) throw IoError("cannot write " + cfg_.csv.string());
      for (const auto& h : report_.header) csv_ << "# " << h << '\n';
      csv_ << kReportColumns << '\n';
      csv_.flush();
    }
    try {
      execute();
    } catch (...) {
      emit({"failed", "none", current_, 0.0, 0.0, 0.0, 0, "error", 1.0});
      throw;
    }
    if (!cfg_.plot_dir.empty()) plots();
    return report_;
  }

 private:
  static std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

  void progress(const std::string& msg) {
    current_ = msg;
    if (cfg_.progress) cfg_.progress(msg);
  }

  void emit(ReportRow row) {
    if (csv_.is_open()) {
      csv_ << format_row(row) << '\n';
      csv_.flush();
    }
    report_.rows.push_back(std::move(row));
  }

  void load() {
    progress("dataset");
    Dataset data;
    if (cfg_.dataset.empty()) data = synthetic_dataset(cfg_.synth, cfg_.workers);
    else data = load_dataset(cfg_.dataset);
    Split split = split_half(data);
    check_disjoint(split.gallery, split.probes);
    gallery_ = std::move(split.gallery.entries);
    probes_ = std::move(split.probes.entries);

    progress("clean templates");
    for (int e = 0; e < 2; ++e) {
      gallery_t_[e].resize(gallery_.size());
      clean_t_[e].resize(probes_.size());
    }
    parallel_for(gallery_.size() + probes_.size(), cfg_.workers, [&](std::size_t k) {
      const bool g = k < gallery_.size();
      const std::size_t i = g ? k : k - gallery_.size();
      const Image& x = g ? gallery_[i].image : probes_[i].image;
      const int label = g ? gallery_[i].label : probes_[i].label;
      for (int e = 0; e < 2; ++e) {
        auto& slot = g ? gallery_t_[e][i] : clean_t_[e][i];
        slot = Enrolled{label, make_template(x, static_cast<Extractor>(e))};
      }
    });
  }

  void calibrate() {
    for (int e = 0; e < 2; ++e) {
      std::vector<double> genuine, impostor;
      for (const auto& p : clean_t_[e])
        for (const auto& g : gallery_t_[e])
          (p.label == g.label ? genuine : impostor).push_back(dissimilarity(g.tmpl, p.tmpl));
      if (impostor.empty()) {
        // Single identity: nothing to calibrate against, accept everything seen.
        tau_[e] = *std::max_element(genuine.begin(), genuine.end());
        emit({"calibration", kExtractors[e], "none", 0, 0, 0, 0, "tau", tau_[e]});
        emit({"calibration", kExtractors[e], "none", 0, 0, 0, 0, "eer", 0.0});
        continue;
      }
      const Calibration c = calibrate_threshold(genuine, impostor);
      tau_[e] = c.tau;
      emit({"calibration", kExtractors[e], "none", 0, 0, 0, 0, "tau", c.tau});
      emit({"calibration", kExtractors[e], "none", 0, 0, 0, 0, "eer", c.eer});
    }
  }

  // Accuracy and genuine TPR of probe templates against the clean gallery.
  std::pair<double, double> score(int e, const std::vector<const Template*>& probes) const {
    int hits = 0;
    std::vector<double> genuine;
    std::vector<int> labels;
    for (const auto& g : gallery_t_[e]) labels.push_back(g.label);
    for (std::size_t i = 0; i < probes.size(); ++i) {
      std::vector<double> d;
      for (const auto& g : gallery_t_[e]) {
        d.push_back(dissimilarity(g.tmpl, *probes[i]));
        if (g.label == probes_[i].label) genuine.push_back(d.back());
      }
      hits += identify_from_distances(labels, d) == probes_[i].label;
    }
    return {static_cast<double>(hits) / static_cast<double>(probes.size()), verify_tpr(genuine, tau_[e])};
  }

  void recognition_rows(const std::string& scenario, const std::string& attack, double eps, double lambda, double gamma,
                        int quality, const std::vector<ProbeOutcome>& outcomes) {
    for (int e = 0; e < 2; ++e) {
      std::vector<const Template*> t;
      for (const auto& o : outcomes) t.push_back(&o.tmpl[e]);
      const auto [acc, tpr] = score(e, t);
      emit({scenario, kExtractors[e], attack, eps, lambda, gamma, quality, "acc", acc});
      emit({scenario, kExtractors[e], attack, eps, lambda, gamma, quality, "tpr", tpr});
    }
  }

  std::vector<ProbeOutcome> outcomes_of(const std::vector<Image>& images, bool with_naturalness) const {
    std::vector<ProbeOutcome> out(images.size());
    parallel_for(images.size(), cfg_.workers, [&](std::size_t i) {
      for (int e = 0; e < 2; ++e) out[i].tmpl[e] = make_template(images[i], static_cast<Extractor>(e));
      if (with_naturalness) out[i].naturalness = attack::naturalness(probes_[i].image, images[i]);
    });
    return out;
  }

  const AttackCell& protect(double lambda, double gamma, bool keep_images) {
    const auto key = std::make_pair(lambda, gamma);
    if (auto it = cells_.find(key); it != cells_.end() && (!keep_images || !it->second.images.empty())) return it->second;
    attack::ProtectionConfig pc = cfg_.protection;
    pc.lambda = lambda;
    pc.gamma = gamma;
    AttackCell cell;
    cell.probes.resize(probes_.size());
    std::vector<Image> images(probes_.size());
    parallel_for(probes_.size(), cfg_.workers, [&](std::size_t i) {
      attack::ProtectionConfig local = pc;
      local.seed = mix_seed(pc.seed, static_cast<std::uint64_t>(probes_[i].label), static_cast<std::uint64_t>(probes_[i].impression));
      const attack::ProtectionResult r = attack::fingersafe_protect(probes_[i].image, local);
      auto& o = cell.probes[i];
      o.check = check_invariants(probes_[i].image, r, pc.epsilon);
      o.naturalness = attack::naturalness(probes_[i].image, r.protected_image);
      for (int e = 0; e < 2; ++e) o.tmpl[e] = make_template(r.protected_image, static_cast<Extractor>(e));
      images[i] = r.protected_image;
    });
    if (keep_images) cell.images = std::move(images);
    return cells_[key] = std::move(cell);
  }

  void attack_rows(const std::string& scenario, const std::string& name, double lambda, double gamma, bool keep = false) {
    progress(scenario + " " + name + " lambda=" + format_param(lambda) + " gamma=" + format_param(gamma));
    const AttackCell& cell = protect(lambda, gamma, keep);
    const double eps = cfg_.protection.epsilon;
    recognition_rows(scenario, name, eps, lambda, gamma, 0, cell.probes);
    double nat = 0.0, linf = 0.0;
    int bad = 0;
    for (const auto& o : cell.probes) {
      nat += o.naturalness;
      linf = std::max(linf, o.check.max_linf);
      bad += o.check.violations > 0;
    }
    const double n = static_cast<double>(cell.probes.size());
    emit({scenario, "none", name, eps, lambda, gamma, 0, "naturalness", nat / n});
    emit({scenario, "none", name, eps, lambda, gamma, 0, "linf", linf});
    emit({scenario, "none", name, eps, lambda, gamma, 0, "violation_rate", bad / n});
    record_series(scenario, lambda, gamma, cell);
  }

  void record_series(const std::string& scenario, double lambda, double gamma, const AttackCell& cell) {
    if (scenario != "lambda_sweep" && scenario != "gamma_sweep") return;
    std::vector<const Template*> t;
    for (const auto& o : cell.probes) t.push_back(&o.tmpl[0]);
    const double acc = score(0, t).first;
    t.clear();
    for (const auto& o : cell.probes) t.push_back(&o.tmpl[1]);
    const double tpr = score(1, t).second;
    double nat = 0.0;
    for (const auto& o : cell.probes) nat += o.naturalness;
    auto& s = sweeps_[scenario];
    s.labels.push_back(format_param(scenario == "lambda_sweep" ? lambda : gamma));
    s.acc.push_back(acc);
    s.tpr.push_back(tpr);
    s.nat.push_back(nat / static_cast<double>(cell.probes.size()));
  }

  void baseline_rows(const std::string& name, const std::function<Image(const Image&, const classical::SegmentationMask*)>& apply) {
    progress("attack " + name);
    std::vector<Image> images(probes_.size());
    parallel_for(probes_.size(), cfg_.workers, [&](std::size_t i) {
      std::optional<classical::SegmentationMask> mask;
      try {
        mask = classical::segment_fingertip(probes_[i].image).mask;
      } catch (const SegmentationError&) {
      }
      images[i] = apply(probes_[i].image, mask ? &*mask : nullptr);
    });
    const auto outcomes = outcomes_of(images, true);
    recognition_rows("attack", name, 0, 0, 0, 0, outcomes);
    double nat = 0.0;
    for (const auto& o : outcomes) nat += o.naturalness;
    emit({"attack", "none", name, 0, 0, 0, 0, "naturalness", nat / static_cast<double>(outcomes.size())});
  }

  void execute() {
    load();
    calibrate();
    const double lambda = cfg_.protection.lambda, gamma = cfg_.protection.gamma;

    progress("clean");
    std::vector<ProbeOutcome> clean(probes_.size());
    for (std::size_t i = 0; i < probes_.size(); ++i)
      for (int e = 0; e < 2; ++e) clean[i].tmpl[e] = clean_t_[e][i].tmpl;
    recognition_rows("clean", "none", 0, 0, 0, 0, clean);

    attack_rows("attack", "fingersafe", lambda, gamma, true);
    attack_rows("attack", "pgd", 0.0, 0.0);
    for (double s : cfg_.blur_sigmas)
      baseline_rows("blur:" + format_param(s),
                    [s](const Image& x, const classical::SegmentationMask* m) { return attack::blur_baseline(x, s, m); });
    for (double f : cfg_.pixelize_fractions)
      baseline_rows("pixelize:" + format_param(f), [f](const Image& x, const classical::SegmentationMask* m) {
        return attack::pixelize_baseline(x, f, attack::kPixelBlock, m);
      });

    attack_rows("ablation", "orientation_only", lambda, 0.0);
    attack_rows("ablation", "contrast_only", 0.0, gamma);
    attack_rows("ablation", "orientation_contrast", lambda, gamma);

    for (double l : cfg_.lambda_sweep) attack_rows("lambda_sweep", "fingersafe", l, gamma);
    for (double g : cfg_.gamma_sweep) attack_rows("gamma_sweep", "fingersafe", lambda, g);

    const std::vector<Image>& protected_images = protect(lambda, gamma, true).images;
    std::vector<Image> clean_images;
    for (const auto& p : probes_) clean_images.push_back(p.image);
    for (int q : cfg_.jpeg_qualities) {
      progress("jpeg q=" + std::to_string(q));
      for (int which = 0; which < 2; ++which) {
        const auto& src = which == 0 ? clean_images : protected_images;
        std::vector<Image> round(src.size());
        parallel_for(src.size(), cfg_.workers, [&](std::size_t i) { round[i] = jpeg_roundtrip(src[i], q); });
        const auto outcomes = outcomes_of(round, false);
        recognition_rows("jpeg", which == 0 ? "none" : "fingersafe", which == 0 ? 0.0 : cfg_.protection.epsilon,
                         which == 0 ? 0.0 : lambda, which == 0 ? 0.0 : gamma, q, outcomes);
        const double acc = score(0, [&] {
                             std::vector<const Template*> t;
                             for (const auto& o : outcomes) t.push_back(&o.tmpl[0]);
                             return t;
                           }()).first;
        (which == 0 ? jpeg_clean_ : jpeg_protected_).push_back(acc);
      }
    }
  }

  void plots() {
    fs::create_directories(cfg_.plot_dir);
    for (const auto& [scenario, s] : sweeps_) {
      const std::string param = scenario == "lambda_sweep" ? "lambda" : "gamma";
      write_line_plot(cfg_.plot_dir / (scenario + ".png"), "protection vs " + param, s.labels,
                      {{"scattering acc", s.acc}, {"minutiae tpr", s.tpr}});
      std::vector<double> scaled = s.nat;
      const double top = *std::max_element(scaled.begin(), scaled.end());
      if (top > 0)
        for (double& v : scaled) v /= top;
      write_line_plot(cfg_.plot_dir / (scenario + "_naturalness.png"), "naturalness (relative) vs " + param, s.labels,
                      {{"N / max N", scaled}});
    }
    if (!cfg_.jpeg_qualities.empty()) {
      std::vector<std::string> labels;
      for (int q : cfg_.jpeg_qualities) labels.push_back(std::to_string(q));
      write_line_plot(cfg_.plot_dir / "jpeg.png", "scattering acc after JPEG", labels,
                      {{"clean", jpeg_clean_}, {"fingersafe", jpeg_protected_}});
    }
  }

  struct SweepSeries {
    std::vector<std::string> labels;
    std::vector<double> acc, tpr, nat;
  };

  BenchConfig cfg_;
  EvalReport report_;
  std::ofstream csv_;
  std::string current_ = "setup";
  std::vector<Entry> gallery_, probes_;
  std::vector<Enrolled> gallery_t_[2], clean_t_[2];
  double tau_[2] = {0.0, 0.0};
  std::map<std::pair<double, double>, AttackCell> cells_;
  std::map<std::string, SweepSeries> sweeps_;
  std::vector<double> jpeg_clean_, jpeg_protected_;
};

}  // namespace

EvalReport run_benchmark(const BenchConfig& cfg) { return Bench(cfg).run(); }

void write_line_plot(const fs::path& path, const std::string& title, const std::vector<std::string>& x_labels,
                     const std::vector<Series>& series) {
  if (x_labels.empty()) throw ContractError("plot needs at least one x value");
  for (const auto& s : series)
    if (s.values.size() != x_labels.size()) throw ContractError("plot series '" + s.name + "' has the wrong length");
  const int w = 640, h = 420, left = 60, right = 20, top = 40, bottom = 60;
  cv::Mat canvas(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar ink(40, 40, 40), grid(220, 220, 220);
  const int pw = w - left - right, ph = h - top - bottom;
  double lo = 0.0, hi = 1.0;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  auto ypix = [&](double v) { return top + static_cast<int>(std::lround((hi - v) / (hi - lo) * ph)); };
  auto xpix = [&](std::size_t i) {
    return left + (x_labels.size() == 1 ? pw / 2 : static_cast<int>(std::lround(static_cast<double>(i) * pw / (x_labels.size() - 1))));
  };
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    cv::line(canvas, {left, ypix(v)}, {left + pw, ypix(v)}, grid, 1);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    cv::putText(canvas, buf, {5, ypix(v) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);
  }
  cv::rectangle(canvas, {left, top}, {left + pw, top + ph}, ink, 1);
  for (std::size_t i = 0; i < x_labels.size(); ++i)
    cv::putText(canvas, x_labels[i], {xpix(i) - 12, top + ph + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);
  cv::putText(canvas, title, {left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.6, ink, 1, cv::LINE_AA);
  const cv::Scalar palette[] = {{200, 80, 30}, {30, 120, 220}, {40, 160, 60}, {150, 60, 160}, {0, 0, 0}};
  for (std::size_t s = 0; s < series.size(); ++s) {
    const cv::Scalar colour = palette[s % 5];
    for (std::size_t i = 0; i < x_labels.size(); ++i) {
      const cv::Point pt(xpix(i), ypix(series[s].values[i]));
      cv::circle(canvas, pt, 3, colour, cv::FILLED, cv::LINE_AA);
      if (i > 0) cv::line(canvas, {xpix(i - 1), ypix(series[s].values[i - 1])}, pt, colour, 2, cv::LINE_AA);
    }
    const int ly = top + ph + 40;
    const int lx = left + static_cast<int>(s) * 180;
    cv::line(canvas, {lx, ly - 4}, {lx + 20, ly - 4}, colour, 2);
    cv::putText(canvas, series[s].name, {lx + 25, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw IoError("cannot write " + path.string());
}

}  // namespace fingersafe::eval
