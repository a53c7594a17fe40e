#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fingersafe/attack.hpp"
#include "fingersafe/classical.hpp"
#include "fingersafe/imgcore.hpp"
#include "fingersafe/orientation.hpp"
#include "fingersafe/scatnet.hpp"

namespace fingersafe::eval {

// ---------------------------------------------------------------- synthetic prints

struct SynthConfig {
  int identities = 20;
  int impressions = 4;
  int height = 160;
  int width = 160;
  double period = 8.0;
  double ridge_contrast = 1.0;    // fraction of the full valley-to-ridge colour step
  double noise = 0.02;            // per-pixel intensity noise std
  double rotation_jitter = 5.0;   // degrees, uniform +-
  double translation_jitter = 2.0;  // pixels, uniform +-
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSample {
  imgcore::Image image;  // RGB
  orientation::OrientationField truth;
  classical::SegmentationMask finger;  // support of the finger in this impression
};

SynthSample synth_fingerprint(const SynthConfig& cfg, int identity, int impression);

// ---------------------------------------------------------------- datasets

struct Entry {
  int label = 0;
  int impression = 0;
  std::filesystem::path path;  // empty for in-memory entries
  imgcore::Image image;        // filled when loaded
};

struct Dataset {
  std::filesystem::path root;
  std::vector<std::string> identities;  // label -> directory name
  std::vector<Entry> entries;
};

/// Writes <root>/<identity>/<impression>.png plus <impression>_orientation.csv.
Dataset write_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& root, int workers);
Dataset synthetic_dataset(const SynthConfig& cfg, int workers);
/// Reads <root>/<identity>/<impression>.png. Identities are sorted by name and
/// labelled 0..n-1; impressions are the file stems' order within a directory.
Dataset load_dataset(const std::filesystem::path& root, bool load_images = true);

void write_orientation_csv(const orientation::OrientationField& phi, const std::filesystem::path& path);

struct Split {
  Dataset gallery;
  Dataset probes;
};
// First half of each identity's impressions go to the gallery.
Split split_half(const Dataset& data);
// Throws ContractError when gallery and probes share an (identity, impression).
void check_disjoint(const Dataset& gallery, const Dataset& probes);

// ---------------------------------------------------------------- recognition

enum class Extractor { Scattering, Minutiae };
const char* extractor_name(Extractor e);
Extractor parse_extractor(const std::string& name);

struct Template {
  Extractor extractor = Extractor::Scattering;
  scatnet::FeatureVector features;
  classical::MinutiaeSet minutiae;
};

Template make_template(const imgcore::Image& x, Extractor extractor);
/// Scattering: l2 distance. Minutiae: 1 - match score.
double dissimilarity(const Template& a, const Template& b);

struct Enrolled {
  int label = 0;
  Template tmpl;
};

/// Label of the nearest gallery template; ties go to the lowest label.
int identify(std::span<const Enrolled> gallery, const Template& probe);
int identify_from_distances(std::span<const int> labels, std::span<const double> distances);

double identification_accuracy(std::span<const Enrolled> gallery, std::span<const Enrolled> probes);

struct Calibration {
  double tau = 0.0;
  double far = 0.0;
  double frr = 0.0;
  double eer = 0.0;
};

/// Threshold on dissimilarities (accept <=> d <= tau) at the FAR = FRR
/// crossing; tau is the midpoint of the crossing interval.
Calibration calibrate_threshold(std::span<const double> genuine, std::span<const double> impostor);
double false_accept_rate(std::span<const double> impostor, double tau);
double false_reject_rate(std::span<const double> genuine, double tau);

struct VerificationPair {
  const imgcore::Image* reference = nullptr;
  const imgcore::Image* probe = nullptr;
  bool genuine = false;
};
/// Fraction of genuine pairs accepted at tau.
double verify_tpr(std::span<const VerificationPair> pairs, Extractor extractor, double tau);
double verify_tpr(std::span<const double> genuine, double tau);

imgcore::Image jpeg_roundtrip(const imgcore::Image& x, int quality);

// ---------------------------------------------------------------- benchmark

struct ReportRow {
  std::string scenario;
  std::string extractor;
  std::string attack;
  double epsilon = 0.0;
  double lambda = 0.0;
  double gamma = 0.0;
  int jpeg_quality = 0;  // 0 = no JPEG round trip
  std::string metric;
  double value = 0.0;
};

struct EvalReport {
  std::vector<std::string> header;  // metadata lines, written as "# ..." comments
  std::vector<ReportRow> rows;
};

std::string format_row(const ReportRow& row);
inline constexpr const char* kReportColumns = "scenario,extractor,attack,epsilon,lambda,gamma,jpeg_quality,metric,value";
void write_report(std::ostream& out, const EvalReport& report);

struct BenchConfig {
  std::string suite = "default";  // "default" or "quick"
  SynthConfig synth;
  std::filesystem::path dataset;  // load from disk when set, otherwise synthesize in memory
  attack::ProtectionConfig protection;
  std::vector<double> lambda_sweep{1.0, 10.0, 100.0, 1000.0};
  std::vector<double> gamma_sweep{5.0, 5e2, 5e4, 5e6};
  std::vector<int> jpeg_qualities{90, 75, 50, 25, 10};
  std::vector<double> blur_sigmas{1.5, 2.0, 2.5};
  std::vector<double> pixelize_fractions{0.3, 0.4, 0.5};
  int workers = 1;
  std::filesystem::path csv;        // streamed row by row when set
  std::filesystem::path plot_dir;   // summary PNGs when set
  std::function<void(const std::string&)> progress;
};

// Applies the suite's preset to the config (quick shrinks the set and grid).
BenchConfig apply_suite(BenchConfig cfg);

std::uint64_t config_hash(const BenchConfig& cfg);

/// Constraint checks for one protected probe.
struct InvariantCheck {
  int violations = 0;
  double max_linf = 0.0;
};
InvariantCheck check_invariants(const imgcore::Image& clean, const attack::ProtectionResult& result, double epsilon);

EvalReport run_benchmark(const BenchConfig& cfg);

// Line plot of named series against x values, written as PNG.
struct Series {
  std::string name;
  std::vector<double> values;
};
void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::vector<std::string>& x_labels,
                     const std::vector<Series>& series);

}  // namespace fingersafe::eval
