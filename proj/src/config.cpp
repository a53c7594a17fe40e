#include "fingersafe/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "fingersafe/errors.hpp"
#include "fingersafe/parallel.hpp"

namespace fingersafe::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(v))
    throw ConfigError("invalid value '" + text + "' for key '" + key + "': expected a number");
  return v;
}

long long to_integer(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || *end != '\0' || errno == ERANGE)
    throw ConfigError("invalid value '" + text + "' for key '" + key + "': expected an integer");
  return v;
}

int to_int(const std::string& key, const std::string& text) {
  const long long v = to_integer(key, text);
  if (v < -2147483647LL || v > 2147483647LL) throw ConfigError("value out of range for key '" + key + "'");
  return static_cast<int>(v);
}

std::uint64_t to_seed(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  errno = 0;
  char* end = nullptr;
  if (t.empty() || t[0] == '-') throw ConfigError("invalid value '" + text + "' for key '" + key + "': expected a seed >= 0");
  const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE)
    throw ConfigError("invalid value '" + text + "' for key '" + key + "': expected a seed >= 0");
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  for (std::string item; std::getline(s, item, ',');)
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(to_double(key, item));
  return out;
}

std::vector<int> to_ints(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split_list(text)) out.push_back(to_int(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, double>) out += fmt(values[i]);
    else out += std::to_string(values[i]);
  }
  return out;
}

struct Binding {
  KeyInfo info;
  std::function<void(Settings&, const std::string& key, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    std::vector<Binding> b;
    auto add = [&](const char* key, const char* help, auto set, auto get) { b.push_back({{key, help}, set, get}); };
    add("attack.epsilon", "l-inf budget in 8-bit units (8 => 8/255)",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.epsilon = to_double(k, v) / 255.0; },
        [](const Settings& s) { return fmt(s.bench.protection.epsilon * 255.0); });
    add("attack.alpha", "step size in 8-bit units",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.alpha = to_double(k, v) / 255.0; },
        [](const Settings& s) { return fmt(s.bench.protection.alpha * 255.0); });
    add("attack.steps", "sign-gradient iterations",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.steps = to_int(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.protection.steps); });
    add("attack.lambda", "weight of the orientation-distortion term",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.lambda = to_double(k, v); },
        [](const Settings& s) { return fmt(s.bench.protection.lambda); });
    add("attack.gamma", "weight of the contrast-suppression term",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.gamma = to_double(k, v); },
        [](const Settings& s) { return fmt(s.bench.protection.gamma); });
    add("attack.seed", "seed of the protection loop (zero-gradient tie signs)",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.seed = to_seed(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.protection.seed); });
    add("scatnet.J", "scattering scales",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.surrogate.J = to_int(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.protection.surrogate.J); });
    add("scatnet.L", "scattering orientations",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.surrogate.L = to_int(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.protection.surrogate.L); });
    add("scatnet.input_size", "side of the square scattering input",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.protection.surrogate.input_size = to_int(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.protection.surrogate.input_size); });
    add("evalharness.suite", "benchmark preset: default or quick",
        [](Settings& s, const std::string&, const std::string& v) { s.bench.suite = trim(v); },
        [](const Settings& s) { return s.bench.suite; });
    add("evalharness.dataset", "dataset root (<root>/<identity>/<impression>.png); empty = synthesize",
        [](Settings& s, const std::string&, const std::string& v) { s.bench.dataset = trim(v); },
        [](const Settings& s) { return s.bench.dataset.string(); });
    add("evalharness.identities", "synthetic identities",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.identities = to_int(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.synth.identities); });
    add("evalharness.impressions", "synthetic impressions per identity",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.impressions = to_int(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.synth.impressions); });
    add("evalharness.height", "synthetic image height",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.height = to_int(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.synth.height); });
    add("evalharness.width", "synthetic image width",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.width = to_int(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.synth.width); });
    add("evalharness.period", "ridge period in pixels",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.period = to_double(k, v); },
        [](const Settings& s) { return fmt(s.bench.synth.period); });
    add("evalharness.ridge_contrast", "fraction of the full valley-to-ridge colour step",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.ridge_contrast = to_double(k, v); },
        [](const Settings& s) { return fmt(s.bench.synth.ridge_contrast); });
    add("evalharness.noise", "per-pixel intensity noise std",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.noise = to_double(k, v); },
        [](const Settings& s) { return fmt(s.bench.synth.noise); });
    add("evalharness.rotation_jitter", "per-impression rotation jitter in degrees",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.rotation_jitter = to_double(k, v); },
        [](const Settings& s) { return fmt(s.bench.synth.rotation_jitter); });
    add("evalharness.translation_jitter", "per-impression translation jitter in pixels",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.translation_jitter = to_double(k, v); },
        [](const Settings& s) { return fmt(s.bench.synth.translation_jitter); });
    add("evalharness.seed", "seed of the synthetic set",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.seed = to_seed(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.synth.seed); });
    add("evalharness.lambda_sweep", "orientation weights swept at the default contrast weight",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.lambda_sweep = to_doubles(k, v); },
        [](const Settings& s) { return join(s.bench.lambda_sweep); });
    add("evalharness.gamma_sweep", "contrast weights swept at the default orientation weight",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.gamma_sweep = to_doubles(k, v); },
        [](const Settings& s) { return join(s.bench.gamma_sweep); });
    add("evalharness.jpeg_qualities", "JPEG qualities of the robustness sweep",
        [](Settings& s, const std::string& k, const std::string& v) {
          auto q = to_ints(k, v);
          for (int x : q)
            if (x < 1 || x > 100) throw ConfigError("JPEG quality out of [1,100] for key '" + k + "'");
          s.bench.jpeg_qualities = q;
        },
        [](const Settings& s) { return join(s.bench.jpeg_qualities); });
    add("evalharness.blur_sigmas", "Gaussian blur baseline sigmas",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.blur_sigmas = to_doubles(k, v); },
        [](const Settings& s) { return join(s.bench.blur_sigmas); });
    add("evalharness.pixelize_fractions", "pixelization baseline area fractions",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.pixelize_fractions = to_doubles(k, v); },
        [](const Settings& s) { return join(s.bench.pixelize_fractions); });
    add("cli.workers", "worker threads for batch work",
        [](Settings& s, const std::string& k, const std::string& v) {
          const int n = to_int(k, v);
          if (n < 1) throw ConfigError("key 'cli.workers' must be >= 1");
          s.bench.workers = n;
        },
        [](const Settings& s) { return std::to_string(s.bench.workers); });
    add("cli.seed", "master seed: sets both the synthetic-set and protection seeds",
        [](Settings& s, const std::string& k, const std::string& v) { s.bench.synth.seed = s.bench.protection.seed = to_seed(k, v); },
        [](const Settings& s) { return std::to_string(s.bench.synth.seed); });
    return b;
  }();
  return table;
}

const Binding& binding(const std::string& key) {
  for (const auto& b : bindings())
    if (key == b.info.key) return b;
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = [] {
    std::vector<KeyInfo> k;
    for (const auto& b : bindings()) k.push_back(b.info);
    return k;
  }();
  return keys;
}

KeyValues parse(std::istream& in, const std::string& origin) {
  KeyValues out;
  std::string section;
  int number = 0;
  for (std::string line; std::getline(in, line);) {
    ++number;
    const auto comment = line.find_first_of("#;");
    const std::string t = trim(comment == std::string::npos ? line : line.substr(0, comment));
    if (t.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "attack" && section != "scatnet" && section != "evalharness" && section != "cli")
        throw ConfigError(where + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value, got '" + t + "'");
    if (section.empty()) throw ConfigError(where + ": key '" + trim(t.substr(0, eq)) + "' outside any section");
    const std::string key = section + "." + trim(t.substr(0, eq));
    try {
      binding(key);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    out.emplace_back(key, trim(t.substr(eq + 1)));
  }
  return out;
}

void apply(Settings& settings, const std::string& key, const std::string& value) { binding(key).set(settings, key, value); }

std::string value_of(const Settings& settings, const std::string& key) { return binding(key).get(settings); }

Settings load(const std::optional<std::filesystem::path>& file, const KeyValues& overrides) {
  KeyValues merged;
  if (const char* env = std::getenv("FINGERSAFE_SEED"); env && *env) merged.emplace_back("cli.seed", env);
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    const KeyValues from_file = parse(in, file->string());
    merged.insert(merged.end(), from_file.begin(), from_file.end());
  }
  merged.insert(merged.end(), overrides.begin(), overrides.end());

  Settings s;
  s.bench.workers = default_workers();
  for (const auto& [k, v] : merged)
    if (k == "evalharness.suite") s.bench.suite = trim(v);
  s.bench = eval::apply_suite(s.bench);
  for (const auto& [k, v] : merged) apply(s, k, v);
  s.bench.synth.validate();
  s.bench.protection.validate();
  return s;
}

std::string render(const Settings& settings) {
  std::string out, section;
  for (const auto& b : bindings()) {
    const std::string key = b.info.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      section = key.substr(0, dot);
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += "# " + std::string(b.info.help) + "\n" + key.substr(dot + 1) + " = " + b.get(settings) + "\n";
  }
  return out;
}

}  // namespace fingersafe::config
