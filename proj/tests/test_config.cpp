#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fingersafe/config.hpp"
#include "fingersafe/errors.hpp"

using namespace fingersafe;
namespace fs = std::filesystem;

namespace {

struct ConfigFile {
  fs::path path;
  explicit ConfigFile(const std::string& text) {
    path = fs::temp_directory_path() / ("fingersafe_cfg_" + std::to_string(std::random_device{}()) + ".ini");
    std::ofstream(path) << text;
  }
  ~ConfigFile() { fs::remove(path); }
};

struct SeedEnv {
  explicit SeedEnv(const char* value) {
    if (value) setenv("FINGERSAFE_SEED", value, 1);
    else unsetenv("FINGERSAFE_SEED");
  }
  ~SeedEnv() { unsetenv("FINGERSAFE_SEED"); }
};

std::string error_of(auto&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults without file, flags or environment") {
  SeedEnv env(nullptr);
  const auto s = config::load(std::nullopt, {});
  CHECK(s.bench.protection.epsilon == doctest::Approx(8.0 / 255.0));
  CHECK(s.bench.protection.alpha == doctest::Approx(1.0 / 255.0));
  CHECK(s.bench.protection.steps == 20);
  CHECK(s.bench.protection.lambda == 100.0);
  CHECK(s.bench.protection.gamma == 500.0);
  CHECK(s.bench.suite == "default");
  CHECK(s.bench.synth.seed == 0);
  CHECK(s.bench.workers >= 1);
}

TEST_CASE("precedence: defaults, environment seed, file, flags") {
  SeedEnv env("17");
  CHECK(config::load(std::nullopt, {}).bench.synth.seed == 17);
  CHECK(config::load(std::nullopt, {}).bench.protection.seed == 17);

  ConfigFile file("[cli]\nseed = 23\n[attack]\nlambda = 10\ngamma = 5\n");
  const auto from_file = config::load(file.path, {});
  CHECK(from_file.bench.synth.seed == 23);
  CHECK(from_file.bench.protection.lambda == 10.0);
  CHECK(from_file.bench.protection.gamma == 5.0);

  const auto flagged = config::load(file.path, {{"cli.seed", "42"}, {"attack.lambda", "1000"}});
  CHECK(flagged.bench.synth.seed == 42);
  CHECK(flagged.bench.protection.lambda == 1000.0);
  CHECK(flagged.bench.protection.gamma == 5.0);

  const auto split = config::load(file.path, {{"attack.seed", "3"}});
  CHECK(split.bench.synth.seed == 23);
  CHECK(split.bench.protection.seed == 3);
}

TEST_CASE("parse reads sections, comments and key order") {
  std::istringstream in("# header\n\n[attack]\nepsilon = 4 ; inline\nsteps=7\n[evalharness]\njpeg_qualities = 90, 50\n");
  const auto kv = config::parse(in, "mem");
  REQUIRE(kv.size() == 3);
  CHECK(kv[0] == std::pair<std::string, std::string>{"attack.epsilon", "4"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"attack.steps", "7"});
  CHECK(kv[2] == std::pair<std::string, std::string>{"evalharness.jpeg_qualities", "90, 50"});
}

TEST_CASE("errors name the offending key or line") {
  SeedEnv env(nullptr);
  std::istringstream unknown("[attack]\nepsilom = 4\n");
  const std::string msg = error_of([&] { config::parse(unknown, "bad.ini"); });
  CHECK(msg.find("attack.epsilom") != std::string::npos);
  CHECK(msg.find("bad.ini:2") != std::string::npos);

  std::istringstream section("[attacks]\n");
  CHECK(error_of([&] { config::parse(section, "x"); }).find("attacks") != std::string::npos);
  std::istringstream orphan("steps = 3\n");
  CHECK(error_of([&] { config::parse(orphan, "x"); }).find("outside any section") != std::string::npos);
  std::istringstream no_eq("[attack]\nsteps\n");
  CHECK_THROWS_AS(config::parse(no_eq, "x"), ConfigError);

  CHECK(error_of([] { config::load(std::nullopt, {{"attack.steps", "many"}}); }).find("attack.steps") != std::string::npos);
  CHECK(error_of([] { config::load(std::nullopt, {{"nope.key", "1"}}); }).find("nope.key") != std::string::npos);
  CHECK_THROWS_AS(config::load(std::nullopt, {{"cli.seed", "-1"}}), ConfigError);
  CHECK_THROWS_AS(config::load(std::nullopt, {{"cli.workers", "0"}}), ConfigError);
  CHECK_THROWS_AS(config::load(std::nullopt, {{"evalharness.jpeg_qualities", "90,0"}}), ConfigError);
  CHECK_THROWS_AS(config::load(std::nullopt, {{"attack.epsilon", "nan"}}), ConfigError);
  CHECK_THROWS_AS(config::load(std::nullopt, {{"attack.steps", "-2"}}), ConfigError);
  CHECK_THROWS_AS(config::load(fs::path("/nonexistent/fingersafe.ini"), {}), ConfigError);

  SeedEnv bad("abc");
  CHECK_THROWS_AS(config::load(std::nullopt, {}), ConfigError);
}

TEST_CASE("suite preset applies before explicit keys") {
  SeedEnv env(nullptr);
  const auto quick = config::load(std::nullopt, {{"evalharness.suite", "quick"}});
  CHECK(quick.bench.synth.identities == 4);
  CHECK(quick.bench.protection.steps == 5);
  const auto tuned = config::load(std::nullopt, {{"attack.steps", "9"}, {"evalharness.suite", "quick"}});
  CHECK(tuned.bench.protection.steps == 9);
  CHECK(tuned.bench.synth.identities == 4);
  CHECK_THROWS_AS(config::load(std::nullopt, {{"evalharness.suite", "giant"}}), ConfigError);
}

TEST_CASE("render round-trips through parse") {
  SeedEnv env(nullptr);
  const auto s = config::load(std::nullopt, {{"attack.epsilon", "6"}, {"evalharness.lambda_sweep", "2,20"}, {"cli.workers", "3"}});
  const std::string text = config::render(s);
  CHECK(text.rfind("[attack]\n", 0) == 0);
  std::istringstream in(text);
  const auto kv = config::parse(in, "rendered");
  CHECK(kv.size() == config::known_keys().size());
  config::Settings back;
  for (const auto& [k, v] : kv) config::apply(back, k, v);
  for (const auto& key : config::known_keys()) {
    CAPTURE(key.key);
    CHECK(config::value_of(back, key.key) == config::value_of(s, key.key));
  }
  CHECK(config::value_of(s, "attack.epsilon") == "6");
  CHECK(config::value_of(s, "evalharness.lambda_sweep") == "2,20");
  CHECK(back.bench.protection.epsilon == doctest::Approx(6.0 / 255.0));
  CHECK_THROWS_AS(config::value_of(s, "attack.unknown"), ConfigError);
}
