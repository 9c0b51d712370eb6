#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + BLENDLAB_CLI + "\" " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

struct Scratch {
  fs::path dir = fs::temp_directory_path() / ("blendlab_cli_" + std::to_string(::getpid()));
  Scratch() { fs::create_directories(dir); }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& p) const { return (dir / p).string(); }
};

const char* kTiny = " --data.num_identities=4 --data.images_per_identity=3";

}  // namespace

TEST_CASE("exit statuses") {
  Scratch s;
  CHECK(run("--version") == 0);
  CHECK(run("") == 2);
  CHECK(run("frobnicate --out " + (s / "x")) == 2);
  CHECK(run("gen-dataset --out " + (s / "bad") + " --data.bogus=1") == 2);
  CHECK(run("gen-dataset --out " + (s / "bad") + " --data.image_size=30") == 2);
  CHECK(run("gen-dataset --out " + (s / "bad") + " stray") == 2);
  CHECK(run("gen-dataset --out " + (s / "bad") + " --config " + (s / "none.toml")) == 3);
  CHECK(run("pretrain --dataset " + (s / "missing") + " --out " + (s / "m")) == 3);

  REQUIRE(run("gen-dataset --out " + (s / "ds") + kTiny) == 0);
  CHECK(fs::exists(s / "ds/manifest.json"));
  CHECK(run("pretrain --dataset " + (s / "ds") + " --out " + (s / "m") + " --p 0 --pretrain.epochs=1 --margin.K=5" +
            kTiny) == 4);
  CHECK(fs::exists(s / "m/error.json"));
  CHECK(run("pretrain --dataset " + (s / "ds") + " --out " + (s / "m") + " --p 2") == 2);

  std::ofstream(s / "run.toml") << "[data]\nnum_identities = 4\nimages_per_identity = 3\n[pretrain]\nepochs = 1\n";
  CHECK(run("pretrain --dataset " + (s / "ds") + " --out " + (s / "m2") + " --p 0 --config " + (s / "run.toml")) == 0);
  CHECK(fs::exists(s / "m2/weights.f32"));
  std::ofstream(s / "broken.toml") << "[data\n";
  CHECK(run("gen-dataset --out " + (s / "b") + " --config " + (s / "broken.toml")) == 2);
}
