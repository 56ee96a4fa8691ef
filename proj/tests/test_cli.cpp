#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "stormbg/io.hpp"
#include "stormbg/metrics.hpp"

using namespace stormbg;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "stormbg_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = "cd '" + workdir().string() + "' && '" + STORMBG_CLI + "' " + args + " >>log.txt 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::uint8_t> bytes(const std::string& name) { return read_file(workdir() / name); }

std::string text(const std::string& name) {
  const auto b = bytes(name);
  return {b.begin(), b.end()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth is deterministic") {
  REQUIRE(run("synth --seed 7 --out a.tif --truth a.csv") == 0);
  REQUIRE(run("synth --seed 7 --out b.tif --truth b.csv") == 0);
  CHECK(bytes("a.tif") == bytes("b.tif"));
  CHECK(bytes("a.csv") == bytes("b.csv"));
  CHECK(fs::exists(workdir() / "a.tif.manifest"));
}

TEST_CASE("train --epochs 0 writes the initial model") {
  REQUIRE(run("synth --seed 7 --out a.tif") == 0);
  REQUIRE(run("train --input a.tif --epochs 0 --seed 3 --out-model m0.slnw") == 0);
  const SLNetModel m = load_model(workdir() / "m0.slnw");
  const SLNetModel fresh = init_model(3, 1, 3, 3);
  CHECK(m.layer1 == fresh.layer1);
  CHECK(m.layer2 == fresh.layer2);
}

TEST_CASE("slnet decomposition is sparser than median subtraction") {
  REQUIRE(run("synth --seed 7 --out a.tif") == 0);
  REQUIRE(run("train --input a.tif --epochs 40 --out-model m.slnw") == 0);
  REQUIRE(run("decompose --input a.tif --model m.slnw --out-sparse s.tif --out-lowrank l.tif") == 0);
  REQUIRE(run("baseline --method median --input a.tif --out med.tif") == 0);
  REQUIRE(run("metrics sparsity --input s.tif,med.tif --out sp.csv") == 0);
  std::istringstream csv(text("sp.csv"));
  std::string header, slnet, median;
  std::getline(csv, header);
  std::getline(csv, slnet);
  std::getline(csv, median);
  const double s = std::stod(slnet.substr(slnet.rfind(',') + 1));
  const double m = std::stod(median.substr(median.rfind(',') + 1));
  CHECK(s > m);
  CHECK(text("m.slnw.report.csv").rfind("\"epoch\"", 0) == 0);
}

TEST_CASE("a manifest reproduces its run") {
  REQUIRE(run("synth --seed 9 --frames 40 --height 32 --width 32 --emitters 20 --out c.tif --truth c.csv") == 0);
  REQUIRE(run("baseline --method rollingball --radius 3 --input c.tif --out rb.tif --threads 1") == 0);
  fs::rename(workdir() / "rb.tif", workdir() / "rb_first.tif");
  REQUIRE(run("baseline --config rb.tif.manifest --threads 3") == 0);
  CHECK(bytes("rb.tif") == bytes("rb_first.tif"));
  // explicit flags win over the file
  REQUIRE(run("baseline --config rb.tif.manifest --radius 10 --out rb10.tif") == 0);
  CHECK(text("rb10.tif.manifest").find("radius = 10") != std::string::npos);
}

TEST_CASE("localize, render and metrics chain") {
  REQUIRE(run("synth --seed 9 --frames 40 --height 32 --width 32 --emitters 20 --out c.tif --truth c.csv") == 0);
  REQUIRE(run("localize --input c.tif --out c_locs.csv --threshold 200") == 0);
  REQUIRE(run("render --input c_locs.csv --like c.tif --magnification 4 --out c_rec.tif") == 0);
  CHECK(read_tiff(workdir() / "c_rec.tif").height() == 128);
  REQUIRE(run("metrics localization --locs c_locs.csv --truth c.csv --out c_err.csv") == 0);
  CHECK(text("c_err.csv").rfind("\"rmse [px]\"", 0) == 0);
}

TEST_CASE("exit codes") {
  CHECK(run("") == 1);
  CHECK(run("train --bogus") == 1);
  CHECK(run("train --input a.tif --out-model x.slnw --kernel 4") == 1);
  CHECK(run("baseline --input missing.tif --out x.tif") == 2);
  std::ofstream(workdir() / "junk.tif") << "not a tiff";
  CHECK(run("localize --input junk.tif --out x.csv") == 2);
  std::ofstream(workdir() / "bad.cfg") << "this line has no equals sign\n";
  CHECK(run("baseline --config bad.cfg --input a.tif --out x.tif") == 2);
  CHECK(run("--version") == 0);
}

}
