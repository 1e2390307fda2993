#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "hyperadapt/binary_io.hpp"
#include "hyperadapt/decomp.hpp"
#include "hyperadapt/filteradapt.hpp"
#include "hyperadapt/synth.hpp"
#include "support.hpp"

using namespace hyperadapt;
using hyperadapt::cli::run_cli;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

struct Pgm {
  std::size_t w = 0, h = 0;
  std::vector<std::uint8_t> px;
};

Pgm read_pgm(const std::filesystem::path& p) {
  const std::string s = slurp(p);
  std::istringstream in(s);
  std::string magic;
  int maxval = 0;
  Pgm g;
  in >> magic >> g.w >> g.h >> maxval;
  in.get();
  REQUIRE(magic == "P5");
  REQUIRE(maxval == 255);
  const auto offset = static_cast<std::size_t>(in.tellg());
  g.px.assign(s.begin() + static_cast<std::ptrdiff_t>(offset), s.end());
  REQUIRE(g.px.size() == g.w * g.h);
  return g;
}

const char* kSmallConfig =
    "# tiny synthetic run\n"
    "method = cp\n"
    "rank = 1\n"
    "epochs = 2\n"
    "batch = 16\n"
    "synth_channels = 6\n"
    "synth_classes = 2\n"
    "synth_samples = 24\n"
    "synth_tile = 8\n"
    "bank_out_channels = 3\n"
    "bank_kernel = 3\n"
    "padding = 1\n"
    "cp_restarts = 1\n";

}  // namespace

TEST_CASE("cli usage errors") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"decompose", "--bank", "x.tns"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("cli decompose") {
  testing::TempDir dir("cli-dec");
  const auto bank = synth_filter_bank(6, 5, 3);
  save_tensor(dir / "bank.tns", bank.weights);
  save_tensor(dir / "bias.tns", Tensor({6}, *bank.bias));

  const auto cp = run({"decompose", "--bank", (dir / "bank.tns").string(), "--bias", (dir / "bias.tns").string(),
                       "--kind", "cp", "--rank", "1", "--out", (dir / "cp.dcp").string()});
  REQUIRE(cp.code == 0);
  CHECK(cp.out.find("filter 5 relative_error") != std::string::npos);
  const auto d = load_decomposition(dir / "cp.dcp");
  CHECK(d.mean_error() <= 1e-8);
  CHECK(d.bias == bank.bias);

  Rng rng(4);
  save_tensor(dir / "rand.tns", testing::random_tensor(rng, {4, 3, 7, 7}));
  const auto tk = run({"decompose", "--bank", (dir / "rand.tns").string(), "--kind", "tucker", "--rank", "3", "--out",
                       (dir / "tk.dcp").string()});
  REQUIRE(tk.code == 0);
  CHECK(load_decomposition(dir / "tk.dcp").mean_error() <= 1e-10);

  CHECK(run({"decompose", "--bank", (dir / "bank.tns").string(), "--kind", "cp", "--rank", "0", "--out",
             (dir / "x.dcp").string()})
            .code == 2);
  CHECK(run({"decompose", "--bank", (dir / "bank.tns").string(), "--kind", "pca", "--rank", "1", "--out",
             (dir / "x.dcp").string()})
            .code == 2);
  CHECK(run({"decompose", "--bank", (dir / "missing.tns").string(), "--kind", "cp", "--rank", "1", "--out",
             (dir / "x.dcp").string()})
            .code == 1);
  CHECK_FALSE(std::filesystem::exists(dir / "x.dcp"));
}

TEST_CASE("cli adapt") {
  testing::TempDir dir("cli-adapt");
  const auto bank = synth_filter_bank(4, 5, 5);
  save_tensor(dir / "bank.tns", bank.weights);
  for (std::string kind : {"cp", "tucker"}) {
    REQUIRE(run({"decompose", "--bank", (dir / "bank.tns").string(), "--kind", kind, "--rank", "2", "--out",
                 (dir / "d.dcp").string()})
                .code == 0);
    REQUIRE(run({"adapt", "--decomp", (dir / "d.dcp").string(), "--channels", "3", "--init", "interp", "--out",
                 (dir / "id.adp").string()})
                .code == 0);
    const auto layer = load_adapted(dir / "id.adp");
    const auto source = load_decomposition(dir / "d.dcp").reconstruct().weights;
    CHECK(encode_tensor(decompress(layer)) == encode_tensor(source));

    const auto wide = run({"adapt", "--decomp", (dir / "d.dcp").string(), "--channels", "145", "--out",
                           (dir / "w.adp").string()});
    REQUIRE(wide.code == 0);
    CHECK(load_adapted(dir / "w.adp").trainable_count() == 4 * 2 * 145);
    CHECK(wide.out.find("trainable 1160") != std::string::npos);
  }
  CHECK(run({"adapt", "--decomp", (dir / "nope.dcp").string(), "--channels", "8", "--out", (dir / "n.adp").string()})
            .code == 1);
  CHECK(run({"adapt", "--decomp", (dir / "d.dcp").string(), "--channels", "8", "--init", "zeros", "--out",
             (dir / "n.adp").string()})
            .code == 2);
}

TEST_CASE("cli train is deterministic and logs every epoch") {
  testing::TempDir dir("cli-train");
  write(dir / "run.cfg", kSmallConfig);
  const auto a = run({"train", "--config", (dir / "run.cfg").string(), "--log", (dir / "a.csv").string(),
                      "--checkpoint", (dir / "a.mdl").string()});
  REQUIRE(a.code == 0);
  const auto b = run({"train", "--config", (dir / "run.cfg").string(), "--log", (dir / "b.csv").string(),
                      "--checkpoint", (dir / "b.mdl").string(), "--quiet"});
  REQUIRE(b.code == 0);
  const std::string csv = slurp(dir / "a.csv");
  CHECK(csv == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.mdl") == slurp(dir / "b.mdl"));

  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "epoch,lr,train_loss,test_loss,test_accuracy");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 2);

  const auto flat = run({"train", "--config", (dir / "run.cfg").string(), "--set", "gamma=1.0", "--set", "epochs=3",
                         "--log", (dir / "flat.csv").string(), "--checkpoint", (dir / "flat.mdl").string()});
  REQUIRE(flat.code == 0);
  std::istringstream flat_lines(slurp(dir / "flat.csv"));
  std::getline(flat_lines, line);
  std::set<std::string> lrs;
  while (std::getline(flat_lines, line)) {
    std::istringstream row(line);
    std::string epoch, lr;
    std::getline(row, epoch, ',');
    std::getline(row, lr, ',');
    lrs.insert(lr);
  }
  CHECK(lrs.size() == 1);

  CHECK(run({"train", "--config", (dir / "run.cfg").string(), "--set", "gamma=0"}).code == 2);
  CHECK(run({"train", "--config", (dir / "run.cfg").string(), "--set", "colour=blue"}).code == 2);
  CHECK(run({"train", "--config", (dir / "absent.cfg").string()}).code == 1);
  write(dir / "bad.cfg", "method cp\n");
  CHECK(run({"train", "--config", (dir / "bad.cfg").string()}).code == 2);
}

TEST_CASE("cli train on tile files with config-relative paths") {
  testing::TempDir dir("cli-tiles");
  REQUIRE(run({"synth-task", "--channels", "5", "--classes", "2", "--samples", "16", "--tile", "8", "--train-out",
               (dir / "train.tls").string(), "--test-out", (dir / "test.tls").string()})
              .code == 0);
  write(dir / "t.cfg",
        "method = tucker\nrank = 2\nepochs = 1\ntrain_tiles = train.tls\ntest_tiles = test.tls\n"
        "bank_out_channels = 2\nbank_kernel = 3\ncheckpoint = out.mdl\nlog = out.csv\n");
  REQUIRE(run({"train", "--config", (dir / "t.cfg").string(), "--quiet"}).code == 0);
  CHECK(std::filesystem::exists(dir / "out.mdl"));
  CHECK(std::filesystem::exists(dir / "out.csv"));
}

TEST_CASE("cli rank sweep") {
  testing::TempDir dir("cli-sweep");
  write(dir / "run.cfg", kSmallConfig);
  const auto r = run({"rank-sweep", "--config", (dir / "run.cfg").string(), "--ranks", "1,2,3", "--seeds", "2",
                      "--out", (dir / "sweep.csv").string()});
  REQUIRE(r.code == 0);
  std::istringstream lines(slurp(dir / "sweep.csv"));
  std::string line;
  std::getline(lines, line);
  CHECK(line == "rank,params,accuracy_mean,accuracy_sem,seeds");
  std::vector<long> params;
  while (std::getline(lines, line)) {
    std::istringstream row(line);
    std::string rank, p;
    std::getline(row, rank, ',');
    std::getline(row, p, ',');
    params.push_back(std::stol(p));
  }
  REQUIRE(params.size() == 3);
  CHECK(params[0] < params[1]);
  CHECK(params[1] < params[2]);

  CHECK(run({"rank-sweep", "--config", (dir / "run.cfg").string(), "--ranks", "1,2,1", "--out",
             (dir / "dup.csv").string()})
            .code == 2);
  CHECK_FALSE(std::filesystem::exists(dir / "dup.csv"));
}

TEST_CASE("cli export-filters") {
  testing::TempDir dir("cli-export");
  Tensor bank({3, 2, 4, 5});
  const Vector x{1, -2, 0.5, 3}, y{0.2, -1, 2, 0.5, -0.3};
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        bank(1, c, i, j) = (c == 0 ? 1.0 : 3.0) * x[i] * y[j];
        bank(2, c, i, j) = static_cast<double>(i + j + c);
      }
  save_tensor(dir / "bank.tns", bank);
  const auto r = run({"export-filters", "--bank", (dir / "bank.tns").string(), "--out-dir", (dir / "img").string()});
  REQUIRE(r.code == 0);
  std::size_t count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "img"))
    count += entry.path().filename().string().rfind("filter_", 0) == 0;
  CHECK(count == 3);
  CHECK(std::filesystem::exists(dir / "img" / "composite.pgm"));

  const Pgm zero = read_pgm(dir / "img" / "filter_000.pgm");
  CHECK(zero.w == 5);
  CHECK(zero.h == 4);
  for (auto v : zero.px) CHECK(v == 128);

  const Pgm r1 = read_pgm(dir / "img" / "filter_001.pgm");
  double peak = 0.0;
  for (double a : x)
    for (double b : y) peak = std::max(peak, std::abs(a * b));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const double expected = 127.5 + 127.5 * x[i] * y[j] / peak;
      CHECK(std::abs(static_cast<double>(r1.px[i * 5 + j]) - expected) <= 0.5 + 1e-9);
    }

  REQUIRE(run({"export-filters", "--bank", (dir / "bank.tns").string(), "--out-dir", (dir / "big").string(),
               "--scale", "3"})
              .code == 0);
  CHECK(read_pgm(dir / "big" / "filter_002.pgm").w == 15);

  CHECK(run({"export-filters", "--out-dir", (dir / "none").string()}).code == 2);
  CHECK(run({"export-filters", "--model", (dir / "missing.mdl").string(), "--out-dir", (dir / "none").string()})
            .code == 1);
}

TEST_CASE("cli export from a trained checkpoint") {
  testing::TempDir dir("cli-export-model");
  write(dir / "run.cfg", kSmallConfig);
  REQUIRE(run({"train", "--config", (dir / "run.cfg").string(), "--quiet", "--checkpoint", (dir / "m.mdl").string(),
               "--log", (dir / "m.csv").string()})
              .code == 0);
  REQUIRE(run({"export-filters", "--model", (dir / "m.mdl").string(), "--out-dir", (dir / "img").string()}).code == 0);
  CHECK(std::filesystem::exists(dir / "img" / "filter_002.pgm"));
  CHECK_FALSE(std::filesystem::exists(dir / "img" / "filter_003.pgm"));
}

TEST_CASE("cli gradcheck") {
  const auto ok = run({"gradcheck"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);
  CHECK(ok.out.find("cp first.spectral") != std::string::npos);
  CHECK(ok.out.find("reduce reduce.pw1.weight") != std::string::npos);

  const auto flipped = run({"gradcheck", "--flip-sign", "--method", "cp"});
  CHECK(flipped.code == 3);
  CHECK(flipped.out.find("FAIL") != std::string::npos);

  testing::TempDir dir("cli-gc");
  write(dir / "gc.cfg", "method = tucker\nrank = 3\nsize = 10\n");
  CHECK(run({"gradcheck", "--config", (dir / "gc.cfg").string()}).code == 0);
  CHECK(run({"gradcheck", "--method", "pca"}).code == 2);
}

TEST_CASE("cli tile") {
  testing::TempDir dir("cli-tile");
  Rng rng(8);
  HyperCube cube;
  cube.data = testing::random_tensor(rng, {6, 20, 20});
  cube.labels = std::vector<std::int32_t>(400, 1);
  save_cube(dir / "c.hsc", cube);
  const auto r = run({"tile", "--cube", (dir / "c.hsc").string(), "--resize", "16", "--drop-low", "1", "--train-out",
                      (dir / "tr.tls").string(), "--test-out", (dir / "te.tls").string()});
  REQUIRE(r.code == 0);
  const auto tr = load_tiles(dir / "tr.tls");
  const auto te = load_tiles(dir / "te.tls");
  CHECK(tr.size() + te.size() == 16);
  CHECK(tr.tile_shape() == Shape{5, 16, 16});
}
