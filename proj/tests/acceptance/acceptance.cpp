// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "hyperadapt/binary_io.hpp"
#include "hyperadapt/conv.hpp"
#include "hyperadapt/data.hpp"
#include "hyperadapt/decomp.hpp"
#include "hyperadapt/filteradapt.hpp"
#include "hyperadapt/gradcheck.hpp"
#include "hyperadapt/model.hpp"
#include "hyperadapt/optim.hpp"
#include "hyperadapt/synth.hpp"
#include "support.hpp"

using namespace hyperadapt;
using testing::max_abs;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

Outcome exact_recovery() {
  const auto bank = synth_filter_bank(100, 7, 1);
  double cp_worst = 0.0;
  for (double e : decompose_bank(bank, DecompKind::Cp, 1).errors()) cp_worst = std::max(cp_worst, e);
  Rng rng(2);
  const FilterBank random_bank(random_tensor(rng, {100, 3, 7, 7}));
  double tucker_worst = 0.0;
  for (double e : decompose_bank(random_bank, DecompKind::Tucker, 3).errors()) tucker_worst = std::max(tucker_worst, e);
  return {cp_worst <= 1e-8 && tucker_worst <= 1e-10,
          "cp R=1 worst " + fmt("%.2e", cp_worst) + ", tucker R=3 worst " + fmt("%.2e", tucker_worst)};
}

Outcome tucker_optimality() {
  Rng rng(3);
  double worst_gap = 0.0;
  double worst_dominance = -INFINITY;
  CpOptions opts;
  opts.restarts = 4;
  for (int i = 0; i < 100; ++i) {
    const Tensor f = random_tensor(rng, {3, 7, 7});
    Eigen::MatrixXd m(3, 49);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 49; ++j) m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = f[c * 49 + j];
    const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
    const double oracle = std::sqrt(s(2) * s(2) / s.squaredNorm());
    const double tucker = tucker1_decompose(f, 2).relative_error;
    opts.seed = static_cast<std::uint64_t>(i);
    const double cp = cp_decompose(f, 2, opts).relative_error;
    worst_gap = std::max(worst_gap, std::abs(tucker - oracle));
    worst_dominance = std::max(worst_dominance, tucker - cp);
  }
  return {worst_gap <= 1e-9 && worst_dominance <= 1e-9,
          "max |tucker - oracle| " + fmt("%.2e", worst_gap) + ", max (tucker - cp) " + fmt("%.2e", worst_dominance)};
}

Outcome pipeline_equivalence() {
  Rng rng(4);
  const std::size_t channels[] = {3, 8, 64, 200};
  const std::size_t kernels[] = {3, 5, 7};
  double worst = 0.0;
  int failures = 0;
  for (int i = 0; i < 50; ++i) {
    const auto kind = i % 2 == 0 ? DecompKind::Cp : DecompKind::Tucker;
    const std::size_t c = channels[rng() % 4];
    const std::size_t rank = 1 + rng() % 3;
    const std::size_t k = kernels[rng() % 3];
    const std::size_t stride = 1 + rng() % 2;
    const std::size_t pad = rng() % (k / 2 + 1);
    const FilterBank bank(random_tensor(rng, {4, 3, k, k}), normal_vector(rng, 4));
    CpOptions opts;
    opts.restarts = 1;
    const auto layer = adapt(decompose_bank(bank, kind, rank, opts), c, InitPolicy::RandomNormal, rng());
    const Model model(first_layer_from_adapted(layer, stride, pad), HeadConfig{}, 0);
    const Tensor x = random_tensor(rng, {c, 16, 16});
    const Tensor dense_bank = decompress(layer);
    const Tensor dense = conv2d_forward(x, ConvSpec::square(c, 4, k, stride, pad), dense_bank, *layer.bias);
    const double diff = max_abs_diff(model.first_layer_forward(x), dense);
    worst = std::max(worst, diff);
    if (!(diff <= 1e-9)) ++failures;
  }
  return {failures == 0, "50 configurations, max abs diff " + fmt("%.2e", worst)};
}

Outcome identity_adaptation() {
  Rng rng(5);
  const FilterBank bank(random_tensor(rng, {16, 3, 7, 7}), normal_vector(rng, 16));
  double worst_cp = 0.0, worst_tucker = 0.0;
  for (auto kind : {DecompKind::Cp, DecompKind::Tucker}) {
    const auto d = decompose_bank(bank, kind, 2);
    const double diff = max_abs_diff(decompress(adapt(d, 3, InitPolicy::Interp)), d.reconstruct().weights);
    (kind == DecompKind::Cp ? worst_cp : worst_tucker) = diff;
  }
  return {worst_cp <= 1e-12 && worst_tucker <= 1e-12,
          "cp diff " + fmt("%.2e", worst_cp) + ", tucker diff " + fmt("%.2e", worst_tucker)};
}

Outcome gradient_correctness() {
  std::string detail;
  bool pass = true;
  for (auto m : {Method::Reduce, Method::Scratch, Method::Cp, Method::Tucker}) {
    const auto p = micro_problem(m);
    const auto report = gradcheck(p.model, p.input, p.label);
    pass = pass && report.passed() && report.worst() <= 1e-5;
    detail += std::string(detail.empty() ? "" : ", ") + to_string(m) + " " + fmt("%.1e", report.worst());
  }
  return {pass, "worst relative error: " + detail};
}

Outcome freeze_and_span() {
  const auto task = synth_spectral_task(16, 3, 48, 6, SynthTaskOptions{8});
  TileSet train_set = task.train;
  normalize(train_set);
  const auto rgb = synth_filter_bank(4, 5, 7);
  bool pass = true;
  double worst_span = 0.0;
  double control = 0.0;
  std::size_t steps_done = 0;
  for (auto kind : {DecompKind::Cp, DecompKind::Tucker}) {
    const auto initial = adapt(decompose_bank(rgb, kind, 2), 16, InitPolicy::Interp);
    Model model(first_layer_from_adapted(initial, 1, 2), HeadConfig{0, 1, 1, 3}, 8);
    const Model start = model;
    Adam adam(model.blocks());
    Rng rng(9);
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    for (int step = 0; step < 200; ++step) {
      std::vector<Tensor> batch;
      std::vector<int> labels;
      for (int b = 0; b < 8; ++b) {
        const std::size_t i = pick(rng);
        batch.push_back(train_set.tiles[i]);
        labels.push_back(train_set.labels[i]);
      }
      const auto result = forward_backward(model, batch, labels);
      adam.step(model.blocks(), result.grads, 0.01);
      ++steps_done;
    }
    bool spectral_moved = false;
    for (std::size_t b = 0; b < model.blocks().size(); ++b) {
      const auto& now = model.blocks()[b];
      const auto& then = start.blocks()[b];
      if (!now.trainable) pass = pass && now.value == then.value;
      if (now.name == "first.spectral") spectral_moved = now.value != then.value;
    }
    pass = pass && spectral_moved;
    const auto trained = model.adapted_layer();
    if (kind == DecompKind::Cp) {
      for (std::size_t o = 0; o < 4; ++o) pass = pass && trained.horizontal[o] == initial.horizontal[o] &&
                                                   trained.vertical[o] == initial.vertical[o];
    } else {
      for (std::size_t o = 0; o < 4; ++o) pass = pass && trained.core[o] == initial.core[o];
    }
    const Tensor bank = model.first_layer_bank();
    for (std::size_t o = 0; o < 4; ++o) {
      const double r = kind == DecompKind::Cp ? spatial_span_residual(initial, bank, o)
                                              : core_span_residual(initial, bank, o);
      worst_span = std::max(worst_span, r);
    }
    if (kind == DecompKind::Cp) {
      auto perturbed = trained;
      perturbed.horizontal[0](1, 0) += 0.25;
      control = spatial_span_residual(initial, decompress(perturbed), 0);
    }
  }
  pass = pass && worst_span <= 1e-10 && control > 1e-6;
  return {pass, std::to_string(steps_done) + " Adam steps over cp+tucker, frozen blocks identical, max span residual " +
                    fmt("%.2e", worst_span) + ", perturbed control " + fmt("%.2e", control)};
}

Outcome parameter_counts() {
  Rng rng(10);
  bool pass = true;
  int checked = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t c_out = 1 + rng() % 12;
    const std::size_t k = 1 + 2 * (rng() % 4);
    const std::size_t rank = 1 + rng() % 3;
    const std::size_t channels = 1 + rng() % 220;
    const auto rgb = synth_filter_bank(c_out, k, rng());
    ModelBuildOptions opts;
    opts.channels = channels;
    opts.rank = rank;
    opts.cp.restarts = 0;
    const auto scratch = build_model(Method::Scratch, rgb, opts).first_layer_trainable();
    for (auto m : {Method::Cp, Method::Tucker}) {
      const auto decomposed = build_model(m, rgb, opts).first_layer_trainable();
      pass = pass && decomposed == c_out * rank * channels;
      pass = pass && scratch * rank == decomposed * k * k;
      ++checked;
    }
  }
  const auto rgb7 = synth_filter_bank(64, 7, 11);
  ModelBuildOptions opts;
  opts.channels = 145;
  opts.rank = 2;
  opts.cp.restarts = 0;
  const double ratio = static_cast<double>(build_model(Method::Scratch, rgb7, opts).first_layer_trainable()) /
                       static_cast<double>(build_model(Method::Cp, rgb7, opts).first_layer_trainable());
  pass = pass && ratio == 24.5;
  return {pass, std::to_string(checked) + " shape/kind pairs exact, k=7 R=2 ratio " + fmt("%.4g", ratio)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CsvCheck {
  bool ok = false;
  std::size_t rows = 0;
  double final_accuracy = 0.0;
  double first_train_loss = 0.0;
  double last_train_loss = 0.0;
};

CsvCheck check_csv(const std::string& csv, std::size_t expected_rows) {
  CsvCheck out;
  std::istringstream lines(csv);
  std::string line;
  if (!std::getline(lines, line) || line != "epoch,lr,train_loss,test_loss,test_accuracy") return out;
  bool ok = true;
  while (std::getline(lines, line)) {
    std::vector<double> f;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) f.push_back(std::stod(cell));
    ok = ok && f.size() == 5 && f[0] == static_cast<double>(out.rows);
    for (double v : f) ok = ok && std::isfinite(v);
    if (f.size() == 5) {
      if (out.rows == 0) out.first_train_loss = f[2];
      out.last_train_loss = f[2];
      out.final_accuracy = f[4];
    }
    ++out.rows;
  }
  out.ok = ok && out.rows == expected_rows;
  return out;
}

const char* kTaskConfig =
    "rank = 2\n"
    "lr0 = 0.01\n"
    "gamma = 0.95\n"
    "batch = 128\n"
    "seed = 1\n"
    "synth_channels = 64\n"
    "synth_classes = 4\n"
    "synth_samples = 200\n"
    "synth_seed = 2024\n"
    "bank_out_channels = 8\n"
    "bank_kernel = 5\n"
    "bank_seed = 3\n"
    "padding = 2\n";

struct Workspace {
  testing::TempDir dir{"acceptance"};
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

int train_cli(const std::string& method, std::size_t epochs, const std::string& tag) {
  const auto& dir = workspace().dir;
  const auto cfg = dir / (tag + ".cfg");
  std::ofstream(cfg) << kTaskConfig << "method = " << method << "\nepochs = " << epochs << "\n";
  std::ostringstream out, err;
  return cli::run_cli({"train", "--config", cfg.string(), "--quiet", "--log", (dir / (tag + ".csv")).string(),
                       "--checkpoint", (dir / (tag + ".mdl")).string()},
                      out, err);
}

constexpr std::size_t kEpochs = 100;

Outcome end_to_end() {
  const auto& dir = workspace().dir;
  std::string detail;
  bool pass = true;
  for (std::string m : {"cp", "tucker"}) {
    if (train_cli(m, kEpochs, m) != 0) return {false, m + " training failed"};
    const auto csv = check_csv(slurp(dir / (m + ".csv")), kEpochs);
    pass = pass && csv.ok && csv.final_accuracy >= 0.95;
    detail += m + " acc " + fmt("%.3f", csv.final_accuracy) + ", ";
  }
  if (train_cli("cp", kEpochs, "cp_again") != 0) return {false, "repeat training failed"};
  const bool same = slurp(dir / "cp.csv") == slurp(dir / "cp_again.csv") &&
                    slurp(dir / "cp.mdl") == slurp(dir / "cp_again.mdl");
  pass = pass && same;
  detail += std::to_string(kEpochs) + " epochs, repeat run " + (same ? "identical" : "DIFFERS");
  return {pass, detail};
}

Outcome overfitting_harness() {
  const auto& dir = workspace().dir;
  if (!std::filesystem::exists(dir / "cp.mdl") && train_cli("cp", kEpochs, "cp") != 0) {
    return {false, "cp training failed"};
  }
  if (train_cli("scratch", 10, "scratch") != 0) return {false, "scratch training failed"};
  const auto scratch_csv = check_csv(slurp(dir / "scratch.csv"), 10);
  const auto cp_csv = check_csv(slurp(dir / "cp.csv"), kEpochs);
  const Model scratch = load_model(dir / "scratch.mdl");
  const Model cp = load_model(dir / "cp.mdl");
  const auto& g = cp.geometry();
  const double ratio =
      static_cast<double>(scratch.first_layer_trainable()) / static_cast<double>(cp.first_layer_trainable());
  const double expected = static_cast<double>(g.k1 * g.k2) / static_cast<double>(g.rank);
  const bool pass = scratch_csv.ok && cp_csv.ok && ratio == expected &&
                    scratch.count_trainable() > cp.count_trainable() &&
                    cp_csv.last_train_loss < cp_csv.first_train_loss;
  return {pass, "csv schema ok for scratch and cp, first-layer ratio " + fmt("%.4g", ratio) + " (k1*k2/R = " +
                    fmt("%.4g", expected) + ")"};
}

Outcome preprocessing() {
  bool pass = true;
  for (std::size_t extent = 11; extent <= 80; ++extent) pass = pass && tile_positions(extent, 11, 3) == (extent - 11) / 3 + 1;

  Rng rng(12);
  HyperCube cube;
  cube.data = random_tensor(rng, {5, 41, 29}, 4.0);
  for (auto& v : cube.data.data()) v = static_cast<double>(static_cast<float>(v + 7.0));
  cube.labels = std::vector<std::int32_t>(41 * 29);
  for (auto& l : *cube.labels) l = static_cast<std::int32_t>(rng() % 3);
  const TileSet tiles = tile_remote_sensing(cube, 11, 3, 32);
  pass = pass && tiles.size() == tile_positions(41, 11, 3) * tile_positions(29, 11, 3);
  pass = pass && tiles.tile_shape() == Shape{5, 32, 32};

  auto [train_set, test_set] = split_tiles(tiles, 0.5, 1);
  const auto stats = normalize(train_set);
  apply_stats(test_set, stats);
  const auto after = compute_stats(train_set);
  double worst_mean = 0.0, worst_std = 0.0;
  for (std::size_t c = 0; c < 5; ++c) {
    worst_mean = std::max(worst_mean, std::abs(after.mean[c]));
    worst_std = std::max(worst_std, std::abs(after.std[c] - 1.0));
  }
  pass = pass && worst_mean <= 1e-10 && worst_std <= 1e-6;

  HyperCube grape;
  grape.data = Tensor({204, 8, 8});
  NearRangeOptions drop;
  drop.drop_low = 5;
  drop.drop_high = 5;
  const std::size_t kept = preprocess_nearrange(grape, drop).channels();
  pass = pass && kept == 194;
  return {pass, std::to_string(tiles.size()) + " tiles, train mean " + fmt("%.1e", worst_mean) + ", std dev " +
                    fmt("%.1e", worst_std) + ", 204 -> " + std::to_string(kept) + " channels"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "exact recovery of rank-one and full-rank filters", 5, exact_recovery},
      {2, "tucker optimality and dominance over cp", 30, tucker_optimality},
      {3, "separable pipeline equals dense convolution", 60, pipeline_equivalence},
      {4, "identity adaptation at three channels", 0, identity_adaptation},
      {5, "analytic gradients match finite differences", 60, gradient_correctness},
      {6, "frozen spatial parts and span preservation", 0, freeze_and_span},
      {7, "trainable parameter count ratios", 0, parameter_counts},
      {8, "end-to-end learning on the synthetic task", 300, end_to_end},
      {9, "per-epoch loss log and scratch/cp parameter gap", 0, overfitting_harness},
      {10, "tiling, normalization and channel drop", 0, preprocessing},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s <= 0 || secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::string timing = fmt("%.2f s", secs);
    if (c.budget_s > 0) timing += fmt(" of %.0f s budget", c.budget_s);
    std::printf("%s  criterion %2d  %s: %s [%s]\n", pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
