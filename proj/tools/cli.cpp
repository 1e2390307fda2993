#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>

#include "hyperadapt/binary_io.hpp"
#include "hyperadapt/decomp.hpp"
#include "hyperadapt/errors.hpp"
#include "hyperadapt/filteradapt.hpp"
#include "hyperadapt/gradcheck.hpp"
#include "hyperadapt/synth.hpp"

namespace hyperadapt::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw UsageError("invalid value '" + value + "' for " + key);
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  if (!value.empty() && value[0] == '-') throw UsageError(key + " must be non-negative");
  return parse_number<std::size_t>(key, value);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw UsageError("invalid boolean '" + value + "' for " + key);
}

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

struct Prepared {
  FilterBank rgb;
  TileSet train;
  TileSet test;
};

Prepared prepare(const RunConfig& cfg) {
  Prepared p;
  if (cfg.bank.empty()) {
    p.rgb = synth_filter_bank(cfg.bank_out_channels, cfg.bank_kernel, cfg.bank_seed);
  } else {
    std::optional<Vector> bias;
    if (!cfg.bank_bias.empty()) bias = load_tensor(cfg.bank_bias).values();
    p.rgb = FilterBank(load_tensor(cfg.bank), bias);
  }
  if (cfg.train_tiles.empty() != cfg.test_tiles.empty()) {
    throw UsageError("train_tiles and test_tiles must be given together");
  }
  if (cfg.train_tiles.empty()) {
    SynthTaskOptions opts;
    opts.tile = cfg.synth_tile;
    opts.background_noise = cfg.synth_noise;
    auto task = synth_spectral_task(cfg.synth_channels, cfg.synth_classes, cfg.synth_samples, cfg.synth_seed, opts);
    p.train = std::move(task.train);
    p.test = std::move(task.test);
  } else {
    p.train = load_tiles(cfg.train_tiles);
    p.test = load_tiles(cfg.test_tiles);
  }
  if (p.train.empty()) throw DataError("training set is empty");
  if (cfg.normalize) {
    const auto stats = normalize(p.train);
    if (!p.test.empty()) apply_stats(p.test, stats);
  }
  return p;
}

Model build(const RunConfig& cfg, const Prepared& p) {
  ModelBuildOptions opts;
  opts.channels = p.train.tile_shape()[0];
  opts.rank = cfg.rank;
  opts.init = cfg.init;
  opts.cp.restarts = cfg.cp_restarts;
  opts.cp.max_iters = cfg.cp_max_iters;
  opts.cp.tol = cfg.cp_tol;
  opts.cp.seed = mix_seed(cfg.train.seed, 7);
  opts.reduce_hidden = cfg.reduce_hidden;
  opts.stride = cfg.stride;
  opts.padding = cfg.padding;
  opts.head.mid_channels = cfg.mid_channels;
  opts.head.pool_h = cfg.pool_h;
  opts.head.pool_w = cfg.pool_w;
  const int classes = std::max(p.train.num_classes(), p.test.empty() ? 0 : p.test.num_classes());
  opts.head.classes = static_cast<std::size_t>(std::max(classes, 2));
  opts.seed = cfg.train.seed;
  return build_model(cfg.method, p.rgb, opts);
}

// PGM export ------------------------------------------------------------------------

struct Gray {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> px;
};

// Channel mean of filter o, mapped symmetrically around zero: 0 → 128,
// ±max|v| → 0 / 255.
Gray pooled_image(const Tensor& bank, std::size_t o, std::size_t scale) {
  const std::size_t c = bank.shape()[1], kh = bank.shape()[2], kw = bank.shape()[3];
  Vector pooled(kh * kw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < kh * kw; ++i) pooled[i] += bank[(o * c + ch) * kh * kw + i];
  double peak = 0.0;
  for (auto& v : pooled) {
    v /= static_cast<double>(c);
    peak = std::max(peak, std::abs(v));
  }
  Gray g{kh * scale, kw * scale, {}};
  g.px.resize(g.h * g.w);
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x) {
      const double v = pooled[(y / scale) * kw + x / scale];
      const double level = peak > 0.0 ? 127.5 + 127.5 * v / peak : 127.5;
      g.px[y * g.w + x] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(level), 0, 255));
    }
  return g;
}

void write_pgm(const fs::path& path, const Gray& g) {
  std::string header = "P5\n" + std::to_string(g.w) + " " + std::to_string(g.h) + "\n255\n";
  Bytes bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), g.px.begin(), g.px.end());
  write_file_atomic(path, bytes);
}

// Commands --------------------------------------------------------------------------

int cmd_decompose(const fs::path& bank_path, const fs::path& bias_path, const std::string& kind_name, std::size_t rank,
                  int restarts, int max_iters, double tol, std::uint64_t seed, const fs::path& out_path,
                  std::ostream& out) {
  DecompKind kind;
  if (kind_name == "cp") {
    kind = DecompKind::Cp;
  } else if (kind_name == "tucker") {
    kind = DecompKind::Tucker;
  } else {
    throw UsageError("--kind must be cp or tucker");
  }
  if (rank == 0) throw UsageError("--rank must be at least 1");
  std::optional<Vector> bias;
  if (!bias_path.empty()) bias = load_tensor(bias_path).values();
  const FilterBank bank(load_tensor(bank_path), bias);
  CpOptions opts;
  opts.restarts = restarts;
  opts.max_iters = max_iters;
  opts.tol = tol;
  opts.seed = seed;
  const auto d = decompose_bank(bank, kind, rank, opts);
  const auto errors = d.errors();
  for (std::size_t o = 0; o < errors.size(); ++o) {
    out << "filter " << o << " relative_error " << fmt("%.6e", errors[o]);
    if (kind == DecompKind::Cp && d.cp[o].degenerate) out << " degenerate";
    out << '\n';
  }
  out << "mean_relative_error " << fmt("%.6e", d.mean_error()) << '\n';
  save_decomposition(out_path, d);
  return kOk;
}

int cmd_adapt(const fs::path& in, std::size_t channels, const std::string& init, std::uint64_t seed,
              const fs::path& out_path, std::ostream& out) {
  if (channels == 0) throw UsageError("--channels must be at least 1");
  const auto policy = parse_init_policy(init);
  const auto d = load_decomposition(in);
  const auto layer = adapt(d, channels, policy, seed);
  save_adapted(out_path, layer);
  out << "kind " << to_string(layer.kind) << " filters " << layer.filters() << " channels " << channels << " rank "
      << layer.rank << " trainable " << layer.trainable_count() << '\n';
  if (layer.rank_exceeds_channels) out << "warning: rank exceeds source channel count\n";
  return kOk;
}

std::vector<EpochLog> run_training(const RunConfig& cfg, Model& model, const Prepared& p, std::ostream* progress) {
  EpochCallback cb;
  if (progress) {
    cb = [progress](const EpochLog& e) {
      *progress << "epoch " << e.epoch << " lr " << fmt("%.6g", e.lr) << " train_loss " << fmt("%.6f", e.train_loss)
                << " test_loss " << fmt("%.6f", e.test_loss) << " test_accuracy " << fmt("%.4f", e.test_accuracy)
                << '\n';
    };
  }
  return train(model, p.train, p.test, cfg.train, cb);
}

int cmd_train(const RunConfig& cfg, bool quiet, std::ostream& out) {
  const auto p = prepare(cfg);
  Model model = build(cfg, p);
  out << "method " << to_string(cfg.method) << " trainable " << model.count_trainable() << " first_layer "
      << model.first_layer_trainable() << '\n';
  const auto log = run_training(cfg, model, p, quiet ? nullptr : &out);
  write_text_atomic(cfg.log, format_epoch_csv(log));
  save_model(cfg.checkpoint, model);
  out << "final test_accuracy " << fmt("%.4f", log.back().test_accuracy) << '\n';
  return kOk;
}

int cmd_rank_sweep(const RunConfig& base, const std::vector<std::size_t>& ranks, std::size_t seeds,
                   const fs::path& out_path, std::ostream& out) {
  if (ranks.empty()) throw UsageError("--ranks needs at least one rank");
  if (seeds == 0) throw UsageError("--seeds must be at least 1");
  std::set<std::size_t> seen;
  for (auto r : ranks) {
    if (r == 0) throw UsageError("ranks must be at least 1");
    if (!seen.insert(r).second) throw UsageError("duplicate rank " + std::to_string(r));
  }
  const auto p = prepare(base);
  std::string csv = "rank,params,accuracy_mean,accuracy_sem,seeds\n";
  for (auto r : ranks) {
    std::vector<double> acc;
    std::size_t params = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      RunConfig cfg = base;
      cfg.rank = r;
      cfg.train.seed = base.train.seed + s;
      Model model = build(cfg, p);
      params = model.count_trainable();
      const auto log = run_training(cfg, model, p, nullptr);
      acc.push_back(log.back().test_accuracy);
    }
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= static_cast<double>(acc.size());
    double sem = std::nan("");
    if (acc.size() > 1) {
      double ss = 0.0;
      for (double a : acc) ss += (a - mean) * (a - mean);
      sem = std::sqrt(ss / static_cast<double>(acc.size() - 1)) / std::sqrt(static_cast<double>(acc.size()));
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%zu\n", r, params, mean, sem, acc.size());
    csv += buf;
    out << "rank " << r << " params " << params << " accuracy " << fmt("%.4f", mean) << " +- " << fmt("%.4f", sem)
        << '\n';
  }
  write_text_atomic(out_path, csv);
  return kOk;
}

int cmd_export(const fs::path& model_path, const fs::path& adapted_path, const fs::path& bank_path,
               const fs::path& dir, std::size_t scale, std::ostream& out) {
  const int given = !model_path.empty() + !adapted_path.empty() + !bank_path.empty();
  if (given != 1) throw UsageError("give exactly one of --model, --adapted, --bank");
  if (scale == 0) throw UsageError("--scale must be at least 1");
  Tensor bank;
  if (!model_path.empty()) {
    bank = load_model(model_path).first_layer_bank();
  } else if (!adapted_path.empty()) {
    bank = decompress(load_adapted(adapted_path));
  } else {
    bank = load_tensor(bank_path);
  }
  if (bank.order() != 4) throw ShapeError("filter bank must be 4-way");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const std::size_t n = bank.shape()[0];
  std::vector<Gray> images;
  for (std::size_t o = 0; o < n; ++o) {
    images.push_back(pooled_image(bank, o, scale));
    char name[32];
    std::snprintf(name, sizeof name, "filter_%03zu.pgm", o);
    write_pgm(dir / name, images.back());
  }
  const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t th = images[0].h, tw = images[0].w;
  Gray comp{rows * (th + 1) + 1, cols * (tw + 1) + 1, {}};
  comp.px.assign(comp.h * comp.w, 128);
  for (std::size_t o = 0; o < n; ++o) {
    const std::size_t y0 = (o / cols) * (th + 1) + 1, x0 = (o % cols) * (tw + 1) + 1;
    for (std::size_t y = 0; y < th; ++y)
      std::copy_n(images[o].px.begin() + static_cast<std::ptrdiff_t>(y * tw), tw,
                  comp.px.begin() + static_cast<std::ptrdiff_t>((y0 + y) * comp.w + x0));
  }
  write_pgm(dir / "composite.pgm", comp);
  out << "wrote " << n << " filters to " << dir.string() << '\n';
  return kOk;
}

int cmd_gradcheck(const fs::path& config, std::string method_name, std::uint64_t seed, bool seed_given,
                  bool flip, std::ostream& out) {
  MicroModelOptions micro;
  GradcheckOptions opts;
  if (!config.empty()) {
    for (const auto& [key, value] : parse_key_values(read_text(config), config.string())) {
      if (key == "channels") micro.channels = parse_count(key, value);
      else if (key == "out_channels") micro.out_channels = parse_count(key, value);
      else if (key == "kernel") micro.kernel = parse_count(key, value);
      else if (key == "rank") micro.rank = parse_count(key, value);
      else if (key == "size") micro.size = parse_count(key, value);
      else if (key == "padding") micro.padding = parse_count(key, value);
      else if (key == "classes") micro.classes = parse_count(key, value);
      else if (key == "pool") micro.pool = parse_count(key, value);
      else if (key == "seed") micro.seed = parse_number<std::uint64_t>(key, value);
      else if (key == "eps") opts.eps = parse_number<double>(key, value);
      else if (key == "tolerance") opts.tolerance = parse_number<double>(key, value);
      else if (key == "method") method_name = value;
      else throw UsageError("unknown gradcheck key '" + key + "'");
    }
  }
  if (seed_given) micro.seed = seed;
  std::vector<Method> methods;
  if (method_name == "all") {
    methods = {Method::Reduce, Method::Scratch, Method::Cp, Method::Tucker};
  } else {
    try {
      methods = {parse_method(method_name)};
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  bool ok = true;
  for (auto m : methods) {
    auto problem = micro_problem(m, micro);
    problem.model.flip_first_layer_gradient = flip;
    const auto report = gradcheck(problem.model, problem.input, problem.label, opts);
    for (const auto& b : report.blocks) {
      out << to_string(m) << ' ' << b.name << " n=" << b.count << " worst_rel=" << fmt("%.3e", b.worst_relative)
          << " worst_abs=" << fmt("%.3e", b.worst_absolute)
          << (b.worst_relative <= opts.tolerance ? " ok" : " FAIL") << '\n';
    }
    ok = ok && report.passed();
  }
  out << (ok ? "PASS" : "FAIL") << " tolerance " << fmt("%.1e", opts.tolerance) << '\n';
  return ok ? kOk : kNumerical;
}

int guarded(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  }
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& context) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw UsageError(context + ":" + std::to_string(number) + ": expected key = value");
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw UsageError(context + ":" + std::to_string(number) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw UsageError(context + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value, const fs::path& base) {
  try {
    if (key == "method") cfg.method = parse_method(value);
    else if (key == "rank") cfg.rank = parse_count(key, value);
    else if (key == "init") cfg.init = parse_init_policy(value);
    else if (key == "lr0") cfg.train.lr0 = parse_number<double>(key, value);
    else if (key == "gamma") cfg.train.gamma = parse_number<double>(key, value);
    else if (key == "batch") cfg.train.batch_size = parse_count(key, value);
    else if (key == "epochs") cfg.train.epochs = parse_count(key, value);
    else if (key == "seed") cfg.train.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "pool") {
      const auto x = value.find('x');
      cfg.pool_h = parse_count(key, value.substr(0, x));
      cfg.pool_w = x == std::string::npos ? cfg.pool_h : parse_count(key, value.substr(x + 1));
    }
    else if (key == "mid_channels") cfg.mid_channels = parse_count(key, value);
    else if (key == "reduce_hidden") cfg.reduce_hidden = parse_count(key, value);
    else if (key == "stride") cfg.stride = parse_count(key, value);
    else if (key == "padding") cfg.padding = parse_count(key, value);
    else if (key == "normalize") cfg.normalize = parse_bool(key, value);
    else if (key == "train_tiles") cfg.train_tiles = resolve(base, value);
    else if (key == "test_tiles") cfg.test_tiles = resolve(base, value);
    else if (key == "synth_channels") cfg.synth_channels = parse_count(key, value);
    else if (key == "synth_classes") cfg.synth_classes = parse_count(key, value);
    else if (key == "synth_samples") cfg.synth_samples = parse_count(key, value);
    else if (key == "synth_tile") cfg.synth_tile = parse_count(key, value);
    else if (key == "synth_noise") cfg.synth_noise = parse_number<double>(key, value);
    else if (key == "synth_seed") cfg.synth_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "bank") cfg.bank = resolve(base, value);
    else if (key == "bank_bias") cfg.bank_bias = resolve(base, value);
    else if (key == "bank_out_channels") cfg.bank_out_channels = parse_count(key, value);
    else if (key == "bank_kernel") cfg.bank_kernel = parse_count(key, value);
    else if (key == "bank_seed") cfg.bank_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "cp_restarts") cfg.cp_restarts = parse_number<int>(key, value);
    else if (key == "cp_max_iters") cfg.cp_max_iters = parse_number<int>(key, value);
    else if (key == "cp_tol") cfg.cp_tol = parse_number<double>(key, value);
    else if (key == "checkpoint") cfg.checkpoint = resolve(base, value);
    else if (key == "log") cfg.log = resolve(base, value);
    else throw UsageError("unknown config key '" + key + "'");
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig cfg;
  const auto base = path.parent_path();
  cfg.checkpoint = resolve(base, cfg.checkpoint.string());
  cfg.log = resolve(base, cfg.log.string());
  for (const auto& [key, value] : parse_key_values(read_text(path), path.string())) apply_setting(cfg, key, value, base);
  try {
    cfg.train.validate();
  } catch (const DataError& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  if (cfg.rank == 0) throw UsageError(path.string() + ": rank must be at least 1");
  return cfg;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectral adaptation of RGB first-layer filters for hyperspectral input"};
  app.require_subcommand(1);
  std::function<int()> action;

  auto* dec = app.add_subcommand("decompose", "Decompose every filter of a TNS1 bank into a DCP1 file");
  fs::path dec_bank, dec_bias, dec_out;
  std::string dec_kind = "cp";
  std::size_t dec_rank = 0;
  int dec_restarts = 4, dec_iters = 500;
  double dec_tol = 1e-9;
  std::uint64_t dec_seed = 0;
  dec->add_option("--bank", dec_bank, "C_out x C_in x k1 x k2 filter tensor (TNS1)")->required();
  dec->add_option("--bias", dec_bias, "Optional bias vector (TNS1)");
  dec->add_option("--kind", dec_kind, "cp or tucker")->capture_default_str();
  dec->add_option("--rank", dec_rank, "Decomposition rank")->required();
  dec->add_option("--restarts", dec_restarts, "CP random restarts")->capture_default_str();
  dec->add_option("--max-iters", dec_iters, "CP ALS iteration cap")->capture_default_str();
  dec->add_option("--tol", dec_tol, "CP ALS stopping tolerance")->capture_default_str();
  dec->add_option("--seed", dec_seed, "Restart seed")->capture_default_str();
  dec->add_option("--out", dec_out, "Output DCP1 file")->required();
  dec->callback([&] {
    action = [&] {
      return cmd_decompose(dec_bank, dec_bias, dec_kind, dec_rank, dec_restarts, dec_iters, dec_tol, dec_seed, dec_out,
                           out);
    };
  });

  auto* ad = app.add_subcommand("adapt", "Widen spectral parts of a DCP1 decomposition to a new channel count");
  fs::path ad_in, ad_out;
  std::size_t ad_channels = 0;
  std::string ad_init = "interp";
  std::uint64_t ad_seed = 0;
  ad->add_option("--decomp", ad_in, "DCP1 file")->required();
  ad->add_option("--channels", ad_channels, "Target channel count")->required();
  ad->add_option("--init", ad_init, "interp, replicate or random")->capture_default_str();
  ad->add_option("--seed", ad_seed, "Seed for random init")->capture_default_str();
  ad->add_option("--out", ad_out, "Output ADP1 file")->required();
  ad->callback([&] { action = [&] { return cmd_adapt(ad_in, ad_channels, ad_init, ad_seed, ad_out, out); }; });

  auto* tr = app.add_subcommand("train", "Train a model from a key=value config");
  fs::path tr_config, tr_checkpoint, tr_log;
  std::vector<std::string> tr_set;
  bool tr_quiet = false;
  tr->add_option("--config", tr_config, "Config file")->required();
  tr->add_option("--set", tr_set, "Override a config entry (key=value)");
  tr->add_option("--checkpoint", tr_checkpoint, "MDL1 output (overrides config)");
  tr->add_option("--log", tr_log, "CSV log output (overrides config)");
  tr->add_flag("--quiet", tr_quiet, "Suppress per-epoch lines");
  tr->callback([&] {
    action = [&] {
      auto cfg = load_run_config(tr_config);
      for (const auto& kv : tr_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value");
        apply_setting(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
      }
      if (!tr_checkpoint.empty()) cfg.checkpoint = tr_checkpoint;
      if (!tr_log.empty()) cfg.log = tr_log;
      try {
        cfg.train.validate();
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
      return cmd_train(cfg, tr_quiet, out);
    };
  });

  auto* sw = app.add_subcommand("rank-sweep", "Train over several ranks and seeds; write a summary CSV");
  fs::path sw_config, sw_out;
  std::vector<std::size_t> sw_ranks;
  std::size_t sw_seeds = 1;
  sw->add_option("--config", sw_config, "Config file")->required();
  sw->add_option("--ranks", sw_ranks, "Comma-separated ranks")->required()->delimiter(',');
  sw->add_option("--seeds", sw_seeds, "Seeds per rank")->capture_default_str();
  sw->add_option("--out", sw_out, "Output CSV")->required();
  sw->callback([&] {
    action = [&] { return cmd_rank_sweep(load_run_config(sw_config), sw_ranks, sw_seeds, sw_out, out); };
  });

  auto* ex = app.add_subcommand("export-filters", "Write channel-averaged filters as PGM images");
  fs::path ex_model, ex_adapted, ex_bank, ex_dir;
  std::size_t ex_scale = 1;
  ex->add_option("--model", ex_model, "MDL1 checkpoint");
  ex->add_option("--adapted", ex_adapted, "ADP1 layer");
  ex->add_option("--bank", ex_bank, "TNS1 filter bank");
  ex->add_option("--out-dir", ex_dir, "Output directory")->required();
  ex->add_option("--scale", ex_scale, "Nearest-neighbour upscaling factor")->capture_default_str();
  ex->callback([&] { action = [&] { return cmd_export(ex_model, ex_adapted, ex_bank, ex_dir, ex_scale, out); }; });

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of all trainable blocks on a micro-model");
  fs::path gc_config;
  std::string gc_method = "all";
  std::uint64_t gc_seed = 0;
  bool gc_flip = false;
  auto* gc_seed_opt = gc->add_option("--seed", gc_seed, "Micro-model seed");
  gc->add_option("--config", gc_config, "Optional key=value micro-model config");
  gc->add_option("--method", gc_method, "all, reduce, scratch, cp or tucker")->capture_default_str();
  gc->add_flag("--flip-sign", gc_flip, "Negate first-layer gradients (negative control)");
  gc->callback([&] {
    action = [&] { return cmd_gradcheck(gc_config, gc_method, gc_seed, gc_seed_opt->count() > 0, gc_flip, out); };
  });

  auto* sb = app.add_subcommand("synth-bank", "Generate a synthetic RGB filter bank");
  std::size_t sb_out_ch = 8, sb_k = 5;
  std::uint64_t sb_seed = 0;
  double sb_noise = 0.0;
  bool sb_oriented = false;
  fs::path sb_out, sb_bias;
  sb->add_option("--out-channels", sb_out_ch, "Filter count")->capture_default_str();
  sb->add_option("--kernel", sb_k, "Kernel side")->capture_default_str();
  sb->add_option("--seed", sb_seed, "Seed")->capture_default_str();
  sb->add_option("--noise", sb_noise, "Relative noise amplitude")->capture_default_str();
  sb->add_flag("--oriented", sb_oriented, "Random pattern orientation (not rank one)");
  sb->add_option("--out", sb_out, "Output TNS1 bank")->required();
  sb->add_option("--bias-out", sb_bias, "Output TNS1 bias");
  sb->callback([&] {
    action = [&] {
      if (sb_out_ch == 0 || sb_k == 0) throw UsageError("--out-channels and --kernel must be positive");
      const auto bank = synth_filter_bank(sb_out_ch, sb_k, sb_seed, {sb_noise, sb_oriented});
      save_tensor(sb_out, bank.weights);
      if (!sb_bias.empty() && bank.bias) save_tensor(sb_bias, Tensor({bank.bias->size()}, *bank.bias));
      out << "wrote " << sb_out_ch << " filters\n";
      return int{kOk};
    };
  });

  auto* st = app.add_subcommand("synth-task", "Generate the synthetic spectral classification task");
  std::size_t st_channels = 64, st_classes = 4, st_samples = 200, st_tile = 12;
  double st_noise = 0.5;
  std::uint64_t st_seed = 0;
  fs::path st_train, st_test;
  st->add_option("--channels", st_channels, "Spectral channels")->capture_default_str();
  st->add_option("--classes", st_classes, "Class count")->capture_default_str();
  st->add_option("--samples", st_samples, "Tiles per split")->capture_default_str();
  st->add_option("--tile", st_tile, "Tile side")->capture_default_str();
  st->add_option("--noise", st_noise, "Background noise level")->capture_default_str();
  st->add_option("--seed", st_seed, "Seed")->capture_default_str();
  st->add_option("--train-out", st_train, "Output TLS1 train set")->required();
  st->add_option("--test-out", st_test, "Output TLS1 test set")->required();
  st->callback([&] {
    action = [&] {
      SynthTaskOptions opts;
      opts.tile = st_tile;
      opts.background_noise = st_noise;
      SynthTask task;
      try {
        task = synth_spectral_task(st_channels, st_classes, st_samples, st_seed, opts);
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
      save_tiles(st_train, task.train);
      save_tiles(st_test, task.test);
      out << "wrote " << task.train.size() << " train and " << task.test.size() << " test tiles\n";
      return int{kOk};
    };
  });

  auto* tl = app.add_subcommand("tile", "Preprocess an HSC1 cube, cut labelled tiles and split them");
  fs::path tl_cube, tl_train, tl_test;
  std::size_t tl_tile = 11, tl_stride = 3, tl_resize = 32;
  NearRangeOptions tl_pre;
  double tl_fraction = 0.5;
  std::uint64_t tl_seed = 0;
  tl->add_option("--cube", tl_cube, "HSC1 cube with a label plane")->required();
  tl->add_option("--tile", tl_tile, "Tile side")->capture_default_str();
  tl->add_option("--stride", tl_stride, "Tile stride")->capture_default_str();
  tl->add_option("--resize", tl_resize, "Resized tile side")->capture_default_str();
  tl->add_option("--crop", tl_pre.crop, "Center crop before tiling (0 = none)");
  tl->add_option("--drop-low", tl_pre.drop_low, "Channels dropped at the low end");
  tl->add_option("--drop-high", tl_pre.drop_high, "Channels dropped at the high end");
  tl->add_option("--split", tl_fraction, "Training fraction")->capture_default_str();
  tl->add_option("--seed", tl_seed, "Split seed")->capture_default_str();
  tl->add_option("--train-out", tl_train, "Output TLS1 train set")->required();
  tl->add_option("--test-out", tl_test, "Output TLS1 test set")->required();
  tl->callback([&] {
    action = [&] {
      if (tl_tile == 0 || tl_stride == 0 || tl_resize == 0) throw UsageError("tile, stride and resize must be positive");
      if (!(tl_fraction > 0.0 && tl_fraction < 1.0)) throw UsageError("--split must lie in (0, 1)");
      auto cube = load_cube(tl_cube);
      if (!cube.labels) throw UsageError("cube has no label plane");
      if (tl_pre.crop || tl_pre.drop_low || tl_pre.drop_high) cube = preprocess_nearrange(cube, tl_pre);
      const auto tiles = tile_remote_sensing(cube, tl_tile, tl_stride, tl_resize);
      auto [train_set, test_set] = split_tiles(tiles, tl_fraction, tl_seed);
      save_tiles(tl_train, train_set);
      save_tiles(tl_test, test_set);
      out << "wrote " << train_set.size() << " train and " << test_set.size() << " test tiles\n";
      return int{kOk};
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  if (!action) return kUsage;
  return guarded(action, err);
}

}  // namespace hyperadapt::cli
