#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/model.hpp"
#include "hyperadapt/train.hpp"

namespace hyperadapt::cli {

enum ExitCode : int { kOk = 0, kIo = 1, kUsage = 2, kNumerical = 3 };

class UsageError : public Error {
 public:
  using Error::Error;
};

/// Parses `key = value` lines. `#` starts a comment; blank lines are ignored.
/// Duplicate keys and lines without `=` are usage errors.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& context);

/// Settings for train and rank-sweep. Relative paths resolve against the
/// config file's directory.
struct RunConfig {
  Method method = Method::Cp;
  std::size_t rank = 2;
  InitPolicy init = InitPolicy::Interp;
  TrainConfig train;
  std::size_t pool_h = 1;
  std::size_t pool_w = 1;
  std::size_t mid_channels = 0;
  std::size_t reduce_hidden = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool normalize = true;

  std::filesystem::path train_tiles;
  std::filesystem::path test_tiles;
  std::size_t synth_channels = 64;
  std::size_t synth_classes = 4;
  std::size_t synth_samples = 200;
  std::size_t synth_tile = 12;
  double synth_noise = 0.5;
  std::uint64_t synth_seed = 0;

  std::filesystem::path bank;
  std::filesystem::path bank_bias;
  std::size_t bank_out_channels = 8;
  std::size_t bank_kernel = 5;
  std::uint64_t bank_seed = 0;

  int cp_restarts = 4;
  int cp_max_iters = 500;
  double cp_tol = 1e-9;

  std::filesystem::path checkpoint = "model.mdl";
  std::filesystem::path log = "train_log.csv";
};

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value,
                   const std::filesystem::path& base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Runs one command line (without the program name) and returns its exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hyperadapt::cli
