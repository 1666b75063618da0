#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dpm/model.hpp"
#include "dpm/training.hpp"

namespace dpm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;

// Largest model `gradcheck` accepts.
inline constexpr std::size_t kGradcheckMaxParams = 50000;

// Flat JSON document: every ModelConfig field, plus the keys below.
struct RunConfig {
  ModelConfig model;
  bool vocab_size_set = false;  // otherwise taken from the built vocabulary
  std::string train;
  std::string dev;
  std::string test;
  std::string lexicon;
  std::string checkpoint_dir = "checkpoints";
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::size_t eval_every = 1;

  TrainOptions train_options() const;
};

// Strict: unknown keys and mistyped values throw ConfigError naming the key.
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);

// Applies "key=value" to `doc`. The value is parsed as JSON when it can be,
// otherwise kept as a string; dotted keys address nested objects.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads `path`, applies overrides in order, then takes the seed from
// `env_seed` (the DPM_SEED variable) only if neither set one.
nlohmann::json load_config_document(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                                    const char* env_seed);

// Checks epochs/batch size/lr and that every configured path exists.
void validate_run_config(const RunConfig& config);

// Model used by `gradcheck` when no config is given.
ModelConfig tiny_gradcheck_config();

// The six ablation rows, full model first.
std::vector<std::pair<std::string, AblationSwitches>> ablation_variants();

// Runs one `dpm` invocation; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dpm::cli
