#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stylediff/errors.hpp"

namespace stylediff {

enum class ConfigSource { kDefaultPaper, kDefaultDesk, kFile, kFlag };

const char* config_source_name(ConfigSource s);

// Resolved run configuration. Flags override file values override defaults;
// every key remembers where its value came from.
struct RunConfig {
  int64_t seed = 1234;
  std::string out_root = "runs";
  std::string vocab_file;  // empty -> built-in desk vocabulary

  int64_t styles_per_subject = 14;
  int64_t images_per_prompt = 4;

  int64_t d = 64;
  int64_t heads = 4;
  int64_t patch = 8;
  int64_t image_size = 32;
  int64_t qformer_blocks = 2;
  int64_t query_tokens = 16;
  int64_t d_attn = 32;
  int64_t unet_c1 = 8;
  int64_t unet_c2 = 16;
  int64_t unet_c3 = 48;

  int64_t schedule_T = 1000;

  double lr = 1e-4;
  double base_lr = 3e-4;
  double weight_decay = 0.01;
  int64_t batch = 32;
  int64_t train_steps = 700;
  int64_t base_steps = 1500;
  int64_t warmup_steps = 400;
  double p_drop = 0.1;
  std::string task_ratio = "1:1:1";

  int64_t ddim_steps = 50;
  double cfg = 8.0;

  std::string paradigm = "full";  // baseline | dcm | full
  int64_t threads = 2;
  int64_t eval_cases = 96;
  int64_t eval_ddim_steps = 20;

  std::map<std::string, ConfigSource> provenance;

  void set(const std::string& key, const std::string& value, ConfigSource src);
  std::string get(const std::string& key) const;
  void validate() const;

  // canonical "key = value" listing with provenance annotations
  std::string echo() const;
  uint64_t fingerprint() const;
  std::string fingerprint_hex() const;

  static const std::vector<std::string>& keys();
};

// file format: `key = value` lines, '#' comments; parse errors carry the line
// number. overrides apply after the file, in order.
RunConfig parse_config(const std::string& file_path,
                       const std::vector<std::pair<std::string, std::string>>& flag_overrides);

// same grammar, from an in-memory snapshot (checkpoints embed one)
RunConfig parse_config_text(const std::string& text);

// plain `key = value` lines without provenance annotations
std::string canonical_config_text(const RunConfig& cfg);

}  // namespace stylediff
