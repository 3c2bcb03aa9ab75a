#include "stylediff/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace stylediff {

namespace {

struct KeyInfo {
  const char* key;
  enum Kind { kInt, kReal, kStr } kind;
  ConfigSource default_source;
};

// §-style pinned values (lr, ddim_steps, cfg, query_tokens, task_ratio,
// styles_per_subject, images_per_prompt) come from the reference setup; the
// rest are desk-scale choices.
const KeyInfo kKeys[] = {
    {"seed", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"out_root", KeyInfo::kStr, ConfigSource::kDefaultDesk},
    {"vocab_file", KeyInfo::kStr, ConfigSource::kDefaultDesk},
    {"styles_per_subject", KeyInfo::kInt, ConfigSource::kDefaultPaper},
    {"images_per_prompt", KeyInfo::kInt, ConfigSource::kDefaultPaper},
    {"d", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"heads", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"patch", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"image_size", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"qformer_blocks", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"query_tokens", KeyInfo::kInt, ConfigSource::kDefaultPaper},
    {"d_attn", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"unet_c1", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"unet_c2", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"unet_c3", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"schedule_T", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"lr", KeyInfo::kReal, ConfigSource::kDefaultPaper},
    {"base_lr", KeyInfo::kReal, ConfigSource::kDefaultDesk},
    {"weight_decay", KeyInfo::kReal, ConfigSource::kDefaultDesk},
    {"batch", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"train_steps", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"base_steps", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"warmup_steps", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"p_drop", KeyInfo::kReal, ConfigSource::kDefaultDesk},
    {"task_ratio", KeyInfo::kStr, ConfigSource::kDefaultPaper},
    {"ddim_steps", KeyInfo::kInt, ConfigSource::kDefaultPaper},
    {"cfg", KeyInfo::kReal, ConfigSource::kDefaultPaper},
    {"paradigm", KeyInfo::kStr, ConfigSource::kDefaultDesk},
    {"threads", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"eval_cases", KeyInfo::kInt, ConfigSource::kDefaultDesk},
    {"eval_ddim_steps", KeyInfo::kInt, ConfigSource::kDefaultDesk},
};

std::string valid_keys_message() {
  std::string s = "valid keys:";
  for (const auto& k : kKeys) s += std::string(" ") + k.key;
  return s;
}

const KeyInfo& key_info(const std::string& key) {
  for (const auto& k : kKeys)
    if (key == k.key) return k;
  throw ConfigError("unknown key '" + key + "'; " + valid_keys_message());
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return n;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string real_str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const char* config_source_name(ConfigSource s) {
  switch (s) {
    case ConfigSource::kDefaultPaper: return "default:paper";
    case ConfigSource::kDefaultDesk: return "default:desk";
    case ConfigSource::kFile: return "file";
    case ConfigSource::kFlag: return "flag";
  }
  return "?";
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& k : kKeys) out.push_back(k.key);
    return out;
  }();
  return v;
}

void RunConfig::set(const std::string& key, const std::string& value, ConfigSource src) {
  const KeyInfo& info = key_info(key);
  const std::string v = trim(value);
  if (key == "seed") seed = parse_int(key, v);
  else if (key == "out_root") out_root = v;
  else if (key == "vocab_file") vocab_file = v;
  else if (key == "styles_per_subject") styles_per_subject = parse_int(key, v);
  else if (key == "images_per_prompt") images_per_prompt = parse_int(key, v);
  else if (key == "d") d = parse_int(key, v);
  else if (key == "heads") heads = parse_int(key, v);
  else if (key == "patch") patch = parse_int(key, v);
  else if (key == "image_size") image_size = parse_int(key, v);
  else if (key == "qformer_blocks") qformer_blocks = parse_int(key, v);
  else if (key == "query_tokens") query_tokens = parse_int(key, v);
  else if (key == "d_attn") d_attn = parse_int(key, v);
  else if (key == "unet_c1") unet_c1 = parse_int(key, v);
  else if (key == "unet_c2") unet_c2 = parse_int(key, v);
  else if (key == "unet_c3") unet_c3 = parse_int(key, v);
  else if (key == "schedule_T") schedule_T = parse_int(key, v);
  else if (key == "lr") lr = parse_real(key, v);
  else if (key == "base_lr") base_lr = parse_real(key, v);
  else if (key == "weight_decay") weight_decay = parse_real(key, v);
  else if (key == "batch") batch = parse_int(key, v);
  else if (key == "train_steps") train_steps = parse_int(key, v);
  else if (key == "base_steps") base_steps = parse_int(key, v);
  else if (key == "warmup_steps") warmup_steps = parse_int(key, v);
  else if (key == "p_drop") p_drop = parse_real(key, v);
  else if (key == "task_ratio") task_ratio = v;
  else if (key == "ddim_steps") ddim_steps = parse_int(key, v);
  else if (key == "cfg") cfg = parse_real(key, v);
  else if (key == "paradigm") paradigm = v;
  else if (key == "threads") threads = parse_int(key, v);
  else if (key == "eval_cases") eval_cases = parse_int(key, v);
  else if (key == "eval_ddim_steps") eval_ddim_steps = parse_int(key, v);
  else
    throw ConfigError("unhandled key '" + key + "'");
  (void)info;
  provenance[key] = src;
}

std::string RunConfig::get(const std::string& key) const {
  if (key == "seed") return std::to_string(seed);
  if (key == "out_root") return out_root;
  if (key == "vocab_file") return vocab_file;
  if (key == "styles_per_subject") return std::to_string(styles_per_subject);
  if (key == "images_per_prompt") return std::to_string(images_per_prompt);
  if (key == "d") return std::to_string(d);
  if (key == "heads") return std::to_string(heads);
  if (key == "patch") return std::to_string(patch);
  if (key == "image_size") return std::to_string(image_size);
  if (key == "qformer_blocks") return std::to_string(qformer_blocks);
  if (key == "query_tokens") return std::to_string(query_tokens);
  if (key == "d_attn") return std::to_string(d_attn);
  if (key == "unet_c1") return std::to_string(unet_c1);
  if (key == "unet_c2") return std::to_string(unet_c2);
  if (key == "unet_c3") return std::to_string(unet_c3);
  if (key == "schedule_T") return std::to_string(schedule_T);
  if (key == "lr") return real_str(lr);
  if (key == "base_lr") return real_str(base_lr);
  if (key == "weight_decay") return real_str(weight_decay);
  if (key == "batch") return std::to_string(batch);
  if (key == "train_steps") return std::to_string(train_steps);
  if (key == "base_steps") return std::to_string(base_steps);
  if (key == "warmup_steps") return std::to_string(warmup_steps);
  if (key == "p_drop") return real_str(p_drop);
  if (key == "task_ratio") return task_ratio;
  if (key == "ddim_steps") return std::to_string(ddim_steps);
  if (key == "cfg") return real_str(cfg);
  if (key == "paradigm") return paradigm;
  if (key == "threads") return std::to_string(threads);
  if (key == "eval_cases") return std::to_string(eval_cases);
  if (key == "eval_ddim_steps") return std::to_string(eval_ddim_steps);
  throw ConfigError("unknown key '" + key + "'; " + valid_keys_message());
}

void RunConfig::validate() const {
  if (query_tokens != 16)
    throw ConfigError("query_tokens is fixed at 16 by the conditioning design");
  if (task_ratio != "1:1:1") throw ConfigError("task_ratio is fixed at 1:1:1");
  if (paradigm != "baseline" && paradigm != "dcm" && paradigm != "full")
    throw ConfigError("paradigm '" + paradigm + "' is not baseline|dcm|full");
  if (image_size != 32) throw ConfigError("image_size is fixed at 32 at desk scale");
  if (patch != 8) throw ConfigError("patch is fixed at 8 at desk scale");
  if (schedule_T < 2) throw ConfigError("schedule_T must be >= 2");
  if (ddim_steps < 1 || ddim_steps > schedule_T)
    throw ConfigError("ddim_steps must lie in [1, schedule_T]");
  if (batch < 1 || threads < 1) throw ConfigError("batch and threads must be >= 1");
  if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("p_drop must lie in [0,1)");
  if (d % heads != 0 || d_attn % heads != 0)
    throw ConfigError("d and d_attn must be divisible by heads");
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& k : kKeys) {
    auto it = provenance.find(k.key);
    ConfigSource src = it == provenance.end() ? k.default_source : it->second;
    os << k.key << " = " << get(k.key) << "  [" << config_source_name(src) << "]\n";
  }
  return os.str();
}

uint64_t RunConfig::fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& k : kKeys) {
    std::string line = std::string(k.key) + "=" + get(k.key) + ";";
    for (char c : line) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::string RunConfig::fingerprint_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fingerprint()));
  return std::string(buf, 12);  // 48 bits is plenty for directory stamps
}

namespace {

void apply_config_stream(RunConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" +
                        t + "'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    try {
      cfg.set(key, value, ConfigSource::kFile);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

RunConfig parse_config(const std::string& file_path,
                       const std::vector<std::pair<std::string, std::string>>& flag_overrides) {
  RunConfig cfg;
  if (const char* env_root = std::getenv("STYLEDIFF_OUT"); env_root && *env_root)
    cfg.out_root = env_root;
  if (!file_path.empty()) {
    std::ifstream in(file_path);
    if (!in) throw ConfigError("cannot open config file " + file_path);
    apply_config_stream(cfg, in, file_path);
  }
  for (const auto& [key, value] : flag_overrides) cfg.set(key, value, ConfigSource::kFlag);
  cfg.validate();
  return cfg;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  apply_config_stream(cfg, in, "<config snapshot>");
  cfg.validate();
  return cfg;
}

std::string canonical_config_text(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& key : RunConfig::keys()) os << key << " = " << cfg.get(key) << "\n";
  return os.str();
}

}  // namespace stylediff
