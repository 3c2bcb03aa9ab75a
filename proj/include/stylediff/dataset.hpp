#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylediff/rng.hpp"
#include "stylediff/tensor.hpp"
#include "stylediff/training.hpp"
#include "stylediff/vocab.hpp"

namespace stylediff {

using Color = std::array<float, 3>;

enum class Stroke { kSolid, kDashed, kStippled };
enum class Background { kPlain, kGradient, kChecker };

struct StyleSpec {
  std::string name;  // the style word
  std::vector<Color> palette;
  Stroke stroke = Stroke::kSolid;
  Background background = Background::kPlain;
  Color bg_a{0.1f, 0.1f, 0.1f};
  Color bg_b{0.2f, 0.2f, 0.2f};
};

// one spec per default-vocabulary style word
std::vector<StyleSpec> default_style_specs();

const StyleSpec& style_spec_by_name(const std::vector<StyleSpec>& specs, const std::string& name);

// deterministic 32x32 render; the seed jitters placement and scale, the spec
// fixes palette, stroke pattern and background
Tensorf procedural_render(const std::string& subject, const StyleSpec& style, uint64_t seed);

const std::vector<std::string>& subject_shape_registry();

struct PromptTriple {
  std::string subject;
  std::string style;
  std::string prompt_text;
};

// every subject gets styles_per_subject distinct styles, sampled without
// replacement; prompt_text = "subject, style"
std::vector<PromptTriple> combine_prompts(const Vocabulary& vocab, int styles_per_subject,
                                          Rng& rng);

struct ManifestRecord {
  int64_t prompt_id = 0;
  std::string subject_word;
  std::string style_word;
  std::string prompt_text;
  std::vector<std::string> image_paths;  // relative to store root
};

// Disk-backed store: line-delimited manifest plus 32x32 BMP images.
class DatasetStore {
 public:
  DatasetStore() = default;
  explicit DatasetStore(std::string root) : root_(std::move(root)) {}

  static DatasetStore open(const std::string& root);

  const std::string& root() const { return root_; }
  const std::vector<ManifestRecord>& records() const { return records_; }
  const ManifestRecord& record(int64_t prompt_id) const;
  const std::vector<size_t>& records_for_subject(const std::string& subject) const;
  bool has_subject(const std::string& subject) const;

  void append(ManifestRecord rec);
  void save_manifest() const;
  std::string manifest_path() const;
  std::string image_abspath(const std::string& rel) const;
  Tensorf load_image(const std::string& rel) const;

  // every manifest path must exist on disk and parse
  void verify_consistency() const;

 private:
  std::string root_;
  std::vector<ManifestRecord> records_;
  std::map<int64_t, size_t> by_prompt_;
  std::map<std::string, std::vector<size_t>> by_subject_;
};

using ImageGenerator =
    std::function<std::optional<Tensorf>(const std::string& subject, const std::string& style,
                                         uint64_t seed)>;

ImageGenerator procedural_generator(const std::vector<StyleSpec>& specs);

// renders images_per_prompt images per prompt under distinct seeds and writes
// them (with the manifest) under root; idempotent per (prompt_id, seed) —
// existing files are kept. Generator failures skip the record and are logged
// to stderr; the manifest stays consistent.
DatasetStore generate_images(const std::vector<PromptTriple>& prompts, const ImageGenerator& gen,
                             int images_per_prompt, const std::string& root, uint64_t seed);

// sampling streams over the store; every emitted pair satisfies its task
// predicate (STRE: same prompt, distinct renders; SERE: same subject,
// different styles)
class StylePairSampler {
 public:
  StylePairSampler(const DatasetStore& store, Rng& rng);
  PairedItem<float> next();

 private:
  const DatasetStore& store_;
  Rng& rng_;
  std::vector<size_t> eligible_;
};

class ContentPairSampler {
 public:
  ContentPairSampler(const DatasetStore& store, Rng& rng);
  PairedItem<float> next();

 private:
  const DatasetStore& store_;
  Rng& rng_;
  std::vector<std::string> eligible_subjects_;
};

// reference == target, drawn uniformly over all images
class ReconSampler {
 public:
  ReconSampler(const DatasetStore& store, Rng& rng);
  PairedItem<float> next();

 private:
  const DatasetStore& store_;
  Rng& rng_;
};

}  // namespace stylediff
