#include "stylediff/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stylediff/image_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace stylediff {

namespace {

constexpr Index kSide = 32;

// primaries occupy pairwise-distinct 4x4x4 histogram bins so the style
// oracle has clean signal
const Color kPrimaries[24] = {
    {0.875f, 0.125f, 0.225f}, {0.125f, 0.525f, 0.975f}, {0.975f, 0.725f, 0.125f},
    {0.125f, 0.625f, 0.425f}, {0.625f, 0.375f, 0.925f}, {0.125f, 0.525f, 0.525f},
    {0.925f, 0.125f, 0.625f}, {0.725f, 0.425f, 0.125f}, {0.125f, 0.275f, 0.725f},
    {0.975f, 0.325f, 0.125f}, {0.675f, 0.975f, 0.125f}, {0.325f, 0.125f, 0.575f},
    {0.975f, 0.575f, 0.375f}, {0.575f, 0.975f, 0.625f}, {0.875f, 0.125f, 0.425f},
    {0.425f, 0.525f, 0.625f}, {0.975f, 0.875f, 0.225f}, {0.575f, 0.275f, 0.525f},
    {0.125f, 0.925f, 0.925f}, {0.625f, 0.225f, 0.075f}, {0.275f, 0.825f, 0.475f},
    {0.975f, 0.425f, 0.675f}, {0.125f, 0.175f, 0.475f}, {0.725f, 0.525f, 0.275f}};

Color dim(const Color& c, float k, float lift) {
  return {c[0] * k + lift, c[1] * k + lift, c[2] * k + lift};
}

}  // namespace

std::vector<StyleSpec> default_style_specs() {
  Vocabulary vocab = default_vocabulary();
  const auto& names = vocab.style_words();
  std::vector<StyleSpec> specs;
  specs.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    StyleSpec s;
    s.name = names[i];
    s.palette = {kPrimaries[i % 24], dim(kPrimaries[(i + 7) % 24], 0.8f, 0.0f)};
    // mostly solid fills on plain grounds; a low-frequency patterned minority
    // keeps every stroke/background variant exercised without flooding the
    // denoiser with texture
    s.stroke = (i % 6 == 2) ? Stroke::kDashed : (i % 6 == 5) ? Stroke::kStippled : Stroke::kSolid;
    s.background = (i % 8 == 3)   ? Background::kGradient
                   : (i % 8 == 6) ? Background::kChecker
                                  : Background::kPlain;
    s.bg_a = dim(kPrimaries[i % 24], 0.15f, 0.05f);
    s.bg_b = dim(kPrimaries[(i + 11) % 24], 0.12f, 0.08f);
    specs.push_back(std::move(s));
  }
  return specs;
}

const StyleSpec& style_spec_by_name(const std::vector<StyleSpec>& specs, const std::string& name) {
  for (const auto& s : specs)
    if (s.name == name) return s;
  throw RegistryError("no style spec named '" + name + "'");
}

const std::vector<std::string>& subject_shape_registry() {
  static const std::vector<std::string> kShapes = {"circle", "square",  "triangle", "star",
                                                   "cross",  "ring",    "diamond",  "bar",
                                                   "wedge",  "dot",     "hexagon",  "frame"};
  return kShapes;
}

namespace {

bool inside_shape(const std::string& subject, float dx, float dy, float r) {
  float ax = std::abs(dx), ay = std::abs(dy);
  float d = std::sqrt(dx * dx + dy * dy);
  if (subject == "circle") return d <= r;
  if (subject == "square") return std::max(ax, ay) <= r * 0.82f;
  if (subject == "triangle") return dy <= r * 0.75f && dy >= -r && ax <= (dy + r) * 0.62f;
  if (subject == "star") {
    float theta = std::atan2(dy, dx);
    float m = 0.45f + 0.55f * 0.5f * (std::cos(5.0f * theta) + 1.0f);
    return d <= r * (0.45f + 0.75f * m);
  }
  if (subject == "cross") return (ax <= r * 0.3f && ay <= r) || (ay <= r * 0.3f && ax <= r);
  if (subject == "ring") return d <= r && d >= r * 0.58f;
  if (subject == "diamond") return ax + ay <= r;
  if (subject == "bar") return ay <= r * 0.32f && ax <= r;
  if (subject == "wedge") return d <= r && dy >= 0.0f;
  if (subject == "dot") return d <= r * 0.42f;
  if (subject == "hexagon") return std::max(ax * 1.1547f, ax * 0.5774f + ay) <= r * 0.92f;
  if (subject == "frame") {
    float m = std::max(ax, ay);
    return m <= r * 0.95f && m >= r * 0.52f;
  }
  throw RegistryError("subject '" + subject + "' not in the shape registry");
}

Color stroke_color(const StyleSpec& style, Index x, Index y) {
  const Color& a = style.palette[0];
  const Color& b = style.palette.size() > 1 ? style.palette[1] : style.palette[0];
  switch (style.stroke) {
    case Stroke::kSolid: return a;
    case Stroke::kDashed: return ((x + y) % 16 < 8) ? a : b;  // wide diagonal bands
    case Stroke::kStippled: return (x % 4 == 1 && y % 4 == 1) ? b : a;
  }
  return a;
}

Color background_color(const StyleSpec& style, Index x, Index y) {
  switch (style.background) {
    case Background::kPlain: return style.bg_a;
    case Background::kGradient: {
      float u = static_cast<float>(y) / (kSide - 1);
      return {style.bg_a[0] + (style.bg_b[0] - style.bg_a[0]) * u,
              style.bg_a[1] + (style.bg_b[1] - style.bg_a[1]) * u,
              style.bg_a[2] + (style.bg_b[2] - style.bg_a[2]) * u};
    }
    case Background::kChecker: return (((x / 16) + (y / 16)) % 2 == 0) ? style.bg_a : style.bg_b;
  }
  return style.bg_a;
}

}  // namespace

Tensorf procedural_render(const std::string& subject, const StyleSpec& style, uint64_t seed) {
  bool known = false;
  for (const auto& s : subject_shape_registry()) known = known || (s == subject);
  if (!known) throw RegistryError("subject '" + subject + "' not in the shape registry");
  if (style.palette.empty()) throw RegistryError("style '" + style.name + "' has an empty palette");

  Rng rng(seed ^ 0x9d2c5680u);
  float cx = 15.5f + static_cast<float>(rng.uniform(-3.0, 3.0));
  float cy = 15.5f + static_cast<float>(rng.uniform(-3.0, 3.0));
  float r = 10.0f * static_cast<float>(rng.uniform(0.85, 1.15));

  Tensorf img = Tensorf::uninit({kSide, kSide, 3});
  for (Index y = 0; y < kSide; ++y)
    for (Index x = 0; x < kSide; ++x) {
      Color c = inside_shape(subject, static_cast<float>(x) - cx, static_cast<float>(y) - cy, r)
                    ? stroke_color(style, x, y)
                    : background_color(style, x, y);
      float* px = img.data() + (y * kSide + x) * 3;
      px[0] = std::clamp(c[0], 0.0f, 1.0f);
      px[1] = std::clamp(c[1], 0.0f, 1.0f);
      px[2] = std::clamp(c[2], 0.0f, 1.0f);
    }
  return img;
}

std::vector<PromptTriple> combine_prompts(const Vocabulary& vocab, int styles_per_subject,
                                          Rng& rng) {
  const auto& styles = vocab.style_words();
  if (styles_per_subject > static_cast<int>(styles.size()))
    throw ParameterError("styles_per_subject " + std::to_string(styles_per_subject) + " exceeds " +
                         std::to_string(styles.size()) + " style words");
  std::vector<PromptTriple> out;
  for (const auto& subject : vocab.subject_words()) {
    std::vector<std::string> pool = styles;
    rng.shuffle(pool);
    for (int k = 0; k < styles_per_subject; ++k)
      out.push_back({subject, pool[static_cast<size_t>(k)], subject + ", " + pool[static_cast<size_t>(k)]});
  }
  return out;
}

DatasetStore DatasetStore::open(const std::string& root) {
  DatasetStore store(root);
  std::ifstream in(store.manifest_path());
  if (!in) throw PipelineError("no manifest at " + store.manifest_path());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw PipelineError(store.manifest_path() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ManifestRecord rec;
    rec.prompt_id = j.at("prompt_id").get<int64_t>();
    rec.subject_word = j.at("subject_word").get<std::string>();
    rec.style_word = j.at("style_word").get<std::string>();
    rec.prompt_text = j.at("prompt_text").get<std::string>();
    rec.image_paths = j.at("image_paths").get<std::vector<std::string>>();
    store.append(std::move(rec));
  }
  return store;
}

void DatasetStore::append(ManifestRecord rec) {
  if (rec.prompt_text != rec.subject_word + ", " + rec.style_word)
    throw ConsistencyError("record " + std::to_string(rec.prompt_id) + " prompt_text '" +
                           rec.prompt_text + "' is not 'subject, style'");
  if (rec.image_paths.empty())
    throw ConsistencyError("record " + std::to_string(rec.prompt_id) + " has no images");
  if (by_prompt_.count(rec.prompt_id))
    throw ConsistencyError("duplicate prompt_id " + std::to_string(rec.prompt_id));
  size_t idx = records_.size();
  by_prompt_[rec.prompt_id] = idx;
  by_subject_[rec.subject_word].push_back(idx);
  records_.push_back(std::move(rec));
}

const ManifestRecord& DatasetStore::record(int64_t prompt_id) const {
  auto it = by_prompt_.find(prompt_id);
  if (it == by_prompt_.end())
    throw PipelineError("no record for prompt_id " + std::to_string(prompt_id));
  return records_[it->second];
}

const std::vector<size_t>& DatasetStore::records_for_subject(const std::string& subject) const {
  static const std::vector<size_t> kEmpty;
  auto it = by_subject_.find(subject);
  return it == by_subject_.end() ? kEmpty : it->second;
}

bool DatasetStore::has_subject(const std::string& subject) const {
  return by_subject_.count(subject) > 0;
}

std::string DatasetStore::manifest_path() const { return root_ + "/manifest.jsonl"; }

std::string DatasetStore::image_abspath(const std::string& rel) const { return root_ + "/" + rel; }

Tensorf DatasetStore::load_image(const std::string& rel) const { return read_bmp(image_abspath(rel)); }

void DatasetStore::save_manifest() const {
  fs::create_directories(root_);
  std::ofstream out(manifest_path(), std::ios::trunc);
  if (!out) throw PipelineError("cannot write " + manifest_path());
  for (const auto& rec : records_) {
    json j{{"prompt_id", rec.prompt_id},
           {"subject_word", rec.subject_word},
           {"style_word", rec.style_word},
           {"prompt_text", rec.prompt_text},
           {"image_paths", rec.image_paths}};
    out << j.dump() << "\n";
  }
}

void DatasetStore::verify_consistency() const {
  for (const auto& rec : records_) {
    if (rec.prompt_text != rec.subject_word + ", " + rec.style_word)
      throw ConsistencyError("record " + std::to_string(rec.prompt_id) + " bad prompt_text");
    if (rec.image_paths.empty())
      throw ConsistencyError("record " + std::to_string(rec.prompt_id) + " has no images");
    for (const auto& p : rec.image_paths)
      if (!fs::exists(image_abspath(p)))
        throw ConsistencyError("manifest references missing file " + p);
  }
}

ImageGenerator procedural_generator(const std::vector<StyleSpec>& specs) {
  return [specs](const std::string& subject, const std::string& style,
                 uint64_t seed) -> std::optional<Tensorf> {
    try {
      return procedural_render(subject, style_spec_by_name(specs, style), seed);
    } catch (const RegistryError&) {
      return std::nullopt;
    }
  };
}

DatasetStore generate_images(const std::vector<PromptTriple>& prompts, const ImageGenerator& gen,
                             int images_per_prompt, const std::string& root, uint64_t seed) {
  if (images_per_prompt < 1) throw ParameterError("images_per_prompt must be >= 1");
  DatasetStore store(root);
  fs::create_directories(root + "/images");
  Rng seeder(seed);
  for (size_t pi = 0; pi < prompts.size(); ++pi) {
    const auto& pr = prompts[pi];
    ManifestRecord rec;
    rec.prompt_id = static_cast<int64_t>(pi);
    rec.subject_word = pr.subject;
    rec.style_word = pr.style;
    rec.prompt_text = pr.prompt_text;
    bool failed = false;
    for (int k = 0; k < images_per_prompt && !failed; ++k) {
      uint64_t img_seed = seeder.fork(pi * 1024 + static_cast<uint64_t>(k)).next_u64();
      char name[64];
      std::snprintf(name, sizeof(name), "images/p%05zu_%d.bmp", pi, k);
      std::string abspath = root + "/" + name;
      if (!fs::exists(abspath)) {
        auto img = gen(pr.subject, pr.style, img_seed);
        if (!img) {
          std::cerr << "[dataset] generator failed for prompt " << pi << " ('" << pr.prompt_text
                    << "'), record skipped\n";
          failed = true;
          break;
        }
        write_bmp(abspath, *img);
      }
      rec.image_paths.push_back(name);
    }
    if (!failed) store.append(std::move(rec));
  }
  store.save_manifest();
  store.verify_consistency();
  return store;
}

StylePairSampler::StylePairSampler(const DatasetStore& store, Rng& rng)
    : store_(store), rng_(rng) {
  for (size_t i = 0; i < store.records().size(); ++i)
    if (store.records()[i].image_paths.size() >= 2) eligible_.push_back(i);
  if (eligible_.empty()) throw PipelineError("no record holds >= 2 images; cannot form style pairs");
}

PairedItem<float> StylePairSampler::next() {
  const auto& rec = store_.records()[eligible_[rng_.below(eligible_.size())]];
  size_t n = rec.image_paths.size();
  size_t i = rng_.below(n);
  size_t j = rng_.below(n - 1);
  if (j >= i) ++j;
  PairedItem<float> item;
  item.reference_image = store_.load_image(rec.image_paths[i]);
  item.target_image = store_.load_image(rec.image_paths[j]);
  item.target_subject_word = rec.subject_word;
  item.target_style_word = rec.style_word;
  item.task = TaskKind::kStre;
  return item;
}

ContentPairSampler::ContentPairSampler(const DatasetStore& store, Rng& rng)
    : store_(store), rng_(rng) {
  for (const auto& rec : store.records()) {
    const auto& group = store.records_for_subject(rec.subject_word);
    bool two_styles = false;
    for (size_t k : group)
      two_styles = two_styles || (store.records()[k].style_word != rec.style_word);
    if (two_styles) {
      if (eligible_subjects_.empty() || eligible_subjects_.back() != rec.subject_word)
        eligible_subjects_.push_back(rec.subject_word);
    }
  }
  if (eligible_subjects_.empty())
    throw PipelineError("no subject has two styles; cannot form content pairs");
}

PairedItem<float> ContentPairSampler::next() {
  const std::string& subject =
      eligible_subjects_[rng_.below(eligible_subjects_.size())];
  const auto& group = store_.records_for_subject(subject);
  size_t a = rng_.below(group.size());
  size_t b = rng_.below(group.size() - 1);
  if (b >= a) ++b;
  const auto& ra = store_.records()[group[a]];
  const auto& rb = store_.records()[group[b]];
  // records under one subject always differ in style word by construction;
  // guard anyway
  if (ra.style_word == rb.style_word) return next();
  PairedItem<float> item;
  item.reference_image = store_.load_image(ra.image_paths[rng_.below(ra.image_paths.size())]);
  item.target_image = store_.load_image(rb.image_paths[rng_.below(rb.image_paths.size())]);
  item.target_subject_word = rb.subject_word;
  item.target_style_word = rb.style_word;
  item.task = TaskKind::kSere;
  return item;
}

ReconSampler::ReconSampler(const DatasetStore& store, Rng& rng) : store_(store), rng_(rng) {
  if (store.records().empty()) throw PipelineError("empty store");
}

PairedItem<float> ReconSampler::next() {
  const auto& rec = store_.records()[rng_.below(store_.records().size())];
  const std::string& path = rec.image_paths[rng_.below(rec.image_paths.size())];
  PairedItem<float> item;
  item.reference_image = store_.load_image(path);
  item.target_image = item.reference_image;
  item.target_subject_word = rec.subject_word;
  item.target_style_word = rec.style_word;
  item.task = TaskKind::kRecon;
  return item;
}

}  // namespace stylediff
