#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "stylediff/dataset.hpp"
#include "stylediff/image_io.hpp"

using namespace stylediff;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  std::string dir = "/tmp/stylediff_test_" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("combine_prompts counts, formatting and determinism") {
  Vocabulary vocab = default_vocabulary();
  Rng rng(3);
  auto prompts = combine_prompts(vocab, 14, rng);
  CHECK(prompts.size() == 12 * 14);
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& p : prompts) {
    CHECK(p.prompt_text == p.subject + ", " + p.style);
    CHECK(seen.insert({p.subject, p.style}).second);  // no duplicate pair per subject
  }
  Rng rng2(3);
  auto again = combine_prompts(vocab, 14, rng2);
  for (size_t i = 0; i < prompts.size(); ++i) CHECK(prompts[i].prompt_text == again[i].prompt_text);

  Rng rng3(4);
  CHECK_THROWS_AS(combine_prompts(vocab, 25, rng3), ParameterError);
  Vocabulary small({"dot"}, {"azure ink"});
  Rng rng4(5);
  CHECK(combine_prompts(small, 0, rng4).empty());
}

TEST_CASE("procedural_render determinism, range, palette stability") {
  auto specs = default_style_specs();
  Tensorf a = procedural_render("circle", specs[1], 0);
  Tensorf b = procedural_render("circle", specs[1], 0);
  CHECK(a.bitwise_equal(b));
  Tensorf c = procedural_render("circle", specs[1], 1);
  CHECK_FALSE(a.bitwise_equal(c));

  for (Index i = 0; i < a.numel(); ++i) {
    CHECK(a[i] >= 0.0f);
    CHECK(a[i] <= 1.0f);
  }

  // same-styled renders keep the palette histogram close
  auto hist = [](const Tensorf& img) {
    std::vector<double> h(64, 0.0);
    for (Index i = 0; i < 32 * 32; ++i) {
      const float* p = img.data() + i * 3;
      int r = std::min(3, int(p[0] * 4)), g = std::min(3, int(p[1] * 4)), bl = std::min(3, int(p[2] * 4));
      h[size_t(r * 16 + g * 4 + bl)] += 1.0 / (32 * 32);
    }
    return h;
  };
  auto ha = hist(a), hc = hist(c);
  double l1 = 0;
  for (size_t i = 0; i < 64; ++i) l1 += std::abs(ha[i] - hc[i]);
  CHECK(l1 < 0.35);  // same palette family, different placement

  CHECK_THROWS_AS(procedural_render("blob", specs[0], 0), RegistryError);
}

TEST_CASE("generate_images builds a consistent, idempotent store") {
  Vocabulary vocab = default_vocabulary();
  std::string root = fresh_dir("store");
  Rng rng(7);
  auto prompts = combine_prompts(vocab, 3, rng);  // 36 prompts for speed
  auto specs = default_style_specs();
  DatasetStore store = generate_images(prompts, procedural_generator(specs), 4, root, 99);
  CHECK(store.records().size() == 36);
  size_t files = 0;
  for (const auto& rec : store.records()) files += rec.image_paths.size();
  CHECK(files == 36 * 4);
  store.verify_consistency();

  // rerun: same manifest, no new files
  auto count_files = [&] {
    size_t n = 0;
    for (auto& e : fs::directory_iterator(root + "/images")) (void)e, ++n;
    return n;
  };
  size_t before = count_files();
  DatasetStore store2 = generate_images(prompts, procedural_generator(specs), 4, root, 99);
  CHECK(count_files() == before);
  CHECK(store2.records().size() == store.records().size());

  // reload from disk
  DatasetStore loaded = DatasetStore::open(root);
  CHECK(loaded.records().size() == 36);
  loaded.verify_consistency();
  Tensorf img = loaded.load_image(loaded.records()[0].image_paths[0]);
  CHECK(img.shape() == Shape{32, 32, 3});
}

TEST_CASE("generator failures skip records but keep the manifest consistent") {
  Vocabulary vocab({"circle", "blob"}, {"azure ink", "gold leaf"});
  std::vector<PromptTriple> prompts = {{"circle", "azure ink", "circle, azure ink"},
                                       {"blob", "gold leaf", "blob, gold leaf"},
                                       {"circle", "gold leaf", "circle, gold leaf"}};
  std::string root = fresh_dir("skip");
  auto specs = default_style_specs();
  DatasetStore store = generate_images(prompts, procedural_generator(specs), 2, root, 5);
  CHECK(store.records().size() == 2);  // "blob" is not a shape
  store.verify_consistency();
}

TEST_CASE("style pairs: same prompt, distinct renders") {
  Vocabulary vocab = default_vocabulary();
  std::string root = fresh_dir("stylepairs");
  Rng rng(8);
  auto prompts = combine_prompts(vocab, 2, rng);
  auto specs = default_style_specs();
  DatasetStore store = generate_images(prompts, procedural_generator(specs), 4, root, 17);

  Rng prng(9);
  StylePairSampler sampler(store, prng);
  for (int i = 0; i < 50; ++i) {
    PairedItem<float> item = sampler.next();
    CHECK(item.task == TaskKind::kStre);
    CHECK_FALSE(item.reference_image.bitwise_equal(item.target_image));
    // reference and target come from the same prompt: same subject and style
    bool found = false;
    for (const auto& rec : store.records())
      found = found ||
              (rec.subject_word == item.target_subject_word && rec.style_word == item.target_style_word);
    CHECK(found);
  }
}

TEST_CASE("content pairs: same subject, different styles") {
  Vocabulary vocab = default_vocabulary();
  std::string root = fresh_dir("contentpairs");
  Rng rng(10);
  auto prompts = combine_prompts(vocab, 3, rng);
  auto specs = default_style_specs();
  DatasetStore store = generate_images(prompts, procedural_generator(specs), 2, root, 18);

  // map image bytes back to their records so both sides of the pair can be
  // identified
  auto identify = [&](const Tensorf& img) -> const ManifestRecord* {
    for (const auto& rec : store.records())
      for (const auto& path : rec.image_paths)
        if (store.load_image(path).bitwise_equal(img)) return &rec;
    return nullptr;
  };

  Rng prng(11);
  ContentPairSampler sampler(store, prng);
  for (int i = 0; i < 25; ++i) {
    PairedItem<float> item = sampler.next();
    CHECK(item.task == TaskKind::kSere);
    const ManifestRecord* ref = identify(item.reference_image);
    const ManifestRecord* tgt = identify(item.target_image);
    REQUIRE(ref != nullptr);
    REQUIRE(tgt != nullptr);
    CHECK(ref->subject_word == tgt->subject_word);
    CHECK(ref->style_word != tgt->style_word);
    CHECK(tgt->subject_word == item.target_subject_word);
    CHECK(tgt->style_word == item.target_style_word);
  }
}

TEST_CASE("single-image records cannot feed the style stream") {
  Vocabulary vocab({"circle"}, {"azure ink"});
  std::vector<PromptTriple> prompts = {{"circle", "azure ink", "circle, azure ink"}};
  std::string root = fresh_dir("single");
  auto specs = default_style_specs();
  DatasetStore store = generate_images(prompts, procedural_generator(specs), 1, root, 3);
  Rng rng(4);
  CHECK_THROWS_AS(StylePairSampler(store, rng), PipelineError);
  CHECK_THROWS_AS(ContentPairSampler(store, rng), PipelineError);
}

TEST_CASE("recon sampler emits identical reference and target") {
  Vocabulary vocab = default_vocabulary();
  std::string root = fresh_dir("recon");
  Rng rng(12);
  auto prompts = combine_prompts(vocab, 2, rng);
  auto specs = default_style_specs();
  DatasetStore store = generate_images(prompts, procedural_generator(specs), 2, root, 19);
  Rng prng(13);
  ReconSampler sampler(store, prng);
  for (int i = 0; i < 10; ++i) {
    PairedItem<float> item = sampler.next();
    CHECK(item.task == TaskKind::kRecon);
    CHECK(item.reference_image.bitwise_equal(item.target_image));
  }
}

TEST_CASE("manifest determinism: same vocab and seed give identical manifests") {
  Vocabulary vocab = default_vocabulary();
  auto specs = default_style_specs();
  std::string r1 = fresh_dir("det1"), r2 = fresh_dir("det2");
  Rng a(21), b(21);
  auto p1 = combine_prompts(vocab, 3, a);
  auto p2 = combine_prompts(vocab, 3, b);
  generate_images(p1, procedural_generator(specs), 2, r1, 55);
  generate_images(p2, procedural_generator(specs), 2, r2, 55);
  std::ifstream m1(r1 + "/manifest.jsonl"), m2(r2 + "/manifest.jsonl");
  std::string s1((std::istreambuf_iterator<char>(m1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(m2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK_FALSE(s1.empty());
}

TEST_CASE("BMP round trip is lossless on quantized data") {
  Rng rng(30);
  Tensorf img = quantize_to_8bit(Tensorf::randn({32, 32, 3}, rng, 0.3));
  for (Index i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
  img = quantize_to_8bit(img);
  std::string path = fresh_dir("bmp") + "/x.bmp";
  write_bmp(path, img);
  Tensorf back = read_bmp(path);
  CHECK(back.bitwise_equal(img));
}
