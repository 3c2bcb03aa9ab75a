#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "stylediff/encoders.hpp"
#include "stylediff/qformer.hpp"

using namespace stylediff;

TEST_CASE("tokenize handles empty, known, multi-word and unknown input") {
  Vocabulary vocab = default_vocabulary();
  CHECK(tokenize("", vocab) == std::vector<int>{Vocabulary::kNullId});
  auto ids = tokenize("circle, gold leaf", vocab);
  REQUIRE(ids.size() == 2);
  CHECK(vocab.is_subject_id(ids[0]));
  CHECK(vocab.is_style_id(ids[1]));
  CHECK(vocab.word_of(ids[1]) == "gold leaf");
  CHECK(tokenize("xyzzy", vocab) == std::vector<int>{Vocabulary::kUnkId});
  auto mixed = tokenize("a circle", vocab);
  REQUIRE(mixed.size() == 2);
  CHECK(mixed[0] == Vocabulary::kUnkId);
  CHECK(vocab.is_subject_id(mixed[1]));
}

TEST_CASE("vocabulary invariants") {
  CHECK_THROWS_AS(Vocabulary({"circle", "circle"}, {"ink"}), VocabularyError);
  CHECK_THROWS_AS(Vocabulary({"circle"}, {"circle"}), VocabularyError);
  Vocabulary v({"a", "b"}, {"x", "y"});
  CHECK(v.size() == 6);
  CHECK(v.subject_index(*v.id_of("b")) == 1);
  CHECK(v.style_index(*v.id_of("y")) == 1);
  CHECK_THROWS_AS(v.style_index(*v.id_of("a")), VocabularyError);
}

TEST_CASE("vocabulary file round trip and format errors") {
  std::string dir = "/tmp/stylediff_test_vocab";
  std::filesystem::create_directories(dir);
  Vocabulary v = default_vocabulary();
  v.save(dir + "/vocab.tsv");
  Vocabulary v2 = Vocabulary::load(dir + "/vocab.tsv");
  CHECK(v2.subject_words() == v.subject_words());
  CHECK(v2.style_words() == v.style_words());

  {
    std::ofstream bad(dir + "/bad.tsv");
    bad << "word-without-tab\n";
  }
  CHECK_THROWS_AS(Vocabulary::load(dir + "/bad.tsv"), VocabularyError);
  {
    std::ofstream bad(dir + "/badclass.tsv");
    bad << "circle\tnoun\n";
  }
  CHECK_THROWS_AS(Vocabulary::load(dir + "/badclass.tsv"), VocabularyError);
}

TEST_CASE("text encoder shape, determinism and range checks") {
  Vocabulary vocab = default_vocabulary();
  Rng rng(3);
  TextEncoder<float> enc(text_table_rows(vocab), 64, 8, rng);
  auto f = enc.encode({Vocabulary::kNullId});
  CHECK(f.tokens.shape() == Shape{1, 64});
  CHECK(f.tokens.all_finite());

  auto a = enc.encode({2, 3});
  auto b = enc.encode({2, 3});
  CHECK(a.tokens.bitwise_equal(b.tokens));

  // distinct ids give distinct rows under random init
  auto c = enc.encode({2});
  auto d = enc.encode({3});
  CHECK_FALSE(c.tokens.bitwise_equal(d.tokens));

  CHECK_THROWS_AS(enc.encode({}), VocabularyError);
  CHECK_THROWS_AS(enc.encode({text_table_rows(vocab) + 5}), VocabularyError);
}

TEST_CASE("image encoder patch counts and validation") {
  Rng rng(4);
  ImageEncoder<float> enc(64, 8, 16, rng);
  Tensorf img32 = Tensorf::randn({32, 32, 3}, rng, 0.2);
  Tape<float> t(false);
  CHECK(t.val(enc.forward(t, img32)).shape() == Shape{16, 64});

  Tensorf img8 = Tensorf::randn({8, 8, 3}, rng, 0.2);
  Tape<float> t2(false);
  CHECK(t2.val(enc.forward(t2, img8)).shape() == Shape{1, 64});

  Tensorf rect = Tensorf::randn({32, 16, 3}, rng, 0.2);
  Tape<float> t3(false);
  CHECK_THROWS_AS(enc.forward(t3, rect), DimensionError);
  Tensorf odd = Tensorf::randn({24, 24, 3}, rng, 0.2);  // 24 % 8 == 0 is fine
  Tape<float> t4(false);
  CHECK(t4.val(enc.forward(t4, odd)).shape() == Shape{9, 64});
  Tensorf indivisible = Tensorf::randn({20, 20, 3}, rng, 0.2);
  Tape<float> t5(false);
  CHECK_THROWS_AS(enc.forward(t5, indivisible), DimensionError);
}

TEST_CASE("all-zero image maps every patch to the bias row (positional off)") {
  Rng rng(5);
  ImageEncoder<float> enc(32, 8, 16, rng);
  enc.use_pos = false;
  enc.bias.value = Tensorf::randn({32}, rng, 0.5);
  auto emb = enc.encode(Tensorf::zeros({32, 32, 3}));
  for (Index i = 1; i < 16; ++i)
    for (Index j = 0; j < 32; ++j)
      CHECK(emb.tokens.at2(i, j) == doctest::Approx(emb.tokens.at2(0, j)));
  CHECK(emb.tokens.at2(0, 0) == doctest::Approx(enc.bias.value[0]));
}

TEST_CASE("patch-permutation covariance with positional embedding disabled") {
  Rng rng(6);
  ImageEncoder<float> enc(48, 8, 16, rng);
  enc.use_pos = false;
  Tensorf img = Tensorf::randn({32, 32, 3}, rng, 0.3);
  // swap two patch blocks: (0,0) <-> (2,1)
  Tensorf swapped = img;
  for (Index y = 0; y < 8; ++y)
    for (Index x = 0; x < 8; ++x)
      for (Index c = 0; c < 3; ++c) {
        std::swap(swapped[((0 + y) * 32 + (0 + x)) * 3 + c],
                  swapped[((16 + y) * 32 + (8 + x)) * 3 + c]);
      }
  auto a = enc.encode(img);
  auto b = enc.encode(swapped);
  // token order: row-major over patches; patch (0,0)=token 0, patch (2,1)=token 9
  CHECK(max_abs_diff(a.tokens.reshaped({16, 48}), a.tokens) == 0);
  for (Index j = 0; j < 48; ++j) {
    CHECK(b.tokens.at2(0, j) == doctest::Approx(a.tokens.at2(9, j)));
    CHECK(b.tokens.at2(9, j) == doctest::Approx(a.tokens.at2(0, j)));
    CHECK(b.tokens.at2(5, j) == doctest::Approx(a.tokens.at2(5, j)));
  }
}

TEST_CASE("freeze marks every encoder parameter untrainable") {
  Vocabulary vocab = default_vocabulary();
  Rng rng(7);
  EncoderBundle<float> bundle(vocab, 64, 8, 8, 16, rng);
  CHECK_FALSE(bundle.frozen());
  bundle.freeze();
  CHECK(bundle.frozen());
}
