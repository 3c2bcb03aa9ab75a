#include "stylediff/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "stylediff/image_io.hpp"

using json = nlohmann::json;

namespace stylediff {

void TradeoffCurve::validate() const {
  if (points.size() < 2) throw ParameterError("trade-off curve needs >= 2 points");
  for (size_t i = 1; i < points.size(); ++i)
    if (!(points[i].second > points[i - 1].second))
      throw ParameterError("trade-off curve text-alignment values must strictly increase");
}

double TradeoffCurve::ss_at(double ta) const {
  validate();
  if (ta <= points.front().second) return points.front().first;
  if (ta >= points.back().second) return points.back().first;
  for (size_t i = 1; i < points.size(); ++i) {
    if (ta <= points[i].second) {
      double t0 = points[i - 1].second, t1 = points[i].second;
      double s0 = points[i - 1].first, s1 = points[i].first;
      double u = (ta - t0) / (t1 - t0);
      return s0 + u * (s1 - s0);
    }
  }
  return points.back().first;
}

bool dominates_curve(const std::pair<double, double>& point_ss_ta, const TradeoffCurve& curve) {
  return point_ss_ta.first > curve.ss_at(point_ss_ta.second);
}

const char* aspect_name(VoteAspect a) {
  switch (a) {
    case VoteAspect::kStyle: return "style";
    case VoteAspect::kQuality: return "quality";
    case VoteAspect::kAlignment: return "alignment";
    case VoteAspect::kOverall: return "overall";
  }
  return "?";
}

VoteAspect aspect_from_name(const std::string& name) {
  if (name == "style") return VoteAspect::kStyle;
  if (name == "quality") return VoteAspect::kQuality;
  if (name == "alignment") return VoteAspect::kAlignment;
  if (name == "overall") return VoteAspect::kOverall;
  throw ParameterError("aspect '" + name + "' is not style|quality|alignment|overall");
}

TallyTable tally_user_study(const std::vector<VoteRecord>& votes) {
  if (votes.empty()) throw ParameterError("tally_user_study on empty vote list");
  std::map<VoteAspect, std::map<std::string, int64_t>> counts;
  std::map<VoteAspect, int64_t> totals;
  for (const auto& v : votes) {
    counts[v.aspect][v.method]++;
    totals[v.aspect]++;
  }
  TallyTable out;
  for (auto& [aspect, per_method] : counts) {
    for (auto& [method, n] : per_method)
      out[aspect].emplace_back(method, 100.0 * double(n) / double(totals[aspect]));
  }
  return out;
}

void save_votes(const std::string& path, const std::vector<VoteRecord>& votes) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PipelineError("cannot write votes to " + path);
  for (const auto& v : votes) {
    json j{{"rater", v.rater}, {"aspect", aspect_name(v.aspect)}, {"method", v.method}};
    out << j.dump() << "\n";
  }
}

std::vector<VoteRecord> load_votes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot open votes file " + path);
  std::vector<VoteRecord> votes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      votes.push_back({j.at("rater").get<std::string>(),
                       aspect_from_name(j.at("aspect").get<std::string>()),
                       j.at("method").get<std::string>()});
    } catch (const json::exception& e) {
      throw PipelineError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return votes;
}

std::optional<double> style_similarity(const Tensorf& reference, const Tensorf& generated,
                                       const Captioner& captioner, const Vocabulary& vocab,
                                       const Embedder& embedder) {
  std::vector<std::string> phrases = captioner(reference);
  std::vector<std::string> kept;
  for (const auto& ph : phrases) {
    bool content_related = false;
    for (int id : tokenize(ph, vocab)) content_related = content_related || vocab.is_subject_id(id);
    if (!content_related) kept.push_back(ph);
  }
  if (kept.empty()) return std::nullopt;  // no-style-phrases
  Tensorf img_emb = embedder.image(generated);
  double acc = 0;
  for (const auto& ph : kept) acc += cosine_similarity(embedder.text(ph), img_emb);
  return acc / double(kept.size());
}

double text_alignment(const std::string& prompt, const Tensorf& generated,
                      const Embedder& embedder) {
  if (prompt.empty()) throw ParameterError("text_alignment on empty prompt");
  return cosine_similarity(embedder.text(prompt), embedder.image(generated));
}

double image_quality(const Tensorf& generated, const QualityPredictor& predictor) {
  return predictor(generated);
}

double toy_quality_predictor(const Tensorf& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw DimensionError("quality predictor expects HxWx3");
  const Index H = image.dim(0), W = image.dim(1);
  auto lum = [&](Index y, Index x) {
    const float* p = image.data() + (y * W + x) * 3;
    return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  };
  double mean = 0;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) mean += lum(y, x);
  mean /= double(H * W);
  double var = 0, sharp = 0;
  int64_t edges = 0;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      double v = lum(y, x);
      var += (v - mean) * (v - mean);
      if (x + 1 < W) {
        sharp += std::abs(lum(y, x + 1) - v);
        ++edges;
      }
      if (y + 1 < H) {
        sharp += std::abs(lum(y + 1, x) - v);
        ++edges;
      }
    }
  var /= double(H * W);
  sharp /= double(edges);
  return 5.0 * std::tanh(8.0 * sharp) + 5.0 * std::tanh(4.0 * std::sqrt(var));
}

// ---- oracle classifiers ----

namespace {

constexpr Index kSide = 32;

void border_backgrounds(const Tensorf& img, float bg[2][3]) {
  std::vector<std::array<float, 3>> border;
  for (Index x = 0; x < kSide; ++x) {
    for (Index y : {Index(0), Index(1), kSide - 2, kSide - 1}) {
      const float* p = img.data() + (y * kSide + x) * 3;
      border.push_back({p[0], p[1], p[2]});
    }
  }
  std::sort(border.begin(), border.end(), [](const auto& a, const auto& b) {
    return a[0] + a[1] + a[2] < b[0] + b[1] + b[2];
  });
  size_t half = border.size() / 2;
  for (int k = 0; k < 2; ++k) {
    double s[3] = {0, 0, 0};
    size_t b0 = k == 0 ? 0 : half, b1 = k == 0 ? half : border.size();
    for (size_t i = b0; i < b1; ++i)
      for (int c = 0; c < 3; ++c) s[c] += border[i][static_cast<size_t>(c)];
    for (int c = 0; c < 3; ++c) bg[k][c] = static_cast<float>(s[c] / double(b1 - b0));
  }
}

// foreground mask by distance to the two estimated background colours
void silhouette(const Tensorf& img, std::vector<float>& mask) {
  float bg[2][3];
  border_backgrounds(img, bg);
  mask.assign(static_cast<size_t>(kSide * kSide), 0.0f);
  for (Index i = 0; i < kSide * kSide; ++i) {
    const float* p = img.data() + i * 3;
    float best = 1e9f;
    for (int k = 0; k < 2; ++k) {
      float d = 0;
      for (int c = 0; c < 3; ++c) {
        float diff = p[c] - bg[k][c];
        d += diff * diff;
      }
      best = std::min(best, d);
    }
    mask[static_cast<size_t>(i)] = best > 0.08f ? 1.0f : 0.0f;
  }
}

}  // namespace

Tensord OracleClassifier::features(Kind kind, const Tensorf& image) {
  if (image.rank() != 3 || image.dim(0) != kSide || image.dim(1) != kSide)
    throw DimensionError("oracle features expect 32x32x3, got " + shape_str(image.shape()));
  if (kind == Kind::kStyle) {
    Tensord f = Tensord::zeros({Index(70)});
    for (Index i = 0; i < kSide * kSide; ++i) {
      const float* p = image.data() + i * 3;
      int r = std::min(3, int(p[0] * 4.0f));
      int g = std::min(3, int(p[1] * 4.0f));
      int b = std::min(3, int(p[2] * 4.0f));
      f[r * 16 + g * 4 + b] += 1.0 / (kSide * kSide);
    }
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (Index i = 0; i < kSide * kSide; ++i) mean += image[i * 3 + c];
      mean /= double(kSide * kSide);
      double var = 0;
      for (Index i = 0; i < kSide * kSide; ++i) {
        double d = image[i * 3 + c] - mean;
        var += d * d;
      }
      f[64 + c] = mean;
      f[67 + c] = std::sqrt(var / double(kSide * kSide));
    }
    return f;
  }
  // subject: centred silhouette pooled to 16x16, plus area
  std::vector<float> mask;
  silhouette(image, mask);
  double area = 0, mx = 0, my = 0;
  for (Index y = 0; y < kSide; ++y)
    for (Index x = 0; x < kSide; ++x) {
      float m = mask[static_cast<size_t>(y * kSide + x)];
      area += m;
      mx += m * double(x);
      my += m * double(y);
    }
  Index sx = 0, sy = 0;
  if (area > 0.5) {
    sx = static_cast<Index>(std::lround(15.5 - mx / area));
    sy = static_cast<Index>(std::lround(15.5 - my / area));
  }
  Tensord f = Tensord::zeros({Index(257)});
  for (Index y = 0; y < kSide; ++y)
    for (Index x = 0; x < kSide; ++x) {
      Index ty = y + sy, tx = x + sx;
      if (ty < 0 || ty >= kSide || tx < 0 || tx >= kSide) continue;
      if (mask[static_cast<size_t>(y * kSide + x)] > 0.5f)
        f[(ty / 2) * 16 + (tx / 2)] += 0.25;
    }
  f[256] = area / double(kSide * kSide);
  return f;
}

OracleClassifier::OracleClassifier(Kind kind, int n_classes) : kind_(kind), n_classes_(n_classes) {}

void OracleClassifier::train(const std::vector<Tensorf>& images, const std::vector<int>& labels,
                             int epochs, double lr, Rng& rng) {
  if (images.size() != labels.size() || images.empty())
    throw ParameterError("oracle training set malformed");
  std::vector<Tensord> feats;
  feats.reserve(images.size());
  for (const auto& img : images) feats.push_back(features(kind_, img));
  const Index F = feats[0].numel();
  mu_ = Tensord::zeros({F});
  sigma_ = Tensord::zeros({F});
  for (const auto& f : feats) mu_.arr() += f.arr();
  mu_.arr() /= double(feats.size());
  for (const auto& f : feats) sigma_.arr() += (f.arr() - mu_.arr()).square();
  sigma_.arr() = (sigma_.arr() / double(feats.size())).sqrt() + 1e-6;
  for (auto& f : feats) f.arr() = (f.arr() - mu_.arr()) / sigma_.arr();

  w_ = Tensord::zeros({F, n_classes_});
  b_ = Tensord::zeros({n_classes_});
  std::vector<size_t> order(feats.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    double step = lr / (1.0 + 0.15 * e);
    for (size_t i : order) {
      Tensord logits = Tensord::uninit({Index(1), Index(n_classes_)});
      logits.mat().noalias() = feats[i].view2d(1, F) * w_.mat();
      logits.mat() += b_.view2d(1, n_classes_);
      Tensord p = softmax_rows(logits);
      p[labels[i]] -= 1.0;
      w_.mat().noalias() -= step * feats[i].view2d(1, F).transpose() * p.mat();
      b_.view2d(1, n_classes_) -= step * p.mat();
    }
  }
}

int OracleClassifier::predict(const Tensorf& image) const {
  Tensord f = features(kind_, image);
  f.arr() = (f.arr() - mu_.arr()) / sigma_.arr();
  Tensord logits = Tensord::uninit({Index(1), Index(n_classes_)});
  logits.mat().noalias() = f.view2d(1, f.numel()) * w_.mat();
  logits.mat() += b_.view2d(1, n_classes_);
  Index best = 0;
  logits.mat().row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

double OracleClassifier::accuracy(const std::vector<Tensorf>& images,
                                  const std::vector<int>& labels) const {
  int64_t hit = 0;
  for (size_t i = 0; i < images.size(); ++i) hit += (predict(images[i]) == labels[i]);
  return double(hit) / double(images.size());
}

OraclePair train_oracles(const Vocabulary& vocab, const std::vector<StyleSpec>& specs,
                         uint64_t seed, double min_self_accuracy) {
  const auto& subjects = vocab.subject_words();
  const int n_subj = static_cast<int>(subjects.size());
  const int n_style = static_cast<int>(specs.size());
  // oracle seed space deliberately disjoint from dataset renders
  Rng rng(seed ^ 0x0bac1e5eedull);
  std::vector<Tensorf> train_imgs, val_imgs;
  std::vector<int> train_subj, val_subj, train_style, val_style;
  const int per_combo_train = 6, per_combo_val = 2;
  for (int si = 0; si < n_subj; ++si)
    for (int yi = 0; yi < n_style; ++yi)
      for (int k = 0; k < per_combo_train + per_combo_val; ++k) {
        Tensorf img = procedural_render(subjects[static_cast<size_t>(si)],
                                        specs[static_cast<size_t>(yi)], rng.next_u64());
        if (k < per_combo_train) {
          train_imgs.push_back(std::move(img));
          train_subj.push_back(si);
          train_style.push_back(yi);
        } else {
          val_imgs.push_back(std::move(img));
          val_subj.push_back(si);
          val_style.push_back(yi);
        }
      }
  OraclePair pair;
  pair.subject = OracleClassifier(OracleClassifier::Kind::kSubject, n_subj);
  pair.style = OracleClassifier(OracleClassifier::Kind::kStyle, n_style);
  Rng r1 = rng.fork(1), r2 = rng.fork(2);
  pair.subject.train(train_imgs, train_subj, 24, 0.25, r1);
  pair.style.train(train_imgs, train_style, 24, 0.25, r2);
  pair.subject_self_accuracy = pair.subject.accuracy(val_imgs, val_subj);
  pair.style_self_accuracy = pair.style.accuracy(val_imgs, val_style);
  if (pair.subject_self_accuracy < min_self_accuracy ||
      pair.style_self_accuracy < min_self_accuracy)
    throw CalibrationError(
        "oracle self-accuracy below floor: subject=" + std::to_string(pair.subject_self_accuracy) +
        " style=" + std::to_string(pair.style_self_accuracy) +
        " floor=" + std::to_string(min_self_accuracy));
  return pair;
}

Captioner make_oracle_captioner(const OraclePair& oracles, const Vocabulary& vocab) {
  const OracleClassifier* subj = &oracles.subject;
  const OracleClassifier* style = &oracles.style;
  Vocabulary v = vocab;
  return [subj, style, v](const Tensorf& reference) {
    std::vector<std::string> phrases;
    phrases.push_back(v.style_words()[static_cast<size_t>(style->predict(reference))]);
    phrases.push_back("a " + v.subject_words()[static_cast<size_t>(subj->predict(reference))]);
    return phrases;
  };
}

Embedder make_shared_embedder(StyleModel<float>& model) {
  Embedder e;
  StyleModel<float>* m = &model;
  e.text = [m](const std::string& phrase) {
    return m->encoders.embed_text_shared(tokenize(phrase, m->vocab));
  };
  e.image = [m](const Tensorf& img) { return m->encoders.embed_image_shared(img); };
  return e;
}

std::vector<TestCase> build_testset(const Vocabulary& vocab, const std::vector<StyleSpec>& specs,
                                    int n_cases, uint64_t seed) {
  // reference seeds disjoint from both training renders and oracle renders
  Rng rng(seed ^ 0x7e57ca5e5ull);
  std::vector<TestCase> cases;
  for (int i = 0; i < n_cases; ++i) {
    int yi = rng.index(static_cast<int>(specs.size()));
    int si_ref = rng.index(static_cast<int>(vocab.subject_words().size()));
    int si_prompt = rng.index(static_cast<int>(vocab.subject_words().size()));
    TestCase tc;
    tc.reference = procedural_render(vocab.subject_words()[static_cast<size_t>(si_ref)],
                                     specs[static_cast<size_t>(yi)], rng.next_u64());
    tc.style_word = specs[static_cast<size_t>(yi)].name;
    tc.prompt_subject = vocab.subject_words()[static_cast<size_t>(si_prompt)];
    cases.push_back(std::move(tc));
  }
  return cases;
}

void save_testset(const std::string& dir, const std::vector<TestCase>& cases) {
  std::filesystem::create_directories(dir + "/refs");
  std::ofstream out(dir + "/testset.jsonl", std::ios::trunc);
  if (!out) throw PipelineError("cannot write testset to " + dir);
  for (size_t i = 0; i < cases.size(); ++i) {
    std::string rel = "refs/case_" + std::to_string(i) + ".bmp";
    write_bmp(dir + "/" + rel, cases[i].reference);
    json j{{"reference", rel},
           {"style_word", cases[i].style_word},
           {"prompt_subject", cases[i].prompt_subject}};
    out << j.dump() << "\n";
  }
}

std::vector<TestCase> load_testset(const std::string& dir) {
  std::ifstream in(dir + "/testset.jsonl");
  if (!in) throw PipelineError("no testset.jsonl under " + dir);
  std::vector<TestCase> cases;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    TestCase tc;
    tc.reference = read_bmp(dir + "/" + j.at("reference").get<std::string>());
    tc.style_word = j.at("style_word").get<std::string>();
    tc.prompt_subject = j.at("prompt_subject").get<std::string>();
    cases.push_back(std::move(tc));
  }
  if (cases.empty()) throw PipelineError("empty testset under " + dir);
  return cases;
}

DisentanglementReport eval_disentanglement(StyleModel<float>& model,
                                           const std::vector<TestCase>& cases,
                                           const OraclePair& oracles, int ddim_steps, double cfg,
                                           uint64_t seed) {
  if (cases.empty()) throw ParameterError("empty test set");
  Captioner cap = make_oracle_captioner(oracles, model.vocab);
  Embedder emb = make_shared_embedder(model);
  DisentanglementReport rep;
  double ss_acc = 0;
  int ss_n = 0;
  for (size_t i = 0; i < cases.size(); ++i) {
    const TestCase& tc = cases[i];
    SampleRequest<float> req;
    req.prompt = tc.prompt_subject;
    req.style_reference = tc.reference;
    req.steps = ddim_steps;
    req.guidance_scale = cfg;
    req.seed = seed + 1000 + i;
    Tensorf gen = sample(req, model);
    int style_pred = oracles.style.predict(gen);
    int subj_pred = oracles.subject.predict(gen);
    rep.style_acc += (model.vocab.style_words()[static_cast<size_t>(style_pred)] == tc.style_word);
    rep.content_acc +=
        (model.vocab.subject_words()[static_cast<size_t>(subj_pred)] == tc.prompt_subject);
    if (auto ss = style_similarity(tc.reference, gen, cap, model.vocab, emb)) {
      ss_acc += *ss;
      ++ss_n;
    }
    rep.ta += text_alignment(tc.prompt_subject, gen, emb);
    rep.iq += toy_quality_predictor(gen);
    ++rep.n;
  }
  rep.style_acc /= double(rep.n);
  rep.content_acc /= double(rep.n);
  rep.ta /= double(rep.n);
  rep.iq /= double(rep.n);
  rep.ss = ss_n ? ss_acc / double(ss_n) : 0.0;
  return rep;
}

void plot_tradeoff(const std::string& path, const TradeoffCurve& curve,
                   const std::pair<double, double>& point_ss_ta) {
  curve.validate();
  const Index N = 220;
  Tensorf img = Tensorf::full({N, N, 3}, 1.0f);
  double ta_min = curve.points.front().second, ta_max = curve.points.back().second;
  double ss_min = 1e9, ss_max = -1e9;
  for (auto& [ss, ta] : curve.points) {
    ss_min = std::min(ss_min, ss);
    ss_max = std::max(ss_max, ss);
  }
  ta_min = std::min(ta_min, point_ss_ta.second);
  ta_max = std::max(ta_max, point_ss_ta.second);
  ss_min = std::min(ss_min, point_ss_ta.first);
  ss_max = std::max(ss_max, point_ss_ta.first);
  double ta_pad = 0.1 * (ta_max - ta_min + 1e-9), ss_pad = 0.1 * (ss_max - ss_min + 1e-9);
  ta_min -= ta_pad, ta_max += ta_pad, ss_min -= ss_pad, ss_max += ss_pad;
  auto px = [&](double ta) { return Index(20 + (ta - ta_min) / (ta_max - ta_min) * (N - 40)); };
  auto py = [&](double ss) { return Index(N - 20 - (ss - ss_min) / (ss_max - ss_min) * (N - 40)); };
  auto put = [&](Index x, Index y, float r, float g, float b) {
    if (x < 0 || x >= N || y < 0 || y >= N) return;
    float* p = img.data() + (y * N + x) * 3;
    p[0] = r, p[1] = g, p[2] = b;
  };
  for (Index i = 20; i < N - 20; ++i) {
    put(i, N - 20, 0, 0, 0);
    put(20, i, 0, 0, 0);
  }
  for (size_t i = 1; i < curve.points.size(); ++i) {
    double t0 = curve.points[i - 1].second, t1 = curve.points[i].second;
    double s0 = curve.points[i - 1].first, s1 = curve.points[i].first;
    for (int k = 0; k <= 100; ++k) {
      double u = k / 100.0;
      put(px(t0 + u * (t1 - t0)), py(s0 + u * (s1 - s0)), 0.2f, 0.3f, 0.9f);
    }
  }
  for (auto& [ss, ta] : curve.points)
    for (Index dy = -1; dy <= 1; ++dy)
      for (Index dx = -1; dx <= 1; ++dx) put(px(ta) + dx, py(ss) + dy, 0.2f, 0.3f, 0.9f);
  for (Index d = -3; d <= 3; ++d) {
    put(px(point_ss_ta.second) + d, py(point_ss_ta.first), 0.9f, 0.15f, 0.15f);
    put(px(point_ss_ta.second), py(point_ss_ta.first) + d, 0.9f, 0.15f, 0.15f);
  }
  write_bmp(path, img);
}

}  // namespace stylediff
