#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylediff/dataset.hpp"
#include "stylediff/inference.hpp"

namespace stylediff {

struct MetricReport {
  double style_similarity = 0.0;
  double text_alignment = 0.0;
  double image_quality = 0.0;
  int64_t n_samples = 0;
  std::string config_fingerprint;
};

// (style similarity, text alignment) frontier, strictly increasing in ta
struct TradeoffCurve {
  std::vector<std::pair<double, double>> points;  // (ss, ta)

  void validate() const;
  // piecewise-linear ss as a function of ta; ta outside the range clamps to
  // the end points
  double ss_at(double ta) const;
};

// strict: the point must lie above the interpolated frontier
bool dominates_curve(const std::pair<double, double>& point_ss_ta, const TradeoffCurve& curve);

enum class VoteAspect { kStyle, kQuality, kAlignment, kOverall };

const char* aspect_name(VoteAspect a);
VoteAspect aspect_from_name(const std::string& name);

struct VoteRecord {
  std::string rater;
  VoteAspect aspect = VoteAspect::kOverall;
  std::string method;
};

using TallyTable = std::map<VoteAspect, std::vector<std::pair<std::string, double>>>;

// per aspect: percentage of votes per method, methods sorted by name
TallyTable tally_user_study(const std::vector<VoteRecord>& votes);

void save_votes(const std::string& path, const std::vector<VoteRecord>& votes);
std::vector<VoteRecord> load_votes(const std::string& path);

using Captioner = std::function<std::vector<std::string>(const Tensorf&)>;
using QualityPredictor = std::function<double(const Tensorf&)>;

struct Embedder {
  std::function<Tensorf(const std::string&)> text;  // phrase -> embedding row
  std::function<Tensorf(const Tensorf&)> image;     // image -> embedding row
};

// Caption the reference, drop every phrase containing a subject-vocabulary
// token, embed what remains and average its cosine against the generated
// image. All phrases filtered -> missing (never 0).
std::optional<double> style_similarity(const Tensorf& reference, const Tensorf& generated,
                                       const Captioner& captioner, const Vocabulary& vocab,
                                       const Embedder& embedder);

double text_alignment(const std::string& prompt, const Tensorf& generated,
                      const Embedder& embedder);

double image_quality(const Tensorf& generated, const QualityPredictor& predictor);

// sharpness+contrast heuristic in [0,10); uniform images score 0
double toy_quality_predictor(const Tensorf& image);

// Multinomial logistic regression over engineered features; subject oracles
// look at a centred silhouette, style oracles at colour statistics.
class OracleClassifier {
 public:
  enum class Kind { kSubject, kStyle };

  OracleClassifier() = default;
  OracleClassifier(Kind kind, int n_classes);

  static Tensord features(Kind kind, const Tensorf& image);

  void train(const std::vector<Tensorf>& images, const std::vector<int>& labels, int epochs,
             double lr, Rng& rng);
  int predict(const Tensorf& image) const;
  double accuracy(const std::vector<Tensorf>& images, const std::vector<int>& labels) const;

  Kind kind() const { return kind_; }

 private:
  Kind kind_ = Kind::kSubject;
  int n_classes_ = 0;
  Tensord w_;  // F x C
  Tensord b_;  // C
  Tensord mu_, sigma_;  // feature standardization
};

struct OraclePair {
  OracleClassifier subject;
  OracleClassifier style;
  double subject_self_accuracy = 0.0;
  double style_self_accuracy = 0.0;
};

// Trains both oracles on held-out procedural renders (seed space disjoint
// from dataset builds) and measures self-accuracy on a fresh validation
// split; throws CalibrationError below the floor.
OraclePair train_oracles(const Vocabulary& vocab, const std::vector<StyleSpec>& specs,
                         uint64_t seed, double min_self_accuracy = 0.95);

// desk-scale captioner: oracle style phrase plus an oracle subject phrase
// (the latter exists to exercise the content filter)
Captioner make_oracle_captioner(const OraclePair& oracles, const Vocabulary& vocab);

Embedder make_shared_embedder(StyleModel<float>& model);

struct TestCase {
  Tensorf reference;
  std::string style_word;
  std::string prompt_subject;
};

std::vector<TestCase> build_testset(const Vocabulary& vocab, const std::vector<StyleSpec>& specs,
                                    int n_cases, uint64_t seed);

// testset directory: testset.jsonl records {reference, style_word,
// prompt_subject} plus the referenced bitmaps
void save_testset(const std::string& dir, const std::vector<TestCase>& cases);
std::vector<TestCase> load_testset(const std::string& dir);

struct DisentanglementReport {
  double style_acc = 0.0;
  double content_acc = 0.0;
  double ss = 0.0;
  double ta = 0.0;
  double iq = 0.0;
  int n = 0;
};

DisentanglementReport eval_disentanglement(StyleModel<float>& model,
                                           const std::vector<TestCase>& cases,
                                           const OraclePair& oracles, int ddim_steps, double cfg,
                                           uint64_t seed);

// small plotted figure for the trade-off comparison
void plot_tradeoff(const std::string& path, const TradeoffCurve& curve,
                   const std::pair<double, double>& point_ss_ta);

}  // namespace stylediff
