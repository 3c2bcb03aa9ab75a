#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "stylediff/config.hpp"
#include "stylediff/dataset.hpp"
#include "stylediff/evaluation.hpp"

namespace stylediff {

enum class TrainParadigm { kBaseline, kDcm, kFull };

TrainParadigm paradigm_from_string(const std::string& s);

std::string stage_dir(const RunConfig& cfg, const std::string& stage);
bool stage_complete(const std::string& dir);

StyleModel<float> build_model(const RunConfig& cfg);

Vocabulary load_vocabulary(const RunConfig& cfg);

// checkpoint glue: all parameters plus config snapshot and trainable-set
// listing
void save_model_checkpoint(const std::string& path, StyleModel<float>& model,
                           const RunConfig& cfg);
void load_model_checkpoint(const std::string& path, StyleModel<float>& model);

// training phases; each logs JSONL records to `log`
void warmup_encoders(StyleModel<float>& model, const std::vector<StyleSpec>& specs,
                     const RunConfig& cfg, std::ostream& log);
void pretrain_base(StyleModel<float>& model, const std::vector<StyleSpec>& specs,
                   const RunConfig& cfg, std::ostream& log);
void train_adapters(StyleModel<float>& model, const DatasetStore& store, const RunConfig& cfg,
                    std::ostream& log);

struct StageResult {
  std::string dir;
  bool skipped = false;
};

StageResult run_data_stage(const RunConfig& cfg);
StageResult run_train_stage(const RunConfig& cfg);
StageResult run_sample_stage(const RunConfig& cfg);
StageResult run_eval_stage(const RunConfig& cfg);

// canonical order data -> train -> sample -> eval over the requested subset;
// returns a process exit status
int run_pipeline(const std::vector<std::string>& stages, const RunConfig& cfg);

}  // namespace stylediff
