#include "stylediff/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "stylediff/checkpoint.hpp"
#include "stylediff/image_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace stylediff {

TrainParadigm paradigm_from_string(const std::string& s) {
  if (s == "baseline") return TrainParadigm::kBaseline;
  if (s == "dcm") return TrainParadigm::kDcm;
  if (s == "full") return TrainParadigm::kFull;
  throw ConfigError("paradigm '" + s + "' is not baseline|dcm|full");
}

std::string stage_dir(const RunConfig& cfg, const std::string& stage) {
  return cfg.out_root + "/" + stage + "-" + cfg.fingerprint_hex();
}

bool stage_complete(const std::string& dir) { return fs::exists(dir + "/stamp.json"); }

namespace {

void write_stamp(const std::string& dir, const RunConfig& cfg, const std::string& stage) {
  json j{{"stage", stage}, {"config_fingerprint", cfg.fingerprint_hex()}, {"seed", cfg.seed}};
  std::ofstream out(dir + "/stamp.json", std::ios::trunc);
  out << j.dump(2) << "\n";
}

void write_config_echo(const std::string& dir, const RunConfig& cfg) {
  std::ofstream out(dir + "/run_config.txt", std::ios::trunc);
  out << cfg.echo();
}

}  // namespace

Vocabulary load_vocabulary(const RunConfig& cfg) {
  if (cfg.vocab_file.empty()) return default_vocabulary();
  return Vocabulary::load(cfg.vocab_file);
}

StyleModel<float> build_model(const RunConfig& cfg) {
  cfg.validate();
  ModelDims dims;
  dims.d = cfg.d;
  dims.patch = cfg.patch;
  dims.image_size = cfg.image_size;
  dims.qformer_blocks = static_cast<int>(cfg.qformer_blocks);
  dims.heads = static_cast<int>(cfg.heads);
  dims.unet.image_size = cfg.image_size;
  dims.unet.c1 = cfg.unet_c1;
  dims.unet.c2 = cfg.unet_c2;
  dims.unet.c3 = cfg.unet_c3;
  dims.unet.d_txt = cfg.d;
  dims.unet.d_attn = cfg.d_attn;
  dims.unet.heads = static_cast<int>(cfg.heads);
  Rng rng(static_cast<uint64_t>(cfg.seed));
  Rng init = rng.fork(1);
  return StyleModel<float>(load_vocabulary(cfg), dims, cfg.schedule_T, init);
}

void save_model_checkpoint(const std::string& path, StyleModel<float>& model,
                           const RunConfig& cfg) {
  std::vector<TensorRecord> records;
  model.visit_params(
      [&](Param<float>& p) { records.push_back(TensorRecord::from_f32(p.name, p.value)); });
  records.push_back(TensorRecord::from_text("meta.config", canonical_config_text(cfg)));
  std::string trainable;
  for (const auto& n : model.trainable_names()) trainable += n + "\n";
  records.push_back(TensorRecord::from_text("meta.trainable_set", trainable));
  write_checkpoint(path, records);
}

void load_model_checkpoint(const std::string& path, StyleModel<float>& model) {
  auto records = read_checkpoint(path);
  std::vector<std::string> names;
  model.visit_params([&](Param<float>& p) { names.push_back(p.name); });
  require_names(records, names);
  model.visit_params([&](Param<float>& p) {
    const TensorRecord& r = records.at(p.name);
    if (r.shape != p.value.shape())
      throw CheckpointError(p.name + ": checkpoint shape " + shape_str(r.shape) +
                            " vs model shape " + shape_str(p.value.shape()));
    p.value = r.as_f32();
  });
  model.refresh_instruction_features();
}

// ---- training phases ----

void warmup_encoders(StyleModel<float>& model, const std::vector<StyleSpec>& specs,
                     const RunConfig& cfg, std::ostream& log) {
  Rng rng = Rng(static_cast<uint64_t>(cfg.seed)).fork(12);
  const auto& subjects = model.vocab.subject_words();
  struct Ex {
    Tensorf image;
    int si, yi;
  };
  std::vector<Ex> train, val;
  for (size_t si = 0; si < subjects.size(); ++si)
    for (size_t yi = 0; yi < specs.size(); ++yi)
      for (int k = 0; k < 4; ++k) {
        Ex ex{procedural_render(subjects[si], specs[yi], rng.next_u64()), static_cast<int>(si),
              static_cast<int>(yi)};
        (k < 3 ? train : val).push_back(std::move(ex));
      }

  model.encoders.visit_params([](Param<float>& p) { p.trainable = true; });
  AdamW<float> opt(2e-3, 0.0);
  const int B = 32;
  for (int64_t step = 0; step < cfg.warmup_steps; ++step) {
    std::unordered_map<Param<float>*, Tensorf> grad_sum;
    double loss_acc = 0;
    for (int b = 0; b < B; ++b) {
      const Ex& ex = train[rng.below(train.size())];
      Tape<float> t(true);
      auto& enc = model.encoders;
      int img_tokens = model.encoders.image.forward(t, ex.image);
      int flat = ag::reshape(t, img_tokens, {Index(1), t.val(img_tokens).numel()});
      int pooled = ag::mean_rows(t, img_tokens);
      int ls = ag::cross_entropy_logits(
          t, linear(t, flat, t.param(enc.subj_head_w), t.param(enc.subj_head_b)), {ex.si});
      int ly = ag::cross_entropy_logits(
          t, linear(t, pooled, t.param(enc.style_head_w), t.param(enc.style_head_b)), {ex.yi});
      std::vector<int> ids = {model.vocab.subject_id(ex.si), model.vocab.style_id(ex.yi)};
      int txt = model.encoders.text.forward(t, ids);
      int f_txt = ag::mean_rows(t, txt);
      int ts = ag::cross_entropy_logits(
          t, linear(t, f_txt, t.param(enc.text_subj_head_w), t.param(enc.text_subj_head_b)),
          {ex.si});
      int ty = ag::cross_entropy_logits(
          t, linear(t, f_txt, t.param(enc.text_style_head_w), t.param(enc.text_style_head_b)),
          {ex.yi});
      int aligned = linear(t, flat, t.param(enc.align_w), t.param(enc.align_b));
      int la = ag::mse(t, aligned, f_txt);
      int loss = ag::add_scalars(t, {ls, ly, ts, ty, la}, {1.f, 1.f, 1.f, 1.f, 4.f});
      loss_acc += t.val(loss)[0];
      t.backward(loss);
      t.for_each_param_grad([&](Param<float>& p, const Tensorf& g) {
        auto it = grad_sum.find(&p);
        if (it == grad_sum.end())
          grad_sum.emplace(&p, g);
        else
          it->second.arr() += g.arr();
      });
    }
    std::vector<std::pair<Param<float>*, const Tensorf*>> ordered;
    model.encoders.visit_params([&](Param<float>& p) {
      auto it = grad_sum.find(&p);
      if (it == grad_sum.end()) return;
      it->second.arr() /= float(B);
      ordered.emplace_back(&p, &it->second);
    });
    opt.apply(ordered);
    if (step % 50 == 0 || step + 1 == cfg.warmup_steps)
      log << json{{"phase", "warmup"}, {"step", step}, {"loss", loss_acc / B}}.dump() << "\n";
  }

  model.encoders.freeze();
  model.refresh_instruction_features();

  // held-out sanity numbers for the log
  int subj_hit = 0, style_hit = 0;
  for (const Ex& ex : val) {
    Tape<float> t(false);
    auto& enc = model.encoders;
    int tokens = model.encoders.image.forward(t, ex.image);
    int flat = ag::reshape(t, tokens, {Index(1), t.val(tokens).numel()});
    int pooled = ag::mean_rows(t, tokens);
    int lsub = linear(t, flat, t.param(enc.subj_head_w), t.param(enc.subj_head_b));
    int lsty = linear(t, pooled, t.param(enc.style_head_w), t.param(enc.style_head_b));
    Index bs = 0, by = 0;
    t.val(lsub).mat().row(0).maxCoeff(&bs);
    t.val(lsty).mat().row(0).maxCoeff(&by);
    subj_hit += (static_cast<int>(bs) == ex.si);
    style_hit += (static_cast<int>(by) == ex.yi);
  }
  log << json{{"phase", "warmup"},
              {"val_subject_acc", double(subj_hit) / val.size()},
              {"val_style_acc", double(style_hit) / val.size()}}
             .dump()
      << "\n";
}

// The base text-to-image model trains on unbounded fresh renders over the
// whole subject x style grid (the adapter phase is what trains on the stored
// paired dataset). A finite store gets memorized and the denoiser then never
// needs the caption.
void pretrain_base(StyleModel<float>& model, const std::vector<StyleSpec>& specs,
                   const RunConfig& cfg, std::ostream& log) {
  model.enter_base_phase();
  Rng rng = Rng(static_cast<uint64_t>(cfg.seed)).fork(13);
  Rng pick = rng.fork(1);
  const auto& subjects = model.vocab.subject_words();
  TrainState<float> state(cfg.base_lr, cfg.weight_decay, rng.fork(2).next_u64());
  TrainStepOptions opt;
  opt.p_drop = cfg.p_drop;
  opt.threads = static_cast<int>(cfg.threads);
  opt.base_pretrain = true;
  for (int64_t step = 0; step < cfg.base_steps; ++step) {
    std::vector<PairedItem<float>> batch;
    batch.reserve(static_cast<size_t>(cfg.batch));
    for (int64_t b = 0; b < cfg.batch; ++b) {
      PairedItem<float> item;
      item.target_subject_word = subjects[pick.below(subjects.size())];
      item.target_style_word = specs[pick.below(specs.size())].name;
      item.target_image = procedural_render(
          item.target_subject_word, style_spec_by_name(specs, item.target_style_word),
          pick.next_u64());
      item.reference_image = item.target_image;
      item.task = TaskKind::kRecon;
      batch.push_back(std::move(item));
    }
    float loss = train_step(state, batch, model, opt);
    if (step % 25 == 0 || step + 1 == cfg.base_steps)
      log << json{{"phase", "base"}, {"step", step}, {"loss", loss}}.dump() << "\n";
  }
}

void train_adapters(StyleModel<float>& model, const DatasetStore& store, const RunConfig& cfg,
                    std::ostream& log) {
  TrainParadigm paradigm = paradigm_from_string(cfg.paradigm);
  model.enter_adapter_phase();
  model.unet.set_injection(paradigm == TrainParadigm::kBaseline ? Injection::kAllSites
                                                                : Injection::kRouted);
  Rng rng = Rng(static_cast<uint64_t>(cfg.seed)).fork(14);
  Rng pick = rng.fork(1);
  StylePairSampler style_pairs(store, pick);
  ContentPairSampler content_pairs(store, pick);
  ReconSampler recon(store, pick);
  TrainState<float> state(cfg.lr, cfg.weight_decay, rng.fork(2).next_u64());
  TrainStepOptions opt;
  opt.p_drop = cfg.p_drop;
  opt.threads = static_cast<int>(cfg.threads);
  opt.baseline_single_qformer = paradigm == TrainParadigm::kBaseline;
  for (int64_t step = 0; step < cfg.train_steps; ++step) {
    std::vector<PairedItem<float>> batch;
    batch.reserve(static_cast<size_t>(cfg.batch));
    int counts[3] = {0, 0, 0};
    for (int64_t b = 0; b < cfg.batch; ++b) {
      if (paradigm == TrainParadigm::kFull) {
        TaskKind k = sample_task(pick);
        counts[static_cast<int>(k)]++;
        switch (k) {
          case TaskKind::kStre: batch.push_back(style_pairs.next()); break;
          case TaskKind::kSere: batch.push_back(content_pairs.next()); break;
          case TaskKind::kRecon: batch.push_back(recon.next()); break;
        }
      } else {
        counts[static_cast<int>(TaskKind::kRecon)]++;
        batch.push_back(recon.next());
      }
    }
    float loss = train_step(state, batch, model, opt);
    if (step % 25 == 0 || step + 1 == cfg.train_steps)
      log << json{{"phase", "adapter"},
                  {"step", step},
                  {"task_counts",
                   {{"STRE", counts[0]}, {"SERE", counts[1]}, {"RECON", counts[2]}}},
                  {"loss", loss}}
                 .dump()
          << "\n";
  }
}

// ---- stages ----

StageResult run_data_stage(const RunConfig& cfg) {
  std::string dir = stage_dir(cfg, "data");
  if (stage_complete(dir)) return {dir, true};
  fs::create_directories(dir);
  write_config_echo(dir, cfg);
  Vocabulary vocab = load_vocabulary(cfg);
  vocab.save(dir + "/vocab.tsv");
  Rng rng(static_cast<uint64_t>(cfg.seed));
  Rng prompt_rng = rng.fork(11);
  auto prompts = combine_prompts(vocab, static_cast<int>(cfg.styles_per_subject), prompt_rng);
  auto specs = default_style_specs();
  DatasetStore store =
      generate_images(prompts, procedural_generator(specs), static_cast<int>(cfg.images_per_prompt),
                      dir + "/store", rng.fork(10).next_u64());
  store.verify_consistency();
  write_stamp(dir, cfg, "data");
  return {dir, false};
}

StageResult run_train_stage(const RunConfig& cfg) {
  std::string dir = stage_dir(cfg, "train");
  if (stage_complete(dir)) return {dir, true};
  std::string data_dir = stage_dir(cfg, "data");
  if (!stage_complete(data_dir))
    throw PipelineError("train stage needs the data stage artifact at " + data_dir +
                        " (run the data stage first)");
  fs::create_directories(dir);
  write_config_echo(dir, cfg);
  DatasetStore store = DatasetStore::open(data_dir + "/store");
  StyleModel<float> model = build_model(cfg);
  std::ofstream log(dir + "/train_log.jsonl", std::ios::trunc);
  auto specs = default_style_specs();
  warmup_encoders(model, specs, cfg, log);
  pretrain_base(model, specs, cfg, log);
  train_adapters(model, store, cfg, log);
  save_model_checkpoint(dir + "/checkpoint.bin", model, cfg);
  write_stamp(dir, cfg, "train");
  return {dir, false};
}

StageResult run_sample_stage(const RunConfig& cfg) {
  std::string dir = stage_dir(cfg, "sample");
  if (stage_complete(dir)) return {dir, true};
  std::string train_dir = stage_dir(cfg, "train");
  if (!stage_complete(train_dir))
    throw PipelineError("sample stage needs the train stage checkpoint at " + train_dir +
                        "/checkpoint.bin (run the train stage first)");
  fs::create_directories(dir);
  write_config_echo(dir, cfg);
  StyleModel<float> model = build_model(cfg);
  load_model_checkpoint(train_dir + "/checkpoint.bin", model);
  auto specs = default_style_specs();
  Rng rng = Rng(static_cast<uint64_t>(cfg.seed)).fork(15);
  const auto& subjects = model.vocab.subject_words();
  for (int i = 0; i < 4; ++i) {
    const std::string& subject = subjects[static_cast<size_t>(rng.index(int(subjects.size())))];
    const StyleSpec& spec = specs[static_cast<size_t>(rng.index(int(specs.size())))];
    Tensorf ref = procedural_render(subject, spec, rng.next_u64());
    SampleRequest<float> req;
    req.prompt = subjects[static_cast<size_t>(rng.index(int(subjects.size())))];
    req.style_reference = ref;
    req.steps = static_cast<int>(cfg.ddim_steps);
    req.guidance_scale = cfg.cfg;
    req.seed = rng.next_u64();
    Tensorf img = sample(req, model);
    write_bmp(dir + "/ref_" + std::to_string(i) + ".bmp", ref);
    write_bmp(dir + "/sample_" + std::to_string(i) + "_" + req.prompt + ".bmp",
              quantize_to_8bit(img));
  }
  write_stamp(dir, cfg, "sample");
  return {dir, false};
}

StageResult run_eval_stage(const RunConfig& cfg) {
  std::string dir = stage_dir(cfg, "eval");
  if (stage_complete(dir)) return {dir, true};
  std::string train_dir = stage_dir(cfg, "train");
  if (!stage_complete(train_dir))
    throw PipelineError("eval stage needs the train stage checkpoint at " + train_dir +
                        "/checkpoint.bin (run the train stage first)");
  fs::create_directories(dir);
  write_config_echo(dir, cfg);
  StyleModel<float> model = build_model(cfg);
  load_model_checkpoint(train_dir + "/checkpoint.bin", model);
  auto specs = default_style_specs();
  uint64_t seed = static_cast<uint64_t>(cfg.seed);
  OraclePair oracles = train_oracles(model.vocab, specs, Rng(seed).fork(16).next_u64());
  auto cases = build_testset(model.vocab, specs, static_cast<int>(cfg.eval_cases),
                             Rng(seed).fork(17).next_u64());
  DisentanglementReport rep =
      eval_disentanglement(model, cases, oracles, static_cast<int>(cfg.eval_ddim_steps), cfg.cfg,
                           Rng(seed).fork(18).next_u64());
  json j{{"style_similarity", rep.ss},
         {"text_alignment", rep.ta},
         {"image_quality", rep.iq},
         {"style_acc", rep.style_acc},
         {"content_acc", rep.content_acc},
         {"n_samples", rep.n},
         {"oracle_subject_self_acc", oracles.subject_self_accuracy},
         {"oracle_style_self_acc", oracles.style_self_accuracy},
         {"config_fingerprint", cfg.fingerprint_hex()},
         {"paradigm", cfg.paradigm}};
  std::ofstream out(dir + "/report.json", std::ios::trunc);
  out << j.dump(2) << "\n";
  // reference frontier fixture for the figure
  TradeoffCurve curve;
  curve.points = {{0.241, 0.224}, {0.214, 0.260}, {0.184, 0.287}};
  plot_tradeoff(dir + "/tradeoff.bmp", curve, {rep.ss, rep.ta});
  write_stamp(dir, cfg, "eval");
  return {dir, false};
}

int run_pipeline(const std::vector<std::string>& stages, const RunConfig& cfg) {
  std::vector<std::string> canon = {"data", "train", "sample", "eval"};
  for (const auto& s : stages) {
    bool known = false;
    for (const auto& c : canon) known = known || (s == c);
    if (!known) throw PipelineError("unknown stage '" + s + "' (data|train|sample|eval)");
  }
  for (const auto& stage : canon) {
    bool requested = false;
    for (const auto& s : stages) requested = requested || (s == stage);
    if (!requested) continue;
    StageResult r;
    if (stage == "data") r = run_data_stage(cfg);
    else if (stage == "train") r = run_train_stage(cfg);
    else if (stage == "sample") r = run_sample_stage(cfg);
    else r = run_eval_stage(cfg);
    std::cout << "[pipeline] " << stage << (r.skipped ? ": up to date at " : ": wrote ") << r.dir
              << "\n";
  }
  return 0;
}

}  // namespace stylediff
