#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "stylediff/checkpoint.hpp"
#include "stylediff/image_io.hpp"
#include "stylediff/pipeline.hpp"

using namespace stylediff;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// --config <file> plus one flag per config key
void attach_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_file, "config file (key = value lines)");
  for (const auto& key : RunConfig::keys()) {
    cmd->add_option_function<std::string>(
        "--" + key, [&args, key](const std::string& v) { args.overrides.emplace_back(key, v); },
        "override config key " + key);
  }
}

RunConfig resolve(const ConfigArgs& args) {
  RunConfig cfg = parse_config(args.config_file, args.overrides);
  std::cout << "resolved configuration:\n" << cfg.echo();
  return cfg;
}

StyleModel<float> model_from_checkpoint(const std::string& ckpt_path) {
  auto records = read_checkpoint(ckpt_path);
  auto it = records.find("meta.config");
  if (it == records.end())
    throw CheckpointError(ckpt_path + " carries no config snapshot (meta.config)");
  RunConfig cfg = parse_config_text(it->second.as_text());
  StyleModel<float> model = build_model(cfg);
  load_model_checkpoint(ckpt_path, model);
  return model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale stylized diffusion: disentangled style/content conditioning"};
  app.require_subcommand(1);

  // dataset build
  auto* dataset = app.add_subcommand("dataset", "dataset utilities");
  dataset->require_subcommand(1);
  auto* build = dataset->add_subcommand("build", "construct the paired dataset");
  std::string vocab_path, build_out = "dataset";
  int styles_per_subject = 14, images_per_prompt = 4;
  uint64_t build_seed = 1234;
  build->add_option("--vocab", vocab_path, "vocabulary file (word<TAB>class)");
  build->add_option("--styles-per-subject", styles_per_subject, "styles sampled per subject");
  build->add_option("--images-per-prompt", images_per_prompt, "renders per prompt");
  build->add_option("--seed", build_seed, "seed");
  build->add_option("--out", build_out, "output directory")->required();

  // train / run
  auto* train = app.add_subcommand("train", "run the training stage");
  ConfigArgs train_args;
  attach_config_options(train, train_args);

  auto* run = app.add_subcommand("run", "run pipeline stages in canonical order");
  ConfigArgs run_args;
  std::string stages_csv = "data,train,sample,eval";
  run->add_option("--stages", stages_csv, "comma-separated subset of data,train,sample,eval");
  attach_config_options(run, run_args);

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "sample an image from a checkpoint");
  std::string s_model, s_prompt, s_style_ref, s_content_ref, s_mix, s_out = "sample.bmp";
  int s_steps = 50;
  double s_cfg = 8.0;
  uint64_t s_seed = 0;
  sample_cmd->add_option("--model", s_model, "checkpoint path")->required();
  sample_cmd->add_option("--prompt", s_prompt, "text prompt");
  sample_cmd->add_option("--style-ref", s_style_ref, "style reference image (BMP)");
  sample_cmd->add_option("--content-ref", s_content_ref, "content reference image (BMP)");
  sample_cmd->add_option("--mix", s_mix, "second style reference as path:alpha");
  sample_cmd->add_option("--steps", s_steps, "DDIM steps");
  sample_cmd->add_option("--cfg", s_cfg, "classifier-free guidance scale");
  sample_cmd->add_option("--seed", s_seed, "seed");
  sample_cmd->add_option("--out", s_out, "output image path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_model, e_testset, e_out = "eval_report";
  int e_cases = 96, e_steps = 20;
  double e_cfg = 8.0;
  uint64_t e_seed = 1234;
  eval_cmd->add_option("--model", e_model, "checkpoint path")->required();
  eval_cmd->add_option("--testset", e_testset, "testset directory (default: render one)");
  eval_cmd->add_option("--out", e_out, "report output directory")->required();
  eval_cmd->add_option("--cases", e_cases, "number of test cases when rendering a testset");
  eval_cmd->add_option("--steps", e_steps, "DDIM steps per evaluation sample");
  eval_cmd->add_option("--cfg", e_cfg, "guidance scale");
  eval_cmd->add_option("--seed", e_seed, "seed");

  // report
  auto* report_cmd = app.add_subcommand("report", "summarize eval reports and user-study votes");
  std::vector<std::string> r_reports;
  std::string r_votes, r_out;
  report_cmd->add_option("--eval", r_reports, "eval report.json paths");
  report_cmd->add_option("--votes", r_votes, "vote file (JSONL {rater, aspect, method})");
  report_cmd->add_option("--out", r_out, "directory for the trade-off figure");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      Vocabulary vocab = vocab_path.empty() ? default_vocabulary() : Vocabulary::load(vocab_path);
      Rng rng(build_seed);
      Rng prompt_rng = rng.fork(11);
      auto prompts = combine_prompts(vocab, styles_per_subject, prompt_rng);
      auto specs = default_style_specs();
      DatasetStore store = generate_images(prompts, procedural_generator(specs), images_per_prompt,
                                           build_out, rng.fork(10).next_u64());
      vocab.save(build_out + "/vocab.tsv");
      std::cout << "dataset: " << store.records().size() << " records under " << store.root()
                << "\n";
      return 0;
    }
    if (*train) {
      RunConfig cfg = resolve(train_args);
      return run_pipeline({"train"}, cfg);
    }
    if (*run) {
      RunConfig cfg = resolve(run_args);
      std::vector<std::string> stages;
      std::stringstream ss(stages_csv);
      std::string s;
      while (std::getline(ss, s, ','))
        if (!s.empty()) stages.push_back(s);
      return run_pipeline(stages, cfg);
    }
    if (*sample_cmd) {
      StyleModel<float> model = model_from_checkpoint(s_model);
      SampleRequest<float> req;
      req.prompt = s_prompt;
      req.steps = s_steps;
      req.guidance_scale = s_cfg;
      req.seed = s_seed;
      if (!s_style_ref.empty()) req.style_reference = read_bmp(s_style_ref);
      if (!s_content_ref.empty()) req.content_reference = read_bmp(s_content_ref);
      if (!s_mix.empty()) {
        size_t colon = s_mix.rfind(':');
        if (colon == std::string::npos)
          throw ParameterError("--mix expects path:alpha, got '" + s_mix + "'");
        StyleMix<float> mix;
        mix.reference_b = read_bmp(s_mix.substr(0, colon));
        mix.alpha = std::stod(s_mix.substr(colon + 1));
        req.mix = mix;
      }
      Tensorf img = sample(req, model);
      write_bmp(s_out, quantize_to_8bit(img));
      std::cout << "wrote " << s_out << "\n";
      return 0;
    }
    if (*eval_cmd) {
      StyleModel<float> model = model_from_checkpoint(e_model);
      auto specs = default_style_specs();
      OraclePair oracles = train_oracles(model.vocab, specs, Rng(e_seed).fork(16).next_u64());
      std::vector<TestCase> cases =
          e_testset.empty()
              ? build_testset(model.vocab, specs, e_cases, Rng(e_seed).fork(17).next_u64())
              : load_testset(e_testset);
      DisentanglementReport rep =
          eval_disentanglement(model, cases, oracles, e_steps, e_cfg, Rng(e_seed).fork(18).next_u64());
      std::filesystem::create_directories(e_out);
      nlohmann::json j{{"style_similarity", rep.ss},
                       {"text_alignment", rep.ta},
                       {"image_quality", rep.iq},
                       {"style_acc", rep.style_acc},
                       {"content_acc", rep.content_acc},
                       {"n_samples", rep.n},
                       {"oracle_subject_self_acc", oracles.subject_self_accuracy},
                       {"oracle_style_self_acc", oracles.style_self_accuracy}};
      std::ofstream out(e_out + "/report.json", std::ios::trunc);
      out << j.dump(2) << "\n";
      TradeoffCurve curve;
      curve.points = {{0.241, 0.224}, {0.214, 0.260}, {0.184, 0.287}};
      plot_tradeoff(e_out + "/tradeoff.bmp", curve, {rep.ss, rep.ta});
      std::cout << j.dump(2) << "\nwrote " << e_out << "/report.json\n";
      return 0;
    }
    if (*report_cmd) {
      for (const auto& path : r_reports) {
        std::ifstream in(path);
        if (!in) throw PipelineError("cannot open report " + path);
        nlohmann::json j = nlohmann::json::parse(in);
        std::printf("%-40s SS=%.3f IQ=%.3f TA=%.3f", path.c_str(),
                    j.value("style_similarity", 0.0), j.value("image_quality", 0.0),
                    j.value("text_alignment", 0.0));
        if (j.contains("style_acc"))
          std::printf("  style_acc=%.3f content_acc=%.3f", j.value("style_acc", 0.0),
                      j.value("content_acc", 0.0));
        std::printf("\n");
        if (!r_out.empty()) {
          std::filesystem::create_directories(r_out);
          TradeoffCurve curve;
          curve.points = {{0.241, 0.224}, {0.214, 0.260}, {0.184, 0.287}};
          plot_tradeoff(r_out + "/tradeoff.bmp", curve,
                        std::make_pair(j.value("style_similarity", 0.0),
                                       j.value("text_alignment", 0.0)));
        }
      }
      if (!r_votes.empty()) {
        auto votes = load_votes(r_votes);
        TallyTable table = tally_user_study(votes);
        for (const auto& [aspect, rows] : table) {
          std::printf("%s:\n", aspect_name(aspect));
          for (const auto& [method, pct] : rows) std::printf("  %-20s %5.1f%%\n", method.c_str(), pct);
        }
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
