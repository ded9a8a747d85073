#include <CLI11.hpp>
#include <iostream>

#include "mmg/errors.hpp"
#include "mmg/pipeline.hpp"

namespace {

mmg::RunConfig load_config(const std::string& path) {
  if (path.empty()) return mmg::pipeline::default_config();
  return mmg::RunConfig::from_file(path);
}

void apply_overrides(mmg::RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw mmg::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal multi-part motion generation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "config file (TOML-style or JSON)");
  app.add_option("--set", overrides, "override config entries as key=value")->take_all();

  auto* synth = app.add_subcommand("synth-data", "generate the synthetic datasets");

  auto* trainvq = app.add_subcommand("train-vq", "train a part tokenizer");
  std::string part = "torso", modality = "text";
  trainvq->add_option("--part", part, "torso|lhand|rhand")->required();
  trainvq->add_option("--modality", modality, "text|music|speech")->required();

  auto* trainprior = app.add_subcommand("train-prior", "train the motion autoencoder priors");

  auto* trainseq = app.add_subcommand("train-seq", "train the token generator (staged domains)");

  auto* generate = app.add_subcommand("generate", "generate motion from a condition");
  mmg::pipeline::GenerateArgs gen_args;
  generate->add_option("--modality", gen_args.modality, "text|music|speech")->required();
  generate->add_option("--input", gen_args.input, "text sentence, or JSON payload path");
  generate->add_option("--from-dataset", gen_args.from_dataset,
                       "bulk mode: dataset dir supplying conditions");
  generate->add_option("--split", gen_args.split, "bulk mode split filter (default heldout)");
  generate->add_option("--repeats", gen_args.repeats, "bulk mode repeats per condition");
  generate->add_option("--len", gen_args.length_frames, "target length in frames");
  generate->add_option("--sampler", gen_args.sampler, "greedy|multinomial|semantic");
  generate->add_option("--temperature", gen_args.temperature, "softmax temperature");
  generate->add_option("--reweight-temperature", gen_args.reweight_temperature,
                       "semantic reweighting temperature");
  generate->add_option("--seed", gen_args.seed, "sampling seed");
  generate->add_option("--aux", gen_args.aux_id, "auxiliary condition id (speaker)");
  generate->add_flag("--interleaved", gen_args.interleaved,
                     "cross-part conditioning for speech generation");
  generate->add_option("--out", gen_args.out, "output .mot path (single) or directory (bulk)");

  auto* evalcmd = app.add_subcommand("eval", "evaluate generated motion against a reference set");
  std::string task = "t2m", gen_dir, ref_dir, report = "report.json";
  evalcmd->add_option("--task", task, "t2m|m2m|s2m")->required();
  evalcmd->add_option("--gen", gen_dir, "generated dataset dir")->required();
  evalcmd->add_option("--ref", ref_dir, "reference dataset dir")->required();
  evalcmd->add_option("--report", report, "report JSON path");

  auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint");
  std::string ckpt_path;
  inspect->add_option("checkpoint", ckpt_path, "checkpoint file")->required();

  auto* ablate = app.add_subcommand("ablate", "run a direction-of-effect ablation");
  std::string which;
  ablate->add_option("which", which, "reinit|two-stage|seme|sas")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    mmg::RunConfig cfg = load_config(config_path);
    apply_overrides(cfg, overrides);
    if (synth->parsed()) {
      mmg::pipeline::run_synth_data(cfg);
    } else if (trainvq->parsed()) {
      mmg::pipeline::run_train_vq(cfg, part, modality);
    } else if (trainprior->parsed()) {
      mmg::pipeline::run_train_prior(cfg);
    } else if (trainseq->parsed()) {
      mmg::pipeline::run_train_seq(cfg);
    } else if (generate->parsed()) {
      mmg::pipeline::run_generate(cfg, gen_args);
    } else if (evalcmd->parsed()) {
      const auto rep = mmg::pipeline::run_eval(cfg, task, gen_dir, ref_dir, report);
      std::cout << rep.dump(2) << std::endl;
    } else if (inspect->parsed()) {
      std::cout << mmg::pipeline::run_inspect(ckpt_path);
    } else if (ablate->parsed()) {
      const auto summary = mmg::pipeline::run_ablate(cfg, which);
      std::cout << summary.dump(2) << std::endl;
    }
  } catch (const mmg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const mmg::DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return 3;
  } catch (const mmg::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << std::endl;
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
