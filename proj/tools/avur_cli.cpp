#include "avur/harness/config.hpp"
#include "avur/harness/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace avur;

namespace {

struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;
  std::string seeds, snrs;
  std::optional<int> nbest, beam, k, layer, threads;
  std::optional<double> lambda;
  bool no_sma = false, no_amf = false, no_vur = false;
  std::string out;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg;
  if (!o.config_file.empty()) apply_config_file(cfg, o.config_file);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.seeds.empty()) set_config_value(cfg, "seeds", o.seeds);
  if (!o.snrs.empty()) set_config_value(cfg, "snrs", o.snrs);
  if (o.nbest) cfg.nbest = *o.nbest;
  if (o.beam) cfg.beam = *o.beam;
  if (o.k) cfg.codebook_k = *o.k;
  if (o.layer) cfg.unit_layer = *o.layer;
  if (o.threads) cfg.threads = *o.threads;
  if (o.lambda) cfg.lambda = *o.lambda;
  if (o.no_sma) cfg.use_sma = false;
  if (o.no_amf) cfg.use_amf = false;
  if (o.no_vur) cfg.use_vur = false;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "runs";
  cfg.validate();
  return cfg;
}

std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.out_dir + "/seed-" + std::to_string(seed);
}

std::string system_name(const ExperimentConfig& cfg) {
  if (!cfg.use_amf) return "audio";
  return cfg.use_sma ? "sma_amf" : "amf";
}

void save_report(const ExperimentConfig& cfg, const ExperimentReport& rep, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/" + name;
  rep.write_csv(path);
  std::cout << rep.to_csv() << "wrote " << path << "\n";
}

void save_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir + "/config.txt", std::ios::binary) << dump_config(cfg);
}

const char* modality(const ExperimentConfig& cfg) { return cfg.use_amf ? "audio-visual" : "audio"; }

void cmd_gen_data(const ExperimentConfig& cfg) {
  for (std::uint64_t seed : cfg.seeds) {
    ToyTaskConfig t = cfg.task;
    t.seed = seed;
    const Dataset ds = gen_dataset(t);
    const std::string dir = seed_dir(cfg, seed) + "/data";
    fs::create_directories(dir);
    for (const auto& [name, split] : {std::pair{"train", &ds.train}, {"dev", &ds.dev}, {"test", &ds.test}}) {
      std::ofstream out(dir + "/" + name + ".tsv", std::ios::binary);
      out << "id\ttokens\tvisemes\n";
      for (const auto& u : *split) {
        out << u.id << "\t";
        for (size_t i = 0; i < u.tokens.size(); ++i) out << (i ? " " : "") << u.tokens[i];
        out << "\t";
        const auto v = t.visemes_of(u.tokens);
        for (size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
        out << "\n";
      }
    }
    std::cout << "seed " << seed << ": " << ds.train.size() << "/" << ds.dev.size() << "/" << ds.test.size()
              << " utterances in " << dir << "\n";
  }
}

void cmd_train_stage1(const ExperimentConfig& cfg) {
  ExperimentReport rep;
  for (std::uint64_t seed : cfg.seeds) {
    SeedData sd = prepare_seed(cfg, seed);
    auto base = pretrain_base_model(cfg, sd);
    Stage1Result s1 = run_stage1(cfg, sd, *base, cfg.use_sma, cfg.use_amf);
    const std::string dir = seed_dir(cfg, seed) + "/" + system_name(cfg);
    write_stage1_lists(dir, s1.lists);
    std::cout << "seed " << seed << ": stage-1 lists in " << dir << "\n";
    for (double snr : cfg.snrs) {
      const std::string cond = condition_name(snr);
      rep.rows.push_back({cond, modality(cfg), "stage1", corpus_wer(s1.lists.test.at(cond), sd), seed});
    }
  }
  save_report(cfg, rep, "stage1_" + system_name(cfg) + ".csv");
}

void cmd_train_stage2(const ExperimentConfig& cfg) {
  if (!cfg.use_vur) throw std::invalid_argument("train-stage2 with --no-vur has nothing to do");
  ExperimentReport rep;
  for (std::uint64_t seed : cfg.seeds) {
    SeedData sd = prepare_seed(cfg, seed);
    const std::string dir = seed_dir(cfg, seed) + "/" + system_name(cfg);
    if (!fs::exists(dir + "/scorer_train.nbest"))
      throw std::runtime_error("no stage-1 lists in " + dir + "; run train-stage1 first");
    const Stage1Lists lists = read_stage1_lists(dir, cfg.snrs);
    InstrumentationCounters counters;
    Stage2Result s2 = run_stage2(cfg, sd, lists, &counters);
    write_stage2_outputs(dir, s2);
    std::cout << "seed " << seed << ": lambda " << s2.lambda << ", " << counters.vur_calls
              << " scorer calls, rescored lists in " << dir << "\n";
    for (double snr : cfg.snrs) {
      const std::string cond = condition_name(snr);
      rep.rows.push_back({cond, modality(cfg), "stage2", corpus_wer(s2.test.at(cond), sd), seed});
    }
  }
  save_report(cfg, rep, "stage2_" + system_name(cfg) + ".csv");
}

void cmd_eval(const ExperimentConfig& cfg) {
  ExperimentReport rep;
  for (std::uint64_t seed : cfg.seeds) {
    SeedData sd = prepare_seed(cfg, seed);
    for (const char* system : {"audio", "sma_amf", "amf"}) {
      const std::string dir = seed_dir(cfg, seed) + "/" + system;
      if (!fs::exists(dir)) continue;
      const char* mod = std::string(system) == "audio" ? "audio" : "audio-visual";
      for (double snr : cfg.snrs) {
        const std::string cond = condition_name(snr);
        const std::string s1 = dir + "/test_" + cond + ".nbest";
        const std::string s2 = dir + "/rescored_test_" + cond + ".nbest";
        if (fs::exists(s1))
          rep.rows.push_back({cond, mod, std::string(system) + "/stage1", corpus_wer(read_nbest_file(s1), sd), seed});
        if (fs::exists(s2))
          rep.rows.push_back({cond, mod, std::string(system) + "/stage2", corpus_wer(read_nbest_file(s2), sd), seed});
      }
    }
  }
  if (rep.rows.empty()) throw std::runtime_error("no N-best lists under " + cfg.out_dir);
  save_report(cfg, rep, "report.csv");
}

void cmd_ablate(const ExperimentConfig& cfg) {
  ArmsOutcome out = run_ablation(cfg);
  for (const auto& c : out.counters)
    std::cout << "seed " << c.seed << " " << to_string(c.arm) << ": sma " << c.sma_calls << " amf " << c.amf_calls
              << " vur " << c.vur_calls << "\n";
  save_report(cfg, out.report, "ablation.csv");
}

void cmd_sweep(const ExperimentConfig& cfg) { save_report(cfg, run_sweep(cfg), "sweep.csv"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual recognition toy pipeline"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config_file, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", o.sets, "extra key=value settings, applied after the config file");
  app.add_option("--seeds", o.seeds, "comma separated seeds");
  app.add_option("--snr", o.snrs, "comma separated conditions, e.g. clean,0,-5");
  app.add_option("-N,--nbest", o.nbest, "N-best list size");
  app.add_option("-B,--beam", o.beam, "beam width");
  app.add_option("-K,--codebook-k", o.k, "visual codebook size");
  app.add_option("-l,--layer", o.layer, "visual encoder layer for units");
  app.add_option("--lambda", o.lambda, "first-pass weight in [0,1]; negative tunes it on dev");
  app.add_flag("--no-sma", o.no_sma, "disable the encoder fusion");
  app.add_flag("--no-amf", o.no_amf, "disable the decoder fusion (audio-only decoding)");
  app.add_flag("--no-vur", o.no_vur, "disable rescoring");
  app.add_option("-o,--out", o.out, "output directory (default runs)");
  app.add_option("-j,--threads", o.threads, "seeds run in parallel");

  std::map<std::string, std::function<void(const ExperimentConfig&)>> commands{
      {"gen-data", cmd_gen_data}, {"train-stage1", cmd_train_stage1}, {"train-stage2", cmd_train_stage2},
      {"eval", cmd_eval}, {"ablate", cmd_ablate}, {"sweep", cmd_sweep}};
  const std::map<std::string, std::string> help{
      {"gen-data", "write the toy splits for each seed"},
      {"train-stage1", "pretrain, train fusion and decode N-best lists"},
      {"train-stage2", "fit units, train the scorer and rescore stage-1 lists"},
      {"eval", "WER report from the N-best files under the output directory"},
      {"ablate", "full / w/o rescoring / encoder fusion only / decoder fusion + rescoring"},
      {"sweep", "rescoring WER over unit layer x codebook size"}};
  for (const auto& [name, fn] : commands) app.add_subcommand(name, help.at(name))->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    const ExperimentConfig cfg = resolve(o);
    save_config(cfg);
    for (auto* sub : app.get_subcommands()) commands.at(sub->get_name())(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
