#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dbf/analysis.hpp"
#include "dbf/checkpoint.hpp"
#include "dbf/config.hpp"
#include "dbf/data.hpp"
#include "dbf/metrics.hpp"
#include "dbf/model.hpp"
#include "dbf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Generator config: GenSpec fields plus the three split sizes. The splits
// are cut from one generated pool so they share the planted structure.
struct SynthConfig {
  dbf::GenSpec gen;
  size_t n_train = 512;
  size_t n_val = 128;
  size_t n_test = 128;
};

SynthConfig parse_synth_config(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw dbf::ConfigError(origin + ": invalid JSON: " + e.what());
  }
  if (!root.is_object()) throw dbf::ConfigError(origin + ": config must be a JSON object");
  SynthConfig cfg;
  auto count = [&](const json& v, const std::string& key) -> size_t {
    if (v.is_number_unsigned()) return v.get<size_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<size_t>();
    throw dbf::ConfigError(origin + ": key '" + key + "' must be a nonnegative integer");
  };
  auto num = [&](const json& v, const std::string& key) -> double {
    if (!v.is_number()) throw dbf::ConfigError(origin + ": key '" + key + "' must be a number");
    return v.get<double>();
  };
  for (const auto& [key, value] : root.items()) {
    if (key == "l_t") cfg.gen.l_t = count(value, key);
    else if (key == "d_t") cfg.gen.d_t = count(value, key);
    else if (key == "l_v") cfg.gen.l_v = count(value, key);
    else if (key == "d_v") cfg.gen.d_v = count(value, key);
    else if (key == "l_a") cfg.gen.l_a = count(value, key);
    else if (key == "d_a") cfg.gen.d_a = count(value, key);
    else if (key == "redundancy_factor") cfg.gen.redundancy_factor = num(value, key);
    else if (key == "frame_noise_dims") cfg.gen.frame_noise_dims = count(value, key);
    else if (key == "misalignment_shift") cfg.gen.misalignment_shift = count(value, key);
    else if (key == "w_t") cfg.gen.w_t = num(value, key);
    else if (key == "w_v") cfg.gen.w_v = num(value, key);
    else if (key == "w_a") cfg.gen.w_a = num(value, key);
    else if (key == "seed") cfg.gen.seed = count(value, key);
    else if (key == "n_train") cfg.n_train = count(value, key);
    else if (key == "n_val") cfg.n_val = count(value, key);
    else if (key == "n_test") cfg.n_test = count(value, key);
    else throw dbf::ConfigError(origin + ": unknown config key '" + key + "'");
  }
  return cfg;
}

void apply_synth_override(SynthConfig& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw dbf::ConfigError("override must look like key=value, got '" + assignment + "'");
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  json one = json::parse("{\"" + key + "\":" + value + "}", nullptr, false);
  if (one.is_discarded())
    throw dbf::ConfigError("override '" + key + "': cannot parse value '" + value + "'");
  // Route through the JSON parser so key and type validation stay in one place,
  // then copy the lone field onto the running config.
  SynthConfig fresh = parse_synth_config(one.dump(), "override '" + key + "'");
  if (key == "l_t") cfg.gen.l_t = fresh.gen.l_t;
  else if (key == "d_t") cfg.gen.d_t = fresh.gen.d_t;
  else if (key == "l_v") cfg.gen.l_v = fresh.gen.l_v;
  else if (key == "d_v") cfg.gen.d_v = fresh.gen.d_v;
  else if (key == "l_a") cfg.gen.l_a = fresh.gen.l_a;
  else if (key == "d_a") cfg.gen.d_a = fresh.gen.d_a;
  else if (key == "redundancy_factor") cfg.gen.redundancy_factor = fresh.gen.redundancy_factor;
  else if (key == "frame_noise_dims") cfg.gen.frame_noise_dims = fresh.gen.frame_noise_dims;
  else if (key == "misalignment_shift")
    cfg.gen.misalignment_shift = fresh.gen.misalignment_shift;
  else if (key == "w_t") cfg.gen.w_t = fresh.gen.w_t;
  else if (key == "w_v") cfg.gen.w_v = fresh.gen.w_v;
  else if (key == "w_a") cfg.gen.w_a = fresh.gen.w_a;
  else if (key == "seed") cfg.gen.seed = fresh.gen.seed;
  else if (key == "n_train") cfg.n_train = fresh.n_train;
  else if (key == "n_val") cfg.n_val = fresh.n_val;
  else if (key == "n_test") cfg.n_test = fresh.n_test;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dbf::IoError("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw dbf::IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw dbf::IoError("write failed: " + path);
}

dbf::Dataset load_split(const fs::path& data_dir, const char* name) {
  return dbf::read_jsonl((data_dir / (std::string(name) + ".jsonl")).string());
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw dbf::ConfigError("--seeds: expected comma-separated integers, got '" + text + "'");
    }
  }
  if (seeds.empty()) throw dbf::ConfigError("--seeds: no seeds given");
  return seeds;
}

std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

struct SynthArgs {
  std::string config_path, out_dir;
  long long seed = -1;
  std::vector<std::string> overrides;
};

void cmd_synth(const SynthArgs& args) {
  SynthConfig cfg = parse_synth_config(slurp(args.config_path), args.config_path);
  for (const std::string& ov : args.overrides) apply_synth_override(cfg, ov);
  if (args.seed >= 0) cfg.gen.seed = static_cast<uint64_t>(args.seed);

  cfg.gen.n_samples = cfg.n_train + cfg.n_val + cfg.n_test;
  dbf::Dataset pool = dbf::generate(cfg.gen);
  fs::create_directories(args.out_dir);

  auto cut = [&](size_t begin, size_t count) {
    dbf::Dataset part;
    part.dims = pool.dims;
    part.samples.assign(pool.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                        pool.samples.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return part;
  };
  dbf::write_jsonl(cut(0, cfg.n_train), (fs::path(args.out_dir) / "train.jsonl").string());
  dbf::write_jsonl(cut(cfg.n_train, cfg.n_val),
                   (fs::path(args.out_dir) / "val.jsonl").string());
  dbf::write_jsonl(cut(cfg.n_train + cfg.n_val, cfg.n_test),
                   (fs::path(args.out_dir) / "test.jsonl").string());
  std::cout << "wrote " << cfg.n_train << "/" << cfg.n_val << "/" << cfg.n_test
            << " samples to " << args.out_dir << "\n";
}

struct TrainArgs {
  std::string config_path, data_dir, out_dir;
  long long seed = -1;
  std::vector<std::string> overrides;
};

dbf::TrainConfig load_cli_train_config(const std::string& path, long long seed,
                                       const std::vector<std::string>& overrides) {
  dbf::TrainConfig cfg = dbf::load_train_config(path);
  for (const std::string& ov : overrides) dbf::apply_override(cfg, ov);
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  cfg.validate();
  return cfg;
}

void cmd_train(const TrainArgs& args) {
  dbf::TrainConfig cfg = load_cli_train_config(args.config_path, args.seed, args.overrides);
  fs::path data(args.data_dir);
  dbf::Dataset train_set = load_split(data, "train");
  dbf::Dataset val_set = load_split(data, "val");
  dbf::Dataset test_set = load_split(data, "test");

  fs::create_directories(args.out_dir);
  fs::path out(args.out_dir);
  dbf::TrainResult result = dbf::train(cfg, train_set, val_set, test_set,
                                       (out / "model.ckpt").string());

  std::ostringstream log;
  for (const std::string& line : result.log_lines) log << line << "\n";
  log << "best_epoch " << result.best_epoch << "\n";
  write_text((out / "train_log.txt").string(), log.str());

  std::ostringstream metrics;
  auto emit = [&](const char* split, const dbf::MetricsReport& r) {
    std::istringstream lines(dbf::format_metrics(r));
    std::string line;
    while (std::getline(lines, line)) metrics << split << "." << line << "\n";
  };
  emit("train", result.train_metrics);
  emit("val", result.val_metrics);
  emit("test", result.test_metrics);
  write_text((out / "metrics.txt").string(), metrics.str());
  std::cout << "test_mae " << dbf::format_double(result.test_metrics.mae) << " test_corr "
            << dbf::format_double(result.test_metrics.corr) << "\n";
}

struct EvalArgs {
  std::string checkpoint, data_file, out_dir;
};

void cmd_eval(const EvalArgs& args) {
  dbf::DbfModel model = dbf::load_checkpoint(args.checkpoint);
  dbf::Dataset ds = dbf::read_jsonl(args.data_file);
  if (!(ds.dims == model.dims))
    throw dbf::ConfigError("eval: dataset dims do not match the checkpoint");
  dbf::MetricsReport report = dbf::compute_metrics(dbf::model_predict(model, ds), ds.labels());
  fs::create_directories(args.out_dir);
  write_text((fs::path(args.out_dir) / "metrics.txt").string(), dbf::format_metrics(report));
  std::cout << dbf::format_metrics(report);
}

struct AblateArgs {
  std::string config_path, data_dir, out_dir, seeds = "1,2,3,4,5";
  std::vector<std::string> overrides;
};

void cmd_ablate(const AblateArgs& args) {
  dbf::TrainConfig cfg = load_cli_train_config(args.config_path, -1, args.overrides);
  std::vector<uint64_t> seeds = parse_seed_list(args.seeds);
  fs::path data(args.data_dir);
  dbf::Dataset train_set = load_split(data, "train");
  dbf::Dataset val_set = load_split(data, "val");
  dbf::Dataset test_set = load_split(data, "test");

  fs::create_directories(fs::path(args.out_dir) / "checkpoints");
  std::vector<dbf::AblationCell> cells =
      dbf::run_ablation_matrix(cfg, train_set, val_set, test_set, seeds,
                               (fs::path(args.out_dir) / "checkpoints").string());

  std::ostringstream tsv;
  tsv << "config\tmae\tcorr\tacc7\tacc2_neg_nonneg\tacc2_neg_pos\tf1_neg_nonneg\t"
         "f1_neg_pos\truns_ok\tstatus\n";
  for (const dbf::AblationCell& c : cells) {
    tsv << c.label << "\t" << dbf::format_double(c.median_test.mae) << "\t"
        << dbf::format_double(c.median_test.corr) << "\t"
        << dbf::format_double(c.median_test.acc7) << "\t"
        << dbf::format_double(c.median_test.acc2_neg_nonneg) << "\t"
        << dbf::format_double(c.median_test.acc2_neg_pos) << "\t"
        << dbf::format_double(c.median_test.f1_neg_nonneg) << "\t"
        << dbf::format_double(c.median_test.f1_neg_pos) << "\t" << c.per_seed.size() << "\t"
        << (c.failed ? "failed: " + sanitize_cell(c.error) : std::string("ok")) << "\n";
  }
  write_text((fs::path(args.out_dir) / "ablation.tsv").string(), tsv.str());
  std::cout << tsv.str();
}

struct AttnArgs {
  std::string checkpoint, data_file, out_dir, label;
  long layer = -1;
};

void cmd_attn_stats(const AttnArgs& args) {
  dbf::DbfModel model = dbf::load_checkpoint(args.checkpoint);
  dbf::Dataset ds = dbf::read_jsonl(args.data_file);
  if (!(ds.dims == model.dims))
    throw dbf::ConfigError("attn-stats: dataset dims do not match the checkpoint");
  std::string label = args.label.empty()
                          ? (model.config.ablation.bottleneck_on ? "bottleneck" : "vanilla")
                          : args.label;
  dbf::SharpnessReport report = dbf::analyze_attention(model, ds, label, args.layer);
  fs::create_directories(args.out_dir);
  write_text((fs::path(args.out_dir) / "sharpness.txt").string(),
             dbf::format_sharpness(report));
  std::ostringstream tsv;
  tsv << "frame\tweight\n";
  for (size_t i = 0; i < report.mean_saliency.size(); ++i)
    tsv << i << "\t" << dbf::format_double(report.mean_saliency[i]) << "\n";
  write_text((fs::path(args.out_dir) / "saliency.tsv").string(), tsv.str());
  std::cout << "label " << report.label << " std_dev "
            << dbf::format_double(report.mean_stats.std_dev) << " norm_entropy "
            << dbf::format_double(report.mean_stats.norm_entropy) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"denoising bottleneck fusion: synthetic data, training, ablations, "
               "attention statistics"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "generate a synthetic dataset (train/val/test)");
  s->add_option("--config", synth.config_path, "generator config JSON")->required();
  s->add_option("--out", synth.out_dir, "output directory")->required();
  s->add_option("--seed", synth.seed, "override the generator seed");
  s->add_option("overrides", synth.overrides, "key=value overrides");

  TrainArgs train_args;
  CLI::App* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", train_args.config_path, "training config JSON")->required();
  t->add_option("--data", train_args.data_dir, "directory with train/val/test.jsonl")
      ->required();
  t->add_option("--out", train_args.out_dir, "output directory")->required();
  t->add_option("--seed", train_args.seed, "override the training seed");
  t->add_option("overrides", train_args.overrides, "key=value overrides");

  EvalArgs eval_args;
  CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  e->add_option("--data", eval_args.data_file, "dataset JSONL file")->required();
  e->add_option("--out", eval_args.out_dir, "output directory")->required();

  AblateArgs ablate_args;
  CLI::App* a = app.add_subcommand("ablate", "run the 8-row ablation matrix");
  a->add_option("--config", ablate_args.config_path, "training config JSON")->required();
  a->add_option("--data", ablate_args.data_dir, "directory with train/val/test.jsonl")
      ->required();
  a->add_option("--out", ablate_args.out_dir, "output directory")->required();
  a->add_option("--seeds", ablate_args.seeds, "comma-separated seeds (default 1,2,3,4,5)");
  a->add_option("overrides", ablate_args.overrides, "key=value overrides");

  AttnArgs attn_args;
  CLI::App* at = app.add_subcommand("attn-stats", "attention sharpness statistics");
  at->add_option("--checkpoint", attn_args.checkpoint, "checkpoint file")->required();
  at->add_option("--data", attn_args.data_file, "dataset JSONL file")->required();
  at->add_option("--out", attn_args.out_dir, "output directory")->required();
  at->add_option("--layer", attn_args.layer, "fusion layer index (default: final)");
  at->add_option("--label", attn_args.label, "run label in the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 1;
  }

  try {
    if (s->parsed()) cmd_synth(synth);
    else if (t->parsed()) cmd_train(train_args);
    else if (e->parsed()) cmd_eval(eval_args);
    else if (a->parsed()) cmd_ablate(ablate_args);
    else if (at->parsed()) cmd_attn_stats(attn_args);
  } catch (const dbf::ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
