// Command-line driver: synth, train, eval, infer, protocol.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mtsgl/protocol.hpp"
#include "mtsgl/train.hpp"

namespace fs = std::filesystem;
using namespace mtsgl;

namespace {

/// Relative paths land under $MTSGL_OUT_ROOT when it is set.
fs::path under_root(const fs::path& p) {
  const char* root = std::getenv("MTSGL_OUT_ROOT");
  if (!root || !*root || p.is_absolute()) return p;
  return fs::path(root) / p;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::istringstream is(s);
  for (std::string tok; std::getline(is, tok, ',');) {
    std::istringstream ts(tok);
    T v{};
    ts >> v;
    detail::require(ts && ts.eof(), "mtsgl", "bad ", what, " entry '", tok, "' in '", s, "'");
    out.push_back(v);
  }
  detail::require(!out.empty(), "mtsgl", "empty ", what, " list");
  return out;
}

/// Training flags, recorded as key=value pairs and applied after any config
/// file so the command line wins.
struct TrainFlags {
  std::vector<std::pair<std::string, std::string>> values;
  std::string config_file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value file applied before the flags");
    app->add_option("--set", sets, "extra key=value setting (repeatable)");
    static const char* keys[] = {"tasks",  "mode",  "w_cls",  "w_ssa",    "w_scr",  "lr",
                                 "weight_decay", "iterations", "batch", "fraction", "lambda",
                                 "seed",   "phi",   "eval_every", "depth", "blocks", "data"};
    for (const char* k : keys) {
      std::string flag = std::string("--") + k;
      for (auto& ch : flag)
        if (ch == '_') ch = '-';
      app->add_option_function<std::string>(
          flag, [this, k](const std::string& v) { values.emplace_back(k, v); },
          std::string("TrainConfig.") + k);
    }
  }

  void apply(TrainConfig& c) const {
    if (!config_file.empty()) load_config_file(c, config_file);
    for (const auto& [k, v] : values) set_option(c, k, v);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      detail::require(eq != std::string::npos, "mtsgl", "--set expects key=value, got '", kv, "'");
      set_option(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
  }
};

Dataset load_data(const fs::path& dir) {
  detail::require(fs::exists(dir / "classes.txt"), "mtsgl", "no dataset at '", dir.string(),
                  "'; run `mtsgl synth --out ", dir.string(), "` first");
  return load_dataset(dir);
}

void write_eval(const fs::path& path, const Evaluation& ev, const std::string& split,
                std::uint64_t seed, const std::string& variant, std::size_t classes) {
  std::ofstream os(path);
  detail::require(static_cast<bool>(os), "mtsgl", "cannot write '", path.string(), "'");
  os << metrics_csv_header(classes) << ",iou\n"
     << metrics_csv_row(split, seed, variant, ev.metrics) << "," << format_metric(ev.mean_iou)
     << "\n";
  auto cm_path = path;
  cm_path.replace_extension();
  cm_path += "_confusion.csv";
  std::ofstream cm(cm_path);
  cm << "truth";
  for (std::size_t c = 0; c < classes; ++c) cm << ",pred_" << c;
  cm << "\n";
  for (std::size_t t = 0; t < classes; ++t) {
    cm << t;
    for (std::size_t p = 0; p < classes; ++p) cm << "," << ev.cm(t, p);
    cm << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtsgl: structure-guided multi-task training on synthetic SAR aircraft"};
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "render the synthetic dataset to disk");
  std::string synth_out = "data";
  std::uint64_t synth_seed = 1;
  std::string synth_counts;
  double synth_train_fraction = 0.6;
  synth->add_option("--out", synth_out, "dataset directory")->capture_default_str();
  synth->add_option("--seed", synth_seed, "dataset seed")->capture_default_str();
  synth->add_option("--counts", synth_counts, "samples per class, comma separated");
  synth->add_option("--train-fraction", synth_train_fraction, "train share per class")
      ->capture_default_str();

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train one configuration");
  TrainFlags train_flags;
  train_flags.attach(train);
  std::string train_out = "run";
  train->add_option("--out", train_out, "run directory")->capture_default_str();

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data = "data", eval_split = "test", eval_out;
  bool eval_evidence = true;
  eval->add_option("--checkpoint", eval_ckpt, "model.ckpt")->required();
  eval->add_option("--data", eval_data, "dataset directory")->capture_default_str();
  eval->add_option("--split", eval_split, "train or test")->capture_default_str();
  eval->add_option("--out", eval_out, "metrics CSV (default: next to the checkpoint)");
  eval->add_flag("!--no-evidence", eval_evidence, "skip decoder masks and IoU");

  // infer ------------------------------------------------------------------
  auto* infer = app.add_subcommand("infer", "classify one PGM image");
  std::string infer_ckpt, infer_image, infer_evidence;
  infer->add_option("--checkpoint", infer_ckpt, "model.ckpt")->required();
  infer->add_option("--image", infer_image, "8-bit PGM")->required();
  infer->add_option("--evidence", infer_evidence, "write the decoder's foreground mask here");

  // protocol ---------------------------------------------------------------
  auto* proto = app.add_subcommand("protocol", "run an experiment grid");
  TrainFlags proto_flags;
  proto_flags.attach(proto);
  std::string proto_suite = "ablation", proto_out = "out", proto_seeds = "1,2,3";
  std::string proto_fractions, proto_lambdas, proto_variants;
  proto->add_option("--suite", proto_suite, "ablation | fraction | corruption")
      ->check(CLI::IsMember({"ablation", "fraction", "corruption"}))
      ->capture_default_str();
  proto->add_option("--out", proto_out, "output root for runs/ and tables")->capture_default_str();
  proto->add_option("--seeds", proto_seeds, "comma separated")->capture_default_str();
  proto->add_option("--fractions", proto_fractions, "default 1.0,0.7,0.4 (corruption: 1.0)");
  proto->add_option("--lambdas", proto_lambdas, "default 0,0.1,0.2,0.3");
  proto->add_option("--variants", proto_variants, "e.g. baseline,ssa+scr/pareto");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      DatasetConfig dc;
      dc.seed = synth_seed;
      dc.train_fraction = synth_train_fraction;
      if (!synth_counts.empty()) dc.counts = parse_list<int>(synth_counts, "count");
      const fs::path out = under_root(synth_out);
      const Dataset ds = build_dataset(dc);
      write_dataset(out, ds);
      std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size() << " test to "
                << out.string() << "\n";
    } else if (*train) {
      TrainConfig cfg;
      train_flags.apply(cfg);
      cfg.out_dir = under_root(train_out);
      cfg.data_dir = under_root(cfg.data_dir);
      const Dataset ds = load_data(cfg.data_dir);
      const RunResult r = train_and_evaluate(cfg, ds);
      std::cout << cfg.variant() << " seed " << cfg.seed << ": test OA "
                << format_metric(r.test.metrics.oa) << " kappa "
                << format_metric(r.test.metrics.kappa) << " iou " << format_metric(r.test.mean_iou)
                << "\n";
    } else if (*eval) {
      const fs::path ckpt = under_root(eval_ckpt);
      detail::require(eval_split == "train" || eval_split == "test", "mtsgl", "unknown split '",
                      eval_split, "'");
      const Model m = load_checkpoint(ckpt);
      const Dataset ds = load_data(under_root(eval_data));
      // Label rows with the run's variant and seed when its config sits alongside.
      TrainConfig run;
      std::string variant = "checkpoint";
      if (fs::exists(ckpt.parent_path() / "config.txt")) {
        load_config_file(run, ckpt.parent_path() / "config.txt");
        variant = run.variant();
      }
      const Evaluation ev =
          evaluate(m, eval_split == "train" ? ds.train : ds.test, eval_evidence);
      const fs::path out = eval_out.empty() ? ckpt.parent_path() / ("eval_" + eval_split + ".csv")
                                            : under_root(eval_out);
      write_eval(out, ev, eval_split, run.seed, variant, m.cfg.classes);
      std::cout << variant << " " << eval_split << ": OA " << format_metric(ev.metrics.oa)
                << " kappa " << format_metric(ev.metrics.kappa) << " -> " << out.string() << "\n";
    } else if (*infer) {
      const Model m = load_checkpoint(under_root(infer_ckpt));
      const GrayImage img = read_pgm(infer_image);
      const Prediction p = predict(m, {&img}, !infer_evidence.empty()).front();
      std::cout << "class " << p.label << "\nscores";
      for (double s : p.scores) std::cout << " " << fmt(s, 6);
      std::cout << "\n";
      if (!infer_evidence.empty()) write_pgm(infer_evidence, mask_to_gray(p.evidence));
    } else if (*proto) {
      ProtocolConfig pc;
      pc.suite = proto_suite;
      proto_flags.apply(pc.base);
      pc.base.data_dir = under_root(pc.base.data_dir);
      pc.out_root = under_root(proto_out);
      pc.seeds = parse_list<std::uint64_t>(proto_seeds, "seed");
      if (pc.suite == "corruption") pc.fractions = {1.0};
      if (!proto_fractions.empty()) pc.fractions = parse_list<double>(proto_fractions, "fraction");
      if (!proto_lambdas.empty()) pc.lambdas = parse_list<double>(proto_lambdas, "lambda");
      if (!proto_variants.empty()) pc.variants = parse_list<std::string>(proto_variants, "variant");
      const Dataset ds = load_data(pc.base.data_dir);
      const ProtocolResult r = run_protocol(pc, ds);
      std::ifstream table(r.table);
      std::cout << table.rdbuf();
      std::cout << "tables: " << r.table.string() << ", " << r.cells_csv.string()
                << "\nplot: " << r.plot.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
