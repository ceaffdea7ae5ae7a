#pragma once

// Experiment grids: the ablation table (7 variants x data fractions), and the
// annotation-error study (lambda x fractions). Each (config, seed) cell lives
// in runs/<hash>/ under the output root and is skipped when already complete.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtsgl/plot.hpp"
#include "mtsgl/train.hpp"

namespace mtsgl {

struct VariantSpec {
  std::string tasks;
  Mode mode;
};

/// Row order of the ablation table.
inline const std::vector<VariantSpec>& ablation_variants() {
  static const std::vector<VariantSpec> v = {
      {"baseline", Mode::fixed}, {"ssa", Mode::fixed},  {"scr", Mode::fixed},
      {"ssa+scr", Mode::fixed},  {"ssa", Mode::pareto}, {"scr", Mode::pareto},
      {"ssa+scr", Mode::pareto}};
  return v;
}

struct ProtocolConfig {
  std::string suite = "ablation";  // ablation | fraction | corruption
  TrainConfig base;                 // everything not swept
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> fractions{1.0, 0.7, 0.4};
  std::vector<double> lambdas{0.0, 0.1, 0.2, 0.3};
  /// Restricts the ablation/fraction suites to these variant labels. Empty
  /// means all seven rows for ablation, baseline and ssa+scr/pareto for fraction.
  std::vector<std::string> variants;
  std::filesystem::path out_root = "out";
  bool verbose = true;
};

struct CellResult {
  TrainConfig cfg;
  std::string hash;
  double oa = 0;
  std::optional<double> kappa;
  double iou = 0;
  bool reused = false;
  std::vector<double> loss_cls;  // per iteration
  std::vector<std::pair<long, double>> test_oa;
};

/// FNV-1a over the in-memory dataset, so cell hashes change when the data does.
inline std::string dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : ds.templates) mix(t.pixels.data(), t.pixels.size());
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& r : *split) {
      mix(&r.id, sizeof r.id);
      mix(&r.label, sizeof r.label);
      mix(r.image.pixels.data(), r.image.pixels.size());
      mix(r.mask.pixels.data(), r.mask.pixels.size());
      const std::string m = to_string(r.transform);
      mix(m.data(), m.size());
    }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  for (std::string f; std::getline(is, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_metric(const std::string& s) {
  if (s.empty() || s == "nan") return std::nullopt;
  return std::stod(s);
}

/// Reads a finished cell back from disk; false when it is missing or stale.
inline bool load_cell(const std::filesystem::path& dir, CellResult& out) {
  std::ifstream cfg(dir / "config.txt"), ev(dir / "eval.csv"), log(dir / "train_log.csv");
  if (!cfg || !ev || !log || !std::filesystem::exists(dir / "model.ckpt")) return false;
  std::ostringstream os;
  os << cfg.rdbuf();
  if (os.str() != canonical(out.cfg)) return false;
  std::string header, row;
  std::getline(ev, header);
  if (!std::getline(ev, row)) return false;
  const auto f = split_csv_line(row);
  if (f.size() < 5) return false;
  out.oa = std::stod(f[3]);
  out.kappa = parse_metric(f[4]);
  out.iou = std::stod(f.back());
  std::getline(log, header);
  while (std::getline(log, row)) {
    const auto g = split_csv_line(row);
    if (g.size() < 10) return false;
    out.loss_cls.push_back(std::stod(g[1]));
    if (!g[9].empty()) out.test_oa.emplace_back(std::stol(g[0]), std::stod(g[9]));
  }
  return long(out.loss_cls.size()) == out.cfg.iterations;
}

}  // namespace detail

/// Trains one cell unless runs/<hash>/ already holds its results.
inline CellResult run_cell(const TrainConfig& cfg_in, const Dataset& ds,
                           const std::filesystem::path& out_root, const std::string& data_id,
                           bool verbose = true) {
  CellResult res;
  res.cfg = cfg_in;
  res.hash = config_hash(cfg_in, data_id);
  res.cfg.out_dir = out_root / "runs" / res.hash;
  if (detail::load_cell(res.cfg.out_dir, res)) {
    res.reused = true;
    if (verbose)
      std::fprintf(stderr, "[skip] %s seed %llu frac %.2f lambda %.2f (%s)\n",
                   res.cfg.variant().c_str(), static_cast<unsigned long long>(res.cfg.seed),
                   res.cfg.fraction, res.cfg.lambda, res.hash.c_str());
    return res;
  }
  if (verbose)
    std::fprintf(stderr, "[run ] %s seed %llu frac %.2f lambda %.2f (%s)\n",
                 res.cfg.variant().c_str(), static_cast<unsigned long long>(res.cfg.seed),
                 res.cfg.fraction, res.cfg.lambda, res.hash.c_str());
  const RunResult run = train_and_evaluate(res.cfg, ds);
  res.oa = run.test.metrics.oa;
  res.kappa = run.test.metrics.kappa;
  res.iou = run.test.mean_iou;
  // Round-trip through the on-disk form so fresh and reused cells agree exactly.
  CellResult back;
  back.cfg = res.cfg;
  detail::require(detail::load_cell(res.cfg.out_dir, back), "run_cell", "cell ", res.hash,
                  " did not write complete results");
  back.hash = res.hash;
  return back;
}

struct ProtocolResult {
  std::vector<CellResult> cells;
  std::filesystem::path table, cells_csv, plot;
};

namespace detail {

inline std::string pct_label(double f) {
  return std::to_string(static_cast<int>(std::lround(f * 100)));
}

inline std::string lambda_label(double l) {
  std::ostringstream os;
  os << l;
  return os.str();
}

struct Summary {
  double oa = 0;
  std::optional<double> kappa;
};

inline Summary mean_over_seeds(const std::vector<const CellResult*>& cells) {
  Summary s;
  double k = 0;
  bool all_kappa = true;
  for (const auto* c : cells) {
    s.oa += c->oa / double(cells.size());
    if (c->kappa) k += *c->kappa / double(cells.size());
    else all_kappa = false;
  }
  if (all_kappa) s.kappa = k;
  return s;
}

inline void write_cells_csv(const std::filesystem::path& path, const std::string& suite,
                            const std::vector<CellResult>& cells) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "protocol", "cannot write '", path.string(), "'");
  os << "suite,variant,fraction,lambda,seed,hash,oa,kappa,iou\n";
  for (const auto& c : cells)
    os << suite << ',' << c.cfg.variant() << ',' << fmt(c.cfg.fraction, 2) << ','
       << fmt(c.cfg.lambda, 2) << ',' << c.cfg.seed << ',' << c.hash << ','
       << format_metric(c.oa) << ',' << format_metric(c.kappa) << ',' << format_metric(c.iou)
       << '\n';
}

inline std::vector<double> mean_curve(const std::vector<const CellResult*>& cells) {
  std::vector<double> out;
  for (const auto* c : cells) {
    out.resize(std::max(out.size(), c->loss_cls.size()), 0.0);
    for (std::size_t i = 0; i < c->loss_cls.size(); ++i)
      out[i] += c->loss_cls[i] / double(cells.size());
  }
  return out;
}

}  // namespace detail

/// Runs every cell of the suite and writes <suite>.csv, <suite>_cells.csv and
/// <suite>_loss.ppm (mean classification loss per row, smoothed) under out_root.
inline ProtocolResult run_protocol(const ProtocolConfig& pc, const Dataset& ds) {
  detail::require(pc.suite == "ablation" || pc.suite == "fraction" || pc.suite == "corruption",
                  "protocol", "unknown suite '", pc.suite, "'");
  detail::require(!pc.seeds.empty() && !pc.fractions.empty(), "protocol",
                  "need at least one seed and one fraction");
  std::filesystem::create_directories(pc.out_root);
  const std::string data_id = dataset_fingerprint(ds);

  // Rows of the output table, each a list of columns, each averaged over seeds.
  struct Row {
    std::string label;
    std::vector<TrainConfig> columns;
  };
  std::vector<Row> rows;
  std::vector<std::string> column_labels;
  if (pc.suite == "corruption") {
    detail::require(!pc.lambdas.empty(), "protocol", "corruption suite needs lambdas");
    for (double l : pc.lambdas) column_labels.push_back("lambda_" + detail::lambda_label(l));
    for (double f : pc.fractions) {
      Row r{detail::pct_label(f), {}};
      for (double l : pc.lambdas) {
        TrainConfig c = pc.base;
        c.fraction = f;
        c.lambda = l;
        r.columns.push_back(c);
      }
      rows.push_back(std::move(r));
    }
  } else {
    // The fraction suite compares the baseline with the full method across
    // training-set sizes unless variants are named explicitly.
    const std::vector<double>& fractions = pc.fractions;
    std::vector<std::string> wanted = pc.variants;
    if (pc.suite == "fraction" && wanted.empty()) wanted = {"baseline", "ssa+scr/pareto"};
    for (double f : fractions) column_labels.push_back(detail::pct_label(f));
    for (const auto& v : ablation_variants()) {
      TrainConfig c = pc.base;
      c.tasks = v.tasks;
      c.mode = v.mode;
      if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.variant()) == wanted.end())
        continue;
      Row r{c.variant(), {}};
      for (double f : fractions) {
        c.fraction = f;
        r.columns.push_back(c);
      }
      rows.push_back(std::move(r));
    }
    detail::require(!rows.empty(), "protocol", "no variant matched the requested list");
  }

  ProtocolResult out;
  // cell index per (row, column, seed)
  std::vector<std::vector<std::vector<std::size_t>>> index(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    index[r].resize(rows[r].columns.size());
    for (std::size_t k = 0; k < rows[r].columns.size(); ++k)
      for (std::uint64_t seed : pc.seeds) {
        TrainConfig c = rows[r].columns[k];
        c.seed = seed;
        index[r][k].push_back(out.cells.size());
        out.cells.push_back(run_cell(c, ds, pc.out_root, data_id, pc.verbose));
      }
  }

  out.table = pc.out_root / (pc.suite + ".csv");
  out.cells_csv = pc.out_root / (pc.suite + "_cells.csv");
  out.plot = pc.out_root / (pc.suite + "_loss.ppm");
  std::ofstream table(out.table);
  detail::require(static_cast<bool>(table), "protocol", "cannot write '", out.table.string(), "'");
  if (pc.suite == "corruption") {
    table << "fraction,metric";
    for (const auto& l : column_labels) table << ',' << l;
    table << '\n';
  } else {
    table << "variant,ssa,scr,pareto";
    for (const auto& l : column_labels) table << ",oa_" << l << ",kappa_" << l;
    table << '\n';
  }
  std::vector<PlotSeries> series;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<detail::Summary> sums;
    for (std::size_t k = 0; k < rows[r].columns.size(); ++k) {
      std::vector<const CellResult*> cs;
      for (std::size_t i : index[r][k]) cs.push_back(&out.cells[i]);
      sums.push_back(detail::mean_over_seeds(cs));
    }
    if (pc.suite == "corruption") {
      table << rows[r].label << ",oa";
      for (const auto& s : sums) table << ',' << format_metric(s.oa);
      table << '\n' << rows[r].label << ",kappa";
      for (const auto& s : sums) table << ',' << format_metric(s.kappa);
      table << '\n';
    } else {
      const TrainConfig& c = rows[r].columns.front();
      table << rows[r].label << ',' << int(c.uses(kSsa)) << ',' << int(c.uses(kScr)) << ','
            << int(c.tasks != "baseline" && c.mode == Mode::pareto);
      for (const auto& s : sums) table << ',' << format_metric(s.oa) << ',' << format_metric(s.kappa);
      table << '\n';
    }
    // One curve per row, taken from its first column.
    std::vector<const CellResult*> cs;
    for (std::size_t i : index[r][0]) cs.push_back(&out.cells[i]);
    series.push_back({rows[r].label + (pc.suite == "corruption" ? "" : "@" + column_labels[0]),
                      moving_average(detail::mean_curve(cs), 10)});
  }
  detail::write_cells_csv(out.cells_csv, pc.suite, out.cells);
  write_line_plot(out.plot, series);
  return out;
}

}  // namespace mtsgl
