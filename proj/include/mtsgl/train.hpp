#pragma once

// Multi-task training and inference.
//
// Each iteration runs one forward pass and one backward pass per active task
// loss over the same tape. The encoder moves along a combination of the
// per-task encoder gradients (min-norm simplex weights in pareto mode, fixed
// weights otherwise); every head moves along the gradient of its own loss.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtsgl/losses.hpp"
#include "mtsgl/metrics.hpp"
#include "mtsgl/model.hpp"
#include "mtsgl/optim.hpp"
#include "mtsgl/pareto.hpp"
#include "mtsgl/synthdata.hpp"

namespace mtsgl {

enum Task : std::size_t { kCls = 0, kSsa = 1, kScr = 2 };
inline constexpr std::size_t kTasks = 3;
inline constexpr const char* kTaskNames[kTasks] = {"cls", "ssa", "scr"};

enum class Mode { fixed, pareto };

struct TrainConfig {
  std::string tasks = "ssa+scr";  // baseline | ssa | scr | ssa+scr
  Mode mode = Mode::pareto;
  double w_cls = 1, w_ssa = 3, w_scr = 3;
  double lr = 1e-3;
  double weight_decay = 0.05;
  long iterations = 600;
  std::size_t batch = 16;
  double fraction = 1.0;
  double lambda = 0.0;
  std::uint64_t seed = 1;
  double phi = 1.0;
  long eval_every = 0;  // 0: evaluate only after the last iteration
  NetConfig net{};

  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "run";

  bool uses(Task t) const {
    if (t == kCls) return true;
    const bool ssa = tasks == "ssa" || tasks == "ssa+scr";
    const bool scr = tasks == "scr" || tasks == "ssa+scr";
    return t == kSsa ? ssa : scr;
  }
  /// Table row label, e.g. "baseline", "ssa+scr/pareto".
  std::string variant() const {
    if (tasks == "baseline") return "baseline";
    return tasks + (mode == Mode::pareto ? "/pareto" : "/fixed");
  }
  double weight(Task t) const { return t == kCls ? w_cls : t == kSsa ? w_ssa : w_scr; }

  void validate() const {
    detail::require(tasks == "baseline" || tasks == "ssa" || tasks == "scr" || tasks == "ssa+scr",
                    "TrainConfig", "unknown task set '", tasks, "'");
    detail::require(iterations >= 1 && batch >= 1, "TrainConfig", "iterations ", iterations,
                    " and batch ", batch, " must be positive");
    detail::require(fraction > 0 && fraction <= 1, "TrainConfig", "data fraction ", fraction,
                    " outside (0, 1]");
    detail::require(lambda >= 0 && lambda < 1, "TrainConfig", "error factor ", lambda,
                    " outside [0, 1)");
    detail::require(lr > 0 && weight_decay >= 0 && phi >= 0, "TrainConfig", "bad lr ", lr,
                    ", weight decay ", weight_decay, " or phi ", phi);
    if (mode == Mode::fixed)
      detail::require(w_cls >= 0 && w_ssa >= 0 && w_scr >= 0, "TrainConfig",
                      "fixed weights must be non-negative");
    net.validate();
  }
};

inline std::string mode_name(Mode m) { return m == Mode::pareto ? "pareto" : "fixed"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "pareto") return Mode::pareto;
  if (s == "fixed") return Mode::fixed;
  detail::fail("parse_mode", "unknown mode '", s, "' (expected fixed or pareto)");
}

/// Every field except paths, one key=value per line, in a fixed order. Two
/// configs with the same string train identically.
inline std::string canonical(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "tasks=" << c.tasks << "\nmode=" << mode_name(c.mode);
  if (c.mode == Mode::fixed)
    os << "\nw_cls=" << c.w_cls << "\nw_ssa=" << c.w_ssa << "\nw_scr=" << c.w_scr;
  os << "\nlr=" << c.lr << "\nweight_decay=" << c.weight_decay << "\niterations=" << c.iterations
     << "\nbatch=" << c.batch << "\nfraction=" << c.fraction << "\nlambda=" << c.lambda
     << "\nseed=" << c.seed << "\nphi=" << c.phi << "\neval_every=" << c.eval_every
     << "\nheight=" << c.net.height << "\nwidth=" << c.net.width << "\nstride=" << c.net.stride
     << "\ndepth=" << c.net.depth << "\nclasses=" << c.net.classes << "\npatch=" << c.net.patch
     << "\nblocks=" << c.net.blocks << "\n";
  return os.str();
}

/// FNV-1a over the canonical form, as 16 hex digits.
inline std::string config_hash(const TrainConfig& c, const std::string& salt = "") {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical(c) + salt) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Applies one key=value setting. Unknown keys are rejected.
inline void set_option(TrainConfig& c, const std::string& key, const std::string& value) {
  auto num = [&] {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used == value.size()) return v;
    } catch (const std::logic_error&) {
    }
    detail::fail("TrainConfig", "value '", value, "' for '", key, "' is not a number");
  };
  auto count = [&] {
    const double v = num();
    detail::require(v >= 0 && v == std::floor(v), "TrainConfig", "'", key,
                    "' needs a non-negative integer, got ", value);
    return static_cast<std::size_t>(v);
  };
  if (key == "tasks") c.tasks = value;
  else if (key == "mode") c.mode = parse_mode(value);
  else if (key == "w_cls") c.w_cls = num();
  else if (key == "w_ssa") c.w_ssa = num();
  else if (key == "w_scr") c.w_scr = num();
  else if (key == "lr") c.lr = num();
  else if (key == "weight_decay") c.weight_decay = num();
  else if (key == "iterations") c.iterations = static_cast<long>(count());
  else if (key == "batch") c.batch = count();
  else if (key == "fraction") c.fraction = num();
  else if (key == "lambda") c.lambda = num();
  else if (key == "seed") c.seed = count();
  else if (key == "phi") c.phi = num();
  else if (key == "eval_every") c.eval_every = static_cast<long>(count());
  else if (key == "height") c.net.height = count();
  else if (key == "width") c.net.width = count();
  else if (key == "stride") c.net.stride = count();
  else if (key == "depth") c.net.depth = count();
  else if (key == "classes") c.net.classes = count();
  else if (key == "patch") c.net.patch = count();
  else if (key == "blocks") c.net.blocks = count();
  else if (key == "data") c.data_dir = value;
  else if (key == "out") c.out_dir = value;
  else detail::fail("TrainConfig", "unknown option '", key, "'");
}

/// key=value lines; '#' starts a comment; blank lines are ignored.
inline void load_config_file(TrainConfig& c, const std::filesystem::path& path) {
  std::ifstream is(path);
  detail::require(static_cast<bool>(is), "load_config_file", "cannot open '", path.string(), "'");
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    detail::require(eq != std::string::npos, "load_config_file", path.string(), ":", lineno,
                    ": expected key=value");
    set_option(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

// ---------------------------------------------------------------------------

/// Training samples after subsetting and corruption, with per-sample targets.
struct PreparedSample {
  const AnnotationRecord* source = nullptr;
  AnnotationRecord annotation;  // possibly corrupted
  SegTarget seg;
  ConsistencyMask mst, mts;
};

/// Per class, the first ceil(fraction * n) samples of a seeded shuffle, so
/// smaller fractions are subsets of larger ones under the same seed.
inline std::vector<std::size_t> fraction_subset(const std::vector<AnnotationRecord>& recs,
                                                std::size_t classes, double fraction,
                                                std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    detail::require(recs[i].label >= 0 && std::size_t(recs[i].label) < classes,
                    "fraction_subset", "record ", recs[i].id, " has label ", recs[i].label);
    by_class[std::size_t(recs[i].label)].push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = by_class[c];
    Rng rng(derive_seed(seed, c, 0xF7AC));
    rng.shuffle(idx.begin(), idx.end());
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * double(idx.size()) - 1e-9));
    idx.resize(std::min(idx.size(), keep));
    out.insert(out.end(), idx.begin(), idx.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct StepRecord {
  long iteration = 0;
  std::array<double, kTasks> loss{};
  std::array<bool, kTasks> active{};
  /// Weight of each task in the encoder direction (0 for inactive tasks).
  std::array<double, kTasks> weight{};
  SolveMethod method = SolveMethod::closed_form;
  bool scr_empty = false;
  double batch_accuracy = 0;
  /// Encoder gradients of the active tasks in task order, and the sum
  /// actually handed to the optimizer.
  std::vector<std::vector<double>> encoder_grads;
  std::vector<double> direction;
  /// Head gradients per task (empty for inactive tasks).
  std::array<std::vector<double>, kTasks> head_grads;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& ds)
      : cfg_(cfg), ds_(ds), model_(make_model(cfg.net, cfg.seed)),
        enc_opt_(model_.encoder_params(), adam()),
        dec_opt_(model_.decoder_params(), adam()),
        tok_opt_(model_.tokenizer_params(), adam()),
        cls_opt_(model_.cls_params(), adam()) {
    cfg_.validate();
    detail::require(ds.specs.size() == cfg.net.classes, "Trainer", "dataset has ",
                    ds.specs.size(), " classes, network expects ", cfg.net.classes);
    for (std::size_t i : fraction_subset(ds.train, cfg.net.classes, cfg.fraction, cfg.seed)) {
      const AnnotationRecord& r = ds.train[i];
      PreparedSample s;
      s.source = &r;
      const auto c = std::size_t(r.label);
      s.annotation = corrupt_annotation(r, ds.specs[c], ds.templates[c], {cfg.lambda, cfg.seed});
      if (cfg.uses(kSsa)) s.seg = make_seg_target(s.annotation.mask, c, cfg.net.classes);
      if (cfg.uses(kScr)) {
        const std::size_t h = cfg.net.grid_h(), w = cfg.net.grid_w();
        s.mst = consistency_mask(s.annotation.transform, h, w, cfg.net.stride, cfg.phi,
                                 Direction::source_to_target);
        s.mts = consistency_mask(s.annotation.transform, h, w, cfg.net.stride, cfg.phi,
                                 Direction::target_to_source);
      }
      samples_.push_back(std::move(s));
    }
    detail::require(!samples_.empty(), "Trainer", "no training samples");
  }

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t train_size() const { return samples_.size(); }
  long iteration() const { return iter_; }

  /// Indices into the prepared samples for the next batch: epochs of seeded
  /// permutations, consumed in order.
  std::vector<std::size_t> next_batch() {
    std::vector<std::size_t> b;
    while (b.size() < std::min(cfg_.batch, samples_.size())) {
      if (cursor_ == order_.size()) {
        order_.resize(samples_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        Rng rng(derive_seed(cfg_.seed, std::uint64_t(epoch_++), 0xBA7C));
        rng.shuffle(order_.begin(), order_.end());
        cursor_ = 0;
      }
      b.push_back(order_[cursor_++]);
    }
    return b;
  }

  StepRecord step() { return step_on(next_batch()); }

  StepRecord step_on(const std::vector<std::size_t>& batch) {
    StepRecord rec;
    rec.iteration = iter_;
    Tape tape;
    std::vector<const GrayImage*> images;
    std::vector<std::size_t> labels;
    for (std::size_t i : batch) {
      images.push_back(&samples_[i].source->image);
      labels.push_back(std::size_t(samples_[i].source->label));
    }
    const Encoded enc = encode(model_, image_batch(images));
    const Tensor logits = classify(model_, enc.features);
    std::array<Tensor, kTasks> losses;
    losses[kCls] = loss_cls(logits, labels);
    rec.batch_accuracy = accuracy(logits, labels);

    if (cfg_.uses(kSsa)) {
      std::vector<SegTarget> targets;
      for (std::size_t i : batch) targets.push_back(samples_[i].seg);
      losses[kSsa] = loss_ssa(decode_seg(model_, enc), targets);
    }
    if (cfg_.uses(kScr)) {
      std::map<std::size_t, Tensor> tokens;  // one tokenizer pass per class in the batch
      Tensor total;
      std::size_t used = 0;
      for (std::size_t n = 0; n < batch.size(); ++n) {
        const PreparedSample& s = samples_[batch[n]];
        const auto c = std::size_t(s.source->label);
        if (!tokens.count(c)) tokens.emplace(c, tokenize_template(model_, ds_.templates[c]));
        const auto vol = correlation_volume(ops::select(enc.features, n), tokens.at(c));
        ScrLoss l = loss_scr(vol.st, vol.ts, s.mst, s.mts);
        if (l.empty) continue;
        total = total.defined() ? ops::add(total, l.value) : l.value;
        ++used;
      }
      rec.scr_empty = used == 0;
      losses[kScr] = used ? ops::scale(total, 1.0 / double(used)) : Tensor::scalar(0.0);
    }

    const std::vector<Tensor> enc_params = model_.encoder_params();
    const std::array<std::vector<Tensor>, kTasks> heads = {
        model_.cls_params(), model_.decoder_params(), model_.tokenizer_params()};
    std::vector<std::size_t> active;
    for (std::size_t t = 0; t < kTasks; ++t) {
      if (!cfg_.uses(Task(t))) continue;
      rec.active[t] = true;
      rec.loss[t] = losses[t].item();
      detail::require(std::isfinite(rec.loss[t]), "train", "non-finite ", kTaskNames[t],
                      " loss at iteration ", iter_);
      active.push_back(t);
      if (losses[t].requires_grad()) {
        tape.reset();
        tape.backward(losses[t]);
        rec.encoder_grads.push_back(grad_snapshot(enc_params));
        rec.head_grads[t] = grad_snapshot(heads[t]);
      } else {
        rec.encoder_grads.emplace_back(enc_opt_.size(), 0.0);
        rec.head_grads[t].assign(head_size(heads[t]), 0.0);
      }
    }

    std::vector<double> a(active.size());
    if (cfg_.mode == Mode::pareto) {
      ParetoSolution sol;
      try {
        sol = solve_simplex(gram(rec.encoder_grads));
      } catch (const Error& e) {
        detail::fail("train", "Pareto solve failed at iteration ", iter_, ": ", e.what());
      }
      a = sol.a;
      rec.method = sol.method;
    } else {
      for (std::size_t k = 0; k < active.size(); ++k) a[k] = cfg_.weight(Task(active[k]));
    }
    for (std::size_t k = 0; k < active.size(); ++k) rec.weight[active[k]] = a[k];
    rec.direction = combine_direction(rec.encoder_grads, a);

    enc_opt_.step(rec.direction);
    cls_opt_.step(rec.head_grads[kCls]);
    if (rec.active[kSsa]) dec_opt_.step(rec.head_grads[kSsa]);
    if (rec.active[kScr]) tok_opt_.step(rec.head_grads[kScr]);
    ++iter_;
    return rec;
  }

 private:
  AdamWConfig adam() const { return {cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}; }

  static std::size_t head_size(const std::vector<Tensor>& ps) {
    std::size_t n = 0;
    for (const auto& p : ps) n += p.numel();
    return n;
  }

  static double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    const std::size_t C = logits.dim(1);
    std::size_t hit = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (logits[n * C + c] > logits[n * C + best]) best = c;
      hit += best == labels[n];
    }
    return double(hit) / double(labels.size());
  }

  TrainConfig cfg_;
  const Dataset& ds_;
  Model model_;
  AdamW enc_opt_, dec_opt_, tok_opt_, cls_opt_;
  std::vector<PreparedSample> samples_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  long epoch_ = 0;
  long iter_ = 0;
};

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  std::size_t label = 0;
  std::vector<double> scores;  // softmax over classes
  BinaryMask evidence;         // pixels whose argmax is not background
};

/// Runs encoder, classifier and decoder only; the tokenizer is never touched.
inline std::vector<Prediction> predict(const Model& m, const std::vector<const GrayImage*>& images,
                                       bool with_evidence = true, std::size_t chunk = 32) {
  std::vector<Prediction> out;
  const std::size_t C = m.cfg.classes, H = m.cfg.height, W = m.cfg.width;
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    const std::vector<const GrayImage*> part(images.begin() + long(s),
                                             images.begin() + long(std::min(images.size(), s + chunk)));
    const Encoded enc = encode(m, image_batch(part));
    const Tensor probs = ops::softmax(classify(m, enc.features), 1);
    Tensor seg;
    if (with_evidence) seg = decode_seg(m, enc);
    for (std::size_t n = 0; n < part.size(); ++n) {
      Prediction p;
      p.scores.assign(probs.data().begin() + long(n * C), probs.data().begin() + long((n + 1) * C));
      for (std::size_t c = 1; c < C; ++c)
        if (p.scores[c] > p.scores[p.label]) p.label = c;
      if (with_evidence) {
        p.evidence = BinaryMask(W, H);
        const std::size_t K = C + 1, P = H * W;
        for (std::size_t px = 0; px < P; ++px) {
          std::size_t best = 0;
          for (std::size_t k = 1; k < K; ++k)
            if (seg[(n * K + k) * P + px] > seg[(n * K + best) * P + px]) best = k;
          p.evidence.pixels[px] = best != C;
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline double iou(const BinaryMask& a, const BinaryMask& b) {
  detail::require(a.size() == b.size(), "iou", "mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a.pixels[i] && b.pixels[i];
    uni += a.pixels[i] || b.pixels[i];
  }
  return uni ? double(inter) / double(uni) : 1.0;
}

struct Evaluation {
  ConfusionMatrix cm;
  MetricsReport metrics;
  double mean_iou = 0;
};

inline Evaluation evaluate(const Model& m, const std::vector<AnnotationRecord>& recs,
                           bool with_evidence = false) {
  detail::require(!recs.empty(), "evaluate", "no records");
  std::vector<const GrayImage*> images;
  std::vector<std::size_t> labels;
  for (const auto& r : recs) {
    images.push_back(&r.image);
    labels.push_back(std::size_t(r.label));
  }
  const auto preds = predict(m, images, with_evidence);
  std::vector<std::size_t> guess;
  double iou_sum = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    guess.push_back(preds[i].label);
    if (with_evidence) iou_sum += iou(preds[i].evidence, recs[i].mask);
  }
  Evaluation e{confusion(guess, labels, m.cfg.classes), {}, 0};
  e.metrics = report(e.cm);
  e.mean_iou = with_evidence ? iou_sum / double(recs.size()) : 0;
  return e;
}

// ---------------------------------------------------------------------------
// Full runs

inline std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

inline const char* kTrainLogHeader =
    "iter,loss_cls,loss_ssa,loss_scr,a_cls,a_ssa,a_scr,method,batch_acc,test_oa";

inline std::string train_log_row(const StepRecord& r, std::optional<double> test_oa) {
  std::string row = std::to_string(r.iteration);
  for (std::size_t t = 0; t < kTasks; ++t) row += "," + (r.active[t] ? fmt(r.loss[t]) : "");
  for (std::size_t t = 0; t < kTasks; ++t) row += "," + fmt(r.weight[t]);
  row += std::string(",") + to_string(r.method) + "," + fmt(r.batch_accuracy, 4) + ",";
  if (test_oa) row += fmt(*test_oa, 4);
  return row;
}

struct RunResult {
  Evaluation test;
  std::vector<StepRecord> log;  // without gradient payloads
};

/// Trains per cfg, writes train_log.csv, eval.csv and model.ckpt (without
/// the tokenizer) into cfg.out_dir.
inline RunResult train_and_evaluate(const TrainConfig& cfg, const Dataset& ds,
                                    const std::function<void(const StepRecord&)>& on_step = {}) {
  std::filesystem::create_directories(cfg.out_dir);
  Trainer trainer(cfg, ds);
  std::ofstream log(cfg.out_dir / "train_log.csv");
  detail::require(static_cast<bool>(log), "train", "cannot write to '", cfg.out_dir.string(), "'");
  log << kTrainLogHeader << "\n";
  RunResult res;
  for (long it = 0; it < cfg.iterations; ++it) {
    StepRecord r = trainer.step();
    std::optional<double> oa;
    if (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 && it + 1 < cfg.iterations)
      oa = evaluate(trainer.model(), ds.test).metrics.oa;
    if (it + 1 == cfg.iterations) {
      res.test = evaluate(trainer.model(), ds.test, true);
      oa = res.test.metrics.oa;
    }
    log << train_log_row(r, oa) << "\n";
    if (on_step) on_step(r);
    r.encoder_grads.clear();
    r.direction.clear();
    for (auto& h : r.head_grads) h.clear();
    res.log.push_back(std::move(r));
  }
  save_checkpoint(cfg.out_dir / "model.ckpt", trainer.model(), false);
  std::ofstream ev(cfg.out_dir / "eval.csv");
  ev << metrics_csv_header(cfg.net.classes) << ",iou\n"
     << metrics_csv_row("test", cfg.seed, cfg.variant(), res.test.metrics) << ","
     << format_metric(res.test.mean_iou) << "\n";
  std::ofstream(cfg.out_dir / "config.txt") << canonical(cfg);
  return res;
}

}  // namespace mtsgl
