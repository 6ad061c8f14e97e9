#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <tuple>

#include "pdd/analysis.hpp"
#include "pdd/data.hpp"
#include "pdd/engine.hpp"
#include "pdd/eval.hpp"
#include "pdd/io.hpp"
#include "pdd/nn.hpp"
#include "pdd/svm.hpp"

namespace pdd {

namespace {

using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

LabeledSet apply_norm(LabeledSet set, const Standardization& norm) {
  return norm.mean.empty() ? set : standardize(std::move(set), norm);
}

struct ArchOptions {
  std::string arch = "convnet";
  std::size_t hidden = 128;
  std::size_t depth = 3;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--arch", arch, "Model family: linear, mlp or convnet")->capture_default_str();
    cmd->add_option("--hidden", hidden, "Hidden width")->capture_default_str();
    cmd->add_option("--depth", depth, "Number of hidden blocks")->capture_default_str();
  }

  ModelSpec spec_for(const LabeledSet& data) const {
    ModelSpec spec;
    spec.architecture = parse_architecture(arch);
    spec.channels = data.images.dim(1);
    spec.height = data.images.dim(2);
    spec.width = data.images.dim(3);
    spec.classes = data.classes;
    spec.hidden = hidden;
    spec.depth = depth;
    spec.validate();
    return spec;
  }
};

std::optional<std::size_t> parse_pipc(const std::string& text) {
  if (text == "all") return std::nullopt;
  std::size_t used = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(text, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != text.size() || value == 0) throw Error("--pipc must be a positive integer or 'all', got '" + text + "'");
  return value;
}

// ---- pretrain ----

struct PretrainOptions {
  std::string data, out;
  ArchOptions arch;
  SamConfig sam{.epochs = 10};
  bool no_standardize = false;
  bool zero_init = false;
};

int cmd_pretrain(const PretrainOptions& o, std::ostream& out) {
  const auto start = Clock::now();
  const DatasetSplits splits = load_dataset(o.data, o.sam.seed);
  const Standardization norm = o.no_standardize ? Standardization{} : compute_standardization(splits.train);
  const LabeledSet train = apply_norm(splits.train, norm);
  const LabeledSet test = apply_norm(splits.test, norm);
  const ModelSpec spec = o.arch.spec_for(train);
  const Parameters params =
      o.zero_init ? train_classifier(spec, zero_params(spec), train.images, train.labels, o.sam)
                  : train_classifier(spec, train.images, train.labels, o.sam);
  save_checkpoint({spec, params, norm}, o.out);
  Json j;
  j["checkpoint"] = o.out;
  j["parameters"] = parameter_count(spec);
  j["train_accuracy"] = test_accuracy(spec, params, train.images, train.labels);
  j["test_accuracy"] = test_accuracy(spec, params, test.images, test.labels);
  j["wall_ms"] = elapsed_ms(start);
  out << j.dump() << "\n";
  return 0;
}

// ---- distill / extract-dsv ----

struct DistillOptions {
  std::string method = "practical";
  std::string model, data, out, manifest;
  std::string pipc = "all";
  std::string init, optimizer = "sgd", augment = "none";
  std::optional<double> alpha, gamma;
  double beta = 0.0;
  DistillConfig cfg;
  ArchOptions arch;
};

DistillConfig resolve(const DistillOptions& o) {
  DistillConfig cfg = o.cfg;
  cfg.method = parse_method(o.method);
  cfg.pipc = parse_pipc(o.pipc);
  cfg.optimizer = parse_optimizer(o.optimizer);
  cfg.policy = AugmentPolicy::parse(o.augment);
  // Noise for a single image per class, real images otherwise.
  cfg.init = o.init.empty() ? (cfg.ipc == 1 || o.data.empty() ? InitMode::Noise : InitMode::Real)
                            : parse_init_mode(o.init);
  cfg.weights.alpha = o.alpha.value_or(default_alpha(cfg.pipc.value_or(0), !cfg.pipc.has_value()));
  cfg.weights.beta = o.beta;
  cfg.weights.gamma = o.gamma.value_or(default_gamma(cfg.ipc));
  return cfg;
}

int cmd_distill(const DistillOptions& o, std::ostream& out) {
  const DistillConfig cfg = resolve(o);
  std::optional<Checkpoint> model;
  if (!o.model.empty()) model = load_checkpoint(o.model);
  if (cfg.method != Method::Dm && !model) throw Error(std::string(method_name(cfg.method)) + " needs --model");

  std::optional<LabeledSet> accessible;
  if (!o.data.empty()) {
    const DatasetSplits splits = load_dataset(o.data, cfg.seed);
    const Standardization norm = model ? model->standardization : compute_standardization(splits.train);
    accessible = subsample_pipc(apply_norm(splits.train, norm), cfg.pipc, cfg.seed);
  }
  if (cfg.method == Method::Dm && !accessible) throw Error("dm needs --data");

  DistillResult result;
  if (cfg.method == Method::Dm) {
    const ModelSpec shape = model ? model->spec : o.arch.spec_for(*accessible);
    result = dm_distill(shape, *accessible, cfg);
  } else {
    result = distill(cfg, &*model, accessible ? &*accessible : nullptr);
  }
  save_synthetic(result.set, o.out);
  result.manifest.artifacts.push_back(o.out);
  if (!o.manifest.empty()) result.manifest.write(o.manifest);

  Json j;
  j["method"] = method_name(cfg.method);
  j["out"] = o.out;
  j["images"] = result.set.size();
  j["final_total"] = result.manifest.steps.back().total;
  j["final_stat"] = result.manifest.steps.back().stat;
  j["wall_ms"] = result.manifest.wall_ms;
  out << j.dump() << "\n";
  return 0;
}

void add_distill_options(CLI::App* cmd, DistillOptions& o, bool method_flag) {
  if (method_flag) {
    cmd->add_option("--method", o.method, "dm, dsv or practical")->capture_default_str();
    cmd->add_option("--pipc", o.pipc, "Accessible real images per class, or 'all'")->capture_default_str();
    cmd->add_option("--beta", o.beta, "Weight of the augmented DKKT term")->capture_default_str();
    cmd->add_option("--gamma", o.gamma, "Weight of the matching term (default by ipc)");
    cmd->add_option("--augment", o.augment, "Augmentation ops, e.g. flip,translate,color")->capture_default_str();
    cmd->add_option("--embed-hidden", o.cfg.embed_hidden, "Width of the random embedding (0: model width)");
    cmd->add_option("--embed-depth", o.cfg.embed_depth, "Depth of the random embedding (0: model depth)");
    cmd->add_option("--real-batch", o.cfg.dm_real_batch, "Real images per class per matching step (0: all)");
    o.arch.add_to(cmd);
  }
  cmd->add_option("--model", o.model, "Pretrained checkpoint");
  cmd->add_option("--data", o.data, "Dataset spec: mnist:DIR, cifar10:DIR or toy:KIND[:N]");
  cmd->add_option("--out", o.out, "Synthetic set output path")->required();
  cmd->add_option("--manifest", o.manifest, "Run manifest output path (JSON lines)");
  cmd->add_option("--ipc", o.cfg.ipc, "Synthetic images per class")->capture_default_str();
  cmd->add_option("--alpha", o.alpha, "Stationarity weight (default by pipc)");
  cmd->add_option("--steps", o.cfg.steps, "Optimizer steps")->capture_default_str();
  cmd->add_option("--lr", o.cfg.pixel_lr, "Pixel learning rate")->capture_default_str();
  cmd->add_option("--lambda-lr", o.cfg.lambda_lr, "Multiplier learning rate (0: lr / 10)")->capture_default_str();
  cmd->add_option("--optimizer", o.optimizer, "Pixel optimizer: sgd, momentum or adam")->capture_default_str();
  cmd->add_option("--momentum", o.cfg.momentum, "Momentum coefficient")->capture_default_str();
  cmd->add_option("--init", o.init, "noise or real (default: noise for ipc 1, real otherwise)");
  cmd->add_flag("--gated", o.cfg.gated, "Zero the primal loss of correctly classified candidates");
  cmd->add_option("--seed", o.cfg.seed, "Random seed")->capture_default_str();
}

// ---- eval ----

struct EvalOptions {
  std::string synthetic, data, model, metrics, method = "unknown", pipc = "all";
  ArchOptions arch;
  SamConfig sam;
  bool paper_protocol = false;
};

int cmd_eval(EvalOptions o, std::ostream& out) {
  const auto start = Clock::now();
  if (o.paper_protocol) {
    const SamConfig full = SamConfig::paper_protocol();
    o.sam.epochs = full.epochs;
    o.sam.lr = full.lr;
    o.sam.rho = full.rho;
  }
  const SyntheticSet set = load_synthetic(o.synthetic);
  const DatasetSplits splits = load_dataset(o.data, o.sam.seed);
  ModelSpec spec;
  Standardization norm;
  if (!o.model.empty()) {
    const Checkpoint ck = load_checkpoint(o.model);
    spec = ck.spec;
    norm = ck.standardization;
  } else {
    norm = compute_standardization(splits.train);
    spec = o.arch.spec_for(splits.train);
  }
  const LabeledSet test = apply_norm(splits.test, norm);
  if (set.images.dim(1) != spec.channels || set.images.dim(2) != spec.height || set.images.dim(3) != spec.width ||
      set.classes != spec.classes) {
    throw ShapeError("synthetic set " + shape_string(set.images.shape()) + " does not fit the evaluation model");
  }
  const Parameters params = train_classifier(spec, set.images, set.labels, o.sam);
  MetricsRecord rec;
  rec.ipc = set.size() / set.classes;
  rec.pipc = o.pipc;
  rec.method = o.method;
  rec.seed = o.sam.seed;
  rec.accuracy = test_accuracy(spec, params, test.images, test.labels);
  rec.epochs = o.sam.epochs;
  rec.wall_ms = elapsed_ms(start);
  if (!o.metrics.empty()) append_line(o.metrics, rec.to_json());
  out << rec.to_json() << "\n";
  return 0;
}

// ---- average / fft / report ----

int cmd_average(const std::string& a, const std::string& b, const std::string& path, std::ostream& out) {
  const SyntheticSet avg = average_sets(load_synthetic(a), load_synthetic(b));
  save_synthetic(avg, path);
  out << Json{{"out", path}, {"images", avg.size()}}.dump() << "\n";
  return 0;
}

struct FftOptions {
  std::string synthetic, name, out, montage;
  double radius = 0.25;
};

int cmd_fft(const FftOptions& o, std::ostream& out) {
  const SyntheticSet set = load_synthetic(o.synthetic);
  const std::string summary = frequency_summary(o.name.empty() ? o.synthetic : o.name, set, o.radius);
  if (!o.montage.empty()) export_images(set, o.montage);
  if (o.out.empty()) {
    out << summary;
  } else {
    write_file_atomic(o.out, summary);
  }
  return 0;
}

struct ReportOptions {
  std::vector<std::string> metrics;
  std::string synthetic, montage;
};

int cmd_report(const ReportOptions& o, std::ostream& out) {
  if (o.metrics.empty() && o.synthetic.empty()) throw Error("report needs --metrics or --synthetic");
  if (!o.synthetic.empty()) {
    if (o.montage.empty()) throw Error("--synthetic needs --montage");
    export_images(load_synthetic(o.synthetic), o.montage);
    out << Json{{"montage", o.montage}}.dump() << "\n";
  }
  std::map<std::tuple<std::string, std::size_t, std::string>, std::vector<double>> groups;
  for (const auto& path : o.metrics) {
    std::istringstream lines(read_file(path));
    std::string line;
    std::size_t number = 0;
    while (std::getline(lines, line)) {
      ++number;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        groups[{j.at("method").get<std::string>(), j.at("ipc").get<std::size_t>(), j.at("pipc").get<std::string>()}]
            .push_back(j.at("accuracy").get<double>());
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ":" + std::to_string(number) + ": bad metrics record (" + e.what() + ")");
      }
    }
  }
  for (const auto& [key, values] : groups) {
    const Summary s = summarize(values);
    Json j;
    j["method"] = std::get<0>(key);
    j["ipc"] = std::get<1>(key);
    j["pipc"] = std::get<2>(key);
    j["runs"] = values.size();
    j["mean"] = s.mean;
    j["std"] = s.stddev;
    out << j.dump() << "\n";
  }
  return 0;
}

// ---- oracle ----

struct OracleOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 0;
  std::string data;
  bool dsv = false;
  DsvOracleConfig dsv_cfg;
};

int cmd_oracle(const OracleOptions& o, std::ostream& out) {
  bool ok = true;
  auto report = [&](const std::string& name, bool pass, Json detail) {
    ok = ok && pass;
    detail["check"] = name;
    detail["pass"] = pass;
    out << detail.dump() << "\n";
  };

  const LabeledSet fixture = gen_toy({.kind = ToyKind::Separable2d, .symmetric = true});
  const Tensor fx = svm_points(fixture.images);
  const auto fy = svm_labels(fixture.labels);
  const SvmSolution sym = solve_svm(fx, fy);
  bool exact = std::abs(sym.w[0] - 1.0) <= 1e-6 && std::abs(sym.w[1]) <= 1e-6 && std::abs(sym.b) <= 1e-6;
  for (std::size_t i = 0; i < fixture.size(); ++i) {
    const bool support = std::abs(fx[2 * i]) == 1.0;
    exact = exact && std::abs(sym.alpha[i] - (support ? 0.5 : 0.0)) <= 1e-6;
  }
  report("symmetric_fixture", exact && kkt_residuals(sym, fx, fy).max() <= 1e-6,
         {{"w", sym.w}, {"b", sym.b}, {"alpha", sym.alpha}});

  double worst = 0.0;
  for (std::size_t k = 0; k < o.instances; ++k) {
    const LabeledSet inst =
        gen_toy({.kind = ToyKind::Separable2d, .per_class = 10, .seed = Rng::derive(o.seed, 0x5e, k)});
    const Tensor x = svm_points(inst.images);
    const auto y = svm_labels(inst.labels);
    worst = std::max(worst, kkt_residuals(solve_svm(x, y), x, y).max());
  }
  report("random_instances", worst <= 1e-6, {{"instances", o.instances}, {"max_residual", worst}});

  if (!o.data.empty()) {
    const LabeledSet data = load_dataset(o.data, o.seed).train;
    const Tensor x = svm_points(data.images);
    const auto y = svm_labels(data.labels);
    const SvmSolution s = solve_svm(x, y);
    const double r = kkt_residuals(s, x, y).max();
    report("dataset", r <= 1e-6,
           {{"data", o.data}, {"w", s.w}, {"b", s.b}, {"support", s.support_indices()}, {"max_residual", r}});
  }

  if (o.dsv) {
    // Informational: reported, not part of the exit status.
    const DsvOracleResult r = run_dsv_oracle(fixture, o.dsv_cfg);
    Json rows = Json::array();
    for (const auto& row : r.proximity.rows) {
      rows.push_back({{"index", row.index}, {"label", row.label}, {"nearest_sv", row.nearest_sv},
                      {"distance", row.distance}, {"margin", row.margin}});
    }
    Json j{{"check", "dsv_vs_sv"}, {"final_stat", r.final_stat},
           {"min_training_margin", r.proximity.min_training_margin}, {"max_margin_gap", r.proximity.max_margin_gap},
           {"rows", rows}};
    out << j.dump() << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dataset distillation from pretrained models"};
  app.name("pdd");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  PretrainOptions pre;
  auto* pretrain = app.add_subcommand("pretrain", "Train a model on a full dataset and write a checkpoint");
  pretrain->add_option("--data", pre.data, "Dataset spec")->required();
  pretrain->add_option("--out", pre.out, "Checkpoint path")->required();
  pre.arch.add_to(pretrain);
  pretrain->add_option("--epochs", pre.sam.epochs)->capture_default_str();
  pretrain->add_option("--lr", pre.sam.lr)->capture_default_str();
  pretrain->add_option("--rho", pre.sam.rho)->capture_default_str();
  pretrain->add_option("--batch-size", pre.sam.batch_size)->capture_default_str();
  pretrain->add_option("--weight-decay", pre.sam.weight_decay)->capture_default_str();
  pretrain->add_option("--seed", pre.sam.seed)->capture_default_str();
  pretrain->add_flag("--no-standardize", pre.no_standardize, "Keep raw pixel values");
  pretrain->add_flag("--zero-init", pre.zero_init, "Start from all-zero parameters");

  DistillOptions dsv_opts;
  dsv_opts.method = "dsv";
  dsv_opts.alpha = 1.0;
  auto* extract = app.add_subcommand("extract-dsv", "Extract deep support vectors from a checkpoint");
  add_distill_options(extract, dsv_opts, false);

  DistillOptions dist;
  auto* distill_cmd = app.add_subcommand("distill", "Synthesize a distilled set");
  add_distill_options(distill_cmd, dist, true);

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Train on a synthetic set and report test accuracy");
  eval->add_option("--synthetic", ev.synthetic, "Synthetic set")->required();
  eval->add_option("--data", ev.data, "Dataset spec (test split is used)")->required();
  eval->add_option("--model", ev.model, "Checkpoint supplying architecture and standardization");
  ev.arch.add_to(eval);
  eval->add_option("--epochs", ev.sam.epochs)->capture_default_str();
  eval->add_option("--lr", ev.sam.lr)->capture_default_str();
  eval->add_option("--rho", ev.sam.rho)->capture_default_str();
  eval->add_option("--batch-size", ev.sam.batch_size)->capture_default_str();
  eval->add_option("--seed", ev.sam.seed)->capture_default_str();
  eval->add_flag("--paper-protocol", ev.paper_protocol, "5000 epochs of SAM, lr 0.1, rho 0.001");
  eval->add_option("--metrics", ev.metrics, "Append the record to this JSON-lines file");
  eval->add_option("--method", ev.method, "Method label for the record")->capture_default_str();
  eval->add_option("--pipc", ev.pipc, "pipc label for the record")->capture_default_str();

  std::string avg_a, avg_b, avg_out;
  auto* average = app.add_subcommand("average", "Pixelwise mean of two synthetic sets");
  average->add_option("--a", avg_a)->required();
  average->add_option("--b", avg_b)->required();
  average->add_option("--out", avg_out)->required();

  FftOptions ff;
  auto* fft = app.add_subcommand("fft", "Low-frequency energy summary per class");
  fft->add_option("--synthetic", ff.synthetic)->required();
  fft->add_option("--name", ff.name, "Set name used in the summary");
  fft->add_option("--radius", ff.radius, "Disc radius as a fraction of the centre-to-corner distance")
      ->capture_default_str();
  fft->add_option("--out", ff.out, "Summary path (default: stdout)");
  fft->add_option("--montage", ff.montage, "Also write a PPM montage");

  ReportOptions rep;
  auto* report = app.add_subcommand("report", "Summarize metrics files or export a montage");
  report->add_option("--metrics", rep.metrics, "Metrics JSON-lines files");
  report->add_option("--synthetic", rep.synthetic);
  report->add_option("--montage", rep.montage);

  OracleOptions orc;
  std::string orc_init = "noise";
  auto* oracle = app.add_subcommand("oracle", "Validate the SVM solver and compare DSVs with support vectors");
  oracle->add_option("--instances", orc.instances)->capture_default_str();
  oracle->add_option("--seed", orc.seed)->capture_default_str();
  oracle->add_option("--data", orc.data, "Also solve this two-class 2-D dataset");
  oracle->add_flag("--dsv", orc.dsv, "Run DSV extraction on the symmetric fixture");
  oracle->add_option("--dsv-steps", orc.dsv_cfg.steps)->capture_default_str();
  oracle->add_option("--dsv-alpha", orc.dsv_cfg.alpha)->capture_default_str();
  oracle->add_option("--dsv-init", orc_init)->capture_default_str();
  oracle->add_flag("--dsv-gated", orc.dsv_cfg.gated);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*pretrain) return cmd_pretrain(pre, out);
    if (*extract) return cmd_distill(dsv_opts, out);
    if (*distill_cmd) return cmd_distill(dist, out);
    if (*eval) return cmd_eval(ev, out);
    if (*average) return cmd_average(avg_a, avg_b, avg_out, out);
    if (*fft) return cmd_fft(ff, out);
    if (*report) return cmd_report(rep, out);
    if (*oracle) {
      orc.dsv_cfg.init = parse_init_mode(orc_init);
      orc.dsv_cfg.seed = orc.seed;
      return cmd_oracle(orc, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pdd
