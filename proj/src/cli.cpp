#include "wtal/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "wtal/config.hpp"
#include "wtal/errors.hpp"
#include "wtal/eval.hpp"
#include "wtal/gradcheck.hpp"
#include "wtal/localize.hpp"
#include "wtal/trainer.hpp"

namespace wtal::cli {

namespace {

// Data problems the user can fix by pointing at different files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::optional<std::string> config_path_from(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') {
    return std::string(env);
  }
  return std::nullopt;
}

Dataset load_dataset(const std::string& path) {
  try {
    return read_dataset(path);
  } catch (const FormatError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

ModelParams load_checkpoint(const std::string& path) {
  try {
    return read_checkpoint(path);
  } catch (const FormatError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << text;
}

void check_compatible(const Dataset& data, const ModelParams& params, const std::string& what) {
  const auto& s = params.shape();
  if (s.feature_dim != data.feature_dim || s.num_classes != data.num_classes) {
    throw DataError(what + ": checkpoint expects D=" + std::to_string(s.feature_dim) +
                    ", C=" + std::to_string(s.num_classes) + " but dataset has D=" +
                    std::to_string(data.feature_dim) + ", C=" + std::to_string(data.num_classes));
  }
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

struct Options {
  ToolConfig cfg;
  std::string config_path;

  // gen
  std::string out_dir;
  // train / localize / eval / ablate
  std::string data, test_data, out, log, checkpoint, proposals, scores;
  std::string mode_name;
  bool ten = false;
  bool no_ten = false;
  // gradcheck
  std::size_t instances = 20;
  std::size_t length = 8;
  std::size_t feature_dim = 6;
  std::size_t embed_dim = 5;
  std::size_t classes = 3;
  double fd_eps = 1e-5;
  std::vector<std::string> modes{"standard", "bges", "bvl"};
  std::uint64_t check_seed = 1;
  bool inject_sign_bug = false;
  // ablate
  std::string grid = "components";
  std::vector<double> values;
};

int cmd_gen(Options& o, std::ostream& out) {
  const auto synth = generate(o.cfg.synth);
  std::filesystem::create_directories(o.out_dir);
  const auto dir = std::filesystem::path(o.out_dir);
  try {
    write_dataset(dir / "train.wtds", synth.train);
    write_dataset(dir / "test.wtds", synth.test);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  out << "train " << (dir / "train.wtds").string() << " videos=" << synth.train.videos.size()
      << " checksum=" << hex(dataset_checksum(synth.train)) << "\n";
  out << "test " << (dir / "test.wtds").string() << " videos=" << synth.test.videos.size()
      << " checksum=" << hex(dataset_checksum(synth.test)) << "\n";
  return kExitOk;
}

void apply_mode(Options& o) {
  if (!o.mode_name.empty()) o.cfg.run.mode = parse_grad_mode(o.mode_name);
  if (o.ten) o.cfg.run.use_ten = true;
  if (o.no_ten) o.cfg.run.use_ten = false;
}

int cmd_train(Options& o, std::ostream& out) {
  apply_mode(o);
  const auto data = load_dataset(o.data);
  auto run = o.cfg.run;
  run.checkpoint_path = o.out;
  run.log_path = o.log;
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train(TrainingView(data), run);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "mode=" << to_string(run.mode) << " ten=" << (run.use_ten ? "on" : "off")
      << " iterations=" << run.hyper.iterations << " seed=" << run.seed << "\n";
  if (!result.log.empty()) {
    const auto& last = result.log.back().losses;
    out << "final L_fg=" << last.fg << " L_bg=" << last.bg << " L_att=" << last.att
        << " L_KL=" << last.kl << " L_all=" << last.total << "\n";
  }
  out << "checkpoint " << o.out << " (" << fmt("%.1f", secs) << " s)\n";
  return kExitOk;
}

int cmd_gradcheck(Options& o, std::ostream& out) {
  ModelShape shape{o.feature_dim, o.embed_dim, o.classes, o.cfg.run.hyper.kernel_size};
  GradcheckSettings settings;
  settings.epsilon = o.fd_eps;
  settings.tolerance = default_tolerance(o.fd_eps);
  settings.options.inject_sign_bug = o.inject_sign_bug;
  if (o.classes == 0 || o.length == 0 || o.instances == 0) {
    throw InvalidArgument("gradcheck: classes, length and instances must be >= 1");
  }

  out << "gradcheck: " << o.instances << " instances T=" << o.length << " D=" << o.feature_dim
      << " E=" << o.embed_dim << " C=" << o.classes << " k=" << o.cfg.run.hyper.k
      << " seed=" << o.check_seed << "\n";
  out << "finite-difference step " << fmt("%g", settings.epsilon) << ", pass threshold "
      << fmt("%g", settings.tolerance) << " max relative error (floor "
      << fmt("%g", settings.floor) << ")";
  if (settings.tolerance > 1e-5) out << "; threshold loosened for the larger step";
  out << "\n";

  bool all_pass = true;
  for (const auto& name : o.modes) {
    const GradMode mode = parse_grad_mode(name);
    if (mode == GradMode::Grl) {
      out << to_string(mode) << ": skipped (not the gradient of a scalar loss)\n";
      continue;
    }
    Rng rng(o.check_seed);
    double worst = 0.0;
    double residual = -1.0;
    std::string worst_block;
    std::vector<std::string> failing;
    for (std::size_t i = 0; i < o.instances; ++i) {
      const auto inst = random_instance(shape, o.length, o.cfg.run.hyper.k, rng);
      const auto r = check_gradients(inst, o.cfg.run.hyper, mode, settings);
      if (r.max_relative_error > worst || worst_block.empty()) {
        worst = r.max_relative_error;
        worst_block = r.worst_block;
      }
      residual = std::max(residual, r.closed_form_residual);
      for (const auto& b : r.failing_blocks) {
        if (std::find(failing.begin(), failing.end(), b) == failing.end()) failing.push_back(b);
      }
    }
    const bool pass = failing.empty();
    all_pass = all_pass && pass;
    out << to_string(mode) << ": " << (pass ? "PASS" : "FAIL") << " max relative error "
        << fmt("%.3e", worst) << " (worst block " << worst_block << ")";
    if (residual >= 0.0) out << ", closed-form residual " << fmt("%.3e", residual);
    out << "\n";
    if (!pass) {
      out << "  blocks over threshold:";
      for (const auto& b : failing) out << " " << b;
      out << "\n";
    }
  }
  out << (all_pass ? "all modes pass" : "gradient check FAILED") << "\n";
  return all_pass ? kExitOk : kExitNumeric;
}

void write_scores(const std::string& path, const Dataset& data, const ModelParams& params) {
  std::string text = "video,snippet,attention";
  for (std::size_t c = 0; c <= data.num_classes; ++c) {
    text += c == data.num_classes ? ",p_bg" : ",p_" + std::to_string(c);
  }
  text += "\n";
  char buf[32];
  for (const auto& v : data.videos) {
    const auto fwd = forward(v.rgb, v.flow, params, NormMode::Standard);
    for (std::size_t t = 0; t < fwd.branch.length(); ++t) {
      text += v.id + "," + std::to_string(t);
      std::snprintf(buf, sizeof buf, ",%.6f", fwd.branch.attention[t]);
      text += buf;
      for (double p : softmax(fwd.branch.cas.row(t))) {
        std::snprintf(buf, sizeof buf, ",%.6f", p);
        text += buf;
      }
      text += "\n";
    }
  }
  write_text(path, text);
}

int cmd_localize(Options& o, std::ostream& out) {
  const auto data = load_dataset(o.data);
  const auto params = load_checkpoint(o.checkpoint);
  check_compatible(data, params, "localize");
  const auto records = localize_dataset(data, params, o.cfg.run.hyper);
  try {
    write_proposals(o.out, records, data.timing);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  if (!o.scores.empty()) write_scores(o.scores, data, params);
  out << records.size() << " proposals for " << data.videos.size() << " videos -> " << o.out
      << "\n";
  return kExitOk;
}

int cmd_eval(Options& o, std::ostream& out) {
  const auto data = load_dataset(o.data);
  std::vector<ProposalRecord> records;
  try {
    records = read_proposals(o.proposals);
  } catch (const std::exception& e) {
    throw DataError(o.proposals + ": " + e.what());
  }
  EvalReport report;
  try {
    report = evaluate(records, data, o.cfg.iou_thresholds);
  } catch (const InvalidArgument& e) {
    throw DataError(e.what());
  }
  const auto text = format_report(report);
  out << text;
  if (!o.out.empty()) write_text(o.out, text);
  return kExitOk;
}

int cmd_ablate(Options& o, std::ostream& out, std::ostream& err) {
  const auto train_set = load_dataset(o.data);
  const auto test_set = load_dataset(o.test_data);
  std::vector<AblationVariant> variants;
  if (o.grid == "components") {
    variants = component_variants();
  } else if (o.grid == "modes") {
    variants = mode_variants();
  } else if (o.grid == "k") {
    variants = interval_variants(o.values.empty() ? std::vector<double>{2, 3, 4, 5} : o.values);
  } else if (o.grid == "lambda") {
    variants = lambda_variants(o.values.empty()
                                   ? std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4, 0.5}
                                   : o.values);
  }
  const auto rows =
      ablate(train_set, test_set, o.cfg.run, variants, o.cfg.ablation_seeds, o.cfg.iou_thresholds,
             [&err](const std::string& line) { err << line << "\n"; });
  const auto text = format_ablation(rows);
  out << text;
  if (!o.out.empty()) write_text(o.out, text);
  return kExitOk;
}

void add_config_option(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path,
                  std::string("config file (default: $") + kConfigEnv + ")");
}

void add_run_options(CLI::App* sub, Options& o) {
  auto& r = o.cfg.run;
  sub->add_option("--mode", o.mode_name, "gradient mode: standard, bges, grl, bvl, bvl+bges")
      ->default_str(std::string(to_string(r.mode)));
  sub->add_flag("--ten", o.ten, "enable the temporal continuity branch");
  sub->add_flag("--no-ten", o.no_ten, "disable the temporal continuity branch");
  sub->add_option("--iterations", r.hyper.iterations, "optimization steps");
  sub->add_option("--seed", r.seed, "training seed");
  sub->add_option("--lambda", r.hyper.lambda, "background loss weight");
  sub->add_option("--beta", r.hyper.beta, "consistency loss weight");
  sub->add_option("--k", r.hyper.k, "sampling interval of the continuity branch");
  sub->add_option("--batch-size", r.batch_size, "videos per step");
  sub->add_option("--lr", r.learning_rate, "first-stage learning rate");
  sub->add_option("--final-lr", r.final_learning_rate, "second-stage learning rate");
  sub->add_option("--weight-decay", r.weight_decay, "decoupled weight decay");
  sub->add_option("--grad-clip", r.grad_clip, "global gradient-norm clip (0 = off)");
  sub->add_option("--workers", r.workers, "threads per batch");
}

void add_localize_options(CLI::App* sub, Options& o) {
  auto& h = o.cfg.run.hyper;
  sub->add_option("--epsilon", h.epsilon, "class-score weight in the fused score");
  sub->add_option("--rho", h.rho_cls, "video-level class threshold");
  sub->add_option("--nms", h.nms_iou, "NMS IoU threshold");
  sub->add_option("--thresholds", h.proposal_thresholds, "proposal score thresholds")
      ->delimiter(',');
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  try {
    if (const auto path = config_path_from(args)) o.cfg = load_config(*path);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App app{"weakly supervised temporal action localization toolkit", "wtal"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  auto& s = o.cfg.synth;

  auto* gen = app.add_subcommand("gen", "generate the synthetic train/test datasets");
  add_config_option(gen, o);
  gen->add_option("--out", o.out_dir, "output directory for train.wtds and test.wtds")
      ->required();
  gen->add_option("--seed", s.seed, "generator seed");
  gen->add_option("--num-train", s.num_train, "training videos");
  gen->add_option("--num-test", s.num_test, "test videos");
  gen->add_option("--classes", s.num_classes, "action classes");
  gen->add_option("--feature-dim", s.feature_dim, "feature dimension per modality");
  gen->add_option("--noise", s.noise_sigma, "feature noise std-dev");
  gen->add_option("--confound", s.confound_strength, "class-specific background strength");

  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  add_config_option(tr, o);
  tr->add_option("--data", o.data, "training dataset file")->required();
  tr->add_option("--out", o.out, "checkpoint file to write")->required();
  tr->add_option("--log", o.log, "per-step loss CSV");
  tr->add_option("--checkpoint-every", o.cfg.run.checkpoint_every,
                 "steps between checkpoints (0 = final only)");
  add_run_options(tr, o);

  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_config_option(gc, o);
  gc->add_option("--instances", o.instances, "random instances per mode");
  gc->add_option("--length", o.length, "snippets per instance");
  gc->add_option("--feature-dim", o.feature_dim, "feature dimension");
  gc->add_option("--embed-dim", o.embed_dim, "embedding dimension");
  gc->add_option("--classes", o.classes, "action classes");
  gc->add_option("--eps", o.fd_eps, "finite-difference step");
  gc->add_option("--modes", o.modes, "modes to check")->delimiter(',');
  gc->add_option("--seed", o.check_seed, "instance seed");
  gc->add_option("--lambda", o.cfg.run.hyper.lambda, "background loss weight");
  gc->add_option("--k", o.cfg.run.hyper.k, "sampling interval");
  gc->add_flag("--inject-sign-bug", o.inject_sign_bug)->group("");

  auto* lo = app.add_subcommand("localize", "write action proposals for a dataset");
  add_config_option(lo, o);
  lo->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  lo->add_option("--data", o.data, "dataset file")->required();
  lo->add_option("--out", o.out, "proposal file to write")->required();
  lo->add_option("--scores", o.scores, "optional per-snippet score CSV");
  add_localize_options(lo, o);

  auto* ev = app.add_subcommand("eval", "score proposals against ground truth");
  add_config_option(ev, o);
  ev->add_option("--proposals", o.proposals, "proposal file")->required();
  ev->add_option("--data", o.data, "dataset file with ground truth")->required();
  ev->add_option("--out", o.out, "also write the report here");
  ev->add_option("--iou", o.cfg.iou_thresholds, "IoU thresholds")->delimiter(',');

  auto* ab = app.add_subcommand("ablate", "train and evaluate a grid of variants");
  add_config_option(ab, o);
  ab->add_option("--train", o.data, "training dataset file")->required();
  ab->add_option("--test", o.test_data, "test dataset file")->required();
  ab->add_option("--grid", o.grid, "components, modes, k or lambda")
      ->check(CLI::IsMember({"components", "modes", "k", "lambda"}));
  ab->add_option("--values", o.values, "grid values for k or lambda")->delimiter(',');
  ab->add_option("--seeds", o.cfg.ablation_seeds, "seeds per variant");
  ab->add_option("--out", o.out, "also write the table here");
  add_run_options(ab, o);
  add_localize_options(ab, o);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
    if (lo->parsed()) return cmd_localize(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (ab->parsed()) return cmd_ablate(o, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace wtal::cli
