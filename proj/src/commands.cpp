#include "cmvf/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "cmvf/errors.hpp"
#include "cmvf/metrics.hpp"
#include "cmvf/trainer.hpp"

namespace cmvf {

namespace fs = std::filesystem;

namespace {

fs::path prepare_out_dir(const RunConfig& config) {
  fs::path out(config.str("out"));
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "'");
  config.write_resolved((out / "config.resolved").string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("failed while writing '" + path.string() + "'");
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::string text =
      "epoch,total,reconstruction,kl_student_mode,kl_question_concept,kl_std_normal,"
      "valid_auc,is_best\n";
  char line[256];
  for (const EpochStats& e : history) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", e.epoch,
                  e.loss.total, e.loss.reconstruction, e.loss.kl_student_mode,
                  e.loss.kl_question_concept, e.loss.kl_std_normal, e.valid_auc,
                  e.is_best ? 1 : 0);
    text += line;
  }
  return text;
}

Dataset load_data(const RunConfig& config) {
  const std::string& path = config.str("data");
  if (path.empty()) throw ConfigError("missing required key 'data' (use --data PATH)");
  return load_csv(path);
}

// Trains one variant and reports test metrics; shared by train and ablate.
struct TrainOutcome {
  TrainResult result;
  std::vector<MetricsReport> reports;
};

TrainOutcome train_and_report(const Dataset& full, const TrainConfig& train_config,
                              std::ostream& log) {
  auto [train_split, test_split] = split_per_student(full, 0.8);
  TrainResult result = train_model(train_split, train_config);
  log << "best epoch " << result.best.best_epoch << " valid_auc " << result.best.best_auc
      << " after " << result.history.size() << " epochs\n";
  StudentGroups groups = group_students(full);
  std::vector<MetricsReport> reports = group_report(result.best.params, train_split, test_split,
                                                    groups, train_config.objective());
  return {std::move(result), std::move(reports)};
}

double resolve_base_auc(const RunConfig& config, const Dataset& full, std::ostream& log) {
  const std::string& base = config.str("base");
  if (base.empty()) return 0.0;
  try {
    std::size_t used = 0;
    double v = std::stod(base, &used);
    if (used == base.size()) {
      if (!(v > 0.5)) throw ConfigError("base AUC must exceed 0.5, got '" + base + "'");
      return v;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    // not a number: treat as a checkpoint path
  }
  Checkpoint base_ck = load_checkpoint(base);
  auto [train_split, test_split] = split_per_student(full, 0.8);
  StudentGroups groups = group_students(full);
  TrainConfig cfg = base_ck.config;
  std::vector<MetricsReport> reports =
      group_report(base_ck.params, train_split, test_split, groups, cfg.objective());
  if (!reports.at(0).auc) {
    throw ValidationError("base checkpoint has undefined overall AUC on this dataset");
  }
  log << "base checkpoint overall auc " << *reports[0].auc << "\n";
  return *reports[0].auc;
}

}  // namespace

void cmd_synth(const RunConfig& config, std::ostream& log) {
  fs::path out = prepare_out_dir(config);
  SynthResult synth = synthesize(config.synth_config(), config.unsigned_integer("seed"));
  write_csv(synth.dataset, (out / "dataset.csv").string());

  std::string truth = "learning_gain=" + std::to_string(synth.truth.learning_gain) + "\n";
  char line[128];
  for (std::size_t s = 0; s < synth.truth.ability.size(); ++s) {
    std::snprintf(line, sizeof(line), "ability.%s=%.17g\n",
                  synth.dataset.ids->students[s].c_str(), synth.truth.ability[s]);
    truth += line;
  }
  for (std::size_t q = 0; q < synth.truth.difficulty.size(); ++q) {
    std::snprintf(line, sizeof(line), "difficulty.%s=%.17g\n",
                  synth.dataset.ids->questions[q].c_str(), synth.truth.difficulty[q]);
    truth += line;
  }
  write_text(out / "truth.kv", truth);

  log << "wrote " << (out / "dataset.csv").string() << ": " << synth.dataset.student_count()
      << " students, " << synth.dataset.question_count() << " questions, "
      << synth.dataset.total_events() << " events\n";
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  fs::path out = prepare_out_dir(config);
  Dataset full = load_data(config);
  TrainOutcome outcome = train_and_report(full, config.train_config(), log);

  save_checkpoint(outcome.result.best, (out / "checkpoint.bin").string());
  write_text(out / "history.csv", history_csv(outcome.result.history));
  write_text(out / "report.kv", format_report_kv(outcome.reports));
  log << format_report_table(outcome.reports);
}

void cmd_eval(const RunConfig& config, std::ostream& log) {
  fs::path out = prepare_out_dir(config);
  const std::string& ck_path = config.str("checkpoint");
  if (ck_path.empty()) {
    throw ConfigError("missing required key 'checkpoint' (use --checkpoint PATH)");
  }
  Checkpoint ck = load_checkpoint(ck_path);
  Dataset full = load_data(config);
  ModelDims expected{full.student_count(), full.question_count(), full.concept_count(),
                     ck.config.embedding_dim, ck.config.capsule_count};
  if (ck.params.dims != expected) {
    throw ConfigError("vocabulary mismatch: checkpoint was trained on " +
                      std::to_string(ck.params.dims.students) + " students / " +
                      std::to_string(ck.params.dims.questions) + " questions / " +
                      std::to_string(ck.params.dims.concepts) + " concepts, dataset has " +
                      std::to_string(full.student_count()) + " / " +
                      std::to_string(full.question_count()) + " / " +
                      std::to_string(full.concept_count()));
  }

  double base_auc = resolve_base_auc(config, full, log);
  std::optional<double> base =
      base_auc > 0.5 ? std::optional<double>(base_auc) : std::nullopt;

  auto [train_split, test_split] = split_per_student(full, 0.8);
  StudentGroups groups = group_students(full);
  ObjectiveConfig objective = ck.config.objective();

  std::vector<MetricsReport> reports;
  const std::string& split = config.str("split");
  if (split == "test") {
    reports = group_report(ck.params, train_split, test_split, groups, objective, base);
  } else if (split == "valid") {
    ValidationSplit vs = carve_validation(train_split, ck.config.valid_fraction);
    std::vector<double> preds =
        predict_records(ck.params, train_split, vs.valid_records, objective);
    reports = grouped_metrics(preds, vs.valid_labels, vs.valid_records, groups, base);
  } else {
    throw ConfigError("config key 'split' must be test or valid, got '" + split + "'");
  }

  write_text(out / "report.kv", format_report_kv(reports));
  log << format_report_table(reports);
}

void cmd_ablate(const RunConfig& config, std::ostream& log) {
  fs::path out = prepare_out_dir(config);
  Dataset full = load_data(config);
  TrainConfig base_config = config.train_config();

  std::string kv;
  std::string table;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %10s %10s %10s %10s %10s %10s\n", "variant",
                "ov_acc", "ov_auc", "fr_acc", "fr_auc", "in_acc", "in_auc");
  table += line;

  for (Variant variant : all_variants()) {
    std::string name = variant_name(variant);
    TrainConfig cfg = base_config;
    cfg.variant = variant;
    log << "[" << name << "] ";
    TrainOutcome outcome = train_and_report(full, cfg, log);

    fs::path vdir = out / name;
    std::error_code ec;
    fs::create_directories(vdir, ec);
    if (ec) throw IoError("cannot create '" + vdir.string() + "'");
    save_checkpoint(outcome.result.best, (vdir / "checkpoint.bin").string());
    write_text(vdir / "history.csv", history_csv(outcome.result.history));
    write_text(vdir / "report.kv", format_report_kv(outcome.reports));

    double cells[6] = {0, 0, 0, 0, 0, 0};
    for (std::size_t g = 0; g < outcome.reports.size() && g < 3; ++g) {
      const MetricsReport& r = outcome.reports[g];
      cells[2 * g] = r.acc;
      cells[2 * g + 1] = r.auc.value_or(std::nan(""));
      char kvline[160];
      std::snprintf(kvline, sizeof(kvline), "%s.%s.acc=%.17g\n", name.c_str(), r.group.c_str(),
                    r.acc);
      kv += kvline;
      if (r.auc) {
        std::snprintf(kvline, sizeof(kvline), "%s.%s.auc=%.17g\n", name.c_str(),
                      r.group.c_str(), *r.auc);
      } else {
        std::snprintf(kvline, sizeof(kvline), "%s.%s.auc=undefined\n", name.c_str(),
                      r.group.c_str());
      }
      kv += kvline;
    }
    std::snprintf(line, sizeof(line), "%-10s %10.4f %10.4f %10.4f %10.4f %10.4f %10.4f\n",
                  name.c_str(), cells[0], cells[1], cells[2], cells[3], cells[4], cells[5]);
    table += line;
  }

  write_text(out / "ablate.kv", kv);
  write_text(out / "ablate.txt", table);
  log << table;
}

void cmd_gradcheck(const RunConfig& config, std::ostream& log) {
  fs::path out = prepare_out_dir(config);
  std::size_t d = config.was_set("embedding_dim")
                      ? static_cast<std::size_t>(config.unsigned_integer("embedding_dim"))
                      : 6;
  std::size_t k = config.was_set("capsules")
                      ? static_cast<std::size_t>(config.unsigned_integer("capsules"))
                      : 3;
  if (d > 8 || k > 4) {
    throw ConfigError("gradcheck needs a tiny model: embedding_dim <= 8 and capsules <= 4");
  }

  std::uint64_t seed = config.unsigned_integer("seed");
  SynthConfig synth_cfg;
  synth_cfg.students = 4;
  synth_cfg.questions = 8;
  synth_cfg.concepts = 4;
  synth_cfg.min_length = 4;
  synth_cfg.max_length = 8;
  SynthResult synth = synthesize(synth_cfg, stream_seed(seed, "gradcheck-data"));

  std::vector<RecordRef> records;
  for (const StudentSequence& seq : synth.dataset.sequences) {
    for (std::size_t t = 0; t < seq.events.size(); t += 2) records.push_back({seq.student, t});
  }
  FrequencyStats stats = frequency_stats(synth.dataset);

  ObjectiveConfig objective;
  objective.alpha = config.number("alpha");
  objective.mc_samples = static_cast<int>(config.integer("mc_samples"));
  objective.routing_iterations = static_cast<int>(config.integer("routing_iterations"));
  objective.variant = parse_variant(config.str("variant"));
  ModelDims dims{synth.dataset.student_count(), synth.dataset.question_count(),
                 synth.dataset.concept_count(), d, k};

  GradCheckReport report = model_gradient_check(synth.dataset, records, stats, objective, dims,
                                                seed);
  log << report.to_string();
  write_text(out / "gradcheck.kv", report.to_string());
  if (!report.passed(kGradCheckTolerance)) {
    throw NumericError("gradient check failed: max relative error " +
                       std::to_string(report.max_rel_err) + " in '" + report.worst_group +
                       "' (tolerance " + std::to_string(kGradCheckTolerance) + ")");
  }
  log << "gradient check passed (tolerance " << kGradCheckTolerance << ")\n";
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  static const char* kUsage =
      "usage: cmvf <synth|train|eval|ablate|gradcheck> [--config PATH] [--key value ...]\n"
      "\n"
      "commands:\n"
      "  synth      generate a synthetic practice-log CSV (synth_* keys)\n"
      "  train      train on --data, writing checkpoint.bin/history.csv/report.kv\n"
      "  eval       evaluate --checkpoint on --data (--base AUC|PATH for RealImpr)\n"
      "  ablate     train all five objective variants and tabulate their metrics\n"
      "  gradcheck  compare model gradients against central differences\n"
      "\n"
      "Any config key can be overridden as --key value; see README for the key list.\n";

  if (args.empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    out << kUsage;
    return args.empty() ? 2 : 0;
  }
  const std::string& command = args[0];

  try {
    RunConfig config;
    // --config files first, in order, then the remaining overrides
    for (std::size_t i = 1; i + 1 < args.size(); i += 2) {
      if (args[i] == "--config") config.load_file(args[i + 1]);
    }
    for (std::size_t i = 1; i < args.size(); i += 2) {
      const std::string& flag = args[i];
      if (flag.size() < 3 || flag.substr(0, 2) != "--") {
        throw ConfigError("expected --key, got '" + flag + "'");
      }
      if (i + 1 >= args.size()) throw ConfigError("flag '" + flag + "' is missing its value");
      if (flag == "--config") continue;
      config.set(flag.substr(2), args[i + 1]);
    }

    if (command == "synth") {
      cmd_synth(config, out);
    } else if (command == "train") {
      cmd_train(config, out);
    } else if (command == "eval") {
      cmd_eval(config, out);
    } else if (command == "ablate") {
      cmd_ablate(config, out);
    } else if (command == "gradcheck") {
      cmd_gradcheck(config, out);
    } else {
      err << "unknown command '" << command << "'\n" << kUsage;
      return 2;
    }
    return 0;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cmvf
