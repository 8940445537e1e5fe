#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cca/cca.hpp"

namespace cca::cli {

namespace detail {

inline nlohmann::json error_json(const Error& e) {
  return {{"error",
           {{"code", std::string(to_string(e.code()))},
            {"message", e.message()},
            {"context", e.context()}}}};
}

inline std::filesystem::path manifest_path(const std::string& explicit_path,
                                           const std::string& primary_out,
                                           const std::string& command) {
  if (!explicit_path.empty()) return explicit_path;
  if (!primary_out.empty()) return primary_out + ".manifest.json";
  const char* run_dir = std::getenv("CCA_RUN_DIR");
  std::filesystem::path dir = run_dir != nullptr ? run_dir : ".";
  return dir / ("cca-" + command + ".manifest.json");
}

struct ManifestScope {
  RunManifest manifest;
  std::filesystem::path path;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void hash_input(const std::string& file) {
    if (!file.empty() && std::filesystem::exists(file))
      manifest.input_hashes[file] = fnv1a64_file(file);
  }

  void finish(const std::string& status, const std::string& error_text = "") {
    manifest.status = status;
    manifest.error = error_text;
    manifest.wall_clock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                  start)
            .count();
    std::error_code ec;
    auto parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    write_manifest(manifest, path);
  }
};

inline TrainConfig train_config_from(double lr, int batch_size, int epochs,
                                     double dropout, bool freeze,
                                     const std::string& selection,
                                     std::uint64_t seed) {
  TrainConfig tc;
  tc.learning_rate = lr;
  tc.batch_size = batch_size;
  tc.max_epochs = epochs;
  tc.dropout = dropout;
  tc.freeze_encoder = freeze;
  tc.selection_metric = parse_selection_metric(selection);
  tc.seed = seed;
  tc.validate();
  return tc;
}

inline void require_small_or_flag(const Preset& preset, bool allow_large) {
  if (preset.large && !allow_large)
    raise(ErrorCode::UsageError,
          "preset '" + preset.name +
              "' uses the published full-scale sizes; pass --allow-large to "
              "build it anyway");
}

} // namespace detail

/// Parse argv (without the program name) and execute one subcommand.
/// Returns the process exit code: 0 ok, 1 module error (error JSON on err),
/// 2 usage error.
inline int run(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"citation content analysis toolkit"};
  app.require_subcommand(1);

  // ---- ingest ----
  auto* c_ingest = app.add_subcommand(
      "ingest", "read a dataset distribution file and emit canonical JSONL");
  std::string ing_dataset, ing_in, ing_out, ing_manifest;
  c_ingest->add_option("--dataset", ing_dataset, "dfki|umich|tkde")->required();
  c_ingest->add_option("--in", ing_in, "source file in the dataset's layout")
      ->required();
  c_ingest->add_option("--out", ing_out, "output corpus JSONL")->required();
  c_ingest->add_option("--manifest", ing_manifest, "manifest path override");
  c_ingest->set_config("--config");

  // ---- stats ----
  auto* c_stats = app.add_subcommand(
      "stats", "validate label distribution against expected fractions");
  std::string st_in, st_task, st_expected, st_out, st_manifest;
  double st_tolerance = 0.005;
  bool st_strict = false;
  c_stats->add_option("--in", st_in, "corpus JSONL")->required();
  c_stats->add_option("--task", st_task, "function|sentiment")->required();
  c_stats->add_option("--expected", st_expected,
                      "label scheme JSON with expected fractions (default: "
                      "published distribution for the corpus dataset)");
  c_stats->add_option("--tolerance", st_tolerance, "absolute tolerance");
  c_stats->add_option("--out", st_out, "write the JSON report here");
  c_stats->add_flag("--strict", st_strict, "exit 1 when the check fails");
  c_stats->add_option("--manifest", st_manifest, "manifest path override");
  c_stats->set_config("--config");

  // ---- build-vocab ----
  auto* c_vocab = app.add_subcommand("build-vocab",
                                     "train a BPE vocabulary from corpus text");
  std::string bv_in, bv_out, bv_manifest;
  std::size_t bv_size = 512;
  std::uint64_t bv_seed = 0;
  c_vocab->add_option("--in", bv_in, "corpus JSONL")->required();
  c_vocab->add_option("--size", bv_size, "vocabulary size including specials");
  c_vocab->add_option("--seed", bv_seed, "seed");
  c_vocab->add_option("--out", bv_out, "output vocab file")->required();
  c_vocab->add_option("--manifest", bv_manifest, "manifest path override");
  c_vocab->set_config("--config");

  // ---- pretrain ----
  auto* c_pre = app.add_subcommand(
      "pretrain", "run a language-model objective over unlabeled corpus text");
  std::string pt_in, pt_vocab, pt_model = "bert-mini", pt_objective, pt_init,
              pt_out, pt_curve, pt_manifest;
  int pt_steps = 100, pt_batch = 32;
  double pt_lr = 2e-5, pt_mask_rate = 0.15;
  std::uint64_t pt_seed = 0;
  bool pt_allow_large = false;
  c_pre->add_option("--in", pt_in, "corpus JSONL (labels ignored)")->required();
  c_pre->add_option("--vocab", pt_vocab, "vocab file")->required();
  c_pre->add_option("--model", pt_model, "model preset (ignored with --init)");
  c_pre->add_option("--objective", pt_objective,
                    "causal|masked|permutation (default: preset objective)");
  c_pre->add_option("--init", pt_init, "encoder checkpoint to continue from");
  c_pre->add_option("--steps", pt_steps, "optimizer steps");
  c_pre->add_option("--batch-size", pt_batch, "batch size");
  c_pre->add_option("--lr", pt_lr, "learning rate");
  c_pre->add_option("--mask-rate", pt_mask_rate, "masked-objective corruption rate");
  c_pre->add_option("--seed", pt_seed, "seed");
  c_pre->add_option("--out", pt_out, "output encoder checkpoint")->required();
  c_pre->add_option("--curve", pt_curve, "write the per-step loss curve CSV here");
  c_pre->add_flag("--allow-large", pt_allow_large, "allow the -paper presets");
  c_pre->add_option("--manifest", pt_manifest, "manifest path override");
  c_pre->set_config("--config");

  // ---- finetune ----
  auto* c_fit = app.add_subcommand(
      "finetune", "attach a linear head and fine-tune on labeled data");
  std::string ft_in, ft_vocab, ft_task, ft_model = "bert-mini", ft_init, ft_out,
              ft_fit_out, ft_manifest, ft_selection = "macro_f1";
  double ft_valid_fraction = 0.1, ft_lr = 2e-5, ft_dropout = 0.1;
  int ft_epochs = 16, ft_batch = 32;
  bool ft_freeze = false, ft_allow_large = false;
  std::uint64_t ft_seed = 0;
  c_fit->add_option("--in", ft_in, "corpus JSONL")->required();
  c_fit->add_option("--vocab", ft_vocab, "vocab file")->required();
  c_fit->add_option("--task", ft_task, "function|sentiment")->required();
  c_fit->add_option("--model", ft_model, "model preset (ignored with --init)");
  c_fit->add_option("--init", ft_init, "encoder checkpoint to start from");
  c_fit->add_option("--valid-fraction", ft_valid_fraction,
                    "stratified validation share");
  c_fit->add_option("--epochs", ft_epochs, "max epochs");
  c_fit->add_option("--batch-size", ft_batch, "batch size");
  c_fit->add_option("--lr", ft_lr, "learning rate");
  c_fit->add_option("--dropout", ft_dropout, "dropout probability");
  c_fit->add_flag("--freeze-encoder", ft_freeze, "train only the head");
  c_fit->add_option("--selection", ft_selection, "macro_f1|accuracy");
  c_fit->add_option("--seed", ft_seed, "seed");
  c_fit->add_option("--out", ft_out, "output classifier checkpoint")->required();
  c_fit->add_option("--fit-out", ft_fit_out, "write the fit curves JSON here");
  c_fit->add_flag("--allow-large", ft_allow_large, "allow the -paper presets");
  c_fit->add_option("--manifest", ft_manifest, "manifest path override");
  c_fit->set_config("--config");

  // ---- evaluate ----
  auto* c_eval = app.add_subcommand(
      "evaluate", "stratified k-fold cross-validation of one model spec");
  std::string ev_in, ev_task, ev_model = "bert-mini", ev_vocab, ev_out,
              ev_manifest, ev_selection = "macro_f1", ev_objective;
  int ev_k = 10, ev_jobs = 1, ev_epochs = 16, ev_batch = 32, ev_pretrain_steps = 50;
  std::size_t ev_vocab_size = 512;
  double ev_lr = 2e-5, ev_dropout = 0.1, ev_mask_rate = 0.15, ev_pretrain_lr = 2e-5;
  bool ev_freeze = false, ev_allow_large = false, ev_pretrain = false;
  std::uint64_t ev_seed = 42;
  c_eval->add_option("--in", ev_in, "corpus JSONL")->required();
  c_eval->add_option("--task", ev_task, "function|sentiment")->required();
  c_eval->add_option("--model", ev_model,
                     "preset name, 'ngram-baseline', or a checkpoint path");
  c_eval->add_option("--vocab", ev_vocab, "vocab file (checkpoint models only)");
  c_eval->add_option("--k", ev_k, "number of folds");
  c_eval->add_option("--seed", ev_seed, "master seed");
  c_eval->add_option("--jobs", ev_jobs, "parallel fold workers (seed-stable)");
  c_eval->add_option("--vocab-size", ev_vocab_size, "per-fold vocabulary budget");
  c_eval->add_flag("--pretrain", ev_pretrain,
                   "run further pre-training on the train fold before tuning");
  c_eval->add_option("--pretrain-steps", ev_pretrain_steps, "pre-training steps");
  c_eval->add_option("--pretrain-lr", ev_pretrain_lr, "pre-training learning rate");
  c_eval->add_option("--mask-rate", ev_mask_rate, "masked-objective corruption rate");
  c_eval->add_option("--objective", ev_objective,
                     "pre-training objective override (default: preset)");
  c_eval->add_option("--epochs", ev_epochs, "fine-tuning max epochs");
  c_eval->add_option("--batch-size", ev_batch, "fine-tuning batch size");
  c_eval->add_option("--lr", ev_lr, "fine-tuning learning rate");
  c_eval->add_option("--dropout", ev_dropout, "dropout probability");
  c_eval->add_flag("--freeze-encoder", ev_freeze, "train only the head");
  c_eval->add_option("--selection", ev_selection, "macro_f1|accuracy");
  c_eval->add_option("--out", ev_out, "write the CVReport JSON here");
  c_eval->add_flag("--allow-large", ev_allow_large, "allow the -paper presets");
  c_eval->add_option("--manifest", ev_manifest, "manifest path override");
  c_eval->set_config("--config");

  // ---- predict ----
  auto* c_pred = app.add_subcommand("predict", "classify texts with a trained model");
  std::string pr_model, pr_vocab, pr_in, pr_out, pr_manifest;
  c_pred->add_option("--model", pr_model, "classifier checkpoint")->required();
  c_pred->add_option("--vocab", pr_vocab, "vocab file")->required();
  c_pred->add_option("--in", pr_in, "JSONL with one {\"id\",\"text\"} per line")
      ->required();
  c_pred->add_option("--out", pr_out, "output JSONL (default: stdout)");
  c_pred->add_option("--manifest", pr_manifest, "manifest path override");
  c_pred->set_config("--config");

  // ---- report ----
  auto* c_rep = app.add_subcommand(
      "report", "compare a CVReport against the published reference numbers");
  std::string rp_report, rp_reference = "data/reference_results.json", rp_out,
              rp_manifest;
  c_rep->add_option("--report", rp_report, "CVReport JSON")->required();
  c_rep->add_option("--reference", rp_reference, "reference results JSON");
  c_rep->add_option("--out", rp_out, "output Markdown (default: stdout)");
  c_rep->add_option("--manifest", rp_manifest, "manifest path override");
  c_rep->set_config("--config");

  // parse
  std::vector<const char*> argv;
  argv.push_back("cca");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help() << std::flush;
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  auto run_command = [&](const std::string& name, const std::string& explicit_manifest,
                         const std::string& primary_out,
                         const std::vector<std::string>& inputs,
                         const nlohmann::json& resolved,
                         const std::vector<std::uint64_t>& seeds,
                         auto&& body) -> int {
    detail::ManifestScope scope;
    scope.manifest.command = name;
    scope.manifest.argv = args;
    scope.manifest.resolved_config = resolved;
    scope.manifest.seeds = seeds;
    scope.manifest.started_at = iso8601_now();
    scope.path = detail::manifest_path(explicit_manifest, primary_out, name);
    for (const auto& f : inputs) scope.hash_input(f);
    try {
      int rc = body();
      scope.finish(rc == 0 ? "ok" : "failed");
      return rc;
    } catch (const Error& e) {
      scope.finish("error", e.what());
      err << detail::error_json(e).dump() << "\n";
      return e.code() == ErrorCode::UsageError ? 2 : 1;
    } catch (const std::exception& e) {
      scope.finish("error", e.what());
      err << nlohmann::json{{"error",
                             {{"code", "Internal"}, {"message", e.what()}}}}
                 .dump()
          << "\n";
      return 1;
    }
  };

  if (c_ingest->parsed()) {
    nlohmann::json cfg = {{"dataset", ing_dataset}, {"in", ing_in}, {"out", ing_out}};
    return run_command("ingest", ing_manifest, ing_out, {ing_in}, cfg, {}, [&]() {
      Corpus corpus = ingest(parse_dataset(ing_dataset), ing_in);
      save_jsonl(corpus, ing_out);
      out << "ingested " << corpus.records.size() << " records from " << ing_in
          << " -> " << ing_out << "\n";
      return 0;
    });
  }

  if (c_stats->parsed()) {
    nlohmann::json cfg = {{"in", st_in},
                          {"task", st_task},
                          {"expected", st_expected},
                          {"tolerance", st_tolerance},
                          {"strict", st_strict},
                          {"out", st_out}};
    return run_command("stats", st_manifest, st_out, {st_in, st_expected}, cfg, {},
                       [&]() {
      Corpus corpus = load_jsonl(st_in);
      Task task = parse_task(st_task);
      LabelScheme scheme = st_expected.empty()
                               ? builtin_scheme(corpus.dataset, task)
                               : load_scheme(st_expected);
      StatsReport report = validate_stats(corpus, scheme, st_tolerance);
      out << report.to_table();
      if (!st_out.empty()) {
        std::ofstream f(st_out, std::ios::binary);
        if (!f) raise(ErrorCode::IoFailure, "cannot write " + st_out);
        f << report.to_json().dump(2) << "\n";
      }
      return (st_strict && !report.pass) ? 1 : 0;
    });
  }

  if (c_vocab->parsed()) {
    nlohmann::json cfg = {
        {"in", bv_in}, {"size", bv_size}, {"seed", bv_seed}, {"out", bv_out}};
    return run_command("build-vocab", bv_manifest, bv_out, {bv_in}, cfg, {bv_seed},
                       [&]() {
      Corpus corpus = load_jsonl(bv_in);
      std::vector<std::string> texts;
      for (const auto& r : corpus.records) texts.push_back(r.text);
      Vocab vocab = train_vocab(texts, bv_size, bv_seed);
      save_vocab(vocab, bv_out);
      out << "vocab of " << vocab.size() << " tokens (" << vocab.merges.size()
          << " merges) -> " << bv_out << "\n";
      return 0;
    });
  }

  if (c_pre->parsed()) {
    nlohmann::json cfg = {{"in", pt_in},       {"vocab", pt_vocab},
                          {"model", pt_model}, {"objective", pt_objective},
                          {"init", pt_init},   {"steps", pt_steps},
                          {"batch_size", pt_batch}, {"lr", pt_lr},
                          {"mask_rate", pt_mask_rate}, {"seed", pt_seed},
                          {"out", pt_out}};
    return run_command("pretrain", pt_manifest, pt_out, {pt_in, pt_vocab, pt_init},
                       cfg, {pt_seed}, [&]() {
      Corpus corpus = load_jsonl(pt_in);
      Vocab vocab = load_vocab(pt_vocab);
      Encoder<float> encoder;
      Objective objective;
      if (!pt_init.empty()) {
        encoder = load_checkpoint(pt_init).encoder;
        objective = pt_objective.empty() ? Objective::Masked
                                         : parse_objective(pt_objective);
      } else {
        const Preset& preset = find_preset(pt_model);
        detail::require_small_or_flag(preset, pt_allow_large);
        EncoderConfig config = preset.config;
        config.vocab_size = static_cast<int>(vocab.size());
        encoder = build_encoder<float>(config, derive_seed(pt_seed, {100}));
        objective = pt_objective.empty() ? preset.objective
                                         : parse_objective(pt_objective);
      }
      PretrainConfig pc;
      pc.objective = objective;
      pc.mask_rate = pt_mask_rate;
      pc.steps = pt_steps;
      pc.batch_size = pt_batch;
      pc.learning_rate = pt_lr;
      pc.seed = pt_seed;
      std::vector<std::string> texts;
      for (const auto& r : corpus.records) texts.push_back(r.text);
      PretrainResult res = further_pretrain(encoder, texts, vocab, pc,
                                            std::filesystem::path(pt_out));
      if (!pt_curve.empty()) {
        std::ofstream f(pt_curve, std::ios::binary);
        if (!f) raise(ErrorCode::IoFailure, "cannot write " + pt_curve);
        f << "step,loss\n";
        for (std::size_t i = 0; i < res.loss_curve.size(); ++i)
          f << i << "," << res.loss_curve[i] << "\n";
      }
      out << "pretrained " << to_string(objective) << " for "
          << res.loss_curve.size() << " steps -> " << pt_out << "\n";
      if (!res.loss_curve.empty())
        out << "first loss " << res.loss_curve.front() << ", last loss "
            << res.loss_curve.back() << "\n";
      return 0;
    });
  }

  if (c_fit->parsed()) {
    nlohmann::json cfg = {{"in", ft_in},         {"vocab", ft_vocab},
                          {"task", ft_task},     {"model", ft_model},
                          {"init", ft_init},     {"valid_fraction", ft_valid_fraction},
                          {"epochs", ft_epochs}, {"batch_size", ft_batch},
                          {"lr", ft_lr},         {"dropout", ft_dropout},
                          {"freeze_encoder", ft_freeze},
                          {"selection", ft_selection},
                          {"seed", ft_seed},     {"out", ft_out}};
    return run_command("finetune", ft_manifest, ft_out, {ft_in, ft_vocab, ft_init},
                       cfg, {ft_seed}, [&]() {
      Corpus corpus = load_jsonl(ft_in);
      Vocab vocab = load_vocab(ft_vocab);
      Task task = parse_task(ft_task);
      const LabelScheme* scheme = corpus.scheme_for(task);
      if (scheme == nullptr)
        raise(ErrorCode::UnlabeledCorpus, "corpus has no " + ft_task + " labels");

      Encoder<float> encoder;
      if (!ft_init.empty()) {
        encoder = load_checkpoint(ft_init).encoder;
      } else {
        const Preset& preset = find_preset(ft_model);
        detail::require_small_or_flag(preset, ft_allow_large);
        EncoderConfig config = preset.config;
        config.vocab_size = static_cast<int>(vocab.size());
        config.dropout = ft_dropout;
        encoder = build_encoder<float>(config, derive_seed(ft_seed, {100}));
      }

      // stratified holdout: fold 0 of a round(1/fraction)-fold plan
      if (!(ft_valid_fraction > 0.0 && ft_valid_fraction < 0.5))
        raise(ErrorCode::InvalidConfig, "valid-fraction must lie in (0, 0.5)");
      int k = std::max(2, static_cast<int>(std::lround(1.0 / ft_valid_fraction)));
      FoldPlan plan = stratified_kfold(corpus, task, k, derive_seed(ft_seed, {200}));
      std::vector<std::string> valid_ids = plan.fold_ids(corpus, 0);
      std::vector<std::string> train_ids;
      for (const auto& r : corpus.records)
        if (plan.assignments.at(r.id) != 0) train_ids.push_back(r.id);

      Classifier<float> clf =
          attach_head(std::move(encoder), *scheme, derive_seed(ft_seed, {300}));
      TrainConfig tc = detail::train_config_from(ft_lr, ft_batch, ft_epochs,
                                                 ft_dropout, ft_freeze,
                                                 ft_selection, ft_seed);
      FitResult fit = finetune(clf, train_ids, valid_ids, corpus, vocab, tc);
      nlohmann::json prov = {{"task", ft_task},
                             {"best_epoch", fit.best_epoch},
                             {"best_metric", fit.best_metric},
                             {"seed", ft_seed}};
      save_classifier(clf, ft_out, prov);
      nlohmann::json fit_json = {{"best_epoch", fit.best_epoch},
                                 {"best_metric", fit.best_metric},
                                 {"train_loss", fit.train_loss},
                                 {"valid_metric", fit.valid_metric},
                                 {"steps_run", fit.steps_run}};
      if (!ft_fit_out.empty()) {
        std::ofstream f(ft_fit_out, std::ios::binary);
        if (!f) raise(ErrorCode::IoFailure, "cannot write " + ft_fit_out);
        f << fit_json.dump(2) << "\n";
      }
      out << "best epoch " << fit.best_epoch << " ("
          << to_string(tc.selection_metric) << " " << fit.best_metric << ") -> "
          << ft_out << "\n";
      return 0;
    });
  }

  if (c_eval->parsed()) {
    nlohmann::json cfg = {{"in", ev_in},     {"task", ev_task},
                          {"model", ev_model}, {"k", ev_k},
                          {"seed", ev_seed},   {"jobs", ev_jobs},
                          {"vocab_size", ev_vocab_size},
                          {"pretrain", ev_pretrain},
                          {"pretrain_steps", ev_pretrain_steps},
                          {"epochs", ev_epochs}, {"batch_size", ev_batch},
                          {"lr", ev_lr},         {"dropout", ev_dropout},
                          {"freeze_encoder", ev_freeze},
                          {"selection", ev_selection},
                          {"out", ev_out}};
    return run_command("evaluate", ev_manifest, ev_out, {ev_in, ev_vocab}, cfg,
                       {ev_seed}, [&]() {
      Corpus corpus = load_jsonl(ev_in);
      Task task = parse_task(ev_task);

      ModelSpec spec;
      bool is_preset = false;
      for (const auto& p : presets()) is_preset = is_preset || p.name == ev_model;
      if (ev_model == "ngram-baseline" || ev_model == "ngram") {
        spec.kind = ModelSpec::Kind::NgramBaseline;
      } else if (is_preset) {
        const Preset& preset = find_preset(ev_model);
        detail::require_small_or_flag(preset, ev_allow_large);
        spec.kind = ModelSpec::Kind::Preset;
        spec.preset = ev_model;
        spec.pretrain.objective = ev_objective.empty()
                                      ? preset.objective
                                      : parse_objective(ev_objective);
      } else if (std::filesystem::exists(ev_model)) {
        spec.kind = ModelSpec::Kind::Checkpoint;
        spec.checkpoint_path = ev_model;
        if (ev_vocab.empty())
          raise(ErrorCode::UsageError, "checkpoint models need --vocab");
        spec.vocab_path = ev_vocab;
      } else {
        raise(ErrorCode::InvalidConfig,
              "--model '" + ev_model +
                  "' is neither a preset, 'ngram-baseline', nor a checkpoint");
      }
      spec.vocab_size = ev_vocab_size;
      spec.further_pretraining = ev_pretrain;
      spec.pretrain.steps = ev_pretrain_steps;
      spec.pretrain.batch_size = ev_batch;
      spec.pretrain.learning_rate = ev_pretrain_lr;
      spec.pretrain.mask_rate = ev_mask_rate;
      spec.train = detail::train_config_from(ev_lr, ev_batch, ev_epochs,
                                             ev_dropout, ev_freeze, ev_selection,
                                             ev_seed);
      CVReport report = cross_validate(corpus, task, spec, ev_k, ev_seed, ev_jobs);

      const std::string dump = report.to_json().dump(2) + "\n";
      if (!ev_out.empty()) {
        std::ofstream f(ev_out, std::ios::binary);
        if (!f) raise(ErrorCode::IoFailure, "cannot write " + ev_out);
        f << dump;
      } else {
        out << dump;
      }
      out << "macro-F1 " << report.macro_f1.mean << " +/- "
          << report.macro_f1.stddev << " over " << report.k << " folds\n";
      return 0;
    });
  }

  if (c_pred->parsed()) {
    nlohmann::json cfg = {
        {"model", pr_model}, {"vocab", pr_vocab}, {"in", pr_in}, {"out", pr_out}};
    return run_command("predict", pr_manifest, pr_out, {pr_in, pr_model, pr_vocab},
                       cfg, {}, [&]() {
      Classifier<float> clf = load_classifier(pr_model);
      Vocab vocab = load_vocab(pr_vocab);
      std::ifstream in(pr_in, std::ios::binary);
      if (!in) raise(ErrorCode::MissingFile, "cannot open " + pr_in);
      std::vector<std::string> ids, texts;
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("text"))
          raise(ErrorCode::MalformedRecord, "expected {\"id\",\"text\"} objects",
                {{"line", std::to_string(line_no)}});
        ids.push_back(j.value("id", "line-" + std::to_string(line_no)));
        texts.push_back(j.at("text").get<std::string>());
      }
      if (texts.empty()) raise(ErrorCode::EmptyInput, "no texts in " + pr_in);
      auto preds = predict(clf, texts, vocab);
      std::ostringstream body;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        nlohmann::json j = {{"id", ids[i]},
                            {"label", preds[i].label},
                            {"probs", preds[i].probs}};
        body << j.dump() << "\n";
      }
      if (!pr_out.empty()) {
        std::ofstream f(pr_out, std::ios::binary);
        if (!f) raise(ErrorCode::IoFailure, "cannot write " + pr_out);
        f << body.str();
      } else {
        out << body.str();
      }
      return 0;
    });
  }

  if (c_rep->parsed()) {
    nlohmann::json cfg = {
        {"report", rp_report}, {"reference", rp_reference}, {"out", rp_out}};
    return run_command("report", rp_manifest, rp_out, {rp_report, rp_reference},
                       cfg, {}, [&]() {
      std::ifstream in(rp_report, std::ios::binary);
      if (!in) raise(ErrorCode::MissingFile, "cannot open " + rp_report);
      nlohmann::json rj;
      in >> rj;
      CVReport report;
      report.config = rj.at("config");
      report.k = rj.at("k").get<int>();
      report.seed = rj.at("seed").get<std::uint64_t>();
      report.macro_f1 = {rj.at("aggregate").at("macro_f1").at("mean").get<double>(),
                         rj.at("aggregate").at("macro_f1").at("stddev").get<double>()};
      report.micro_f1 = {rj.at("aggregate").at("micro_f1").at("mean").get<double>(),
                         rj.at("aggregate").at("micro_f1").at("stddev").get<double>()};
      report.accuracy = {rj.at("aggregate").at("accuracy").at("mean").get<double>(),
                         rj.at("aggregate").at("accuracy").at("stddev").get<double>()};
      nlohmann::json reference = load_reference(rp_reference);
      std::string doc = compare_report(report, reference);
      if (!rp_out.empty()) {
        std::ofstream f(rp_out, std::ios::binary);
        if (!f) raise(ErrorCode::IoFailure, "cannot write " + rp_out);
        f << doc;
      } else {
        out << doc;
      }
      return 0;
    });
  }

  err << "usage error: no subcommand\n";
  return 2;
}

} // namespace cca::cli
