#pragma once

// restruct command-line driver. cli_main is separate from main() so tests can
// run subcommands in-process.
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 agent protocol failure. Errors go to
// stderr as "error[usage|data|protocol]: message".

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "restruct/restruct.hpp"

namespace restruct::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kProtocol = 3 };

inline std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("restruct", sink);
  log->set_pattern("[%l] %v");
  log->set_level(spdlog::level::warn);
  if (const char* env = std::getenv("RESTRUCT_LOG")) {
    const auto level = spdlog::level::from_str(to_lower(env));
    // from_str maps unknown names to off; only accept real level names.
    if (level != spdlog::level::off || to_lower(env) == "off") log->set_level(level);
  }
  return log;
}

inline std::array<double, 3> parse_ratios(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw UsageError("--ratios needs three comma-separated values, got '" + text + "'");
  std::array<double, 3> r{};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p(trim(parts[i]));
    try {
      std::size_t used = 0;
      r[i] = std::stod(p, &used);
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw UsageError("--ratios: '" + p + "' is not a number");
    }
  }
  return r;
}

inline std::string render_stats(const TemplateStats& s) {
  std::string out;
  const auto row = [&out](const std::string& name, const LevelStats& l) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-24s %9zu %14zu %7zu %13zu %12s\n", name.c_str(), l.questions,
                  l.unique_answers, l.paths, 2 * l.questions, format_fixed(l.mean_options, 2).c_str());
    out += line;
  };
  char head[160];
  std::snprintf(head, sizeof(head), "%-24s %9s %14s %7s %13s %12s\n", "", "questions", "unique answers", "paths",
                "binary paths", "avg options");
  out += head;
  row("level1", s.levels[0]);
  row("level2", s.levels[1]);
  for (const auto& [cls, l] : s.l2_topics) row("level2/" + std::string(to_string(cls)), l);
  row("level3", s.levels[2]);
  return out;
}

inline nlohmann::json stats_json(const TemplateStats& s) {
  const auto level = [](const LevelStats& l) {
    return nlohmann::json{{"questions", l.questions},
                          {"unique_answers", l.unique_answers},
                          {"paths", l.paths},
                          {"binary_paths", 2 * l.questions},
                          {"mean_options", l.mean_options}};
  };
  nlohmann::json topics = nlohmann::json::object();
  for (const auto& [cls, l] : s.l2_topics) topics[std::string(to_string(cls))] = level(l);
  return {{"level1", level(s.levels[0])}, {"level2", level(s.levels[1])}, {"level3", level(s.levels[2])},
          {"level2_topics", topics}};
}

struct Context {
  std::ostream& out;
  std::shared_ptr<spdlog::logger> log;
};

inline int gen_synth(Context& ctx, const std::string& config_path, const std::string& out_dir,
                     std::optional<std::uint64_t> seed, std::optional<int> patients) {
  SynthConfig config;
  if (!config_path.empty()) config = parse_synth_config(read_file(config_path));
  if (seed) config.seed = *seed;
  if (patients) config.patients = *patients;
  const auto out = generate_synth(config);
  write_synth(out, out_dir);
  ctx.log->info("wrote {} terms, {} patients, {} images to {}", out.vocabulary.size(), out.records.size(),
                out.images.size(), out_dir);
  ctx.out << "generated " << out.records.size() << " patients, " << out.images.size() << " images, "
          << out.manifest["total_findings"].get<std::size_t>() << " findings in " << out_dir << "\n";
  return kOk;
}

inline int build_template_cmd(Context& ctx, const std::string& vocab_path, const std::string& corpus_path,
                              const std::string& out_path) {
  const auto vocab = load_vocabulary(vocab_path);
  const auto corpus = load_corpus(corpus_path, vocab);
  const auto t = build_template(corpus);
  write_file_atomic(out_path, serialize_template(t));
  const auto s = template_stats(t);
  ctx.log->info("template {} from {} records", t.fingerprint(), corpus.records.size());
  ctx.out << "template with " << s.levels[0].questions << " L1, " << s.levels[1].questions << " L2, "
          << s.levels[2].questions << " L3 questions written to " << out_path << "\n";
  return kOk;
}

inline int make_reports(Context& ctx, const std::string& template_path, const std::string& corpus_path,
                        const std::string& vocab_path, const std::string& out_path) {
  const auto t = load_template(template_path);
  const auto vocab = load_vocabulary(vocab_path);
  if (vocab.fingerprint() != t.vocab_fingerprint()) {
    throw DataError("vocabulary fingerprint " + vocab.fingerprint() + " does not match the template's " +
                    t.vocab_fingerprint());
  }
  const auto corpus = load_corpus(corpus_path, vocab);
  std::vector<StructuredReport> reports;
  for (const auto& rec : corpus.records) {
    for (const auto& ref : rec.image_refs) reports.push_back(populate_gold_report(t, rec, ref));
  }
  write_file_atomic(out_path, serialize_reports(reports));
  ctx.out << reports.size() << " reports written to " << out_path << "\n";
  return kOk;
}

inline int split_cmd(Context& ctx, const std::string& corpus_path, const std::string& ratios, std::uint64_t seed,
                     const std::string& out_path) {
  const auto r = parse_ratios(ratios);
  std::vector<std::string> ids;
  for (const auto& p : scan_corpus_patients(corpus_path)) ids.push_back(p.patient_id);
  if (ids.empty()) throw DataError(corpus_path + ": no patients");
  const auto a = make_splits(ids, r, seed);
  write_file_atomic(out_path, a.serialize());
  const auto c = a.counts();
  ctx.out << "train " << c[0] << ", val " << c[1] << ", test " << c[2] << " patients written to " << out_path
          << "\n";
  return kOk;
}

struct EvaluateArgs {
  std::string template_path;
  std::string gold_path;
  std::string agent = "oracle";
  unsigned parallelism = 1;
  std::string out_path;
  std::string train_path;
  std::string splits_path;
  std::string eval_split = "test";
  double timeout_seconds = 30.0;
  std::string preds_out;
  std::string transcripts_out;
};

inline int evaluate(Context& ctx, const EvaluateArgs& a) {
  auto spec = AgentSpec::parse(a.agent);
  if (!(a.timeout_seconds > 0.0)) throw UsageError("--timeout must be positive");
  spec.timeout = std::chrono::milliseconds(static_cast<long long>(a.timeout_seconds * 1000.0));
  const auto t = load_template(a.template_path);
  auto golds = load_reports(a.gold_path);
  std::vector<StructuredReport> train;
  if (!a.train_path.empty()) train = load_reports(a.train_path);

  if (!a.splits_path.empty()) {
    const auto eval_split = parse_split(a.eval_split);
    if (!eval_split) throw UsageError("--eval-split must be train, val or test");
    const auto splits = parse_splits(read_file(a.splits_path), a.splits_path);
    std::map<std::string, Split> of;
    for (const auto& [id, s] : splits.entries) of.emplace(id, s);
    std::vector<StructuredReport> selected;
    for (auto& g : golds) {
      auto it = of.find(g.patient_id);
      if (it == of.end()) throw DataError("patient '" + g.patient_id + "' has no split assignment");
      if (it->second == *eval_split) {
        selected.push_back(g);
      } else if (it->second == Split::train && a.train_path.empty()) {
        train.push_back(g);
      }
    }
    golds = std::move(selected);
  }
  if (golds.empty()) throw DataError("no gold reports to evaluate");

  std::optional<MajorityTable> majority;
  if (spec.kind == AgentKind::majority) {
    if (train.empty()) throw UsageError("majority agent needs training reports (--train or --splits)");
    majority = MajorityTable::fit(t, train);
    ctx.log->info("majority statistics from {} training reports", train.size());
  }

  EvaluationOptions options;
  options.parallelism = a.parallelism;
  options.majority = majority ? &*majority : nullptr;
  options.keep_transcripts = !a.transcripts_out.empty();
  const auto run = run_evaluation(t, golds, spec, options);

  if (!a.out_path.empty()) write_file_atomic(a.out_path, serialize_metrics(run.metrics));
  if (!a.preds_out.empty()) write_file_atomic(a.preds_out, serialize_reports(run.predictions));
  if (!a.transcripts_out.empty()) {
    std::string all;
    for (std::size_t i = 0; i < run.transcripts.size(); ++i) {
      for (auto line : split(run.transcripts[i], '\n')) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        j["session_id"] = "s" + std::to_string(i);
        j["patient_id"] = golds[i].patient_id;
        j["image_ref"] = golds[i].image_ref;
        all += j.dump() + "\n";
      }
    }
    write_file_atomic(a.transcripts_out, all);
  }
  ctx.out << render_metrics(run.metrics);
  if (run.failed_sessions > 0) {
    for (const auto& f : run.failures) ctx.log->error("session failed: {}", f);
    ctx.out << "failed sessions: " << run.failed_sessions << " of " << golds.size() << " (scored all-negative)\n";
    throw ProtocolError(std::to_string(run.failed_sessions) + " session(s) failed");
  }
  return kOk;
}

inline int stats_cmd(Context& ctx, const std::string& template_path, bool json) {
  const auto s = template_stats(load_template(template_path));
  ctx.out << (json ? stats_json(s).dump(2) + "\n" : render_stats(s));
  return kOk;
}

inline int check_cmd(Context& ctx, const std::string& template_path, const std::string& reports_path) {
  const auto t = load_template(template_path);
  const auto reports = load_reports(reports_path);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto violations = check_consistency(reports[i], t);
    if (!violations.empty()) ++bad;
    for (const auto& v : violations) {
      ctx.out << "report " << i + 1 << " (" << reports[i].patient_id << " " << reports[i].image_ref
              << "): " << v.kind << ": " << v.detail << "\n";
    }
  }
  if (bad) throw DataError(std::to_string(bad) + " of " + std::to_string(reports.size()) + " reports are inconsistent");
  ctx.out << reports.size() << " reports consistent\n";
  return kOk;
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  Context ctx{out, make_logger(err)};
  CLI::App app{"Structured radiology report benchmark engine", "restruct"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  std::string config_path, out_dir, vocab_path, corpus_path, out_path, template_path, reports_path;
  std::optional<std::uint64_t> synth_seed;
  std::optional<int> synth_patients;
  std::string ratios = "0.8,0.1,0.1";
  std::uint64_t split_seed = 0;
  bool stats_json_flag = false;
  EvaluateArgs ev;

  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic vocabulary, corpus, images and manifest");
  gen->add_option("--config", config_path, "Synthetic config JSON (defaults used when omitted)")->check(CLI::ExistingFile);
  gen->add_option("--out-dir", out_dir, "Output directory")->required();
  gen->add_option("--seed", synth_seed, "Override the config seed");
  gen->add_option("--patients", synth_patients, "Override the patient count");

  auto* bt = app.add_subcommand("build-template", "Build a report template from a corpus");
  bt->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  bt->add_option("--corpus", corpus_path, "Corpus file")->required();
  bt->add_option("--out", out_path, "Template JSON output")->required();

  auto* mr = app.add_subcommand("make-reports", "Populate gold reports, one per patient image");
  mr->add_option("--template", template_path, "Template JSON")->required();
  mr->add_option("--corpus", corpus_path, "Corpus file")->required();
  mr->add_option("--vocab", vocab_path, "Vocabulary the template was built from")->required();
  mr->add_option("--out", out_path, "Reports JSONL output")->required();

  auto* sp = app.add_subcommand("split", "Assign patients to train/val/test");
  sp->add_option("--corpus", corpus_path, "Corpus file")->required();
  sp->add_option("--ratios", ratios, "train,val,test ratios")->capture_default_str();
  sp->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();
  sp->add_option("--out", out_path, "Split assignment output")->required();

  auto* evc = app.add_subcommand("evaluate", "Run an agent over gold reports and score it");
  evc->add_option("--template", ev.template_path, "Template JSON")->required();
  evc->add_option("--gold", ev.gold_path, "Gold reports JSONL")->required();
  evc->add_option("--agent", ev.agent,
                  "oracle | all-negative | majority | random:<seed> | exec:<command> | tcp:<host:port>")
      ->required();
  evc->add_option("--parallelism", ev.parallelism, "Concurrent sessions")->capture_default_str()->check(CLI::PositiveNumber);
  evc->add_option("--out", ev.out_path, "Metrics JSON output");
  evc->add_option("--train", ev.train_path, "Training reports for the majority agent");
  evc->add_option("--splits", ev.splits_path, "Split assignment; restricts evaluation to --eval-split");
  evc->add_option("--eval-split", ev.eval_split, "Split to evaluate when --splits is given")->capture_default_str();
  evc->add_option("--timeout", ev.timeout_seconds, "Per-question agent timeout in seconds")->capture_default_str();
  evc->add_option("--preds-out", ev.preds_out, "Predicted reports JSONL output");
  evc->add_option("--transcripts-out", ev.transcripts_out, "Session transcripts JSONL output");

  auto* st = app.add_subcommand("stats", "Print template statistics");
  st->add_option("--template", template_path, "Template JSON")->required();
  st->add_flag("--json", stats_json_flag, "Print JSON");

  auto* ck = app.add_subcommand("check", "Check reports for consistency with a template");
  ck->add_option("--template", template_path, "Template JSON")->required();
  ck->add_option("--reports", reports_path, "Reports JSONL")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (gen->parsed()) return gen_synth(ctx, config_path, out_dir, synth_seed, synth_patients);
    if (bt->parsed()) return build_template_cmd(ctx, vocab_path, corpus_path, out_path);
    if (mr->parsed()) return make_reports(ctx, template_path, corpus_path, vocab_path, out_path);
    if (sp->parsed()) return split_cmd(ctx, corpus_path, ratios, split_seed, out_path);
    if (evc->parsed()) return evaluate(ctx, ev);
    if (st->parsed()) return stats_cmd(ctx, template_path, stats_json_flag);
    if (ck->parsed()) return check_cmd(ctx, template_path, reports_path);
  } catch (const UsageError& e) {
    err << "error[usage]: " << e.what() << "\n";
    return kUsage;
  } catch (const ProtocolError& e) {
    err << "error[protocol]: " << e.what() << "\n";
    return kProtocol;
  } catch (const Error& e) {
    err << "error[data]: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "error[data]: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error[data]: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace restruct::cli
