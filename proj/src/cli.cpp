#include "moledit/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

#include "moledit/bench.hpp"
#include "moledit/error.hpp"
#include "moledit/runconfig.hpp"

namespace moledit::cli {

namespace fs = std::filesystem;

std::string git_blob_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) && EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("HashFailure", "SHA-1 digest failed", ErrorClass::Invariant);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  out << text;
  if (!out) throw Error("IoError", "write failed for " + path);
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("SchemaError", path + ": " + e.what());
  }
}

}  // namespace

std::string file_hash(const std::string& path) { return git_blob_hash(read_file(path)); }

namespace {

// Hashes of every regular file under `paths`, keyed by path, plus one hash
// over the sorted listing.
nlohmann::json input_hashes(const std::vector<std::string>& paths) {
  std::map<std::string, std::string> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      for (const auto& entry : fs::recursive_directory_iterator(p))
        if (entry.is_regular_file()) files[entry.path().string()] = file_hash(entry.path().string());
    } else {
      files[p] = file_hash(p);
    }
  }
  std::string listing;
  for (const auto& [path, hash] : files) listing += hash + "  " + path + "\n";
  return {{"files", files}, {"content_hash", git_blob_hash(listing)}};
}

std::vector<std::string> checkpoint_files(const std::string& ckpt) {
  return {ckpt, ckpt + ".json", ckpt + ".src.vocab", ckpt + ".tgt.vocab"};
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

int exit_code(ErrorClass c) {
  switch (c) {
    case ErrorClass::Usage: return kUsageError;
    case ErrorClass::Data: return kDataError;
    case ErrorClass::Invariant: return kInvariantError;
  }
  return kInvariantError;
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string config_path;
  std::vector<std::string> overrides;

  // Config file, then --set overrides, then the dedicated flags.
  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) c.apply_file(config_path);
    for (const auto& o : overrides) c.apply_text(o, "--set");
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    c.validate();
    return c;
  }
};

// The task recorded by `pretrain` next to a checkpoint, when present.
void check_checkpoint_task(const std::string& ckpt, Task task) {
  const auto report = ckpt + ".report.json";
  if (!fs::exists(report)) return;
  const auto j = read_json(report);
  if (j.contains("task") && j["task"] != task_name(task)) {
    throw Error("TaskMismatch",
                ckpt + " was pretrained for task " + j["task"].get<std::string>() + ", not " +
                    std::string(task_name(task)),
                ErrorClass::Usage);
  }
}

bench::Vocabs vocabs_of(const model::SavedModel& saved) { return {saved.src_vocab, saved.tgt_vocab}; }

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_corpus(const RunConfig& cfg, const std::string& out_path, std::optional<std::size_t> size,
                    std::ostream& out) {
  bench::CorpusOptions opts;
  opts.size = size ? *size : cfg.corpus_size;
  opts.seed = cfg.seed;
  opts.stale_fraction = cfg.corpus_stale_fraction;
  const auto corpus = bench::generate_corpus(opts);
  bench::write_jsonl(out_path, corpus);
  out << "wrote " << corpus.size() << " samples to " << out_path << "\n";
}

void cmd_pretrain(const RunConfig& cfg, const std::string& corpus_path, Task task, const std::string& ckpt,
                  const std::string& resume, std::ostream& out) {
  const auto& rules = text::RuleTables::shipped();
  const auto corpus = bench::read_jsonl(corpus_path);
  auto vocabs = bench::build_vocabs(task, corpus, rules);
  const auto mc = cfg.model_config(vocabs.src.size(), vocabs.tgt.size(), bench::longest_sequence(task, corpus, rules));

  std::optional<model::Model> model;
  if (resume.empty()) {
    model.emplace(mc);
  } else {
    const auto stored = model::load_model_config(resume);
    if (stored.hash() != mc.hash()) {
      throw Error("ConfigHashMismatch", resume + " was built with a different model configuration",
                  ErrorClass::Usage);
    }
    auto saved = model::load_model(resume);
    if (!(saved.src_vocab == vocabs.src) || !(saved.tgt_vocab == vocabs.tgt))
      throw Error("VocabMismatch", resume + " vocabularies do not match the corpus", ErrorClass::Data);
    model.emplace(std::move(saved.model));
  }

  auto opts = cfg.pretrain_options();
  opts.on_epoch = [&](std::size_t epoch, double loss) {
    out << "epoch " << epoch + 1 << "/" << opts.epochs << " loss " << loss << "\n";
  };
  const auto examples = bench::training_examples(task, corpus, vocabs, rules);
  const auto log = model::pretrain(*model, examples, opts);
  model::save_model(ckpt, *model, vocabs.src, vocabs.tgt);

  // How often greedy decoding reproduces the training target.
  const auto predict = bench::model_predictor(*model, task, vocabs, mc.max_len, rules);
  std::size_t exact = 0;
  for (const auto& s : corpus) exact += predict(s.input(task)) == s.training_target(task);
  const double exact_rate = corpus.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(corpus.size());

  nlohmann::json report = {{"command", "pretrain"},
                           {"task", std::string(task_name(task))},
                           {"checkpoint", absolute(ckpt)},
                           {"resumed_from", resume.empty() ? nlohmann::json(nullptr) : nlohmann::json(absolute(resume))},
                           {"epoch_loss", log.epoch_loss},
                           {"train_exact_match", exact_rate},
                           {"model_config_hash", mc.hash()},
                           {"config", cfg.to_json()},
                           {"inputs", input_hashes({corpus_path})}};
  write_file(ckpt + ".report.json", report.dump(2) + "\n");
  out << "saved " << ckpt << " (train exact match " << exact_rate << ")\n";
}

void cmd_bench_build(const RunConfig& cfg, const std::string& ckpt, const std::string& corpus_path, Task task,
                     const std::string& dir, std::ostream& out, std::ostream& err) {
  const auto& rules = text::RuleTables::shipped();
  check_checkpoint_task(ckpt, task);
  auto saved = model::load_model(ckpt);
  const auto vocabs = vocabs_of(saved);
  const auto corpus = bench::read_jsonl(corpus_path);
  const auto predict = bench::model_predictor(saved.model, task, vocabs, saved.model.config().max_len, rules);
  const auto scored = bench::score_samples(predict, task, corpus, cfg.threads);

  bench::Split split;
  split.edit = bench::build_edit_set(scored, cfg.bench_low, cfg.bench_edit_size);
  bool truncated = false;
  split.locality = bench::build_loc_set(scored, cfg.bench_high, split.edit, cfg.bench_loc_size, task, &truncated);
  if (truncated) {
    err << "warning: only " << split.locality.size() << " samples score above " << cfg.bench_high
        << "; locality set is smaller than " << cfg.bench_loc_size << "\n";
  }
  std::vector<std::string> fallbacks;
  if (task == Task::Molecule) split.generality = bench::build_gen_set(split.edit, cfg.bench_gen_variants, rules, &fallbacks);
  for (const auto& id : fallbacks) err << "warning: paraphrase of " << id << " is the original caption\n";

  split.provenance = {{"command", "bench-build"},
                      {"task", std::string(task_name(task))},
                      {"low", cfg.bench_low},
                      {"high", cfg.bench_high},
                      {"edit_size", split.edit.size()},
                      {"loc_size", split.locality.size()},
                      {"loc_truncated", truncated},
                      {"gen_size", split.generality.size()},
                      {"gen_identity_fallbacks", fallbacks},
                      {"score_histogram", bench::score_histogram(scored)},
                      {"model", absolute(ckpt)},
                      {"config", cfg.to_json()},
                      {"inputs", input_hashes([&] {
                         auto files = checkpoint_files(ckpt);
                         files.push_back(corpus_path);
                         return files;
                       }())}};
  bench::save_split(dir, split);

  bench::PreEditCache cache;
  std::set<std::string> wanted;
  for (const auto& s : split.edit) wanted.insert(s.id);
  for (const auto& s : split.locality) wanted.insert(s.id);
  for (const auto& s : scored)
    if (wanted.count(s.sample.id)) cache[s.sample.id] = s.output;
  bench::save_cache(dir + "/pre_edit.jsonl", cache);
  out << "edit " << split.edit.size() << ", locality " << split.locality.size() << ", generality "
      << split.generality.size() << " samples in " << dir << "\n";
}

void cmd_edit(const RunConfig& cfg, const std::string& ckpt, const std::string& bench_dir, Task task,
              const std::string& ablate, const std::string& dir, std::ostream& out) {
  const auto& rules = text::RuleTables::shipped();
  auto ec = cfg.editor_config(task, 0);
  ec.ablation = editing::AblationFlags::parse(ablate);
  check_checkpoint_task(ckpt, task);
  auto saved = model::load_model(ckpt);
  const auto vocabs = vocabs_of(saved);
  if (!cfg.edit_max_output_len) ec.max_output_len = saved.model.config().max_len;
  const auto split = bench::load_split(bench_dir);
  if (split.provenance.contains("task") && split.provenance["task"] != task_name(task))
    throw Error("TaskMismatch", bench_dir + " was built for another task", ErrorClass::Usage);

  editing::Editor editor(saved.model, ec);
  const auto results = bench::run_edits(editor, task, split.edit, vocabs, rules);

  fs::create_directories(dir);
  std::string log;
  std::size_t no_improvement = 0;
  for (const auto& r : results) {
    log += editing::edit_log_record(r, std::string(task_name(task))).dump() + "\n";
    no_improvement += r.no_improvement;
    out << "edit " << r.edit_id << ": loss " << r.initial_loss << " -> " << r.final_loss << " in " << r.steps
        << " steps\n";
  }
  write_file(dir + "/edit_log.jsonl", log);
  editor.save(dir + "/editor");
  const nlohmann::json run = {{"command", "edit"},
                              {"task", std::string(task_name(task))},
                              {"model", absolute(ckpt)},
                              {"bench", absolute(bench_dir)},
                              {"ablation", ec.ablation.to_string()},
                              {"edits", results.size()},
                              {"no_improvement", no_improvement},
                              {"config", cfg.to_json()},
                              {"inputs", input_hashes([&] {
                                 auto files = checkpoint_files(ckpt);
                                 files.push_back(bench_dir);
                                 return files;
                               }())}};
  write_file(dir + "/run.json", run.dump(2) + "\n");
  out << results.size() << " edits applied; editor saved in " << dir << "\n";
}

struct EditedRun {
  nlohmann::json run;
  model::SavedModel saved;
  std::unique_ptr<editing::Editor> editor;
  Task task;
};

EditedRun load_edited(const std::string& dir) {
  const auto run = read_json(dir + "/run.json");
  if (!run.contains("model") || !run.contains("bench") || !run.contains("task"))
    throw Error("SchemaError", dir + "/run.json lacks model, bench or task");
  EditedRun r{run, model::load_model(run["model"].get<std::string>()), nullptr,
              parse_task(run["task"].get<std::string>())};
  r.editor = editing::Editor::load(r.saved.model, dir + "/editor");
  return r;
}

void cmd_eval(const RunConfig& cfg, const std::string& edited_dir, const std::string& bench_dir, Task task,
              const std::string& report_path, std::ostream& out) {
  auto edited = load_edited(edited_dir);
  if (edited.task != task)
    throw Error("TaskMismatch", edited_dir + " holds edits for task " + std::string(task_name(edited.task)),
                ErrorClass::Usage);
  const auto vocabs = vocabs_of(edited.saved);
  const auto split = bench::load_split(bench_dir);
  const auto cache_path = bench_dir + "/pre_edit.jsonl";
  if (!fs::exists(cache_path)) throw Error("MissingPreEditCache", cache_path + " does not exist");
  const auto cache = bench::load_cache(cache_path);
  const auto report = bench::evaluate(bench::editor_predictor(*edited.editor, task, vocabs), split, task, cache,
                                      cfg.threads);

  auto j = bench::to_json(report);
  j["config"] = cfg.to_json();
  j["editor_config"] = editing::to_json(edited.editor->config());
  j["inputs"] = input_hashes({edited_dir + "/editor", bench_dir, edited.run["model"].get<std::string>()});
  write_file(report_path, j.dump(2) + "\n");

  auto print = [&](const char* name, const bench::DimensionReport& d) {
    out << name << " (n=" << d.count << "):";
    for (const auto& [metric, st] : d.metrics) out << " " << metric << " " << st.mean << " +- " << st.std;
    out << "\n";
  };
  print("reliability", report.reliability);
  print("locality", report.locality);
  if (report.generality) print("generality", *report.generality);
}

void cmd_rationale(const RunConfig& cfg, const std::string& edited_dir, const std::string& report_path,
                   std::ostream& out) {
  const auto& rules = text::RuleTables::shipped();
  auto edited = load_edited(edited_dir);
  const auto vocabs = vocabs_of(edited.saved);
  const auto split = bench::load_split(edited.run["bench"].get<std::string>());
  const Task task = edited.task;

  // Edit-set inputs should open the switch; locality inputs should not.
  model::RoutingTrace edit_trace;
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  auto decide = [&](const bench::Sample& s, model::RoutingTrace* trace) {
    const auto src = source_sequence(task, s.input(task), rules);
    return edited.editor->infer(vocabs.src.encode(src.tokens, true), src.segmentation, trace).decision.active;
  };
  for (const auto& s : split.edit) (decide(s, &edit_trace) ? tp : fn)++;
  for (const auto& s : split.locality) (decide(s, nullptr) ? fp : tn)++;
  const std::size_t total = tp + fn + fp + tn;
  const double accuracy = total ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;

  model::RoutingTrace enc_events, dec_events;
  for (const auto& e : edit_trace) (e.site.side == model::Side::Encoder ? enc_events : dec_events).push_back(e);
  const std::size_t experts = edited.editor->config().adapter.experts;
  const auto enc_hist = meka::activation_histogram(enc_events, experts);
  const auto dec_hist = meka::activation_histogram(dec_events, experts);

  const nlohmann::json report = {
      {"command", "rationale"},
      {"task", std::string(task_name(task))},
      {"experts", experts},
      {"segment_histogram", enc_hist},
      {"routed_segments", enc_events.size()},
      {"token_histogram", dec_hist},
      {"routed_tokens", dec_events.size()},
      {"switch", {{"edited_active", tp}, {"edited_inactive", fn}, {"unrelated_active", fp}, {"unrelated_inactive", tn}, {"accuracy", accuracy}}},
      {"config", cfg.to_json()},
      {"editor_config", editing::to_json(edited.editor->config())},
      {"inputs", input_hashes({edited_dir + "/editor", edited.run["bench"].get<std::string>()})}};
  write_file(report_path, report.dump(2) + "\n");
  out << "segments per expert:";
  for (auto c : enc_hist) out << " " << c;
  out << "\nswitch accuracy " << accuracy << " (" << tp << "/" << tp + fn << " edited active, " << tn << "/"
      << fp + tn << " unrelated inactive)\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge editing for molecule language models"};
  app.name(args.empty() ? "moledit" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--threads", g.threads, "Worker threads for scoring and evaluation")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config_path, "Config file of key = value lines")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Config override key=value (repeatable)");

  std::string out_path, corpus_path, task_name_arg, ckpt, bench_dir, edited_dir, report_path, ablate, resume;
  std::optional<std::size_t> size;

  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic JSONL corpus");
  gen->add_option("--out", out_path, "Output JSONL path")->required();
  gen->add_option("--size", size, "Number of samples (default corpus.size)");

  auto* pre = app.add_subcommand("pretrain", "Train a backbone on a corpus");
  pre->add_option("--corpus", corpus_path, "Corpus JSONL")->required();
  pre->add_option("--task", task_name_arg, "cap or mol")->required();
  pre->add_option("--out", ckpt, "Checkpoint path")->required();
  pre->add_option("--resume", resume, "Continue training from this checkpoint");

  auto* bb = app.add_subcommand("bench-build", "Build edit, locality and generality sets");
  bb->add_option("--model", ckpt, "Checkpoint path")->required();
  bb->add_option("--corpus", corpus_path, "Corpus JSONL")->required();
  bb->add_option("--task", task_name_arg, "cap or mol")->required();
  bb->add_option("--out", out_path, "Output directory")->required();

  auto* ed = app.add_subcommand("edit", "Apply the edit set sequentially");
  ed->add_option("--model", ckpt, "Checkpoint path")->required();
  ed->add_option("--bench", bench_dir, "Benchmark directory")->required();
  ed->add_option("--task", task_name_arg, "cap or mol")->required();
  ed->add_option("--ablate", ablate, "Comma list of no_meka, no_eaes, encoder_only, decoder_only");
  ed->add_option("--out", out_path, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Score reliability, locality and generality");
  ev->add_option("--edited", edited_dir, "Directory written by edit")->required();
  ev->add_option("--bench", bench_dir, "Benchmark directory")->required();
  ev->add_option("--task", task_name_arg, "cap or mol")->required();
  ev->add_option("--report", report_path, "Report JSON path")->required();

  auto* ra = app.add_subcommand("rationale", "Expert activation and switch accuracy report");
  ra->add_option("--edited", edited_dir, "Directory written by edit")->required();
  ra->add_option("--report", report_path, "Report JSON path")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    const RunConfig cfg = g.resolve();
    if (*gen) {
      cmd_gen_corpus(cfg, out_path, size, out);
    } else if (*pre) {
      cmd_pretrain(cfg, corpus_path, parse_task(task_name_arg), ckpt, resume, out);
    } else if (*bb) {
      cmd_bench_build(cfg, ckpt, corpus_path, parse_task(task_name_arg), out_path, out, err);
    } else if (*ed) {
      cmd_edit(cfg, ckpt, bench_dir, parse_task(task_name_arg), ablate, out_path, out);
    } else if (*ev) {
      cmd_eval(cfg, edited_dir, bench_dir, parse_task(task_name_arg), report_path, out);
    } else if (*ra) {
      cmd_rationale(cfg, edited_dir, report_path, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.error_class());
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInvariantError;
  }
  return kOk;
}

}  // namespace moledit::cli
