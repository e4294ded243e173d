// clmr: command-line front end for corpus preparation, LM training, N-best
// rescoring, evaluation, statistics and reports.
//
// Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "clmr/clmr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool g_quiet = false;

void log(const std::string& msg) {
  if (!g_quiet) std::cerr << "clmr: " << msg << '\n';
}

std::string fmt_double(double v, const char* f = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> read_file_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw clmr::UsageError("cannot open " + path);
  return clmr::read_lines(in);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw clmr::UsageError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a temporary sibling and rename, so readers never see a
/// half-written file.
void write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw clmr::UsageError("cannot write " + path);
    out << content;
    if (!out) throw clmr::DataError("write failed: " + path);
  }
  fs::rename(tmp, path);
}

std::vector<clmr::HypothesisSet> load_nbest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw clmr::UsageError("cannot open " + path);
  return clmr::read_nbest(in, path);
}

// ---------------------------------------------------------------------------
// Run configuration: LM keys plus run-level keys, nothing else.

const std::set<std::string>& run_keys() {
  static const std::set<std::string> keys = {"train",     "valid", "nbest", "out",  "alpha",
                                             "alphas",    "fractions", "repeats", "base_seed",
                                             "jobs"};
  return keys;
}

struct RunConfig {
  clmr::LmConfig lm;
  std::optional<std::string> train, valid, nbest, out;
  std::optional<double> alpha;
  std::optional<std::vector<double>> alphas, fractions;
  std::optional<std::size_t> repeats, jobs;
  std::optional<std::uint64_t> base_seed;
};

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw clmr::UsageError(path + ": invalid JSON config (" + e.what() + ")");
  }
  if (!j.is_object()) throw clmr::UsageError(path + ": config must be a JSON object");
  const auto& lm_keys = clmr::lm_config_keys();
  for (const auto& [key, _] : j.items()) {
    if (!run_keys().count(key) && std::find(lm_keys.begin(), lm_keys.end(), key) == lm_keys.end()) {
      throw clmr::UsageError(path + ": unknown config key \"" + key + "\"");
    }
  }
  RunConfig rc;
  rc.lm = clmr::config_from_json(j);
  try {
    auto str = [&](const char* k, std::optional<std::string>& dst) {
      if (j.contains(k)) dst = j.at(k).get<std::string>();
    };
    str("train", rc.train);
    str("valid", rc.valid);
    str("nbest", rc.nbest);
    str("out", rc.out);
    if (j.contains("alpha")) rc.alpha = j.at("alpha").get<double>();
    if (j.contains("alphas")) rc.alphas = j.at("alphas").get<std::vector<double>>();
    if (j.contains("fractions")) rc.fractions = j.at("fractions").get<std::vector<double>>();
    if (j.contains("repeats")) rc.repeats = j.at("repeats").get<std::size_t>();
    if (j.contains("jobs")) rc.jobs = j.at("jobs").get<std::size_t>();
    if (j.contains("base_seed")) rc.base_seed = j.at("base_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw clmr::UsageError(path + ": bad config value (" + e.what() + ")");
  }
  return rc;
}

/// Training flags shared by `train` and `ablate`; unset flags leave the
/// configuration untouched.
struct LmFlags {
  std::optional<std::size_t> hidden, layers, batch, max_seq_len, max_epochs, eval_every;
  std::optional<double> dropout, lr, clip;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> epoch_mode, clip_mode;

  void add_to(CLI::App* app) {
    app->add_option("--hidden", hidden, "LSTM hidden size (default 200)");
    app->add_option("--layers", layers, "number of LSTM layers (default 3)");
    app->add_option("--dropout", dropout, "dropout probability in [0, 1) (default 0.2)");
    app->add_option("--lr", lr, "Adam learning rate (default 0.001)");
    app->add_option("--batch", batch, "chunks per batch (default 256)");
    app->add_option("--clip", clip, "gradient clip threshold (default 1)");
    app->add_option("--clip-mode", clip_mode, "norm (global L2) or value")->check(CLI::IsMember({"norm", "value"}));
    app->add_option("--max-seq-len", max_seq_len, "chunk length in characters (default 100)");
    app->add_option("--max-epochs", max_epochs, "epoch budget (default 10000)");
    app->add_option("--epoch-mode", epoch_mode, "steps (epoch = one batch) or passes (epoch = one corpus pass)")
        ->check(CLI::IsMember({"steps", "passes"}));
    app->add_option("--eval-every", eval_every, "validation cadence in steps mode (default 100)");
    app->add_option("--seed", seed, "seed for initialization, batching and dropout (default 0)");
  }

  void apply(clmr::LmConfig& c) const {
    if (hidden) c.hidden_size = *hidden;
    if (layers) c.num_layers = *layers;
    if (dropout) c.dropout = *dropout;
    if (lr) c.learning_rate = *lr;
    if (batch) c.batch_size = *batch;
    if (clip) c.clip = *clip;
    if (max_seq_len) c.max_seq_len = *max_seq_len;
    if (max_epochs) c.max_epochs = *max_epochs;
    if (eval_every) c.eval_every = *eval_every;
    if (seed) c.seed = *seed;
    if (epoch_mode) c.epoch_mode = *epoch_mode == "steps" ? clmr::EpochMode::steps : clmr::EpochMode::passes;
    if (clip_mode) c.clip_mode = *clip_mode == "norm" ? clmr::ClipMode::norm : clmr::ClipMode::value;
  }
};

std::vector<double> parse_number_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw clmr::UsageError(std::string("bad number in ") + what + ": \"" + item + "\"");
    }
  }
  if (out.empty()) throw clmr::UsageError(std::string(what) + " must not be empty");
  return out;
}

json report_json(const clmr::WerReport& r) {
  return {{"s", r.substitutions}, {"d", r.deletions}, {"i", r.insertions},
          {"ref_words", r.ref_words}, {"wer", r.wer()}};
}

json test_json(const clmr::stats::TestResult& t) {
  json j{{"test", t.test}, {"statistic", t.statistic}, {"df", t.df}, {"p", t.p_value}};
  if (t.corrected_p) j["corrected_p"] = *t.corrected_p;
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_normalize(bool drop_empty) {
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string n = clmr::normalize_text(line);
    if (drop_empty && n.empty()) continue;
    std::cout << n << '\n';
  }
  return 0;
}

int cmd_vocab(const std::string& corpus, const std::string& out) {
  const auto vocab = clmr::build_vocab(clmr::normalize_lines(read_file_lines(corpus)));
  std::ostringstream ss;
  clmr::write_vocab(ss, vocab);
  write_file(out, ss.str());
  log("vocabulary of " + std::to_string(vocab.size()) + " characters written to " + out);
  return 0;
}

struct TrainArgs {
  std::string corpus, valid, config, out, curve;
  LmFlags flags;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  a.flags.apply(rc.lm);
  const std::string corpus = !a.corpus.empty() ? a.corpus : rc.train.value_or("");
  const std::string valid = !a.valid.empty() ? a.valid : rc.valid.value_or("");
  const std::string out = !a.out.empty() ? a.out : rc.out.value_or("");
  if (corpus.empty() || valid.empty() || out.empty()) {
    throw clmr::UsageError("train needs --corpus, --valid and --out (or config keys train, valid, out)");
  }
  const auto train_lines = clmr::normalize_lines(read_file_lines(corpus));
  const auto valid_lines = clmr::normalize_lines(read_file_lines(valid));
  const auto st = clmr::corpus_stats(train_lines);
  log("training corpus: " + std::to_string(st.lines) + " lines, " + std::to_string(st.words) +
      " words, " + std::to_string(st.chars) + " characters");
  try {
    const auto result = clmr::train(train_lines, valid_lines, rc.lm, [](const clmr::CurvePoint& p) {
      log("epoch " + std::to_string(p.epoch) + " train_loss " + fmt_double(p.train_loss, "%.4f") +
          " val_ppl " + fmt_double(p.val_ppl, "%.4f"));
    });
    clmr::save_checkpoint(result.checkpoint, out);
    if (!a.curve.empty()) {
      std::ostringstream ss;
      clmr::write_curve_csv(ss, result.curve);
      write_file(a.curve, ss.str());
    }
    log("best validation perplexity " + fmt_double(result.checkpoint.best_val_perplexity, "%.6f") +
        " at epoch " + std::to_string(result.checkpoint.epoch_of_best) + "; saved " + out);
  } catch (const clmr::TrainingDiverged& e) {
    if (e.last_good()) {
      clmr::save_checkpoint(*e.last_good(), out);
      log("saved last good checkpoint to " + out);
    }
    throw;
  }
  return 0;
}

int cmd_ppl(const std::string& model, const std::string& text) {
  const auto ck = clmr::load_checkpoint(model);
  const double ppl = clmr::perplexity(clmr::normalize_lines(read_file_lines(text)), ck);
  std::cout << fmt_double(ppl, "%.6f") << '\n';
  return 0;
}

int cmd_score(const std::string& model, const std::string& text) {
  const auto ck = clmr::load_checkpoint(model);
  const auto lines = clmr::normalize_lines(read_file_lines(text));
  std::vector<clmr::ScoredString> scored;
  try {
    scored = clmr::batch_logprob(lines, ck);
  } catch (const clmr::DataError& e) {
    throw clmr::DataError(text + ": " + e.what() + " (strings are 0-based line indices)");
  }
  std::ostringstream out;
  out << "text\tlm_logprob\tn_chars\n";
  for (const auto& s : scored) out << s.text << '\t' << fmt_double(s.lm_logprob) << '\t' << s.n_chars << '\n';
  std::cout << out.str();
  return 0;
}

int cmd_rescore(const std::string& model, const std::string& nbest, double alpha, const std::string& out) {
  clmr::check_alpha(alpha);
  const auto ck = clmr::load_checkpoint(model);
  const auto sets = load_nbest(nbest);
  std::ostringstream ss;
  std::size_t flagged = 0;
  for (const auto& s : sets) {
    const auto r = clmr::rescore_set(s, ck, alpha);
    if (!r.flags.empty()) ++flagged;
    ss << clmr::to_json(r).dump() << '\n';
  }
  if (out.empty()) std::cout << ss.str();
  else write_file(out, ss.str());
  log("rescored " + std::to_string(sets.size()) + " utterances at alpha " + fmt_double(alpha, "%g") +
      (flagged ? "; " + std::to_string(flagged) + " flagged" : ""));
  return 0;
}

int cmd_sweep(const std::string& model, const std::string& nbest, const std::string& alphas_text,
              const std::string& out, const std::string& svg) {
  const auto alphas = parse_number_list(alphas_text, "--alphas");
  for (double a : alphas) clmr::check_alpha(a);
  const auto ck = clmr::load_checkpoint(model);
  const auto rows = clmr::alpha_sweep(load_nbest(nbest), ck, alphas);
  std::ostringstream ss;
  clmr::write_sweep_csv(ss, rows);
  if (out.empty()) std::cout << ss.str();
  else write_file(out, ss.str());
  if (!svg.empty()) write_file(svg, clmr::sweep_svg(rows));
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].report.wer() < rows[best].report.wer()) best = i;
  log("lowest WER " + fmt_double(rows[best].report.wer(), "%.4f") + " at alpha " +
      fmt_double(rows[best].alpha, "%g"));
  return 0;
}

struct WerArgs {
  std::string ref, hyp, html, tsv;
  bool char_diff = false;
};

int cmd_wer(const WerArgs& a) {
  const auto refs = read_file_lines(a.ref);
  const auto hyps = read_file_lines(a.hyp);
  if (refs.size() != hyps.size()) {
    throw clmr::DataError("line count mismatch: " + std::to_string(refs.size()) + " references, " +
                          std::to_string(hyps.size()) + " hypotheses");
  }
  std::vector<clmr::UtterancePair> pairs;
  for (std::size_t i = 0; i < refs.size(); ++i)
    pairs.push_back({"line " + std::to_string(i + 1), clmr::normalize_text(refs[i]), clmr::normalize_text(hyps[i])});
  const auto total = clmr::corpus_wer(pairs);
  if (!a.tsv.empty()) {
    std::ostringstream ss;
    ss << "line\ts\td\ti\tref_words\twer\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto r = clmr::wer(pairs[i].reference, pairs[i].hypothesis);
      ss << i + 1 << '\t' << r.substitutions << '\t' << r.deletions << '\t' << r.insertions << '\t'
         << r.ref_words << '\t' << fmt_double(r.wer()) << '\n';
    }
    write_file(a.tsv, ss.str());
  }
  if (a.char_diff) {
    for (std::size_t i = 0; i < pairs.size(); ++i)
      std::cout << i + 1 << '\t' << clmr::render_text(clmr::char_alignment(pairs[i].reference, pairs[i].hypothesis))
                << '\n';
  }
  if (!a.html.empty()) {
    std::ostringstream ss;
    ss << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><style>" << clmr::kDiffCss
       << "td{font-family:monospace;padding:2px 8px}</style></head><body>\n<table>\n"
       << "<tr><th>line</th><th>hypothesis</th><th>reference</th></tr>\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto h = clmr::render_html(clmr::char_alignment(pairs[i].reference, pairs[i].hypothesis));
      ss << "<tr><td>" << i + 1 << "</td><td>" << h.hypothesis << "</td><td>" << h.reference << "</td></tr>\n";
    }
    ss << "</table>\n</body></html>\n";
    write_file(a.html, ss.str());
  }
  std::cout << report_json(total).dump() << '\n';
  return 0;
}

int cmd_filter(const std::string& pairs_path, const std::string& out, const std::string& review,
               const std::string& discarded_path) {
  std::ifstream in(pairs_path);
  if (!in) throw clmr::UsageError("cannot open " + pairs_path);
  std::vector<clmr::TestPair> pairs;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = pairs_path + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw clmr::DataError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
      throw clmr::DataError(where + ": \"id\" must be a string");
    if (!j.contains("reference") || !j["reference"].is_string())
      throw clmr::DataError(where + ": \"reference\" must be a string");
    clmr::TestPair p{j["id"].get<std::string>(), j["reference"].get<std::string>(), std::nullopt};
    if (j.contains("duration") && !j["duration"].is_null()) {
      if (!j["duration"].is_number()) throw clmr::DataError(where + ": \"duration\" must be a number");
      p.duration = j["duration"].get<double>();
    }
    if (!ids.insert(p.id).second) throw clmr::DataError(where + ": duplicate id \"" + p.id + "\"");
    pairs.push_back(std::move(p));
  }
  const auto result = clmr::filter_testset(pairs);
  auto row = [](const clmr::FilteredPair& f) {
    json j{{"id", f.pair.id}, {"reference", f.pair.reference}, {"normalized_reference", f.normalized_reference}};
    j["duration"] = f.pair.duration ? json(*f.pair.duration) : json();
    return j;
  };
  std::ostringstream kept, rev, disc;
  for (const auto& f : result.kept) {
    json j = row(f);
    j["flags"] = f.flags;
    kept << j.dump() << '\n';
    json r = row(f);
    r["flags"] = f.flags;
    r["check"] = "audio matches reference";
    r["status"] = "pending";
    rev << r.dump() << '\n';
  }
  for (const auto& f : result.discarded) {
    json j = row(f);
    j["reason"] = f.reason;
    disc << j.dump() << '\n';
  }
  write_file(out, kept.str());
  if (!review.empty()) write_file(review, rev.str());
  if (!discarded_path.empty()) write_file(discarded_path, disc.str());
  std::size_t words = 0;
  for (const auto& f : result.kept) words += clmr::word_tokenize(f.normalized_reference).size();
  log(std::to_string(result.kept.size()) + " pairs kept (" + std::to_string(words) + " words), " +
      std::to_string(result.discarded.size()) + " discarded");
  for (const auto& f : result.discarded) log("discarded " + f.pair.id + ": " + f.reason);
  return 0;
}

struct AblateArgs {
  std::string config, fractions, out, corpus, valid, nbest;
  std::optional<std::size_t> repeats, jobs;
  std::optional<double> alpha;
  std::optional<std::uint64_t> base_seed;
  bool resume = false;
  LmFlags flags;
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig rc = load_run_config(a.config);
  a.flags.apply(rc.lm);
  const std::string corpus = !a.corpus.empty() ? a.corpus : rc.train.value_or("");
  const std::string valid = !a.valid.empty() ? a.valid : rc.valid.value_or("");
  const std::string nbest = !a.nbest.empty() ? a.nbest : rc.nbest.value_or("");
  const std::string out = !a.out.empty() ? a.out : rc.out.value_or("");
  if (corpus.empty() || valid.empty() || nbest.empty() || out.empty()) {
    throw clmr::UsageError("ablate needs train, valid and nbest paths and --out (flags or config keys)");
  }
  for (const auto& p : {corpus, valid, nbest})
    if (!fs::exists(p)) throw clmr::UsageError("no such file: " + p);
  std::vector<double> fractions = !a.fractions.empty() ? parse_number_list(a.fractions, "--fractions")
                                                       : rc.fractions.value_or(std::vector<double>{1, 0.5, 0.25, 0.125, 0.0625});
  for (double f : fractions) clmr::subsample_size(1, f);
  const std::size_t repeats = a.repeats ? *a.repeats : rc.repeats.value_or(5);
  if (repeats == 0) throw clmr::UsageError("--repeats must be positive");

  clmr::AblationOptions opt;
  opt.alpha = a.alpha ? *a.alpha : rc.alpha.value_or(0.25);
  opt.base_seed = a.base_seed ? *a.base_seed : rc.base_seed.value_or(0);
  opt.jobs = a.jobs ? *a.jobs : rc.jobs.value_or(1);
  clmr::check_alpha(opt.alpha);
  if (a.resume && fs::exists(out)) {
    std::ifstream in(out);
    opt.completed = clmr::read_ablation_csv(in);
    std::size_t usable = 0;
    for (const auto& r : opt.completed) usable += r.ok();
    log("resuming: " + std::to_string(usable) + " finished cells in " + out);
  }

  const auto train_lines = clmr::normalize_lines(read_file_lines(corpus));
  const auto valid_lines = clmr::normalize_lines(read_file_lines(valid));
  const auto sets = load_nbest(nbest);

  // Progress file: finished cells so far, rewritten after each one.
  std::vector<clmr::AblationRecord> progress;
  for (const auto& r : opt.completed)
    if (r.ok()) progress.push_back(r);
  opt.on_record = [&](const clmr::AblationRecord& r) {
    progress.push_back(r);
    std::ostringstream ss;
    clmr::write_ablation_csv(ss, progress);
    write_file(out, ss.str());
    log("fraction " + fmt_double(r.fraction, "%g") + " repeat " + std::to_string(r.repeat) + ": " +
        (r.ok() ? "val_ppl " + fmt_double(r.val_perplexity, "%.4f") + " wer " + fmt_double(r.wer, "%.4f")
                : r.status));
  };
  const auto records = clmr::run_ablation(train_lines, valid_lines, sets, rc.lm, fractions, repeats, opt);
  std::ostringstream ss;
  clmr::write_ablation_csv(ss, records);
  write_file(out, ss.str());
  std::size_t failed = 0;
  for (const auto& r : records) failed += !r.ok();
  log(std::to_string(records.size()) + " cells written to " + out +
      (failed ? " (" + std::to_string(failed) + " failed)" : ""));
  return 0;
}

struct StatsArgs {
  std::string test, a, b, x, y;
  std::optional<double> mu;
  std::size_t comparisons = 1;
};

int cmd_stats(const StatsArgs& s) {
  clmr::stats::TestResult t;
  if (s.test == "welch") {
    if (s.a.empty() || s.b.empty()) throw clmr::UsageError("welch needs --a and --b");
    t = clmr::stats::welch_t(parse_number_list(s.a, "--a"), parse_number_list(s.b, "--b"));
  } else if (s.test == "onesample") {
    if (s.a.empty() || !s.mu) throw clmr::UsageError("onesample needs --a and --mu");
    t = clmr::stats::one_sample_t(parse_number_list(s.a, "--a"), *s.mu);
  } else {
    if (s.x.empty() || s.y.empty()) throw clmr::UsageError("pearson needs --x and --y");
    t = clmr::stats::pearson(parse_number_list(s.x, "--x"), parse_number_list(s.y, "--y"));
  }
  if (s.comparisons > 1) t.corrected_p = clmr::stats::bonferroni(t.p_value, s.comparisons);
  std::cout << test_json(t).dump() << '\n';
  return 0;
}

std::vector<clmr::SweepRow> read_sweep_csv(const std::string& path) {
  const auto lines = read_file_lines(path);
  if (lines.empty() || lines[0] != "alpha,wer,substitutions,deletions,insertions,ref_words")
    throw clmr::DataError(path + ": not a sweep CSV");
  std::vector<clmr::SweepRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = clmr::detail::split_csv_line(lines[i]);
    if (f.size() != 6) throw clmr::DataError(path + ":" + std::to_string(i + 1) + ": expected 6 fields");
    try {
      clmr::SweepRow r{std::stod(f[0]), {std::stoul(f[2]), std::stoul(f[3]), std::stoul(f[4]), std::stoul(f[5])}};
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw clmr::DataError(path + ":" + std::to_string(i + 1) + ": bad number");
    }
  }
  return rows;
}

struct ReportArgs {
  std::string sweep, ablation, replicates, svg, out, baseline;
};

int cmd_report(const ReportArgs& a) {
  const int sources = !a.sweep.empty() + !a.ablation.empty() + !a.replicates.empty();
  if (sources != 1) throw clmr::UsageError("report needs exactly one of --sweep, --ablation, --replicates");
  if (!a.sweep.empty()) {
    const auto rows = read_sweep_csv(a.sweep);
    if (rows.empty()) throw clmr::DataError(a.sweep + ": no rows");
    if (!a.svg.empty()) write_file(a.svg, clmr::sweep_svg(rows));
    json j = json::array();
    for (const auto& r : rows) j.push_back({{"alpha", r.alpha}, {"wer", r.report.wer()}});
    std::cout << j.dump() << '\n';
    return 0;
  }
  if (!a.ablation.empty()) {
    std::ifstream in(a.ablation);
    if (!in) throw clmr::UsageError("cannot open " + a.ablation);
    const auto records = clmr::read_ablation_csv(in);
    if (!a.svg.empty()) write_file(a.svg, clmr::ablation_svg(records));
    if (!a.out.empty()) {
      fs::create_directories(a.out);
      for (const auto& [name, csv] : clmr::ablation_scatter_csvs(records))
        write_file((fs::path(a.out) / (name + ".csv")).string(), csv);
    }
    const auto c = clmr::correlate_ablation(records);
    std::cout << json{{"words_vs_perplexity", test_json(c.words_vs_perplexity)},
                      {"words_vs_wer", test_json(c.words_vs_wer)},
                      {"perplexity_vs_wer", test_json(c.perplexity_vs_wer)}}
                     .dump()
              << '\n';
    return 0;
  }
  // Replicates: long-format CSV `group,wer`, one row per run.
  const auto lines = read_file_lines(a.replicates);
  if (lines.empty() || lines[0] != "group,wer") throw clmr::DataError(a.replicates + ": header must be group,wer");
  std::vector<clmr::ReplicateGroup> groups;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = clmr::detail::split_csv_line(lines[i]);
    if (f.size() != 2) throw clmr::DataError(a.replicates + ":" + std::to_string(i + 1) + ": expected 2 fields");
    double w;
    try {
      w = std::stod(f[1]);
    } catch (const std::logic_error&) {
      throw clmr::DataError(a.replicates + ":" + std::to_string(i + 1) + ": bad number");
    }
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.name == f[0]; });
    if (it == groups.end()) groups.push_back({f[0], {w}});
    else it->wers.push_back(w);
  }
  const auto summary = clmr::summarize_replicates(groups);
  std::ostringstream ss;
  clmr::write_replicate_csv(ss, summary);
  if (a.out.empty()) std::cout << ss.str();
  else write_file(a.out, ss.str());
  if (!a.svg.empty()) write_file(a.svg, clmr::replicate_svg(summary, "replicates"));
  if (!a.baseline.empty()) {
    auto base = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.name == a.baseline; });
    if (base == groups.end()) throw clmr::UsageError("no replicate group named " + a.baseline);
    const std::size_t m = groups.size() - 1;
    json tests = json::object();
    for (const auto& g : groups) {
      if (g.name == base->name) continue;
      // A single-run baseline is deterministic: compare against its value.
      auto t = base->wers.size() == 1 ? clmr::compare_replicates(g, base->wers[0]) : clmr::compare_replicates(g, *base);
      if (m > 1) t.corrected_p = clmr::stats::bonferroni(t.p_value, m);
      tests[g.name] = test_json(t);
    }
    std::cerr << tests.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Character-level LSTM language models for N-best rescoring of ASR output"};
  app.require_subcommand(1);
  app.add_flag("-q,--quiet", g_quiet, "suppress progress messages on stderr");
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  bool drop_empty = false;
  auto* normalize = app.add_subcommand("normalize", "normalize text from stdin to stdout, line by line");
  normalize->add_flag("--drop-empty", drop_empty, "omit lines that normalize to nothing");

  std::string vocab_corpus, vocab_out;
  auto* vocab = app.add_subcommand("vocab", "build the character vocabulary of a corpus");
  vocab->add_option("--corpus", vocab_corpus, "training corpus, one sentence per line")->required()->check(CLI::ExistingFile);
  vocab->add_option("--out", vocab_out, "vocabulary file to write")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a character LSTM LM, keeping the best-validation checkpoint");
  train->add_option("--corpus", ta.corpus, "training corpus (overrides config key train)")->check(CLI::ExistingFile);
  train->add_option("--valid", ta.valid, "validation corpus (overrides config key valid)")->check(CLI::ExistingFile);
  train->add_option("--config", ta.config, "JSON run configuration")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "checkpoint to write (overrides config key out)");
  train->add_option("--curve", ta.curve, "write the training curve CSV here");
  ta.flags.add_to(train);

  std::string model, text, nbest, out, alphas = "0,0.25,0.5,0.75", sweep_svg;
  double alpha = 0.25;
  auto* ppl = app.add_subcommand("ppl", "print per-character perplexity of a text");
  ppl->add_option("--model", model, "checkpoint")->required()->check(CLI::ExistingFile);
  ppl->add_option("--text", text, "text file, one line per string")->required()->check(CLI::ExistingFile);

  auto* score = app.add_subcommand("score", "print log-probabilities (nats) of each line as TSV");
  score->add_option("--model", model, "checkpoint")->required()->check(CLI::ExistingFile);
  score->add_option("--text", text, "text file, one string per line")->required()->check(CLI::ExistingFile);

  auto* rescore = app.add_subcommand("rescore", "rescore N-best lists with the LM at one alpha");
  rescore->add_option("--model", model, "checkpoint")->required()->check(CLI::ExistingFile);
  rescore->add_option("--nbest", nbest, "N-best JSON Lines")->required()->check(CLI::ExistingFile);
  rescore->add_option("--alpha", alpha, "LM weight in [0, 1) (default 0.25)");
  rescore->add_option("--out", out, "rescored JSON Lines (default stdout)");

  auto* sweep = app.add_subcommand("sweep", "corpus WER of rescored selections for several alphas");
  sweep->add_option("--model", model, "checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--nbest", nbest, "N-best JSON Lines with references")->required()->check(CLI::ExistingFile);
  sweep->add_option("--alphas", alphas, "comma-separated LM weights (default 0,0.25,0.5,0.75)");
  sweep->add_option("--out", out, "sweep CSV (default stdout)");
  sweep->add_option("--svg", sweep_svg, "also plot WER against alpha");

  WerArgs wa;
  auto* werc = app.add_subcommand("wer", "word error rate of line-aligned hypotheses, pooled over lines");
  werc->add_option("--ref", wa.ref, "reference file, one utterance per line")->required()->check(CLI::ExistingFile);
  werc->add_option("--hyp", wa.hyp, "hypothesis file, same line order")->required()->check(CLI::ExistingFile);
  werc->add_flag("--char-diff", wa.char_diff, "print character edit scripts, one line per utterance");
  werc->add_option("--html", wa.html, "write a colored character diff as HTML");
  werc->add_option("--tsv", wa.tsv, "write per-utterance counts as TSV");

  std::string pairs, review, discarded;
  auto* filter = app.add_subcommand("filter-testset", "drop empty references and flag long audio");
  filter->add_option("--pairs", pairs, "JSON Lines {id, reference, duration?}")->required()->check(CLI::ExistingFile);
  filter->add_option("--out", out, "kept pairs as JSON Lines")->required();
  filter->add_option("--review", review, "manual audio/text review manifest (JSON Lines)");
  filter->add_option("--discarded", discarded, "discarded pairs with reasons (JSON Lines)");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "retrain on nested data fractions and rescore with each LM");
  ablate->add_option("--config", aa.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  ablate->add_option("--corpus", aa.corpus, "training corpus (overrides config key train)");
  ablate->add_option("--valid", aa.valid, "validation corpus (overrides config key valid)");
  ablate->add_option("--nbest", aa.nbest, "N-best JSON Lines with references (overrides config key nbest)");
  ablate->add_option("--fractions", aa.fractions, "comma-separated fractions in (0, 1] (default 1,0.5,0.25,0.125,0.0625)");
  ablate->add_option("--repeats", aa.repeats, "subsamples per fraction (default 5)");
  ablate->add_option("--out", aa.out, "ablation CSV (overrides config key out)");
  ablate->add_option("--alpha", aa.alpha, "LM weight used for WER (default 0.25)");
  ablate->add_option("--base-seed", aa.base_seed, "repeat r uses seed base + r (default 0)");
  ablate->add_option("--jobs", aa.jobs, "cells trained concurrently (default 1)");
  ablate->add_flag("--resume", aa.resume, "reuse successful cells already in --out");
  aa.flags.add_to(ablate);

  StatsArgs sa;
  auto* statsc = app.add_subcommand("stats", "two-sided t-tests and correlation as JSON");
  statsc->add_option("test", sa.test, "welch | onesample | pearson")->required()->check(CLI::IsMember({"welch", "onesample", "pearson"}));
  statsc->add_option("--a", sa.a, "comma-separated sample (welch, onesample)");
  statsc->add_option("--b", sa.b, "comma-separated second sample (welch)");
  statsc->add_option("--mu", sa.mu, "hypothesized mean (onesample)");
  statsc->add_option("--x", sa.x, "comma-separated x values (pearson)");
  statsc->add_option("--y", sa.y, "comma-separated y values (pearson)");
  statsc->add_option("--comparisons", sa.comparisons, "Bonferroni family size; adds corrected_p when > 1");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "summaries and SVG plots from sweep, ablation or replicate CSVs");
  report->add_option("--sweep", ra.sweep, "sweep CSV")->check(CLI::ExistingFile);
  report->add_option("--ablation", ra.ablation, "ablation CSV; prints correlations")->check(CLI::ExistingFile);
  report->add_option("--replicates", ra.replicates, "CSV group,wer with one row per run")->check(CLI::ExistingFile);
  report->add_option("--baseline", ra.baseline, "replicate group to test the others against");
  report->add_option("--svg", ra.svg, "plot file to write");
  report->add_option("--out", ra.out, "replicate summary CSV, or directory for ablation scatter CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*normalize) return cmd_normalize(drop_empty);
    if (*vocab) return cmd_vocab(vocab_corpus, vocab_out);
    if (*train) return cmd_train(ta);
    if (*ppl) return cmd_ppl(model, text);
    if (*score) return cmd_score(model, text);
    if (*rescore) return cmd_rescore(model, nbest, alpha, out);
    if (*sweep) return cmd_sweep(model, nbest, alphas, out, sweep_svg);
    if (*werc) return cmd_wer(wa);
    if (*filter) return cmd_filter(pairs, out, review, discarded);
    if (*ablate) return cmd_ablate(aa);
    if (*statsc) return cmd_stats(sa);
    if (*report) return cmd_report(ra);
  } catch (const clmr::Error& e) {
    std::cerr << "clmr: error: " << e.what() << '\n';
    switch (e.kind()) {
      case clmr::ErrorKind::usage: return 1;
      case clmr::ErrorKind::data: return 2;
      case clmr::ErrorKind::numeric: return 3;
    }
  } catch (const fs::filesystem_error& e) {
    std::cerr << "clmr: error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
