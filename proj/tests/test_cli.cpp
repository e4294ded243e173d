#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "clmr/clmr.hpp"
#include "fixtures.hpp"
#include "json.hpp"

using namespace clmr;
using namespace clmr::testing;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("clmr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path file(const std::string& name, const std::string& content) {
    const fs::path p = dir / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

  CliResult run(const std::string& args, const std::string& stdin_text = "") {
    const fs::path in = file("stdin.txt", stdin_text), out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + CLMR_CLI_PATH + "\" " + args + " <\"" + in.string() +
                            "\" >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }
};

std::vector<char32_t> alphabet() {
  std::vector<char32_t> cs;
  for (char32_t c = U'a'; c <= U'z'; ++c) cs.push_back(c);
  return cs;
}

}  // namespace

TEST_F(Cli, HelpDocumentsEveryFlag) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected{
      {"normalize", {"--drop-empty"}},
      {"vocab", {"--corpus", "--out"}},
      {"train", {"--corpus", "--valid", "--config", "--out", "--curve", "--hidden", "--layers", "--dropout", "--lr",
                 "--batch", "--clip", "--clip-mode", "--max-seq-len", "--max-epochs", "--epoch-mode", "--eval-every",
                 "--seed"}},
      {"ppl", {"--model", "--text"}},
      {"score", {"--model", "--text"}},
      {"rescore", {"--model", "--nbest", "--alpha", "--out"}},
      {"sweep", {"--model", "--nbest", "--alphas", "--out", "--svg"}},
      {"wer", {"--ref", "--hyp", "--char-diff", "--html", "--tsv"}},
      {"filter-testset", {"--pairs", "--out", "--review", "--discarded"}},
      {"ablate", {"--config", "--corpus", "--valid", "--nbest", "--fractions", "--repeats", "--out", "--alpha",
                  "--base-seed", "--jobs", "--resume", "--hidden", "--seed"}},
      {"stats", {"--a", "--b", "--mu", "--x", "--y", "--comparisons", "welch"}},
      {"report", {"--sweep", "--ablation", "--replicates", "--baseline", "--svg", "--out"}}};
  const auto top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const auto& [sub, flags] : expected) {
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
    const auto r = run(sub + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << sub << " " << f;
  }
}

TEST_F(Cli, NormalizeStreams) {
  const auto r = run("normalize", "ʻO Lāhaina!\n((noise))\nA  B\n");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "ʻo lāhaina\n\na b\n");
  EXPECT_EQ(run("normalize --drop-empty", "x\n(( ))\ny\n").out, "x\ny\n");
}

TEST_F(Cli, PerplexityOfUniformModelIsVocabularySize) {
  const auto model = dir / "zero.clmr";
  save_checkpoint(zero_model(alphabet()), model.string());
  const auto text = file("t.txt", "hello world\nabc\n");
  const auto r = run("ppl --model " + model.string() + " --text " + text.string());
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "27.000000\n");
}

TEST_F(Cli, ExitCodes) {
  const auto model = dir / "zero.clmr";
  save_checkpoint(zero_model(alphabet()), model.string());
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("ppl --model " + model.string()).code, 1);  // missing --text
  EXPECT_EQ(run("ppl --model " + model.string() + " --text /no/such/file").code, 1);
  EXPECT_EQ(run("rescore --model " + model.string() + " --nbest " + file("n.jsonl", "").string() + " --alpha 1").code, 1);
  EXPECT_EQ(run("ppl --model " + model.string() + " --text " + file("oov.txt", "abc 7\n").string()).code, 2);
  EXPECT_EQ(run("ppl --model " + file("junk.clmr", "JUNK").string() + " --text " + file("t.txt", "a\n").string()).code, 2);
  const auto degenerate = run("stats welch --a 1,1 --b 2,2");
  EXPECT_EQ(degenerate.code, 3);
  EXPECT_NE(degenerate.err.find("degenerate samples"), std::string::npos);
  EXPECT_EQ(run("stats welch --a 1,x --b 2,3").code, 1);
}

TEST_F(Cli, MalformedJsonlReportsLineNumber) {
  const auto model = dir / "zero.clmr";
  save_checkpoint(zero_model(alphabet()), model.string());
  const auto nbest = file("bad.jsonl",
                          "{\"id\":\"a\",\"hypotheses\":[{\"text\":\"x\",\"asr_logprob\":-1}]}\n"
                          "\n"
                          "{\"id\":\"b\",\"hypotheses\":[{\"text\":\"y\"}]}\n");
  const auto out = dir / "rescored.jsonl";
  const auto r = run("rescore --model " + model.string() + " --nbest " + nbest.string() + " --out " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.jsonl:3"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(out));  // no partial output
}

TEST_F(Cli, RescoreAtZeroKeepsAsrArgmax) {
  const auto model = dir / "m.clmr";
  save_checkpoint(random_model(alphabet(), 6, 1, 3), model.string());
  std::string lines;
  Rng rng(4);
  std::vector<std::size_t> argmax;
  for (int u = 0; u < 20; ++u) {
    nlohmann::json j{{"id", "u" + std::to_string(u)}, {"hypotheses", nlohmann::json::array()}};
    double best = -1e9;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      const double lp = -uniform(rng, 0, 10);
      if (lp > best) best = lp, arg = k;
      j["hypotheses"].push_back({{"text", std::string(1 + k, static_cast<char>('a' + u % 26))}, {"asr_logprob", lp}});
    }
    argmax.push_back(arg);
    lines += j.dump() + "\n";
  }
  const auto r = run("rescore --model " + model.string() + " --nbest " + file("n.jsonl", lines).string() + " --alpha 0");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::size_t u = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["selected"].get<std::size_t>(), argmax[u]);
    EXPECT_EQ(j["id"], "u" + std::to_string(u));
    ++u;
  }
  EXPECT_EQ(u, 20u);
}

TEST_F(Cli, TrainIsDeterministicAndConfigIsStrict) {
  const auto train = file("train.txt", "abab ab\nbaba\nab ba ab\n");
  const auto valid = file("valid.txt", "ab ba\n");
  const auto cfg = file("cfg.json", "{\"hidden_size\":4,\"num_layers\":1,\"max_epochs\":4,\"eval_every\":2,\"batch_size\":2}");
  const std::string base = "train --corpus " + train.string() + " --valid " + valid.string() + " --config " + cfg.string();
  ASSERT_EQ(run(base + " --out " + (dir / "a.clmr").string() + " --curve " + (dir / "c.csv").string()).code, 0);
  ASSERT_EQ(run(base + " --out " + (dir / "b.clmr").string()).code, 0);
  EXPECT_EQ(slurp(dir / "a.clmr"), slurp(dir / "b.clmr"));
  EXPECT_EQ(slurp(dir / "c.csv").rfind("epoch,train_loss,val_ppl\n2,", 0), 0u);
  ASSERT_EQ(run(base + " --seed 9 --out " + (dir / "s.clmr").string()).code, 0);
  EXPECT_NE(slurp(dir / "a.clmr"), slurp(dir / "s.clmr"));
  EXPECT_EQ(load_checkpoint((dir / "s.clmr").string()).config.seed, 9u);

  const auto bad = file("bad.json", "{\"hidden_size\":4,\"colour\":\"red\"}");
  const auto r = run("train --corpus " + train.string() + " --valid " + valid.string() + " --config " + bad.string() +
                     " --out " + (dir / "x.clmr").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("colour"), std::string::npos);
}

TEST_F(Cli, WerAndDiffs) {
  const auto ref = file("ref.txt", "A b c.\nd\n");
  const auto hyp = file("hyp.txt", "a x c\nd\n");
  const auto r = run("wer --ref " + ref.string() + " --hyp " + hyp.string() + " --char-diff --tsv " +
                     (dir / "w.tsv").string() + " --html " + (dir / "d.html").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("1\ta [SUB:x→b] c\n"), std::string::npos);
  const auto last = r.out.substr(r.out.rfind('{'));
  EXPECT_DOUBLE_EQ(nlohmann::json::parse(last)["wer"].get<double>(), 0.25);
  EXPECT_NE(slurp(dir / "d.html").find("class=\"sub\""), std::string::npos);
  EXPECT_EQ(run("wer --ref " + ref.string() + " --hyp " + file("short.txt", "a\n").string()).code, 2);
}

TEST_F(Cli, StatsJson) {
  const auto r = run("stats onesample --a 0.9,1.0,1.1 --mu 1.0");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["test"], "onesample");
  EXPECT_EQ(j["df"], 2.0);
  EXPECT_NEAR(j["p"].get<double>(), 1.0, 1e-12);
  EXPECT_FALSE(j.contains("corrected_p"));
  const auto p = nlohmann::json::parse(run("stats pearson --x 1,2,3,4 --y 1,3,2,4 --comparisons 3").out);
  EXPECT_NEAR(p["corrected_p"].get<double>(), std::min(1.0, 3 * p["p"].get<double>()), 1e-15);
}

TEST_F(Cli, FilterTestset) {
  const auto pairs = file("p.jsonl",
                          "{\"id\":\"p1\",\"reference\":\"((laughter))\",\"duration\":2}\n"
                          "{\"id\":\"p2\",\"reference\":\"Aloha\",\"duration\":26.593}\n"
                          "{\"id\":\"p3\",\"reference\":\"Aloha\",\"duration\":31}\n");
  const auto r = run("filter-testset --pairs " + pairs.string() + " --out " + (dir / "k.jsonl").string() +
                     " --review " + (dir / "r.jsonl").string() + " --discarded " + (dir / "d.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string kept = slurp(dir / "k.jsonl");
  EXPECT_EQ(std::count(kept.begin(), kept.end(), '\n'), 2);
  EXPECT_NE(kept.find("exceeds-30s"), std::string::npos);
  EXPECT_NE(slurp(dir / "d.jsonl").find("empty-after-normalization"), std::string::npos);
  EXPECT_NE(slurp(dir / "r.jsonl").find("pending"), std::string::npos);
}

TEST_F(Cli, SweepAndReport) {
  auto ck = zero_model({U'a', U'b'});
  ck.params.b_out.storage() = {-5.0, 5.0, -5.0};  // strongly prefers 'a'
  const auto model = dir / "m.clmr";
  save_checkpoint(ck, model.string());
  const auto nbest = file("n.jsonl",
                          "{\"id\":\"1\",\"reference\":\"aa\",\"hypotheses\":[{\"text\":\"ba\",\"asr_logprob\":-1},"
                          "{\"text\":\"aa\",\"asr_logprob\":-1.5}]}\n");
  const auto csv = dir / "sweep.csv";
  const auto r = run("sweep --model " + model.string() + " --nbest " + nbest.string() + " --out " + csv.string() +
                     " --svg " + (dir / "s.svg").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(csv),
            "alpha,wer,substitutions,deletions,insertions,ref_words\n0,1,1,0,0,1\n0.25,0,0,0,0,1\n"
            "0.5,0,0,0,0,1\n0.75,0,0,0,0,1\n");
  EXPECT_EQ(slurp(dir / "s.svg").rfind("<svg", 0), 0u);
  const auto rep = run("report --sweep " + csv.string());
  EXPECT_EQ(rep.code, 0);
  EXPECT_EQ(nlohmann::json::parse(rep.out).size(), 4u);
  EXPECT_EQ(run("report").code, 1);
}
