#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hermit/hermit.hpp"

using nlohmann::json;

namespace {

const std::string kCli = HERMIT_CLI_PATH;
const std::string kData = HERMIT_DATA_DIR;
const std::string kScratch = HERMIT_BINARY_DIR;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.is_open());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  REQUIRE(os.is_open());
  os << text;
}

RunResult run_cli(const std::string& args) {
  static int seq = 0;
  const std::string base = kScratch + "/cli_io" + std::to_string(seq++);
  const std::string cmd =
      kCli + " " + args + " >" + base + ".out 2>" + base + ".err";
  const int status = std::system(cmd.c_str());
  RunResult r;
  if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = slurp(base + ".out");
  r.err = slurp(base + ".err");
  return r;
}

hermit::Corpus parse_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.is_open());
  return hermit::parse_conll(in, path);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) return cols;
    start = tab + 1;
  }
}

}  // namespace

TEST_CASE("convert turns utterance records into corpus files", "[cli]") {
  const std::string out = kScratch + "/cli_converted.conll";
  const std::string manifest = kScratch + "/cli_convert_manifest.json";
  const RunResult r = run_cli("convert --in " + kData + "/sample.jsonl --out " +
                              out + " --manifest " + manifest);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("converted 3 records to") != std::string::npos);

  const hermit::Corpus c = parse_file(out);
  REQUIRE(c.size() == 3);
  CHECK(c[0].id == "u1");
  CHECK(c[0].tokens == std::vector<std::string>{"set", "a", "call", "with",
                                                "Lisa", "Monday", "morning"});
  CHECK(c[0].da_tags.front() == "B-calendar");
  CHECK(c[0].da_tags.back() == "I-calendar");
  CHECK(c[0].fr_tags.front() == "B-set_event");
  CHECK(c[0].ar_tags ==
        std::vector<std::string>{"O", "B-event_name", "I-event_name",
                                 "I-event_name", "I-event_name", "B-date",
                                 "I-date"});

  // the second record only carries raw text; tokens come from whitespace
  CHECK(c[1].tokens ==
        std::vector<std::string>{"play", "some", "jazz", "please", "."});
  CHECK(c[1].da_tags.back() == "I-play");
  CHECK(c[1].ar_tags[2] == "B-music_genre");

  CHECK(c[2].id == "u3");
  CHECK(c[2].ar_tags == std::vector<std::string>(5, "O"));

  const json m = json::parse(slurp(manifest));
  CHECK(m["command"] == "convert");
  CHECK(m["metrics"]["records"] == 3);
  CHECK(m["settings"]["strip_final_punct"] == false);
  REQUIRE(m["inputs"].contains(kData + "/sample.jsonl"));
  CHECK(m["inputs"][kData + "/sample.jsonl"].get<std::string>().size() == 16);
  CHECK(m["outputs"].contains(out));
}

TEST_CASE("convert can leave trailing punctuation outside the spans", "[cli]") {
  const std::string out = kScratch + "/cli_converted_stripped.conll";
  const RunResult r = run_cli("convert --in " + kData + "/sample.jsonl --out " +
                              out + " --strip-final-punct");
  REQUIRE(r.code == 0);

  const hermit::Corpus c = parse_file(out);
  REQUIRE(c.size() == 3);
  CHECK(c[1].da_tags.back() == "O");
  CHECK(c[1].fr_tags.back() == "O");
  CHECK(c[1].da_tags[3] == "I-play");
  CHECK(c[2].da_tags.back() == "O");  // "?" is punctuation too
  CHECK(c[2].da_tags.front() == "B-datetime");
}

TEST_CASE("train, tag, and eval work end to end", "[cli]") {
  const std::string toy = kData + "/toy64.conll";
  const std::string model = kScratch + "/cli_model.bin";
  RunResult tr = run_cli("train --data " + toy + " --out " + model +
                         " --embedding-dim 8 --hidden-dim 8 --seed 3"
                         " --lr 0.05 --batch-size 16 --epochs 3 --target 0");
  REQUIRE(tr.code == 0);
  CHECK(tr.out.find("  loss ") != std::string::npos);
  CHECK(tr.out.find("dev-f1") != std::string::npos);
  CHECK(tr.out.find("best epoch") != std::string::npos);
  CHECK(tr.out.find("model written to " + model) != std::string::npos);

  // tagging an annotated corpus keeps the gold columns beside the predictions
  const std::string merged = kScratch + "/cli_tagged.conll";
  RunResult tg = run_cli("tag --model " + model + " --data " + toy + " --out " +
                         merged + " --manifest " + kScratch +
                         "/cli_tag_manifest.json");
  REQUIRE(tg.code == 0);

  std::ifstream min(merged);
  REQUIRE(min.is_open());
  const hermit::ParsedConll parsed = hermit::parse_conll_full(min, merged);
  REQUIRE(parsed.has_predictions);
  REQUIRE(parsed.gold.size() == 64);
  CHECK(parsed.gold[0].tokens == parsed.predicted[0].tokens);

  // the written predictions are what the checkpoint itself predicts
  hermit::HermitModel loaded = hermit::load_checkpoint(model);
  const hermit::TriPrediction p =
      loaded.predict(parsed.gold[0].tokens, parsed.gold[0].id);
  CHECK(p.da_tags == parsed.predicted[0].da_tags);
  CHECK(p.ar_tags == parsed.predicted[0].ar_tags);

  const json tm = json::parse(slurp(kScratch + "/cli_tag_manifest.json"));
  CHECK(tm["command"] == "tag");
  CHECK(tm["inputs"].size() == 2);
  CHECK(tm["outputs"].contains(merged));

  // scoring the merged file prints the full metric table
  const std::string report = kScratch + "/cli_report.json";
  RunResult ev = run_cli("eval --merged " + merged + " --report " + report);
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("task") != std::string::npos);
  CHECK(ev.out.find("combined") != std::string::npos);
  CHECK(ev.out.find("intent+entity") != std::string::npos);

  const json rep = json::parse(slurp(report));
  CHECK(rep.size() == 25);
  for (const auto& [key, value] : rep.items()) {
    CAPTURE(key);
    CHECK(value.is_number());
  }

  // plain text input gets fresh ids and four output columns
  const std::string lines = kScratch + "/cli_lines.txt";
  spit(lines, "where is alice\nplay jazz now\n\nzzz unseen\n");
  const std::string tagged_text = kScratch + "/cli_tagged_text.conll";
  RunResult tt = run_cli("tag --model " + model + " --text " + lines +
                         " --out " + tagged_text);
  REQUIRE(tt.code == 0);

  const std::string text_out = slurp(tagged_text);
  CHECK(text_out.find("# id: t0") != std::string::npos);
  CHECK(text_out.find("# id: t2") != std::string::npos);
  CHECK(text_out.find("# id: t3") == std::string::npos);  // blank line skipped
  std::istringstream tin(text_out);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(tin, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split_tabs(line);
    REQUIRE(cols.size() == 4);
    ++rows;
    for (std::size_t c = 1; c < 4; ++c) {
      CAPTURE(line);
      CHECK((cols[c] == "O" || cols[c].rfind("B-", 0) == 0 ||
             cols[c].rfind("I-", 0) == 0));
    }
  }
  CHECK(rows == 8);
}

TEST_CASE("scoring matches the stored reference metrics", "[cli]") {
  const std::string report = kScratch + "/cli_fixture_report.json";
  RunResult r = run_cli("eval --gold " + kData + "/eval_gold.conll --pred " +
                        kData + "/eval_pred.conll --report " + report);
  REQUIRE(r.code == 0);

  const json got = json::parse(slurp(report));
  const json expected = json::parse(slurp(kData + "/eval_expected.json"));
  REQUIRE(got.size() == expected.size());
  for (const auto& [key, value] : expected.items()) {
    CAPTURE(key);
    REQUIRE(got.contains(key));
    CHECK(got[key].get<double>() ==
          Catch::Approx(value.get<double>()).epsilon(1e-9));
  }

  // a merged file carrying the same rows scores identically
  const hermit::Corpus gold = parse_file(kData + "/eval_gold.conll");
  const hermit::Corpus pred = parse_file(kData + "/eval_pred.conll");
  std::ostringstream ms;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ms << "# id: " << gold[i].id << "\n";
    for (std::size_t t = 0; t < gold[i].tokens.size(); ++t) {
      ms << gold[i].tokens[t] << "\t" << gold[i].da_tags[t] << "\t"
         << gold[i].fr_tags[t] << "\t" << gold[i].ar_tags[t] << "\t"
         << pred[i].da_tags[t] << "\t" << pred[i].fr_tags[t] << "\t"
         << pred[i].ar_tags[t] << "\n";
    }
    ms << "\n";
  }
  const std::string merged = kScratch + "/cli_fixture_merged.conll";
  spit(merged, ms.str());
  const std::string report2 = kScratch + "/cli_fixture_report2.json";
  RunResult r2 = run_cli("eval --merged " + merged + " --report " + report2);
  REQUIRE(r2.code == 0);
  CHECK(slurp(report2) == slurp(report));
  CHECK(r2.out == r.out);
}

TEST_CASE("comparing predictions against themselves finds no signal", "[cli]") {
  const std::string report = kScratch + "/cli_compare_report.json";
  RunResult r = run_cli("eval --gold " + kData + "/eval_gold.conll --pred " +
                        kData + "/eval_pred.conll --compare " + kData +
                        "/eval_pred.conll --report " + report);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("paired test vs " + kData + "/eval_pred.conll") !=
        std::string::npos);
  CHECK(r.out.find("n=0") != std::string::npos);
  CHECK(r.out.find("p=1.00000") != std::string::npos);
  CHECK(r.out.find("(exact)") != std::string::npos);

  const json rep = json::parse(slurp(report));
  REQUIRE(rep.contains("wilcoxon"));
  CHECK(rep["wilcoxon"]["n"] == 0);
  CHECK(rep["wilcoxon"]["p"] == 1.0);
  CHECK(rep["wilcoxon"]["exact"] == true);
}

TEST_CASE("identical training runs produce identical artifacts", "[cli]") {
  const std::string model = kScratch + "/cli_repeat.bin";
  const std::string m1 = kScratch + "/cli_repeat1.json";
  const std::string m2 = kScratch + "/cli_repeat2.json";
  const std::string toy = kData + "/toy64.conll";
  const std::string flags =
      "train --data " + toy + " --dev " + toy + " --out " + model +
      " --embedding-dim 8 --hidden-dim 8 --seed 7 --lr 0.05 --batch-size 16"
      " --epochs 2 --target 0 --quiet --manifest ";

  RunResult r1 = run_cli(flags + m1);
  REQUIRE(r1.code == 0);
  CHECK(r1.out.find("  loss ") == std::string::npos);  // --quiet
  const std::string bytes = slurp(model);

  RunResult r2 = run_cli(flags + m2);
  REQUIRE(r2.code == 0);
  CHECK(slurp(model) == bytes);
  CHECK(r1.out == r2.out);
  CHECK(slurp(m1) == slurp(m2));

  // manifests carry no timestamps, so reruns compare byte for byte
  const json m = json::parse(slurp(m1));
  std::vector<std::string> keys;
  for (const auto& [k, v] : m.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"command", "inputs", "metrics",
                                         "outputs", "settings"});
  CHECK(m["command"] == "train");
  CHECK(m["outputs"].contains(model));
  CHECK(m["metrics"].contains("best_epoch"));
  CHECK(m["settings"]["train"]["lr"] == 0.05);
  CHECK(m["settings"]["model"]["hidden_dim"] == 8);
}

TEST_CASE("cross-validation runs from the command line", "[cli]") {
  const std::string records = kScratch + "/cli_cv_records.txt";
  const std::string report = kScratch + "/cli_cv_report.json";
  const std::string manifest = kScratch + "/cli_cv_manifest.json";
  RunResult r = run_cli(
      "crossval --data " + kData + "/toy64.conll --k 3 --split-seed 21"
      " --jobs 2 --embedding-dim 4 --hidden-dim 4 --seed 2 --lr 0.05"
      " --batch-size 8 --epochs 2 --target 0 --records " + records +
      " --report " + report + " --manifest " + manifest);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("fold 0  combined-f1 ") != std::string::npos);
  CHECK(r.out.find("fold 2  combined-f1 ") != std::string::npos);
  CHECK(r.out.find("metric") != std::string::npos);
  CHECK(r.out.find("combined.exact_match") != std::string::npos);

  const json j = json::parse(slurp(report));
  CHECK(j["k"] == 3);
  REQUIRE(j["folds"].size() == 3);
  CHECK(j["folds"][0].contains("best_epoch"));
  CHECK(j["folds"][2]["fold"] == 2);
  CHECK(j["aggregate"].size() == 25);
  REQUIRE(j["aggregate"].contains("combined.f1"));
  CHECK(j["aggregate"]["combined.f1"].contains("mean"));
  CHECK(j["aggregate"]["combined.f1"].contains("std"));

  // records hold one "task metric mean std" line per aggregate entry
  std::istringstream rec(slurp(records));
  std::string line;
  std::size_t lines = 0;
  bool saw_em = false;
  while (std::getline(rec, line)) {
    if (line.empty()) continue;
    ++lines;
    std::istringstream ls(line);
    std::string task, metric;
    double mean = -1.0, stddev = -1.0;
    REQUIRE((ls >> task >> metric >> mean >> stddev));
    if (task == "combined" && metric == "exact_match") saw_em = true;
    CHECK(mean >= 0.0);
    CHECK(stddev >= 0.0);
  }
  CHECK(lines == 25);
  CHECK(saw_em);

  const json m = json::parse(slurp(manifest));
  CHECK(m["command"] == "crossval");
  CHECK(m["settings"]["k"] == 3);
  CHECK(m["metrics"].size() == 25);
}

TEST_CASE("command failures exit with distinct codes", "[cli]") {
  SECTION("help exits cleanly") {
    RunResult r = run_cli("--help");
    CHECK(r.code == 0);
    CHECK(r.out.find("train") != std::string::npos);
    CHECK(r.out.find("crossval") != std::string::npos);
  }

  SECTION("usage errors exit 1") {
    CHECK(run_cli("train --data x.conll --bogus-flag").code == 1);
    CHECK(run_cli("").code == 1);                           // needs a subcommand
    CHECK(run_cli("convert --out only.conll").code == 1);   // --in is required
  }

  SECTION("missing input files exit 2") {
    RunResult r = run_cli("eval --gold " + kScratch + "/absent.conll --pred " +
                          kScratch + "/absent.conll");
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error: ", 0) == 0);
    CHECK(r.err.find("cannot open corpus file") != std::string::npos);
  }

  SECTION("corrupt checkpoints exit 2") {
    const std::string bad = kScratch + "/cli_bad_model.bin";
    spit(bad, "XXXX not a checkpoint");
    const std::string lines = kScratch + "/cli_err_lines.txt";
    spit(lines, "hello there\n");
    RunResult r = run_cli("tag --model " + bad + " --text " + lines);
    CHECK(r.code == 2);
  }

  SECTION("malformed records exit 2") {
    const std::string bad = kScratch + "/cli_bad.jsonl";
    spit(bad, "{\"id\": \"u1\", \"tokens\":\n");
    RunResult r = run_cli("convert --in " + bad + " --out " + kScratch +
                          "/cli_bad_out.conll");
    CHECK(r.code == 2);
    CHECK(r.err.find("cli_bad.jsonl:1") != std::string::npos);
  }

  SECTION("record files without records exit 2") {
    const std::string empty = kScratch + "/cli_empty.jsonl";
    spit(empty, "");
    RunResult r = run_cli("convert --in " + empty + " --out " + kScratch +
                          "/cli_empty_out.conll");
    CHECK(r.code == 2);
    CHECK(r.err.find("no records found") != std::string::npos);
  }

  SECTION("invalid tag sequences exit 2") {
    const std::string bad = kScratch + "/cli_bad_iob2.conll";
    spit(bad, "# id: b0\nhello\tI-X\tO\tO\n");
    RunResult r = run_cli("eval --gold " + bad + " --pred " + bad);
    CHECK(r.code == 2);
    CHECK(r.err.find("I-X") != std::string::npos);
  }

  SECTION("contradictory eval inputs exit 2") {
    RunResult r =
        run_cli("eval --merged a.conll --gold b.conll --pred c.conll");
    CHECK(r.code == 2);
    CHECK(r.err.find("--merged excludes") != std::string::npos);
  }

  SECTION("eval without inputs exits 2") {
    RunResult r = run_cli("eval");
    CHECK(r.code == 2);
    CHECK(r.err.find("--gold and --pred") != std::string::npos);
  }

  SECTION("tag needs exactly one input source") {
    const std::string lines = kScratch + "/cli_err_lines2.txt";
    spit(lines, "hi\n");
    RunResult both =
        run_cli("tag --model m.bin --data a.conll --text " + lines);
    CHECK(both.code == 2);
    CHECK(both.err.find("exactly one of") != std::string::npos);
    CHECK(run_cli("tag --model m.bin").code == 2);
  }
}
