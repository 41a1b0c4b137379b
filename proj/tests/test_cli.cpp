#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lesionforge/io.hpp"
#include "lesionforge/nifti.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / ("lesionforge_cli_test_" + std::to_string(::getpid()));

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(const std::string& args) {
  const auto o = kRoot / "stdout.txt", e = kRoot / "stderr.txt";
  const std::string cmd = std::string("\"") + LESIONFORGE_CLI + "\" " + args + " >\"" + o.string() + "\" 2>\"" + e.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = lesionforge::io::read_text(o);
  r.err = lesionforge::io::read_text(e);
  return r;
}

std::string slurp(const fs::path& p) { return lesionforge::io::read_text(p); }

// Every regular file under `dir`, relative path -> bytes.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) m[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return m;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    const auto r = run("fixture --dims 32 32 24 --seed 3 --out " + (kRoot / "fx").string());
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }

  static std::string inputs() {
    const auto fx = kRoot / "fx";
    return " --volume " + (fx / "brain.nii.gz").string() + " --labels " + (fx / "atlas.nii.gz").string() +
           " --label-table " + (fx / "atlas.json").string();
  }
};

}  // namespace

TEST_F(Cli, FixtureDeterministic) {
  ASSERT_EQ(run("fixture --dims 32 32 24 --seed 3 --out " + (kRoot / "fx2").string()).code, 0);
  EXPECT_EQ(snapshot(kRoot / "fx"), snapshot(kRoot / "fx2"));
  const auto h = lesionforge::read_header(kRoot / "fx" / "brain.nii.gz");
  EXPECT_EQ(h.dims, (lesionforge::Dims{32, 32, 24}));
}

TEST_F(Cli, SynthTwiceByteIdentical) {
  const auto a = kRoot / "s1", b = kRoot / "s2";
  ASSERT_EQ(run("synth --seed 42" + inputs() + " --out " + a.string()).code, 0);
  ASSERT_EQ(run("synth --seed 42" + inputs() + " --out " + b.string()).code, 0);
  const auto sa = snapshot(a);
  EXPECT_EQ(sa.size(), 3u);
  EXPECT_TRUE(sa.count("abnormal.nii.gz") && sa.count("anomaly_mask.nii.gz") && sa.count("lesions.json"));
  EXPECT_EQ(sa, snapshot(b));
  ASSERT_EQ(run("synth --seed 43" + inputs() + " --out " + (kRoot / "s3").string()).code, 0);
  EXPECT_NE(sa, snapshot(kRoot / "s3"));
}

TEST_F(Cli, SynthMissingLabelFile) {
  const std::string missing = (kRoot / "nope" / "atlas.nii.gz").string();
  const auto r = run("synth --volume " + (kRoot / "fx" / "brain.nii.gz").string() + " --labels " + missing +
                     " --label-table " + (kRoot / "fx" / "atlas.json").string() + " --out " + (kRoot / "bad").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
  const auto j = json::parse(r.err);
  EXPECT_EQ(j["error"], "io");
}

TEST_F(Cli, SynthCountOverride) {
  const auto dir = kRoot / "count";
  const auto r = run("synth --seed 7 --set synth.lesion_count_range=[2,2]" + inputs() + " --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(dir / "lesions.json"));
  EXPECT_EQ(j["lesions"].size(), 2u);
  EXPECT_EQ(j["config"]["lesion_count_range"], json::array({2, 2}));
}

TEST_F(Cli, ConfigFileAndOverridePriority) {
  const auto dir = kRoot / "cfg";
  fs::create_directories(dir);
  json cfg{{"volume", "../fx/brain.nii.gz"},
           {"labels", "../fx/atlas.nii.gz"},
           {"label_table", "../fx/atlas.json"},
           {"seed", 42},
           {"synth", {{"lesion_count_range", {3, 3}}}}};
  std::ofstream(dir / "c.json") << cfg.dump();
  ASSERT_EQ(run("synth --config " + (dir / "c.json").string() + " --out " + (dir / "o1").string()).code, 0);
  EXPECT_EQ(json::parse(slurp(dir / "o1" / "lesions.json"))["lesions"].size(), 3u);
  ASSERT_EQ(run("synth --config " + (dir / "c.json").string() + " --set synth.lesion_count_range=[1,1] --out " +
                (dir / "o2").string())
                .code,
            0);
  EXPECT_EQ(json::parse(slurp(dir / "o2" / "lesions.json"))["lesions"].size(), 1u);
  const auto bad = run("synth --config " + (dir / "c.json").string() + " --set synth.sigma=2 --out " + (dir / "o3").string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_EQ(json::parse(bad.err)["error"], "validation");
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("synth --seed -3").code, 2);
  EXPECT_EQ(run("roi --mode sideways --labels x --label-table y --out z").code, 2);
}

TEST_F(Cli, RoiAndAssembleModes) {
  const auto fx = kRoot / "fx";
  const auto syn = kRoot / "roi_syn";
  ASSERT_EQ(run("synth --seed 5" + inputs() + " --out " + syn.string()).code, 0);
  const std::string labels = " --labels " + (fx / "atlas.nii.gz").string() + " --label-table " + (fx / "atlas.json").string();

  const auto auto_dir = kRoot / "roi_auto";
  ASSERT_EQ(run("roi" + labels + " --anomaly " + (syn / "anomaly_mask.nii.gz").string() + " --out " + auto_dir.string()).code, 0);
  const auto prompts = json::parse(slurp(auto_dir / "prompts.json"))["prompts"];
  ASSERT_FALSE(prompts.empty());
  for (const auto& p : prompts) {
    EXPECT_EQ(p["source"]["kind"], "auto");
    EXPECT_TRUE(fs::exists(auto_dir / p["mask_ref"].get<std::string>()));
  }
  ASSERT_EQ(run("roi" + labels + " --anomaly " + (syn / "anomaly_mask.nii.gz").string() + " --out " +
                (kRoot / "roi_auto2").string())
                .code,
            0);
  EXPECT_EQ(snapshot(auto_dir), snapshot(kRoot / "roi_auto2"));

  const auto named = kRoot / "roi_named";
  ASSERT_EQ(run("roi --mode prompt --names Brainstem \"left thalamus\"" + labels + " --out " + named.string()).code, 0);
  const auto np = json::parse(slurp(named / "prompts.json"))["prompts"];
  ASSERT_EQ(np.size(), 2u);
  EXPECT_EQ(np[0]["structures"][0]["id"], 9);
  EXPECT_EQ(np[1]["structures"][0]["id"], 7);
  const auto typo = run("roi --mode prompt --names brianstem" + labels + " --out " + named.string());
  EXPECT_EQ(typo.code, 2);
  EXPECT_NE(typo.err.find("Brainstem"), std::string::npos);

  json regionals{{"Stem", {{"FLAIR", "Stem finding."}, {"prompt_ref", "prompt-0"}}},
                 {"Thal", {{"FLAIR", "Thalamus finding."}, {"prompt_ref", "prompt-1"}}}};
  std::ofstream(kRoot / "regionals.json") << regionals.dump();
  const auto rep = kRoot / "assembled";
  const std::string asm_args = "assemble --mode prompt --regionals " + (kRoot / "regionals.json").string() +
                               " --prompts " + (named / "prompts.json").string() + " --label-table " +
                               (fx / "atlas.json").string();
  const auto ar = run(asm_args + " --out " + rep.string());
  ASSERT_EQ(ar.code, 0) << ar.err;
  const auto report = json::parse(slurp(rep / "report.json"));
  EXPECT_EQ(report["mode"], "prompt");
  EXPECT_EQ(report["paragraphs"][0]["text"], "Stem finding.");
  EXPECT_EQ(report["paragraphs"][1]["prompt_ref"], "prompt-1");
  EXPECT_EQ(report["coverage"]["templated"].size(), 7u);
  ASSERT_EQ(run(asm_args + " --out " + (kRoot / "assembled2").string()).code, 0);
  EXPECT_EQ(snapshot(rep), snapshot(kRoot / "assembled2"));

  json bad{{"X", {{"FLAIR", "x"}, {"prompt_ref", "nope"}}}};
  std::ofstream(kRoot / "bad_regionals.json") << bad.dump();
  const auto lr = run("assemble --mode prompt --regionals " + (kRoot / "bad_regionals.json").string() + " --prompts " +
                      (named / "prompts.json").string() + " --label-table " + (fx / "atlas.json").string() + " --out " +
                      rep.string());
  EXPECT_EQ(lr.code, 2);
  EXPECT_EQ(json::parse(lr.err)["error"], "link");

  const auto glob = kRoot / "roi_global";
  ASSERT_EQ(run("roi --mode global" + labels + " --out " + glob.string()).code, 0);
  EXPECT_EQ(json::parse(slurp(glob / "prompts.json"))["prompts"][0]["id"], "global");
}

TEST_F(Cli, EvalSeg) {
  const auto fx = kRoot / "fx";
  const auto a = kRoot / "ev1", b = kRoot / "ev2";
  ASSERT_EQ(run("synth --seed 11" + inputs() + " --out " + a.string()).code, 0);
  ASSERT_EQ(run("synth --seed 12" + inputs() + " --out " + b.string()).code, 0);
  const std::string ma = (a / "anomaly_mask.nii.gz").string(), mb = (b / "anomaly_mask.nii.gz").string();
  const auto r = run("eval-seg --pred " + ma + " " + mb + " --gt " + ma + " " + ma);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  ASSERT_EQ(j["cases"].size(), 2u);
  EXPECT_EQ(j["cases"][0]["dsc"], 1.0);
  EXPECT_EQ(j["cases"][0]["hd"], 0.0);
  EXPECT_EQ(j["summary"]["dsc"]["n"], 2);
  setenv("LESIONFORGE_THREADS", "1", 1);
  const auto r1 = run("eval-seg --pred " + ma + " " + mb + " --gt " + ma + " " + ma + " --set hd_percentile=95");
  unsetenv("LESIONFORGE_THREADS");
  ASSERT_EQ(r1.code, 0) << r1.err;
  EXPECT_EQ(json::parse(r1.out)["cases"][0]["dsc"], 1.0);
  EXPECT_EQ(run("eval-seg --pred " + ma + " --gt " + ma + " --set hd_percentile=90").code, 2);
  EXPECT_EQ(run("eval-seg --pred " + ma + " --gt " + ma + " " + mb).code, 2);
  ASSERT_EQ(run("eval-seg --pred " + ma + " --gt " + mb + " --out " + (kRoot / "evout").string()).code, 0);
  EXPECT_TRUE(fs::exists(kRoot / "evout" / "seg_metrics.json"));
}

TEST_F(Cli, EvalReport) {
  std::ofstream(kRoot / "c.txt") << "a b c d e";
  std::ofstream(kRoot / "r.txt") << "a b c d f";
  std::ofstream(kRoot / "z.txt") << "p q r s t";
  const auto c = (kRoot / "c.txt").string(), r = (kRoot / "r.txt").string(), z = (kRoot / "z.txt").string();
  auto score = [&](const std::string& a, const std::string& b) {
    const auto res = run("eval-report --candidate " + a + " --reference " + b);
    EXPECT_EQ(res.code, 0) << res.err;
    return json::parse(res.out);
  };
  EXPECT_EQ(score(c, c)["bleu4"], 1.0);
  EXPECT_EQ(score(c, c)["rouge1"], 1.0);
  EXPECT_EQ(score(c, z)["bleu4"], 0.0);
  EXPECT_EQ(score(c, z)["rouge1"], 0.0);
  EXPECT_EQ(score(c, r)["bleu4"], 0.5);
  const auto ext = run("eval-report --candidate " + c + " --reference " + r + " --external-scorer \"echo '{\\\"score\\\": 0.5}' ; true\"");
  ASSERT_EQ(ext.code, 0) << ext.err;
  EXPECT_EQ(json::parse(ext.out)["external"], 0.5);
}

TEST_F(Cli, PipelineRerunByteIdentical) {
  for (const std::string mode : {"autoseg", "global"}) {
    const auto a = kRoot / ("pipe_" + mode + "1"), b = kRoot / ("pipe_" + mode + "2");
    const std::string args = "pipeline --seed 42 --mode " + mode + inputs();
    const auto r = run(args + " --out " + a.string());
    ASSERT_EQ(r.code, 0) << r.err;
    ASSERT_EQ(run(args + " --out " + b.string()).code, 0);
    const auto sa = snapshot(a);
    EXPECT_EQ(sa, snapshot(b));
    for (const char* f : {"abnormal.nii.gz", "anomaly_mask.nii.gz", "lesions.json", "prompts.json", "regionals.json",
                          "report.json", "report.txt"})
      EXPECT_TRUE(sa.count(f)) << f;
  }
  const auto p = kRoot / "pipe_prompt";
  ASSERT_EQ(run("pipeline --seed 1 --mode prompt --names Brainstem" + inputs() + " --out " + p.string()).code, 0);
  EXPECT_EQ(json::parse(slurp(p / "report.json"))["mode"], "prompt");
  EXPECT_EQ(run("pipeline --seed 1 --mode prompt" + inputs() + " --out " + p.string()).code, 2);
}
