#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "fixtures.hpp"

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// runs the CLI with the shipped data directory; stderr is folded into out
Result xtom_cli(const std::string& args) {
  std::string cmd = std::string(XTOM_CLI) + " --data-dir " + XTOM_TEST_DATA + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, MissingGrammarIsConfigError) {
  auto r = xtom_cli("--grammar /nonexistent/body.aog gen-scenes --output /tmp/never.txt");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("CONFIG_ERROR"), std::string::npos) << r.out;
}

TEST(Cli, NeedsSubcommand) {
  auto r = xtom_cli("");
  EXPECT_NE(r.code, 0);
}

TEST(Cli, GenScenesRefusesOverwrite) {
  fixture::TempDir dir("cli-gen");
  auto path = dir / "s.txt";
  EXPECT_EQ(xtom_cli("gen-scenes --count 4 --prefix q- --output " + path).code, 0);
  auto scenes = xtom::load_scenes_file(path, fixture::body());
  ASSERT_EQ(scenes.size(), 4u);
  EXPECT_EQ(scenes[0].id, "q-0");
  auto again = xtom_cli("gen-scenes --count 4 --output " + path);
  EXPECT_NE(again.code, 0);
  EXPECT_NE(again.out.find("IO_ERROR"), std::string::npos) << again.out;
  EXPECT_EQ(xtom_cli("--force gen-scenes --count 2 --output " + path).code, 0);
  EXPECT_EQ(xtom::load_scenes_file(path, fixture::body()).size(), 2u);
}

TEST(Cli, TrainSimulateReport) {
  fixture::TempDir dir("cli-train");
  auto r = xtom_cli("--hidden 8 train --episodes 400 --updates-per-round 2 --batch 8 --checkpoint " +
                    (dir / "p.ckpt") + " --metrics " + (dir / "m.tsv"));
  ASSERT_EQ(r.code, 0) << r.out;
  auto metrics = xtom::detail::read_file(dir / "m.tsv");
  EXPECT_EQ(lines(metrics), 3u);  // header and two rounds
  EXPECT_EQ(metrics.rfind("round\t", 0), 0u);

  auto sim = xtom_cli("--hidden 8 simulate --checkpoint " + (dir / "p.ckpt") + " --games 6 --output " + (dir / "t"));
  ASSERT_EQ(sim.code, 0) << sim.out;
  EXPECT_EQ(xtom::transcript_files(dir / "t").size(), 6u);
  auto refused = xtom_cli("--hidden 8 simulate --checkpoint " + (dir / "p.ckpt") + " --games 6 --output " + (dir / "t"));
  EXPECT_NE(refused.code, 0);

  auto rep = xtom_cli("report --transcripts " + (dir / "t"));
  ASSERT_EQ(rep.code, 0) << rep.out;
  EXPECT_NE(rep.out.find("Elaboration\tSequence\tRecurrence\tRestatement\tSummary"), std::string::npos);

  auto ab = xtom_cli("--hidden 8 ablate --full " + (dir / "p.ckpt") + " --ablated-checkpoint " + (dir / "p.ckpt") +
                     " --games 4");
  ASSERT_EQ(ab.code, 0) << ab.out;
  EXPECT_NE(ab.out.find("Model\t#test trials\tss\t#bubbles\tr"), std::string::npos);

  // a checkpoint trained on another grammar is refused
  auto body = xtom::detail::read_file(fixture::data("lsp_body.aog"));
  body.replace(body.find("crouching"), 9, "squatting");
  {
    std::ofstream g(dir / "other.aog");
    g << body;
  }
  auto bad = xtom_cli("--grammar " + (dir / "other.aog") + " simulate --checkpoint " + (dir / "p.ckpt") +
                      " --games 1 --output " + (dir / "u"));
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.out.find("GRAMMAR_MISMATCH"), std::string::npos) << bad.out;
}

TEST(Cli, ZeroGamesWritesNothing) {
  fixture::TempDir dir("cli-zero");
  ASSERT_EQ(xtom_cli("--hidden 8 train --episodes 0 --checkpoint " + (dir / "p.ckpt")).code, 0);
  auto r = xtom_cli("--hidden 8 simulate --checkpoint " + (dir / "p.ckpt") + " --games 0 --output " + (dir / "t"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(std::filesystem::is_empty(dir / "t"));
}

TEST(Cli, EstimateLikelihoods) {
  fixture::TempDir dir("cli-est");
  auto r = xtom_cli("--hidden 8 estimate-likelihoods --games 5 --output " + (dir / "l.txt"));
  ASSERT_EQ(r.code, 0) << r.out;
  auto t = xtom::LikelihoodTables::parse(xtom::detail::read_file(dir / "l.txt"), fixture::body());
  EXPECT_EQ(t.games(), 5u);
}
