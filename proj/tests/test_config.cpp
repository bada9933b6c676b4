#include <gtest/gtest.h>

#include <fstream>

#include "genrec/error.hpp"
#include "genrec/manifest.hpp"
#include "genrec/run_config.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace genrec {
namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

TEST(RunConfig, DefaultsMatchPublishedSetup) {
  RunConfig cfg;
  EXPECT_EQ(cfg.train.peak_lr, 3e-4);
  EXPECT_EQ(cfg.train.warmup_steps, 1000u);
  EXPECT_EQ(cfg.train.batch_size, 128u);
  EXPECT_EQ(cfg.train.epochs, 5u);
  EXPECT_EQ(cfg.k, 10u);
}

TEST(RunConfig, LoadsIniSections) {
  testing::TempDir dir("cfg");
  write_file(dir.path() / "run.ini",
             "[data]\nkind = amazon\nname = toys\n"
             "[model]\nd_model = 32\nn_heads = 4\nadapter_targets = q,k,v,o\n"
             "[train]\npeak_lr = 0.01\ngrad_clip_norm = none\nadapters_only = true\n"
             "[decode]\nk = 5\nbeam_width = 8\n"
             "[run]\nseed = 7\n");
  const auto cfg = load_run_config(dir.path() / "run.ini");
  EXPECT_EQ(cfg.dataset, DatasetKind::kAmazon);
  EXPECT_EQ(cfg.dataset_name, "toys");
  EXPECT_EQ(cfg.model.d_model, 32u);
  EXPECT_EQ(cfg.model.adapter_targets, kAdapterQuery | kAdapterKey | kAdapterValue | kAdapterOutput);
  EXPECT_EQ(cfg.train.peak_lr, 0.01);
  EXPECT_FALSE(cfg.train.grad_clip_norm.has_value());
  EXPECT_TRUE(cfg.train.adapters_only);
  EXPECT_EQ(cfg.k, 5u);
  EXPECT_EQ(cfg.beam_width, 8u);
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.train.seed, 7u);
}

TEST(RunConfig, UnknownKeysAndBadValuesAreRejected) {
  testing::TempDir dir("cfg_bad");
  write_file(dir.path() / "a.ini", "[model]\nwidth = 3\n");
  EXPECT_THROW(load_run_config(dir.path() / "a.ini"), ContractError);
  RunConfig cfg;
  EXPECT_THROW(apply_overrides(cfg, {"train.peak_lr=fast"}), ContractError);
  EXPECT_THROW(apply_overrides(cfg, {"nodot=1"}), ContractError);
  EXPECT_THROW(apply_overrides(cfg, {"data.kind=csv"}), ContractError);
}

TEST(RunConfig, OverridesApplyInOrder) {
  RunConfig cfg;
  apply_overrides(cfg, {"train.epochs=2", "train.epochs=3", "split.sliding_windows=true"});
  EXPECT_EQ(cfg.train.epochs, 3u);
  EXPECT_TRUE(cfg.sliding_windows);
  EXPECT_EQ(cfg.to_json()["train"]["epochs"], 3);
}

TEST(Manifest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_bytes("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_bytes(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  testing::TempDir dir("sha");
  write_file(dir.path() / "f", "abc");
  EXPECT_EQ(sha256_file(dir.path() / "f"), sha256_bytes("abc"));
  EXPECT_THROW(sha256_file(dir.path() / "missing"), DataError);
}

TEST(Manifest, WritesHashesAndIsStable) {
  testing::TempDir dir("manifest");
  write_file(dir.path() / "in.txt", "input");
  write_file(dir.path() / "out.txt", "output");
  Manifest m{"ingest", {{"seed", 1}}, {dir.path() / "in.txt"}, {"out.txt"}};
  m.write(dir.path());
  std::ifstream f(dir.path() / "manifest.json");
  const auto j = nlohmann::json::parse(f);
  EXPECT_EQ(j["command"], "ingest");
  EXPECT_EQ(j["config"]["seed"], 1);
  EXPECT_EQ(j.dump().find(sha256_bytes("input")) != std::string::npos, true);
  EXPECT_EQ(j.dump().find(sha256_bytes("output")) != std::string::npos, true);
  EXPECT_EQ(j["versions"]["genrec"], kToolkitVersion);

  const auto first = sha256_file(dir.path() / "manifest.json");
  m.write(dir.path());
  EXPECT_EQ(sha256_file(dir.path() / "manifest.json"), first);
}

}  // namespace
}  // namespace genrec
