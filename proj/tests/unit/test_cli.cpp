#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "kdrank/binary_io.hpp"
#include "kdrank/cli/commands.hpp"
#include "kdrank/cli/config.hpp"
#include "kdrank/error.hpp"
#include "kdrank/labelstore.hpp"
#include "oracles.hpp"

using namespace kdrank;
using namespace kdrank::cli;
using kdrank::testing::TempDir;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

json tiny_config(const std::filesystem::path& out) {
  auto doc = json::parse(R"({
    "family": "distill-strategy",
    "seeds": [1, 2],
    "gen": {"dim": 6, "drift_rate": 0.999},
    "student": {"trunk": [4]},
    "teacher": {"pretrain_steps": 5, "bias_injection": {"LTV": 1.3}},
    "schedule": {"total_steps": 6, "eval_every": 3, "batch_size": 32, "eval_batches": 2,
                 "durable_store": false, "online": {"n_slates": 50}}
  })");
  doc["output_dir"] = out.string();
  return doc;
}

std::string config_error(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, DefaultsExpandAndRoundTrip) {
  const auto cfg = parse_config(json::object());
  const auto expanded = to_json(cfg);
  EXPECT_EQ(to_json(parse_config(expanded)), expanded);
  EXPECT_EQ(expanded["family"], "distill-strategy");
  EXPECT_EQ(expanded["gen"]["tasks"].size(), 4u);
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& entry : std::filesystem::directory_iterator(std::filesystem::path(KDRANK_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    SCOPED_TRACE(entry.path().string());
    const auto cfg = load_config(entry.path());
    EXPECT_EQ(to_json(parse_config(to_json(cfg))), to_json(cfg));
  }
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(config_error({{"sedes", {1}}}).find("sedes: unknown field"), std::string::npos);
  EXPECT_NE(config_error({{"schedule", {{"online", {{"slate", 3}}}}}}).find("schedule.online.slate"), std::string::npos);
  EXPECT_NE(config_error({{"seeds", "1"}}).find("seeds: expected an array"), std::string::npos);
  EXPECT_NE(config_error({{"seeds", {1, -2}}}).find("seeds[1]"), std::string::npos);
  EXPECT_NE(config_error({{"family", "table-9"}}).find("family"), std::string::npos);
  EXPECT_NE(config_error({{"student", {{"train", {{"base_lr", -1.0}}}}}}).find("student.train"), std::string::npos);
  EXPECT_NE(config_error({{"distill", {{"mode", "sideways"}}}}).find("distill.mode"), std::string::npos);
  EXPECT_FALSE(config_error({{"gen", {{"dim", 1}}}}).empty());
}

TEST(Config, HashTracksSemanticFieldsOnly) {
  const json base = tiny_config("a");
  const auto h = config_hash(parse_config(base));
  auto with = [&](const json& patch) {
    json j = base;
    j.merge_patch(patch);
    return config_hash(parse_config(j));
  };
  EXPECT_EQ(with({{"output_dir", "elsewhere"}}), h);
  EXPECT_EQ(with({{"threads", 4}}), h);
  EXPECT_EQ(with({{"schedule", {{"threads", 2}}}}), h);
  EXPECT_EQ(with({{"schedule", {{"durable_store", true}}}}), h);
  EXPECT_NE(with({{"seeds", {1, 3}}}), h);
  EXPECT_NE(with({{"gen", {{"dim", 7}}}}), h);
  EXPECT_NE(with({{"distill", {{"alpha", 0.5}}}}), h);
  EXPECT_NE(with({{"teacher", {{"bias_injection", {{"LTV", 1.2}}}}}}), h);
  EXPECT_NE(with({{"student", {{"train", {{"clippy", nullptr}}}}}}), h);
  EXPECT_NE(with({{"schedule", {{"online", {{"n_slates", 51}}}}}}), h);
  EXPECT_EQ(hash_hex(h).size(), 16u);
}

TEST(Cli, RunIsDeterministicAndReplayIsIdempotent) {
  TempDir dir;
  std::ostringstream out, err;
  spit(dir / "cfg.json", tiny_config(dir / "run1").dump());
  ASSERT_EQ(cmd_run(dir / "cfg.json", {}, out, err), kOk) << err.str();
  RunOverrides second;
  second.out = dir / "run2";
  second.threads = 2;
  ASSERT_EQ(cmd_run(dir / "cfg.json", second, out, err), kOk) << err.str();
  EXPECT_EQ(slurp(dir / "run1" / "metrics.csv"), slurp(dir / "run2" / "metrics.csv"));

  const auto manifest = json::parse(slurp(dir / "run1" / "run_manifest.json"));
  EXPECT_EQ(manifest["status"], "complete");
  EXPECT_EQ(manifest["config_hash"], hash_hex(config_hash(parse_config(tiny_config(dir / "run1")))));
  EXPECT_EQ(manifest["config_hash"], json::parse(slurp(dir / "run2" / "run_manifest.json"))["config_hash"]);

  const auto original = slurp(dir / "run1" / "report.md");
  ASSERT_EQ(cmd_replay(dir / "run1" / "metrics.csv", dir / "r1.md", out, err), kOk);
  ASSERT_EQ(cmd_replay(dir / "run1" / "metrics.csv", dir / "r2.md", out, err), kOk);
  EXPECT_EQ(slurp(dir / "r1.md"), original);
  EXPECT_EQ(slurp(dir / "r2.md"), original);
  EXPECT_NE(original.find("| LTV RMSE |"), std::string::npos);
}

TEST(Cli, SeedOverrideChangesTheHash) {
  TempDir dir;
  std::ostringstream out, err;
  spit(dir / "cfg.json", tiny_config(dir / "run").dump());
  RunOverrides o;
  o.seeds = std::vector<std::uint64_t>{3};
  ASSERT_EQ(cmd_run(dir / "cfg.json", o, out, err), kOk) << err.str();
  const auto manifest = json::parse(slurp(dir / "run" / "run_manifest.json"));
  EXPECT_EQ(manifest["seeds"], json::array({3}));
  EXPECT_NE(manifest["config_hash"], hash_hex(config_hash(parse_config(tiny_config(dir / "run")))));
}

TEST(Cli, BadConfigExitsOne) {
  TempDir dir;
  std::ostringstream out, err;
  spit(dir / "cfg.json", R"({"family": "distill-strategy", "colour": 3})");
  EXPECT_EQ(cmd_run(dir / "cfg.json", {}, out, err), kConfigError);
  EXPECT_NE(err.str().find("colour"), std::string::npos);
  spit(dir / "broken.json", "{");
  EXPECT_EQ(cmd_run(dir / "broken.json", {}, out, err), kConfigError);
}

TEST(Cli, DivergenceExitsTwoWithPartialArtifacts) {
  TempDir dir;
  std::ostringstream out, err;
  auto cfg = tiny_config(dir / "run");
  cfg["family"] = "custom";
  cfg["students"] = json::array({{{"name", "Control"}, {"mode", "none"}}});
  cfg["student"]["train"] = {{"base_lr", 1e300}, {"clippy", nullptr}, {"activation_clip", nullptr}, {"warmup_steps", 0}};
  spit(dir / "cfg.json", cfg.dump());
  EXPECT_EQ(cmd_run(dir / "cfg.json", {}, out, err), kRuntimeError);
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "metrics.partial.csv"));
  EXPECT_FALSE(std::filesystem::exists(dir / "run" / "metrics.csv"));
  EXPECT_EQ(json::parse(slurp(dir / "run" / "run_manifest.json"))["status"], "diverged");
}

TEST(Cli, InspectReportsSegmentsAndCorruption) {
  TempDir dir;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_inspect(dir.path(), out, err), kOk);
  EXPECT_NE(out.str().find("0 segments"), std::string::npos);

  const std::vector<labelstore::TaskColumn> tasks{{"CTR", ranker::TaskKind::Binary}};
  {
    labelstore::LabelWriter w(dir.path());
    const std::vector<labelstore::LabelRecord> a{{1, {0.5f}}, {2, {0.25f}}};
    const std::vector<labelstore::LabelRecord> b{{3, {0.75f}}};
    w.append_segment(a, tasks, 1);
    w.append_segment(b, tasks, 2);
  }
  out.str("");
  ASSERT_EQ(cmd_inspect(dir.path(), out, err), kOk);
  const auto text = out.str();
  EXPECT_NE(text.find("2 segments"), std::string::npos);
  std::size_t oks = 0;
  for (auto pos = text.find("checksum OK"); pos != std::string::npos; pos = text.find("checksum OK", pos + 1)) ++oks;
  EXPECT_EQ(oks, 2u);
  EXPECT_NE(text.find("total rows: 3"), std::string::npos);

  const auto seg = labelstore::segment_path(dir.path(), labelstore::read_manifest(dir.path()).segment_ids[0]);
  auto bytes = binary_io::read_file(seg);
  bytes[bytes.size() - 6] ^= 0x20;
  std::ofstream(seg, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.str("");
  EXPECT_EQ(cmd_inspect(dir.path(), out, err), kCorruption);
  EXPECT_NE(out.str().find("CORRUPT"), std::string::npos);
  EXPECT_NE(out.str().find("checksum OK"), std::string::npos);
}

TEST(Cli, ReplaySchemaErrorsAndHandBuiltCsv) {
  TempDir dir;
  std::ostringstream out, err;
  spit(dir / "bad.csv", "step,job,task,value,lo,hi\n1,a,b,0.5,,\n");
  EXPECT_EQ(cmd_replay(dir / "bad.csv", std::nullopt, out, err), kConfigError);
  EXPECT_NE(err.str().find("metric"), std::string::npos);

  spit(dir / "two.csv", "step,job,task,metric,value,lo,hi\n100,Control,LTV,rmse,1.5,,\n100,Direct,LTV,rmse,1.25,1,1.5\n");
  ASSERT_EQ(cmd_replay(dir / "two.csv", std::nullopt, out, err), kOk) << err.str();
  const auto report = slurp(dir / "report.md");
  EXPECT_NE(report.find("| 100 | Control | LTV | rmse | 1.5000 | - |"), std::string::npos) << report;
  EXPECT_NE(report.find("| 100 | Direct | LTV | rmse | 1.2500 | [1.0000, 1.5000] |"), std::string::npos) << report;
}
