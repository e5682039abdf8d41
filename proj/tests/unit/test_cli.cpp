#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mmpfn/config.hpp"
#include "mmpfn/embedding_file.hpp"
#include "mmpfn/error.hpp"
#include "mmpfn/runner.hpp"

using namespace mmpfn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mmpfn_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) out[fs::relative(entry.path(), dir).string()] = read_text(entry.path());
  }
  return out;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* kTinyXor = R"({
  "task": {"kind": "xor", "n_train": 24, "n_test": 16, "embed_dim": 8, "seed": 5},
  "model": {"backbone": {"model_dim": 8, "heads": 2, "blocks": 1, "max_classes": 4}},
  "projectors": {"image": {"variant": "mgm", "N": 4, "cap": true, "K": 2}},
  "views": [{"name": "tabular", "tabular": true},
            {"name": "full", "tabular": true, "modalities": ["image"]}],
  "training": {"steps": 3, "seeds": [0, 1], "learning_rate": 0.001},
  "imbalance": {"grid": [{"variant": "mgm", "N": 2}, {"variant": "mgm", "N": 4, "cap": true, "K": 2}]},
  "monte_carlo": [{"n_nontabular": 3, "n_tabular": 5, "samples": 500},
                  {"n_nontabular": 2, "n_tabular": 2, "distribution": "constant", "samples": 10}]
})";

}  // namespace

TEST_CASE("an empty config takes the documented defaults") {
  const ExperimentConfig cfg = parse_config_text("{}");
  CHECK(cfg.training.learning_rate == 1e-5);
  CHECK(cfg.training.batch_size == 1);
  CHECK(cfg.training.steps == 100);
  CHECK(cfg.training.seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(cfg.training.weight_decay == 0.01);
  CHECK(cfg.training.context_fraction == 0.8);
  CHECK(cfg.pretrain.run.n_tasks == 20000);
  CHECK(cfg.pretrain.run.learning_rate == 3e-4);
  CHECK(cfg.model.backbone == BackboneConfig{});
  CHECK(cfg.output_dir == "results");
  CHECK_FALSE(cfg.synthetic_task.has_value());
  CHECK(effective_views(cfg).size() == 1);
  CHECK(effective_views(cfg)[0].name == "full");
}

TEST_CASE("misspelled and mistyped keys are rejected with their path") {
  CHECK(message_of([] { parse_config_text(R"({"training": {"learing_rate": 0.001}})"); })
            .find("training.learing_rate") != std::string::npos);
  CHECK(message_of([] { parse_config_text(R"({"training": {"steps": "ten"}})"); })
            .find("training.steps") != std::string::npos);
  CHECK_THROWS_AS(parse_config_text(R"({"projectors": {"image": {"variant": "moe"}}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"training": {"learning_rate": -1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"pretrain": {"n_tasks": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"views": [{"name": "v", "modalities": ["audio"]}]})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"projectors": {"image": {"variant": "mgm", "N": 2, "cap": true, "K": 4}}})"),
                  ConfigError);
}

TEST_CASE("emitted configs parse back to the same canonical form") {
  const ExperimentConfig cfg = parse_config_text(kTinyXor);
  const std::string canonical = emit_config(cfg);
  CHECK(emit_config(parse_config_text(canonical)) == canonical);
  CHECK(canonical.find("\"learning_rate\": 0.001") != std::string::npos);
  const ExperimentConfig defaults = parse_config_text("{}");
  CHECK(emit_config(parse_config_text(emit_config(defaults))) == emit_config(defaults));
}

TEST_CASE("per-command validation") {
  const ExperimentConfig empty = parse_config_text("{}");
  CHECK_THROWS_AS(validate_for(empty, "finetune"), ConfigError);
  CHECK_THROWS_AS(validate_for(empty, "mc-attention"), ConfigError);
  CHECK_THROWS_AS(validate_for(empty, "eval"), ConfigError);
  CHECK_THROWS_AS(validate_for(empty, "train"), ConfigError);
  CHECK_NOTHROW(validate_for(empty, "pretrain"));
  const ExperimentConfig xor_cfg = parse_config_text(kTinyXor);
  CHECK_NOTHROW(validate_for(xor_cfg, "finetune"));
  CHECK_NOTHROW(validate_for(xor_cfg, "imbalance-sweep"));
  ExperimentConfig missing = xor_cfg;
  missing.model.pretrained = "no/such/file.mmpn";
  CHECK_THROWS_AS(validate_for(missing, "finetune"), ConfigError);
}

TEST_CASE("csv tasks load with embedding files") {
  const fs::path dir = scratch("csv_task");
  write_text(dir / "table.csv",
             "age,site,outcome\n"
             "30,arm,benign\n41,leg,malignant\n52,,benign\nNA,arm,malignant\n"
             "33,leg,benign\n61,arm,malignant\n45,head,benign\n38,leg,malignant\n"
             "29,arm,benign\n57,leg,malignant\n");
  EmbeddingSet image;
  image.modality = "image";
  image.dim = 3;
  image.count = 10;
  for (std::size_t i = 0; i < 30; ++i) image.values.push_back(static_cast<double>(i) * 0.5);
  image.fingerprint = "test";
  write_embedding_file(dir / "image.mmpe", image);
  const std::string config = R"({
    "task": {"csv": {"path": "table.csv",
                     "columns": [{"name": "age"}, {"name": "site", "kind": "categorical"}],
                     "label": "outcome", "train_fraction": 0.6, "split_seed": 2,
                     "embeddings": {"image": "image.mmpe"}}},
    "projectors": {"image": {"variant": "linear"}}
  })";
  write_text(dir / "cfg.json", config);
  const ExperimentConfig cfg = parse_config(dir / "cfg.json");
  CHECK_NOTHROW(validate_for(cfg, "finetune"));
  const MultimodalDataset data = load_dataset(cfg);
  CHECK(data.rows() == 10);
  CHECK(data.n_classes == 2);
  CHECK(data.labels[0] == 0);  // "benign" sorts first
  CHECK(data.labels[1] == 1);
  CHECK(data.train_rows.size() == 6);
  CHECK(data.test_rows.size() == 4);
  REQUIRE(data.tabular.specs.size() == 2);
  CHECK(data.tabular.specs[1].vocabulary == std::vector<std::string>{"arm", "head", "leg"});
  CHECK(data.modality("image").values[4] == 2.0);
  CHECK(load_dataset(cfg).train_rows == data.train_rows);

  // An embedding file with the wrong row count is a data error.
  image.count = 9;
  image.values.resize(27);
  write_embedding_file(dir / "image.mmpe", image);
  CHECK_THROWS_AS(load_dataset(cfg), DataError);
}

TEST_CASE("subcommands rewrite byte-identical bundles for any job count") {
  const fs::path base = scratch("determinism");
  write_text(base / "cfg.json", kTinyXor);
  const ExperimentConfig cfg = parse_config(base / "cfg.json");
  for (const std::string command : {"finetune", "imbalance-sweep", "mc-attention", "similarity"}) {
    CAPTURE(command);
    RunOptions serial;
    serial.out_dir = base / (command + "_a");
    const fs::path bundle = run_command(command, cfg, serial);
    CHECK(fs::exists(bundle));
    RunOptions again = serial;
    again.out_dir = base / (command + "_b");
    run_command(command, cfg, again);
    RunOptions parallel = serial;
    parallel.out_dir = base / (command + "_c");
    parallel.jobs = 3;
    run_command(command, cfg, parallel);
    const auto a = directory_bytes(serial.out_dir);
    CHECK(a.size() >= 2);
    CHECK(a == directory_bytes(again.out_dir));
    CHECK(a == directory_bytes(parallel.out_dir));
  }
  const std::string finetune = read_text(base / "finetune_a" / "finetune.json");
  CHECK(finetune.find("\"fingerprint\"") != std::string::npos);
  CHECK(fs::exists(base / "finetune_a" / "model_full_seed1.mmpn"));
  CHECK(fs::exists(base / "finetune_a" / "loss_tabular_seed0.csv"));
  const std::string sweep = read_text(base / "imbalance-sweep_a" / "imbalance_sweep.csv");
  CHECK(sweep.rfind("variant,N,K,seed,accuracy,tabular_mass,nontabular_mass\n", 0) == 0);

  // eval reproduces the stored model's predictions.
  ExperimentConfig eval_cfg = cfg;
  eval_cfg.eval_checkpoint = (base / "finetune_a" / "model_full_seed0.mmpn").string();
  RunOptions eval_opts;
  eval_opts.out_dir = base / "eval";
  run_command("eval", eval_cfg, eval_opts);
  const std::string predictions = read_text(base / "eval" / "predictions.csv");
  CHECK(predictions.rfind("row,label,predicted,p0,p1\n", 0) == 0);
}

#ifdef MMPFN_CLI_PATH
TEST_CASE("command line exit codes") {
  const fs::path dir = scratch("cli");
  const std::string cli = MMPFN_CLI_PATH;
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + (dir / "out.txt").string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  write_text(dir / "mc.json", R"({"monte_carlo": [{"n_nontabular": 1, "n_tabular": 3, "samples": 100}]})");
  write_text(dir / "typo.json", R"({"monte_carlo": [{"n_nontabular": 1, "n_tabular": 3, "sample": 100}]})");
  write_text(dir / "bad_csv.json",
             R"({"task": {"csv": {"path": "broken.csv", "columns": [{"name": "x"}], "label": "y"}}})");
  write_text(dir / "broken.csv", "x,y\nfoo,1\nbar,0\n");
  CHECK(run("mc-attention --config \"" + (dir / "mc.json").string() + "\" --out \"" +
            (dir / "run").string() + "\" --jobs 2 --quiet") == 0);
  CHECK(fs::exists(dir / "run" / "mc_attention.csv"));
  CHECK(run("") == 2);
  CHECK(run("mc-attention") == 2);
  CHECK(run("frobnicate --config x.json") == 2);
  CHECK(run("mc-attention --config \"" + (dir / "missing.json").string() + "\"") == 2);
  CHECK(run("mc-attention --config \"" + (dir / "typo.json").string() + "\"") == 2);
  CHECK(run("finetune --config \"" + (dir / "bad_csv.json").string() + "\" --out \"" +
            (dir / "bad").string() + "\"") == 3);
  CHECK(read_text(dir / "out.txt").find("data error") != std::string::npos);
  CHECK(run("--version") == 0);
}
#endif
