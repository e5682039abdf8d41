#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mmpfn/checkpoint.hpp"
#include "mmpfn/csv.hpp"
#include "mmpfn/embedding_file.hpp"
#include "mmpfn/encoders.hpp"
#include "mmpfn/error.hpp"
#include "mmpfn/model.hpp"
#include "test_util.hpp"

using namespace mmpfn;
using mmpfn::testing::bit_identical;
using mmpfn::testing::random_tensor;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mmpfn_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Byte-level MMPE writer written from the layout description alone.
std::vector<std::uint8_t> reference_mmpe(const std::string& name, const std::string& fp,
                                         std::uint32_t dim, const std::vector<float>& values) {
  std::vector<std::uint8_t> out{'M', 'M', 'P', 'E'};
  put<std::uint32_t>(out, 1);
  out.push_back(0);
  put<std::uint32_t>(out, dim);
  put<std::uint64_t>(out, values.size() / dim);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put<std::uint16_t>(out, static_cast<std::uint16_t>(fp.size()));
  out.insert(out.end(), fp.begin(), fp.end());
  for (float f : values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

}  // namespace

TEST_CASE("csv parsing handles quotes, CRLF and escapes") {
  const CsvTable t = parse_csv("a,b,c\r\n1,\"x,y\",\"say \"\"hi\"\"\"\r\n2,,z\n");
  REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "x,y");
  CHECK(t.rows[0][2] == "say \"hi\"");
  CHECK(t.rows[1][1].empty());
  CHECK(t.column("c") == 2);
  CHECK_THROWS_AS(t.column("d"), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n1\n"), DataError);
  CHECK_THROWS_AS(parse_csv("a\n\"open\n"), DataError);
  CHECK(parse_csv(format_csv(t)).rows == t.rows);
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a\"b") == "\"a\"\"b\"");
}

TEST_CASE("format_number is the shortest round-trip form") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(1.0) == "1");
  CHECK(format_number(-2.5e-7) == "-2.5e-07");
  CHECK(format_number(std::nan("")) == "nan");
  const double third = 1.0 / 3.0;
  CHECK(std::stod(format_number(third)) == third);
}

TEST_CASE("typed tables from csv with missing cells") {
  const CsvTable csv = parse_csv("age,site,label\n30,arm,a\nNA,leg,b\n50,,a\nnan,arm,b\n");
  const std::vector<ColumnSpec> specs{{"age", ColumnKind::numeric, {}},
                                      {"site", ColumnKind::categorical, {"arm", "leg"}}};
  const RawTable table = table_from_csv(csv, specs);
  REQUIRE(table.rows == 4);
  CHECK(std::isnan(table.columns[0].numbers[1]));
  CHECK(std::isnan(table.columns[0].numbers[3]));
  CHECK(table.columns[1].labels[2].empty());
  const CsvTable bad = parse_csv("age\nold\n");
  CHECK_THROWS_AS(table_from_csv(bad, {{"age", ColumnKind::numeric, {}}}), DataError);
}

TEST_CASE("tabular encoder tokenizes per cell with train statistics") {
  const CsvTable csv = parse_csv("x,c\n1,u\n3,v\nNA,w\n5,\n");
  const RawTable table =
      table_from_csv(csv, {{"x", ColumnKind::numeric, {}}, {"c", ColumnKind::categorical, {"u", "v"}}});
  const TabularEncoderParams p = TabularEncoderParams::create(4, 8, 3);
  const std::vector<std::size_t> train{0, 1};
  const TabularStats stats = fit_tabular_stats(table, train);
  CHECK(stats.mean[0] == 2.0);
  CHECK(stats.stddev[0] == 1.0);
  EncodeDiagnostics diag;
  const Tensor tokens = tabular_encode(table, stats, p, &diag);
  REQUIRE(tokens.shape() == Shape{4, 2, 4});
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(tokens[(0 * 2 + 0) * 4 + k] == doctest::Approx(-p.numeric_weight[k] + p.numeric_bias[k]));
    CHECK(tokens[(3 * 2 + 0) * 4 + k] ==
          doctest::Approx(3.0 * p.numeric_weight[k] + p.numeric_bias[k]));
    CHECK(tokens[(2 * 2 + 0) * 4 + k] == p.missing_token[k]);
    CHECK(tokens[(1 * 2 + 1) * 4 + k] == p.category_table[1 * 4 + k]);
    CHECK(tokens[(2 * 2 + 1) * 4 + k] == p.missing_token[k]);  // unseen "w"
    CHECK(tokens[(3 * 2 + 1) * 4 + k] == p.missing_token[k]);  // empty cell
  }
  CHECK(diag.unseen_categories == 1);
  CHECK_FALSE(tokens.requires_grad());
  // A train row outside the vocabulary is a data error.
  const std::vector<std::size_t> train_bad{0, 2};
  CHECK_THROWS_AS(fit_tabular_stats(table, train_bad), DataError);
}

TEST_CASE("constant columns get unit spread") {
  const RawTable table = numeric_table(Tensor({3, 1}, 7.0));
  const std::vector<std::size_t> train{0, 1, 2};
  const TabularStats stats = fit_tabular_stats(table, train);
  CHECK(stats.mean[0] == 7.0);
  CHECK(stats.stddev[0] == 1.0);
}

TEST_CASE("synthetic embedding provider is deterministic and seed dependent") {
  const Tensor latent = random_tensor({5, 2}, 60);
  const EmbeddingSet a = synthetic_embedding_provider(latent, 6, 0.1, 9);
  const EmbeddingSet b = synthetic_embedding_provider(latent, 6, 0.1, 9);
  const EmbeddingSet c = synthetic_embedding_provider(latent, 6, 0.1, 10);
  CHECK(a.count == 5);
  CHECK(a.dim == 6);
  CHECK(bit_identical(a.values, b.values));
  CHECK_FALSE(bit_identical(a.values, c.values));
  // Distinct latents map to distinct embeddings without noise.
  const EmbeddingSet clean = synthetic_embedding_provider(latent, 6, 0.0, 9);
  CHECK(clean.values[0] != clean.values[6]);
}

TEST_CASE("MMPE files match an independent byte layout") {
  const std::vector<float> payload{1.5f, -2.0f, 0.25f, 3.0f, 0.0f, -0.125f};
  const auto bytes = reference_mmpe("image", "dinov2-base@abc", 3, payload);
  const EmbeddingSet set = decode_embedding_file(bytes);
  CHECK(set.modality == "image");
  CHECK(set.fingerprint == "dinov2-base@abc");
  CHECK(set.dim == 3);
  CHECK(set.count == 2);
  for (std::size_t i = 0; i < payload.size(); ++i) CHECK(set.values[i] == payload[i]);
  CHECK(encode_embedding_file(set) == bytes);

  const auto path = scratch("roundtrip.mmpe");
  write_embedding_file(path, set);
  const EmbeddingSet back = load_embedding_file(path);
  CHECK(back.values == set.values);
  const std::vector<std::size_t> rows{1};
  CHECK(back.rows(rows)[2] == -0.125);
}

TEST_CASE("MMPE reader rejects malformed files") {
  const std::vector<float> payload{1.0f, 2.0f};
  auto good = reference_mmpe("t", "", 2, payload);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_embedding_file(bad_magic), DataError);
  auto bad_version = good;
  bad_version[4] = 2;
  CHECK_THROWS_AS(decode_embedding_file(bad_version), DataError);
  auto bad_dtype = good;
  bad_dtype[8] = 1;
  CHECK_THROWS_AS(decode_embedding_file(bad_dtype), DataError);
  auto truncated = good;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_embedding_file(truncated), DataError);
  auto extra = good;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_embedding_file(extra), DataError);
  const std::vector<float> nan_payload{1.0f, std::nanf("")};
  CHECK_THROWS_AS(decode_embedding_file(reference_mmpe("t", "", 2, nan_payload)), DataError);
  CHECK_THROWS_AS(load_embedding_file(scratch("missing.mmpe")), DataError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ModelSpec spec;
  spec.backbone.model_dim = 8;
  spec.backbone.heads = 2;
  spec.backbone.blocks = 1;
  ProjectorVariant pv;
  pv.heads = 4;
  pv.cap = true;
  pv.pooled = 2;
  spec.modalities.push_back({"image", 5, pv.normalized()});
  const MultimodalModel model = MultimodalModel::create(spec, 3);
  const Checkpoint ckpt = model.checkpoint();
  const auto bytes = encode_checkpoint(ckpt);
  CHECK(std::memcmp(bytes.data(), "MMPN", 4) == 0);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  REQUIRE(back.tensors.size() == ckpt.tensors.size());
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    CHECK(back.tensors[i].name == ckpt.tensors[i].name);
    CHECK(bit_identical(back.tensors[i].tensor.values(), ckpt.tensors[i].tensor.values()));
  }
  const MultimodalModel rebuilt = MultimodalModel::from_checkpoint(back);
  CHECK(rebuilt.spec() == spec);
  CHECK(parameter_digest(rebuilt.all_parameters()) == parameter_digest(model.all_parameters()));

  const auto path = scratch("model.mmpn");
  write_checkpoint(path, ckpt);
  CHECK(encode_checkpoint(read_checkpoint(path)) == bytes);

  auto corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(corrupt), DataError);
  corrupt = bytes;
  corrupt.resize(corrupt.size() - 8);
  CHECK_THROWS_AS(decode_checkpoint(corrupt), DataError);
}

TEST_CASE("load_parameters checks names and shapes") {
  ParamFactory factory(1);
  const LinearParams a = LinearParams::create(3, 2, factory);
  const LinearParams b = LinearParams::create(3, 2, factory);
  ParamList src, dst;
  a.collect("l", src);
  b.collect("l", dst);
  CHECK(parameter_digest(src) != parameter_digest(dst));
  load_parameters(Checkpoint{"{}", src}, dst);
  CHECK(parameter_digest(src) == parameter_digest(dst));
  ParamList renamed;
  b.collect("other", renamed);
  CHECK_THROWS_AS(load_parameters(Checkpoint{"{}", src}, renamed), DataError);
  const LinearParams wide = LinearParams::create(4, 2, factory);
  ParamList wrong_shape;
  wide.collect("l", wrong_shape);
  CHECK_THROWS_AS(load_parameters(Checkpoint{"{}", src}, wrong_shape), DataError);
}
