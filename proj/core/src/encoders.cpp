#include "mmpfn/encoders.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <set>

#include "mmpfn/error.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

bool is_missing_text(const std::string& s) { return s.empty() || s == "NA" || s == "nan" || s == "NaN"; }

double parse_number(const std::string& s, std::size_t row, const std::string& column) {
  if (is_missing_text(s)) return kMissing;
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first < last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw DataError("column '" + column + "' row " + std::to_string(row) + ": '" + s +
                    "' is not a number");
  }
  return v;
}

std::ptrdiff_t category_code(const ColumnSpec& spec, const std::string& label) {
  for (std::size_t i = 0; i < spec.vocabulary.size(); ++i) {
    if (spec.vocabulary[i] == label) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

}  // namespace

void RawTable::validate() const {
  if (specs.size() != columns.size()) throw DataError("table has mismatched specs and columns");
  std::set<std::string> names;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    const ColumnSpec& s = specs[j];
    if (!names.insert(s.name).second) throw DataError("duplicate column name '" + s.name + "'");
    const std::size_t len = s.kind == ColumnKind::numeric ? columns[j].numbers.size()
                                                          : columns[j].labels.size();
    if (len != rows) {
      throw DataError("column '" + s.name + "' has " + std::to_string(len) + " cells, table has " +
                      std::to_string(rows) + " rows");
    }
    if (s.kind == ColumnKind::categorical && s.vocabulary.empty()) {
      throw DataError("categorical column '" + s.name + "' has an empty vocabulary");
    }
  }
}

RawTable table_from_csv(const CsvTable& csv, const std::vector<ColumnSpec>& specs) {
  RawTable table;
  table.specs = specs;
  table.rows = csv.rows.size();
  for (const ColumnSpec& spec : specs) {
    const std::size_t at = csv.column(spec.name);
    RawColumn col;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
      const std::string& cell = csv.rows[r][at];
      if (spec.kind == ColumnKind::numeric) {
        col.numbers.push_back(parse_number(cell, r, spec.name));
      } else {
        col.labels.push_back(is_missing_text(cell) ? std::string() : cell);
      }
    }
    table.columns.push_back(std::move(col));
  }
  table.validate();
  return table;
}

RawTable numeric_table(const Tensor& values, const std::string& name_prefix) {
  if (values.rank() != 2) throw ShapeError("numeric_table needs a [rows, columns] tensor");
  RawTable table;
  table.rows = values.dim(0);
  const std::size_t cols = values.dim(1);
  auto v = values.values();
  for (std::size_t j = 0; j < cols; ++j) {
    table.specs.push_back({name_prefix + std::to_string(j), ColumnKind::numeric, {}});
    RawColumn col;
    col.numbers.resize(table.rows);
    for (std::size_t r = 0; r < table.rows; ++r) col.numbers[r] = v[r * cols + j];
    table.columns.push_back(std::move(col));
  }
  return table;
}

TabularEncoderParams TabularEncoderParams::create(std::size_t model_dim, std::size_t max_categories,
                                                  std::uint64_t seed) {
  ParamFactory factory(seed);
  TabularEncoderParams p;
  p.numeric_weight = factory.normal({model_dim}, 1.0);
  p.numeric_bias = factory.normal({model_dim}, 1.0);
  p.missing_token = factory.normal({model_dim}, 1.0);
  p.category_table = factory.normal({max_categories, model_dim}, 1.0);
  return p;
}

void TabularEncoderParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".numeric_weight", numeric_weight});
  out.push_back({prefix + ".numeric_bias", numeric_bias});
  out.push_back({prefix + ".missing_token", missing_token});
  out.push_back({prefix + ".category_table", category_table});
}

TabularStats fit_tabular_stats(const RawTable& table, std::span<const std::size_t> train_rows) {
  table.validate();
  TabularStats stats;
  for (std::size_t j = 0; j < table.specs.size(); ++j) {
    const ColumnSpec& spec = table.specs[j];
    double mu = 0.0, sd = 1.0;
    if (spec.kind == ColumnKind::numeric) {
      double total = 0.0;
      std::size_t n = 0;
      for (std::size_t r : train_rows) {
        const double v = table.columns[j].numbers.at(r);
        if (std::isnan(v)) continue;
        total += v;
        ++n;
      }
      if (n > 0) {
        mu = total / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t r : train_rows) {
          const double v = table.columns[j].numbers[r];
          if (!std::isnan(v)) ss += (v - mu) * (v - mu);
        }
        const double var = ss / static_cast<double>(n);
        sd = var > 0.0 ? std::sqrt(var) : 1.0;
      }
    } else {
      for (std::size_t r : train_rows) {
        const std::string& label = table.columns[j].labels.at(r);
        if (!label.empty() && category_code(spec, label) < 0) {
          throw DataError("column '" + spec.name + "' train row " + std::to_string(r) +
                          ": category '" + label + "' is not in the vocabulary");
        }
      }
    }
    stats.mean.push_back(mu);
    stats.stddev.push_back(sd);
  }
  return stats;
}

Tensor tabular_encode(const RawTable& table, const TabularStats& stats,
                      const TabularEncoderParams& params, EncodeDiagnostics* diagnostics) {
  table.validate();
  const std::size_t rows = table.rows;
  const std::size_t cols = table.specs.size();
  const std::size_t d = params.model_dim();
  if (rows == 0 || cols == 0) throw ShapeError("tabular_encode: empty table");
  if (stats.mean.size() != cols) throw ShapeError("tabular_encode: statistics do not match columns");
  auto w = params.numeric_weight.values();
  auto b = params.numeric_bias.values();
  auto missing = params.missing_token.values();
  auto cats = params.category_table.values();
  EncodeDiagnostics diag;
  std::vector<double> out(rows * cols * d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      double* cell = out.data() + (r * cols + j) * d;
      const ColumnSpec& spec = table.specs[j];
      const double* src = missing.data();
      if (spec.kind == ColumnKind::numeric) {
        const double v = table.columns[j].numbers[r];
        if (!std::isnan(v)) {
          const double z = (v - stats.mean[j]) / stats.stddev[j];
          for (std::size_t k = 0; k < d; ++k) cell[k] = z * w[k] + b[k];
          continue;
        }
      } else {
        const std::string& label = table.columns[j].labels[r];
        if (!label.empty()) {
          const std::ptrdiff_t code = category_code(spec, label);
          if (code < 0) {
            ++diag.unseen_categories;
          } else if (static_cast<std::size_t>(code) >= params.max_categories()) {
            ++diag.capped_categories;
          } else {
            src = cats.data() + static_cast<std::size_t>(code) * d;
          }
        }
      }
      std::copy_n(src, d, cell);
    }
  }
  if (diagnostics) *diagnostics = diag;
  return Tensor({rows, cols, d}, std::move(out));
}

EmbeddingSet synthetic_embedding_provider(const Tensor& latent, std::size_t dim, double noise_scale,
                                          std::uint64_t seed, const std::string& modality) {
  if (dim == 0) throw ShapeError("synthetic embeddings need dim >= 1");
  const Tensor z = latent.rank() == 1 ? reshape(latent, {latent.dim(0), 1}) : latent;
  if (z.rank() != 2) throw ShapeError("latent must be [n] or [n, L]");
  const std::size_t n = z.dim(0), width = z.dim(1);
  const std::size_t hidden = std::max<std::size_t>(dim, 8);

  Rng map_rng(derive_seed(seed, 0));
  auto draw = [&map_rng](std::size_t count, double sd) {
    std::vector<double> v(count);
    for (double& x : v) x = sd * map_rng.normal();
    return v;
  };
  const auto a_w = draw(hidden * width, 1.0 / std::sqrt(static_cast<double>(width)));
  const auto a_b = draw(hidden, 0.5);
  const auto b_w = draw(dim * hidden, 1.0 / std::sqrt(static_cast<double>(hidden)));
  const auto c_w = draw(dim * width, 1.0 / std::sqrt(static_cast<double>(width)));
  Rng noise_rng(derive_seed(seed, 1));

  EmbeddingSet set;
  set.modality = modality;
  set.dim = dim;
  set.count = n;
  set.fingerprint = "synthetic:seed=" + std::to_string(seed) + ":noise=" + std::to_string(noise_scale);
  set.values.resize(n * dim);
  auto zv = z.values();
  std::vector<double> h(hidden);
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = zv.data() + i * width;
    for (std::size_t k = 0; k < hidden; ++k) {
      double acc = a_b[k];
      for (std::size_t l = 0; l < width; ++l) acc += a_w[k * width + l] * zi[l];
      h[k] = std::tanh(acc);
    }
    for (std::size_t o = 0; o < dim; ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < hidden; ++k) acc += b_w[o * hidden + k] * h[k];
      for (std::size_t l = 0; l < width; ++l) acc += c_w[o * width + l] * zi[l];
      set.values[i * dim + o] = acc + noise_scale * noise_rng.normal();
    }
  }
  return set;
}

}  // namespace mmpfn
