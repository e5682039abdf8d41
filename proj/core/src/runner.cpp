#include "mmpfn/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>

#include "json_util.hpp"
#include "mmpfn/error.hpp"
#include "mmpfn/metrics.hpp"
#include "mmpfn/parallel.hpp"
#include "mmpfn/rng.hpp"

#ifndef MMPFN_VERSION
#define MMPFN_VERSION "unknown"
#endif

namespace mmpfn {

namespace {

using json::Json;
namespace fs = std::filesystem;

// Stream for held-out pretraining checks, disjoint from the task stream.
constexpr std::uint64_t kHeldOutStream = 0x4845'4C44'4F55'5431ULL;

struct Context {
  const ExperimentConfig& cfg;
  fs::path out;
  std::size_t jobs;
  std::ostream* log;

  void say(const std::string& line) const {
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    if (log) *log << line << std::endl;
  }
};

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

Json bundle_head(const std::string& command, const ExperimentConfig& cfg) {
  Json b;
  b["command"] = command;
  b["config"] = json::parse(emit_config(cfg), "config echo");
  Json fp;
  fp["mmpfn_version"] = MMPFN_VERSION;
#if defined(__VERSION__)
  fp["compiler"] = __VERSION__;
#else
  fp["compiler"] = "unknown";
#endif
  fp["cxx_standard"] = static_cast<long>(__cplusplus);
  fp["seeds"] = cfg.training.seeds;
  fp["rng"] = "splitmix64-counter";
  b["fingerprint"] = fp;
  return b;
}

fs::path finish(const Context& ctx, const std::string& command, Json bundle) {
  const fs::path path = ctx.out / (command + ".json");
  write_text(path, bundle.dump(2) + "\n");
  ctx.say("wrote " + path.string());
  return path;
}

Json mass_json(const AttentionMassReport& r) {
  Json j;
  j["predicted_mass"] = r.predicted_mass;
  j["empirical_mass"] = r.empirical_mass;
  j["standard_error"] = r.standard_error;
  j["breakdown"] = Json::object();
  for (const MassShare& s : r.breakdown) j["breakdown"][s.name] = s.mass;
  return j;
}

CsvTable loss_csv(const std::vector<double>& trace, const char* index_name) {
  CsvTable t;
  t.header = {index_name, "loss"};
  for (std::size_t i = 0; i < trace.size(); ++i) {
    t.rows.push_back({std::to_string(i), format_number(trace[i])});
  }
  return t;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return end > begin ? s / static_cast<double>(end - begin) : 0.0;
}

std::optional<Checkpoint> load_pretrained_checked(const ExperimentConfig& cfg,
                                                  const MultimodalDataset& data,
                                                  const std::vector<ViewSpec>& views) {
  if (cfg.model.pretrained.empty()) return std::nullopt;
  Checkpoint ckpt = read_checkpoint(cfg.resolve(cfg.model.pretrained));
  // Fail before any training if the checkpoint does not fit the model.
  for (const ViewSpec& view : views) {
    MultimodalModel probe = MultimodalModel::create(model_spec_for(cfg, data, view), 0);
    probe.load_pretrained(ckpt);
  }
  return ckpt;
}

fs::path run_pretrain(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  ModelSpec spec;
  spec.backbone = cfg.model.backbone;
  spec.max_categories = cfg.model.max_categories;
  spec.seed = cfg.model.seed;
  BackboneParams backbone = initial_backbone(spec);
  const TabularEncoderParams encoder = initial_tabular_encoder(spec);
  const std::size_t every = std::max<std::size_t>(1, cfg.pretrain.run.n_tasks / 20);
  double window = 0.0;
  const std::vector<double> trace = pretrain_backbone(
      cfg.pretrain.prior, backbone, encoder, cfg.pretrain.run,
      [&ctx, &window, every](std::size_t t, double loss) {
        window += loss;
        if ((t + 1) % every == 0) {
          ctx.say("pretrain task " + std::to_string(t + 1) + " mean loss " +
                  format_number(window / static_cast<double>(every)));
          window = 0.0;
        }
      });
  write_checkpoint(ctx.out / "pretrained.mmpn", pretrained_checkpoint(spec, backbone, encoder));
  write_csv(ctx.out / "pretrain_loss.csv", loss_csv(trace, "task_index"));

  std::vector<double> heldout(cfg.pretrain.eval_tasks);
  parallel_for(heldout.size(), ctx.jobs, [&](std::size_t i) {
    const SyntheticTask task =
        linear_separable_task(cfg.pretrain.eval_features, cfg.pretrain.eval_train,
                              cfg.pretrain.eval_test, derive_seed(cfg.pretrain.run.seed ^ kHeldOutStream, i));
    heldout[i] = in_context_accuracy(task, backbone, encoder);
  });

  const std::size_t w = std::min<std::size_t>(50, trace.size());
  Json results;
  results["checkpoint"] = "pretrained.mmpn";
  results["loss_trace"] = "pretrain_loss.csv";
  results["n_tasks"] = trace.size();
  results["loss_leading50_mean"] = mean_of(trace, 0, w);
  results["loss_trailing50_mean"] = mean_of(trace, trace.size() - w, trace.size());
  results["heldout_accuracies"] = heldout;
  results["heldout_mean_accuracy"] = mean_of(heldout, 0, heldout.size());
  results["parameter_digest"] = hex64(parameter_digest(backbone.parameters()));
  Json bundle = bundle_head("pretrain", cfg);
  bundle["results"] = results;
  return finish(ctx, "pretrain", bundle);
}

fs::path run_finetune(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const MultimodalDataset data = load_dataset(cfg);
  const std::vector<ViewSpec> views = effective_views(cfg);
  const std::optional<Checkpoint> pretrained = load_pretrained_checked(cfg, data, views);
  const std::vector<std::uint64_t>& seeds = cfg.training.seeds;

  struct Job {
    SeedResult result;
    AttentionMassReport mass;
    std::vector<ModalityOrthogonality> orthogonality;
  };
  std::vector<Job> jobs(views.size() * seeds.size());
  parallel_for(jobs.size(), ctx.jobs, [&](std::size_t index) {
    const ViewSpec& view = views[index / seeds.size()];
    const std::uint64_t seed = seeds[index % seeds.size()];
    const MultimodalDataset sub = data.select_views(view.tabular, view.modalities);
    MultimodalModel model = MultimodalModel::create(model_spec_for(cfg, data, view), seed);
    if (pretrained) model.load_pretrained(*pretrained);
    jobs[index].result = fine_tune(model, sub, cfg.training, seed);
    jobs[index].mass = probe_model(model, sub, cfg.probe_block);
    jobs[index].orthogonality = head_orthogonality(model, sub, sub.test_rows);
    const std::string tag = view.name + "_seed" + std::to_string(seed);
    write_checkpoint(ctx.out / ("model_" + tag + ".mmpn"), model.checkpoint());
    write_csv(ctx.out / ("loss_" + tag + ".csv"), loss_csv(jobs[index].result.loss_trace, "step"));
    ctx.say("finetune " + tag + " accuracy " + format_number(jobs[index].result.accuracy));
  });

  std::vector<std::vector<std::optional<double>>> table(1);
  std::vector<double> means;
  for (std::size_t v = 0; v < views.size(); ++v) {
    RunResult run;
    for (std::size_t s = 0; s < seeds.size(); ++s) run.seeds.push_back(jobs[v * seeds.size() + s].result);
    means.push_back(run.mean_accuracy());
    table[0].push_back(run.mean_accuracy());
  }
  const std::vector<double> ranks = rank_aggregate(table);
  Json out_views = Json::array();
  for (std::size_t v = 0; v < views.size(); ++v) {
    Json jv;
    jv["name"] = views[v].name;
    jv["tabular"] = views[v].tabular;
    jv["modalities"] = views[v].modalities;
    Json per_seed = Json::array();
    std::vector<double> accs;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const Job& job = jobs[v * seeds.size() + s];
      const std::string tag = views[v].name + "_seed" + std::to_string(seeds[s]);
      Json js;
      js["seed"] = seeds[s];
      js["accuracy"] = job.result.accuracy;
      js["final_loss"] = job.result.loss_trace.empty() ? 0.0 : job.result.loss_trace.back();
      js["loss_trace"] = "loss_" + tag + ".csv";
      js["checkpoint"] = "model_" + tag + ".mmpn";
      js["frozen_digest"] = hex64(job.result.frozen_digest);
      js["attention_mass"] = mass_json(job.mass);
      if (!job.orthogonality.empty()) {
        Json ortho = Json::object();
        for (const ModalityOrthogonality& o : job.orthogonality) ortho[o.modality] = o.metric;
        js["head_orthogonality"] = ortho;
      }
      per_seed.push_back(js);
      accs.push_back(job.result.accuracy);
    }
    jv["seeds"] = per_seed;
    jv["accuracies"] = accs;
    jv["mean_accuracy"] = means[v];
    jv["rank"] = ranks[v];
    out_views.push_back(jv);
  }
  Json bundle = bundle_head("finetune", cfg);
  bundle["results"]["views"] = out_views;
  return finish(ctx, "finetune", bundle);
}

fs::path run_eval(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const Checkpoint ckpt = read_checkpoint(cfg.resolve(cfg.eval_checkpoint));
  const MultimodalModel model = MultimodalModel::from_checkpoint(ckpt);
  const MultimodalDataset data = load_dataset(cfg);
  std::vector<std::string> names;
  for (const ModalitySpec& m : model.spec().modalities) names.push_back(m.name);
  const MultimodalDataset sub = data.select_views(model.spec().use_tabular, names);
  model.check_compatible(sub);
  const Tensor probs = predict_test(model, sub);
  std::vector<std::size_t> truth;
  for (std::size_t r : sub.test_rows) truth.push_back(sub.labels[r]);
  const double accuracy = evaluate_accuracy(probs, truth);

  CsvTable predictions;
  predictions.header = {"row", "label", "predicted"};
  const std::size_t c = probs.dim(1);
  for (std::size_t k = 0; k < c; ++k) predictions.header.push_back("p" + std::to_string(k));
  auto p = probs.values();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::vector<std::string> row{std::to_string(sub.test_rows[i]), std::to_string(truth[i]),
                                 std::to_string(argmax(p.subspan(i * c, c)))};
    for (std::size_t k = 0; k < c; ++k) row.push_back(format_number(p[i * c + k]));
    predictions.rows.push_back(std::move(row));
  }
  write_csv(ctx.out / "predictions.csv", predictions);
  Json results;
  results["checkpoint_digest"] = hex64(parameter_digest(model.all_parameters()));
  results["accuracy"] = accuracy;
  results["predictions"] = "predictions.csv";
  results["attention_mass"] = mass_json(probe_model(model, sub, cfg.probe_block));
  Json bundle = bundle_head("eval", cfg);
  bundle["results"] = results;
  return finish(ctx, "eval", bundle);
}

// First configured view that contains `modality`, else tabular + modality.
ViewSpec view_with(const ExperimentConfig& cfg, const std::string& modality) {
  for (const ViewSpec& v : effective_views(cfg)) {
    if (std::find(v.modalities.begin(), v.modalities.end(), modality) != v.modalities.end()) return v;
  }
  return ViewSpec{"sweep", true, {modality}};
}

// The view with the most modalities; the first one on ties.
ViewSpec widest_view(const ExperimentConfig& cfg) {
  const std::vector<ViewSpec> views = effective_views(cfg);
  return *std::max_element(views.begin(), views.end(), [](const ViewSpec& a, const ViewSpec& b) {
    return a.modalities.size() < b.modalities.size();
  });
}

fs::path run_imbalance(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const MultimodalDataset data = load_dataset(cfg);
  const ViewSpec view = view_with(cfg, cfg.imbalance.modality);
  const std::optional<Checkpoint> pretrained = load_pretrained_checked(cfg, data, {view});
  SweepSetup setup;
  setup.model = model_spec_for(cfg, data, view);
  setup.modality = cfg.imbalance.modality;
  setup.grid = cfg.imbalance.grid;
  setup.training = cfg.training;
  setup.probe_block = cfg.imbalance.probe_block;
  setup.pretrained = pretrained ? &*pretrained : nullptr;
  const std::vector<SweepRow> rows = imbalance_sweep(data, setup, ctx.jobs);
  write_csv(ctx.out / "imbalance_sweep.csv", sweep_csv(rows));

  Json cells = Json::array();
  const std::size_t n_seeds = cfg.training.seeds.size();
  for (std::size_t c = 0; c < setup.grid.size(); ++c) {
    double acc = 0.0;
    double mass = 0.0;
    std::vector<double> accs;
    std::vector<std::string> digests;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const SweepRow& r = rows[c * n_seeds + s];
      acc += r.accuracy;
      mass += r.nontabular_mass;
      accs.push_back(r.accuracy);
      digests.push_back(hex64(r.frozen_digest));
    }
    const SweepRow& first = rows[c * n_seeds];
    Json jc;
    jc["variant"] = first.variant;
    jc["N"] = first.n_heads;
    jc["K"] = first.k_pooled;
    jc["accuracies"] = accs;
    jc["mean_accuracy"] = acc / static_cast<double>(n_seeds);
    jc["mean_nontabular_mass"] = mass / static_cast<double>(n_seeds);
    jc["frozen_digests"] = digests;
    cells.push_back(jc);
  }
  Json bundle = bundle_head("imbalance-sweep", cfg);
  bundle["results"]["csv"] = "imbalance_sweep.csv";
  bundle["results"]["cells"] = cells;
  return finish(ctx, "imbalance-sweep", bundle);
}

fs::path run_mc(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  std::vector<AttentionMassReport> reports;
  for (const ImbalanceSpec& spec : cfg.monte_carlo) {
    reports.push_back(monte_carlo_attention_mass(spec, ctx.jobs));
  }
  write_csv(ctx.out / "mc_attention.csv", monte_carlo_csv(cfg.monte_carlo, reports));
  Json list = Json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    Json j = mass_json(reports[i]);
    j["n_nontabular"] = cfg.monte_carlo[i].n_nontabular;
    j["n_tabular"] = cfg.monte_carlo[i].n_tabular;
    j["nominal_prediction"] = expected_attention_mass(cfg.monte_carlo[i]);
    list.push_back(j);
  }
  Json bundle = bundle_head("mc-attention", cfg);
  bundle["results"]["csv"] = "mc_attention.csv";
  bundle["results"]["reports"] = list;
  return finish(ctx, "mc-attention", bundle);
}

fs::path run_similarity(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const MultimodalDataset data = load_dataset(cfg);
  const ViewSpec view = widest_view(cfg);
  std::optional<MultimodalModel> model;
  if (!cfg.eval_checkpoint.empty()) {
    model = MultimodalModel::from_checkpoint(read_checkpoint(cfg.resolve(cfg.eval_checkpoint)));
  } else {
    const std::optional<Checkpoint> pretrained = load_pretrained_checked(cfg, data, {view});
    const std::uint64_t seed = cfg.training.seeds.front();
    model = MultimodalModel::create(model_spec_for(cfg, data, view), seed);
    if (pretrained) model->load_pretrained(*pretrained);
    fine_tune(*model, data.select_views(view.tabular, view.modalities), cfg.training, seed);
  }
  std::vector<std::string> names_in;
  for (const ModalitySpec& m : model->spec().modalities) names_in.push_back(m.name);
  const MultimodalDataset sub = data.select_views(model->spec().use_tabular, names_in);

  BlockCapture capture;
  capture.block = cfg.similarity_block;
  FusedTable fused;
  {
    NoGradGuard no_grad;
    fused = model->fuse(sub, sub.train_rows, sub.test_rows);
    model->logits(sub, sub.train_rows, sub.test_rows, &capture);
  }
  const Tensor& out = capture.block_output;
  const std::size_t n_train = sub.train_rows.size();
  const std::size_t features = fused.tokens.dim(1);
  const Tensor test_tokens =
      slice(slice(out, 0, n_train, out.dim(0)), 1, 0, features);
  const SimilarityMatrix sim = cosine_similarity_matrix(test_tokens);

  std::vector<std::string> names(features);
  for (const PartitionCell& cell : fused.partition.cells) {
    for (std::size_t i = 0; i < cell.features.size(); ++i) {
      names[cell.features[i]] = cell.name == "tabular" ? sub.tabular.specs[i].name
                                                       : cell.name + "_" + std::to_string(i);
    }
  }
  CsvTable csv;
  csv.header = {"feature"};
  csv.header.insert(csv.header.end(), names.begin(), names.end());
  Json matrix = Json::array();
  for (std::size_t i = 0; i < features; ++i) {
    std::vector<std::string> row{names[i]};
    std::vector<double> values;
    for (std::size_t j = 0; j < features; ++j) {
      row.push_back(format_number(sim.at(i, j)));
      values.push_back(sim.at(i, j));
    }
    csv.rows.push_back(std::move(row));
    matrix.push_back(values);
  }
  write_csv(ctx.out / "similarity.csv", csv);
  Json bundle = bundle_head("similarity", cfg);
  bundle["results"]["csv"] = "similarity.csv";
  bundle["results"]["block"] = cfg.similarity_block;
  bundle["results"]["features"] = names;
  bundle["results"]["matrix"] = matrix;
  bundle["results"]["zero_norm_pairs"] = sim.zero_norm_pairs;
  return finish(ctx, "similarity", bundle);
}

}  // namespace

const std::vector<std::string>& known_commands() {
  static const std::vector<std::string> commands{"pretrain",        "finetune",     "eval",
                                                 "imbalance-sweep", "mc-attention", "similarity"};
  return commands;
}

const char* version_string() { return MMPFN_VERSION; }

fs::path run_command(const std::string& command, const ExperimentConfig& cfg,
                     const RunOptions& options) {
  validate_for(cfg, command);
  const Context ctx{cfg, options.out_dir.empty() ? cfg.resolve(cfg.output_dir) : options.out_dir,
                    std::max<std::size_t>(1, options.jobs), options.log};
  fs::create_directories(ctx.out);
  if (command == "pretrain") return run_pretrain(ctx);
  if (command == "finetune") return run_finetune(ctx);
  if (command == "eval") return run_eval(ctx);
  if (command == "imbalance-sweep") return run_imbalance(ctx);
  if (command == "mc-attention") return run_mc(ctx);
  if (command == "similarity") return run_similarity(ctx);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace mmpfn
