#pragma once

// The five pipeline stages behind the command-line tool. Each stage reads
// its inputs, writes only under the run directory, and is deterministic
// given the run configuration.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "retrieval.hpp"
#include "trainer.hpp"

namespace cbmir::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kTrainReportFile = "train_report.tsv";
inline constexpr const char* kSplitFile = "split.json";
inline constexpr const char* kIndexFile = "index.bin";
inline constexpr const char* kMetricsFile = "metrics.json";
inline constexpr const char* kConfusionFile = "confusion.csv";
inline constexpr const char* kMapTableFile = "map_table.csv";
inline constexpr const char* kPlotFile = "pr_curves.csv";
inline constexpr const char* kManifestFile = "manifest.json";

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline void write_text(const fs::path& p, const std::string& text) { write_file(p.string(), text); }

// FNV-1a over every "<class>/<file>" name and its bytes, in sorted order.
inline std::uint64_t dataset_checksum(const std::string& root) {
  std::vector<std::string> rel;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw InputError("dataset root is not a directory: " + root);
  for (const auto& cls : fs::directory_iterator(root)) {
    if (!cls.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(cls.path()))
      if (f.is_regular_file())
        rel.push_back(cls.path().filename().string() + "/" + f.path().filename().string());
  }
  std::sort(rel.begin(), rel.end());
  std::uint64_t h = fnv1a64("");
  for (const auto& r : rel) {
    h = fnv1a64(r, h);
    h = fnv1a64(read_file((fs::path(root) / r).string()), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareResult {
  std::size_t files = 0;
  std::uint64_t checksum = 0;
  nlohmann::ordered_json manifest;
};

namespace detail {

inline void claim_output_dir(const std::string& out, bool force) {
  std::error_code ec;
  if (fs::exists(out, ec)) {
    if (!fs::is_directory(out, ec)) throw IoError("output path exists and is not a directory: " + out);
    if (!fs::is_empty(out, ec)) {
      if (!force) throw IoError("output directory is not empty (use --force): " + out);
      fs::remove_all(out, ec);
      if (ec) throw IoError("cannot clear " + out + ": " + ec.message());
    }
  }
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
}

inline nlohmann::ordered_json describe_tree(const std::string& root, std::size_t& files) {
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  nlohmann::ordered_json listing = nlohmann::ordered_json::array();
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  files = 0;
  for (const auto& name : names) {
    std::vector<std::string> entries;
    for (const auto& f : fs::directory_iterator(fs::path(root) / name))
      if (f.is_regular_file()) entries.push_back(f.path().filename().string());
    std::sort(entries.begin(), entries.end());
    classes.push_back({{"name", name}, {"count", entries.size()}});
    for (const auto& f : entries) {
      const std::string rel = name + "/" + f;
      listing.push_back({{"path", rel}, {"fnv1a64", hex64(fnv1a64(read_file((fs::path(root) / rel).string())))}});
    }
    files += entries.size();
  }
  nlohmann::ordered_json j;
  j["classes"] = classes;
  j["total"] = files;
  j["files"] = listing;
  return j;
}

}  // namespace detail

inline PrepareResult finish_prepare(const std::string& out, nlohmann::ordered_json origin) {
  PrepareResult res;
  auto tree = detail::describe_tree(out, res.files);
  res.checksum = dataset_checksum(out);
  res.manifest["origin"] = std::move(origin);
  res.manifest["classes"] = tree["classes"];
  res.manifest["total"] = tree["total"];
  res.manifest["checksum"] = hex64(res.checksum);
  res.manifest["files"] = tree["files"];
  write_text(fs::path(out) / kManifestFile, res.manifest.dump(2) + "\n");
  return res;
}

inline PrepareResult prepare_synthetic(const SyntheticParams& p, const std::string& out, bool force) {
  const auto corpus = generate_synthetic_corpus(p.classes, p.per_class, p.size, p.seed);
  detail::claim_output_dir(out, force);
  write_corpus(corpus, out);
  nlohmann::ordered_json origin;
  origin["generator"] = "synthetic";
  origin["classes"] = p.classes;
  origin["per_class"] = p.per_class;
  origin["size"] = p.size;
  origin["seed"] = p.seed;
  return finish_prepare(out, std::move(origin));
}

// Copies every decodable PGM of a directory-per-class tree.
inline PrepareResult prepare_from_source(const std::string& source, const std::string& out, bool force) {
  std::error_code ec;
  if (!fs::is_directory(source, ec)) throw InputError("source is not a directory: " + source);
  if (fs::equivalent(source, out, ec)) throw InputError("source and output directories are the same");
  detail::claim_output_dir(out, force);
  for (const auto& cls : fs::directory_iterator(source)) {
    if (!cls.is_directory()) continue;
    const fs::path dst = fs::path(out) / cls.path().filename();
    fs::create_directories(dst);
    for (const auto& f : fs::directory_iterator(cls.path())) {
      if (!f.is_regular_file()) continue;
      try {
        decode_pgm(read_file(f.path().string()));
      } catch (const FormatError&) {
        continue;
      }
      fs::copy_file(f.path(), dst / f.path().filename(), fs::copy_options::overwrite_existing);
    }
  }
  nlohmann::ordered_json origin;
  origin["generator"] = "copy";
  origin["source"] = source;
  return finish_prepare(out, std::move(origin));
}

// ---------------------------------------------------------------------------
// shared loading

inline PreprocessOptions preprocess_options(const RunConfig& c) { return {c.resize_size, c.input_size}; }

struct LoadedData {
  IngestResult ingest;
  DatasetSplit split;
  std::uint64_t checksum = 0;
};

inline LoadedData load_dataset(const RunConfig& c, const std::string& data_dir) {
  LoadedData d;
  d.checksum = dataset_checksum(data_dir);
  d.ingest = ingest_directory(data_dir, preprocess_options(c));
  d.split = split_dataset(d.ingest.samples, c.train_fraction, c.split_seed, d.ingest.class_names);
  return d;
}

// Where a run reads its images: the configured path, or a synthetic corpus
// generated under the output directory.
inline std::string data_dir_for(const RunConfig& c) {
  if (!c.dataset_path.empty()) return c.dataset_path;
  if (c.synthetic) return (fs::path(c.output_dir) / "data").string();
  throw ConfigError("no dataset: set dataset.path or dataset.synthetic");
}

inline NetworkSpec network_spec_for(const RunConfig& c, std::size_t classes) {
  return build_paper_architecture({1, c.input_size, c.input_size}, classes, c.keep_prob, c.model_scale);
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  TrainReport report;
  std::uint64_t fingerprint = 0;
  MetricsReport test_metrics;
};

inline TrainOutcome train_stage(const RunConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const std::string data_dir = data_dir_for(cfg);
  if (cfg.dataset_path.empty()) prepare_synthetic(cfg.synthetic_params, data_dir, true);
  const LoadedData data = load_dataset(cfg, data_dir);
  if (log && data.ingest.skipped)
    *log << "warning: skipped " << data.ingest.skipped << " undecodable files\n";
  Network net(network_spec_for(cfg, data.ingest.class_names.size()));
  init_weights(net, cfg.init, cfg.init_seed);

  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.max_epochs = cfg.epochs;
  tc.rng_seed = cfg.train_seed;
  tc.shuffle_each_epoch = cfg.shuffle_each_epoch;
  tc.batch_size = cfg.batch_size;
  TrainHooks hooks;
  if (log)
    hooks.on_epoch = [log](const EpochStats& e) {
      *log << "epoch " << e.epoch << " loss " << e.mean_loss << " train_error " << e.train_error << '\n';
    };
  TrainOutcome out;
  out.report = train(net, data.split.train, tc, hooks);

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  save_checkpoint(net, (dir / kCheckpointFile).string(),
                  {cfg.epochs, out.report.final_loss, cfg.train_seed});
  std::ostringstream rep;
  write_train_report(rep, out.report);
  write_text(dir / kTrainReportFile, rep.str());
  write_text(dir / kConfigFile, dump_config(cfg));

  nlohmann::ordered_json split;
  split["dataset_checksum"] = hex64(data.checksum);
  split["class_names"] = data.ingest.class_names;
  for (const auto& s : data.split.train) split["train"].push_back(s.source_id);
  for (const auto& s : data.split.test) split["test"].push_back(s.source_id);
  write_text(dir / kSplitFile, split.dump(2) + "\n");

  out.fingerprint = network_fingerprint(net);
  out.test_metrics = evaluate_classifier(net, data.split.test, data.ingest.class_names);
  return out;
}

// ---------------------------------------------------------------------------
// index / query / evaluate share a run directory written by train.

struct Run {
  RunConfig config;
  Checkpoint checkpoint;
  nlohmann::json split;
};

inline Run open_run(const std::string& run_dir) {
  const fs::path dir(run_dir);
  Run run;
  run.config = load_config((dir / kConfigFile).string());
  run.config.output_dir = run_dir;
  run.checkpoint = load_checkpoint((dir / kCheckpointFile).string());
  try {
    run.split = nlohmann::json::parse(read_file((dir / kSplitFile).string()));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("split file is not valid JSON: ") + e.what());
  }
  return run;
}

// Reloads the dataset and checks it is the one the checkpoint was trained on.
inline LoadedData load_run_dataset(const Run& run, const std::string& data_dir) {
  LoadedData data = load_dataset(run.config, data_dir);
  if (hex64(data.checksum) != run.split.at("dataset_checksum").get<std::string>())
    throw StaleIndexError("dataset at " + data_dir + " differs from the one the checkpoint was trained on");
  return data;
}

// An empty `data_dir` means the dataset recorded in the run config.
inline FeatureIndex index_stage(const std::string& run_dir, const std::string& data_dir = {}) {
  const Run run = open_run(run_dir);
  const LoadedData data = load_run_dataset(run, data_dir.empty() ? data_dir_for(run.config) : data_dir);
  FeatureIndex index = build_index(run.checkpoint.network, data.split.train);
  save_index(index, (fs::path(run_dir) / kIndexFile).string());
  return index;
}

struct QueryOptions {
  std::string image_path;
  FeatureLayer layer = FeatureLayer::fc1;
  std::size_t k = 10;
  bool class_filter = true;
  bool json_lines = false;
};

inline RetrievalResult query_stage(const std::string& run_dir, const QueryOptions& q, std::ostream& out) {
  const Run run = open_run(run_dir);
  const Network& net = run.checkpoint.network;
  const FeatureIndex index =
      load_index((fs::path(run_dir) / kIndexFile).string(), network_fingerprint(net));
  GrayImage img;
  try {
    img = read_pgm(q.image_path);
  } catch (const Error& e) {
    throw InputError("cannot read query image " + q.image_path + ": " + e.what());
  }
  const Tensor t = preprocess_image(img, preprocess_options(run.config));
  const RetrievalResult res = query(index, net, t, q.layer, q.k, q.class_filter);
  const auto class_name = [&](std::size_t label) {
    const auto& names = run.split.at("class_names");
    return label < names.size() ? names[label].get<std::string>() : std::to_string(label);
  };
  const char* status = res.status == QueryStatus::ok ? "ok" : "empty-class";
  if (q.json_lines) {
    for (std::size_t r = 0; r < res.items.size(); ++r) {
      nlohmann::ordered_json j;
      j["rank"] = r + 1;
      j["source_id"] = res.items[r].source_id;
      j["distance"] = res.items[r].distance;
      j["true_label"] = res.items[r].true_label;
      j["query_predicted_class"] = res.query_predicted_label;
      j["query_predicted_name"] = class_name(res.query_predicted_label);
      j["layer"] = layer_label(res.layer_used);
      j["class_filter"] = res.class_filter_enabled;
      out << j.dump() << '\n';
    }
    if (res.items.empty()) {
      nlohmann::ordered_json j;
      j["status"] = status;
      j["query_predicted_class"] = res.query_predicted_label;
      out << j.dump() << '\n';
    }
  } else {
    out << "# predicted_class " << res.query_predicted_label << " (" << class_name(res.query_predicted_label)
        << ") layer " << layer_label(res.layer_used) << " filter " << (res.class_filter_enabled ? "on" : "off")
        << " status " << status << '\n';
    out << "rank\tsource_id\tdistance\n";
    for (std::size_t r = 0; r < res.items.size(); ++r)
      out << r + 1 << '\t' << res.items[r].source_id << '\t' << format_real(res.items[r].distance) << '\n';
  }
  return res;
}

struct MapRow {
  FeatureLayer layer;
  bool class_filter;
  double map;
  std::size_t valid_queries;
};

struct EvaluationOutcome {
  MetricsReport classification;
  std::vector<MapRow> map_table;
  std::vector<PRSeries> curves;
};

inline nlohmann::ordered_json metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  const auto& r = m.report;
  j["samples"] = m.confusion.total();
  j["accuracy"] = r.overall_accuracy;
  j["macro_accuracy"] = r.accuracy;
  j["average_precision"] = r.average_precision;
  j["average_recall"] = r.average_recall;
  j["f1"] = r.f1;
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& c = r.per_class[k];
    nlohmann::ordered_json e;
    e["class"] = m.confusion.class_names()[k];
    e["precision"] = c.precision;
    e["recall"] = c.recall;
    e["tp"] = c.tp;
    e["fp"] = c.fp;
    e["fn"] = c.fn;
    e["tn"] = c.tn;
    e["precision_undefined"] = c.precision_undefined;
    e["recall_undefined"] = c.recall_undefined;
    j["per_class"].push_back(e);
  }
  return j;
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\predicted";
  for (const auto& n : cm.class_names()) os << ',' << n;
  os << '\n';
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    os << cm.class_names()[t];
    for (std::size_t p = 0; p < cm.classes(); ++p) os << ',' << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

// Retrieval evaluation over precomputed test features for every
// (layer, filter) combination, with ranking depth `depth` (0 = all).
inline EvaluationOutcome evaluate_retrieval(const FeatureIndex& index, std::span<const Sample> queries,
                                            std::span<const Classification> features,
                                            std::size_t depth) {
  EvaluationOutcome out;
  const std::size_t k = depth ? depth : std::max<std::size_t>(1, index.size());
  for (bool filter : {true, false}) {
    for (std::size_t l = 0; l < 3; ++l) {
      const auto layer = static_cast<FeatureLayer>(l);
      std::vector<QueryEvaluation> evals;
      evals.reserve(queries.size());
      for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto res = query_features(index, features[q].fc_activations[l].values(),
                                        features[q].predicted_class, layer, k, filter);
        evals.push_back(retrieval_pr(res, queries[q].label, index.count_true_label(queries[q].label)));
      }
      std::size_t valid = 0;
      for (const auto& e : evals) valid += e.valid;
      out.map_table.push_back({layer, filter, valid ? mean_average_precision(evals) : 0.0, valid});
      out.curves.push_back({layer_label(layer), filter ? "with_class" : "without_class", average_curve(evals, k)});
    }
  }
  return out;
}

inline EvaluationOutcome evaluate_stage(const std::string& run_dir, const std::string& data_dir = {}) {
  const Run run = open_run(run_dir);
  const Network& net = run.checkpoint.network;
  const FeatureIndex index =
      load_index((fs::path(run_dir) / kIndexFile).string(), network_fingerprint(net));
  const LoadedData data = load_run_dataset(run, data_dir.empty() ? data_dir_for(run.config) : data_dir);
  const auto& test = data.split.test;

  std::vector<Classification> feats;
  std::vector<std::size_t> truth, pred;
  feats.reserve(test.size());
  for (const auto& s : test) {
    feats.push_back(forward_classify(net, s.image, Mode::eval));
    truth.push_back(s.label);
    pred.push_back(feats.back().predicted_class);
  }
  EvaluationOutcome out = evaluate_retrieval(index, test, feats, run.config.eval_depth);
  out.classification = evaluate_predictions(truth, pred, net.spec().num_classes, data.ingest.class_names);

  const fs::path dir(run_dir);
  write_text(dir / kMetricsFile, metrics_json(out.classification).dump(2) + "\n");
  write_text(dir / kConfusionFile, confusion_csv(out.classification.confusion));
  std::ostringstream map;
  map << "layer,filter_mode,map,valid_queries\n";
  for (const auto& r : out.map_table)
    map << layer_label(r.layer) << ',' << (r.class_filter ? "with_class" : "without_class") << ','
        << format_real(r.map) << ',' << r.valid_queries << '\n';
  write_text(dir / kMapTableFile, map.str());
  emit_pr_plot_data(out.curves, (dir / kPlotFile).string());
  return out;
}

}  // namespace cbmir::pipeline
