// cbmir: prepare | train | index | query | evaluate

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cbmir/pipeline.hpp"

namespace {

using namespace cbmir;
namespace pl = cbmir::pipeline;

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kInput = 2,
  kConfig = 3,
  kNumerical = 4,
  kIo = 5,
  kFormat = 6,
  kStale = 7,
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InputError*>(&e)) return kInput;
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const StaleIndexError*>(&e)) return kStale;
  if (dynamic_cast<const FormatError*>(&e)) return kFormat;
  return kOther;
}

struct TrainFlags {
  std::string config_path, data, out, init, layer;
  std::optional<std::size_t> epochs, input_size, resize, batch_size, classes, per_class, size;
  std::optional<double> lr, scale, keep_prob, train_fraction;
  std::optional<std::uint64_t> init_seed, train_seed, split_seed, synthetic_seed;
  bool synthetic = false;
};

RunConfig resolve_config(const TrainFlags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
  if (!f.data.empty()) c.dataset_path = f.data;
  if (f.synthetic) c.synthetic = true;
  if (f.classes) c.synthetic_params.classes = *f.classes;
  if (f.per_class) c.synthetic_params.per_class = *f.per_class;
  if (f.size) c.synthetic_params.size = *f.size;
  if (f.synthetic_seed) c.synthetic_params.seed = *f.synthetic_seed;
  if (!f.out.empty()) c.output_dir = f.out;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.lr) c.learning_rate = *f.lr;
  if (f.scale) c.model_scale = *f.scale;
  if (f.input_size) {
    c.input_size = *f.input_size;
    if (!f.resize) c.resize_size = default_resize_for(c.input_size);
  }
  if (f.resize) c.resize_size = *f.resize;
  if (f.keep_prob) c.keep_prob = *f.keep_prob;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.train_fraction) c.train_fraction = *f.train_fraction;
  if (!f.init.empty()) c.init = parse_init(f.init);
  if (f.init_seed) c.init_seed = *f.init_seed;
  if (f.train_seed) c.train_seed = *f.train_seed;
  if (f.split_seed) c.split_seed = *f.split_seed;
  if (!f.layer.empty()) c.layer = parse_layer(f.layer);
  c.validate();
  return c;
}

std::string map_line(const pl::MapRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s\t%s\t%.4f\t%zu", layer_label(r.layer),
                r.class_filter ? "with_class" : "without_class", r.map, r.valid_queries);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Content-based medical image retrieval with a convolutional network"};
  app.require_subcommand(1);

  // prepare
  auto* prep = app.add_subcommand("prepare", "write a directory-per-class corpus and manifest");
  bool synthetic = false, force = false;
  SyntheticParams sp;
  std::string source, prep_out;
  prep->add_flag("--synthetic", synthetic, "generate the synthetic corpus");
  prep->add_option("--classes", sp.classes, "number of classes")->capture_default_str();
  prep->add_option("--per-class", sp.per_class, "images per class")->capture_default_str();
  prep->add_option("--size", sp.size, "image side in pixels")->capture_default_str();
  prep->add_option("--seed", sp.seed, "generator seed")->capture_default_str();
  prep->add_option("--source", source, "copy PGM images from this directory-per-class tree");
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_flag("--force", force, "replace a non-empty output directory");

  // train
  auto* tr = app.add_subcommand("train", "split, train and save a checkpoint");
  TrainFlags tf;
  tr->add_option("--config", tf.config_path, "run configuration (JSON)");
  tr->add_option("--data", tf.data, "prepared dataset directory");
  tr->add_flag("--synthetic", tf.synthetic, "generate the synthetic corpus under the output directory");
  tr->add_option("--classes", tf.classes, "synthetic classes");
  tr->add_option("--per-class", tf.per_class, "synthetic images per class");
  tr->add_option("--size", tf.size, "synthetic image side");
  tr->add_option("--data-seed", tf.synthetic_seed, "synthetic generator seed");
  tr->add_option("--out", tf.out, "output directory");
  tr->add_option("--epochs", tf.epochs, "training epochs");
  tr->add_option("--lr", tf.lr, "learning rate");
  tr->add_option("--scale", tf.scale, "width multiplier in (0, 1]");
  tr->add_option("--input-size", tf.input_size, "network input side (crop)");
  tr->add_option("--resize", tf.resize, "resize side before the centre crop");
  tr->add_option("--keep-prob", tf.keep_prob, "dropout keep probability");
  tr->add_option("--batch-size", tf.batch_size, "samples per update");
  tr->add_option("--train-fraction", tf.train_fraction, "per-class train fraction");
  tr->add_option("--init", tf.init, "paper or fan_in");
  tr->add_option("--init-seed", tf.init_seed, "weight init seed");
  tr->add_option("--train-seed", tf.train_seed, "shuffle and dropout seed");
  tr->add_option("--split-seed", tf.split_seed, "train/test split seed");
  tr->add_option("--layer", tf.layer, "default retrieval layer recorded in the config");
  bool quiet = false;
  tr->add_flag("--quiet", quiet, "no per-epoch log");

  // index
  auto* ix = app.add_subcommand("index", "extract train-split features into index.bin");
  std::string run_dir, data_override;
  ix->add_option("--run", run_dir, "directory written by train")->required();
  ix->add_option("--data", data_override, "dataset directory (defaults to the one in the config)");

  // query
  auto* q = app.add_subcommand("query", "rank indexed images against a query image");
  std::string q_run, q_image, q_layer;
  std::optional<std::size_t> q_k;
  std::optional<bool> q_filter;
  bool json_lines = false;
  q->add_option("--run", q_run, "directory written by train and index")->required();
  q->add_option("image,--image", q_image, "query image (PGM)")->required();
  q->add_option("--layer", q_layer, "FCL1, FCL2 or FCL3");
  q->add_option("--k", q_k, "number of results");
  q->add_flag("--filter-class,!--no-filter-class", q_filter, "restrict to the predicted class");
  q->add_flag("--json-lines", json_lines, "one JSON object per result");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "classification report, mAP table and PR data");
  std::string ev_run, ev_data;
  ev->add_option("--run", ev_run, "directory written by train and index")->required();
  ev->add_option("--data", ev_data, "dataset directory (defaults to the one in the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*prep) {
      if (synthetic == !source.empty()) throw ConfigError("prepare needs exactly one of --synthetic or --source");
      const auto res = synthetic ? pl::prepare_synthetic(sp, prep_out, force)
                                 : pl::prepare_from_source(source, prep_out, force);
      std::cout << "wrote " << res.files << " images to " << prep_out << " checksum " << pl::hex64(res.checksum)
                << '\n';
    } else if (*tr) {
      const RunConfig cfg = resolve_config(tf);
      const auto out = pl::train_stage(cfg, quiet ? nullptr : &std::cerr);
      std::cout << "checkpoint " << (std::filesystem::path(cfg.output_dir) / pl::kCheckpointFile).string()
                << " fingerprint " << pl::hex64(out.fingerprint) << '\n';
      std::cout << "final_loss " << format_real(out.report.final_loss) << " test_accuracy "
                << format_real(out.test_metrics.report.overall_accuracy) << '\n';
    } else if (*ix) {
      const auto index = pl::index_stage(run_dir, data_override);
      std::cout << "indexed " << index.size() << " images, fingerprint " << pl::hex64(index.fingerprint()) << '\n';
    } else if (*q) {
      const RunConfig cfg = load_config((std::filesystem::path(q_run) / pl::kConfigFile).string());
      pl::QueryOptions opts;
      opts.image_path = q_image;
      opts.layer = q_layer.empty() ? cfg.layer : parse_layer(q_layer);
      opts.k = q_k.value_or(cfg.k);
      opts.class_filter = q_filter.value_or(cfg.class_filter);
      opts.json_lines = json_lines;
      pl::query_stage(q_run, opts, std::cout);
    } else if (*ev) {
      const auto out = pl::evaluate_stage(ev_run, ev_data);
      std::cout << "accuracy " << format_real(out.classification.report.overall_accuracy) << '\n';
      std::cout << "layer\tfilter_mode\tmap\tvalid_queries\n";
      for (const auto& r : out.map_table) std::cout << map_line(r) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kOk;
}
