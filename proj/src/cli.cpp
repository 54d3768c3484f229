#include "hparse/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <map>
#include <set>

#include "hparse/dataset.hpp"
#include "hparse/inference.hpp"
#include "hparse/overlay.hpp"
#include "hparse/predictions.hpp"
#include "hparse/synthdata.hpp"
#include "hparse/training.hpp"
#include "hparse/unify.hpp"

namespace fs = std::filesystem;

namespace hparse {

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "configuration file (JSON)");
  app->add_option("--seed", c.seed, "random seed override");
  app->add_option("--out", c.out, "output directory");
  app->add_flag("--deterministic", c.deterministic, "single-threaded, bit-reproducible execution");
}

fs::path require_out(const Common& c, const char* cmd) {
  if (c.out.empty()) throw CLI::RequiredError(std::string(cmd) + ": --out");
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + c.out + ": " + ec.message());
  return c.out;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

// ---- unify

HierarchicalDataset unify_merge_parts(HierarchicalDataset d) {
  std::map<Id, const CategoryRecord*> cats;
  for (const auto& c : d.categories) cats[c.id] = &c;
  std::set<Id> ids;
  for (const auto& a : d.annotations) ids.insert(a.id);
  std::map<Id, std::vector<AnnotationRecord>> groups;
  std::vector<AnnotationRecord> rest;
  for (const auto& a : d.annotations) {
    if (a.level != Level::Part) {
      rest.push_back(a);
      continue;
    }
    if (!a.parent_annotation_id)
      throw UnifyError("merge-parts: part annotation " + std::to_string(a.id) + " has no group (parent_annotation_id)");
    groups[*a.parent_annotation_id].push_back(a);
  }
  std::vector<AnnotationRecord> out = rest;
  for (auto& [gid, parts] : groups) {
    if (ids.contains(gid)) throw UnifyError("merge-parts: group id " + std::to_string(gid) + " collides with an annotation id");
    const auto* cat = cats.at(parts.front().category_id);
    const Id obj_cat = *cat->parent_object_category_id;
    for (const auto& p : parts)
      if (*cats.at(p.category_id)->parent_object_category_id != obj_cat)
        throw UnifyError("merge-parts: group " + std::to_string(gid) + " mixes parts of different object categories");
    auto merged = merge_parts_to_object(parts, gid, obj_cat);
    out.push_back(merged.object);
    out.insert(out.end(), merged.parts.begin(), merged.parts.end());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  d.annotations = out;
  return d;
}

HierarchicalDataset unify_attach(HierarchicalDataset d) {
  std::map<Id, Id> category_map;
  for (const auto& c : d.categories)
    if (c.level == Level::Part) category_map[c.id] = *c.parent_object_category_id;
  std::vector<AnnotationRecord> parts, objects;
  for (const auto& a : d.annotations) (a.level == Level::Part ? parts : objects).push_back(a);
  auto linked = attach_object_annotations(parts, objects, category_map);
  d.annotations = objects;
  d.annotations.insert(d.annotations.end(), linked.begin(), linked.end());
  std::sort(d.annotations.begin(), d.annotations.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return d;
}

HierarchicalDataset unify_overlap(HierarchicalDataset d, double t) {
  const HierarchyThreshold th(t);
  d.categories = {{1, "object", Level::Object, std::nullopt, Split::Base}, {2, "part", Level::Part, Id{1}, Split::Base}};
  std::map<Id, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < d.annotations.size(); ++i) {
    if (!d.annotations[i].mask) throw UnifyError("overlap: annotation " + std::to_string(d.annotations[i].id) + " has no mask");
    by_image[d.annotations[i].image_id].push_back(i);
  }
  for (const auto& [img, idx] : by_image) {
    std::vector<Mask> masks;
    for (auto i : idx) masks.push_back(*d.annotations[i].mask);
    const auto nodes = build_overlap_hierarchy(masks, th);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& a = d.annotations[idx[k]];
      a.level = nodes[k].level;
      a.category_id = nodes[k].level == Level::Object ? 1 : 2;
      a.parent_annotation_id.reset();
      if (nodes[k].parent) a.parent_annotation_id = d.annotations[idx[*nodes[k].parent]].id;
    }
  }
  return d;
}

HierarchicalDataset unify_semantic(const std::vector<std::string>& inputs) {
  HierarchicalDataset d;
  std::set<int> seen;
  Id next_ann = 1;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const GrayImage g = read_pgm(inputs[i]);
    LabelMap map{g.height, g.width, std::vector<int>(g.values.begin(), g.values.end())};
    const Id image_id = static_cast<Id>(i + 1);
    d.images.push_back({image_id, g.width, g.height, fs::path(inputs[i]).filename().string()});
    for (auto& inst : semantic_to_instances(map)) {
      seen.insert(inst.category);
      AnnotationRecord a;
      a.id = next_ann++;
      a.image_id = image_id;
      a.category_id = inst.category;
      a.box = inst.box;
      a.mask = std::move(inst.mask);
      d.annotations.push_back(std::move(a));
    }
  }
  for (int c : seen) d.categories.push_back({c, "class_" + std::to_string(c), Level::Object, std::nullopt, Split::Base});
  return d;
}

// ---- eval helpers

std::string summary(const EvalReport& r, const char* tag) {
  char obj[96] = "object n/a";
  if (r.object.box.num_categories > 0)
    std::snprintf(obj, sizeof obj, "object box AP50 %.2f mask AP50 %.2f", 100 * r.object.box.ap50, 100 * r.object.mask.ap50);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %s | part box AP50 %.2f mask AP50 %.2f\n", tag, obj, 100 * r.part.box.ap50,
                100 * r.part.mask.ap50);
  return buf;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"hierarchical object and part parsing toolkit", "hparse"};
  app.require_subcommand(1);
  Common common;

  auto* unify = app.add_subcommand("unify", "build object/part links from heterogeneous annotations");
  add_common(unify, common);
  std::string unify_mode;
  std::vector<std::string> unify_inputs;
  double threshold = 0.5;
  unify->add_option("--mode", unify_mode, "merge-parts | attach | overlap | semantic")
      ->required()
      ->check(CLI::IsMember({"merge-parts", "attach", "overlap", "semantic"}));
  unify->add_option("--input", unify_inputs, "dataset JSON (label-map PGMs for semantic)")->required();
  unify->add_option("--threshold", threshold, "overlap threshold for --mode overlap");

  auto* synth = app.add_subcommand("synth", "generate the synthetic object/part corpus");
  add_common(synth, common);

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, common);
  std::string train_path, val_path;
  std::optional<int> iterations;
  std::optional<double> lr;
  train->add_option("--train", train_path, "training dataset JSON");
  train->add_option("--val", val_path, "validation dataset JSON");
  train->add_option("--iterations", iterations, "iteration count override");
  train->add_option("--lr", lr, "learning rate override");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a prediction file");
  add_common(eval, common);
  std::string dataset, checkpoint, predictions;
  bool no_oracle = false;
  eval->add_option("--dataset", dataset, "ground-truth dataset JSON")->required();
  auto* ck = eval->add_option("--checkpoint", checkpoint, "model checkpoint");
  auto* pr = eval->add_option("--predictions", predictions, "predictions JSON");
  ck->excludes(pr);
  eval->add_flag("--no-oracle", no_oracle, "skip the GT-object-conditioned part evaluation");

  auto* grad = app.add_subcommand("gradcheck", "compare loss gradients with finite differences");
  add_common(grad, common);
  std::string component = "total";
  int trials = 20;
  grad->add_option("--component", component, "linear | cls | box | mask | res | total")
      ->check(CLI::IsMember({"linear", "cls", "box", "mask", "res", "total"}));
  grad->add_option("--trials", trials, "random configurations")->check(CLI::PositiveNumber);

  auto* vis = app.add_subcommand("visualize", "draw overlays of annotations or predictions");
  add_common(vis, common);
  std::string vis_dataset, vis_predictions;
  std::vector<Id> vis_images;
  double min_score = 0.5;
  vis->add_option("--dataset", vis_dataset, "dataset JSON (images and, without --predictions, annotations)")->required();
  vis->add_option("--predictions", vis_predictions, "predictions JSON");
  vis->add_option("--image-id", vis_images, "restrict to these image ids");
  vis->add_option("--min-score", min_score, "prediction score floor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (common.deterministic) {
      torch::set_num_threads(1);
      torch::set_num_interop_threads(1);
    }

    if (unify->parsed()) {
      const fs::path dir = require_out(common, "unify");
      HierarchicalDataset result;
      if (unify_mode == "semantic") {
        result = unify_semantic(unify_inputs);
      } else {
        if (unify_inputs.size() != 1) throw CLI::ValidationError("--input", "exactly one dataset is expected");
        auto src = load_dataset(unify_inputs.front(), unify_mode != "merge-parts");
        if (unify_mode == "merge-parts") result = unify_merge_parts(std::move(src));
        if (unify_mode == "attach") result = unify_attach(std::move(src));
        if (unify_mode == "overlap") result = unify_overlap(std::move(src), threshold);
      }
      validate(result);
      save_dataset(result, dir / "hierarchy.json");
      out << "wrote " << (dir / "hierarchy.json").string() << " (" << result.annotations.size() << " annotations)\n";
    } else if (synth->parsed()) {
      const fs::path dir = require_out(common, "synth");
      SynthSpec spec;
      if (!common.config.empty()) spec = read_json(common.config).get<SynthSpec>();
      if (common.seed) spec.seed = *common.seed;
      write_corpus(generate_dataset(spec), spec, dir);
      out << "wrote " << spec.train_size << " train / " << spec.val_size << " val images to " << dir.string() << "\n";
    } else if (train->parsed()) {
      TrainConfig cfg;
      if (!common.config.empty()) cfg = load_train_config(common.config);
      if (common.seed) cfg.seed = *common.seed;
      if (!common.out.empty()) cfg.out_dir = common.out;
      if (!train_path.empty()) cfg.train_path = train_path;
      if (!val_path.empty()) cfg.val_path = val_path;
      if (iterations) cfg.iterations = *iterations;
      if (lr) cfg.lr = *lr;
      if (cfg.train_path.empty()) throw CLI::ValidationError("--train", "no training dataset given");
      std::optional<SplitData> val;
      VocabMap vm;
      if (!cfg.val_path.empty()) {
        const auto base_vocab = vocabulary_from(load_dataset(cfg.train_path)).vocab;
        vm = align_vocabulary(base_vocab, load_dataset(cfg.val_path));
        val = load_split(cfg.val_path, vm);
      }
      EvalHook hook;
      std::optional<ModelEvaluation> last;
      if (val)
        hook = [&](HierParser& m, int) {
          last = evaluate_model(m, *val, vm);
          return to_json(*last);
        };
      const auto r = train_model(cfg, hook);
      out << "trained " << cfg.iterations << " iterations in " << r.seconds << " s; checkpoint "
          << r.checkpoint.string() << "\n";
      if (last) {
        write_text(fs::path(cfg.out_dir) / "eval.json", to_json(*last).dump(2) + "\n");
        out << summary(last->free, "free  ") << summary(last->oracle, "oracle");
      }
    } else if (eval->parsed()) {
      const fs::path dir = require_out(common, "eval");
      if (checkpoint.empty() == predictions.empty())
        throw CLI::ValidationError("eval", "give exactly one of --checkpoint and --predictions");
      nlohmann::json report;
      std::string table;
      if (!predictions.empty()) {
        const auto gt = load_dataset(dataset);
        const auto r = evaluate_predictions(load_predictions(predictions), gt);
        report = to_json(r);
        table = to_table(r);
        out << summary(r, "predictions");
      } else {
        auto loaded = load_checkpoint(checkpoint);
        const auto vm = align_vocabulary(loaded.model->vocab, load_dataset(dataset));
        const auto data = load_split(dataset, vm);
        const auto r = evaluate_model(loaded.model, data, vm, !no_oracle);
        report = to_json(r);
        if (no_oracle) report.erase("oracle_obj");
        table = to_table(r.free);
        out << summary(r.free, "free  ");
        if (!no_oracle) out << summary(r.oracle, "oracle");
        save_predictions(predict(loaded.model, data, vm), dir / "predictions.json");
      }
      write_text(dir / "report.json", report.dump(2) + "\n");
      write_text(dir / "report.csv", table);
    } else if (grad->parsed()) {
      const auto rep = gradcheck(component, trials, common.seed.value_or(0));
      const nlohmann::json j = rep;
      out << j.dump() << "\n";
      if (!common.out.empty()) write_text(require_out(common, "gradcheck") / "gradcheck.json", j.dump(2) + "\n");
    } else if (vis->parsed()) {
      const fs::path dir = require_out(common, "visualize");
      const auto ds = load_dataset(vis_dataset);
      std::optional<PredictionSet> preds;
      if (!vis_predictions.empty()) preds = load_predictions(vis_predictions);
      const std::set<Id> only(vis_images.begin(), vis_images.end());
      int written = 0;
      for (const auto& im : ds.images) {
        if (!only.empty() && !only.contains(im.id)) continue;
        std::vector<Detection> objs, parts;
        if (preds) {
          for (const auto& d : preds->objects)
            if (d.image_id == im.id && d.score >= min_score) objs.push_back(d);
          for (const auto& d : preds->parts)
            if (d.image_id == im.id && d.score >= min_score) parts.push_back(d);
        } else {
          for (const auto& a : ds.annotations)
            if (a.image_id == im.id) (a.level == Level::Object ? objs : parts).push_back(as_detection(a));
        }
        const Image base = read_ppm(fs::path(vis_dataset).parent_path() / im.file_name);
        render_overlays(base, objs, parts, dir / (std::to_string(im.id) + ".ppm"));
        ++written;
      }
      out << "wrote " << written << " overlays to " << dir.string() << "\n";
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace hparse
