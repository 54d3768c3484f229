#include "hparse/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace hparse {

std::vector<int> TrainConfig::resolved_milestones() const {
  if (!milestones.empty()) return milestones;
  std::vector<int> out;
  for (double f : milestone_fractions) {
    const int m = static_cast<int>(std::lround(f * iterations));
    if (m > 0 && m < iterations && (out.empty() || m > out.back())) out.push_back(m);
  }
  return out;
}

void TrainConfig::check() const {
  model.check();
  if (iterations < 0 || batch_size < 1 || log_every < 1 || eval_every < 0) throw TrainingError("train config: invalid counts");
  if (!(lr > 0) || weight_decay < 0 || lr_decay <= 0 || grad_clip < 0) throw TrainingError("train config: invalid optimizer settings");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] <= 0 || milestones[i] >= iterations) throw TrainingError("train config: milestones must lie inside (0, iterations)");
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw TrainingError("train config: milestones must be strictly increasing");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"weights", c.weights},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"lr_decay", c.lr_decay},
       {"milestones", c.milestones},
       {"milestone_fractions", c.milestone_fractions},
       {"batch_size", c.batch_size},
       {"iterations", c.iterations},
       {"grad_clip", c.grad_clip},
       {"seed", c.seed},
       {"train_path", c.train_path},
       {"val_path", c.val_path},
       {"embeddings", c.embeddings},
       {"out_dir", c.out_dir},
       {"log_every", c.log_every},
       {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  if (j.contains("weights")) c.weights = j["weights"].get<LossWeights>();
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.milestones = j.value("milestones", c.milestones);
  c.milestone_fractions = j.value("milestone_fractions", c.milestone_fractions);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iterations = j.value("iterations", c.iterations);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.train_path = j.value("train_path", c.train_path);
  c.val_path = j.value("val_path", c.val_path);
  c.embeddings = j.value("embeddings", c.embeddings);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.log_every = j.value("log_every", c.log_every);
  c.eval_every = j.value("eval_every", c.eval_every);
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw TrainingError("cannot open config " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    TrainConfig c = j.get<TrainConfig>();
    // relative data paths resolve against the config file
    for (std::string* p : {&c.train_path, &c.val_path, &c.embeddings})
      if (!p->empty() && fs::path(*p).is_relative()) *p = (path.parent_path() / *p).lexically_normal().string();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError("malformed config " + path.string() + ": " + e.what());
  }
}

VocabMap vocabulary_from(const HierarchicalDataset& d) {
  VocabMap vm;
  auto cats = d.categories;
  std::sort(cats.begin(), cats.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& c : cats)
    if (c.level == Level::Object) {
      vm.object_index[c.id] = static_cast<int>(vm.object_ids.size());
      vm.object_ids.push_back(c.id);
      vm.vocab.object_names.push_back(c.name);
    }
  for (const auto& c : cats)
    if (c.level == Level::Part) {
      vm.part_index[c.id] = static_cast<int>(vm.part_ids.size());
      vm.part_ids.push_back(c.id);
      vm.vocab.part_names.push_back(c.name);
      vm.vocab.part_parent.push_back(vm.object_index.at(*c.parent_object_category_id));
    }
  return vm;
}

VocabMap align_vocabulary(const Vocabulary& vocab, const HierarchicalDataset& d) {
  VocabMap vm;
  vm.vocab = vocab;
  vm.object_ids.assign(vocab.object_names.size(), -1);
  vm.part_ids.assign(vocab.part_names.size(), -1);
  for (const auto& c : d.categories) {
    const auto& names = c.level == Level::Object ? vocab.object_names : vocab.part_names;
    const auto it = std::find(names.begin(), names.end(), c.name);
    if (it == names.end()) throw TrainingError("category '" + c.name + "' is not in the model vocabulary");
    const int idx = static_cast<int>(it - names.begin());
    (c.level == Level::Object ? vm.object_index : vm.part_index)[c.id] = idx;
    (c.level == Level::Object ? vm.object_ids : vm.part_ids)[static_cast<std::size_t>(idx)] = c.id;
  }
  return vm;
}

torch::Tensor image_to_tensor(const Image& img) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(img.rgb.data()), {img.height, img.width, 3}, torch::kUInt8);
  return (t.permute({2, 0, 1}).to(torch::kFloat) / 255.0 - 0.5) / 0.25;
}

LevelTargets level_targets(const std::vector<const AnnotationRecord*>& anns, const std::map<Id, int>& index, int H,
                           int W) {
  LevelTargets t;
  const auto n = static_cast<std::int64_t>(anns.size());
  std::vector<std::int64_t> labels;
  std::vector<float> boxes;
  std::vector<std::uint8_t> has_mask;
  auto masks = torch::zeros({n, H / 4, W / 4});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& a = *anns[static_cast<std::size_t>(i)];
    const auto it = index.find(a.category_id);
    if (it == index.end()) throw TrainingError("annotation " + std::to_string(a.id) + " has a category outside the vocabulary");
    labels.push_back(it->second);
    boxes.insert(boxes.end(), {static_cast<float>((a.box.x1 + a.box.x2) / 2 / W), static_cast<float>((a.box.y1 + a.box.y2) / 2 / H),
                               static_cast<float>(a.box.width() / W), static_cast<float>(a.box.height() / H)});
    has_mask.push_back(a.mask.has_value());
    if (a.mask) {
      auto full = torch::from_blob(const_cast<std::uint8_t*>(a.mask->bits().data()), {1, H, W}, torch::kUInt8).to(torch::kFloat);
      masks[i] = torch::avg_pool2d(full, {4, 4})[0];
    }
  }
  t.labels = torch::tensor(labels, torch::kLong);
  t.boxes = torch::tensor(boxes).view({n, 4});
  t.masks = masks;
  t.has_mask = torch::tensor(std::vector<std::int64_t>(has_mask.begin(), has_mask.end()), torch::kLong).to(torch::kBool);
  return t;
}

SplitData load_split(const fs::path& dataset_path, const VocabMap& vm) {
  SplitData s;
  s.dataset = load_dataset(dataset_path);
  const fs::path base = dataset_path.parent_path();
  std::vector<torch::Tensor> images;
  std::map<Id, std::vector<const AnnotationRecord*>> objects, parts;
  for (const auto& a : s.dataset.annotations) (a.level == Level::Object ? objects : parts)[a.image_id].push_back(&a);
  for (const auto& im : s.dataset.images) {
    const Image img = read_ppm(base / im.file_name);
    if (img.width != im.width || img.height != im.height) throw TrainingError("image " + im.file_name + " does not match its record size");
    images.push_back(image_to_tensor(img));
    s.targets.push_back({level_targets(objects[im.id], vm.object_index, im.height, im.width),
                         level_targets(parts[im.id], vm.part_index, im.height, im.width)});
  }
  s.images = images.empty() ? torch::zeros({0, 3, 32, 32}) : torch::stack(images);
  return s;
}

HierParser build_model(const ModelConfig& cfg, const Vocabulary& vocab, const std::string& embeddings) {
  std::optional<fs::path> overrides;
  if (!embeddings.empty()) overrides = embeddings;
  return HierParser(cfg, vocab, embed_categories(vocab.object_names, cfg.D, cfg.seed, overrides),
                    embed_categories(vocab.part_names, cfg.D, cfg.seed, overrides));
}

void save_checkpoint(HierParser& model, const nlohmann::json& train_config, const fs::path& path) {
  torch::serialize::OutputArchive ar;
  for (const auto& p : model->named_parameters()) ar.write(p.key(), p.value());
  for (const auto& b : model->named_buffers()) ar.write(b.key(), b.value(), true);
  const nlohmann::json meta = {{"model", model->cfg}, {"vocab", model->vocab}, {"train", train_config}};
  ar.write("meta", c10::IValue(meta.dump()));
  try {
    ar.save_to(path.string());
  } catch (const c10::Error& e) {
    throw TrainingError("cannot write checkpoint " + path.string());
  }
}

LoadedModel load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw TrainingError("checkpoint " + path.string() + " does not exist");
  torch::serialize::InputArchive ar;
  ar.load_from(path.string());
  c10::IValue meta_v;
  ar.read("meta", meta_v);
  const auto meta = nlohmann::json::parse(meta_v.toStringRef());
  const auto cfg = meta.at("model").get<ModelConfig>();
  const auto vocab = meta.at("vocab").get<Vocabulary>();
  HierParser m(cfg, vocab, torch::zeros({static_cast<std::int64_t>(vocab.object_names.size()), cfg.D}),
               torch::zeros({static_cast<std::int64_t>(vocab.part_names.size()), cfg.D}));
  torch::NoGradGuard g;
  for (auto& p : m->named_parameters()) {
    torch::Tensor t;
    ar.read(p.key(), t);
    p.value().copy_(t);
  }
  for (auto& b : m->named_buffers()) {
    torch::Tensor t;
    ar.read(b.key(), t, true);
    b.value().copy_(t);
  }
  return {m, meta.value("train", nlohmann::json::object())};
}

MetricsLog::MetricsLog(const fs::path& path) : out_(path), start_(std::chrono::steady_clock::now()) {
  if (!out_) throw TrainingError("cannot write metrics log " + path.string());
}

void MetricsLog::log_step(int iteration, double lr, const LossBreakdown& b, double tensor_total) {
  if (iteration <= last_step_) throw TrainingError("metrics log: step iterations must increase");
  last_step_ = iteration;
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  nlohmann::json j = {{"type", "step"}, {"iter", iteration}, {"time", t}, {"lr", lr}, {"loss", b}, {"autograd_total", tensor_total}};
  out_ << j.dump() << "\n";
  out_.flush();
  steps_.emplace_back(iteration, b);
}

void MetricsLog::log_eval(int iteration, const nlohmann::json& report) {
  if (iteration <= last_eval_) throw TrainingError("metrics log: eval iterations must increase");
  last_eval_ = iteration;
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  out_ << nlohmann::json{{"type", "eval"}, {"iter", iteration}, {"time", t}, {"report", report}}.dump() << "\n";
  out_.flush();
}

std::vector<std::pair<int, LossBreakdown>> read_metrics_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw TrainingError("cannot read metrics log " + path.string());
  std::vector<std::pair<int, LossBreakdown>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("type") != "step") continue;
    const auto& l = j.at("loss");
    LossBreakdown b{l.at("cls_obj"), l.at("cls_part"), l.at("box_obj"), l.at("box_part"),
                    l.at("mask_obj"), l.at("mask_part"), l.at("res"), l.at("total")};
    out.emplace_back(j.at("iter").get<int>(), b);
  }
  return out;
}

namespace {

void check_finite(const LossBreakdown& b, int iteration) {
  const std::pair<const char*, double> parts[] = {{"L_cls^obj", b.cls_obj},   {"L_cls^part", b.cls_part},
                                                  {"L_box^obj", b.box_obj},   {"L_box^part", b.box_part},
                                                  {"L_mask^obj", b.mask_obj}, {"L_mask^part", b.mask_part},
                                                  {"L_res", b.res}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v))
      throw TrainingError(std::string("non-finite loss component ") + name + " at iteration " + std::to_string(iteration));
}

}  // namespace

TrainResult train_model(const TrainConfig& cfg, const EvalHook& eval) {
  cfg.check();
  const auto start = std::chrono::steady_clock::now();
  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir);
  torch::manual_seed(cfg.seed);
  const auto train_ds = load_dataset(cfg.train_path);
  const VocabMap vm = vocabulary_from(train_ds);
  const SplitData data = load_split(cfg.train_path, vm);
  if (data.dataset.images.empty() && cfg.iterations > 0) throw TrainingError("training split has no images");

  ModelConfig mc = cfg.model;
  HierParser model = build_model(mc, vm.vocab, cfg.embeddings);
  TrainConfig resolved = cfg;
  resolved.milestones = cfg.resolved_milestones();
  const nlohmann::json resolved_json = resolved;
  std::ofstream(out_dir / "config.json") << resolved_json.dump(2) << "\n";

  TrainResult result;
  result.metrics = out_dir / "metrics.jsonl";
  MetricsLog log(result.metrics);
  torch::optim::AdamW opt(model->parameters(), torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));
  double lr = cfg.lr;
  const std::set<int> milestones(resolved.milestones.begin(), resolved.milestones.end());

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::int64_t> order(data.dataset.images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  model->train();
  for (int it = 1; it <= cfg.iterations; ++it) {
    std::vector<std::int64_t> batch;
    while (static_cast<int>(batch.size()) < cfg.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::vector<ImageTargets> targets;
    for (auto i : batch) targets.push_back(data.targets[static_cast<std::size_t>(i)]);
    const auto out = model->forward(data.images.index_select(0, torch::tensor(batch, torch::kLong)));
    const LossResult r = compute_losses(out, targets, cfg.weights);
    check_finite(r.values, it);
    auto total = total_loss(r.terms, cfg.weights);
    opt.zero_grad();
    total.backward();
    if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.grad_clip);
    opt.step();
    if (it % cfg.log_every == 0 || it == 1) log.log_step(it, lr, r.values, total.item<double>());
    if (milestones.contains(it)) {
      lr *= cfg.lr_decay;
      for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
      save_checkpoint(model, resolved_json, out_dir / ("checkpoint_" + std::to_string(it) + ".pt"));
    }
    if (eval && cfg.eval_every > 0 && it % cfg.eval_every == 0 && it != cfg.iterations) {
      log.log_eval(it, eval(model, it));
      model->train();
    }
  }
  result.checkpoint = out_dir / "model.pt";
  save_checkpoint(model, resolved_json, result.checkpoint);
  if (eval) log.log_eval(cfg.iterations, eval(model, cfg.iterations));
  result.steps = log.steps();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void to_json(nlohmann::json& j, const GradcheckReport& r) {
  j = {{"component", r.component}, {"trials", r.trials}, {"resampled", r.resampled}, {"max_rel_error", r.max_rel_error}};
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

torch::Tensor dbl(const std::vector<double>& v) { return torch::tensor(v, torch::kDouble); }

/// xyxy pair in strict partial overlap, every compared coordinate pair separated.
std::optional<std::pair<std::array<double, 4>, std::array<double, 4>>> partial_overlap_pair(Rng& rng) {
  const double sep = 0.02;
  std::array<double, 4> a{}, b{};
  for (auto* box : {&a, &b}) {
    const double cx = uniform(rng, 0.3, 0.7), cy = uniform(rng, 0.3, 0.7), w = uniform(rng, 0.1, 0.4), h = uniform(rng, 0.1, 0.4);
    *box = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k)
      if ((i % 2) == (k % 2) && std::abs(a[i] - b[k]) < sep) return std::nullopt;
  const double iw = std::min(a[2], b[2]) - std::max(a[0], b[0]), ih = std::min(a[3], b[3]) - std::max(a[1], b[1]);
  if (iw < sep || ih < sep) return std::nullopt;
  const bool b_in_a = a[0] <= b[0] && a[1] <= b[1] && b[2] <= a[2] && b[3] <= a[3];
  const bool a_in_b = b[0] <= a[0] && b[1] <= a[1] && a[2] <= b[2] && a[3] <= b[3];
  if (b_in_a || a_in_b) return std::nullopt;
  // L1 in cxcywh is kinked where a coordinate difference crosses zero
  const double da[4] = {(a[0] + a[2]) / 2 - (b[0] + b[2]) / 2, (a[1] + a[3]) / 2 - (b[1] + b[3]) / 2,
                        (a[2] - a[0]) - (b[2] - b[0]), (a[3] - a[1]) - (b[3] - b[1])};
  for (double d : da)
    if (std::abs(d) < sep) return std::nullopt;
  return std::make_pair(a, b);
}

struct Problem {
  std::vector<torch::Tensor> inputs;  // leaves the gradient is taken against
  std::function<torch::Tensor(const std::vector<torch::Tensor>&)> loss;
};

constexpr int kMaxRetries = 1000;

/// n box pairs, each redrawn until non-degenerate (bounded).
Problem sample_boxes(Rng& rng, int n, bool restriction, int& resampled) {
  std::vector<double> p, q;
  for (int i = 0; i < n; ++i) {
    auto pair = partial_overlap_pair(rng);
    for (int attempt = 0; !pair; ++attempt) {
      if (attempt == kMaxRetries) throw TrainingError("gradcheck: could not draw a non-degenerate box pair");
      ++resampled;
      pair = partial_overlap_pair(rng);
    }
    auto [a, b] = *pair;
    for (auto* v : {&p, &q}) {
      const auto& box = v == &p ? a : b;
      v->insert(v->end(), {(box[0] + box[2]) / 2, (box[1] + box[3]) / 2, box[2] - box[0], box[3] - box[1]});
    }
  }
  Problem pr;
  pr.inputs = {dbl(p).view({n, 4}), dbl(q).view({n, 4})};
  if (restriction)
    pr.loss = [](const auto& x) { return restriction_loss(x[0], x[1]); };
  else
    pr.loss = [n](const auto& x) { return box_loss(x[0], x[1], n); };
  return pr;
}

Problem sample_cls(Rng& rng) {
  const int R = 5, K = 3;
  std::normal_distribution<double> normal(0.0, 1.5);
  std::vector<double> logits(R * K), targets(R * K, 0.0);
  for (auto& v : logits) v = normal(rng);
  for (int r = 0; r < 2; ++r) targets[static_cast<std::size_t>(r * K + static_cast<int>(rng() % K))] = 1.0;
  auto t = dbl(targets).view({R, K});
  return {{dbl(logits).view({R, K})}, [t](const auto& x) { return focal_cls_loss(x[0], t, 2); }};
}

Problem sample_mask(Rng& rng) {
  const int n = 2, h = 6, w = 6;
  std::normal_distribution<double> normal(0.0, 2.0);
  std::vector<double> logits(n * h * w), targets(n * h * w);
  for (auto& v : logits) v = normal(rng);
  for (auto& v : targets) v = static_cast<double>(rng() % 2);
  auto t = dbl(targets).view({n, h, w});
  return {{dbl(logits).view({n, h, w})}, [t, n](const auto& x) { return mask_loss(x[0], t, n); }};
}

/// ||g_autograd - g_fd|| / max(||g_autograd||, ||g_fd||).
double relative_error(const Problem& pr) {
  std::vector<torch::Tensor> leaves;
  for (const auto& x : pr.inputs) leaves.push_back(x.clone().set_requires_grad(true));
  auto loss = pr.loss(leaves);
  auto grads = torch::autograd::grad({loss}, leaves);
  const double h = 1e-4;
  double diff2 = 0, a2 = 0, n2 = 0;
  torch::NoGradGuard g;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto base = pr.inputs[k].contiguous();
    auto flat = base.view(-1);
    auto ga = grads[k].contiguous().view(-1);
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      auto plus = pr.inputs;
      auto minus = pr.inputs;
      plus[k] = base.clone();
      minus[k] = base.clone();
      plus[k].view(-1)[i] += h;
      minus[k].view(-1)[i] -= h;
      const double fd = (pr.loss(plus).item<double>() - pr.loss(minus).item<double>()) / (2 * h);
      const double an = ga[i].item<double>();
      diff2 += (an - fd) * (an - fd);
      a2 += an * an;
      n2 += fd * fd;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return std::sqrt(diff2) / denom;
}

}  // namespace

GradcheckReport gradcheck(const std::string& component, int trials, std::uint64_t seed) {
  static const std::set<std::string> known = {"linear", "cls", "box", "mask", "res", "total"};
  if (!known.contains(component)) throw TrainingError("gradcheck: unknown component '" + component + "'");
  if (trials < 1) throw TrainingError("gradcheck: trials must be positive");
  GradcheckReport rep{component, trials, 0, 0.0};
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    std::optional<Problem> pr;
    if (component == "linear") {
      std::vector<double> c(8), x(8);
      for (auto& v : c) v = uniform(rng, -1, 1);
      for (auto& v : x) v = uniform(rng, -1, 1);
      auto ct = dbl(c);
      pr = Problem{{dbl(x)}, [ct](const auto& in) { return (ct * in[0]).sum(); }};
    } else if (component == "cls") {
      pr = sample_cls(rng);
    } else if (component == "mask") {
      pr = sample_mask(rng);
    } else if (component == "box") {
      pr = sample_boxes(rng, 3, false, rep.resampled);
    } else if (component == "res") {
      pr = sample_boxes(rng, 3, true, rep.resampled);
    } else {
      std::vector<Problem> owned = {sample_cls(rng),  sample_cls(rng),
                                    sample_boxes(rng, 3, false, rep.resampled), sample_boxes(rng, 2, false, rep.resampled),
                                    sample_mask(rng), sample_mask(rng),
                                    sample_boxes(rng, 3, true, rep.resampled)};
      Problem total;
      std::vector<std::size_t> offsets;
      for (const auto& p : owned) {
        offsets.push_back(total.inputs.size());
        total.inputs.insert(total.inputs.end(), p.inputs.begin(), p.inputs.end());
      }
      total.loss = [owned, offsets](const std::vector<torch::Tensor>& x) {
        auto sub = [&](std::size_t k) {
          return owned[k].loss({x.begin() + static_cast<std::ptrdiff_t>(offsets[k]),
                                x.begin() + static_cast<std::ptrdiff_t>(offsets[k] + owned[k].inputs.size())});
        };
        return total_loss(LossTerms{sub(0), sub(1), sub(2), sub(3), sub(4), sub(5), sub(6)}, LossWeights{});
      };
      pr = total;
    }
    rep.max_rel_error = std::max(rep.max_rel_error, relative_error(*pr));
  }
  return rep;
}

}  // namespace hparse
