#include "hparse/inference.hpp"

#include <algorithm>

namespace F = torch::nn::functional;

namespace hparse {

std::vector<Detection> level_detections(const LevelOutput& level, std::int64_t b, const std::vector<Id>& category_ids,
                                        Id image_id, int height, int width, int max_dets, const torch::Tensor& allowed) {
  std::vector<Detection> out;
  const auto R = level.logits.size(1), K = level.logits.size(2);
  if (R == 0 || K == 0 || max_dets <= 0) return out;
  auto probs = torch::sigmoid(level.logits[b].to(torch::kDouble));
  if (allowed.defined()) probs = probs.masked_fill(allowed.logical_not(), -1.0);
  auto flat = probs.flatten();
  auto order = std::get<1>(flat.sort(/*stable=*/true, /*dim=*/0, /*descending=*/true));
  const auto keep = std::min<std::int64_t>(max_dets, flat.numel());
  auto picked = order.slice(0, 0, keep);
  auto rows = torch::div(picked, K, "floor"), cats = picked.remainder(K);
  torch::Tensor masks;
  if (level.masks.defined()) {
    auto m = level.masks[b].index_select(0, rows).unsqueeze(1);
    masks = F::interpolate(m, F::InterpolateFuncOptions()
                                  .size(std::vector<std::int64_t>{height, width})
                                  .mode(torch::kBilinear)
                                  .align_corners(false))
                .squeeze(1)
                .gt(0)
                .to(torch::kUInt8)
                .contiguous();
  }
  auto boxes = level.boxes[b].to(torch::kDouble).contiguous();
  const auto flat_acc = flat.accessor<double, 1>();
  const auto box_acc = boxes.accessor<double, 2>();
  const auto idx_acc = picked.accessor<std::int64_t, 1>();
  for (std::int64_t i = 0; i < keep; ++i) {
    const double score = flat_acc[idx_acc[i]];
    if (score < 0) break;  // disallowed cells sort last
    const auto r = rows[i].item<std::int64_t>(), k = cats[i].item<std::int64_t>();
    const Id cat = category_ids.at(static_cast<std::size_t>(k));
    if (cat == -1) continue;  // vocabulary row absent from this dataset
    Detection d;
    d.image_id = image_id;
    d.category_id = cat;
    d.score = score;
    const double cx = box_acc[r][0] * width, cy = box_acc[r][1] * height, w = box_acc[r][2] * width,
                 h = box_acc[r][3] * height;
    d.box = clamp_box(Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, width, height);
    if (masks.defined()) {
      const auto* p = masks[i].data_ptr<std::uint8_t>();
      d.mask = Mask(height, width, std::vector<std::uint8_t>(p, p + static_cast<std::ptrdiff_t>(height) * width));
    }
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

template <typename Fn>
void for_batches(const SplitData& data, int batch_size, Fn&& fn) {
  const auto n = static_cast<std::int64_t>(data.dataset.images.size());
  for (std::int64_t s = 0; s < n; s += batch_size) fn(s, std::min<std::int64_t>(n, s + batch_size));
}

}  // namespace

PredictionSet predict(HierParser& model, const SplitData& data, const VocabMap& vm, const InferenceOptions& opt) {
  torch::NoGradGuard g;
  model->eval();
  PredictionSet p;
  for_batches(data, opt.batch_size, [&](std::int64_t s, std::int64_t e) {
    const auto out = model->forward(data.images.slice(0, s, e));
    for (std::int64_t b = 0; b < e - s; ++b) {
      const auto& im = data.dataset.images[static_cast<std::size_t>(s + b)];
      auto objs = level_detections(out.object.back(), b, vm.object_ids, im.id, im.height, im.width, opt.max_dets);
      auto parts = level_detections(out.part.back(), b, vm.part_ids, im.id, im.height, im.width, opt.max_dets);
      p.objects.insert(p.objects.end(), objs.begin(), objs.end());
      p.parts.insert(p.parts.end(), parts.begin(), parts.end());
    }
  });
  return p;
}

OracleParse oracle_obj_parse(HierParser& model, const torch::Tensor& image, const LevelTargets& objects) {
  const auto& cfg = model->cfg;
  const auto G = objects.size();
  const auto K = static_cast<std::int64_t>(model->vocab.part_names.size());
  OracleParse r;
  if (G == 0) {
    r.parts = {torch::zeros({1, 0, K}), torch::zeros({1, 0, 4}), torch::zeros({1, 0, 1, 1})};
    r.allowed = torch::zeros({0, K}, torch::kBool);
    return r;
  }
  const auto e = model->encode(image.dim() == 3 ? image.unsqueeze(0) : image);
  const auto h = e.M_p.size(2), w = e.M_p.size(3);

  // region weights at stride 4: GT mask coverage, else the GT box
  auto region = objects.masks.defined() && objects.masks.numel() ? objects.masks.clone() : torch::zeros({G, h, w});
  if (region.size(1) != h || region.size(2) != w) throw ModelError("oracle parse: object masks do not match the pixel embedding grid");
  for (std::int64_t g = 0; g < G; ++g) {
    if (objects.has_mask[g].item<bool>() && region[g].sum().item<double>() > 0) continue;
    const auto bx = objects.boxes[g];
    const auto x1 = static_cast<std::int64_t>(std::floor((bx[0] - bx[2] / 2).item<double>() * w));
    const auto x2 = static_cast<std::int64_t>(std::ceil((bx[0] + bx[2] / 2).item<double>() * w));
    const auto y1 = static_cast<std::int64_t>(std::floor((bx[1] - bx[3] / 2).item<double>() * h));
    const auto y2 = static_cast<std::int64_t>(std::ceil((bx[1] + bx[3] / 2).item<double>() * h));
    region[g].zero_();
    region[g].slice(0, std::clamp<std::int64_t>(y1, 0, h - 1), std::clamp<std::int64_t>(y2, 1, h))
        .slice(1, std::clamp<std::int64_t>(x1, 0, w - 1), std::clamp<std::int64_t>(x2, 1, w))
        .fill_(1.0);
  }
  // query: the proposal embedding where the GT category scores highest inside the region
  auto region_flat = region.flatten(1);
  auto inside = region_flat >= std::get<0>(region_flat.max(1, true)).clamp_max(0.5);
  const auto p = model->propose(e);
  auto score = p.logits[0].t().index_select(0, objects.labels).masked_fill(inside.logical_not(), -1e9);
  auto q = p.enc[0].index_select(0, score.argmax(1)).unsqueeze(0);
  auto ref = objects.boxes.unsqueeze(0).to(torch::kFloat);

  // free proposals fill the remaining query slots as decoder context
  const auto extra = std::max<std::int64_t>(cfg.N - G, 0);
  if (extra > 0) {
    const auto sel = model->select_proposals(p, h, w, static_cast<int>(extra))[0];
    q = torch::cat({q, p.enc.index_select(1, sel)}, 1);
    ref = torch::cat({ref, p.boxes.index_select(1, sel)}, 1);
  }

  std::vector<torch::Tensor> queries;
  const auto lv = model->object_decoder->forward(q, ref, e.memory, e.mem_pos, e.centers, e.M_p, model->W_proj,
                                                 model->T_obj, 0, &queries);
  r.parts = model->parse_parts(e, queries.back().slice(1, 0, G), lv.back().boxes.slice(1, 0, G)).back();

  auto parent = torch::tensor(model->vocab.part_parent, torch::kLong);  // (K)
  auto block_label = objects.labels.repeat_interleave(cfg.L);             // (G*L)
  r.allowed = block_label.unsqueeze(1).eq(parent.unsqueeze(0));
  return r;
}

PredictionSet predict_oracle(HierParser& model, const SplitData& data, const VocabMap& vm, const InferenceOptions& opt) {
  torch::NoGradGuard g;
  model->eval();
  PredictionSet p;
  for (std::size_t i = 0; i < data.dataset.images.size(); ++i) {
    const auto& im = data.dataset.images[i];
    const auto r = oracle_obj_parse(model, data.images[static_cast<std::int64_t>(i)], data.targets[i].object);
    auto parts = level_detections(r.parts, 0, vm.part_ids, im.id, im.height, im.width, opt.max_dets, r.allowed);
    p.parts.insert(p.parts.end(), parts.begin(), parts.end());
  }
  return p;
}

ModelEvaluation evaluate_model(HierParser& model, const SplitData& data, const VocabMap& vm, bool with_oracle,
                               const InferenceOptions& opt) {
  ModelEvaluation ev;
  ev.free = evaluate_predictions(predict(model, data, vm, opt), data.dataset);
  if (with_oracle) {
    ev.oracle = evaluate_predictions(predict_oracle(model, data, vm, opt), data.dataset);
    ev.oracle.object = {};
  }
  return ev;
}

nlohmann::json to_json(const ModelEvaluation& e) {
  auto oracle = to_json(e.oracle);
  oracle.erase("object");
  return {{"free", to_json(e.free)}, {"oracle_obj", oracle}};
}

}  // namespace hparse
