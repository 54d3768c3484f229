#include "hparse/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace F = torch::nn::functional;

namespace hparse {

void ModelConfig::check() const {
  if (C < 1 || N < 1 || L < 1 || M < 1 || K_top < 1 || D < 1 || decoder_layers < 1 || heads < 1 || ffn < 1)
    throw ModelError("model config: all sizes must be at least 1");
  if (K_top > N) throw ModelError("model config: K_top must not exceed N");
  if (C % heads != 0) throw ModelError("model config: C must be divisible by heads");
  if (C % 8 != 0) throw ModelError("model config: C must be a multiple of 8 (group normalization)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"C", c.C},   {"N", c.N},     {"L", c.L},     {"M", c.M},
       {"K_top", c.K_top}, {"D", c.D}, {"decoder_layers", c.decoder_layers}, {"heads", c.heads},
       {"ffn", c.ffn}, {"early_fusion", c.early_fusion}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.C = j.value("C", c.C);
  c.N = j.value("N", c.N);
  c.L = j.value("L", c.L);
  c.M = j.value("M", c.M);
  c.K_top = j.value("K_top", c.K_top);
  c.D = j.value("D", c.D);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.early_fusion = j.value("early_fusion", c.early_fusion);
  c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const Vocabulary& v) {
  j = {{"object_names", v.object_names}, {"part_names", v.part_names}, {"part_parent", v.part_parent}};
}

void from_json(const nlohmann::json& j, Vocabulary& v) {
  v.object_names = j.at("object_names").get<std::vector<std::string>>();
  v.part_names = j.at("part_names").get<std::vector<std::string>>();
  v.part_parent = j.at("part_parent").get<std::vector<int>>();
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

torch::Tensor embed_categories(const std::vector<std::string>& names, int D, std::uint64_t seed,
                               const std::optional<std::filesystem::path>& overrides) {
  if (names.empty()) throw ModelError("embed_categories: empty name list");
  if (D < 1) throw ModelError("embed_categories: D must be positive");
  nlohmann::json table = nlohmann::json::object();
  if (overrides) {
    std::ifstream in(*overrides);
    if (!in) throw ModelError("embed_categories: cannot open " + overrides->string());
    try {
      table = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ModelError("embed_categories: malformed override file: " + std::string(e.what()));
    }
  }
  auto T = torch::empty({static_cast<std::int64_t>(names.size()), D}, torch::kFloat);
  auto acc = T.accessor<float, 2>();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (table.contains(names[i])) {
      const auto row = table[names[i]].get<std::vector<double>>();
      if (row.size() != static_cast<std::size_t>(D))
        throw ModelError("embed_categories: override for '" + names[i] + "' has width " + std::to_string(row.size()) +
                         ", expected " + std::to_string(D));
      for (int d = 0; d < D; ++d) acc[i][d] = static_cast<float>(row[d]);
      continue;
    }
    const std::uint64_t h = fnv1a(names[i]);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(D);
    double norm = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (int d = 0; d < D; ++d) acc[i][d] = static_cast<float>(v[d] / norm);
  }
  return T;
}

torch::Tensor similarity_scores(const torch::Tensor& q, const torch::Tensor& W_proj, const torch::Tensor& T) {
  if (W_proj.dim() != 2 || T.dim() != 2 || q.size(-1) != W_proj.size(0) || W_proj.size(1) != T.size(1))
    throw ModelError("similarity_scores: dimension mismatch (q " + std::to_string(q.size(-1)) + ", W " +
                     std::to_string(W_proj.size(0)) + "x" + std::to_string(W_proj.size(1)) + ", T width " +
                     std::to_string(T.dim() == 2 ? T.size(1) : -1) + ")");
  return torch::matmul(torch::matmul(q, W_proj), T.t());
}

torch::Tensor dot_masks(const torch::Tensor& embeddings, const torch::Tensor& M_p) {
  if (embeddings.size(-1) != M_p.size(-3)) throw ModelError("dot_masks: channel mismatch");
  const auto h = M_p.size(-2), w = M_p.size(-1);
  auto flat = M_p.flatten(-2);  // (..., C, hw)
  return torch::matmul(embeddings, flat).unflatten(-1, {h, w});
}

TopK select_topk(const torch::Tensor& scores, int k) {
  if (scores.dim() != 2) throw ModelError("select_topk: expected a rows x categories matrix");
  const auto rows = scores.size(0);
  if (k < 0 || k > rows) throw ModelError("select_topk: k = " + std::to_string(k) + " exceeds " + std::to_string(rows) + " rows");
  auto best = scores.size(1) > 0 ? std::get<0>(scores.detach().to(torch::kCPU, torch::kDouble).max(1))
                                 : torch::zeros({rows}, torch::kDouble);
  auto acc = best.accessor<double, 1>();
  std::vector<std::int64_t> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) { return acc[a] > acc[b]; });
  order.resize(static_cast<std::size_t>(k));
  return {order};
}

torch::Tensor sine_embed(const torch::Tensor& coords, int feats) {
  auto dim_t = torch::arange(feats, coords.options());
  dim_t = torch::pow(10000.0, 2.0 * torch::floor(dim_t / 2) / feats);
  auto x = coords.unsqueeze(-1) * (2.0 * M_PI) / dim_t;  // (..., n, feats)
  auto even = x.index({"...", torch::indexing::Slice(0, torch::indexing::None, 2)}).sin();
  auto odd = x.index({"...", torch::indexing::Slice(1, torch::indexing::None, 2)}).cos();
  return torch::stack({even, odd}, -1).flatten(-2).flatten(-2);
}

torch::Tensor inverse_sigmoid(const torch::Tensor& x, double eps) {
  auto c = x.clamp(0.0, 1.0);
  return torch::log(c.clamp_min(eps) / (1 - c).clamp_min(eps));
}

MlpImpl::MlpImpl(int in, int hidden, int out, int n) {
  for (int i = 0; i < n; ++i) {
    const int a = i == 0 ? in : hidden, b = i == n - 1 ? out : hidden;
    layers.push_back(register_module("l" + std::to_string(i), torch::nn::Linear(a, b)));
  }
}

torch::Tensor MlpImpl::forward(torch::Tensor x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i]->forward(x);
    if (i + 1 < layers.size()) x = torch::relu(x);
  }
  return x;
}

AttentionImpl::AttentionImpl(int dim, int h) : heads(h) {
  wq = register_module("wq", torch::nn::Linear(dim, dim));
  wk = register_module("wk", torch::nn::Linear(dim, dim));
  wv = register_module("wv", torch::nn::Linear(dim, dim));
  wo = register_module("wo", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                                     const std::optional<torch::Tensor>& bias) {
  const auto B = q.size(0), n = q.size(1), T = k.size(1), C = q.size(2), d = C / heads;
  auto Q = (wq->forward(q) / std::sqrt(static_cast<double>(d))).view({B, n, heads, d}).transpose(1, 2);
  auto Kt = wk->forward(k).view({B, T, heads, d}).permute({0, 2, 3, 1}).contiguous();
  auto V = wv->forward(v).view({B, T, heads, d}).transpose(1, 2);
  auto logits = torch::matmul(Q, Kt);
  if (bias) logits = logits + bias->unsqueeze(1);
  auto out = torch::matmul(torch::softmax(logits, -1), V).transpose(1, 2).reshape({B, n, C});
  return wo->forward(out);
}

namespace {

torch::nn::Conv2d conv(int in, int out, int k, int stride) {
  auto o = torch::nn::Conv2dOptions(in, out, k).stride(stride);
  if (k > 1) o.padding(k / 2).padding_mode(torch::kReplicate);
  return torch::nn::Conv2d(o);
}

torch::nn::Sequential conv_block(int in, int out, int stride) {
  return torch::nn::Sequential(conv(in, out, 3, stride), torch::nn::GroupNorm(torch::nn::GroupNormOptions(8, out)),
                               torch::nn::ReLU(), conv(out, out, 3, 1),
                               torch::nn::GroupNorm(torch::nn::GroupNormOptions(8, out)), torch::nn::ReLU());
}

torch::Tensor resize_to(const torch::Tensor& x, const torch::Tensor& like) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{like.size(-2), like.size(-1)})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

ImageEncoderImpl::ImageEncoderImpl(const ModelConfig& cfg) {
  const int C = cfg.C, half = std::max(8, C / 2);
  stem = register_module("stem", torch::nn::Sequential(conv(3, half, 3, 2),
                                                       torch::nn::GroupNorm(torch::nn::GroupNormOptions(8, half)),
                                                       torch::nn::ReLU()));
  for (int s = 0; s < 4; ++s) {
    stages.push_back(register_module("stage" + std::to_string(s + 2), conv_block(s == 0 ? half : C, C, 2)));
    lateral.push_back(register_module("lateral" + std::to_string(s + 2), conv(C, C, 1, 1)));
    smooth.push_back(register_module("smooth" + std::to_string(s + 2), conv(C, C, 3, 1)));
  }
  mp_out = register_module("mp_out", conv(C, C, 1, 1));
}

std::pair<BackboneFeatures, torch::Tensor> ImageEncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw ModelError("encode_image: expected (B, 3, H, W) images");
  if (images.size(2) % 32 != 0 || images.size(3) % 32 != 0)
    throw ModelError("encode_image: H and W must be divisible by 32 (got " + std::to_string(images.size(2)) + "x" +
                     std::to_string(images.size(3)) + ")");
  std::vector<torch::Tensor> c(4);
  auto x = stem->forward(images);
  for (int s = 0; s < 4; ++s) c[s] = x = stages[s]->forward(x);
  std::vector<torch::Tensor> p(4);
  p[3] = lateral[3]->forward(c[3]);
  for (int s = 2; s >= 0; --s) p[s] = lateral[s]->forward(c[s]) + resize_to(p[s + 1], c[s]);
  BackboneFeatures f;
  for (int s = 0; s < 4; ++s) f.scales.push_back(smooth[s]->forward(p[s]));
  auto sum = f.scales[0];
  for (int s = 1; s < 4; ++s) sum = sum + resize_to(f.scales[s], f.scales[0]);
  return {f, mp_out->forward(sum)};
}

EarlyFusionImpl::EarlyFusionImpl(int C, int D) {
  t_q = register_module("t_q", torch::nn::Linear(D, C));
  t_k = register_module("t_k", torch::nn::Linear(C, C));
  t_v = register_module("t_v", torch::nn::Linear(C, C));
  t_o = register_module("t_o", torch::nn::Linear(C, D));
  i_q = register_module("i_q", torch::nn::Linear(C, C));
  i_k = register_module("i_k", torch::nn::Linear(D, C));
  i_v = register_module("i_v", torch::nn::Linear(D, C));
  i_o = register_module("i_o", torch::nn::Linear(C, C));
  torch::NoGradGuard g;
  for (auto* l : {&t_o, &i_o}) {
    (*l)->weight.zero_();
    (*l)->bias.zero_();
  }
}

BackboneFeatures EarlyFusionImpl::forward(const BackboneFeatures& f, const torch::Tensor& T) {
  if (T.size(0) == 0 || f.scales.empty()) return f;
  std::vector<torch::Tensor> flat;
  for (const auto& s : f.scales) flat.push_back(s.flatten(2).transpose(1, 2));
  auto X = torch::cat(flat, 1);  // (B, n, C)
  const auto B = X.size(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(X.size(2)));
  auto Tb = T.unsqueeze(0).expand({B, T.size(0), T.size(1)});
  auto a_t = torch::softmax(torch::matmul(t_q->forward(Tb), t_k->forward(X).transpose(1, 2)) * scale, -1);
  auto T2 = Tb + t_o->forward(torch::matmul(a_t, t_v->forward(X)));
  auto a_i = torch::softmax(torch::matmul(i_q->forward(X), i_k->forward(T2).transpose(1, 2)) * scale, -1);
  auto X2 = X + i_o->forward(torch::matmul(a_i, i_v->forward(T2)));
  BackboneFeatures out;
  std::int64_t offset = 0;
  for (const auto& s : f.scales) {
    const auto n = s.size(2) * s.size(3);
    out.scales.push_back(X2.narrow(1, offset, n).transpose(1, 2).reshape(s.sizes()));
    offset += n;
  }
  return out;
}

DecoderLayerImpl::DecoderLayerImpl(int C, int heads, int ffn) {
  self_attn = register_module("self_attn", Attention(C, heads));
  cross_attn = register_module("cross_attn", Attention(C, heads));
  n1 = register_module("n1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({C})));
  n2 = register_module("n2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({C})));
  n3 = register_module("n3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({C})));
  f1 = register_module("f1", torch::nn::Linear(C, ffn));
  f2 = register_module("f2", torch::nn::Linear(ffn, C));
}

torch::Tensor DecoderLayerImpl::forward(torch::Tensor q, const torch::Tensor& pos, const torch::Tensor& memory,
                                        const torch::Tensor& mem_pos, const torch::Tensor& bias, int group) {
  const auto B = q.size(0), n = q.size(1), C = q.size(2);
  const std::int64_t g = group > 0 ? group : n;
  auto qg = q.reshape({B * n / g, g, C});
  auto qk = (q + pos).reshape({B * n / g, g, C});
  q = n1->forward(q + self_attn->forward(qk, qk, qg).reshape({B, n, C}));
  q = n2->forward(q + cross_attn->forward(q + pos, memory + mem_pos, memory, bias));
  return n3->forward(q + f2->forward(torch::relu(f1->forward(q))));
}

QFormerImpl::QFormerImpl(int C, int L_, int M, int heads, int ffn) : L(L_) {
  q_parse = register_parameter("q_parse", torch::randn({L_, C}));
  for (int m = 0; m < M; ++m) {
    const auto k = std::to_string(m);
    self_attn.push_back(register_module("self_attn" + k, Attention(C, heads)));
    cross_attn.push_back(register_module("cross_attn" + k, Attention(C, heads)));
    n1.push_back(register_module("n1_" + k, torch::nn::LayerNorm(torch::nn::LayerNormOptions({C}))));
    n2.push_back(register_module("n2_" + k, torch::nn::LayerNorm(torch::nn::LayerNormOptions({C}))));
    n3.push_back(register_module("n3_" + k, torch::nn::LayerNorm(torch::nn::LayerNormOptions({C}))));
    f1.push_back(register_module("f1_" + k, torch::nn::Linear(C, ffn)));
    f2.push_back(register_module("f2_" + k, torch::nn::Linear(ffn, C)));
  }
}

torch::Tensor QFormerImpl::forward(const torch::Tensor& q_obj) {
  const auto B = q_obj.size(0), K = q_obj.size(1), C = q_obj.size(2);
  auto obj = q_obj.reshape({B * K, 1, C});
  auto x = q_parse.unsqueeze(0).expand({B * K, L, C});
  for (std::size_t m = 0; m < self_attn.size(); ++m) {
    x = n1[m]->forward(x + self_attn[m]->forward(x, x, x));
    x = n2[m]->forward(x + cross_attn[m]->forward(x, obj, obj));
    x = n3[m]->forward(x + f2[m]->forward(torch::relu(f1[m]->forward(x))));
  }
  return x.reshape({B, K * L, C});
}

torch::Tensor token_centers(const BackboneFeatures& f) {
  std::vector<torch::Tensor> parts;
  for (const auto& s : f.scales) {
    const auto h = s.size(2), w = s.size(3);
    auto ys = (torch::arange(h, torch::kFloat) + 0.5) / h;
    auto xs = (torch::arange(w, torch::kFloat) + 0.5) / w;
    auto grid = torch::meshgrid({ys, xs}, "ij");
    parts.push_back(torch::stack({grid[1].flatten(), grid[0].flatten()}, 1));
  }
  return torch::cat(parts, 0);
}

torch::Tensor box_locality_bias(const torch::Tensor& ref, const torch::Tensor& centers) {
  auto cx = ref.select(-1, 0).unsqueeze(-1), cy = ref.select(-1, 1).unsqueeze(-1);
  auto hw = 0.5 * ref.select(-1, 2).clamp_min(0.04).unsqueeze(-1), hh = 0.5 * ref.select(-1, 3).clamp_min(0.04).unsqueeze(-1);
  auto dx = (centers.select(1, 0) - cx) / hw, dy = (centers.select(1, 1) - cy) / hh;
  return -0.5 * (dx * dx + dy * dy);
}

LevelDecoderImpl::LevelDecoderImpl(const ModelConfig& cfg, int n) {
  for (int i = 0; i < n; ++i)
    layers.push_back(register_module("layer" + std::to_string(i), DecoderLayer(cfg.C, cfg.heads, cfg.ffn)));
  query_pos = register_module("query_pos", Mlp(2 * cfg.C, cfg.C, cfg.C, 2));
  box_head = register_module("box_head", Mlp(cfg.C, cfg.C, 4, 3));
  mask_head = register_module("mask_head", Mlp(cfg.C, cfg.C, cfg.C, 3));
  torch::NoGradGuard g;
  box_head->layers.back()->weight.zero_();
  box_head->layers.back()->bias.zero_();
}

std::vector<LevelOutput> LevelDecoderImpl::forward(torch::Tensor q, torch::Tensor ref, const torch::Tensor& memory,
                                                   const torch::Tensor& mem_pos, const torch::Tensor& centers,
                                                   const torch::Tensor& M_p, const torch::Tensor& W_proj,
                                                   const torch::Tensor& T, int group,
                                                   std::vector<torch::Tensor>* queries) {
  std::vector<LevelOutput> outs;
  const int C = static_cast<int>(q.size(-1));
  for (auto& layer : layers) {
    auto r = ref.detach();
    auto pos = query_pos->forward(sine_embed(r, C / 2));
    q = layer->forward(q, pos, memory, mem_pos, box_locality_bias(r, centers), group);
    LevelOutput o;
    o.boxes = torch::sigmoid(inverse_sigmoid(r) + box_head->forward(q));
    o.logits = similarity_scores(q, W_proj, T);
    o.masks = dot_masks(mask_head->forward(q), M_p);
    outs.push_back(o);
    if (queries) queries->push_back(q);
    ref = o.boxes;
  }
  return outs;
}

HierParserImpl::HierParserImpl(const ModelConfig& c, const Vocabulary& v, torch::Tensor t_obj, torch::Tensor t_part)
    : cfg(c), vocab(v) {
  cfg.check();
  if (t_obj.size(0) != static_cast<std::int64_t>(v.object_names.size()) ||
      t_part.size(0) != static_cast<std::int64_t>(v.part_names.size()) || t_obj.size(1) != c.D || t_part.size(1) != c.D)
    throw ModelError("model: text embedding rows must match the vocabulary and width D");
  torch::manual_seed(c.seed);
  T_obj = register_buffer("T_obj", t_obj.to(torch::kFloat));
  T_part = register_buffer("T_part", t_part.to(torch::kFloat));
  W_proj = register_parameter("W_proj", torch::randn({c.C, c.D}) / std::sqrt(static_cast<double>(c.C)));
  encoder = register_module("encoder", ImageEncoder(c));
  if (c.early_fusion) fusion = register_module("fusion", EarlyFusion(c.C, c.D));
  proposal_proj = register_module("proposal_proj", torch::nn::Linear(c.C, c.C));
  proposal_norm = register_module("proposal_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.C})));
  proposal_box = register_module("proposal_box", Mlp(c.C, c.C, 4, 3));
  level_embed = register_parameter("level_embed", torch::randn({3, c.C}) * 0.1);
  object_decoder = register_module("object_decoder", LevelDecoder(c, c.decoder_layers));
  part_decoder = register_module("part_decoder", LevelDecoder(c, c.decoder_layers));
  qformer = register_module("qformer", QFormer(c.C, c.L, c.M, c.heads, c.ffn));
  torch::NoGradGuard g;
  proposal_box->layers.back()->weight.zero_();
  proposal_box->layers.back()->bias.zero_();
}

HierParserImpl::Encoded HierParserImpl::encode(const torch::Tensor& images) {
  Encoded e;
  std::tie(e.features, e.M_p) = encoder->forward(images);
  if (fusion) e.features = fusion->forward(e.features, torch::cat({T_obj, T_part}, 0));
  // decoder memory: strides 8, 16, 32; stride 4 reaches the heads through M_p
  BackboneFeatures coarse{{e.features.scales.begin() + 1, e.features.scales.end()}};
  std::vector<torch::Tensor> tokens;
  for (std::size_t s = 0; s < coarse.scales.size(); ++s)
    tokens.push_back(coarse.scales[s].flatten(2).transpose(1, 2) + level_embed[static_cast<std::int64_t>(s)]);
  e.memory = torch::cat(tokens, 1);
  e.centers = token_centers(coarse);
  e.mem_pos = sine_embed(e.centers, cfg.C / 2).unsqueeze(0).expand({e.memory.size(0), -1, -1});
  return e;
}

std::vector<LevelOutput> HierParserImpl::parse_parts(const Encoded& e, const torch::Tensor& q_obj,
                                                     const torch::Tensor& parent_boxes) {
  auto q_part = qformer->forward(q_obj);
  auto ref = parent_boxes.detach().repeat_interleave(cfg.L, 1);
  return part_decoder->forward(q_part, ref, e.memory, e.mem_pos, e.centers, e.M_p, W_proj, T_part, cfg.L);
}

namespace {

torch::Tensor gather_rows(const torch::Tensor& x, const torch::Tensor& idx) {
  // x (B, R, ...), idx (B, k) -> (B, k, ...)
  auto shape = idx.sizes().vec();
  for (std::int64_t d = 2; d < x.dim(); ++d) shape.push_back(x.size(d));
  auto index = idx;
  for (std::int64_t d = 2; d < x.dim(); ++d) index = index.unsqueeze(-1);
  return torch::gather(x, 1, index.expand(shape));
}

torch::Tensor topk_slots(const torch::Tensor& scores, int k) {
  // scores (B, R, K) -> (B, k) int64
  std::vector<torch::Tensor> rows;
  for (std::int64_t b = 0; b < scores.size(0); ++b)
    rows.push_back(torch::tensor(select_topk(scores[b], k).slots, torch::kLong));
  return torch::stack(rows, 0);
}

}  // namespace

HierParserImpl::Proposals HierParserImpl::propose(const Encoded& e) {
  const auto h = e.M_p.size(2), w = e.M_p.size(3);
  Proposals p;
  p.enc = proposal_norm->forward(proposal_proj->forward(e.M_p.flatten(2).transpose(1, 2)));
  p.logits = similarity_scores(p.enc, W_proj, T_obj);
  auto ys = (torch::arange(h, torch::kFloat) + 0.5) / h, xs = (torch::arange(w, torch::kFloat) + 0.5) / w;
  auto grid = torch::meshgrid({ys, xs}, "ij");
  auto anchors = torch::stack({grid[1].flatten(), grid[0].flatten(), torch::full({h * w}, 0.1), torch::full({h * w}, 0.1)}, 1);
  p.boxes = torch::sigmoid(inverse_sigmoid(anchors) + proposal_box->forward(p.enc));
  return p;
}

torch::Tensor HierParserImpl::select_proposals(const Proposals& p, std::int64_t h, std::int64_t w, int n) {
  torch::NoGradGuard g;
  const auto B = p.logits.size(0);
  auto score = std::get<0>(p.logits.max(-1)).view({B, 1, h, w});
  auto peak = (score == torch::max_pool2d(score, {3, 3}, {1, 1}, {1, 1})).to(torch::kFloat);
  auto key = (score + (peak - 1) * 1e4).view({B, h * w, 1});
  return topk_slots(key, n);
}

ModelOutput HierParserImpl::forward(const torch::Tensor& images) {
  const Encoded e = encode(images);
  ModelOutput out;
  out.M_p = e.M_p;
  const auto h = e.M_p.size(2), w = e.M_p.size(3);

  const auto p = propose(e);
  const auto selected = select_proposals(p, h, w, cfg.N);
  out.proposals.logits = gather_rows(p.logits, selected);
  out.proposals.boxes = gather_rows(p.boxes, selected);

  std::vector<torch::Tensor> queries;
  out.object = object_decoder->forward(gather_rows(p.enc, selected).detach(), out.proposals.boxes.detach(), e.memory,
                                       e.mem_pos, e.centers, e.M_p, W_proj, T_obj, 0, &queries);
  torch::Tensor slots;
  {
    torch::NoGradGuard g;
    slots = topk_slots(out.object.back().logits, cfg.K_top);
  }
  out.part = parse_parts(e, gather_rows(queries.back(), slots), gather_rows(out.object.back().boxes, slots));
  out.part_slot = slots.repeat_interleave(cfg.L, 1);
  return out;
}

}  // namespace hparse
