#pragma once

// Toy hierarchical parser: conv backbone with multi-scale mixer, optional
// text/image early fusion, two-stage object decoder, per-object Q-Former and an
// independent part decoder. Boxes are normalized cxcywh throughout.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace hparse {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int C = 64;       // channel width
  int N = 20;       // object queries
  int L = 5;        // parsing queries
  int M = 2;        // Q-Former blocks
  int K_top = 10;   // object queries parsed into parts
  int D = 64;       // text embedding width
  int decoder_layers = 3;
  int heads = 4;
  int ffn = 128;
  bool early_fusion = true;
  std::uint64_t seed = 0;

  void check() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Category names per level; part_parent[i] indexes object_names.
struct Vocabulary {
  std::vector<std::string> object_names;
  std::vector<std::string> part_names;
  std::vector<int> part_parent;
};

void to_json(nlohmann::json& j, const Vocabulary& v);
void from_json(const nlohmann::json& j, Vocabulary& v);

/// Unit rows drawn from a generator keyed by (seed, name). Rows named in the
/// override file (JSON object name -> D floats) are used verbatim.
torch::Tensor embed_categories(const std::vector<std::string>& names, int D, std::uint64_t seed,
                               const std::optional<std::filesystem::path>& overrides = std::nullopt);

/// S = (q W) T^T over the trailing dimension of q; raw logits.
torch::Tensor similarity_scores(const torch::Tensor& q, const torch::Tensor& W_proj, const torch::Tensor& T);

/// Per-pixel dot product of mask embeddings (..., R, C) with M_p (..., C, h, w) -> (..., R, h, w).
torch::Tensor dot_masks(const torch::Tensor& embeddings, const torch::Tensor& M_p);

struct TopK {
  std::vector<std::int64_t> slots;  // row indices, best first
};

/// Rows with the highest max-over-categories score; ties keep the lower row.
TopK select_topk(const torch::Tensor& scores, int k);

/// Sine embedding of coordinates in [0,1]: (..., n) -> (..., n * feats).
torch::Tensor sine_embed(const torch::Tensor& coords, int feats);

torch::Tensor inverse_sigmoid(const torch::Tensor& x, double eps = 1e-3);

struct BackboneFeatures {
  std::vector<torch::Tensor> scales;  // F_2..F_5, each (B, C, H/2^s, W/2^s)
};

struct MlpImpl : torch::nn::Module {
  MlpImpl(int in, int hidden, int out, int layers);
  torch::Tensor forward(torch::Tensor x);
  std::vector<torch::nn::Linear> layers;
};
TORCH_MODULE(Mlp);

/// Multi-head scaled dot-product attention with an optional additive logit bias (B, n, T).
struct AttentionImpl : torch::nn::Module {
  AttentionImpl(int dim, int heads);
  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                        const std::optional<torch::Tensor>& bias = std::nullopt);
  int heads;
  torch::nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr}, wo{nullptr};
};
TORCH_MODULE(Attention);

struct ImageEncoderImpl : torch::nn::Module {
  explicit ImageEncoderImpl(const ModelConfig& cfg);
  /// images (B, 3, H, W) with H, W divisible by 32; returns F_2..F_5 and M_p.
  std::pair<BackboneFeatures, torch::Tensor> forward(const torch::Tensor& images);

  torch::nn::Sequential stem{nullptr};
  std::vector<torch::nn::Sequential> stages;
  std::vector<torch::nn::Conv2d> lateral;
  std::vector<torch::nn::Conv2d> smooth;
  torch::nn::Conv2d mp_out{nullptr};
};
TORCH_MODULE(ImageEncoder);

/// Residual bidirectional single-head cross-attention: text rows attend to the
/// flattened image tokens, then tokens attend to the updated text.
struct EarlyFusionImpl : torch::nn::Module {
  explicit EarlyFusionImpl(int C, int D);
  BackboneFeatures forward(const BackboneFeatures& f, const torch::Tensor& T);

  torch::nn::Linear t_q{nullptr}, t_k{nullptr}, t_v{nullptr}, t_o{nullptr};  // text <- image
  torch::nn::Linear i_q{nullptr}, i_k{nullptr}, i_v{nullptr}, i_o{nullptr};  // image <- text
};
TORCH_MODULE(EarlyFusion);

/// Post-norm decoder layer: grouped self-attention, box-biased cross-attention to memory, FFN.
struct DecoderLayerImpl : torch::nn::Module {
  DecoderLayerImpl(int C, int heads, int ffn);
  /// q, pos: (B, n, C); memory, mem_pos: (B, T, C); bias: (B, n, T). Self-attention runs
  /// within contiguous groups of `group` rows (0 = all rows).
  torch::Tensor forward(torch::Tensor q, const torch::Tensor& pos, const torch::Tensor& memory,
                        const torch::Tensor& mem_pos, const torch::Tensor& bias, int group);

  Attention self_attn{nullptr}, cross_attn{nullptr};
  torch::nn::LayerNorm n1{nullptr}, n2{nullptr}, n3{nullptr};
  torch::nn::Linear f1{nullptr}, f2{nullptr};
};
TORCH_MODULE(DecoderLayer);

/// L parsing queries pass M blocks of (self-attention -> cross-attention with one object
/// query -> FFN), independently per object row.
struct QFormerImpl : torch::nn::Module {
  QFormerImpl(int C, int L, int M, int heads, int ffn);
  /// q_obj (B, K, C) -> (B, K*L, C); block i depends on q_obj[:, i] and q_parse only.
  torch::Tensor forward(const torch::Tensor& q_obj);

  torch::Tensor q_parse;
  std::vector<Attention> self_attn, cross_attn;
  std::vector<torch::nn::LayerNorm> n1, n2, n3;
  std::vector<torch::nn::Linear> f1, f2;
  int L;
};
TORCH_MODULE(QFormer);

struct LevelOutput {
  torch::Tensor logits;  // (B, R, K)
  torch::Tensor boxes;   // (B, R, 4) normalized cxcywh
  torch::Tensor masks;   // (B, R, h, w) logits at stride 4; undefined for encoder proposals
};

struct ModelOutput {
  LevelOutput proposals;            // stage-1 encoder proposals (no masks)
  std::vector<LevelOutput> object;  // one per object-decoder layer, last = final
  std::vector<LevelOutput> part;    // one per part-decoder layer, last = final
  torch::Tensor part_slot;          // (B, K_top*L) generating object row
  torch::Tensor M_p;                // (B, C, h, w)
};

/// Decoder stack plus its heads; shared by the object and part levels.
struct LevelDecoderImpl : torch::nn::Module {
  LevelDecoderImpl(const ModelConfig& cfg, int layers);
  /// Runs all layers from content `q` and reference boxes `ref` (detached inside).
  std::vector<LevelOutput> forward(torch::Tensor q, torch::Tensor ref, const torch::Tensor& memory,
                                   const torch::Tensor& mem_pos, const torch::Tensor& centers,
                                   const torch::Tensor& M_p, const torch::Tensor& W_proj,
                                   const torch::Tensor& T, int group, std::vector<torch::Tensor>* queries = nullptr);

  std::vector<DecoderLayer> layers;
  Mlp query_pos{nullptr}, box_head{nullptr}, mask_head{nullptr};
};
TORCH_MODULE(LevelDecoder);

struct HierParserImpl : torch::nn::Module {
  HierParserImpl(const ModelConfig& cfg, const Vocabulary& vocab, torch::Tensor T_obj, torch::Tensor T_part);

  ModelOutput forward(const torch::Tensor& images);

  /// Encoder pass shared by free inference and the oracle path.
  struct Encoded {
    BackboneFeatures features;
    torch::Tensor M_p, memory, mem_pos, centers;
  };
  Encoded encode(const torch::Tensor& images);

  /// Stage-1 scoring of every pixel-embedding location.
  struct Proposals {
    torch::Tensor enc, logits, boxes;  // (B, hw, C), (B, hw, K_obj), (B, hw, 4)
  };
  Proposals propose(const Encoded& e);
  /// Top-n locations per image, local score peaks first: (B, n) int64.
  torch::Tensor select_proposals(const Proposals& p, std::int64_t h, std::int64_t w, int n);

  /// Part rows for given object queries and parent boxes (B, K, C) / (B, K, 4).
  std::vector<LevelOutput> parse_parts(const Encoded& e, const torch::Tensor& q_obj, const torch::Tensor& parent_boxes);

  ModelConfig cfg;
  Vocabulary vocab;
  torch::Tensor T_obj, T_part, W_proj;
  ImageEncoder encoder{nullptr};
  EarlyFusion fusion{nullptr};
  torch::nn::Linear proposal_proj{nullptr};
  torch::nn::LayerNorm proposal_norm{nullptr};
  Mlp proposal_box{nullptr};
  torch::Tensor level_embed;
  LevelDecoder object_decoder{nullptr}, part_decoder{nullptr};
  QFormer qformer{nullptr};
};
TORCH_MODULE(HierParser);

/// Token centers (T, 2) in normalized xy for the flattened scales, row-major per scale.
torch::Tensor token_centers(const BackboneFeatures& f);

/// Additive cross-attention bias favouring tokens near each reference box: (B, n, T).
torch::Tensor box_locality_bias(const torch::Tensor& ref, const torch::Tensor& centers);

}  // namespace hparse
