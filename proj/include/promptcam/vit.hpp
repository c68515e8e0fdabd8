#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "promptcam/mat.hpp"
#include "promptcam/rng.hpp"
#include "promptcam/tensor.hpp"

namespace pcam {

struct ViTConfig {
  int num_layers = 4;   // transformer layers
  int embed_dim = 64;   // token width
  int num_heads = 4;
  int patch_size = 8;
  int image_size = 32;
  int num_classes = 8;  // width of the pretraining head
  int mlp_ratio = 4;

  int head_dim() const { return embed_dim / num_heads; }
  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;
};

struct LayerWeights {
  TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
  TensorPtr ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  TensorPtr mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Pre-norm ViT. Sequence layout everywhere: [prompts (if any), patches, cls],
// one token per row. The classifier head on the cls feature exists for
// backbone pretraining only.
struct ViTModel {
  ViTConfig config;
  TensorPtr patch_proj_w;  // patch_dim x D
  TensorPtr patch_proj_b;  // D
  TensorPtr pos_embed;     // M x D
  TensorPtr cls_token;     // 1 x D
  std::vector<LayerWeights> layers;
  TensorPtr head_w;  // D x C
  TensorPtr head_b;  // C
  bool frozen = false;

  // Fields in checkpoint order.
  std::vector<std::pair<std::string, TensorPtr>> named_fields() const;
  std::vector<TensorPtr> parameters() const;
  // frozen == true drops requires_grad on every field: gradients for the
  // backbone become structurally absent, not zeroed.
  void set_frozen(bool f);
  // FNV-1a over every field's little-endian bytes in checkpoint order.
  std::uint64_t checksum() const;
};

ViTModel init_vit(const ViTConfig& config, Rng rng);

void save_vit(const ViTModel& model, const std::string& path);
ViTModel load_vit(const std::string& path);

// Full self-attention keep mask, optionally hiding prompt keys from prompt
// queries (rows 0..P-1 cannot see columns 0..P-1).
std::vector<std::uint8_t> attention_keep_mask(int tokens, int prompt_count,
                                              bool isolate_prompts);

// ---- Tape (training) forward ------------------------------------------------

struct MsaResult {
  TensorPtr out;                     // T x D
  std::vector<TensorPtr> head_attn;  // per head, T x T rows summing to 1
};

// Scaled dot-product attention over all rows; scores divided by sqrt(head dim).
MsaResult msa_forward(GradTape& tape, const LayerWeights& w, const TensorPtr& tokens,
                      int num_heads, const std::vector<std::uint8_t>& keep = {});

struct LayerResult {
  TensorPtr out;
  std::vector<TensorPtr> head_attn;
};

// tokens + MSA(LN1(tokens)), then + MLP(LN2(.)).
LayerResult transformer_layer_forward(GradTape& tape, const LayerWeights& w,
                                      const TensorPtr& tokens, int num_heads,
                                      const std::vector<std::uint8_t>& keep = {});

// patches (M x patch_dim, normalized pixels) -> M x D embeddings with
// positional encodings added.
TensorPtr patch_embed(GradTape& tape, const ViTModel& model, const TensorPtr& patches);

struct VitForwardResult {
  TensorPtr logits;        // 1 x C
  TensorPtr final_tokens;  // (M+1) x D
  std::vector<std::vector<TensorPtr>> layer_attn;  // [layer][head]
};

VitForwardResult vit_forward(GradTape& tape, const ViTModel& model,
                             const TensorPtr& patches);

// ---- Tape-free (evaluation) forward ------------------------------------------
// An independently coded forward over plain matrices. Classification,
// interpretation and metrics all run through this path; it also serves as the
// cross-check oracle for the tape path.

// Replaces the post-softmax patch-key attention of one query row with a
// uniform vector carrying the same total mass, in the listed heads. The
// renormalized-over-patches attention map of that row becomes exactly 1/M.
struct BlurSpec {
  int query_row = -1;
  std::vector<int> heads;
  int patch_begin = 0;
  int patch_end = 0;
};

struct LayerTrace {
  Mat input_tokens;             // tokens entering the layer
  std::vector<Mat> head_attn;   // post-softmax, T x T
  std::vector<Mat> head_logits; // pre-softmax (already scaled), T x T
};

Mat value_patch_embed(const ViTModel& model, const Mat& patches);
Mat value_layer_forward(const LayerWeights& w, const Mat& tokens, int num_heads,
                        const std::vector<std::uint8_t>& keep,
                        const BlurSpec* blur = nullptr, LayerTrace* trace = nullptr);

struct VitEval {
  std::vector<double> logits;    // pretraining head output
  std::vector<double> cls_out;   // final cls feature
  Mat final_tokens;
  std::vector<LayerTrace> layers;  // filled when want_trace
};

VitEval value_vit_forward(const ViTModel& model, const Mat& patches,
                          bool want_trace = false);

double dot(const double* a, const double* b, std::size_t n);
int argmax_index(const std::vector<double>& v);  // lowest index wins ties

}  // namespace pcam
