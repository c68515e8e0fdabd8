#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "promptcam/data.hpp"
#include "promptcam/vit.hpp"

namespace pcam {

// Where the class-specific prompts enter. Layers 1..inject_layer-1 carry
// class-agnostic prompts whose outputs are dropped at each layer boundary;
// from inject_layer on, the class-specific prompt outputs propagate.
// inject_layer == 1 is the shallow variant, == num_layers the deep one.
struct PromptVariant {
  int inject_layer = 1;

  static PromptVariant shallow() { return {1}; }
  static PromptVariant deep(int num_layers) { return {num_layers}; }
  static PromptVariant at_layer(int i) { return {i}; }

  void validate(int num_layers) const;
  std::string name(int num_layers) const;
  static PromptVariant parse(const std::string& text, int num_layers);
};

struct PromptSet {
  TensorPtr class_specific;               // C x D
  std::vector<TensorPtr> class_agnostic;  // one C x D block per earlier layer
  TensorPtr scoring_vector;               // D x 1, shared across classes

  int num_classes() const { return static_cast<int>(class_specific->shape[0]); }
  std::vector<std::pair<std::string, TensorPtr>> named_fields() const;
  std::vector<TensorPtr> parameters() const;
};

// Prompts N(0, 0.02^2); scoring vector zero, so the initial loss of a C-way
// problem is exactly ln C.
PromptSet init_prompts(const ViTConfig& config, int num_classes,
                       const PromptVariant& variant, Rng rng);

struct PromptForwardOptions {
  bool isolate_prompts = false;  // mask prompt-to-prompt attention
};

struct TrainRecipe {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int epochs = 30;
  int warmup_epochs = 3;
  int batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

// Linear warmup to lr over warmup_epochs, then cosine decay to zero.
double schedule_lr(const TrainRecipe& recipe, int epoch);

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0;
  double final_test_acc() const { return epochs.empty() ? 0 : epochs.back().test_acc; }
};

// ---- Forward ------------------------------------------------------------------

struct PromptedForwardResult {
  TensorPtr prompt_out;  // C x D block after the final layer
  TensorPtr scores;      // C x 1
  std::vector<std::vector<TensorPtr>> layer_attn;
};

PromptedForwardResult prompted_forward(GradTape& tape, const ViTModel& model,
                                       const PromptSet& prompts,
                                       const PromptVariant& variant,
                                       const TensorPtr& patches,
                                       const PromptForwardOptions& opts = {});

// Tape-free prompted forward with the caches interpretation needs: the final
// layer's input tokens and per-head attention/logit rows.
struct PromptedEval {
  std::vector<double> scores;
  int predicted = -1;        // argmax, lowest index on ties
  Mat prompt_out;            // C x D
  Mat final_input;           // tokens entering the final layer
  LayerTrace final_trace;
  std::vector<LayerTrace> layers;  // all layers, when requested
  int prompt_count = 0;
  int patch_begin = 0, patch_end = 0;  // patch-key range in the sequence
  int cls_row = 0;
};

PromptedEval prompted_eval(const ViTModel& model, const PromptSet& prompts,
                           const PromptVariant& variant, const Mat& patches,
                           const PromptForwardOptions& opts = {},
                           bool want_all_traces = false);

// Re-runs only the final layer from the cached input with the given heads
// blurred for target_class's query, returning all class scores. An empty head
// list reproduces the original scores bit-exactly.
std::vector<double> rescore_with_blur(const ViTModel& model, const PromptSet& prompts,
                                      const PromptedEval& eval, int target_class,
                                      const std::vector<int>& blurred_heads,
                                      const PromptForwardOptions& opts = {});

// s[c] = <scoring vector, prompt-c output>.
std::vector<double> class_scores(const Mat& prompt_out, const TensorPtr& scoring_vector);
// Softmax probability of class c given logits.
double softmax_prob(const std::vector<double>& scores, int c);

// ---- Training -------------------------------------------------------------------

struct TrainResult {
  PromptSet prompts;
  TrainLog log;
};

// SGD with momentum over the prompt parameters only; the backbone must be
// frozen (its gradients are structurally absent). Deterministic per seed.
TrainResult train_prompts(const ViTModel& model, const DatasetView& data,
                          const PromptVariant& variant, const TrainRecipe& recipe,
                          const PromptForwardOptions& opts = {});

// Supervised pretraining of the whole backbone through the throwaway head.
TrainLog pretrain_backbone(ViTModel& model, const DatasetView& data,
                           const TrainRecipe& recipe);

struct LayerSweepEntry {
  int inject_layer = 0;
  std::string variant;
  double test_acc = 0;
  double train_acc = 0;
};

// Trains one prompt set per injection layer 1..N; report-only.
std::vector<LayerSweepEntry> layer_sweep(const ViTModel& model, const DatasetView& data,
                                         const TrainRecipe& recipe,
                                         const PromptForwardOptions& opts = {});

// ---- Prompt checkpoints -----------------------------------------------------------

void save_prompts(const PromptSet& prompts, const PromptVariant& variant,
                  const TrainRecipe& recipe, const PromptForwardOptions& opts,
                  const std::string& path);

struct LoadedPrompts {
  PromptSet prompts;
  PromptVariant variant;
  TrainRecipe recipe;
  PromptForwardOptions options;
};

LoadedPrompts load_prompts(const std::string& path);

}  // namespace pcam
