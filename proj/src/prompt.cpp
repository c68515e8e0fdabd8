#include "promptcam/prompt.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "promptcam/checkpoint.hpp"

using nlohmann::json;

namespace pcam {

void PromptVariant::validate(int num_layers) const {
  if (inject_layer < 1 || inject_layer > num_layers)
    throw std::invalid_argument("PromptVariant: injection layer " +
                                std::to_string(inject_layer) + " outside 1.." +
                                std::to_string(num_layers));
}

std::string PromptVariant::name(int num_layers) const {
  if (inject_layer == num_layers) return "deep";
  if (inject_layer == 1) return "shallow";
  return "at-layer=" + std::to_string(inject_layer);
}

PromptVariant PromptVariant::parse(const std::string& text, int num_layers) {
  if (text == "deep") return deep(num_layers);
  if (text == "shallow") return shallow();
  if (text.rfind("at-layer=", 0) == 0) {
    const int i = std::stoi(text.substr(9));
    PromptVariant v = at_layer(i);
    v.validate(num_layers);
    return v;
  }
  throw std::invalid_argument("unknown prompt variant '" + text +
                              "' (expected shallow|deep|at-layer=i)");
}

std::vector<std::pair<std::string, TensorPtr>> PromptSet::named_fields() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  out.emplace_back("class_specific", class_specific);
  for (std::size_t i = 0; i < class_agnostic.size(); ++i)
    out.emplace_back("class_agnostic" + std::to_string(i), class_agnostic[i]);
  out.emplace_back("scoring_vector", scoring_vector);
  return out;
}

std::vector<TensorPtr> PromptSet::parameters() const {
  std::vector<TensorPtr> out;
  for (auto& [name, t] : named_fields()) out.push_back(t);
  return out;
}

PromptSet init_prompts(const ViTConfig& config, int num_classes,
                       const PromptVariant& variant, Rng rng) {
  variant.validate(config.num_layers);
  if (num_classes < 1) throw std::invalid_argument("init_prompts: need >= 1 class");
  const auto c = static_cast<std::size_t>(num_classes);
  const auto d = static_cast<std::size_t>(config.embed_dim);
  PromptSet p;
  p.class_specific = make_tensor({c, d}, true);
  {
    Rng r = rng.stream("class_specific");
    for (auto& v : p.class_specific->data) v = r.normal(0.0, 0.02);
  }
  for (int i = 0; i + 1 < variant.inject_layer; ++i) {
    auto block = make_tensor({c, d}, true);
    Rng r = rng.stream("class_agnostic").stream(static_cast<std::uint64_t>(i));
    for (auto& v : block->data) v = r.normal(0.0, 0.02);
    p.class_agnostic.push_back(std::move(block));
  }
  p.scoring_vector = make_tensor({d, 1}, true);
  return p;
}

void TrainRecipe::validate() const {
  // lr == 0 is allowed as the degenerate no-op optimizer.
  if (lr < 0) throw std::invalid_argument("TrainRecipe: lr must be >= 0");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("TrainRecipe: momentum must be in [0, 1)");
  if (weight_decay < 0) throw std::invalid_argument("TrainRecipe: weight_decay must be >= 0");
  if (epochs < 1) throw std::invalid_argument("TrainRecipe: epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw std::invalid_argument("TrainRecipe: warmup_epochs must be < epochs");
  if (batch_size < 1) throw std::invalid_argument("TrainRecipe: batch_size must be >= 1");
}

double schedule_lr(const TrainRecipe& recipe, int epoch) {
  if (epoch < recipe.warmup_epochs)
    return recipe.lr * static_cast<double>(epoch + 1) /
           static_cast<double>(recipe.warmup_epochs);
  const double progress = static_cast<double>(epoch - recipe.warmup_epochs) /
                          static_cast<double>(recipe.epochs - recipe.warmup_epochs);
  return recipe.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

namespace {

// Prompt block entering a given layer, or null when the class-specific
// outputs propagate from below.
TensorPtr prompt_block_for_layer(const PromptSet& prompts, const PromptVariant& variant,
                                 int layer /*1-based*/) {
  if (layer < variant.inject_layer) return prompts.class_agnostic[layer - 1];
  if (layer == variant.inject_layer) return prompts.class_specific;
  return nullptr;
}

void check_prompt_shapes(const ViTModel& model, const PromptSet& prompts,
                         const PromptVariant& variant) {
  variant.validate(model.config.num_layers);
  const auto d = static_cast<std::size_t>(model.config.embed_dim);
  if (prompts.class_specific->shape.size() != 2 || prompts.class_specific->shape[1] != d)
    throw std::invalid_argument("prompted_forward: class-specific prompts " +
                                shape_str(prompts.class_specific->shape) +
                                " do not match embed dim " + std::to_string(d));
  if (static_cast<int>(prompts.class_agnostic.size()) != variant.inject_layer - 1)
    throw std::invalid_argument(
        "prompted_forward: variant injects at layer " +
        std::to_string(variant.inject_layer) + " but prompt set has " +
        std::to_string(prompts.class_agnostic.size()) + " class-agnostic blocks");
  for (const auto& block : prompts.class_agnostic)
    if (block->shape != prompts.class_specific->shape)
      throw std::invalid_argument("prompted_forward: class-agnostic block " +
                                  shape_str(block->shape) + " does not match " +
                                  shape_str(prompts.class_specific->shape));
  if (prompts.scoring_vector->shape != std::vector<std::size_t>{d, 1})
    throw std::invalid_argument("prompted_forward: scoring vector " +
                                shape_str(prompts.scoring_vector->shape) +
                                " must be [" + std::to_string(d) + " x 1]");
}

}  // namespace

PromptedForwardResult prompted_forward(GradTape& tape, const ViTModel& model,
                                       const PromptSet& prompts,
                                       const PromptVariant& variant,
                                       const TensorPtr& patches,
                                       const PromptForwardOptions& opts) {
  check_prompt_shapes(model, prompts, variant);
  const auto& c = model.config;
  const int C = prompts.num_classes();
  const int T = C + c.num_patches() + 1;
  const auto keep = attention_keep_mask(T, C, opts.isolate_prompts);

  auto e0 = patch_embed(tape, model, patches);
  auto patch_block = e0;
  TensorPtr cls_block = model.cls_token;
  TensorPtr prompt_out;

  TensorPtr tokens;
  PromptedForwardResult res;
  for (int layer = 1; layer <= c.num_layers; ++layer) {
    TensorPtr block = prompt_block_for_layer(prompts, variant, layer);
    if (layer == 1) {
      tokens = concat_rows(tape, {block, patch_block, cls_block});
    } else if (block) {
      // Fresh prompts replace the previous prompt outputs; patches and cls
      // carry over.
      auto rest = slice_rows(tape, tokens, C, T);
      tokens = concat_rows(tape, {block, rest});
    }
    auto out = transformer_layer_forward(tape, model.layers[layer - 1], tokens,
                                         c.num_heads, keep);
    tokens = out.out;
    res.layer_attn.push_back(std::move(out.head_attn));
  }
  res.prompt_out = slice_rows(tape, tokens, 0, C);
  res.scores = matmul(tape, res.prompt_out, prompts.scoring_vector);
  return res;
}

PromptedEval prompted_eval(const ViTModel& model, const PromptSet& prompts,
                           const PromptVariant& variant, const Mat& patches,
                           const PromptForwardOptions& opts, bool want_all_traces) {
  check_prompt_shapes(model, prompts, variant);
  const auto& c = model.config;
  const int C = prompts.num_classes();
  const int T = C + c.num_patches() + 1;
  const auto keep = attention_keep_mask(T, C, opts.isolate_prompts);

  Mat embedded = value_patch_embed(model, patches);

  PromptedEval eval;
  eval.prompt_count = C;
  eval.patch_begin = C;
  eval.patch_end = C + c.num_patches();
  eval.cls_row = T - 1;

  Mat tokens;
  for (int layer = 1; layer <= c.num_layers; ++layer) {
    const TensorPtr block = prompt_block_for_layer(prompts, variant, layer);
    if (layer == 1) {
      tokens = Mat(T, c.embed_dim);
      std::copy(block->data.begin(), block->data.end(), tokens.a.begin());
      std::copy(embedded.a.begin(), embedded.a.end(),
                tokens.a.begin() + static_cast<std::size_t>(C) * c.embed_dim);
      std::copy(model.cls_token->data.begin(), model.cls_token->data.end(),
                tokens.a.begin() + static_cast<std::size_t>(T - 1) * c.embed_dim);
    } else if (block) {
      std::copy(block->data.begin(), block->data.end(), tokens.a.begin());
    }
    const bool is_final = layer == c.num_layers;
    LayerTrace trace;
    LayerTrace* trace_ptr = (is_final || want_all_traces) ? &trace : nullptr;
    Mat out = value_layer_forward(model.layers[layer - 1], tokens, c.num_heads, keep,
                                  nullptr, trace_ptr);
    if (is_final) {
      eval.final_input = tokens;
      eval.final_trace = trace_ptr ? std::move(trace) : LayerTrace{};
      if (want_all_traces) eval.layers.push_back(eval.final_trace);
    } else if (want_all_traces) {
      eval.layers.push_back(std::move(trace));
    }
    tokens = std::move(out);
  }

  eval.prompt_out = Mat(C, c.embed_dim);
  std::copy(tokens.a.begin(), tokens.a.begin() + static_cast<std::size_t>(C) * c.embed_dim,
            eval.prompt_out.a.begin());
  eval.scores = class_scores(eval.prompt_out, prompts.scoring_vector);
  eval.predicted = argmax_index(eval.scores);
  return eval;
}

std::vector<double> rescore_with_blur(const ViTModel& model, const PromptSet& prompts,
                                      const PromptedEval& eval, int target_class,
                                      const std::vector<int>& blurred_heads,
                                      const PromptForwardOptions& opts) {
  const auto& c = model.config;
  const int C = eval.prompt_count;
  if (target_class < 0 || target_class >= C)
    throw std::out_of_range("rescore_with_blur: class " + std::to_string(target_class) +
                            " out of range");
  const int T = C + c.num_patches() + 1;
  const auto keep = attention_keep_mask(T, C, opts.isolate_prompts);
  BlurSpec blur;
  blur.query_row = target_class;
  blur.heads = blurred_heads;
  blur.patch_begin = eval.patch_begin;
  blur.patch_end = eval.patch_end;
  Mat out = value_layer_forward(model.layers[c.num_layers - 1], eval.final_input,
                                c.num_heads, keep, &blur, nullptr);
  Mat prompt_out(C, c.embed_dim);
  std::copy(out.a.begin(), out.a.begin() + static_cast<std::size_t>(C) * c.embed_dim,
            prompt_out.a.begin());
  return class_scores(prompt_out, prompts.scoring_vector);
}

std::vector<double> class_scores(const Mat& prompt_out, const TensorPtr& scoring_vector) {
  if (scoring_vector->size() != prompt_out.cols)
    throw std::invalid_argument("class_scores: scoring vector " +
                                shape_str(scoring_vector->shape) +
                                " does not match prompt width " +
                                std::to_string(prompt_out.cols));
  std::vector<double> s(prompt_out.rows);
  for (std::size_t i = 0; i < prompt_out.rows; ++i)
    s[i] = dot(prompt_out.row(i), scoring_vector->data.data(), prompt_out.cols);
  return s;
}

double softmax_prob(const std::vector<double>& scores, int c) {
  double mx = scores[0];
  for (double v : scores) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : scores) sum += std::exp(v - mx);
  return std::exp(scores[static_cast<std::size_t>(c)] - mx) / sum;
}

// ---- training ----

namespace {

class SgdMomentum {
 public:
  SgdMomentum(std::vector<TensorPtr> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
      velocity_[i].assign(params_[i]->size(), 0.0);
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = (p.has_grad() ? p.grad[j] : 0.0) + weight_decay_ * p.data[j];
        v[j] = momentum_ * v[j] + g;
        p.data[j] -= lr * v[j];
      }
      p.grad.clear();
    }
  }

 private:
  std::vector<TensorPtr> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_, weight_decay_;
};

struct BatchIterator {
  std::vector<std::size_t> order;
  std::size_t batch_size;
};

void check_dataset(const DatasetView& data) {
  if (data.train_size() == 0)
    throw std::invalid_argument("training requires a non-empty train split");
}

}  // namespace

TrainResult train_prompts(const ViTModel& model, const DatasetView& data,
                          const PromptVariant& variant, const TrainRecipe& recipe,
                          const PromptForwardOptions& opts) {
  recipe.validate();
  check_dataset(data);
  if (!model.frozen)
    throw std::logic_error("train_prompts: the backbone must be frozen first");
  const std::uint64_t backbone_sum = model.checksum();
  const auto t0 = std::chrono::steady_clock::now();

  Rng rng(recipe.seed);
  PromptSet prompts = init_prompts(model.config, data.num_classes, variant,
                                   rng.stream("prompt-init"));
  SgdMomentum opt(prompts.parameters(), recipe.momentum, recipe.weight_decay);

  TrainResult result;
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    const double lr = schedule_lr(recipe, epoch);
    std::vector<std::size_t> order(data.train_size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = rng.stream("shuffle").stream(static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += recipe.batch_size) {
      const std::size_t stop = std::min(order.size(), start + recipe.batch_size);
      GradTape tape;
      std::vector<TensorPtr> losses;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const std::size_t i = order[bi];
        const Mat& pm = data.train_patch(i);
        auto patches = make_tensor({pm.rows, pm.cols}, pm.a);
        auto fwd = prompted_forward(tape, model, prompts, variant, patches, opts);
        losses.push_back(
            cross_entropy_with_logits(tape, fwd.scores, data.train_labels[i]));
        correct += argmax_index(fwd.scores->data) == data.train_labels[i];
      }
      auto batch_loss = average_scalars(tape, losses);
      if (!std::isfinite(batch_loss->data[0]))
        throw std::runtime_error("train_prompts: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", example " +
                                 std::to_string(start) + "; aborting");
      loss_sum += batch_loss->data[0] * static_cast<double>(stop - start);
      tape.backward(batch_loss);
      opt.step(lr);
    }

    std::size_t test_correct = 0;
    for (std::size_t i = 0; i < data.test_size(); ++i) {
      auto eval = prompted_eval(model, prompts, variant, data.test_patch(i), opts);
      test_correct += eval.predicted == data.test_labels[i];
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(data.train_size());
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(data.train_size());
    stats.test_acc = data.test_size()
                         ? static_cast<double>(test_correct) /
                               static_cast<double>(data.test_size())
                         : 0.0;
    result.log.epochs.push_back(stats);
  }

  if (model.checksum() != backbone_sum)
    throw std::logic_error("train_prompts: frozen backbone changed during training");
  result.prompts = std::move(prompts);
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

TrainLog pretrain_backbone(ViTModel& model, const DatasetView& data,
                           const TrainRecipe& recipe) {
  recipe.validate();
  check_dataset(data);
  if (model.frozen)
    throw std::logic_error("pretrain_backbone: model is frozen");
  if (data.num_classes != model.config.num_classes)
    throw std::invalid_argument("pretrain_backbone: dataset has " +
                                std::to_string(data.num_classes) +
                                " classes but the head is " +
                                std::to_string(model.config.num_classes) + "-way");
  const auto t0 = std::chrono::steady_clock::now();

  Rng rng(recipe.seed);
  SgdMomentum opt(model.parameters(), recipe.momentum, recipe.weight_decay);

  TrainLog log;
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    const double lr = schedule_lr(recipe, epoch);
    std::vector<std::size_t> order(data.train_size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = rng.stream("shuffle").stream(static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += recipe.batch_size) {
      const std::size_t stop = std::min(order.size(), start + recipe.batch_size);
      GradTape tape;
      std::vector<TensorPtr> losses;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const std::size_t i = order[bi];
        const Mat& pm = data.train_patch(i);
        auto patches = make_tensor({pm.rows, pm.cols}, pm.a);
        auto fwd = vit_forward(tape, model, patches);
        losses.push_back(
            cross_entropy_with_logits(tape, fwd.logits, data.train_labels[i]));
        correct += argmax_index(fwd.logits->data) == data.train_labels[i];
      }
      auto batch_loss = average_scalars(tape, losses);
      if (!std::isfinite(batch_loss->data[0]))
        throw std::runtime_error("pretrain_backbone: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", example " +
                                 std::to_string(start) + "; aborting");
      loss_sum += batch_loss->data[0] * static_cast<double>(stop - start);
      tape.backward(batch_loss);
      opt.step(lr);
    }

    std::size_t test_correct = 0;
    for (std::size_t i = 0; i < data.test_size(); ++i) {
      auto eval = value_vit_forward(model, data.test_patch(i));
      test_correct += argmax_index(eval.logits) == data.test_labels[i];
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(data.train_size());
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(data.train_size());
    stats.test_acc = data.test_size()
                         ? static_cast<double>(test_correct) /
                               static_cast<double>(data.test_size())
                         : 0.0;
    log.epochs.push_back(stats);
  }
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

std::vector<LayerSweepEntry> layer_sweep(const ViTModel& model, const DatasetView& data,
                                         const TrainRecipe& recipe,
                                         const PromptForwardOptions& opts) {
  std::vector<LayerSweepEntry> out;
  for (int i = 1; i <= model.config.num_layers; ++i) {
    auto result = train_prompts(model, data, PromptVariant::at_layer(i), recipe, opts);
    LayerSweepEntry e;
    e.inject_layer = i;
    e.variant = PromptVariant::at_layer(i).name(model.config.num_layers);
    e.test_acc = result.log.final_test_acc();
    e.train_acc = result.log.epochs.back().train_acc;
    out.push_back(e);
  }
  return out;
}

void save_prompts(const PromptSet& prompts, const PromptVariant& variant,
                  const TrainRecipe& recipe, const PromptForwardOptions& opts,
                  const std::string& path) {
  json meta;
  meta["variant"] = json{{"inject_layer", variant.inject_layer}};
  meta["recipe"] = json{{"lr", recipe.lr},
                        {"momentum", recipe.momentum},
                        {"weight_decay", recipe.weight_decay},
                        {"epochs", recipe.epochs},
                        {"warmup_epochs", recipe.warmup_epochs},
                        {"batch_size", recipe.batch_size},
                        {"seed", recipe.seed}};
  meta["options"] = json{{"prompt_isolation", opts.isolate_prompts}};
  meta["num_classes"] = prompts.num_classes();
  write_checkpoint(path, "prompts", meta, prompts.named_fields());
}

LoadedPrompts load_prompts(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.kind != "prompts")
    throw std::runtime_error(path + ": expected a prompts checkpoint, found '" +
                             ck.kind + "'");
  LoadedPrompts out;
  out.variant.inject_layer = ck.meta.at("variant").at("inject_layer").get<int>();
  const auto& r = ck.meta.at("recipe");
  out.recipe.lr = r.at("lr").get<double>();
  out.recipe.momentum = r.at("momentum").get<double>();
  out.recipe.weight_decay = r.at("weight_decay").get<double>();
  out.recipe.epochs = r.at("epochs").get<int>();
  out.recipe.warmup_epochs = r.at("warmup_epochs").get<int>();
  out.recipe.batch_size = r.at("batch_size").get<int>();
  out.recipe.seed = r.at("seed").get<std::uint64_t>();
  out.options.isolate_prompts = ck.meta.at("options").at("prompt_isolation").get<bool>();

  out.prompts.class_specific = ck.field("class_specific");
  for (std::size_t i = 0;; ++i) {
    bool found = false;
    for (const auto& [name, t] : ck.fields)
      if (name == "class_agnostic" + std::to_string(i)) {
        out.prompts.class_agnostic.push_back(t);
        found = true;
        break;
      }
    if (!found) break;
  }
  out.prompts.scoring_vector = ck.field("scoring_vector");
  for (auto& t : out.prompts.parameters()) {
    t->requires_grad = true;
    t->needs_grad = true;
  }
  return out;
}

}  // namespace pcam
