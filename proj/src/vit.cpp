#include "promptcam/vit.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "promptcam/checkpoint.hpp"

using nlohmann::json;

namespace pcam {

void ViTConfig::validate() const {
  if (num_layers < 1) throw std::invalid_argument("ViTConfig: num_layers must be >= 1");
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0)
    throw std::invalid_argument("ViTConfig: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
  if (patch_size < 1 || image_size % patch_size != 0)
    throw std::invalid_argument("ViTConfig: image_size " + std::to_string(image_size) +
                                " not divisible by patch_size " + std::to_string(patch_size));
  if (num_classes < 1) throw std::invalid_argument("ViTConfig: num_classes must be >= 1");
}

std::vector<std::pair<std::string, TensorPtr>> ViTModel::named_fields() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  out.emplace_back("patch_proj_w", patch_proj_w);
  out.emplace_back("patch_proj_b", patch_proj_b);
  out.emplace_back("pos_embed", pos_embed);
  out.emplace_back("cls_token", cls_token);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    const auto& l = layers[i];
    out.emplace_back(p + "wq", l.wq);
    out.emplace_back(p + "bq", l.bq);
    out.emplace_back(p + "wk", l.wk);
    out.emplace_back(p + "bk", l.bk);
    out.emplace_back(p + "wv", l.wv);
    out.emplace_back(p + "bv", l.bv);
    out.emplace_back(p + "wo", l.wo);
    out.emplace_back(p + "bo", l.bo);
    out.emplace_back(p + "ln1_gamma", l.ln1_gamma);
    out.emplace_back(p + "ln1_beta", l.ln1_beta);
    out.emplace_back(p + "ln2_gamma", l.ln2_gamma);
    out.emplace_back(p + "ln2_beta", l.ln2_beta);
    out.emplace_back(p + "mlp_w1", l.mlp_w1);
    out.emplace_back(p + "mlp_b1", l.mlp_b1);
    out.emplace_back(p + "mlp_w2", l.mlp_w2);
    out.emplace_back(p + "mlp_b2", l.mlp_b2);
  }
  out.emplace_back("head_w", head_w);
  out.emplace_back("head_b", head_b);
  return out;
}

std::vector<TensorPtr> ViTModel::parameters() const {
  std::vector<TensorPtr> out;
  for (auto& [name, t] : named_fields()) out.push_back(t);
  return out;
}

void ViTModel::set_frozen(bool f) {
  frozen = f;
  for (auto& t : parameters()) {
    t->requires_grad = !f;
    t->needs_grad = !f;
  }
}

std::uint64_t ViTModel::checksum() const { return fields_checksum(named_fields()); }

ViTModel init_vit(const ViTConfig& config, Rng rng) {
  config.validate();
  ViTModel m;
  m.config = config;
  const std::size_t d = static_cast<std::size_t>(config.embed_dim);
  const std::size_t hidden = d * config.mlp_ratio;

  // Truncated normal scaled by fan-in/fan-out. A fixed sigma of 0.02 (the
  // ViT-Base recipe) starves desk-scale widths: at D=64 the residual stream
  // barely moves and training stalls.
  auto trunc = [](Rng r, std::vector<std::size_t> shape) {
    auto t = make_tensor(shape, true);
    const double sigma = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
    for (auto& v : t->data) v = r.truncated_normal(sigma);
    return t;
  };
  auto zeros = [](std::vector<std::size_t> shape) {
    return make_tensor(std::move(shape), true);
  };
  auto ones = [](std::vector<std::size_t> shape) {
    auto t = make_tensor(std::move(shape), true);
    for (auto& v : t->data) v = 1.0;
    return t;
  };

  m.patch_proj_w = trunc(rng.stream("patch_proj_w"),
                         {static_cast<std::size_t>(config.patch_dim()), d});
  m.patch_proj_b = zeros({d});
  m.pos_embed = make_tensor({static_cast<std::size_t>(config.num_patches()), d}, true);
  {
    Rng pr = rng.stream("pos_embed");
    for (auto& v : m.pos_embed->data) v = pr.normal(0.0, 0.02);
  }
  m.cls_token = zeros({1, d});

  for (int i = 0; i < config.num_layers; ++i) {
    Rng lr = rng.stream("layer").stream(static_cast<std::uint64_t>(i));
    LayerWeights l;
    l.wq = trunc(lr.stream("wq"), {d, d});
    l.bq = zeros({d});
    l.wk = trunc(lr.stream("wk"), {d, d});
    l.bk = zeros({d});
    l.wv = trunc(lr.stream("wv"), {d, d});
    l.bv = zeros({d});
    l.wo = trunc(lr.stream("wo"), {d, d});
    l.bo = zeros({d});
    l.ln1_gamma = ones({d});
    l.ln1_beta = zeros({d});
    l.ln2_gamma = ones({d});
    l.ln2_beta = zeros({d});
    l.mlp_w1 = trunc(lr.stream("mlp_w1"), {d, hidden});
    l.mlp_b1 = zeros({hidden});
    l.mlp_w2 = trunc(lr.stream("mlp_w2"), {hidden, d});
    l.mlp_b2 = zeros({d});
    m.layers.push_back(std::move(l));
  }

  m.head_w = trunc(rng.stream("head_w"),
                   {d, static_cast<std::size_t>(config.num_classes)});
  m.head_b = zeros({static_cast<std::size_t>(config.num_classes)});
  return m;
}

void save_vit(const ViTModel& model, const std::string& path) {
  json meta;
  meta["config"] = json{{"num_layers", model.config.num_layers},
                        {"embed_dim", model.config.embed_dim},
                        {"num_heads", model.config.num_heads},
                        {"patch_size", model.config.patch_size},
                        {"image_size", model.config.image_size},
                        {"num_classes", model.config.num_classes},
                        {"mlp_ratio", model.config.mlp_ratio}};
  meta["frozen"] = model.frozen;
  write_checkpoint(path, "vit", meta, model.named_fields());
}

ViTModel load_vit(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.kind != "vit")
    throw std::runtime_error(path + ": expected a vit checkpoint, found '" + ck.kind + "'");
  const auto& cj = ck.meta.at("config");
  ViTConfig config;
  config.num_layers = cj.at("num_layers").get<int>();
  config.embed_dim = cj.at("embed_dim").get<int>();
  config.num_heads = cj.at("num_heads").get<int>();
  config.patch_size = cj.at("patch_size").get<int>();
  config.image_size = cj.at("image_size").get<int>();
  config.num_classes = cj.at("num_classes").get<int>();
  config.mlp_ratio = cj.at("mlp_ratio").get<int>();

  ViTModel m = init_vit(config, Rng(0));
  for (auto& [name, tensor] : m.named_fields()) {
    const TensorPtr& stored = ck.field(name);
    if (stored->shape != tensor->shape)
      throw std::runtime_error(path + ": field '" + name + "' has shape " +
                               shape_str(stored->shape) + ", expected " +
                               shape_str(tensor->shape));
    tensor->data = stored->data;
  }
  m.set_frozen(ck.meta.value("frozen", false));
  return m;
}

std::vector<std::uint8_t> attention_keep_mask(int tokens, int prompt_count,
                                              bool isolate_prompts) {
  if (!isolate_prompts || prompt_count == 0) return {};
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(tokens) * tokens, 1);
  for (int q = 0; q < prompt_count; ++q)
    for (int k = 0; k < prompt_count; ++k)
      keep[static_cast<std::size_t>(q) * tokens + k] = 0;
  return keep;
}

// ---- tape forward ----

MsaResult msa_forward(GradTape& tape, const LayerWeights& w, const TensorPtr& tokens,
                      int num_heads, const std::vector<std::uint8_t>& keep) {
  const std::size_t d = tokens->shape[1];
  const std::size_t dh = d / static_cast<std::size_t>(num_heads);
  auto q = add_rowvec(tape, matmul(tape, tokens, w.wq), w.bq);
  auto k = add_rowvec(tape, matmul(tape, tokens, w.wk), w.bk);
  auto v = add_rowvec(tape, matmul(tape, tokens, w.wv), w.bv);

  MsaResult res;
  std::vector<TensorPtr> head_outs;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int r = 0; r < num_heads; ++r) {
    auto qr = slice_cols(tape, q, r * dh, (r + 1) * dh);
    auto kr = slice_cols(tape, k, r * dh, (r + 1) * dh);
    auto vr = slice_cols(tape, v, r * dh, (r + 1) * dh);
    auto scores = scale(tape, matmul(tape, qr, transpose(tape, kr)), inv_sqrt_dh);
    auto attn = masked_softmax_rows(tape, scores, keep);
    res.head_attn.push_back(attn);
    head_outs.push_back(matmul(tape, attn, vr));
  }
  auto merged = concat_cols(tape, head_outs);
  res.out = add_rowvec(tape, matmul(tape, merged, w.wo), w.bo);
  return res;
}

LayerResult transformer_layer_forward(GradTape& tape, const LayerWeights& w,
                                      const TensorPtr& tokens, int num_heads,
                                      const std::vector<std::uint8_t>& keep) {
  auto normed = layer_norm(tape, tokens, w.ln1_gamma, w.ln1_beta, 1e-6);
  auto msa = msa_forward(tape, w, normed, num_heads, keep);
  auto x1 = add(tape, tokens, msa.out);
  auto normed2 = layer_norm(tape, x1, w.ln2_gamma, w.ln2_beta, 1e-6);
  auto hidden = gelu(tape, add_rowvec(tape, matmul(tape, normed2, w.mlp_w1), w.mlp_b1));
  auto mlp = add_rowvec(tape, matmul(tape, hidden, w.mlp_w2), w.mlp_b2);
  LayerResult res;
  res.out = add(tape, x1, mlp);
  res.head_attn = std::move(msa.head_attn);
  return res;
}

TensorPtr patch_embed(GradTape& tape, const ViTModel& model, const TensorPtr& patches) {
  const auto& c = model.config;
  if (patches->shape.size() != 2 ||
      patches->shape[0] != static_cast<std::size_t>(c.num_patches()) ||
      patches->shape[1] != static_cast<std::size_t>(c.patch_dim()))
    throw std::invalid_argument(
        "patch_embed: expected [" + std::to_string(c.num_patches()) + " x " +
        std::to_string(c.patch_dim()) + "] patch matrix, got " + shape_str(patches->shape));
  auto projected = add_rowvec(tape, matmul(tape, patches, model.patch_proj_w),
                              model.patch_proj_b);
  return add(tape, projected, model.pos_embed);
}

VitForwardResult vit_forward(GradTape& tape, const ViTModel& model,
                             const TensorPtr& patches) {
  const auto& c = model.config;
  auto tokens = concat_rows(tape, {patch_embed(tape, model, patches), model.cls_token});
  VitForwardResult res;
  for (int i = 0; i < c.num_layers; ++i) {
    auto layer = transformer_layer_forward(tape, model.layers[i], tokens, c.num_heads);
    tokens = layer.out;
    res.layer_attn.push_back(std::move(layer.head_attn));
  }
  res.final_tokens = tokens;
  auto cls = slice_rows(tape, tokens, c.num_patches(), c.num_patches() + 1);
  res.logits = add_rowvec(tape, matmul(tape, cls, model.head_w), model.head_b);
  return res;
}

// ---- tape-free forward ----
// Deliberately self-contained loops: this path is the oracle for the tape
// path and the single source of truth for inference-time numbers.

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

int argmax_index(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

// out = tokens * W + b, where W is (n x p) and b length p.
Mat linear(const Mat& tokens, const TensorPtr& w, const TensorPtr& b) {
  const std::size_t n = w->shape[0], p = w->shape[1];
  Mat out(tokens.rows, p);
  for (std::size_t i = 0; i < tokens.rows; ++i) {
    const double* row = tokens.row(i);
    double* dst = out.row(i);
    for (std::size_t j = 0; j < p; ++j) dst[j] = b->data[j];
    for (std::size_t q = 0; q < n; ++q) {
      const double x = row[q];
      const double* wrow = w->data.data() + q * p;
      for (std::size_t j = 0; j < p; ++j) dst[j] += x * wrow[j];
    }
  }
  return out;
}

Mat layer_norm_rows(const Mat& x, const TensorPtr& gamma, const TensorPtr& beta,
                    double eps) {
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xv = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += xv[j];
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) var += (xv[j] - mean) * (xv[j] - mean);
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    double* dst = out.row(i);
    for (std::size_t j = 0; j < x.cols; ++j)
      dst[j] = gamma->data[j] * (xv[j] - mean) * inv + beta->data[j];
  }
  return out;
}

double gelu_tanh(double x) {
  const double u = std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

}  // namespace

Mat value_patch_embed(const ViTModel& model, const Mat& patches) {
  Mat out = linear(patches, model.patch_proj_w, model.patch_proj_b);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j)
      out(i, j) += model.pos_embed->data[i * out.cols + j];
  return out;
}

Mat value_layer_forward(const LayerWeights& w, const Mat& tokens, int num_heads,
                        const std::vector<std::uint8_t>& keep, const BlurSpec* blur,
                        LayerTrace* trace) {
  const std::size_t T = tokens.rows, d = tokens.cols;
  const std::size_t dh = d / static_cast<std::size_t>(num_heads);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  if (trace) trace->input_tokens = tokens;

  Mat normed = layer_norm_rows(tokens, w.ln1_gamma, w.ln1_beta, 1e-6);
  Mat q = linear(normed, w.wq, w.bq);
  Mat k = linear(normed, w.wk, w.bk);
  Mat v = linear(normed, w.wv, w.bv);

  Mat merged(T, d);
  for (int r = 0; r < num_heads; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * dh;
    Mat attn(T, T);
    Mat logits_mat(trace ? T : 0, trace ? T : 0);
    const bool blur_this_head =
        blur && blur->query_row >= 0 &&
        std::find(blur->heads.begin(), blur->heads.end(), r) != blur->heads.end();
    for (std::size_t i = 0; i < T; ++i) {
      double* arow = attn.row(i);
      const std::uint8_t* krow = keep.empty() ? nullptr : keep.data() + i * T;
      double mx = -HUGE_VAL;
      for (std::size_t j = 0; j < T; ++j) {
        if (krow && !krow[j]) {
          arow[j] = -HUGE_VAL;
          continue;
        }
        arow[j] = dot(q.row(i) + off, k.row(j) + off, dh) * inv_sqrt_dh;
        if (arow[j] > mx) mx = arow[j];
      }
      if (trace)
        for (std::size_t j = 0; j < T; ++j) logits_mat(i, j) = arow[j];
      double sum = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        arow[j] = arow[j] == -HUGE_VAL ? 0.0 : std::exp(arow[j] - mx);
        sum += arow[j];
      }
      for (std::size_t j = 0; j < T; ++j) arow[j] /= sum;
      if (blur_this_head && static_cast<int>(i) == blur->query_row) {
        double mass = 0.0;
        for (int j = blur->patch_begin; j < blur->patch_end; ++j) mass += arow[j];
        const double uniform = mass / static_cast<double>(blur->patch_end - blur->patch_begin);
        for (int j = blur->patch_begin; j < blur->patch_end; ++j) arow[j] = uniform;
      }
    }
    // head output rows: attn * v_head, written into the merged slice
    for (std::size_t i = 0; i < T; ++i) {
      double* dst = merged.row(i) + off;
      const double* arow = attn.row(i);
      for (std::size_t jj = 0; jj < dh; ++jj) dst[jj] = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        const double a = arow[j];
        const double* vrow = v.row(j) + off;
        for (std::size_t jj = 0; jj < dh; ++jj) dst[jj] += a * vrow[jj];
      }
    }
    if (trace) {
      trace->head_attn.push_back(std::move(attn));
      trace->head_logits.push_back(std::move(logits_mat));
    }
  }

  Mat x1 = linear(merged, w.wo, w.bo);
  for (std::size_t i = 0; i < x1.size(); ++i) x1.a[i] += tokens.a[i];

  Mat normed2 = layer_norm_rows(x1, w.ln2_gamma, w.ln2_beta, 1e-6);
  Mat hidden = linear(normed2, w.mlp_w1, w.mlp_b1);
  for (auto& h : hidden.a) h = gelu_tanh(h);
  Mat out = linear(hidden, w.mlp_w2, w.mlp_b2);
  for (std::size_t i = 0; i < out.size(); ++i) out.a[i] += x1.a[i];
  return out;
}

VitEval value_vit_forward(const ViTModel& model, const Mat& patches, bool want_trace) {
  const auto& c = model.config;
  Mat tokens = value_patch_embed(model, patches);
  tokens.a.insert(tokens.a.end(), model.cls_token->data.begin(),
                  model.cls_token->data.end());
  tokens.rows += 1;

  VitEval eval;
  for (int i = 0; i < c.num_layers; ++i) {
    LayerTrace trace;
    tokens = value_layer_forward(model.layers[i], tokens, c.num_heads, {}, nullptr,
                                 want_trace ? &trace : nullptr);
    if (want_trace) eval.layers.push_back(std::move(trace));
  }
  const double* cls = tokens.row(c.num_patches());
  eval.cls_out.assign(cls, cls + c.embed_dim);
  eval.logits.resize(c.num_classes);
  for (int j = 0; j < c.num_classes; ++j) {
    double s = model.head_b->data[j];
    for (int q = 0; q < c.embed_dim; ++q)
      s += cls[q] * model.head_w->data[static_cast<std::size_t>(q) * c.num_classes + j];
    eval.logits[j] = s;
  }
  eval.final_tokens = std::move(tokens);
  return eval;
}

}  // namespace pcam
