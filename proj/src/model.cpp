#include "mcsformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mcsformer/error.hpp"
#include "mcsformer/random.hpp"

namespace mcsformer::model {

namespace {

using ad::Shape;
using ad::Tensor;

std::string block_name(std::size_t stage, int block) {
  return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block);
}

constexpr double kPixelCenter = 0.5;

std::string stage_name(std::size_t stage) { return "stages." + std::to_string(stage); }

// Transformer projections use truncated normal (std 0.02). Layers feeding a
// ReLU (the 3x3 stems and the two hidden head layers) use He scaling
// sqrt(2 / fan_in): at std 0.02 their small fan-in shrinks the signal by
// about 10x per layer and the head output starts input-independent.
enum class Init { Normal, HeNormal, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  const auto c = static_cast<std::size_t>(cfg.conv_channels);
  const auto base = static_cast<std::size_t>(cfg.embed_dim_base);
  std::vector<ParamSpec> specs;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out, bool bias,
                   Init init = Init::Normal) {
    specs.push_back({name + ".weight", {in, out}, init});
    if (bias) specs.push_back({name + ".bias", {out}, Init::Zeros});
  };
  auto norm = [&](const std::string& name, std::size_t d) {
    specs.push_back({name + ".gamma", {d}, Init::Ones});
    specs.push_back({name + ".beta", {d}, Init::Zeros});
  };
  for (const char* ch : {"hor", "ver"}) {
    specs.push_back({std::string("stem.") + ch + ".weight", {c, 1, 3, 3}, Init::HeNormal});
    specs.push_back({std::string("stem.") + ch + ".bias", {c}, Init::Zeros});
  }
  dense("embed", 2 * c, base, true);
  norm("embed.norm", base);
  for (std::size_t s = 0; s < kStages; ++s) {
    const auto d = static_cast<std::size_t>(cfg.stage_dim(s));
    const auto w = static_cast<std::size_t>(cfg.stage_window(s));
    const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden(s));
    for (int b = 0; b < cfg.depths[s]; ++b) {
      const std::string pre = block_name(s, b);
      norm(pre + ".norm1", d);
      dense(pre + ".attn.q", d, d, true);
      dense(pre + ".attn.k", d, d, true);
      dense(pre + ".attn.v", d, d, true);
      specs.push_back({pre + ".attn.rel_bias",
                       {(2 * w - 1) * (2 * w - 1), static_cast<std::size_t>(cfg.heads[s])},
                       Init::Normal});
      dense(pre + ".attn.proj", d, d, true);
      norm(pre + ".norm2", d);
      dense(pre + ".mlp.fc1", d, hidden, true);
      dense(pre + ".mlp.fc2", hidden, d, true);
    }
    if (s + 1 < kStages) {
      norm(stage_name(s) + ".merge.norm", 4 * d);
      dense(stage_name(s) + ".merge", 4 * d, 2 * d, false);
    }
  }
  const auto last = static_cast<std::size_t>(cfg.stage_dim(kStages - 1));
  norm("final_norm", last);
  const auto h1 = static_cast<std::size_t>(cfg.head_hidden[0]);
  const auto h2 = static_cast<std::size_t>(cfg.head_hidden[1]);
  dense("head.fc1", last, h1, true, Init::HeNormal);
  dense("head.fc2", h1, h2, true, Init::HeNormal);
  dense("head.out", h2, 1, true);
  return specs;
}

Tensor norm_apply(const ModelParams& p, const std::string& name, const Tensor& x) {
  return ad::layer_norm(x, p.get(name + ".gamma"), p.get(name + ".beta"));
}

Tensor dense_apply(const ModelParams& p, const std::string& name, const Tensor& x) {
  const std::string bias = name + ".bias";
  return ad::linear(x, p.get(name + ".weight"), p.contains(bias) ? p.get(bias) : Tensor{});
}

std::vector<std::size_t> relative_position_index(int window) {
  const int t = window * window;
  const int span = 2 * window - 1;
  std::vector<std::size_t> idx(static_cast<std::size_t>(t) * t);
  for (int a = 0; a < t; ++a)
    for (int b = 0; b < t; ++b) {
      const int dy = a / window - b / window + window - 1;
      const int dx = a % window - b % window + window - 1;
      idx[static_cast<std::size_t>(a) * t + b] = static_cast<std::size_t>(dy * span + dx);
    }
  return idx;
}

}  // namespace

std::string to_string(Preset p) {
  switch (p) {
    case Preset::Paper: return "paper";
    case Preset::Desk: return "desk";
    case Preset::Custom: return "custom";
  }
  return "custom";
}

Preset preset_from_string(const std::string& s) {
  if (s == "paper") return Preset::Paper;
  if (s == "desk") return Preset::Desk;
  if (s == "custom") return Preset::Custom;
  throw Error(ErrorCode::InvalidConfig, "unknown preset '" + s + "'");
}

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.image_side = 32;
  cfg.conv_channels = 32;
  cfg.embed_dim_base = 16;
  cfg.depths = {1, 1, 1, 1};
  cfg.heads = {1, 2, 4, 8};
  cfg.window_size = 4;
  cfg.mlp_ratio = 4.0;
  cfg.dropout_p = 0.1;
  cfg.head_hidden = {32, 16};
  cfg.preset = Preset::Desk;
  return cfg;
}

int ModelConfig::stage_window(std::size_t stage) const {
  return std::min(window_size, stage_side(stage));
}

int ModelConfig::mlp_hidden(std::size_t stage) const {
  return static_cast<int>(std::lround(mlp_ratio * stage_dim(stage)));
}

void ModelConfig::validate() const {
  auto fail = [](ErrorCode code, const std::string& msg) { throw Error(code, msg); };
  if (image_side < 2 || conv_channels < 1 || embed_dim_base < 1 || window_size < 1 ||
      mlp_ratio <= 0.0 || head_hidden[0] < 1 || head_hidden[1] < 1)
    fail(ErrorCode::ConfigMismatch, "model dimensions must be positive");
  if (image_side % 2 != 0)
    fail(ErrorCode::OddGrid, "image side " + std::to_string(image_side) + " is odd");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    fail(ErrorCode::InvalidProbability, "dropout_p must lie in [0, 1)");
  for (std::size_t s = 0; s < kStages; ++s) {
    const int side = grid_side() >> s;
    if (side < 1 || (side << s) != grid_side())
      fail(ErrorCode::OddGrid, "token grid " + std::to_string(grid_side()) +
                                   " cannot be halved " + std::to_string(kStages - 1) + " times");
  }
  for (std::size_t s = 0; s < kStages; ++s) {
    if (depths[s] < 1) fail(ErrorCode::ConfigMismatch, "every stage needs depth >= 1");
    const int side = grid_side() >> s;
    if (heads[s] < 1 || stage_dim(s) % heads[s] != 0)
      fail(ErrorCode::ConfigMismatch, "heads " + std::to_string(heads[s]) +
                                          " do not divide stage dim " +
                                          std::to_string(stage_dim(s)));
    if (side % stage_window(s) != 0)
      fail(ErrorCode::IndivisibleGrid, "window " + std::to_string(stage_window(s)) +
                                           " does not divide grid side " + std::to_string(side));
  }
}

std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.conv_channels;
  const std::size_t base = cfg.embed_dim_base;
  std::size_t total = 2 * (c * 9 + c);          // stems
  total += 2 * c * base + base + 2 * base;      // embed + norm
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t d = cfg.stage_dim(s);
    const std::size_t w = cfg.stage_window(s);
    const std::size_t h = cfg.mlp_hidden(s);
    const std::size_t block = 2 * d + 4 * (d * d + d) + (2 * w - 1) * (2 * w - 1) * cfg.heads[s] +
                              2 * d + (d * h + h) + (h * d + d);
    total += block * cfg.depths[s];
    if (s + 1 < kStages) total += 2 * 4 * d + 4 * d * 2 * d;
  }
  const std::size_t last = cfg.stage_dim(kStages - 1);
  const std::size_t h1 = cfg.head_hidden[0], h2 = cfg.head_hidden[1];
  total += 2 * last + (last * h1 + h1) + (h1 * h2 + h2) + (h2 + 1);
  return total;
}

void ModelParams::add(const std::string& name, Tensor t) {
  if (index_.count(name))
    throw Error(ErrorCode::ConfigMismatch, "duplicate parameter '" + name + "'");
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
}

const Tensor& ModelParams::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::ConfigMismatch, "missing parameter '" + name + "'");
  return tensors_[it->second];
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

ModelParams ModelParams::clone(bool requires_grad) const {
  ModelParams out;
  out.init_seed = init_seed;
  for (std::size_t i = 0; i < names_.size(); ++i)
    out.add(names_[i], Tensor::from(tensors_[i].shape(),
                                    {tensors_[i].data().begin(), tensors_[i].data().end()},
                                    requires_grad));
  return out;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SeededRng rng(seed);
  ModelParams p;
  p.init_seed = seed;
  for (const auto& spec : param_specs(cfg)) {
    std::vector<double> v(ad::numel(spec.shape));
    switch (spec.init) {
      case Init::Normal:
        for (double& x : v) x = rng.truncated_normal(0.02);
        break;
      case Init::HeNormal: {
        // Dense weights are [in, out]; conv kernels are [out, in, kh, kw].
        const double fan_in = static_cast<double>(
            spec.shape.size() == 2 ? spec.shape.front() : v.size() / spec.shape.front());
        const double stddev = std::sqrt(2.0 / fan_in);
        for (double& x : v) x = rng.truncated_normal(stddev);
        break;
      }
      case Init::Zeros: break;
      case Init::Ones: std::fill(v.begin(), v.end(), 1.0); break;
    }
    p.add(spec.name, Tensor::from(spec.shape, std::move(v), true));
  }
  return p;
}

void check_params(const ModelParams& params, const ModelConfig& cfg) {
  cfg.validate();
  const auto specs = param_specs(cfg);
  if (specs.size() != params.names().size())
    throw Error(ErrorCode::ConfigMismatch,
                "expected " + std::to_string(specs.size()) + " parameter tensors, got " +
                    std::to_string(params.names().size()));
  for (const auto& spec : specs) {
    const auto& t = params.get(spec.name);
    if (t.shape() != spec.shape)
      throw Error(ErrorCode::ConfigMismatch, spec.name + " has shape " +
                                                 ad::to_string(t.shape()) + ", expected " +
                                                 ad::to_string(spec.shape));
  }
}

StageGeometry stage_geometry(const ModelConfig& cfg, std::size_t stage) {
  return StageGeometry{cfg.stage_side(stage), cfg.stage_dim(stage), cfg.heads[stage],
                       cfg.stage_window(stage)};
}

Tensor conv_stem(const ModelParams& p, const std::string& prefix, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 1)
    throw Error(ErrorCode::ShapeMismatch,
                "conv_stem expects [N,1,S,S], got " + ad::to_string(x.shape()));
  Tensor y = ad::conv2d(x, p.get(prefix + ".weight"), p.get(prefix + ".bias"), 1, 1);
  return ad::maxpool2d(ad::relu(y), 2, 2);
}

Tensor fuse(const ModelParams& p, const Tensor& hor_feat, const Tensor& ver_feat) {
  if (hor_feat.shape() != ver_feat.shape())
    throw Error(ErrorCode::ShapeMismatch, "stem outputs differ: " +
                                              ad::to_string(hor_feat.shape()) + " vs " +
                                              ad::to_string(ver_feat.shape()));
  Tensor fused = ad::concat({hor_feat, ver_feat}, 1);   // [N, 2c, g, g]
  Tensor tokens = ad::permute(fused, {0, 2, 3, 1});     // [N, g, g, 2c]
  return norm_apply(p, "embed.norm", dense_apply(p, "embed", tokens));
}

std::vector<std::size_t> window_partition_index(std::size_t batch, int side, int window,
                                                int shift) {
  const auto s = static_cast<std::size_t>(side);
  const auto w = static_cast<std::size_t>(window);
  const std::size_t per_side = s / w;
  std::vector<std::size_t> idx;
  idx.reserve(batch * s * s);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t wy = 0; wy < per_side; ++wy)
      for (std::size_t wx = 0; wx < per_side; ++wx)
        for (std::size_t ty = 0; ty < w; ++ty)
          for (std::size_t tx = 0; tx < w; ++tx) {
            const std::size_t y = (wy * w + ty + static_cast<std::size_t>(shift)) % s;
            const std::size_t x = (wx * w + tx + static_cast<std::size_t>(shift)) % s;
            idx.push_back((n * s + y) * s + x);
          }
  return idx;
}

std::vector<double> shifted_window_mask(int side, int window, int shift) {
  auto region = [&](int c) { return c < side - window ? 0 : (c < side - shift ? 1 : 2); };
  const int per_side = side / window;
  const int t = window * window;
  std::vector<double> mask;
  mask.reserve(static_cast<std::size_t>(per_side) * per_side * t * t);
  for (int wy = 0; wy < per_side; ++wy)
    for (int wx = 0; wx < per_side; ++wx)
      for (int a = 0; a < t; ++a)
        for (int b = 0; b < t; ++b) {
          const int ra = region(wy * window + a / window) * 3 + region(wx * window + a % window);
          const int rb = region(wy * window + b / window) * 3 + region(wx * window + b % window);
          mask.push_back(ra == rb ? 0.0 : -std::numeric_limits<double>::infinity());
        }
  return mask;
}

Tensor window_attention(const ModelParams& p, const std::string& prefix, const Tensor& tokens,
                        const StageGeometry& g, bool shifted, AttentionTrace* trace) {
  if (tokens.rank() != 4 || tokens.dim(1) != static_cast<std::size_t>(g.side) ||
      tokens.dim(2) != static_cast<std::size_t>(g.side) ||
      tokens.dim(3) != static_cast<std::size_t>(g.dim))
    throw Error(ErrorCode::ShapeMismatch, "window_attention got " + ad::to_string(tokens.shape()));
  if (g.window < 1 || g.side % g.window != 0)
    throw Error(ErrorCode::IndivisibleGrid, "window " + std::to_string(g.window) +
                                                " does not divide grid side " +
                                                std::to_string(g.side));
  const std::size_t n = tokens.dim(0);
  const std::size_t w = g.window;
  const std::size_t t = w * w;
  const std::size_t windows = (g.side / w) * (g.side / w);
  const std::size_t heads = g.heads;
  const std::size_t d = g.dim;
  const std::size_t hd = d / heads;
  const int shift = (shifted && g.window < g.side) ? g.window / 2 : 0;

  const auto order = window_partition_index(n, g.side, g.window, shift);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) inverse[order[r]] = r;

  const Tensor xw = ad::gather_rows(tokens, order);  // [N*nW*T, D]
  auto split_heads = [&](const Tensor& m) {
    Tensor r = ad::reshape(m, {n * windows, t, heads, hd});
    return ad::reshape(ad::permute(r, {0, 2, 1, 3}), {n * windows * heads, t, hd});
  };
  const Tensor q = split_heads(dense_apply(p, prefix + ".attn.q", xw));
  const Tensor k = split_heads(dense_apply(p, prefix + ".attn.k", xw));
  const Tensor v = split_heads(dense_apply(p, prefix + ".attn.v", xw));

  Tensor logits = ad::bmm(ad::scale(q, 1.0 / std::sqrt(static_cast<double>(hd))),
                          ad::permute(k, {0, 2, 1}));  // [B, T, T]

  const Tensor table = p.get(prefix + ".attn.rel_bias");  // [(2w-1)^2, heads]
  Tensor bias = ad::gather_rows(table, relative_position_index(g.window));  // [T*T, heads]
  bias = ad::reshape(ad::permute(bias, {1, 0}), {heads, t, t});
  logits = ad::add_bias(ad::reshape(logits, {n * windows, heads, t, t}), bias);

  if (shift > 0) {
    const auto base = shifted_window_mask(g.side, g.window, shift);  // [nW, T, T]
    std::vector<double> expanded;
    expanded.reserve(windows * heads * t * t);
    for (std::size_t wi = 0; wi < windows; ++wi)
      for (std::size_t h = 0; h < heads; ++h)
        expanded.insert(expanded.end(), base.begin() + wi * t * t, base.begin() + (wi + 1) * t * t);
    const Tensor mask = Tensor::from({windows, heads, t, t}, std::move(expanded));
    logits = ad::add_bias(ad::reshape(logits, {n, windows, heads, t, t}), mask);
  }

  const Tensor attn = ad::softmax(ad::reshape(logits, {n * windows * heads, t, t}));
  if (trace) {
    trace->weights.push_back(attn);
    trace->shifted.push_back(shift > 0);
  }

  Tensor out = ad::bmm(attn, v);  // [B, T, hd]
  out = ad::reshape(ad::permute(ad::reshape(out, {n * windows, heads, t, hd}), {0, 2, 1, 3}),
                    {n * windows * t, d});
  out = dense_apply(p, prefix + ".attn.proj", out);
  return ad::reshape(ad::gather_rows(out, inverse), tokens.shape());
}

Tensor swin_block(const ModelParams& p, const std::string& prefix, const Tensor& tokens,
                  const StageGeometry& g, bool shifted, AttentionTrace* trace) {
  Tensor x = ad::add(tokens, window_attention(p, prefix, norm_apply(p, prefix + ".norm1", tokens),
                                              g, shifted, trace));
  Tensor h = dense_apply(p, prefix + ".mlp.fc1", norm_apply(p, prefix + ".norm2", x));
  h = dense_apply(p, prefix + ".mlp.fc2", ad::gelu(h));
  return ad::add(x, h);
}

Tensor patch_merging(const ModelParams& p, const std::string& prefix, const Tensor& tokens) {
  if (tokens.rank() != 4 || tokens.dim(1) != tokens.dim(2))
    throw Error(ErrorCode::ShapeMismatch, "patch_merging got " + ad::to_string(tokens.shape()));
  const std::size_t n = tokens.dim(0), s = tokens.dim(1), d = tokens.dim(3);
  if (s % 2 != 0) throw Error(ErrorCode::OddGrid, "grid side " + std::to_string(s) + " is odd");
  const std::size_t h = s / 2;
  // Neighborhood order (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
  constexpr std::size_t dy[4] = {0, 1, 0, 1};
  constexpr std::size_t dx[4] = {0, 0, 1, 1};
  std::vector<std::size_t> idx;
  idx.reserve(n * s * s);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j)
        for (std::size_t k = 0; k < 4; ++k) idx.push_back((b * s + 2 * i + dy[k]) * s + 2 * j + dx[k]);
  Tensor merged = ad::reshape(ad::gather_rows(tokens, std::move(idx)), {n, h, h, 4 * d});
  return dense_apply(p, prefix, norm_apply(p, prefix + ".norm", merged));
}

Tensor backbone(const ModelParams& p, const ModelConfig& cfg, const Tensor& hor,
                const Tensor& ver, AttentionTrace* trace) {
  const auto side = static_cast<std::size_t>(cfg.image_side);
  for (const Tensor* img : {&hor, &ver})
    if (img->rank() != 4 || img->dim(1) != 1 || img->dim(2) != side || img->dim(3) != side)
      throw Error(ErrorCode::ConfigMismatch,
                  "input " + ad::to_string(img->shape()) + " does not match image side " +
                      std::to_string(side));
  if (hor.dim(0) != ver.dim(0))
    throw Error(ErrorCode::ShapeMismatch, "channel batches differ in size");

  // Pixels are shifted from [0, 1] to [-0.5, 0.5] before the stems. With
  // zero-initialized conv biases, an uncentered flat background dominates
  // every stem response and, after the embedding norm, every token, so the
  // network starts out blind to sample-specific texture.
  const Tensor hor_c = ad::add_bias(hor, Tensor::full({side}, -kPixelCenter));
  const Tensor ver_c = ad::add_bias(ver, Tensor::full({side}, -kPixelCenter));
  Tensor x = fuse(p, conv_stem(p, "stem.hor", hor_c), conv_stem(p, "stem.ver", ver_c));
  for (std::size_t s = 0; s < kStages; ++s) {
    const StageGeometry g = stage_geometry(cfg, s);
    for (int b = 0; b < cfg.depths[s]; ++b)
      x = swin_block(p, block_name(s, b), x, g, b % 2 == 1, trace);
    if (s + 1 < kStages) x = patch_merging(p, stage_name(s) + ".merge", x);
  }
  x = norm_apply(p, "final_norm", x);
  const std::size_t n = x.dim(0);
  const std::size_t last = x.dim(1) * x.dim(2);
  return ad::mean_axis(ad::reshape(x, {n, last, x.dim(3)}), 1);
}

Tensor forward(const ModelParams& p, const ModelConfig& cfg, const Tensor& hor, const Tensor& ver,
               bool training, std::uint64_t dropout_key, AttentionTrace* trace) {
  check_params(p, cfg);
  Tensor h = backbone(p, cfg, hor, ver, trace);
  h = ad::relu(dense_apply(p, "head.fc1", h));
  h = ad::dropout(h, cfg.dropout_p, training, ad::mix64(dropout_key ^ 0x1ULL));
  h = ad::relu(dense_apply(p, "head.fc2", h));
  h = ad::dropout(h, cfg.dropout_p, training, ad::mix64(dropout_key ^ 0x2ULL));
  return dense_apply(p, "head.out", h);
}

ImageBatch make_batch(const std::vector<features::LabeledSample>& samples,
                      const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error(ErrorCode::EmptyBatch, "no samples selected");
  const auto side = static_cast<std::size_t>(samples.at(indices.front()).hor.side);
  const std::size_t px = side * side;
  std::vector<double> hor, ver;
  hor.reserve(indices.size() * px);
  ver.reserve(indices.size() * px);
  for (std::size_t i : indices) {
    const auto& s = samples.at(i);
    if (s.hor.pixels.size() != px || s.ver.pixels.size() != px)
      throw Error(ErrorCode::ShapeMismatch, "samples disagree on image size");
    hor.insert(hor.end(), s.hor.pixels.begin(), s.hor.pixels.end());
    ver.insert(ver.end(), s.ver.pixels.begin(), s.ver.pixels.end());
  }
  const Shape shape{indices.size(), 1, side, side};
  return ImageBatch{Tensor::from(shape, std::move(hor)), Tensor::from(shape, std::move(ver))};
}

std::vector<double> predict(const ModelParams& p, const ModelConfig& cfg,
                            const std::vector<features::LabeledSample>& samples,
                            std::size_t batch) {
  const ModelParams frozen = p.clone(false);
  std::vector<double> out;
  out.reserve(samples.size());
  batch = std::max<std::size_t>(batch, 1);
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch); ++i) idx.push_back(i);
    const ImageBatch b = make_batch(samples, idx);
    const Tensor y = forward(frozen, cfg, b.hor, b.ver, false);
    out.insert(out.end(), y.data().begin(), y.data().end());
  }
  return out;
}

}  // namespace mcsformer::model
