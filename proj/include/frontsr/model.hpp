#pragma once

// Networks: the frontalizing generator (deep residual-dense encoder, x4
// super-resolution side branch, decoder with SR feature injection), the two
// patch discriminators, and the toy identity embedder.
//
// Parameters live in a ParamStore (named tensors, insertion-ordered). A Tape
// binds parameters to graph leaves for one forward/backward pass; the same
// parameter requested twice yields the same leaf, which is what makes MI-mode
// weight sharing give one accumulated gradient per parameter.

#include <frontsr/autodiff.hpp>
#include <frontsr/kernels.hpp>
#include <frontsr/rng.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace frontsr::model {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value, bool trainable = true) {
    check(by_name_.find(name) == by_name_.end(), "duplicate parameter: " + name);
    order_.push_back(name);
    Parameter& p = by_name_[name];
    p.name = name;
    p.value = std::move(value);
    p.trainable = trainable;
    return p;
  }

  Parameter& at(const std::string& name) {
    auto it = by_name_.find(name);
    check(it != by_name_.end(), "unknown parameter: " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = by_name_.find(name);
    check(it != by_name_.end(), "unknown parameter: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return by_name_.find(name) != by_name_.end(); }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t count() const { return order_.size(); }

  std::uint64_t checksum() const {
    std::uint64_t h = 14695981039346656037ull;
    for (const std::string& n : order_) {
      h = fnv1a(n, h);
      const Tensor& v = at(n).value;
      h = fnv1a(v.data(), v.size() * sizeof(double), h);
    }
    return h;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Parameter> by_name_;  // node-stable addresses
};

// One forward/backward pass worth of parameter bindings.
class Tape {
 public:
  ad::Var param(const Parameter& p) {
    if (auto it = overrides_.find(&p); it != overrides_.end()) return it->second;
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    const bool live = p.trainable && frozen_.find(&p) == frozen_.end();
    ad::Var v = live ? ad::leaf(p.value, &p) : ad::constant(p.value);
    bound_.emplace(&p, v);
    return v;
  }

  // Substitute an external graph node for a parameter (finite-difference
  // checks differentiate through here).
  void override_param(const Parameter& p, ad::Var v) {
    check(v.value().same_shape(p.value), "override shape mismatch for " + p.name);
    overrides_[&p] = std::move(v);
  }

  // Parameters of a frozen store enter the graph as constants.
  void freeze(const ParamStore& store) {
    for (const std::string& n : store.names()) frozen_.insert(&store.at(n));
  }

  // Gradient accumulated for p by the last backward pass, or nullptr if the
  // parameter was never touched (or received no gradient).
  const Tensor* grad_of(const Parameter& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return nullptr;
    const auto& node = it->second.node();
    return node->grad_ready ? &node->grad : nullptr;
  }

 private:
  std::unordered_map<const Parameter*, ad::Var> bound_;
  std::unordered_map<const Parameter*, ad::Var> overrides_;
  std::unordered_set<const Parameter*> frozen_;
};

namespace detail {

inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / double(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

inline void add_conv(ParamStore& s, const std::string& name, int co, int ci, int k,
                     std::uint64_t seed, std::uint64_t& idx, double bias_value = 0.0) {
  s.add(name + ".w",
        he_uniform({std::size_t(co), std::size_t(ci), std::size_t(k), std::size_t(k)},
                   std::size_t(ci) * std::size_t(k) * std::size_t(k),
                   Rng::keyed(seed, {idx++})));
  s.add(name + ".b", Tensor::full({std::size_t(co)}, bias_value));
}

inline void add_linear(ParamStore& s, const std::string& name, int m, int n, std::uint64_t seed,
                       std::uint64_t& idx, double bias_value = 0.0) {
  s.add(name + ".w", he_uniform({std::size_t(m), std::size_t(n)}, std::size_t(n),
                                Rng::keyed(seed, {idx++})));
  s.add(name + ".b", Tensor::full({std::size_t(m)}, bias_value));
}

inline ad::Var conv(Tape& t, const ParamStore& s, const std::string& name, const ad::Var& x,
                    int stride, int pad) {
  return ad::conv2d(x, t.param(s.at(name + ".w")), t.param(s.at(name + ".b")), stride, pad);
}

}  // namespace detail

enum class Fusion { single, image_concat, feature_fuse, feature_fuse_orth };

inline const char* fusion_name(Fusion f) {
  switch (f) {
    case Fusion::single: return "single";
    case Fusion::image_concat: return "image_concat";
    case Fusion::feature_fuse: return "feature_fuse";
    case Fusion::feature_fuse_orth: return "feature_fuse_orth";
  }
  return "?";
}

inline Fusion fusion_from_name(const std::string& s) {
  if (s == "single") return Fusion::single;
  if (s == "image_concat") return Fusion::image_concat;
  if (s == "feature_fuse") return Fusion::feature_fuse;
  if (s == "feature_fuse_orth") return Fusion::feature_fuse_orth;
  check(false, "unknown fusion scheme: '" + s + "'");
  return Fusion::single;
}

struct GeneratorConfig {
  int channels = 1;       // image channels (grayscale default)
  int base_channels = 64;
  int n_rdb = 16;         // residual dense blocks (desk scale: 4)
  int rdb_layers = 4;     // dense convs per block
  int growth = 16;        // channels added per dense conv
  int lr_size = 32;
  int hr_size = 128;
  Fusion fusion = Fusion::single;
  int n_inputs = 1;       // views per sample in multi-image modes
  bool sr_module = true;  // false: ablation without the SR branch

  void validate() const {
    check(channels >= 1 && base_channels >= 1 && rdb_layers >= 1 && growth >= 1,
          "generator config: channel counts must be positive");
    check(n_rdb >= 1, "generator config: n_rdb must be >= 1");
    check(lr_size >= 4 && hr_size == 4 * lr_size,
          "generator config: hr_size must equal 4 * lr_size");
    check(n_inputs >= 1, "generator config: n_inputs must be >= 1");
    check(fusion != Fusion::single || n_inputs == 1,
          "generator config: single fusion takes exactly one input");
    if (fusion == Fusion::feature_fuse_orth)
      check(lr_size * lr_size >= base_channels,
            "generator config: orthogonality penalty needs lr_size^2 >= base_channels");
  }
};

class Generator {
 public:
  struct SrOut {
    ad::Var sp;    // super-resolved side view (C, hr, hr), clamped
    ad::Var mid2;  // (base, 2*lr, 2*lr)
    ad::Var mid4;  // (base, 4*lr, 4*lr)
  };
  struct Output {
    ad::Var sp;
    ad::Var sf;
    std::vector<ad::Var> feature_blocks;  // (lr^2, base) per view, orth mode only
  };

  Generator(GeneratorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::uint64_t idx = 0;
    const int b = cfg_.base_channels;
    const int cin = cfg_.channels * (cfg_.fusion == Fusion::image_concat ? cfg_.n_inputs : 1);
    detail::add_conv(params_, "enc.first", b, cin, 3, seed, idx);
    for (int r = 0; r < cfg_.n_rdb; ++r) {
      const std::string prefix = "enc.rdb" + std::to_string(r);
      for (int l = 0; l < cfg_.rdb_layers; ++l)
        detail::add_conv(params_, prefix + ".conv" + std::to_string(l), cfg_.growth,
                         b + l * cfg_.growth, 3, seed, idx);
      detail::add_conv(params_, prefix + ".fuse", b, b + cfg_.rdb_layers * cfg_.growth, 1, seed,
                       idx);
    }
    detail::add_conv(params_, "enc.gff", b, b, 1, seed, idx);
    if (cfg_.sr_module) {
      detail::add_conv(params_, "sr.up1", 4 * b, b, 3, seed, idx);
      detail::add_conv(params_, "sr.up2", 4 * b, b, 3, seed, idx);
      detail::add_conv(params_, "sr.out", cfg_.channels, b, 3, seed, idx, 0.5);
    }
    detail::add_conv(params_, "dec.up1", 4 * b, b, 3, seed, idx);
    if (cfg_.sr_module) detail::add_conv(params_, "dec.fuse1", b, 2 * b, 3, seed, idx);
    detail::add_conv(params_, "dec.up2", 4 * b, b, 3, seed, idx);
    if (cfg_.sr_module) detail::add_conv(params_, "dec.fuse2", b, 2 * b, 3, seed, idx);
    detail::add_conv(params_, "dec.out", cfg_.channels, b, 3, seed, idx, 0.5);
  }

  const GeneratorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // conv -> n_rdb residual dense blocks -> 1x1 fusion + long residual.
  ad::Var encoder_forward(Tape& t, const ad::Var& x) const {
    const std::size_t cin = params_.at("enc.first.w").value.dim(1);
    check(x.value().rank() == 3 && x.value().dim(0) == cin &&
              x.value().dim(1) == std::size_t(cfg_.lr_size) &&
              x.value().dim(2) == std::size_t(cfg_.lr_size),
          "encoder_forward: input must be (" + std::to_string(cin) + "," +
              std::to_string(cfg_.lr_size) + "," + std::to_string(cfg_.lr_size) + ")");
    ad::Var f0 = detail::conv(t, params_, "enc.first", x, 1, 1);
    ad::Var h = f0;
    for (int r = 0; r < cfg_.n_rdb; ++r) {
      const std::string prefix = "enc.rdb" + std::to_string(r);
      ad::Var block_in = h;
      std::vector<ad::Var> dense{block_in};
      for (int l = 0; l < cfg_.rdb_layers; ++l) {
        ad::Var z = dense.size() == 1 ? dense[0] : ad::concat_channels(dense);
        dense.push_back(
            ad::relu(detail::conv(t, params_, prefix + ".conv" + std::to_string(l), z, 1, 1)));
      }
      ad::Var fused = detail::conv(t, params_, prefix + ".fuse", ad::concat_channels(dense), 1, 0);
      h = ad::add(fused, block_in);
    }
    ad::Var g = detail::conv(t, params_, "enc.gff", h, 1, 0);
    return ad::add(g, f0);
  }

  // Two [conv -> shuffle x2] stages; intermediates feed the decoder.
  SrOut sr_branch_forward(Tape& t, const ad::Var& features) const {
    check(cfg_.sr_module, "sr_branch_forward: SR module disabled in this configuration");
    ad::Var s1 = ad::pixel_shuffle(ad::relu(detail::conv(t, params_, "sr.up1", features, 1, 1)), 2);
    ad::Var s2 = ad::pixel_shuffle(ad::relu(detail::conv(t, params_, "sr.up2", s1, 1, 1)), 2);
    ad::Var sp = ad::clamp01(detail::conv(t, params_, "sr.out", s2, 1, 1));
    return {sp, s1, s2};
  }

  // Mirror upsampling path; each stage concatenates the SR intermediate at
  // the matching resolution and fuses it back to base width.
  ad::Var decoder_forward(Tape& t, const ad::Var& features, const ad::Var& mid2,
                          const ad::Var& mid4) const {
    ad::Var d1 = ad::pixel_shuffle(ad::relu(detail::conv(t, params_, "dec.up1", features, 1, 1)), 2);
    if (cfg_.sr_module) {
      check(mid2.defined() && mid4.defined(), "decoder_forward: SR intermediates required");
      d1 = ad::relu(detail::conv(t, params_, "dec.fuse1", ad::concat_channels({d1, mid2}), 1, 1));
    }
    ad::Var d2 = ad::pixel_shuffle(ad::relu(detail::conv(t, params_, "dec.up2", d1, 1, 1)), 2);
    if (cfg_.sr_module)
      d2 = ad::relu(detail::conv(t, params_, "dec.fuse2", ad::concat_channels({d2, mid4}), 1, 1));
    return ad::clamp01(detail::conv(t, params_, "dec.out", d2, 1, 1));
  }

  Output forward(Tape& t, const std::vector<ad::Var>& inputs) const {
    check(!inputs.empty(), "generator forward: no inputs");
    for (const ad::Var& in : inputs)
      check(in.value().rank() == 3 && in.value().dim(0) == std::size_t(cfg_.channels) &&
                in.value().dim(1) == std::size_t(cfg_.lr_size) &&
                in.value().dim(2) == std::size_t(cfg_.lr_size),
            "generator forward: each input must be (C, lr, lr)");
    Output out;
    ad::Var feat;
    switch (cfg_.fusion) {
      case Fusion::single:
        check(inputs.size() == 1, "generator forward: single fusion takes exactly one input");
        feat = encoder_forward(t, inputs[0]);
        break;
      case Fusion::image_concat:
        check(inputs.size() == std::size_t(cfg_.n_inputs),
              "generator forward: image_concat expects exactly n_inputs views");
        feat = encoder_forward(t, inputs.size() == 1 ? inputs[0] : ad::concat_channels(inputs));
        break;
      case Fusion::feature_fuse:
      case Fusion::feature_fuse_orth: {
        std::vector<ad::Var> encoded;
        encoded.reserve(inputs.size());
        for (const ad::Var& in : inputs) encoded.push_back(encoder_forward(t, in));
        feat = ad::mean_of(encoded);
        if (cfg_.fusion == Fusion::feature_fuse_orth)
          for (const ad::Var& e : encoded)
            out.feature_blocks.push_back(ad::column_normalize(ad::feature_block(e), 1e-12));
        break;
      }
    }
    if (cfg_.sr_module) {
      SrOut sr = sr_branch_forward(t, feat);
      out.sp = sr.sp;
      out.sf = decoder_forward(t, feat, sr.mid2, sr.mid4);
    } else {
      out.sp = ad::constant(ops::bicubic_resample(inputs[0].value(), 4, 1));
      out.sf = decoder_forward(t, feat, ad::Var(), ad::Var());
    }
    return out;
  }

 private:
  GeneratorConfig cfg_;
  ParamStore params_;
};

// Four stride-2 convs with leaky activations, global pooling, affine head,
// sigmoid probability. D_f and D_p differ only in input channel count.
class Discriminator {
 public:
  Discriminator(int in_channels, int base, std::uint64_t seed)
      : in_channels_(in_channels), base_(base) {
    check(in_channels >= 1 && base >= 1, "discriminator: channel counts must be positive");
    std::uint64_t idx = 0;
    detail::add_conv(params_, "conv0", base, in_channels, 3, seed, idx);
    detail::add_conv(params_, "conv1", 2 * base, base, 3, seed, idx);
    detail::add_conv(params_, "conv2", 4 * base, 2 * base, 3, seed, idx);
    detail::add_conv(params_, "conv3", 8 * base, 4 * base, 3, seed, idx);
    detail::add_linear(params_, "head", 1, 8 * base, seed, idx);
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  ad::Var forward(Tape& t, const ad::Var& img) const {
    check(img.value().rank() == 3 && img.value().dim(0) == std::size_t(in_channels_),
          "discriminator: expected " + std::to_string(in_channels_) + " input channels, got " +
              std::to_string(img.value().rank() == 3 ? img.value().dim(0) : 0));
    ad::Var h = img;
    for (int l = 0; l < 4; ++l)
      h = ad::leaky_relu(detail::conv(t, params_, "conv" + std::to_string(l), h, 2, 1), 0.2);
    ad::Var pooled = ad::spatial_mean(h);
    return ad::sigmoid(
        ad::linear(pooled, t.param(params_.at("head.w")), t.param(params_.at("head.b"))));
  }

 private:
  int in_channels_;
  int base_;
  ParamStore params_;
};

struct EmbedderConfig {
  int channels = 1;
  int image_size = 128;
  int base = 8;
  int d1 = 32;       // hidden identity feature dimension
  int n_classes = 8;
};

// Small conv classifier over synthetic identities. The outputs of its last
// two affine layers (p1 hidden, p2 = class scores) are the identity
// features; after pre-training the weights are frozen and features()
// exposes them as constants.
class Embedder {
 public:
  Embedder(EmbedderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    check(cfg.channels >= 1 && cfg.base >= 1 && cfg.d1 >= 1 && cfg.n_classes >= 2,
          "embedder config: invalid dimensions");
    check(cfg.image_size >= 16 && cfg.image_size % 16 == 0,
          "embedder config: image size must be a positive multiple of 16");
    std::uint64_t idx = 0;
    detail::add_conv(params_, "conv0", cfg.base, cfg.channels, 3, seed, idx);
    detail::add_conv(params_, "conv1", 2 * cfg.base, cfg.base, 3, seed, idx);
    detail::add_linear(params_, "p1", cfg.d1, 32 * cfg.base, seed, idx);
    detail::add_linear(params_, "p2", cfg.n_classes, cfg.d1, seed, idx);
  }

  const EmbedderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  // Frozen identity features; requires a completed pre-training pass.
  std::pair<ad::Var, ad::Var> features(const ad::Var& img) const {
    check_runtime(trained_,
                  "identity embedder is untrained: run the pretrain-embedder command first");
    return features_impl(nullptr, img);
  }

  // Trainable class scores for the pre-training loop (the p2 features).
  ad::Var logits(Tape& t, const ad::Var& img) const { return features_impl(&t, img).second; }

 private:
  std::pair<ad::Var, ad::Var> features_impl(Tape* t, const ad::Var& img) const {
    check(img.value().rank() == 3 && img.value().dim(0) == std::size_t(cfg_.channels) &&
              img.value().dim(1) == std::size_t(cfg_.image_size) &&
              img.value().dim(2) == std::size_t(cfg_.image_size),
          "embedder: input must be (C, " + std::to_string(cfg_.image_size) + ", " +
              std::to_string(cfg_.image_size) + ")");
    auto p = [this, t](const std::string& name) {
      const Parameter& prm = params_.at(name);
      return t ? t->param(prm) : ad::constant(prm.value);
    };
    ad::Var h = ad::relu(ad::conv2d(ad::shift(img, -0.5), p("conv0.w"), p("conv0.b"), 2, 1));
    h = ad::relu(ad::conv2d(h, p("conv1.w"), p("conv1.b"), 2, 1));
    // Mean over a 4x4 grid of regions per channel (a constant averaging
    // kernel), keeping coarse face geometry that a global mean would erase.
    const std::size_t ch = h.value().dim(0);
    const std::size_t cell = h.value().dim(1) / 4;
    Tensor avg({ch, ch, cell, cell});
    const double inv = 1.0 / double(cell * cell);
    for (std::size_t o = 0; o < ch; ++o)
      for (std::size_t i = 0; i < cell * cell; ++i) avg[(o * ch + o) * cell * cell + i] = inv;
    ad::Var pooled = ad::conv2d(h, ad::constant(avg), ad::constant(Tensor({ch})), int(cell), 0);
    // L2-normalize the flattened grid and restore unit per-coordinate scale,
    // so the affine head starts with O(1) activations.
    pooled = ad::column_normalize(ad::reshape(pooled, {ch * 16, 1}), 1e-12);
    pooled = ad::reshape(ad::scale(pooled, std::sqrt(double(ch * 16))), {ch * 16});
    ad::Var p1 = ad::linear(pooled, p("p1.w"), p("p1.b"));
    ad::Var p2 = ad::linear(ad::leaky_relu(p1, 0.2), p("p2.w"), p("p2.b"));
    return {p1, p2};
  }

  EmbedderConfig cfg_;
  ParamStore params_;
  bool trained_ = false;
};

}  // namespace frontsr::model
