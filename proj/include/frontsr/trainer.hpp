#pragma once
// Adversarial training loop: bias-corrected Adam over the parameter stores,
// a stepped learning-rate schedule, seeded epoch batching for single- and
// multi-image modes, the two-phase discriminator/generator update, per-epoch
// checkpoints with optimizer state, and a deterministic metrics log. Wall
// clock timings go to a separate sidecar so run artifacts stay bit-exact.

#include <frontsr/autodiff.hpp>
#include <frontsr/checkpoint.hpp>
#include <frontsr/metrics.hpp>
#include <frontsr/losses.hpp>
#include <frontsr/model.hpp>
#include <frontsr/rng.hpp>
#include <frontsr/synthdata.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace frontsr::train {

enum class Mode { single_image, multi_image };

inline const char* mode_name(Mode m) {
  return m == Mode::single_image ? "single_image" : "multi_image";
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "single_image") return Mode::single_image;
  if (s == "multi_image") return Mode::multi_image;
  check(false, "unknown training mode: '" + s + "'");
  return Mode::single_image;
}

inline std::vector<int> default_decay_epochs(Mode m) {
  return m == Mode::single_image ? std::vector<int>{10, 15} : std::vector<int>{5, 10};
}

// Adam with bias correction. Moments are kept per parameter name so they can
// be checkpointed and restored exactly.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    check(lr > 0.0 && std::isfinite(lr), "adam: learning rate must be positive");
    check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "adam: betas must be in [0,1)");
    check(eps > 0.0, "adam: epsilon must be positive");
  }

  double lr() const { return lr_; }
  void set_lr(double lr) {
    check(lr > 0.0 && std::isfinite(lr), "adam: learning rate must be positive");
    lr_ = lr;
  }
  std::uint64_t steps() const { return steps_; }

  // One update over every trainable parameter of the store. Parameters the
  // tape never saw contribute an exactly-zero gradient.
  void step(model::ParamStore& store, const model::Tape& tape) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1_, double(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, double(steps_));
    for (const std::string& name : store.names()) {
      model::Parameter& p = store.at(name);
      if (!p.trainable) continue;
      const Tensor* grad = tape.grad_of(p);
      Tensor& m = moment(m_, name, p.value.shape());
      Tensor& v = moment(v_, name, p.value.shape());
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = grad ? (*grad)[i] : 0.0;
        check_runtime(std::isfinite(g),
                      "adam: non-finite gradient for parameter '" + name + "'");
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        p.value[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  void put(ckpt::Checkpoint& c, const std::string& prefix) const {
    c.set(prefix + "steps", std::to_string(steps_));
    for (const auto& [name, t] : m_) c.add_tensor(prefix + "m." + name, t);
    for (const auto& [name, t] : v_) c.add_tensor(prefix + "v." + name, t);
  }

  void load(const ckpt::Checkpoint& c, const std::string& prefix,
            const model::ParamStore& store) {
    m_.clear();
    v_.clear();
    steps_ = std::uint64_t(parse_int(c.get(prefix + "steps")));
    for (const std::string& name : store.names()) {
      const std::string mk = prefix + "m." + name;
      const std::string vk = prefix + "v." + name;
      check_runtime(c.has_tensor(mk) == c.has_tensor(vk),
                    "checkpoint optimizer moments are inconsistent for '" + name + "'");
      if (!c.has_tensor(mk)) continue;
      check_runtime(c.tensor(mk).same_shape(store.at(name).value),
                    "checkpoint optimizer moment shape mismatch for '" + name + "'");
      m_[name] = c.tensor(mk);
      v_[name] = c.tensor(vk);
    }
  }

 private:
  static Tensor& moment(std::map<std::string, Tensor>& side, const std::string& name,
                        const Shape& shape) {
    auto it = side.find(name);
    if (it == side.end()) it = side.emplace(name, Tensor(shape)).first;
    return it->second;
  }

  double lr_, beta1_, beta2_, eps_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct TrainConfig {
  Mode mode = Mode::single_image;
  int epochs = 20;
  int batch_size = 8;
  double lr = 1e-4;
  std::vector<int> decay_epochs = {10, 15};
  double decay_factor = 0.5;
  int d_steps_per_g = 1;
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  losses::OrthVariant orth = losses::OrthVariant::srip;
  bool sr_supervision = true;
  model::GeneratorConfig gen;
  int d_base = 8;                // discriminator width
  model::EmbedderConfig emb;     // classifier head sized from the dataset
  int emb_epochs = 120;          // identity-embedder pre-training passes
  double emb_lr = 3e-3;

  void validate() const {
    gen.validate();
    check(epochs >= 1, "train config: epochs must be positive");
    check(batch_size >= 1, "train config: batch size must be positive");
    check(std::isfinite(lr) && lr > 0.0, "train config: learning rate must be positive");
    check(decay_factor > 0.0 && decay_factor <= 1.0, "train config: decay factor must be in (0,1]");
    check(d_steps_per_g >= 1, "train config: discriminator steps per generator step must be >= 1");
    check(emb_epochs >= 1 && emb_lr > 0.0, "train config: embedder pre-training settings invalid");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      check(decay_epochs[i] >= 1 && decay_epochs[i] < epochs,
            "train config: decay epochs must lie in [1, epochs)");
      check(i == 0 || decay_epochs[i] > decay_epochs[i - 1],
            "train config: decay epochs must be strictly increasing");
    }
    if (mode == Mode::single_image)
      check(gen.fusion == model::Fusion::single,
            "train config: single-image mode requires the single-input generator");
    else
      check(gen.fusion != model::Fusion::single,
            "train config: multi-image mode requires a fused generator");
    for (double w : {weights.pixel, weights.patch, weights.adv, weights.id, weights.tv, weights.orth})
      check(std::isfinite(w) && w >= 0.0, "train config: loss weights must be finite and >= 0");
    if (mode == Mode::multi_image && weights.orth > 0.0)
      check(gen.fusion == model::Fusion::feature_fuse_orth,
            "train config: the orthogonality weight needs the feature_fuse_orth generator");
    check(d_base >= 1, "train config: discriminator width must be positive");
  }
};

// Base learning rate halved (or scaled by decay_factor) once per configured
// decay epoch that has been reached; epoch indices are zero-based.
inline double lr_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int d : cfg.decay_epochs)
    if (epoch >= d) lr *= cfg.decay_factor;
  return lr;
}

// One training item is a tuple of dataset row indices: a single row in
// single-image mode, n_inputs same-identity side views in multi-image mode.
using BatchItem = std::vector<std::size_t>;
using Batch = std::vector<BatchItem>;

// Seeded batch plan for one epoch. Single-image mode shuffles every training
// row; multi-image mode draws one tuple of distinct non-frontal views per
// (identity, illumination) group. Stateless in the epoch index, so resumed
// runs see exactly the batches the uninterrupted run would have seen.
inline std::vector<Batch> epoch_batches(const synth::Dataset& ds, const TrainConfig& cfg,
                                        int epoch) {
  cfg.validate();
  std::vector<BatchItem> items;
  if (cfg.mode == Mode::single_image) {
    for (std::size_t i = 0; i < ds.rows.size(); ++i)
      if (ds.rows[i].role == synth::Role::train) items.push_back({i});
  } else {
    std::map<std::pair<int, double>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.rows.size(); ++i) {
      const synth::ManifestRow& r = ds.rows[i];
      if (r.role == synth::Role::train && r.yaw != 0)
        groups[{r.identity, r.illumination}].push_back(i);
    }
    Rng pick = Rng::keyed(cfg.seed, {0xB, std::uint64_t(epoch)});
    for (auto& [key, rows] : groups) {
      check_runtime(rows.size() >= std::size_t(cfg.gen.n_inputs),
                    "multi-image batching: identity " + std::to_string(key.first) + " has only " +
                        std::to_string(rows.size()) + " side views at illumination " +
                        format_double(key.second) + ", need " + std::to_string(cfg.gen.n_inputs));
      pick.shuffle(rows);
      items.push_back(BatchItem(rows.begin(), rows.begin() + cfg.gen.n_inputs));
    }
  }
  check_runtime(!items.empty(), "epoch batching: the dataset has no training rows");
  Rng order = Rng::keyed(cfg.seed, {0xE, std::uint64_t(epoch)});
  order.shuffle(items);

  std::vector<Batch> batches;
  for (std::size_t i = 0; i < items.size(); i += std::size_t(cfg.batch_size)) {
    const std::size_t end = std::min(items.size(), i + std::size_t(cfg.batch_size));
    batches.emplace_back(items.begin() + std::ptrdiff_t(i), items.begin() + std::ptrdiff_t(end));
  }
  return batches;
}

// Every manifest row loaded once up front; training touches images thousands
// of times, so decoding from disk per step would dominate the run.
class DataCache {
 public:
  explicit DataCache(const synth::Dataset& ds) : ds_(&ds) {
    samples_.reserve(ds.rows.size());
    for (const synth::ManifestRow& row : ds.rows) samples_.push_back(synth::load_sample(ds, row));
  }

  const synth::Dataset& dataset() const { return *ds_; }
  std::size_t size() const { return samples_.size(); }
  const synth::TrainingSample& sample(std::size_t row) const {
    check(row < samples_.size(), "data cache: row index out of range");
    return samples_[row];
  }

 private:
  const synth::Dataset* ds_;
  std::vector<synth::TrainingSample> samples_;
};

struct StepStats {
  double lr = 0.0;
  double d_f = 0.0;
  double d_p = 0.0;
  double g_total = 0.0;
  double pixel = 0.0;
  double patch = 0.0;
  double adv = 0.0;
  double id = 0.0;
  double tv = 0.0;
  double orth = 0.0;
};

struct PretrainResult {
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
};

// Supervised identity classification over the training rows; a seeded fifth
// of them is held out to measure generalization. Marks the embedder trained.
inline PretrainResult pretrain_embedder(model::Embedder& emb, const DataCache& cache,
                                        std::uint64_t seed, int epochs, double lr) {
  check(epochs >= 1 && lr > 0.0, "embedder pre-training: invalid settings");
  const synth::Dataset& ds = cache.dataset();
  std::vector<std::size_t> rows;
  std::map<int, std::size_t> label_of;
  for (std::size_t i = 0; i < ds.rows.size(); ++i)
    if (ds.rows[i].role == synth::Role::train) {
      rows.push_back(i);
      label_of.emplace(ds.rows[i].identity, 0);
    }
  std::size_t next = 0;
  for (auto& [id, label] : label_of) label = next++;
  check(std::size_t(emb.config().n_classes) == label_of.size(),
        "embedder pre-training: classifier size must match the training identities");
  check_runtime(rows.size() >= 2, "embedder pre-training: not enough training rows");

  Rng split = Rng::keyed(seed, {0xEB, 0x5});
  split.shuffle(rows);
  const std::size_t n_holdout = std::max<std::size_t>(1, rows.size() / 5);
  std::vector<std::size_t> holdout(rows.begin(), rows.begin() + std::ptrdiff_t(n_holdout));
  std::vector<std::size_t> fit(rows.begin() + std::ptrdiff_t(n_holdout), rows.end());

  Adam opt(lr);
  for (int e = 0; e < epochs; ++e) {
    Rng order = Rng::keyed(seed, {0xEB, std::uint64_t(e) + 16});
    order.shuffle(fit);
    for (std::size_t i = 0; i < fit.size(); i += 8) {
      const std::size_t end = std::min(fit.size(), i + 8);
      model::Tape t;
      std::vector<ad::Var> terms;
      for (std::size_t j = i; j < end; ++j) {
        const synth::TrainingSample& s = cache.sample(fit[j]);
        terms.push_back(ad::softmax_ce(emb.logits(t, ad::constant(s.hp)), label_of.at(s.identity)));
      }
      ad::backward(ad::mean_of(terms));
      opt.step(emb.params(), t);
    }
  }

  auto accuracy = [&](const std::vector<std::size_t>& subset) {
    std::size_t hits = 0;
    for (std::size_t row : subset) {
      const synth::TrainingSample& s = cache.sample(row);
      model::Tape t;
      const ad::Var out = emb.logits(t, ad::constant(s.hp));
      const Tensor& logit = out.value();
      std::size_t best = 0;
      for (std::size_t k = 1; k < logit.size(); ++k)
        if (logit[k] > logit[best]) best = k;
      if (best == label_of.at(s.identity)) ++hits;
    }
    return double(hits) / double(subset.size());
  };
  PretrainResult res;
  res.train_accuracy = accuracy(fit);
  res.holdout_accuracy = accuracy(holdout);
  emb.mark_trained();
  return res;
}

class Trainer {
 public:
  Trainer(TrainConfig cfg, const synth::Dataset& ds) : cfg_(std::move(cfg)), cache_(ds) {
    cfg_.validate();
    check(ds.channels == cfg_.gen.channels,
          "trainer: generator channel count must match the dataset");
    check(cfg_.gen.hr_size == synth::kCanvas && cfg_.gen.lr_size == synth::kLrSize,
          "trainer: generator geometry must match the dataset images");

    std::map<int, std::size_t> train_ids;
    for (const synth::ManifestRow& r : ds.rows)
      if (r.role == synth::Role::train) train_ids.emplace(r.identity, 0);
    check(train_ids.size() >= 2, "trainer: need at least two training identities");

    cfg_.emb.channels = cfg_.gen.channels;
    cfg_.emb.image_size = cfg_.gen.hr_size;
    cfg_.emb.n_classes = int(train_ids.size());

    gen_ = std::make_unique<model::Generator>(cfg_.gen, sub_seed(1));
    df_ = std::make_unique<model::Discriminator>(cfg_.gen.channels, cfg_.d_base, sub_seed(2));
    dp_ = std::make_unique<model::Discriminator>(3 * cfg_.gen.channels, cfg_.d_base, sub_seed(3));
    emb_ = std::make_unique<model::Embedder>(cfg_.emb, sub_seed(4));
    opt_g_ = std::make_unique<Adam>(cfg_.lr);
    opt_df_ = std::make_unique<Adam>(cfg_.lr);
    opt_dp_ = std::make_unique<Adam>(cfg_.lr);

    dataset_fp_ = synth::dataset_fingerprint(ds);
  }

  const TrainConfig& config() const { return cfg_; }
  const DataCache& cache() const { return cache_; }
  model::Generator& generator() { return *gen_; }
  model::Discriminator& disc_frontal() { return *df_; }
  model::Discriminator& disc_parsing() { return *dp_; }
  model::Embedder& embedder() { return *emb_; }
  Adam& opt_g() { return *opt_g_; }
  Adam& opt_df() { return *opt_df_; }
  Adam& opt_dp() { return *opt_dp_; }
  int epochs_completed() const { return epochs_completed_; }
  const std::string& dataset_fingerprint() const { return dataset_fp_; }

  void set_lr_for_epoch(int epoch) {
    const double lr = lr_at(cfg_, epoch);
    opt_g_->set_lr(lr);
    opt_df_->set_lr(lr);
    opt_dp_->set_lr(lr);
  }

  // Both discriminators against the current (frozen) generator; fakes are
  // detached inside the loss, so no gradient can reach generator weights.
  void discriminator_phase(const Batch& batch, StepStats& stats, int batch_index) {
    check(!batch.empty(), "discriminator phase: empty batch");
    model::Tape t;
    t.freeze(gen_->params());
    t.freeze(emb_->params());
    std::vector<ad::Var> reals_f, fakes_f, reals_p, fakes_p;
    for (const BatchItem& item : batch) {
      const synth::TrainingSample& s0 = cache_.sample(item.at(0));
      model::Generator::Output out = gen_->forward(t, item_inputs(item));
      ad::Var hf = ad::constant(s0.hf);
      reals_f.push_back(hf);
      fakes_f.push_back(out.sf);
      reals_p.push_back(parse_stack(hf, s0.masks));
      fakes_p.push_back(parse_stack(out.sf, s0.masks));
    }
    ad::Var loss_f = losses::adversarial_d_loss(
        [&](const ad::Var& x) { return df_->forward(t, x); }, reals_f, fakes_f);
    ad::Var loss_p = losses::adversarial_d_loss(
        [&](const ad::Var& x) { return dp_->forward(t, x); }, reals_p, fakes_p);
    stats.d_f = loss_f.scalar();
    stats.d_p = loss_p.scalar();
    require_finite(stats.d_f, "d_f", batch_index);
    require_finite(stats.d_p, "d_p", batch_index);
    ad::backward(ad::add(loss_f, loss_p));
    opt_df_->step(df_->params(), t);
    opt_dp_->step(dp_->params(), t);
  }

  // Full weighted generator objective with both discriminators frozen.
  // Components with zero weight are neither built nor reported.
  void generator_phase(const Batch& batch, StepStats& stats, int batch_index) {
    check(!batch.empty(), "generator phase: empty batch");
    const losses::LossWeights& w = cfg_.weights;
    const bool with_orth =
        cfg_.gen.fusion == model::Fusion::feature_fuse_orth && w.orth > 0.0;
    model::Tape t;
    t.freeze(df_->params());
    t.freeze(dp_->params());

    std::vector<ad::Var> pixels, patches, ids, tvs, orths, fakes_f, fakes_p;
    for (const BatchItem& item : batch) {
      const synth::TrainingSample& s0 = cache_.sample(item.at(0));
      model::Generator::Output out = gen_->forward(t, item_inputs(item));
      ad::Var hf = ad::constant(s0.hf);
      if (w.pixel > 0.0) pixels.push_back(pixel_term(item, out, hf));
      if (w.patch > 0.0) patches.push_back(losses::patch_loss(out.sf, hf));
      if (w.id > 0.0) ids.push_back(losses::identity_loss(*emb_, out.sf, hf));
      if (w.tv > 0.0) tvs.push_back(losses::tv_loss(out.sf));
      if (with_orth) orths.push_back(losses::orthogonal_loss(out.feature_blocks, cfg_.orth));
      if (w.adv > 0.0) {
        fakes_f.push_back(out.sf);
        fakes_p.push_back(parse_stack(out.sf, s0.masks));
      }
    }

    losses::LossComponents c;
    if (!pixels.empty()) c.pixel = ad::mean_of(pixels);
    if (!patches.empty()) c.patch = ad::mean_of(patches);
    if (!ids.empty()) c.id = ad::mean_of(ids);
    if (!tvs.empty()) c.tv = ad::mean_of(tvs);
    if (!orths.empty()) c.orth = ad::mean_of(orths);
    if (!fakes_f.empty())
      c.adv = ad::add(losses::adversarial_g_loss(
                          [&](const ad::Var& x) { return df_->forward(t, x); }, fakes_f),
                      losses::adversarial_g_loss(
                          [&](const ad::Var& x) { return dp_->forward(t, x); }, fakes_p));

    stats.pixel = report(c.pixel, "pixel", batch_index);
    stats.patch = report(c.patch, "patch", batch_index);
    stats.adv = report(c.adv, "adv", batch_index);
    stats.id = report(c.id, "id", batch_index);
    stats.tv = report(c.tv, "tv", batch_index);
    stats.orth = report(c.orth, "orth", batch_index);

    ad::Var total =
        losses::total_g_loss(w, c, cfg_.gen.fusion == model::Fusion::feature_fuse_orth);
    stats.g_total = total.scalar();
    require_finite(stats.g_total, "g_total", batch_index);
    ad::backward(total);
    opt_g_->step(gen_->params(), t);
    stats.lr = opt_g_->lr();
  }

  StepStats train_step(const Batch& batch, int epoch, int batch_index) {
    (void)epoch;
    StepStats stats;
    for (int k = 0; k < cfg_.d_steps_per_g; ++k) discriminator_phase(batch, stats, batch_index);
    generator_phase(batch, stats, batch_index);
    return stats;
  }

  void save_checkpoint(const std::filesystem::path& file, int epochs_completed) const {
    ckpt::Checkpoint c;
    c.set("mode", mode_name(cfg_.mode));
    c.set("epochs_completed", std::to_string(epochs_completed));
    c.set("seed", std::to_string(cfg_.seed));
    c.set("epochs", std::to_string(cfg_.epochs));
    c.set("batch_size", std::to_string(cfg_.batch_size));
    c.set("lr", format_double(cfg_.lr));
    c.set("decay_factor", format_double(cfg_.decay_factor));
    c.set("decay_epochs", join_ints(cfg_.decay_epochs));
    c.set("d_steps_per_g", std::to_string(cfg_.d_steps_per_g));
    c.set("sr_supervision", cfg_.sr_supervision ? "1" : "0");
    c.set("orth_variant", cfg_.orth == losses::OrthVariant::srip ? "srip" : "literal");
    c.set("w.pixel", format_double(cfg_.weights.pixel));
    c.set("w.patch", format_double(cfg_.weights.patch));
    c.set("w.adv", format_double(cfg_.weights.adv));
    c.set("w.id", format_double(cfg_.weights.id));
    c.set("w.tv", format_double(cfg_.weights.tv));
    c.set("w.orth", format_double(cfg_.weights.orth));
    c.set("gen.channels", std::to_string(cfg_.gen.channels));
    c.set("gen.base_channels", std::to_string(cfg_.gen.base_channels));
    c.set("gen.n_rdb", std::to_string(cfg_.gen.n_rdb));
    c.set("gen.rdb_layers", std::to_string(cfg_.gen.rdb_layers));
    c.set("gen.growth", std::to_string(cfg_.gen.growth));
    c.set("gen.lr_size", std::to_string(cfg_.gen.lr_size));
    c.set("gen.hr_size", std::to_string(cfg_.gen.hr_size));
    c.set("gen.fusion", model::fusion_name(cfg_.gen.fusion));
    c.set("gen.n_inputs", std::to_string(cfg_.gen.n_inputs));
    c.set("gen.sr_module", cfg_.gen.sr_module ? "1" : "0");
    c.set("d_base", std::to_string(cfg_.d_base));
    c.set("emb.base", std::to_string(cfg_.emb.base));
    c.set("emb.d1", std::to_string(cfg_.emb.d1));
    c.set("emb.n_classes", std::to_string(cfg_.emb.n_classes));
    c.set("emb.trained", emb_->trained() ? "1" : "0");
    c.set("dataset_fp", dataset_fp_);
    ckpt::put_store(c, "gen.", gen_->params());
    ckpt::put_store(c, "df.", df_->params());
    ckpt::put_store(c, "dp.", dp_->params());
    ckpt::put_store(c, "emb.", emb_->params());
    opt_g_->put(c, "opt.g.");
    opt_df_->put(c, "opt.df.");
    opt_dp_->put(c, "opt.dp.");
    ckpt::save(c, file.string());
  }

  void load_checkpoint(const std::filesystem::path& file) {
    ckpt::Checkpoint c = ckpt::load(file.string());
    auto expect = [&c](const std::string& key, const std::string& want) {
      check_runtime(c.get(key) == want, "checkpoint mismatch for '" + key + "': file has '" +
                                            c.get(key) + "', run is configured with '" + want +
                                            "'");
    };
    expect("mode", mode_name(cfg_.mode));
    expect("gen.channels", std::to_string(cfg_.gen.channels));
    expect("gen.base_channels", std::to_string(cfg_.gen.base_channels));
    expect("gen.n_rdb", std::to_string(cfg_.gen.n_rdb));
    expect("gen.rdb_layers", std::to_string(cfg_.gen.rdb_layers));
    expect("gen.growth", std::to_string(cfg_.gen.growth));
    expect("gen.lr_size", std::to_string(cfg_.gen.lr_size));
    expect("gen.hr_size", std::to_string(cfg_.gen.hr_size));
    expect("gen.fusion", model::fusion_name(cfg_.gen.fusion));
    expect("gen.n_inputs", std::to_string(cfg_.gen.n_inputs));
    expect("gen.sr_module", cfg_.gen.sr_module ? "1" : "0");
    expect("d_base", std::to_string(cfg_.d_base));
    expect("emb.base", std::to_string(cfg_.emb.base));
    expect("emb.d1", std::to_string(cfg_.emb.d1));
    expect("emb.n_classes", std::to_string(cfg_.emb.n_classes));
    check_runtime(c.get("dataset_fp") == dataset_fp_,
                  "checkpoint was trained on a different dataset (fingerprint mismatch)");
    ckpt::load_store(c, "gen.", gen_->params());
    ckpt::load_store(c, "df.", df_->params());
    ckpt::load_store(c, "dp.", dp_->params());
    ckpt::load_store(c, "emb.", emb_->params());
    if (c.get("emb.trained") == "1") emb_->mark_trained();
    opt_g_->load(c, "opt.g.", gen_->params());
    opt_df_->load(c, "opt.df.", df_->params());
    opt_dp_->load(c, "opt.dp.", dp_->params());
    epochs_completed_ = int(parse_int(c.get("epochs_completed")));
  }

  // Full run (or continuation after load_checkpoint). Writes per-epoch
  // checkpoints plus a deterministic metrics log; wall-clock timings go to a
  // Up to 16 held-out probes for the per-epoch eval metrics: single side
  // views in single-image mode, the first n_inputs side views per (identity,
  // illumination) group in multi-image mode. Deterministic by construction.
  std::vector<std::vector<std::size_t>> heldout_slice() const {
    const synth::Dataset& ds = cache_.dataset();
    std::vector<std::vector<std::size_t>> tuples;
    if (cfg_.mode == Mode::single_image) {
      for (std::size_t i = 0; i < ds.rows.size(); ++i)
        if (ds.rows[i].role == synth::Role::probe && ds.rows[i].yaw != 0) tuples.push_back({i});
    } else {
      std::map<std::pair<int, double>, std::vector<std::size_t>> groups;
      for (std::size_t i = 0; i < ds.rows.size(); ++i) {
        const synth::ManifestRow& r = ds.rows[i];
        if (r.role == synth::Role::probe && r.yaw != 0)
          groups[{r.identity, r.illumination}].push_back(i);
      }
      for (auto& [key, rows] : groups)
        if (rows.size() >= std::size_t(cfg_.gen.n_inputs))
          tuples.emplace_back(rows.begin(), rows.begin() + cfg_.gen.n_inputs);
    }
    if (tuples.size() > 16) {  // evenly strided cap keeps epochs cheap
      std::vector<std::vector<std::size_t>> kept;
      const std::size_t stride = (tuples.size() + 15) / 16;
      for (std::size_t i = 0; i < tuples.size(); i += stride) kept.push_back(tuples[i]);
      tuples.swap(kept);
    }
    return tuples;
  }

  // Mean PSNR/SSIM of frontalized held-out probes against their ground-truth
  // frontal targets, with the current generator weights held fixed.
  std::pair<double, double> heldout_eval() const {
    const std::vector<std::vector<std::size_t>> tuples = heldout_slice();
    if (tuples.empty()) return {0.0, 0.0};
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const std::vector<std::size_t>& rows : tuples) {
      model::Tape t;
      t.freeze(gen_->params());
      std::vector<ad::Var> inputs;
      inputs.reserve(rows.size());
      for (std::size_t row : rows) inputs.push_back(ad::constant(cache_.sample(row).lp));
      const ad::Var sf = gen_->forward(t, inputs).sf;
      const Tensor& target = cache_.sample(rows.front()).hf;
      psnr_sum += eval::psnr(sf.value(), target);
      ssim_sum += eval::ssim_metric(sf.value(), target);
    }
    return {psnr_sum / double(tuples.size()), ssim_sum / double(tuples.size())};
  }

  // separate sidecar so the metrics bytes stay reproducible.
  void train(const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    if (!emb_->trained())
      pretrain_embedder(*emb_, cache_, cfg_.seed, cfg_.emb_epochs, cfg_.emb_lr);

    std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::app);
    std::ofstream timing(out_dir / "timing.log", std::ios::app);
    check_runtime(metrics.good() && timing.good(), "trainer: cannot open run logs for writing");

    if (epochs_completed_ == 0) save_checkpoint(out_dir / "ckpt_init.bin", 0);
    for (int epoch = epochs_completed_; epoch < cfg_.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      set_lr_for_epoch(epoch);
      const std::vector<Batch> batches = epoch_batches(cache_.dataset(), cfg_, epoch);
      double pixel_sum = 0.0, total_sum = 0.0, df_sum = 0.0, dp_sum = 0.0;
      for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const StepStats st = train_step(batches[bi], epoch, int(bi));
        metrics << step_line(epoch, bi, st) << "\n";
        pixel_sum += st.pixel;
        total_sum += st.g_total;
        df_sum += st.d_f;
        dp_sum += st.d_p;
      }
      epochs_completed_ = epoch + 1;
      char name[24];
      std::snprintf(name, sizeof name, "ckpt_%04d.bin", epoch);
      save_checkpoint(out_dir / name, epochs_completed_);
      const double n = double(batches.size());
      const auto [eval_psnr, eval_ssim] = heldout_eval();
      metrics << "{\"epoch\":" << epoch << ",\"summary\":true,\"steps\":" << batches.size()
              << ",\"pixel_avg\":" << format_double(pixel_sum / n)
              << ",\"g_total_avg\":" << format_double(total_sum / n)
              << ",\"d_f_avg\":" << format_double(df_sum / n)
              << ",\"d_p_avg\":" << format_double(dp_sum / n)
              << ",\"eval_psnr\":" << format_double(eval_psnr)
              << ",\"eval_ssim\":" << format_double(eval_ssim) << "}\n";
      metrics.flush();
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      timing << "epoch " << epoch << ": " << format_fixed(secs, 3) << " s\n";
      timing.flush();
    }
  }

 private:
  std::uint64_t sub_seed(std::uint64_t tag) const {
    return Rng::keyed(cfg_.seed, {0x5EED, tag}).next_u64();
  }

  static std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  }

  std::vector<ad::Var> item_inputs(const BatchItem& item) const {
    check(!item.empty(), "training batch item is empty");
    std::vector<ad::Var> inputs;
    inputs.reserve(item.size());
    for (std::size_t row : item) inputs.push_back(ad::constant(cache_.sample(row).lp));
    return inputs;
  }

  // The three parsing regions of one image stacked along channels; this is
  // the parsing discriminator's input.
  static ad::Var parse_stack(const ad::Var& img, const synth::ParsingMasks& m) {
    return ad::concat_channels(
        {ad::masked(img, m.skin), ad::masked(img, m.key), ad::masked(img, m.hair)});
  }

  // L1 over the frontal pair plus, when the SR branch is supervised, the
  // side-view pair against the tuple's pixel-wise mean HR side view.
  ad::Var pixel_term(const BatchItem& item, const model::Generator::Output& out,
                     const ad::Var& hf) const {
    const synth::TrainingSample& s0 = cache_.sample(item.at(0));
    if (cfg_.sr_supervision && cfg_.gen.sr_module) {
      if (item.size() == 1) return losses::pixel_loss(ad::constant(s0.hp), out.sp, hf, out.sf);
      Tensor mean_hp = s0.hp;
      for (std::size_t k = 1; k < item.size(); ++k) {
        const Tensor& hp = cache_.sample(item[k]).hp;
        for (std::size_t i = 0; i < mean_hp.size(); ++i) mean_hp[i] += hp[i];
      }
      for (std::size_t i = 0; i < mean_hp.size(); ++i) mean_hp[i] /= double(item.size());
      return losses::pixel_loss(ad::constant(mean_hp), out.sp, hf, out.sf);
    }
    const double grid = double(s0.hf.dim(1) * s0.hf.dim(2));
    return ad::scale(ad::sum(ad::abs(ad::sub(hf, out.sf))), 1.0 / grid);
  }

  static void require_finite(double v, const char* component, int batch_index) {
    check_runtime(std::isfinite(v), std::string("non-finite loss component '") + component +
                                        "' at batch " + std::to_string(batch_index));
  }

  static double report(const ad::Var& v, const char* component, int batch_index) {
    if (!v.defined()) return 0.0;
    const double s = v.scalar();
    require_finite(s, component, batch_index);
    return s;
  }

  std::string step_line(int epoch, std::size_t step, const StepStats& st) const {
    std::string s = "{\"epoch\":" + std::to_string(epoch) + ",\"step\":" + std::to_string(step) +
                    ",\"lr\":" + format_double(st.lr);
    const std::pair<const char*, double> fields[] = {
        {"d_f", st.d_f}, {"d_p", st.d_p}, {"g_total", st.g_total}, {"pixel", st.pixel},
        {"patch", st.patch}, {"adv", st.adv}, {"id", st.id}, {"tv", st.tv}, {"orth", st.orth}};
    for (const auto& [k, v] : fields) s += ",\"" + std::string(k) + "\":" + format_double(v);
    return s + "}";
  }

  TrainConfig cfg_;
  DataCache cache_;
  std::unique_ptr<model::Generator> gen_;
  std::unique_ptr<model::Discriminator> df_, dp_;
  std::unique_ptr<model::Embedder> emb_;
  std::unique_ptr<Adam> opt_g_, opt_df_, opt_dp_;
  int epochs_completed_ = 0;
  std::string dataset_fp_;
};

}  // namespace frontsr::train
