// Model evaluation: rank-1 identification over identity features, nested
// probe-set construction for multi-image protocols, and report generation
// (per-view or per-set-size PSNR / SSIM / rank-1 tables) from a checkpoint.
#pragma once

#include <frontsr/checkpoint.hpp>
#include <frontsr/metrics.hpp>
#include <frontsr/model.hpp>
#include <frontsr/rng.hpp>
#include <frontsr/synthdata.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/trainer.hpp>
#include <frontsr/util.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace frontsr::eval {

// ---- rank-1 identification ----------------------------------------------------------

struct Labeled {
  int identity = 0;
  Tensor data;  // feature vector or image, depending on the call
};

// Flattened identity feature: concatenation of the embedder's (p1, p2) outputs.
inline Tensor identity_feature(const model::Embedder& emb, const Tensor& img) {
  auto [p1, p2] = emb.features(ad::constant(img));
  const Tensor& a = p1.value();
  const Tensor& b = p2.value();
  Tensor f({a.size() + b.size()});
  for (std::size_t i = 0; i < a.size(); ++i) f[i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) f[a.size() + i] = b[i];
  return f;
}

// Fraction (in percent) of probes whose highest-cosine gallery match carries
// the probe's identity. Ties resolve to the earliest gallery entry.
inline double rank1_features(const std::vector<Labeled>& gallery,
                             const std::vector<Labeled>& probes) {
  check_runtime(!gallery.empty(), "rank1: empty gallery");
  check_runtime(!probes.empty(), "rank1: no probes to evaluate");
  for (std::size_t i = 0; i < gallery.size(); ++i)
    for (std::size_t j = i + 1; j < gallery.size(); ++j)
      check_runtime(gallery[i].identity != gallery[j].identity,
                    "rank1: duplicate gallery identity " + std::to_string(gallery[i].identity));

  auto norm = [](const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return std::max(std::sqrt(s), 1e-12);
  };
  std::size_t hits = 0;
  for (const Labeled& p : probes) {
    const double pn = norm(p.data);
    double best = -2.0;
    int best_id = gallery.front().identity;
    for (const Labeled& g : gallery) {
      check(g.data.same_shape(p.data), "rank1: feature dimensions differ");
      double dot = 0.0;
      for (std::size_t i = 0; i < g.data.size(); ++i) dot += g.data[i] * p.data[i];
      const double cos = dot / (norm(g.data) * pn);
      if (cos > best) {
        best = cos;
        best_id = g.identity;
      }
    }
    if (best_id == p.identity) ++hits;
  }
  return 100.0 * double(hits) / double(probes.size());
}

// Image-level rank-1: embeds gallery and probe images first.
inline double rank1(const std::vector<Labeled>& gallery_images,
                    const std::vector<Labeled>& probe_images, const model::Embedder& emb) {
  check_runtime(!gallery_images.empty(), "rank1: empty gallery");
  auto embed_all = [&emb](const std::vector<Labeled>& images) {
    std::vector<Labeled> feats;
    feats.reserve(images.size());
    for (const Labeled& im : images) feats.push_back({im.identity, identity_feature(emb, im.data)});
    return feats;
  };
  return rank1_features(embed_all(gallery_images), embed_all(probe_images));
}

// ---- probe sets -----------------------------------------------------------------------

// Nested per-identity probe draws: picks[i] holds 4 distinct sample rows for
// one identity, and probe set P_k is the first k picks of every identity, so
// P1 c P2 c P3 c P4 holds by construction.
struct ProbeSets {
  std::vector<std::size_t> pool;                                 // all qualifying rows (P0)
  std::vector<std::pair<int, std::array<std::size_t, 4>>> picks; // ascending identity order

  std::vector<std::size_t> set(int k) const {
    check(k >= 1 && k <= 4, "probe sets: set index must be in 1..4");
    std::vector<std::size_t> rows;
    rows.reserve(picks.size() * std::size_t(k));
    for (const auto& [identity, refs] : picks)
      for (int i = 0; i < k; ++i) rows.push_back(refs[std::size_t(i)]);
    return rows;
  }
};

inline ProbeSets build_probe_sets(const synth::Dataset& ds, const std::vector<std::size_t>& pool,
                                  int yaw_lo, int yaw_hi, std::uint64_t seed) {
  check(yaw_lo >= 0 && yaw_hi >= yaw_lo, "probe sets: bad yaw magnitude range");
  ProbeSets ps;
  std::map<int, std::vector<std::size_t>> per_identity;
  for (std::size_t row : pool) {
    check(row < ds.rows.size(), "probe sets: row index outside the dataset");
    const int mag = std::abs(ds.rows[row].yaw);
    if (mag < yaw_lo || mag > yaw_hi) continue;
    ps.pool.push_back(row);
    per_identity[ds.rows[row].identity].push_back(row);
  }
  std::sort(ps.pool.begin(), ps.pool.end());
  for (auto& [identity, rows] : per_identity) {
    check_runtime(rows.size() >= 4, "probe sets: identity " + std::to_string(identity) +
                                        " has only " + std::to_string(rows.size()) +
                                        " samples with |yaw| in [" + std::to_string(yaw_lo) +
                                        ", " + std::to_string(yaw_hi) + "], need 4");
    std::sort(rows.begin(), rows.end());
    Rng rng = Rng::keyed(seed, {0x9B05u, std::uint64_t(identity)});
    rng.shuffle(rows);
    std::array<std::size_t, 4> refs{rows[0], rows[1], rows[2], rows[3]};
    ps.picks.emplace_back(identity, refs);
  }
  return ps;
}

// ---- report ---------------------------------------------------------------------------

struct EvalRow {
  std::string label;  // "|yaw|" value or probe-set name
  double psnr = 0.0;
  double ssim = 0.0;
  double rank1 = 0.0;
  int count = 0;  // probes aggregated into this row
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalRow average;  // arithmetic mean over rows; count is the total
  std::string config_fingerprint;
  std::string dataset_fingerprint;
};

struct EvalOptions {
  train::Mode mode = train::Mode::single_image;
  model::Fusion fusion = model::Fusion::single;
  std::uint64_t seed = 0;  // probe-set draws (multi-image protocol)
  int yaw_lo = 30;         // qualifying |yaw| range for probe sets
  int yaw_hi = 60;
};

// Maps the sample rows of one probe (one row for single-image, i rows for the
// P_i protocol) to a synthesized frontal image.
using Frontalizer = std::function<Tensor(const std::vector<std::size_t>&)>;

namespace detail {

inline EvalRow mean_row(const std::vector<EvalRow>& rows) {
  EvalRow avg;
  avg.label = "Avg";
  for (const EvalRow& r : rows) {
    avg.psnr += r.psnr;
    avg.ssim += r.ssim;
    avg.rank1 += r.rank1;
    avg.count += r.count;
  }
  const double n = double(rows.size());
  avg.psnr /= n;
  avg.ssim /= n;
  avg.rank1 /= n;
  return avg;
}

inline void write_report(const EvalReport& rep, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  nlohmann::json j;
  j["config_fingerprint"] = rep.config_fingerprint;
  j["dataset_fingerprint"] = rep.dataset_fingerprint;
  auto row_json = [](const EvalRow& r) {
    return nlohmann::json{
        {"label", r.label}, {"count", r.count}, {"psnr", r.psnr},
        {"ssim", r.ssim},   {"rank1", r.rank1},
    };
  };
  j["rows"] = nlohmann::json::array();
  for (const EvalRow& r : rep.rows) j["rows"].push_back(row_json(r));
  j["average"] = row_json(rep.average);
  write_file_atomic(out_dir / "eval_report.json", j.dump(2) + "\n");

  std::string txt;
  txt += "view      n   psnr_db     ssim   rank1_pct\n";
  auto line = [&txt](const EvalRow& r) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-6s %4d %9.4f %8.5f %11.2f\n", r.label.c_str(), r.count,
                  r.psnr, r.ssim, r.rank1);
    txt += buf;
  };
  for (const EvalRow& r : rep.rows) line(r);
  line(rep.average);
  txt += "config_fingerprint  " + rep.config_fingerprint + "\n";
  txt += "dataset_fingerprint " + rep.dataset_fingerprint + "\n";
  write_file_atomic(out_dir / "eval_report.txt", txt);
}

// Scores one group of probes: synthesized images against their ground-truth
// frontal targets, plus rank-1 of the synthesized images against the gallery.
inline EvalRow score_group(const std::string& label,
                           const std::vector<std::pair<int, Tensor>>& synthesized,
                           const std::vector<Tensor>& targets,
                           const std::vector<Labeled>& gallery_features,
                           const model::Embedder& emb) {
  EvalRow row;
  row.label = label;
  row.count = int(synthesized.size());
  std::vector<Labeled> probe_features;
  probe_features.reserve(synthesized.size());
  for (std::size_t i = 0; i < synthesized.size(); ++i) {
    row.psnr += psnr(synthesized[i].second, targets[i]);
    row.ssim += ssim_metric(synthesized[i].second, targets[i]);
    probe_features.push_back(
        {synthesized[i].first, identity_feature(emb, synthesized[i].second)});
  }
  row.psnr /= double(synthesized.size());
  row.ssim /= double(synthesized.size());
  row.rank1 = rank1_features(gallery_features, probe_features);
  return row;
}

}  // namespace detail

// Runs the evaluation protocol with an arbitrary frontalization function:
// per-|yaw| rows in single-image mode, per-probe-set-size rows in multi-image
// mode. Writes eval_report.{json,txt} into out_dir.
inline EvalReport evaluate_frontalizer(const train::DataCache& cache, const model::Embedder& emb,
                                       const Frontalizer& frontalize, const EvalOptions& opt,
                                       const std::filesystem::path& out_dir,
                                       const std::string& config_fp,
                                       const std::vector<int>& probe_sizes = {1, 2, 3, 4}) {
  const synth::Dataset& ds = cache.dataset();
  EvalReport rep;
  rep.config_fingerprint = config_fp;
  rep.dataset_fingerprint = synth::dataset_fingerprint(ds);

  std::vector<Labeled> gallery_features;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    if (ds.rows[i].role == synth::Role::gallery)
      gallery_features.push_back({ds.rows[i].identity, identity_feature(emb, cache.sample(i).hf)});
    else if (ds.rows[i].role == synth::Role::probe)
      pool.push_back(i);
  }
  check_runtime(!gallery_features.empty(), "evaluate: dataset has no gallery images");
  check_runtime(!pool.empty(), "evaluate: dataset has no probe images");

  if (opt.mode == train::Mode::single_image) {
    // Table rows: probes grouped by |yaw|, ascending; frontal probes are the
    // gallery's near-duplicates and are not frontalization targets.
    std::map<int, std::vector<std::size_t>> by_yaw;
    for (std::size_t row : pool)
      if (ds.rows[row].yaw != 0) by_yaw[std::abs(ds.rows[row].yaw)].push_back(row);
    check_runtime(!by_yaw.empty(), "evaluate: no side-view probes in the dataset");
    for (const auto& [mag, rows] : by_yaw) {
      std::vector<std::pair<int, Tensor>> synthesized;
      std::vector<Tensor> targets;
      for (std::size_t row : rows) {
        synthesized.emplace_back(ds.rows[row].identity, frontalize({row}));
        targets.push_back(cache.sample(row).hf);
      }
      rep.rows.push_back(detail::score_group(std::to_string(mag), synthesized, targets,
                                             gallery_features, emb));
    }
  } else {
    // Probe-set protocol: P_k fuses k side views per identity; the target is
    // the identity's neutral frontal (the gallery definition).
    ProbeSets ps = build_probe_sets(ds, pool, opt.yaw_lo, opt.yaw_hi, opt.seed);
    std::map<int, Tensor> neutral_frontal;
    for (std::size_t i = 0; i < ds.rows.size(); ++i)
      if (ds.rows[i].role == synth::Role::gallery)
        neutral_frontal.emplace(ds.rows[i].identity, cache.sample(i).hf);
    for (int k : probe_sizes) {
      std::vector<std::pair<int, Tensor>> synthesized;
      std::vector<Tensor> targets;
      for (const auto& [identity, refs] : ps.picks) {
        std::vector<std::size_t> rows(refs.begin(), refs.begin() + k);
        synthesized.emplace_back(identity, frontalize(rows));
        targets.push_back(neutral_frontal.at(identity));
      }
      rep.rows.push_back(detail::score_group("P" + std::to_string(k), synthesized, targets,
                                             gallery_features, emb));
    }
  }

  rep.average = detail::mean_row(rep.rows);
  detail::write_report(rep, out_dir);
  return rep;
}

// Rebuilds the generator and embedder from a training checkpoint and runs the
// evaluation protocol against a dataset, writing the report into out_dir.
inline EvalReport evaluate_model(const std::filesystem::path& checkpoint,
                                 const synth::Dataset& ds, const EvalOptions& opt,
                                 const std::filesystem::path& out_dir) {
  const ckpt::Checkpoint c = ckpt::load(checkpoint.string());

  check_runtime(c.get("mode") == train::mode_name(opt.mode),
                "evaluate: checkpoint mode is '" + c.get("mode") + "', requested '" +
                    train::mode_name(opt.mode) + "'");
  check_runtime(c.get("gen.fusion") == model::fusion_name(opt.fusion),
                "evaluate: checkpoint fusion is '" + c.get("gen.fusion") + "', requested '" +
                    model::fusion_name(opt.fusion) + "'");
  check_runtime(c.get("dataset_fp") == synth::dataset_fingerprint(ds),
                "evaluate: dataset fingerprint mismatch; the checkpoint was trained on a "
                "different dataset");
  check_runtime(c.get("emb.trained") == "1",
                "evaluate: checkpoint's identity embedder is untrained; run pretrain-embedder");

  auto geti = [&c](const std::string& key) { return int(parse_int(c.get(key))); };
  model::GeneratorConfig gc;
  gc.channels = geti("gen.channels");
  gc.base_channels = geti("gen.base_channels");
  gc.n_rdb = geti("gen.n_rdb");
  gc.rdb_layers = geti("gen.rdb_layers");
  gc.growth = geti("gen.growth");
  gc.lr_size = geti("gen.lr_size");
  gc.hr_size = geti("gen.hr_size");
  gc.fusion = model::fusion_from_name(c.get("gen.fusion"));
  gc.n_inputs = geti("gen.n_inputs");
  gc.sr_module = c.get("gen.sr_module") == "1";

  model::EmbedderConfig ec;
  ec.channels = gc.channels;
  ec.image_size = gc.hr_size;
  ec.base = geti("emb.base");
  ec.d1 = geti("emb.d1");
  ec.n_classes = geti("emb.n_classes");

  model::Generator gen(gc, 0);
  model::Embedder emb(ec, 0);
  ckpt::load_store(c, "gen.", gen.params());
  ckpt::load_store(c, "emb.", emb.params());
  emb.mark_trained();

  // Config fingerprint: hash of every architecture/run entry the checkpoint
  // carries (its weights and optimizer state are dataset-dependent; the
  // dataset fingerprint is reported separately).
  std::string conf;
  for (const auto& [key, value] : c.config())
    if (key != "dataset_fp") conf += key + "=" + value + "\n";
  const std::string config_fp = hex16(fnv1a(conf));

  train::DataCache cache(ds);
  Frontalizer frontalize = [&gen, &cache](const std::vector<std::size_t>& rows) {
    model::Tape t;
    t.freeze(gen.params());
    std::vector<ad::Var> inputs;
    inputs.reserve(rows.size());
    for (std::size_t row : rows) inputs.push_back(ad::constant(cache.sample(row).lp));
    return gen.forward(t, inputs).sf.value();
  };

  // image_concat accepts exactly n_inputs views, so its probe-set study is a
  // single row at the trained input count; feature fusion covers P1..P4.
  std::vector<int> sizes{1, 2, 3, 4};
  if (opt.mode == train::Mode::multi_image && gc.fusion == model::Fusion::image_concat)
    sizes = {gc.n_inputs};

  return evaluate_frontalizer(cache, emb, frontalize, opt, out_dir, config_fp, sizes);
}

}  // namespace frontsr::eval
