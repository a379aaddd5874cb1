#pragma once

// Procedural multi-pose face-like dataset. A seeded parameter vector defines
// each identity; a deterministic rasterizer renders it at yaw angles
// {0, ±15, ±30, ±45, ±60} under a scalar illumination; parsing masks (skin /
// key-points / hairline) come from the same frontal geometry. Training pairs
// couple an HR side view with the HR frontal view and the bicubic ×4
// downsample of the side view. Datasets are written as 8-bit image files plus
// a versioned tab-separated manifest.
//
// Determinism: the renderer uses only +,-,*,/ and sqrt (all IEEE-exact), a
// hardcoded table of correctly rounded cos/sin values for the supported yaws,
// and the project's counter-based generator — identical bytes on every
// platform. Negative yaws are rendered as the horizontal mirror of the
// positive yaw, so opposite views mirror each other bit-exactly.

#include <frontsr/image_io.hpp>
#include <frontsr/kernels.hpp>
#include <frontsr/rng.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace frontsr::synth {

inline constexpr int kCanvas = 128;
inline constexpr int kLrSize = 32;

inline bool yaw_supported(int yaw) {
  const int a = yaw < 0 ? -yaw : yaw;
  return a == 0 || a == 15 || a == 30 || a == 45 || a == 60;
}

namespace detail {

struct YawTrig {
  double c, s;
};

// Correctly rounded doubles of cos/sin at the supported angles; hardcoded so
// rendered bytes do not depend on the platform's libm.
inline YawTrig yaw_trig(int absyaw) {
  switch (absyaw) {
    case 0: return {1.0, 0.0};
    case 15: return {0.9659258262890683, 0.25881904510252074};
    case 30: return {0.8660254037844386, 0.5};
    case 45: return {0.7071067811865476, 0.7071067811865476};
    case 60: return {0.5, 0.8660254037844386};
  }
  check(false, "unsupported yaw: " + std::to_string(absyaw));
  return {};
}

inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

// ~1px antialiased coverage of an axis-aligned ellipse centered at the origin.
inline double cov_ellipse(double dx, double dy, double rx, double ry) {
  const double q = (dx / rx) * (dx / rx) + (dy / ry) * (dy / ry);
  const double r = std::sqrt(q);
  const double k = rx < ry ? rx : ry;
  return std::clamp(0.5 + (1.0 - r) * k, 0.0, 1.0);
}

// Coverage of the half-plane {d >= 0} with a 1px feather.
inline double cov_band(double d) { return std::clamp(0.5 + d, 0.0, 1.0); }

}  // namespace detail

struct SyntheticIdentity {
  int id = 0;
  double face_rx = 0.0;     // head ellipse semi-axis, px
  double face_ry = 0.0;     // head ellipse semi-axis, px
  double eye_dx = 0.0;      // eye offset from the midline, fraction of face_rx
  double eye_r = 0.0;       // eye radius, px
  double nose_len = 0.0;    // nose length, fraction of face_ry
  double mouth_w = 0.0;     // mouth half-width, fraction of face_rx
  double mouth_curve = 0.0; // corner displacement, px (negative = frown)
  double skin = 0.0;        // base face intensity
  double hair_frac = 0.0;   // hair band covers dy < -hair_frac * face_ry
};

inline SyntheticIdentity make_identity(std::uint64_t seed, int id) {
  check(id >= 0, "identity id must be non-negative");
  Rng rng = Rng::keyed(seed, {0x1d, std::uint64_t(id)});
  SyntheticIdentity p;
  p.id = id;
  p.face_rx = rng.uniform(30.0, 40.0);
  p.face_ry = rng.uniform(44.0, 56.0);
  p.eye_dx = rng.uniform(0.36, 0.52);
  p.eye_r = rng.uniform(2.8, 4.6);
  p.nose_len = rng.uniform(0.18, 0.30);
  p.mouth_w = rng.uniform(0.34, 0.55);
  p.mouth_curve = rng.uniform(-3.0, 3.0);
  p.skin = rng.uniform(0.5, 0.8);
  p.hair_frac = rng.uniform(0.35, 0.55);
  return p;
}

// Deterministic rasterization of one identity at one pose. Yaw is modeled as
// horizontal foreshortening about the face midline (x' = x cos yaw) plus a
// projection shift proportional to each component's depth (the nose most),
// with far-side eye/brow occlusion beyond ±45°. Illumination scales every
// intensity, background included.
inline Tensor render_pose(const SyntheticIdentity& p, int yaw, double illumination,
                          int channels = 1) {
  check(yaw_supported(yaw),
        "unsupported yaw: " + std::to_string(yaw) + " (supported: 0, +/-15, +/-30, +/-45, +/-60)");
  check(illumination >= 0.6 && illumination <= 1.0, "illumination must lie in [0.6, 1.0]");
  check(channels == 1 || channels == 3, "render_pose: channels must be 1 or 3");

  if (yaw < 0) {
    Tensor pos = render_pose(p, -yaw, illumination, channels);
    Tensor out(pos.shape());
    const std::size_t C = pos.dim(0), H = pos.dim(1), W = pos.dim(2);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) out.at(c, h, w) = pos.at(c, h, W - 1 - w);
    return out;
  }

  const auto [cth, sth] = detail::yaw_trig(yaw);
  const bool occlude_far = yaw > 45;  // far-side components hidden at 60°
  const double cx = 64.0, cy = 64.0;

  // frontal-space geometry (px)
  const double rx = p.face_rx, ry = p.face_ry;
  const double eye_u = p.eye_dx * rx;
  const double eye_y = -0.22 * ry;
  const double brow_y = eye_y - 0.10 * ry;
  const double nose_y0 = -0.06 * ry;
  const double nose_y1 = nose_y0 + p.nose_len * ry;
  const double mouth_y = 0.45 * ry;
  const double mouth_hw = p.mouth_w * rx;

  // projected x-centers: u' = u cos(yaw) + depth sin(yaw)
  const double z_eye = 0.02 * rx, z_nose = 0.16 * rx, z_mouth = 0.06 * rx;
  const double eye_l = -eye_u * cth + z_eye * sth;
  const double eye_r_u = eye_u * cth + z_eye * sth;
  const double nose_u = z_nose * sth;
  const double mouth_u = z_mouth * sth;

  // foreshortened extents
  const double head_rx = rx * cth;
  const double eye_rx = p.eye_r * cth;
  const double brow_hw = (p.eye_r + 1.8) * cth;
  const double nose_hw = 2.2 * cth;
  const double mouth_hw_p = mouth_hw * cth;
  const double tip_rx = 3.0 * cth;

  // palette
  const double bg = 0.08;
  const double skin = p.skin;
  const double hair = 0.05 + 0.25 * p.skin;
  const double eye_col = 0.12;
  const double brow_col = 0.16;
  const double nose_col = 0.82 * p.skin;
  const double tip_col = 0.74 * p.skin;
  const double mouth_col = 0.30;

  Tensor gray({1, std::size_t(kCanvas), std::size_t(kCanvas)});
  for (int h = 0; h < kCanvas; ++h) {
    const double dy = (double(h) + 0.5) - cy;
    for (int w = 0; w < kCanvas; ++w) {
      const double dx = (double(w) + 0.5) - cx;
      double v = bg;

      const double c_head = detail::cov_ellipse(dx, dy, head_rx, ry);
      v = detail::lerp(v, skin, c_head);

      const double c_hair = std::min(c_head, detail::cov_band(-(dy + p.hair_frac * ry)));
      v = detail::lerp(v, hair, c_hair);

      if (!occlude_far) {
        const double c_bl = std::min(
            c_head, detail::cov_band(brow_hw - std::fabs(dx - eye_l)) *
                        detail::cov_band(1.1 - std::fabs(dy - brow_y)));
        v = detail::lerp(v, brow_col, c_bl);
        const double c_el = std::min(c_head, detail::cov_ellipse(dx - eye_l, dy - eye_y, eye_rx,
                                                                 p.eye_r));
        v = detail::lerp(v, eye_col, c_el);
      }
      const double c_br = std::min(c_head, detail::cov_band(brow_hw - std::fabs(dx - eye_r_u)) *
                                               detail::cov_band(1.1 - std::fabs(dy - brow_y)));
      v = detail::lerp(v, brow_col, c_br);
      const double c_er =
          std::min(c_head, detail::cov_ellipse(dx - eye_r_u, dy - eye_y, eye_rx, p.eye_r));
      v = detail::lerp(v, eye_col, c_er);

      const double c_nose =
          std::min(c_head, detail::cov_band(nose_hw - std::fabs(dx - nose_u)) *
                               detail::cov_band(dy - nose_y0) * detail::cov_band(nose_y1 - dy));
      v = detail::lerp(v, nose_col, c_nose);
      const double c_tip =
          std::min(c_head, detail::cov_ellipse(dx - nose_u, dy - nose_y1, tip_rx, 2.4));
      v = detail::lerp(v, tip_col, c_tip);

      const double uu = (dx - mouth_u) / mouth_hw_p;
      const double mouth_mid = mouth_y + p.mouth_curve * (uu * uu);
      const double c_mouth =
          std::min(c_head, detail::cov_band(1.9 - std::fabs(dy - mouth_mid)) *
                               detail::cov_band(mouth_hw_p - std::fabs(dx - mouth_u)));
      v = detail::lerp(v, mouth_col, c_mouth);

      gray.at(0, std::size_t(h), std::size_t(w)) = v * illumination;
    }
  }
  if (channels == 1) return gray;

  // simple fixed tint for color mode
  Tensor rgb({3, std::size_t(kCanvas), std::size_t(kCanvas)});
  const double gains[3] = {1.0, 0.9, 0.78};
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < gray.size(); ++i)
      rgb[std::size_t(c) * gray.size() + i] = gains[c] * gray[i];
  return rgb;
}

struct ParsingMasks {
  Tensor skin;  // head interior minus the hair band
  Tensor key;   // eyes, brows, nose, lips bounding regions
  Tensor hair;  // top hair band
};

// Binary masks from the frontal geometry (yaw 0). Key-point regions are
// clipped to the head, so key ⊆ skin ∪ hair and skin ∩ hair = ∅.
inline ParsingMasks synth_parsing_masks(const SyntheticIdentity& p) {
  const double cx = 64.0, cy = 64.0;
  const double rx = p.face_rx, ry = p.face_ry;
  const double eye_u = p.eye_dx * rx;
  const double eye_y = -0.22 * ry;
  const double brow_y = eye_y - 0.10 * ry;
  const double nose_y0 = -0.06 * ry;
  const double nose_y1 = nose_y0 + p.nose_len * ry;
  const double mouth_y = 0.45 * ry;
  const double mouth_hw = p.mouth_w * rx;

  ParsingMasks m;
  m.skin = Tensor({1, std::size_t(kCanvas), std::size_t(kCanvas)});
  m.key = Tensor(m.skin.shape());
  m.hair = Tensor(m.skin.shape());
  for (int h = 0; h < kCanvas; ++h) {
    const double dy = (double(h) + 0.5) - cy;
    for (int w = 0; w < kCanvas; ++w) {
      const double dx = (double(w) + 0.5) - cx;
      const double q = (dx / rx) * (dx / rx) + (dy / ry) * (dy / ry);
      const bool head = q <= 1.0;
      const bool in_hair = head && dy < -p.hair_frac * ry;
      const double er = p.eye_r + 2.0;
      const bool eyes = (dx - eye_u) * (dx - eye_u) + (dy - eye_y) * (dy - eye_y) <= er * er ||
                        (dx + eye_u) * (dx + eye_u) + (dy - eye_y) * (dy - eye_y) <= er * er;
      const bool brows = (std::fabs(dx - eye_u) <= p.eye_r + 2.5 ||
                          std::fabs(dx + eye_u) <= p.eye_r + 2.5) &&
                         std::fabs(dy - brow_y) <= 2.2;
      const bool nose = std::fabs(dx) <= 3.2 && dy >= nose_y0 - 1.0 && dy <= nose_y1 + 2.5;
      const double uu = mouth_hw > 0.0 ? dx / mouth_hw : 0.0;
      const bool lips = std::fabs(dx) <= mouth_hw + 2.0 &&
                        std::fabs(dy - (mouth_y + p.mouth_curve * uu * uu)) <= 3.4;
      m.skin.at(0, std::size_t(h), std::size_t(w)) = (head && !in_hair) ? 1.0 : 0.0;
      m.hair.at(0, std::size_t(h), std::size_t(w)) = in_hair ? 1.0 : 0.0;
      m.key.at(0, std::size_t(h), std::size_t(w)) =
          (head && (eyes || brows || nose || lips)) ? 1.0 : 0.0;
    }
  }
  return m;
}

struct TrainingSample {
  Tensor lp;  // LR side view (C, 32, 32)
  Tensor hp;  // HR side view (C, 128, 128)
  Tensor hf;  // HR frontal view (C, 128, 128)
  ParsingMasks masks;
  int identity = 0;
  int yaw = 0;
  double illumination = 1.0;
};

inline TrainingSample make_training_pair(const SyntheticIdentity& p, int yaw, double illumination,
                                         int channels = 1) {
  TrainingSample s;
  s.hp = render_pose(p, yaw, illumination, channels);
  s.hf = yaw == 0 ? s.hp : render_pose(p, 0, illumination, channels);
  s.lp = ops::bicubic_resample(s.hp, 1, 4);
  s.masks = synth_parsing_masks(p);
  s.identity = p.id;
  s.yaw = yaw;
  s.illumination = illumination;
  return s;
}

// ---- on-disk datasets -------------------------------------------------------

enum class Role { train, gallery, probe };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::gallery: return "gallery";
    case Role::probe: return "probe";
  }
  return "?";
}

inline Role role_from_name(const std::string& s) {
  if (s == "train") return Role::train;
  if (s == "gallery") return Role::gallery;
  if (s == "probe") return Role::probe;
  check_runtime(false, "unknown manifest role: '" + s + "'");
  return Role::train;
}

struct ManifestRow {
  std::string path;  // relative to the dataset root
  int identity = 0;
  int yaw = 0;
  double illumination = 1.0;
  Role role = Role::train;
};

struct DatasetSpec {
  int n_identities = 12;
  int n_test = 4;  // held-out identities (gallery + probe); the rest train
  std::vector<int> yaws = {-60, -45, -30, -15, 0, 15, 30, 45, 60};
  std::vector<double> illuminations = {0.7, 1.0};
  int channels = 1;
  std::uint64_t seed = 1;

  void validate() const {
    check_runtime(n_identities >= 2, "dataset spec: need at least two identities");
    check_runtime(n_test >= 1 && n_test < n_identities,
                  "dataset spec: need at least one held-out and one training identity");
    check_runtime(!yaws.empty(), "dataset spec: empty yaw list");
    check_runtime(!illuminations.empty(), "dataset spec: empty illumination list");
    bool frontal = false;
    for (std::size_t i = 0; i < yaws.size(); ++i) {
      check_runtime(yaw_supported(yaws[i]), "dataset spec: unsupported yaw " +
                                                std::to_string(yaws[i]));
      for (std::size_t j = 0; j < i; ++j)
        check_runtime(yaws[j] != yaws[i], "dataset spec: duplicate yaw");
      frontal = frontal || yaws[i] == 0;
    }
    check_runtime(frontal, "dataset spec: yaw list must include 0 (frontal targets)");
    for (std::size_t i = 0; i < illuminations.size(); ++i) {
      check_runtime(illuminations[i] >= 0.6 && illuminations[i] <= 1.0,
                    "dataset spec: illumination outside [0.6, 1.0]");
      for (std::size_t j = 0; j < i; ++j)
        check_runtime(illuminations[j] != illuminations[i],
                      "dataset spec: duplicate illumination");
    }
    check_runtime(channels == 1 || channels == 3, "dataset spec: channels must be 1 or 3");
  }
};

inline std::string image_path(int id, int yaw, std::size_t illum_index, int channels = 1) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/id%04d_y%c%02d_i%u.%s", id, yaw < 0 ? 'm' : 'p',
                yaw < 0 ? -yaw : yaw, unsigned(illum_index), channels == 3 ? "ppm" : "pgm");
  return buf;
}

inline std::string mask_path(int id, const std::string& kind) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "masks/id%04d_%s.pgm", id, kind.c_str());
  return buf;
}

// The illumination treated as "neutral": the list entry closest to 1.0.
inline std::size_t neutral_illumination_index(const std::vector<double>& illums) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < illums.size(); ++i)
    if (std::fabs(illums[i] - 1.0) < std::fabs(illums[best] - 1.0)) best = i;
  return best;
}

struct Dataset {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  int channels = 1;
  int n_identities = 0;
  int n_test = 0;
  std::vector<ManifestRow> rows;

  // The yaw-0 row of this identity at exactly this illumination.
  const ManifestRow& frontal_row(int identity, double illumination) const {
    for (const ManifestRow& r : rows)
      if (r.identity == identity && r.yaw == 0 && r.illumination == illumination) return r;
    check_runtime(false, "dataset has no frontal image for identity " + std::to_string(identity) +
                             " at illumination " + format_double(illumination));
    return rows.front();
  }
};

inline constexpr const char* kManifestMagic = "# frontsr-dataset v1";
inline constexpr const char* kManifestColumns = "path\tidentity\tyaw\tillumination\trole";

// Renders and writes every (identity, yaw, illumination) sample plus the
// per-identity mask images, then the manifest. Identities [0, n-n_test) are
// training identities; the rest are held out. Each held-out identity's
// frontal neutral-illumination image is its gallery entry; its other images
// are probes.
inline Dataset build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");

  Dataset ds;
  ds.root = out_dir;
  ds.seed = spec.seed;
  ds.channels = spec.channels;
  ds.n_identities = spec.n_identities;
  ds.n_test = spec.n_test;

  const int n_train = spec.n_identities - spec.n_test;
  const std::size_t neutral = neutral_illumination_index(spec.illuminations);

  std::string manifest = std::string(kManifestMagic) + "\n";
  manifest += "# seed=" + std::to_string(spec.seed) + " channels=" + std::to_string(spec.channels) +
              " n_identities=" + std::to_string(spec.n_identities) +
              " n_test=" + std::to_string(spec.n_test) + " hr=" + std::to_string(kCanvas) +
              " lr=" + std::to_string(kLrSize) + "\n";
  manifest += std::string(kManifestColumns) + "\n";

  for (int id = 0; id < spec.n_identities; ++id) {
    const SyntheticIdentity ident = make_identity(spec.seed, id);
    const ParsingMasks masks = synth_parsing_masks(ident);
    img::write_image(out_dir / mask_path(id, "skin"), masks.skin);
    img::write_image(out_dir / mask_path(id, "key"), masks.key);
    img::write_image(out_dir / mask_path(id, "hair"), masks.hair);
    for (int yaw : spec.yaws)
      for (std::size_t ii = 0; ii < spec.illuminations.size(); ++ii) {
        const double illum = spec.illuminations[ii];
        const std::string rel = image_path(id, yaw, ii, spec.channels);
        img::write_image(out_dir / rel, render_pose(ident, yaw, illum, spec.channels));
        ManifestRow row;
        row.path = rel;
        row.identity = id;
        row.yaw = yaw;
        row.illumination = illum;
        if (id < n_train)
          row.role = Role::train;
        else
          row.role = (yaw == 0 && ii == neutral) ? Role::gallery : Role::probe;
        manifest += rel + "\t" + std::to_string(id) + "\t" + std::to_string(yaw) + "\t" +
                    format_double(illum) + "\t" + role_name(row.role) + "\n";
        ds.rows.push_back(std::move(row));
      }
  }
  write_file_atomic(out_dir / "manifest.tsv", manifest);
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  const std::string text = read_file(root / "manifest.tsv");
  std::vector<std::string> lines = split(text, '\n');
  check_runtime(lines.size() >= 3 && trim(lines[0]) == kManifestMagic,
                "unrecognized dataset manifest: " + (root / "manifest.tsv").string());

  Dataset ds;
  ds.root = root;

  // header metadata: "# key=value ..." on the second line
  const std::string meta = trim(lines[1]);
  check_runtime(!meta.empty() && meta[0] == '#', "dataset manifest: missing metadata line");
  for (const std::string& tok : split(meta.substr(1), ' ')) {
    const std::size_t eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "seed") ds.seed = std::uint64_t(parse_int(val));
    if (key == "channels") ds.channels = int(parse_int(val));
    if (key == "n_identities") ds.n_identities = int(parse_int(val));
    if (key == "n_test") ds.n_test = int(parse_int(val));
  }
  check_runtime(ds.channels == 1 || ds.channels == 3, "dataset manifest: bad channel count");

  check_runtime(trim(lines[2]) == kManifestColumns, "dataset manifest: unexpected column set");
  for (std::size_t i = 3; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty()) continue;
    std::vector<std::string> f = split(line, '\t');
    check_runtime(f.size() == 5, "dataset manifest: malformed row " + std::to_string(i + 1));
    ManifestRow row;
    row.path = f[0];
    row.identity = int(parse_int(f[1]));
    row.yaw = int(parse_int(f[2]));
    row.illumination = parse_double(f[3]);
    row.role = role_from_name(f[4]);
    check_runtime(yaw_supported(row.yaw), "dataset manifest: unsupported yaw in row " +
                                              std::to_string(i + 1));
    ds.rows.push_back(std::move(row));
  }
  check_runtime(!ds.rows.empty(), "dataset manifest lists no samples");
  return ds;
}

// Content fingerprint of a dataset: hash of its manifest. Checkpoints store
// this so training and evaluation refuse to silently mix datasets.
inline std::string dataset_fingerprint(const Dataset& ds) {
  return hex16(fnv1a(read_file(ds.root / "manifest.tsv")));
}

// Assemble the in-memory training sample for one manifest row: HR side view
// from its file, HR frontal from the identity's yaw-0 file at the same
// illumination, LR input derived by exact bicubic 1/4 resampling, and the
// identity's parsing masks (binarized on load).
inline TrainingSample load_sample(const Dataset& ds, const ManifestRow& row) {
  TrainingSample s;
  s.hp = img::read_image(ds.root / row.path);
  check_runtime(s.hp.rank() == 3 && s.hp.dim(0) == std::size_t(ds.channels) &&
                    s.hp.dim(1) == std::size_t(kCanvas) && s.hp.dim(2) == std::size_t(kCanvas),
                "dataset image has unexpected shape: " + row.path);
  if (row.yaw == 0) {
    s.hf = s.hp;
  } else {
    const ManifestRow& fr = ds.frontal_row(row.identity, row.illumination);
    s.hf = img::read_image(ds.root / fr.path);
  }
  s.lp = ops::bicubic_resample(s.hp, 1, 4);
  auto load_mask = [&ds, &row](const std::string& kind) {
    Tensor m = img::read_image(ds.root / mask_path(row.identity, kind));
    check_runtime(m.rank() == 3 && m.dim(0) == 1 && m.dim(1) == std::size_t(kCanvas) &&
                      m.dim(2) == std::size_t(kCanvas),
                  "mask image has unexpected shape for identity " +
                      std::to_string(row.identity));
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] >= 0.5 ? 1.0 : 0.0;
    return m;
  };
  s.masks.skin = load_mask("skin");
  s.masks.key = load_mask("key");
  s.masks.hair = load_mask("hair");
  s.identity = row.identity;
  s.yaw = row.yaw;
  s.illumination = row.illumination;
  return s;
}

}  // namespace frontsr::synth
