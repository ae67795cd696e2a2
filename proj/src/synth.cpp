#include <algorithm>
#include <cmath>
#include <numbers>

#include "falcon/data_io.hpp"
#include "falcon/rng.hpp"

namespace falcon {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Membership of a point in shape-local coordinates, where every family fits inside radius sqrt(2).
bool inside_family(int family, double u, double v, double aspect) {
  const double r = std::hypot(u, v);
  const double th = std::atan2(v, u);
  switch (family % kShapeFamilies) {
    case 0:  // ellipse
      return u * u + (v * v) / (aspect * aspect) <= 1.0;
    case 1:  // rectangle
      return std::abs(u) <= 1.0 && std::abs(v) <= aspect;
    case 2:  // ring
      return r <= 1.0 && r >= 0.55;
    case 3:    // triangle
    case 4: {  // hexagon
      const int n = family % kShapeFamilies == 3 ? 3 : 6;
      const double sector = 2 * kPi / n;
      const double local = std::fmod(th + 2 * kPi, sector) - sector / 2;
      return r * std::cos(local) <= std::cos(kPi / n);
    }
    case 5:  // star
      return r <= 0.62 + 0.38 * std::cos(5 * th);
    case 6:  // cross
      return (std::abs(u) <= 0.33 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.33 && std::abs(u) <= 1.0);
    case 7:  // crescent
      return r <= 1.0 && std::hypot(u - 0.45, v) > 0.8;
    case 8:  // L shape
      return (u >= -1 && u <= 1 && v >= -1 && v <= -0.3) || (u >= -1 && u <= -0.3 && v >= -1 && v <= 1);
    default:  // trefoil
      return r <= 0.7 + 0.3 * std::sin(3 * th);
  }
}

struct Rgb {
  double c[3];
};

Rgb random_colour(Rng& rng) { return {{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)}}; }

double luminance(const Rgb& c) { return 0.299 * c.c[0] + 0.587 * c.c[1] + 0.114 * c.c[2]; }

LabeledSample render_shape(int family, int size, Rng& rng) {
  for (;;) {
    const double radius = uniform(rng, 0.18, 0.3) * size;
    const double reach = std::sqrt(2.0) * radius;
    const double cy = uniform(rng, reach + 1, size - 2 - reach);
    const double cx = uniform(rng, reach + 1, size - 2 - reach);
    const double rot = uniform(rng, 0, 2 * kPi);
    const double aspect = uniform(rng, 0.6, 1.0);
    const Rgb bg_a = random_colour(rng), bg_b = random_colour(rng);
    Rgb fg = random_colour(rng);
    // keep the object visible against its background
    if (std::abs(luminance(fg) - 0.5 * (luminance(bg_a) + luminance(bg_b))) < 0.2)
      for (double& ch : fg.c) ch = luminance(bg_a) > 0.5 ? ch * 0.3 : 0.7 + 0.3 * ch;
    const double bg_freq = uniform(rng, 0.1, 0.6), bg_phase = uniform(rng, 0, 2 * kPi);
    const double fg_freq = uniform(rng, 0.2, 1.0), fg_amp = uniform(rng, 0.0, 0.15);
    const double noise = uniform(rng, 0.01, 0.06);
    std::normal_distribution<double> gauss(0.0, noise);

    Image img(3, size, size);
    MaskGrid mask = MaskGrid::Zero(size, size);
    const double cs = std::cos(rot), sn = std::sin(rot);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const double dy = r - cy, dx = c - cx;
        const double u = (cs * dx + sn * dy) / radius;
        const double v = (-sn * dx + cs * dy) / radius;
        const bool in = inside_family(family, u, v, aspect);
        mask(r, c) = in ? 1 : 0;
        const double t = 0.5 + 0.5 * std::sin(bg_freq * (r + 0.7 * c) + bg_phase);
        for (int ch = 0; ch < 3; ++ch) {
          double val = in ? fg.c[ch] + fg_amp * std::sin(fg_freq * (c - r)) : t * bg_a.c[ch] + (1 - t) * bg_b.c[ch];
          val += gauss(rng);
          img.data(ch, Eigen::Index(r) * size + c) = float(std::clamp(val, 0.0, 1.0));
        }
      }
    }
    if ((mask != 0).any()) return {normalize_min_max(img), BinaryMask(std::move(mask))};
  }
}

}  // namespace

const char* shape_family(int c) {
  static const char* names[kShapeFamilies] = {"ellipse", "rectangle", "ring",     "triangle", "hexagon",
                                              "star",    "cross",     "crescent", "l_shape",  "trefoil"};
  return names[((c % kShapeFamilies) + kShapeFamilies) % kShapeFamilies];
}

SourceDataset synth_source(int n_classes, int samples_per_class, int size, std::uint64_t seed) {
  if (n_classes < 2) throw Error(ErrorKind::InvalidArgument, "synth_source needs at least 2 classes");
  if (samples_per_class < 1) throw Error(ErrorKind::InvalidArgument, "samples_per_class must be >= 1");
  if (size < 8) throw Error(ErrorKind::InvalidArgument, "synthetic images must be at least 8x8");
  SourceDataset data;
  for (int c = 0; c < n_classes; ++c) {
    Rng rng(derive_seed(seed, std::uint64_t(c)));
    data.classes.push_back(std::string(shape_family(c)) +
                           (c >= kShapeFamilies ? "_" + std::to_string(c / kShapeFamilies) : ""));
    data.samples.emplace_back();
    for (int i = 0; i < samples_per_class; ++i) data.samples.back().push_back(render_shape(c, size, rng));
  }
  return data;
}

std::vector<int> interleaved_labeled(int n, double labeled_fraction) {
  if (!(labeled_fraction > 0 && labeled_fraction < 1))
    throw Error(ErrorKind::InvalidArgument, "labeled_fraction must be in (0,1)");
  const int count = std::clamp(int(std::lround(labeled_fraction * n)), 1, std::max(1, n - 1));
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(int(std::floor((i + 0.5) * n / count)));
  return out;
}

namespace {

struct OrganParams {
  double cy, cx, base_radius, radius_phase;
  double amp[3], phase[3], drift[3];
  double centre_phase;
  double bias, organ_level, body_level, noise;
  double tex_freq, tex_phase, tex_amp;
};

constexpr double kRadiusPeriod = 80.0;  // slices per full radius oscillation
constexpr double kCentrePeriod = 80.0;

double organ_radius(const OrganParams& p, double theta, int s) {
  double r = p.base_radius * (0.9 + 0.1 * std::sin(2 * kPi * s / kRadiusPeriod + p.radius_phase));
  double shape = 1.0;
  for (int k = 0; k < 3; ++k) shape += p.amp[k] * std::cos((k + 2) * theta + p.phase[k] + p.drift[k] * s);
  return r * shape;
}

}  // namespace

SyntheticTarget synth_patients(int n_patients, int slices_per_patient, double labeled_fraction, int size,
                               std::uint64_t seed) {
  if (n_patients < 1) throw Error(ErrorKind::InvalidArgument, "n_patients must be >= 1");
  if (slices_per_patient < 2) throw Error(ErrorKind::InvalidArgument, "slices_per_patient must be >= 2");
  if (size < 16) throw Error(ErrorKind::InvalidArgument, "synthetic slices must be at least 16x16");
  const auto labeled = interleaved_labeled(slices_per_patient, labeled_fraction);

  SyntheticTarget out;
  for (int p = 0; p < n_patients; ++p) {
    Rng rng(derive_seed(seed, 1000 + std::uint64_t(p)));
    OrganParams op{};
    op.cy = size * uniform(rng, 0.42, 0.58);
    op.cx = size * uniform(rng, 0.42, 0.58);
    op.base_radius = size * uniform(rng, 0.2, 0.26);
    op.radius_phase = uniform(rng, 0, 2 * kPi);
    for (int k = 0; k < 3; ++k) {
      op.amp[k] = uniform(rng, 0.0, 0.16 / (k + 2));
      op.phase[k] = uniform(rng, 0, 2 * kPi);
      op.drift[k] = uniform(rng, -0.015, 0.015);
    }
    op.centre_phase = uniform(rng, 0, 2 * kPi);
    op.bias = uniform(rng, -0.1, 0.1);
    op.organ_level = uniform(rng, 0.5, 0.62);
    op.body_level = uniform(rng, 0.3, 0.4);
    op.noise = uniform(rng, 0.05, 0.12);
    op.tex_freq = uniform(rng, 0.15, 0.5);
    op.tex_phase = uniform(rng, 0, 2 * kPi);
    op.tex_amp = uniform(rng, 0.0, 0.06);
    std::normal_distribution<double> gauss(0.0, op.noise);

    PatientVolume vol;
    vol.id = "patient_" + std::string(p < 10 ? "0" : "") + std::to_string(p);
    std::vector<BinaryMask> all;
    for (int s = 0; s < slices_per_patient; ++s) {
      const double drift = 0.5 * std::sin(2 * kPi * s / kCentrePeriod + op.centre_phase);
      const double cy = op.cy + drift, cx = op.cx - 0.5 * drift;
      const double r_mean = op.base_radius;

      // distractor blobs: organ-like intensity, smaller, outside the organ
      struct Blob { double y, x, r, level; };
      std::vector<Blob> blobs;
      const int n_blobs = 2 + int(rng() % 3);
      for (int b = 0; b < n_blobs; ++b) {
        for (int attempt = 0; attempt < 50; ++attempt) {
          const double br = size * uniform(rng, 0.06, 0.13);
          const double ang = uniform(rng, 0, 2 * kPi);
          const double dist = uniform(rng, r_mean * 1.3 + br + 1, size * 0.48);
          const double by = cy + dist * std::sin(ang), bx = cx + dist * std::cos(ang);
          if (by - br < 1 || bx - br < 1 || by + br > size - 2 || bx + br > size - 2) continue;
          blobs.push_back({by, bx, br, op.organ_level * uniform(rng, 0.85, 1.1)});
          break;
        }
      }

      Grid<float> gray(size, size);
      MaskGrid mask = MaskGrid::Zero(size, size);
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          const double dy = r - cy, dx = c - cx;
          const double inset = organ_radius(op, std::atan2(dy, dx), s) - std::hypot(dy, dx);
          const bool organ = inset >= 0;
          const double by = (r - size * 0.5) / (size * 0.47), bx = (c - size * 0.5) / (size * 0.44);
          double v = 0.05;
          if (by * by + bx * bx <= 1.0) v = op.body_level + op.bias;
          for (const auto& bl : blobs) {
            const double soft = std::clamp(0.5 + (bl.r - std::hypot(r - bl.y, c - bl.x)) / 1.5, 0.0, 1.0);
            v += soft * (bl.level + op.bias - v);
          }
          // partial-volume edge: intensity ramps over about one pixel around the boundary
          const double soft = std::clamp(0.5 + inset / 1.5, 0.0, 1.0);
          v += soft * (op.organ_level + op.bias - v);
          v += op.tex_amp * std::sin(op.tex_freq * (r - 0.5 * c) + op.tex_phase) + gauss(rng);
          gray(r, c) = float(std::clamp(v, 0.0, 1.0));
          mask(r, c) = organ ? 1 : 0;
        }
      }
      vol.slices.push_back(normalize_min_max(gray_to_rgb(gray)));
      vol.acquisition.push_back(s);
      all.emplace_back(std::move(mask));
    }
    for (const int i : labeled) vol.masks[i] = all[i];
    vol.validate();
    out.sealed.put(vol.id, std::move(all));
    out.volumes.push_back(std::move(vol));
  }
  return out;
}

}  // namespace falcon
