#include "scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "error.hpp"
#include "rng.hpp"

namespace fedddl::scenegen {

namespace {

constexpr std::uint64_t kTagAssignment = 1;
constexpr std::uint64_t kTagTrainScene = 2;
constexpr std::uint64_t kTagTestScene = 3;
constexpr std::uint64_t kTagLabels = 4;
constexpr std::uint64_t kTagTexture = 5;

// Class i draws glyph kClassGlyph[i]. The leading five have near-equal ink so
// small class sets are not separable by object mass alone.
constexpr std::size_t kClassGlyph[kGlyphCount] = {0, 3, 4, 7, 8, 1, 2, 5, 6, 9};

// Values are stored as float32 on disk; keeping them float-representable makes
// the binary round trip exact.
double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

void invalid(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::InvalidSpec, field + ": " + why);
}

// Texture value in [0, 1] for the family's base pattern.
double texture_value(std::size_t family, std::size_t r, std::size_t c, std::size_t height,
                     std::size_t width) {
  const std::size_t base = family % kTextureCount;
  const std::size_t scale = 1 + family / kTextureCount;
  const double fr = static_cast<double>(r);
  const double fc = static_cast<double>(c);
  switch (base) {
    case 0: return 0.55;
    case 1: return fc / static_cast<double>(width - 1);
    case 2: return fr / static_cast<double>(height - 1);
    case 3: return static_cast<double>((r / (4 * scale) + c / (4 * scale)) % 2);
    case 4: return static_cast<double>((r / (2 * scale)) % 2);
    case 5: {
      const double dr = fr + 0.5 - static_cast<double>(height) / 2.0;
      const double dc = fc + 0.5 - static_cast<double>(width) / 2.0;
      const double period = 5.0 * static_cast<double>(scale);
      return 0.5 + 0.5 * std::cos(2.0 * M_PI * std::sqrt(dr * dr + dc * dc) / period);
    }
    case 6: return static_cast<double>(((r + c) / (3 * scale)) % 2);
    case 7: return static_cast<double>((c / (2 * scale)) % 2);
    case 8: {
      Rng band(derive_seed(family, {kTagTexture, r / (2 * scale)}));
      return band.uniform();
    }
    default: {
      Rng band(derive_seed(family, {kTagTexture, 1000 + c / (2 * scale)}));
      return band.uniform();
    }
  }
}

Scene render_scene(const DatasetSpec& spec, int label, int family, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  Scene scene;
  scene.label = label;
  scene.bg_family = family;
  scene.pixels = render_background(static_cast<std::size_t>(family), spec.train_family_count, h, w, rng.next());
  scene.mask = Tensor::matrix(h, w);

  const std::size_t min_side = std::min(h, w);
  const std::size_t lo = min_side / 4;
  const std::size_t hi = min_side / 2;
  const std::size_t side = lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  const std::size_t top = static_cast<std::size_t>(rng.below(h - side + 1));
  const std::size_t left = static_cast<std::size_t>(rng.below(w - side + 1));
  const double intensity = rng.uniform(0.85, 1.0);
  const std::size_t glyph = kClassGlyph[static_cast<std::size_t>(label)];
  std::size_t object_pixels = 0;
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const double jitter = rng.uniform(-0.05, 0.05);
      if (!glyph_pixel(glyph, side, r, c)) continue;
      scene.pixels.at(top + r, left + c) = quantize(std::clamp(intensity + jitter, 0.55, 1.0));
      scene.mask.at(top + r, left + c) = 1.0;
      ++object_pixels;
    }
  }
  if (object_pixels == 0 || object_pixels >= h * w) {
    throw Error(ErrorCode::InvalidSpec, "glyph " + std::to_string(label) + " degenerate at side " +
                                            std::to_string(side));
  }
  return scene;
}

}  // namespace

void DatasetSpec::validate() const {
  if (clients == 0) invalid("clients", "must be >= 1");
  if (classes == 0) invalid("classes", "must be >= 1");
  if (classes > kGlyphCount) invalid("classes", "at most " + std::to_string(kGlyphCount) + " glyphs available");
  if (height < 16) invalid("height", "must be >= 16");
  if (width < 16) invalid("width", "must be >= 16");
  if (train_family_count == 0) invalid("train_families", "must be >= 1");
  if (train_family_count >= families) invalid("train_families", "must be < families");
  if (!(rho >= 0.0 && rho <= 1.0)) invalid("rho", "must lie in [0, 1]");
  if (per_client_count == 0) invalid("per_client", "must be >= 1");
  if (test_count == 0) invalid("test", "must be >= 1");
}

bool glyph_pixel(std::size_t glyph, std::size_t side, std::size_t r, std::size_t c) {
  const std::size_t t = std::max<std::size_t>(1, side / 4);
  const std::size_t band_lo = (side - t) / 2;
  auto band = [&](std::size_t v) { return v >= band_lo && v < band_lo + t; };
  const long lr = static_cast<long>(r);
  const long lc = static_cast<long>(c);
  const long lt = static_cast<long>(t);
  const long last = static_cast<long>(side) - 1;
  switch (glyph) {
    case 0: return band(r) || band(c);                                   // cross
    case 1: return r < t || r >= side - t || c < t || c >= side - t;     // square outline
    case 2: return std::labs(lr - lc) < lt;                              // diagonal band
    case 3: return r < t || band(c);                                     // T
    case 4: return c < t || r >= side - t;                               // L
    case 5: {                                                            // ring
      const double half = static_cast<double>(side) / 2.0;
      const double dr = static_cast<double>(r) + 0.5 - half;
      const double dc = static_cast<double>(c) + 0.5 - half;
      const double d = std::sqrt(dr * dr + dc * dc);
      return d <= half && d >= half - static_cast<double>(t) - 0.5;
    }
    case 6: {                                                            // checker glyph
      const std::size_t cell = std::max<std::size_t>(1, side / 4);
      return (r / cell + c / cell) % 2 == 0;
    }
    case 7:                                                              // V
      return std::labs(2 * lc - lr) <= lt || std::labs(2 * (last - lc) - lr) <= lt;
    case 8: return c < t || c >= side - t || band(r);                    // H bar
    case 9: {                                                            // dot grid
      const std::size_t step = std::max<std::size_t>(2, side / 3);
      return r % step == step / 2 && c % step == step / 2;
    }
    default: return false;
  }
}

double family_level(std::size_t family, std::size_t train_family_count) {
  const std::size_t n = train_family_count;
  if (n <= 1) return 0.2;
  // Held-out families reuse a training shade with a texture never seen in training.
  const std::size_t idx = family < n ? family : ((family - n) * 2 + 1) % n;
  return 0.08 + 0.24 * static_cast<double>(idx) / static_cast<double>(n - 1);
}

Tensor render_background(std::size_t family, std::size_t train_family_count, std::size_t height,
                         std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  const double level = family_level(family, train_family_count);
  const double contrast = rng.uniform(0.10, 0.14);
  Tensor pixels = Tensor::matrix(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double v = level + contrast * (texture_value(family, r, c, height, width) - 0.5) +
                       rng.uniform(-0.02, 0.02);
      pixels.at(r, c) = quantize(std::clamp(v, 0.0, 0.39));
    }
  }
  return pixels;
}

FederatedDataset generate(const DatasetSpec& spec) {
  spec.validate();
  FederatedDataset ds;
  ds.spec = spec;
  for (std::size_t f = 0; f < spec.families; ++f) {
    (f < spec.train_family_count ? ds.train_families : ds.test_families).push_back(static_cast<int>(f));
  }
  const std::size_t train_count = ds.train_families.size();

  ds.clients.resize(spec.clients);
  ds.assignment.resize(spec.clients);
  for (std::size_t k = 0; k < spec.clients; ++k) {
    Rng assign_rng(derive_seed(spec.seed, {kTagAssignment, k}));
    std::vector<int> families = ds.train_families;
    assign_rng.shuffle(std::span<int>(families));
    auto& assignment = ds.assignment[k];
    for (std::size_t i = 0; i < spec.classes; ++i) assignment.push_back(families[i % train_count]);

    std::vector<int> labels(spec.per_client_count);
    for (std::size_t j = 0; j < labels.size(); ++j) labels[j] = static_cast<int>(j % spec.classes);
    Rng label_rng(derive_seed(spec.seed, {kTagLabels, k}));
    label_rng.shuffle(std::span<int>(labels));

    auto& scenes = ds.clients[k];
    scenes.reserve(spec.per_client_count);
    for (std::size_t j = 0; j < spec.per_client_count; ++j) {
      Rng rng(derive_seed(spec.seed, {kTagTrainScene, k, j}));
      const int label = labels[j];
      const int dominant = assignment[static_cast<std::size_t>(label)];
      int family = dominant;
      if (train_count > 1 && rng.uniform() >= spec.rho) {
        // Uniform over the remaining train families.
        std::size_t pick = static_cast<std::size_t>(rng.below(train_count - 1));
        std::vector<int> others;
        for (int f : ds.train_families) {
          if (f != dominant) others.push_back(f);
        }
        family = others[pick];
      }
      scenes.push_back(render_scene(spec, label, family, rng.next()));
    }
  }

  std::vector<int> test_labels(spec.test_count);
  for (std::size_t j = 0; j < test_labels.size(); ++j) test_labels[j] = static_cast<int>(j % spec.classes);
  Rng test_label_rng(derive_seed(spec.seed, {kTagLabels, spec.clients + 1000}));
  test_label_rng.shuffle(std::span<int>(test_labels));
  ds.test.reserve(spec.test_count);
  for (std::size_t j = 0; j < spec.test_count; ++j) {
    Rng rng(derive_seed(spec.seed, {kTagTestScene, j}));
    const int family = ds.test_families[static_cast<std::size_t>(rng.below(ds.test_families.size()))];
    ds.test.push_back(render_scene(spec, test_labels[j], family, rng.next()));
  }
  return ds;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {epoch}));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

Tensor flatten(std::span<const Scene> scenes) {
  if (scenes.empty()) throw Error(ErrorCode::EmptyDataset, "no scenes to flatten");
  const std::size_t width = scenes.front().pixels.size();
  Tensor out = Tensor::matrix(scenes.size(), width);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto src = scenes[i].pixels.data();
    if (src.size() != width) throw Error(ErrorCode::ShapeMismatch, "scenes differ in size");
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<int> labels_of(std::span<const Scene> scenes) {
  std::vector<int> labels;
  labels.reserve(scenes.size());
  for (const auto& s : scenes) labels.push_back(s.label);
  return labels;
}

std::vector<Batch> batches(std::span<const Scene> scenes, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch) {
  if (scenes.empty()) throw Error(ErrorCode::EmptyDataset, "cannot batch an empty scene list");
  if (batch_size == 0) throw Error(ErrorCode::InvalidSpec, "batch_size: must be >= 1");
  const auto order = epoch_order(scenes.size(), seed, epoch);
  const std::size_t width = scenes.front().pixels.size();
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    Batch b{Tensor::matrix(n, width), {}};
    b.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Scene& s = scenes[order[start + i]];
      std::copy(s.pixels.data().begin(), s.pixels.data().end(), b.inputs.row(i).begin());
      b.labels.push_back(s.label);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace fedddl::scenegen
