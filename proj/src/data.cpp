#include "boxseg/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "boxseg/container.hpp"
#include "boxseg/error.hpp"
#include "boxseg/random.hpp"

namespace boxseg {
namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 4> kPalette{{
    {0.80, 0.35, 0.30},  // disk
    {0.35, 0.70, 0.35},  // rectangle
    {0.35, 0.40, 0.80},  // triangle
    {0.75, 0.70, 0.30},  // ring
}};

struct Shape2d {
  std::size_t class_id;
  double cx, cy;
  double half_w, half_h;

  bool inside(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    switch (class_id) {
      case 1: return dx * dx + dy * dy <= half_w * half_w;
      case 2: return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
      case 3: {
        const double t = (dy + half_h) / (2.0 * half_h);  // 0 at apex, 1 at base
        return t >= 0.0 && t <= 1.0 && std::abs(dx) <= half_w * t;
      }
      default: {
        const double d2 = dx * dx + dy * dy;
        const double inner = 0.5 * half_w;
        return d2 <= half_w * half_w && d2 >= inner * inner;
      }
    }
  }
};

double quantize(double v) { return static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0))); }

void paint_background(const SceneConfig& cfg, Rng& rng, Tensor& image) {
  Rgb base{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
  Rgb gx{}, gy{};
  if (cfg.background != BackgroundMode::kFlat) {
    for (std::size_t c = 0; c < 3; ++c) {
      gx[c] = rng.uniform(-0.25, 0.25);
      gy[c] = rng.uniform(-0.25, 0.25);
    }
  }
  // Blotches: a 4x4 grid of color offsets, nearest-upsampled.
  constexpr std::size_t kCells = 4;
  std::array<double, 3 * kCells * kCells> blotch{};
  if (cfg.background == BackgroundMode::kNoise) {
    for (double& b : blotch) b = rng.uniform(-0.15, 0.15);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(cfg.width) - 0.5;
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(cfg.height) - 0.5;
        const std::size_t cell = (y * kCells / cfg.height) * kCells + x * kCells / cfg.width;
        image.at(c, y, x) = base[c] + gx[c] * u + gy[c] * v + blotch[c * kCells * kCells + cell];
      }
    }
  }
}

bool bounds_overlap(const Shape2d& a, const Shape2d& b) {
  return std::abs(a.cx - b.cx) < a.half_w + b.half_w + 1.0 &&
         std::abs(a.cy - b.cy) < a.half_h + b.half_h + 1.0;
}

Shape2d sample_shape(const SceneConfig& cfg, Rng& rng) {
  Shape2d s{};
  s.class_id = 1 + rng.below(cfg.num_classes);
  const double extent = rng.uniform(static_cast<double>(cfg.min_size), static_cast<double>(cfg.max_size));
  s.half_w = extent / 2.0;
  s.half_h = extent / 2.0;
  if (s.class_id == 2 || s.class_id == 3) s.half_h = s.half_w * rng.uniform(0.6, 1.0);
  if (s.class_id == 2 && rng.bernoulli(0.5)) std::swap(s.half_w, s.half_h);
  s.cx = rng.uniform(s.half_w, static_cast<double>(cfg.width) - s.half_w);
  s.cy = rng.uniform(s.half_h, static_cast<double>(cfg.height) - s.half_h);
  return s;
}

std::vector<std::vector<std::size_t>> components(const LabelMap& mask) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<char> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (seen[start] || mask.labels[start] == 0) continue;
    const std::uint8_t cls = mask.labels[start];
    std::vector<std::size_t> pixels;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      pixels.push_back(p);
      const std::size_t y = p / mask.width, x = p % mask.width;
      const std::size_t nbrs[4][2] = {{y, x - 1}, {y, x + 1}, {y - 1, x}, {y + 1, x}};
      for (const auto& n : nbrs) {
        if (n[0] >= mask.height || n[1] >= mask.width) continue;  // wraps on underflow
        const std::size_t q = n[0] * mask.width + n[1];
        if (!seen[q] && mask.labels[q] == cls) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    std::sort(pixels.begin(), pixels.end());
    out.push_back(std::move(pixels));
  }
  return out;
}

// Manhattan distance transform to the nearest pixel where `member` is (or is
// not) set, truncated at `limit`.
std::vector<int> distance_to(const std::vector<char>& member, bool target, std::size_t h,
                             std::size_t w, int limit) {
  std::vector<int> dist(h * w, limit + 1);
  std::vector<std::size_t> frontier;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (static_cast<bool>(member[i]) == target) {
      dist[i] = 0;
      frontier.push_back(i);
    }
  }
  for (int d = 1; d <= limit && !frontier.empty(); ++d) {
    std::vector<std::size_t> next;
    for (std::size_t p : frontier) {
      const std::size_t y = p / w, x = p % w;
      const std::size_t nbrs[4][2] = {{y, x - 1}, {y, x + 1}, {y - 1, x}, {y + 1, x}};
      for (const auto& n : nbrs) {
        if (n[0] >= h || n[1] >= w) continue;
        const std::size_t q = n[0] * w + n[1];
        if (dist[q] > d) {
          dist[q] = d;
          next.push_back(q);
        }
      }
    }
    frontier = std::move(next);
  }
  return dist;
}

nlohmann::ordered_json boxes_json(const std::vector<BoxAnnotation>& boxes) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& b : boxes) out.push_back({b.class_id, b.x0, b.y0, b.x1, b.y1});
  return out;
}

}  // namespace

bool Sample::identical(const Sample& other) const {
  return id == other.id && image.identical(other.image) && mask == other.mask && boxes == other.boxes;
}

void SceneConfig::validate() const {
  if (num_classes < 2 || num_classes > 4) throw_invalid("SceneConfig: num_classes must be in 2..4");
  if (min_shapes > max_shapes) throw_invalid("SceneConfig: min_shapes > max_shapes");
  if (min_size < 2 || min_size > max_size) throw_invalid("SceneConfig: bad shape size range");
  if (max_size > std::min(height, width)) throw_invalid("SceneConfig: shapes do not fit the canvas");
  if (color_jitter < 0.0 || texture_noise < 0.0) throw_invalid("SceneConfig: negative noise");
}

const char* to_string(BackgroundMode mode) {
  switch (mode) {
    case BackgroundMode::kFlat: return "flat";
    case BackgroundMode::kGradient: return "gradient";
    case BackgroundMode::kNoise: return "noise";
  }
  return "noise";
}

BackgroundMode parse_background(const std::string& name) {
  if (name == "flat") return BackgroundMode::kFlat;
  if (name == "gradient") return BackgroundMode::kGradient;
  if (name == "noise") return BackgroundMode::kNoise;
  throw_invalid("unknown background mode '" + name + "'");
}

Sample generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Sample sample;
  sample.image = Tensor({3, cfg.height, cfg.width});
  paint_background(cfg, rng, sample.image);

  const std::size_t count = cfg.min_shapes + rng.below(cfg.max_shapes - cfg.min_shapes + 1);
  std::vector<Shape2d> shapes;
  for (std::size_t i = 0; i < count; ++i) {
    Shape2d s = sample_shape(cfg, rng);
    for (int attempt = 0; !cfg.allow_overlap && attempt < 50; ++attempt) {
      const bool clash = std::any_of(shapes.begin(), shapes.end(),
                                     [&](const Shape2d& o) { return bounds_overlap(s, o); });
      if (!clash) break;
      s = sample_shape(cfg, rng);
    }
    if (!cfg.allow_overlap &&
        std::any_of(shapes.begin(), shapes.end(), [&](const Shape2d& o) { return bounds_overlap(s, o); })) {
      continue;
    }
    shapes.push_back(s);
  }

  // instance index + 1 of the topmost shape per pixel
  std::vector<std::size_t> owner(cfg.height * cfg.width, 0);
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const Shape2d& s = shapes[k];
    const Rgb& base = kPalette[s.class_id - 1];
    Rgb color;
    for (std::size_t c = 0; c < 3; ++c) color[c] = base[c] + rng.uniform(-cfg.color_jitter, cfg.color_jitter);
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        if (!s.inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
        owner[y * cfg.width + x] = k + 1;
        for (std::size_t c = 0; c < 3; ++c) sample.image.at(c, y, x) = color[c];
      }
    }
  }
  if (cfg.texture_noise > 0.0) {
    for (double& v : sample.image.data()) v += cfg.texture_noise * rng.normal();
  }
  for (double& v : sample.image.data()) v = quantize(v);

  LabelMap mask(cfg.height, cfg.width);
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    std::size_t x0 = cfg.width, y0 = cfg.height, x1 = 0, y1 = 0;
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        if (owner[y * cfg.width + x] != k + 1) continue;
        mask.at(y, x) = static_cast<std::uint8_t>(shapes[k].class_id);
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x + 1);
        y1 = std::max(y1, y + 1);
      }
    }
    if (x1 > x0) sample.boxes.push_back({shapes[k].class_id, x0, y0, x1, y1});
  }
  sample.mask = std::move(mask);
  return sample;
}

std::vector<Sample> generate_dataset(const SceneConfig& cfg, std::size_t count, std::uint64_t seed,
                                     const std::string& id_prefix) {
  std::vector<Sample> out;
  out.reserve(count);
  const int digits = count > 100000 ? 7 : 5;
  for (std::size_t i = 0; i < count; ++i) {
    Sample s = generate_scene(cfg, derive_seed(seed, "scene:" + std::to_string(i)));
    std::string num = std::to_string(i);
    s.id = id_prefix + std::string(static_cast<std::size_t>(std::max(0, digits - static_cast<int>(num.size()))), '0') + num;
    out.push_back(std::move(s));
  }
  return out;
}

DatasetSplit split_dataset(std::vector<Sample> samples, std::size_t f_size, std::uint64_t seed) {
  if (f_size > samples.size()) {
    throw_invalid("split_dataset: F size " + std::to_string(f_size) + " exceeds " +
                  std::to_string(samples.size()) + " samples");
  }
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(samples);
  DatasetSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i < f_size) {
      if (!samples[i].mask) throw_invalid("split_dataset: sample " + samples[i].id + " lacks a mask");
      split.fully.push_back(std::move(samples[i]));
    } else {
      samples[i].mask.reset();
      split.weak.push_back(std::move(samples[i]));
    }
  }
  return split;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_half(std::vector<Sample> fully,
                                                               std::uint64_t seed) {
  if (fully.size() < 2) throw_invalid("split_half: need at least 2 samples");
  Rng rng(derive_seed(seed, "half"));
  rng.shuffle(fully);
  const std::size_t first = (fully.size() + 1) / 2;
  std::vector<Sample> b(std::make_move_iterator(fully.begin() + static_cast<std::ptrdiff_t>(first)),
                        std::make_move_iterator(fully.end()));
  fully.resize(first);
  return {std::move(fully), std::move(b)};
}

LabelMap inject_label_noise(const LabelMap& mask, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw_invalid("inject_label_noise: rate must be in [0,1]");
  Rng rng(seed);
  LabelMap out = mask;
  for (const auto& pixels : components(mask)) {
    const bool perturb = rng.bernoulli(rate);
    const bool dilate = rng.bernoulli(0.5);
    const int radius = rng.between(1, 3);
    if (!perturb) continue;
    const std::uint8_t cls = mask.labels[pixels.front()];
    std::vector<char> member(mask.size(), 0);
    for (std::size_t p : pixels) member[p] = 1;
    if (dilate) {
      const auto dist = distance_to(member, true, mask.height, mask.width, radius);
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (!member[i] && dist[i] <= radius) out.labels[i] = cls;
    } else {
      const auto dist = distance_to(member, false, mask.height, mask.width, radius);
      for (std::size_t p : pixels)
        if (dist[p] <= radius) out.labels[p] = 0;
    }
  }
  return out;
}

std::vector<const Sample*> StoredDataset::all() const {
  std::vector<const Sample*> out;
  for (const auto* group : {&unassigned, &split.fully, &split.weak})
    for (const Sample& s : *group) out.push_back(&s);
  return out;
}

void write_dataset(const std::filesystem::path& dir, const StoredDataset& data) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "boxseg-dataset";
  manifest["num_classes"] = data.num_classes;
  manifest["height"] = data.height;
  manifest["width"] = data.width;
  manifest["split_seed"] = data.split.seed;
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  auto emit = [&](const Sample& s, const char* split) {
    if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.image.dim(1) != data.height ||
        s.image.dim(2) != data.width) {
      throw Error(ErrorKind::kShape, "write_dataset: sample " + s.id + " has image dims " +
                                         shape_string(s.image.dims()),
                  "image");
    }
    nlohmann::ordered_json entry;
    entry["id"] = s.id;
    entry["split"] = split;
    entry["boxes"] = boxes_json(s.boxes);
    const std::string image_file = s.id + ".image.stns";
    const std::string mask_file = s.id + ".mask.stns";
    container::write_tensor(dir / image_file, s.image, container::DType::kF32);
    entry["image"] = image_file;
    if (s.mask) {
      container::write_u8(dir / mask_file, {s.mask->height, s.mask->width}, s.mask->labels);
      entry["mask"] = mask_file;
    } else {
      std::filesystem::remove(dir / mask_file);
      entry["mask"] = nullptr;
    }
    samples.push_back(std::move(entry));
  };
  for (const Sample& s : data.unassigned) emit(s, "unassigned");
  for (const Sample& s : data.split.fully) emit(s, "fully");
  for (const Sample& s : data.split.weak) emit(s, "weak");
  manifest["samples"] = std::move(samples);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(1) << '\n';
}

StoredDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::kIo, "missing dataset manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
    StoredDataset data;
    data.num_classes = manifest.at("num_classes").get<std::size_t>();
    data.height = manifest.at("height").get<std::size_t>();
    data.width = manifest.at("width").get<std::size_t>();
    data.split.seed = manifest.value("split_seed", std::uint64_t{0});
    for (const auto& entry : manifest.at("samples")) {
      Sample s;
      s.id = entry.at("id").get<std::string>();
      s.image = container::read_tensor(dir / entry.at("image").get<std::string>());
      if (s.image.dims() != Shape{3, data.height, data.width}) {
        throw Error(ErrorKind::kShape, "sample " + s.id + " image dims " + shape_string(s.image.dims()),
                    "image");
      }
      if (!entry.at("mask").is_null()) {
        Shape dims;
        auto labels = container::read_u8(dir / entry.at("mask").get<std::string>(), &dims);
        if (dims != Shape{data.height, data.width}) {
          throw Error(ErrorKind::kShape, "sample " + s.id + " mask dims " + shape_string(dims), "mask");
        }
        LabelMap m(data.height, data.width);
        m.labels = std::move(labels);
        s.mask = std::move(m);
      }
      for (const auto& b : entry.at("boxes")) {
        s.boxes.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>(),
                           b.at(3).get<std::size_t>(), b.at(4).get<std::size_t>()});
      }
      const std::string split = entry.at("split").get<std::string>();
      if (split == "fully") data.split.fully.push_back(std::move(s));
      else if (split == "weak") data.split.weak.push_back(std::move(s));
      else if (split == "unassigned") data.unassigned.push_back(std::move(s));
      else throw Error(ErrorKind::kFormat, "unknown split tag '" + split + "'");
    }
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, "bad dataset manifest: " + std::string(e.what()));
  }
}

}  // namespace boxseg
