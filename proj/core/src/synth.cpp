#include "ccnet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "ccnet/error.hpp"
#include "ccnet/random.hpp"
#include "json.hpp"

namespace ccnet {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::size_t kShapes = 4;
constexpr std::array<Rgb, 6> kPalette{{
    {0.90, 0.15, 0.15},  // red
    {0.15, 0.30, 0.95},  // blue
    {0.15, 0.80, 0.25},  // green
    {0.95, 0.85, 0.10},  // yellow
    {0.85, 0.15, 0.85},  // magenta
    {0.10, 0.85, 0.90},  // cyan
}};

// Is the pixel center (px, py) inside shape `kind` inscribed in `box`?
bool inside(std::size_t kind, const Box& box, double px, double py) {
  const double u = (px - box.cx) / (0.5 * box.w);  // [-1,1] across the box
  const double v = (py - box.cy) / (0.5 * box.h);
  if (std::abs(u) > 1.0 || std::abs(v) > 1.0) return false;
  switch (kind) {
    case 0: return true;                                  // square
    case 1: return u * u + v * v <= 1.0;                  // disk
    case 2: return std::abs(u) <= 0.5 * (v + 1.0);        // triangle, apex up
    case 3: return std::abs(u) + std::abs(v) <= 1.0;      // diamond
    default: return false;
  }
}

void paint(std::vector<double>& img, std::size_t size, const Box& box, std::size_t kind, const Rgb& color) {
  const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(box.x1())));
  const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(box.y1())));
  const auto x1 = std::min(size, static_cast<std::size_t>(std::ceil(box.x2())));
  const auto y1 = std::min(size, static_cast<std::size_t>(std::ceil(box.y2())));
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) {
      if (!inside(kind, box, x + 0.5, y + 0.5)) continue;
      for (std::size_t c = 0; c < 3; ++c) img[(c * size + y) * size + x] = color[c];
    }
  }
}

void stroke(std::vector<double>& img, std::size_t size, double x0, double y0, double x1, double y1, double width,
            const Rgb& color) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const auto steps = static_cast<std::size_t>(std::ceil(len * 2.0)) + 1;
  for (std::size_t s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps);
    Box dot{x0 + t * (x1 - x0), y0 + t * (y1 - y0), width, width};
    paint(img, size, dot, 0, color);
  }
}

SynthScene render(std::uint64_t scene_seed, std::span<const std::size_t> labels, const SynthConfig& cfg) {
  std::mt19937_64 rng(scene_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = cfg.image_size;
  const double size = static_cast<double>(n);

  // Background: tinted gray with a linear gradient.
  std::vector<double> img(3 * n * n);
  const double base = 0.35 + 0.25 * unit(rng);
  const double gx = (unit(rng) - 0.5) * 0.3, gy = (unit(rng) - 0.5) * 0.3;
  Rgb tint{(unit(rng) - 0.5) * 0.1, (unit(rng) - 0.5) * 0.1, (unit(rng) - 0.5) * 0.1};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        img[(c * n + y) * n + x] = base + tint[c] + gx * (x / size - 0.5) + gy * (y / size - 0.5);
      }
    }
  }

  // Clutter: desaturated strokes that never match a class color.
  for (std::size_t i = 0; i < cfg.clutter; ++i) {
    const double g = 0.15 + 0.7 * unit(rng);
    Rgb color{g + (unit(rng) - 0.5) * 0.1, g + (unit(rng) - 0.5) * 0.1, g + (unit(rng) - 0.5) * 0.1};
    stroke(img, n, unit(rng) * size, unit(rng) * size, unit(rng) * size, unit(rng) * size, 1.0 + 2.0 * unit(rng),
           color);
  }

  SynthScene scene;
  scene.seed = scene_seed;
  for (std::size_t label : labels) {
    Box box;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double w = cfg.min_object_size + unit(rng) * (cfg.max_object_size - cfg.min_object_size);
      const double aspect = 0.75 + 0.5 * unit(rng);
      const double h = std::clamp(w * aspect, cfg.min_object_size, cfg.max_object_size);
      box = {0.5 * w + unit(rng) * (size - w), 0.5 * h + unit(rng) * (size - h), w, h};
      bool clear = std::all_of(scene.objects.begin(), scene.objects.end(),
                               [&](const SceneObject& o) { return intersection_area(o.box, box) == 0.0; });
      if (clear) break;
    }
    Rgb color = kPalette[(label - 1) / kShapes];
    for (auto& ch : color) ch = std::clamp(ch + (unit(rng) - 0.5) * 2.0 * cfg.color_jitter, 0.0, 1.0);
    paint(img, n, box, (label - 1) % kShapes, color);
    scene.objects.push_back({box, label});
  }

  for (auto& v : img) v = std::clamp(v + cfg.noise_std * gauss(rng), 0.0, 1.0);
  scene.image = Tensor::from({3, n, n}, std::move(img));
  return scene;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_classes < 2) throw ConfigError("data.num_classes must be at least 2");
  if (num_classes > kMaxSynthClasses) {
    throw ConfigError("data.num_classes must be at most " + std::to_string(kMaxSynthClasses));
  }
  if (image_size < 16) throw ConfigError("data.image_size must be at least 16");
  if (min_objects == 0 || max_objects < min_objects) throw ConfigError("data: need 1 <= min_objects <= max_objects");
  if (!(min_object_size >= 4.0) || max_object_size < min_object_size ||
      max_object_size > static_cast<double>(image_size)) {
    throw ConfigError("data: object sizes must satisfy 4 <= min <= max <= image_size");
  }
  if (noise_std < 0.0 || color_jitter < 0.0) throw ConfigError("data: noise and jitter must be nonnegative");
}

std::vector<SynthScene> synth_dataset(std::uint64_t seed, std::size_t n_images, const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(derive_seed(seed, 0xC1A55));
  std::uniform_int_distribution<std::size_t> count(config.min_objects, config.max_objects);
  std::vector<std::size_t> counts(n_images);
  std::size_t total = 0;
  for (auto& c : counts) total += (c = count(rng));

  // Balanced label bag: every class appears floor or ceil of total/K times.
  std::vector<std::size_t> bag(total);
  for (std::size_t i = 0; i < total; ++i) bag[i] = i % config.num_classes + 1;
  std::shuffle(bag.begin(), bag.end(), rng);

  std::vector<SynthScene> scenes;
  scenes.reserve(n_images);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n_images; ++i) {
    scenes.push_back(render(derive_seed(seed, i, 0x5CE7E), std::span(bag).subspan(next, counts[i]), config));
    next += counts[i];
  }
  return scenes;
}

std::vector<SynthScene> synth_dataset(std::uint64_t seed, std::size_t n_images, std::size_t num_classes,
                                      std::size_t image_size) {
  SynthConfig config;
  config.num_classes = num_classes;
  config.image_size = image_size;
  config.max_object_size = std::min(config.max_object_size, static_cast<double>(image_size) / 2.0);
  config.min_object_size = std::min(config.min_object_size, config.max_object_size);
  return synth_dataset(seed, n_images, config);
}

Tensor batch_images(std::span<const SynthScene> scenes, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("batch_images: empty selection");
  if (indices[0] >= scenes.size()) throw ConfigError("batch_images: index out of range");
  const Shape& s = scenes[indices[0]].image.shape();
  std::vector<double> out;
  out.reserve(indices.size() * scenes[indices[0]].image.numel());
  for (std::size_t i : indices) {
    if (i >= scenes.size()) throw ConfigError("batch_images: index out of range");
    if (scenes[i].image.shape() != s) throw ConfigError("batch_images: images differ in shape");
    for (double v : scenes[i].image.values()) out.push_back(v - 0.5);
  }
  return Tensor::from({indices.size(), s[0], s[1], s[2]}, std::move(out));
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  const auto rank = static_cast<std::uint32_t>(tensor.rank());
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (std::size_t e : tensor.shape()) {
    const auto ext = static_cast<std::uint64_t>(e);
    out.write(reinterpret_cast<const char*>(&ext), sizeof ext);
  }
  out.write(reinterpret_cast<const char*>(tensor.values().data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  if (!out) throw ConfigError("failed writing " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof rank);
  Shape shape(rank);
  for (auto& e : shape) {
    std::uint64_t ext = 0;
    in.read(reinterpret_cast<char*>(&ext), sizeof ext);
    e = ext;
  }
  std::vector<double> values(element_count(shape));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw ConfigError("truncated tensor file " + path.string());
  return Tensor::from(std::move(shape), std::move(values));
}

void save_dataset(const std::filesystem::path& dir, std::span<const SynthScene> scenes, std::uint64_t seed,
                  const SynthConfig& config) {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["format"] = 1;
  index["seed"] = seed;
  index["num_classes"] = config.num_classes;
  index["image_size"] = config.image_size;
  auto images = nlohmann::json::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".bin";
    write_tensor(dir / name.str(), scenes[i].image);
    nlohmann::json entry;
    entry["file"] = name.str();
    entry["seed"] = scenes[i].seed;
    auto objects = nlohmann::json::array();
    for (const auto& o : scenes[i].objects) {
      objects.push_back({{"label", o.label}, {"cx", o.box.cx}, {"cy", o.box.cy}, {"w", o.box.w}, {"h", o.box.h}});
    }
    entry["objects"] = std::move(objects);
    images.push_back(std::move(entry));
  }
  index["images"] = std::move(images);
  std::ofstream out(dir / "index.json");
  out << index.dump(1) << '\n';
}

std::vector<SynthScene> load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw ConfigError("no dataset index in " + dir.string());
  const auto index = nlohmann::json::parse(in);
  std::vector<SynthScene> scenes;
  for (const auto& entry : index.at("images")) {
    SynthScene s;
    s.image = read_tensor(dir / entry.at("file").get<std::string>());
    s.seed = entry.at("seed").get<std::uint64_t>();
    for (const auto& o : entry.at("objects")) {
      s.objects.push_back({{o.at("cx").get<double>(), o.at("cy").get<double>(), o.at("w").get<double>(),
                            o.at("h").get<double>()},
                           o.at("label").get<std::size_t>()});
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace ccnet
