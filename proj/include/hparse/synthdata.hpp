#pragma once

// Composed-shape scenes with exact object/part ground truth. Each object is a
// template of disjoint, color-coded part shapes; objects never overlap.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hparse/dataset.hpp"
#include "hparse/geometry.hpp"
#include "hparse/raster.hpp"

namespace hparse {

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ShapeKind { Disc, Rect };

/// Geometry in the unit frame of the object: rect = (x1, y1, x2, y2), disc = (cx, cy, r).
/// Disc radii scale with the shorter object side.
struct PartShape {
  std::string name;
  ShapeKind kind = ShapeKind::Rect;
  double a = 0, b = 0, c = 0, d = 0;
  Rgb color{255, 255, 255};
};

struct ObjectTemplate {
  std::string name;
  double aspect = 1.0;  // width / height
  std::vector<PartShape> parts;
};

inline std::vector<ObjectTemplate> default_templates() {
  using K = ShapeKind;
  return {
      {"creature", 1.2,
       {{"head", K::Disc, 0.25, 0.24, 0.22, 0, {220, 50, 50}},
        {"body", K::Rect, 0.08, 0.5, 0.95, 0.74, {235, 165, 30}},
        {"leg", K::Rect, 0.45, 0.8, 0.6, 1.0, {190, 70, 210}}}},
      {"tree", 0.8,
       {{"crown", K::Disc, 0.5, 0.34, 0.32, 0, {40, 200, 60}},
        {"trunk", K::Rect, 0.38, 0.72, 0.62, 1.0, {150, 90, 25}}}},
      {"vehicle", 1.4,
       {{"chassis", K::Rect, 0.0, 0.42, 1.0, 0.72, {40, 90, 235}},
        {"cabin", K::Rect, 0.22, 0.08, 0.72, 0.36, {60, 215, 225}},
        {"wheel", K::Disc, 0.5, 0.86, 0.14, 0, {245, 240, 60}}}},
  };
}

struct SynthSpec {
  int image_size = 128;
  std::vector<ObjectTemplate> templates = default_templates();
  int min_objects = 1;
  int max_objects = 3;
  double min_height = 30.0;  // object height in pixels before aspect
  double max_height = 48.0;
  double aspect_jitter = 0.1;
  std::uint64_t seed = 0;
  int train_size = 500;
  int val_size = 100;
  std::set<std::string> novel_templates;  // absent from train images, present in val
  int max_retries = 200;

  void check() const {
    if (image_size < 8) throw SynthError("image_size must be at least 8");
    if (templates.empty()) throw SynthError("at least one template is required");
    if (min_objects < 0 || max_objects < min_objects) throw SynthError("invalid objects-per-image range");
    if (!(min_height > 0) || max_height < min_height) throw SynthError("invalid object height range");
    if (aspect_jitter < 0 || aspect_jitter >= 1) throw SynthError("aspect_jitter must lie in [0,1)");
    if (train_size < 0 || val_size < 0 || max_retries < 1) throw SynthError("invalid sizes");
    std::set<std::string> names;
    for (const auto& t : templates) {
      if (t.parts.empty()) throw SynthError("template '" + t.name + "' has no parts");
      if (!names.insert(t.name).second) throw SynthError("duplicate template '" + t.name + "'");
    }
    for (const auto& n : novel_templates)
      if (!names.contains(n)) throw SynthError("unknown novel template '" + n + "'");
  }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  nlohmann::json templates = nlohmann::json::array();
  for (const auto& t : s.templates) {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : t.parts)
      parts.push_back({{"name", p.name},
                       {"kind", p.kind == ShapeKind::Disc ? "disc" : "rect"},
                       {"geometry", p.kind == ShapeKind::Disc ? nlohmann::json{p.a, p.b, p.c} : nlohmann::json{p.a, p.b, p.c, p.d}},
                       {"color", p.color}});
    templates.push_back({{"name", t.name}, {"aspect", t.aspect}, {"parts", parts}});
  }
  j = {{"image_size", s.image_size},     {"templates", templates},       {"min_objects", s.min_objects},
       {"max_objects", s.max_objects},   {"min_height", s.min_height},   {"max_height", s.max_height},
       {"aspect_jitter", s.aspect_jitter}, {"seed", s.seed},             {"train_size", s.train_size},
       {"val_size", s.val_size},         {"novel_templates", s.novel_templates}, {"max_retries", s.max_retries}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  s.image_size = j.value("image_size", s.image_size);
  s.min_objects = j.value("min_objects", s.min_objects);
  s.max_objects = j.value("max_objects", s.max_objects);
  s.min_height = j.value("min_height", s.min_height);
  s.max_height = j.value("max_height", s.max_height);
  s.aspect_jitter = j.value("aspect_jitter", s.aspect_jitter);
  s.seed = j.value("seed", s.seed);
  s.train_size = j.value("train_size", s.train_size);
  s.val_size = j.value("val_size", s.val_size);
  s.max_retries = j.value("max_retries", s.max_retries);
  if (j.contains("novel_templates")) s.novel_templates = j["novel_templates"].get<std::set<std::string>>();
  if (j.contains("templates")) {
    s.templates.clear();
    for (const auto& t : j["templates"]) {
      ObjectTemplate ot{t.at("name").get<std::string>(), t.value("aspect", 1.0), {}};
      for (const auto& p : t.at("parts")) {
        PartShape ps;
        ps.name = p.at("name").get<std::string>();
        const auto kind = p.at("kind").get<std::string>();
        if (kind != "disc" && kind != "rect") throw SynthError("unknown shape kind '" + kind + "'");
        ps.kind = kind == "disc" ? ShapeKind::Disc : ShapeKind::Rect;
        const auto g = p.at("geometry").get<std::vector<double>>();
        if (g.size() != (ps.kind == ShapeKind::Disc ? 3u : 4u)) throw SynthError("bad geometry for part '" + ps.name + "'");
        ps.a = g[0];
        ps.b = g[1];
        ps.c = g[2];
        ps.d = g.size() > 3 ? g[3] : 0.0;
        ps.color = p.at("color").get<Rgb>();
        ot.parts.push_back(ps);
      }
      s.templates.push_back(std::move(ot));
    }
  }
}

/// Pixels whose centers fall inside the closed disc.
inline Mask rasterize_disc(double cx, double cy, double r, int height, int width) {
  Mask m(height, width);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r))), y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + r)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r))), x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + r)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) m.set(y, x);
    }
  return m;
}

struct PlacedPart {
  std::size_t part_index = 0;
  Mask mask;
};

struct PlacedObject {
  std::size_t template_index = 0;
  Box frame;  // placement frame in pixels
  std::vector<PlacedPart> parts;
};

struct Scene {
  int height = 0;
  int width = 0;
  std::uint64_t texture_seed = 0;
  std::vector<PlacedObject> objects;
};

/// Rasterizes one template into `frame`; empty optional when parts collide or vanish.
inline std::optional<PlacedObject> instantiate(const ObjectTemplate& t, std::size_t template_index, const Box& frame,
                                              int height, int width) {
  PlacedObject obj{template_index, frame, {}};
  Mask occupied(height, width);
  const double sx = frame.width(), sy = frame.height(), s = std::min(sx, sy);
  for (std::size_t k = 0; k < t.parts.size(); ++k) {
    const auto& p = t.parts[k];
    Mask m = p.kind == ShapeKind::Disc
                 ? rasterize_disc(frame.x1 + p.a * sx, frame.y1 + p.b * sy, p.c * s, height, width)
                 : rasterize_box({frame.x1 + p.a * sx, frame.y1 + p.b * sy, frame.x1 + p.c * sx, frame.y1 + p.d * sy}, height, width);
    if (m.area() == 0 || intersection_area(m, occupied) > 0) return std::nullopt;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (m.at(y, x)) occupied.set(y, x);
    obj.parts.push_back({k, std::move(m)});
  }
  return obj;
}

/// Places between min_objects and max_objects non-overlapping objects drawn from `allowed`.
template <class Rng>
Scene place_scene(const SynthSpec& spec, const std::vector<std::size_t>& allowed, Rng& rng) {
  Scene scene{spec.image_size, spec.image_size, rng(), {}};
  if (allowed.empty()) return scene;
  std::uniform_int_distribution<int> count(spec.min_objects, spec.max_objects);
  std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
  std::uniform_real_distribution<double> height(spec.min_height, spec.max_height);
  std::uniform_real_distribution<double> jitter(1.0 - spec.aspect_jitter, 1.0 + spec.aspect_jitter);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = count(rng);
  const double margin = 2.0;
  std::vector<Box> taken;
  for (int i = 0; i < n; ++i) {
    const std::size_t ti = allowed[pick(rng)];
    const auto& t = spec.templates[ti];
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      const double h = std::round(height(rng));
      const double w = std::round(h * t.aspect * jitter(rng));
      const double free_x = spec.image_size - w, free_y = spec.image_size - h;
      const double ux = unit(rng), uy = unit(rng);
      if (free_x < 0 || free_y < 0) continue;
      const Box f{std::floor(ux * free_x), std::floor(uy * free_y), 0, 0};
      const Box frame{f.x1, f.y1, f.x1 + w, f.y1 + h};
      const Box padded{frame.x1 - margin, frame.y1 - margin, frame.x2 + margin, frame.y2 + margin};
      bool clash = false;
      for (const auto& b : taken) clash = clash || intersection_area(b, padded) > 0;
      if (clash) continue;
      auto obj = instantiate(t, ti, frame, spec.image_size, spec.image_size);
      if (!obj) continue;
      taken.push_back(frame);
      scene.objects.push_back(std::move(*obj));
      placed = true;
    }
    if (!placed) {
      if (i >= spec.min_objects) break;  // crowded image: keep what fits
      throw SynthError("could not place template '" + t.name + "' after " + std::to_string(spec.max_retries) + " attempts");
    }
  }
  return scene;
}

/// Grey textured background, then every part in its template color.
inline Image render_image(const Scene& scene, const std::vector<ObjectTemplate>& templates) {
  Image img(scene.height, scene.width);
  std::mt19937_64 rng(scene.texture_seed);
  std::uniform_int_distribution<int> base(70, 120), noise(-10, 10);
  std::uniform_real_distribution<double> freq(0.05, 0.25), phase(0.0, 6.283185307179586);
  const int g0 = base(rng);
  const double fx = freq(rng), fy = freq(rng), ph = phase(rng);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const int v = std::clamp(g0 + static_cast<int>(std::lround(12.0 * std::sin(fx * x + fy * y + ph))) + noise(rng), 0, 255);
      const int tint = noise(rng) / 3;
      img.set(y, x, {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(std::clamp(v + tint, 0, 255)),
                     static_cast<std::uint8_t>(v)});
    }
  for (const auto& obj : scene.objects)
    for (const auto& p : obj.parts) {
      const Rgb c = templates[obj.template_index].parts[p.part_index].color;
      for (int y = 0; y < scene.height; ++y)
        for (int x = 0; x < scene.width; ++x)
          if (p.mask.at(y, x)) img.set(y, x, c);
    }
  return img;
}

struct SynthSplit {
  HierarchicalDataset dataset;
  std::vector<Image> images;  // aligned with dataset.images
};

struct SynthCorpus {
  SynthSplit train;
  SynthSplit val;
};

/// Object categories get ids 1..T in template order; part categories follow, template-major.
inline std::vector<CategoryRecord> synth_categories(const SynthSpec& spec) {
  std::vector<CategoryRecord> cats;
  Id next = 1;
  for (const auto& t : spec.templates)
    cats.push_back({next++, t.name, Level::Object, std::nullopt,
                    spec.novel_templates.contains(t.name) ? Split::Novel : Split::Base});
  for (std::size_t ti = 0; ti < spec.templates.size(); ++ti)
    for (const auto& p : spec.templates[ti].parts)
      cats.push_back({next++, spec.templates[ti].name + " " + p.name, Level::Part, static_cast<Id>(ti + 1),
                      cats[ti].split});
  return cats;
}

namespace detail {

inline std::mt19937_64 image_rng(std::uint64_t seed, std::uint32_t split, std::uint32_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), split, index};
  return std::mt19937_64(seq);
}

inline SynthSplit build_split(const SynthSpec& spec, const std::string& split_name, std::uint32_t split_tag, int size,
                              bool include_novel) {
  SynthSplit out;
  out.dataset.categories = synth_categories(spec);
  std::vector<std::size_t> allowed;
  for (std::size_t i = 0; i < spec.templates.size(); ++i)
    if (include_novel || !spec.novel_templates.contains(spec.templates[i].name)) allowed.push_back(i);
  std::vector<Id> first_part_cat(spec.templates.size());
  Id next = static_cast<Id>(spec.templates.size()) + 1;
  for (std::size_t i = 0; i < spec.templates.size(); ++i) {
    first_part_cat[i] = next;
    next += static_cast<Id>(spec.templates[i].parts.size());
  }
  Id ann_id = 1;
  for (int i = 0; i < size; ++i) {
    auto rng = image_rng(spec.seed, split_tag, static_cast<std::uint32_t>(i));
    const Scene scene = place_scene(spec, allowed, rng);
    const Id image_id = i + 1;
    char name[64];
    std::snprintf(name, sizeof name, "images/%s/%06d.ppm", split_name.c_str(), i);
    out.dataset.images.push_back({image_id, scene.width, scene.height, name});
    out.images.push_back(render_image(scene, spec.templates));
    for (const auto& obj : scene.objects) {
      std::vector<Box> boxes;
      std::vector<Mask> masks;
      for (const auto& p : obj.parts) {
        boxes.push_back(tight_box(p.mask));
        masks.push_back(p.mask);
      }
      const Id obj_id = ann_id++;
      out.dataset.annotations.push_back({obj_id, image_id, static_cast<Id>(obj.template_index + 1), enclosing_box(boxes),
                                         mask_union(masks), Level::Object, std::nullopt});
      for (std::size_t k = 0; k < obj.parts.size(); ++k)
        out.dataset.annotations.push_back({ann_id++, image_id, first_part_cat[obj.template_index] + static_cast<Id>(obj.parts[k].part_index),
                                           boxes[k], masks[k], Level::Part, obj_id});
    }
  }
  validate(out.dataset);
  return out;
}

}  // namespace detail

/// Deterministic in spec (including seed); each image draws from its own seeded stream.
inline SynthCorpus generate_dataset(const SynthSpec& spec) {
  spec.check();
  return {detail::build_split(spec, "train", 0, spec.train_size, false),
          detail::build_split(spec, "val", 1, spec.val_size, true)};
}

/// Writes train.json, val.json, spec.json and images/{train,val}/*.ppm under `dir`.
inline void write_corpus(const SynthCorpus& corpus, const SynthSpec& spec, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images" / "train", ec);
  std::filesystem::create_directories(dir / "images" / "val", ec);
  if (ec) throw SynthError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto* s : {&corpus.train, &corpus.val})
    for (std::size_t i = 0; i < s->images.size(); ++i) write_ppm(s->images[i], dir / s->dataset.images[i].file_name);
  save_dataset(corpus.train.dataset, dir / "train.json");
  save_dataset(corpus.val.dataset, dir / "val.json");
  std::ofstream out(dir / "spec.json");
  out << nlohmann::json(spec).dump(2) << "\n";
}

}  // namespace hparse
