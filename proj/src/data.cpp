#include "ftn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ftn/image_io.hpp"
#include "ftn/tensor.hpp"

namespace ftn {

namespace fs = std::filesystem;
using nlohmann::json;

std::string SyntheticSpec::to_json() const {
  json j;
  j["num_ids"] = num_ids;
  j["imgs_per_id"] = imgs_per_id;
  j["height"] = height;
  j["width"] = width;
  j["num_cameras"] = num_cameras;
  j["split_mode"] = split_mode;
  j["pos_jitter"] = pos_jitter;
  j["scale_jitter"] = scale_jitter;
  j["brightness_jitter"] = brightness_jitter;
  return j.dump(2);
}

SyntheticSpec SyntheticSpec::from_json_text(const std::string& text) {
  json j = json::parse(text);
  SyntheticSpec s;
  s.num_ids = j.value("num_ids", s.num_ids);
  s.imgs_per_id = j.value("imgs_per_id", s.imgs_per_id);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.num_cameras = j.value("num_cameras", s.num_cameras);
  s.split_mode = j.value("split_mode", s.split_mode);
  s.pos_jitter = j.value("pos_jitter", s.pos_jitter);
  s.scale_jitter = j.value("scale_jitter", s.scale_jitter);
  s.brightness_jitter = j.value("brightness_jitter", s.brightness_jitter);
  return s;
}

namespace synth {

namespace {
std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hh = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hh, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hh < 1) { r = c; g = x; }
  else if (hh < 2) { r = x; g = c; }
  else if (hh < 3) { g = c; b = x; }
  else if (hh < 4) { g = x; b = c; }
  else if (hh < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {r + m, g + m, b + m};
}
}  // namespace

Style style_for_id(int id) {
  constexpr double kGolden = 0.61803398874989484820;
  Style st;
  const double hue_a = std::fmod(kGolden * (id + 1), 1.0);
  const double hue_b = std::fmod(hue_a + 0.37, 1.0);
  st.color_a = hsv_to_rgb(hue_a, 0.80, 0.85);
  st.color_b = hsv_to_rgb(hue_b, 0.75, 0.45);
  st.stripe_width = 2 + id % 3;
  st.orientation = (id / 3) % 3;
  return st;
}

Background random_background(Rng& rng) {
  Background bg;
  bg.kind = rng.uniform_int(4);
  for (auto& v : bg.c0) v = rng.uniform(0.05, 0.95);
  for (auto& v : bg.c1) v = rng.uniform(0.05, 0.95);
  bg.noise_seed = rng.next_u64();
  return bg;
}

Jitter random_jitter(const SyntheticSpec& spec, Rng& rng) {
  Jitter j;
  j.dy = rng.uniform(-spec.pos_jitter, spec.pos_jitter) * spec.height;
  j.dx = rng.uniform(-spec.pos_jitter, spec.pos_jitter) * spec.width;
  j.scale = 1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter);
  j.brightness = 1.0 + rng.uniform(-spec.brightness_jitter, spec.brightness_jitter);
  return j;
}

void render(const Style& style, const Background& bg, const Jitter& jit,
            int height, int width, std::vector<float>& rgb,
            std::vector<float>& silhouette) {
  const int plane = height * width;
  rgb.assign(static_cast<size_t>(plane) * 3, 0.0f);
  silhouette.assign(static_cast<size_t>(plane), 0.0f);

  // Background, independent of the identity.
  Rng noise(bg.noise_seed);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::array<double, 3> col{};
      switch (bg.kind) {
        case 0:
          col = bg.c0;
          break;
        case 1: {
          const double t = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
          for (int c = 0; c < 3; ++c)
            col[c] = bg.c0[c] + (bg.c1[c] - bg.c0[c]) * t;
          break;
        }
        case 2: {
          const double t = width > 1 ? static_cast<double>(x) / (width - 1) : 0.0;
          for (int c = 0; c < 3; ++c)
            col[c] = bg.c0[c] + (bg.c1[c] - bg.c0[c]) * t;
          break;
        }
        default:
          for (int c = 0; c < 3; ++c)
            col[c] = bg.c0[c] + 0.25 * (noise.uniform() - 0.5);
          break;
      }
      for (int c = 0; c < 3; ++c)
        rgb[static_cast<size_t>(c) * plane + y * width + x] =
            static_cast<float>(col[c]);
    }
  }

  // Silhouette: ellipse torso + rectangle legs, jittered as a whole.
  const double cy = 0.32 * height + jit.dy;
  const double cx = 0.50 * width + jit.dx;
  const double torso_ay = 0.20 * height * jit.scale;
  const double torso_ax = 0.28 * width * jit.scale;
  const double legs_top = cy + 0.14 * height * jit.scale;
  const double legs_bottom = legs_top + 0.44 * height * jit.scale;
  const double legs_half_w = 0.16 * width * jit.scale;

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double ey = (y - cy) / torso_ay;
      const double ex = (x - cx) / torso_ax;
      const bool torso = ey * ey + ex * ex <= 1.0;
      const bool legs = y >= legs_top && y <= legs_bottom &&
                        std::abs(x - cx) <= legs_half_w;
      if (!torso && !legs) continue;
      silhouette[static_cast<size_t>(y) * width + x] = 1.0f;
      // Stripe phase moves with the silhouette so the texture belongs to
      // the person, not to the pixel grid.
      double t;
      switch (style.orientation) {
        case 0: t = y - cy; break;
        case 1: t = x - cx; break;
        default: t = (y - cy) + (x - cx); break;
      }
      const long stripe =
          static_cast<long>(std::floor(t / style.stripe_width));
      const auto& col = (stripe % 2 + 2) % 2 == 0 ? style.color_a : style.color_b;
      for (int c = 0; c < 3; ++c)
        rgb[static_cast<size_t>(c) * plane + y * width + x] =
            static_cast<float>(col[c]);
    }
  }

  for (auto& v : rgb)
    v = std::clamp(static_cast<float>(v * jit.brightness), 0.0f, 1.0f);
}

}  // namespace synth

// ---------------------------------------------------------------------------

void generate_dataset(const SyntheticSpec& spec, std::uint64_t seed,
                      const std::string& out_dir) {
  if (spec.num_ids < 2 || spec.imgs_per_id < 2)
    throw Error("generate_dataset: need at least 2 ids with 2 images each");
  if (spec.num_cameras < 2)
    throw Error("generate_dataset: need at least 2 cameras");
  if (spec.split_mode != "overfit" && spec.split_mode != "disjoint")
    throw Error("generate_dataset: split_mode must be 'overfit' or 'disjoint'");

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (ec)
    throw Error("generate_dataset: cannot create '" + out_dir +
                "': " + ec.message());

  Rng master(seed);
  json manifest = json::array();
  std::vector<float> rgb, sil;
  for (int id = 0; id < spec.num_ids; ++id) {
    const synth::Style style = synth::style_for_id(id);
    for (int k = 0; k < spec.imgs_per_id; ++k) {
      // Per-image stream keyed by the global image index only, so
      // backgrounds, cameras and jitter are independent of the identity.
      Rng r = master.fork(static_cast<std::uint64_t>(id) * spec.imgs_per_id + k);
      const synth::Background bg = synth::random_background(r);
      const synth::Jitter jit = synth::random_jitter(spec, r);
      const int cam = r.uniform_int(spec.num_cameras);
      synth::render(style, bg, jit, spec.height, spec.width, rgb, sil);

      std::ostringstream base;
      base << "id" << std::setw(3) << std::setfill('0') << id << "_img"
           << std::setw(2) << std::setfill('0') << k;
      const std::string file = base.str() + ".ppm";
      const std::string mask_file = "masks/" + base.str() + ".pgm";
      write_ppm((fs::path(out_dir) / file).string(), spec.height, spec.width,
                rgb.data());
      write_pgm((fs::path(out_dir) / mask_file).string(), spec.height,
                spec.width, sil.data());

      std::string split;
      if (spec.split_mode == "overfit") {
        split = "train";
      } else {
        if (id < spec.num_ids / 2)
          split = "train";
        else
          split = k == 0 ? "query" : "gallery";
      }
      manifest.push_back({{"file", file},
                          {"mask", mask_file},
                          {"id", id},
                          {"cam", cam},
                          {"split", split}});
    }
  }

  json root;
  root["height"] = spec.height;
  root["width"] = spec.width;
  root["spec"] = json::parse(spec.to_json());
  root["seed"] = seed;
  root["images"] = std::move(manifest);
  std::ofstream os(fs::path(out_dir) / "manifest.json");
  if (!os) throw Error("generate_dataset: cannot write manifest.json");
  os << root.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw Error("load_dataset: cannot open '" + dir + "/manifest.json'");
  json root = json::parse(is);
  Dataset ds;
  ds.height = root.at("height").get<int>();
  ds.width = root.at("width").get<int>();
  for (const auto& row : root.at("images")) {
    ImageRecord rec;
    rec.file = row.at("file").get<std::string>();
    rec.mask_file = row.value("mask", "");
    rec.id = row.at("id").get<int>();
    rec.cam = row.at("cam").get<int>();
    rec.split = row.at("split").get<std::string>();
    LoadedImage img = read_ppm((fs::path(dir) / rec.file).string());
    if (img.height != ds.height || img.width != ds.width)
      throw Error("load_dataset: image size mismatch in '" + rec.file + "'");
    ds.images.push_back(std::move(img.data));
    if (!rec.mask_file.empty()) {
      LoadedImage m = read_pgm((fs::path(dir) / rec.mask_file).string());
      ds.silhouettes.push_back(std::move(m.data));
    } else {
      ds.silhouettes.emplace_back();
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::vector<int> Dataset::train_indices() const {
  return indices_with_split("train");
}

std::vector<int> Dataset::indices_with_split(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::train_ids() const {
  std::set<int> ids;
  for (const auto& r : records)
    if (r.split == "train") ids.insert(r.id);
  return {ids.begin(), ids.end()};
}

}  // namespace ftn
