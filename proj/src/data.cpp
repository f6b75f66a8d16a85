#include "fslab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fslab {

namespace {

constexpr double kLumR = 0.299, kLumG = 0.587, kLumB = 0.114;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

void clamp_pixels(std::vector<double>& pixels) {
  for (auto& v : pixels) v = clamp01(v);
}

void check_image(const TensorPtr& pixels) {
  if (!pixels || pixels->ndim() != 3 || pixels->shape[0] != 3) {
    throw ShapeError("image: expected [3,H,W] pixels");
  }
}

double fract(double v) { return v - std::floor(v); }

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = fract(h) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// Bilinear sample of a continuous crop region into out_size*out_size.
TensorPtr crop_resize(const TensorPtr& pixels, double y0, double x0, double crop_h, double crop_w,
                      int out_size) {
  const int h = pixels->shape[1], w = pixels->shape[2];
  std::vector<double> out(static_cast<size_t>(3) * out_size * out_size);
  for (int c = 0; c < 3; ++c) {
    const double* plane = pixels->data.data() + static_cast<size_t>(c) * h * w;
    for (int i = 0; i < out_size; ++i) {
      const double sy = y0 + (i + 0.5) * crop_h / out_size - 0.5;
      for (int j = 0; j < out_size; ++j) {
        const double sx = x0 + (j + 0.5) * crop_w / out_size - 0.5;
        const double cy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
        const double cx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
        const int iy = std::min(static_cast<int>(cy), h - 2 >= 0 ? h - 2 : 0);
        const int ix = std::min(static_cast<int>(cx), w - 2 >= 0 ? w - 2 : 0);
        const double fy = cy - iy, fx = cx - ix;
        const int iy1 = std::min(iy + 1, h - 1), ix1 = std::min(ix + 1, w - 1);
        const double v00 = plane[iy * w + ix], v01 = plane[iy * w + ix1];
        const double v10 = plane[iy1 * w + ix], v11 = plane[iy1 * w + ix1];
        out[(static_cast<size_t>(c) * out_size + i) * out_size + j] =
            (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  }
  clamp_pixels(out);
  return Tensor::make({3, out_size, out_size}, std::move(out));
}

}  // namespace

AugmentLevel augment_level_from_string(const std::string& s) {
  if (s == "none") return AugmentLevel::None;
  if (s == "low") return AugmentLevel::Low;
  if (s == "high") return AugmentLevel::High;
  throw ConfigError("augment level must be none|low|high, got '" + s + "'");
}

const char* augment_level_name(AugmentLevel level) {
  switch (level) {
    case AugmentLevel::None: return "none";
    case AugmentLevel::Low: return "low";
    default: return "high";
  }
}

TensorPtr resize_image(const TensorPtr& pixels, int size) {
  check_image(pixels);
  if (pixels->shape[1] == size && pixels->shape[2] == size) return pixels;
  return crop_resize(pixels, 0.0, 0.0, pixels->shape[1], pixels->shape[2], size);
}

Pools build_pools(const Dataset& dataset, int per_class) {
  if (per_class < 1) throw ConfigError("build_pools: per_class must be >= 1");
  if (dataset.num_classes < 1) throw DataError("build_pools: dataset has no classes");
  Pools pools;
  pools.num_classes = dataset.num_classes;
  for (int split = 0; split < 2; ++split) {
    const auto& images = split == 0 ? dataset.train : dataset.val;
    auto& pool = split == 0 ? pools.train_pool : pools.test_pool;
    std::vector<int> taken(dataset.num_classes, 0);
    for (const auto& img : images) {
      if (taken[img.class_id] < per_class) {
        pool.push_back(img);
        ++taken[img.class_id];
      }
    }
    for (int c = 0; c < dataset.num_classes; ++c) {
      if (taken[c] < per_class) {
        const std::string name = c < static_cast<int>(dataset.label_names.size())
                                     ? dataset.label_names[c]
                                     : std::to_string(c);
        throw DataError("build_pools: class " + name + " has only " + std::to_string(taken[c]) +
                        " images in the " + (split == 0 ? "train" : "val") + " split, need " +
                        std::to_string(per_class));
      }
    }
  }
  return pools;
}

Episode sample_episode(const Pools& pools, int n_shot, Rng rng) {
  if (n_shot < 1) throw ConfigError("episode: n_shot must be >= 1");
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < pools.train_pool.size(); ++i) {
    by_class[pools.train_pool[i].class_id].push_back(static_cast<int>(i));
  }
  Episode episode;
  episode.n_shot = n_shot;
  for (auto& [cid, indices] : by_class) {
    if (static_cast<int>(indices.size()) < n_shot) {
      throw DataError("episode: class " + std::to_string(cid) + " has only " +
                      std::to_string(indices.size()) + " pool images, need " +
                      std::to_string(n_shot));
    }
    auto class_rng = rng.fork(static_cast<uint64_t>(cid));
    class_rng.shuffle(indices);
    for (int k = 0; k < n_shot; ++k) episode.support.push_back(pools.train_pool[indices[k]]);
    episode.class_ids.push_back(cid);
  }
  episode.query = pools.test_pool;

  std::set<std::string> support_ids;
  for (const auto& img : episode.support) support_ids.insert(img.source_id);
  for (const auto& img : episode.query) {
    if (support_ids.count(img.source_id)) {
      throw DataError("episode: source " + img.source_id + " appears in both support and query");
    }
  }
  return episode;
}

BatchPlan stratified_batches(const std::vector<int>& labels, int classes_per_batch,
                             int instances_per_class, Rng rng) {
  if (instances_per_class < 2) {
    throw ConfigError(
        "stratified sampler: instances_per_class must be >= 2, otherwise batches carry no "
        "positive pairs and the contrastive loss is ineffective");
  }
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  const int num_classes = static_cast<int>(by_class.size());
  if (classes_per_batch < 1 || classes_per_batch > num_classes) {
    throw ConfigError("stratified sampler: classes_per_batch must be in [1," +
                      std::to_string(num_classes) + "], got " + std::to_string(classes_per_batch));
  }
  for (const auto& [cid, idx] : by_class) {
    if (static_cast<int>(idx.size()) < instances_per_class) {
      throw ConfigError("stratified sampler: class " + std::to_string(cid) + " has " +
                        std::to_string(idx.size()) + " samples, need >= " +
                        std::to_string(instances_per_class));
    }
  }

  const int batch_size = classes_per_batch * instances_per_class;
  const int num_batches =
      static_cast<int>((labels.size() + batch_size - 1) / static_cast<size_t>(batch_size));

  auto class_rng = rng.fork("classes");
  std::vector<int> class_ids;
  for (const auto& [cid, idx] : by_class) class_ids.push_back(cid);
  std::deque<int> class_queue;
  auto refill_classes = [&] {
    auto order = class_ids;
    class_rng.shuffle(order);
    for (int c : order) class_queue.push_back(c);
  };

  std::map<int, std::deque<int>> streams;
  std::map<int, Rng> stream_rng;
  for (int c : class_ids) stream_rng.emplace(c, rng.fork("class").fork(static_cast<uint64_t>(c)));
  auto draw_from_class = [&](int cid, int count, std::vector<int>& out) {
    auto& stream = streams[cid];
    std::vector<int> drawn;
    for (int k = 0; k < count; ++k) {
      if (stream.empty()) {
        // refill with a fresh shuffle, excluding what this draw already took
        auto candidates = by_class[cid];
        candidates.erase(std::remove_if(candidates.begin(), candidates.end(),
                                        [&](int idx) {
                                          return std::find(drawn.begin(), drawn.end(), idx) !=
                                                 drawn.end();
                                        }),
                         candidates.end());
        stream_rng.at(cid).shuffle(candidates);
        for (int idx : candidates) stream.push_back(idx);
      }
      drawn.push_back(stream.front());
      stream.pop_front();
    }
    out.insert(out.end(), drawn.begin(), drawn.end());
  };

  BatchPlan plan;
  plan.kind = SamplerKind::Stratified;
  plan.classes_per_batch = classes_per_batch;
  plan.instances_per_class = instances_per_class;
  for (int b = 0; b < num_batches; ++b) {
    std::vector<int> selected;
    std::vector<int> deferred;
    while (static_cast<int>(selected.size()) < classes_per_batch) {
      if (class_queue.empty()) refill_classes();
      const int c = class_queue.front();
      class_queue.pop_front();
      if (std::find(selected.begin(), selected.end(), c) != selected.end()) {
        deferred.push_back(c);
      } else {
        selected.push_back(c);
      }
    }
    for (auto it = deferred.rbegin(); it != deferred.rend(); ++it) class_queue.push_front(*it);
    std::vector<int> batch;
    for (int c : selected) draw_from_class(c, instances_per_class, batch);
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

BatchPlan random_batches(int num_samples, int batch_size, Rng rng) {
  if (batch_size < 1) throw ConfigError("random sampler: batch_size must be >= 1");
  if (num_samples < 1) throw ConfigError("random sampler: no samples");
  std::vector<int> order(num_samples);
  for (int i = 0; i < num_samples; ++i) order[i] = i;
  rng.shuffle(order);
  BatchPlan plan;
  plan.kind = SamplerKind::Random;
  for (int start = 0; start < num_samples; start += batch_size) {
    const int end = std::min(start + batch_size, num_samples);
    plan.batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return plan;
}

LabeledImage augment(const LabeledImage& image, AugmentLevel level, Rng& rng) {
  check_image(image.pixels);
  const int size = image.pixels->shape[1];
  LabeledImage out = image;
  if (level == AugmentLevel::None) {
    out.pixels = resize_image(image.pixels, size);
    return out;
  }

  // random resized crop: square crop with area scale in [0.6, 1.0]
  const double area = rng.uniform(0.6, 1.0);
  const double side = std::sqrt(area) * size;
  const double y0 = rng.uniform(0.0, size - side);
  const double x0 = rng.uniform(0.0, size - side);
  auto pixels = crop_resize(image.pixels, y0, x0, side, side, size);

  if (rng.bernoulli(0.5)) {
    auto flipped = pixels->data;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          flipped[(static_cast<size_t>(c) * size + i) * size + j] =
              pixels->data[(static_cast<size_t>(c) * size + i) * size + (size - 1 - j)];
        }
      }
    }
    pixels = Tensor::make(pixels->shape, std::move(flipped));
  }

  if (level == AugmentLevel::High) {
    auto data = pixels->data;
    const size_t plane = static_cast<size_t>(size) * size;
    const double fb = rng.uniform(0.7, 1.3);
    const double fc = rng.uniform(0.7, 1.3);
    const double fs = rng.uniform(0.7, 1.3);
    const bool to_gray = rng.bernoulli(0.2);

    for (auto& v : data) v *= fb;

    double mean_lum = 0.0;
    for (size_t p = 0; p < plane; ++p) {
      mean_lum += kLumR * data[p] + kLumG * data[plane + p] + kLumB * data[2 * plane + p];
    }
    mean_lum /= static_cast<double>(plane);
    for (auto& v : data) v = mean_lum + (v - mean_lum) * fc;

    for (size_t p = 0; p < plane; ++p) {
      const double lum = kLumR * data[p] + kLumG * data[plane + p] + kLumB * data[2 * plane + p];
      for (int c = 0; c < 3; ++c) {
        double& v = data[static_cast<size_t>(c) * plane + p];
        v = to_gray ? lum : lum + (v - lum) * fs;
      }
    }
    clamp_pixels(data);
    pixels = Tensor::make(pixels->shape, std::move(data));
  }

  out.pixels = pixels;
  return out;
}

Dataset synth_dataset(int num_classes, int per_class, int image_size, uint64_t seed,
                      int class_offset) {
  if (num_classes < 2) throw ConfigError("synth dataset: need >= 2 classes");
  if (per_class < 1) throw ConfigError("synth dataset: per_class must be >= 1");
  if (image_size < 8) throw ConfigError("synth dataset: image_size must be >= 8");

  Dataset dataset;
  dataset.num_classes = num_classes;
  dataset.image_size = image_size;
  Rng root = Rng(seed).fork("synth");

  for (int cid = 0; cid < num_classes; ++cid) {
    const int tid = cid + class_offset;
    const double hue = fract(0.137 + tid * 0.61803398875);
    const int pattern = tid % 3;
    auto class_rng = root.fork(static_cast<uint64_t>(tid));

    // class-canonical pattern parameters
    const double angle = class_rng.uniform(0.0, 3.14159265358979);
    const double period = 0.16 + 0.08 * class_rng.uniform();
    const int cells = 3 + class_rng.uniform_int(3);
    const int disk_count = 2 + class_rng.uniform_int(3);
    const double disk_radius = 0.10 + 0.05 * class_rng.uniform();
    std::vector<std::pair<double, double>> disk_centers;
    for (int k = 0; k < disk_count; ++k) {
      disk_centers.emplace_back(class_rng.uniform(0.2, 0.8), class_rng.uniform(0.2, 0.8));
    }

    for (int idx = 0; idx < per_class; ++idx) {
      auto img_rng = class_rng.fork("image").fork(static_cast<uint64_t>(idx));
      const double hue_noise = img_rng.uniform(-0.03, 0.03);
      const double scale = img_rng.uniform(0.9, 1.1);
      const double jx = img_rng.uniform(-0.08, 0.08);
      const double jy = img_rng.uniform(-0.08, 0.08);
      const double phase = img_rng.uniform(0.0, 6.28318);
      const double bg_v = img_rng.uniform(0.25, 0.4);

      double fg_r, fg_g, fg_b, bg_r, bg_g, bg_b;
      hsv_to_rgb(hue + hue_noise, 0.75, 0.9, fg_r, fg_g, fg_b);
      hsv_to_rgb(hue + hue_noise + 0.5, 0.25, bg_v, bg_r, bg_g, bg_b);

      std::vector<double> pixels(static_cast<size_t>(3) * image_size * image_size);
      const size_t plane = static_cast<size_t>(image_size) * image_size;
      for (int py = 0; py < image_size; ++py) {
        for (int px = 0; px < image_size; ++px) {
          const double u = ((px + 0.5) / image_size - 0.5 - jx) / scale + 0.5;
          const double v = ((py + 0.5) / image_size - 0.5 - jy) / scale + 0.5;
          bool fg = false;
          if (pattern == 0) {
            const double s = std::sin(2.0 * 3.14159265358979 *
                                          (u * std::cos(angle) + v * std::sin(angle)) / period +
                                      phase);
            fg = s > 0.0;
          } else if (pattern == 1) {
            const int gx = static_cast<int>(std::floor(u * cells + phase * 0.1));
            const int gy = static_cast<int>(std::floor(v * cells + phase * 0.07));
            fg = ((gx + gy) & 1) == 0;
          } else {
            for (const auto& [cx, cy] : disk_centers) {
              const double dx = u - cx, dy = v - cy;
              if (dx * dx + dy * dy < disk_radius * disk_radius) {
                fg = true;
                break;
              }
            }
          }
          const size_t p = static_cast<size_t>(py) * image_size + px;
          pixels[p] = fg ? fg_r : bg_r;
          pixels[plane + p] = fg ? fg_g : bg_g;
          pixels[2 * plane + p] = fg ? fg_b : bg_b;
        }
      }
      clamp_pixels(pixels);
      LabeledImage img;
      img.pixels = Tensor::make({3, image_size, image_size}, std::move(pixels));
      img.class_id = cid;
      const bool is_train = idx < (per_class + 1) / 2;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "synth/c%03d/%s%04d", cid, is_train ? "train" : "val", idx);
      img.source_id = buf;
      (is_train ? dataset.train : dataset.val).push_back(std::move(img));
    }
  }
  char name[32];
  for (int c = 0; c < num_classes; ++c) {
    std::snprintf(name, sizeof(name), "class_%03d", c);
    dataset.label_names.emplace_back(name);
  }
  return dataset;
}

// ---- PPM and manifests ------------------------------------------------------

namespace {

int read_ppm_token(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments, then reads a decimal token
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw DataError("ppm: malformed header in " + path);
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > 1 << 24) throw DataError("ppm: oversized header value in " + path);
    c = in.get();
  }
  if (c != EOF) in.unget();
  return value;
}

}  // namespace

TensorPtr read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw DataError("ppm: " + path + " is not a P6 file");
  const int width = read_ppm_token(in, path);
  const int height = read_ppm_token(in, path);
  const int maxval = read_ppm_token(in, path);
  if (width < 1 || height < 1) throw DataError("ppm: bad dimensions in " + path);
  if (maxval != 255) throw DataError("ppm: only maxval 255 supported, " + path);
  const int sep = in.get();
  if (sep == EOF || !std::isspace(sep)) throw DataError("ppm: malformed header in " + path);

  std::vector<unsigned char> raw(static_cast<size_t>(width) * height * 3);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError("ppm: truncated pixel data in " + path);
  }
  std::vector<double> pixels(raw.size());
  const size_t plane = static_cast<size_t>(width) * height;
  for (size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      pixels[static_cast<size_t>(c) * plane + p] = raw[p * 3 + c] / 255.0;
    }
  }
  return Tensor::make({3, height, width}, std::move(pixels));
}

void write_ppm(const std::string& path, const TensorPtr& pixels) {
  check_image(pixels);
  const int h = pixels->shape[1], w = pixels->shape[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("ppm: cannot open " + path + " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  const size_t plane = static_cast<size_t>(w) * h;
  std::vector<unsigned char> raw(plane * 3);
  for (size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = clamp01(pixels->data[static_cast<size_t>(c) * plane + p]);
      raw[p * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("ppm: write failed for " + path);
}

Dataset load_manifest(const std::string& path, int image_size) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open " + path);
  const auto dir = std::filesystem::path(path).parent_path();

  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };

  std::string line;
  if (!std::getline(in, line) || trim(line) != "path,label,split") {
    throw DataError("manifest: first line must be the header 'path,label,split' in " + path);
  }

  struct Row {
    std::string file, label, split;
  };
  std::vector<Row> rows;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string file, label, split;
    if (!std::getline(ss, file, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, split)) {
      throw DataError("manifest: malformed row " + std::to_string(line_no) + " in " + path);
    }
    file = trim(file);
    label = trim(label);
    split = trim(split);
    if (split != "train" && split != "val") {
      throw DataError("manifest: unknown split '" + split + "' on row " +
                      std::to_string(line_no) + " (expected train or val)");
    }
    if (file.empty() || label.empty()) {
      throw DataError("manifest: empty field on row " + std::to_string(line_no));
    }
    rows.push_back({file, label, split});
  }
  if (rows.empty()) throw DataError("manifest: no data rows in " + path);

  std::set<std::string> label_set;
  for (const auto& r : rows) label_set.insert(r.label);
  std::map<std::string, int> label_ids;
  Dataset dataset;
  for (const auto& name : label_set) {
    label_ids[name] = static_cast<int>(dataset.label_names.size());
    dataset.label_names.push_back(name);
  }
  dataset.num_classes = static_cast<int>(label_ids.size());
  dataset.image_size = image_size;

  for (const auto& r : rows) {
    std::filesystem::path file(r.file);
    if (file.is_relative()) file = dir / file;
    LabeledImage img;
    img.pixels = resize_image(read_ppm(file.string()), image_size);
    img.class_id = label_ids[r.label];
    img.source_id = r.file;
    (r.split == "train" ? dataset.train : dataset.val).push_back(std::move(img));
  }
  return dataset;
}

void emit_dataset(const Dataset& dataset, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(std::filesystem::path(dir) / "manifest.csv");
  if (!manifest) throw DataError("emit: cannot write manifest in " + dir);
  manifest << "path,label,split\n";
  int counter = 0;
  for (int split = 0; split < 2; ++split) {
    const auto& images = split == 0 ? dataset.train : dataset.val;
    const char* split_name = split == 0 ? "train" : "val";
    for (const auto& img : images) {
      char name[64];
      std::snprintf(name, sizeof(name), "img_%05d.ppm", counter++);
      write_ppm((std::filesystem::path(dir) / name).string(), img.pixels);
      const std::string label = img.class_id < static_cast<int>(dataset.label_names.size())
                                    ? dataset.label_names[img.class_id]
                                    : std::to_string(img.class_id);
      manifest << name << "," << label << "," << split_name << "\n";
    }
  }
}

}  // namespace fslab
