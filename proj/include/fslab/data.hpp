#pragma once

#include <string>
#include <vector>

#include "fslab/rng.hpp"
#include "fslab/tensor.hpp"

namespace fslab {

struct LabeledImage {
  TensorPtr pixels;  // [3, H, W], values clamped to [0,1]
  int class_id = -1;
  std::string source_id;
};

// Images carrying split tags, as loaded from a manifest or generated
// synthetically. Labels are dense ids; label_names maps them back.
struct Dataset {
  int num_classes = 0;
  int image_size = 0;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  std::vector<std::string> label_names;
};

struct Pools {
  int num_classes = 0;
  std::vector<LabeledImage> train_pool;
  std::vector<LabeledImage> test_pool;
};

struct Episode {
  std::vector<LabeledImage> support;  // exactly n_shot per class
  std::vector<LabeledImage> query;    // the full test pool
  int n_shot = 0;
  std::vector<int> class_ids;
};

enum class SamplerKind { Random, Stratified };

struct BatchPlan {
  std::vector<std::vector<int>> batches;
  SamplerKind kind = SamplerKind::Random;
  int classes_per_batch = 0;
  int instances_per_class = 0;
};

enum class AugmentLevel { None, Low, High };

AugmentLevel augment_level_from_string(const std::string& s);
const char* augment_level_name(AugmentLevel level);

// Deterministic first-K selection per class from each split.
Pools build_pools(const Dataset& dataset, int per_class = 20);

// Uniform without-replacement support draw; the query is the whole test pool.
Episode sample_episode(const Pools& pools, int n_shot, Rng rng);

// Every batch holds exactly instances_per_class samples for each of
// classes_per_batch distinct classes. Classes cycle across batches so each
// class appears every epoch; per-class draws are balanced shuffles.
BatchPlan stratified_batches(const std::vector<int>& labels, int classes_per_batch,
                             int instances_per_class, Rng rng);

// Seeded permutation chunked into batches; the last batch may be short.
BatchPlan random_batches(int num_samples, int batch_size, Rng rng);

// None: deterministic center path. Low: random resized crop (area in
// [0.6,1]) + horizontal flip. High: Low + color jitter (factors in [0.7,1.3])
// + random grayscale (p=0.2).
LabeledImage augment(const LabeledImage& image, AugmentLevel level, Rng& rng);

// Procedural class templates (stripes / checks / disks on a class hue) with
// per-image position, scale, and hue jitter. Images split evenly between the
// train and val splits. class_offset shifts the template family so disjoint
// class sets can be generated from the same generator.
Dataset synth_dataset(int num_classes, int per_class, int image_size, uint64_t seed,
                      int class_offset = 0);

// Manifest CSV: header "path,label,split", rows reference P6 PPM images with
// split in {train, val}. Paths resolve relative to the manifest directory.
Dataset load_manifest(const std::string& path, int image_size);

// Writes dataset images and the matching manifest into a directory.
void emit_dataset(const Dataset& dataset, const std::string& dir);

TensorPtr read_ppm(const std::string& path);
void write_ppm(const std::string& path, const TensorPtr& pixels);

// Bilinear resize of the full image to size*size (identity when already
// that size), used as the deterministic preprocessing path.
TensorPtr resize_image(const TensorPtr& pixels, int size);

}  // namespace fslab
