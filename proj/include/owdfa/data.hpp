#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "owdfa/rng.hpp"
#include "owdfa/tensor.hpp"

namespace owdfa {

enum class Protocol { p1, p2 };

std::string_view to_string(Protocol p);

/// Parameters of the procedural benchmark. Classes 0..n_known-1 are known,
/// the rest novel. Under p2, class 0 is the real (unmanipulated) class and,
/// with real_novel, so is the first novel class.
struct BenchmarkSpec {
  int n_known = 4;
  int n_novel = 4;
  int labeled_per_known = 200;
  int unlabeled_per_class = 600;
  int test_per_class = 200;
  int image_size = 24;
  double noise_sigma = 0.05;
  int region_size = 8;
  bool jitter = true;  // per-sample background phase
  Protocol protocol = Protocol::p1;
  bool real_novel = false;
  int real_multiplier = 10;
  int global_class = -1;  // whole-image texture; -1 picks the last class
  std::uint64_t seed = 1;

  int num_classes() const { return n_known + n_novel; }
  int resolved_global_class() const;
  void validate() const;
  bool operator==(const BenchmarkSpec&) const = default;
};

/// How a class is drawn.
struct ClassInfo {
  int id = 0;
  bool novel = false;
  bool real = false;
  bool global = false;
  int region_row = 0, region_col = 0;  // top-left pixel of the stamped region
  int texture = 0;                     // index into the texture bank
  double phase = 0.0;
  int background_frequency = 1;

  std::string describe() const;
};

std::vector<ClassInfo> class_table(const BenchmarkSpec& spec);

struct Split {
  RowMatrix<float> images;  // one flattened image per row, values in [0, 1]
  std::vector<int> labels;  // ground truth; for the unlabeled split, diagnostics only
  Index size() const { return images.rows(); }
};

struct Dataset {
  BenchmarkSpec spec;
  std::vector<ClassInfo> classes;
  Split labeled, unlabeled, test;

  int num_classes() const { return spec.num_classes(); }
  bool is_novel(int cls) const { return cls >= spec.n_known; }
  std::vector<Index> real_classes() const;
  /// Throws FormatError if a novel class appears in the labeled split.
  void check_invariants() const;
};

/// Draws one image of `cls`; `rng` supplies jitter and noise.
void render_sample(const BenchmarkSpec& spec, const ClassInfo& cls, Rng& rng, float* out);

Dataset generate(const BenchmarkSpec& spec);

/// Accuracy on the test split of nearest class mean (means from the unlabeled
/// pool's ground truth) on raw pixels.
double nearest_centroid_accuracy(const Dataset& data);

/// Per-split sample count a class gets (real classes are multiplied under p2).
int samples_per_class(const BenchmarkSpec& spec, const ClassInfo& cls, int base);

// --------------------------------------------------------------------------- on-disk format

constexpr std::uint32_t kDatasetVersion = 1;

std::string encode_images(const RowMatrix<float>& images, Index image_size);
RowMatrix<float> decode_images(std::string_view bytes, const std::string& what);
std::string encode_labels(const std::vector<int>& labels);
std::vector<int> decode_labels(std::string_view bytes, const std::string& what);

std::string manifest_text(const Dataset& data);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Label blobs also carry stage-3 pseudo-labels.
void save_labels(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> load_labels(const std::filesystem::path& path);

// --------------------------------------------------------------------------- batching

/// Without-replacement index stream that reshuffles after each full pass.
class IndexStream {
 public:
  IndexStream(Index n, Rng rng);
  std::vector<Index> take(Index k);

 private:
  void refill();
  Index n_;
  Rng rng_;
  std::vector<Index> order_;
  std::size_t pos_ = 0;
};

enum class BatchMode { half, labeled_only };

struct Batch {
  std::vector<Index> labeled;    // row indices into the labeled pool
  std::vector<Index> unlabeled;  // row indices into the unlabeled pool
  bool short_batch = false;
};

/// By default one epoch is one pass over the labeled pool in a fresh order.
/// With epoch_batches > 0 an epoch is exactly that many full batches and the
/// labeled rows also come from a continuing stream. In half mode each batch
/// holds batch_size/2 of each pool; unlabeled rows come from a stream that
/// continues across epochs, so every unlabeled row is seen once before any
/// repeats.
class BatchSampler {
 public:
  BatchSampler(Index n_labeled, Index n_unlabeled, Index batch_size, BatchMode mode, std::uint64_t seed,
               bool drop_last = true, Index epoch_batches = 0);
  std::vector<Batch> epoch();
  int epochs_drawn() const { return epoch_; }

 private:
  Index n_labeled_, batch_size_;
  BatchMode mode_;
  std::uint64_t seed_;
  bool drop_last_;
  Index epoch_batches_;
  IndexStream labeled_;
  IndexStream unlabeled_;
  int epoch_ = 0;
};

/// Rows of `images` picked by `rows`, in order.
RowMatrix<float> gather_rows(const RowMatrix<float>& images, std::span<const Index> rows);

}  // namespace owdfa
