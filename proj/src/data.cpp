#include "owdfa/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "owdfa/binary_io.hpp"
#include "owdfa/error.hpp"

namespace owdfa {

namespace {

constexpr std::string_view kBlobMagic = "OWDFABLB";
constexpr std::uint32_t kF32 = 1, kI32 = 2;
constexpr double kTextureAmplitude = 0.3;
constexpr double kBackgroundAmplitude = 0.15;

enum SplitTag : std::uint64_t { labeled_tag = 1, unlabeled_tag = 2, test_tag = 3 };

struct Texture {
  double period;
  double angle;
};

Texture texture_bank(int t) {
  return {3.0 + 2.0 * static_cast<double>(t / 4), static_cast<double>(t % 4) * std::numbers::pi / 4.0};
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_number(std::string_view s, std::string_view key) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("manifest: bad value '" + std::string(s) + "' for " + std::string(key));
  return v;
}

std::string encode_blob(std::uint32_t type, const Shape& shape, const std::function<void(ByteWriter&)>& payload) {
  ByteWriter w;
  w.raw(kBlobMagic);
  w.u32(kDatasetVersion);
  w.u32(type);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) w.u64(static_cast<std::uint64_t>(d));
  payload(w);
  w.u64(fnv1a64(w.bytes()));
  return w.take();
}

// Validates the header and returns the shape; the reader is left at the payload.
Shape read_blob_header(ByteReader& r, std::uint32_t expected_type, const std::string& what) {
  if (r.raw(kBlobMagic.size()) != kBlobMagic) throw FormatError(what + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw VersionError(what + ": version " + std::to_string(version) + ", expected " +
                       std::to_string(kDatasetVersion));
  const std::uint32_t type = r.u32();
  if (type != expected_type) throw FormatError(what + ": unexpected element type " + std::to_string(type));
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError(what + ": bad rank " + std::to_string(rank));
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t dim = r.u64();
    if (dim > r.remaining() || (dim != 0 && count > r.remaining() / dim))
      throw FormatError(what + ": implausible dimension " + std::to_string(dim));
    count *= dim;
    shape.push_back(static_cast<Index>(dim));
  }
  return shape;
}

void finish_blob(ByteReader& r, std::string_view bytes, const std::string& what) {
  const std::size_t body = r.position();
  const std::uint64_t stored = r.u64();
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes");
  if (stored != fnv1a64(bytes.substr(0, body))) throw ChecksumError(what + ": checksum mismatch");
}

void fill_split(const BenchmarkSpec& spec, const std::vector<ClassInfo>& classes, SplitTag tag, Split& split) {
  std::vector<std::pair<int, int>> plan;  // (class, count)
  for (const ClassInfo& c : classes) {
    int base = 0;
    switch (tag) {
      case labeled_tag: base = c.novel ? 0 : spec.labeled_per_known; break;
      case unlabeled_tag: base = spec.unlabeled_per_class; break;
      case test_tag: base = spec.test_per_class; break;
    }
    if (base > 0) plan.emplace_back(c.id, samples_per_class(spec, c, base));
  }
  Index total = 0;
  for (auto [c, n] : plan) total += n;
  const Index pixels = static_cast<Index>(spec.image_size) * spec.image_size;
  split.images.resize(total, pixels);
  split.labels.clear();
  Index row = 0;
  for (auto [c, n] : plan)
    for (int i = 0; i < n; ++i) {
      Rng rng = Rng::stream(spec.seed, {tag, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)});
      render_sample(spec, classes[static_cast<std::size_t>(c)], rng, split.images.row(row++).data());
      split.labels.push_back(c);
    }
}

}  // namespace

std::string_view to_string(Protocol p) { return p == Protocol::p1 ? "p1" : "p2"; }

int BenchmarkSpec::resolved_global_class() const { return global_class < 0 ? num_classes() - 1 : global_class; }

void BenchmarkSpec::validate() const {
  if (n_known <= 0 || n_novel < 0) throw ConfigError("benchmark: need at least one known class");
  if (labeled_per_known <= 0 || unlabeled_per_class < 0 || test_per_class <= 0)
    throw ConfigError("benchmark: per-class counts must be positive");
  if (image_size <= 0 || region_size <= 0) throw ConfigError("benchmark: sizes must be positive");
  if (region_size > image_size)
    throw ConfigError("benchmark: region " + std::to_string(region_size) + " lies outside a " +
                      std::to_string(image_size) + "-pixel image");
  if (!(noise_sigma >= 0.0)) throw ConfigError("benchmark: noise_sigma must be nonnegative");
  if (real_multiplier <= 0) throw ConfigError("benchmark: real_multiplier must be positive");
  if (protocol == Protocol::p2 && real_novel && n_novel == 0)
    throw ConfigError("benchmark: real_novel needs a novel class");
  const int g = resolved_global_class();
  if (g >= num_classes()) throw ConfigError("benchmark: global_class out of range");
  if (protocol == Protocol::p2 && (g == 0 || (real_novel && g == n_known)))
    throw ConfigError("benchmark: the global class cannot be a real class");
}

std::string ClassInfo::describe() const {
  std::ostringstream out;
  out << (novel ? "novel" : "known") << ",";
  if (real) out << "real,background=" << background_frequency;
  else if (global) out << "global,texture=" << texture;
  else out << "local,row=" << region_row << ",col=" << region_col << ",texture=" << texture;
  out << ",phase=" << format_double(phase);
  return out.str();
}

std::vector<ClassInfo> class_table(const BenchmarkSpec& spec) {
  spec.validate();
  const int cells = spec.image_size / spec.region_size;
  // diagonal walk over the grid so consecutive classes sit far apart
  auto cell = [&](int k) {
    k %= cells * cells;
    const int r = k % cells;
    return std::pair{r, (r + k / cells) % cells};
  };
  const int offset = (spec.image_size - cells * spec.region_size) / 2;
  std::vector<ClassInfo> out;
  int next_local = 0, next_texture = 0;
  for (int c = 0; c < spec.num_classes(); ++c) {
    ClassInfo info;
    info.id = c;
    info.novel = c >= spec.n_known;
    info.real = spec.protocol == Protocol::p2 && (c == 0 || (spec.real_novel && c == spec.n_known));
    info.phase = Rng::stream(spec.seed, {0xC1A55, static_cast<std::uint64_t>(c)}).uniform(0.0, 2.0 * std::numbers::pi);
    if (info.real) {
      info.background_frequency = c == 0 ? 1 : 2;
    } else {
      info.global = c == spec.resolved_global_class();
      info.texture = next_texture++;
      if (!info.global) {
        const auto [r, col] = cell(next_local++);
        info.region_row = offset + r * spec.region_size;
        info.region_col = offset + col * spec.region_size;
      }
    }
    out.push_back(info);
  }
  return out;
}

int samples_per_class(const BenchmarkSpec& spec, const ClassInfo& cls, int base) {
  return cls.real ? base * spec.real_multiplier : base;
}

void render_sample(const BenchmarkSpec& spec, const ClassInfo& cls, Rng& rng, float* out) {
  const int s = spec.image_size;
  const double two_pi = 2.0 * std::numbers::pi;
  const double px = spec.jitter ? rng.uniform(0.0, two_pi) : 0.0;
  const double py = spec.jitter ? rng.uniform(0.0, two_pi) : 0.0;
  const double f = cls.background_frequency;
  const Texture tex = texture_bank(cls.texture);
  const double kx = std::cos(tex.angle) * two_pi / tex.period, ky = std::sin(tex.angle) * two_pi / tex.period;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double v = 0.5 + kBackgroundAmplitude * std::sin(two_pi * f * x / s + px) * std::cos(two_pi * f * y / s + py);
      if (!cls.real) {
        const bool inside = cls.global || (y >= cls.region_row && y < cls.region_row + spec.region_size &&
                                           x >= cls.region_col && x < cls.region_col + spec.region_size);
        if (inside) v += kTextureAmplitude * std::sin(kx * x + ky * y + cls.phase);
      }
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
      out[y * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}

std::vector<Index> Dataset::real_classes() const {
  std::vector<Index> out;
  for (const ClassInfo& c : classes)
    if (c.real) out.push_back(c.id);
  return out;
}

void Dataset::check_invariants() const {
  for (int y : labeled.labels)
    if (y < 0 || y >= spec.n_known)
      throw FormatError("dataset: labeled split contains class " + std::to_string(y) + ", which is not known");
  for (const Split* s : {&labeled, &unlabeled, &test}) {
    if (static_cast<Index>(s->labels.size()) != s->size()) throw FormatError("dataset: label count mismatch");
    for (int y : s->labels)
      if (y < 0 || y >= num_classes()) throw FormatError("dataset: label " + std::to_string(y) + " out of range");
  }
}

Dataset generate(const BenchmarkSpec& spec) {
  Dataset d;
  d.spec = spec;
  d.classes = class_table(spec);
  fill_split(spec, d.classes, labeled_tag, d.labeled);
  fill_split(spec, d.classes, unlabeled_tag, d.unlabeled);
  fill_split(spec, d.classes, test_tag, d.test);
  d.check_invariants();
  return d;
}

double nearest_centroid_accuracy(const Dataset& data) {
  const int c = data.num_classes();
  const Split& ref = data.unlabeled.size() > 0 ? data.unlabeled : data.labeled;
  RowMatrix<double> means = RowMatrix<double>::Zero(c, ref.images.cols());
  std::vector<double> counts(static_cast<std::size_t>(c), 0.0);
  for (Index i = 0; i < ref.size(); ++i) {
    means.row(ref.labels[static_cast<std::size_t>(i)]) += ref.images.row(i).cast<double>();
    counts[static_cast<std::size_t>(ref.labels[static_cast<std::size_t>(i)])] += 1;
  }
  for (int k = 0; k < c; ++k)
    if (counts[static_cast<std::size_t>(k)] > 0) means.row(k) /= counts[static_cast<std::size_t>(k)];
  Index hits = 0;
  for (Index i = 0; i < data.test.size(); ++i) {
    Index best = 0;
    (means.rowwise() - data.test.images.row(i).cast<double>()).rowwise().squaredNorm().minCoeff(&best);
    hits += best == data.test.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(data.test.size());
}

// ---------------------------------------------------------------------------

std::string encode_images(const RowMatrix<float>& images, Index image_size) {
  if (images.cols() != image_size * image_size) throw ShapeError("encode_images: row width mismatch");
  return encode_blob(kF32, {images.rows(), image_size, image_size}, [&](ByteWriter& w) {
    for (Index i = 0; i < images.size(); ++i) w.f32(images.data()[i]);
  });
}

RowMatrix<float> decode_images(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  const Shape shape = read_blob_header(r, kF32, what);
  if (shape.size() != 3) throw FormatError(what + ": image blob must have rank 3");
  if (r.remaining() < 8 || static_cast<std::uint64_t>(numel(shape)) > (r.remaining() - 8) / 4)
    throw TruncatedError(what + ": payload shorter than " + to_string(shape));
  RowMatrix<float> images(shape[0], shape[1] * shape[2]);
  for (Index i = 0; i < images.size(); ++i) images.data()[i] = r.f32();
  finish_blob(r, bytes, what);
  return images;
}

std::string encode_labels(const std::vector<int>& labels) {
  return encode_blob(kI32, {static_cast<Index>(labels.size())}, [&](ByteWriter& w) {
    for (int y : labels) w.i32(y);
  });
}

std::vector<int> decode_labels(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  const Shape shape = read_blob_header(r, kI32, what);
  if (shape.size() != 1) throw FormatError(what + ": label blob must have rank 1");
  if (r.remaining() < 8 || static_cast<std::uint64_t>(shape[0]) > (r.remaining() - 8) / 4)
    throw TruncatedError(what + ": payload shorter than " + to_string(shape));
  std::vector<int> labels(static_cast<std::size_t>(shape[0]));
  for (int& y : labels) y = r.i32();
  finish_blob(r, bytes, what);
  return labels;
}

std::string manifest_text(const Dataset& data) {
  const BenchmarkSpec& s = data.spec;
  std::ostringstream out;
  out << "format_version=" << kDatasetVersion << "\n"
      << "n_known=" << s.n_known << "\n"
      << "n_novel=" << s.n_novel << "\n"
      << "labeled_per_known=" << s.labeled_per_known << "\n"
      << "unlabeled_per_class=" << s.unlabeled_per_class << "\n"
      << "test_per_class=" << s.test_per_class << "\n"
      << "image_size=" << s.image_size << "\n"
      << "noise_sigma=" << format_double(s.noise_sigma) << "\n"
      << "region_size=" << s.region_size << "\n"
      << "jitter=" << (s.jitter ? 1 : 0) << "\n"
      << "protocol=" << to_string(s.protocol) << "\n"
      << "real_novel=" << (s.real_novel ? 1 : 0) << "\n"
      << "real_multiplier=" << s.real_multiplier << "\n"
      << "global_class=" << s.global_class << "\n"
      << "seed=" << s.seed << "\n";
  for (const ClassInfo& c : data.classes) out << "class." << c.id << "=" << c.describe() << "\n";
  out << "count.labeled=" << data.labeled.size() << "\n"
      << "count.unlabeled=" << data.unlabeled.size() << "\n"
      << "count.test=" << data.test.size() << "\n";
  return out.str();
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  data.check_invariants();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  write_file(dir / "manifest", manifest_text(data));
  const std::pair<const char*, const Split*> splits[] = {
      {"labeled", &data.labeled}, {"unlabeled", &data.unlabeled}, {"test", &data.test}};
  for (auto [name, split] : splits) {
    write_file(dir / (std::string(name) + ".images"), encode_images(split->images, data.spec.image_size));
    write_file(dir / (std::string(name) + ".labels"), encode_labels(split->labels));
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string manifest = read_file(dir / "manifest");
  Dataset d;
  BenchmarkSpec& s = d.spec;
  std::map<std::string, std::string> classes;
  std::map<std::string, Index> counts;
  bool version_seen = false;
  std::istringstream in(manifest);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("manifest: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "format_version") {
      const auto v = parse_number<std::uint32_t>(value, key);
      if (v != kDatasetVersion)
        throw VersionError("manifest: version " + value + ", expected " + std::to_string(kDatasetVersion));
      version_seen = true;
    } else if (key == "n_known") s.n_known = parse_number<int>(value, key);
    else if (key == "n_novel") s.n_novel = parse_number<int>(value, key);
    else if (key == "labeled_per_known") s.labeled_per_known = parse_number<int>(value, key);
    else if (key == "unlabeled_per_class") s.unlabeled_per_class = parse_number<int>(value, key);
    else if (key == "test_per_class") s.test_per_class = parse_number<int>(value, key);
    else if (key == "image_size") s.image_size = parse_number<int>(value, key);
    else if (key == "noise_sigma") s.noise_sigma = parse_number<double>(value, key);
    else if (key == "region_size") s.region_size = parse_number<int>(value, key);
    else if (key == "jitter") s.jitter = parse_number<int>(value, key) != 0;
    else if (key == "protocol") {
      if (value == "p1") s.protocol = Protocol::p1;
      else if (value == "p2") s.protocol = Protocol::p2;
      else throw FormatError("manifest: unknown protocol '" + value + "'");
    } else if (key == "real_novel") s.real_novel = parse_number<int>(value, key) != 0;
    else if (key == "real_multiplier") s.real_multiplier = parse_number<int>(value, key);
    else if (key == "global_class") s.global_class = parse_number<int>(value, key);
    else if (key == "seed") s.seed = parse_number<std::uint64_t>(value, key);
    else if (key.starts_with("class.")) classes[key.substr(6)] = value;
    else if (key.starts_with("count.")) counts[key.substr(6)] = parse_number<Index>(value, key);
    else throw FormatError("manifest: unknown key '" + key + "'");
  }
  if (!version_seen) throw FormatError("manifest: missing format_version");
  try {
    d.classes = class_table(s);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  if (classes.size() != d.classes.size()) throw FormatError("manifest: class table size mismatch");
  for (const ClassInfo& c : d.classes) {
    const auto it = classes.find(std::to_string(c.id));
    if (it == classes.end() || it->second != c.describe())
      throw FormatError("manifest: class " + std::to_string(c.id) + " does not match its spec");
  }
  const std::pair<const char*, Split*> splits[] = {{"labeled", &d.labeled}, {"unlabeled", &d.unlabeled}, {"test", &d.test}};
  for (auto [name, split] : splits) {
    const std::string base = name;
    split->images = decode_images(read_file(dir / (base + ".images")), base + ".images");
    split->labels = decode_labels(read_file(dir / (base + ".labels")), base + ".labels");
    if (split->images.cols() != static_cast<Index>(s.image_size) * s.image_size)
      throw FormatError(base + ".images: image size does not match manifest");
    const auto it = counts.find(base);
    if (it == counts.end() || it->second != split->size())
      throw FormatError(base + ": sample count does not match manifest");
  }
  d.check_invariants();
  return d;
}

void save_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  write_file(path, encode_labels(labels));
}

std::vector<int> load_labels(const std::filesystem::path& path) {
  return decode_labels(read_file(path), path.filename().string());
}

// ---------------------------------------------------------------------------

IndexStream::IndexStream(Index n, Rng rng) : n_(n), rng_(std::move(rng)) {}

void IndexStream::refill() {
  order_.resize(static_cast<std::size_t>(n_));
  for (Index i = 0; i < n_; ++i) order_[static_cast<std::size_t>(i)] = i;
  rng_.shuffle(order_);
  pos_ = 0;
}

std::vector<Index> IndexStream::take(Index k) {
  std::vector<Index> out;
  if (n_ == 0) return out;
  while (static_cast<Index>(out.size()) < k) {
    if (pos_ >= order_.size()) refill();
    out.push_back(order_[pos_++]);
  }
  return out;
}

BatchSampler::BatchSampler(Index n_labeled, Index n_unlabeled, Index batch_size, BatchMode mode,
                           std::uint64_t seed, bool drop_last, Index epoch_batches)
    : n_labeled_(n_labeled),
      batch_size_(batch_size),
      mode_(mode),
      seed_(seed),
      drop_last_(drop_last),
      epoch_batches_(epoch_batches),
      labeled_(epoch_batches > 0 ? std::max<Index>(n_labeled, 0) : 0, Rng::stream(seed, {0xBA7C4, 2})),
      unlabeled_(mode == BatchMode::half ? n_unlabeled : 0, Rng::stream(seed, {0xBA7C4, 0})) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  if (mode == BatchMode::half && batch_size % 2 != 0)
    throw ConfigError("half-sampled batches need an even batch size, got " + std::to_string(batch_size));
  if (epoch_batches < 0) throw ConfigError("batch sampler: negative batches per epoch");
  if (n_labeled <= 0) throw ConfigError("batch sampler: labeled pool is empty");
  if (mode == BatchMode::half && n_unlabeled <= 0) throw ConfigError("batch sampler: unlabeled pool is empty");
}

std::vector<Batch> BatchSampler::epoch() {
  const Index per = mode_ == BatchMode::half ? batch_size_ / 2 : batch_size_;
  if (epoch_batches_ > 0) {
    ++epoch_;
    std::vector<Batch> out(static_cast<std::size_t>(epoch_batches_));
    for (Batch& b : out) {
      b.labeled = labeled_.take(per);
      if (mode_ == BatchMode::half) b.unlabeled = unlabeled_.take(per);
    }
    return out;
  }

  std::vector<Index> order(static_cast<std::size_t>(n_labeled_));
  for (Index i = 0; i < n_labeled_; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng::stream(seed_, {0xBA7C4, 1, static_cast<std::uint64_t>(epoch_++)});
  rng.shuffle(order);

  std::vector<Batch> out;
  for (Index start = 0; start < n_labeled_; start += per) {
    const Index len = std::min(per, n_labeled_ - start);
    if (len < per && drop_last_ && start > 0) break;
    Batch b;
    b.labeled.assign(order.begin() + start, order.begin() + start + len);
    b.short_batch = len < per;
    if (mode_ == BatchMode::half) b.unlabeled = unlabeled_.take(len);
    out.push_back(std::move(b));
  }
  return out;
}

RowMatrix<float> gather_rows(const RowMatrix<float>& images, std::span<const Index> rows) {
  RowMatrix<float> out(static_cast<Index>(rows.size()), images.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = images.row(rows[i]);
  return out;
}

}  // namespace owdfa
