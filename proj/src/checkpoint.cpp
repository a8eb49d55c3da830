#include "owdfa/checkpoint.hpp"

#include "owdfa/binary_io.hpp"

namespace owdfa {

namespace {
constexpr std::string_view kMagic = "OWDFACKP";

// Weights the layout needs, without allocating them (a corrupted config can imply any size).
double weight_count(const ModelConfig& config) {
  double total = 0, in = static_cast<double>(config.input_channels);
  for (const LayerSpec& l : config.layers) {
    if (l.kind != LayerSpec::Kind::conv) continue;
    const double out = static_cast<double>(l.out_channels), k = static_cast<double>(l.kernel);
    total += out * in * k * k + out;
    in = out;
  }
  return total + (in + 1) * static_cast<double>(config.num_classes);
}
}  // namespace

std::string_view to_string(StageTag tag) {
  switch (tag) {
    case StageTag::init: return "init";
    case StageTag::pretrain: return "pretrain";
    case StageTag::cpl: return "cpl";
    case StageTag::iterative: return "iterative";
    case StageTag::upper: return "upper";
  }
  return "unknown";
}

std::string encode_checkpoint(const Model<float>& model, StageTag stage) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(stage));
  w.str(model.config().serialize());
  w.u32(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (Index d : p.value.shape()) w.u64(static_cast<std::uint64_t>(d));
    for (Index i = 0; i < p.value.size(); ++i) w.f32(p.value[i]);
  }
  w.u64(fnv1a64(w.bytes()));
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.raw(kMagic.size()) != kMagic) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const std::uint32_t stage = r.u32();
  if (stage > static_cast<std::uint32_t>(StageTag::upper))
    throw FormatError("checkpoint: unknown stage tag " + std::to_string(stage));
  ModelConfig config;
  try {
    config = ModelConfig::parse(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (4 * weight_count(config) > static_cast<double>(r.remaining()))
    throw TruncatedError("checkpoint: payload shorter than the weights its config implies");
  Model<float> model = Model<float>::zeros(config);
  const std::uint32_t count = r.u32();
  if (count != model.parameters().size())
    throw FormatError("checkpoint: " + std::to_string(count) + " parameters, config implies " +
                      std::to_string(model.parameters().size()));
  for (auto& p : model.parameters()) {
    const std::string name = r.str();
    if (name != p.name) throw FormatError("checkpoint: expected parameter " + p.name + ", found " + name);
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(r.u64()));
    if (shape != p.value.shape())
      throw FormatError("checkpoint: parameter " + name + " has shape " + to_string(shape) +
                        ", config implies " + to_string(p.value.shape()));
    for (Index i = 0; i < p.value.size(); ++i) p.value[i] = r.f32();
  }
  const std::size_t body = r.position();
  const std::uint64_t stored = r.u64();
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  if (stored != fnv1a64(bytes.substr(0, body))) throw ChecksumError("checkpoint: checksum mismatch");
  return {static_cast<StageTag>(stage), std::move(model)};
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, StageTag stage) {
  write_file(path, encode_checkpoint(model, stage));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace owdfa
