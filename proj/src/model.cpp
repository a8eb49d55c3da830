#include "owdfa/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "owdfa/rng.hpp"

namespace owdfa {

namespace {

Index parse_index(std::string_view s, std::string_view what) {
  Index v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("model config: bad integer '" + std::string(s) + "' for " + std::string(what));
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto at = s.find(sep, start);
    out.push_back(s.substr(start, at == std::string_view::npos ? s.npos : at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

std::vector<LayerSpec> ModelConfig::default_layers() {
  return {LayerSpec::conv(8, 3),  LayerSpec::relu(), LayerSpec::conv(16, 3), LayerSpec::relu(),
          LayerSpec::avgpool(2),  LayerSpec::conv(32, 3), LayerSpec::relu()};
}

Index ModelConfig::feature_dim() const {
  Index c = input_channels;
  for (const LayerSpec& l : layers)
    if (l.kind == LayerSpec::Kind::conv) c = l.out_channels;
  return c;
}

Index ModelConfig::feature_grid() const {
  Index s = input_size;
  for (const LayerSpec& l : layers)
    if (l.kind == LayerSpec::Kind::avgpool) s /= l.kernel;
  return s;
}

void ModelConfig::validate() const {
  if (input_channels <= 0 || input_size <= 0 || num_classes <= 0)
    throw ConfigError("model config: sizes must be positive");
  Index s = input_size;
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerSpec::Kind::conv:
        if (l.out_channels <= 0 || l.kernel <= 0 || l.kernel % 2 == 0)
          throw ConfigError("model config: conv needs positive channels and an odd kernel");
        break;
      case LayerSpec::Kind::avgpool:
        if (l.kernel <= 0 || s % l.kernel != 0)
          throw ConfigError("model config: avgpool " + std::to_string(l.kernel) +
                            " does not divide spatial size " + std::to_string(s));
        s /= l.kernel;
        break;
      case LayerSpec::Kind::relu:
        break;
    }
  }
}

std::string ModelConfig::layers_to_string(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const LayerSpec& l : layers) {
    if (!out.empty()) out += ',';
    switch (l.kind) {
      case LayerSpec::Kind::conv:
        out += "conv:" + std::to_string(l.out_channels) + ":" + std::to_string(l.kernel);
        break;
      case LayerSpec::Kind::relu:
        out += "relu";
        break;
      case LayerSpec::Kind::avgpool:
        out += "avgpool:" + std::to_string(l.kernel);
        break;
    }
  }
  return out;
}

std::vector<LayerSpec> ModelConfig::layers_from_string(std::string_view text) {
  std::vector<LayerSpec> layers;
  if (text.empty()) return layers;
  for (std::string_view item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts[0] == "conv" && parts.size() == 3)
      layers.push_back(LayerSpec::conv(parse_index(parts[1], "conv channels"),
                                       parse_index(parts[2], "conv kernel")));
    else if (parts[0] == "relu" && parts.size() == 1)
      layers.push_back(LayerSpec::relu());
    else if (parts[0] == "avgpool" && parts.size() == 2)
      layers.push_back(LayerSpec::avgpool(parse_index(parts[1], "avgpool size")));
    else
      throw ConfigError("model config: unknown layer '" + std::string(item) + "'");
  }
  return layers;
}

std::string ModelConfig::serialize() const {
  std::ostringstream out;
  out << "input_channels=" << input_channels << "\n"
      << "input_size=" << input_size << "\n"
      << "layers=" << layers_to_string(layers) << "\n"
      << "num_classes=" << num_classes << "\n";
  return out.str();
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig cfg;
  for (std::string_view line : split(text, '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("model config: malformed line '" + std::string(line) + "'");
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key == "input_channels") cfg.input_channels = parse_index(value, key);
    else if (key == "input_size") cfg.input_size = parse_index(value, key);
    else if (key == "layers") cfg.layers = layers_from_string(value);
    else if (key == "num_classes") cfg.num_classes = parse_index(value, key);
    else throw ConfigError("model config: unknown key '" + std::string(key) + "'");
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Model

template <typename Scalar>
Model<Scalar>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Index in = config_.input_channels;
  int conv_index = 0;
  for (const LayerSpec& l : config_.layers) {
    if (l.kind != LayerSpec::Kind::conv) continue;
    const std::string base = "conv" + std::to_string(conv_index++);
    params_.push_back({base + ".weight", Tensor<Scalar>({l.out_channels, in, l.kernel, l.kernel})});
    params_.push_back({base + ".bias", Tensor<Scalar>({l.out_channels})});
    in = l.out_channels;
  }
  params_.push_back({"classifier.weight", Tensor<Scalar>({in, config_.num_classes})});
  params_.push_back({"classifier.bias", Tensor<Scalar>({config_.num_classes})});
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::zeros(ModelConfig config) {
  return Model(std::move(config));
}

template <typename Scalar>
Model<Scalar>::Model(ModelConfig config, std::uint64_t seed) : Model(std::move(config)) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<Scalar>& t = params_[i].value;
    if (t.rank() == 1) continue;  // biases stay zero
    // He-uniform for convolutions (each is followed by a ReLU), Glorot-uniform for the classifier
    double bound;
    if (t.rank() == 4) {
      const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
      bound = std::sqrt(6.0 / fan_in);
    } else {
      bound = std::sqrt(6.0 / static_cast<double>(t.dim(0) + t.dim(1)));
    }
    Rng rng = Rng::stream(seed, {0x1417, i});
    for (Index k = 0; k < t.size(); ++k) t[k] = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>*> Model<Scalar>::parameter_ptrs() {
  std::vector<Tensor<Scalar>*> out;
  for (auto& p : params_) out.push_back(&p.value);
  return out;
}

template <typename Scalar>
void Model<Scalar>::clear_grads() {
  for (auto& p : params_) p.value.clear_grad();
}

// ---------------------------------------------------------------------------
// BoundModel

template <typename Scalar>
BoundModel<Scalar>::BoundModel(Model<Scalar>& model, Graph<Scalar>& graph, bool trainable)
    : config_(&model.config()), graph_(&graph) {
  for (auto& p : model.parameters())
    params_.push_back(trainable ? graph.parameter(p.value) : graph.constant(p.value));
}

template <typename Scalar>
BoundModel<Scalar>::BoundModel(const ModelConfig& config, std::vector<Var<Scalar>> params)
    : config_(&config), graph_(params.empty() ? nullptr : params.front().graph()), params_(std::move(params)) {
  const Model<Scalar> shape = Model<Scalar>::zeros(config);
  if (params_.size() != shape.parameters().size())
    throw ShapeError("bound model: " + std::to_string(params_.size()) + " parameters, layout needs " +
                     std::to_string(shape.parameters().size()));
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].shape() != shape.parameters()[i].value.shape())
      throw ShapeError("bound model: parameter " + shape.parameters()[i].name + " has the wrong shape");
}

template <typename Scalar>
Var<Scalar> BoundModel<Scalar>::input(const RowMatrix<float>& images) const {
  const Index c = config_->input_channels, s = config_->input_size;
  if (images.cols() != c * s * s)
    throw ShapeError("model input: expected " + std::to_string(c * s * s) + " pixels per image, got " +
                     std::to_string(images.cols()));
  Tensor<Scalar> x({images.rows(), c, s, s});
  x.matrix() = ((images.array() - 0.5f) * 4.0f).matrix().template cast<Scalar>();
  return graph_->constant(std::move(x));
}

template <typename Scalar>
Var<Scalar> BoundModel<Scalar>::extract(const Var<Scalar>& x) const {
  const Shape& xs = x.shape();
  const Index s = config_->input_size;
  if (xs.size() != 4 || xs[1] != config_->input_channels || xs[2] != s || xs[3] != s)
    throw ShapeError("extract: input shape " + to_string(xs) + " does not match model input [N, " +
                     std::to_string(config_->input_channels) + ", " + std::to_string(s) + ", " +
                     std::to_string(s) + "]");
  Var<Scalar> h = x;
  std::size_t p = 0;
  for (const LayerSpec& l : config_->layers) {
    switch (l.kind) {
      case LayerSpec::Kind::conv:
        h = conv2d(h, params_[p], params_[p + 1]);
        p += 2;
        break;
      case LayerSpec::Kind::relu:
        h = relu(h);
        break;
      case LayerSpec::Kind::avgpool:
        h = avg_pool2d(h, l.kernel);
        break;
    }
  }
  return h;
}

template <typename Scalar>
Var<Scalar> BoundModel<Scalar>::logits(const Var<Scalar>& global) const {
  const std::size_t n = params_.size();
  return add_bias(matmul(global, params_[n - 2]), params_[n - 1]);
}

template <typename Scalar>
Var<Scalar> BoundModel<Scalar>::classify(const Var<Scalar>& global) const {
  return softmax(logits(global));
}

// ---------------------------------------------------------------------------
// pooling heads

template <typename Scalar>
Var<Scalar> pool_global(const Var<Scalar>& feature_map) {
  const Shape& s = feature_map.shape();
  if (s.size() != 4) throw ShapeError("pool_global: expected N x d x S x S, got " + to_string(s));
  return reshape(adaptive_avg_pool2d(feature_map, Index{1}), {s[0], s[1]});
}

template <typename Scalar>
Var<Scalar> pool_local(const Var<Scalar>& feature_map, Index q) {
  return adaptive_avg_pool2d(feature_map, q);
}

template <typename Scalar>
Inference<Scalar> infer(Model<Scalar>& model, const RowMatrix<float>& images, Index q, Index chunk) {
  const Index n = images.rows();
  const Index d = model.config().feature_dim();
  Inference<Scalar> out;
  out.global.resize(n, d);
  out.local.resize(n, d * q * q);
  out.probs.resize(n, model.config().num_classes);
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    Graph<Scalar> g;
    BoundModel<Scalar> bound(model, g, false);
    const Var<Scalar> fm = bound.extract(bound.input(images.middleRows(start, len)));
    const Var<Scalar> global = pool_global(fm);
    out.global.middleRows(start, len) = global.value().matrix();
    out.local.middleRows(start, len) = pool_local(fm, q).value().matrix();
    out.probs.middleRows(start, len) = bound.classify(global).value().matrix();
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template class BoundModel<float>;
template class BoundModel<double>;
template Var<float> pool_global(const Var<float>&);
template Var<double> pool_global(const Var<double>&);
template Var<float> pool_local(const Var<float>&, Index);
template Var<double> pool_local(const Var<double>&, Index);
template Inference<float> infer(Model<float>&, const RowMatrix<float>&, Index, Index);
template Inference<double> infer(Model<double>&, const RowMatrix<float>&, Index, Index);

}  // namespace owdfa
