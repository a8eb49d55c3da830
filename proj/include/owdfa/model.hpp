#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "owdfa/autodiff.hpp"

namespace owdfa {

struct LayerSpec {
  enum class Kind { conv, relu, avgpool };
  Kind kind = Kind::relu;
  Index out_channels = 0;  // conv only
  Index kernel = 0;        // conv kernel size, or pooling block size

  static LayerSpec conv(Index out, Index k) { return {Kind::conv, out, k}; }
  static LayerSpec relu() { return {Kind::relu, 0, 0}; }
  static LayerSpec avgpool(Index k) { return {Kind::avgpool, 0, k}; }
  bool operator==(const LayerSpec&) const = default;
};

/// Feature extractor layout plus classifier width.
struct ModelConfig {
  Index input_channels = 1;
  Index input_size = 24;
  std::vector<LayerSpec> layers = default_layers();
  Index num_classes = 8;

  /// conv3x3(1->8), relu, conv3x3(8->16), relu, avgpool2, conv3x3(16->32), relu
  static std::vector<LayerSpec> default_layers();

  Index feature_dim() const;
  Index feature_grid() const;
  /// Throws ConfigError on an unusable layout (even kernels, indivisible pooling, ...).
  void validate() const;

  /// One `key=value` per line; round-trips through parse().
  std::string serialize() const;
  static ModelConfig parse(std::string_view text);
  static std::string layers_to_string(const std::vector<LayerSpec>& layers);
  static std::vector<LayerSpec> layers_from_string(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> value;
};

/// Parameters of the feature extractor and the linear classifier head.
template <typename Scalar>
class Model {
 public:
  /// He-uniform convolution weights, Glorot-uniform classifier, zero biases.
  Model(ModelConfig config, std::uint64_t seed);
  static Model zeros(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedTensor<Scalar>>& parameters() { return params_; }
  const std::vector<NamedTensor<Scalar>>& parameters() const { return params_; }
  std::vector<Tensor<Scalar>*> parameter_ptrs();
  void clear_grads();

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out = Model<Other>::zeros(config_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.parameters()[i].value = params_[i].value.template cast<Other>();
    return out;
  }

 private:
  explicit Model(ModelConfig config);
  ModelConfig config_;
  std::vector<NamedTensor<Scalar>> params_;
};

/// A model's parameters registered on one graph. With `trainable == false`
/// the parameters enter as constants and no gradient is produced.
template <typename Scalar>
class BoundModel {
 public:
  BoundModel(Model<Scalar>& model, Graph<Scalar>& graph, bool trainable = true);
  /// Parameters supplied as graph values, in Model::parameters() order.
  BoundModel(const ModelConfig& config, std::vector<Var<Scalar>> params);

  /// Images as rows of C*H*W pixels.
  Var<Scalar> input(const RowMatrix<float>& images) const;
  /// N x C x H x W -> N x d x S x S feature map.
  Var<Scalar> extract(const Var<Scalar>& x) const;
  /// N x d global features -> N x C class probabilities.
  Var<Scalar> classify(const Var<Scalar>& global) const;
  Var<Scalar> logits(const Var<Scalar>& global) const;

  Graph<Scalar>& graph() const { return *graph_; }

 private:
  const ModelConfig* config_;
  Graph<Scalar>* graph_;
  std::vector<Var<Scalar>> params_;
};

/// Spatial mean of every channel: N x d x S x S -> N x d.
template <typename Scalar>
Var<Scalar> pool_global(const Var<Scalar>& feature_map);

/// Mean over q x q blocks: N x d x S x S -> N x d x q x q.
template <typename Scalar>
Var<Scalar> pool_local(const Var<Scalar>& feature_map, Index q);

/// Detached forward pass over a whole image set, in fixed-size chunks.
template <typename Scalar>
struct Inference {
  RowMatrix<Scalar> global;  // N x d
  RowMatrix<Scalar> local;   // N x (d*q*q), channel-major like pool_local
  RowMatrix<Scalar> probs;   // N x C
};

template <typename Scalar>
Inference<Scalar> infer(Model<Scalar>& model, const RowMatrix<float>& images, Index q,
                        Index chunk = 256);

}  // namespace owdfa
