#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpec/num/autograd.hpp"
#include "mpec/pipeline.hpp"
#include "mpec/scene.hpp"

namespace mpec::model {

using num::Neighborhoods;
using num::ParameterSet;
using num::Tensor;
using num::Var;

// Toy point encoder: per-point input projection of (xyz, rgb), `blocks`
// k-NN aggregation blocks (neighbourhood mean concatenated with the point's
// own feature, linear 2H->H, ReLU) and a linear output head.
struct EncoderConfig {
  std::size_t hidden = 64;
  std::size_t out_dim = 64;
  std::size_t blocks = 2;
  std::size_t k = 16;
};

// Two-layer MLP from encoder features into the text embedding space.
struct AdapterConfig {
  std::size_t hidden = 64;
  std::size_t out_dim = 32;
};

struct ModelConfig {
  EncoderConfig encoder;
  AdapterConfig adapter;
  std::uint64_t init_seed = 7;

  void validate() const;
};

// He-uniform weights, zero biases, zero mask token.
ParameterSet init_params(const ModelConfig& config);

// Parameter names, in ParameterSet order.
std::string block_weight(std::size_t b);
std::string block_bias(std::size_t b);
inline constexpr const char* kInputWeight = "encoder.input.weight";
inline constexpr const char* kInputBias = "encoder.input.bias";
inline constexpr const char* kHeadWeight = "encoder.head.weight";
inline constexpr const char* kHeadBias = "encoder.head.bias";
inline constexpr const char* kMaskToken = "mask_token";
inline constexpr const char* kAdapterWeight1 = "adapter.fc1.weight";
inline constexpr const char* kAdapterBias1 = "adapter.fc1.bias";
inline constexpr const char* kAdapterWeight2 = "adapter.fc2.weight";
inline constexpr const char* kAdapterBias2 = "adapter.fc2.bias";

// Each point's neighbourhood: itself first, then its k nearest other points
// ordered by (squared distance, key). `keys` break distance ties and must be
// unique; pass the points' origin indices so the result is equivariant under
// reordering. Brute force, O(N^2).
Neighborhoods knn_neighborhoods(std::span<const scene::Vec3> points, std::size_t k,
                                std::span<const std::size_t> keys);

// F = E((1 - G) P + G T): colors of masked points are replaced by the mask
// token before encoding; coordinates are left untouched.
Var encode_view(const num::BoundParameters& params, const ModelConfig& config,
                const pipeline::View& view);

struct MergedFeatures {
  Var features;                             // one row per surviving original point
  std::vector<std::size_t> origin_index;    // ascending
  std::vector<std::uint32_t> entity_mask;
};

// Matched points take the mean of their two view features; points seen in one
// view only pass that feature through.
MergedFeatures merge_features(Var features_u, Var features_v, const pipeline::ViewPair& pair);

Var project_vl(const num::BoundParameters& params, Var features);

// Unaugmented, unmasked forward pass followed by the adapter.
Tensor encode_inference(const scene::Scene& scene, const ParameterSet& params,
                        const ModelConfig& config);

// Tensor container shared by model and trainer checkpoints: a JSON header
// line {"version":1,"tensors":[{name,shape,offset}],"config_hash":...,...}
// followed by little-endian float64 data in tensor order.
struct Checkpoint {
  ParameterSet tensors;
  nlohmann::json meta = nlohmann::json::object();  // extra header fields
  std::string config_hash;

  bool operator==(const Checkpoint& other) const {
    return tensors == other.tensors && meta == other.meta &&
           config_hash == other.config_hash;
  }
};

std::string config_hash(const nlohmann::json& config);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mpec::model
