#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "regerr/nn/tensor.hpp"
#include "regerr/rng.hpp"

namespace regerr {

// Dense error regressor: two untied 3D UNet feature encoders (one per
// modality), channel concatenation, then a Swin-UNETR style
// transformer encoder/decoder with a softplus head producing a
// non-negative error magnitude per voxel.
struct ModelConfig {
    std::int64_t patch_size = 64;   // cubic input patch edge (voxels)
    std::int64_t unet_channels = 16; // full-resolution feature channels per UNet
    std::int64_t embed_dim = 48;    // transformer embedding dim at P/2
    std::int64_t window_size = 7;   // attention window edge (clamped to resolution)
    std::array<std::int64_t, 4> depths{2, 2, 2, 2};
    std::array<std::int64_t, 4> num_heads{3, 6, 12, 24};
    std::int64_t mlp_ratio = 4;

    static ModelConfig toy(); // small preset for tests: P=32, C=4, E=12, ws=4
    void validate() const;    // throws ConfigError on inconsistent settings
};

// Named learnable tensors in fixed creation order (the order RNG draws are
// made during init, and the order checkpoints are serialized in).
struct ModelParameters {
    std::vector<std::string> order;
    std::unordered_map<std::string, nn::Tensor> by_name;

    nn::Tensor& at(const std::string& name);
    const nn::Tensor& at(const std::string& name) const;
    void add(const std::string& name, nn::Tensor t);
    std::int64_t count() const; // total scalar parameters

    void zero_grad();
};

// Deterministic initialization from a seed; identical (seed, config) pairs
// produce bit-identical parameters.
ModelParameters build_model(const ModelConfig& cfg, std::uint64_t seed);

// mri, ius: [N, 1, P, P, P] -> predicted error magnitude [N, 1, P, P, P]
nn::Tensor forward(const ModelConfig& cfg, ModelParameters& params, const nn::Tensor& mri,
                   const nn::Tensor& ius);

// Binary parameter snapshot (f64 payload). Loading validates the key set and
// every shape against `params` and throws KeyMismatch / ShapeMismatch.
void save_parameters(const ModelParameters& params, const std::filesystem::path& path);
void load_parameters(ModelParameters& params, const std::filesystem::path& path);

} // namespace regerr
