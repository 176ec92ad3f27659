#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "equireg/gmm.hpp"
#include "equireg/tensor.hpp"

namespace equireg {

/// Homogeneous list of samples plus the generator parameters and seed that
/// reproduce it bit for bit.
struct Dataset {
  std::string kind;
  std::vector<Tensor> items;
  nlohmann::json metadata;

  std::size_t size() const { return items.size(); }
  Shape item_shape() const;
};

/// spec: {"prior": GMMPrior json, "mirror_axis": i (optional), "sample_shape": [...] (optional)}.
/// With mirror_axis set, every component is paired with its reflection
/// across coordinate i (weights halved), so the flip is a data symmetry.
Dataset gen_gmm_points(const nlohmann::json& spec, std::size_t n, std::uint64_t seed);
/// The prior gen_gmm_points samples from (mirror applied).
GMMPrior gmm_points_prior(const nlohmann::json& spec);
GMMPrior mirror_symmetrize(const GMMPrior& prior, std::size_t axis);

/// radius * (cos th, sin th, 0, ...) + thickness * N(0, I_d).
Dataset gen_ring_manifold(std::size_t d, double radius, double thickness, std::size_t n, std::uint64_t seed);

/// size x size images, each the pixelwise max of 1-3 bars or disks with
/// intensities in [0.3, 1]. Shape centres are uniform over the continuous
/// square, so the distribution is invariant under both flips.
Dataset gen_sym_shapes_grid(std::size_t size, std::size_t n, std::uint64_t seed);

/// Mixture whose components sit on procedural shape images: `components / 2`
/// generated images and their horizontal mirrors, each with covariance
/// noise^2 I + brightness^2 u u^T along the unit direction u of its mean.
GMMPrior template_prior(std::size_t size, std::size_t components, double noise, double brightness,
                        std::uint64_t seed);
/// Samples of template_prior as [size, size] items.
Dataset gen_template_gmm(const nlohmann::json& params, std::size_t n, std::uint64_t seed);

/// The exact generating mixture for gmm-points and template-gmm specs (or
/// metadata); nullopt for the other kinds.
std::optional<GMMPrior> dataset_prior(const nlohmann::json& spec);
/// Item shape a dataset spec produces, without generating it.
Shape dataset_item_shape(const nlohmann::json& spec);

/// Rebuilds a dataset from its metadata alone.
Dataset regenerate_dataset(const nlohmann::json& metadata);
/// Dispatches on {"kind": ..., "n": ..., "seed": ..., params...}.
Dataset generate_dataset(const nlohmann::json& spec);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);
/// Reads only the manifest and regenerates the items from it.
Dataset load_dataset_regenerated(const std::filesystem::path& path);

}  // namespace equireg
