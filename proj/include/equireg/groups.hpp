#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "equireg/rng.hpp"
#include "equireg/tensor.hpp"

namespace equireg {

/// One signed permutation of a flat buffer: out[i] = sign[i] * in[index[i]].
/// Every supported action (flips, quarter turns, cyclic shifts, coordinate
/// permutations, negation) is of this form, so actions are exact.
struct SignedPermutation {
  std::vector<std::size_t> index;
  std::vector<double> sign;

  std::size_t size() const { return index.size(); }
  static SignedPermutation identity(std::size_t n);
  /// (a then b): the permutation applying `first`, then `second`.
  static SignedPermutation then(const SignedPermutation& first, const SignedPermutation& second);
  SignedPermutation inverse() const;
  bool operator<(const SignedPermutation& o) const;
  bool operator==(const SignedPermutation& o) const = default;
};

/// Finite group acting on Z by T_g and on X by S_g. Element 0 is always the
/// identity. Elements are enumerated by closing the generator pairs under
/// composition, so composition and inverses are table lookups.
class GroupAction {
 public:
  using Element = std::size_t;

  GroupAction() = default;
  /// `domain_gens[i]` pairs with `codomain_gens[i]`.
  GroupAction(std::string id, Shape domain_shape, Shape codomain_shape,
              const std::vector<SignedPermutation>& domain_gens,
              const std::vector<SignedPermutation>& codomain_gens);

  /// Builds from a config such as {"group":"rot90"} or
  /// {"group":"cyclic-translate","shift":1}. An optional "codomain" object
  /// gives a different transform spec for S_g (same element count required);
  /// by default S_g is the same named transform on the codomain shape.
  /// An optional "subset" list restricts random_element.
  static GroupAction from_config(const nlohmann::json& cfg, const Shape& domain_shape,
                                 const Shape& codomain_shape);
  static GroupAction from_config(const nlohmann::json& cfg, const Shape& shape) {
    return from_config(cfg, shape, shape);
  }

  const std::string& id() const { return id_; }
  const Shape& domain_shape() const { return domain_shape_; }
  const Shape& codomain_shape() const { return codomain_shape_; }
  std::size_t size() const { return domain_.size(); }
  Element identity() const { return 0; }

  /// The element acting as `first` then `second`.
  Element compose(Element first, Element second) const;
  Element inverse(Element g) const;

  /// T_g(z). `z` is one domain-shaped item or a batch of them (leading axis).
  Tensor apply_domain(Element g, const Tensor& z) const;
  /// S_g(x), same batching rule on the codomain shape.
  Tensor apply_codomain(Element g, const Tensor& x) const;

  /// Uniform over non-identity elements (or over the configured subset).
  Element random_element(Rng& rng) const;
  void restrict_sampling(std::vector<Element> subset);
  const std::vector<Element>& sampling_pool() const { return pool_; }

  const SignedPermutation& domain_perm(Element g) const { return domain_.at(g); }
  const SignedPermutation& codomain_perm(Element g) const { return codomain_.at(g); }

  nlohmann::json to_json() const { return config_; }

 private:
  Element lookup(const SignedPermutation& d, const SignedPermutation& c) const;

  std::string id_;
  Shape domain_shape_, codomain_shape_;
  std::vector<SignedPermutation> domain_, codomain_;
  std::map<std::pair<SignedPermutation, SignedPermutation>, Element> index_;
  std::vector<Element> inverse_;
  std::vector<Element> pool_;
  nlohmann::json config_;
};

/// Differentiable application of a signed permutation to every
/// block of `block` entries in x; the backward rule is the transpose.
Tensor apply_signed_permutation(const SignedPermutation& p, const Tensor& x);

/// Generator of a named transform on `shape` (vector or trailing 2-D grid).
/// Names: identity, flip-h, flip-v, rot90, cyclic-translate, negation.
SignedPermutation named_transform(const std::string& name, const Shape& shape, long shift = 1);

}  // namespace equireg
