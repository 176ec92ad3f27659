#include "equireg/groups.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

#include "equireg/error.hpp"

namespace equireg {

SignedPermutation SignedPermutation::identity(std::size_t n) {
  SignedPermutation p;
  p.index.resize(n);
  std::iota(p.index.begin(), p.index.end(), std::size_t{0});
  p.sign.assign(n, 1.0);
  return p;
}

SignedPermutation SignedPermutation::then(const SignedPermutation& first, const SignedPermutation& second) {
  // second(first(x))[i] = s2[i] * first(x)[i2[i]] = s2[i] * s1[i2[i]] * x[i1[i2[i]]]
  const std::size_t n = first.size();
  SignedPermutation r;
  r.index.resize(n);
  r.sign.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = second.index[i];
    r.index[i] = first.index[j];
    r.sign[i] = second.sign[i] * first.sign[j];
  }
  return r;
}

SignedPermutation SignedPermutation::inverse() const {
  SignedPermutation r;
  r.index.resize(size());
  r.sign.resize(size());
  for (std::size_t i = 0; i < size(); ++i) {
    r.index[index[i]] = i;
    r.sign[index[i]] = sign[i];
  }
  return r;
}

bool SignedPermutation::operator<(const SignedPermutation& o) const {
  if (index != o.index) return index < o.index;
  return sign < o.sign;
}

Tensor apply_signed_permutation(const SignedPermutation& p, const Tensor& x) {
  const std::size_t n = p.size();
  if (n == 0 || x.numel() % n != 0) {
    throw ShapeError("group action on " + std::to_string(n) + " entries cannot act on " + shape_str(x.shape()));
  }
  const std::size_t blocks = x.numel() / n;
  auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t off = b * n;
    for (std::size_t i = 0; i < n; ++i) out[off + i] = p.sign[i] * xv[off + p.index[i]];
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [p, blocks](std::span<const double> g, detail::GradSlots& slots) {
        auto& gx = *slots[0];
        const std::size_t n = p.size();
        for (std::size_t b = 0; b < blocks; ++b) {
          const std::size_t off = b * n;
          for (std::size_t i = 0; i < n; ++i) gx[off + p.index[i]] += p.sign[i] * g[off + i];
        }
      },
      "group_action");
}

SignedPermutation named_transform(const std::string& name, const Shape& shape, long shift) {
  const std::size_t n = numel_of(shape);
  auto p = SignedPermutation::identity(n);
  if (name == "identity") return p;
  if (name == "negation") {
    p.sign.assign(n, -1.0);
    return p;
  }
  if (shape.size() < 2) {
    if (name == "flip-h") {
      for (std::size_t i = 0; i < n; ++i) p.index[i] = n - 1 - i;
      return p;
    }
    if (name == "cyclic-translate") {
      const long len = static_cast<long>(n);
      for (long i = 0; i < len; ++i) p.index[i] = static_cast<std::size_t>((((i - shift) % len) + len) % len);
      return p;
    }
    throw ShapeError("transform '" + name + "' needs a 2-D grid, got " + shape_str(shape));
  }
  const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
  const std::size_t planes = n / (h * w);
  auto at = [&](std::size_t c, std::size_t i, std::size_t j) { return (c * h + i) * w + j; };
  for (std::size_t c = 0; c < planes; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        std::size_t src;
        if (name == "flip-h") {
          src = at(c, i, w - 1 - j);
        } else if (name == "flip-v") {
          src = at(c, h - 1 - i, j);
        } else if (name == "rot90") {
          if (h != w) throw ShapeError("rot90 needs a square grid, got " + shape_str(shape));
          src = at(c, j, w - 1 - i);
        } else if (name == "cyclic-translate") {
          const long lw = static_cast<long>(w);
          src = at(c, i, static_cast<std::size_t>((((static_cast<long>(j) - shift) % lw) + lw) % lw));
        } else {
          throw ConfigError("unknown group transform '" + name + "'");
        }
        p.index[at(c, i, j)] = src;
      }
    }
  }
  return p;
}

namespace {

constexpr std::size_t kMaxGroupSize = 100000;

std::vector<SignedPermutation> generators_from_spec(const nlohmann::json& spec, const Shape& shape,
                                                    bool codomain_side, std::size_t other_numel) {
  static const std::vector<std::string> allowed = {"group", "shift", "perms", "signs", "subset", "codomain"};
  for (auto it = spec.begin(); it != spec.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError("group config: unknown key '" + it.key() + "'");
    }
  }
  const auto name = spec.at("group").get<std::string>();
  const long shift = spec.value("shift", 1L);
  const std::size_t n = numel_of(shape);
  if (name == "permutation") {
    const auto perms = spec.at("perms").get<std::vector<std::vector<std::size_t>>>();
    std::vector<std::vector<double>> signs;
    if (spec.contains("signs")) signs = spec.at("signs").get<std::vector<std::vector<double>>>();
    std::vector<SignedPermutation> gens;
    for (std::size_t k = 0; k < perms.size(); ++k) {
      SignedPermutation p;
      p.index = perms[k];
      p.sign = k < signs.size() ? signs[k] : std::vector<double>(n, 1.0);
      if (p.index.size() != n || p.sign.size() != n) {
        throw ShapeError("permutation generator length does not match shape " + shape_str(shape));
      }
      std::vector<bool> seen(n, false);
      for (std::size_t i = 0; i < n; ++i) {
        if (p.index[i] >= n || seen[p.index[i]]) throw ConfigError("permutation generator is not a bijection");
        seen[p.index[i]] = true;
        if (p.sign[i] != 1.0 && p.sign[i] != -1.0) throw ConfigError("permutation signs must be +1 or -1");
      }
      gens.push_back(std::move(p));
    }
    if (gens.empty()) throw ConfigError("permutation group needs at least one generator");
    return gens;
  }
  if (name == "scaled-translate") {
    // T shifts by `shift` on the domain; S shifts by shift * (d / k) on the codomain.
    long s = shift;
    if (codomain_side) {
      if (other_numel == 0 || n % other_numel != 0) {
        throw ConfigError("scaled-translate needs the codomain length to be a multiple of the domain length");
      }
      s = shift * static_cast<long>(n / other_numel);
    }
    return {named_transform("cyclic-translate", {n}, s)};
  }
  return {named_transform(name, shape, shift)};
}

}  // namespace

GroupAction::GroupAction(std::string id, Shape domain_shape, Shape codomain_shape,
                         const std::vector<SignedPermutation>& domain_gens,
                         const std::vector<SignedPermutation>& codomain_gens)
    : id_(std::move(id)), domain_shape_(std::move(domain_shape)), codomain_shape_(std::move(codomain_shape)) {
  if (domain_gens.size() != codomain_gens.size()) {
    throw ConfigError("group: domain and codomain generator counts differ");
  }
  const std::size_t nd = numel_of(domain_shape_), nc = numel_of(codomain_shape_);
  for (std::size_t k = 0; k < domain_gens.size(); ++k) {
    if (domain_gens[k].size() != nd || codomain_gens[k].size() != nc) {
      throw ShapeError("group: generator size does not match its shape");
    }
  }
  domain_.push_back(SignedPermutation::identity(nd));
  codomain_.push_back(SignedPermutation::identity(nc));
  index_[{domain_[0], codomain_[0]}] = 0;
  std::deque<Element> frontier{0};
  while (!frontier.empty()) {
    const Element e = frontier.front();
    frontier.pop_front();
    for (std::size_t k = 0; k < domain_gens.size(); ++k) {
      auto d = SignedPermutation::then(domain_[e], domain_gens[k]);
      auto c = SignedPermutation::then(codomain_[e], codomain_gens[k]);
      auto key = std::make_pair(d, c);
      if (index_.count(key)) continue;
      if (domain_.size() >= kMaxGroupSize) throw ConfigError("group: closure exceeds the supported size");
      const Element id = domain_.size();
      index_[key] = id;
      domain_.push_back(std::move(d));
      codomain_.push_back(std::move(c));
      frontier.push_back(id);
    }
  }
  inverse_.resize(size());
  for (Element g = 0; g < size(); ++g) inverse_[g] = lookup(domain_[g].inverse(), codomain_[g].inverse());
  for (Element g = 1; g < size(); ++g) pool_.push_back(g);
}

GroupAction::Element GroupAction::lookup(const SignedPermutation& d, const SignedPermutation& c) const {
  auto it = index_.find({d, c});
  if (it == index_.end()) throw Error("group: element outside the enumerated closure");
  return it->second;
}

GroupAction GroupAction::from_config(const nlohmann::json& cfg, const Shape& domain_shape,
                                     const Shape& codomain_shape) {
  try {
    auto dgens = generators_from_spec(cfg, domain_shape, false, 0);
    const nlohmann::json& cspec = cfg.contains("codomain") ? cfg.at("codomain") : cfg;
    auto cgens = generators_from_spec(cspec, codomain_shape, true, numel_of(domain_shape));
    GroupAction a(cfg.at("group").get<std::string>(), domain_shape, codomain_shape, dgens, cgens);
    a.config_ = cfg;
    if (cfg.contains("subset")) a.restrict_sampling(cfg.at("subset").get<std::vector<Element>>());
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("group config: ") + e.what());
  }
}

GroupAction::Element GroupAction::compose(Element first, Element second) const {
  return lookup(SignedPermutation::then(domain_.at(first), domain_.at(second)),
                SignedPermutation::then(codomain_.at(first), codomain_.at(second)));
}

GroupAction::Element GroupAction::inverse(Element g) const { return inverse_.at(g); }

Tensor GroupAction::apply_domain(Element g, const Tensor& z) const { return apply_signed_permutation(domain_.at(g), z); }

Tensor GroupAction::apply_codomain(Element g, const Tensor& x) const {
  return apply_signed_permutation(codomain_.at(g), x);
}

GroupAction::Element GroupAction::random_element(Rng& rng) const {
  if (pool_.empty()) throw ConfigError("group '" + id_ + "' has no non-identity element to sample");
  return pool_[rng.index(pool_.size())];
}

void GroupAction::restrict_sampling(std::vector<Element> subset) {
  for (Element g : subset) {
    if (g == 0 || g >= size()) throw ConfigError("group subset must list non-identity elements of the group");
  }
  pool_ = std::move(subset);
}

}  // namespace equireg
