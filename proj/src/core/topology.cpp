#include "rodspring/core/types.hpp"

#include <algorithm>

namespace rodspring {

namespace {

void check_ref(const AttachmentRef& ref, const TopologyGraph& topo, int spring_id,
               const char* side) {
  if (ref.is_rod()) {
    if (ref.index < 0 || ref.index >= topo.n_rods())
      throw TopologyError("spring " + std::to_string(spring_id) + " endpoint " + side +
                          " references missing rod " + std::to_string(ref.index));
  } else {
    if (ref.index < 0 || ref.index >= static_cast<int>(topo.anchors.size()))
      throw TopologyError("spring " + std::to_string(spring_id) + " endpoint " + side +
                          " references missing anchor " + std::to_string(ref.index));
  }
}

}  // namespace

void TopologyGraph::validate() const {
  for (int r = 0; r < n_rods(); ++r) rods[r].validate(r);
  for (const Vec3& a : anchors)
    if (!is_finite(a)) throw ConfigError("anchor position must be finite");
  for (int s = 0; s < n_springs(); ++s) {
    springs[s].validate(s);
    check_ref(springs[s].a, *this, s, "a");
    check_ref(springs[s].b, *this, s, "b");
  }
}

std::vector<int> TopologyGraph::springs_at(int rod_id, RodEnd end) const {
  std::vector<int> out;
  for (int s = 0; s < n_springs(); ++s) {
    const auto& spring = springs[s];
    for (const AttachmentRef& ref : {spring.a, spring.b})
      if (ref.is_rod() && ref.index == rod_id && ref.end == end) out.push_back(s);
  }
  return out;
}

std::vector<int> TopologyGraph::springs_of_rod(int rod_id) const {
  std::vector<int> out = springs_at(rod_id, RodEnd::kPlus);
  std::vector<int> minus = springs_at(rod_id, RodEnd::kMinus);
  out.insert(out.end(), minus.begin(), minus.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace rodspring
