#include "surfelio/surfel_map.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "surfelio/errors.hpp"

namespace surfelio {

void MapConfig::validate() const {
  if (!(leaf_size > 0.0)) throw std::invalid_argument("map.leaf_size must be > 0");
  if (max_depth < 1 || max_depth > 21) throw std::invalid_argument("map.max_depth must be in [1, 21]");
  if (min_points < 3) throw std::invalid_argument("map.min_points must be >= 3");
  if (!(min_planarity >= 0.0 && min_planarity <= 1.0))
    throw std::invalid_argument("map.min_planarity must be in [0, 1]");
  if (!(search_radius > 0.0)) throw std::invalid_argument("map.search_radius must be > 0");
  if (!(max_plane_dist > 0.0)) throw std::invalid_argument("map.max_plane_dist must be > 0");
}

double node_scale(const NodeKey& key, const MapConfig& cfg) {
  return std::ldexp(cfg.leaf_size, key.depth);
}

SurfelMap::SurfelMap(const MapConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

NodeKey SurfelMap::leaf_key(const Vec3& p) const {
  return NodeKey{0, static_cast<std::int64_t>(std::floor(p.x() / cfg_.leaf_size)),
                 static_cast<std::int64_t>(std::floor(p.y() / cfg_.leaf_size)),
                 static_cast<std::int64_t>(std::floor(p.z() / cfg_.leaf_size))};
}

std::vector<SurfelMap::Group> SurfelMap::group_by_leaf(std::span<const Vec3> points) const {
  std::vector<Group> groups;
  std::unordered_map<NodeKey, std::size_t, NodeKeyHash> index;
  index.reserve(points.size());
  for (const Vec3& p : points) {
    const NodeKey k = leaf_key(p);
    auto [it, inserted] = index.try_emplace(k, groups.size());
    if (inserted) groups.push_back(Group{k, SurfelStats{}});
    Group& g = groups[it->second];
    g.stats = stats_merge(g.stats, SurfelStats::from_point(p));
  }
  return groups;
}

UpdateSummary SurfelMap::insert_cloud(std::span<const Vec3> points, const std::optional<Vec3>& viewpoint) {
  UpdateSummary summary;
  if (points.empty()) return summary;
  ++version_;
  std::vector<std::pair<NodeKey, Node*>> touched;
  for (const Group& g : group_by_leaf(points)) {
    for (int d = 0; d <= cfg_.max_depth; ++d) {
      const NodeKey key = g.leaf.ancestor(d);
      auto [it, created] = nodes_.try_emplace(key);
      Node& node = it->second;
      if (created) ++summary.nodes_created;
      if (node.version != version_) {
        node.version = version_;
        touched.emplace_back(key, &node);
      }
      node.stats = stats_merge(node.stats, g.stats);
      if (viewpoint) node.viewpoint = viewpoint;
    }
  }
  summary.nodes_touched = touched.size();
  for (auto& [key, node] : touched) refresh(*node, key.depth);
  return summary;
}

UpdateSummary SurfelMap::remove_cloud(std::span<const Vec3> points) {
  UpdateSummary summary;
  if (points.empty()) return summary;
  const std::vector<Group> groups = group_by_leaf(points);

  // Validate aggregated counts per node before touching anything.
  std::unordered_map<NodeKey, std::int64_t, NodeKeyHash> demand;
  for (const Group& g : groups) {
    for (int d = 0; d <= cfg_.max_depth; ++d) demand[g.leaf.ancestor(d)] += g.stats.n;
  }
  for (const auto& [key, count] : demand) {
    auto it = nodes_.find(key);
    const std::int64_t have = it == nodes_.end() ? 0 : it->second.stats.n;
    if (count > have) {
      throw InvalidRemoval("removing " + std::to_string(count) + " points from node at depth " +
                           std::to_string(key.depth) + " holding " + std::to_string(have));
    }
  }

  ++version_;
  std::vector<NodeKey> touched;
  for (const Group& g : groups) {
    for (int d = 0; d <= cfg_.max_depth; ++d) {
      const NodeKey key = g.leaf.ancestor(d);
      Node& node = nodes_.at(key);
      if (node.version != version_) {
        node.version = version_;
        touched.push_back(key);
      }
      node.stats = stats_remove(node.stats, g.stats);
    }
  }
  summary.nodes_touched = touched.size();
  for (const NodeKey& key : touched) {
    auto it = nodes_.find(key);
    if (it->second.stats.n == 0) {
      nodes_.erase(it);
      ++summary.nodes_erased;
    } else {
      refresh(it->second, key.depth);
    }
  }
  return summary;
}

bool SurfelMap::usable(const Node& node, int depth, SurfelAttributes* attrs) const {
  if (depth < 1 || node.stats.n < cfg_.min_points) return false;
  if (!(node.stats.c.trace() / static_cast<double>(node.stats.n - 1) >= 1e-12)) return false;
  *attrs = derive_attributes(node.stats, node.viewpoint);
  // Coincident smallest eigenvalues leave the normal undefined.
  if (attrs->eigenvalues[1] - attrs->eigenvalues[0] <= 1e-12) return false;
  return attrs->planarity > cfg_.min_planarity;
}

void SurfelMap::refresh(Node& node, int depth) const {
  node.cache_usable = usable(node, depth, &node.cache);
  node.cache_version = node.version;
}

std::vector<SurfelCandidate> SurfelMap::query_candidates(const Vec3& f) const {
  std::vector<SurfelCandidate> out;
  const double r = cfg_.search_radius;
  const Vec3 lo = f.array() - r;
  const Vec3 hi = f.array() + r;
  const NodeKey klo = leaf_key(lo);
  const NodeKey khi = leaf_key(hi);
  const std::int64_t leaf_lo[3] = {klo.ix, klo.iy, klo.iz};
  const std::int64_t leaf_hi[3] = {khi.ix, khi.iy, khi.iz};

  for (int d = 1; d <= cfg_.max_depth; ++d) {
    const double s = std::ldexp(cfg_.leaf_size, d);
    std::int64_t a[3];
    std::int64_t b[3];
    for (int i = 0; i < 3; ++i) {
      a[i] = leaf_lo[i] >> d;
      b[i] = leaf_hi[i] >> d;
      // Widen by one cell where the ball touches a cell face within rounding.
      if (lo[i] - static_cast<double>(a[i]) * s <= 1e-9 * s) --a[i];
      if (static_cast<double>(b[i] + 1) * s - hi[i] <= 1e-9 * s) ++b[i];
    }
    for (std::int64_t ix = a[0]; ix <= b[0]; ++ix) {
      for (std::int64_t iy = a[1]; iy <= b[1]; ++iy) {
        for (std::int64_t iz = a[2]; iz <= b[2]; ++iz) {
          const NodeKey key{d, ix, iy, iz};
          auto it = nodes_.find(key);
          if (it == nodes_.end()) continue;
          const Node& node = it->second;
          if (node.stats.n < cfg_.min_points) continue;

          const Vec3 cmin(ix * s, iy * s, iz * s);
          const Vec3 cmax = cmin.array() + s;
          const Vec3 nearest = f.cwiseMax(cmin).cwiseMin(cmax);
          if ((f - nearest).squaredNorm() > r * r) continue;

          SurfelAttributes attrs;
          bool ok;
          if (node.cache_version == node.version) {
            ok = node.cache_usable;
            attrs = node.cache;
          } else {
            ok = usable(node, d, &attrs);
          }
          if (ok) out.push_back(SurfelCandidate{key, node.stats.n, attrs});
        }
      }
    }
  }
  return out;
}

const SurfelMap::Node* SurfelMap::find(const NodeKey& key) const {
  auto it = nodes_.find(key);
  return it == nodes_.end() ? nullptr : &it->second;
}

void SurfelMap::clear() {
  nodes_.clear();
  ++version_;
}

void SurfelMap::for_each_node(const std::function<void(const NodeKey&, const Node&)>& fn) const {
  for (const auto& [k, n] : nodes_) fn(k, n);
}

std::vector<NodeKey> SurfelMap::sorted_keys() const {
  std::vector<NodeKey> keys;
  keys.reserve(nodes_.size());
  for (const auto& [k, n] : nodes_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

}  // namespace surfelio
