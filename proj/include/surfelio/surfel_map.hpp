#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "surfelio/geometry.hpp"
#include "surfelio/surfel_stats.hpp"

namespace surfelio {

struct MapConfig {
  double leaf_size = 0.1;       // l, edge of a depth-0 voxel (m)
  int max_depth = 5;            // D_max
  int min_points = 6;           // N_min
  double min_planarity = 0.5;   // rho_min
  double search_radius = 0.1;   // r (m)
  double max_plane_dist = 0.3;  // d_max (m)

  /// Throws std::invalid_argument on violated bounds.
  void validate() const;
};

struct NodeKey {
  int depth = 0;
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  std::int64_t iz = 0;

  NodeKey parent() const { return NodeKey{depth + 1, ix >> 1, iy >> 1, iz >> 1}; }
  NodeKey ancestor(int levels) const {
    return NodeKey{depth + levels, ix >> levels, iy >> levels, iz >> levels};
  }
  friend bool operator==(const NodeKey&, const NodeKey&) = default;
  friend auto operator<=>(const NodeKey&, const NodeKey&) = default;
};

struct NodeKeyHash {
  std::size_t operator()(const NodeKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.depth) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.ix) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.iy) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.iz) * 0x27D4EB2F165667C5ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

/// Edge length of the voxel of `key`: 2^depth * leaf_size.
double node_scale(const NodeKey& key, const MapConfig& cfg);

struct UpdateSummary {
  std::size_t nodes_created = 0;
  std::size_t nodes_touched = 0;
  std::size_t nodes_erased = 0;
};

struct SurfelCandidate {
  NodeKey key;
  std::int64_t n = 0;
  SurfelAttributes attrs;
};

/// Octree of surfel statistics. Every node at every depth 0..max_depth holds
/// the moments of all points inside its voxel; inner nodes equal the Welford
/// merge of their children. Nodes are kept in a flat hash map keyed by
/// (depth, voxel index).
///
/// Not internally synchronized: many concurrent readers or one writer.
class SurfelMap {
 public:
  struct Node {
    SurfelStats stats;
    std::optional<Vec3> viewpoint;
    std::uint64_t version = 0;
    // Attribute cache, valid when cache_version == version.
    std::uint64_t cache_version = ~0ull;
    bool cache_usable = false;  // passes the N / degeneracy / planarity predicates
    SurfelAttributes cache;
  };

  explicit SurfelMap(const MapConfig& cfg = {});

  const MapConfig& config() const { return cfg_; }

  NodeKey leaf_key(const Vec3& p) const;
  NodeKey key_at(const Vec3& p, int depth) const { return leaf_key(p).ancestor(depth); }

  /// Adds points to the leaf-to-root chain of every containing node.
  UpdateSummary insert_cloud(std::span<const Vec3> points,
                             const std::optional<Vec3>& viewpoint = std::nullopt);

  /// Exact inverse of insert_cloud; empty nodes are erased. Validates the
  /// whole cloud before modifying anything and throws InvalidRemoval.
  UpdateSummary remove_cloud(std::span<const Vec3> points);

  /// All nodes with depth in [1, max_depth], n >= min_points, planarity above
  /// min_planarity and a voxel cube intersecting the ball of search_radius
  /// around f. Results are ordered by depth, then key.
  std::vector<SurfelCandidate> query_candidates(const Vec3& f) const;

  const Node* find(const NodeKey& key) const;
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear();

  /// Bumped on every write.
  std::uint64_t version() const { return version_; }

  void for_each_node(const std::function<void(const NodeKey&, const Node&)>& fn) const;

  /// Keys sorted for deterministic traversal.
  std::vector<NodeKey> sorted_keys() const;

 private:
  struct Group {
    NodeKey leaf;
    SurfelStats stats;
  };

  std::vector<Group> group_by_leaf(std::span<const Vec3> points) const;
  void refresh(Node& node, int depth) const;
  bool usable(const Node& node, int depth, SurfelAttributes* attrs) const;

  MapConfig cfg_;
  std::unordered_map<NodeKey, Node, NodeKeyHash> nodes_;
  std::uint64_t version_ = 0;
};

}  // namespace surfelio
