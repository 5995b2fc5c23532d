#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cxlsim/error.hpp"

namespace cxlsim {

using NodeId = std::string;

// Sentinel pool id for host-local DRAM. Reserved: topology nodes may not use it.
inline constexpr const char* kLocalPoolId = "LOCAL";

enum class NodeKind { kRootComplex, kSwitch, kPool };

inline const char* to_string(NodeKind k) {
    switch (k) {
    case NodeKind::kRootComplex: return "root_complex";
    case NodeKind::kSwitch: return "switch";
    case NodeKind::kPool: return "pool";
    }
    return "?";
}

/// One annotated node of the CXL.mem tree. latency_ns is the one-way latency
/// added by traversing this node; bandwidth is the sustained throughput cap in
/// bytes/ns (numerically equal to GB/s); stt_ns is the per-event occupancy of
/// the node's link (switches and the root complex; pools may set it to model a
/// serializing device port). capacity_bytes is meaningful for pools, 0 = unlimited.
struct TopoNode {
    NodeId id;
    NodeKind kind = NodeKind::kPool;
    double latency_ns = 0.0;
    double write_latency_ns = 0.0; // defaults to latency_ns
    double bandwidth_bytes_per_ns = 0.0;
    double stt_ns = 0.0;
    std::uint64_t capacity_bytes = 0;
    std::vector<NodeId> children;

    bool operator==(const TopoNode&) const = default;
};

/// Unique root-to-pool route with its aggregate annotations.
struct PoolPath {
    NodeId pool;
    std::vector<NodeId> hops; // root first, pool last
    double total_latency_ns = 0.0;
    double total_write_latency_ns = 0.0;
    double min_bandwidth_bytes_per_ns = 0.0;
};

/// Validated, immutable tree of root complex, switches and memory pools.
/// Safe to share across threads once constructed.
class Topology {
public:
    Topology() = default;

    static Topology parse(const std::string& json_text);

    const std::vector<TopoNode>& nodes() const { return nodes_; }
    double local_latency_ns() const { return local_latency_ns_; }
    const TopoNode& root() const { return nodes_[root_]; }

    bool contains(const NodeId& id) const { return index_.count(id) != 0; }

    const TopoNode& node(const NodeId& id) const {
        auto it = index_.find(id);
        if (it == index_.end())
            throw ValidationError("unknown node id '" + id + "'");
        return nodes_[it->second];
    }

    std::vector<NodeId> pool_ids() const {
        std::vector<NodeId> out;
        for (const auto& n : nodes_)
            if (n.kind == NodeKind::kPool)
                out.push_back(n.id);
        return out;
    }

    PoolPath resolve_path(const NodeId& pool) const;
    std::vector<NodeId> switches_on_path(const NodeId& pool) const;

    std::string serialize() const;
    std::string digest() const;

    bool operator==(const Topology& other) const {
        return nodes_ == other.nodes_ && local_latency_ns_ == other.local_latency_ns_;
    }

    // Mutators used by experiment drivers to derive topology variants.
    // The caller is responsible for keeping values in range; revalidate()
    // re-runs the structural checks.
    TopoNode& node_mut(const NodeId& id) {
        auto it = index_.find(id);
        if (it == index_.end())
            throw ValidationError("unknown node id '" + id + "'");
        return nodes_[it->second];
    }
    void revalidate() { validate(); }

private:
    void validate();

    std::vector<TopoNode> nodes_;
    std::unordered_map<NodeId, std::size_t> index_;
    std::unordered_map<NodeId, std::size_t> parent_; // child id -> parent index
    std::size_t root_ = 0;
    double local_latency_ns_ = 0.0;
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline void require_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (const auto& item : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw ParseError(where + ": unknown key '" + item.key() + "'");
    }
}

inline double number_field(const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key))
        throw ParseError(where + ": missing '" + std::string(key) + "'");
    if (!obj[key].is_number())
        throw ParseError(where + ": '" + std::string(key) + "' must be a number");
    return obj[key].get<double>();
}

} // namespace detail

inline Topology Topology::parse(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("topology: syntax error: ") + e.what());
    }
    if (!doc.is_object())
        throw ParseError("topology: document must be a JSON object");
    detail::require_keys(doc, {"local_latency_ns", "nodes"}, "topology");

    Topology topo;
    if (!doc.contains("local_latency_ns"))
        throw ValidationError("topology: missing local_latency_ns");
    if (!doc["local_latency_ns"].is_number())
        throw ParseError("topology: local_latency_ns must be a number");
    topo.local_latency_ns_ = doc["local_latency_ns"].get<double>();
    if (!(topo.local_latency_ns_ > 0.0))
        throw ValidationError("topology: local_latency_ns must be positive");

    if (!doc.contains("nodes") || !doc["nodes"].is_array())
        throw ParseError("topology: missing 'nodes' array");

    for (const auto& jn : doc["nodes"]) {
        if (!jn.is_object())
            throw ParseError("topology: node entries must be objects");
        std::string id = jn.value("id", std::string());
        const std::string where = "node '" + id + "'";
        detail::require_keys(jn,
                             {"id", "kind", "latency_ns", "write_latency_ns", "bandwidth_gbps",
                              "stt_ns", "capacity_bytes", "children"},
                             where);
        if (id.empty())
            throw ValidationError("topology: node with empty id");
        if (id == kLocalPoolId)
            throw ValidationError("node id '" + id + "' is reserved");

        TopoNode n;
        n.id = id;
        std::string kind = jn.value("kind", std::string());
        if (kind == "root_complex")
            n.kind = NodeKind::kRootComplex;
        else if (kind == "switch")
            n.kind = NodeKind::kSwitch;
        else if (kind == "pool")
            n.kind = NodeKind::kPool;
        else
            throw ParseError(where + ": unknown kind '" + kind + "'");

        n.latency_ns = detail::number_field(jn, "latency_ns", where);
        if (n.latency_ns < 0)
            throw ValidationError(where + ": latency_ns must be non-negative");
        n.write_latency_ns = n.latency_ns;
        if (jn.contains("write_latency_ns")) {
            n.write_latency_ns = detail::number_field(jn, "write_latency_ns", where);
            if (n.write_latency_ns < 0)
                throw ValidationError(where + ": write_latency_ns must be non-negative");
        }
        // Config unit is gigabytes/s, which is numerically bytes/ns.
        n.bandwidth_bytes_per_ns = detail::number_field(jn, "bandwidth_gbps", where);
        if (!(n.bandwidth_bytes_per_ns > 0))
            throw ValidationError(where + ": bandwidth must be positive");
        if (jn.contains("stt_ns")) {
            n.stt_ns = detail::number_field(jn, "stt_ns", where);
            if (n.stt_ns < 0)
                throw ValidationError(where + ": stt_ns must be non-negative");
        }
        if (jn.contains("capacity_bytes")) {
            if (n.kind != NodeKind::kPool)
                throw ValidationError(where + ": capacity_bytes is only meaningful for pools");
            if (!jn["capacity_bytes"].is_number_unsigned())
                throw ParseError(where + ": capacity_bytes must be a non-negative integer");
            n.capacity_bytes = jn["capacity_bytes"].get<std::uint64_t>();
        }
        if (jn.contains("children")) {
            if (!jn["children"].is_array())
                throw ParseError(where + ": children must be an array");
            for (const auto& c : jn["children"]) {
                if (!c.is_string())
                    throw ParseError(where + ": children must be strings");
                n.children.push_back(c.get<std::string>());
            }
        }
        if (topo.index_.count(n.id))
            throw ValidationError("duplicate id '" + n.id + "'");
        topo.index_[n.id] = topo.nodes_.size();
        topo.nodes_.push_back(std::move(n));
    }

    topo.validate();
    return topo;
}

inline void Topology::validate() {
    // Rebuild the id index; callers may have renamed nodes via node_mut.
    index_.clear();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (index_.count(nodes_[i].id))
            throw ValidationError("duplicate id '" + nodes_[i].id + "'");
        index_[nodes_[i].id] = i;
    }

    std::size_t roots = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const TopoNode& n = nodes_[i];
        if (n.kind == NodeKind::kRootComplex) {
            roots++;
            root_ = i;
        }
        if (n.kind == NodeKind::kPool && !n.children.empty())
            throw ValidationError("pool '" + n.id + "' has children");
        if (n.latency_ns < 0 || n.write_latency_ns < 0 || n.stt_ns < 0)
            throw ValidationError("node '" + n.id + "': negative time annotation");
        if (!(n.bandwidth_bytes_per_ns > 0))
            throw ValidationError("node '" + n.id + "': bandwidth must be positive");
    }
    if (nodes_.empty())
        throw ValidationError("topology: no nodes");
    if (roots == 0)
        throw ValidationError("topology: no root_complex node");
    if (roots > 1)
        throw ValidationError("topology: multiple root_complex nodes");

    parent_.clear();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        std::vector<NodeId> seen;
        for (const auto& child : nodes_[i].children) {
            auto it = index_.find(child);
            if (it == index_.end())
                throw ValidationError("node '" + nodes_[i].id + "' references unknown child '" +
                                      child + "'");
            if (std::find(seen.begin(), seen.end(), child) != seen.end())
                throw ValidationError("node '" + nodes_[i].id + "' lists child '" + child +
                                      "' twice");
            seen.push_back(child);
            if (it->second == root_)
                throw ValidationError("cycle: root '" + child + "' is listed as a child of '" +
                                      nodes_[i].id + "'");
            if (parent_.count(child))
                throw ValidationError("node '" + child + "' has multiple parents");
            parent_[child] = i;
        }
    }

    // Reachability from the root. Unreached nodes with a parent imply a cycle
    // among themselves; unreached nodes without one are a disconnected tree.
    std::vector<bool> reached(nodes_.size(), false);
    std::vector<std::size_t> stack{root_};
    reached[root_] = true;
    while (!stack.empty()) {
        std::size_t i = stack.back();
        stack.pop_back();
        for (const auto& child : nodes_[i].children) {
            std::size_t ci = index_.at(child);
            if (!reached[ci]) {
                reached[ci] = true;
                stack.push_back(ci);
            }
        }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (reached[i])
            continue;
        if (parent_.count(nodes_[i].id) == 0)
            throw ValidationError("node '" + nodes_[i].id + "' unreachable from root");
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!reached[i])
            throw ValidationError("cycle involving node '" + nodes_[i].id + "'");
    }
}

inline PoolPath Topology::resolve_path(const NodeId& pool) const {
    const TopoNode& target = node(pool);
    if (target.kind != NodeKind::kPool)
        throw ValidationError("node '" + pool + "' is not a pool");

    std::vector<std::size_t> chain; // pool up to root
    std::size_t cur = index_.at(pool);
    chain.push_back(cur);
    while (cur != root_) {
        cur = parent_.at(nodes_[cur].id);
        chain.push_back(cur);
    }

    PoolPath path;
    path.pool = pool;
    path.min_bandwidth_bytes_per_ns = nodes_[chain.back()].bandwidth_bytes_per_ns;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        const TopoNode& n = nodes_[*it];
        path.hops.push_back(n.id);
        path.total_latency_ns += n.latency_ns;
        path.total_write_latency_ns += n.write_latency_ns;
        path.min_bandwidth_bytes_per_ns =
            std::min(path.min_bandwidth_bytes_per_ns, n.bandwidth_bytes_per_ns);
    }
    return path;
}

inline std::vector<NodeId> Topology::switches_on_path(const NodeId& pool) const {
    PoolPath path = resolve_path(pool);
    std::vector<NodeId> out;
    for (const auto& id : path.hops) {
        NodeKind k = node(id).kind;
        if (k == NodeKind::kSwitch || k == NodeKind::kRootComplex)
            out.push_back(id);
    }
    return out;
}

inline std::string Topology::serialize() const {
    nlohmann::ordered_json doc;
    doc["local_latency_ns"] = local_latency_ns_;
    doc["nodes"] = nlohmann::ordered_json::array();
    for (const auto& n : nodes_) {
        nlohmann::ordered_json jn;
        jn["id"] = n.id;
        jn["kind"] = to_string(n.kind);
        jn["latency_ns"] = n.latency_ns;
        if (n.write_latency_ns != n.latency_ns)
            jn["write_latency_ns"] = n.write_latency_ns;
        jn["bandwidth_gbps"] = n.bandwidth_bytes_per_ns;
        if (n.stt_ns != 0.0)
            jn["stt_ns"] = n.stt_ns;
        if (n.capacity_bytes != 0)
            jn["capacity_bytes"] = n.capacity_bytes;
        if (!n.children.empty())
            jn["children"] = n.children;
        doc["nodes"].push_back(std::move(jn));
    }
    return doc.dump();
}

inline std::string Topology::digest() const { return detail::hex64(detail::fnv1a64(serialize())); }

} // namespace cxlsim
