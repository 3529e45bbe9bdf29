#pragma once

// Ad-hoc cluster protocol: timer-based head election, nearest-head
// membership, battery-weighted randomized GPS scheduling, star-topology fix
// distribution and the three-missed-updates departure rule. Every message is
// charged to the energy ledgers through a MessageBus.
//
// Radio is an ideal lossless disk evaluated on true positions.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ctrack/energy.hpp"
#include "ctrack/sensors.hpp"
#include "ctrack/types.hpp"

namespace ctrack {

enum class MessageKind { HeadClaim, Join, Schedule, FixRequest, FixReport, FixBroadcast };

inline const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::HeadClaim: return "head_claim";
    case MessageKind::Join: return "join";
    case MessageKind::Schedule: return "schedule";
    case MessageKind::FixRequest: return "fix_request";
    case MessageKind::FixReport: return "fix_report";
    case MessageKind::FixBroadcast: return "fix_broadcast";
  }
  return "?";
}

/// Fixed-size packet; payload kind follows the message kind.
struct ProtocolMessage {
  MessageKind kind = MessageKind::HeadClaim;
  NodeId sender = 0;
  std::variant<std::monostate, GpsFix, std::vector<NodeId>> payload;

  bool payload_matches() const {
    switch (kind) {
      case MessageKind::FixReport:
      case MessageKind::FixBroadcast:
        return std::holds_alternative<GpsFix>(payload);
      case MessageKind::Schedule:
        return std::holds_alternative<std::vector<NodeId>>(payload);
      default:
        return std::holds_alternative<std::monostate>(payload);
    }
  }
};

struct ProtocolEvent {
  double t = 0.0;
  std::string kind;
  NodeId node = 0;
  NodeId cluster_head = 0;
  std::string detail;
};

class EventLog {
 public:
  void add(double t, std::string kind, NodeId node, NodeId head, std::string detail = {}) {
    events_.push_back({t, std::move(kind), node, head, std::move(detail)});
  }
  const std::vector<ProtocolEvent>& events() const { return events_; }

  void write_csv(std::ostream& os) const {
    os << "t,event_kind,node,cluster_head,detail\n";
    for (const auto& e : events_)
      os << e.t << ',' << e.kind << ',' << e.node << ',' << e.cluster_head << ',' << e.detail << '\n';
  }

 private:
  std::vector<ProtocolEvent> events_;
};

/// Charges every packet to the sender (tx) and each live in-range receiver (rx).
class MessageBus {
 public:
  MessageBus(std::span<EnergyLedger> ledgers, const CostTable& costs, double range)
      : ledgers_(ledgers), costs_(costs), range_(range) {}

  double range() const { return range_; }
  bool alive(NodeId n) const { return ledgers_[n].alive(); }
  bool in_range(const Vec3& a, const Vec3& b) const { return (a - b).norm() <= range_; }
  std::span<EnergyLedger> ledgers() const { return ledgers_; }

  /// Sends to `to` only; returns whether it was received.
  bool unicast(const ProtocolMessage& msg, NodeId to, std::span<const Vec3> pos) {
    if (!alive(msg.sender)) return false;
    ledgers_[msg.sender].charge(EnergyCategory::Tx, costs_.radio_msg);
    ++tx_;
    if (!alive(to) || !in_range(pos[msg.sender], pos[to])) return false;
    ledgers_[to].charge(EnergyCategory::Rx, costs_.radio_msg);
    ++rx_;
    return true;
  }

  /// Broadcast addressed to `audience`; returns the ids that received it.
  std::vector<NodeId> broadcast(const ProtocolMessage& msg, std::span<const NodeId> audience,
                                std::span<const Vec3> pos) {
    std::vector<NodeId> got;
    if (!alive(msg.sender)) return got;
    ledgers_[msg.sender].charge(EnergyCategory::Tx, costs_.radio_msg);
    ++tx_;
    for (NodeId r : audience) {
      if (r == msg.sender || !alive(r) || !in_range(pos[msg.sender], pos[r])) continue;
      ledgers_[r].charge(EnergyCategory::Rx, costs_.radio_msg);
      ++rx_;
      got.push_back(r);
    }
    return got;
  }

  std::size_t tx_count() const { return tx_; }
  std::size_t rx_count() const { return rx_; }

 private:
  std::span<EnergyLedger> ledgers_;
  CostTable costs_;
  double range_;
  std::size_t tx_ = 0;
  std::size_t rx_ = 0;
};

struct ElectionConfig {
  double timer_min_s = 0.0;
  double timer_max_s = 1.0;

  void validate() const {
    if (!(timer_max_s > timer_min_s))
      throw std::invalid_argument("ElectionConfig.timer_max_s: timer range is degenerate");
  }
};

struct Candidate {
  NodeId id = 0;
  Vec3 position = Vec3::Zero();
};

struct ElectionResult {
  std::vector<double> timers;          // aligned with the sorted candidates
  std::vector<NodeId> heads;           // one per connected group, ascending id
  std::vector<std::vector<NodeId>> groups;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> connected_groups(std::span<const Candidate> c, double range) {
  const std::size_t n = c.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if ((c[i].position - c[j].position).norm() <= range) parent[find(i)] = find(j);
  std::map<std::size_t, std::vector<std::size_t>> by_root;
  for (std::size_t i = 0; i < n; ++i) by_root[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [root, members] : by_root) out.push_back(std::move(members));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

}  // namespace detail

/// Within each connected in-range group the earliest timer wins; exact ties
/// go to the lowest id. `timers` is aligned with `candidates`.
inline ElectionResult pick_heads(std::vector<Candidate> candidates, std::vector<double> timers, double range) {
  if (timers.size() != candidates.size()) throw std::invalid_argument("pick_heads: one timer per candidate");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return candidates[a].id < candidates[b].id; });
  ElectionResult out;
  std::vector<Candidate> sorted;
  for (std::size_t k : order) {
    sorted.push_back(candidates[k]);
    out.timers.push_back(timers[k]);
  }
  for (const auto& g : detail::connected_groups(sorted, range)) {
    std::size_t best = g.front();
    for (std::size_t k : g)
      if (out.timers[k] < out.timers[best] ||
          (out.timers[k] == out.timers[best] && sorted[k].id < sorted[best].id))
        best = k;
    out.heads.push_back(sorted[best].id);
    std::vector<NodeId> ids;
    for (std::size_t k : g) ids.push_back(sorted[k].id);
    out.groups.push_back(std::move(ids));
  }
  std::sort(out.heads.begin(), out.heads.end());
  return out;
}

/// Every candidate draws one timer, in ascending id order, then pick_heads.
inline ElectionResult elect_head(std::vector<Candidate> candidates, const ElectionConfig& cfg,
                                 Rng& rng, double range) {
  cfg.validate();
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::uniform_real_distribution<double> timer(cfg.timer_min_s, cfg.timer_max_s);
  std::vector<double> timers;
  timers.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) timers.push_back(timer(rng));
  return pick_heads(std::move(candidates), std::move(timers), range);
}

struct ClusterState {
  NodeId head = 0;
  std::vector<NodeId> members;           // ascending, includes head
  std::deque<NodeId> schedule;           // upcoming samplers
  std::map<NodeId, int> missed;          // consecutive missed updates per member

  bool contains(NodeId n) const { return std::binary_search(members.begin(), members.end(), n); }
  std::size_t size() const { return members.size(); }

  void add(NodeId n) {
    members.insert(std::upper_bound(members.begin(), members.end(), n), n);
    missed[n] = 0;
  }
  void remove(NodeId n) {
    members.erase(std::remove(members.begin(), members.end(), n), members.end());
    missed.erase(n);
    schedule.erase(std::remove(schedule.begin(), schedule.end(), n), schedule.end());
  }
};

struct Assignment {
  std::vector<ClusterState> clusters;
  std::vector<NodeId> unassigned;
};

/// Geometric membership for known heads: every other node joins the nearest
/// head within `radius` (distance ties go to the lower head id). Nodes with
/// no head in range are returned unassigned.
inline Assignment form_clusters(std::span<const Vec3> positions, std::span<const NodeId> nodes,
                                std::span<const NodeId> heads, double radius) {
  Assignment out;
  std::vector<NodeId> sorted_heads(heads.begin(), heads.end());
  std::sort(sorted_heads.begin(), sorted_heads.end());
  std::map<NodeId, std::size_t> index;
  for (NodeId h : sorted_heads) {
    index[h] = out.clusters.size();
    ClusterState c;
    c.head = h;
    c.add(h);
    out.clusters.push_back(std::move(c));
  }
  for (NodeId n : nodes) {
    if (index.count(n)) continue;
    std::optional<NodeId> best;
    double best_d = std::numeric_limits<double>::infinity();
    for (NodeId h : sorted_heads) {
      const double d = (positions[n] - positions[h]).norm();
      if (d <= radius && d < best_d) {
        best = h;
        best_d = d;
      }
    }
    if (best) out.clusters[index[*best]].add(n);
    else out.unassigned.push_back(n);
  }
  return out;
}

/// Convenience: every node is a candidate; isolated nodes become singleton heads.
inline std::vector<ClusterState> form_clusters(std::span<const Vec3> positions, double radius,
                                               const ElectionConfig& election, Rng& rng) {
  std::vector<NodeId> pending(positions.size());
  std::iota(pending.begin(), pending.end(), 0);
  std::vector<ClusterState> out;
  while (!pending.empty()) {
    std::vector<Candidate> cands;
    for (NodeId n : pending) cands.push_back({n, positions[n]});
    const auto er = elect_head(cands, election, rng, radius);
    auto a = form_clusters(positions, pending, er.heads, radius);
    for (auto& c : a.clusters) out.push_back(std::move(c));
    pending = std::move(a.unassigned);
  }
  return out;
}

/// Draws `horizon` samplers with probability proportional to
/// remaining_battery^exponent. Dead members have zero weight; an all-dead
/// cluster yields an empty schedule.
inline std::deque<NodeId> build_schedule(const ClusterState& cluster, std::size_t horizon,
                                         std::span<const EnergyLedger> ledgers, double exponent,
                                         Rng& rng) {
  std::deque<NodeId> out;
  if (cluster.members.empty()) return out;
  std::vector<double> w;
  double total = 0.0;
  for (NodeId m : cluster.members) {
    const double rem = ledgers[m].remaining().joules();
    const double wi = rem > 0.0 ? std::pow(rem, exponent) : 0.0;
    w.push_back(wi);
    total += wi;
  }
  if (!(total > 0.0)) return out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < horizon; ++k) {
    const double r = u(rng) * total;
    double acc = 0.0;
    std::size_t pick = w.size() - 1;
    for (std::size_t i = 0; i < w.size(); ++i) {
      acc += w[i];
      if (r < acc && w[i] > 0.0) {
        pick = i;
        break;
      }
    }
    while (w[pick] == 0.0) --pick;  // r landed on the tail through rounding
    out.push_back(cluster.members[pick]);
  }
  return out;
}

struct ProtocolConfig {
  double radius = 50.0;
  ElectionConfig election;
  double battery_exponent = 1.0;
  std::size_t schedule_horizon = 10;
  int max_missed = 3;

  void validate() const {
    if (!(radius > 0.0)) throw std::invalid_argument("ProtocolConfig.radius: must be > 0");
    election.validate();
    if (battery_exponent < 0.0) throw std::invalid_argument("ProtocolConfig.battery_exponent: must be >= 0");
    if (schedule_horizon < 1) throw std::invalid_argument("ProtocolConfig.schedule_horizon: must be >= 1");
    if (max_missed < 1) throw std::invalid_argument("ProtocolConfig.max_missed: must be >= 1");
  }
};

struct DeliveryRecord {
  bool reported = false;          // head holds the fix
  std::vector<NodeId> holders;    // nodes that adopt the fix (sampler, head, reached members)
  std::vector<NodeId> missed;     // members out of reach of the head
};

/// Cluster bookkeeping for one simulation run.
class ClusterProtocol {
 public:
  ClusterProtocol(ProtocolConfig cfg, MessageBus& bus, EventLog* log = nullptr)
      : cfg_(std::move(cfg)), bus_(bus), log_(log), cluster_of_(bus.ledgers().size(), kNone) {
    cfg_.validate();
  }

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  const ProtocolConfig& config() const { return cfg_; }
  const std::vector<ClusterState>& clusters() const { return clusters_; }
  std::vector<ClusterState>& clusters() { return clusters_; }
  std::size_t cluster_of(NodeId n) const { return cluster_of_[n]; }
  MessageBus& bus() { return bus_; }

  /// Initial cluster formation over every live node.
  void initialize(std::span<const Vec3> pos, Rng& rng, double now) {
    std::vector<NodeId> all;
    for (NodeId n = 0; n < cluster_of_.size(); ++n)
      if (bus_.alive(n)) all.push_back(n);
    form_among(all, pos, rng, now);
  }

  /// Runs elections among `pending` until every node is in a cluster.
  void form_among(std::vector<NodeId> pending, std::span<const Vec3> pos, Rng& rng, double now) {
    std::sort(pending.begin(), pending.end());
    while (!pending.empty()) {
      std::vector<Candidate> cands;
      for (NodeId n : pending) cands.push_back({n, pos[n]});
      const ElectionResult er = elect_head(cands, cfg_.election, rng, cfg_.radius);
      std::vector<NodeId> everyone(cluster_of_.size());
      std::iota(everyone.begin(), everyone.end(), 0);
      for (NodeId h : er.heads) {
        bus_.broadcast({MessageKind::HeadClaim, h, {}}, everyone, pos);
        log(now, "head_claim", h, h);
      }
      Assignment a = form_clusters(pos, pending, er.heads, cfg_.radius);
      for (auto& c : a.clusters) {
        for (NodeId m : c.members) {
          if (m == c.head) continue;
          bus_.unicast({MessageKind::Join, m, {}}, c.head, pos);
          log(now, "join", m, c.head);
        }
        add_cluster(std::move(c));
      }
      pending = std::move(a.unassigned);
    }
  }

  /// Pops the next live scheduled sampler, rebuilding (and broadcasting) the
  /// schedule when exhausted. Returns nullopt when every member is dead.
  std::optional<NodeId> next_sampler(std::size_t ci, std::span<const Vec3> pos, Rng& rng, double now) {
    ClusterState& c = clusters_.at(ci);
    for (int attempt = 0; attempt < 2; ++attempt) {
      while (!c.schedule.empty()) {
        const NodeId s = c.schedule.front();
        c.schedule.pop_front();
        if (bus_.alive(s) && c.contains(s)) return s;
      }
      if (attempt == 0) {
        c.schedule = build_schedule(c, cfg_.schedule_horizon, bus_.ledgers(), cfg_.battery_exponent, rng);
        if (c.schedule.empty()) return std::nullopt;
        if (c.size() > 1) {
          ProtocolMessage m{MessageKind::Schedule, c.head,
                            std::vector<NodeId>(c.schedule.begin(), c.schedule.end())};
          bus_.broadcast(m, c.members, pos);
          log(now, "schedule", c.head, c.head, std::to_string(c.schedule.size()));
        }
      }
    }
    return std::nullopt;
  }

  /// Sampler -> head report, then head -> members broadcast. Members the
  /// head cannot reach have their missed counter incremented.
  DeliveryRecord distribute_fix(std::size_t ci, const GpsFix& fix, std::span<const Vec3> pos, double now) {
    ClusterState& c = clusters_.at(ci);
    DeliveryRecord rec;
    const NodeId sampler = fix.sampler_id;
    if (bus_.alive(sampler)) rec.holders.push_back(sampler);

    bool head_has_fix = false;
    if (bus_.alive(c.head)) {
      if (sampler == c.head) {
        head_has_fix = true;
      } else {
        ProtocolMessage report{MessageKind::FixReport, sampler, fix};
        head_has_fix = bus_.unicast(report, c.head, pos);
        if (head_has_fix) rec.holders.push_back(c.head);
      }
    }
    rec.reported = head_has_fix;

    std::vector<NodeId> reached;
    if (head_has_fix && c.size() > 1) {
      ProtocolMessage bc{MessageKind::FixBroadcast, c.head, fix};
      reached = bus_.broadcast(bc, c.members, pos);
    }
    for (NodeId m : c.members) {
      if (m == c.head || !bus_.alive(m)) continue;
      if (std::binary_search(reached.begin(), reached.end(), m)) {
        c.missed[m] = 0;
        if (m != sampler) rec.holders.push_back(m);
      } else {
        c.missed[m] = std::min(c.missed[m] + 1, cfg_.max_missed);
        rec.missed.push_back(m);
        log(now, "miss", m, c.head, std::to_string(c.missed[m]));
      }
    }
    std::sort(rec.holders.begin(), rec.holders.end());
    rec.holders.erase(std::unique(rec.holders.begin(), rec.holders.end()), rec.holders.end());
    return rec;
  }

  /// Applies departures (max_missed consecutive misses), removes dead nodes
  /// and re-elects where a head died. Departing nodes join the nearest
  /// in-range head of another cluster, otherwise they start a new formation.
  /// Returns the nodes that changed cluster.
  std::vector<NodeId> tick_membership(std::span<const Vec3> pos, Rng& rng, double now) {
    std::vector<NodeId> moved;
    std::vector<NodeId> orphans;   // need a new formation round
    std::vector<NodeId> departing;

    for (auto& c : clusters_) {
      std::vector<NodeId> dead;
      for (NodeId m : c.members)
        if (!bus_.alive(m)) dead.push_back(m);
      const bool head_dead = !bus_.alive(c.head);
      for (NodeId m : dead) {
        c.remove(m);
        cluster_of_[m] = kNone;
        log(now, "dead", m, c.head);
      }
      if (head_dead) {
        for (NodeId m : c.members) {
          orphans.push_back(m);
          cluster_of_[m] = kNone;
        }
        c.members.clear();
        c.missed.clear();
        c.schedule.clear();
        continue;
      }
      std::vector<NodeId> leaving;
      for (const auto& [m, k] : c.missed)
        if (m != c.head && k >= cfg_.max_missed) leaving.push_back(m);
      for (NodeId m : leaving) {
        c.remove(m);
        cluster_of_[m] = kNone;
        departing.push_back(m);
        log(now, "leave", m, c.head);
      }
    }
    std::erase_if(clusters_, [](const ClusterState& c) { return c.members.empty(); });
    reindex();

    std::sort(departing.begin(), departing.end());
    for (NodeId n : departing) {
      std::optional<std::size_t> best;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t ci = 0; ci < clusters_.size(); ++ci) {
        const NodeId h = clusters_[ci].head;
        const double d = (pos[n] - pos[h]).norm();
        if (d <= cfg_.radius && (d < best_d || (d == best_d && h < clusters_[*best].head))) {
          best = ci;
          best_d = d;
        }
      }
      if (best) {
        ClusterState& c = clusters_[*best];
        bus_.unicast({MessageKind::Join, n, {}}, c.head, pos);
        c.add(n);
        cluster_of_[n] = *best;
        moved.push_back(n);
        log(now, "join", n, c.head);
      } else {
        orphans.push_back(n);
      }
    }
    if (!orphans.empty()) {
      for (NodeId n : orphans) moved.push_back(n);
      form_among(orphans, pos, rng, now);
    }
    std::sort(moved.begin(), moved.end());
    return moved;
  }

  /// Every live node is in exactly one cluster, heads are members, no dead members.
  bool partition_ok() const {
    std::vector<int> seen(cluster_of_.size(), 0);
    for (std::size_t ci = 0; ci < clusters_.size(); ++ci) {
      const auto& c = clusters_[ci];
      if (!c.contains(c.head)) return false;
      for (NodeId m : c.members) {
        if (!bus_.alive(m) || cluster_of_[m] != ci) return false;
        ++seen[m];
      }
      for (const auto& [m, k] : c.missed)
        if (k < 0 || k > cfg_.max_missed) return false;
    }
    for (NodeId n = 0; n < seen.size(); ++n)
      if (bus_.alive(n) ? seen[n] != 1 : seen[n] != 0) return false;
    return true;
  }

 private:
  void add_cluster(ClusterState c) {
    for (NodeId m : c.members) cluster_of_[m] = clusters_.size();
    clusters_.push_back(std::move(c));
  }
  void reindex() {
    std::fill(cluster_of_.begin(), cluster_of_.end(), kNone);
    for (std::size_t ci = 0; ci < clusters_.size(); ++ci)
      for (NodeId m : clusters_[ci].members) cluster_of_[m] = ci;
  }
  void log(double t, const char* kind, NodeId node, NodeId head, std::string detail = {}) {
    if (log_) log_->add(t, kind, node, head, std::move(detail));
  }

  ProtocolConfig cfg_;
  MessageBus& bus_;
  EventLog* log_;
  std::vector<ClusterState> clusters_;
  std::vector<std::size_t> cluster_of_;
};

}  // namespace ctrack
