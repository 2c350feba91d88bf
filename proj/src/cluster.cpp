// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/cluster.h"
#include "evgrid/common.h"
#include "evgrid/contour.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ns_evgrid {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double Step(double z) { return z > 0.0 ? 1.0 : 0.0; }

struct Candidate {
    std::size_t chasing;
    std::size_t running;
    double distance;
};

/**
 * keeps candidates by ascending distance while neither side has been used ("proximity
 * principle"); ties fall back to the chasing index so the outcome is order independent
 */
void AcceptByProximity(std::vector<Candidate> candidates,
                       std::vector<char> &used,
                       std::vector<ClusterPair> &pairs) {
    std::stable_sort(candidates.begin(), candidates.end(), [](const auto &a, const auto &b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        if (a.chasing != b.chasing) return a.chasing < b.chasing;
        return a.running < b.running;
    });
    for (const auto &c : candidates) {
        if (used[c.chasing] || used[c.running]) continue;
        used[c.chasing] = used[c.running] = 1;
        pairs.push_back(ClusterPair{c.chasing, c.running, c.distance});
    }
}

}  // namespace

const char *ToString(ClusterLabel label) {
    switch (label) {
        case ClusterLabel::Run: return "run";
        case ClusterLabel::Chase: return "chase";
        case ClusterLabel::Unknown: return "unknown";
    }
    return "unknown";
}

Eigen::Matrix2d IdealRunIndicator() {
    const double h = std::numbers::sqrt2 / 2.0;
    return (Eigen::Matrix2d() << h, 0.0, 0.0, h).finished();
}

Eigen::Matrix2d IdealChaseIndicator() {
    const double h = std::numbers::sqrt2 / 2.0;
    return (Eigen::Matrix2d() << 0.0, h, h, 0.0).finished();
}

Eigen::Matrix2d IdealUnknownIndicator() { return Eigen::Matrix2d::Constant(0.5); }

std::optional<ClusterStats> ComputeIndicator(std::span<const FlowEvent> members) {
    if (members.size() < 2) return std::nullopt;
    const double m = static_cast<double>(members.size());

    Eigen::Vector2d flowSum = Eigen::Vector2d::Zero(), posSum = Eigen::Vector2d::Zero();
    for (const auto &fe : members) {
        flowSum += fe.flow.v;
        posSum += Eigen::Vector2d(fe.event.x, fe.event.y);
    }
    if (flowSum.norm() < 1e-12) return std::nullopt;

    ClusterStats st;
    st.mean_pos = posSum / m;
    st.mean_flow_dir = flowSum.normalized();

    Eigen::Matrix2d avg = Eigen::Matrix2d::Zero();
    for (const auto &fe : members) {
        const double d = Cross2(fe.flow.v, st.mean_flow_dir);
        const double s = Cross2(Eigen::Vector2d(fe.event.x, fe.event.y) - st.mean_pos, st.mean_flow_dir);
        avg(0, 0) += Step(d) * Step(s);
        avg(0, 1) += Step(d) * Step(-s);
        avg(1, 0) += Step(-d) * Step(s);
        avg(1, 1) += Step(-d) * Step(-s);
    }
    avg /= m;
    const double fro = avg.norm();
    if (fro == 0.0) return std::nullopt;
    st.indicator = avg / fro;
    return st;
}

double Similarity(const Eigen::Matrix2d &a, const Eigen::Matrix2d &b) {
    const double nb = b.norm();
    if (nb == 0.0) throw Error("similarity: reference matrix has zero Frobenius norm");
    return 1.0 - (a - b).norm() / nb;
}

ClusterLabel Classify(const Eigen::Matrix2d &indicator) {
    const double run = Similarity(indicator, IdealRunIndicator());
    const double chase = Similarity(indicator, IdealChaseIndicator());
    const double unk = Similarity(indicator, IdealUnknownIndicator());
    if (run > chase && run > unk) return ClusterLabel::Run;
    if (chase > run && chase > unk) return ClusterLabel::Chase;
    return ClusterLabel::Unknown;
}

std::vector<EventCluster> ClusterHomopolar(std::span<const FlowEvent> flowEvents,
                                           const SensorGeometry &geometry,
                                           const ClusterParams &params) {
    std::vector<EventCluster> clusters;
    const int w = geometry.width, h = geometry.height;

    for (const int polarity : {1, -1}) {
        std::vector<std::uint8_t> mask(geometry.PixelCount(), 0);
        std::vector<std::int32_t> owner(geometry.PixelCount(), -1);
        for (std::size_t i = 0; i < flowEvents.size(); ++i) {
            const auto &ev = flowEvents[i].event;
            if (ev.p != polarity) continue;
            if (!geometry.Contains(ev.x, ev.y)) throw Error("flow event outside sensor geometry");
            mask[geometry.Index(ev.x, ev.y)] = 1;
            owner[geometry.Index(ev.x, ev.y)] = static_cast<std::int32_t>(i);
        }
        const LabelImage img = LabelComponents(mask, w, h);

        std::vector<std::vector<FlowEvent>> groups(static_cast<std::size_t>(img.count));
        for (std::size_t idx = 0; idx < img.labels.size(); ++idx) {
            if (img.labels[idx] > 0) {
                groups[static_cast<std::size_t>(img.labels[idx] - 1)].push_back(
                    flowEvents[static_cast<std::size_t>(owner[idx])]);
            }
        }
        for (auto &g : groups) {
            if (g.size() < params.min_size) continue;
            EventCluster c;
            c.id = static_cast<int>(clusters.size());
            c.polarity = polarity;
            c.members = std::move(g);
            if (const auto st = ComputeIndicator(c.members)) {
                c.mean_pos = st->mean_pos;
                c.mean_flow_dir = st->mean_flow_dir;
                c.indicator = st->indicator;
                c.label = Classify(c.indicator);
            } else {
                c.flow_degenerate = true;
                Eigen::Vector2d pos = Eigen::Vector2d::Zero();
                for (const auto &fe : c.members) pos += Eigen::Vector2d(fe.event.x, fe.event.y);
                c.mean_pos = pos / static_cast<double>(c.members.size());
                c.label = ClusterLabel::Unknown;
            }
            clusters.push_back(std::move(c));
        }
    }
    return clusters;
}

double ClusterDistance(const EventCluster &ci, const EventCluster &cj, double thetaThd) {
    if (ci.polarity == cj.polarity) return kInf;
    if (ci.flow_degenerate || cj.flow_degenerate) return kInf;
    if (ci.mean_flow_dir.dot(cj.mean_flow_dir) < thetaThd) return kInf;
    const Eigen::Vector2d delta = cj.mean_pos - ci.mean_pos;
    const double dist = delta.norm();
    if (dist == 0.0) return kInf;
    const Eigen::Vector2d u = delta / dist;
    if (std::min(u.dot(ci.mean_flow_dir), u.dot(cj.mean_flow_dir)) < thetaThd) return kInf;
    return dist;
}

std::vector<ClusterPair> MatchClusters(std::span<const EventCluster> clusters, double thetaThd) {
    const std::size_t n = clusters.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return clusters[a].id < clusters[b].id; });

    std::vector<char> used(n, 0);
    std::vector<ClusterPair> pairs;
    auto is = [&](std::size_t i, ClusterLabel l) { return clusters[i].label == l; };

    // (i) chasing -> running
    {
        std::vector<Candidate> cands;
        for (const auto i : order) {
            if (!is(i, ClusterLabel::Chase)) continue;
            Candidate best{i, i, kInf};
            for (const auto j : order) {
                if (!is(j, ClusterLabel::Run)) continue;
                const double d = ClusterDistance(clusters[i], clusters[j], thetaThd);
                if (d < best.distance) best = Candidate{i, j, d};
            }
            if (std::isfinite(best.distance)) cands.push_back(best);
        }
        AcceptByProximity(std::move(cands), used, pairs);
    }

    // (ii) unmatched running / chasing -> unknown; the unknown side takes the missing role
    {
        std::vector<Candidate> cands;
        for (const auto i : order) {
            if (used[i] || is(i, ClusterLabel::Unknown)) continue;
            const bool chasing = is(i, ClusterLabel::Chase);
            Candidate best{i, i, kInf};
            for (const auto j : order) {
                if (used[j] || !is(j, ClusterLabel::Unknown)) continue;
                const double d = chasing ? ClusterDistance(clusters[i], clusters[j], thetaThd)
                                         : ClusterDistance(clusters[j], clusters[i], thetaThd);
                if (d < best.distance) {
                    best = chasing ? Candidate{i, j, d} : Candidate{j, i, d};
                }
            }
            if (std::isfinite(best.distance)) cands.push_back(best);
        }
        AcceptByProximity(std::move(cands), used, pairs);
    }

    // (iii) unknown <-> unknown; direction decided by the misalignment gate
    {
        std::vector<Candidate> cands;
        for (const auto i : order) {
            if (used[i] || !is(i, ClusterLabel::Unknown)) continue;
            Candidate best{i, i, kInf};
            for (const auto j : order) {
                if (j == i || used[j] || !is(j, ClusterLabel::Unknown)) continue;
                const double dij = ClusterDistance(clusters[i], clusters[j], thetaThd);
                const double dji = ClusterDistance(clusters[j], clusters[i], thetaThd);
                if (dij < best.distance) best = Candidate{i, j, dij};
                if (dji < best.distance) best = Candidate{j, i, dji};
            }
            if (std::isfinite(best.distance)) cands.push_back(best);
        }
        AcceptByProximity(std::move(cands), used, pairs);
    }
    return pairs;
}

}  // namespace ns_evgrid
