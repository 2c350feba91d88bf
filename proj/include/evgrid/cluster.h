// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_CLUSTER_H
#define EVGRID_CLUSTER_H

#include "evgrid/normal_flow.h"

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

namespace ns_evgrid {

enum class ClusterLabel { Run, Chase, Unknown };

const char *ToString(ClusterLabel label);

struct ClusterStats {
    Eigen::Vector2d mean_pos = Eigen::Vector2d::Zero();
    Eigen::Vector2d mean_flow_dir = Eigen::Vector2d::Zero();
    Eigen::Matrix2d indicator = Eigen::Matrix2d::Zero();
};

struct EventCluster {
    int id = 0;
    int polarity = 1;
    std::vector<FlowEvent> members;
    Eigen::Vector2d mean_pos = Eigen::Vector2d::Zero();
    Eigen::Vector2d mean_flow_dir = Eigen::Vector2d::Zero();
    Eigen::Matrix2d indicator = Eigen::Matrix2d::Zero();
    ClusterLabel label = ClusterLabel::Unknown;
    // set when the flows cancel out or no sign statistics exist
    bool flow_degenerate = false;
};

// indices into the cluster list the pair was matched from
struct ClusterPair {
    std::size_t chasing = 0;
    std::size_t running = 0;
    double distance = 0.0;
};

struct ClusterParams {
    std::size_t min_size = 5;
    double theta_thd = 0.5;
};

/**
 * ideal indicator matrices of running, chasing and unknown clusters
 */
Eigen::Matrix2d IdealRunIndicator();
Eigen::Matrix2d IdealChaseIndicator();
Eigen::Matrix2d IdealUnknownIndicator();

// 2D cross product a.x * b.y - a.y * b.x
inline double Cross2(const Eigen::Vector2d &a, const Eigen::Vector2d &b) {
    return a.x() * b.y() - a.y() * b.x();
}

/**
 * splits inlier events into one binary image per polarity, labels 8-connected components by
 * contour tracing, and turns each component with at least 'min_size' events into a cluster.
 * Cluster statistics and labels are filled in; ids follow raster discovery order, positive
 * polarity first.
 */
std::vector<EventCluster> ClusterHomopolar(std::span<const FlowEvent> flowEvents,
                                           const SensorGeometry &geometry,
                                           const ClusterParams &params = {});

// mean position, mean flow direction and the normalized sign-statistics indicator;
// nullopt when the cluster is flow-degenerate
std::optional<ClusterStats> ComputeIndicator(std::span<const FlowEvent> members);

// 1 - |A - B|_F / |B|_F
double Similarity(const Eigen::Matrix2d &a, const Eigen::Matrix2d &b);

ClusterLabel Classify(const Eigen::Matrix2d &indicator);

// +inf when polarities agree, flow directions diverge, or the centers are misaligned
double ClusterDistance(const EventCluster &ci, const EventCluster &cj, double thetaThd);

// three-stage run/chase matching; each cluster appears in at most one pair
std::vector<ClusterPair> MatchClusters(std::span<const EventCluster> clusters, double thetaThd);

}  // namespace ns_evgrid

#endif
