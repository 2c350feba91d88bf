// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_GRID_H
#define EVGRID_GRID_H

#include "evgrid/cluster.h"
#include "evgrid/ellipse.h"
#include "evgrid/event_io.h"
#include "evgrid/normal_flow.h"

#include <Eigen/Core>
#include <istream>
#include <optional>
#include <span>
#include <vector>

namespace ns_evgrid {

/**
 * asymmetric circle grid: 'rows' staggered rows of 'cols' circles, odd rows shifted by half
 * the spacing. Board point (i, j) sits at ((2j + i mod 2) * spacing / 2, i * spacing / 2, 0).
 */
struct BoardSpec {
    int rows = 4;
    int cols = 11;
    double spacing = 0.05;        // m
    double circle_radius = 0.01;  // m

    void Validate() const;
    [[nodiscard]] std::size_t Count() const { return static_cast<std::size_t>(rows) * cols; }
};

BoardSpec ParseBoardSpec(std::istream &in);

struct Correspondence {
    Eigen::Vector2d image = Eigen::Vector2d::Zero();
    Eigen::Vector3d board = Eigen::Vector3d::Zero();
};

// one complete, ordered grid detection at time t (row-major board order)
struct GridObservation {
    double t = 0.0;
    std::vector<Correspondence> correspondences;
};

std::vector<Eigen::Vector3d> BoardPoints(const BoardSpec &spec);

struct GridParams {
    // acceptance gate for a predicted lattice position, as a fraction of the local lattice step
    double gate_frac = 0.3;
    // neighbors considered when forming a 4-center seed sample
    int seed_neighbors = 8;
};

struct GridMatch {
    std::vector<std::size_t> indices;  // center index per board point, row-major
    Eigen::Matrix3d homography = Eigen::Matrix3d::Identity();  // board (x, y) -> image
    double rms_transfer = 0.0;
};

/**
 * orders a subset of 'centers' as the complete board lattice. Returns nullopt unless every
 * board circle is found. The result does not depend on the order of 'centers'.
 */
std::optional<GridMatch> FindGrid(std::span<const Eigen::Vector2d> centers,
                                  const BoardSpec &spec,
                                  const GridParams &params = {});

GridObservation MakeObservation(double t,
                                std::span<const Eigen::Vector2d> centers,
                                const GridMatch &match,
                                const BoardSpec &spec);

// normalized DLT homography from >= 4 planar correspondences (src -> dst)
std::optional<Eigen::Matrix3d> EstimateHomography(std::span<const Eigen::Vector2d> src,
                                                  std::span<const Eigen::Vector2d> dst);

Eigen::Vector2d ApplyHomography(const Eigen::Matrix3d &H, const Eigen::Vector2d &p);

struct RecognitionConfig {
    FlowParams flow{};
    ClusterParams cluster{};
    EllipseFitParams ellipse{};
    GridParams grid{};
};

// intermediate products of one window, for inspection dumps
struct RecognitionTrace {
    std::vector<Event> active_events;
    std::vector<FlowEvent> flow_events;
    std::vector<EventCluster> clusters;
    std::vector<ClusterPair> pairs;
    std::vector<TimeVaryingEllipse> ellipses;
    std::vector<Eigen::Vector2d> centers;
    std::optional<GridMatch> grid;
};

/**
 * full per-window recognition: SAE, normal flows, homopolar clustering, run/chase matching,
 * time-varying ellipse fits sampled at the window end, and grid ordering
 */
std::optional<GridObservation> RecognizeWindow(const EventWindow &window,
                                               const SensorGeometry &geometry,
                                               const BoardSpec &board,
                                               const RecognitionConfig &config,
                                               RecognitionTrace *trace = nullptr);

}  // namespace ns_evgrid

#endif
