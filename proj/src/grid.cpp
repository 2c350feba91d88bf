// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#include "evgrid/grid.h"
#include "evgrid/common.h"
#include "evgrid/config.h"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <unordered_map>

namespace ns_evgrid {

namespace {

struct LatticeIndex {
    int u = 0, v = 0;
};

std::int64_t Key(int u, int v) {
    return (static_cast<std::int64_t>(u) << 32) ^ static_cast<std::int64_t>(static_cast<std::uint32_t>(v));
}

/**
 * the staggered board is a square lattice rotated by 45 degrees: with a = 2j + (i mod 2) and
 * b = i (a + b always even), u = (a + b) / 2 and v = (a - b) / 2 are integer coordinates
 */
LatticeIndex BoardToLattice(int i, int j) {
    const int a = 2 * j + (i & 1), b = i;
    return {(a + b) / 2, (a - b) / 2};
}

// the eight symmetries of the square lattice
LatticeIndex ApplySymmetry(int g, LatticeIndex p) {
    switch (g) {
        case 0: return {p.u, p.v};
        case 1: return {-p.v, p.u};
        case 2: return {-p.u, -p.v};
        case 3: return {p.v, -p.u};
        case 4: return {p.v, p.u};
        case 5: return {-p.u, p.v};
        case 6: return {-p.v, -p.u};
        default: return {p.u, -p.v};
    }
}

class LatticeGrower {
public:
    LatticeGrower(std::span<const Eigen::Vector2d> pts, const BoardSpec &spec, const GridParams &params)
        : _pts(pts), _params(params), _bound(spec.rows + spec.cols + 2), _used(pts.size(), 0) {}

    void Assign(LatticeIndex l, std::size_t idx) {
        _byLattice[Key(l.u, l.v)] = idx;
        _matched.push_back({l, idx});
        _used[idx] = 1;
    }

    [[nodiscard]] const std::unordered_map<std::int64_t, std::size_t> &Map() const { return _byLattice; }
    [[nodiscard]] std::size_t Size() const { return _matched.size(); }

    // nearest unused point within 'gate' of 'p'
    std::optional<std::size_t> Nearest(const Eigen::Vector2d &p, double gate) const {
        std::optional<std::size_t> best;
        double bestD = gate;
        for (std::size_t k = 0; k < _pts.size(); ++k) {
            if (_used[k]) continue;
            const double d = (_pts[k] - p).norm();
            if (d < bestD) {
                bestD = d;
                best = k;
            }
        }
        return best;
    }

    void Grow() {
        bool progress = true;
        while (progress) {
            progress = false;
            // frontier: unmatched 4-neighbors of matched lattice positions
            std::vector<std::pair<int, LatticeIndex>> frontier;
            std::unordered_map<std::int64_t, int> seen;
            for (const auto &[l, idx] : _matched) {
                const LatticeIndex nbs[4] = {{l.u + 1, l.v}, {l.u - 1, l.v}, {l.u, l.v + 1}, {l.u, l.v - 1}};
                for (const auto &nb : nbs) {
                    if (std::abs(nb.u) > _bound || std::abs(nb.v) > _bound) continue;
                    if (_byLattice.count(Key(nb.u, nb.v))) continue;
                    ++seen[Key(nb.u, nb.v)];
                    if (seen[Key(nb.u, nb.v)] == 1) frontier.push_back({0, nb});
                }
            }
            for (auto &f : frontier) f.first = seen[Key(f.second.u, f.second.v)];
            std::stable_sort(frontier.begin(), frontier.end(), [](const auto &a, const auto &b) {
                if (a.first != b.first) return a.first > b.first;
                if (a.second.u != b.second.u) return a.second.u < b.second.u;
                return a.second.v < b.second.v;
            });
            for (const auto &f : frontier) {
                if (_byLattice.count(Key(f.second.u, f.second.v))) continue;
                double step = 0.0;
                const auto pred = Predict(f.second, step);
                if (!pred) continue;
                if (const auto idx = Nearest(*pred, _params.gate_frac * step)) {
                    Assign(f.second, *idx);
                    progress = true;
                }
            }
        }
    }

private:
    // local affine map lattice -> image from matched neighbors; also reports the lattice step
    std::optional<Eigen::Vector2d> Predict(LatticeIndex l, double &step) const {
        for (int radius = 2; radius <= 3; ++radius) {
            Eigen::Matrix3d AtA = Eigen::Matrix3d::Zero();
            Eigen::Matrix<double, 3, 2> AtB = Eigen::Matrix<double, 3, 2>::Zero();
            int n = 0;
            for (const auto &[m, idx] : _matched) {
                if (std::abs(m.u - l.u) > radius || std::abs(m.v - l.v) > radius) continue;
                const Eigen::Vector3d a(m.u - l.u, m.v - l.v, 1.0);
                AtA += a * a.transpose();
                AtB += a * _pts[idx].transpose();
                ++n;
            }
            if (n < 3 || std::abs(AtA.determinant()) < 1e-9) continue;
            const Eigen::Matrix<double, 3, 2> X = AtA.ldlt().solve(AtB);
            step = std::min(X.row(0).norm(), X.row(1).norm());
            if (!(step > 0.0)) continue;
            return Eigen::Vector2d(X(2, 0), X(2, 1));
        }
        return std::nullopt;
    }

    std::span<const Eigen::Vector2d> _pts;
    const GridParams &_params;
    int _bound;
    std::vector<char> _used;
    std::unordered_map<std::int64_t, std::size_t> _byLattice;
    std::vector<std::pair<LatticeIndex, std::size_t>> _matched;
};

struct Placement {
    std::vector<std::size_t> indices;  // into the sorted point list
    Eigen::Matrix3d H;
    double rms = 0.0;
};

std::optional<Placement> Evaluate(std::span<const Eigen::Vector2d> pts,
                                  const std::vector<Eigen::Vector2d> &boardXY,
                                  std::vector<std::size_t> indices) {
    std::vector<Eigen::Vector2d> img;
    img.reserve(indices.size());
    for (const auto i : indices) img.push_back(pts[i]);
    auto H = EstimateHomography(boardXY, img);
    if (!H) return std::nullopt;

    // orientation: Jacobian of the homography at the board centroid must keep handedness
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto &b : boardXY) c += b;
    c /= static_cast<double>(boardXY.size());
    Eigen::Matrix3d Hn = *H;
    double w = Hn.row(2).dot(Eigen::Vector3d(c.x(), c.y(), 1.0));
    if (w < 0.0) {
        Hn = -Hn;
        w = -w;
    }
    const Eigen::Vector2d pc = ApplyHomography(Hn, c);
    Eigen::Matrix2d J;
    J.col(0) = (Hn.block<2, 1>(0, 0) - pc * Hn(2, 0)) / w;
    J.col(1) = (Hn.block<2, 1>(0, 1) - pc * Hn(2, 1)) / w;
    if (!(J.determinant() > 0.0)) return std::nullopt;

    double sse = 0.0;
    for (std::size_t k = 0; k < boardXY.size(); ++k) {
        sse += (ApplyHomography(Hn, boardXY[k]) - img[k]).squaredNorm();
    }
    return Placement{std::move(indices), Hn, std::sqrt(sse / static_cast<double>(boardXY.size()))};
}

}  // namespace

void BoardSpec::Validate() const {
    if (rows < 2 || cols < 2) throw Error("board must have at least 2 rows and 2 columns");
    if (!(spacing > 0.0)) throw Error("board spacing must be positive");
    if (!(circle_radius > 0.0) || !(circle_radius < spacing / 2.0)) {
        throw Error("board circle radius must be in (0, spacing / 2)");
    }
}

BoardSpec ParseBoardSpec(std::istream &in) {
    const auto kv = ParseKeyValues(in);
    BoardSpec spec;
    spec.rows = static_cast<int>(kv.GetInt("rows", spec.rows));
    spec.cols = static_cast<int>(kv.GetInt("cols", spec.cols));
    spec.spacing = kv.GetDouble("spacing_m", spec.spacing);
    spec.circle_radius = kv.GetDouble("circle_radius_m", spec.spacing / 2.5 / 2.0);
    kv.RequireAllUsed("board spec");
    spec.Validate();
    return spec;
}

std::vector<Eigen::Vector3d> BoardPoints(const BoardSpec &spec) {
    spec.Validate();
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(spec.Count());
    const double h = spec.spacing / 2.0;
    for (int i = 0; i < spec.rows; ++i) {
        for (int j = 0; j < spec.cols; ++j) {
            pts.emplace_back((2 * j + i % 2) * h, i * h, 0.0);
        }
    }
    return pts;
}

Eigen::Vector2d ApplyHomography(const Eigen::Matrix3d &H, const Eigen::Vector2d &p) {
    const Eigen::Vector3d q = H * Eigen::Vector3d(p.x(), p.y(), 1.0);
    return q.head<2>() / q.z();
}

std::optional<Eigen::Matrix3d> EstimateHomography(std::span<const Eigen::Vector2d> src,
                                                  std::span<const Eigen::Vector2d> dst) {
    const std::size_t n = src.size();
    if (n < 4 || dst.size() != n) return std::nullopt;
    auto normalizer = [](std::span<const Eigen::Vector2d> p) {
        Eigen::Vector2d m = Eigen::Vector2d::Zero();
        for (const auto &q : p) m += q;
        m /= static_cast<double>(p.size());
        double d = 0.0;
        for (const auto &q : p) d += (q - m).norm();
        d /= static_cast<double>(p.size());
        const double s = d > 0.0 ? std::numbers::sqrt2 / d : 1.0;
        Eigen::Matrix3d T;
        T << s, 0.0, -s * m.x(), 0.0, s, -s * m.y(), 0.0, 0.0, 1.0;
        return T;
    };
    const Eigen::Matrix3d Ts = normalizer(src), Td = normalizer(dst);
    Eigen::MatrixXd A(2 * n, 9);
    for (std::size_t k = 0; k < n; ++k) {
        const Eigen::Vector3d s = Ts * Eigen::Vector3d(src[k].x(), src[k].y(), 1.0);
        const Eigen::Vector3d d = Td * Eigen::Vector3d(dst[k].x(), dst[k].y(), 1.0);
        const auto r = static_cast<Eigen::Index>(2 * k);
        A.row(r) << 0.0, 0.0, 0.0, -d.z() * s.transpose(), d.y() * s.transpose();
        A.row(r + 1) << d.z() * s.transpose(), 0.0, 0.0, 0.0, -d.x() * s.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const auto sv = svd.singularValues();
    if (sv(7) <= 1e-12 * sv(0)) return std::nullopt;
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Eigen::Matrix3d Hn;
    Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    Eigen::Matrix3d H = Td.inverse() * Hn * Ts;
    if (!H.allFinite() || std::abs(H(2, 2)) < 1e-300) return std::nullopt;
    H /= H(2, 2);
    return H;
}

std::optional<GridMatch> FindGrid(std::span<const Eigen::Vector2d> centers,
                                  const BoardSpec &spec,
                                  const GridParams &params) {
    spec.Validate();
    const std::size_t need = spec.Count();
    if (centers.size() < need) return std::nullopt;

    // canonical processing order makes the result independent of input order
    std::vector<std::size_t> order(centers.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (centers[a].x() != centers[b].x()) return centers[a].x() < centers[b].x();
        return centers[a].y() < centers[b].y();
    });
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(order.size());
    for (const auto i : order) pts.push_back(centers[i]);
    const std::size_t n = pts.size();

    std::vector<LatticeIndex> boardLattice;
    std::vector<Eigen::Vector2d> boardXY;
    for (int i = 0; i < spec.rows; ++i) {
        for (int j = 0; j < spec.cols; ++j) {
            boardLattice.push_back(BoardToLattice(i, j));
            boardXY.emplace_back((2 * j + i % 2) * spec.spacing / 2.0, i * spec.spacing / 2.0);
        }
    }

    const int k = std::min<int>(params.seed_neighbors, static_cast<int>(n) - 1);
    std::vector<char> explored(n, 0);

    for (std::size_t s = 0; s < n; ++s) {
        if (explored[s]) continue;
        std::vector<std::pair<double, std::size_t>> nn;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != s) nn.emplace_back((pts[j] - pts[s]).norm(), j);
        }
        std::partial_sort(nn.begin(), nn.begin() + k, nn.end());
        nn.resize(static_cast<std::size_t>(k));

        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
                if (a == b) continue;
                const Eigen::Vector2d e1 = pts[nn[a].second] - pts[s];
                const Eigen::Vector2d e2 = pts[nn[b].second] - pts[s];
                const double l1 = e1.norm(), l2 = e2.norm();
                if (l1 <= 0.0 || l2 <= 0.0) continue;
                const double ratio = l1 / l2;
                if (ratio < 0.5 || ratio > 2.0) continue;
                const double cosAng = e1.dot(e2) / (l1 * l2);
                if (std::abs(cosAng) > 0.57 || Cross2(e1, e2) <= 0.0) continue;

                // 4-center minimal sample: seed, both neighbors and the completed parallelogram
                LatticeGrower grower(pts, spec, params);
                grower.Assign({0, 0}, s);
                grower.Assign({1, 0}, nn[a].second);
                grower.Assign({0, 1}, nn[b].second);
                const auto fourth = grower.Nearest(pts[s] + e1 + e2, params.gate_frac * std::min(l1, l2));
                if (!fourth) continue;
                grower.Assign({1, 1}, *fourth);
                grower.Grow();
                if (grower.Size() < need) continue;

                std::vector<Placement> placements;
                const auto &map = grower.Map();
                for (int g = 0; g < 8; ++g) {
                    std::vector<LatticeIndex> tb;
                    for (const auto &bl : boardLattice) tb.push_back(ApplySymmetry(g, bl));
                    for (const auto &[key, idx0] : map) {
                        const int du = static_cast<int>(key >> 32);
                        const int dv = static_cast<int>(static_cast<std::int32_t>(key & 0xffffffff));
                        const int tu = du - tb[0].u, tv = dv - tb[0].v;
                        std::vector<std::size_t> idx;
                        idx.reserve(need);
                        for (const auto &p : tb) {
                            const auto it = map.find(Key(p.u + tu, p.v + tv));
                            if (it == map.end()) break;
                            idx.push_back(it->second);
                        }
                        if (idx.size() != need) continue;
                        if (auto pl = Evaluate(pts, boardXY, std::move(idx))) placements.push_back(std::move(*pl));
                    }
                }
                if (placements.empty()) {
                    for (const auto &[key, idx] : map) explored[idx] = 1;
                    continue;
                }
                std::stable_sort(placements.begin(), placements.end(),
                                 [](const Placement &x, const Placement &y) { return x.rms < y.rms; });
                // placements equivalent under a board symmetry fit equally well; prefer the one
                // whose first board point is nearest the image's top-left corner
                const double tieTol = 1e-6 * (1.0 + placements.front().rms);
                const Placement *best = &placements.front();
                for (const auto &pl : placements) {
                    if (pl.rms > placements.front().rms + tieTol) break;
                    const auto &p0 = pts[pl.indices.front()];
                    const auto &b0 = pts[best->indices.front()];
                    if (p0.x() + p0.y() < b0.x() + b0.y() - 1e-9) best = &pl;
                }
                GridMatch match;
                match.homography = best->H;
                match.rms_transfer = best->rms;
                for (const auto i : best->indices) match.indices.push_back(order[i]);
                return match;
            }
        }
    }
    return std::nullopt;
}

GridObservation MakeObservation(double t,
                                std::span<const Eigen::Vector2d> centers,
                                const GridMatch &match,
                                const BoardSpec &spec) {
    const auto board = BoardPoints(spec);
    if (match.indices.size() != board.size()) throw Error("grid match does not cover the board");
    GridObservation obs;
    obs.t = t;
    for (std::size_t k = 0; k < board.size(); ++k) {
        obs.correspondences.push_back(Correspondence{centers[match.indices[k]], board[k]});
    }
    return obs;
}

std::optional<GridObservation> RecognizeWindow(const EventWindow &window,
                                               const SensorGeometry &geometry,
                                               const BoardSpec &board,
                                               const RecognitionConfig &config,
                                               RecognitionTrace *trace) {
    if (window.events.empty()) return std::nullopt;
    const auto sae = BuildSae(window, geometry);
    auto flows = EstimateFlows(sae, config.flow);
    auto clusters = ClusterHomopolar(flows, geometry, config.cluster);
    auto pairs = MatchClusters(clusters, config.cluster.theta_thd);

    std::vector<TimeVaryingEllipse> ellipses;
    std::vector<Eigen::Vector2d> centers;
    for (const auto &pair : pairs) {
        const auto fit = FitTimeVaryingEllipse(pair, clusters, window.t_start, config.ellipse);
        if (!fit.ellipse) continue;
        const auto sampled = Sample(*fit.ellipse, window.t_end);
        if (!sampled) continue;
        ellipses.push_back(*fit.ellipse);
        centers.push_back(sampled->center);
    }
    std::optional<GridMatch> match;
    if (centers.size() >= board.Count()) match = FindGrid(centers, board, config.grid);

    if (trace) {
        trace->active_events = sae.ActiveEvents();
        trace->flow_events = std::move(flows);
        trace->clusters = std::move(clusters);
        trace->pairs = std::move(pairs);
        trace->ellipses = ellipses;
        trace->centers = centers;
        trace->grid = match;
    }
    if (!match) return std::nullopt;
    return MakeObservation(window.t_end, centers, *match, board);
}

}  // namespace ns_evgrid
