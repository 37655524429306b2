#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bsdelab/errors.hpp"
#include "bsdelab/grid.hpp"

namespace bsdelab {

/// n-dimensional standard Brownian motion. Volatility factor m = I/sqrt(n)
/// (unit Frobenius norm), clock A_t = n*t, so the clock bound is K = n*T.
struct StandardBm {
    int dim = 1;
};

/// Two-dimensional scaled Brownian motion that switches on at horizon-window,
/// runs as sqrt(2)*(W_t - W_on), and freezes when |M| first reaches 1
/// (barrier 1/sqrt(2) in W coordinates). m = I/sqrt(2) while running; the
/// clock advances 4*dt on active steps and is flat otherwise, so K = 4*window.
struct StoppedScaledBm {
    double horizon = 1.0;
    double window = 0.5;
};

using Model = std::variant<StandardBm, StoppedScaledBm>;

int model_dim(const Model& model);
double model_m_scale(const Model& model);  // m = m_scale * I at every step
double model_clock_bound(const Model& model, const TimeGrid& grid);  // K
std::string model_name(const Model& model);

/// Sampled discrete paths of M with the quadratic-variation clock A and the
/// per-step volatility factor. Immutable after construction; accessors are
/// safe to call concurrently.
class Ensemble {
  public:
    Ensemble(Model model, TimeGrid grid, int paths, std::uint64_t seed);

    const Model& model() const { return model_; }
    const TimeGrid& grid() const { return grid_; }
    int paths() const { return paths_; }
    int dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }
    double m_scale() const { return mScale_; }
    double clock_bound() const { return clockBound_; }

    double value(int path, int node, int comp) const {
        return values_[idx(path, node, comp)];
    }
    double increment(int path, int step, int comp) const {
        return values_[idx(path, step + 1, comp)] - values_[idx(path, step, comp)];
    }

    // Clock increment of step [t_i, t_{i+1}] and cumulative clock at node i.
    double dA(int path, int step) const;
    double clockA(int path, int node) const;

    // First node at which the stopping projection froze the path;
    // equals nodes() when the path never stopped (always for StandardBm).
    int stop_node(int path) const { return stopNode_[static_cast<std::size_t>(path)]; }
    // First node at or after which the model is switched on (0 for StandardBm).
    int activation_node() const { return activationNode_; }

    double* mutable_values() { return values_.data(); }
    std::size_t value_index(int path, int node, int comp) const { return idx(path, node, comp); }

  private:
    friend Ensemble simulate(const Model&, const TimeGrid&, int, std::uint64_t);
    friend Ensemble bump_ensemble(const Ensemble&, int, const std::vector<double>&, double);
    friend Ensemble read_ensemble_binary(const std::string&);

    std::size_t idx(int path, int node, int comp) const {
        return (static_cast<std::size_t>(path) * static_cast<std::size_t>(grid_.nodes()) +
                static_cast<std::size_t>(node)) *
                   static_cast<std::size_t>(dim_) +
               static_cast<std::size_t>(comp);
    }

    Model model_;
    TimeGrid grid_;
    int paths_;
    int dim_;
    std::uint64_t seed_;
    double mScale_;
    double clockBound_;
    int activationNode_;
    std::vector<double> values_;
    std::vector<int> stopNode_;
};

/// Read-only view of one path inside an ensemble; what terminal functionals
/// and drivers see. The index is exposed so callers can attach per-path data.
struct PathView {
    const Ensemble* ens;
    int path;

    double value(int node, int comp) const { return ens->value(path, node, comp); }
    double value(int node) const { return ens->value(path, node, 0); }
    double terminal(int comp = 0) const { return ens->value(path, ens->grid().nodes() - 1, comp); }
    int nodes() const { return ens->grid().nodes(); }
    int dim() const { return ens->dim(); }
};

Ensemble simulate(const Model& model, const TimeGrid& grid, int paths, std::uint64_t seed);

// Single-path simulation, bit-identical to the same path inside simulate().
// Writes (nodes x dim) values into out; returns the stopping node (= nodes
// for StandardBm or a never-stopped path).
int simulate_path(const Model& model, const TimeGrid& grid, std::uint64_t seed, int path,
                  double* out);

// Additive path bump h*e from node u on, applied to raw values:
// pathValues is one path laid out node-major ((N+1) x n).
void bump_path(std::vector<double>& pathValues, int n, int uIndex, const std::vector<double>& e,
               double h);

// Ensemble-level bump. StandardBm paths shift rigidly; StoppedScaledBm paths
// are re-derived from the same noise with the shift applied before the
// stopping rule, so the discrete stopping step may move.
Ensemble bump_ensemble(const Ensemble& base, int uIndex, const std::vector<double>& e, double h);

// Piecewise-constant restriction to a uniform k-partition: the value at grid
// node i is path(t_j) - path(0) for the largest partition instant t_j <= t_i.
// The partition must align with grid nodes.
std::vector<double> grid_restrict(const std::vector<double>& pathValues, const TimeGrid& grid,
                                  int n, int k);

// CSV export (path id, time, M components, cumulative A) and a compact binary
// dump for re-ingestion.
void write_ensemble_csv(const Ensemble& ens, const std::string& path);
void write_ensemble_binary(const Ensemble& ens, const std::string& path);
Ensemble read_ensemble_binary(const std::string& path);

}  // namespace bsdelab
