#include "bsdelab/martingale.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "bsdelab/csv.hpp"
#include "bsdelab/parallel.hpp"
#include "bsdelab/rng.hpp"

namespace bsdelab {

namespace {

constexpr double kAlignEps = 1e-9;

struct DimVisitor {
    int operator()(const StandardBm& m) const { return m.dim; }
    int operator()(const StoppedScaledBm&) const { return 2; }
};

}  // namespace

int model_dim(const Model& model) { return std::visit(DimVisitor{}, model); }

double model_m_scale(const Model& model) {
    return 1.0 / std::sqrt(static_cast<double>(model_dim(model)));
}

double model_clock_bound(const Model& model, const TimeGrid& grid) {
    if (const auto* s = std::get_if<StoppedScaledBm>(&model)) return 4.0 * s->window;
    return static_cast<double>(model_dim(model)) * grid.horizon();
}

std::string model_name(const Model& model) {
    if (std::holds_alternative<StandardBm>(model)) return "standard-bm";
    return "stopped-scaled-bm";
}

namespace {

void validate_model(const Model& model, const TimeGrid& grid, int paths) {
    if (paths < 1) throw ConfigError("paths: must be >= 1");
    if (const auto* s = std::get_if<StandardBm>(&model)) {
        // drivers evaluate z through fixed 16-wide scratch rows
        if (s->dim < 1 || s->dim > 16) throw ConfigError("model.dim: must be in 1..16");
    }
    if (const auto* s = std::get_if<StoppedScaledBm>(&model)) {
        if (!(s->window > 0.0)) throw ConfigError("model.window: must be positive");
        if (s->window > s->horizon + kAlignEps)
            throw ConfigError("model.window: exceeds model.horizon");
        if (std::abs(s->horizon - grid.horizon()) > kAlignEps * std::max(1.0, s->horizon))
            throw ConfigError("model.horizon: does not match grid horizon");
    }
}

int activation_node_of(const Model& model, const TimeGrid& grid) {
    const auto* s = std::get_if<StoppedScaledBm>(&model);
    if (!s) return 0;
    const double onTime = s->horizon - s->window;
    for (int i = 0; i < grid.nodes(); ++i)
        if (grid.t(i) >= onTime - kAlignEps) return i;
    return grid.nodes() - 1;
}

// Derives one StoppedScaledBm path: raw scaled-Brownian walk from the
// activation node, optional additive shift from node uIndex on, then the
// barrier rule: on the first node with |M| >= 1 the value is projected
// radially onto the unit circle and the path freezes.
void derive_stopped_path(const TimeGrid& grid, int act, PathRng& gen, double* out, int n,
                         int uIndex, const double* shift, double h, int* stopNodeOut) {
    const int nodes = grid.nodes();
    double raw[2] = {0.0, 0.0};
    double frozen[2] = {0.0, 0.0};
    bool stopped = false;
    *stopNodeOut = nodes;
    for (int i = 0; i < nodes; ++i) {
        if (i > act) {
            const double sd = std::sqrt(2.0 * grid.dt(i - 1));
            for (int c = 0; c < n; ++c) raw[c] += sd * gen.gaussian();
        }
        if (stopped) {
            for (int c = 0; c < n; ++c) out[i * n + c] = frozen[c];
            continue;
        }
        double v[2];
        for (int c = 0; c < n; ++c)
            v[c] = raw[c] + (shift && i >= uIndex ? h * shift[c] : 0.0);
        if (i >= act) {
            const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1]);
            if (norm >= 1.0) {
                for (int c = 0; c < n; ++c) v[c] /= norm;
                stopped = true;
                *stopNodeOut = i;
                for (int c = 0; c < n; ++c) frozen[c] = v[c];
            }
        }
        for (int c = 0; c < n; ++c) out[i * n + c] = v[c];
    }
}

}  // namespace

Ensemble::Ensemble(Model model, TimeGrid grid, int paths, std::uint64_t seed)
    : model_(std::move(model)),
      grid_(std::move(grid)),
      paths_(paths),
      dim_(model_dim(model_)),
      seed_(seed),
      mScale_(model_m_scale(model_)),
      clockBound_(model_clock_bound(model_, grid_)),
      activationNode_(activation_node_of(model_, grid_)) {
    validate_model(model_, grid_, paths_);
    const int nodes = grid_.nodes();
    values_.assign(static_cast<std::size_t>(paths_) * nodes * dim_, 0.0);
    stopNode_.assign(static_cast<std::size_t>(paths_), nodes);

    if (std::holds_alternative<StandardBm>(model_)) {
        par::for_blocks(paths_, [&](int, std::int64_t lo, std::int64_t hi) {
            for (std::int64_t p = lo; p < hi; ++p) {
                PathRng gen(seed_, static_cast<std::uint64_t>(p));
                double* v = values_.data() + idx(static_cast<int>(p), 0, 0);
                for (int i = 1; i < nodes; ++i) {
                    const double sd = std::sqrt(grid_.dt(i - 1));
                    for (int c = 0; c < dim_; ++c)
                        v[i * dim_ + c] = v[(i - 1) * dim_ + c] + sd * gen.gaussian();
                }
            }
        });
    } else {
        par::for_blocks(paths_, [&](int, std::int64_t lo, std::int64_t hi) {
            for (std::int64_t p = lo; p < hi; ++p) {
                PathRng gen(seed_, static_cast<std::uint64_t>(p));
                int stop = nodes;
                derive_stopped_path(grid_, activationNode_, gen,
                                    values_.data() + idx(static_cast<int>(p), 0, 0), dim_,
                                    /*uIndex=*/0, /*shift=*/nullptr, 0.0, &stop);
                stopNode_[static_cast<std::size_t>(p)] = stop;
            }
        });
    }
}

int simulate_path(const Model& model, const TimeGrid& grid, std::uint64_t seed, int path,
                  double* out) {
    validate_model(model, grid, 1);
    if (path < 0) throw ConfigError("path index must be nonnegative");
    const int nodes = grid.nodes();
    const int n = model_dim(model);
    PathRng gen(seed, static_cast<std::uint64_t>(path));
    if (std::holds_alternative<StandardBm>(model)) {
        for (int c = 0; c < n; ++c) out[c] = 0.0;
        for (int i = 1; i < nodes; ++i) {
            const double sd = std::sqrt(grid.dt(i - 1));
            for (int c = 0; c < n; ++c)
                out[i * n + c] = out[(i - 1) * n + c] + sd * gen.gaussian();
        }
        return nodes;
    }
    int stop = nodes;
    derive_stopped_path(grid, activation_node_of(model, grid), gen, out, n,
                        /*uIndex=*/0, /*shift=*/nullptr, 0.0, &stop);
    return stop;
}

double Ensemble::dA(int path, int step) const {
    if (std::holds_alternative<StandardBm>(model_))
        return static_cast<double>(dim_) * grid_.dt(step);
    if (step < activationNode_ || step >= stopNode_[static_cast<std::size_t>(path)]) return 0.0;
    return 4.0 * grid_.dt(step);
}

double Ensemble::clockA(int path, int node) const {
    if (std::holds_alternative<StandardBm>(model_))
        return static_cast<double>(dim_) * grid_.t(node);
    const int stop = stopNode_[static_cast<std::size_t>(path)];
    const int upto = node < stop ? node : stop;
    const double span = grid_.t(upto) - grid_.t(activationNode_);
    return span > 0.0 ? 4.0 * span : 0.0;
}

Ensemble simulate(const Model& model, const TimeGrid& grid, int paths, std::uint64_t seed) {
    return Ensemble(model, grid, paths, seed);
}

void bump_path(std::vector<double>& pathValues, int n, int uIndex, const std::vector<double>& e,
               double h) {
    if (n < 1 || pathValues.size() % static_cast<std::size_t>(n) != 0)
        throw ConfigError("bump: path length not a multiple of the dimension");
    const int nodes = static_cast<int>(pathValues.size()) / n;
    if (uIndex < 0 || uIndex >= nodes) throw ConfigError("bump.uIndex: out of range");
    if (static_cast<int>(e.size()) != n) throw ConfigError("bump.e: dimension mismatch");
    for (int i = uIndex; i < nodes; ++i)
        for (int c = 0; c < n; ++c) pathValues[static_cast<std::size_t>(i) * n + c] += h * e[c];
}

Ensemble bump_ensemble(const Ensemble& base, int uIndex, const std::vector<double>& e, double h) {
    const int n = base.dim();
    const int nodes = base.grid().nodes();
    if (uIndex < 0 || uIndex >= nodes) throw ConfigError("bump.uIndex: out of range");
    if (static_cast<int>(e.size()) != n) throw ConfigError("bump.e: dimension mismatch");

    Ensemble out = base;
    if (std::holds_alternative<StandardBm>(base.model())) {
        par::for_blocks(base.paths(), [&](int, std::int64_t lo, std::int64_t hi) {
            for (std::int64_t p = lo; p < hi; ++p) {
                double* v = out.values_.data() + out.idx(static_cast<int>(p), 0, 0);
                for (int i = uIndex; i < nodes; ++i)
                    for (int c = 0; c < n; ++c) v[i * n + c] += h * e[c];
            }
        });
        return out;
    }
    // Stopped model: rebuild each path from its noise stream with the shift
    // applied before the barrier rule, so stopping reacts to the bump.
    par::for_blocks(base.paths(), [&](int, std::int64_t lo, std::int64_t hi) {
        for (std::int64_t p = lo; p < hi; ++p) {
            PathRng gen(base.seed(), static_cast<std::uint64_t>(p));
            int stop = nodes;
            derive_stopped_path(base.grid(), base.activation_node(), gen,
                                out.values_.data() + out.idx(static_cast<int>(p), 0, 0), n, uIndex,
                                e.data(), h, &stop);
            out.stopNode_[static_cast<std::size_t>(p)] = stop;
        }
    });
    return out;
}

std::vector<double> grid_restrict(const std::vector<double>& pathValues, const TimeGrid& grid,
                                  int n, int k) {
    if (k < 1) throw ConfigError("grid_restrict.k: must be >= 1");
    const int nodes = grid.nodes();
    if (static_cast<int>(pathValues.size()) != nodes * n)
        throw ConfigError("grid_restrict: path length does not match grid");
    const double T = grid.horizon();
    const double eps = kAlignEps * std::max(1.0, T);

    // Map every partition instant j*T/k to a grid node.
    std::vector<int> partNode(static_cast<std::size_t>(k) + 1, -1);
    int gi = 0;
    for (int j = 0; j <= k; ++j) {
        const double tj = T * static_cast<double>(j) / k;
        while (gi < nodes && grid.t(gi) < tj - eps) ++gi;
        if (gi >= nodes || std::abs(grid.t(gi) - tj) > eps)
            throw ConfigError("grid_restrict.k: partition instant " + std::to_string(j) +
                              " not aligned with the grid");
        partNode[static_cast<std::size_t>(j)] = gi;
    }

    std::vector<double> out(pathValues.size(), 0.0);
    int j = 0;
    for (int i = 0; i < nodes; ++i) {
        while (j + 1 <= k && grid.t(partNode[static_cast<std::size_t>(j + 1)]) <= grid.t(i) + eps)
            ++j;
        const int src = partNode[static_cast<std::size_t>(j)];
        for (int c = 0; c < n; ++c)
            out[static_cast<std::size_t>(i) * n + c] =
                pathValues[static_cast<std::size_t>(src) * n + c] - pathValues[c];
    }
    return out;
}

void write_ensemble_csv(const Ensemble& ens, const std::string& path) {
    std::vector<std::string> header = {"path", "time"};
    for (int c = 0; c < ens.dim(); ++c) header.push_back("M" + std::to_string(c + 1));
    header.push_back("A");
    CsvWriter csv(path, header);
    for (int p = 0; p < ens.paths(); ++p)
        for (int i = 0; i < ens.grid().nodes(); ++i) {
            csv.cell(p);
            csv.cell(ens.grid().t(i));
            for (int c = 0; c < ens.dim(); ++c) csv.cell(ens.value(p, i, c));
            csv.cell(ens.clockA(p, i));
            csv.end_row();
        }
}

namespace {

constexpr std::uint32_t kBinaryMagic = 0x42534445;  // "BSDE"

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("ensemble binary: truncated file");
    return v;
}

}  // namespace

void write_ensemble_binary(const Ensemble& ens, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    put(out, kBinaryMagic);
    const std::uint8_t tag = std::holds_alternative<StandardBm>(ens.model()) ? 0 : 1;
    put(out, tag);
    if (const auto* s = std::get_if<StandardBm>(&ens.model())) {
        put(out, static_cast<std::int32_t>(s->dim));
    } else {
        const auto& ss = std::get<StoppedScaledBm>(ens.model());
        put(out, ss.horizon);
        put(out, ss.window);
    }
    put(out, static_cast<std::int64_t>(ens.grid().nodes()));
    for (double t : ens.grid().times()) put(out, t);
    put(out, static_cast<std::int64_t>(ens.paths()));
    put(out, ens.seed());
    for (int p = 0; p < ens.paths(); ++p) put(out, static_cast<std::int32_t>(ens.stop_node(p)));
    for (int p = 0; p < ens.paths(); ++p)
        for (int i = 0; i < ens.grid().nodes(); ++i)
            for (int c = 0; c < ens.dim(); ++c) put(out, ens.value(p, i, c));
}

Ensemble read_ensemble_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    if (get<std::uint32_t>(in) != kBinaryMagic)
        throw std::runtime_error("ensemble binary: bad magic");
    const auto tag = get<std::uint8_t>(in);
    Model model;
    if (tag == 0) {
        model = StandardBm{get<std::int32_t>(in)};
    } else if (tag == 1) {
        StoppedScaledBm s;
        s.horizon = get<double>(in);
        s.window = get<double>(in);
        model = s;
    } else {
        throw std::runtime_error("ensemble binary: unknown model tag");
    }
    const auto nodes = get<std::int64_t>(in);
    std::vector<double> times(static_cast<std::size_t>(nodes));
    for (auto& t : times) t = get<double>(in);
    TimeGrid grid(std::move(times));
    const auto paths = get<std::int64_t>(in);
    const auto seed = get<std::uint64_t>(in);

    Ensemble ens(model, grid, 1, seed);  // shape probe; arrays replaced below
    ens.paths_ = static_cast<int>(paths);
    ens.stopNode_.assign(static_cast<std::size_t>(paths), static_cast<int>(nodes));
    for (auto& s : ens.stopNode_) s = get<std::int32_t>(in);
    ens.values_.resize(static_cast<std::size_t>(paths) * static_cast<std::size_t>(nodes) *
                       static_cast<std::size_t>(ens.dim_));
    for (auto& v : ens.values_) v = get<double>(in);
    return ens;
}

}  // namespace bsdelab
