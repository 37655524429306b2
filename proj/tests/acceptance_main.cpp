// Acceptance gate: one PASS/FAIL line per criterion, exit 0 only if all pass.
// Runs the shipped experiment configs through the CLI and inspects their
// summaries; the differentiated-solve criterion is driven directly.
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bsdelab/nabla.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bsdelab;

namespace {

std::string g_cli;
std::string g_configs;

int run_cli(const std::string& args) {
    const std::string cmd = g_cli + " " + args;
    std::printf("    $ %s\n", cmd.c_str());
    std::fflush(stdout);
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

json load_json(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return json();
    json j;
    try {
        in >> j;
    } catch (...) {
        return json();
    }
    return j;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs one shipped config into outDir and returns its summary.json.
json run_experiment(const std::string& name, const std::string& outDir,
                    const std::string& extra = "") {
    fs::remove_all(outDir);
    run_cli("run " + g_configs + "/" + name + ".json --output-dir " + outDir + extra);
    return load_json(fs::path(outDir) / "summary.json");
}

bool field_true(const json& j, const char* key) {
    return j.contains(key) && j.at(key).is_boolean() && j.at(key).get<bool>();
}

void report(int idx, const char* label, bool pass) {
    std::printf("[%d] %-34s %s\n", idx, label, pass ? "PASS" : "FAIL");
    std::fflush(stdout);
}

// ---------------------------------------------------------------- criteria

bool criterion_convergence() {
    const json s = run_experiment("lipschitz-convergence", "acc-out/convergence");
    if (!field_true(s, "pass")) return false;
    // each case at the base resolution must finish within a minute
    if (!s.contains("cases")) return false;
    for (const auto& c : s.at("cases")) {
        if (!field_true(c, "pass")) return false;
        for (const auto& sec : c.at("seconds"))
            if (sec.get<double>() > 60.0) return false;
    }
    return true;
}

bool criterion_bounds() {
    const json s = run_experiment("bounds-audit", "acc-out/bounds");
    if (!field_true(s, "pass")) return false;
    const json& deg = s.at("degenerate_forms");
    return field_true(deg, "y_K0") && field_true(deg, "z_multi_K0") &&
           field_true(deg, "z_onedim_Cy0");
}

bool criterion_comparison() {
    const json s = run_experiment("comparison-suite", "acc-out/comparison");
    return field_true(s, "pass");
}

bool criterion_delta_hedge() {
    const json s = run_experiment("delta-hedge", "acc-out/delta-hedge");
    return field_true(s, "pass") && field_true(s, "decreases_with_h") &&
           field_true(s, "pre_bump_exact_zero");
}

bool criterion_differentiated() {
    // nonlinear driver with path, y, and z dependence; the linearized solve
    // must track the bump-and-recompute quotient node by node
    const int N = 64, P = 20000;
    const double h = 1e-3;
    const int u = N / 2;
    const Ensemble ens = simulate(StandardBm{1}, TimeGrid::uniform(1.0, N), P, 20260815);
    const TerminalFunctional xi{[](const PathView& pv) { return std::sin(pv.terminal()); }, 1.0,
                                1.0};
    const Driver f{[](int step, const PathView& pv, double y, const double* z) {
                       return 0.4 * std::cos(y) + 0.3 * z[0] + 0.5 * std::sin(pv.value(step));
                   },
                   Regularity::Lipschitz, 0.4, 0.3, nullptr, 0.5, 1.0};
    const RegressionBasis basis = polynomial_basis(1, 2);
    const DiscreteSolution base = solve(ens, xi, f, basis);
    const BumpSpec bump{u, {1.0}, h};
    const NablaResult quot = numeric_nabla(ens, base, xi, f, basis, bump);

    const LinearCoeffs lc = linearized_coeffs(ens, base, f, bump);
    std::vector<double> Xi(static_cast<std::size_t>(P));
    for (int p = 0; p < P; ++p) {
        // d/dh xi(M + h 1_{[u,T]}) = cos(M_T)
        Xi[static_cast<std::size_t>(p)] = std::cos(ens.value(p, N, 0));
    }
    const DiscreteSolution diff = solve_differentiated(ens, lc, Xi, basis);

    const double tol = 5e-3 + 10.0 * h;
    std::int64_t within = 0, total = 0;
    double preWorst = 0.0;
    for (int p = 0; p < P; ++p) {
        for (int i = 0; i < u; ++i)
            preWorst = std::max(preWorst, std::abs(diff.y(p, i) - quot.y(p, i)));
        for (int i = u; i <= N; ++i) {
            ++total;
            if (std::abs(diff.y(p, i) - quot.y(p, i)) <= tol) ++within;
        }
    }
    const double frac = static_cast<double>(within) / static_cast<double>(total);
    std::printf("    differentiated-vs-quotient: %.4f of nodes within %.4g (pre-bump gap %.3g)\n",
                frac, tol, preWorst);
    return frac >= 0.90 && preWorst == 0.0;
}

bool criterion_blowup() {
    const json s = run_experiment("blowup-sweep", "acc-out/blowup");
    const bool stationary = field_true(s, "stationary_ok");
    const bool finiteTime = field_true(s, "blow_up_stable");
    const bool sphere = field_true(s, "sphere_ok");
    const bool cert = field_true(s, "certificate_ok");
    const bool expl = field_true(s, "explosive_ok");
    const bool quick =
        s.contains("verdict_seconds") && s.at("verdict_seconds").get<double>() <= 300.0;
    std::printf(
        "    stationary=%d finite-time=%d sphere=%d certificate=%d explosive=%d quick=%d\n",
        stationary, finiteTime, sphere, cert, expl, quick);
    return stationary && finiteTime && sphere && cert && expl && quick &&
           field_true(s, "pass");
}

bool criterion_utility() {
    const json s = run_experiment("utility-suite", "acc-out/utility");
    if (!field_true(s, "pass") || !s.contains("instances")) return false;
    if (s.at("instances").size() != 6) return false;
    bool ok = true;
    for (const auto& inst : s.at("instances")) {
        const bool pass = field_true(inst, "pass") &&
                          inst.at("seconds").get<double>() <= 180.0;
        std::printf("    %-22s %s (%.0fs)\n", inst.at("name").get<std::string>().c_str(),
                    pass ? "ok" : "FAIL", inst.at("seconds").get<double>());
        ok = ok && pass;
    }
    return ok;
}

bool criterion_determinism() {
    const std::string a = "acc-out/det-a", b = "acc-out/det-b";
    fs::remove_all(a);
    fs::remove_all(b);
    if (run_cli("run " + g_configs + "/comparison-suite.json --output-dir " + a) != 0)
        return false;
    if (run_cli("run " + g_configs + "/comparison-suite.json --output-dir " + b) != 0)
        return false;
    int csvs = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        if (entry.path().extension() != ".csv") continue;
        ++csvs;
        const fs::path other = fs::path(b) / entry.path().filename();
        if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) return false;
    }
    return csvs > 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: %s <cli-binary> <configs-dir>\n", argv[0]);
        return 2;
    }
    g_cli = argv[1];
    g_configs = argv[2];

    struct Criterion {
        const char* label;
        bool (*fn)();
    };
    const std::vector<Criterion> criteria = {
        {"closed-form convergence", criterion_convergence},
        {"a-priori bound audit", criterion_bounds},
        {"comparison and exact gap", criterion_comparison},
        {"delta-hedge identity", criterion_delta_hedge},
        {"differentiated solve", criterion_differentiated},
        {"gradient blow-up window", criterion_blowup},
        {"portfolio optimality", criterion_utility},
        {"byte-identical artifacts", criterion_determinism},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        bool ok = false;
        try {
            ok = criteria[i].fn();
        } catch (const std::exception& e) {
            std::printf("    exception: %s\n", e.what());
            ok = false;
        }
        report(static_cast<int>(i) + 1, criteria[i].label, ok);
        if (!ok) ++failures;
    }
    if (failures > 0) std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
