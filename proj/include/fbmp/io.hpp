#pragma once

#include <openssl/evp.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fbmp/battery.hpp"
#include "fbmp/error.hpp"
#include "fbmp/functional.hpp"
#include "fbmp/model.hpp"
#include "fbmp/mollify.hpp"
#include "fbmp/pde.hpp"
#include "fbmp/regularity.hpp"
#include "fbmp/simulate.hpp"
#include "fbmp/verify.hpp"

namespace fbmp::io {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files

inline void write_text(const fs::path& p, const std::string& s) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ArgumentError("cannot write " + p.string());
    f << s;
}

inline std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ArgumentError("cannot read " + p.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

inline void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

inline Json read_json(const fs::path& p) {
    try {
        return Json::parse(read_text(p));
    } catch (const nlohmann::json::parse_error& e) {
        throw ArgumentError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

inline std::string sha256_file(const fs::path& p) {
    std::string data = read_text(p);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 failed for " + p.string());
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

inline std::string sha256_text(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

/// Shortest text that reads back to the same double.
inline std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    for (int prec = 1; prec < 17; ++prec) {
        char b2[32];
        std::snprintf(b2, sizeof b2, "%.*g", prec, v);
        if (std::strtod(b2, nullptr) == v) return b2;
    }
    return buf;
}

/// JSON number, or a string for non-finite values.
inline Json jnum(double v) {
    if (std::isfinite(v)) return v;
    return num(v);
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) {
        for (std::size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
        os_ << '\n';
    }
    template <class... Args>
    void row(const Args&... args) {
        bool first = true;
        ((os_ << (first ? "" : ",") << cell(args), first = false), ...);
        os_ << '\n';
    }
    void save(const fs::path& p) const { write_text(p, os_.str()); }
    std::string str() const { return os_.str(); }

private:
    static std::string cell(double v) { return num(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <class I, class = std::enable_if_t<std::is_integral_v<I>>>
    static std::string cell(I v) {
        return std::to_string(v);
    }
    std::ostringstream os_;
};

// ---------------------------------------------------------------------------
// Binary blocks

inline void write_doubles(std::ofstream& f, const double* v, std::size_t n) {
    f.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::ifstream& f, double* v, std::size_t n, const fs::path& p) {
    f.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw ArgumentError("truncated binary block " + p.string());
}

// ---------------------------------------------------------------------------
// Audit and mollification

inline Json to_json(const BoundsReport& r) {
    Json j;
    j["K"] = r.K;
    j["samples"] = r.samples;
    j["sup"] = {{"b", r.sup_b}, {"sigma", r.sup_sigma}, {"h", r.sup_h}, {"g", r.sup_g}};
    j["sigma2"] = {{"min", r.min_sigma2}, {"max", r.max_sigma2}};
    j["C0"] = r.C0;
    j["y_range"] = {r.y_range.first, r.y_range.second};
    j["z_range"] = {r.z_range.first, r.z_range.second};
    j["H1"] = r.h1;
    j["H2"] = r.h2;
    j["H3"] = r.h3;
    Json v = Json::array();
    for (auto& p : r.h2_violations) v.push_back({p.t, p.x, p.y, p.z});
    j["H2_violations"] = v;
    Json m = Json::object();
    for (auto& [coef, vars] : r.modulus)
        for (auto& [var, pts] : vars) {
            Json a = Json::array();
            for (auto& p : pts) a.push_back({{"delta", p.delta}, {"value", p.value}});
            m[coef][var] = a;
        }
    j["modulus"] = m;
    j["pass"] = r.pass();
    return j;
}

inline Json to_json(const MollifiedFamily& f) {
    Json j;
    Json lv = Json::array();
    for (auto& l : f.levels) {
        Json c = Json::array();
        for (auto& cl : l.coefficients)
            c.push_back({{"coefficient", cl.name}, {"n", l.n}, {"epsilon", cl.eps}, {"certified_error", cl.error},
                         {"smoothed", cl.smoothed}});
        lv.push_back({{"n", l.n},
                      {"coefficients", c},
                      {"sigma2", {{"min", l.min_sigma2}, {"max", l.max_sigma2}}},
                      {"ellipticity_ok", l.ellipticity_ok}});
    }
    j["levels"] = lv;
    Json rj = Json::array();
    for (auto& r : f.rejected) rj.push_back({{"n", r.n}, {"coefficient", r.coefficient}, {"best_error", r.best_error}});
    j["rejected"] = rj;
    j["ok"] = f.ok();
    return j;
}

// ---------------------------------------------------------------------------
// Fields

inline Json field_header(const FieldSolution& f) {
    return {{"format", "fbmp-field"},
            {"version", 1},
            {"label", f.label},
            {"nt", f.nt()},
            {"nx", f.nx()},
            {"t0", f.grid.t.front()},
            {"t1", f.grid.t.back()},
            {"L", f.grid.L()},
            {"dt", f.grid.dt},
            {"dx", f.grid.dx},
            {"theta", f.theta},
            {"boundary", f.boundary},
            {"picard_max_iterations", f.picard_max_iterations},
            {"picard_total_iterations", f.picard_total_iterations},
            {"max_linear_residual", f.max_linear_residual},
            {"layout", "u then u_x, row-major [t][x], float64 little-endian"}};
}

/// Writes `<base>.bin` and `<base>.json`.
inline void write_field(const fs::path& base, const FieldSolution& f) {
    fs::path bin = base;
    bin += ".bin";
    fs::path hdr = base;
    hdr += ".json";
    if (bin.has_parent_path()) fs::create_directories(bin.parent_path());
    std::ofstream o(bin, std::ios::binary);
    write_doubles(o, f.u.data(), f.u.size());
    write_doubles(o, f.ux.data(), f.ux.size());
    o.close();
    write_json(hdr, field_header(f));
}

inline FieldSolution read_field(const fs::path& base) {
    fs::path bin = base;
    bin += ".bin";
    fs::path hdr = base;
    hdr += ".json";
    Json h = read_json(hdr);
    if (h.value("format", "") != "fbmp-field") throw ArgumentError("not a field header: " + hdr.string());
    FieldSolution f;
    std::size_t nt = h["nt"], nx = h["nx"];
    double t0 = h["t0"], t1 = h["t1"], L = h["L"];
    f.grid = Grid::uniform(t1 - t0, nt - 1, L, nx - 1);
    for (auto& t : f.grid.t) t += t0;
    f.grid.t.back() = t1;
    f.theta = h["theta"];
    f.boundary = h["boundary"];
    f.label = h["label"];
    f.picard_max_iterations = h["picard_max_iterations"];
    f.picard_total_iterations = h["picard_total_iterations"];
    f.max_linear_residual = h["max_linear_residual"];
    f.u.resize(nt * nx);
    f.ux.resize(nt * nx);
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw ArgumentError("cannot read " + bin.string());
    read_doubles(in, f.u.data(), f.u.size(), bin);
    read_doubles(in, f.ux.data(), f.ux.size(), bin);
    return f;
}

/// (t, x, u, u_x) on every `stride`-th node in each direction.
inline void write_field_csv(const fs::path& p, const FieldSolution& f, std::size_t stride_t = 1, std::size_t stride_x = 1) {
    CsvWriter w({"t", "x", "u", "u_x"});
    stride_t = std::max<std::size_t>(1, stride_t);
    stride_x = std::max<std::size_t>(1, stride_x);
    for (std::size_t k = 0; k < f.nt(); k += stride_t) {
        for (std::size_t j = 0; j < f.nx(); j += stride_x) w.row(f.grid.t[k], f.grid.x[j], f.at(k, j), f.slope_at(k, j));
    }
    w.save(p);
}

// ---------------------------------------------------------------------------
// Ensembles

inline Json ensemble_header(const PathEnsemble& e, const std::string& bundle, const std::string& field) {
    return {{"format", "fbmp-ensemble"},
            {"version", 1},
            {"M", e.M},
            {"nt", e.nt()},
            {"dt", e.dt()},
            {"T", e.T()},
            {"seed", e.seed},
            {"first_path", e.first_path},
            {"substeps", e.substeps},
            {"x0", e.x0},
            {"L", e.L},
            {"bundle", bundle},
            {"field", field},
            {"reflected", e.reflected_count()},
            {"layout", "W, X, Y, Z blocks, each column-major [t][path] float64; then one reflected byte per path"}};
}

inline void write_ensemble(const fs::path& base, const PathEnsemble& e, const std::string& bundle,
                           const std::string& field) {
    fs::path bin = base;
    bin += ".bin";
    fs::path hdr = base;
    hdr += ".json";
    if (bin.has_parent_path()) fs::create_directories(bin.parent_path());
    std::ofstream o(bin, std::ios::binary);
    std::vector<double> col(e.M);
    for (auto* v : {&e.W, &e.X, &e.Y, &e.Z})
        for (std::size_t k = 0; k < e.nt(); ++k) {
            for (std::size_t p = 0; p < e.M; ++p) col[p] = (*v)[e.idx(p, k)];
            write_doubles(o, col.data(), e.M);
        }
    o.write(reinterpret_cast<const char*>(e.reflected.data()), static_cast<std::streamsize>(e.reflected.size()));
    o.close();
    write_json(hdr, ensemble_header(e, bundle, field));
}

inline PathEnsemble read_ensemble(const fs::path& base) {
    fs::path bin = base;
    bin += ".bin";
    fs::path hdr = base;
    hdr += ".json";
    Json h = read_json(hdr);
    if (h.value("format", "") != "fbmp-ensemble") throw ArgumentError("not an ensemble header: " + hdr.string());
    PathEnsemble e;
    std::size_t M = h["M"], nt = h["nt"];
    double T = h["T"];
    e.t.resize(nt);
    for (std::size_t k = 0; k < nt; ++k) e.t[k] = T * static_cast<double>(k) / static_cast<double>(nt - 1);
    e.t.back() = T;
    e.M = M;
    e.seed = h["seed"];
    e.first_path = h["first_path"];
    e.substeps = h["substeps"];
    e.x0 = h["x0"];
    e.L = h["L"];
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw ArgumentError("cannot read " + bin.string());
    std::vector<double> col(M);
    for (auto* v : {&e.W, &e.X, &e.Y, &e.Z}) {
        v->resize(M * nt);
        for (std::size_t k = 0; k < nt; ++k) {
            read_doubles(in, col.data(), M, bin);
            for (std::size_t p = 0; p < M; ++p) (*v)[e.idx(p, k)] = col[p];
        }
    }
    e.reflected.resize(M);
    in.read(reinterpret_cast<char*>(e.reflected.data()), static_cast<std::streamsize>(M));
    if (!in) throw ArgumentError("truncated binary block " + bin.string());
    return e;
}

inline void write_ensemble_csv(const fs::path& p, const PathEnsemble& e, std::size_t max_paths = 100) {
    CsvWriter w({"path", "t", "W", "X", "Y", "Z"});
    for (std::size_t q = 0; q < std::min(max_paths, e.M); ++q)
        for (std::size_t k = 0; k < e.nt(); ++k) {
            std::size_t i = e.idx(q, k);
            w.row(e.first_path + q, e.t[k], e.W[i], e.X[i], e.Y[i], e.Z[i]);
        }
    w.save(p);
}

// ---------------------------------------------------------------------------
// Verification reports

inline Json to_json(const MartingaleReport& r) {
    Json e = Json::array();
    for (auto& t : r.entries)
        e.push_back({{"test", t.name}, {"statistic", t.statistic}, {"se", t.se}, {"z", jnum(t.z)}, {"pass", t.pass}});
    return {{"label", r.label}, {"threshold", r.threshold}, {"pass", r.pass}, {"low_power", r.low_power}, {"entries", e}};
}

inline Json to_json(const DeviationSummary& d) {
    return {{"mean_abs", d.mean_abs}, {"mean_sq", d.mean_sq}, {"sup_abs_mean", d.sup_abs_mean}};
}

inline Json to_json(const ScalingCheck& s) { return {{"ratio", jnum(s.ratio)}, {"pass", s.pass}}; }

inline Json to_json(const QuantileSet& q) {
    return {{"max", q.max}, {"q99", q.q99}, {"median", q.median}, {"mean", q.mean}, {"se", q.se}};
}

inline Json to_json(const FbmpReport& r) {
    Json j;
    j["label"] = r.label;
    j["paths"] = r.paths;
    j["reflected"] = r.reflected;
    j["dt"] = r.dt;
    j["martingale"] = {{"M_x", to_json(r.mx)}, {"M_y", to_json(r.my)}};
    if (!r.generator.entries.empty()) j["generator"] = to_json(r.generator);
    j["quadratic_variation"] = {{"xx", to_json(r.qv.xx)}, {"xy", to_json(r.qv.xy)}, {"yy", to_json(r.qv.yy)}};
    j["representation"] = to_json(r.representation.residual);
    Json sc = Json::object();
    if (r.qv_xx_scaling) sc["qv_xx"] = to_json(*r.qv_xx_scaling);
    if (r.qv_xy_scaling) sc["qv_xy"] = to_json(*r.qv_xy_scaling);
    if (r.qv_yy_scaling) sc["qv_yy"] = to_json(*r.qv_yy_scaling);
    if (r.representation_scaling) sc["representation"] = to_json(*r.representation_scaling);
    j["halving"] = sc;
    j["boundary"] = {{"terminal_moment", r.boundary.terminal_moment},
                     {"terminal_se", r.boundary.terminal_se},
                     {"initial_exact", r.boundary.initial_exact},
                     {"tolerance", r.boundary.tolerance},
                     {"pass", r.boundary.pass}};
    Json ig = {{"pass", r.integrability.pass}};
    if (r.integrability.pass) {
        ig["integral"] = to_json(r.integrability.integral);
        ig["terminal"] = to_json(r.integrability.terminal);
    } else if (r.integrability.failing_path) {
        ig["failing_path"] = *r.integrability.failing_path;
    }
    j["integrability"] = ig;
    if (r.conditional)
        j["conditional_variation"] = {{"statistic", r.conditional->statistic},
                                      {"variation_part", r.conditional->variation_part},
                                      {"terminal_part", r.conditional->terminal_part},
                                      {"noise_floor", r.conditional->noise_floor},
                                      {"se", r.conditional->se},
                                      {"ceiling", r.conditional->ceiling},
                                      {"buckets", r.conditional->buckets},
                                      {"pass", r.conditional->pass}};
    j["pass"] = r.pass();
    return j;
}

/// Flat CSV of every statistic in the report.
inline void write_fbmp_csv(const fs::path& p, const FbmpReport& r) {
    CsvWriter w({"group", "name", "statistic", "se", "z", "pass"});
    for (auto* m : {&r.mx, &r.my, &r.generator})
        for (auto& t : m->entries) w.row(m->label, t.name, t.statistic, t.se, t.z, int(t.pass));
    auto dev = [&](const std::string& g, const DeviationSummary& d) {
        w.row(g, std::string("mean_abs"), d.mean_abs, 0.0, 0.0, 1);
        w.row(g, std::string("mean_sq"), d.mean_sq, 0.0, 0.0, 1);
        w.row(g, std::string("sup_abs_mean"), d.sup_abs_mean, 0.0, 0.0, 1);
    };
    dev("qv_xx", r.qv.xx);
    dev("qv_xy", r.qv.xy);
    dev("qv_yy", r.qv.yy);
    dev("representation", r.representation.residual);
    auto sc = [&](const char* n, const std::optional<ScalingCheck>& s) {
        if (s) w.row(std::string("halving"), std::string(n), s->ratio, 0.0, 0.0, int(s->pass));
    };
    sc("qv_xx", r.qv_xx_scaling);
    sc("qv_xy", r.qv_xy_scaling);
    sc("qv_yy", r.qv_yy_scaling);
    sc("representation", r.representation_scaling);
    w.row(std::string("boundary"), std::string("terminal_moment"), r.boundary.terminal_moment, r.boundary.terminal_se, 0.0,
          int(r.boundary.pass));
    if (r.integrability.pass) {
        w.row(std::string("integrability"), std::string("integral_mean"), r.integrability.integral.mean,
              r.integrability.integral.se, 0.0, 1);
        w.row(std::string("integrability"), std::string("terminal_mean"), r.integrability.terminal.mean,
              r.integrability.terminal.se, 0.0, 1);
    }
    if (r.conditional)
        w.row(std::string("conditional_variation"), std::string("statistic"), r.conditional->statistic, r.conditional->se,
              0.0, int(r.conditional->pass));
    w.save(p);
}

// ---------------------------------------------------------------------------
// Regularity

inline void write_matrix_csv(const fs::path& p, const RegularityMatrix& m) {
    std::vector<std::string> h = {"level"};
    for (double d : m.deltas) h.push_back("delta=" + num(d));
    CsvWriter w(h);
    std::ostringstream os;
    os << w.str();
    for (std::size_t a = 0; a < m.cells.size(); ++a) {
        os << m.levels[a];
        for (auto& c : m.cells[a]) os << ',' << num(c.mean);
        os << '\n';
    }
    write_text(p, os.str());
}

/// Long format (statistic, level, delta, mean, se) for log-log plotting.
inline void write_long_csv(const fs::path& p, const std::vector<const RegularityMatrix*>& ms) {
    CsvWriter w({"statistic", "level", "delta", "mean", "se"});
    for (auto* m : ms)
        for (std::size_t a = 0; a < m->cells.size(); ++a)
            for (std::size_t d = 0; d < m->deltas.size(); ++d)
                w.row(m->name, m->levels[a], m->deltas[d], m->cells[a][d].mean, m->cells[a][d].se);
    w.save(p);
}

inline Json to_json(const RegularityMatrix& m, double target_ratio = 0.1) {
    return {{"statistic", m.name},
            {"levels", m.levels},
            {"deltas", m.deltas},
            {"monotone", m.monotone()},
            {"finest_over_coarsest", jnum(m.finest_over_coarsest())},
            {"target_ratio", target_ratio},
            {"pass", m.monotone() && m.finest_over_coarsest() <= target_ratio}};
}

inline Json to_json(const ConditionalRegularityReport& r) {
    Json b = Json::array();
    for (std::size_t i = 0; i < r.buckets.size(); ++i) {
        Json cells = Json::array();
        for (auto& c : r.buckets[i].by_delta) cells.push_back({{"mean", c.mean}, {"se", c.se}});
        b.push_back({{"bucket", i},
                     {"count", r.buckets[i].count},
                     {"x_mean", r.buckets[i].x_mean},
                     {"x2_mean", r.buckets[i].x2_mean},
                     {"by_delta", cells}});
    }
    return {{"t", r.t},
            {"T0", r.T0},
            {"T", r.T},
            {"deltas", r.deltas},
            {"max_over_buckets", r.max_over_buckets},
            {"fit",
             {{"slope", r.slope},
              {"intercept", r.intercept},
              {"r2", r.r2},
              {"delta_range", {r.delta_lo, r.delta_hi}},
              {"degenerate", r.degenerate}}},
            {"alpha", r.alpha},
            {"C", r.C},
            {"C_envelope", r.C_envelope},
            {"buckets", b}};
}

inline Json to_json(const KValidation& v) {
    return {{"monotone", v.monotone},
            {"vanishing", v.vanishing},
            {"lower_bound", v.lower_bound},
            {"points", v.points},
            {"detail", v.detail},
            {"pass", v.pass()}};
}

inline Json to_json(const KWeakReport& r) {
    Json j;
    j["exceedance_pass"] = r.exceedance_pass;
    j["worst_margin"] = jnum(r.worst_margin);
    auto opt = [](const std::optional<bool>& b) -> Json { return b ? Json(*b) : Json(nullptr); };
    j["brownian"] = opt(r.brownian);
    j["exact_state"] = opt(r.exact_state);
    j["bsde"] = opt(r.bsde);
    j["boundary"] = opt(r.boundary);
    j["pass"] = r.pass();
    j["cells"] = r.cells.size();
    j["resolved_cells"] = r.resolved;
    return j;
}

inline void write_kweak_csv(const fs::path& p, const KWeakReport& r) {
    CsvWriter w({"s", "delta", "eta", "bucket", "count", "exceed", "wilson_lo", "wilson_hi", "k", "z_energy", "resolved", "pass"});
    for (auto& c : r.cells)
        w.row(c.s, c.delta, c.eta, c.bucket, c.count, c.exceed, c.wilson_lo, c.wilson_hi, c.k, c.z_energy, int(c.resolved),
              int(c.pass));
    w.save(p);
}

inline Json to_json(const ComparisonReport& r) {
    Json w = Json::array();
    for (auto& b : r.w)
        w.push_back({{"r_lo", b.r_lo}, {"r_hi", b.r_hi}, {"count", b.count}, {"raw", b.raw}, {"w", b.w}, {"w_abs", b.w_abs}});
    Json j = {{"F_decreasing", r.F_decreasing},
              {"decreasing_violations", r.decreasing_violations},
              {"sigma_time_only", r.sigma_time_only},
              {"sigma_independent_of_x", r.sigma_ty},
              {"h_decreasing", r.h_decreasing},
              {"example1", r.example1},
              {"w_vanishing", r.w_vanishing},
              {"w_abs_vanishing", r.w_abs_vanishing},
              {"lipschitz_h_x", r.lipschitz_h_x},
              {"lipschitz_sigma_y", r.lipschitz_sigma_y},
              {"lipschitz_envelope", r.lipschitz_envelope},
              {"accepted_triples", r.accepted_triples},
              {"modulus", w},
              {"pass", r.pass()}};
    j["example2"] = r.example2 ? Json(*r.example2) : Json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// Functional cascade

/// One binary block per level (all tuples, u then u_x) plus a JSON manifest.
inline void write_cascade(const fs::path& dir, const CascadeSolution& c) {
    fs::create_directories(dir);
    Json m;
    m["format"] = "fbmp-cascade";
    m["version"] = 1;
    m["label"] = c.label;
    m["partition"] = c.partition.times;
    m["grid"] = {{"T", c.grid.T()}, {"dt", c.grid.dt}, {"L", c.grid.L()}, {"dx", c.grid.dx}, {"nt", c.grid.nt()}, {"nx", c.grid.nx()}};
    m["param_nodes"] = c.param_nodes;
    Json lv = Json::array();
    for (auto& l : c.levels) {
        std::string name = "level_" + std::to_string(l.k) + ".bin";
        std::ofstream o(dir / name, std::ios::binary);
        for (auto& f : l.fields) {
            write_doubles(o, f.u.data(), f.u.size());
            write_doubles(o, f.ux.data(), f.ux.size());
        }
        Json axes = Json::array();
        for (auto& a : l.axes) axes.push_back({{"lo", a.lo}, {"hi", a.hi}, {"n", a.n}});
        lv.push_back({{"k", l.k},
                      {"file", name},
                      {"tuples", l.tuples()},
                      {"rows", {l.row_lo, l.row_hi}},
                      {"axes", axes},
                      {"picard_max_iterations", l.picard_max_iterations},
                      {"stitch_error", l.stitch_error},
                      {"stitch_tolerance", l.stitch_tolerance},
                      {"layout", "per tuple (row-major over axes): u then u_x, row-major [t][x] float64"}});
    }
    m["levels"] = lv;
    write_json(dir / "cascade.json", m);
}

}  // namespace fbmp::io
