#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbmp/battery.hpp"
#include "fbmp/config.hpp"
#include "fbmp/error.hpp"
#include "fbmp/functional.hpp"
#include "fbmp/io.hpp"
#include "fbmp/model.hpp"
#include "fbmp/mollify.hpp"
#include "fbmp/parallel.hpp"
#include "fbmp/pde.hpp"
#include "fbmp/regularity.hpp"
#include "fbmp/simulate.hpp"
#include "fbmp/verify.hpp"

namespace fbmp {

inline constexpr const char* kVersion = "0.1.0";

enum class Stage { audit, mollify, solve, simulate, verify, regularity, cascade, report };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::audit: return "audit";
        case Stage::mollify: return "mollify";
        case Stage::solve: return "solve";
        case Stage::simulate: return "simulate";
        case Stage::verify: return "verify";
        case Stage::regularity: return "regularity";
        case Stage::cascade: return "cascade";
        case Stage::report: return "report";
    }
    return "?";
}

struct StageRecord {
    std::string name;
    std::string status;  // ok, fail (statistical), error (structural)
    double seconds = 0;
    std::string message;
};

struct RunManifest {
    std::string config_hash;
    std::string version = kVersion;
    std::vector<StageRecord> stages;
    int exit_code = 0;
};

/// Stage sequence for a subcommand; `all` is every stage in order.
inline std::vector<Stage> plan_for(const std::string& cmd) {
    using S = Stage;
    if (cmd == "audit") return {S::audit};
    if (cmd == "mollify") return {S::audit, S::mollify};
    if (cmd == "solve") return {S::audit, S::mollify, S::solve};
    if (cmd == "simulate") return {S::audit, S::mollify, S::solve, S::simulate};
    if (cmd == "verify") return {S::audit, S::mollify, S::solve, S::verify};
    if (cmd == "regularity") return {S::audit, S::mollify, S::solve, S::regularity};
    if (cmd == "cascade") return {S::cascade};
    if (cmd == "report") return {S::report};
    if (cmd == "all")
        return {S::audit, S::mollify, S::solve, S::simulate, S::verify, S::regularity, S::cascade, S::report};
    throw ArgumentError("unknown subcommand " + cmd);
}

/// Fails a stage with a structural error that is not an exception elsewhere.
class StageFailure : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "stage"; }
};

class Pipeline {
public:
    Pipeline(config::RunConfig cfg, std::filesystem::path out, unsigned threads)
        : cfg_(std::move(cfg)), out_(std::move(out)), threads_(std::max(1u, threads)) {}

    /// Runs the stages in order with fail-fast; writes manifest.json last.
    RunManifest run(const std::vector<Stage>& stages) {
        namespace fs = std::filesystem;
        fs::create_directories(out_);
        RunManifest m;
        m.config_hash = io::sha256_text(cfg_.raw.dump());
        bool stat_fail = false;
        for (Stage s : stages) {
            StageRecord rec{stage_name(s), "ok", 0, ""};
            auto t0 = std::chrono::steady_clock::now();
            try {
                bool ok = dispatch(s);
                if (!ok) {
                    rec.status = "fail";
                    stat_fail = true;
                }
            } catch (const Error& e) {
                rec.status = "error";
                rec.message = std::string(e.kind()) + ": " + e.what();
            } catch (const std::exception& e) {
                rec.status = "error";
                rec.message = e.what();
            }
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            m.stages.push_back(rec);
            if (rec.status == "error") {
                m.exit_code = 3;
                break;
            }
        }
        if (m.exit_code == 0 && stat_fail) m.exit_code = 2;
        write_manifest(m);
        return m;
    }

    const FieldSolution* field() const { return field_ ? &*field_ : nullptr; }

private:
    bool dispatch(Stage s) {
        switch (s) {
            case Stage::audit: return audit();
            case Stage::mollify: return mollify();
            case Stage::solve: return solve();
            case Stage::simulate: return simulate();
            case Stage::verify: return verify();
            case Stage::regularity: return regularity();
            case Stage::cascade: return cascade();
            case Stage::report: return report();
        }
        return true;
    }

    const CoefficientBundle& primary() const {
        if (family_ && !family_->levels.empty()) return family_->levels.back().bundle;
        return cfg_.bundle;
    }

    SimulationOptions sim_options() const {
        SimulationOptions o;
        o.substeps = cfg_.sim.substeps;
        o.strict = cfg_.strict;
        o.max_reflected_fraction = cfg_.sim.max_reflected_fraction;
        o.threads = threads_;
        return o;
    }

    void need_field() {
        if (!field_) solve();
    }

    bool audit() {
        auto grid = cfg_.grid();
        auto r = audit_bounds(cfg_.bundle, cfg_.problem, grid, cfg_.audit);
        io::write_json(out_ / "audit.json", io::to_json(r));
        if (!r.pass()) {
            std::string why;
            if (!r.h1) why += " H1 (boundedness)";
            if (!r.h2) why += " H2 (ellipticity)";
            if (!r.h3) why += " H3 (uniform continuity)";
            throw StageFailure("audit failed:" + why);
        }
        return true;
    }

    bool mollify() {
        if (cfg_.mollify.schedule.empty()) return true;
        family_ = build_cascade(cfg_.bundle, cfg_.mollify.schedule, cfg_.grid(), cfg_.mollify.options);
        io::write_json(out_ / "mollify.json", io::to_json(*family_));
        if (!family_->ok()) {
            std::ostringstream os;
            os << "mollification rejected:";
            for (auto& r : family_->rejected) os << ' ' << r.coefficient << "@n=" << r.n << " (error " << r.best_error << ")";
            throw StageFailure(os.str());
        }
        return true;
    }

    bool solve() {
        auto grid = cfg_.grid();
        field_ = solve_quasilinear(primary(), grid, cfg_.solver);
        io::write_field(out_ / "field", *field_);
        std::size_t st = std::max<std::size_t>(1, (field_->nt() + 99) / 100);
        std::size_t sx = std::max<std::size_t>(1, (field_->nx() + 199) / 200);
        io::write_field_csv(out_ / "field.csv", *field_, st, sx);
        io::Json j;
        double x0 = cfg_.problem.x0;
        j["label"] = field_->label;
        j["u0"] = field_->value(0.0, x0);
        j["ux0"] = field_->slope(0.0, x0);
        j["picard_max_iterations"] = field_->picard_max_iterations;
        j["max_linear_residual"] = field_->max_linear_residual;
        j["pde_residual"] = pde_residual(*field_, primary());
        XWindow win{-0.5 * grid.L(), 0.5 * grid.L()};
        auto hb = estimate_holder(*field_, 0.5 * grid.T(), win);
        j["holder"] = {{"C", hb.C}, {"alpha", hb.alpha}, {"alpha_space", hb.alpha_space}, {"alpha_time", hb.alpha_time}};
        auto gb = gradient_bounds(*field_, win);
        j["sup_ux"] = gb.sup_ux;
        if (family_ && family_->levels.size() > 1) {
            level_fields_.clear();
            io::Json lv = io::Json::array();
            for (auto& l : family_->levels) {
                level_fields_.push_back(solve_quasilinear(l.bundle, grid, cfg_.solver));
                lv.push_back({{"n", l.n}, {"sup_ux", gradient_bounds(level_fields_.back(), win).sup_ux},
                              {"u0", level_fields_.back().value(0.0, x0)}});
            }
            std::vector<const FieldSolution*> ptrs;
            for (auto& f : level_fields_) ptrs.push_back(&f);
            j["levels"] = lv;
            j["cascade_convergence"] = cascade_convergence(ptrs, win);
        }
        io::write_json(out_ / "solve.json", j);
        return true;
    }

    bool simulate() {
        need_field();
        std::size_t M = std::min(cfg_.sim.M, cfg_.sim.persist_paths);
        auto e = simulate_forward(*field_, primary(), cfg_.problem.x0, M, cfg_.sim.seed, sim_options());
        io::write_ensemble(out_ / "ensemble", e, primary().label, field_->label);
        io::write_ensemble_csv(out_ / "ensemble.csv", e, 100);
        auto br = reconstruct_brownian(e, primary());
        auto rr = bsde_residual(e, primary());
        io::Json j = {{"paths_persisted", M},
                      {"paths_total", cfg_.sim.M},
                      {"reflected", e.reflected_count()},
                      {"Y0", e.Y[0]},
                      {"brownian", {{"mean_sup_qv_error", br.mean_sup_qv_error}, {"sup_mean_qv_error", br.sup_mean_qv_error}}},
                      {"bsde_residual", {{"max_rms", rr.max_rms}, {"max_ms", rr.max_ms}}}};
        io::write_json(out_ / "simulate.json", j);
        return true;
    }

    bool verify() {
        if (!cfg_.verify.enabled) return true;
        need_field();
        auto sim = sim_options();
        auto r = run_battery(*field_, primary(), cfg_.problem.x0, cfg_.sim.M, cfg_.sim.seed, sim, cfg_.verify.battery,
                             cfg_.sim.block);
        if (cfg_.verify.halving) {
            // Half step through the simulation substeps on the same field.
            auto fine_sim = sim;
            fine_sim.substeps = sim.substeps * 2;
            auto fine = run_battery(*field_, primary(), cfg_.problem.x0, cfg_.sim.M, cfg_.sim.seed, fine_sim,
                                    cfg_.verify.battery, cfg_.sim.block);
            attach_scaling(r, fine);
        }
        io::write_json(out_ / "fbmp_report.json", io::to_json(r));
        io::write_fbmp_csv(out_ / "fbmp_report.csv", r);
        return r.pass();
    }

    bool regularity() {
        if (!cfg_.regularity.enabled) return true;
        need_field();
        const auto& rc = cfg_.regularity;
        auto grid = cfg_.grid();
        double dt = grid.dt / static_cast<double>(cfg_.sim.substeps);
        std::vector<double> deltas;
        for (auto m : rc.delta_steps) deltas.push_back(static_cast<double>(m) * dt);
        std::sort(deltas.rbegin(), deltas.rend());

        std::vector<const FieldSolution*> fields;
        std::vector<const CoefficientBundle*> bundles;
        std::vector<int> levels;
        if (!level_fields_.empty()) {
            for (std::size_t i = 0; i < level_fields_.size(); ++i) {
                fields.push_back(&level_fields_[i]);
                bundles.push_back(&family_->levels[i].bundle);
                levels.push_back(family_->levels[i].n);
            }
        } else {
            fields.push_back(&*field_);
            bundles.push_back(&primary());
            levels.push_back(family_ && !family_->levels.empty() ? family_->levels.back().n : 0);
        }
        RegularityMatrix avg{"z_avg", levels, deltas, {}}, shift{"z_shift", levels, deltas, {}};
        std::optional<PathEnsemble> last;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            auto e = simulate_forward(*fields[i], *bundles[i], cfg_.problem.x0, rc.M, cfg_.sim.seed, sim_options());
            avg.cells.push_back(matrix_row(z_avg_samples(e, deltas)));
            shift.cells.push_back(matrix_row(z_shift_samples(e, deltas, rc.horizon_cut)));
            if (i + 1 == fields.size()) last = std::move(e);
        }
        io::write_matrix_csv(out_ / "z_avg.csv", avg);
        io::write_matrix_csv(out_ / "z_shift.csv", shift);
        io::write_long_csv(out_ / "regularity_long.csv", {&avg, &shift});

        const PathEnsemble& e = *last;
        const CoefficientBundle& c = *bundles.back();
        double T = e.T();
        double t = rc.t.value_or(0.5 * T);
        double T0 = rc.T0.value_or(t);
        std::vector<double> fit;
        for (auto m : rc.fit_steps) fit.push_back(static_cast<double>(m) * dt);
        auto cr = conditional_regularity(e, t, fit, T0, rc.buckets);
        double C = cr.degenerate ? 1e-12 : std::max(cr.C_envelope, 1e-12);
        auto k = canonical_k(C, cr.alpha, T);
        auto kv = k_validate(k, C, cr.alpha);

        auto kw = k_weak_check(e, k, rc.kweak);
        auto br = reconstruct_brownian(e, c);
        double werr = 0;
        for (std::size_t i = 0; i < br.W.size(); ++i) werr = std::max(werr, std::abs(br.W[i] - e.W[i]));
        kw.brownian = werr <= 1e-8;
        auto bt = boundary_test(e, c, cfg_.verify.battery.terminal_tolerance);
        kw.exact_state = bt.initial_exact;
        kw.bsde = bsde_residual(e, c).max_ms <= rc.bsde_ms_tolerance;
        kw.boundary = bt.pass;
        io::write_kweak_csv(out_ / "kweak.csv", kw);

        auto cmp = comparison_precondition(c, T, rc.comparison);

        io::Json j;
        j["z_avg"] = io::to_json(avg, rc.target_ratio);
        j["z_shift"] = io::to_json(shift, rc.target_ratio);
        j["conditional"] = io::to_json(cr);
        j["k"] = {{"C", C}, {"alpha", cr.alpha}};
        j["k_validate"] = io::to_json(kv);
        j["k_weak"] = io::to_json(kw);
        j["k_weak"]["brownian_max_error"] = werr;
        j["comparison"] = io::to_json(cmp);
        bool pass = avg.monotone() && shift.monotone() && avg.finest_over_coarsest() <= rc.target_ratio &&
                    shift.finest_over_coarsest() <= rc.target_ratio && kv.pass() && kw.pass();
        j["pass"] = pass;
        io::write_json(out_ / "regularity.json", j);
        return pass;
    }

    bool cascade() {
        if (!cfg_.functional) return true;
        const auto& fc = *cfg_.functional;
        auto spec = config::functional_spec(cfg_);
        // Ellipticity on the sampled tensor domain.
        {
            UniformStream u(cfg_.sim.seed, 0, 21);
            double L = cfg_.problem.halfwidth();
            for (int i = 0; i < 2000; ++i) {
                Slots xs(spec.N());
                for (auto& v : xs) v = -L + 2 * L * u();
                double t = spec.partition.times.back() * u();
                double y = -2 + 4 * u();
                double s = spec.sigma(t, xs, y);
                if (!(s * s >= 1 / spec.K - 1e-12 && s * s <= spec.K + 1e-12))
                    throw StageFailure("functional diffusion violates ellipticity on the sampled domain");
            }
        }
        auto grid = cfg_.grid();
        FunctionalCascadeOptions co;
        co.param_nodes = fc.param_nodes;
        co.solver = cfg_.solver;
        co.threads = threads_;
        auto cs = solve_cascade(spec, grid, co);
        io::write_cascade(out_ / "cascade", cs);
        FunctionalSimOptions so;
        so.sim = sim_options();
        auto e = simulate_functional(spec, cs, fc.M, cfg_.sim.seed, so);
        // Path estimate of Y_0: the terminal functional (h = 0) or the backward sum.
        std::vector<double> yT(e.M);
        for (std::size_t p = 0; p < e.M; ++p) yT[p] = e.Y[e.idx(p, e.nt() - 1)];
        auto path_mean = stats::mean_se(yT);
        OracleOptions oo;
        oo.dt = fc.oracle_dt;
        oo.h_zero = config::is_zero(fc.h);
        auto orc = nested_mc_oracle(spec, fc.oracle_outer, std::max<std::size_t>(fc.oracle_inner, 2), cfg_.sim.seed + 1, oo);
        double y0 = e.Y[0];
        io::Json j;
        j["N"] = spec.N();
        j["Y0"] = y0;
        j["Y0_terminal_mean"] = {{"mean", path_mean.mean}, {"se", path_mean.se}};
        j["oracle"] = {{"mean", orc.mean}, {"se", orc.se}, {"outer", orc.outer}, {"inner", orc.inner}};
        bool agree = std::abs(y0 - orc.mean) <= 3 * orc.se + 1e-12;
        j["oracle_agree"] = agree;
        bool stitch = true;
        io::Json st = io::Json::array();
        for (auto& l : cs.levels) {
            st.push_back({{"k", l.k}, {"error", l.stitch_error}, {"tolerance", l.stitch_tolerance}});
            if (l.k < spec.N() && l.stitch_error > 2 * l.stitch_tolerance) stitch = false;
        }
        j["stitching"] = st;
        j["stitching_pass"] = stitch;
        j["clamped_paths"] = e.clamped_count();
        // Per-interval averaged-Z statistic.
        io::Json iv = io::Json::array();
        double dt = e.dt();
        for (std::size_t k = 1; k <= spec.N(); ++k) {
            auto sl = slice_ensemble(e, spec.partition.times[k - 1], spec.partition.times[k]);
            std::vector<double> ds;
            for (auto m : cfg_.regularity.delta_steps)
                if (static_cast<double>(m) * dt <= 0.5 * (sl.T() - sl.t.front()) + 1e-12) ds.push_back(static_cast<double>(m) * dt);
            auto row = matrix_row(z_avg_samples(sl, ds));
            io::Json cells = io::Json::array();
            for (std::size_t i = 0; i < ds.size(); ++i) cells.push_back({{"delta", ds[i]}, {"mean", row[i].mean}, {"se", row[i].se}});
            iv.push_back({{"interval", k}, {"z_avg", cells}});
        }
        j["interval_regularity"] = iv;
        bool pass = (!oo.h_zero || agree) && stitch;
        j["pass"] = pass;
        io::write_json(out_ / "functional.json", j);
        return pass;
    }

    /// Aggregates the verdicts of every report present in the output directory.
    bool report() {
        io::Json s;
        s["label"] = cfg_.label;
        s["version"] = kVersion;
        io::Json v = io::Json::object();
        bool pass = true;
        auto take = [&](const char* file, const char* key, const char* name) {
            auto p = out_ / file;
            if (!std::filesystem::exists(p)) return;
            auto j = io::read_json(p);
            bool b = j.value(key, false);
            v[name] = b;
            pass = pass && b;
        };
        take("audit.json", "pass", "audit");
        take("mollify.json", "ok", "mollify");
        take("fbmp_report.json", "pass", "fbmp");
        take("regularity.json", "pass", "regularity");
        take("functional.json", "pass", "functional");
        if (v.empty()) throw ArgumentError("no reports found in " + out_.string());
        s["verdicts"] = v;
        s["pass"] = pass;
        io::write_json(out_ / "summary.json", s);
        return pass;
    }

    void write_manifest(const RunManifest& m) {
        namespace fs = std::filesystem;
        io::Json j;
        j["config_hash"] = m.config_hash;
        j["version"] = m.version;
        j["label"] = cfg_.label;
        j["threads"] = threads_;
        io::Json st = io::Json::array();
        for (auto& r : m.stages)
            st.push_back({{"stage", r.name}, {"status", r.status}, {"seconds", r.seconds}, {"message", r.message}});
        j["stages"] = st;
        j["exit_code"] = m.exit_code;
        std::vector<fs::path> files;
        for (auto& ent : fs::recursive_directory_iterator(out_))
            if (ent.is_regular_file() && ent.path().filename() != "manifest.json") files.push_back(ent.path());
        std::sort(files.begin(), files.end());
        io::Json inv = io::Json::array();
        for (auto& f : files)
            inv.push_back({{"file", fs::relative(f, out_).generic_string()},
                           {"bytes", fs::file_size(f)},
                           {"sha256", io::sha256_file(f)}});
        j["files"] = inv;
        io::write_json(out_ / "manifest.json", j);
    }

    config::RunConfig cfg_;
    std::filesystem::path out_;
    unsigned threads_;
    std::optional<MollifiedFamily> family_;
    std::optional<FieldSolution> field_;
    std::vector<FieldSolution> level_fields_;
};

/// Checks every file listed in a manifest against its checksum.
inline bool verify_manifest(const std::filesystem::path& dir, std::string* why = nullptr) {
    auto j = io::read_json(dir / "manifest.json");
    for (auto& f : j["files"]) {
        auto p = dir / f["file"].get<std::string>();
        if (!std::filesystem::exists(p)) {
            if (why) *why = "missing " + p.string();
            return false;
        }
        if (io::sha256_file(p) != f["sha256"].get<std::string>()) {
            if (why) *why = "checksum mismatch " + p.string();
            return false;
        }
    }
    return true;
}

}  // namespace fbmp
