#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "autogd/autogd.hpp"
#include "autogd/baselines.hpp"
#include "autogd/corpus.hpp"
#include "autogd/errors.hpp"
#include "autogd/objective.hpp"
#include "autogd/quasi_newton.hpp"
#include "autogd/trace.hpp"

namespace autogd::harness {

inline constexpr std::string_view kCodeVersion = "autogd 0.1.0";
inline constexpr int kTraceFormatVersion = 1;

/// Learning-rate grid used for every optimizer that takes one.
inline const std::vector<double>& default_rate_grid() {
    static const std::vector<double> grid{100.0, 1.0, 1e-2, 1e-4, 1e-6};
    return grid;
}

inline const std::vector<std::string>& optimizer_ids() {
    static const std::vector<std::string> ids{"autogd", "gd",    "backtracking", "adgd2",
                                              "bfgs",   "lbfgs", "autobfgs",     "autolbfgs"};
    return ids;
}

inline bool is_known_optimizer(std::string_view id) {
    const auto& ids = optimizer_ids();
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

/// Optimizers that run the three-candidate AutoGD search.
inline bool is_auto_family(std::string_view id) {
    return id == "autogd" || id == "autobfgs" || id == "autolbfgs";
}

enum class CostModel { parallel, sequential };

inline std::string_view to_string(CostModel m) { return m == CostModel::parallel ? "parallel" : "sequential"; }

inline CostModel cost_model_from_string(std::string_view s) {
    if (s == "parallel") return CostModel::parallel;
    if (s == "sequential") return CostModel::sequential;
    throw UsageError("unknown cost model '" + std::string(s) + "'");
}

struct HarnessConfig {
    AutoGDConfig autogd;
    /// gamma_max is replaced by each run's learning rate.
    BacktrackConfig backtrack;
    double sigma_sq = 1e-12;
    std::size_t lbfgs_memory = 10;
    std::optional<double> grad_tol = 1e-10;
    std::size_t stagnation_window = 1000;
    CostModel cost_model = CostModel::parallel;
};

/// Cost of one step in evaluation units. The parallel model charges an
/// Auto* step one unit for its concurrent wave of three function evaluations
/// plus one for the gradient; everything else pays per evaluation.
inline double weighted_cost(const StepRecord& record, std::string_view optimizer_id, CostModel model) {
    if (model == CostModel::parallel && is_auto_family(optimizer_id)) return 2.0;
    return static_cast<double>(record.n_f_used + record.n_g_used);
}

inline std::vector<double> weighted_times(const RunTrace& trace, CostModel model) {
    std::vector<double> out;
    out.reserve(trace.records.size());
    double total = 0.0;
    for (const StepRecord& rec : trace.records) {
        total += weighted_cost(rec, trace.spec.optimizer_id, model);
        out.push_back(total);
    }
    return out;
}

namespace detail {

/// FNV-1a, so per-run seeds do not depend on std::hash.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t run_seed(const RunSpec& spec) {
    return spec.seed * 0x9E3779B97F4A7C15ull ^ fnv1a(spec.problem_id);
}

}  // namespace detail

/// Preliminary start: the problem's canonical start for seed 0, otherwise
/// canonical start + N(0, I).
inline Vector preliminary_start(const Objective& obj, std::uint64_t seed) {
    Vector x = obj.suggested_start();
    if (seed == 0) return x;
    std::mt19937_64 rng(seed ^ detail::fnv1a(obj.id()) ^ 0xA5A5A5A5A5A5A5A5ull);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (double& v : x) v += noise(rng);
    return x;
}

inline void validate(const RunSpec& spec) {
    corpus::find(spec.problem_id);
    if (!is_known_optimizer(spec.optimizer_id))
        throw UsageError("unknown optimizer id '" + spec.optimizer_id + "'");
    if (!(spec.learning_rate > 0.0) || !std::isfinite(spec.learning_rate))
        throw UsageError("learning rate must be positive and finite");
}

/// Runs one spec. Numerical failures end up in `status`; only invalid
/// specs throw.
inline RunTrace execute_run(const RunSpec& spec, const HarnessConfig& cfg) {
    validate(spec);
    const Objective& obj = corpus::find(spec.problem_id);

    InitSpec init_spec;
    init_spec.x_center = preliminary_start(obj, spec.seed);
    init_spec.log_gamma_center = std::log(spec.learning_rate);
    init_spec.sigma_sq = cfg.sigma_sq;
    init_spec.seed = detail::run_seed(spec);
    const OptimizerState init = diffuse_init(init_spec);

    StoppingRule stop;
    stop.max_iters = spec.max_iters;
    stop.grad_tol = cfg.grad_tol;
    if (spec.budget) {
        stop.cost_budget = static_cast<double>(*spec.budget);
        stop.step_cost = [id = spec.optimizer_id, model = cfg.cost_model](const StepRecord& r) {
            return weighted_cost(r, id, model);
        };
    }
    stop.stagnation_window = cfg.stagnation_window;

    BacktrackConfig bt = cfg.backtrack;
    bt.gamma_max = spec.learning_rate;

    EvalCounter counter;
    RunTrace trace;
    const std::string& id = spec.optimizer_id;
    try {
        if (id == "autogd")
            trace = run(obj, init, cfg.autogd, stop, counter);
        else if (id == "autobfgs")
            trace = autobfgs_run(obj, init, cfg.autogd, stop, counter);
        else if (id == "autolbfgs")
            trace = autolbfgs_run(obj, init, cfg.autogd, stop, counter, cfg.lbfgs_memory);
        else if (id == "gd")
            trace = gd_run(obj, init_spec.x_center, spec.learning_rate, stop, counter);
        else if (id == "backtracking")
            trace = backtracking_run(obj, init_spec.x_center, bt, stop, counter);
        else if (id == "adgd2")
            trace = adgd2_run(obj, init_spec.x_center, stop, bt, counter);
        else if (id == "bfgs")
            trace = bfgs_run(obj, init_spec.x_center, bt, stop, counter);
        else
            trace = lbfgs_run(obj, init_spec.x_center, bt, stop, counter, cfg.lbfgs_memory);
    } catch (const std::exception&) {
        trace.status = TerminalStatus::diverged;
        trace.x_initial = is_auto_family(id) ? init.x : init_spec.x_center;
        trace.gamma_initial = init.gamma;
    }
    trace.spec = spec;
    trace.settings.insert(trace.settings.begin(), {"sigma_sq", cfg.sigma_sq});
    trace.weighted_time = weighted_times(trace, cfg.cost_model);
    return trace;
}

/// Cartesian product problems x optimizers x rates x seeds, in that nesting order.
inline std::vector<RunSpec> make_matrix(const std::vector<std::string>& problems,
                                        const std::vector<std::string>& optimizers,
                                        const std::vector<double>& rates, const std::vector<std::uint64_t>& seeds,
                                        std::size_t max_iters, std::optional<std::uint64_t> budget = std::nullopt) {
    std::vector<RunSpec> specs;
    specs.reserve(problems.size() * optimizers.size() * rates.size() * seeds.size());
    for (const auto& p : problems)
        for (const auto& o : optimizers)
            for (double r : rates)
                for (std::uint64_t s : seeds) specs.push_back({p, o, r, s, max_iters, budget});
    return specs;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

using ordered = nlohmann::ordered_json;

inline ordered encode_number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline double decode_number(const ordered& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw UsageError("trace: malformed number");
}

inline ordered encode_vector(const Vector& v) {
    ordered arr = ordered::array();
    for (double x : v) arr.push_back(encode_number(x));
    return arr;
}

inline Vector decode_vector(const ordered& j) {
    Vector out;
    for (const auto& e : j) out.push_back(decode_number(e));
    return out;
}

}  // namespace detail

/// Shortest decimal form that round-trips, e.g. "1e-06", "100", "0.01".
inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Writes a trace as line-delimited JSON: one header object followed by one
/// object per step (t, f, grad_norm_sq, gamma, gamma_prime, accepted, n_f,
/// n_g, weighted_time).
inline void write_trace(std::ostream& out, const RunTrace& trace, CostModel model) {
    using detail::encode_number;
    detail::ordered header;
    header["format"] = "autogd-trace";
    header["format_version"] = kTraceFormatVersion;
    header["code_version"] = kCodeVersion;
    detail::ordered spec;
    spec["problem_id"] = trace.spec.problem_id;
    spec["optimizer_id"] = trace.spec.optimizer_id;
    spec["learning_rate"] = encode_number(trace.spec.learning_rate);
    spec["seed"] = trace.spec.seed;
    spec["max_iters"] = trace.spec.max_iters;
    spec["budget"] = trace.spec.budget ? detail::ordered(*trace.spec.budget) : detail::ordered(nullptr);
    header["spec"] = spec;
    detail::ordered config = detail::ordered::object();
    for (const auto& [key, value] : trace.settings) config[key] = encode_number(value);
    header["config"] = config;
    header["cost_model"] = to_string(model);
    header["x_initial"] = detail::encode_vector(trace.x_initial);
    header["gamma_initial"] = encode_number(trace.gamma_initial);
    header["f_initial"] = encode_number(trace.f_initial);
    header["status"] = to_string(trace.status);
    header["x_final"] = detail::encode_vector(trace.x_final);
    header["gamma_final"] = encode_number(trace.gamma_final);
    header["steps"] = trace.records.size();
    out << header.dump() << '\n';

    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        const StepRecord& rec = trace.records[i];
        detail::ordered line;
        line["t"] = rec.t;
        line["f"] = encode_number(rec.f_after);
        line["grad_norm_sq"] = encode_number(rec.grad_norm_sq);
        line["gamma"] = encode_number(rec.gamma);
        line["gamma_prime"] = encode_number(rec.gamma_prime);
        line["accepted"] = rec.accepted;
        line["n_f"] = rec.n_f_used;
        line["n_g"] = rec.n_g_used;
        line["weighted_time"] = encode_number(i < trace.weighted_time.size() ? trace.weighted_time[i] : kNaN);
        out << line.dump() << '\n';
    }
}

struct LoadedTrace {
    RunTrace trace;
    CostModel cost_model = CostModel::parallel;
};

/// Inverse of write_trace. Fields outside the persisted schema (candidate
/// values, gamma_next, ...) are left at their defaults; f_before is rebuilt
/// from the previous row.
inline LoadedTrace read_trace(std::istream& in) {
    using detail::decode_number;
    std::string line;
    if (!std::getline(in, line)) throw UsageError("trace: empty input");
    const auto header = detail::ordered::parse(line);
    if (header.value("format", "") != "autogd-trace") throw UsageError("trace: not an autogd trace");

    LoadedTrace out;
    RunTrace& t = out.trace;
    const auto& spec = header.at("spec");
    t.spec.problem_id = spec.at("problem_id").get<std::string>();
    t.spec.optimizer_id = spec.at("optimizer_id").get<std::string>();
    t.spec.learning_rate = decode_number(spec.at("learning_rate"));
    t.spec.seed = spec.at("seed").get<std::uint64_t>();
    t.spec.max_iters = spec.at("max_iters").get<std::size_t>();
    if (!spec.at("budget").is_null()) t.spec.budget = spec.at("budget").get<std::uint64_t>();
    for (const auto& [key, value] : header.at("config").items()) t.settings.emplace_back(key, decode_number(value));
    out.cost_model = cost_model_from_string(header.at("cost_model").get<std::string>());
    t.x_initial = detail::decode_vector(header.at("x_initial"));
    t.gamma_initial = decode_number(header.at("gamma_initial"));
    t.f_initial = decode_number(header.at("f_initial"));
    t.status = terminal_status_from_string(header.at("status").get<std::string>());
    t.x_final = detail::decode_vector(header.at("x_final"));
    t.gamma_final = decode_number(header.at("gamma_final"));
    const auto steps = header.at("steps").get<std::size_t>();

    double prev_f = t.f_initial;
    while (t.records.size() < steps && std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = detail::ordered::parse(line);
        StepRecord rec;
        rec.t = j.at("t").get<std::size_t>();
        rec.f_before = prev_f;
        rec.f_after = decode_number(j.at("f"));
        rec.grad_norm_sq = decode_number(j.at("grad_norm_sq"));
        rec.gamma = decode_number(j.at("gamma"));
        rec.gamma_prime = decode_number(j.at("gamma_prime"));
        rec.accepted = j.at("accepted").get<bool>();
        rec.n_f_used = j.at("n_f").get<std::uint64_t>();
        rec.n_g_used = j.at("n_g").get<std::uint64_t>();
        t.weighted_time.push_back(decode_number(j.at("weighted_time")));
        prev_f = rec.f_after;
        t.records.push_back(std::move(rec));
    }
    if (t.records.size() != steps) throw UsageError("trace: truncated file");
    return out;
}

/// traces/<problem>/<optimizer>/<rate>/<seed>.trace under `root`.
inline std::filesystem::path trace_path(const std::filesystem::path& root, const RunSpec& spec) {
    return root / "traces" / spec.problem_id / spec.optimizer_id / format_number(spec.learning_rate) /
           (std::to_string(spec.seed) + ".trace");
}

/// Writes to a temporary file and renames, so a killed run never leaves a
/// half-written trace behind.
inline void persist_trace(const std::filesystem::path& root, const RunTrace& trace, CostModel model) {
    const auto path = trace_path(root, trace.spec);
    std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    try {
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            if (!f) throw std::runtime_error("cannot open " + tmp.string());
            write_trace(f, trace, model);
            if (!f) throw std::runtime_error("failed writing " + tmp.string());
        }
        std::filesystem::rename(tmp, path);
    } catch (...) {
        std::error_code ignored;
        std::filesystem::remove(tmp, ignored);
        throw;
    }
}

inline LoadedTrace load_trace(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open trace " + path.string());
    return read_trace(f);
}

// ---------------------------------------------------------------------------
// Matrix execution

/// Runs every spec with up to `workers` threads. Output order follows
/// `specs` and does not depend on the worker count. When `out_dir` is set,
/// each trace is persisted as soon as it finishes.
inline std::vector<RunTrace> execute_matrix(const std::vector<RunSpec>& specs, const HarnessConfig& cfg,
                                            std::size_t workers = 1,
                                            const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    for (const RunSpec& s : specs) validate(s);
    std::vector<RunTrace> traces(specs.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            try {
                traces[i] = execute_run(specs[i], cfg);
                if (out_dir) persist_trace(*out_dir, traces[i], cfg.cost_model);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(workers, specs.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t k = 0; k < n; ++k) pool.emplace_back(worker);
    }
    if (first_error) std::rethrow_exception(first_error);
    return traces;
}

// ---------------------------------------------------------------------------
// Success curves

/// f - known_minimum + 1 (or f + 1 without a known minimum), so values sit near 1
/// at the optimum and a multiplicative tolerance makes sense.
inline double shifted_value(double f, std::optional<double> known_minimum) {
    return known_minimum ? f - *known_minimum + 1.0 : f + 1.0;
}

struct CurveSeries {
    std::string optimizer;
    double learning_rate = 0.0;
    std::size_t runs = 0;
    std::vector<double> fraction;
};

struct SuccessCurve {
    std::vector<double> times;
    /// Sorted by (optimizer, learning_rate).
    std::vector<CurveSeries> series;
    /// Per-problem best shifted value.
    std::map<std::string, double> best;
};

/// `n` points spaced logarithmically over [1, t_max].
inline std::vector<double> log_time_grid(double t_max, std::size_t n = 60) {
    std::vector<double> grid;
    if (n == 0) return grid;
    t_max = std::max(1.0, t_max);
    for (std::size_t i = 0; i < n; ++i) {
        const double frac = n == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        grid.push_back(std::pow(t_max, frac));
    }
    grid.back() = t_max;
    return grid;
}

namespace detail {

inline std::optional<double> problem_minimum(const std::string& id) {
    try {
        return corpus::find(id).known_minimum();
    } catch (const UsageError&) {
        return std::nullopt;
    }
}

/// Shifted value a trace holds at weighted time tau.
inline double value_at(const RunTrace& t, double tau, std::optional<double> known_minimum) {
    auto it = std::upper_bound(t.weighted_time.begin(), t.weighted_time.end(), tau);
    const std::size_t k = static_cast<std::size_t>(it - t.weighted_time.begin());
    const double f = k == 0 ? t.f_initial : t.records[k - 1].f_after;
    return shifted_value(f, known_minimum);
}

}  // namespace detail

/// Fraction of (problem, seed) runs per (optimizer, rate) whose shifted value
/// is within `tolerance_factor` of the per-problem best at each time point.
/// The best is the smallest finite shifted value seen anywhere in any trace
/// for that problem. Runs count as successes when value <= factor * best.
inline SuccessCurve success_curves(const std::vector<RunTrace>& traces, double tolerance_factor = 1.1,
                                   std::vector<double> grid = {}) {
    if (traces.empty()) throw UsageError("success_curves: no traces supplied");
    SuccessCurve curve;
    std::map<std::string, std::optional<double>> minima;
    double t_max = 1.0;
    for (const RunTrace& t : traces) {
        const auto& id = t.spec.problem_id;
        if (!minima.contains(id)) minima[id] = detail::problem_minimum(id);
        auto consider = [&](double f) {
            const double s = shifted_value(f, minima[id]);
            if (!std::isfinite(s)) return;
            auto [it, inserted] = curve.best.try_emplace(id, s);
            if (!inserted) it->second = std::min(it->second, s);
        };
        consider(t.f_initial);
        for (const StepRecord& r : t.records) consider(r.f_after);
        if (!t.weighted_time.empty()) t_max = std::max(t_max, t.weighted_time.back());
    }
    curve.times = grid.empty() ? log_time_grid(t_max) : std::move(grid);

    std::map<std::pair<std::string, double>, std::vector<const RunTrace*>> groups;
    for (const RunTrace& t : traces) groups[{t.spec.optimizer_id, t.spec.learning_rate}].push_back(&t);

    for (const auto& [key, members] : groups) {
        CurveSeries s;
        s.optimizer = key.first;
        s.learning_rate = key.second;
        s.runs = members.size();
        for (double tau : curve.times) {
            std::size_t hits = 0;
            for (const RunTrace* t : members) {
                auto best = curve.best.find(t->spec.problem_id);
                if (best == curve.best.end()) continue;
                const double v = detail::value_at(*t, tau, minima[t->spec.problem_id]);
                if (std::isfinite(v) && v <= tolerance_factor * best->second) ++hits;
            }
            s.fraction.push_back(static_cast<double>(hits) / static_cast<double>(members.size()));
        }
        curve.series.push_back(std::move(s));
    }
    return curve;
}

/// CSV with header `time,optimizer,learning_rate,fraction`, one row per
/// (time, optimizer, rate).
inline void write_curves_csv(std::ostream& out, const SuccessCurve& curve) {
    out << "time,optimizer,learning_rate,fraction\n";
    for (std::size_t i = 0; i < curve.times.size(); ++i)
        for (const CurveSeries& s : curve.series)
            out << format_number(curve.times[i]) << ',' << s.optimizer << ',' << format_number(s.learning_rate)
                << ',' << format_number(s.fraction[i]) << '\n';
}

}  // namespace autogd::harness
