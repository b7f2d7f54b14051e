#include <gmdkit/cli.hpp>

#include <gmdkit/io.hpp>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace gmdkit::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<spdlog::logger> logger()
{
    auto lg = spdlog::get("gmdkit");
    if (!lg) {
        lg = spdlog::stderr_logger_st("gmdkit");
        lg->set_pattern("[gmdkit] [%l] %v");
        lg->set_level(spdlog::level::info);
    }
    return lg;
}

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorKind::config, msg); }

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where)
{
    std::vector<std::string> unknown;
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) unknown.push_back(it.key());
    if (unknown.empty()) return;
    std::string msg = where + ": unknown key" + (unknown.size() > 1 ? "s" : "") + ":";
    for (const auto& k : unknown) msg += " '" + k + "'";
    config_error(msg);
}

double get_number(const json& obj, const std::string& key, const std::string& field)
{
    const json& v = obj.at(key);
    if (!v.is_number()) config_error(field + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) config_error(field + ": expected a finite number");
    return x;
}

long long get_integer(const json& obj, const std::string& key, const std::string& field)
{
    const json& v = obj.at(key);
    if (v.is_number_integer() || v.is_number_unsigned()) return v.get<long long>();
    if (v.is_number_float()) {
        const double x = v.get<double>();
        if (std::isfinite(x) && x == std::floor(x)) return static_cast<long long>(x);
    }
    config_error(field + ": expected an integer");
}

std::uint64_t get_seed(const json& v, const std::string& field)
{
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
    config_error(field + ": expected a non-negative integer");
}

std::string get_string(const json& obj, const std::string& key, const std::string& field)
{
    const json& v = obj.at(key);
    if (!v.is_string()) config_error(field + ": expected a string");
    return v.get<std::string>();
}

fs::path resolve(const fs::path& p, const fs::path& base)
{
    if (p.is_relative() && !base.empty()) return base / p;
    return p;
}

const std::map<std::string, std::set<std::string>>& operator_params()
{
    static const std::map<std::string, std::set<std::string>> table = {
        {"identity", {}},
        {"chain_laplacian", {}},
        {"grid_laplacian", {"m1", "m2"}},
        {"kernel_smoother", {"window"}},
        {"grid_kernel_smoother", {"m1", "m2", "window"}},
        {"ar_precision", {"rho", "m1", "m2"}},
        {"second_difference", {}},
        {"file", {"path"}},
    };
    return table;
}

OperatorSpec parse_operator(const json& v, const std::string& field, const fs::path& base)
{
    OperatorSpec spec;
    if (v.is_string()) {
        spec.kind = v.get<std::string>();
    } else if (v.is_object()) {
        if (!v.contains("kind")) config_error(field + ": missing required key 'kind'");
        spec.kind = get_string(v, "kind", field + ".kind");
    } else {
        config_error(field + ": expected a kind string or an object");
    }
    auto it = operator_params().find(spec.kind);
    if (it == operator_params().end()) config_error(field + ".kind: unknown operator kind '" + spec.kind + "'");
    if (v.is_object()) {
        std::set<std::string> allowed = it->second;
        allowed.insert("kind");
        allowed.insert("dim");
        reject_unknown(v, allowed, field);
        for (auto p = v.begin(); p != v.end(); ++p)
            if (p.key() != "kind" && p.key() != "path") spec.params[p.key()] = p.value();
    }
    auto need = [&](const char* key) {
        if (!spec.params.contains(key)) config_error(field + ": operator '" + spec.kind + "' needs '" + key + "'");
    };
    if (spec.kind == "grid_laplacian" || spec.kind == "grid_kernel_smoother") {
        need("m1");
        need("m2");
    }
    if (spec.kind == "ar_precision") {
        need("rho");
        const double rho = get_number(spec.params, "rho", field + ".rho");
        if (!(std::abs(rho) < 1.0)) config_error(field + ".rho: must satisfy |rho| < 1");
        if (spec.params.contains("m1") != spec.params.contains("m2"))
            config_error(field + ": ar_precision takes both 'm1' and 'm2' or neither");
    }
    for (const char* key : {"m1", "m2", "window", "dim"})
        if (spec.params.contains(key) && get_integer(spec.params, key, field + "." + key) < 1)
            config_error(field + "." + key + ": must be >= 1");
    if (spec.kind == "file") {
        if (!v.is_object() || !v.contains("path")) config_error(field + ": operator 'file' needs 'path'");
        spec.file = resolve(get_string(v, "path", field + ".path"), base);
        if (!fs::exists(spec.file)) config_error(field + ".path: file not found: " + spec.file.string());
    }
    return spec;
}

PenaltyConfig parse_penalty(const json& v, const std::string& field, const fs::path& base)
{
    if (!v.is_object()) config_error(field + ": expected an object");
    reject_unknown(v, {"kind", "lambda", "grid", "omega"}, field);
    PenaltyConfig pen;
    if (!v.contains("kind")) config_error(field + ": missing required key 'kind'");
    const std::string kind = get_string(v, "kind", field + ".kind");
    if (kind == "none") pen.kind = PenaltyKind::none;
    else if (kind == "lasso") pen.kind = PenaltyKind::lasso;
    else if (kind == "omega") pen.kind = PenaltyKind::omega;
    else config_error(field + ".kind: unknown penalty kind '" + kind + "'");
    if (pen.kind == PenaltyKind::none) {
        if (v.contains("lambda") || v.contains("grid") || v.contains("omega"))
            config_error(field + ": penalty 'none' takes no other keys");
        return pen;
    }
    if (!v.contains("lambda")) config_error(field + ": missing required key 'lambda' (a number or \"bic\")");
    const json& lam = v.at("lambda");
    if (lam.is_string()) {
        if (lam.get<std::string>() != "bic") config_error(field + ".lambda: expected a number or \"bic\"");
        pen.use_bic = true;
    } else {
        pen.lambda = get_number(v, "lambda", field + ".lambda");
        if (pen.lambda < 0.0) config_error(field + ".lambda: must be >= 0");
    }
    if (v.contains("grid")) {
        if (!pen.use_bic) config_error(field + ".grid: only valid with \"lambda\": \"bic\"");
        const json& g = v.at("grid");
        if (!g.is_array() || g.empty()) config_error(field + ".grid: expected a non-empty array of numbers");
        for (const auto& x : g) {
            if (!x.is_number() || !(x.get<double>() >= 0.0))
                config_error(field + ".grid: entries must be non-negative numbers");
            pen.grid.push_back(x.get<double>());
        }
        std::sort(pen.grid.begin(), pen.grid.end());
    }
    if (v.contains("omega")) {
        if (pen.kind != PenaltyKind::omega) config_error(field + ".omega: only valid for penalty kind 'omega'");
        pen.omega = parse_operator(v.at("omega"), field + ".omega", base);
    } else if (pen.kind == PenaltyKind::omega) {
        OperatorSpec sd;
        sd.kind = "second_difference";
        pen.omega = sd;
    }
    return pen;
}

json operator_json(const OperatorSpec& s)
{
    json j = s.params;
    j["kind"] = s.kind;
    if (s.kind == "file") j["path"] = s.file.generic_string();
    return j;
}

json penalty_json(const PenaltyConfig& p)
{
    json j;
    j["kind"] = to_string(p.kind);
    if (p.kind == PenaltyKind::none) return j;
    if (p.use_bic) {
        j["lambda"] = "bic";
        if (!p.grid.empty()) j["grid"] = p.grid;
    } else {
        j["lambda"] = p.lambda;
    }
    if (p.omega) j["omega"] = operator_json(*p.omega);
    return j;
}

const std::set<std::string>& experiment_names()
{
    static const std::set<std::string> names = {"table1", "table2", "table3", "table4", "functional", "sparse"};
    return names;
}

Index param_index(const OperatorSpec& s, const char* key, Index fallback)
{
    return s.params.contains(key) ? static_cast<Index>(get_integer(s.params, key, key)) : fallback;
}

} // namespace

const char* to_string(Command c)
{
    switch (c) {
        case Command::gmd: return "gmd";
        case Command::gpca: return "gpca";
        case Command::sgpca: return "sgpca";
        case Command::fgpca: return "fgpca";
        case Command::simulate: return "simulate";
        case Command::select: return "select";
    }
    return "unknown";
}

Command parse_command(const std::string& name)
{
    for (Command c : {Command::gmd, Command::gpca, Command::sgpca, Command::fgpca, Command::simulate, Command::select})
        if (name == to_string(c)) return c;
    config_error("command: unknown command '" + name + "'");
}

int exit_code(ErrorKind kind)
{
    switch (kind) {
        case ErrorKind::config:
        case ErrorKind::invalid_argument:
        case ErrorKind::dimension: return 2;
        case ErrorKind::not_psd:
        case ErrorKind::numerical: return 3;
        case ErrorKind::io: return 4;
    }
    return 3;
}

json JobConfig::to_json() const
{
    json j;
    j["command"] = to_string(command);
    j["seed"] = seed;
    if (command == Command::simulate) {
        j["experiment"] = experiment;
        j["replicates"] = replicates;
        j["sigmas"] = sigmas;
        j["noise"] = noise;
        j["tol"] = tol;
        j["max_iter"] = max_iter;
        return j;
    }
    j["data"] = data_path.generic_string();
    j["center"] = center;
    j["K"] = k;
    j["q"] = operator_json(q_spec);
    j["r"] = operator_json(r_spec);
    j["penalty_u"] = penalty_json(penalty_u);
    j["penalty_v"] = penalty_json(penalty_v);
    j["tol"] = tol;
    j["max_iter"] = max_iter;
    j["gpmf_tol"] = gpmf_tol;
    j["gpmf_max_outer"] = gpmf_max_outer;
    j["omega_solver"] = omega_solver == OmegaSolver::secular ? "secular" : "proximal_gradient";
    if (command == Command::select) j["side"] = side == Side::u ? "u" : "v";
    return j;
}

JobConfig parse_config(const json& doc, const Overrides& overrides, const fs::path& base_dir)
{
    if (!doc.is_object()) config_error("config: top level must be a JSON object");
    reject_unknown(doc,
                   {"command", "data", "center", "K", "q", "r", "penalty_u", "penalty_v", "seed", "output_dir", "tol",
                    "max_iter", "gpmf_tol", "gpmf_max_outer", "omega_solver", "experiment", "replicates", "sigmas",
                    "noise", "side"},
                   "config");
    JobConfig cfg;
    if (overrides.command) cfg.command = parse_command(*overrides.command);
    else if (doc.contains("command")) cfg.command = parse_command(get_string(doc, "command", "command"));
    else config_error("config: missing required key 'command'");

    if (doc.contains("seed")) cfg.seed = get_seed(doc.at("seed"), "seed");
    if (overrides.seed) cfg.seed = *overrides.seed;
    if (doc.contains("output_dir")) cfg.output_dir = resolve(get_string(doc, "output_dir", "output_dir"), base_dir);
    if (overrides.output_dir) cfg.output_dir = *overrides.output_dir;
    if (cfg.output_dir.empty()) config_error("output_dir: must not be empty");

    if (doc.contains("tol")) {
        cfg.tol = get_number(doc, "tol", "tol");
        if (!(cfg.tol > 0.0)) config_error("tol: must be > 0");
    }
    if (doc.contains("max_iter")) {
        const long long m = get_integer(doc, "max_iter", "max_iter");
        if (m < 1 || m > 100000000) config_error("max_iter: must be in [1, 1e8]");
        cfg.max_iter = static_cast<int>(m);
    }

    const bool is_sim = cfg.command == Command::simulate;
    auto forbid = [&](std::initializer_list<const char*> keys, const char* why) {
        for (const char* k : keys)
            if (doc.contains(k)) config_error(std::string(k) + ": not used by " + why);
    };

    if (is_sim) {
        forbid({"data", "center", "K", "q", "r", "penalty_u", "penalty_v", "gpmf_tol", "gpmf_max_outer",
                "omega_solver", "side"},
               "simulate");
        if (!doc.contains("experiment")) config_error("config: missing required key 'experiment'");
        cfg.experiment = get_string(doc, "experiment", "experiment");
        if (!experiment_names().count(cfg.experiment))
            config_error("experiment: unknown experiment '" + cfg.experiment + "'");
        if (doc.contains("replicates")) {
            const long long r = get_integer(doc, "replicates", "replicates");
            if (r < 1 || r > 100000) config_error("replicates: must be in [1, 100000]");
            cfg.replicates = static_cast<int>(r);
        }
        if (doc.contains("sigmas")) {
            const json& s = doc.at("sigmas");
            if (!s.is_array()) config_error("sigmas: expected an array of numbers");
            for (const auto& x : s) {
                if (!x.is_number() || !(x.get<double>() > 0.0)) config_error("sigmas: entries must be positive numbers");
                cfg.sigmas.push_back(x.get<double>());
            }
        }
        if (doc.contains("noise")) {
            cfg.noise = get_string(doc, "noise", "noise");
            if (cfg.noise != "block" && cfg.noise != "graph") config_error("noise: expected \"block\" or \"graph\"");
        }
        return cfg;
    }

    forbid({"experiment", "replicates", "sigmas", "noise"}, to_string(cfg.command));
    if (!doc.contains("data")) config_error("config: missing required key 'data'");
    cfg.data_path = resolve(get_string(doc, "data", "data"), base_dir);
    if (!fs::exists(cfg.data_path)) config_error("data: file not found: " + cfg.data_path.string());
    if (doc.contains("center")) {
        if (!doc.at("center").is_boolean()) config_error("center: expected true or false");
        cfg.center = doc.at("center").get<bool>();
    }
    if (doc.contains("K")) {
        const long long k = get_integer(doc, "K", "K");
        if (k < 1) config_error("K: must be >= 1");
        cfg.k = static_cast<Index>(k);
    }
    if (doc.contains("q")) cfg.q_spec = parse_operator(doc.at("q"), "q", base_dir);
    if (doc.contains("r")) cfg.r_spec = parse_operator(doc.at("r"), "r", base_dir);
    if (doc.contains("gpmf_tol")) {
        cfg.gpmf_tol = get_number(doc, "gpmf_tol", "gpmf_tol");
        if (!(cfg.gpmf_tol > 0.0)) config_error("gpmf_tol: must be > 0");
    }
    if (doc.contains("gpmf_max_outer")) {
        const long long m = get_integer(doc, "gpmf_max_outer", "gpmf_max_outer");
        if (m < 1 || m > 100000000) config_error("gpmf_max_outer: must be in [1, 1e8]");
        cfg.gpmf_max_outer = static_cast<int>(m);
    }
    if (doc.contains("omega_solver")) {
        const std::string s = get_string(doc, "omega_solver", "omega_solver");
        if (s == "proximal_gradient") cfg.omega_solver = OmegaSolver::proximal_gradient;
        else if (s == "secular") cfg.omega_solver = OmegaSolver::secular;
        else config_error("omega_solver: expected \"proximal_gradient\" or \"secular\"");
    }
    if (doc.contains("penalty_u")) cfg.penalty_u = parse_penalty(doc.at("penalty_u"), "penalty_u", base_dir);
    if (doc.contains("penalty_v")) cfg.penalty_v = parse_penalty(doc.at("penalty_v"), "penalty_v", base_dir);

    const bool pu = cfg.penalty_u.kind != PenaltyKind::none, pv = cfg.penalty_v.kind != PenaltyKind::none;
    switch (cfg.command) {
        case Command::gmd:
        case Command::gpca:
            if (pu || pv) config_error(std::string("penalty: not used by ") + to_string(cfg.command));
            forbid({"side"}, to_string(cfg.command));
            break;
        case Command::sgpca:
            forbid({"side"}, "sgpca");
            if (!pu && !pv) config_error("sgpca: needs a lasso penalty_u or penalty_v");
            for (const auto* p : {&cfg.penalty_u, &cfg.penalty_v})
                if (p->kind == PenaltyKind::omega) config_error("sgpca: penalties must be 'lasso'; use fgpca for 'omega'");
            break;
        case Command::fgpca:
            forbid({"side"}, "fgpca");
            if (!pu && !pv) config_error("fgpca: needs an omega penalty_u or penalty_v");
            for (const auto* p : {&cfg.penalty_u, &cfg.penalty_v})
                if (p->kind == PenaltyKind::lasso) config_error("fgpca: penalties must be 'omega'; use sgpca for 'lasso'");
            break;
        case Command::select: {
            if (doc.contains("side")) {
                const std::string s = get_string(doc, "side", "side");
                if (s == "u") cfg.side = Side::u;
                else if (s == "v") cfg.side = Side::v;
                else config_error("side: expected \"u\" or \"v\"");
            }
            const PenaltyConfig& sel = cfg.side == Side::u ? cfg.penalty_u : cfg.penalty_v;
            const char* name = cfg.side == Side::u ? "penalty_u" : "penalty_v";
            if (sel.kind == PenaltyKind::none) config_error(std::string("select: needs ") + name + " for the selected side");
            if (!sel.use_bic) config_error(std::string("select: ") + name + ".lambda must be \"bic\"");
            if ((cfg.side == Side::u ? pv : pu)) config_error("select: only the selected side may carry a penalty");
            if (doc.contains("K") && cfg.k != 1) config_error("K: select fits a single factor; K must be 1");
            break;
        }
        case Command::simulate: break;
    }
    return cfg;
}

JobConfig load_config(const fs::path& path, const Overrides& overrides)
{
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open config file: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        config_error(std::string("config: invalid JSON: ") + e.what());
    }
    return parse_config(doc, overrides, path.parent_path());
}

QuadraticOperator build_operator(const OperatorSpec& spec, Index dim, const std::string& field)
{
    if (spec.params.contains("dim") && param_index(spec, "dim", dim) != dim)
        fail(ErrorKind::dimension, field + ".dim: declared " + std::to_string(param_index(spec, "dim", dim)) +
                                       " but the data needs " + std::to_string(dim));
    auto grid_dims = [&]() {
        const Index m1 = param_index(spec, "m1", 0), m2 = param_index(spec, "m2", 0);
        if (m1 * m2 != dim)
            fail(ErrorKind::dimension, field + ": grid " + std::to_string(m1) + " x " + std::to_string(m2) +
                                           " does not match dimension " + std::to_string(dim));
        return std::array<Index, 2>{m1, m2};
    };
    const std::string& k = spec.kind;
    if (k == "identity") return QuadraticOperator::identity(dim);
    if (k == "chain_laplacian") return build_chain_laplacian(dim);
    if (k == "grid_laplacian") {
        auto g = grid_dims();
        return build_grid_laplacian(g[0], g[1]);
    }
    if (k == "kernel_smoother") return build_kernel_smoother(dim, param_index(spec, "window", 5));
    if (k == "grid_kernel_smoother") {
        auto g = grid_dims();
        return build_grid_kernel_smoother(g[0], g[1], param_index(spec, "window", 5));
    }
    if (k == "ar_precision") {
        const double rho = spec.params.at("rho").get<double>();
        if (spec.params.contains("m1")) {
            auto g = grid_dims();
            return build_ar_precision(g, rho, ArMode::grid_manhattan);
        }
        const std::array<Index, 1> d{dim};
        return build_ar_precision(d, rho, ArMode::chain);
    }
    if (k == "second_difference") return build_second_difference_gram(dim);
    if (k == "file") {
        QuadraticOperator op = io::read_matrix_market(spec.file);
        if (op.dim() != dim)
            fail(ErrorKind::dimension, field + ": operator file has dimension " + std::to_string(op.dim()) +
                                           " but the data needs " + std::to_string(dim));
        return op;
    }
    config_error(field + ".kind: unknown operator kind '" + k + "'");
}

// JSON views ----------------------------------------------------------------

namespace {

json vec_json(const Eigen::Ref<const Vector>& v)
{
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

} // namespace

json to_json(const VarianceReport& rep)
{
    return json{{"perComponent", vec_json(rep.per_component)},
                {"cumulative", vec_json(rep.cumulative)},
                {"totalQRNormSq", rep.total_qr_norm_sq}};
}

json to_json(const BICReport& rep)
{
    json j;
    j["side"] = rep.side == Side::u ? "u" : "v";
    j["kind"] = to_string(rep.kind);
    j["lambdas"] = rep.lambdas;
    j["scores"] = rep.scores;
    j["df"] = rep.df;
    j["chosenIndex"] = rep.chosen;
    j["chosenLambda"] = rep.lambdas.empty() ? json(nullptr) : json(rep.chosen_lambda());
    j["allZero"] = rep.all_zero;
    return j;
}

json to_json(const sim::ExperimentReport& rep)
{
    json j;
    j["name"] = rep.name;
    j["table"] = rep.table;
    j["replicates"] = rep.replicates;
    j["seed"] = rep.seed;
    j["columns"] = rep.columns;
    json rows = json::array();
    for (const auto& r : rep.rows) {
        json vals = json::object();
        for (std::size_t c = 0; c < rep.columns.size() && c < r.values.size(); ++c)
            vals[rep.columns[c]] = json{{"mean", r.values[c].mean}, {"stderr", r.values[c].stderr_}};
        rows.push_back(json{{"setting", r.setting}, {"method", r.method}, {"values", vals}});
    }
    j["rows"] = rows;
    return j;
}

json factors_meta(const GMDFactors& f)
{
    json j;
    j["K"] = f.rank();
    j["n"] = f.U.rows();
    j["p"] = f.V.rows();
    j["iterations"] = f.iterations;
    std::vector<bool> conv = f.converged;
    j["converged"] = conv;
    j["seeds"] = f.seeds;
    return j;
}

GMDFactors load_factors(const fs::path& dir)
{
    GMDFactors f;
    f.U = io::read_csv_matrix(dir / "U.csv");
    f.V = io::read_csv_matrix(dir / "V.csv");
    Matrix d = io::read_csv_matrix(dir / "D.csv");
    if (d.cols() != 1 || d.rows() != f.U.cols() || f.U.cols() != f.V.cols())
        fail(ErrorKind::dimension, "load_factors: U, D and V disagree on K");
    f.D = d.col(0);
    return f;
}

// Pipeline -------------------------------------------------------------------

namespace {

class OutputSet
{
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

    void open()
    {
        std::error_code ec;
        if (!fs::exists(dir_)) {
            fs::create_directories(dir_, ec);
            if (ec) fail(ErrorKind::io, "cannot create output directory " + dir_.string() + ": " + ec.message());
            created_ = true;
        } else if (!fs::is_directory(dir_)) {
            fail(ErrorKind::io, "output path is not a directory: " + dir_.string());
        }
    }

    fs::path claim(const std::string& name)
    {
        names_.push_back(name);
        return dir_ / name;
    }

    void text(const std::string& name, const std::string& body)
    {
        const fs::path p = claim(name);
        std::ofstream out(p, std::ios::binary);
        if (!out) fail(ErrorKind::io, "cannot write " + p.string());
        out << body;
        if (!out) fail(ErrorKind::io, "write failed: " + p.string());
    }

    void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }
    void matrix(const std::string& name, const Matrix& m) { io::write_csv_matrix(claim(name), m); }

    void discard() noexcept
    {
        std::error_code ec;
        for (const auto& n : names_) fs::remove(dir_ / n, ec);
        if (created_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
    }

    std::vector<std::string> names() const
    {
        auto n = names_;
        std::sort(n.begin(), n.end());
        return n;
    }

private:
    fs::path dir_;
    std::vector<std::string> names_;
    bool created_ = false;
};

class Timer
{
public:
    void lap(const std::string& stage)
    {
        const auto now = std::chrono::steady_clock::now();
        ms_[stage] = std::chrono::duration<double, std::milli>(now - last_).count();
        last_ = now;
    }
    json to_json() const { return json(ms_); }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
    std::map<std::string, double> ms_;
};

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string bic_curve_csv(const std::vector<BICReport>& reports_u, const std::vector<BICReport>& reports_v)
{
    std::ostringstream out;
    out << "factor,side,lambda,bic,df,chosen\n";
    auto emit = [&](const std::vector<BICReport>& reps) {
        for (std::size_t f = 0; f < reps.size(); ++f) {
            const auto& r = reps[f];
            for (std::size_t i = 0; i < r.lambdas.size(); ++i)
                out << f << ',' << (r.side == Side::u ? 'u' : 'v') << ',' << io::format_double(r.lambdas[i]) << ','
                    << io::format_double(r.scores[i]) << ',' << io::format_double(r.df[i]) << ','
                    << (static_cast<Index>(i) == r.chosen ? 1 : 0) << '\n';
        }
    };
    emit(reports_u);
    emit(reports_v);
    return out.str();
}

PenaltySpec make_penalty(const PenaltyConfig& pc, Index dim, const std::string& field)
{
    switch (pc.kind) {
        case PenaltyKind::none: return PenaltySpec::none();
        case PenaltyKind::lasso: return PenaltySpec::lasso(pc.lambda);
        case PenaltyKind::omega: {
            auto om = std::make_shared<const QuadraticOperator>(build_operator(*pc.omega, dim, field + ".omega"));
            return PenaltySpec::omega_norm(pc.lambda, om);
        }
    }
    return PenaltySpec::none();
}

json regularization_json(const GPMFResult& res, const SelectedGPMF& sel)
{
    json j;
    j["kindU"] = to_string(res.kind_u);
    j["kindV"] = to_string(res.kind_v);
    j["lambdaU"] = res.lambda_u;
    j["lambdaV"] = res.lambda_v;
    std::vector<bool> zero = res.zero;
    j["zero"] = zero;
    j["nonzeroU"] = res.nonzero_u;
    j["nonzeroV"] = res.nonzero_v;
    auto nan_safe = [](const std::vector<double>& v) {
        json a = json::array();
        for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
        return a;
    };
    j["smoothnessU"] = nan_safe(res.smooth_u);
    j["smoothnessV"] = nan_safe(res.smooth_v);
    json bu = json::array(), bv = json::array();
    for (const auto& r : sel.reports_u) bu.push_back(to_json(r));
    for (const auto& r : sel.reports_v) bv.push_back(to_json(r));
    j["bicU"] = bu;
    j["bicV"] = bv;
    return j;
}

void write_factors(OutputSet& out, const GMDFactors& f, double tol)
{
    out.matrix("U.csv", f.U);
    out.matrix("V.csv", f.V);
    out.matrix("D.csv", Matrix(f.D));
    json meta = factors_meta(f);
    meta["tol"] = tol;
    out.json_file("meta.json", meta);
}

void execute(const JobConfig& cfg, OutputSet& out, Timer& timer, json& meta)
{
    auto lg = logger();
    if (cfg.command == Command::simulate) {
        sim::ExperimentOptions eo;
        eo.sigmas = cfg.sigmas;
        eo.noise = cfg.noise;
        eo.tol = cfg.tol;
        eo.max_iter = cfg.max_iter;
        lg->info("running experiment {} with {} replicates", cfg.experiment, cfg.replicates);
        sim::ExperimentReport rep = sim::run_experiment(cfg.experiment, cfg.replicates, cfg.seed, eo);
        timer.lap("experiment");
        out.text(rep.table + ".csv", sim::report_csv(rep));
        out.json_file("report.json", to_json(rep));
        return;
    }

    DataMatrix data = io::read_data(cfg.data_path);
    lg->info("loaded {} x {} data from {}", data.n_rows(), data.n_cols(), cfg.data_path.string());
    if (data.n_rows() < 1 || data.n_cols() < 1) fail(ErrorKind::dimension, "data: empty matrix");
    if (!data.values.allFinite()) fail(ErrorKind::invalid_argument, "data: contains non-finite values");
    timer.lap("load");
    if (cfg.center && !data.centered) data = double_center(data);
    timer.lap("center");
    const Matrix& x = data.values;
    const QuadraticOperator q = build_operator(cfg.q_spec, x.rows(), "q");
    const QuadraticOperator r = build_operator(cfg.r_spec, x.cols(), "r");
    timer.lap("operators");
    meta["n"] = x.rows();
    meta["p"] = x.cols();
    meta["centered"] = data.centered;

    GMDOptions go;
    go.tol = cfg.tol;
    go.max_iter = cfg.max_iter;
    go.seed = cfg.seed;

    if (cfg.command == Command::gmd || cfg.command == Command::gpca) {
        GMDFactors f = gmd_power(x, q, r, cfg.k, go);
        timer.lap("decompose");
        const int unconverged = static_cast<int>(std::count(f.converged.begin(), f.converged.end(), false));
        if (unconverged > 0) lg->warn("{} factor(s) reached max_iter before converging", unconverged);
        write_factors(out, f, cfg.tol);
        out.json_file("variance.json", to_json(variance_explained(f, x, q, r)));
        if (cfg.command == Command::gpca) out.matrix("scores.csv", gpc_scores(x, r, f.V));
        meta["factors"] = factors_meta(f);
        return;
    }

    SideSelection su, sv;
    su.pen = make_penalty(cfg.penalty_u, x.rows(), "penalty_u");
    su.use_bic = cfg.penalty_u.use_bic;
    su.grid = cfg.penalty_u.grid;
    sv.pen = make_penalty(cfg.penalty_v, x.cols(), "penalty_v");
    sv.use_bic = cfg.penalty_v.use_bic;
    sv.grid = cfg.penalty_v.grid;
    GPMFOptions po;
    po.tol = cfg.gpmf_tol;
    po.max_outer = cfg.gpmf_max_outer;
    po.seed = cfg.seed;
    po.init = go;
    po.omega.solver = cfg.omega_solver;
    timer.lap("penalties");

    if (cfg.command == Command::select) {
        const bool on_u = cfg.side == Side::u;
        const SideSelection& sel = on_u ? su : sv;
        GMDFactors g = gmd_power(x, q, r, 1, go);
        if (g.D(0) == 0.0) fail(ErrorKind::numerical, "select: data has no energy in the Q,R geometry");
        std::vector<double> grid = sel.grid;
        const Vector u0 = g.U.col(0), v0 = g.V.col(0);
        if (grid.empty()) {
            const Vector y = on_u ? Vector(x * r.apply(v0)) : Vector(x.transpose() * q.apply(u0));
            grid = default_lambda_grid(lambda_max(y, on_u ? q : r, sel.pen));
        }
        BICReport rep = select_penalty(x, q, r, u0, g.D(0), v0, cfg.side, sel.pen, grid,
                                       SelectStrategy::post_convergence, po.lasso, po.omega);
        timer.lap("select");
        if (rep.all_zero) lg->warn("every lambda on the grid gave a zero fit");
        std::vector<BICReport> none;
        out.text("bic_curve.csv", on_u ? bic_curve_csv({rep}, none) : bic_curve_csv(none, {rep}));
        std::ostringstream two;
        two << "lambda,bic\n";
        for (std::size_t i = 0; i < rep.lambdas.size(); ++i)
            two << io::format_double(rep.lambdas[i]) << ',' << io::format_double(rep.scores[i]) << '\n';
        out.text("score_curve.csv", two.str());
        out.json_file("selection.json", to_json(rep));
        return;
    }

    SelectedGPMF sel = gpmf_select(x, q, r, cfg.k, su, sv, po);
    timer.lap("decompose");
    const GMDFactors& f = sel.result.factors;
    write_factors(out, f, cfg.gpmf_tol);
    out.json_file("variance.json", to_json(regularized_variance_report(f.U, f.V, x, q, r)));
    out.matrix("scores.csv", gpc_scores(x, r, f.V));
    out.json_file("penalties.json", regularization_json(sel.result, sel));
    if (!sel.reports_u.empty() || !sel.reports_v.empty())
        out.text("bic_curve.csv", bic_curve_csv(sel.reports_u, sel.reports_v));
    meta["factors"] = factors_meta(f);
}

void report_error(const std::string& kind, const std::string& msg, int code)
{
    json err{{"error", {{"kind", kind}, {"message", msg}, {"exitCode", code}}}};
    std::cerr << err.dump() << std::endl;
}

} // namespace

int run(const JobConfig& cfg)
{
    auto lg = logger();
    OutputSet out(cfg.output_dir);
    Timer timer;
    const std::string started = utc_now();
    try {
        out.open();
        json meta;
        execute(cfg, out, timer, meta);
        timer.lap("write");
        json manifest;
        manifest["tool"] = "gmdkit";
        manifest["version"] = version;
        manifest["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION);
        manifest["command"] = to_string(cfg.command);
        manifest["seed"] = cfg.seed;
        manifest["config"] = cfg.to_json();
        manifest["result"] = meta;
        std::vector<std::string> files = out.names();
        files.push_back("manifest.json");
        std::sort(files.begin(), files.end());
        manifest["outputs"] = files;
        manifest["timing"] = {{"startedAt", started}, {"finishedAt", utc_now()}, {"stagesMs", timer.to_json()}};
        out.json_file("manifest.json", manifest);
        lg->info("wrote {} files to {}", files.size(), cfg.output_dir.string());
        return 0;
    } catch (const Error& e) {
        out.discard();
        const int code = exit_code(e.kind());
        lg->error("{}", e.what());
        report_error(gmdkit::to_string(e.kind()), e.what(), code);
        return code;
    } catch (const std::exception& e) {
        out.discard();
        lg->error("{}", e.what());
        report_error("numerical", e.what(), 3);
        return 3;
    }
}

int main_entry(int argc, char** argv)
{
    CLI::App app{"gmdkit: generalized matrix decompositions for two-way structured data"};
    std::string command;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    bool verbose = false;
    app.add_option("command", command, "gmd | gpca | sgpca | fgpca | simulate | select")
        ->required()
        ->check(CLI::IsMember({"gmd", "gpca", "sgpca", "fgpca", "simulate", "select"}));
    app.add_option("--config", config_path, "JSON job configuration")->required();
    auto* seed_opt = app.add_option("--seed", seed, "Override the configured seed");
    auto* out_opt = app.add_option("--out", out_dir, "Override the output directory");
    app.add_flag("-v,--verbose", verbose, "Debug logging on stderr");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("config", e.what(), 2);
        return 2;
    }
    auto lg = logger();
    lg->set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    Overrides ov;
    ov.command = command;
    if (*seed_opt) ov.seed = seed;
    if (*out_opt) ov.output_dir = out_dir;
    JobConfig cfg;
    try {
        cfg = load_config(config_path, ov);
    } catch (const Error& e) {
        const int code = exit_code(e.kind());
        lg->error("{}", e.what());
        report_error(gmdkit::to_string(e.kind()), e.what(), code);
        return code;
    }
    lg->debug("config: {}", cfg.to_json().dump());
    return run(cfg);
}

} // namespace gmdkit::cli
